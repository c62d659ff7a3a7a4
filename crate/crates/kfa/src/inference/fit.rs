//! Training loop: sweeps, convergence rule, restarts and pruning schedule.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{KfaError, Result};
use crate::model::{init_state, Hyperparams, ModelState, ViewData, ViewSpec};
use crate::relevance::{lambda_step, AdamMoments, LambdaOptConfig};

use super::elbo::compute_elbo;
use super::prune::{prune_factors, prune_rvs};
use super::updates::{update_alpha, update_dual, update_gamma, update_tau, update_z};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitConfig {
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_rel_tol")]
    pub rel_tol: f64,
    #[serde(default = "default_restarts")]
    pub restarts: usize,
    #[serde(default = "default_prune_every")]
    pub prune_every: usize,
}

fn default_max_iters() -> usize {
    10_000
}
fn default_window() -> usize {
    100
}
fn default_rel_tol() -> f64 {
    1e-4
}
fn default_restarts() -> usize {
    10
}
fn default_prune_every() -> usize {
    10
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            max_iters: default_max_iters(),
            window: default_window(),
            rel_tol: default_rel_tol(),
            restarts: default_restarts(),
            prune_every: default_prune_every(),
        }
    }
}

impl FitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_iters < self.window + 2 {
            return Err(KfaError::InvalidConfig("max_iters must be >= window + 2".into()));
        }
        if self.restarts < 1 {
            return Err(KfaError::InvalidConfig("restarts must be >= 1".into()));
        }
        Ok(())
    }
}

/// One full coordinate-ascent sweep in fixed order: per view dual -> alpha
/// -> gamma -> tau, then Z, then the lambda ascent for views that learn it.
pub(crate) fn sweep(
    state: &mut ModelState,
    lambda_opt: Option<&LambdaOptConfig>,
    adams: &mut HashMap<usize, AdamMoments>,
) -> Result<()> {
    for m in 0..state.views.len() {
        state.views[m].dual = update_dual(state, m)?;
        state.views[m].alpha = update_alpha(state, m);
        if state.views[m].spec.double_ard {
            state.views[m].gamma = Some(update_gamma(state, m)?);
        }
        state.views[m].tau = update_tau(state, m)?;
    }
    state.z = update_z(state)?;
    let default_opt = LambdaOptConfig::default();
    for m in 0..state.views.len() {
        if state.views[m].spec.learn_lambda {
            let cfg = lambda_opt.unwrap_or(&default_opt);
            let adam = adams.entry(m).or_default();
            lambda_step(state, m, cfg, adam)?;
        }
    }
    Ok(())
}

/// Windowed plateau criterion on the lower-bound trace: converged once the
/// mean of the `window` values preceding the last exceeds last*(1 - rel_tol).
fn converged(history: &[f64], window: usize, rel_tol: f64) -> bool {
    if history.len() < window + 2 {
        return false;
    }
    let last = *history.last().unwrap();
    let start = history.len() - 1 - window;
    let mean = history[start..history.len() - 1].iter().sum::<f64>() / window as f64;
    // relative-margin form of the windowed rule; for positive bounds this is
    // exactly mean > last * (1 - rel_tol), and it extends to negative bounds
    mean > last - rel_tol * last.abs()
}

fn run_restart(
    views: Vec<(ViewSpec, ViewData)>,
    hyper: &Hyperparams,
    cfg: &FitConfig,
    lambda_opt: Option<&LambdaOptConfig>,
    seed: u64,
) -> Result<ModelState> {
    let mut state = init_state(views, hyper, seed)?;
    let mut adams: HashMap<usize, AdamMoments> = HashMap::new();
    for iter in 0..cfg.max_iters {
        sweep(&mut state, lambda_opt, &mut adams)?;
        let elbo = compute_elbo(&state)?;
        state.elbo_history.push(elbo);
        if log::log_enabled!(log::Level::Info) {
            let rvs: Vec<String> = state
                .views
                .iter()
                .filter(|v| v.is_kernelized())
                .map(|v| format!("{}={}", v.spec.name, v.active_rvs.len()))
                .collect();
            log::info!(
                "sweep {iter} elbo {elbo:.6} active_factors {} active_rvs [{}]",
                state.n_factors(),
                rvs.join(",")
            );
        }
        if converged(&state.elbo_history, cfg.window, cfg.rel_tol) {
            break;
        }
        if cfg.prune_every > 0 && (iter + 1) % cfg.prune_every == 0 {
            prune_factors(&mut state);
            for m in 0..state.views.len() {
                if state.views[m].spec.double_ard {
                    prune_rvs(&mut state, m);
                }
            }
        }
    }
    Ok(state)
}

/// Fit with random restarts, returning the state with the best final lower
/// bound. Restart r uses seed + r; restarts are independent and can run on
/// separate threads without changing the result.
pub fn fit_threaded(
    views: &[(ViewSpec, ViewData)],
    hyper: &Hyperparams,
    cfg: &FitConfig,
    lambda_opt: Option<&LambdaOptConfig>,
    seed: u64,
    threads: usize,
) -> Result<ModelState> {
    cfg.validate()?;
    if let Some(l) = lambda_opt {
        l.validate()?;
    }
    if !views.iter().any(|(s, _)| s.role == crate::model::ViewRole::Input) {
        return Err(KfaError::InvalidConfig("at least one input view is required".into()));
    }
    let seeds: Vec<u64> = (0..cfg.restarts).map(|r| seed.wrapping_add(r as u64)).collect();

    let results: Vec<Result<ModelState>> = if threads <= 1 || cfg.restarts == 1 {
        seeds
            .iter()
            .map(|&s| run_restart(views.to_vec(), hyper, cfg, lambda_opt, s))
            .collect()
    } else {
        let threads = threads.min(seeds.len());
        let mut slots: Vec<Option<Result<ModelState>>> = (0..seeds.len()).map(|_| None).collect();
        std::thread::scope(|scope| {
            let mut handles = Vec::new();
            for (chunk_idx, chunk) in seeds.chunks(seeds.len().div_ceil(threads)).enumerate() {
                let chunk = chunk.to_vec();
                let views = views.to_vec();
                handles.push((
                    chunk_idx,
                    scope.spawn(move || {
                        chunk
                            .into_iter()
                            .map(|s| run_restart(views.clone(), hyper, cfg, lambda_opt, s))
                            .collect::<Vec<_>>()
                    }),
                ));
            }
            let chunk_size = seeds.len().div_ceil(threads);
            for (chunk_idx, handle) in handles {
                for (off, res) in handle.join().expect("restart thread panicked").into_iter().enumerate()
                {
                    slots[chunk_idx * chunk_size + off] = Some(res);
                }
            }
        });
        slots.into_iter().map(|s| s.unwrap()).collect()
    };

    let mut best: Option<ModelState> = None;
    let mut failures = Vec::new();
    for (r, res) in results.into_iter().enumerate() {
        match res {
            Ok(state) => {
                let score = state.elbo_history.last().copied().unwrap_or(f64::NEG_INFINITY);
                if !score.is_finite() {
                    failures.push(format!("restart {r}: non-finite final ELBO"));
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some(b) => score > *b.elbo_history.last().unwrap(),
                };
                if better {
                    best = Some(state);
                }
            }
            Err(e) => failures.push(format!("restart {r}: {e}")),
        }
    }
    best.ok_or_else(|| {
        KfaError::Numerical(format!("all restarts diverged: {}", failures.join("; ")))
    })
}

/// Single-threaded fit with restarts; see [`fit_threaded`].
pub fn fit(
    views: &[(ViewSpec, ViewData)],
    hyper: &Hyperparams,
    cfg: &FitConfig,
    lambda_opt: Option<&LambdaOptConfig>,
    seed: u64,
) -> Result<ModelState> {
    fit_threaded(views, hyper, cfg, lambda_opt, seed, 1)
}
