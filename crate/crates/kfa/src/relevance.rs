//! Per-feature relevance determination for ARD-RBF views: gradient ascent of
//! the kernel data term of the lower bound over lambda, alternated with the
//! mean-field sweeps, plus threshold-based feature selection and export.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{KfaError, Result};
use crate::kernels::{self, KernelConfig, KernelKind};
use crate::model::ModelState;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LambdaOptConfig {
    #[serde(default = "default_step_size")]
    pub step_size: f64,
    #[serde(default = "default_steps_per_sweep")]
    pub steps_per_sweep: usize,
    #[serde(default = "default_adaptive")]
    pub adaptive: bool,
    #[serde(default = "default_select_threshold")]
    pub select_threshold: f64,
}

fn default_step_size() -> f64 {
    1e-3
}
fn default_steps_per_sweep() -> usize {
    10
}
fn default_adaptive() -> bool {
    true
}
fn default_select_threshold() -> f64 {
    0.1
}

impl Default for LambdaOptConfig {
    fn default() -> Self {
        LambdaOptConfig {
            step_size: default_step_size(),
            steps_per_sweep: default_steps_per_sweep(),
            adaptive: default_adaptive(),
            select_threshold: default_select_threshold(),
        }
    }
}

impl LambdaOptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.step_size <= 0.0 {
            return Err(KfaError::InvalidConfig("lambda step_size must be > 0".into()));
        }
        if self.steps_per_sweep < 1 {
            return Err(KfaError::InvalidConfig("steps_per_sweep must be >= 1".into()));
        }
        if !(0.0..=1.0).contains(&self.select_threshold) {
            return Err(KfaError::InvalidConfig("select_threshold must be in [0,1]".into()));
        }
        Ok(())
    }
}

/// First-order adaptive moment accumulator for the lambda ascent.
#[derive(Debug, Clone, Default)]
pub struct AdamMoments {
    m: Vec<f64>,
    v: Vec<f64>,
    t: u64,
}

impl AdamMoments {
    /// Returns the ascent direction for the given gradient.
    fn direction(&mut self, grad: &[f64]) -> Vec<f64> {
        const B1: f64 = 0.9;
        const B2: f64 = 0.999;
        const EPS: f64 = 1e-8;
        if self.m.len() != grad.len() {
            self.m = vec![0.0; grad.len()];
            self.v = vec![0.0; grad.len()];
            self.t = 0;
        }
        self.t += 1;
        let t = self.t as f64;
        grad.iter()
            .enumerate()
            .map(|(i, g)| {
                self.m[i] = B1 * self.m[i] + (1.0 - B1) * g;
                self.v[i] = B2 * self.v[i] + (1.0 - B2) * g * g;
                let mh = self.m[i] / (1.0 - B1.powf(t));
                let vh = self.v[i] / (1.0 - B2.powf(t));
                mh / (vh.sqrt() + EPS)
            })
            .collect()
    }
}

fn current_lambda(state: &ModelState, view_idx: usize) -> Result<Vec<f64>> {
    let view = &state.views[view_idx];
    match view.spec.kernel.as_ref().map(|c| &c.kind) {
        Some(KernelKind::ArdRbf { lambda }) => Ok(lambda.clone()),
        _ => Err(KfaError::InvalidConfig(format!(
            "view '{}' does not use an ard_rbf kernel",
            view.spec.name
        ))),
    }
}

/// Recompute a view's kernel (full square, then centering, then active RV
/// columns) for a candidate lambda. Returns (raw square kernel, active target).
fn kernels_at(state: &ModelState, view_idx: usize, lambda: &[f64]) -> Result<(Array2<f64>, Array2<f64>)> {
    let view = &state.views[view_idx];
    if view.data.x.ncols() != lambda.len() {
        return Err(KfaError::DimensionMismatch(format!(
            "lambda has {} entries, view '{}' has {} features",
            lambda.len(),
            view.spec.name,
            view.data.x.ncols()
        )));
    }
    let cfg = KernelConfig {
        kind: KernelKind::ArdRbf { lambda: lambda.to_vec() },
        center: false,
    };
    let raw = kernels::compute_kernel(&view.data.x.view(), &view.data.x.view(), &cfg)?;
    let centered = if view.spec.kernel.as_ref().map(|c| c.center).unwrap_or(false) {
        kernels::center_kernel(&raw.view())?.0
    } else {
        raw.clone()
    };
    let active = centered.select(ndarray::Axis(1), &view.active_rvs);
    Ok((raw, active))
}

fn lb_of_target(state: &ModelState, view_idx: usize, target: &Array2<f64>) -> f64 {
    let view = &state.views[view_idx];
    let tau = view.tau.mean_scalar();
    let obs = view.observed_rows();
    let k = state.n_factors();

    let mut sq = 0.0;
    let proj = target.dot(&view.dual.mean);
    let mut cross = 0.0;
    for &row in &obs {
        for c in 0..target.ncols() {
            sq += target[[row, c]] * target[[row, c]];
        }
        for j in 0..k {
            cross += proj[[row, j]] * state.z.mean[[row, j]];
        }
    }
    let aa = view.dual.expected_sq();
    let zz = state.z.zz_over(&obs);
    let quad = (&aa * &zz).sum();
    -tau / 2.0 * (sq - 2.0 * cross + quad)
}

/// The lambda-dependent term of the lower bound for a kernelized view,
/// evaluated with the kernel recomputed from raw features at the given
/// lambda (the quadratic moment term is a lambda-independent offset but is
/// included so exact reconstructions score zero).
pub fn lb_lambda_term(state: &ModelState, view_idx: usize, lambda: &[f64]) -> Result<f64> {
    let (_, active) = kernels_at(state, view_idx, lambda)?;
    Ok(lb_of_target(state, view_idx, &active))
}

/// Analytic gradient of `lb_lambda_term` w.r.t. lambda, chained through
/// centering (self-adjoint) and the active-column selection.
pub fn lb_lambda_gradient(state: &ModelState, view_idx: usize, lambda: &[f64]) -> Result<Vec<f64>> {
    let view = &state.views[view_idx];
    let (raw, active) = kernels_at(state, view_idx, lambda)?;
    let n = view.data.x.nrows();
    let tau = view.tau.mean_scalar();

    // dLB/dK_active[n,u] = -tau (K[n,u] - mu_Z[n,:] . mu_A[u,:]), zero for
    // unobserved rows.
    let recon = state.z.mean.dot(&view.dual.mean.t()); // N x R
    let mut w_active = Array2::<f64>::zeros(active.raw_dim());
    for row in 0..n {
        if !view.data.observed[row] {
            continue;
        }
        for c in 0..active.ncols() {
            w_active[[row, c]] = -tau * (active[[row, c]] - recon[[row, c]]);
        }
    }
    // embed at the active columns of the full square kernel
    let mut w_full = Array2::<f64>::zeros((n, n));
    for (c, &orig) in view.active_rvs.iter().enumerate() {
        for row in 0..n {
            w_full[[row, orig]] = w_active[[row, c]];
        }
    }
    let w_raw = if view.spec.kernel.as_ref().map(|c| c.center).unwrap_or(false) {
        kernels::centering_map(&w_full.view())
    } else {
        w_full
    };
    let grad = kernels::ard_rbf_gradient_contract(&view.data.x.view(), lambda, &w_raw.view())?;
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(KfaError::Numerical("non-finite lambda gradient".into()));
    }
    let _ = raw;
    Ok(grad.to_vec())
}

/// Install a new lambda on a view: stores it in the kernel config and
/// recomputes the cached kernel matrix and centering statistics.
pub fn set_lambda(state: &mut ModelState, view_idx: usize, lambda: Vec<f64>) -> Result<()> {
    let cfg = KernelConfig { kind: KernelKind::ArdRbf { lambda: lambda.clone() }, center: false };
    let view = &state.views[view_idx];
    let raw = kernels::compute_kernel(&view.data.x.view(), &view.data.x.view(), &cfg)?;
    let center = view.spec.kernel.as_ref().map(|c| c.center).unwrap_or(false);
    let (matrix, stats) = if center {
        let (c, s) = kernels::center_kernel(&raw.view())?;
        (c, Some(s))
    } else {
        (raw, None)
    };
    let active = matrix.select(ndarray::Axis(1), &view.active_rvs);

    let view = &mut state.views[view_idx];
    if let Some(kc) = &mut view.spec.kernel {
        kc.kind = KernelKind::ArdRbf { lambda };
    }
    view.kernel_matrix = Some(active);
    view.centering = stats;
    Ok(())
}

/// Run `steps_per_sweep` ascent steps on the view's lambda, projecting onto
/// [0, inf) and backtracking (up to 20 halvings) so the bound term never
/// decreases. Updates the view's kernel in place and returns the new lambda.
pub fn lambda_step(
    state: &mut ModelState,
    view_idx: usize,
    config: &LambdaOptConfig,
    adam: &mut AdamMoments,
) -> Result<Vec<f64>> {
    config.validate()?;
    let mut lambda = current_lambda(state, view_idx)?;
    let mut lb = lb_lambda_term(state, view_idx, &lambda)?;

    for _ in 0..config.steps_per_sweep {
        let grad = lb_lambda_gradient(state, view_idx, &lambda)?;
        if grad.iter().all(|g| *g == 0.0) {
            break;
        }
        let dir = if config.adaptive {
            adam.direction(&grad)
        } else {
            grad.clone()
        };
        let mut scale = config.step_size;
        let mut accepted = false;
        for _ in 0..=20 {
            let candidate: Vec<f64> = lambda
                .iter()
                .zip(dir.iter())
                .map(|(l, d)| (l + scale * d).max(0.0))
                .collect();
            let cand_lb = lb_lambda_term(state, view_idx, &candidate)?;
            if cand_lb >= lb {
                lambda = candidate;
                lb = cand_lb;
                accepted = true;
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    set_lambda(state, view_idx, lambda.clone())?;
    Ok(lambda)
}

/// Threshold-based feature selection relative to the largest relevance.
/// The strongest feature is always retained.
pub fn select_features(lambda: &[f64], threshold: f64) -> Result<Vec<bool>> {
    if lambda.is_empty() {
        return Err(KfaError::InvalidConfig("empty lambda vector".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(KfaError::InvalidConfig("threshold must be in [0,1]".into()));
    }
    let max = lambda.iter().cloned().fold(f64::MIN, f64::max);
    Ok(lambda.iter().map(|l| *l >= threshold * max).collect())
}

/// Write (feature_index, lambda) pairs as CSV.
pub fn write_lambda_csv(lambda: &[f64], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["feature_index", "lambda"])?;
    for (i, l) in lambda.iter().enumerate() {
        w.write_record([i.to_string(), format!("{l}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Render normalized lambda as a grayscale portable graymap (P2) with the
/// given image shape.
pub fn write_relevance_pgm(lambda: &[f64], shape: (usize, usize), path: &Path) -> Result<()> {
    let (h, w) = shape;
    if h * w != lambda.len() {
        return Err(KfaError::DimensionMismatch(format!(
            "image shape {h}x{w} does not match {} features",
            lambda.len()
        )));
    }
    let max = lambda.iter().cloned().fold(f64::MIN, f64::max).max(1e-300);
    let mut out = String::new();
    out.push_str(&format!("P2\n{w} {h}\n255\n"));
    for row in 0..h {
        let line: Vec<String> = (0..w)
            .map(|col| {
                let v = (lambda[row * w + col] / max * 255.0).round().clamp(0.0, 255.0);
                format!("{}", v as u8)
            })
            .collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(out.as_bytes())?;
    Ok(())
}
