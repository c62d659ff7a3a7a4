//! Domain types for the generative model: views, hyperparameters and the
//! variational posteriors over all random variables.

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use statrs::function::gamma::digamma;

use crate::error::{KfaError, Result};
use crate::kernels::{self, CenteringStats, KernelConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewRole {
    Input,
    Output,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    Primal,
    Kernelized,
}

/// Static description of one observation modality.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewSpec {
    pub name: String,
    pub role: ViewRole,
    pub representation: Representation,
    #[serde(default)]
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub double_ard: bool,
    #[serde(default)]
    pub learn_lambda: bool,
}

impl ViewSpec {
    pub fn validate(&self) -> Result<()> {
        match self.representation {
            Representation::Kernelized if self.kernel.is_none() => {
                return Err(KfaError::InvalidConfig(format!(
                    "view '{}' is kernelized but has no kernel config",
                    self.name
                )))
            }
            Representation::Primal if self.kernel.is_some() => {
                return Err(KfaError::InvalidConfig(format!(
                    "view '{}' is primal but has a kernel config",
                    self.name
                )))
            }
            _ => {}
        }
        if self.double_ard && self.representation != Representation::Kernelized {
            return Err(KfaError::InvalidConfig(format!(
                "view '{}': double_ard requires a kernelized view",
                self.name
            )));
        }
        if self.learn_lambda {
            let ok = matches!(
                self.kernel.as_ref().map(|k| &k.kind),
                Some(crate::kernels::KernelKind::ArdRbf { .. })
            );
            if !ok {
                return Err(KfaError::InvalidConfig(format!(
                    "view '{}': learn_lambda requires an ard_rbf kernel",
                    self.name
                )));
            }
        }
        Ok(())
    }
}

/// Raw observations for one view plus the row-level observation mask used
/// for semi-supervised (transductive) fitting.
#[derive(Debug, Clone)]
pub struct ViewData {
    pub x: Array2<f64>,
    pub observed: Vec<bool>,
}

impl ViewData {
    pub fn fully_observed(x: Array2<f64>) -> Self {
        let n = x.nrows();
        ViewData { x, observed: vec![true; n] }
    }

    pub fn n_observed(&self) -> usize {
        self.observed.iter().filter(|o| **o).count()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub a_tau: f64,
    pub b_tau: f64,
    pub a_gamma: f64,
    pub b_gamma: f64,
    pub k_init: usize,
    pub prune_factor_tol: f64,
    pub prune_rv_tol: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Hyperparams {
            a_alpha: 1e-14,
            b_alpha: 1e-14,
            a_tau: 1e-14,
            b_tau: 1e-14,
            a_gamma: 1e-14,
            b_gamma: 1e-14,
            k_init: 100,
            prune_factor_tol: 1e-6,
            prune_rv_tol: 1e-6,
        }
    }
}

impl Hyperparams {
    /// Default initial latent dimensionality: min(N, sum of view dims, 100).
    pub fn default_k_init(n_rows: usize, total_dims: usize) -> usize {
        n_rows.min(total_dims).min(100).max(1)
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [
            self.a_alpha, self.b_alpha, self.a_tau, self.b_tau, self.a_gamma, self.b_gamma,
        ];
        if vals.iter().any(|v| *v <= 0.0 || !v.is_finite()) {
            return Err(KfaError::InvalidConfig(
                "all Gamma shape/rate hyperparameters must be > 0".into(),
            ));
        }
        if self.k_init < 1 {
            return Err(KfaError::InvalidConfig("k_init must be >= 1".into()));
        }
        if self.prune_factor_tol <= 0.0 || self.prune_rv_tol <= 0.0 {
            return Err(KfaError::InvalidConfig("pruning tolerances must be > 0".into()));
        }
        Ok(())
    }
}

/// Gaussian q(Z): per-row means and one shared covariance per mask group.
/// Rows with the same set of observing views share a covariance.
#[derive(Debug, Clone)]
pub struct FactorPosterior {
    pub mean: Array2<f64>,
    pub covs: Vec<Array2<f64>>,
    /// row index -> index into `covs`
    pub group: Vec<usize>,
}

impl FactorPosterior {
    pub fn n_rows(&self) -> usize {
        self.mean.nrows()
    }

    pub fn n_factors(&self) -> usize {
        self.mean.ncols()
    }

    pub fn cov_of_row(&self, n: usize) -> &Array2<f64> {
        &self.covs[self.group[n]]
    }

    /// <Z^T Z> restricted to the given rows.
    pub fn zz_over(&self, rows: &[usize]) -> Array2<f64> {
        let k = self.n_factors();
        let mut out = Array2::<f64>::zeros((k, k));
        let mut counts = vec![0usize; self.covs.len()];
        for &n in rows {
            counts[self.group[n]] += 1;
            let mu = self.mean.row(n);
            for i in 0..k {
                for j in 0..k {
                    out[[i, j]] += mu[i] * mu[j];
                }
            }
        }
        for (g, c) in counts.iter().enumerate() {
            if *c > 0 {
                out = out + &(self.covs[g].clone() * *c as f64);
            }
        }
        out
    }
}

/// Covariance layout of a dual/primal weight posterior.
#[derive(Debug, Clone)]
pub enum DualCov {
    Shared(Array2<f64>),
    PerRow(Vec<Array2<f64>>),
}

/// Gaussian q(A) (kernelized view, R = N rows) or q(W) (primal view,
/// R = D_m rows).
#[derive(Debug, Clone)]
pub struct DualPosterior {
    pub mean: Array2<f64>,
    pub cov: DualCov,
}

impl DualPosterior {
    pub fn n_rows(&self) -> usize {
        self.mean.nrows()
    }

    /// Full second moment <A^T A> = mu^T mu + R Sigma (shared covariance)
    /// or mu^T mu + sum_n Sigma_n (per-row covariance).
    pub fn expected_sq(&self) -> Array2<f64> {
        let mut out = self.mean.t().dot(&self.mean);
        match &self.cov {
            DualCov::Shared(s) => {
                out = out + &(s * self.mean.nrows() as f64);
            }
            DualCov::PerRow(covs) => {
                for c in covs {
                    out = out + c;
                }
            }
        }
        out
    }

    /// <A_{n,k}^2> = mu_{n,k}^2 + Sigma_{(n)}[k,k].
    pub fn row_sq(&self, n: usize, k: usize) -> f64 {
        let mu = self.mean[[n, k]];
        let var = match &self.cov {
            DualCov::Shared(s) => s[[k, k]],
            DualCov::PerRow(covs) => covs[n][[k, k]],
        };
        mu * mu + var
    }
}

/// Gamma posterior over a vector of precisions (length 1 for tau).
#[derive(Debug, Clone)]
pub struct GammaPosterior {
    pub a: Array1<f64>,
    pub b: Array1<f64>,
}

impl GammaPosterior {
    pub fn from_prior(a0: f64, b0: f64, len: usize) -> Self {
        GammaPosterior {
            a: Array1::from_elem(len, a0),
            b: Array1::from_elem(len, b0),
        }
    }

    pub fn mean(&self) -> Array1<f64> {
        &self.a / &self.b
    }

    pub fn mean_scalar(&self) -> f64 {
        self.a[0] / self.b[0]
    }

    /// <log x> = digamma(a) - log b, elementwise.
    pub fn mean_log(&self) -> Array1<f64> {
        Array1::from_iter(
            self.a
                .iter()
                .zip(self.b.iter())
                .map(|(a, b)| digamma(*a) - b.ln()),
        )
    }
}

/// Per-view mutable state: data, kernel cache and posteriors.
#[derive(Debug, Clone)]
pub struct ViewState {
    pub spec: ViewSpec,
    pub data: ViewData,
    /// Reconstruction target (centered kernel columns for kernelized views);
    /// None for primal views, whose target is `data.x` directly.
    pub kernel_matrix: Option<Array2<f64>>,
    pub centering: Option<CenteringStats>,
    /// Indices of the surviving relevance vectors (kernelized views).
    pub active_rvs: Vec<usize>,
    pub dual: DualPosterior,
    pub alpha: GammaPosterior,
    pub tau: GammaPosterior,
    pub gamma: Option<GammaPosterior>,
}

impl ViewState {
    pub fn is_kernelized(&self) -> bool {
        self.spec.representation == Representation::Kernelized
    }

    /// The reconstruction target, N_total x R.
    pub fn target(&self) -> &Array2<f64> {
        match &self.kernel_matrix {
            Some(k) => k,
            None => &self.data.x,
        }
    }

    /// Number of columns of the reconstruction target (= rows of the dual
    /// matrix): active RV count for kernelized views, D_m for primal.
    pub fn target_dim(&self) -> usize {
        self.target().ncols()
    }

    pub fn observed_rows(&self) -> Vec<usize> {
        self.data
            .observed
            .iter()
            .enumerate()
            .filter(|(_, o)| **o)
            .map(|(i, _)| i)
            .collect()
    }
}

/// The full variational state of one model.
#[derive(Debug, Clone)]
pub struct ModelState {
    pub views: Vec<ViewState>,
    pub z: FactorPosterior,
    /// Original indices of the surviving latent factors.
    pub active_factors: Vec<usize>,
    pub elbo_history: Vec<f64>,
    pub seed: u64,
    pub hyper: Hyperparams,
}

impl ModelState {
    pub fn n_rows(&self) -> usize {
        self.z.n_rows()
    }

    pub fn n_factors(&self) -> usize {
        self.z.n_factors()
    }

    pub fn view_by_name(&self, name: &str) -> Result<&ViewState> {
        self.views
            .iter()
            .find(|v| v.spec.name == name)
            .ok_or_else(|| KfaError::InvalidConfig(format!("unknown view '{name}'")))
    }
}

/// Group rows by their observation pattern across all views. Rows sharing a
/// pattern share one q(Z) covariance.
pub fn mask_groups(views: &[(ViewSpec, ViewData)]) -> (Vec<usize>, usize) {
    let n = views[0].1.x.nrows();
    let mut keys: Vec<Vec<bool>> = Vec::new();
    let mut group = vec![0usize; n];
    for row in 0..n {
        let key: Vec<bool> = views.iter().map(|(_, d)| d.observed[row]).collect();
        match keys.iter().position(|k| *k == key) {
            Some(g) => group[row] = g,
            None => {
                group[row] = keys.len();
                keys.push(key);
            }
        }
    }
    let n_groups = keys.len();
    (group, n_groups)
}

/// Build the initial variational state from seeded random draws.
pub fn init_state(views: Vec<(ViewSpec, ViewData)>, hyper: &Hyperparams, seed: u64) -> Result<ModelState> {
    hyper.validate()?;
    if views.is_empty() {
        return Err(KfaError::InvalidConfig("at least one view is required".into()));
    }
    let n = views[0].1.x.nrows();
    for (spec, data) in &views {
        spec.validate()?;
        if data.x.nrows() != n {
            return Err(KfaError::DimensionMismatch(format!(
                "view '{}' has {} rows, expected {}",
                spec.name,
                data.x.nrows(),
                n
            )));
        }
        if data.observed.len() != n {
            return Err(KfaError::DimensionMismatch(format!(
                "view '{}': observed mask length {} != {}",
                spec.name,
                data.observed.len(),
                n
            )));
        }
        if spec.role == ViewRole::Input && data.observed.iter().any(|o| !o) {
            return Err(KfaError::InvalidConfig(format!(
                "input view '{}' must be fully observed",
                spec.name
            )));
        }
    }
    let k = hyper.k_init;
    let (group, n_groups) = mask_groups(&views);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mean = Array2::from_shape_fn((n, k), |_| rng.sample::<f64, _>(StandardNormal));
    let z = FactorPosterior {
        mean,
        covs: vec![Array2::eye(k); n_groups],
        group,
    };

    let scale = 1.0 / (k as f64).sqrt();
    let mut view_states = Vec::with_capacity(views.len());
    for (spec, data) in views {
        let (kernel_matrix, centering) = if spec.representation == Representation::Kernelized {
            let cfg = spec.kernel.as_ref().unwrap();
            let raw = kernels::compute_kernel(&data.x.view(), &data.x.view(), cfg)?;
            if cfg.center {
                let (c, stats) = kernels::center_kernel(&raw.view())?;
                (Some(c), Some(stats))
            } else {
                (Some(raw), None)
            }
        } else {
            (None, None)
        };
        let r = match &kernel_matrix {
            Some(km) => km.ncols(),
            None => data.x.ncols(),
        };
        let dual_mean =
            Array2::from_shape_fn((r, k), |_| rng.sample::<f64, _>(StandardNormal) * scale);
        let cov = if spec.double_ard {
            DualCov::PerRow(vec![Array2::eye(k); r])
        } else {
            DualCov::Shared(Array2::eye(k))
        };
        let gamma = if spec.double_ard {
            Some(GammaPosterior::from_prior(hyper.a_gamma, hyper.b_gamma, r))
        } else {
            None
        };
        let active_rvs = if kernel_matrix.is_some() { (0..n).collect() } else { Vec::new() };
        view_states.push(ViewState {
            spec,
            data,
            kernel_matrix,
            centering,
            active_rvs,
            dual: DualPosterior { mean: dual_mean, cov },
            alpha: GammaPosterior::from_prior(hyper.a_alpha, hyper.b_alpha, k),
            tau: GammaPosterior::from_prior(hyper.a_tau, hyper.b_tau, 1),
            gamma,
        });
    }

    Ok(ModelState {
        views: view_states,
        z,
        active_factors: (0..k).collect(),
        elbo_history: Vec::new(),
        seed,
        hyper: hyper.clone(),
    })
}
