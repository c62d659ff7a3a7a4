//! Evidence lower bound for the full mean-field posterior.

use std::f64::consts::PI;

use statrs::function::gamma::{digamma, ln_gamma};

use crate::error::{KfaError, Result};
use crate::linalg::{cholesky, chol_logdet};
use crate::model::{DualCov, GammaPosterior, ModelState};

use super::updates::view_residual;

fn ln_2pi() -> f64 {
    (2.0 * PI).ln()
}

/// Expected log Gamma prior plus entropy of a Gamma posterior, summed over
/// all components. This is -KL(q || p) for each component.
fn gamma_prior_and_entropy(q: &GammaPosterior, a0: f64, b0: f64) -> f64 {
    let mut total = 0.0;
    for (a, b) in q.a.iter().zip(q.b.iter()) {
        let mean = a / b;
        let mean_log = digamma(*a) - b.ln();
        // E_q[log p(x)]
        total += a0 * b0.ln() - ln_gamma(a0) + (a0 - 1.0) * mean_log - b0 * mean;
        // H[q]
        total += a - b.ln() + ln_gamma(*a) + (1.0 - a) * digamma(*a);
    }
    total
}

fn logdet_cov(cov: &ndarray::Array2<f64>, what: &str) -> Result<f64> {
    cholesky(cov)
        .map(|l| chol_logdet(&l))
        .ok_or_else(|| KfaError::Numerical(format!("{what} covariance not positive definite")))
}

/// Full mean-field lower bound: per-view expected log-likelihoods, expected
/// log-priors for Z, A/W, alpha, tau, gamma, and the entropies of all
/// variational factors.
pub fn compute_elbo(state: &ModelState) -> Result<f64> {
    let n = state.n_rows();
    let k = state.n_factors();
    let hyper = &state.hyper;
    let mut elbo = 0.0;

    // q(Z): standard normal prior and Gaussian entropy, shared per group.
    let mut group_counts = vec![0usize; state.z.covs.len()];
    for &g in &state.z.group {
        group_counts[g] += 1;
    }
    let mut z_trace_total = 0.0;
    for (g, cov) in state.z.covs.iter().enumerate() {
        if group_counts[g] == 0 {
            continue;
        }
        let count = group_counts[g] as f64;
        z_trace_total += count * cov.diag().sum();
        let logdet = logdet_cov(cov, "q(Z)")?;
        elbo += count * 0.5 * (k as f64 * (1.0 + ln_2pi()) + logdet);
    }
    let z_mean_sq: f64 = state.z.mean.iter().map(|v| v * v).sum();
    elbo += -((n * k) as f64) / 2.0 * ln_2pi() - 0.5 * (z_mean_sq + z_trace_total);

    for (m, view) in state.views.iter().enumerate() {
        let r = view.target_dim();
        let n_obs = view.data.n_observed();
        let tau_mean = view.tau.mean_scalar();
        let tau_mean_log = digamma(view.tau.a[0]) - view.tau.b[0].ln();
        let alpha_mean = view.alpha.mean();
        let alpha_mean_log = view.alpha.mean_log();

        // expected log-likelihood of the (kernelized) observations
        let resid = view_residual(state, m);
        elbo += (r * n_obs) as f64 / 2.0 * (tau_mean_log - ln_2pi()) - 0.5 * tau_mean * resid;

        // expected log prior of A/W plus its entropy
        if view.spec.double_ard {
            let gamma = view.gamma.as_ref().unwrap();
            let gamma_mean = gamma.mean();
            let gamma_mean_log = gamma.mean_log();
            let covs = match &view.dual.cov {
                DualCov::PerRow(c) => c,
                DualCov::Shared(_) => {
                    return Err(KfaError::InvalidConfig(
                        "double_ard view with shared dual covariance".into(),
                    ))
                }
            };
            for row in 0..r {
                for kk in 0..k {
                    elbo += 0.5 * (gamma_mean_log[row] + alpha_mean_log[kk] - ln_2pi());
                    elbo -= 0.5 * gamma_mean[row] * alpha_mean[kk] * view.dual.row_sq(row, kk);
                }
                let logdet = logdet_cov(&covs[row], "q(A) per-row")?;
                elbo += 0.5 * (k as f64 * (1.0 + ln_2pi()) + logdet);
            }
            elbo += gamma_prior_and_entropy(gamma, hyper.a_gamma, hyper.b_gamma);
        } else {
            let cov = match &view.dual.cov {
                DualCov::Shared(c) => c,
                DualCov::PerRow(_) => {
                    return Err(KfaError::InvalidConfig(
                        "single-ARD view with per-row dual covariance".into(),
                    ))
                }
            };
            let aa = view.dual.expected_sq();
            for kk in 0..k {
                elbo += r as f64 / 2.0 * (alpha_mean_log[kk] - ln_2pi());
                elbo -= 0.5 * alpha_mean[kk] * aa[[kk, kk]];
            }
            let logdet = logdet_cov(cov, "q(A)")?;
            elbo += r as f64 * 0.5 * (k as f64 * (1.0 + ln_2pi()) + logdet);
        }

        elbo += gamma_prior_and_entropy(&view.alpha, hyper.a_alpha, hyper.b_alpha);
        elbo += gamma_prior_and_entropy(&view.tau, hyper.a_tau, hyper.b_tau);
    }

    if !elbo.is_finite() {
        return Err(KfaError::Numerical("non-finite ELBO".into()));
    }
    Ok(elbo)
}
