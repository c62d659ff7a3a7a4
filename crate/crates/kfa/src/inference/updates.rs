//! Coordinate-ascent update rules for the variational factors.

use ndarray::{Array1, Array2};

use crate::error::{KfaError, Result};
use crate::linalg::{sym_inverse_logdet, symmetrize};
use crate::model::{DualCov, DualPosterior, FactorPosterior, GammaPosterior, ModelState};

/// Update q(Z). The precision I + sum_m <tau_m><A_m^T A_m> runs, per row,
/// only over views whose row is observed; rows sharing an observation
/// pattern share a covariance.
pub fn update_z(state: &ModelState) -> Result<FactorPosterior> {
    let n = state.n_rows();
    let k = state.n_factors();
    let n_groups = state.z.covs.len();

    let tau_means: Vec<f64> = state.views.iter().map(|v| v.tau.mean_scalar()).collect();
    let aa: Vec<Array2<f64>> = state.views.iter().map(|v| v.dual.expected_sq()).collect();

    // One representative row per group determines which views it observes.
    let mut group_rep = vec![usize::MAX; n_groups];
    for row in 0..n {
        let g = state.z.group[row];
        if group_rep[g] == usize::MAX {
            group_rep[g] = row;
        }
    }

    let mut covs = Vec::with_capacity(n_groups);
    for g in 0..n_groups {
        let rep = group_rep[g];
        let mut prec = Array2::<f64>::eye(k);
        if rep != usize::MAX {
            for (m, view) in state.views.iter().enumerate() {
                if view.data.observed[rep] {
                    prec = prec + &(aa[m].clone() * tau_means[m]);
                }
            }
        }
        symmetrize(&mut prec);
        let (cov, _) = sym_inverse_logdet(&prec)
            .map_err(|e| KfaError::Numerical(format!("q(Z) covariance, group {g}: {e}")))?;
        covs.push(cov);
    }

    // Data contributions: C[n,:] = sum_m <tau_m> (T_m mu_{A_m})[n,:] over
    // views observing row n; then mu_{z_n} = C[n,:] Sigma_{Z,g(n)}.
    let mut contrib = Array2::<f64>::zeros((n, k));
    for (m, view) in state.views.iter().enumerate() {
        let proj = view.target().dot(&view.dual.mean); // N x K
        for row in 0..n {
            if view.data.observed[row] {
                for j in 0..k {
                    contrib[[row, j]] += tau_means[m] * proj[[row, j]];
                }
            }
        }
    }
    let mut mean = Array2::<f64>::zeros((n, k));
    for row in 0..n {
        let cov = &covs[state.z.group[row]];
        for j in 0..k {
            let mut s = 0.0;
            for i in 0..k {
                s += contrib[[row, i]] * cov[[i, j]];
            }
            mean[[row, j]] = s;
        }
    }

    Ok(FactorPosterior { mean, covs, group: state.z.group.clone() })
}

/// Update q(A) (kernelized) or q(W) (primal) for one view, restricted to
/// the view's observed rows.
pub fn update_dual(state: &ModelState, view_idx: usize) -> Result<DualPosterior> {
    let view = &state.views[view_idx];
    let k = state.n_factors();
    let obs = view.observed_rows();
    let tau = view.tau.mean_scalar();
    let alpha = view.alpha.mean();

    let zz = state.z.zz_over(&obs);
    // data term: T[obs,:]^T mu_Z[obs,:], R x K
    let target = view.target();
    let r = target.ncols();
    let mut data_term = Array2::<f64>::zeros((r, k));
    for &row in &obs {
        for c in 0..r {
            let t = target[[row, c]];
            if t == 0.0 {
                continue;
            }
            for j in 0..k {
                data_term[[c, j]] += t * state.z.mean[[row, j]];
            }
        }
    }

    if view.spec.double_ard {
        let gamma = view
            .gamma
            .as_ref()
            .ok_or_else(|| KfaError::InvalidConfig("double_ard view missing gamma posterior".into()))?
            .mean();
        let mut covs = Vec::with_capacity(r);
        let mut mean = Array2::<f64>::zeros((r, k));
        for row in 0..r {
            let mut prec = zz.clone() * tau;
            for j in 0..k {
                prec[[j, j]] += alpha[j] * gamma[row];
            }
            symmetrize(&mut prec);
            let (cov, _) = sym_inverse_logdet(&prec)
                .map_err(|e| KfaError::Numerical(format!("q(A) row covariance: {e}")))?;
            for j in 0..k {
                let mut s = 0.0;
                for i in 0..k {
                    s += data_term[[row, i]] * cov[[i, j]];
                }
                mean[[row, j]] = tau * s;
            }
            covs.push(cov);
        }
        Ok(DualPosterior { mean, cov: DualCov::PerRow(covs) })
    } else {
        let mut prec = zz * tau;
        for j in 0..k {
            prec[[j, j]] += alpha[j];
        }
        symmetrize(&mut prec);
        let (cov, _) = sym_inverse_logdet(&prec)
            .map_err(|e| KfaError::Numerical(format!("q(A) covariance: {e}")))?;
        let mean = data_term.dot(&cov) * tau;
        Ok(DualPosterior { mean, cov: DualCov::Shared(cov) })
    }
}

/// Update q(alpha) for one view: a_k = R/2 + a0 where R is the row count of
/// the dual matrix. Under double ARD the column statistic is gamma-weighted,
/// matching the N(0, (gamma_n alpha_k)^{-1}) prior.
pub fn update_alpha(state: &ModelState, view_idx: usize) -> GammaPosterior {
    let view = &state.views[view_idx];
    let k = state.n_factors();
    let r = view.dual.n_rows();
    let a0 = state.hyper.a_alpha;
    let b0 = state.hyper.b_alpha;

    let a = Array1::from_elem(k, r as f64 / 2.0 + a0);
    let mut b = Array1::from_elem(k, b0);
    if view.spec.double_ard {
        let gamma = view.gamma.as_ref().unwrap().mean();
        for kk in 0..k {
            let mut s = 0.0;
            for row in 0..r {
                s += gamma[row] * view.dual.row_sq(row, kk);
            }
            b[kk] += 0.5 * s;
        }
    } else {
        let aa = view.dual.expected_sq();
        for kk in 0..k {
            b[kk] += 0.5 * aa[[kk, kk]];
        }
    }
    GammaPosterior { a, b }
}

/// Expected squared reconstruction residual of one view over its observed
/// rows: sum T^2 - 2 Tr{<A><Z^T>T} + Tr{<A^T A><Z^T Z>}. This is the moment
/// entering both b_tau and the data term of the lower bound.
pub fn view_residual(state: &ModelState, view_idx: usize) -> f64 {
    let view = &state.views[view_idx];
    let obs = view.observed_rows();
    let target = view.target();
    let k = state.n_factors();

    let mut sq = 0.0;
    for &row in &obs {
        for c in 0..target.ncols() {
            sq += target[[row, c]] * target[[row, c]];
        }
    }

    let proj = target.dot(&view.dual.mean); // N x K
    let mut cross = 0.0;
    for &row in &obs {
        for j in 0..k {
            cross += proj[[row, j]] * state.z.mean[[row, j]];
        }
    }

    let aa = view.dual.expected_sq();
    let zz = state.z.zz_over(&obs);
    let quad = (&aa * &zz).sum();

    sq - 2.0 * cross + quad
}

/// Update q(tau) for one view: a = R N_obs / 2 + a0, b = b0 + residual / 2.
pub fn update_tau(state: &ModelState, view_idx: usize) -> Result<GammaPosterior> {
    let view = &state.views[view_idx];
    let r = view.target_dim();
    let n_obs = view.data.n_observed();
    let a0 = state.hyper.a_tau;
    let b0 = state.hyper.b_tau;

    let resid = view_residual(state, view_idx);
    if resid < -1e-9 {
        return Err(KfaError::Numerical(format!(
            "negative residual moment {resid} in tau update of view '{}'",
            view.spec.name
        )));
    }
    let b = b0 + 0.5 * resid.max(0.0);
    Ok(GammaPosterior {
        a: Array1::from_elem(1, (r * n_obs) as f64 / 2.0 + a0),
        b: Array1::from_elem(1, b),
    })
}

/// Update q(gamma) for a double-ARD view:
/// a_n = K_c/2 + a0, b_n = b0 + 1/2 sum_k <alpha_k><A_{n,k}^2>.
pub fn update_gamma(state: &ModelState, view_idx: usize) -> Result<GammaPosterior> {
    let view = &state.views[view_idx];
    if !view.spec.double_ard {
        return Err(KfaError::InvalidConfig(format!(
            "gamma update called on single-ARD view '{}'",
            view.spec.name
        )));
    }
    let k = state.n_factors();
    let r = view.dual.n_rows();
    let a0 = state.hyper.a_gamma;
    let b0 = state.hyper.b_gamma;
    let alpha = view.alpha.mean();

    let a = Array1::from_elem(r, k as f64 / 2.0 + a0);
    let mut b = Array1::from_elem(r, b0);
    for row in 0..r {
        let mut s = 0.0;
        for kk in 0..k {
            s += alpha[kk] * view.dual.row_sq(row, kk);
        }
        b[row] += 0.5 * s;
    }
    Ok(GammaPosterior { a, b })
}
