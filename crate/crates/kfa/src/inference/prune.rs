//! ARD-driven pruning of latent factors and relevance vectors.

use ndarray::{Array2, Axis};

use crate::model::{DualCov, ModelState};

fn select_square(m: &Array2<f64>, keep: &[usize]) -> Array2<f64> {
    m.select(Axis(0), keep).select(Axis(1), keep)
}

/// Relative column powers of the latent factors, per view: the diagonal of
/// <A^T A> normalized by its trace. This is the relevance proxy exported by
/// the CLI as well.
pub fn factor_powers(state: &ModelState) -> Vec<Vec<f64>> {
    state
        .views
        .iter()
        .map(|view| {
            let aa = view.dual.expected_sq();
            let total: f64 = aa.diag().sum();
            let total = if total > 0.0 { total } else { 1.0 };
            aa.diag().iter().map(|p| p / total).collect()
        })
        .collect()
}

/// Drop latent factors whose relative column power is below tolerance in
/// every view. Never prunes to zero factors. Returns true if anything was
/// removed.
pub fn prune_factors(state: &mut ModelState) -> bool {
    let k = state.n_factors();
    if k <= 1 {
        return false;
    }
    let powers = factor_powers(state);
    let max_power: Vec<f64> = (0..k)
        .map(|kk| powers.iter().map(|p| p[kk]).fold(f64::MIN, f64::max))
        .collect();
    let tol = state.hyper.prune_factor_tol;
    let mut keep: Vec<usize> = (0..k).filter(|kk| max_power[*kk] >= tol).collect();
    if keep.is_empty() {
        // keep the strongest factor
        let best = max_power
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        keep.push(best);
    }
    if keep.len() == k {
        return false;
    }

    state.z.mean = state.z.mean.select(Axis(1), &keep);
    for cov in &mut state.z.covs {
        *cov = select_square(cov, &keep);
    }
    for view in &mut state.views {
        view.dual.mean = view.dual.mean.select(Axis(1), &keep);
        match &mut view.dual.cov {
            DualCov::Shared(c) => *c = select_square(c, &keep),
            DualCov::PerRow(covs) => {
                for c in covs.iter_mut() {
                    *c = select_square(c, &keep);
                }
            }
        }
        view.alpha.a = view.alpha.a.select(Axis(0), &keep);
        view.alpha.b = view.alpha.b.select(Axis(0), &keep);
    }
    state.active_factors = keep.iter().map(|&i| state.active_factors[i]).collect();
    true
}

/// Row powers <A_{n,:} A_{n,:}^T> of a double-ARD view's dual matrix.
pub fn rv_powers(state: &ModelState, view_idx: usize) -> Vec<f64> {
    let view = &state.views[view_idx];
    let k = view.dual.mean.ncols();
    (0..view.dual.n_rows())
        .map(|row| (0..k).map(|kk| view.dual.row_sq(row, kk)).sum())
        .collect()
}

/// Drop relevance vectors whose row power relative to the strongest row is
/// below tolerance: the view's kernel columns and dual rows are removed
/// together. Never prunes below one RV. Returns true if anything was removed.
pub fn prune_rvs(state: &mut ModelState, view_idx: usize) -> bool {
    if !state.views[view_idx].spec.double_ard {
        return false;
    }
    let powers = rv_powers(state, view_idx);
    let max_power = powers.iter().cloned().fold(f64::MIN, f64::max);
    if max_power <= 0.0 {
        return false;
    }
    let tol = state.hyper.prune_rv_tol;
    let keep: Vec<usize> = (0..powers.len())
        .filter(|r| powers[*r] / max_power >= tol)
        .collect();
    if keep.is_empty() || keep.len() == powers.len() {
        return false;
    }
    retain_rvs(state, view_idx, &keep);
    true
}

/// Keep only the listed rows (indices into the current dual matrix) of a
/// kernelized view: slices the dual posterior, gamma posterior and the
/// kernel columns consistently.
pub fn retain_rvs(state: &mut ModelState, view_idx: usize, keep: &[usize]) {
    let view = &mut state.views[view_idx];
    view.dual.mean = view.dual.mean.select(Axis(0), keep);
    if let DualCov::PerRow(covs) = &mut view.dual.cov {
        *covs = keep.iter().map(|&r| covs[r].clone()).collect();
    }
    if let Some(gamma) = &mut view.gamma {
        gamma.a = gamma.a.select(Axis(0), keep);
        gamma.b = gamma.b.select(Axis(0), keep);
    }
    if let Some(km) = &mut view.kernel_matrix {
        *km = km.select(Axis(1), keep);
    }
    view.active_rvs = keep.iter().map(|&r| view.active_rvs[r]).collect();
}
