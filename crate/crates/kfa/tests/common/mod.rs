//! Naive-loop reference implementations of every coordinate-ascent update,
//! written independently of the library's linear algebra (Gauss-Jordan
//! inversion, explicit triple loops, per-row covariances with no grouping).

#![allow(dead_code)]

use ndarray::{Array1, Array2};

use kfa::model::{DualCov, ModelState, ViewState};

/// Gauss-Jordan inverse with partial pivoting.
pub fn gj_invert(a: &Array2<f64>) -> Array2<f64> {
    let n = a.nrows();
    assert_eq!(n, a.ncols());
    let mut m = a.clone();
    let mut inv = Array2::<f64>::eye(n);
    for col in 0..n {
        let mut pivot = col;
        for r in col + 1..n {
            if m[[r, col]].abs() > m[[pivot, col]].abs() {
                pivot = r;
            }
        }
        if pivot != col {
            for j in 0..n {
                let t = m[[col, j]];
                m[[col, j]] = m[[pivot, j]];
                m[[pivot, j]] = t;
                let t = inv[[col, j]];
                inv[[col, j]] = inv[[pivot, j]];
                inv[[pivot, j]] = t;
            }
        }
        let p = m[[col, col]];
        assert!(p.abs() > 1e-300, "singular matrix in oracle");
        for j in 0..n {
            m[[col, j]] /= p;
            inv[[col, j]] /= p;
        }
        for r in 0..n {
            if r == col {
                continue;
            }
            let f = m[[r, col]];
            if f == 0.0 {
                continue;
            }
            for j in 0..n {
                m[[r, j]] -= f * m[[col, j]];
                inv[[r, j]] -= f * inv[[col, j]];
            }
        }
    }
    inv
}

fn tau_mean(view: &ViewState) -> f64 {
    view.tau.a[0] / view.tau.b[0]
}

fn alpha_mean(view: &ViewState) -> Vec<f64> {
    view.alpha.a.iter().zip(view.alpha.b.iter()).map(|(a, b)| a / b).collect()
}

fn gamma_mean(view: &ViewState) -> Vec<f64> {
    let g = view.gamma.as_ref().expect("double-ARD view");
    g.a.iter().zip(g.b.iter()).map(|(a, b)| a / b).collect()
}

/// <A^T A> assembled with explicit loops.
fn dual_second_moment(view: &ViewState) -> Array2<f64> {
    let mu = &view.dual.mean;
    let (r, k) = mu.dim();
    let mut out = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            for row in 0..r {
                out[[i, j]] += mu[[row, i]] * mu[[row, j]];
            }
        }
    }
    match &view.dual.cov {
        DualCov::Shared(c) => {
            for i in 0..k {
                for j in 0..k {
                    out[[i, j]] += r as f64 * c[[i, j]];
                }
            }
        }
        DualCov::PerRow(covs) => {
            for c in covs {
                for i in 0..k {
                    for j in 0..k {
                        out[[i, j]] += c[[i, j]];
                    }
                }
            }
        }
    }
    out
}

/// <Z^T Z> over the given rows, with per-row covariances from the group map.
fn z_second_moment(state: &ModelState, rows: &[usize]) -> Array2<f64> {
    let k = state.z.mean.ncols();
    let mut out = Array2::<f64>::zeros((k, k));
    for &n in rows {
        let cov = &state.z.covs[state.z.group[n]];
        for i in 0..k {
            for j in 0..k {
                out[[i, j]] += state.z.mean[[n, i]] * state.z.mean[[n, j]] + cov[[i, j]];
            }
        }
    }
    out
}

fn observed_rows(view: &ViewState) -> Vec<usize> {
    (0..view.data.observed.len()).filter(|&n| view.data.observed[n]).collect()
}

/// Reference q(Z) update: one covariance per row (no group sharing).
pub fn oracle_z(state: &ModelState) -> (Array2<f64>, Vec<Array2<f64>>) {
    let n = state.z.mean.nrows();
    let k = state.z.mean.ncols();
    let mut covs = Vec::with_capacity(n);
    let mut mean = Array2::<f64>::zeros((n, k));
    for row in 0..n {
        let mut prec = Array2::<f64>::eye(k);
        for view in &state.views {
            if !view.data.observed[row] {
                continue;
            }
            let tau = tau_mean(view);
            let aa = dual_second_moment(view);
            for i in 0..k {
                for j in 0..k {
                    prec[[i, j]] += tau * aa[[i, j]];
                }
            }
        }
        let cov = gj_invert(&prec);
        let mut b = vec![0.0; k];
        for view in &state.views {
            if !view.data.observed[row] {
                continue;
            }
            let tau = tau_mean(view);
            let target = view.target();
            let mu_a = &view.dual.mean;
            for j in 0..k {
                let mut s = 0.0;
                for c in 0..target.ncols() {
                    s += target[[row, c]] * mu_a[[c, j]];
                }
                b[j] += tau * s;
            }
        }
        for j in 0..k {
            let mut s = 0.0;
            for i in 0..k {
                s += b[i] * cov[[i, j]];
            }
            mean[[row, j]] = s;
        }
        covs.push(cov);
    }
    (mean, covs)
}

/// Reference dual update; returns per-row covariances for double-ARD views
/// and a single shared covariance otherwise.
pub fn oracle_dual(state: &ModelState, m: usize) -> (Array2<f64>, Vec<Array2<f64>>) {
    let view = &state.views[m];
    let k = state.z.mean.ncols();
    let obs = observed_rows(view);
    let tau = tau_mean(view);
    let alpha = alpha_mean(view);
    let zz = z_second_moment(state, &obs);
    let target = view.target();
    let r = target.ncols();

    let mut data_term = Array2::<f64>::zeros((r, k));
    for &n in &obs {
        for c in 0..r {
            for j in 0..k {
                data_term[[c, j]] += target[[n, c]] * state.z.mean[[n, j]];
            }
        }
    }

    let mut mean = Array2::<f64>::zeros((r, k));
    if view.spec.double_ard {
        let gamma = gamma_mean(view);
        let mut covs = Vec::with_capacity(r);
        for row in 0..r {
            let mut prec = Array2::<f64>::zeros((k, k));
            for i in 0..k {
                for j in 0..k {
                    prec[[i, j]] = tau * zz[[i, j]];
                }
                prec[[i, i]] += gamma[row] * alpha[i];
            }
            let cov = gj_invert(&prec);
            for j in 0..k {
                let mut s = 0.0;
                for i in 0..k {
                    s += data_term[[row, i]] * cov[[i, j]];
                }
                mean[[row, j]] = tau * s;
            }
            covs.push(cov);
        }
        (mean, covs)
    } else {
        let mut prec = Array2::<f64>::zeros((k, k));
        for i in 0..k {
            for j in 0..k {
                prec[[i, j]] = tau * zz[[i, j]];
            }
            prec[[i, i]] += alpha[i];
        }
        let cov = gj_invert(&prec);
        for row in 0..r {
            for j in 0..k {
                let mut s = 0.0;
                for i in 0..k {
                    s += data_term[[row, i]] * cov[[i, j]];
                }
                mean[[row, j]] = tau * s;
            }
        }
        (mean, vec![cov])
    }
}

/// Reference alpha update.
pub fn oracle_alpha(state: &ModelState, m: usize) -> (Array1<f64>, Array1<f64>) {
    let view = &state.views[m];
    let k = state.z.mean.ncols();
    let r = view.dual.mean.nrows();
    let a0 = state.hyper.a_alpha;
    let b0 = state.hyper.b_alpha;
    let a = Array1::from_elem(k, r as f64 / 2.0 + a0);
    let mut b = Array1::from_elem(k, b0);
    for kk in 0..k {
        let mut s = 0.0;
        for row in 0..r {
            let diag = match &view.dual.cov {
                DualCov::Shared(c) => c[[kk, kk]],
                DualCov::PerRow(covs) => covs[row][[kk, kk]],
            };
            let sq = view.dual.mean[[row, kk]].powi(2) + diag;
            let weight = if view.spec.double_ard { gamma_mean(view)[row] } else { 1.0 };
            s += weight * sq;
        }
        b[kk] += 0.5 * s;
    }
    (a, b)
}

/// Reference tau update: residual assembled entrywise.
pub fn oracle_tau(state: &ModelState, m: usize) -> (f64, f64) {
    let view = &state.views[m];
    let k = state.z.mean.ncols();
    let obs = observed_rows(view);
    let target = view.target();
    let r = target.ncols();
    let a0 = state.hyper.a_tau;
    let b0 = state.hyper.b_tau;

    let mut resid = 0.0;
    for &n in &obs {
        for c in 0..r {
            resid += target[[n, c]] * target[[n, c]];
            for j in 0..k {
                resid -= 2.0 * target[[n, c]] * view.dual.mean[[c, j]] * state.z.mean[[n, j]];
            }
        }
    }
    let aa = dual_second_moment(view);
    let zz = z_second_moment(state, &obs);
    for i in 0..k {
        for j in 0..k {
            resid += aa[[i, j]] * zz[[i, j]];
        }
    }
    ((r * obs.len()) as f64 / 2.0 + a0, b0 + 0.5 * resid.max(0.0))
}

/// Reference gamma update.
pub fn oracle_gamma(state: &ModelState, m: usize) -> (Array1<f64>, Array1<f64>) {
    let view = &state.views[m];
    let k = state.z.mean.ncols();
    let r = view.dual.mean.nrows();
    let a0 = state.hyper.a_gamma;
    let b0 = state.hyper.b_gamma;
    let alpha = alpha_mean(view);
    let a = Array1::from_elem(r, k as f64 / 2.0 + a0);
    let mut b = Array1::from_elem(r, b0);
    for row in 0..r {
        let mut s = 0.0;
        for kk in 0..k {
            let diag = match &view.dual.cov {
                DualCov::Shared(c) => c[[kk, kk]],
                DualCov::PerRow(covs) => covs[row][[kk, kk]],
            };
            s += alpha[kk] * (view.dual.mean[[row, kk]].powi(2) + diag);
        }
        b[row] += 0.5 * s;
    }
    (a, b)
}
