//! Small dense symmetric linear algebra helpers.
//!
//! The posterior covariances in this model are K x K with K rarely above a
//! few hundred, so a plain Cholesky factorization is all we need. Precision
//! matrices are inverted with jitter escalation before declaring failure.

use ndarray::{Array1, Array2};

use crate::error::{KfaError, Result};

/// Lower-triangular Cholesky factor of a symmetric positive definite matrix.
/// Returns `None` when the matrix is not (numerically) positive definite.
pub fn cholesky(a: &Array2<f64>) -> Option<Array2<f64>> {
    let n = a.nrows();
    if a.ncols() != n {
        return None;
    }
    let mut l = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[[i, j]];
            for k in 0..j {
                s -= l[[i, k]] * l[[j, k]];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[[i, i]] = s.sqrt();
            } else {
                l[[i, j]] = s / l[[j, j]];
            }
        }
    }
    Some(l)
}

/// Inverse from a lower Cholesky factor: (L L^T)^{-1}.
pub fn chol_inverse(l: &Array2<f64>) -> Array2<f64> {
    let n = l.nrows();
    // Invert L by forward substitution, column by column.
    let mut linv = Array2::<f64>::zeros((n, n));
    for j in 0..n {
        linv[[j, j]] = 1.0 / l[[j, j]];
        for i in (j + 1)..n {
            let mut s = 0.0;
            for k in j..i {
                s += l[[i, k]] * linv[[k, j]];
            }
            linv[[i, j]] = -s / l[[i, i]];
        }
    }
    // A^{-1} = L^{-T} L^{-1}
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..=i {
            let mut s = 0.0;
            for k in i..n {
                s += linv[[k, i]] * linv[[k, j]];
            }
            out[[i, j]] = s;
            out[[j, i]] = s;
        }
    }
    out
}

/// Log-determinant from a lower Cholesky factor.
pub fn chol_logdet(l: &Array2<f64>) -> f64 {
    2.0 * l.diag().iter().map(|v| v.ln()).sum::<f64>()
}

/// Invert a symmetric positive definite precision matrix, escalating jitter
/// on the diagonal (1e-10 up to 1e-6 relative to the mean diagonal) before
/// giving up. Returns the inverse and the log-determinant of the *input*.
pub fn sym_inverse_logdet(a: &Array2<f64>) -> Result<(Array2<f64>, f64)> {
    let n = a.nrows();
    if n == 0 {
        return Ok((Array2::zeros((0, 0)), 0.0));
    }
    let scale = a.diag().iter().map(|v| v.abs()).sum::<f64>() / n as f64;
    let scale = if scale > 0.0 && scale.is_finite() { scale } else { 1.0 };
    let mut jitter = 0.0;
    loop {
        let work = if jitter == 0.0 {
            a.clone()
        } else {
            let mut w = a.clone();
            for i in 0..n {
                w[[i, i]] += jitter * scale;
            }
            w
        };
        if let Some(l) = cholesky(&work) {
            return Ok((chol_inverse(&l), chol_logdet(&l)));
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 100.0 };
        if jitter > 1e-6 {
            return Err(KfaError::Numerical(format!(
                "precision matrix not positive definite after jitter escalation (n={n})"
            )));
        }
    }
}

/// Eigenvalues of a symmetric matrix via the cyclic Jacobi method.
/// Used for positive semidefiniteness checks; not performance critical.
pub fn sym_eigenvalues(a: &Array2<f64>) -> Array1<f64> {
    let n = a.nrows();
    let mut m = a.clone();
    for _ in 0..100 {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += m[[i, j]] * m[[i, j]];
            }
        }
        if off.sqrt() < 1e-14 * (1.0 + m.diag().iter().map(|v| v.abs()).fold(0.0, f64::max)) {
            break;
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = m[[p, q]];
                if apq.abs() < 1e-300 {
                    continue;
                }
                let theta = (m[[q, q]] - m[[p, p]]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let mkp = m[[k, p]];
                    let mkq = m[[k, q]];
                    m[[k, p]] = c * mkp - s * mkq;
                    m[[k, q]] = s * mkp + c * mkq;
                }
                for k in 0..n {
                    let mpk = m[[p, k]];
                    let mqk = m[[q, k]];
                    m[[p, k]] = c * mpk - s * mqk;
                    m[[q, k]] = s * mpk + c * mqk;
                }
            }
        }
    }
    m.diag().to_owned()
}

/// Force exact symmetry by averaging with the transpose, in place.
pub fn symmetrize(a: &mut Array2<f64>) {
    let n = a.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let v = 0.5 * (a[[i, j]] + a[[j, i]]);
            a[[i, j]] = v;
            a[[j, i]] = v;
        }
    }
}
