//! Kernel matrix construction, centering and the ARD-RBF gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{KfaError, Result};

/// Which kernel function to evaluate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KernelKind {
    Linear,
    Rbf { gamma: f64 },
    Polynomial { degree: u32, coef0: f64 },
    /// RBF with a per-feature relevance weight:
    /// K(x, x') = exp(-sum_d (x_d - x'_d)^2 lambda_d).
    ArdRbf { lambda: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    #[serde(flatten)]
    pub kind: KernelKind,
    #[serde(default = "default_center")]
    pub center: bool,
}

fn default_center() -> bool {
    true
}

impl KernelConfig {
    pub fn validate(&self, n_features: usize) -> Result<()> {
        match &self.kind {
            KernelKind::Linear => Ok(()),
            KernelKind::Rbf { gamma } => {
                if *gamma > 0.0 && gamma.is_finite() {
                    Ok(())
                } else {
                    Err(KfaError::InvalidConfig(format!("rbf gamma must be > 0, got {gamma}")))
                }
            }
            KernelKind::Polynomial { degree, .. } => {
                if *degree >= 1 {
                    Ok(())
                } else {
                    Err(KfaError::InvalidConfig("polynomial degree must be >= 1".into()))
                }
            }
            KernelKind::ArdRbf { lambda } => {
                if lambda.len() != n_features {
                    return Err(KfaError::InvalidConfig(format!(
                        "ard_rbf lambda has {} entries, data has {} features",
                        lambda.len(),
                        n_features
                    )));
                }
                if lambda.iter().any(|l| *l < 0.0 || !l.is_finite()) {
                    return Err(KfaError::InvalidConfig("ard_rbf lambda must be non-negative".into()));
                }
                Ok(())
            }
        }
    }
}

/// Training-kernel centering statistics, kept so that test kernels can be
/// centered consistently with the training kernel.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CenteringStats {
    pub train_row_means: Vec<f64>,
    pub train_grand_mean: f64,
}

fn check_finite(x: &ArrayView2<f64>, what: &str) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(KfaError::InvalidConfig(format!("non-finite values in {what}")));
    }
    Ok(())
}

fn sq_dist(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Compute the kernel matrix between two row sets: entry (i, j) = K(a_i, b_j).
pub fn compute_kernel(
    rows_a: &ArrayView2<f64>,
    rows_b: &ArrayView2<f64>,
    config: &KernelConfig,
) -> Result<Array2<f64>> {
    if rows_a.ncols() != rows_b.ncols() {
        return Err(KfaError::DimensionMismatch(format!(
            "kernel inputs have {} vs {} features",
            rows_a.ncols(),
            rows_b.ncols()
        )));
    }
    check_finite(rows_a, "kernel input A")?;
    check_finite(rows_b, "kernel input B")?;
    config.validate(rows_a.ncols())?;

    let (na, nb) = (rows_a.nrows(), rows_b.nrows());
    let mut k = Array2::<f64>::zeros((na, nb));
    match &config.kind {
        KernelKind::Linear => {
            k = rows_a.dot(&rows_b.t());
        }
        KernelKind::Rbf { gamma } => {
            for i in 0..na {
                for j in 0..nb {
                    k[[i, j]] = (-gamma * sq_dist(rows_a.row(i), rows_b.row(j))).exp();
                }
            }
        }
        KernelKind::Polynomial { degree, coef0 } => {
            let dots = rows_a.dot(&rows_b.t());
            for i in 0..na {
                for j in 0..nb {
                    k[[i, j]] = (dots[[i, j]] + coef0).powi(*degree as i32);
                }
            }
        }
        KernelKind::ArdRbf { lambda } => {
            for i in 0..na {
                for j in 0..nb {
                    let mut s = 0.0;
                    for (d, l) in lambda.iter().enumerate() {
                        let diff = rows_a[[i, d]] - rows_b[[j, d]];
                        s += diff * diff * l;
                    }
                    k[[i, j]] = (-s).exp();
                }
            }
        }
    }
    Ok(k)
}

/// Center a square training kernel: K - 1 m^T - m 1^T + g 1 1^T, where m is
/// the row-mean vector and g the grand mean. Row sums of the result are 0.
pub fn center_kernel(k_train: &ArrayView2<f64>) -> Result<(Array2<f64>, CenteringStats)> {
    let n = k_train.nrows();
    if k_train.ncols() != n {
        return Err(KfaError::DimensionMismatch(format!(
            "center_kernel expects a square matrix, got {}x{}",
            n,
            k_train.ncols()
        )));
    }
    let row_means: Vec<f64> = (0..n).map(|i| k_train.row(i).mean().unwrap()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = k_train[[i, j]] - row_means[i] - row_means[j] + grand;
        }
    }
    Ok((
        out,
        CenteringStats {
            train_row_means: row_means,
            train_grand_mean: grand,
        },
    ))
}

/// Center test-kernel rows using the *training* statistics:
/// K_t(i,j) - mean_j' K_t(i,j') - m_j + g.
pub fn center_test_kernel(k_test: &ArrayView2<f64>, stats: &CenteringStats) -> Result<Array2<f64>> {
    let n = stats.train_row_means.len();
    if k_test.ncols() != n {
        return Err(KfaError::DimensionMismatch(format!(
            "test kernel has {} columns, training stats expect {}",
            k_test.ncols(),
            n
        )));
    }
    let mut out = Array2::<f64>::zeros(k_test.raw_dim());
    for i in 0..k_test.nrows() {
        let row_mean = k_test.row(i).mean().unwrap();
        for j in 0..n {
            out[[i, j]] =
                k_test[[i, j]] - row_mean - stats.train_row_means[j] + stats.train_grand_mean;
        }
    }
    Ok(out)
}

/// Apply the centering map C(K) = H K H (H = I - J/N) to an arbitrary square
/// matrix. C is self-adjoint in the Frobenius inner product, so this also
/// serves as the adjoint when chaining gradients through centering.
pub fn centering_map(w: &ArrayView2<f64>) -> Array2<f64> {
    let n = w.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| w.row(i).mean().unwrap()).collect();
    let col_means: Vec<f64> = (0..n).map(|j| w.column(j).mean().unwrap()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    let mut out = Array2::<f64>::zeros((n, n));
    for i in 0..n {
        for j in 0..n {
            out[[i, j]] = w[[i, j]] - row_means[i] - col_means[j] + grand;
        }
    }
    out
}

/// Contraction of the ARD-RBF kernel gradient against a weight matrix:
/// G_d = sum_{n,u} W_{n,u} * dK_{n,u}/dlambda_d, with
/// dK(x_n, x_u)/dlambda_d = -(x_{n,d} - x_{u,d})^2 K(x_n, x_u).
/// Avoids materializing the N x N x D tensor.
pub fn ard_rbf_gradient_contract(
    rows: &ArrayView2<f64>,
    lambda: &[f64],
    weights: &ArrayView2<f64>,
) -> Result<Array1<f64>> {
    let n = rows.nrows();
    let d = rows.ncols();
    if lambda.len() != d {
        return Err(KfaError::DimensionMismatch(format!(
            "lambda has {} entries, data has {} features",
            lambda.len(),
            d
        )));
    }
    if lambda.iter().any(|l| *l < 0.0) {
        return Err(KfaError::InvalidConfig("ard_rbf lambda must be non-negative".into()));
    }
    if weights.nrows() != n || weights.ncols() != n {
        return Err(KfaError::DimensionMismatch(format!(
            "weight matrix must be {n}x{n}, got {}x{}",
            weights.nrows(),
            weights.ncols()
        )));
    }
    let mut grad = Array1::<f64>::zeros(d);
    for i in 0..n {
        for j in 0..n {
            let w = weights[[i, j]];
            if w == 0.0 {
                continue;
            }
            let mut s = 0.0;
            for (dd, l) in lambda.iter().enumerate() {
                let diff = rows[[i, dd]] - rows[[j, dd]];
                s += diff * diff * l;
            }
            let kval = (-s).exp();
            for dd in 0..d {
                let diff = rows[[i, dd]] - rows[[j, dd]];
                grad[dd] -= w * diff * diff * kval;
            }
        }
    }
    Ok(grad)
}

/// Median-heuristic RBF width: 1 / (D * median pairwise squared distance).
pub fn median_heuristic_gamma(rows: &ArrayView2<f64>) -> f64 {
    let n = rows.nrows();
    let d = rows.ncols().max(1);
    let mut dists = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            dists.push(sq_dist(rows.row(i), rows.row(j)));
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let med = dists[dists.len() / 2];
    if med > 0.0 {
        1.0 / (d as f64 * med)
    } else {
        1.0
    }
}
