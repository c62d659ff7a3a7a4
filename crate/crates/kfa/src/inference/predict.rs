//! Semi-supervised prediction from a fitted state: transductive posterior
//! means and inductive out-of-sample projection.

use ndarray::{Array2, Axis};

use crate::error::{KfaError, Result};
use crate::kernels;
use crate::linalg::{sym_inverse_logdet, symmetrize};
use crate::model::{ModelState, Representation, ViewRole, ViewState};

fn output_view<'a>(state: &'a ModelState, name: &str) -> Result<&'a ViewState> {
    let view = state.view_by_name(name)?;
    if view.spec.role != ViewRole::Output {
        return Err(KfaError::InvalidConfig(format!("view '{name}' is not an output view")));
    }
    if view.spec.representation != Representation::Primal {
        return Err(KfaError::InvalidConfig(format!(
            "prediction targets must be primal views, '{name}' is kernelized"
        )));
    }
    Ok(view)
}

/// Posterior-mean reconstruction <Z><W>^T of a primal output view for every
/// row of the training state, including rows whose outputs were masked
/// (the transductive prediction path).
pub fn transductive_predictions(state: &ModelState, target_view: &str) -> Result<Array2<f64>> {
    let view = output_view(state, target_view)?;
    Ok(state.z.mean.dot(&view.dual.mean.t()))
}

/// Inductive prediction for new rows: each input view's new observations are
/// projected to the latent space with the input-only posterior and mapped
/// through the output view's weights.
pub fn predict(
    state: &ModelState,
    new_inputs: &[(String, Array2<f64>)],
    target_view: &str,
) -> Result<Array2<f64>> {
    let out_view = output_view(state, target_view)?;
    let k = state.n_factors();

    let input_views: Vec<usize> = state
        .views
        .iter()
        .enumerate()
        .filter(|(_, v)| v.spec.role == ViewRole::Input)
        .map(|(i, _)| i)
        .collect();

    // input-only latent covariance
    let mut prec = Array2::<f64>::eye(k);
    for &m in &input_views {
        let v = &state.views[m];
        prec = prec + &(v.dual.expected_sq() * v.tau.mean_scalar());
    }
    symmetrize(&mut prec);
    let (cov, _) = sym_inverse_logdet(&prec)?;

    let mut n_new: Option<usize> = None;
    let mut contrib: Option<Array2<f64>> = None;
    for &m in &input_views {
        let view = &state.views[m];
        let data = new_inputs
            .iter()
            .find(|(name, _)| *name == view.spec.name)
            .map(|(_, x)| x)
            .ok_or_else(|| {
                KfaError::InvalidConfig(format!("missing new data for input view '{}'", view.spec.name))
            })?;
        if data.ncols() != view.data.x.ncols() {
            return Err(KfaError::DimensionMismatch(format!(
                "view '{}': new data has {} features, model expects {}",
                view.spec.name,
                data.ncols(),
                view.data.x.ncols()
            )));
        }
        match n_new {
            None => n_new = Some(data.nrows()),
            Some(n) if n != data.nrows() => {
                return Err(KfaError::DimensionMismatch(
                    "new input views disagree on the number of rows".into(),
                ))
            }
            _ => {}
        }

        let target = match view.spec.representation {
            Representation::Primal => data.clone(),
            Representation::Kernelized => {
                let cfg = view.spec.kernel.as_ref().unwrap();
                let raw = kernels::compute_kernel(&data.view(), &view.data.x.view(), cfg)?;
                let centered = match &view.centering {
                    Some(stats) => kernels::center_test_kernel(&raw.view(), stats)?,
                    None => raw,
                };
                centered.select(Axis(1), &view.active_rvs)
            }
        };
        let c = target.dot(&view.dual.mean) * view.tau.mean_scalar();
        contrib = Some(match contrib {
            None => c,
            Some(acc) => acc + c,
        });
    }

    let contrib = contrib.ok_or_else(|| KfaError::InvalidConfig("model has no input views".into()))?;
    let z_star = contrib.dot(&cov);
    Ok(z_star.dot(&out_view.dual.mean.t()))
}

/// Classification wrapper for one-hot output views: argmax over columns.
pub fn argmax_labels(predictions: &Array2<f64>) -> Vec<usize> {
    predictions
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .map(|(i, _)| i)
                .unwrap_or(0)
        })
        .collect()
}
