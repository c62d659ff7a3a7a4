//! Mean-field coordinate-ascent engine: per-variable update rules, ELBO
//! evaluation, convergence and restarts, pruning and prediction.

mod elbo;
mod fit;
mod predict;
mod prune;
mod updates;

pub use elbo::compute_elbo;
pub use fit::{fit, fit_threaded, FitConfig};
pub use predict::{argmax_labels, predict, transductive_predictions};
pub use prune::{factor_powers, prune_factors, prune_rvs, retain_rvs, rv_powers};
pub use updates::{update_alpha, update_dual, update_gamma, update_tau, update_z, view_residual};
