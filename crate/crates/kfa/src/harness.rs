//! Evaluation machinery: CSV ingestion, cross-validation, metrics, RV budget
//! sweeps and the manual kernel-mixing baseline.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{KfaError, Result};
use crate::inference::{fit_threaded, predict, retain_rvs, update_z, FitConfig};
use crate::kernels::KernelConfig;
use crate::model::{Hyperparams, ModelState, Representation, ViewData, ViewRole, ViewSpec};
use crate::relevance::LambdaOptConfig;

#[derive(Debug, Clone)]
pub struct Dataset {
    pub name: String,
    pub x: Array2<f64>,
    pub y: Array2<f64>,
    pub feature_names: Vec<String>,
    pub target_names: Vec<String>,
    pub rejected_rows: usize,
}

impl Dataset {
    pub fn new(name: &str, x: Array2<f64>, y: Array2<f64>) -> Result<Self> {
        let d = Dataset {
            name: name.into(),
            feature_names: (0..x.ncols()).map(|i| format!("x{i}")).collect(),
            target_names: (0..y.ncols()).map(|i| format!("y{i}")).collect(),
            x,
            y,
            rejected_rows: 0,
        };
        d.validate()?;
        Ok(d)
    }

    fn validate(&self) -> Result<()> {
        if self.x.nrows() != self.y.nrows() {
            return Err(KfaError::DimensionMismatch(format!(
                "dataset '{}': {} feature rows vs {} target rows",
                self.name,
                self.x.nrows(),
                self.y.nrows()
            )));
        }
        if self.x.nrows() < 10 {
            return Err(KfaError::InvalidConfig(format!(
                "dataset '{}' has {} rows, need at least 10",
                self.name,
                self.x.nrows()
            )));
        }
        if self.x.iter().chain(self.y.iter()).any(|v| !v.is_finite()) {
            return Err(KfaError::InvalidConfig(format!(
                "dataset '{}' contains non-finite values after ingestion",
                self.name
            )));
        }
        Ok(())
    }

    /// Read a headered numeric CSV, splitting columns into features and the
    /// named targets. Rows containing NaNs or unparseable cells are dropped
    /// and counted in `rejected_rows`.
    pub fn from_csv(path: &Path, name: &str, target_names: &[String]) -> Result<Self> {
        let mut reader = csv::Reader::from_path(path)?;
        let header: Vec<String> = reader
            .headers()?
            .iter()
            .map(|h| h.trim().to_string())
            .collect();
        for t in target_names {
            if !header.contains(t) {
                return Err(KfaError::InvalidConfig(format!(
                    "target column '{t}' not found in {}",
                    path.display()
                )));
            }
        }
        let target_idx: Vec<usize> = header
            .iter()
            .enumerate()
            .filter(|(_, h)| target_names.contains(h))
            .map(|(i, _)| i)
            .collect();
        let feature_idx: Vec<usize> = (0..header.len()).filter(|i| !target_idx.contains(i)).collect();

        let mut x_rows: Vec<f64> = Vec::new();
        let mut y_rows: Vec<f64> = Vec::new();
        let mut n = 0usize;
        let mut rejected = 0usize;
        for record in reader.records() {
            let record = record?;
            let parsed: Option<Vec<f64>> = record
                .iter()
                .map(|c| c.trim().parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            match parsed {
                Some(vals) if vals.len() == header.len() => {
                    x_rows.extend(feature_idx.iter().map(|&i| vals[i]));
                    y_rows.extend(target_idx.iter().map(|&i| vals[i]));
                    n += 1;
                }
                _ => rejected += 1,
            }
        }
        if rejected > 0 {
            log::warn!("{}: rejected {rejected} rows with missing or non-numeric cells", path.display());
        }
        let x = Array2::from_shape_vec((n, feature_idx.len()), x_rows)
            .map_err(|e| KfaError::InvalidConfig(e.to_string()))?;
        let y = Array2::from_shape_vec((n, target_idx.len()), y_rows)
            .map_err(|e| KfaError::InvalidConfig(e.to_string()))?;
        let ds = Dataset {
            name: name.into(),
            feature_names: feature_idx.iter().map(|&i| header[i].clone()).collect(),
            target_names: target_idx.iter().map(|&i| header[i].clone()).collect(),
            x,
            y,
            rejected_rows: rejected,
        };
        ds.validate()?;
        Ok(ds)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CVPlan {
    #[serde(default = "default_outer_folds")]
    pub outer_folds: usize,
    #[serde(default = "default_inner_folds")]
    pub inner_folds: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub standardize: bool,
}

fn default_outer_folds() -> usize {
    10
}
fn default_inner_folds() -> usize {
    5
}
fn default_true() -> bool {
    true
}

impl Default for CVPlan {
    fn default() -> Self {
        CVPlan { outer_folds: 10, inner_folds: 5, seed: 0, standardize: true }
    }
}

impl CVPlan {
    pub fn validate(&self) -> Result<()> {
        if self.outer_folds < 2 || self.inner_folds < 2 {
            return Err(KfaError::InvalidConfig("fold counts must be >= 2".into()));
        }
        Ok(())
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Deterministic fold id per row: hash(row, seed) mod folds.
pub fn fold_assignments(n: usize, folds: usize, seed: u64) -> Vec<usize> {
    (0..n)
        .map(|row| (splitmix64((row as u64).wrapping_add(splitmix64(seed))) % folds as u64) as usize)
        .collect()
}

/// Column-wise z-score statistics, computed on the training split only.
#[derive(Debug, Clone)]
pub struct Standardizer {
    pub mean: Array1<f64>,
    pub std: Array1<f64>,
}

impl Standardizer {
    pub fn fit(x: &ArrayView2<f64>) -> Self {
        let mean = x.mean_axis(Axis(0)).unwrap();
        let std = x
            .axis_iter(Axis(1))
            .zip(mean.iter())
            .map(|(col, &m)| {
                let v = col.iter().map(|x| (x - m).powi(2)).sum::<f64>() / col.len() as f64;
                let s = v.sqrt();
                if s > 0.0 {
                    s
                } else {
                    1.0
                }
            })
            .collect();
        Standardizer { mean, std }
    }

    pub fn transform(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.std[j];
            }
        }
        out
    }

    pub fn inverse(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = x.to_owned();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * self.std[j] + self.mean[j];
            }
        }
        out
    }
}

/// Coefficient of determination, averaged uniformly over target columns.
/// Zero-variance target columns are excluded with a warning.
pub fn r2_score(y_true: &ArrayView2<f64>, y_pred: &ArrayView2<f64>) -> Result<f64> {
    if y_true.dim() != y_pred.dim() {
        return Err(KfaError::DimensionMismatch(format!(
            "r2_score: {:?} vs {:?}",
            y_true.dim(),
            y_pred.dim()
        )));
    }
    let mut scores = Vec::new();
    for (c, (t, p)) in y_true
        .axis_iter(Axis(1))
        .zip(y_pred.axis_iter(Axis(1)))
        .enumerate()
    {
        let mean = t.mean().unwrap();
        let ss_tot: f64 = t.iter().map(|v| (v - mean).powi(2)).sum();
        if ss_tot == 0.0 {
            log::warn!("r2_score: target column {c} has zero variance, excluded");
            continue;
        }
        let ss_res: f64 = t.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum();
        scores.push(1.0 - ss_res / ss_tot);
    }
    if scores.is_empty() {
        return Err(KfaError::InvalidConfig("r2_score: all target columns have zero variance".into()));
    }
    Ok(scores.iter().sum::<f64>() / scores.len() as f64)
}

fn binary_auc(positive: &[bool], scores: &[f64]) -> f64 {
    let n = scores.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scores[a].partial_cmp(&scores[b]).unwrap());
    // average ranks over tied score groups
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = avg;
        }
        i = j + 1;
    }
    let n_pos = positive.iter().filter(|&&p| p).count();
    let n_neg = n - n_pos;
    let rank_sum: f64 = (0..n).filter(|&i| positive[i]).map(|i| ranks[i]).sum();
    (rank_sum - (n_pos * (n_pos + 1)) as f64 / 2.0) / (n_pos * n_neg) as f64
}

/// One-vs-rest AUC per class via the rank statistic, unweighted mean over
/// classes present in the labels; absent classes are excluded with a warning.
pub fn macro_auc(labels: &[usize], scores: &ArrayView2<f64>) -> Result<f64> {
    if labels.len() != scores.nrows() {
        return Err(KfaError::DimensionMismatch(format!(
            "macro_auc: {} labels vs {} score rows",
            labels.len(),
            scores.nrows()
        )));
    }
    let mut aucs = Vec::new();
    for c in 0..scores.ncols() {
        let positive: Vec<bool> = labels.iter().map(|&l| l == c).collect();
        let n_pos = positive.iter().filter(|&&p| p).count();
        if n_pos == 0 || n_pos == labels.len() {
            log::warn!("macro_auc: class {c} absent from labels (or degenerate), excluded");
            continue;
        }
        let col: Vec<f64> = scores.column(c).to_vec();
        aucs.push(binary_auc(&positive, &col));
    }
    if aucs.is_empty() {
        return Err(KfaError::InvalidConfig("macro_auc: no scorable classes".into()));
    }
    Ok(aucs.iter().sum::<f64>() / aucs.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    R2,
    MacroAuc,
}

/// A fold-level fitted model: the cross-validation loop only needs
/// predictions plus the compactness statistics reported in the tables.
pub trait FittedModel {
    fn predict(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>>;
    fn n_factors(&self) -> usize {
        0
    }
    fn rv_percent(&self) -> f64 {
        100.0
    }
}

pub type ModelFactory<'a> =
    dyn Fn(&ArrayView2<f64>, &ArrayView2<f64>, u64) -> Result<Box<dyn FittedModel>> + 'a;

#[derive(Debug, Clone, Serialize)]
pub struct CvReport {
    pub dataset: String,
    pub metric: Metric,
    pub per_fold: Vec<f64>,
    pub mean: f64,
    pub std: f64,
    pub factors: Vec<usize>,
    pub rv_percent: Vec<f64>,
    pub failed_folds: usize,
}

/// Outer cross-validation loop. Standardization statistics come from the
/// training split only; the factory sees standardized data and predictions
/// are mapped back before scoring. Fold failures are recorded and skipped.
pub fn run_cv(
    dataset: &Dataset,
    plan: &CVPlan,
    metric: Metric,
    factory: &ModelFactory,
) -> Result<CvReport> {
    plan.validate()?;
    let n = dataset.x.nrows();
    let assignment = fold_assignments(n, plan.outer_folds, plan.seed);
    let mut per_fold = Vec::new();
    let mut factors = Vec::new();
    let mut rv_percent = Vec::new();
    let mut failed = 0usize;

    for fold in 0..plan.outer_folds {
        let train_rows: Vec<usize> = (0..n).filter(|r| assignment[*r] != fold).collect();
        let test_rows: Vec<usize> = (0..n).filter(|r| assignment[*r] == fold).collect();
        if test_rows.is_empty() || train_rows.is_empty() {
            continue;
        }
        let train_x = dataset.x.select(Axis(0), &train_rows);
        let train_y = dataset.y.select(Axis(0), &train_rows);
        let test_x = dataset.x.select(Axis(0), &test_rows);
        let test_y = dataset.y.select(Axis(0), &test_rows);

        let result = (|| -> Result<(f64, Box<dyn FittedModel>)> {
            let (tx, ty, te, y_std) = if plan.standardize {
                let sx = Standardizer::fit(&train_x.view());
                let sy = Standardizer::fit(&train_y.view());
                (
                    sx.transform(&train_x.view()),
                    sy.transform(&train_y.view()),
                    sx.transform(&test_x.view()),
                    Some(sy),
                )
            } else {
                (train_x.clone(), train_y.clone(), test_x.clone(), None)
            };
            let model = factory(&tx.view(), &ty.view(), plan.seed.wrapping_add(fold as u64))?;
            let raw_pred = model.predict(&te.view())?;
            let pred = match &y_std {
                Some(sy) => sy.inverse(&raw_pred.view()),
                None => raw_pred,
            };
            let score = match metric {
                Metric::R2 => r2_score(&test_y.view(), &pred.view())?,
                Metric::MacroAuc => {
                    let labels: Vec<usize> = crate::inference::argmax_labels(&test_y);
                    macro_auc(&labels, &pred.view())?
                }
            };
            Ok((score, model))
        })();

        match result {
            Ok((score, model)) => {
                per_fold.push(score);
                factors.push(model.n_factors());
                rv_percent.push(model.rv_percent());
            }
            Err(e) => {
                log::warn!("fold {fold} failed: {e}");
                failed += 1;
            }
        }
    }

    if per_fold.is_empty() {
        return Err(KfaError::Numerical("all cross-validation folds failed".into()));
    }
    let mean = per_fold.iter().sum::<f64>() / per_fold.len() as f64;
    let var = per_fold.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / per_fold.len() as f64;
    Ok(CvReport {
        dataset: dataset.name.clone(),
        metric,
        per_fold,
        mean,
        std: var.sqrt(),
        factors,
        rv_percent,
        failed_folds: failed,
    })
}

/// Configuration for the built-in two-view model used by the CV and sweep
/// commands: one input view over the features, one primal output view over
/// the targets.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KsshibaCvConfig {
    pub kernel: Option<KernelConfig>,
    #[serde(default)]
    pub double_ard: bool,
    #[serde(default)]
    pub learn_lambda: bool,
    #[serde(default)]
    pub hyper: Hyperparams,
    #[serde(default)]
    pub fit: FitConfig,
    #[serde(default)]
    pub lambda_opt: Option<LambdaOptConfig>,
    #[serde(default = "default_one")]
    pub threads: usize,
}

fn default_one() -> usize {
    1
}

impl KsshibaCvConfig {
    pub fn views(&self, x: Array2<f64>, y: Array2<f64>) -> Vec<(ViewSpec, ViewData)> {
        let representation = if self.kernel.is_some() {
            Representation::Kernelized
        } else {
            Representation::Primal
        };
        vec![
            (
                ViewSpec {
                    name: "x".into(),
                    role: ViewRole::Input,
                    representation,
                    kernel: self.kernel.clone(),
                    double_ard: self.double_ard,
                    learn_lambda: self.learn_lambda,
                },
                ViewData::fully_observed(x),
            ),
            (
                ViewSpec {
                    name: "y".into(),
                    role: ViewRole::Output,
                    representation: Representation::Primal,
                    kernel: None,
                    double_ard: false,
                    learn_lambda: false,
                },
                ViewData::fully_observed(y),
            ),
        ]
    }

    pub fn fit_state(&self, x: &ArrayView2<f64>, y: &ArrayView2<f64>, seed: u64) -> Result<ModelState> {
        let mut hyper = self.hyper.clone();
        // small CV folds cannot support more factors than rows
        hyper.k_init = hyper.k_init.min(x.nrows().max(1));
        fit_threaded(
            &self.views(x.to_owned(), y.to_owned()),
            &hyper,
            &self.fit,
            self.lambda_opt.as_ref(),
            seed,
            self.threads,
        )
    }
}

pub struct KsshibaModel {
    pub state: ModelState,
}

impl FittedModel for KsshibaModel {
    fn predict(&self, x: &ArrayView2<f64>) -> Result<Array2<f64>> {
        predict(&self.state, &[("x".to_string(), x.to_owned())], "y")
    }

    fn n_factors(&self) -> usize {
        self.state.n_factors()
    }

    fn rv_percent(&self) -> f64 {
        let kernelized: Vec<&_> = self.state.views.iter().filter(|v| v.is_kernelized()).collect();
        if kernelized.is_empty() {
            return 100.0;
        }
        let total: f64 = kernelized
            .iter()
            .map(|v| 100.0 * v.active_rvs.len() as f64 / v.data.x.nrows() as f64)
            .sum();
        total / kernelized.len() as f64
    }
}

/// Factory adapter for [`run_cv`] over the built-in two-view model.
pub fn ksshiba_factory(cfg: KsshibaCvConfig) -> impl Fn(&ArrayView2<f64>, &ArrayView2<f64>, u64) -> Result<Box<dyn FittedModel>> {
    move |x, y, seed| {
        let state = cfg.fit_state(x, y, seed)?;
        Ok(Box::new(KsshibaModel { state }) as Box<dyn FittedModel>)
    }
}

/// Cap a fitted double-ARD view to the given RV budget, keeping the rows
/// with the largest expected relevance <gamma>^-1, then refresh q(Z) once so
/// the latent posterior is consistent with the reduced kernel.
pub fn cap_rv_budget(state: &mut ModelState, view_idx: usize, budget: usize) -> Result<()> {
    let n = state.views[view_idx].dual.n_rows();
    if budget < 1 {
        return Err(KfaError::InvalidConfig("RV budget must be at least 1".into()));
    }
    if budget < n {
        let gamma = state.views[view_idx]
            .gamma
            .as_ref()
            .ok_or_else(|| KfaError::InvalidConfig("RV budget requires a double-ARD view".into()))?
            .mean();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| gamma[a].partial_cmp(&gamma[b]).unwrap());
        let mut keep: Vec<usize> = order[..budget].to_vec();
        keep.sort_unstable();
        retain_rvs(state, view_idx, &keep);
        state.z = update_z(state)?;
    }
    Ok(())
}

/// Fig. 4-style sweep: for each RV percentage budget, fit a double-ARD
/// kernelized model per fold, cap the budget, and record the mean held-out
/// R2. Returns (percentage, mean R2) pairs in input order.
pub fn rv_sweep(
    dataset: &Dataset,
    percentages: &[f64],
    plan: &CVPlan,
    cfg: &KsshibaCvConfig,
) -> Result<Vec<(f64, f64)>> {
    plan.validate()?;
    if !cfg.double_ard || cfg.kernel.is_none() {
        return Err(KfaError::InvalidConfig("rv_sweep requires a double-ARD kernelized view".into()));
    }
    for &p in percentages {
        if !(p > 0.0 && p <= 100.0) {
            return Err(KfaError::InvalidConfig(format!("RV percentage {p} outside (0, 100]")));
        }
    }
    let n = dataset.x.nrows();
    let assignment = fold_assignments(n, plan.outer_folds, plan.seed);

    let mut curve = Vec::with_capacity(percentages.len());
    for &pct in percentages {
        let mut scores = Vec::new();
        for fold in 0..plan.outer_folds {
            let train_rows: Vec<usize> = (0..n).filter(|r| assignment[*r] != fold).collect();
            let test_rows: Vec<usize> = (0..n).filter(|r| assignment[*r] == fold).collect();
            if test_rows.is_empty() || train_rows.is_empty() {
                continue;
            }
            let train_x = dataset.x.select(Axis(0), &train_rows);
            let train_y = dataset.y.select(Axis(0), &train_rows);
            let test_x = dataset.x.select(Axis(0), &test_rows);
            let test_y = dataset.y.select(Axis(0), &test_rows);

            let (tx, ty, te, y_std) = if plan.standardize {
                let sx = Standardizer::fit(&train_x.view());
                let sy = Standardizer::fit(&train_y.view());
                (
                    sx.transform(&train_x.view()),
                    sy.transform(&train_y.view()),
                    sx.transform(&test_x.view()),
                    Some(sy),
                )
            } else {
                (train_x, train_y, test_x, None)
            };

            let mut state = cfg.fit_state(&tx.view(), &ty.view(), plan.seed.wrapping_add(fold as u64))?;
            let budget = ((pct / 100.0) * tx.nrows() as f64).floor() as usize;
            let view_idx = state
                .views
                .iter()
                .position(|v| v.spec.name == "x")
                .expect("input view present");
            let current = state.views[view_idx].dual.n_rows();
            if budget < current {
                cap_rv_budget(&mut state, view_idx, budget)?;
            }
            let raw_pred = predict(&state, &[("x".to_string(), te)], "y")?;
            let pred = match &y_std {
                Some(sy) => sy.inverse(&raw_pred.view()),
                None => raw_pred,
            };
            scores.push(r2_score(&test_y.view(), &pred.view())?);
        }
        if scores.is_empty() {
            return Err(KfaError::Numerical("rv_sweep: no scorable folds".into()));
        }
        curve.push((pct, scores.iter().sum::<f64>() / scores.len() as f64));
    }
    Ok(curve)
}

/// Manual two-kernel mixing baseline: mu*K1 + (1-mu)*K2.
pub fn mix_kernels(k1: &ArrayView2<f64>, k2: &ArrayView2<f64>, mu: f64) -> Result<Array2<f64>> {
    if k1.dim() != k2.dim() {
        return Err(KfaError::DimensionMismatch(format!(
            "mix_kernels: {:?} vs {:?}",
            k1.dim(),
            k2.dim()
        )));
    }
    if !(0.0..=1.0).contains(&mu) {
        return Err(KfaError::InvalidConfig(format!("mixing coefficient {mu} outside [0, 1]")));
    }
    Ok(k1.to_owned() * mu + &(k2.to_owned() * (1.0 - mu)))
}

/// Inner-CV width grid for rbf kernels: 20 log-spaced values spanning
/// [1e-8, 10^0.5], scaled by the number of target tasks.
pub fn gamma_grid(n_targets: usize) -> Vec<f64> {
    let c = n_targets.max(1) as f64;
    let (lo, hi) = (-8.0_f64, 0.5_f64);
    (0..20)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / 19.0) / c)
        .collect()
}
