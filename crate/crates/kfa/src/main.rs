use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ndarray::{Array2, ArrayView2};
use serde::Deserialize;

use kfa::checkpoint;
use kfa::error::{KfaError, Result};
use kfa::harness::{
    ksshiba_factory, rv_sweep, CVPlan, Dataset, KsshibaCvConfig, Metric,
};
use kfa::inference::{argmax_labels, fit_threaded, predict, FitConfig};
use kfa::kernels::KernelKind;
use kfa::model::{Hyperparams, ModelState, Representation, ViewData, ViewRole, ViewSpec};
use kfa::relevance::{select_features, write_lambda_csv, write_relevance_pgm, LambdaOptConfig};

#[derive(Parser)]
#[command(name = "kfa", about = "Multi-view Bayesian factor analysis with kernelized observations")]
struct Cli {
    /// Path to a JSON run configuration
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the output directory
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for restarts (0 = auto); falls back to KFA_THREADS
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a model from a run configuration and write a checkpoint
    Fit,
    /// Predict a target view from a checkpoint and new input data
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        /// New input data: PATH for a single input view, or NAME=PATH per view
        #[arg(long, required = true)]
        data: Vec<String>,
        /// Output view to predict (defaults to the only output view)
        #[arg(long)]
        target: Option<String>,
        /// Append an argmax label column (classification outputs)
        #[arg(long)]
        labels: bool,
    },
    /// Cross-validated evaluation, writing a JSON report
    Cv,
    /// Export learned per-feature kernel relevances from a checkpoint
    Relevance {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Optional HxW shape to also emit a PGM relevance mask
        #[arg(long, value_name = "HxW")]
        image_shape: Option<String>,
        /// Relative relevance threshold for the selection column
        #[arg(long, default_value_t = 0.1)]
        threshold: f64,
    },
    /// Fit across relevance-vector budgets and write the R2 curve
    RvSweep,
}

#[derive(Debug, Deserialize)]
struct ViewEntry {
    #[serde(flatten)]
    spec: ViewSpec,
    data: PathBuf,
    /// optional single-column 0/1 CSV marking which rows are observed
    #[serde(default)]
    observed: Option<PathBuf>,
}

#[derive(Debug, Deserialize)]
struct RunConfig {
    views: Vec<ViewEntry>,
    #[serde(default)]
    hyper: Hyperparams,
    #[serde(default)]
    fit: FitConfig,
    #[serde(default)]
    lambda_opt: Option<LambdaOptConfig>,
    #[serde(default)]
    cv: Option<CVPlan>,
    #[serde(default)]
    percentages: Option<Vec<f64>>,
    #[serde(default)]
    metric: Option<Metric>,
    #[serde(default = "default_output_dir")]
    output_dir: PathBuf,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    threads: Option<usize>,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from(".")
}

fn read_matrix_csv(path: &Path) -> Result<(Vec<String>, Array2<f64>)> {
    let mut reader = csv::Reader::from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let mut data = Vec::new();
    let mut n = 0usize;
    for record in reader.records() {
        let record = record?;
        for cell in record.iter() {
            let v: f64 = cell.trim().parse().map_err(|_| {
                KfaError::InvalidConfig(format!("{}: non-numeric cell '{cell}'", path.display()))
            })?;
            data.push(v);
        }
        n += 1;
    }
    let m = Array2::from_shape_vec((n, header.len()), data)
        .map_err(|e| KfaError::InvalidConfig(format!("{}: {e}", path.display())))?;
    Ok((header, m))
}

fn write_matrix_csv(path: &Path, header: &[String], m: &ArrayView2<f64>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in m.rows() {
        w.write_record(row.iter().map(|v| format!("{v}")))?;
    }
    w.flush()?;
    Ok(())
}

fn read_mask(path: &Path, n: usize) -> Result<Vec<bool>> {
    let (_, m) = read_matrix_csv(path)?;
    if m.ncols() != 1 || m.nrows() != n {
        return Err(KfaError::InvalidConfig(format!(
            "{}: observation mask must be a single column with {n} rows",
            path.display()
        )));
    }
    Ok(m.column(0).iter().map(|v| *v != 0.0).collect())
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| KfaError::InvalidConfig("--config is required for this command".into()))?;
    let text = std::fs::read_to_string(path)?;
    let mut cfg: RunConfig = serde_json::from_str(&text)?;
    if cfg.views.is_empty() {
        return Err(KfaError::InvalidConfig("config declares no views".into()));
    }
    for v in &cfg.views {
        v.spec.validate()?;
        if !v.data.exists() {
            return Err(KfaError::InvalidConfig(format!(
                "data path {} does not exist",
                v.data.display()
            )));
        }
    }
    cfg.hyper.validate()?;
    cfg.fit.validate()?;
    if let Some(l) = &cfg.lambda_opt {
        l.validate()?;
    }
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.output_dir = o.clone();
    }
    Ok(cfg)
}

fn resolve_threads(cli: &Cli, cfg: Option<&RunConfig>) -> usize {
    let raw = cli
        .threads
        .or_else(|| std::env::var("KFA_THREADS").ok().and_then(|v| v.parse().ok()))
        .or_else(|| cfg.and_then(|c| c.threads))
        .unwrap_or(1);
    if raw == 0 {
        std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
    } else {
        raw
    }
}

fn load_views(cfg: &RunConfig) -> Result<Vec<(ViewSpec, ViewData)>> {
    let mut views = Vec::new();
    for entry in &cfg.views {
        let (_, x) = read_matrix_csv(&entry.data)?;
        let observed = match &entry.observed {
            Some(p) => read_mask(p, x.nrows())?,
            None => vec![true; x.nrows()],
        };
        views.push((entry.spec.clone(), ViewData { x, observed }));
    }
    Ok(views)
}

fn effective_hyper(cfg: &RunConfig, views: &[(ViewSpec, ViewData)]) -> Hyperparams {
    let n = views.first().map(|(_, d)| d.x.nrows()).unwrap_or(1);
    let dims: usize = views
        .iter()
        .map(|(s, d)| match s.representation {
            Representation::Primal => d.x.ncols(),
            Representation::Kernelized => d.x.nrows(),
        })
        .sum();
    let mut hyper = cfg.hyper.clone();
    hyper.k_init = hyper.k_init.min(Hyperparams::default_k_init(n, dims));
    hyper
}

fn single_output_view(cfg: &RunConfig) -> Result<&ViewEntry> {
    let outputs: Vec<&ViewEntry> = cfg
        .views
        .iter()
        .filter(|v| v.spec.role == ViewRole::Output)
        .collect();
    if outputs.len() != 1 {
        return Err(KfaError::InvalidConfig(format!(
            "this command needs exactly one output view, found {}",
            outputs.len()
        )));
    }
    Ok(outputs[0])
}

fn cmd_fit(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let threads = resolve_threads(cli, Some(&cfg));
    let views = load_views(&cfg)?;
    let hyper = effective_hyper(&cfg, &views);
    let state = fit_threaded(&views, &hyper, &cfg.fit, cfg.lambda_opt.as_ref(), cfg.seed, threads)?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    checkpoint::save(&state, &cfg.output_dir.join("model.kfa"))?;
    let mut w = csv::Writer::from_path(cfg.output_dir.join("elbo_trace.csv"))?;
    w.write_record(["sweep", "elbo"])?;
    for (i, e) in state.elbo_history.iter().enumerate() {
        w.write_record([i.to_string(), format!("{e}")])?;
    }
    w.flush()?;
    log::info!(
        "fit complete: {} sweeps, final elbo {:.6}, {} active factors",
        state.elbo_history.len(),
        state.elbo_history.last().unwrap(),
        state.n_factors()
    );
    Ok(())
}

fn parse_new_data(state: &ModelState, data: &[String]) -> Result<Vec<(String, Array2<f64>)>> {
    let input_names: Vec<String> = state
        .views
        .iter()
        .filter(|v| v.spec.role == ViewRole::Input)
        .map(|v| v.spec.name.clone())
        .collect();
    let mut out = Vec::new();
    for d in data {
        if let Some((name, path)) = d.split_once('=') {
            let (_, m) = read_matrix_csv(Path::new(path))?;
            out.push((name.to_string(), m));
        } else if input_names.len() == 1 {
            let (_, m) = read_matrix_csv(Path::new(d))?;
            out.push((input_names[0].clone(), m));
        } else {
            return Err(KfaError::InvalidConfig(
                "multiple input views: pass --data NAME=PATH per view".into(),
            ));
        }
    }
    Ok(out)
}

fn cmd_predict(
    cli: &Cli,
    checkpoint_path: &Path,
    data: &[String],
    target: Option<&str>,
    labels: bool,
) -> Result<()> {
    let state = checkpoint::load(checkpoint_path)?;
    let target = match target {
        Some(t) => t.to_string(),
        None => {
            let outputs: Vec<&str> = state
                .views
                .iter()
                .filter(|v| v.spec.role == ViewRole::Output)
                .map(|v| v.spec.name.as_str())
                .collect();
            if outputs.len() != 1 {
                return Err(KfaError::InvalidConfig(
                    "checkpoint has multiple output views: pass --target".into(),
                ));
            }
            outputs[0].to_string()
        }
    };
    let new_inputs = parse_new_data(&state, data)?;
    let preds = predict(&state, &new_inputs, &target)?;

    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    let out_path = out_dir.join("predictions.csv");
    let mut header: Vec<String> = (0..preds.ncols()).map(|i| format!("{target}{i}")).collect();
    if labels {
        header.push("label".into());
        let lab = argmax_labels(&preds);
        let mut w = csv::Writer::from_path(&out_path)?;
        w.write_record(&header)?;
        for (row, l) in preds.rows().into_iter().zip(lab) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v}")).collect();
            rec.push(l.to_string());
            w.write_record(&rec)?;
        }
        w.flush()?;
    } else {
        write_matrix_csv(&out_path, &header, &preds.view())?;
    }
    log::info!("wrote {} predictions to {}", preds.nrows(), out_path.display());
    Ok(())
}

fn cv_model_config(cfg: &RunConfig, input: &ViewEntry, threads: usize) -> KsshibaCvConfig {
    KsshibaCvConfig {
        kernel: input.spec.kernel.clone(),
        double_ard: input.spec.double_ard,
        learn_lambda: input.spec.learn_lambda,
        hyper: cfg.hyper.clone(),
        fit: cfg.fit.clone(),
        lambda_opt: cfg.lambda_opt.clone(),
        threads,
    }
}

fn cv_dataset(cfg: &RunConfig) -> Result<(Dataset, &ViewEntry)> {
    let output = single_output_view(cfg)?;
    let inputs: Vec<&ViewEntry> = cfg
        .views
        .iter()
        .filter(|v| v.spec.role == ViewRole::Input)
        .collect();
    if inputs.len() != 1 {
        return Err(KfaError::InvalidConfig(
            "cv and rv-sweep support exactly one input view".into(),
        ));
    }
    let (_, x) = read_matrix_csv(&inputs[0].data)?;
    let (_, y) = read_matrix_csv(&output.data)?;
    Ok((Dataset::new("cv", x, y)?, inputs[0]))
}

fn cmd_cv(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let threads = resolve_threads(cli, Some(&cfg));
    let plan = cfg
        .cv
        .clone()
        .ok_or_else(|| KfaError::InvalidConfig("cv command requires a 'cv' plan in the config".into()))?;
    let (dataset, input) = cv_dataset(&cfg)?;
    let metric = cfg.metric.unwrap_or(Metric::R2);
    let model_cfg = cv_model_config(&cfg, input, threads);
    let factory = ksshiba_factory(model_cfg);
    let report = kfa::harness::run_cv(&dataset, &plan, metric, &factory)?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("cv_report.json");
    std::fs::write(&path, serde_json::to_string_pretty(&report)?)?;
    log::info!("cv mean {:.4} +- {:.4} -> {}", report.mean, report.std, path.display());
    Ok(())
}

fn cmd_relevance(cli: &Cli, checkpoint_path: &Path, image_shape: Option<&str>, threshold: f64) -> Result<()> {
    let state = checkpoint::load(checkpoint_path)?;
    let lambda = state
        .views
        .iter()
        .find_map(|v| match v.spec.kernel.as_ref().map(|k| &k.kind) {
            Some(KernelKind::ArdRbf { lambda }) => Some(lambda.clone()),
            _ => None,
        })
        .ok_or_else(|| {
            KfaError::InvalidConfig("checkpoint has no view with an ard_rbf kernel".into())
        })?;

    let out_dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("."));
    std::fs::create_dir_all(&out_dir)?;
    write_lambda_csv(&lambda, &out_dir.join("lambda.csv"))?;
    let selected = select_features(&lambda, threshold)?;
    let mut w = csv::Writer::from_path(out_dir.join("selected.csv"))?;
    w.write_record(["feature_index", "selected"])?;
    for (i, s) in selected.iter().enumerate() {
        w.write_record([i.to_string(), (*s as u8).to_string()])?;
    }
    w.flush()?;
    if let Some(shape) = image_shape {
        let (h, wd) = shape
            .split_once('x')
            .and_then(|(a, b)| Some((a.parse().ok()?, b.parse().ok()?)))
            .ok_or_else(|| KfaError::InvalidConfig(format!("bad --image-shape '{shape}'")))?;
        write_relevance_pgm(&lambda, (h, wd), &out_dir.join("relevance.pgm"))?;
    }
    Ok(())
}

fn cmd_rv_sweep(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let threads = resolve_threads(cli, Some(&cfg));
    let percentages = cfg
        .percentages
        .clone()
        .ok_or_else(|| KfaError::InvalidConfig("rv-sweep requires 'percentages' in the config".into()))?;
    let plan = cfg.cv.clone().unwrap_or_default();
    let (dataset, input) = cv_dataset(&cfg)?;
    let model_cfg = cv_model_config(&cfg, input, threads);
    let curve = rv_sweep(&dataset, &percentages, &plan, &model_cfg)?;

    std::fs::create_dir_all(&cfg.output_dir)?;
    let path = cfg.output_dir.join("rv_curve.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["rv_percent", "r2"])?;
    for (pct, r2) in &curve {
        w.write_record([format!("{pct}"), format!("{r2}")])?;
    }
    w.flush()?;
    log::info!("wrote {}-point RV curve to {}", curve.len(), path.display());
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit => cmd_fit(cli),
        Command::Predict { checkpoint, data, target, labels } => {
            cmd_predict(cli, checkpoint, data, target.as_deref(), *labels)
        }
        Command::Cv => cmd_cv(cli),
        Command::Relevance { checkpoint, image_shape, threshold } => {
            cmd_relevance(cli, checkpoint, image_shape.as_deref(), *threshold)
        }
        Command::RvSweep => cmd_rv_sweep(cli),
    }
}

fn exit_code(e: &KfaError) -> u8 {
    match e {
        KfaError::InvalidConfig(_) | KfaError::DimensionMismatch(_) => 2,
        KfaError::Numerical(_) => 3,
        KfaError::Io(_) | KfaError::Csv(_) | KfaError::Serde(_) | KfaError::Checkpoint(_) => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
