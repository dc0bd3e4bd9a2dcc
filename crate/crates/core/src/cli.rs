//! Command-line front end: simulation, fitting, cross-validation, evaluation,
//! prediction and diagnostics with seeded, file-based inputs and outputs.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::diagnostics::{
    self, empirical_divergences, factorial_decay_check, field_constants, latent_bound,
    curve_bounds, linearize_vector_field, model_curves, sandwich_constants, sandwich_with, truncation_bias_bound,
    DiagError,
};
use crate::fit::{
    cross_validate, fit_baseline_cox, fit_coxsig, fit_ncde, split_indices, write_cv_table,
    write_trace, AdamConfig, CvGrid, ElasticNetConfig, FitError, Method,
};
use crate::intensity::{IntensityError, IntensityParams, Predictor, QuadratureConfig};
use crate::latentcde::{solve_controlled, CdeError, PolynomialScalarField, VectorField};
use crate::metrics::{default_points, evaluate_model, EvalOptions, EvalPoint, MetricError};
use crate::signature::{path_signature, SigError};
use crate::simulate::{
    fbm_paths, ou_hitting_dataset, thinning_dataset, tumor_growth_dataset, OuConfig, SimError,
    SimManifest, ThinningConfig, TumorConfig,
};
use crate::timeseries::{embed_linear, load_dataset, DataError, Dataset};

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Numerical(String),
}

impl CliError {
    /// Process exit code: 2 for invalid input, 3 for numerical failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Numerical(_) => 3,
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<SigError> for CliError {
    fn from(e: SigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<CdeError> for CliError {
    fn from(e: CdeError) -> Self {
        match e {
            CdeError::Shape(_) | CdeError::ZeroSubsteps => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<IntensityError> for CliError {
    fn from(e: IntensityError) -> Self {
        match e {
            IntensityError::Overflow { .. } => CliError::Numerical(e.to_string()),
            IntensityError::Latent(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<FitError> for CliError {
    fn from(e: FitError) -> Self {
        match e {
            FitError::NonFinite { .. } | FitError::LineSearch { .. } => {
                CliError::Numerical(e.to_string())
            }
            FitError::Intensity(inner) => inner.into(),
            FitError::Latent(inner) => inner.into(),
            FitError::Metric(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        match e {
            MetricError::Intensity(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<SimError> for CliError {
    fn from(e: SimError) -> Self {
        match e {
            SimError::Config(_) | SimError::Data(_) => CliError::Validation(e.to_string()),
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<DiagError> for CliError {
    fn from(e: DiagError) -> Self {
        match e {
            DiagError::Overflow(_) => CliError::Numerical(e.to_string()),
            DiagError::Intensity(inner) => inner.into(),
            _ => CliError::Validation(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Validation(e.to_string())
    }
}

type Result<T> = std::result::Result<T, CliError>;

#[derive(Debug, Parser)]
#[command(name = "sigsurv", version, about = "Dynamic survival analysis with signature intensities")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
    /// Fit a model on the training part of a dataset.
    Fit(FitArgs),
    /// Cross-validate penalties and depth, then refit.
    Cv(CvArgs),
    /// Compute metrics of a fitted model.
    Evaluate(EvaluateArgs),
    /// Write conditional survival curves per record.
    Predict(PredictArgs),
    /// Run the numerical checks of the theory on simulated data.
    Diagnose(DiagnoseArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Generator {
    Ou,
    Tumor,
    Thinning,
}

#[derive(Debug, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long = "gen", value_enum)]
    pub generator: Generator,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Number of records (generator default when absent).
    #[arg(long)]
    pub n: Option<usize>,
    /// Keep every k-th grid point as an observation (ou, tumor).
    #[arg(long)]
    pub keep_every: Option<usize>,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct DataArgs {
    /// Longitudinal CSV (id, time, features...).
    #[arg(long)]
    pub dataset: PathBuf,
    /// Per-record CSV (id, event_time, event, statics...).
    #[arg(long)]
    pub records: PathBuf,
}

#[derive(Debug, Args, Serialize, Clone)]
pub struct ModelArgs {
    #[arg(long, value_parser = parse_method)]
    pub method: Method,
    #[arg(long, default_value_t = 2)]
    pub depth: usize,
    #[arg(long, default_value_t = 0.0)]
    pub eta1: f64,
    #[arg(long, default_value_t = 0.0)]
    pub eta2: f64,
    #[arg(long, default_value_t = 0.1)]
    pub gamma: f64,
    #[arg(long, default_value_t = 4)]
    pub quad_substeps: usize,
    /// Maximum proximal-gradient iterations.
    #[arg(long, default_value_t = 2000)]
    pub max_iters: usize,
    /// NCDE training epochs.
    #[arg(long, default_value_t = 50)]
    pub epochs: usize,
    /// Share of records used for fitting; the rest is held out.
    #[arg(long, default_value_t = 0.8)]
    pub train_fraction: f64,
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    s.parse()
}

#[derive(Debug, Args, Serialize)]
pub struct FitArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct CvArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// JSON grid overriding the default penalty and depth grid.
    #[arg(long)]
    pub grid_file: Option<PathBuf>,
    /// Prediction window used to score grid points.
    #[arg(long)]
    pub delta_t: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub delta_t: f64,
    /// Restrict to the held-out ids listed in a split file written by fit or cv.
    #[arg(long)]
    pub split: Option<PathBuf>,
    /// Number of evaluation times between the 5th and 50th event-time percentiles.
    #[arg(long, default_value_t = 10)]
    pub points: usize,
    #[arg(long, default_value_t = 4)]
    pub quad_substeps: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[command(flatten)]
    pub data: DataArgs,
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub delta_t: f64,
    /// Prediction times per record, evenly spaced on `[0, horizon]`.
    #[arg(long, default_value_t = 50)]
    pub grid_points: usize,
    #[arg(long, default_value_t = 4)]
    pub quad_substeps: usize,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct DiagnoseArgs {
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Records per simulated dataset.
    #[arg(long, default_value_t = 200)]
    pub n: usize,
    /// Random model perturbations for the divergence sandwich.
    #[arg(long, default_value_t = 20)]
    pub perturbations: usize,
}

/// Manifest written next to every command output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: serde_json::Value,
    pub config_hash: String,
    pub outputs: Vec<String>,
}

/// Hex SHA-256 of the compact JSON serialization.
pub fn config_hash(config: &serde_json::Value) -> String {
    hex::encode(Sha256::digest(config.to_string().as_bytes()))
}

fn write_manifest(dir: &Path, command: &str, config: &impl Serialize, outputs: &[&str]) -> Result<String> {
    let config = serde_json::to_value(config)?;
    let hash = config_hash(&config);
    let manifest = RunManifest {
        command: command.to_string(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        config_hash: hash.clone(),
        outputs: outputs.iter().map(|s| s.to_string()).collect(),
    };
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(hash)
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::Validation(format!("{}: {e}", dir.display())))
}

fn require_file(p: &Path) -> Result<()> {
    if p.is_file() {
        Ok(())
    } else {
        Err(CliError::Validation(format!("{} does not exist", p.display())))
    }
}

fn load(data: &DataArgs) -> Result<Dataset> {
    require_file(&data.dataset)?;
    require_file(&data.records)?;
    Ok(load_dataset(&data.dataset, &data.records)?)
}

fn load_model(path: &Path) -> Result<IntensityParams> {
    require_file(path)?;
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

fn quad(substeps: usize) -> Result<QuadratureConfig> {
    if substeps == 0 {
        return Err(CliError::Validation("--quad-substeps must be positive".into()));
    }
    Ok(QuadratureConfig {
        substeps,
        ..QuadratureConfig::default()
    })
}

fn check_delta_t(dt: f64) -> Result<()> {
    if dt > 0.0 && dt.is_finite() {
        Ok(())
    } else {
        Err(CliError::Validation("--delta-t must be positive".into()))
    }
}

/// Record ids of the training and held-out parts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitFile {
    pub seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

fn split(data: &Dataset, fraction: f64, seed: u64) -> Result<(Dataset, SplitFile)> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(CliError::Validation("--train-fraction must lie in (0, 1]".into()));
    }
    let (train, test) = if fraction < 1.0 {
        split_indices(data.len(), fraction, seed)
    } else {
        ((0..data.len()).collect(), Vec::new())
    };
    let ids = |idx: &[usize]| idx.iter().map(|&i| data.records[i].id.clone()).collect();
    let file = SplitFile {
        seed,
        train: ids(&train),
        test: ids(&test),
    };
    Ok((data.subset(&train), file))
}

fn penalty(m: &ModelArgs) -> ElasticNetConfig {
    ElasticNetConfig {
        gamma: m.gamma,
        max_iters: m.max_iters,
        ..ElasticNetConfig::default()
    }
    .with_etas(m.eta1, m.eta2)
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Fit(a) => cmd_fit(&a),
        Command::Cv(a) => cmd_cv(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::Predict(a) => cmd_predict(&a),
        Command::Diagnose(a) => cmd_diagnose(&a),
    }
}

pub fn cmd_simulate(a: &SimulateArgs) -> Result<()> {
    ensure_dir(&a.out)?;
    let (data, config, truth) = match a.generator {
        Generator::Ou => {
            let mut cfg = OuConfig {
                seed: a.seed,
                ..OuConfig::default()
            };
            cfg.n = a.n.unwrap_or(cfg.n);
            cfg.keep_every = a.keep_every.unwrap_or(cfg.keep_every);
            (ou_hitting_dataset(&cfg)?.dataset, serde_json::to_value(&cfg)?, None)
        }
        Generator::Tumor => {
            let mut cfg = TumorConfig {
                seed: a.seed,
                ..TumorConfig::default()
            };
            cfg.n = a.n.unwrap_or(cfg.n);
            cfg.keep_every = a.keep_every.unwrap_or(cfg.keep_every);
            (tumor_growth_dataset(&cfg)?, serde_json::to_value(&cfg)?, None)
        }
        Generator::Thinning => {
            let mut cfg = ThinningConfig {
                seed: a.seed,
                ..ThinningConfig::default()
            };
            cfg.n = a.n.unwrap_or(cfg.n);
            let data = thinning_dataset(&cfg)?;
            (data, serde_json::to_value(&cfg)?, Some(IntensityParams::CoxSig(cfg.truth.clone())))
        }
    };
    data.write_csv(&a.out.join("longitudinal.csv"), &a.out.join("records.csv"))?;
    let mut outputs = vec!["longitudinal.csv", "records.csv", "manifest.json"];
    if let Some(t) = &truth {
        fs::write(a.out.join("truth.json"), serde_json::to_string_pretty(t)?)?;
        outputs.push("truth.json");
    }
    let hash = config_hash(&config);
    let manifest = SimManifest {
        generator: format!("{:?}", a.generator).to_lowercase(),
        seed: a.seed,
        config,
        n: data.len(),
        censoring_rate: data.censoring_rate(),
        mean_observations: data.mean_observations(),
        config_hash: hash,
    };
    fs::write(a.out.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    println!(
        "records: {}  censoring rate: {:.3}  mean observations: {:.1}",
        data.len(),
        manifest.censoring_rate,
        manifest.mean_observations
    );
    Ok(())
}

fn save_model(dir: &Path, params: &IntensityParams) -> Result<()> {
    fs::write(dir.join("model.json"), serde_json::to_string_pretty(params)?)?;
    Ok(())
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let data = load(&a.data)?;
    ensure_dir(&a.out)?;
    let q = quad(a.model.quad_substeps)?;
    let (train, split_file) = split(&data, a.model.train_fraction, a.seed)?;
    fs::write(a.out.join("split.json"), serde_json::to_string_pretty(&split_file)?)?;
    let pen = penalty(&a.model);
    let mut outputs = vec!["model.json", "split.json", "manifest.json"];
    match a.model.method {
        Method::Ncde => {
            let cfg = AdamConfig {
                epochs: a.model.epochs,
                ..AdamConfig::default()
            };
            let fit = fit_ncde(&train, &cfg, a.seed)?;
            save_model(&a.out, &IntensityParams::Ncde(fit.params))?;
            let mut w = csv::Writer::from_path(a.out.join("loss.csv"))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            w.write_record(["epoch", "mean_nll"]).map_err(|e| CliError::Validation(e.to_string()))?;
            for (e, l) in fit.epoch_loss.iter().enumerate() {
                w.write_record([(e + 1).to_string(), l.to_string()])
                    .map_err(|e| CliError::Validation(e.to_string()))?;
            }
            w.flush()?;
            outputs.push("loss.csv");
        }
        method => {
            let fit = match method {
                Method::CoxBaseline => fit_baseline_cox(&train, a.model.depth, &pen, &q)?,
                m => fit_coxsig(&train, a.model.depth, m == Method::CoxSigPlus, &pen, &q)?,
            };
            info!("fit finished after {} iterations", fit.trace.len() - 1);
            save_model(&a.out, &IntensityParams::CoxSig(fit.params))?;
            write_trace(&fit.trace, &a.out.join("trace.csv"))?;
            outputs.push("trace.csv");
        }
    }
    let hash = write_manifest(&a.out, "fit", a, &outputs)?;
    println!("model written to {} (config {})", a.out.join("model.json").display(), &hash[..12]);
    Ok(())
}

pub fn cmd_cv(a: &CvArgs) -> Result<()> {
    check_delta_t(a.delta_t)?;
    let data = load(&a.data)?;
    ensure_dir(&a.out)?;
    let q = quad(a.model.quad_substeps)?;
    let grid: CvGrid = match &a.grid_file {
        Some(p) => {
            require_file(p)?;
            serde_json::from_str(&fs::read_to_string(p)?)?
        }
        None => CvGrid::default(),
    };
    let (train, split_file) = split(&data, a.model.train_fraction, a.seed)?;
    fs::write(a.out.join("split.json"), serde_json::to_string_pretty(&split_file)?)?;
    let points = default_points(&train, a.delta_t, 10)?;
    let out = cross_validate(&train, a.model.method, &grid, &penalty(&a.model), &q, &points, a.seed)?;
    save_model(&a.out, &IntensityParams::CoxSig(out.fit.params))?;
    write_trace(&out.fit.trace, &a.out.join("trace.csv"))?;
    write_cv_table(&out.table, &a.out.join("cv_table.csv"))?;
    write_manifest(
        &a.out,
        "cv",
        a,
        &["model.json", "split.json", "trace.csv", "cv_table.csv", "manifest.json"],
    )?;
    println!(
        "selected eta1 = {:.4}, eta2 = {:.4}, depth = {} (validation mixed metric {:.4})",
        out.best.eta1,
        out.best.eta2,
        out.best.depth,
        out.best.mixed.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn restrict_to_split(data: Dataset, split: Option<&PathBuf>) -> Result<Dataset> {
    let Some(p) = split else {
        return Ok(data);
    };
    require_file(p)?;
    let file: SplitFile = serde_json::from_str(&fs::read_to_string(p)?)?;
    let keep: std::collections::HashSet<&str> = file.test.iter().map(String::as_str).collect();
    let idx: Vec<usize> = (0..data.len())
        .filter(|&i| keep.contains(data.records[i].id.as_str()))
        .collect();
    if idx.is_empty() {
        return Err(CliError::Validation("split file selects no records".into()));
    }
    Ok(data.subset(&idx))
}

pub fn cmd_evaluate(a: &EvaluateArgs) -> Result<()> {
    check_delta_t(a.delta_t)?;
    let params = load_model(&a.model)?;
    let data = restrict_to_split(load(&a.data)?, a.split.as_ref())?;
    ensure_dir(&a.out)?;
    let pred = Predictor::new(params, quad(a.quad_substeps)?)?;
    let points = default_points(&data, a.delta_t, a.points)?;
    let report = evaluate_model(&pred, &data, &points, EvalOptions::default())?;
    report.write_json(&a.out.join("metrics.json"))?;
    report.write_csv(&a.out.join("metrics.csv"))?;
    write_manifest(&a.out, "evaluate", a, &["metrics.json", "metrics.csv", "manifest.json"])?;
    let fmt = |v: Option<f64>| v.map_or("undefined".to_string(), |x| format!("{x:.4}"));
    println!(
        "C-index {}  Brier {}  weighted Brier {}  AUC {}  (undefined C-index at {} points)",
        fmt(report.averages.c_index),
        fmt(report.averages.brier),
        fmt(report.averages.weighted_brier),
        fmt(report.averages.auc),
        report.averages.n_undefined_c_index
    );
    Ok(())
}

pub fn cmd_predict(a: &PredictArgs) -> Result<()> {
    check_delta_t(a.delta_t)?;
    if a.grid_points < 2 {
        return Err(CliError::Validation("--grid-points must be at least 2".into()));
    }
    let params = load_model(&a.model)?;
    let data = load(&a.data)?;
    ensure_dir(&a.out)?;
    let pred = Predictor::new(params, quad(a.quad_substeps)?)?;
    let mut w = csv::Writer::from_path(a.out.join("survival.csv"))
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let csv_err = |e: csv::Error| CliError::Validation(e.to_string());
    w.write_record(["id", "t", "delta_t", "survival"]).map_err(csv_err)?;
    for r in &data.records {
        for k in 0..a.grid_points {
            let t = data.horizon * k as f64 / (a.grid_points - 1) as f64;
            if t > r.event_time {
                break;
            }
            let s = pred.conditional_survival(r, t, a.delta_t)?;
            w.write_record([r.id.clone(), t.to_string(), a.delta_t.to_string(), s.to_string()])
                .map_err(csv_err)?;
        }
    }
    w.flush()?;
    write_manifest(&a.out, "predict", a, &["survival.csv", "manifest.json"])?;
    println!("survival curves written to {}", a.out.join("survival.csv").display());
    Ok(())
}

/// One named check of the diagnostics report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckResult {
    pub name: String,
    pub pass: bool,
    pub details: serde_json::Value,
}

/// Well-specified diagnostics suite on simulated data; returns every check.
pub fn diagnostics_suite(seed: u64, n: usize, perturbations: usize) -> Result<Vec<CheckResult>> {
    use rand::{Rng, SeedableRng};
    let mut checks = Vec::new();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);

    // Signature factorial decay on random drivers.
    let drivers = fbm_paths(0.6, 21, 1.0, 2, 20, seed)?;
    let mut violations = 0;
    for p in &drivers {
        let emb = embed_linear(p, 1.0)?;
        violations += factorial_decay_check(&emb, 4)?
            .iter()
            .filter(|l| l.norm > l.bound * (1.0 + 1e-12))
            .count();
    }
    checks.push(CheckResult {
        name: "factorial_decay".into(),
        pass: violations == 0,
        details: serde_json::json!({ "paths": drivers.len(), "violations": violations }),
    });

    // Linearization of an affine scalar field against a fine Euler solve.
    let field = PolynomialScalarField {
        coeffs: vec![vec![0.3, 0.2], vec![0.1, -0.15], vec![-0.2, 0.1]],
    };
    let vf = VectorField::PolynomialScalar(field.clone());
    let drivers = fbm_paths(0.6, 41, 1.0, 2, 10, seed.wrapping_add(1))?;
    let mut errors_by_depth = vec![0.0; 5];
    let mut bound_ok = true;
    for p in &drivers {
        let emb = embed_linear(p, 1.0)?;
        let z = solve_controlled(&[0.0], &vf, &emb, 4000)?.last()[0];
        let lx = diagnostics::path_lipschitz(&emb);
        let (g0, lg) = field_constants(&field, 1.0);
        let m = latent_bound(g0, lg, lx, 1.0);
        for depth in 1..=5 {
            let alpha = linearize_vector_field(&field, depth)?;
            let err = (path_signature(&emb, 1.0, depth)?.dot(&alpha) - z).abs();
            errors_by_depth[depth - 1] += err / drivers.len() as f64;
            if err > truncation_bias_bound(&field, depth, lx, 1.0, m)? {
                bound_ok = false;
            }
        }
    }
    checks.push(CheckResult {
        name: "linearization_truncation".into(),
        pass: bound_ok && errors_by_depth.windows(2).all(|w| w[1] <= w[0] + 1e-5),
        details: serde_json::json!({ "mean_error_by_depth": errors_by_depth, "bound_respected": bound_ok }),
    });

    // Divergence sandwich on thinning data around the truth.
    let cfg = ThinningConfig {
        n,
        seed,
        ..ThinningConfig::default()
    };
    let data = thinning_dataset(&cfg)?;
    let truth = IntensityParams::CoxSig(cfg.truth.clone());
    let truth_curves = model_curves(&truth, &data)?;
    let mut min_ratio = f64::INFINITY;
    let mut all_pass = true;
    let (truth_dyn, truth_stat) = curve_bounds(&truth_curves, &data, 8);
    for _ in 0..perturbations {
        let mut model = cfg.truth.clone();
        for a in model.alpha.iter_mut().chain(model.beta.iter_mut()) {
            *a += rng.random_range(-0.2..0.2);
        }
        let curves = model_curves(&IntensityParams::CoxSig(model.clone()), &data)?;
        let t = empirical_divergences(&truth_curves, &curves, &data, 4)?;
        let (model_dyn, model_stat) = curve_bounds(&curves, &data, 8);
        let (c1, c2) = sandwich_constants(truth_dyn, model_dyn, truth_stat.max(model_stat), cfg.horizon);
        let sc = sandwich_with(&t, c1, c2);
        log::debug!("kl {} tv {} d2 {} c1 {} c2 {}", t.kl, t.tv, t.d2, c1, c2);
        all_pass &= sc.pass;
        if t.tv > 0.0 {
            min_ratio = min_ratio.min(t.kl / (t.tv * t.tv));
        }
    }
    checks.push(CheckResult {
        name: "pinsker_sandwich".into(),
        pass: all_pass,
        details: serde_json::json!({ "perturbations": perturbations, "min_kl_over_tv2": min_ratio }),
    });
    Ok(checks)
}

pub fn cmd_diagnose(a: &DiagnoseArgs) -> Result<()> {
    if a.n == 0 {
        return Err(CliError::Validation("--n must be positive".into()));
    }
    ensure_dir(&a.out)?;
    let checks = diagnostics_suite(a.seed, a.n, a.perturbations)?;
    fs::write(a.out.join("diagnostics.json"), serde_json::to_string_pretty(&checks)?)?;
    write_manifest(&a.out, "diagnose", a, &["diagnostics.json", "manifest.json"])?;
    for c in &checks {
        println!("{:<28} {}", c.name, if c.pass { "pass" } else { "FAIL" });
    }
    Ok(())
}

/// Default evaluation points helper for callers that only have a window length.
pub fn points_for(data: &Dataset, delta_t: f64) -> Result<Vec<EvalPoint>> {
    check_delta_t(delta_t)?;
    Ok(default_points(data, delta_t, 10)?)
}
