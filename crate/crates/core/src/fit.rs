//! Optimizers and model selection: proximal gradient for CoxSig, Adam for the NCDE,
//! cross-validation over penalty grids and the time-only Cox baseline.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use log::{debug, info, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::{
    ncde_nll, CoxSigDesign, CoxSigParams, IntensityError, IntensityParams, NcdeParams, Predictor,
    QuadratureConfig,
};
use crate::latentcde::{CdeError, NeuralField};
use crate::metrics::{evaluate_model, EvalOptions, EvalPoint, MetricError};
use crate::signature::time_word_indices;
use crate::timeseries::{Dataset, Standardizer, SurvivalRecord};

#[derive(Debug, Error)]
pub enum FitError {
    #[error("empty dataset")]
    Empty,
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("non-finite objective at iteration {iter}")]
    NonFinite { iter: usize },
    #[error("no admissible step after {halvings} halvings at iteration {iter}")]
    LineSearch { iter: usize, halvings: usize },
    #[error("no grid point produced a defined validation score")]
    NoValidScore,
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Latent(#[from] CdeError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

type Result<T> = std::result::Result<T, FitError>;

/// Maximum number of step halvings per iteration.
pub const MAX_HALVINGS: usize = 60;

/// Form of the L2 part of the elastic-net penalty.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum L2Form {
    /// `(1 - gamma) / 2 * |v|_2^2`.
    #[default]
    Squared,
    /// `(1 - gamma) * |v|_2`.
    Unsquared,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ElasticNetConfig {
    /// Penalty strength on the signature coefficients.
    pub eta1: f64,
    /// Penalty strength on the static coefficients.
    pub eta2: f64,
    /// L1 share of the penalty.
    pub gamma: f64,
    pub initial_step: f64,
    /// Step multiplier applied on each failed sufficient-decrease test.
    pub shrink: f64,
    /// Step multiplier applied after an accepted iteration (1 keeps the step).
    pub growth: f64,
    pub max_iters: usize,
    pub rel_tol: f64,
    pub l2: L2Form,
    /// Penalize coefficients measured in units of each feature's root-mean-square.
    pub standardize: bool,
}

impl Default for ElasticNetConfig {
    fn default() -> Self {
        Self {
            eta1: 0.0,
            eta2: 0.0,
            gamma: 0.1,
            initial_step: 1e-3,
            shrink: 0.5,
            growth: 1.0,
            max_iters: 2000,
            rel_tol: 1e-6,
            l2: L2Form::Squared,
            standardize: true,
        }
    }
}

impl ElasticNetConfig {
    pub fn with_etas(self, eta1: f64, eta2: f64) -> Self {
        Self { eta1, eta2, ..self }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.eta1 >= 0.0
            && self.eta2 >= 0.0
            && (0.0..=1.0).contains(&self.gamma)
            && self.initial_step > 0.0
            && self.shrink > 0.0
            && self.shrink < 1.0
            && self.growth >= 1.0
            && self.rel_tol >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(FitError::Config(format!("{self:?}")))
        }
    }

    /// Penalty value `eta * pen(v)`.
    pub fn penalty(&self, v: &[f64], eta: f64) -> f64 {
        let l1: f64 = v.iter().map(|x| x.abs()).sum();
        let sq: f64 = v.iter().map(|x| x * x).sum();
        let l2 = match self.l2 {
            L2Form::Squared => 0.5 * sq,
            L2Form::Unsquared => sq.sqrt(),
        };
        eta * (self.gamma * l1 + (1.0 - self.gamma) * l2)
    }

    fn prox(&self, v: &[f64], step: f64, eta: f64) -> Vec<f64> {
        match self.l2 {
            L2Form::Squared => prox_elastic_net(v, step, eta, self.gamma),
            L2Form::Unsquared => {
                let mut out = prox_elastic_net(v, step, eta * self.gamma, 1.0);
                let s = step * eta * (1.0 - self.gamma);
                let norm = out.iter().map(|x| x * x).sum::<f64>().sqrt();
                let scale = if norm > s { 1.0 - s / norm } else { 0.0 };
                out.iter_mut().for_each(|x| *x *= scale);
                out
            }
        }
    }
}

/// Proximal map of `step * eta * (gamma |v|_1 + (1 - gamma)/2 |v|_2^2)`.
pub fn prox_elastic_net(v: &[f64], step: f64, eta: f64, gamma: f64) -> Vec<f64> {
    let thr = step * eta * gamma;
    let div = 1.0 + step * eta * (1.0 - gamma);
    v.iter()
        .map(|&x| x.signum() * (x.abs() - thr).max(0.0) / div)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iter: usize,
    pub objective: f64,
    pub step: f64,
}

pub fn write_trace(rows: &[TraceRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone)]
pub struct CoxSigFit {
    pub params: CoxSigParams,
    pub trace: Vec<TraceRow>,
    pub converged: bool,
}

/// Proximal gradient with backtracking on precomputed signatures.
///
/// `mask` restricts the active signature coefficients; inactive ones stay at zero.
pub fn fit_design(
    design: &CoxSigDesign,
    pen: &ElasticNetConfig,
    quad: &QuadratureConfig,
    init: Option<&CoxSigParams>,
    mask: Option<&[bool]>,
) -> Result<CoxSigFit> {
    pen.validate()?;
    if design.is_empty() {
        return Err(FitError::Empty);
    }
    let mut params = match init {
        Some(p) => p.clone(),
        None => design.zero_params(),
    };
    if params.alpha.len() != design.q() || params.beta.len() != design.n_statics {
        return Err(FitError::Config("initial parameters do not match the design".into()));
    }
    let apply_mask = |alpha: &mut [f64]| {
        if let Some(m) = mask {
            alpha
                .iter_mut()
                .zip(m)
                .filter(|(_, &keep)| !keep)
                .for_each(|(a, _)| *a = 0.0);
        }
    };
    apply_mask(&mut params.alpha);
    // Iterates live in scaled coordinates `u = coef * scale`; the penalty acts on `u`.
    let (sa, sb) = if pen.standardize {
        design.feature_scales()
    } else {
        (vec![1.0; design.q()], vec![1.0; design.n_statics])
    };
    let to_u = |v: &[f64], s: &[f64]| -> Vec<f64> { v.iter().zip(s).map(|(x, k)| x * k).collect() };
    let from_u = |v: &[f64], s: &[f64]| -> Vec<f64> { v.iter().zip(s).map(|(x, k)| x / k).collect() };
    let objective = |smooth: f64, ua: &[f64], ub: &[f64]| {
        smooth + pen.penalty(ua, pen.eta1) + pen.penalty(ub, pen.eta2)
    };

    let mut ua = to_u(&params.alpha, &sa);
    let mut ub = to_u(&params.beta, &sb);
    let mut cur = design.evaluate(&params.alpha, &params.beta, quad, true)?;
    if !cur.value.is_finite() {
        return Err(FitError::NonFinite { iter: 0 });
    }
    let mut f_cur = objective(cur.value, &ua, &ub);
    let mut step = pen.initial_step;
    let mut trace = vec![TraceRow {
        iter: 0,
        objective: f_cur,
        step,
    }];
    let mut converged = false;

    for iter in 1..=pen.max_iters {
        apply_mask(&mut cur.grad_alpha);
        let ga = from_u(&cur.grad_alpha, &sa);
        let gb = from_u(&cur.grad_beta, &sb);
        let mut halvings = 0;
        let accepted = loop {
            let za: Vec<f64> = ua.iter().zip(&ga).map(|(x, g)| x - step * g).collect();
            let zb: Vec<f64> = ub.iter().zip(&gb).map(|(x, g)| x - step * g).collect();
            let mut na = pen.prox(&za, step, pen.eta1);
            apply_mask(&mut na);
            let nb = pen.prox(&zb, step, pen.eta2);
            let (alpha, beta) = (from_u(&na, &sa), from_u(&nb, &sb));
            if let Ok(trial) = design.evaluate(&alpha, &beta, quad, true) {
                if trial.value.is_finite() {
                    let (mut lin, mut sq) = (0.0, 0.0);
                    for ((x, y), g) in ua
                        .iter()
                        .chain(&ub)
                        .zip(na.iter().chain(&nb))
                        .zip(ga.iter().chain(&gb))
                    {
                        lin += g * (y - x);
                        sq += (y - x) * (y - x);
                    }
                    if trial.value <= cur.value + lin + sq / (2.0 * step) {
                        break Some((na, nb, alpha, beta, trial, sq));
                    }
                }
            }
            halvings += 1;
            if halvings > MAX_HALVINGS {
                break None;
            }
            step *= pen.shrink;
        };
        let Some((na, nb, alpha, beta, trial, sq)) = accepted else {
            return Err(FitError::LineSearch { iter, halvings });
        };
        let f_new = objective(trial.value, &na, &nb);
        if !f_new.is_finite() {
            return Err(FitError::NonFinite { iter });
        }
        if f_new > f_cur || sq == 0.0 {
            // Rounding-level stall: the current point is already optimal to working precision.
            converged = true;
            break;
        }
        let rel = (f_cur - f_new) / f_cur.abs().max(1e-12);
        ua = na;
        ub = nb;
        params.alpha = alpha;
        params.beta = beta;
        cur = trial;
        f_cur = f_new;
        trace.push(TraceRow {
            iter,
            objective: f_cur,
            step,
        });
        if rel < pen.rel_tol {
            converged = true;
            break;
        }
        step *= pen.growth;
    }
    debug!(
        "ista finished after {} iterations, objective {f_cur:.6}, converged {converged}",
        trace.len() - 1
    );
    Ok(CoxSigFit {
        params,
        trace,
        converged,
    })
}

/// Fits the signature Cox model by penalized maximum likelihood, starting from zero.
pub fn fit_coxsig(
    data: &Dataset,
    depth: usize,
    plus: bool,
    pen: &ElasticNetConfig,
    quad: &QuadratureConfig,
) -> Result<CoxSigFit> {
    if data.is_empty() {
        return Err(FitError::Empty);
    }
    let design = CoxSigDesign::build(data, depth, plus)?;
    fit_design(&design, pen, quad, None, None)
}

/// Mask selecting the time-only signature words.
pub fn time_word_mask(dim: usize, depth: usize, q: usize) -> Vec<bool> {
    let mut mask = vec![false; q];
    for i in time_word_indices(dim, depth) {
        mask[i] = true;
    }
    mask
}

/// Cox model with a polynomial log-baseline in time and static effects only.
/// Without statics, the first observed value of the series plays that role.
pub fn fit_baseline_cox(
    data: &Dataset,
    depth: usize,
    pen: &ElasticNetConfig,
    quad: &QuadratureConfig,
) -> Result<CoxSigFit> {
    if data.is_empty() {
        return Err(FitError::Empty);
    }
    let design = CoxSigDesign::build(data, depth, data.n_statics() == 0)?;
    let mask = time_word_mask(design.dim, depth, design.q());
    fit_design(&design, pen, quad, None, Some(&mask))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub epochs: usize,
    pub batch: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Latent state dimension.
    pub latent_dim: usize,
    /// Hidden layer widths of the vector field.
    pub hidden: Vec<usize>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: (-4.0f64).exp(),
            epochs: 50,
            batch: 32,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            latent_dim: 4,
            hidden: vec![128, 128],
        }
    }
}

#[derive(Debug, Clone)]
pub struct NcdeFit {
    pub params: NcdeParams,
    /// Mean training NLL of each epoch.
    pub epoch_loss: Vec<f64>,
}

fn ncde_flat(p: &NcdeParams) -> Vec<f64> {
    let mut v = p.field.flat();
    v.extend_from_slice(&p.alpha);
    v.extend_from_slice(&p.beta);
    v
}

fn ncde_set_flat(p: &mut NcdeParams, flat: &[f64]) -> Result<()> {
    let nf = p.field.n_params();
    let na = p.alpha.len();
    p.field.set_flat(&flat[..nf])?;
    p.alpha.copy_from_slice(&flat[nf..nf + na]);
    p.beta.copy_from_slice(&flat[nf + na..]);
    Ok(())
}

/// Trains the neural controlled ResNet with mini-batch Adam on the unpenalized NLL.
/// Features are standardized on the training data and the transform is stored in the model.
pub fn fit_ncde(data: &Dataset, cfg: &AdamConfig, seed: u64) -> Result<NcdeFit> {
    if data.is_empty() {
        return Err(FitError::Empty);
    }
    if cfg.lr.partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) || cfg.batch == 0 || cfg.latent_dim == 0 {
        return Err(FitError::Config(format!("{cfg:?}")));
    }
    let standardizer = Standardizer::fit(data);
    let train = standardizer.apply(data);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let p = cfg.latent_dim;
    let field = NeuralField::init(p, data.d_raw() + 1, &cfg.hidden, &mut rng);
    let bound = 1.0 / (p as f64).sqrt();
    let alpha = (0..p).map(|_| rng.random_range(-bound..=bound)).collect();
    let mut params = NcdeParams {
        field,
        alpha,
        beta: vec![0.0; data.n_statics()],
        standardizer: None,
    };

    let mut theta = ncde_flat(&params);
    let mut m = vec![0.0; theta.len()];
    let mut v = vec![0.0; theta.len()];
    let mut t = 0i32;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut epoch_loss = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch) {
            let batch: Vec<&SurvivalRecord> = chunk.iter().map(|&i| &train.records[i]).collect();
            let (loss, grad) = ncde_nll(&params, &batch, true)?;
            let grad = grad.expect("gradient requested");
            total += loss * batch.len() as f64;
            let mut g = grad.field.flat();
            g.extend_from_slice(&grad.alpha);
            g.extend_from_slice(&grad.beta);
            t += 1;
            let c1 = 1.0 - cfg.beta1.powi(t);
            let c2 = 1.0 - cfg.beta2.powi(t);
            for i in 0..theta.len() {
                m[i] = cfg.beta1 * m[i] + (1.0 - cfg.beta1) * g[i];
                v[i] = cfg.beta2 * v[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                theta[i] -= cfg.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + cfg.eps);
            }
            ncde_set_flat(&mut params, &theta)?;
        }
        let mean = total / train.len() as f64;
        if !mean.is_finite() {
            return Err(FitError::NonFinite { iter: epoch + 1 });
        }
        debug!("ncde epoch {} mean nll {mean:.6}", epoch + 1);
        epoch_loss.push(mean);
    }
    params.standardizer = Some(standardizer);
    Ok(NcdeFit { params, epoch_loss })
}

/// Model family selected on the command line.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    CoxSig,
    CoxSigPlus,
    Ncde,
    CoxBaseline,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::CoxSig => "coxsig",
            Method::CoxSigPlus => "coxsig+",
            Method::Ncde => "ncde",
            Method::CoxBaseline => "cox-baseline",
        })
    }
}

impl FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "coxsig" => Ok(Method::CoxSig),
            "coxsig+" => Ok(Method::CoxSigPlus),
            "ncde" => Ok(Method::Ncde),
            "cox-baseline" => Ok(Method::CoxBaseline),
            other => Err(format!(
                "unknown method {other:?} (expected coxsig, coxsig+, ncde or cox-baseline)"
            )),
        }
    }
}

/// Penalty and depth grid searched by cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvGrid {
    pub eta1: Vec<f64>,
    pub eta2: Vec<f64>,
    pub depths: Vec<usize>,
    /// Share of the data used for fitting; the rest scores each grid point.
    pub train_fraction: f64,
}

impl CvGrid {
    /// `{base^0, base^-1, ..., base^-5}` for both penalties and depths 2 and 3.
    pub fn with_base(base: f64) -> Self {
        let etas: Vec<f64> = (0..=5).map(|k| base.powi(-k)).collect();
        Self {
            eta1: etas.clone(),
            eta2: etas,
            depths: vec![2, 3],
            train_fraction: 0.8,
        }
    }

    pub fn singleton(eta1: f64, eta2: f64, depth: usize) -> Self {
        Self {
            eta1: vec![eta1],
            eta2: vec![eta2],
            depths: vec![depth],
            train_fraction: 0.8,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.eta1.is_empty() || self.eta2.is_empty() || self.depths.is_empty() {
            return Err(FitError::Config("empty cross-validation grid".into()));
        }
        if !(self.train_fraction > 0.0 && self.train_fraction < 1.0) {
            return Err(FitError::Config("train fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

impl Default for CvGrid {
    fn default() -> Self {
        Self::with_base(std::f64::consts::E)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvRow {
    pub eta1: f64,
    pub eta2: f64,
    pub depth: usize,
    /// Mean of C-index minus Brier score on the validation split.
    pub mixed: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CvOutcome {
    pub best: CvRow,
    pub table: Vec<CvRow>,
    /// Refit on the whole input at the selected grid point.
    pub fit: CoxSigFit,
}

pub fn write_cv_table(rows: &[CvRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["eta1", "eta2", "depth", "mixed"])?;
    for r in rows {
        w.write_record([
            r.eta1.to_string(),
            r.eta2.to_string(),
            r.depth.to_string(),
            r.mixed.map(|m| m.to_string()).unwrap_or_default(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Seeded shuffle split into `(train, rest)` index sets.
pub fn split_indices(n: usize, train_fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let cut = ((n as f64) * train_fraction).floor() as usize;
    let rest = idx.split_off(cut.min(n));
    (idx, rest)
}

/// True when `a` should be preferred over `b`: higher score, then stronger penalty, then shallower.
fn better(a: &CvRow, b: &CvRow) -> bool {
    let (Some(sa), Some(sb)) = (a.mixed, b.mixed) else {
        return a.mixed.is_some() && b.mixed.is_none();
    };
    if sa != sb {
        return sa > sb;
    }
    let (pa, pb) = (a.eta1 + a.eta2, b.eta1 + b.eta2);
    if pa != pb {
        return pa > pb;
    }
    a.depth < b.depth
}

/// Grid search on a seeded train/validation split, then a refit on all of `data`.
///
/// Within a depth, grid points are visited from the strongest to the weakest penalty,
/// each warm-started from the previous solution.
pub fn cross_validate(
    data: &Dataset,
    method: Method,
    grid: &CvGrid,
    pen: &ElasticNetConfig,
    quad: &QuadratureConfig,
    points: &[EvalPoint],
    seed: u64,
) -> Result<CvOutcome> {
    grid.validate()?;
    if data.is_empty() {
        return Err(FitError::Empty);
    }
    let (plus, baseline) = match method {
        Method::CoxSig => (false, false),
        Method::CoxSigPlus => (true, false),
        Method::CoxBaseline => (data.n_statics() == 0, true),
        Method::Ncde => {
            return Err(FitError::Config("cross-validation applies to Cox-type models".into()))
        }
    };
    let (train_idx, val_idx) = split_indices(data.len(), grid.train_fraction, seed);
    if train_idx.is_empty() || val_idx.is_empty() {
        return Err(FitError::Config("split leaves an empty part".into()));
    }
    let val = data.subset(&val_idx);
    let mut eta1 = grid.eta1.clone();
    let mut eta2 = grid.eta2.clone();
    eta1.sort_by(|a, b| b.total_cmp(a));
    eta2.sort_by(|a, b| b.total_cmp(a));

    let mut table = Vec::new();
    for &depth in &grid.depths {
        let full = CoxSigDesign::build(data, depth, plus)?;
        let design = full.subset(&train_idx);
        let mask = baseline.then(|| time_word_mask(design.dim, depth, design.q()));
        let mut warm: Option<CoxSigParams> = None;
        for &e1 in &eta1 {
            for &e2 in &eta2 {
                let cfg = pen.with_etas(e1, e2);
                let mixed = match fit_design(&design, &cfg, quad, warm.as_ref(), mask.as_deref()) {
                    Ok(fit) => {
                        let score = Predictor::new(IntensityParams::CoxSig(fit.params.clone()), *quad)
                            .map_err(FitError::from)
                            .and_then(|pred| {
                                Ok(evaluate_model(&pred, &val, points, EvalOptions::default())?)
                            });
                        warm = Some(fit.params);
                        match score {
                            Ok(report) => report.averages.mixed,
                            Err(e) => {
                                warn!("scoring failed at eta1={e1}, eta2={e2}, N={depth}: {e}");
                                None
                            }
                        }
                    }
                    Err(e) => {
                        warn!("fit failed at eta1={e1}, eta2={e2}, N={depth}: {e}");
                        None
                    }
                };
                debug!("cv eta1={e1:.4} eta2={e2:.4} N={depth} mixed={mixed:?}");
                table.push(CvRow {
                    eta1: e1,
                    eta2: e2,
                    depth,
                    mixed,
                });
            }
        }
    }
    let best = *table
        .iter()
        .filter(|r| r.mixed.is_some())
        .fold(None::<&CvRow>, |acc, r| match acc {
            Some(b) if !better(r, b) => Some(b),
            _ => Some(r),
        })
        .ok_or(FitError::NoValidScore)?;
    info!(
        "selected eta1={:.4} eta2={:.4} N={} (mixed {:.4})",
        best.eta1,
        best.eta2,
        best.depth,
        best.mixed.unwrap_or(f64::NAN)
    );
    let design = CoxSigDesign::build(data, best.depth, plus)?;
    let mask = baseline.then(|| time_word_mask(design.dim, best.depth, design.q()));
    let fit = fit_design(
        &design,
        &pen.with_etas(best.eta1, best.eta2),
        quad,
        None,
        mask.as_deref(),
    )?;
    Ok(CvOutcome { best, table, fit })
}
