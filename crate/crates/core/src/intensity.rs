//! Intensity models, counting-process likelihood, hazards and conditional survival.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::latentcde::{
    backward_unroll, forward_unroll, observation_increments, CdeError, NeuralField,
};
use crate::signature::{
    all_words, observation_signatures, path_signature, sig_dim, word_index, SigError, SigVector,
    Word,
};
use crate::timeseries::{DataError, Dataset, SampledPath, Standardizer, SurvivalRecord};

/// Log-intensities beyond this magnitude abort the evaluation.
pub const LOG_INTENSITY_GUARD: f64 = 50.0;

#[derive(Debug, Error)]
pub enum IntensityError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("log-intensity {value} out of range for record {id} at t = {time}")]
    Overflow { id: String, time: f64, value: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("invalid parameter file: {0}")]
    BadParams(String),
    #[error(transparent)]
    Signature(#[from] SigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Latent(#[from] CdeError),
}

type Result<T> = std::result::Result<T, IntensityError>;

fn check_log(id: &str, time: f64, value: f64) -> Result<f64> {
    if !value.is_finite() || value.abs() > LOG_INTENSITY_GUARD {
        return Err(IntensityError::Overflow {
            id: id.to_string(),
            time,
            value,
        });
    }
    Ok(value)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadratureConfig {
    /// Trapezoid pieces per inter-observation interval.
    pub substeps: usize,
    /// Trapezoid pieces over a prediction window.
    pub prediction_pieces: usize,
}

impl Default for QuadratureConfig {
    fn default() -> Self {
        Self {
            substeps: 4,
            prediction_pieces: 64,
        }
    }
}

/// Linear readout of the truncated signature plus static effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "CoxSigJson", try_from = "CoxSigJson")]
pub struct CoxSigParams {
    pub depth: usize,
    /// Path dimension including the time channel.
    pub dim: usize,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Append the first observed value to the statics.
    pub plus: bool,
}

#[derive(Serialize, Deserialize)]
struct CoxSigJson {
    depth: usize,
    alpha: BTreeMap<String, f64>,
    beta: Vec<f64>,
    plus: bool,
}

impl From<CoxSigParams> for CoxSigJson {
    fn from(p: CoxSigParams) -> Self {
        let words = all_words(p.dim, p.depth).expect("valid shape");
        Self {
            depth: p.depth,
            alpha: words
                .iter()
                .zip(&p.alpha)
                .map(|(w, a)| (w.to_string(), *a))
                .collect(),
            beta: p.beta,
            plus: p.plus,
        }
    }
}

impl TryFrom<CoxSigJson> for CoxSigParams {
    type Error = IntensityError;

    fn try_from(j: CoxSigJson) -> Result<Self> {
        let words = j
            .alpha
            .keys()
            .map(|k| k.parse::<Word>())
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let dim = words
            .iter()
            .flat_map(|w| w.letters().iter().copied())
            .max()
            .ok_or_else(|| IntensityError::BadParams("empty alpha".into()))?;
        let mut alpha = vec![0.0; sig_dim(dim, j.depth)];
        for (w, v) in words.iter().zip(j.alpha.values()) {
            alpha[word_index(w, dim, j.depth)?] = *v;
        }
        Ok(Self {
            depth: j.depth,
            dim,
            alpha,
            beta: j.beta,
            plus: j.plus,
        })
    }
}

impl CoxSigParams {
    pub fn zeros(dim: usize, depth: usize, n_statics: usize, plus: bool) -> Self {
        Self {
            depth,
            dim,
            alpha: vec![0.0; sig_dim(dim, depth)],
            beta: vec![0.0; n_statics],
            plus,
        }
    }

    /// Statics seen by the model (with the first value appended for the plus variant).
    pub fn model_statics(&self, record: &SurvivalRecord) -> Vec<f64> {
        let mut w = record.statics.clone();
        if self.plus {
            w.extend_from_slice(record.first_value());
        }
        w
    }

    fn check(&self, record: &SurvivalRecord) -> Result<Vec<f64>> {
        if record.path.d_raw() + 1 != self.dim {
            return Err(IntensityError::Shape(format!(
                "model expects {} channels, record has {}",
                self.dim,
                record.path.d_raw() + 1
            )));
        }
        let w = self.model_statics(record);
        if w.len() != self.beta.len() {
            return Err(IntensityError::Shape(format!(
                "model expects {} statics, record has {}",
                self.beta.len(),
                w.len()
            )));
        }
        Ok(w)
    }
}

/// Neural controlled ResNet intensity `exp(alpha . z + beta . W)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NcdeParams {
    pub field: NeuralField,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
    /// Feature standardization applied before the latent recursion.
    pub standardizer: Option<Standardizer>,
}

impl NcdeParams {
    fn prepare_path(&self, path: &SampledPath) -> SampledPath {
        match &self.standardizer {
            Some(s) => path.map_values(|j, v| (v - s.mean[j]) / s.scale[j]),
            None => path.clone(),
        }
    }

    fn check(&self, record: &SurvivalRecord) -> Result<()> {
        if record.path.d_raw() + 1 != self.field.d || record.statics.len() != self.beta.len() {
            return Err(IntensityError::Shape(format!(
                "model expects {} channels and {} statics",
                self.field.d,
                self.beta.len()
            )));
        }
        Ok(())
    }

    /// Latent states after each observation of an already standardized path.
    fn latents(&self, path: &SampledPath) -> Result<Vec<Vec<f64>>> {
        let incs = observation_increments(path);
        Ok(forward_unroll(&self.field, &vec![0.0; self.field.p], &incs)?.states)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum IntensityParams {
    CoxSig(CoxSigParams),
    Ncde(NcdeParams),
}

/// How each signature coefficient splits into a prefix and a run of trailing time letters.
///
/// Between observations the signature evolves as `S_k ⊗ exp(u e_time)`, so
/// `alpha . S(t_k + u) = sum_m c_m u^m` with
/// `c_m = sum over words w = prefix . time^m of alpha_w S_k(prefix) / m!`.
#[derive(Debug, Clone)]
pub struct SplitTable {
    depth: usize,
    /// (word, m, prefix index or `None` for the empty prefix)
    splits: Vec<(usize, usize, Option<usize>)>,
    inv_fact: Vec<f64>,
}

impl SplitTable {
    pub fn new(dim: usize, depth: usize) -> Result<Self> {
        let words = all_words(dim, depth)?;
        let mut splits = Vec::new();
        for (wi, w) in words.iter().enumerate() {
            let letters = w.letters();
            let trail = letters.iter().rev().take_while(|&&l| l == dim).count();
            for m in 0..=trail {
                let keep = letters.len() - m;
                let prefix = if keep == 0 {
                    None
                } else {
                    Some(word_index(&Word::new(letters[..keep].to_vec())?, dim, depth)?)
                };
                splits.push((wi, m, prefix));
            }
        }
        let mut inv_fact = vec![1.0; depth + 1];
        for m in 1..=depth {
            inv_fact[m] = inv_fact[m - 1] / m as f64;
        }
        Ok(Self {
            depth,
            splits,
            inv_fact,
        })
    }

    /// Polynomial coefficients `c_0..c_N` of `u -> alpha . (S ⊗ exp(u e_time))`.
    pub fn poly(&self, alpha: &[f64], sig: &[f64]) -> Vec<f64> {
        let mut c = vec![0.0; self.depth + 1];
        for &(w, m, pre) in &self.splits {
            let a = alpha[w];
            if a != 0.0 {
                c[m] += a * pre.map_or(1.0, |p| sig[p]) * self.inv_fact[m];
            }
        }
        c
    }

    /// Adds `scale * d/d alpha [ integral ]` given the moments `M_m = int u^m lambda du`.
    fn add_grad(&self, sig: &[f64], moments: &[f64], scale: f64, grad: &mut [f64]) {
        for &(w, m, pre) in &self.splits {
            grad[w] += scale * pre.map_or(1.0, |p| sig[p]) * moments[m] * self.inv_fact[m];
        }
    }
}

fn horner(c: &[f64], u: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, v| acc * u + v)
}

/// Trapezoid rule for `int_0^len exp(base + poly(u)) du` and optionally its moments.
#[allow(clippy::too_many_arguments)]
fn integrate_interval(
    id: &str,
    t0: f64,
    len: f64,
    base: f64,
    c: &[f64],
    pieces: usize,
    moments: Option<&mut [f64]>,
) -> Result<f64> {
    let h = len / pieces as f64;
    let mut total = 0.0;
    let mut moments = moments;
    for j in 0..=pieces {
        let u = j as f64 * h;
        let lg = check_log(id, t0 + u, base + horner(c, u))?;
        let weight = if j == 0 || j == pieces { 0.5 * h } else { h };
        let lam = weight * lg.exp();
        total += lam;
        if let Some(m) = moments.as_deref_mut() {
            let mut pow = 1.0;
            for slot in m.iter_mut() {
                *slot += lam * pow;
                pow *= u;
            }
        }
    }
    Ok(total)
}

/// Per-record quantities needed by the CoxSig likelihood.
#[derive(Debug, Clone)]
pub struct RecordDesign {
    pub id: String,
    starts: Vec<f64>,
    lens: Vec<f64>,
    /// Flat `K x q` signatures just after each observation.
    sigs: Vec<f64>,
    end: f64,
    event: bool,
    end_sig: Vec<f64>,
    statics: Vec<f64>,
}

impl RecordDesign {
    /// Design on `[0, end]`, using observations up to `end`.
    pub fn build(
        record: &SurvivalRecord,
        statics: Vec<f64>,
        depth: usize,
        end: f64,
        event: bool,
    ) -> Result<Self> {
        let path = record.path.restrict(end);
        let emb = path.embed(end)?;
        let obs = observation_signatures(&emb, depth)?;
        let k = path.len();
        let times = path.times();
        let starts = times.to_vec();
        let lens = (0..k)
            .map(|i| times.get(i + 1).copied().unwrap_or(end) - times[i])
            .collect();
        let mut end_sig = obs[k - 1].clone();
        end_sig.extend_axis(emb.dim() - 1, end - times[k - 1]);
        let sigs = obs.into_iter().flat_map(SigVector::into_coeffs).collect();
        Ok(Self {
            id: record.id.clone(),
            starts,
            lens,
            sigs,
            end,
            event,
            end_sig: end_sig.into_coeffs(),
            statics,
        })
    }

    pub fn end(&self) -> f64 {
        self.end
    }
}

/// Precomputed signatures for a dataset at a fixed depth.
#[derive(Debug, Clone)]
pub struct CoxSigDesign {
    pub dim: usize,
    pub depth: usize,
    pub plus: bool,
    pub n_statics: usize,
    table: Arc<SplitTable>,
    records: Vec<Arc<RecordDesign>>,
}

/// Value and optional gradient of the averaged negative log-likelihood.
#[derive(Debug, Clone, PartialEq)]
pub struct NllEval {
    pub value: f64,
    pub grad_alpha: Vec<f64>,
    pub grad_beta: Vec<f64>,
}

impl CoxSigDesign {
    pub fn build(data: &Dataset, depth: usize, plus: bool) -> Result<Self> {
        if data.is_empty() {
            return Err(IntensityError::EmptyDataset);
        }
        let dim = data.d_raw() + 1;
        let shape = CoxSigParams::zeros(dim, depth, 0, plus);
        let records = data
            .records
            .iter()
            .map(|r| {
                let w = shape.model_statics(r);
                RecordDesign::build(r, w, depth, r.event_time, r.event).map(Arc::new)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            dim,
            depth,
            plus,
            n_statics: data.n_statics() + if plus { data.d_raw() } else { 0 },
            table: Arc::new(SplitTable::new(dim, depth)?),
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn q(&self) -> usize {
        sig_dim(self.dim, self.depth)
    }

    pub fn subset(&self, idx: &[usize]) -> Self {
        Self {
            records: idx.iter().map(|&i| Arc::clone(&self.records[i])).collect(),
            ..self.clone_shape()
        }
    }

    fn clone_shape(&self) -> Self {
        Self {
            dim: self.dim,
            depth: self.depth,
            plus: self.plus,
            n_statics: self.n_statics,
            table: Arc::clone(&self.table),
            records: Vec::new(),
        }
    }

    /// Root-mean-square of each signature coefficient over all observation rows,
    /// and of each static over records. Zero columns get scale 1.
    pub fn feature_scales(&self) -> (Vec<f64>, Vec<f64>) {
        let q = self.q();
        let mut sa = vec![0.0; q];
        let mut rows = 0usize;
        for r in &self.records {
            for row in r.sigs.chunks(q) {
                for (s, v) in sa.iter_mut().zip(row) {
                    *s += v * v;
                }
                rows += 1;
            }
        }
        let mut sb = vec![0.0; self.n_statics];
        for r in &self.records {
            for (s, v) in sb.iter_mut().zip(&r.statics) {
                *s += v * v;
            }
        }
        let finish = |v: &mut Vec<f64>, n: usize| {
            for s in v.iter_mut() {
                let rms = (*s / n.max(1) as f64).sqrt();
                *s = if rms > 1e-12 { rms } else { 1.0 };
            }
        };
        finish(&mut sa, rows);
        finish(&mut sb, self.records.len());
        (sa, sb)
    }

    pub fn zero_params(&self) -> CoxSigParams {
        CoxSigParams::zeros(self.dim, self.depth, self.n_statics, self.plus)
    }

    /// Averaged negative log-likelihood, with its gradient when `with_grad`.
    pub fn evaluate(
        &self,
        alpha: &[f64],
        beta: &[f64],
        quad: &QuadratureConfig,
        with_grad: bool,
    ) -> Result<NllEval> {
        if self.records.is_empty() {
            return Err(IntensityError::EmptyDataset);
        }
        let q = self.q();
        if alpha.len() != q || beta.len() != self.n_statics {
            return Err(IntensityError::Shape(format!(
                "expected alpha of length {q} and beta of length {}",
                self.n_statics
            )));
        }
        let pieces = quad.substeps.max(1);
        let mut value = 0.0;
        let mut ga = vec![0.0; if with_grad { q } else { 0 }];
        let mut gb = vec![0.0; if with_grad { beta.len() } else { 0 }];
        let mut moments = vec![0.0; self.depth + 1];
        for r in &self.records {
            let bw = dot(beta, &r.statics);
            let mut hazard = 0.0;
            for (k, (&t0, &len)) in r.starts.iter().zip(&r.lens).enumerate() {
                if len <= 0.0 {
                    continue;
                }
                let sig = &r.sigs[k * q..(k + 1) * q];
                let c = self.table.poly(alpha, sig);
                if with_grad {
                    moments.iter_mut().for_each(|m| *m = 0.0);
                    hazard +=
                        integrate_interval(&r.id, t0, len, bw, &c, pieces, Some(&mut moments))?;
                    self.table.add_grad(sig, &moments, 1.0, &mut ga);
                } else {
                    hazard += integrate_interval(&r.id, t0, len, bw, &c, pieces, None)?;
                }
            }
            value += hazard;
            let delta = if r.event { 1.0 } else { 0.0 };
            if r.event {
                let lg = check_log(&r.id, r.end, dot(alpha, &r.end_sig) + bw)?;
                value -= lg;
                if with_grad {
                    for (g, s) in ga.iter_mut().zip(&r.end_sig) {
                        *g -= s;
                    }
                }
            }
            if with_grad {
                for (g, w) in gb.iter_mut().zip(&r.statics) {
                    *g += w * (hazard - delta);
                }
            }
        }
        let n = self.records.len() as f64;
        ga.iter_mut().chain(gb.iter_mut()).for_each(|g| *g /= n);
        Ok(NllEval {
            value: value / n,
            grad_alpha: ga,
            grad_beta: gb,
        })
    }
}

/// Log-intensity at `s` using observations up to `min(s, freeze_at)`.
pub fn log_intensity(
    params: &IntensityParams,
    record: &SurvivalRecord,
    s: f64,
    freeze_at: Option<f64>,
) -> Result<f64> {
    let cut = freeze_at.map_or(s, |f| f.min(s));
    match params {
        IntensityParams::CoxSig(p) => {
            let w = p.check(record)?;
            let emb = record.path.restrict(cut).embed(s)?;
            let sig = path_signature(&emb, s, p.depth)?;
            Ok(sig.dot(&p.alpha) + dot(&p.beta, &w))
        }
        IntensityParams::Ncde(p) => {
            p.check(record)?;
            let path = p.prepare_path(&record.path.restrict(cut));
            let z = p.latents(&path)?;
            Ok(dot(&p.alpha, z.last().unwrap()) + dot(&p.beta, &record.statics))
        }
    }
}

/// `(1/n) sum_i [ int_0^{T_i} lambda_i - Delta_i log lambda_i(T_i) ]`.
pub fn neg_log_likelihood(
    params: &IntensityParams,
    data: &Dataset,
    quad: &QuadratureConfig,
) -> Result<f64> {
    match params {
        IntensityParams::CoxSig(p) => {
            let design = CoxSigDesign::build(data, p.depth, p.plus)?;
            Ok(design.evaluate(&p.alpha, &p.beta, quad, false)?.value)
        }
        IntensityParams::Ncde(p) => {
            if data.is_empty() {
                return Err(IntensityError::EmptyDataset);
            }
            let prepared: Vec<SurvivalRecord> = data
                .records
                .iter()
                .map(|r| {
                    p.check(r)?;
                    let mut r = r.clone();
                    r.path = p.prepare_path(&r.path);
                    Ok(r)
                })
                .collect::<Result<_>>()?;
            let refs: Vec<&SurvivalRecord> = prepared.iter().collect();
            Ok(ncde_nll(p, &refs, false)?.0)
        }
    }
}

/// Analytic gradient of the CoxSig likelihood `(d/d alpha, d/d beta)`.
pub fn nll_gradient_coxsig(
    params: &CoxSigParams,
    data: &Dataset,
    quad: &QuadratureConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let design = CoxSigDesign::build(data, params.depth, params.plus)?;
    let e = design.evaluate(&params.alpha, &params.beta, quad, true)?;
    Ok((e.grad_alpha, e.grad_beta))
}

/// Gradient of the NCDE likelihood with respect to all parameters.
#[derive(Debug, Clone)]
pub struct NcdeGrad {
    pub field: NeuralField,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

/// Averaged NLL over already standardized records, with gradients when requested.
/// The latent state is piecewise constant, so the hazard integral is an exact sum.
pub fn ncde_nll(
    p: &NcdeParams,
    records: &[&SurvivalRecord],
    with_grad: bool,
) -> Result<(f64, Option<NcdeGrad>)> {
    if records.is_empty() {
        return Err(IntensityError::EmptyDataset);
    }
    let mut grad = NcdeGrad {
        field: p.field.zeros_like(),
        alpha: vec![0.0; p.alpha.len()],
        beta: vec![0.0; p.beta.len()],
    };
    let n = records.len() as f64;
    let mut total = 0.0;
    for r in records {
        let incs = observation_increments(&r.path);
        let unroll = forward_unroll(&p.field, &vec![0.0; p.field.p], &incs)?;
        let bw = dot(&p.beta, &r.statics);
        let times = r.path.times();
        let k = times.len();
        let mut state_grads = vec![vec![0.0; p.field.p]; k];
        let mut hazard = 0.0;
        for i in 0..k {
            let len = times.get(i + 1).copied().unwrap_or(r.event_time) - times[i];
            let z = &unroll.states[i];
            let lg = check_log(&r.id, times[i], dot(&p.alpha, z) + bw)?;
            if len > 0.0 {
                let lam = lg.exp() * len;
                hazard += lam;
                if with_grad {
                    for (g, a) in state_grads[i].iter_mut().zip(&p.alpha) {
                        *g += lam * a / n;
                    }
                    for (ga, zv) in grad.alpha.iter_mut().zip(z) {
                        *ga += lam * zv / n;
                    }
                }
            }
        }
        total += hazard;
        let delta = if r.event { 1.0 } else { 0.0 };
        if r.event {
            let z = &unroll.states[k - 1];
            total -= dot(&p.alpha, z) + bw;
            if with_grad {
                for (g, a) in state_grads[k - 1].iter_mut().zip(&p.alpha) {
                    *g -= a / n;
                }
                for (ga, zv) in grad.alpha.iter_mut().zip(z) {
                    *ga -= zv / n;
                }
            }
        }
        if with_grad {
            for (gb, w) in grad.beta.iter_mut().zip(&r.statics) {
                *gb += w * (hazard - delta) / n;
            }
            backward_unroll(&p.field, &unroll, &incs, &state_grads, &mut grad.field);
        }
    }
    let value = total / n;
    if !value.is_finite() {
        return Err(IntensityError::Latent(CdeError::NonFinite("likelihood")));
    }
    Ok((value, with_grad.then_some(grad)))
}

/// Log-intensity of one record as a time polynomial on each inter-observation interval.
#[derive(Debug, Clone, PartialEq)]
pub struct LogIntensityCurve {
    times: Vec<f64>,
    polys: Vec<Vec<f64>>,
    base: f64,
}

impl LogIntensityCurve {
    /// CoxSig curve along `path` with the model statics `w` (already including any first value).
    pub fn coxsig(p: &CoxSigParams, table: &SplitTable, path: &SampledPath, w: &[f64]) -> Result<Self> {
        let emb = path.embed(path.last_time())?;
        let sigs = observation_signatures(&emb, p.depth)?;
        Ok(Self {
            times: path.times().to_vec(),
            polys: sigs.iter().map(|s| table.poly(&p.alpha, s.coeffs())).collect(),
            base: dot(&p.beta, w),
        })
    }

    /// Observation times; the curve is smooth between consecutive ones.
    pub fn breakpoints(&self) -> &[f64] {
        &self.times
    }

    pub fn polys(&self) -> &[Vec<f64>] {
        &self.polys
    }

    pub fn base(&self) -> f64 {
        self.base
    }

    /// Log-intensity at `s`, using the observations at or before `s`.
    pub fn log_at(&self, s: f64) -> f64 {
        let k = self.times.partition_point(|&t| t <= s).max(1) - 1;
        self.base + horner(&self.polys[k], s - self.times[k])
    }
}

/// Evaluates hazards and conditional survival for a fixed model.
#[derive(Debug, Clone)]
pub struct Predictor {
    params: IntensityParams,
    table: Option<SplitTable>,
    quad: QuadratureConfig,
}

impl Predictor {
    pub fn new(params: IntensityParams, quad: QuadratureConfig) -> Result<Self> {
        let table = match &params {
            IntensityParams::CoxSig(p) => Some(SplitTable::new(p.dim, p.depth)?),
            IntensityParams::Ncde(_) => None,
        };
        Ok(Self {
            params,
            table,
            quad,
        })
    }

    pub fn params(&self) -> &IntensityParams {
        &self.params
    }

    /// Piecewise-polynomial log-intensity along the observed path of `record`.
    pub fn curve(&self, record: &SurvivalRecord) -> Result<LogIntensityCurve> {
        match &self.params {
            IntensityParams::CoxSig(p) => {
                let w = p.check(record)?;
                let table = self.table.as_ref().expect("coxsig table");
                LogIntensityCurve::coxsig(p, table, &record.path, &w)
            }
            IntensityParams::Ncde(p) => {
                p.check(record)?;
                let z = p.latents(&p.prepare_path(&record.path))?;
                Ok(LogIntensityCurve {
                    times: record.path.times().to_vec(),
                    polys: z.iter().map(|z| vec![dot(&p.alpha, z)]).collect(),
                    base: dot(&p.beta, &record.statics),
                })
            }
        }
    }

    /// `int_0^{t ∧ T} lambda(s) ds`.
    pub fn cumulative_hazard(&self, record: &SurvivalRecord, t: f64) -> Result<f64> {
        let end = t.min(record.event_time);
        if end <= 0.0 {
            return Ok(0.0);
        }
        match &self.params {
            IntensityParams::CoxSig(p) => {
                let w = p.check(record)?;
                let rd = RecordDesign::build(record, w, p.depth, end, false)?;
                let table = self.table.as_ref().expect("coxsig table");
                let q = p.alpha.len();
                let bw = dot(&p.beta, &rd.statics);
                let mut total = 0.0;
                for (k, (&t0, &len)) in rd.starts.iter().zip(&rd.lens).enumerate() {
                    if len > 0.0 {
                        let c = table.poly(&p.alpha, &rd.sigs[k * q..(k + 1) * q]);
                        total += integrate_interval(
                            &rd.id,
                            t0,
                            len,
                            bw,
                            &c,
                            self.quad.substeps.max(1),
                            None,
                        )?;
                    }
                }
                Ok(total)
            }
            IntensityParams::Ncde(p) => {
                p.check(record)?;
                let path = p.prepare_path(&record.path.restrict(end));
                let z = p.latents(&path)?;
                let bw = dot(&p.beta, &record.statics);
                let times = path.times();
                let mut total = 0.0;
                for (i, zi) in z.iter().enumerate() {
                    let len = times.get(i + 1).copied().unwrap_or(end) - times[i];
                    let lg = check_log(&record.id, times[i], dot(&p.alpha, zi) + bw)?;
                    total += lg.exp() * len;
                }
                Ok(total)
            }
        }
    }

    /// Survival over `[t, t + dt]` with features frozen at `t`.
    pub fn conditional_survival(&self, record: &SurvivalRecord, t: f64, dt: f64) -> Result<f64> {
        self.frozen_survival(record, t, t, t + dt)
    }

    /// `exp(-int_a^b lambda(u) du)` with features frozen at `freeze <= a`.
    pub fn frozen_survival(&self, record: &SurvivalRecord, freeze: f64, a: f64, b: f64) -> Result<f64> {
        if b <= a {
            return Ok(1.0);
        }
        let integral = match &self.params {
            IntensityParams::CoxSig(p) => {
                let w = p.check(record)?;
                let emb = record.path.restrict(freeze).embed(freeze)?;
                let sig = path_signature(&emb, freeze, p.depth)?;
                let table = self.table.as_ref().expect("coxsig table");
                let c = table.poly(&p.alpha, sig.coeffs());
                // shift the polynomial origin from `freeze` to `a`
                let shifted = shift_poly(&c, a - freeze);
                integrate_interval(
                    &record.id,
                    a,
                    b - a,
                    dot(&p.beta, &w),
                    &shifted,
                    self.quad.prediction_pieces.max(1),
                    None,
                )?
            }
            IntensityParams::Ncde(p) => {
                p.check(record)?;
                let path = p.prepare_path(&record.path.restrict(freeze));
                let z = p.latents(&path)?;
                let lg = check_log(
                    &record.id,
                    freeze,
                    dot(&p.alpha, z.last().unwrap()) + dot(&p.beta, &record.statics),
                )?;
                lg.exp() * (b - a)
            }
        };
        Ok((-integral).exp())
    }
}

/// Coefficients of `u -> poly(u + s)`.
fn shift_poly(c: &[f64], s: f64) -> Vec<f64> {
    if s == 0.0 {
        return c.to_vec();
    }
    let n = c.len();
    let mut out = vec![0.0; n];
    // binomial expansion of each term
    for (k, &ck) in c.iter().enumerate() {
        let mut binom = 1.0;
        for j in 0..=k {
            out[j] += ck * binom * s.powi((k - j) as i32);
            binom = binom * (k - j) as f64 / (j + 1) as f64;
        }
    }
    out
}

/// `int_0^{t ∧ T} lambda(s) ds`.
pub fn cumulative_hazard(
    params: &IntensityParams,
    record: &SurvivalRecord,
    t: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    Predictor::new(params.clone(), *quad)?.cumulative_hazard(record, t)
}

/// Probability of surviving `[t, t + dt]` given features observed up to `t`.
pub fn conditional_survival(
    params: &IntensityParams,
    record: &SurvivalRecord,
    t: f64,
    dt: f64,
    quad: &QuadratureConfig,
) -> Result<f64> {
    Predictor::new(params.clone(), *quad)?.conditional_survival(record, t, dt)
}
