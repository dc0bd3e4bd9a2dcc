//! Numerical checks of the theory: empirical divergences between intensities, the
//! Pinsker and self-concordance sandwich, differential products and signature
//! linearization of scalar vector fields, truncation and discretization bias bounds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::{IntensityError, IntensityParams, LogIntensityCurve, Predictor, QuadratureConfig};
use crate::latentcde::PolynomialScalarField;
use crate::signature::{path_signature, sig_dim, SigError};
use crate::timeseries::{embed_fill_forward, embed_linear, DataError, Dataset, EmbeddedPath, SampledPath, SurvivalRecord};

#[derive(Debug, Error)]
pub enum DiagError {
    #[error("non-finite intensity for record {0}")]
    Overflow(usize),
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Signature(#[from] SigError),
    #[error(transparent)]
    Data(#[from] DataError),
}

type Result<T> = std::result::Result<T, DiagError>;

/// Largest word length for which differential products are expanded.
pub const MAX_PRODUCT_DEPTH: usize = 10;

/// Number of grid points used for suprema over the latent range.
pub const GAMMA_GRID_POINTS: usize = 1000;

/// Margin applied to the latent bound when scanning for suprema.
pub const GAMMA_MARGIN: f64 = 1.2;

/// Least-squares slope of `ys` against `xs`.
pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        sxy += (x - mx) * (y - my);
        sxx += (x - mx) * (x - mx);
    }
    sxy / sxx
}

// Five-point Gauss-Legendre rule on [-1, 1].
const GL_NODES: [f64; 5] = [
    0.0,
    -0.538_469_310_105_683_1,
    0.538_469_310_105_683_1,
    -0.906_179_845_938_664,
    0.906_179_845_938_664,
];
const GL_WEIGHTS: [f64; 5] = [
    0.568_888_888_888_888_9,
    0.478_628_670_499_366_47,
    0.478_628_670_499_366_47,
    0.236_926_885_056_189_08,
    0.236_926_885_056_189_08,
];

/// Pointwise log-intensity of record `index` at time `s`.
pub trait LogIntensityFn {
    fn log_intensity(&self, index: usize, record: &SurvivalRecord, s: f64) -> f64;
}

impl<F: Fn(usize, &SurvivalRecord, f64) -> f64> LogIntensityFn for F {
    fn log_intensity(&self, index: usize, record: &SurvivalRecord, s: f64) -> f64 {
        self(index, record, s)
    }
}

impl LogIntensityFn for [LogIntensityCurve] {
    fn log_intensity(&self, index: usize, _record: &SurvivalRecord, s: f64) -> f64 {
        self[index].log_at(s)
    }
}

impl LogIntensityFn for Vec<LogIntensityCurve> {
    fn log_intensity(&self, index: usize, _record: &SurvivalRecord, s: f64) -> f64 {
        self[index].log_at(s)
    }
}

/// Per-record log-intensity curves of a fitted model on a dataset.
pub fn model_curves(params: &IntensityParams, data: &Dataset) -> Result<Vec<LogIntensityCurve>> {
    let pred = Predictor::new(params.clone(), QuadratureConfig::default())?;
    Ok(data
        .records
        .iter()
        .map(|r| pred.curve(r))
        .collect::<std::result::Result<_, _>>()?)
}

/// Gauss-Legendre integral over `[0, T_i]` of `f(log truth, log model)`, split at observations.
fn integrate_record<F>(
    truth: &dyn LogIntensityFn,
    model: &dyn LogIntensityFn,
    index: usize,
    record: &SurvivalRecord,
    pieces: usize,
    mut f: F,
) -> Result<()>
where
    F: FnMut(f64, f64, f64),
{
    let end = record.event_time;
    let mut knots: Vec<f64> = record.path.times().iter().copied().filter(|&t| t < end).collect();
    knots.push(end);
    for w in knots.windows(2) {
        let h = (w[1] - w[0]) / pieces as f64;
        for j in 0..pieces {
            let mid = w[0] + (j as f64 + 0.5) * h;
            for (x, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                let s = mid + 0.5 * h * x;
                let lt = truth.log_intensity(index, record, s);
                let lm = model.log_intensity(index, record, s);
                if !lt.is_finite() || !lm.is_finite() {
                    return Err(DiagError::Overflow(index));
                }
                f(0.5 * h * wt, lt, lm);
            }
        }
    }
    Ok(())
}

/// Empirical KL, total-variation and quadratic log divergences between two intensities.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct DivergenceTriple {
    pub kl: f64,
    pub tv: f64,
    pub d2: f64,
}

/// Averages over records of integrals over each record's at-risk period `[0, T_i]`,
/// with `pieces` Gauss-Legendre panels per inter-observation interval.
pub fn empirical_divergences(
    truth: &dyn LogIntensityFn,
    model: &dyn LogIntensityFn,
    data: &Dataset,
    pieces: usize,
) -> Result<DivergenceTriple> {
    if data.is_empty() || pieces == 0 {
        return Err(DiagError::Invalid("need records and at least one panel".into()));
    }
    let mut out = DivergenceTriple::default();
    for (i, r) in data.records.iter().enumerate() {
        integrate_record(truth, model, i, r, pieces, |w, lt, lm| {
            let (a, b) = (lt.exp(), lm.exp());
            out.kl += w * ((lt - lm) * a - (a - b));
            out.tv += w * (a - b).abs();
            out.d2 += w * (lm - lt) * (lm - lt) * a;
        })?;
    }
    let n = data.len() as f64;
    out.kl /= n;
    out.tv /= n;
    out.d2 /= n;
    Ok(out)
}

/// Negative log-likelihood `(1/n) sum_i [int_0^{T_i} lambda - Delta_i log lambda(T_i)]`
/// with the same quadrature as [`empirical_divergences`].
pub fn quadrature_nll(model: &dyn LogIntensityFn, data: &Dataset, pieces: usize) -> Result<f64> {
    let zero = |_: usize, _: &SurvivalRecord, _: f64| 0.0;
    let mut total = 0.0;
    for (i, r) in data.records.iter().enumerate() {
        integrate_record(&zero, model, i, r, pieces, |w, _, lm| total += w * lm.exp())?;
        if r.event {
            let l = model.log_intensity(i, r, r.event_time);
            if !l.is_finite() {
                return Err(DiagError::Overflow(i));
            }
            total -= l;
        }
    }
    Ok(total / data.len() as f64)
}

/// `(nll(model) - nll(truth)) - KL(truth, model)`: the martingale part of the likelihood gap.
pub fn martingale_residual(
    truth: &dyn LogIntensityFn,
    model: &dyn LogIntensityFn,
    data: &Dataset,
    pieces: usize,
) -> Result<f64> {
    let gap = quadrature_nll(model, data, pieces)? - quadrature_nll(truth, data, pieces)?;
    Ok(gap - empirical_divergences(truth, model, data, pieces)?.kl)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecompositionReport {
    pub replicates: usize,
    pub mean: f64,
    pub std_error: f64,
    /// `|mean| < 3 * std_error`.
    pub pass: bool,
}

/// Monte-Carlo mean of the martingale residual over independent datasets from the truth.
pub fn likelihood_decomposition_check(
    truth: &IntensityParams,
    model: &IntensityParams,
    datasets: &[Dataset],
    pieces: usize,
) -> Result<DecompositionReport> {
    let residuals = datasets
        .iter()
        .map(|d| {
            let t = model_curves(truth, d)?;
            let m = model_curves(model, d)?;
            martingale_residual(&t, &m, d, pieces)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize_residuals(&residuals))
}

pub fn summarize_residuals(residuals: &[f64]) -> DecompositionReport {
    let r = residuals.len();
    let mean = residuals.iter().sum::<f64>() / r as f64;
    let var = residuals.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (r as f64 - 1.0).max(1.0);
    let std_error = (var / r as f64).sqrt();
    DecompositionReport {
        replicates: r,
        mean,
        std_error,
        pass: mean.abs() <= 3.0 * std_error,
    }
}

/// Regularity constants of the data-generating model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TheoryConstants {
    /// Lipschitz constant of the driving paths.
    pub lx: f64,
    /// Lipschitz constant of the true vector field.
    pub lg: f64,
    /// Operator norm of the true vector field at the origin.
    pub g0_op: f64,
    /// Bound on the Euclidean norm of the static coefficients.
    pub b_beta2: f64,
    /// Bound on the static features.
    pub b_w: f64,
    pub tau: f64,
    /// Bound on the signature readout of the model.
    pub b_alpha: f64,
}

impl TheoryConstants {
    /// Bound on the true latent state over `[0, tau]`.
    pub fn latent_bound(&self) -> f64 {
        latent_bound(self.g0_op, self.lg, self.lx, self.tau)
    }

    fn model_term(&self) -> f64 {
        self.b_alpha * (self.lx * self.tau).exp()
    }

    /// Pinsker-side constant.
    pub fn c1(&self) -> f64 {
        sandwich_constants(self.latent_bound(), self.model_term(), self.b_beta2 * self.b_w, self.tau).0
    }

    /// Self-concordance-side constant `(e^M - M - 1) / M`.
    pub fn c2(&self) -> f64 {
        sandwich_constants(self.latent_bound(), self.model_term(), self.b_beta2 * self.b_w, self.tau).1
    }
}

/// `(c1, c2)` from bounds on the true and model dynamic log-intensities and on `|beta . W|`.
pub fn sandwich_constants(truth_bound: f64, model_bound: f64, static_bound: f64, tau: f64) -> (f64, f64) {
    let inner = 4.0 / 3.0 * truth_bound.exp() + 2.0 / 3.0 * model_bound.exp();
    let c1 = (-static_bound).exp() / (tau * inner);
    let m = static_bound.exp() * (truth_bound.exp() + model_bound.exp());
    let c2 = if m.exp().is_finite() { (m.exp() - m - 1.0) / m } else { f64::INFINITY };
    (c1, c2)
}

/// Largest `|log lambda - base|` and `|base|` over `[0, T_i]`, sampled on a uniform grid per interval.
pub fn curve_bounds(curves: &[LogIntensityCurve], data: &Dataset, samples: usize) -> (f64, f64) {
    let mut dynamic = 0.0f64;
    let mut stat = 0.0f64;
    for (c, r) in curves.iter().zip(&data.records) {
        stat = stat.max(c.base().abs());
        let knots = c.breakpoints();
        for (k, &a) in knots.iter().enumerate() {
            if a >= r.event_time {
                break;
            }
            let b = knots.get(k + 1).copied().unwrap_or(r.event_time).min(r.event_time);
            for j in 0..=samples {
                let s = a + (b - a) * j as f64 / samples as f64;
                dynamic = dynamic.max((c.log_at(s) - c.base()).abs());
            }
        }
    }
    (dynamic, stat)
}

/// `|G(0)| L_x t exp(L_G L_x t)`.
pub fn latent_bound(g0_op: f64, lg: f64, lx: f64, t: f64) -> f64 {
    g0_op * lx * t * (lg * lx * t).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SandwichCheck {
    pub c1: f64,
    pub c2: f64,
    /// `KL - c1 TV^2`.
    pub lower_slack: f64,
    /// `c2 D^2 - KL`.
    pub upper_slack: f64,
    pub pass: bool,
}

pub fn pinsker_sandwich_check(t: &DivergenceTriple, k: &TheoryConstants) -> SandwichCheck {
    sandwich_with(t, k.c1(), k.c2())
}

/// Evaluates `c1 TV^2 <= KL <= c2 D^2` for explicit constants.
pub fn sandwich_with(t: &DivergenceTriple, c1: f64, c2: f64) -> SandwichCheck {
    let tol = 1e-12 * (1.0 + t.kl.abs());
    let lower = if t.tv == 0.0 { 0.0 } else { c1 * t.tv * t.tv };
    let upper = if t.d2 == 0.0 { 0.0 } else { c2 * t.d2 };
    let lower_slack = t.kl - lower;
    let upper_slack = upper - t.kl;
    SandwichCheck {
        c1,
        c2,
        lower_slack,
        upper_slack,
        pass: lower_slack >= -tol && upper_slack >= -tol,
    }
}

pub fn poly_eval(p: &[f64], h: f64) -> f64 {
    p.iter().rev().fold(0.0, |acc, c| acc * h + c)
}

pub fn poly_deriv(p: &[f64]) -> Vec<f64> {
    p.iter().enumerate().skip(1).map(|(m, c)| m as f64 * c).collect()
}

pub fn poly_mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    if a.is_empty() || b.is_empty() {
        return Vec::new();
    }
    let mut out = vec![0.0; a.len() + b.len() - 1];
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            out[i + j] += x * y;
        }
    }
    out
}

/// Differential product of scalar fields `(f * g)(h) = g'(h) f(h)`.
pub fn differential_product(f: &[f64], g: &[f64]) -> Vec<f64> {
    let mut out = poly_mul(&poly_deriv(g), f);
    if out.is_empty() {
        out.push(0.0);
    }
    while out.len() > 1 && out.last() == Some(&0.0) {
        out.pop();
    }
    out
}

/// Iterated products `G^{i_1} * (G^{i_2} * (... * G^{i_k}))` for every word up to `depth`,
/// grouped by level in lexicographic order.
pub fn word_fields(g: &PolynomialScalarField, depth: usize) -> Result<Vec<Vec<Vec<f64>>>> {
    let d = g.coeffs.len();
    if d == 0 || depth == 0 || depth > MAX_PRODUCT_DEPTH {
        return Err(DiagError::Invalid(format!(
            "need channels and depth in 1..={MAX_PRODUCT_DEPTH}"
        )));
    }
    let mut levels = vec![g.coeffs.clone()];
    for _ in 1..depth {
        let prev = levels.last().unwrap();
        let next: Vec<Vec<f64>> = g
            .coeffs
            .iter()
            .flat_map(|first| prev.iter().map(move |rest| differential_product(first, rest)))
            .collect();
        levels.push(next);
    }
    Ok(levels)
}

/// Signature readout whose dot product with `S_N` linearizes `dz = G(z) dx`, `z(0) = 0`.
pub fn linearize_vector_field(g: &PolynomialScalarField, depth: usize) -> Result<Vec<f64>> {
    let levels = word_fields(g, depth)?;
    let mut alpha = Vec::with_capacity(sig_dim(g.coeffs.len(), depth));
    for level in &levels {
        alpha.extend(level.iter().map(|p| poly_eval(p, 0.0)));
    }
    Ok(alpha)
}

fn scan_grid(m: f64) -> Vec<f64> {
    let r = GAMMA_MARGIN * m;
    if r == 0.0 {
        return vec![0.0];
    }
    (0..GAMMA_GRID_POINTS)
        .map(|i| -r + 2.0 * r * i as f64 / (GAMMA_GRID_POINTS - 1) as f64)
        .collect()
}

/// Supremum of `|G^{i_1} * ... * G^{i_k}(h)|` over all words of length `k` and `|h| <= 1.2 m`.
pub fn gamma_k(g: &PolynomialScalarField, k: usize, m: f64) -> Result<f64> {
    let levels = word_fields(g, k)?;
    let grid = scan_grid(m);
    Ok(levels[k - 1]
        .iter()
        .flat_map(|p| grid.iter().map(move |&h| poly_eval(p, h).abs()))
        .fold(0.0, f64::max))
}

/// `(|G(0)|_2, sup |G'(h)|_2)` over `|h| <= 1.2 m`.
pub fn field_constants(g: &PolynomialScalarField, m: f64) -> (f64, f64) {
    let g0 = g.coeffs.iter().map(|p| poly_eval(p, 0.0).powi(2)).sum::<f64>().sqrt();
    let derivs: Vec<Vec<f64>> = g.coeffs.iter().map(|p| poly_deriv(p)).collect();
    let lg = scan_grid(m.max(1.0))
        .iter()
        .map(|&h| derivs.iter().map(|p| poly_eval(p, h).powi(2)).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    (g0, lg)
}

/// `(d L_x t)^{N+1} / (N+1)! * Gamma_{N+1}` with the latent range `m`.
pub fn truncation_bias_bound(g: &PolynomialScalarField, depth: usize, lx: f64, t: f64, m: f64) -> Result<f64> {
    let d = g.coeffs.len() as f64;
    let k = depth + 1;
    let fact: f64 = (1..=k).map(|i| i as f64).product();
    Ok((d * lx * t).powi(k as i32) / fact * gamma_k(g, k, m)?)
}

/// Largest `|increment| / duration` over the pieces of an embedded path (infinite with jumps).
pub fn path_lipschitz(p: &EmbeddedPath) -> f64 {
    p.segments()
        .iter()
        .map(|s| {
            let norm = s.increment.iter().map(|v| v * v).sum::<f64>().sqrt();
            if s.is_jump() {
                if norm > 0.0 {
                    f64::INFINITY
                } else {
                    0.0
                }
            } else {
                norm / (s.t_end - s.t_start)
            }
        })
        .fold(0.0, f64::max)
}

/// Euclidean length of an embedded path.
pub fn path_one_variation(p: &EmbeddedPath) -> f64 {
    p.segments()
        .iter()
        .map(|s| s.increment.iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LevelBound {
    pub level: usize,
    /// Euclidean norm of the signature level at the horizon.
    pub norm: f64,
    /// `|x|_{1-var}^k / k!`.
    pub bound: f64,
}

/// Compares each signature level with the factorial decay of the path length.
pub fn factorial_decay_check(p: &EmbeddedPath, depth: usize) -> Result<Vec<LevelBound>> {
    let sig = path_signature(p, p.horizon(), depth)?;
    let var = path_one_variation(p);
    let mut fact = 1.0;
    Ok((1..=depth)
        .map(|k| {
            fact *= k as f64;
            LevelBound {
                level: k,
                norm: sig.level(k).iter().map(|v| v * v).sum::<f64>().sqrt(),
                bound: var.powi(k as i32) / fact,
            }
        })
        .collect())
}

/// `2e ((L_x t)^{N-1} - 1) / (L_x t - 1) L_x`, with the limit `2e (N-1) L_x` at `L_x t = 1`.
pub fn c3(depth: usize, lx: f64, t: f64) -> f64 {
    let r = lx * t;
    let ratio = if (r - 1.0).abs() < 1e-12 {
        (depth as f64 - 1.0).max(0.0)
    } else {
        (r.powi(depth as i32 - 1) - 1.0) / (r - 1.0)
    };
    2.0 * std::f64::consts::E * ratio * lx
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationRow {
    pub mesh: f64,
    pub error: f64,
    pub bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscretizationReport {
    pub rows: Vec<DiscretizationRow>,
    /// Log-log slope of error against mesh (NaN with fewer than two nonzero errors).
    pub slope: f64,
    pub lx: f64,
    pub c3: f64,
}

/// Compares the readout of the linear interpolation of `dense` with the fill-forward
/// embeddings of its dyadic subsamples (every `2^l`-th point, `l < levels`).
pub fn discretization_check(
    dense: &SampledPath,
    alpha: &[f64],
    depth: usize,
    levels: usize,
) -> Result<DiscretizationReport> {
    if levels < 3 {
        return Err(DiagError::Invalid("need at least 3 refinement levels".into()));
    }
    let coarsest = 1usize << (levels - 1);
    if !(dense.len() - 1).is_multiple_of(coarsest) {
        return Err(DiagError::Invalid(format!(
            "{} samples are not a dyadic refinement of {} intervals",
            dense.len(),
            (dense.len() - 1) / coarsest
        )));
    }
    if alpha.len() != sig_dim(dense.d_raw() + 1, depth) {
        return Err(DiagError::Invalid("readout length does not match the depth".into()));
    }
    let t = dense.last_time();
    let reference = embed_linear(dense, t)?;
    let s_ref = path_signature(&reference, t, depth)?;
    let lx = path_lipschitz(&reference);
    let c3v = c3(depth, lx, t);
    let a_norm = alpha.iter().map(|v| v * v).sum::<f64>().sqrt();
    let mut rows = Vec::with_capacity(levels);
    for l in 0..levels {
        let step = 1usize << l;
        let idx: Vec<usize> = (0..dense.len()).step_by(step).collect();
        let times: Vec<f64> = idx.iter().map(|&k| dense.times()[k]).collect();
        let values: Vec<f64> = idx.iter().flat_map(|&k| dense.row(k).to_vec()).collect();
        let sub = SampledPath::new(times.clone(), values, dense.d_raw())?;
        let s_sub = path_signature(&embed_fill_forward(&sub, t)?, t, depth)?;
        let mesh = times.windows(2).map(|w| w[1] - w[0]).fold(0.0, f64::max);
        let error = s_ref
            .coeffs()
            .iter()
            .zip(s_sub.coeffs())
            .zip(alpha)
            .map(|((a, b), w)| w * (a - b))
            .sum::<f64>()
            .abs();
        rows.push(DiscretizationRow {
            mesh,
            error,
            bound: c3v * a_norm * mesh,
        });
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter(|r| r.error > 0.0)
        .map(|r| (r.mesh.ln(), r.error.ln()))
        .unzip();
    let slope = if xs.len() >= 2 { ols_slope(&xs, &ys) } else { f64::NAN };
    Ok(DiscretizationReport {
        rows,
        slope,
        lx,
        c3: c3v,
    })
}
