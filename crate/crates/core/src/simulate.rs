//! Seeded synthetic survival data: fBm drivers, OU and tumor hitting times, thinning.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::{CoxSigParams, IntensityError, LogIntensityCurve, SplitTable};
use crate::signature::SigError;
use crate::timeseries::{DataError, Dataset, SampledPath, SurvivalRecord};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("fBm covariance is not positive definite")]
    NotPositiveDefinite,
    #[error("state blow-up in record {0}")]
    BlowUp(usize),
    #[error("non-finite intensity while scanning record {0}")]
    NonFiniteIntensity(usize),
    #[error("intensity {value} above envelope {envelope} in record {record}")]
    EnvelopeExceeded {
        record: usize,
        value: f64,
        envelope: f64,
    },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Signature(#[from] SigError),
    #[error(transparent)]
    Intensity(#[from] IntensityError),
}

/// Independent stream per record, reproducible regardless of generation order.
pub fn record_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Equispaced grid of `n_points` on `[0, horizon]`, including both ends.
pub fn uniform_grid(n_points: usize, horizon: f64) -> Vec<f64> {
    (0..n_points)
        .map(|k| horizon * k as f64 / (n_points - 1) as f64)
        .collect()
}

/// Exact fractional Brownian motion sampler on a fixed grid (Cholesky of the covariance).
#[derive(Debug, Clone)]
pub struct FbmSampler {
    times: Vec<f64>,
    chol: DMatrix<f64>,
}

impl FbmSampler {
    pub fn new(hurst: f64, n_points: usize, horizon: f64) -> Result<Self, SimError> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(SimError::Config(format!("Hurst index {hurst} outside (0, 1)")));
        }
        if n_points < 2 || horizon <= 0.0 {
            return Err(SimError::Config("grid needs >= 2 points and positive horizon".into()));
        }
        let times = uniform_grid(n_points, horizon);
        let m = n_points - 1;
        let h2 = 2.0 * hurst;
        let cov = DMatrix::from_fn(m, m, |i, j| {
            let (t, s) = (times[i + 1], times[j + 1]);
            0.5 * (t.powf(h2) + s.powf(h2) - (t - s).abs().powf(h2))
        });
        let chol = match cov.clone().cholesky() {
            Some(c) => c.unpack(),
            None => {
                let jitter = 1e-12 * cov.diagonal().max();
                let mut cov = cov;
                for i in 0..m {
                    cov[(i, i)] += jitter;
                }
                cov.cholesky().ok_or(SimError::NotPositiveDefinite)?.unpack()
            }
        };
        Ok(Self { times, chol })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// One channel; `x(0) = 0`.
    pub fn sample<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let m = self.times.len() - 1;
        let z = DVector::from_fn(m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let x = &self.chol * z;
        let mut out = Vec::with_capacity(m + 1);
        out.push(0.0);
        out.extend(x.iter());
        out
    }
}

/// `n_paths` dense fBm paths with `channels` independent channels each.
pub fn fbm_paths(
    hurst: f64,
    n_points: usize,
    horizon: f64,
    channels: usize,
    n_paths: usize,
    seed: u64,
) -> Result<Vec<SampledPath>, SimError> {
    let sampler = FbmSampler::new(hurst, n_points, horizon)?;
    (0..n_paths)
        .map(|i| {
            let mut rng = record_rng(seed, i);
            let chans: Vec<Vec<f64>> = (0..channels).map(|_| sampler.sample(&mut rng)).collect();
            Ok(SampledPath::new(
                sampler.times().to_vec(),
                interleave(&chans),
                channels,
            )?)
        })
        .collect()
}

fn interleave(chans: &[Vec<f64>]) -> Vec<f64> {
    let k = chans.first().map_or(0, Vec::len);
    (0..k).flat_map(|i| chans.iter().map(move |c| c[i])).collect()
}

fn feature_names(d: usize) -> Vec<String> {
    (1..=d).map(|j| format!("f{j}")).collect()
}

/// Observed record for a hitting time at grid index `hit` (or censored at the horizon).
fn hitting_record(
    id: usize,
    dense: &SampledPath,
    hit: Option<usize>,
    keep_every: usize,
) -> Result<SurvivalRecord, SimError> {
    let tau = dense.last_time();
    let (t, event) = match hit {
        Some(k) => (dense.times()[k], true),
        None => (tau, false),
    };
    let observed = dense.observe_on_grid(keep_every, t);
    Ok(SurvivalRecord::new(id.to_string(), observed, vec![], t, event)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OuConfig {
    pub n: usize,
    pub d_features: usize,
    pub sigma: f64,
    pub mu: f64,
    pub omega: f64,
    pub hurst: f64,
    pub threshold: f64,
    pub n_points: usize,
    pub horizon: f64,
    /// Include the time channel in the summed driver increments.
    pub drift_includes_time: bool,
    pub keep_every: usize,
    pub seed: u64,
}

impl Default for OuConfig {
    fn default() -> Self {
        Self {
            n: 500,
            d_features: 4,
            sigma: 1.0,
            mu: 0.1,
            omega: 0.1,
            hurst: 0.6,
            threshold: 2.5,
            n_points: 1000,
            horizon: 10.0,
            drift_includes_time: true,
            keep_every: 1,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct OuOutput {
    pub dataset: Dataset,
    /// Hidden `w` trajectory of each record on the simulation grid.
    pub latent: Vec<Vec<f64>>,
}

/// Hitting times of an OU process driven by fBm features plus unobserved noise.
pub fn ou_hitting_dataset(cfg: &OuConfig) -> Result<OuOutput, SimError> {
    if cfg.sigma < 0.0 || cfg.keep_every == 0 {
        return Err(SimError::Config("sigma must be >= 0 and keep_every >= 1".into()));
    }
    let sampler = FbmSampler::new(cfg.hurst, cfg.n_points, cfg.horizon)?;
    let times = sampler.times().to_vec();
    let dt = times[1] - times[0];
    let mut records = Vec::with_capacity(cfg.n);
    let mut latent = Vec::with_capacity(cfg.n);
    for i in 0..cfg.n {
        let mut rng = record_rng(cfg.seed, i);
        let chans: Vec<Vec<f64>> = (0..cfg.d_features).map(|_| sampler.sample(&mut rng)).collect();
        let mut w = vec![0.0; times.len()];
        let mut hit = None;
        for k in 1..times.len() {
            let dx: f64 = chans.iter().map(|c| c[k] - c[k - 1]).sum::<f64>()
                + if cfg.drift_includes_time { dt } else { 0.0 };
            let noise: f64 = rng.sample(StandardNormal);
            w[k] = w[k - 1] - cfg.omega * (w[k - 1] - cfg.mu) * dt + dx + cfg.sigma * dt.sqrt() * noise;
            if hit.is_none() && w[k] >= cfg.threshold {
                hit = Some(k);
            }
        }
        let dense = SampledPath::new(times.clone(), interleave(&chans), cfg.d_features)?;
        records.push(hitting_record(i, &dense, hit, cfg.keep_every)?);
        latent.push(w);
    }
    let dataset = Dataset::new(records, cfg.horizon, feature_names(cfg.d_features), vec![])?;
    Ok(OuOutput { dataset, latent })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TumorConfig {
    pub n: usize,
    pub lambda0: f64,
    pub lambda1: f64,
    pub kappa1: f64,
    pub kappa2: f64,
    pub psi: f64,
    pub initial: [f64; 4],
    pub threshold: f64,
    pub hurst: f64,
    pub n_points: usize,
    pub horizon: f64,
    pub keep_every: usize,
    pub seed: u64,
}

impl Default for TumorConfig {
    fn default() -> Self {
        Self {
            n: 500,
            lambda0: 0.9,
            lambda1: 0.7,
            kappa1: 10.0,
            kappa2: 0.15,
            psi: 20.0,
            initial: [0.8, 0.0, 0.0, 0.0],
            threshold: 1.7,
            hurst: 0.6,
            n_points: 1000,
            horizon: 10.0,
            keep_every: 1,
            seed: 0,
        }
    }
}

/// Euler integration of the tumor model driven by `drug` on `times`.
/// Returns the state trajectory (4 compartments per time).
pub fn tumor_trajectory(cfg: &TumorConfig, times: &[f64], drug: &[f64]) -> Vec<[f64; 4]> {
    let mut u = cfg.initial;
    let mut out = Vec::with_capacity(times.len());
    out.push(u);
    for k in 1..times.len() {
        let dt = times[k] - times[k - 1];
        let x = drug[k - 1];
        let w: f64 = u.iter().sum();
        let growth = cfg.lambda0 * u[0]
            / (1.0 + (cfg.lambda0 / cfg.lambda1 * w).powf(cfg.psi)).powf(1.0 / cfg.psi);
        let kill = cfg.kappa2 * x * u[0];
        let du = [
            growth - kill,
            kill - cfg.kappa1 * u[1],
            cfg.kappa1 * (u[1] - u[2]),
            cfg.kappa1 * (u[2] - u[3]),
        ];
        for (ui, di) in u.iter_mut().zip(du) {
            *ui += dt * di;
        }
        out.push(u);
    }
    out
}

/// First grid index where the total tumor size reaches the threshold.
pub fn tumor_hit(cfg: &TumorConfig, traj: &[[f64; 4]]) -> Option<usize> {
    traj.iter()
        .position(|u| u.iter().sum::<f64>() >= cfg.threshold)
        .filter(|&k| k > 0)
}

pub fn tumor_growth_dataset(cfg: &TumorConfig) -> Result<Dataset, SimError> {
    if cfg.psi < 1.0 || cfg.lambda0 <= 0.0 || cfg.lambda1 <= 0.0 || cfg.keep_every == 0 {
        return Err(SimError::Config("invalid tumor parameters".into()));
    }
    let sampler = FbmSampler::new(cfg.hurst, cfg.n_points, cfg.horizon)?;
    let times = sampler.times().to_vec();
    let records = (0..cfg.n)
        .map(|i| {
            let mut rng = record_rng(cfg.seed, i);
            let drug = sampler.sample(&mut rng);
            let traj = tumor_trajectory(cfg, &times, &drug);
            if traj.iter().flatten().any(|v| !v.is_finite() || v.abs() > 1e12) {
                return Err(SimError::BlowUp(i));
            }
            let dense = SampledPath::new(times.clone(), drug, 1)?;
            hitting_record(i, &dense, tumor_hit(cfg, &traj), cfg.keep_every)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset::new(records, cfg.horizon, feature_names(1), vec![])?)
}

/// Ogata thinning of event times from a known CoxSig intensity along each driver.
/// The envelope is the scanned maximum of the intensity times 1.2.
pub fn simulate_from_intensity(
    truth: &CoxSigParams,
    drivers: &[SampledPath],
    statics: &[Vec<f64>],
    horizon: f64,
    seed: u64,
) -> Result<Dataset, SimError> {
    if drivers.is_empty() || statics.len() != drivers.len() {
        return Err(SimError::Config("need one statics vector per driver".into()));
    }
    let table = SplitTable::new(truth.dim, truth.depth)?;
    let d_raw = drivers[0].d_raw();
    let records = drivers
        .iter()
        .zip(statics)
        .enumerate()
        .map(|(i, (path, w))| {
            let mut wm = w.clone();
            if truth.plus {
                wm.extend_from_slice(path.row(0));
            }
            let curve = LogIntensityCurve::coxsig(truth, &table, path, &wm)?;
            let mut envelope: f64 = 0.0;
            let scan_points = 8;
            let times = curve.breakpoints();
            for (k, poly) in curve.polys().iter().enumerate() {
                let len = times.get(k + 1).copied().unwrap_or(horizon) - times[k];
                for j in 0..=scan_points {
                    let u = len * j as f64 / scan_points as f64;
                    let l = (curve.base() + poly.iter().rev().fold(0.0, |acc, c| acc * u + c)).exp();
                    if !l.is_finite() {
                        return Err(SimError::NonFiniteIntensity(i));
                    }
                    envelope = envelope.max(l);
                }
            }
            envelope *= 1.2;
            let mut rng = record_rng(seed, i);
            let mut s = 0.0;
            let mut event = None;
            if envelope > 0.0 {
                let exp = Exp::new(envelope).map_err(|e| SimError::Config(e.to_string()))?;
                loop {
                    s += exp.sample(&mut rng);
                    if s > horizon {
                        break;
                    }
                    let l = curve.log_at(s).exp();
                    if l > envelope {
                        return Err(SimError::EnvelopeExceeded {
                            record: i,
                            value: l,
                            envelope,
                        });
                    }
                    if rng.random::<f64>() * envelope <= l {
                        event = Some(s);
                        break;
                    }
                }
            }
            let (t, happened) = match event {
                Some(t) => (t, true),
                None => (horizon, false),
            };
            let observed = path.restrict(t);
            Ok(SurvivalRecord::new(i.to_string(), observed, w.clone(), t, happened)?)
        })
        .collect::<Result<Vec<_>, SimError>>()?;
    let n_statics = statics[0].len();
    Ok(Dataset::new(
        records,
        horizon,
        feature_names(d_raw),
        (1..=n_statics).map(|j| format!("w{j}")).collect(),
    )?)
}

/// Well-specified data: fBm drivers observed on a regular grid, one uniform static
/// and events drawn by thinning from a known depth-2 CoxSig intensity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThinningConfig {
    pub n: usize,
    pub hurst: f64,
    /// Observation times per driver, including `t = 0`.
    pub n_obs: usize,
    pub horizon: f64,
    pub truth: CoxSigParams,
    pub seed: u64,
}

impl Default for ThinningConfig {
    fn default() -> Self {
        let mut truth = CoxSigParams::zeros(2, 2, 1, false);
        // Words x, t, xx, xt, tx, tt.
        truth.alpha = vec![0.6, -0.3, 0.2, 0.0, 0.1, 0.05];
        truth.beta = vec![0.5];
        Self {
            n: 500,
            hurst: 0.6,
            n_obs: 41,
            horizon: 4.0,
            truth,
            seed: 0,
        }
    }
}

/// Drivers and statics for [`ThinningConfig`], then thinning against its truth.
pub fn thinning_dataset(cfg: &ThinningConfig) -> Result<Dataset, SimError> {
    if cfg.n == 0 || cfg.n_obs < 2 || cfg.truth.dim != 2 {
        return Err(SimError::Config(
            "need records, at least two observations and a two-channel truth".into(),
        ));
    }
    let drivers = fbm_paths(cfg.hurst, cfg.n_obs, cfg.horizon, 1, cfg.n, cfg.seed)?;
    let n_statics = cfg.truth.beta.len() - if cfg.truth.plus { 1 } else { 0 };
    let statics: Vec<Vec<f64>> = (0..cfg.n)
        .map(|i| {
            let mut rng = record_rng(cfg.seed.wrapping_add(1), i);
            (0..n_statics).map(|_| rng.random_range(-1.0..1.0)).collect()
        })
        .collect();
    simulate_from_intensity(&cfg.truth, &drivers, &statics, cfg.horizon, cfg.seed.wrapping_add(2))
}

/// Summary written next to simulated datasets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimManifest {
    pub generator: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub n: usize,
    pub censoring_rate: f64,
    pub mean_observations: f64,
    pub config_hash: String,
}
