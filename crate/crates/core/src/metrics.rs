//! Time-dependent survival metrics evaluated on windows `[t, t + dt]`.
//!
//! Risk scores are conditional survival probabilities, so larger means safer.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::intensity::{IntensityError, Predictor};
use crate::timeseries::Dataset;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("length mismatch: {0}")]
    Shape(String),
    #[error("every evaluation point is undefined")]
    AllUndefined,
    #[error("need t1 < t2, got [{0}, {1}]")]
    BadInterval(f64, f64),
    #[error("empty dataset")]
    Empty,
    #[error(transparent)]
    Intensity(#[from] IntensityError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub t: f64,
    pub dt: f64,
}

/// Observed outcomes of a population.
#[derive(Debug, Clone, Copy)]
pub struct Outcomes<'a> {
    pub times: &'a [f64],
    pub events: &'a [bool],
}

impl Outcomes<'_> {
    fn len(&self) -> usize {
        self.times.len()
    }
}

fn check_len(risks: &[f64], o: &Outcomes) -> Result<(), MetricError> {
    if risks.len() != o.times.len() || o.times.len() != o.events.len() {
        return Err(MetricError::Shape(format!(
            "{} risks, {} times, {} indicators",
            risks.len(),
            o.times.len(),
            o.events.len()
        )));
    }
    Ok(())
}

/// Kaplan-Meier estimate of the censoring survival function (right-continuous step).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoringKm {
    jumps: Vec<f64>,
    values: Vec<f64>,
}

impl CensoringKm {
    /// Product-limit estimator with censorings playing the role of events.
    pub fn fit(o: &Outcomes) -> Self {
        let mut order: Vec<usize> = (0..o.len()).collect();
        order.sort_by(|&a, &b| o.times[a].total_cmp(&o.times[b]));
        let mut jumps = Vec::new();
        let mut values = Vec::new();
        let mut g = 1.0;
        let mut i = 0;
        while i < order.len() {
            let t = o.times[order[i]];
            let at_risk = order.len() - i;
            let mut censored = 0;
            let mut j = i;
            while j < order.len() && o.times[order[j]] == t {
                if !o.events[order[j]] {
                    censored += 1;
                }
                j += 1;
            }
            if censored > 0 {
                g *= 1.0 - censored as f64 / at_risk as f64;
                jumps.push(t);
                values.push(g);
            }
            i = j;
        }
        Self { jumps, values }
    }

    pub fn from_dataset(data: &Dataset) -> Self {
        let times = data.event_times();
        let events: Vec<bool> = data.records.iter().map(|r| r.event).collect();
        Self::fit(&Outcomes {
            times: &times,
            events: &events,
        })
    }

    /// `G(t)`, including any drop at `t` itself.
    pub fn eval(&self, t: f64) -> f64 {
        let k = self.jumps.partition_point(|&u| u <= t);
        if k == 0 {
            1.0
        } else {
            self.values[k - 1]
        }
    }
}

/// Concordance between predicted survival and observed ordering of in-window events.
/// `None` when there is no comparable pair.
pub fn c_index(risks: &[f64], o: &Outcomes, ep: EvalPoint) -> Result<Option<f64>, MetricError> {
    Ok(c_index_counts(risks, o, ep)?.0)
}

fn c_index_counts(
    risks: &[f64],
    o: &Outcomes,
    ep: EvalPoint,
) -> Result<(Option<f64>, usize), MetricError> {
    check_len(risks, o)?;
    let mut num = 0usize;
    let mut den = 0usize;
    for j in 0..o.len() {
        let tj = o.times[j];
        if !(o.events[j] && tj >= ep.t && tj <= ep.t + ep.dt) {
            continue;
        }
        for i in 0..o.len() {
            if o.times[i] > tj {
                den += 1;
                if risks[i] > risks[j] {
                    num += 1;
                }
            }
        }
    }
    Ok(((den > 0).then(|| num as f64 / den as f64), den))
}

/// Brier score: in-window events should have low survival, survivors high survival.
pub fn brier(risks: &[f64], o: &Outcomes, ep: EvalPoint) -> Result<f64, MetricError> {
    check_len(risks, o)?;
    if o.len() == 0 {
        return Err(MetricError::Empty);
    }
    let end = ep.t + ep.dt;
    let total: f64 = (0..o.len())
        .map(|i| {
            if o.times[i] <= end && o.events[i] {
                risks[i] * risks[i]
            } else if o.times[i] > end {
                (1.0 - risks[i]).powi(2)
            } else {
                0.0
            }
        })
        .sum();
    Ok(total / o.len() as f64)
}

/// Threshold convention for the weighted Brier score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum WbsThreshold {
    /// Indicators thresholded at `t`.
    #[default]
    AtT,
    /// Indicators thresholded at `t + dt`, like the unweighted score.
    AtWindowEnd,
}

/// IPCW Brier score. Returns the value and the number of records dropped because
/// the censoring weight vanished.
pub fn weighted_brier(
    risks: &[f64],
    o: &Outcomes,
    ep: EvalPoint,
    g: &CensoringKm,
    threshold: WbsThreshold,
) -> Result<(f64, usize), MetricError> {
    check_len(risks, o)?;
    if o.len() == 0 {
        return Err(MetricError::Empty);
    }
    let s = match threshold {
        WbsThreshold::AtT => ep.t,
        WbsThreshold::AtWindowEnd => ep.t + ep.dt,
    };
    let g_s = g.eval(s);
    let mut total = 0.0;
    let mut excluded = 0;
    for i in 0..o.len() {
        let ti = o.times[i];
        let mut terms = Vec::with_capacity(2);
        if ti <= s && o.events[i] {
            terms.push((risks[i] * risks[i], g.eval(ti)));
        }
        let survivor = match threshold {
            WbsThreshold::AtT => ti >= s,
            WbsThreshold::AtWindowEnd => ti > s,
        };
        if survivor {
            terms.push(((1.0 - risks[i]).powi(2), g_s));
        }
        for (term, weight) in terms {
            if weight <= 0.0 {
                excluded += 1;
            } else {
                total += term / weight;
            }
        }
    }
    Ok((total / o.len() as f64, excluded))
}

/// IPCW time-dependent AUC with weights `Delta_j / G(T_j)`. `None` if either marginal is empty.
pub fn auc_td(
    risks: &[f64],
    o: &Outcomes,
    ep: EvalPoint,
    g: &CensoringKm,
) -> Result<Option<f64>, MetricError> {
    check_len(risks, o)?;
    let end = ep.t + ep.dt;
    let weight = |j: usize| -> f64 {
        let gj = g.eval(o.times[j]);
        if o.events[j] && gj > 0.0 {
            1.0 / gj
        } else {
            0.0
        }
    };
    let in_window: Vec<usize> = (0..o.len())
        .filter(|&j| o.times[j] >= ep.t && o.times[j] <= end)
        .collect();
    let survivors: Vec<usize> = (0..o.len()).filter(|&i| o.times[i] > end).collect();
    let wsum: f64 = in_window.iter().map(|&j| weight(j)).sum();
    if survivors.is_empty() || wsum <= 0.0 {
        return Ok(None);
    }
    let mut num = 0.0;
    for &i in &survivors {
        for &j in &in_window {
            if risks[i] > risks[j] {
                num += weight(j);
            }
        }
    }
    Ok(Some(num / (survivors.len() as f64 * wsum)))
}

/// Left-anchored equispaced grid `t1 + k (t2 - t1) / n`, `k = 0..n`.
pub fn averaging_grid(t1: f64, t2: f64, n_points: usize) -> Result<Vec<f64>, MetricError> {
    if t1.partial_cmp(&t2) != Some(std::cmp::Ordering::Less) {
        return Err(MetricError::BadInterval(t1, t2));
    }
    Ok((0..n_points)
        .map(|k| t1 + k as f64 * (t2 - t1) / n_points as f64)
        .collect())
}

/// Mean of a pointwise metric over the averaging grid; undefined points are skipped.
/// Returns the mean and the number of skipped points.
pub fn averaged_metric(
    metric: impl Fn(f64) -> Result<Option<f64>, MetricError>,
    t1: f64,
    t2: f64,
    n_points: usize,
) -> Result<(f64, usize), MetricError> {
    let grid = averaging_grid(t1, t2, n_points)?;
    let mut sum = 0.0;
    let mut used = 0;
    for t in &grid {
        if let Some(v) = metric(*t)? {
            sum += v;
            used += 1;
        }
    }
    if used == 0 {
        return Err(MetricError::AllUndefined);
    }
    Ok((sum / used as f64, grid.len() - used))
}

/// Linear-interpolation percentile (`q` in `[0, 100]`).
pub fn percentile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    if v.is_empty() {
        return f64::NAN;
    }
    let pos = q / 100.0 * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
}

/// Default averaging interval: 5th to 50th percentile of observed event times.
pub fn default_interval(data: &Dataset) -> (f64, f64) {
    let ev: Vec<f64> = data
        .records
        .iter()
        .filter(|r| r.event)
        .map(|r| r.event_time)
        .collect();
    let ev = if ev.is_empty() { data.event_times() } else { ev };
    (percentile(&ev, 5.0), percentile(&ev, 50.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointMetrics {
    pub t: f64,
    pub dt: f64,
    pub c_index: Option<f64>,
    pub brier: Option<f64>,
    pub weighted_brier: Option<f64>,
    pub auc: Option<f64>,
    pub n_at_risk: usize,
    pub n_comparable: usize,
    pub n_weight_excluded: usize,
}

impl PointMetrics {
    /// C-index minus Brier score.
    pub fn mixed(&self) -> Option<f64> {
        Some(self.c_index? - self.brier?)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Averages {
    pub c_index: Option<f64>,
    pub brier: Option<f64>,
    pub weighted_brier: Option<f64>,
    pub auc: Option<f64>,
    pub mixed: Option<f64>,
    pub n_undefined_c_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub points: Vec<PointMetrics>,
    pub averages: Averages,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EvalOptions {
    pub wbs_threshold: WbsThreshold,
}

fn mean_defined(vals: impl Iterator<Item = Option<f64>>) -> (Option<f64>, usize) {
    let mut sum = 0.0;
    let mut used = 0;
    let mut missing = 0;
    for v in vals {
        match v {
            Some(x) => {
                sum += x;
                used += 1;
            }
            None => missing += 1,
        }
    }
    ((used > 0).then(|| sum / used as f64), missing)
}

/// Evaluates a model at each point on the individuals still at risk at `t`.
/// The censoring estimator is fitted on the whole evaluation set.
pub fn evaluate_model(
    predictor: &Predictor,
    data: &Dataset,
    points: &[EvalPoint],
    opts: EvalOptions,
) -> Result<MetricReport, MetricError> {
    if data.is_empty() {
        return Err(MetricError::Empty);
    }
    let g = CensoringKm::from_dataset(data);
    let mut out = Vec::with_capacity(points.len());
    for &ep in points {
        let at_risk: Vec<_> = data.records.iter().filter(|r| r.event_time >= ep.t).collect();
        let times: Vec<f64> = at_risk.iter().map(|r| r.event_time).collect();
        let events: Vec<bool> = at_risk.iter().map(|r| r.event).collect();
        let risks = at_risk
            .iter()
            .map(|r| predictor.conditional_survival(r, ep.t, ep.dt))
            .collect::<Result<Vec<_>, _>>()?;
        let o = Outcomes {
            times: &times,
            events: &events,
        };
        let pm = if at_risk.is_empty() {
            PointMetrics {
                t: ep.t,
                dt: ep.dt,
                c_index: None,
                brier: None,
                weighted_brier: None,
                auc: None,
                n_at_risk: 0,
                n_comparable: 0,
                n_weight_excluded: 0,
            }
        } else {
            let (c, comparable) = c_index_counts(&risks, &o, ep)?;
            let (wbs, excluded) = weighted_brier(&risks, &o, ep, &g, opts.wbs_threshold)?;
            PointMetrics {
                t: ep.t,
                dt: ep.dt,
                c_index: c,
                brier: Some(brier(&risks, &o, ep)?),
                weighted_brier: Some(wbs),
                auc: auc_td(&risks, &o, ep, &g)?,
                n_at_risk: at_risk.len(),
                n_comparable: comparable,
                n_weight_excluded: excluded,
            }
        };
        out.push(pm);
    }
    let (c, missing) = mean_defined(out.iter().map(|p| p.c_index));
    let averages = Averages {
        c_index: c,
        brier: mean_defined(out.iter().map(|p| p.brier)).0,
        weighted_brier: mean_defined(out.iter().map(|p| p.weighted_brier)).0,
        auc: mean_defined(out.iter().map(|p| p.auc)).0,
        mixed: mean_defined(out.iter().map(PointMetrics::mixed)).0,
        n_undefined_c_index: missing,
    };
    Ok(MetricReport {
        points: out,
        averages,
    })
}

/// Points on the default grid for a given window length.
pub fn default_points(data: &Dataset, dt: f64, n_points: usize) -> Result<Vec<EvalPoint>, MetricError> {
    let (t1, t2) = default_interval(data);
    Ok(averaging_grid(t1, t2, n_points)?
        .into_iter()
        .map(|t| EvalPoint { t, dt })
        .collect())
}

impl MetricReport {
    pub fn write_json(&self, path: &Path) -> Result<(), MetricError> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// One row per evaluation point; undefined values are empty cells.
    pub fn write_csv(&self, path: &Path) -> Result<(), MetricError> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record([
            "t",
            "dt",
            "c_index",
            "brier",
            "weighted_brier",
            "auc",
            "n_at_risk",
            "n_comparable",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for p in &self.points {
            w.write_record([
                p.t.to_string(),
                p.dt.to_string(),
                opt(p.c_index),
                opt(p.brier),
                opt(p.weighted_brier),
                opt(p.auc),
                p.n_at_risk.to_string(),
                p.n_comparable.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}
