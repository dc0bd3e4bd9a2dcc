//! Irregularly sampled paths, survival records and the fill-forward embedding.
//!
//! A [`SampledPath`] stores raw feature channels only. The time channel is
//! appended as the last coordinate when the path is embedded, so an
//! [`EmbeddedPath`] lives in dimension `d_raw + 1`.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
    #[error("{file}: missing column `{column}`")]
    MissingColumn { file: String, column: String },
    #[error("{file}: cannot parse `{value}` in column `{column}` (row {row})")]
    Parse {
        file: String,
        column: String,
        row: usize,
        value: String,
    },
    #[error("non-finite value in {what} for id `{id}`")]
    NonFinite { id: String, what: String },
    #[error("observation times for id `{id}` are not strictly increasing")]
    NonMonotoneTimes { id: String },
    #[error("id `{id}` appears in {present_in} but not in {missing_from}")]
    IdMismatch {
        id: String,
        present_in: String,
        missing_from: String,
    },
    #[error("duplicate record id `{id}`")]
    DuplicateId { id: String },
    #[error("observation after event for id `{id}` (time {time} > event time {event_time})")]
    ObservationAfterEvent {
        id: String,
        time: f64,
        event_time: f64,
    },
    #[error("event indicator for id `{id}` must be 0 or 1, got `{value}`")]
    BadEventIndicator { id: String, value: String },
    #[error("event time for id `{id}` must be positive, got {value}")]
    NonPositiveEventTime { id: String, value: f64 },
    #[error("path must contain at least one observation")]
    EmptyPath,
    #[error("path starts at {0}, expected 0 (rebase first)")]
    NotRebased(f64),
    #[error("value matrix has {got} entries, expected {expected}")]
    Shape { expected: usize, got: usize },
    #[error("horizon {horizon} precedes last observation time {last}")]
    HorizonTooShort { horizon: f64, last: f64 },
    #[error("mesh needs at least two observations")]
    TooFewPoints,
    #[error("records disagree on {what}: {a} vs {b}")]
    Inconsistent { what: String, a: usize, b: usize },
    #[error("event time {event_time} exceeds horizon {horizon}")]
    BeyondHorizon { event_time: f64, horizon: f64 },
}

/// Observation instants and raw feature values of one individual.
///
/// `values` is row-major with one row of `d_raw` entries per time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<f64>,
    d_raw: usize,
}

impl SampledPath {
    /// Builds a path whose first observation is at time 0.
    pub fn new(times: Vec<f64>, values: Vec<f64>, d_raw: usize) -> Result<Self, DataError> {
        Self::validate(&times, &values, d_raw, "path")?;
        if times[0] != 0.0 {
            return Err(DataError::NotRebased(times[0]));
        }
        Ok(Self {
            times,
            values,
            d_raw,
        })
    }

    /// Shifts times so that the first observation maps to 0. Returns the path
    /// and the offset that was subtracted.
    pub fn rebased(
        mut times: Vec<f64>,
        values: Vec<f64>,
        d_raw: usize,
    ) -> Result<(Self, f64), DataError> {
        Self::validate(&times, &values, d_raw, "path")?;
        let offset = times[0];
        for t in &mut times {
            *t -= offset;
        }
        Ok((
            Self {
                times,
                values,
                d_raw,
            },
            offset,
        ))
    }

    fn validate(times: &[f64], values: &[f64], d_raw: usize, id: &str) -> Result<(), DataError> {
        if times.is_empty() {
            return Err(DataError::EmptyPath);
        }
        if values.len() != times.len() * d_raw {
            return Err(DataError::Shape {
                expected: times.len() * d_raw,
                got: values.len(),
            });
        }
        if times.iter().any(|t| !t.is_finite()) {
            return Err(DataError::NonFinite {
                id: id.to_string(),
                what: "times".into(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                id: id.to_string(),
                what: "values".into(),
            });
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DataError::NonMonotoneTimes { id: id.to_string() });
        }
        Ok(())
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn d_raw(&self) -> usize {
        self.d_raw
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn row(&self, k: usize) -> &[f64] {
        &self.values[k * self.d_raw..(k + 1) * self.d_raw]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().expect("path is never empty")
    }

    /// Index of the last observation at or before `t` (0 if `t` precedes all).
    pub fn last_index_at(&self, t: f64) -> usize {
        self.times.partition_point(|&s| s <= t).saturating_sub(1)
    }

    /// Time-augmented point `(X(t_k), t_k)` of observation `k`.
    pub fn augmented_row(&self, k: usize) -> Vec<f64> {
        let mut p = self.row(k).to_vec();
        p.push(self.times[k]);
        p
    }

    /// Keeps observations with time `<= t`. The first row is always kept.
    pub fn restrict(&self, t: f64) -> SampledPath {
        let keep = self.last_index_at(t) + 1;
        SampledPath {
            times: self.times[..keep].to_vec(),
            values: self.values[..keep * self.d_raw].to_vec(),
            d_raw: self.d_raw,
        }
    }

    /// Sum of Euclidean norms of successive time-augmented increments.
    pub fn total_variation(&self) -> f64 {
        (1..self.len())
            .map(|k| {
                let dt = self.times[k] - self.times[k - 1];
                let dx2: f64 = self
                    .row(k)
                    .iter()
                    .zip(self.row(k - 1))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum();
                (dx2 + dt * dt).sqrt()
            })
            .sum()
    }

    /// Largest gap between consecutive observation times.
    pub fn mesh(&self) -> Result<f64, DataError> {
        if self.len() < 2 {
            return Err(DataError::TooFewPoints);
        }
        Ok(self
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max))
    }

    /// Keeps every `keep_every`-th row (row 0 always retained) and drops rows
    /// after `stop_at`.
    pub fn observe_on_grid(&self, keep_every: usize, stop_at: f64) -> SampledPath {
        let step = keep_every.max(1);
        let mut times = Vec::new();
        let mut values = Vec::new();
        for k in (0..self.len()).step_by(step) {
            if k > 0 && self.times[k] > stop_at {
                break;
            }
            times.push(self.times[k]);
            values.extend_from_slice(self.row(k));
        }
        SampledPath {
            times,
            values,
            d_raw: self.d_raw,
        }
    }

    /// Path with channel values replaced by `f(channel, value)`.
    pub fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> SampledPath {
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i % self.d_raw.max(1), v))
            .collect();
        SampledPath {
            times: self.times.clone(),
            values,
            d_raw: self.d_raw,
        }
    }

    /// Path with all raw channels removed (time channel only after embedding).
    pub fn time_only(&self) -> SampledPath {
        SampledPath {
            times: self.times.clone(),
            values: Vec::new(),
            d_raw: 0,
        }
    }

    /// Fill-forward embedding extended to `horizon`.
    pub fn embed(&self, horizon: f64) -> Result<EmbeddedPath, DataError> {
        embed_fill_forward(self, horizon)
    }
}

/// One linear piece of an embedded path on `[t_start, t_end]`.
///
/// Feature jumps have `t_start == t_end` and a zero time component.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub t_start: f64,
    pub t_end: f64,
    pub start: Vec<f64>,
    pub increment: Vec<f64>,
}

impl Segment {
    pub fn is_jump(&self) -> bool {
        self.t_end == self.t_start
    }
}

/// Piecewise-linear, time-augmented path `s -> (X(t_k), s)` for `s` in `[t_k, t_{k+1})`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedPath {
    dim: usize,
    origin: Vec<f64>,
    segments: Vec<Segment>,
    horizon: f64,
}

impl EmbeddedPath {
    /// Dimension including the time channel.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    /// Reconstructed point at time `s` (right-continuous at jumps).
    pub fn value_at(&self, s: f64) -> Vec<f64> {
        let mut p = self.origin.clone();
        for seg in &self.segments {
            if seg.t_start > s {
                break;
            }
            let frac = if seg.is_jump() || s >= seg.t_end {
                1.0
            } else {
                (s - seg.t_start) / (seg.t_end - seg.t_start)
            };
            for (x, dx) in p.iter_mut().zip(&seg.increment) {
                *x += frac * dx;
            }
        }
        p
    }
}

/// Builds the fill-forward embedding: time advances with frozen features,
/// then features jump at each new observation.
pub fn embed_fill_forward(path: &SampledPath, horizon: f64) -> Result<EmbeddedPath, DataError> {
    let last = path.last_time();
    if horizon < last {
        return Err(DataError::HorizonTooShort { horizon, last });
    }
    let dim = path.d_raw() + 1;
    let origin = path.augmented_row(0);
    let mut segments = Vec::with_capacity(2 * path.len());
    let mut current = origin.clone();
    let time_advance = |current: &mut Vec<f64>, from: f64, to: f64, segs: &mut Vec<Segment>| {
        let mut inc = vec![0.0; dim];
        inc[dim - 1] = to - from;
        let start = current.clone();
        current[dim - 1] = to;
        segs.push(Segment {
            t_start: from,
            t_end: to,
            start,
            increment: inc,
        });
    };
    for k in 1..path.len() {
        let (t0, t1) = (path.times()[k - 1], path.times()[k]);
        time_advance(&mut current, t0, t1, &mut segments);
        let mut inc: Vec<f64> = path
            .row(k)
            .iter()
            .zip(path.row(k - 1))
            .map(|(a, b)| a - b)
            .collect();
        inc.push(0.0);
        let start = current.clone();
        for (x, dx) in current.iter_mut().zip(&inc) {
            *x += dx;
        }
        segments.push(Segment {
            t_start: t1,
            t_end: t1,
            start,
            increment: inc,
        });
    }
    if horizon > last {
        time_advance(&mut current, last, horizon, &mut segments);
    }
    Ok(EmbeddedPath {
        dim,
        origin,
        segments,
        horizon,
    })
}

/// Piecewise-linear interpolation of all channels including time, held constant in
/// features after the last sample. Used as the continuous reference for a sampled path.
pub fn embed_linear(path: &SampledPath, horizon: f64) -> Result<EmbeddedPath, DataError> {
    let last = path.last_time();
    if horizon < last {
        return Err(DataError::HorizonTooShort { horizon, last });
    }
    let dim = path.d_raw() + 1;
    let origin = path.augmented_row(0);
    let mut segments = Vec::with_capacity(path.len());
    for k in 1..path.len() {
        let start = path.augmented_row(k - 1);
        let end = path.augmented_row(k);
        segments.push(Segment {
            t_start: path.times()[k - 1],
            t_end: path.times()[k],
            increment: end.iter().zip(&start).map(|(a, b)| a - b).collect(),
            start,
        });
    }
    if horizon > last {
        let start = path.augmented_row(path.len() - 1);
        let mut increment = vec![0.0; dim];
        increment[dim - 1] = horizon - last;
        segments.push(Segment {
            t_start: last,
            t_end: horizon,
            start,
            increment,
        });
    }
    Ok(EmbeddedPath {
        dim,
        origin,
        segments,
        horizon,
    })
}

/// One individual: path, static covariates, event time and indicator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SurvivalRecord {
    pub id: String,
    pub path: SampledPath,
    pub statics: Vec<f64>,
    pub event_time: f64,
    pub event: bool,
}

impl SurvivalRecord {
    pub fn new(
        id: impl Into<String>,
        path: SampledPath,
        statics: Vec<f64>,
        event_time: f64,
        event: bool,
    ) -> Result<Self, DataError> {
        let id = id.into();
        if !event_time.is_finite() || statics.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                id,
                what: "record".into(),
            });
        }
        if event_time <= 0.0 {
            return Err(DataError::NonPositiveEventTime {
                id,
                value: event_time,
            });
        }
        if path.last_time() > event_time {
            return Err(DataError::ObservationAfterEvent {
                id,
                time: path.last_time(),
                event_time,
            });
        }
        Ok(Self {
            id,
            path,
            statics,
            event_time,
            event,
        })
    }

    /// At-risk indicator `Y(t) = 1{t <= T}`.
    pub fn at_risk(&self, t: f64) -> bool {
        t <= self.event_time
    }

    /// Counting process `N(t)`.
    pub fn count(&self, t: f64) -> u32 {
        u32::from(self.event && self.event_time <= t)
    }

    /// First observed feature values `X(0)`.
    pub fn first_value(&self) -> &[f64] {
        self.path.row(0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub records: Vec<SurvivalRecord>,
    pub horizon: f64,
    pub feature_names: Vec<String>,
    pub static_names: Vec<String>,
}

impl Dataset {
    pub fn new(
        records: Vec<SurvivalRecord>,
        horizon: f64,
        feature_names: Vec<String>,
        static_names: Vec<String>,
    ) -> Result<Self, DataError> {
        let d_raw = feature_names.len();
        let s = static_names.len();
        for r in &records {
            if r.path.d_raw() != d_raw {
                return Err(DataError::Inconsistent {
                    what: "feature channels".into(),
                    a: d_raw,
                    b: r.path.d_raw(),
                });
            }
            if r.statics.len() != s {
                return Err(DataError::Inconsistent {
                    what: "static features".into(),
                    a: s,
                    b: r.statics.len(),
                });
            }
            if r.event_time > horizon {
                return Err(DataError::BeyondHorizon {
                    event_time: r.event_time,
                    horizon,
                });
            }
        }
        Ok(Self {
            records,
            horizon,
            feature_names,
            static_names,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn d_raw(&self) -> usize {
        self.feature_names.len()
    }

    pub fn n_statics(&self) -> usize {
        self.static_names.len()
    }

    /// Subset in the given index order.
    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            horizon: self.horizon,
            feature_names: self.feature_names.clone(),
            static_names: self.static_names.clone(),
        }
    }

    pub fn event_times(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.event_time).collect()
    }

    pub fn censoring_rate(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.records.iter().filter(|r| !r.event).count() as f64 / self.len() as f64
    }

    pub fn mean_observations(&self) -> f64 {
        if self.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.path.len()).sum::<usize>() as f64 / self.len() as f64
    }

    /// Copy with the first observed value appended to the statics.
    pub fn with_first_value_statics(&self) -> Dataset {
        let mut out = self.clone();
        for r in &mut out.records {
            let first = r.path.row(0).to_vec();
            r.statics.extend(first);
        }
        out.static_names
            .extend(self.feature_names.iter().map(|f| format!("{f}_first")));
        out
    }

    pub fn write_csv(&self, longitudinal: &Path, records: &Path) -> Result<(), DataError> {
        let io_err = |p: &Path| {
            let path = p.display().to_string();
            move |source| DataError::Io { path, source }
        };
        let mut long = File::create(longitudinal).map_err(io_err(longitudinal))?;
        let mut header = String::from("id,time");
        for f in &self.feature_names {
            header.push(',');
            header.push_str(f);
        }
        writeln!(long, "{header}").map_err(io_err(longitudinal))?;
        for r in &self.records {
            for k in 0..r.path.len() {
                let mut line = format!("{},{}", r.id, r.path.times()[k]);
                for v in r.path.row(k) {
                    line.push_str(&format!(",{v}"));
                }
                writeln!(long, "{line}").map_err(io_err(longitudinal))?;
            }
        }
        let mut rec = File::create(records).map_err(io_err(records))?;
        let mut header = String::from("id,event_time,event");
        for s in &self.static_names {
            header.push(',');
            header.push_str(s);
        }
        writeln!(rec, "{header}").map_err(io_err(records))?;
        for r in &self.records {
            let mut line = format!("{},{},{}", r.id, r.event_time, u8::from(r.event));
            for v in &r.statics {
                line.push_str(&format!(",{v}"));
            }
            writeln!(rec, "{line}").map_err(io_err(records))?;
        }
        Ok(())
    }
}

fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), DataError> {
    let name = path.display().to_string();
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|source| match source.kind() {
            csv::ErrorKind::Io(_) => DataError::Io {
                path: name.clone(),
                source: std::io::Error::other(source.to_string()),
            },
            _ => DataError::Csv {
                path: name.clone(),
                source,
            },
        })?;
    let header: Vec<String> = rdr
        .headers()
        .map_err(|source| DataError::Csv {
            path: name.clone(),
            source,
        })?
        .iter()
        .map(str::to_string)
        .collect();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|source| DataError::Csv {
            path: name.clone(),
            source,
        })?;
        rows.push(rec.iter().map(str::to_string).collect());
    }
    Ok((header, rows))
}

fn require_column(header: &[String], file: &str, column: &str, pos: usize) -> Result<(), DataError> {
    if header.get(pos).map(String::as_str) != Some(column) {
        return Err(DataError::MissingColumn {
            file: file.to_string(),
            column: column.to_string(),
        });
    }
    Ok(())
}

fn parse_f64(value: &str, file: &str, column: &str, row: usize) -> Result<f64, DataError> {
    value.parse::<f64>().map_err(|_| DataError::Parse {
        file: file.to_string(),
        column: column.to_string(),
        row,
        value: value.to_string(),
    })
}

/// Reads the two-file dataset format (`id,time,f1..` and `id,event_time,event,s1..`).
///
/// Each record's times are rebased so its first observation is at 0; the event
/// time is shifted by the same offset. The horizon is the largest event time.
pub fn load_dataset(longitudinal: &Path, records: &Path) -> Result<Dataset, DataError> {
    let long_name = longitudinal.display().to_string();
    let rec_name = records.display().to_string();
    let (lh, lrows) = read_table(longitudinal)?;
    require_column(&lh, &long_name, "id", 0)?;
    require_column(&lh, &long_name, "time", 1)?;
    let feature_names: Vec<String> = lh[2..].to_vec();
    let (rh, rrows) = read_table(records)?;
    require_column(&rh, &rec_name, "id", 0)?;
    require_column(&rh, &rec_name, "event_time", 1)?;
    require_column(&rh, &rec_name, "event", 2)?;
    let static_names: Vec<String> = rh[3..].to_vec();

    let mut obs: BTreeMap<String, Vec<(f64, Vec<f64>)>> = BTreeMap::new();
    for (i, row) in lrows.iter().enumerate() {
        let t = parse_f64(&row[1], &long_name, "time", i + 2)?;
        let mut vals = Vec::with_capacity(feature_names.len());
        for (j, name) in feature_names.iter().enumerate() {
            vals.push(parse_f64(&row[2 + j], &long_name, name, i + 2)?);
        }
        if !t.is_finite() || vals.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                id: row[0].clone(),
                what: "longitudinal row".into(),
            });
        }
        obs.entry(row[0].clone()).or_default().push((t, vals));
    }

    let mut out = Vec::with_capacity(rrows.len());
    let mut seen = std::collections::HashSet::new();
    for (i, row) in rrows.iter().enumerate() {
        let id = row[0].clone();
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId { id });
        }
        let event_time = parse_f64(&row[1], &rec_name, "event_time", i + 2)?;
        let event = match row[2].as_str() {
            "0" => false,
            "1" => true,
            other => {
                return Err(DataError::BadEventIndicator {
                    id,
                    value: other.to_string(),
                })
            }
        };
        let mut statics = Vec::with_capacity(static_names.len());
        for (j, name) in static_names.iter().enumerate() {
            statics.push(parse_f64(&row[3 + j], &rec_name, name, i + 2)?);
        }
        if !event_time.is_finite() || statics.iter().any(|v| !v.is_finite()) {
            return Err(DataError::NonFinite {
                id,
                what: "record row".into(),
            });
        }
        let mut rows = obs.remove(&id).ok_or_else(|| DataError::IdMismatch {
            id: id.clone(),
            present_in: rec_name.clone(),
            missing_from: long_name.clone(),
        })?;
        rows.sort_by(|a, b| a.0.total_cmp(&b.0));
        if rows.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(DataError::NonMonotoneTimes { id });
        }
        if let Some(last) = rows.last() {
            if last.0 > event_time {
                return Err(DataError::ObservationAfterEvent {
                    id,
                    time: last.0,
                    event_time,
                });
            }
        }
        let times: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let values: Vec<f64> = rows.into_iter().flat_map(|r| r.1).collect();
        let (path, offset) = SampledPath::rebased(times, values, feature_names.len())?;
        out.push(SurvivalRecord::new(
            id,
            path,
            statics,
            event_time - offset,
            event,
        )?);
    }
    if let Some(id) = obs.keys().next() {
        return Err(DataError::IdMismatch {
            id: id.clone(),
            present_in: long_name,
            missing_from: rec_name,
        });
    }
    let horizon = out.iter().map(|r| r.event_time).fold(0.0, f64::max);
    Dataset::new(out, horizon, feature_names, static_names)
}

/// Per-channel affine standardization fitted on a training set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    /// Channel means and standard deviations over all observed rows.
    pub fn fit(data: &Dataset) -> Self {
        let d = data.d_raw();
        let mut sum = vec![0.0; d];
        let mut sq = vec![0.0; d];
        let mut count = 0usize;
        for r in &data.records {
            for k in 0..r.path.len() {
                for (j, v) in r.path.row(k).iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                count += 1;
            }
        }
        let n = count.max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let scale = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let var = (q / n - m * m).max(0.0);
                if var > 1e-24 {
                    var.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        Self { mean, scale }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for r in &mut out.records {
            r.path = r
                .path
                .map_values(|j, v| (v - self.mean[j]) / self.scale[j]);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path(times: &[f64], values: &[f64], d: usize) -> SampledPath {
        SampledPath::new(times.to_vec(), values.to_vec(), d).unwrap()
    }

    #[test]
    fn single_point_embeds_to_time_advance() {
        let p = path(&[0.0], &[3.0, -1.0], 2);
        let e = p.embed(1.0).unwrap();
        assert_eq!(e.segments().len(), 1);
        assert_eq!(e.segments()[0].increment, vec![0.0, 0.0, 1.0]);
    }

    #[test]
    fn two_point_embedding_segments() {
        let p = path(&[0.0, 0.5], &[1.0, 4.0], 1);
        let e = p.embed(1.0).unwrap();
        let incs: Vec<Vec<f64>> = e.segments().iter().map(|s| s.increment.clone()).collect();
        assert_eq!(incs, vec![vec![0.0, 0.5], vec![3.0, 0.0], vec![0.0, 0.5]]);
        assert_eq!(e.value_at(0.7), vec![4.0, 0.7]);
        assert_eq!(e.value_at(0.3), vec![1.0, 0.3]);
        assert!(e.segments().len() <= 2 * p.len() + 1);
    }

    #[test]
    fn segments_chain() {
        let p = path(&[0.0, 0.2, 0.9], &[1.0, 2.0, -1.0], 1);
        let e = p.embed(2.0).unwrap();
        let mut cur = e.origin().to_vec();
        for s in e.segments() {
            for (a, b) in s.start.iter().zip(&cur) {
                assert!((a - b).abs() < 1e-14);
            }
            for (c, d) in cur.iter_mut().zip(&s.increment) {
                *c += d;
            }
        }
        assert!((cur[0] + 1.0).abs() < 1e-14 && (cur[1] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn horizon_before_last_observation_is_rejected() {
        let p = path(&[0.0, 2.0], &[0.0, 1.0], 1);
        assert!(matches!(
            p.embed(1.0),
            Err(DataError::HorizonTooShort { .. })
        ));
    }

    #[test]
    fn restrict_keeps_prefix() {
        let p = path(&[0.0, 1.0, 2.0], &[0.0, 3.0, 1.0], 1);
        assert_eq!(p.restrict(5.0), p);
        assert_eq!(p.restrict(1.5).len(), 2);
        assert_eq!(p.restrict(1.0).len(), 2);
        assert_eq!(p.restrict(0.0).len(), 1);
    }

    #[test]
    fn total_variation_examples() {
        let c = path(&[0.0, 1.0], &[2.0, 2.0], 1);
        assert!((c.total_variation() - 1.0).abs() < 1e-15);
        let p = path(&[0.0, 1.0, 2.0], &[0.0, 3.0, 1.0], 1);
        let expected = 10f64.sqrt() + 5f64.sqrt();
        assert!((p.total_variation() - expected).abs() < 1e-14);
        let end_gap = (1.0f64 + 4.0).sqrt();
        assert!(p.total_variation() >= end_gap);
    }

    #[test]
    fn total_variation_ignores_collinear_insertions() {
        let p = path(&[0.0, 2.0], &[0.0, 4.0], 1);
        let q = path(&[0.0, 0.5, 2.0], &[0.0, 1.0, 4.0], 1);
        assert!((p.total_variation() - q.total_variation()).abs() < 1e-14);
    }

    #[test]
    fn mesh_examples() {
        let times: Vec<f64> = (0..=10).map(|k| k as f64 * 0.1).collect();
        let p = path(&times, &[0.0; 11], 1);
        assert!((p.mesh().unwrap() - 0.1).abs() < 1e-12);
        let q = path(&[0.0, 0.1, 0.9, 1.0], &[0.0; 4], 1);
        assert!((q.mesh().unwrap() - 0.8).abs() < 1e-12);
        let fine: Vec<f64> = (0..=20).map(|k| k as f64 * 0.05).collect();
        let r = path(&fine, &[0.0; 21], 1);
        assert!((r.mesh().unwrap() - p.mesh().unwrap() / 2.0).abs() < 1e-12);
        assert!(matches!(
            path(&[0.0], &[0.0], 1).mesh(),
            Err(DataError::TooFewPoints)
        ));
    }

    #[test]
    fn observe_on_grid_counts() {
        let times: Vec<f64> = (0..1000).map(|k| k as f64 * 0.01).collect();
        let p = path(&times, &vec![1.0; 1000], 1);
        assert_eq!(p.observe_on_grid(1, f64::INFINITY), p);
        assert_eq!(p.observe_on_grid(2, f64::INFINITY).len(), 500);
        let half = p.observe_on_grid(1, 999.0 * 0.01 / 2.0).len();
        assert!((499..=501).contains(&half));
    }

    #[test]
    fn record_rejects_observation_after_event() {
        let p = path(&[0.0, 3.0], &[0.0, 1.0], 1);
        let err = SurvivalRecord::new("a", p, vec![], 2.0, true).unwrap_err();
        assert!(err.to_string().contains("observation after event"));
    }

    #[test]
    fn counting_and_at_risk() {
        let p = path(&[0.0], &[0.0], 1);
        let r = SurvivalRecord::new("a", p, vec![], 2.0, true).unwrap();
        assert!(r.at_risk(2.0) && !r.at_risk(2.1));
        assert_eq!((r.count(1.9), r.count(2.0)), (0, 1));
    }
}
