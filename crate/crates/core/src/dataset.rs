//! Panel data model, time indexing and CSV ingestion.
//!
//! Timestamps are mapped onto an integer grid at ingestion time; everything
//! downstream works with `i64` time indices.

use std::collections::HashMap;
use std::path::Path;

use chrono::{DateTime, NaiveDate, NaiveDateTime, Timelike};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Sampling frequency of the timestamp column.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Frequency {
    /// Timestamps already are integer grid positions.
    #[default]
    Integer,
    /// ISO-8601 datetimes on whole hours; index = hours since the Unix epoch.
    Hourly,
    /// ISO-8601 dates; index = days since the Unix epoch.
    Daily,
}

impl Frequency {
    pub fn parse_time(&self, raw: &str) -> std::result::Result<i64, String> {
        let raw = raw.trim();
        match self {
            Frequency::Integer => raw
                .parse::<i64>()
                .map_err(|_| format!("timestamp {raw:?} is not an integer")),
            Frequency::Daily => {
                let dt = parse_datetime(raw)?;
                if dt.time().num_seconds_from_midnight() != 0 {
                    return Err(format!("timestamp {raw:?} is not aligned to a daily grid"));
                }
                Ok(dt.and_utc().timestamp().div_euclid(86_400))
            }
            Frequency::Hourly => {
                let dt = parse_datetime(raw)?;
                if dt.minute() != 0 || dt.second() != 0 || dt.nanosecond() != 0 {
                    return Err(format!("timestamp {raw:?} is not aligned to an hourly grid"));
                }
                Ok(dt.and_utc().timestamp().div_euclid(3_600))
            }
        }
    }

    /// Inverse of [`Frequency::parse_time`].
    pub fn format_time(&self, t: i64) -> String {
        match self {
            Frequency::Integer => t.to_string(),
            Frequency::Daily => DateTime::from_timestamp(t * 86_400, 0)
                .map(|d| d.date_naive().format("%Y-%m-%d").to_string())
                .unwrap_or_else(|| t.to_string()),
            Frequency::Hourly => DateTime::from_timestamp(t * 3_600, 0)
                .map(|d| d.naive_utc().format("%Y-%m-%dT%H:%M:%S").to_string())
                .unwrap_or_else(|| t.to_string()),
        }
    }
}

fn parse_datetime(raw: &str) -> std::result::Result<NaiveDateTime, String> {
    if let Ok(dt) = DateTime::parse_from_rfc3339(raw) {
        return Ok(dt.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M", "%Y-%m-%d %H:%M"] {
        if let Ok(dt) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Ok(dt);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d")
        .map(|d| d.and_hms_opt(0, 0, 0).expect("midnight is valid"))
        .map_err(|_| format!("timestamp {raw:?} is not ISO-8601"))
}

/// Column roles of a long-format panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataSchema {
    pub id_col: String,
    pub time_col: String,
    pub target_col: String,
    pub freq: Frequency,
    /// Explicit covariate columns. `None` uses every remaining column.
    pub covariates: Option<Vec<String>>,
}

impl Default for DataSchema {
    fn default() -> Self {
        Self {
            id_col: "series_id".into(),
            time_col: "timestamp".into(),
            target_col: "target".into(),
            freq: Frequency::Integer,
            covariates: None,
        }
    }
}

/// Inclusive range of time indices.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimeWindow {
    lo: i64,
    hi: i64,
}

impl TimeWindow {
    pub fn new(lo: i64, hi: i64) -> Result<Self> {
        if lo > hi {
            return Err(Error::InvalidInput(format!("time window [{lo}, {hi}] has lo > hi")));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.hi
    }
}

/// One time series on a contiguous integer grid `start ..= end()`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Series<T> {
    id: String,
    start: i64,
    targets: Vec<T>,
    covariates: Vec<Vec<T>>,
}

impl<T: Scalar> Series<T> {
    /// Builds a series; `covariates[k]` belongs to time `start + k`.
    pub fn new(id: impl Into<String>, start: i64, targets: Vec<T>, covariates: Vec<Vec<T>>) -> Result<Self> {
        let id = id.into();
        if targets.is_empty() {
            return Err(Error::InvalidInput(format!("series {id:?} has no observations")));
        }
        if covariates.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: targets.len(), got: covariates.len() });
        }
        if let Some(width) = covariates.first().map(Vec::len) {
            if let Some(bad) = covariates.iter().find(|c| c.len() != width) {
                return Err(Error::DimensionMismatch { expected: width, got: bad.len() });
            }
        }
        Ok(Self { id, start, targets, covariates })
    }

    /// Series without covariates.
    pub fn univariate(id: impl Into<String>, start: i64, targets: Vec<T>) -> Result<Self> {
        let n = targets.len();
        Self::new(id, start, targets, vec![Vec::new(); n])
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn start(&self) -> i64 {
        self.start
    }

    /// Last observed time index `d_i`.
    pub fn end(&self) -> i64 {
        self.start + self.targets.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn targets(&self) -> &[T] {
        &self.targets
    }

    pub fn covariates(&self) -> &[Vec<T>] {
        &self.covariates
    }

    pub fn covariate_width(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    fn offset(&self, t: i64) -> Option<usize> {
        (t >= self.start && t <= self.end()).then(|| (t - self.start) as usize)
    }

    pub fn target_at(&self, t: i64) -> Option<T> {
        self.offset(t).map(|k| self.targets[k])
    }

    pub fn covariates_at(&self, t: i64) -> Option<&[T]> {
        self.offset(t).map(|k| self.covariates[k].as_slice())
    }

    /// Iterator over `(t, y, x)`.
    pub fn iter(&self) -> impl Iterator<Item = (i64, T, &[T])> + '_ {
        self.targets
            .iter()
            .zip(&self.covariates)
            .enumerate()
            .map(move |(k, (&y, x))| (self.start + k as i64, y, x.as_slice()))
    }

    /// Replaces the target values, keeping ids, times and covariates.
    pub fn with_targets(&self, targets: Vec<T>) -> Result<Self> {
        if targets.len() != self.targets.len() {
            return Err(Error::DimensionMismatch { expected: self.targets.len(), got: targets.len() });
        }
        Ok(Self { targets, ..self.clone() })
    }
}

/// Restricts a series to `window ∩ [start, end]`.
pub fn slice<T: Scalar>(series: &Series<T>, window: TimeWindow) -> Result<Series<T>> {
    let lo = window.lo.max(series.start);
    let hi = window.hi.min(series.end());
    if lo > hi {
        return Err(Error::EmptySlice { series: series.id.clone(), lo: window.lo, hi: window.hi });
    }
    let a = (lo - series.start) as usize;
    let b = (hi - series.start) as usize + 1;
    Ok(Series {
        id: series.id.clone(),
        start: lo,
        targets: series.targets[a..b].to_vec(),
        covariates: series.covariates[a..b].to_vec(),
    })
}

/// A collection of series sharing one covariate schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Panel<T> {
    series: Vec<Series<T>>,
    covariate_names: Vec<String>,
}

impl<T: Scalar> Panel<T> {
    pub fn new(series: Vec<Series<T>>, covariate_names: Vec<String>) -> Result<Self> {
        let mut seen = HashMap::with_capacity(series.len());
        for s in &series {
            if seen.insert(s.id.as_str(), ()).is_some() {
                return Err(Error::InvalidInput(format!("duplicate series id {:?}", s.id)));
            }
            if s.covariate_width() != covariate_names.len() {
                return Err(Error::DimensionMismatch { expected: covariate_names.len(), got: s.covariate_width() });
            }
        }
        Ok(Self { series, covariate_names })
    }

    pub fn empty(covariate_names: Vec<String>) -> Self {
        Self { series: Vec::new(), covariate_names }
    }

    pub fn series(&self) -> &[Series<T>] {
        &self.series
    }

    pub fn get(&self, id: &str) -> Option<&Series<T>> {
        self.series.iter().find(|s| s.id == id)
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.series.len()
    }

    pub fn is_empty(&self) -> bool {
        self.series.is_empty()
    }

    pub fn n_observations(&self) -> usize {
        self.series.iter().map(Series::len).sum()
    }

    pub fn min_start(&self) -> Option<i64> {
        self.series.iter().map(Series::start).min()
    }

    pub fn max_end(&self) -> Option<i64> {
        self.series.iter().map(Series::end).max()
    }

    /// Keeps only series matching the predicate.
    pub fn filter(&self, mut keep: impl FnMut(&Series<T>) -> bool) -> Self {
        Self {
            series: self.series.iter().filter(|s| keep(s)).cloned().collect(),
            covariate_names: self.covariate_names.clone(),
        }
    }

    /// SHA-256 over ids, time ranges, covariate names and value bits.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for name in &self.covariate_names {
            h.update(name.as_bytes());
            h.update([0u8]);
        }
        for s in &self.series {
            h.update(s.id.as_bytes());
            h.update([0u8]);
            h.update(s.start.to_le_bytes());
            h.update((s.len() as u64).to_le_bytes());
            for (_, y, x) in s.iter() {
                h.update(y.as_f64().to_bits().to_le_bytes());
                for v in x {
                    h.update(v.as_f64().to_bits().to_le_bytes());
                }
            }
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// Partitions a panel into observations with `t <= j` and `t > j`.
///
/// Series without observations on one side are dropped from that side.
pub fn split_at<T: Scalar>(panel: &Panel<T>, j: i64) -> (Panel<T>, Panel<T>) {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for s in &panel.series {
        if s.start <= j {
            train.push(slice(s, TimeWindow { lo: s.start, hi: j }).expect("non-empty by construction"));
        }
        if s.end() > j {
            test.push(slice(s, TimeWindow { lo: j + 1, hi: s.end() }).expect("non-empty by construction"));
        }
    }
    let names = panel.covariate_names.clone();
    (
        Panel { series: train, covariate_names: names.clone() },
        Panel { series: test, covariate_names: names },
    )
}

fn parse_value<T: Scalar>(raw: &str, row: usize, column: &str) -> Result<T> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err(Error::Parse { row, message: format!("missing value in column {column:?}") });
    }
    let v: T = raw
        .parse()
        .map_err(|_| Error::Parse { row, message: format!("column {column:?}: {raw:?} is not a number") })?;
    if !v.is_finite() {
        return Err(Error::Parse { row, message: format!("column {column:?}: non-finite value {raw:?}") });
    }
    Ok(v)
}

/// Reads a long-format CSV into a [`Panel`].
///
/// Rows are grouped by series id (in order of first appearance) and sorted by
/// time. Each series must cover a contiguous run of grid positions.
pub fn load_panel<T: Scalar>(path: impl AsRef<Path>, schema: &DataSchema) -> Result<Panel<T>> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_panel(file, schema)
}

pub fn read_panel<T: Scalar, R: std::io::Read>(reader: R, schema: &DataSchema) -> Result<Panel<T>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Schema(format!("missing column {name:?}")))
    };
    let id_idx = col(&schema.id_col)?;
    let time_idx = col(&schema.time_col)?;
    let target_idx = col(&schema.target_col)?;
    let cov_idx: Vec<usize> = match &schema.covariates {
        Some(names) => names.iter().map(|n| col(n)).collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != id_idx && i != time_idx && i != target_idx).collect(),
    };
    let covariate_names: Vec<String> = cov_idx.iter().map(|&i| headers[i].to_string()).collect();

    struct Row<T> {
        t: i64,
        raw_time: String,
        y: T,
        x: Vec<T>,
    }
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Row<T>>> = HashMap::new();
    for rec in rdr.records() {
        let rec = rec?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let field = |i: usize| rec.get(i).unwrap_or("");
        let id = field(id_idx).to_string();
        let raw_time = field(time_idx).to_string();
        let t = schema.freq.parse_time(&raw_time).map_err(|message| Error::Parse { row, message })?;
        let y = parse_value(field(target_idx), row, &schema.target_col)?;
        let x = cov_idx
            .iter()
            .map(|&i| parse_value(field(i), row, &headers[i]))
            .collect::<Result<Vec<T>>>()?;
        if !groups.contains_key(&id) {
            order.push(id.clone());
        }
        groups.entry(id).or_default().push(Row { t, raw_time, y, x });
    }

    let mut series = Vec::with_capacity(order.len());
    for id in order {
        let mut rows = groups.remove(&id).expect("grouped above");
        rows.sort_by_key(|r| r.t);
        for w in rows.windows(2) {
            if w[1].t == w[0].t {
                return Err(Error::DuplicateKey { series: id, time: w[1].raw_time.clone() });
            }
            if w[1].t > w[0].t + 1 {
                return Err(Error::Gap { series: id, position: w[0].t + 1 });
            }
        }
        let start = rows[0].t;
        let (targets, covariates) = rows.into_iter().map(|r| (r.y, r.x)).unzip();
        series.push(Series::new(id, start, targets, covariates)?);
    }
    Panel::new(series, covariate_names)
}

/// Writes a panel in the long CSV format read by [`load_panel`].
pub fn save_panel<T: Scalar>(panel: &Panel<T>, path: impl AsRef<Path>, schema: &DataSchema) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_panel(panel, file, schema)
}

pub fn write_panel<T: Scalar, W: std::io::Write>(panel: &Panel<T>, writer: W, schema: &DataSchema) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let mut header = vec![schema.id_col.clone(), schema.time_col.clone(), schema.target_col.clone()];
    header.extend(panel.covariate_names.iter().cloned());
    w.write_record(&header)?;
    for s in &panel.series {
        for (t, y, x) in s.iter() {
            let mut rec = vec![s.id.clone(), schema.freq.format_time(t), y.to_string()];
            rec.extend(x.iter().map(ToString::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush().map_err(|e| Error::io("<panel writer>", e))?;
    Ok(())
}
