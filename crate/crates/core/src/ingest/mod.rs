//! Substation monitoring ingest: parsing, phase aggregation, cleansing,
//! customer binning, substation-disjoint train/test splitting and
//! per-channel scaling.
//!
//! Days are half-hourly (48 slots). Discarded data is reported, never
//! imputed.

pub mod calendar;
pub mod csvio;
pub mod weather;

use chrono::NaiveDate;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;

/// Half-hourly settlement resolution.
pub const SLOTS_PER_DAY: usize = 48;
/// Cleansing threshold: any sample above this is an outlier day.
pub const OUTLIER_KW: f64 = 1000.0;
/// A channel with sample standard deviation below this is constant.
pub const CONSTANT_STD_KW: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("missing mandatory column `{0}`")]
    MissingColumn(String),
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("measurements mix substations `{0}` and `{1}`")]
    MixedSubstations(String, String),
    #[error("negative customer count {0}")]
    NegativeCustomerCount(i64),
    #[error("split threshold must be >= 1, got {0}")]
    BadThreshold(usize),
    #[error("channel `{0}` has zero spread; cannot fit a scaler")]
    DegenerateScale(String),
    #[error("profile has {0} slots, expected {expected}", expected = SLOTS_PER_DAY)]
    WrongSlotCount(usize),
    #[error("substation `{0}` missing metadata")]
    MissingMetadata(String),
    #[error("weather retrieval failed for ({lat}, {lon}) {date}: {reason}")]
    WeatherRetrieval {
        lat: f64,
        lon: f64,
        date: NaiveDate,
        reason: String,
    },
    #[error("invalid metadata for `{id}`: {reason}")]
    InvalidMetadata { id: String, reason: String },
}

/// One monitoring sample; phase powers may be individually absent.
#[derive(Debug, Clone, PartialEq)]
pub struct RawMeasurement {
    pub substation_id: String,
    pub timestamp: chrono::DateTime<chrono::Utc>,
    pub p_kw: [Option<f64>; 3],
    pub q_kvar: [Option<f64>; 3],
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SubstationMeta {
    pub substation_id: String,
    pub customer_count: u32,
    pub latitude: f64,
    pub longitude: f64,
    pub primary_id: String,
}

impl SubstationMeta {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(-90.0..=90.0).contains(&self.latitude) {
            return Err(IngestError::InvalidMetadata {
                id: self.substation_id.clone(),
                reason: format!("latitude {} out of range", self.latitude),
            });
        }
        if !(-180.0..=180.0).contains(&self.longitude) {
            return Err(IngestError::InvalidMetadata {
                id: self.substation_id.clone(),
                reason: format!("longitude {} out of range", self.longitude),
            });
        }
        Ok(())
    }
}

/// One substation-day: aggregate active and reactive power per half hour.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DayProfile {
    pub substation_id: String,
    pub date: NaiveDate,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

impl DayProfile {
    pub fn new(
        substation_id: String,
        date: NaiveDate,
        p: Vec<f64>,
        q: Vec<f64>,
    ) -> Result<Self, IngestError> {
        if p.len() != SLOTS_PER_DAY {
            return Err(IngestError::WrongSlotCount(p.len()));
        }
        if q.len() != SLOTS_PER_DAY {
            return Err(IngestError::WrongSlotCount(q.len()));
        }
        Ok(Self { substation_id, date, p, q })
    }
}

/// Reasons a substation-day is dropped before training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum DiscardReason {
    IncompleteDay,
    Outlier,
    Constant,
}

/// Per-reason discard counts for a cleansing pass.
#[derive(Debug, Clone, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct DiscardReport {
    pub incomplete: usize,
    pub outlier: usize,
    pub constant: usize,
    pub rejected_rows: usize,
}

impl DiscardReport {
    pub fn total(&self) -> usize {
        self.incomplete + self.outlier + self.constant
    }

    pub fn count(&mut self, reason: DiscardReason) {
        match reason {
            DiscardReason::IncompleteDay => self.incomplete += 1,
            DiscardReason::Outlier => self.outlier += 1,
            DiscardReason::Constant => self.constant += 1,
        }
    }
}

/// Outcome of aggregating one substation-date's measurements.
#[derive(Debug, Clone, PartialEq)]
pub enum AggregatedDay {
    Complete(DayProfile),
    Discarded(DiscardReason),
}

/// Sum the three phases per slot. Any slot with a missing sample or a
/// missing phase discards the day as incomplete.
pub fn aggregate_phases(
    measurements: &[RawMeasurement],
    date: NaiveDate,
) -> Result<AggregatedDay, IngestError> {
    let mut sub_id: Option<&str> = None;
    for m in measurements {
        match sub_id {
            None => sub_id = Some(&m.substation_id),
            Some(id) if id != m.substation_id => {
                return Err(IngestError::MixedSubstations(
                    id.to_string(),
                    m.substation_id.clone(),
                ))
            }
            _ => {}
        }
    }
    let Some(sub_id) = sub_id else {
        return Ok(AggregatedDay::Discarded(DiscardReason::IncompleteDay));
    };

    let mut p = vec![f64::NAN; SLOTS_PER_DAY];
    let mut q = vec![f64::NAN; SLOTS_PER_DAY];
    for m in measurements {
        if m.timestamp.date_naive() != date {
            continue;
        }
        let slot = slot_of(&m.timestamp);
        let Some(slot) = slot else { continue };
        let (Some(ps), Some(qs)) = (sum_phases(&m.p_kw), sum_phases(&m.q_kvar)) else {
            continue; // missing phase: slot stays unfilled, day becomes incomplete
        };
        p[slot] = ps;
        q[slot] = qs;
    }
    if p.iter().chain(q.iter()).any(|v| v.is_nan()) {
        return Ok(AggregatedDay::Discarded(DiscardReason::IncompleteDay));
    }
    Ok(AggregatedDay::Complete(DayProfile::new(
        sub_id.to_string(),
        date,
        p,
        q,
    )?))
}

fn sum_phases(phases: &[Option<f64>; 3]) -> Option<f64> {
    let mut acc = 0.0;
    for ph in phases {
        acc += (*ph)?;
    }
    Some(acc)
}

fn slot_of(ts: &chrono::DateTime<chrono::Utc>) -> Option<usize> {
    use chrono::Timelike;
    if ts.minute() % 30 != 0 {
        return None;
    }
    Some(ts.hour() as usize * 2 + ts.minute() as usize / 30)
}

fn sample_std(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    if n < 2.0 {
        return 0.0;
    }
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    var.sqrt()
}

/// Drop outlier days (any sample above [`OUTLIER_KW`]) and constant days
/// (either channel with standard deviation below [`CONSTANT_STD_KW`]).
pub fn cleanse(days: Vec<DayProfile>) -> (Vec<DayProfile>, DiscardReport) {
    let mut report = DiscardReport::default();
    let mut kept = Vec::with_capacity(days.len());
    for day in days {
        if day.p.iter().chain(day.q.iter()).any(|v| *v > OUTLIER_KW) {
            report.count(DiscardReason::Outlier);
            continue;
        }
        if sample_std(&day.p) < CONSTANT_STD_KW || sample_std(&day.q) < CONSTANT_STD_KW {
            report.count(DiscardReason::Constant);
            continue;
        }
        kept.push(day);
    }
    (kept, report)
}

/// Number of customer bins: 0-99, 100-199, ..., 500-599, >=600.
pub const CUSTOMER_BINS: usize = 7;

/// Fixed-width bins of 100 customers; everything from 600 up lands in the
/// final bin.
pub fn bin_customers(count: i64) -> Result<usize, IngestError> {
    if count < 0 {
        return Err(IngestError::NegativeCustomerCount(count));
    }
    Ok(((count as usize) / 100).min(CUSTOMER_BINS - 1))
}

/// Per-channel affine scaling fitted on training data; maps the training
/// range onto [-1, 1].
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Scaler {
    pub p_min: f64,
    pub p_max: f64,
    pub q_min: f64,
    pub q_max: f64,
}

impl Scaler {
    pub fn fit(train: &[DayProfile]) -> Result<Self, IngestError> {
        let mut p_min = f64::INFINITY;
        let mut p_max = f64::NEG_INFINITY;
        let mut q_min = f64::INFINITY;
        let mut q_max = f64::NEG_INFINITY;
        for day in train {
            for &v in &day.p {
                p_min = p_min.min(v);
                p_max = p_max.max(v);
            }
            for &v in &day.q {
                q_min = q_min.min(v);
                q_max = q_max.max(v);
            }
        }
        if train.is_empty() || !(p_max - p_min).is_finite() || p_max - p_min < 1e-12 {
            return Err(IngestError::DegenerateScale("p".into()));
        }
        if !(q_max - q_min).is_finite() || q_max - q_min < 1e-12 {
            return Err(IngestError::DegenerateScale("q".into()));
        }
        Ok(Self { p_min, p_max, q_min, q_max })
    }

    pub fn scale_p(&self, v: f64) -> f64 {
        2.0 * (v - self.p_min) / (self.p_max - self.p_min) - 1.0
    }

    pub fn scale_q(&self, v: f64) -> f64 {
        2.0 * (v - self.q_min) / (self.q_max - self.q_min) - 1.0
    }

    pub fn unscale_p(&self, s: f64) -> f64 {
        (s + 1.0) / 2.0 * (self.p_max - self.p_min) + self.p_min
    }

    pub fn unscale_q(&self, s: f64) -> f64 {
        (s + 1.0) / 2.0 * (self.q_max - self.q_min) + self.q_min
    }

    pub fn apply(&self, day: &DayProfile) -> DayProfile {
        DayProfile {
            substation_id: day.substation_id.clone(),
            date: day.date,
            p: day.p.iter().map(|&v| self.scale_p(v)).collect(),
            q: day.q.iter().map(|&v| self.scale_q(v)).collect(),
        }
    }

    pub fn invert(&self, day: &DayProfile) -> DayProfile {
        DayProfile {
            substation_id: day.substation_id.clone(),
            date: day.date,
            p: day.p.iter().map(|&v| self.unscale_p(v)).collect(),
            q: day.q.iter().map(|&v| self.unscale_q(v)).collect(),
        }
    }
}

/// Train/test partition with the scaler fitted on the training side.
#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<DayProfile>,
    pub test: Vec<DayProfile>,
    pub scaler: Scaler,
}

impl DatasetSplit {
    pub fn train_substations(&self) -> BTreeSet<&str> {
        self.train.iter().map(|d| d.substation_id.as_str()).collect()
    }

    pub fn test_substations(&self) -> BTreeSet<&str> {
        self.test.iter().map(|d| d.substation_id.as_str()).collect()
    }
}

#[derive(Debug, Clone)]
pub struct SplitOptions {
    /// Substations with fewer observed days than this go straight to test.
    pub threshold_days: usize,
    /// Target train share by day count.
    pub train_fraction: f64,
    /// Substations under this primary are forced into test for the
    /// load-flow study.
    pub loadflow_primary: Option<String>,
    pub seed: u64,
}

impl Default for SplitOptions {
    fn default() -> Self {
        Self {
            threshold_days: 10,
            train_fraction: 0.7,
            loadflow_primary: None,
            seed: 0,
        }
    }
}

/// Substation-disjoint split, stratified on customer bin.
///
/// Low-observation substations and the designated load-flow cohort go to
/// test; within each customer bin the remaining substations are assigned
/// greedily toward the target train share. All days of a substation land
/// on one side.
pub fn split_train_test(
    days: &[DayProfile],
    meta: &BTreeMap<String, SubstationMeta>,
    opts: &SplitOptions,
) -> Result<DatasetSplit, IngestError> {
    if opts.threshold_days < 1 {
        return Err(IngestError::BadThreshold(opts.threshold_days));
    }
    let mut per_sub: BTreeMap<&str, Vec<&DayProfile>> = BTreeMap::new();
    for d in days {
        per_sub.entry(&d.substation_id).or_default().push(d);
    }
    for sub in per_sub.keys() {
        if !meta.contains_key(*sub) {
            return Err(IngestError::MissingMetadata(sub.to_string()));
        }
    }

    let mut test_subs: BTreeSet<&str> = BTreeSet::new();
    // bin -> eligible substations (id, day count)
    let mut bins: BTreeMap<usize, Vec<(&str, usize)>> = BTreeMap::new();
    for (sub, sub_days) in &per_sub {
        let m = &meta[*sub];
        let forced = opts
            .loadflow_primary
            .as_deref()
            .is_some_and(|p| p == m.primary_id);
        if forced || sub_days.len() < opts.threshold_days {
            test_subs.insert(sub);
        } else {
            let bin = bin_customers(m.customer_count as i64)?;
            bins.entry(bin).or_default().push((sub, sub_days.len()));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut train_subs: BTreeSet<&str> = BTreeSet::new();
    for members in bins.values_mut() {
        members.shuffle(&mut rng);
        let bin_total: usize = members.iter().map(|(_, n)| n).sum();
        let target = opts.train_fraction * bin_total as f64;
        let mut train_days = 0usize;
        let mut bin_train: Vec<&str> = Vec::new();
        let mut bin_test: Vec<&str> = Vec::new();
        for (sub, n) in members.iter() {
            if (train_days as f64) < target {
                bin_train.push(sub);
                train_days += n;
            } else {
                bin_test.push(sub);
            }
        }
        // each populated bin must appear on both sides when it can
        if members.len() >= 2 {
            if bin_test.is_empty() {
                bin_test.push(bin_train.pop().expect("non-empty"));
            }
            if bin_train.is_empty() {
                bin_train.push(bin_test.pop().expect("non-empty"));
            }
        }
        train_subs.extend(bin_train);
        test_subs.extend(bin_test);
    }

    let train: Vec<DayProfile> = days
        .iter()
        .filter(|d| train_subs.contains(d.substation_id.as_str()))
        .cloned()
        .collect();
    let test: Vec<DayProfile> = days
        .iter()
        .filter(|d| test_subs.contains(d.substation_id.as_str()))
        .cloned()
        .collect();
    let scaler = Scaler::fit(&train)?;
    Ok(DatasetSplit { train, test, scaler })
}
