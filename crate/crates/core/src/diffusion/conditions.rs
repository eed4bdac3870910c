//! Conditioning channels for the diffusion model.
//!
//! Conditions enter the model as extra channels, constant across the 48
//! slots. A per-channel binary mask marks which channels are fixed
//! context (1) versus generated (0); the two power channels always carry
//! mask 0.

use super::DiffusionError;
use crate::ingest::calendar::{calendar_features, CALENDAR_DIM};
use crate::ingest::weather::WeatherDay;
use crate::ingest::CUSTOMER_BINS;
use chrono::NaiveDate;
use ndarray::Array2;

/// Conditioning regimes: unconditional, weather+calendar+substation, and
/// the same plus daily summary statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ConditionMode {
    U,
    Wc,
    Wcs,
}

impl ConditionMode {
    pub fn condition_channels(self) -> usize {
        match self {
            ConditionMode::U => 0,
            ConditionMode::Wc => CALENDAR_DIM + 5 + 1,
            ConditionMode::Wcs => CALENDAR_DIM + 5 + 1 + 6,
        }
    }

    /// Full channel count seen by the denoiser: P, Q plus conditions.
    pub fn total_channels(self) -> usize {
        2 + self.condition_channels()
    }
}

impl std::str::FromStr for ConditionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_uppercase().as_str() {
            "U" => Ok(ConditionMode::U),
            "WC" => Ok(ConditionMode::Wc),
            "WCS" => Ok(ConditionMode::Wcs),
            other => Err(format!("unknown condition mode `{other}` (expected U, WC or WCS)")),
        }
    }
}

impl std::fmt::Display for ConditionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ConditionMode::U => write!(f, "U"),
            ConditionMode::Wc => write!(f, "WC"),
            ConditionMode::Wcs => write!(f, "WCS"),
        }
    }
}

/// Daily min/mean/max of both scaled power channels.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DailyStats {
    pub min_p: f64,
    pub mean_p: f64,
    pub max_p: f64,
    pub min_q: f64,
    pub mean_q: f64,
    pub max_q: f64,
}

impl DailyStats {
    pub fn of(p: &[f64], q: &[f64]) -> Self {
        let agg = |xs: &[f64]| {
            let min = xs.iter().cloned().fold(f64::INFINITY, f64::min);
            let max = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mean = xs.iter().sum::<f64>() / xs.len() as f64;
            (min, mean, max)
        };
        let (min_p, mean_p, max_p) = agg(p);
        let (min_q, mean_q, max_q) = agg(q);
        Self { min_p, mean_p, max_p, min_q, mean_q, max_q }
    }

    fn channels(&self) -> [f64; 6] {
        [self.min_p, self.mean_p, self.max_p, self.min_q, self.mean_q, self.max_q]
    }
}

/// Encoded conditioning channels plus the per-channel mask over the full
/// (generation + condition) channel stack.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSet {
    /// `(condition_channels, seq_len)`; empty in mode U.
    pub channels: Array2<f64>,
    /// Length `2 + condition_channels`; 0 = generated, 1 = condition.
    pub mask: Vec<u8>,
}

impl ConditionSet {
    pub fn unconditional(seq_len: usize) -> Self {
        Self { channels: Array2::zeros((0, seq_len)), mask: vec![0, 0] }
    }

    pub fn new(channels: Array2<f64>) -> Self {
        let mut mask = vec![0u8, 0u8];
        mask.extend(std::iter::repeat(1u8).take(channels.nrows()));
        Self { channels, mask }
    }

    /// Custom mask constructor; used by contract tests.
    pub fn with_mask(channels: Array2<f64>, mask: Vec<u8>) -> Self {
        Self { channels, mask }
    }

    pub fn seq_len(&self) -> usize {
        self.channels.ncols()
    }

    pub fn total_channels(&self) -> usize {
        2 + self.channels.nrows()
    }

    pub fn validate(&self, seq_len: usize) -> Result<(), DiffusionError> {
        if self.mask.len() != self.total_channels() {
            return Err(DiffusionError::UnsupportedMask(format!(
                "mask length {} does not cover {} channels",
                self.mask.len(),
                self.total_channels()
            )));
        }
        if self.channels.nrows() > 0 && self.channels.ncols() != seq_len {
            return Err(DiffusionError::ShapeMismatch {
                expected: format!("condition channels of length {seq_len}"),
                got: format!("{}", self.channels.ncols()),
            });
        }
        if self.mask.iter().all(|&m| m == 1) {
            return Err(DiffusionError::NothingToGenerate);
        }
        if self.mask[0] != 0 || self.mask[1] != 0 {
            return Err(DiffusionError::UnsupportedMask(
                "generation channels P, Q must carry mask 0".into(),
            ));
        }
        for (i, &m) in self.mask.iter().enumerate().skip(2) {
            if m != 1 {
                return Err(DiffusionError::UnsupportedMask(format!(
                    "condition channel {i} must carry mask 1"
                )));
            }
        }
        Ok(())
    }
}

/// Inputs used to build the condition channels of one substation-day.
#[derive(Debug, Clone)]
pub struct ConditionInputs<'a> {
    pub date: NaiveDate,
    pub weather: Option<&'a WeatherDay>,
    pub customer_bin: usize,
    /// Stats of the scaled profile; required only in WCS mode.
    pub stats: Option<DailyStats>,
}

/// Encode the condition channels for one day, broadcast across slots.
/// Weather uses fixed affine normalizations (temperatures / 30 degC,
/// humidity / 100 %, wind / 20 m/s); the customer bin index is divided
/// by the final bin index.
pub fn encode_conditions(
    mode: ConditionMode,
    inputs: &ConditionInputs<'_>,
    seq_len: usize,
) -> Result<ConditionSet, DiffusionError> {
    if mode == ConditionMode::U {
        return Ok(ConditionSet::unconditional(seq_len));
    }
    let weather = inputs.weather.ok_or(DiffusionError::MissingWeather(inputs.date))?;
    let mut values: Vec<f64> = calendar_features(inputs.date);
    values.extend([
        weather.tavg / 30.0,
        weather.tmin / 30.0,
        weather.tmax / 30.0,
        weather.humidity / 100.0,
        weather.wind_speed / 20.0,
    ]);
    values.push(inputs.customer_bin as f64 / (CUSTOMER_BINS - 1) as f64);
    if mode == ConditionMode::Wcs {
        let stats = inputs.stats.ok_or(DiffusionError::MissingStats(inputs.date))?;
        values.extend(stats.channels());
    }
    debug_assert_eq!(values.len(), mode.condition_channels());
    let channels =
        Array2::from_shape_fn((values.len(), seq_len), |(c, _)| values[c]);
    Ok(ConditionSet::new(channels))
}
