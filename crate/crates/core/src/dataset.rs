//! Assembly of training-ready items: join cleansed day profiles with
//! metadata and weather, scale, and encode condition channels.

use crate::diffusion::{
    encode_conditions, ConditionInputs, ConditionMode, DailyStats, DiffusionError,
};
use crate::diffusion::TrainItem;
use crate::ingest::weather::WeatherDay;
use crate::ingest::{bin_customers, DayProfile, Scaler, SubstationMeta, SLOTS_PER_DAY};
use chrono::NaiveDate;
use ndarray::Array2;
use std::collections::BTreeMap;

/// Weather lookup keyed by substation and date.
pub type WeatherTable = BTreeMap<(String, NaiveDate), WeatherDay>;

/// Scale a physical profile into the `(2, 48)` array the model consumes.
pub fn scaled_signal(day: &DayProfile, scaler: &Scaler) -> Array2<f64> {
    Array2::from_shape_fn((2, SLOTS_PER_DAY), |(c, t)| {
        if c == 0 {
            scaler.scale_p(day.p[t])
        } else {
            scaler.scale_q(day.q[t])
        }
    })
}

/// Invert a scaled `(2, 48)` sample back to physical units.
pub fn unscaled_profile(
    substation_id: String,
    date: NaiveDate,
    scaled: &Array2<f64>,
    scaler: &Scaler,
) -> DayProfile {
    let p = (0..SLOTS_PER_DAY).map(|t| scaler.unscale_p(scaled[[0, t]])).collect();
    let q = (0..SLOTS_PER_DAY).map(|t| scaler.unscale_q(scaled[[1, t]])).collect();
    DayProfile::new(substation_id, date, p, q).expect("48 slots by construction")
}

/// Encode one day's conditions for the given mode. WCS statistics come
/// from the scaled signal itself.
pub fn conditions_for_day(
    day: &DayProfile,
    scaled: &Array2<f64>,
    meta: &SubstationMeta,
    weather: Option<&WeatherDay>,
    mode: ConditionMode,
) -> Result<crate::diffusion::ConditionSet, DiffusionError> {
    let bin = bin_customers(meta.customer_count as i64)
        .expect("u32 customer counts are non-negative");
    let stats = if mode == ConditionMode::Wcs {
        let p_row: Vec<f64> = scaled.row(0).iter().copied().collect();
        let q_row: Vec<f64> = scaled.row(1).iter().copied().collect();
        Some(DailyStats::of(&p_row, &q_row))
    } else {
        None
    };
    let inputs = ConditionInputs { date: day.date, weather, customer_bin: bin, stats };
    encode_conditions(mode, &inputs, SLOTS_PER_DAY)
}

/// Build train items for a set of days. Missing weather under WC/WCS is
/// an error naming the date.
pub fn to_train_items(
    days: &[DayProfile],
    meta: &BTreeMap<String, SubstationMeta>,
    weather: &WeatherTable,
    scaler: &Scaler,
    mode: ConditionMode,
) -> Result<Vec<TrainItem>, DiffusionError> {
    days.iter()
        .map(|day| {
            let scaled = scaled_signal(day, scaler);
            let m = meta
                .get(&day.substation_id)
                .unwrap_or_else(|| panic!("metadata for {} checked upstream", day.substation_id));
            let w = weather.get(&(day.substation_id.clone(), day.date));
            let cond = conditions_for_day(day, &scaled, m, w, mode)?;
            Ok(TrainItem { x0: scaled, cond })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demo::{generate, DemoSpec};
    use crate::ingest::{split_train_test, SplitOptions};

    #[test]
    fn items_round_trip_through_the_scaler() {
        let data = generate(&DemoSpec { substations: 8, days_per_substation: 12, ..Default::default() });
        let split = split_train_test(&data.days, &data.meta, &SplitOptions::default()).unwrap();
        let items = to_train_items(
            &split.train,
            &data.meta,
            &data.weather,
            &split.scaler,
            ConditionMode::Wcs,
        )
        .unwrap();
        assert_eq!(items.len(), split.train.len());
        for (item, day) in items.iter().zip(&split.train) {
            assert_eq!(item.cond.channels.nrows(), ConditionMode::Wcs.condition_channels());
            let back = unscaled_profile(
                day.substation_id.clone(),
                day.date,
                &item.x0,
                &split.scaler,
            );
            for (a, b) in back.p.iter().zip(&day.p) {
                assert!((a - b).abs() < 1e-9 * b.abs().max(1.0));
            }
        }
    }

    #[test]
    fn wcs_stats_channels_match_the_scaled_signal() {
        let data = generate(&DemoSpec { substations: 4, days_per_substation: 12, ..Default::default() });
        let split = split_train_test(&data.days, &data.meta, &SplitOptions::default()).unwrap();
        let items = to_train_items(
            &split.train,
            &data.meta,
            &data.weather,
            &split.scaler,
            ConditionMode::Wcs,
        )
        .unwrap();
        let item = &items[0];
        let p_min = item.x0.row(0).iter().cloned().fold(f64::INFINITY, f64::min);
        let p_max = item.x0.row(0).iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let p_mean = item.x0.row(0).sum() / SLOTS_PER_DAY as f64;
        let c = ConditionMode::Wcs.condition_channels();
        // last six channels are [min_p, mean_p, max_p, min_q, mean_q, max_q]
        assert_eq!(item.cond.channels[[c - 6, 0]], p_min);
        assert!((item.cond.channels[[c - 5, 0]] - p_mean).abs() < 1e-12);
        assert_eq!(item.cond.channels[[c - 4, 0]], p_max);
    }

    #[test]
    fn missing_weather_fails_cleanly_in_wc_mode() {
        let data = generate(&DemoSpec { substations: 3, days_per_substation: 12, ..Default::default() });
        let split = split_train_test(&data.days, &data.meta, &SplitOptions::default()).unwrap();
        let empty = WeatherTable::new();
        let err = to_train_items(
            &split.train,
            &data.meta,
            &empty,
            &split.scaler,
            ConditionMode::Wc,
        )
        .unwrap_err();
        assert!(matches!(err, DiffusionError::MissingWeather(_)));
    }
}
