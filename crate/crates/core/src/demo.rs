//! Synthetic demonstration corpus: condition-controlled daily load
//! shapes for trying the full pipeline without access to monitoring
//! data.
//!
//! Amplitude is driven by customer count and temperature (colder days
//! draw more), shape by day of week plus a substation-specific phase,
//! with lognormal day-to-day scatter and AR(1) slot noise. Reactive
//! power follows a per-substation power factor with its own noise, so
//! the P-Q relation is not a fixed ratio.

use crate::ingest::weather::WeatherDay;
use crate::ingest::{DayProfile, SubstationMeta, SLOTS_PER_DAY};
use chrono::{Datelike, Duration, NaiveDate, Weekday};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use std::collections::BTreeMap;

#[derive(Debug, Clone)]
pub struct DemoSpec {
    pub substations: usize,
    /// Days per substation; a few substations get fewer than the split
    /// threshold so the low-observation rule has work to do.
    pub days_per_substation: usize,
    pub start_date: NaiveDate,
    pub seed: u64,
}

impl Default for DemoSpec {
    fn default() -> Self {
        Self {
            substations: 36,
            days_per_substation: 28,
            start_date: NaiveDate::from_ymd_opt(2024, 1, 1).expect("valid date"),
            seed: 7,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DemoData {
    pub days: Vec<DayProfile>,
    pub meta: BTreeMap<String, SubstationMeta>,
    /// Weather per substation and date (locations differ slightly).
    pub weather: BTreeMap<(String, NaiveDate), WeatherDay>,
}

/// The primary id whose substations are reserved for the load-flow study.
pub const LOADFLOW_PRIMARY: &str = "PRIMARY-LF";

struct SubstationTraits {
    customers: u32,
    base_kw: f64,
    phase: f64,
    power_factor: f64,
    lat: f64,
    lon: f64,
}

fn traits_for(rng: &mut ChaCha8Rng) -> SubstationTraits {
    let customers = rng.gen_range(30u32..700);
    SubstationTraits {
        customers,
        base_kw: 20.0 + 0.35 * customers as f64,
        phase: rng.gen_range(-0.5..0.5),
        power_factor: rng.gen_range(0.93..0.97),
        lat: 52.0 + rng.gen_range(-0.5..0.5),
        lon: -1.9 + rng.gen_range(-0.5..0.5),
    }
}

fn weather_for(date: NaiveDate, lat: f64, rng: &mut ChaCha8Rng) -> WeatherDay {
    let doy = date.ordinal() as f64;
    let seasonal = 10.0 + 8.0 * ((doy - 110.0) / 365.0 * std::f64::consts::TAU).sin();
    let local = (lat - 52.0) * 2.0;
    let tavg = seasonal + local + rng.gen_range(-2.0..2.0);
    let spread = rng.gen_range(2.0..5.0);
    WeatherDay {
        date,
        tavg,
        tmin: tavg - spread,
        tmax: tavg + spread,
        humidity: (78.0_f64 + rng.gen_range(-15.0..15.0)).clamp(30.0, 100.0),
        wind_speed: rng.gen_range(0.5..12.0),
    }
}

fn day_profile(
    sub: &str,
    date: NaiveDate,
    traits: &SubstationTraits,
    weather: &WeatherDay,
    rng: &mut ChaCha8Rng,
) -> DayProfile {
    let weekend = matches!(date.weekday(), Weekday::Sat | Weekday::Sun);
    let amp_weather = (1.0 + 0.025 * (15.0 - weather.tavg)).clamp(0.75, 1.5);
    let weekend_amp = if weekend { 0.92 } else { 1.0 };
    let peak_slot = if weekend { 26.0 } else { 36.0 };
    let day_scale = (0.12 * rng.sample::<f64, _>(StandardNormal)).exp();

    let mut ar = 0.0;
    let mut p = Vec::with_capacity(SLOTS_PER_DAY);
    let mut q = Vec::with_capacity(SLOTS_PER_DAY);
    let tan_phi = (traits.power_factor.acos()).tan();
    for i in 0..SLOTS_PER_DAY {
        ar = 0.8 * ar + 0.2 * rng.sample::<f64, _>(StandardNormal);
        let x = i as f64;
        let diurnal = 0.55
            + 0.18 * ((x / SLOTS_PER_DAY as f64) * std::f64::consts::TAU - 2.2 + traits.phase).sin()
            + 0.45 * (-((x - peak_slot) * (x - peak_slot)) / (2.0 * 36.0)).exp();
        let kw = (traits.base_kw * amp_weather * weekend_amp * day_scale * diurnal
            * (1.0 + 0.05 * ar))
            .max(1.0);
        let kvar = kw * tan_phi * (1.0 + 0.10 * rng.sample::<f64, _>(StandardNormal));
        p.push(kw);
        q.push(kvar);
    }
    DayProfile::new(sub.to_string(), date, p, q).expect("48 slots by construction")
}

/// Generate the in-memory corpus: clean profiles, metadata and weather.
pub fn generate(spec: &DemoSpec) -> DemoData {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut data = DemoData {
        days: Vec::new(),
        meta: BTreeMap::new(),
        weather: BTreeMap::new(),
    };
    for s in 0..spec.substations {
        let id = format!("S{:03}", s + 1);
        let traits = traits_for(&mut rng);
        // a handful of low-observation substations, and a cohort under
        // the load-flow primary
        let n_days = match s % 9 {
            7 => 6,
            8 => 4,
            _ => spec.days_per_substation,
        };
        let primary = if s % 5 == 0 { LOADFLOW_PRIMARY } else { "PRIMARY-A" };
        data.meta.insert(
            id.clone(),
            SubstationMeta {
                substation_id: id.clone(),
                customer_count: traits.customers,
                latitude: traits.lat,
                longitude: traits.lon,
                primary_id: primary.to_string(),
            },
        );
        for d in 0..n_days {
            let date = spec.start_date + Duration::days(d as i64);
            let weather = weather_for(date, traits.lat, &mut rng);
            let day = day_profile(&id, date, &traits, &weather, &mut rng);
            data.weather.insert((id.clone(), date), weather);
            data.days.push(day);
        }
    }
    data
}

/// Write the corpus as raw ingest inputs: per-phase monitoring CSV (with
/// a few anomalous rows and days to exercise cleansing), metadata CSV,
/// and a pre-seeded weather cache directory.
pub fn write_csv_bundle(spec: &DemoSpec, dir: &std::path::Path) -> std::io::Result<DemoPaths> {
    use std::io::Write;
    let data = generate(spec);
    std::fs::create_dir_all(dir)?;
    let monitoring = dir.join("monitoring.csv");
    let metadata = dir.join("metadata.csv");
    let cache_dir = dir.join("weather_cache");
    std::fs::create_dir_all(&cache_dir)?;

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ 0xC5D1);
    let mut mf = std::io::BufWriter::new(std::fs::File::create(&monitoring)?);
    writeln!(
        mf,
        "substation_id,timestamp_utc,p_kw_l1,p_kw_l2,p_kw_l3,q_kvar_l1,q_kvar_l2,q_kvar_l3"
    )?;
    for (di, day) in data.days.iter().enumerate() {
        // anomalies: an outlier day, a constant day, an incomplete day,
        // plus a malformed timestamp row
        let anomaly = match di {
            3 => Some("outlier"),
            11 => Some("constant"),
            17 => Some("incomplete"),
            _ => None,
        };
        for slot in 0..SLOTS_PER_DAY {
            if anomaly == Some("incomplete") && slot == 30 {
                continue;
            }
            let (p, q) = match anomaly {
                Some("outlier") => (if slot == 20 { 3600.0 } else { day.p[slot] }, day.q[slot]),
                Some("constant") => (120.0, 24.0),
                _ => (day.p[slot], day.q[slot]),
            };
            let split = [0.32, 0.33, 0.35];
            let ts = format!(
                "{}T{:02}:{:02}:00Z",
                day.date,
                slot / 2,
                (slot % 2) * 30
            );
            writeln!(
                mf,
                "{},{},{:.4},{:.4},{:.4},{:.4},{:.4},{:.4}",
                day.substation_id,
                ts,
                p * split[0],
                p * split[1],
                p * split[2],
                q * split[0],
                q * split[1],
                q * split[2]
            )?;
        }
        if di == 23 {
            writeln!(mf, "{},not-a-timestamp,1,1,1,0.1,0.1,0.1", day.substation_id)?;
        }
        if di == 29 {
            // a missing phase field at one slot: marks the day incomplete
            let ts = format!("{}T23:30:00Z", day.date);
            let _ = rng.gen::<f64>();
            writeln!(mf, "{},{ts},,1.0,1.0,0.1,0.1,0.1", day.substation_id)?;
        }
    }
    drop(mf);

    let mut xf = std::fs::File::create(&metadata)?;
    writeln!(xf, "substation_id,customer_count,latitude,longitude,primary_id")?;
    for meta in data.meta.values() {
        writeln!(
            xf,
            "{},{},{},{},{}",
            meta.substation_id, meta.customer_count, meta.latitude, meta.longitude, meta.primary_id
        )?;
    }

    let cache = crate::ingest::weather::WeatherCache::new(&cache_dir, None);
    let mut per_location: BTreeMap<String, Vec<crate::ingest::weather::WeatherRecord>> =
        BTreeMap::new();
    for ((sub, _date), weather) in &data.weather {
        per_location
            .entry(sub.clone())
            .or_default()
            .push(crate::ingest::weather::WeatherRecord::Observed(weather.clone()));
    }
    for (sub, records) in per_location {
        let meta = &data.meta[&sub];
        cache
            .seed(meta.latitude, meta.longitude, &records)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
    }

    Ok(DemoPaths { monitoring, metadata, weather_cache: cache_dir })
}

#[derive(Debug, Clone)]
pub struct DemoPaths {
    pub monitoring: std::path::PathBuf,
    pub metadata: std::path::PathBuf,
    pub weather_cache: std::path::PathBuf,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest;

    #[test]
    fn corpus_is_deterministic_and_in_bounds() {
        let spec = DemoSpec::default();
        let a = generate(&spec);
        let b = generate(&spec);
        assert_eq!(a.days, b.days);
        assert_eq!(a.days.len(), a.weather.len());
        for day in &a.days {
            assert!(day.p.iter().all(|&v| v > 0.0 && v < 1000.0));
            assert!(day.q.iter().all(|&v| v.abs() < 500.0));
        }
    }

    #[test]
    fn colder_days_draw_more_power() {
        let data = generate(&DemoSpec { substations: 6, days_per_substation: 60, ..Default::default() });
        // correlate daily mean power with tavg across one substation
        let sub = "S001";
        let mut pairs: Vec<(f64, f64)> = Vec::new();
        for day in data.days.iter().filter(|d| d.substation_id == sub) {
            let mean_p = day.p.iter().sum::<f64>() / day.p.len() as f64;
            let tavg = data.weather[&(sub.to_string(), day.date)].tavg;
            pairs.push((tavg, mean_p));
        }
        let n = pairs.len() as f64;
        let mx = pairs.iter().map(|(x, _)| x).sum::<f64>() / n;
        let my = pairs.iter().map(|(_, y)| y).sum::<f64>() / n;
        let cov: f64 = pairs.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
        assert!(cov < 0.0, "temperature and demand should anticorrelate, cov={cov}");
    }

    #[test]
    fn csv_bundle_survives_the_ingest_pipeline() {
        let spec = DemoSpec { substations: 12, days_per_substation: 14, ..Default::default() };
        let dir = tempfile::tempdir().unwrap();
        let paths = write_csv_bundle(&spec, dir.path()).unwrap();
        let parsed = ingest::csvio::parse_monitoring_csv(&paths.monitoring).unwrap();
        assert!(!parsed.measurements.is_empty());
        assert!(!parsed.rejects.is_empty(), "bundle plants malformed rows");
        let meta = ingest::csvio::parse_metadata_csv(&paths.metadata).unwrap();
        assert_eq!(meta.len(), 12);
        // the cache directory is populated per substation location
        let entries = std::fs::read_dir(&paths.weather_cache).unwrap().count();
        assert_eq!(entries, 12);
    }
}
