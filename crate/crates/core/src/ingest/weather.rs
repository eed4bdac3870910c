//! Daily weather summaries with a disk cache in front of a remote
//! provider.
//!
//! Cache layout: one CSV per (lat, lon) pair under the cache directory,
//! one record per date. Dates the provider has no station data for are
//! cached as explicit gap records so offline reruns stay faithful. The
//! remote endpoint base URL comes from `LVGEN_WEATHER_URL`; when unset
//! the cache is the only source.

use super::IngestError;
use chrono::NaiveDate;
use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

/// Environment variable holding the remote weather endpoint base URL.
pub const WEATHER_URL_ENV: &str = "LVGEN_WEATHER_URL";

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WeatherDay {
    pub date: NaiveDate,
    /// Mean temperature, degrees C.
    pub tavg: f64,
    pub tmin: f64,
    pub tmax: f64,
    /// Relative humidity, percent.
    pub humidity: f64,
    /// Wind speed, m/s.
    pub wind_speed: f64,
}

impl WeatherDay {
    pub fn validate(&self) -> Result<(), IngestError> {
        if !(self.tmin <= self.tavg && self.tavg <= self.tmax) {
            return Err(IngestError::InvalidMetadata {
                id: self.date.to_string(),
                reason: format!(
                    "temperature ordering violated: {} <= {} <= {}",
                    self.tmin, self.tavg, self.tmax
                ),
            });
        }
        if !(0.0..=100.0).contains(&self.humidity) {
            return Err(IngestError::InvalidMetadata {
                id: self.date.to_string(),
                reason: format!("humidity {} out of [0, 100]", self.humidity),
            });
        }
        Ok(())
    }
}

/// Cache entry: either an observed day or an explicit gap.
#[derive(Debug, Clone, PartialEq)]
pub enum WeatherRecord {
    Observed(WeatherDay),
    Gap(NaiveDate),
}

impl WeatherRecord {
    pub fn date(&self) -> NaiveDate {
        match self {
            WeatherRecord::Observed(d) => d.date,
            WeatherRecord::Gap(d) => *d,
        }
    }

    pub fn observed(&self) -> Option<&WeatherDay> {
        match self {
            WeatherRecord::Observed(d) => Some(d),
            WeatherRecord::Gap(_) => None,
        }
    }
}

/// A remote source of daily weather. `Ok(None)` means the source has no
/// station data for that date.
pub trait WeatherProvider {
    fn fetch_day(
        &self,
        lat: f64,
        lon: f64,
        date: NaiveDate,
    ) -> Result<Option<WeatherDay>, IngestError>;
}

/// Meteostat-style JSON endpoint:
/// `GET {base}/point/daily?lat=..&lon=..&date=YYYY-MM-DD` returning
/// `{"data": [{"date", "tavg", "tmin", "tmax", "rhum", "wspd"}]}`.
pub struct HttpWeatherProvider {
    base_url: String,
    agent: ureq::Agent,
}

impl HttpWeatherProvider {
    pub fn new(base_url: String) -> Self {
        Self { base_url, agent: ureq::Agent::new() }
    }

    pub fn from_env() -> Option<Self> {
        std::env::var(WEATHER_URL_ENV).ok().map(Self::new)
    }
}

impl WeatherProvider for HttpWeatherProvider {
    fn fetch_day(
        &self,
        lat: f64,
        lon: f64,
        date: NaiveDate,
    ) -> Result<Option<WeatherDay>, IngestError> {
        let url = format!(
            "{}/point/daily?lat={lat}&lon={lon}&date={date}",
            self.base_url.trim_end_matches('/')
        );
        let fail = |reason: String| IngestError::WeatherRetrieval { lat, lon, date, reason };
        let body: serde_json::Value = self
            .agent
            .get(&url)
            .call()
            .map_err(|e| fail(e.to_string()))?
            .into_json()
            .map_err(|e| fail(e.to_string()))?;
        let Some(rows) = body.get("data").and_then(|d| d.as_array()) else {
            return Ok(None);
        };
        let row = rows.iter().find(|r| {
            r.get("date").and_then(|d| d.as_str()) == Some(date.to_string().as_str())
        });
        let Some(row) = row else { return Ok(None) };
        let num = |key: &str| row.get(key).and_then(|v| v.as_f64());
        match (num("tavg"), num("tmin"), num("tmax"), num("rhum"), num("wspd")) {
            (Some(tavg), Some(tmin), Some(tmax), Some(humidity), Some(wind_speed)) => {
                Ok(Some(WeatherDay { date, tavg, tmin, tmax, humidity, wind_speed }))
            }
            _ => Ok(None),
        }
    }
}

/// Disk cache over an optional remote provider. All lookups go through
/// the cache; misses hit the provider (when present) and are written
/// back, gaps included.
pub struct WeatherCache {
    dir: PathBuf,
    provider: Option<Box<dyn WeatherProvider + Send + Sync>>,
    // serializes writes per cache key (coarse: one lock for the directory)
    write_lock: Mutex<()>,
}

impl WeatherCache {
    pub fn new(dir: impl Into<PathBuf>, provider: Option<Box<dyn WeatherProvider + Send + Sync>>) -> Self {
        Self { dir: dir.into(), provider, write_lock: Mutex::new(()) }
    }

    /// Cache-only mode unless `LVGEN_WEATHER_URL` is set.
    pub fn from_env(dir: impl Into<PathBuf>) -> Self {
        let provider = HttpWeatherProvider::from_env()
            .map(|p| Box::new(p) as Box<dyn WeatherProvider + Send + Sync>);
        Self::new(dir, provider)
    }

    pub fn cache_file(&self, lat: f64, lon: f64) -> PathBuf {
        self.dir.join(format!("weather_{lat:.4}_{lon:.4}.csv"))
    }

    /// Fetch an inclusive date range, serving from cache where possible.
    pub fn fetch_range(
        &self,
        lat: f64,
        lon: f64,
        start: NaiveDate,
        end: NaiveDate,
    ) -> Result<Vec<WeatherRecord>, IngestError> {
        let mut cached = self.read_cache(lat, lon)?;
        let mut fresh: Vec<WeatherRecord> = Vec::new();
        let mut out = Vec::new();
        let mut date = start;
        while date <= end {
            let record = match cached.remove(&date) {
                Some(r) => r,
                None => {
                    let provider = self.provider.as_ref().ok_or_else(|| {
                        IngestError::WeatherRetrieval {
                            lat,
                            lon,
                            date,
                            reason: "not cached and no remote endpoint configured".into(),
                        }
                    })?;
                    let record = match provider.fetch_day(lat, lon, date)? {
                        Some(day) => {
                            day.validate()?;
                            WeatherRecord::Observed(day)
                        }
                        None => WeatherRecord::Gap(date),
                    };
                    fresh.push(record.clone());
                    record
                }
            };
            out.push(record);
            date = date.succ_opt().expect("date overflow");
        }
        if !fresh.is_empty() {
            self.append_cache(lat, lon, &fresh)?;
        }
        Ok(out)
    }

    fn read_cache(&self, lat: f64, lon: f64) -> Result<BTreeMap<NaiveDate, WeatherRecord>, IngestError> {
        let path = self.cache_file(lat, lon);
        let mut map = BTreeMap::new();
        if !path.exists() {
            return Ok(map);
        }
        let io_err = |e: std::io::Error| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let content = std::fs::read_to_string(&path).map_err(io_err)?;
        for line in content.lines().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 7 {
                continue;
            }
            let Ok(date) = fields[0].parse::<NaiveDate>() else { continue };
            if fields[6] == "gap" {
                map.insert(date, WeatherRecord::Gap(date));
                continue;
            }
            let parse = |s: &str| s.parse::<f64>().ok();
            if let (Some(tavg), Some(tmin), Some(tmax), Some(humidity), Some(wind_speed)) = (
                parse(fields[1]),
                parse(fields[2]),
                parse(fields[3]),
                parse(fields[4]),
                parse(fields[5]),
            ) {
                map.insert(
                    date,
                    WeatherRecord::Observed(WeatherDay {
                        date,
                        tavg,
                        tmin,
                        tmax,
                        humidity,
                        wind_speed,
                    }),
                );
            }
        }
        Ok(map)
    }

    fn append_cache(&self, lat: f64, lon: f64, records: &[WeatherRecord]) -> Result<(), IngestError> {
        let _guard = self.write_lock.lock().expect("weather cache lock");
        let path = self.cache_file(lat, lon);
        let io_err = |e: std::io::Error| IngestError::Io {
            path: path.display().to_string(),
            source: e,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let existed = path.exists();
        let mut file = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(io_err)?;
        if !existed {
            writeln!(file, "date,tavg,tmin,tmax,humidity,wind_speed,status").map_err(io_err)?;
        }
        for record in records {
            match record {
                WeatherRecord::Observed(d) => writeln!(
                    file,
                    "{},{},{},{},{},{},ok",
                    d.date, d.tavg, d.tmin, d.tmax, d.humidity, d.wind_speed
                )
                .map_err(io_err)?,
                WeatherRecord::Gap(date) => {
                    writeln!(file, "{date},,,,,,gap").map_err(io_err)?
                }
            }
        }
        Ok(())
    }

    /// Pre-populate the cache (used by the demo data generator).
    pub fn seed(&self, lat: f64, lon: f64, records: &[WeatherRecord]) -> Result<(), IngestError> {
        let path = self.cache_file(lat, lon);
        if path.exists() {
            std::fs::remove_file(&path).map_err(|e| IngestError::Io {
                path: path.display().to_string(),
                source: e,
            })?;
        }
        self.append_cache(lat, lon, records)
    }
}

/// Convenience: does this cache directory cover the key at all?
pub fn cache_covers(dir: &Path, lat: f64, lon: f64) -> bool {
    dir.join(format!("weather_{lat:.4}_{lon:.4}.csv")).exists()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::atomic::{AtomicUsize, Ordering};
    use std::sync::Arc;

    struct CountingProvider {
        calls: Arc<AtomicUsize>,
        gap_on: Option<NaiveDate>,
    }

    impl WeatherProvider for CountingProvider {
        fn fetch_day(
            &self,
            _lat: f64,
            _lon: f64,
            date: NaiveDate,
        ) -> Result<Option<WeatherDay>, IngestError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            if self.gap_on == Some(date) {
                return Ok(None);
            }
            Ok(Some(WeatherDay {
                date,
                tavg: 10.5,
                tmin: 5.25,
                tmax: 15.125,
                humidity: 81.5,
                wind_speed: 3.75,
            }))
        }
    }

    fn d(s: &str) -> NaiveDate {
        s.parse().unwrap()
    }

    #[test]
    fn second_call_served_from_cache() {
        let dir = tempfile::tempdir().unwrap();
        let calls = Arc::new(AtomicUsize::new(0));
        let provider = Box::new(CountingProvider { calls: calls.clone(), gap_on: None });
        let cache = WeatherCache::new(dir.path(), Some(provider));
        let r1 = cache.fetch_range(52.0, -2.0, d("2024-01-01"), d("2024-01-03")).unwrap();
        assert_eq!(r1.len(), 3);
        assert_eq!(calls.load(Ordering::SeqCst), 3);
        let r2 = cache.fetch_range(52.0, -2.0, d("2024-01-01"), d("2024-01-03")).unwrap();
        assert_eq!(calls.load(Ordering::SeqCst), 3, "second call must make zero remote calls");
        assert_eq!(r1, r2);
    }

    #[test]
    fn gap_dates_become_explicit_gap_records() {
        let dir = tempfile::tempdir().unwrap();
        let provider = Box::new(CountingProvider {
            calls: Arc::new(AtomicUsize::new(0)),
            gap_on: Some(d("2024-01-02")),
        });
        let cache = WeatherCache::new(dir.path(), Some(provider));
        let r = cache.fetch_range(52.0, -2.0, d("2024-01-01"), d("2024-01-03")).unwrap();
        assert_eq!(r[1], WeatherRecord::Gap(d("2024-01-02")));
        // gap persists through the cache, not re-fetched or fabricated
        let r2 = cache.fetch_range(52.0, -2.0, d("2024-01-01"), d("2024-01-03")).unwrap();
        assert_eq!(r2[1], WeatherRecord::Gap(d("2024-01-02")));
    }

    #[test]
    fn cache_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let day = WeatherDay {
            date: d("2024-02-29"),
            tavg: 10.123456789012345,
            tmin: -3.000000000000001,
            tmax: 17.99999999999999,
            humidity: 66.66666666666667,
            wind_speed: 0.1,
        };
        let cache = WeatherCache::new(dir.path(), None);
        cache.seed(51.5, -0.1234, &[WeatherRecord::Observed(day.clone())]).unwrap();
        let r = cache.fetch_range(51.5, -0.1234, day.date, day.date).unwrap();
        assert_eq!(r, vec![WeatherRecord::Observed(day)]);
    }

    #[test]
    fn cache_only_miss_is_a_retrieval_error() {
        let dir = tempfile::tempdir().unwrap();
        let cache = WeatherCache::new(dir.path(), None);
        let err = cache
            .fetch_range(52.0, -2.0, d("2024-01-01"), d("2024-01-01"))
            .unwrap_err();
        match err {
            IngestError::WeatherRetrieval { lat, lon, date, .. } => {
                assert_eq!((lat, lon), (52.0, -2.0));
                assert_eq!(date, d("2024-01-01"));
            }
            other => panic!("expected retrieval error, got {other:?}"),
        }
    }

    #[test]
    fn weather_day_invariants_enforced() {
        let mut day = WeatherDay {
            date: d("2024-01-01"),
            tavg: 5.0,
            tmin: 10.0,
            tmax: 15.0,
            humidity: 50.0,
            wind_speed: 1.0,
        };
        assert!(day.validate().is_err());
        day.tmin = 0.0;
        assert!(day.validate().is_ok());
        day.humidity = 150.0;
        assert!(day.validate().is_err());
    }
}
