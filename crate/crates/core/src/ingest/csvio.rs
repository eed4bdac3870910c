//! CSV readers for monitoring data and substation metadata.
//!
//! Monitoring schema: `substation_id, timestamp_utc, p_kw_l1, p_kw_l2,
//! p_kw_l3, q_kvar_l1, q_kvar_l2, q_kvar_l3` (ISO-8601 timestamps, empty
//! power fields mark missing phases). Metadata schema: `substation_id,
//! customer_count, latitude, longitude, primary_id`. Unparseable rows are
//! collected in a rejects report, never silently dropped.

use super::{IngestError, RawMeasurement, SubstationMeta};
use chrono::{DateTime, Utc};
use std::collections::BTreeMap;
use std::path::Path;

pub const MONITORING_COLUMNS: [&str; 8] = [
    "substation_id",
    "timestamp_utc",
    "p_kw_l1",
    "p_kw_l2",
    "p_kw_l3",
    "q_kvar_l1",
    "q_kvar_l2",
    "q_kvar_l3",
];

pub const METADATA_COLUMNS: [&str; 5] = [
    "substation_id",
    "customer_count",
    "latitude",
    "longitude",
    "primary_id",
];

/// A row that failed to parse, with its 1-based data row index.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize)]
pub struct RejectedRow {
    pub row: usize,
    pub reason: String,
}

#[derive(Debug, Default)]
pub struct MonitoringParse {
    pub measurements: Vec<RawMeasurement>,
    pub rejects: Vec<RejectedRow>,
}

fn open_reader(path: &Path) -> Result<csv::Reader<std::fs::File>, IngestError> {
    csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })
}

fn column_index(
    headers: &csv::StringRecord,
    required: &[&str],
) -> Result<BTreeMap<String, usize>, IngestError> {
    let mut map = BTreeMap::new();
    for (i, h) in headers.iter().enumerate() {
        map.insert(h.to_string(), i);
    }
    for col in required {
        if !map.contains_key(*col) {
            return Err(IngestError::MissingColumn((*col).to_string()));
        }
    }
    Ok(map)
}

fn opt_f64(field: &str) -> Result<Option<f64>, String> {
    if field.is_empty() {
        return Ok(None);
    }
    field
        .parse::<f64>()
        .map(Some)
        .map_err(|_| format!("non-numeric value `{field}`"))
}

/// Parse a monitoring CSV. Rows with bad timestamps or non-numeric power
/// fields land in the rejects report with their row index.
pub fn parse_monitoring_csv(path: &Path) -> Result<MonitoringParse, IngestError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?
        .clone();
    let cols = column_index(&headers, &MONITORING_COLUMNS)?;

    let mut out = MonitoringParse::default();
    for (i, record) in reader.records().enumerate() {
        let row = i + 1;
        let record = match record {
            Ok(r) => r,
            Err(e) => {
                out.rejects.push(RejectedRow { row, reason: format!("malformed row: {e}") });
                continue;
            }
        };
        let field = |name: &str| record.get(cols[name]).unwrap_or("");
        let ts = match field("timestamp_utc").parse::<DateTime<Utc>>() {
            Ok(t) => t,
            Err(_) => {
                out.rejects.push(RejectedRow {
                    row,
                    reason: format!("unparseable timestamp `{}`", field("timestamp_utc")),
                });
                continue;
            }
        };
        let mut p = [None; 3];
        let mut q = [None; 3];
        let mut bad = None;
        for (slot, name) in ["p_kw_l1", "p_kw_l2", "p_kw_l3"].iter().enumerate() {
            match opt_f64(field(name)) {
                Ok(v) => p[slot] = v,
                Err(reason) => bad = Some(format!("{name}: {reason}")),
            }
        }
        for (slot, name) in ["q_kvar_l1", "q_kvar_l2", "q_kvar_l3"].iter().enumerate() {
            match opt_f64(field(name)) {
                Ok(v) => q[slot] = v,
                Err(reason) => bad = Some(format!("{name}: {reason}")),
            }
        }
        if let Some(reason) = bad {
            out.rejects.push(RejectedRow { row, reason });
            continue;
        }
        out.measurements.push(RawMeasurement {
            substation_id: field("substation_id").to_string(),
            timestamp: ts,
            p_kw: p,
            q_kvar: q,
        });
    }
    // timestamps strictly increasing per substation after deduplication
    out.measurements
        .sort_by(|a, b| (&a.substation_id, a.timestamp).cmp(&(&b.substation_id, b.timestamp)));
    out.measurements
        .dedup_by(|a, b| a.substation_id == b.substation_id && a.timestamp == b.timestamp);
    Ok(out)
}

/// Parse the metadata CSV into a map keyed by substation id.
pub fn parse_metadata_csv(path: &Path) -> Result<BTreeMap<String, SubstationMeta>, IngestError> {
    let mut reader = open_reader(path)?;
    let headers = reader
        .headers()
        .map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?
        .clone();
    let cols = column_index(&headers, &METADATA_COLUMNS)?;

    let mut out = BTreeMap::new();
    for record in reader.records() {
        let record = record.map_err(|e| IngestError::Io {
            path: path.display().to_string(),
            source: std::io::Error::other(e),
        })?;
        let field = |name: &str| record.get(cols[name]).unwrap_or("");
        let id = field("substation_id").to_string();
        let customer_count: i64 = field("customer_count").parse().map_err(|_| {
            IngestError::InvalidMetadata {
                id: id.clone(),
                reason: format!("bad customer_count `{}`", field("customer_count")),
            }
        })?;
        if customer_count < 0 {
            return Err(IngestError::NegativeCustomerCount(customer_count));
        }
        let parse_f = |name: &str| -> Result<f64, IngestError> {
            field(name).parse().map_err(|_| IngestError::InvalidMetadata {
                id: id.clone(),
                reason: format!("bad {name} `{}`", field(name)),
            })
        };
        let meta = SubstationMeta {
            substation_id: id.clone(),
            customer_count: customer_count as u32,
            latitude: parse_f("latitude")?,
            longitude: parse_f("longitude")?,
            primary_id: field("primary_id").to_string(),
        };
        meta.validate()?;
        out.insert(id, meta);
    }
    Ok(out)
}
