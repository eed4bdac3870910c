//! Self-describing model container: a JSON header (model kind, schedule,
//! condition mode, channel layout, scaler) followed by named f64 arrays.
//! Sampling from a checkpoint needs no side information.
//!
//! Layout: magic `LVGENCK1`, u32 header length, JSON header bytes, u32
//! array count, then per array: u32 name length, name, three u64 dims,
//! little-endian f64 data.

use crate::denoiser::DenoiserConfig;
use crate::diffusion::{ConditionMode, DiffusionError, DiffusionSchedule};
use crate::ingest::Scaler;
use crate::nn::Tensor;
use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;
use thiserror::Error;

const MAGIC: &[u8; 8] = b"LVGENCK1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
    #[error("header error: {0}")]
    Header(#[from] serde_json::Error),
    #[error("checkpoint is a {got:?} model, expected {expected:?}")]
    WrongKind { expected: ModelKind, got: ModelKind },
    #[error("missing array `{0}`")]
    MissingArray(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum ModelKind {
    Diffusion,
    Gmm,
    Tao,
}

/// Linear schedule parameters, enough to rebuild the schedule exactly.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ScheduleSpec {
    pub t_steps: usize,
    pub beta0: f64,
    pub beta1: f64,
}

impl ScheduleSpec {
    pub fn build(&self) -> Result<DiffusionSchedule, DiffusionError> {
        DiffusionSchedule::linear(self.t_steps, self.beta0, self.beta1)
    }
}

impl Default for ScheduleSpec {
    fn default() -> Self {
        Self { t_steps: 200, beta0: 1e-4, beta1: 0.02 }
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct CheckpointHeader {
    pub kind: ModelKind,
    pub tool_version: String,
    pub mode: Option<ConditionMode>,
    pub schedule: Option<ScheduleSpec>,
    pub denoiser: Option<DenoiserConfig>,
    pub scaler: Option<Scaler>,
    /// Names of the condition channels, in stacking order.
    pub channel_layout: Vec<String>,
    pub extra: BTreeMap<String, String>,
}

impl CheckpointHeader {
    pub fn new(kind: ModelKind) -> Self {
        Self {
            kind,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            mode: None,
            schedule: None,
            denoiser: None,
            scaler: None,
            channel_layout: Vec::new(),
            extra: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub arrays: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn array(&self, name: &str) -> Result<&Tensor, CheckpointError> {
        self.arrays
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| CheckpointError::MissingArray(name.to_string()))
    }

    pub fn expect_kind(&self, expected: ModelKind) -> Result<(), CheckpointError> {
        if self.header.kind != expected {
            return Err(CheckpointError::WrongKind { expected, got: self.header.kind });
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        let io_err = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        };
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(io_err)?;
        }
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(io_err)?);
        f.write_all(MAGIC).map_err(io_err)?;
        let header = serde_json::to_vec(&self.header)?;
        f.write_all(&(header.len() as u32).to_le_bytes()).map_err(io_err)?;
        f.write_all(&header).map_err(io_err)?;
        f.write_all(&(self.arrays.len() as u32).to_le_bytes()).map_err(io_err)?;
        for (name, tensor) in &self.arrays {
            let bytes = name.as_bytes();
            f.write_all(&(bytes.len() as u32).to_le_bytes()).map_err(io_err)?;
            f.write_all(bytes).map_err(io_err)?;
            let (d0, d1, d2) = tensor.dim();
            for d in [d0, d1, d2] {
                f.write_all(&(d as u64).to_le_bytes()).map_err(io_err)?;
            }
            for v in tensor.iter() {
                f.write_all(&v.to_le_bytes()).map_err(io_err)?;
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        let io_err = |e: std::io::Error| CheckpointError::Io {
            path: path.display().to_string(),
            source: e,
        };
        let mut f = std::io::BufReader::new(std::fs::File::open(path).map_err(io_err)?);
        let mut magic = [0u8; 8];
        f.read_exact(&mut magic).map_err(io_err)?;
        if &magic != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let mut u32buf = [0u8; 4];
        f.read_exact(&mut u32buf).map_err(io_err)?;
        let header_len = u32::from_le_bytes(u32buf) as usize;
        if header_len > 64 << 20 {
            return Err(CheckpointError::Corrupt(format!("header length {header_len}")));
        }
        let mut header_bytes = vec![0u8; header_len];
        f.read_exact(&mut header_bytes).map_err(io_err)?;
        let header: CheckpointHeader = serde_json::from_slice(&header_bytes)?;

        f.read_exact(&mut u32buf).map_err(io_err)?;
        let count = u32::from_le_bytes(u32buf) as usize;
        let mut arrays = Vec::with_capacity(count);
        for _ in 0..count {
            f.read_exact(&mut u32buf).map_err(io_err)?;
            let name_len = u32::from_le_bytes(u32buf) as usize;
            if name_len > 1 << 16 {
                return Err(CheckpointError::Corrupt(format!("array name length {name_len}")));
            }
            let mut name_bytes = vec![0u8; name_len];
            f.read_exact(&mut name_bytes).map_err(io_err)?;
            let name = String::from_utf8(name_bytes)
                .map_err(|_| CheckpointError::Corrupt("array name not utf-8".into()))?;
            let mut dims = [0usize; 3];
            let mut u64buf = [0u8; 8];
            for d in &mut dims {
                f.read_exact(&mut u64buf).map_err(io_err)?;
                *d = u64::from_le_bytes(u64buf) as usize;
            }
            let len = dims[0]
                .checked_mul(dims[1])
                .and_then(|v| v.checked_mul(dims[2]))
                .ok_or_else(|| CheckpointError::Corrupt("array dims overflow".into()))?;
            if len > 1 << 30 {
                return Err(CheckpointError::Corrupt(format!("array of {len} elements")));
            }
            let mut data = vec![0f64; len];
            for v in &mut data {
                f.read_exact(&mut u64buf).map_err(io_err)?;
                *v = f64::from_le_bytes(u64buf);
            }
            let tensor = Tensor::from_shape_vec((dims[0], dims[1], dims[2]), data)
                .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
            arrays.push((name, tensor));
        }
        Ok(Self { header, arrays })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample_checkpoint() -> Checkpoint {
        let mut header = CheckpointHeader::new(ModelKind::Diffusion);
        header.mode = Some(ConditionMode::Wcs);
        header.schedule = Some(ScheduleSpec { t_steps: 50, beta0: 1e-4, beta1: 0.02 });
        header.scaler = Some(Scaler { p_min: 0.0, p_max: 412.5, q_min: -3.0, q_max: 99.0 });
        header.channel_layout = vec!["dow0".into(), "tavg".into()];
        header.extra.insert("note".into(), "unit test".into());
        let arrays = vec![
            ("input.w".to_string(), Tensor::from_shape_fn((4, 2, 1), |(a, b, _)| a as f64 - b as f64)),
            ("input.b".to_string(), Tensor::from_elem((1, 4, 1), 0.125)),
        ];
        Checkpoint { header, arrays }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ck = sample_checkpoint();
        ck.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.header, ck.header);
        assert_eq!(loaded.arrays.len(), 2);
        for ((na, ta), (nb, tb)) in ck.arrays.iter().zip(&loaded.arrays) {
            assert_eq!(na, nb);
            assert_eq!(ta, tb);
        }
        assert!(loaded.array("input.w").is_ok());
        assert!(matches!(
            loaded.array("nope"),
            Err(CheckpointError::MissingArray(_))
        ));
    }

    #[test]
    fn bad_magic_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk.ckpt");
        std::fs::write(&path, b"NOTACKPT0000").unwrap();
        assert!(matches!(Checkpoint::load(&path), Err(CheckpointError::BadMagic)));
    }

    #[test]
    fn kind_mismatch_is_detected() {
        let ck = sample_checkpoint();
        assert!(ck.expect_kind(ModelKind::Diffusion).is_ok());
        assert!(matches!(
            ck.expect_kind(ModelKind::Gmm),
            Err(CheckpointError::WrongKind { .. })
        ));
    }

    #[test]
    fn schedule_spec_rebuilds_identical_schedule() {
        let spec = ScheduleSpec { t_steps: 20, beta0: 1e-3, beta1: 0.05 };
        let a = spec.build().unwrap();
        let b = spec.build().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.steps(), 20);
    }
}
