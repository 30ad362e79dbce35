//! Parameter checkpoints: one JSON header line, then the flat parameter
//! vector as little-endian `f64`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{GitsError, Result};

use super::{Arch, SurrogateParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub arch: Arch,
    pub param_count: usize,
    pub seed: u64,
    pub epoch: usize,
}

pub fn write_checkpoint(params: &SurrogateParams, path: &Path, seed: u64, epoch: usize) -> Result<()> {
    let header = CheckpointHeader {
        format_version: crate::data::FORMAT_VERSION,
        arch: *params.arch(),
        param_count: params.param_count(),
        seed,
        epoch,
    };
    let mut bytes = serde_json::to_vec(&header)?;
    bytes.push(b'\n');
    for v in params.theta() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes)?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<(SurrogateParams, CheckpointHeader)> {
    let bytes = fs::read(path)?;
    let split = bytes.iter().position(|&b| b == b'\n').ok_or_else(|| GitsError::Manifest {
        path: path.to_path_buf(),
        reason: "missing header line".into(),
    })?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[..split]).map_err(|e| GitsError::Manifest {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    if header.format_version != crate::data::FORMAT_VERSION {
        return Err(GitsError::UnsupportedVersion {
            found: header.format_version,
            expected: crate::data::FORMAT_VERSION,
        });
    }
    let payload = &bytes[split + 1..];
    if payload.len() != header.param_count * 8 {
        return Err(GitsError::LengthMismatch {
            expected: header.param_count * 8,
            found: payload.len(),
        });
    }
    let theta = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok((SurrogateParams::new(header.arch, theta)?, header))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let p = SurrogateParams::init(Arch::default(), 42);
        write_checkpoint(&p, &path, 42, 7).unwrap();
        let (q, header) = read_checkpoint(&path).unwrap();
        assert_eq!(p, q);
        assert_eq!((header.seed, header.epoch), (42, 7));

        let mut bytes = fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 3);
        fs::write(&path, bytes).unwrap();
        assert!(matches!(read_checkpoint(&path), Err(GitsError::LengthMismatch { .. })));
    }
}
