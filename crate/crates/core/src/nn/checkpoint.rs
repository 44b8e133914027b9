//! "ERSW" parameter checkpoints.
//!
//! Layout (little-endian): magic `ERSW`, `u16` version, the 64-byte hex
//! digest of the [`NetworkSpec`], `u32` block count, then per block a `u32`
//! length and that many `f32` values, finally a CRC32 of everything before it.
//! Blocks follow [`Parameters::blocks`] order, running statistics included.

use std::path::Path;

use super::network::{NetworkSpec, Parameters};

pub const MAGIC: &[u8; 4] = b"ERSW";
pub const VERSION: u16 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {0}, expected {VERSION}")]
    VersionMismatch(u16),
    #[error("checkpoint was written for a different network ({found})")]
    DigestMismatch { found: String },
    #[error("checkpoint ends early or has trailing bytes")]
    Truncated,
    #[error("checkpoint checksum mismatch")]
    ChecksumMismatch,
    #[error("block {index} holds {found} values, network needs {expected}")]
    BlockMismatch {
        index: usize,
        found: usize,
        expected: usize,
    },
}

pub fn encode(spec: &NetworkSpec, params: &Parameters) -> Vec<u8> {
    let blocks = params.blocks();
    let mut out = Vec::with_capacity(80 + blocks.iter().map(|b| 4 + 4 * b.len()).sum::<usize>());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(spec.digest().as_bytes());
    out.extend_from_slice(&(blocks.len() as u32).to_le_bytes());
    for b in blocks {
        out.extend_from_slice(&(b.len() as u32).to_le_bytes());
        for &v in b {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Loads into a freshly shaped parameter set for `spec`.
pub fn decode(spec: &NetworkSpec, bytes: &[u8]) -> Result<Parameters, CheckpointError> {
    if bytes.len() < 4 {
        return Err(CheckpointError::Truncated);
    }
    if &bytes[..4] != MAGIC {
        return Err(CheckpointError::BadMagic);
    }
    let mut pos = 4;
    let mut take = |n: usize| -> Result<&[u8], CheckpointError> {
        let s = bytes.get(pos..pos + n).ok_or(CheckpointError::Truncated)?;
        pos += n;
        Ok(s)
    };
    let version = u16::from_le_bytes(take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(CheckpointError::VersionMismatch(version));
    }
    let digest = String::from_utf8_lossy(take(64)?).into_owned();
    if digest != spec.digest() {
        return Err(CheckpointError::DigestMismatch { found: digest });
    }
    if bytes.len() < 4 + 2 + 64 + 4 + 4 {
        return Err(CheckpointError::Truncated);
    }
    let payload_end = bytes.len() - 4;
    let stored = u32::from_le_bytes(bytes[payload_end..].try_into().unwrap());
    if stored != crc32fast::hash(&bytes[..payload_end]) {
        return Err(CheckpointError::ChecksumMismatch);
    }
    let count = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
    let mut params = Parameters::init(spec, 0);
    let mut targets = params.blocks_mut();
    if count != targets.len() {
        return Err(CheckpointError::BlockMismatch {
            index: targets.len(),
            found: count,
            expected: targets.len(),
        });
    }
    for (index, t) in targets.iter_mut().enumerate() {
        let len = u32::from_le_bytes(take(4)?.try_into().unwrap()) as usize;
        if len != t.len() {
            return Err(CheckpointError::BlockMismatch {
                index,
                found: len,
                expected: t.len(),
            });
        }
        let raw = take(4 * len)?;
        for (d, q) in t.iter_mut().zip(raw.chunks_exact(4)) {
            *d = f32::from_le_bytes(q.try_into().unwrap()) as f64;
        }
    }
    if pos != payload_end {
        return Err(CheckpointError::Truncated);
    }
    Ok(params)
}

/// Atomic write through a sibling temporary file.
pub fn save_checkpoint(
    spec: &NetworkSpec,
    params: &Parameters,
    path: &Path,
) -> Result<(), CheckpointError> {
    crate::io::write_atomic(path, &encode(spec, params))?;
    Ok(())
}

pub fn load_checkpoint(spec: &NetworkSpec, path: &Path) -> Result<Parameters, CheckpointError> {
    decode(spec, &std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_at_f32_precision() {
        let spec = NetworkSpec::ersinvnet(3, &[4, 8], 1).unwrap();
        let params = Parameters::init(&spec, 7);
        let bytes = encode(&spec, &params);
        let back = decode(&spec, &bytes).unwrap();
        for (a, b) in params.blocks().iter().zip(back.blocks()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x as f32 as f64, *y);
            }
        }
        assert_eq!(encode(&spec, &back), bytes);
    }

    #[test]
    fn rejects_other_networks_and_damage() {
        let spec = NetworkSpec::ersinvnet(3, &[4, 8], 1).unwrap();
        let other = NetworkSpec::ersinvnet(3, &[4, 6], 1).unwrap();
        let bytes = encode(&spec, &Parameters::init(&spec, 1));
        assert!(matches!(
            decode(&other, &bytes),
            Err(CheckpointError::DigestMismatch { .. })
        ));
        let mut flipped = bytes.clone();
        flipped[100] ^= 4;
        assert!(matches!(
            decode(&spec, &flipped),
            Err(CheckpointError::ChecksumMismatch)
        ));
        assert!(decode(&spec, &bytes[..50]).is_err());
    }
}
