//! "ERSD" sample container.
//!
//! Layout (little-endian): magic `ERSD`, `u16` version, `u32` height,
//! `u32` width, `u32` sample count, `f64` normalization bounds `lo`, `hi`;
//! then per sample four `f32` blocks of `H·W` values (Wenner, Wenner–
//! Schlumberger, tier, target) followed by a `u32`-length JSON meta record;
//! finally a CRC32 of every preceding byte.

use std::io::Write;
use std::path::Path;

use super::{NormalizationSpec, SampleMeta, SamplePair, INPUT_CHANNELS};
use crate::raster::Raster;

pub const MAGIC: &[u8; 4] = b"ERSD";
pub const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 * 3 + 8 * 2;
const BLOCKS: usize = INPUT_CHANNELS + 1;

#[derive(Debug, thiserror::Error)]
pub enum ContainerError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("not a sample container (bad magic)")]
    BadMagic,
    #[error("container version {found}, expected {expected}")]
    VersionMismatch { found: u16, expected: u16 },
    #[error("file ends before the declared content")]
    TruncatedFile,
    #[error("checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    ChecksumMismatch { stored: u32, computed: u32 },
    #[error("sample {index} has a value outside [0, 1]")]
    OutOfRange { index: usize },
    #[error("no samples to write")]
    Empty,
    #[error("sample {index} has inconsistent dimensions")]
    DimensionMismatch { index: usize },
    #[error("meta record of sample {index}: {source}")]
    Meta {
        index: usize,
        source: serde_json::Error,
    },
}

/// Serializes samples into container bytes.
pub fn encode(pairs: &[SamplePair], spec: &NormalizationSpec) -> Result<Vec<u8>, ContainerError> {
    let first = pairs.first().ok_or(ContainerError::Empty)?;
    let (h, w) = first.dims();
    let mut out = Vec::with_capacity(HEADER_LEN + pairs.len() * (BLOCKS * h * w * 4 + 256));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for v in [h, w, pairs.len()] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&spec.lo.to_le_bytes());
    out.extend_from_slice(&spec.hi.to_le_bytes());
    for (index, p) in pairs.iter().enumerate() {
        let blocks = p.input.iter().chain(std::iter::once(&p.target));
        for r in blocks {
            if r.dims() != (h, w) {
                return Err(ContainerError::DimensionMismatch { index });
            }
            for &v in r.as_slice() {
                if !(0.0..=1.0).contains(&v) {
                    return Err(ContainerError::OutOfRange { index });
                }
                out.extend_from_slice(&(v as f32).to_le_bytes());
            }
        }
        let meta =
            serde_json::to_vec(&p.meta).map_err(|source| ContainerError::Meta { index, source })?;
        out.extend_from_slice(&(meta.len() as u32).to_le_bytes());
        out.extend_from_slice(&meta);
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ContainerError> {
        let end = self
            .pos
            .checked_add(n)
            .ok_or(ContainerError::TruncatedFile)?;
        let s = self
            .bytes
            .get(self.pos..end)
            .ok_or(ContainerError::TruncatedFile)?;
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ContainerError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64, ContainerError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Parses container bytes; the inverse of [`encode`].
pub fn decode(bytes: &[u8]) -> Result<(Vec<SamplePair>, NormalizationSpec), ContainerError> {
    if bytes.len() < 4 {
        return Err(ContainerError::TruncatedFile);
    }
    if &bytes[..4] != MAGIC {
        return Err(ContainerError::BadMagic);
    }
    let mut c = Cursor { bytes, pos: 4 };
    let version = u16::from_le_bytes(c.take(2)?.try_into().unwrap());
    if version != VERSION {
        return Err(ContainerError::VersionMismatch {
            found: version,
            expected: VERSION,
        });
    }
    let (h, w, count) = (c.u32()? as usize, c.u32()? as usize, c.u32()? as usize);
    let spec = NormalizationSpec {
        lo: c.f64()?,
        hi: c.f64()?,
    };

    // Walk the structure first so truncation is reported as such.
    let block = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or(ContainerError::TruncatedFile)?;
    let mut metas = Vec::with_capacity(count.min(1 << 20));
    for _ in 0..count {
        let start = c.pos;
        c.take(BLOCKS * block)?;
        let len = c.u32()? as usize;
        c.take(len)?;
        metas.push((start, len));
    }
    let payload_end = c.pos;
    let stored = c.u32()?;
    if c.pos != bytes.len() {
        return Err(ContainerError::TruncatedFile);
    }
    let computed = crc32fast::hash(&bytes[..payload_end]);
    if stored != computed {
        return Err(ContainerError::ChecksumMismatch { stored, computed });
    }

    let mut pairs = Vec::with_capacity(count);
    for (index, &(start, len)) in metas.iter().enumerate() {
        let mut rasters = Vec::with_capacity(BLOCKS);
        for b in 0..BLOCKS {
            let raw = &bytes[start + b * block..start + (b + 1) * block];
            let data: Vec<f64> = raw
                .chunks_exact(4)
                .map(|q| f32::from_le_bytes(q.try_into().unwrap()) as f64)
                .collect();
            if data.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(ContainerError::OutOfRange { index });
            }
            rasters.push(Raster::from_vec(h, w, data).expect("block size"));
        }
        let meta_bytes = &bytes[start + BLOCKS * block + 4..start + BLOCKS * block + 4 + len];
        let meta: SampleMeta = serde_json::from_slice(meta_bytes)
            .map_err(|source| ContainerError::Meta { index, source })?;
        let target = rasters.pop().unwrap();
        let input: [Raster; INPUT_CHANNELS] = rasters.try_into().expect("three channels");
        pairs.push(SamplePair {
            input,
            target,
            meta,
        });
    }
    Ok((pairs, spec))
}

/// Writes atomically: the bytes go to a sibling temporary file that is then
/// renamed over `path`.
pub fn write_dataset(
    pairs: &[SamplePair],
    spec: &NormalizationSpec,
    path: &Path,
) -> Result<(), ContainerError> {
    let bytes = encode(pairs, spec)?;
    let tmp = path.with_extension("ersd.tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(&bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<(Vec<SamplePair>, NormalizationSpec), ContainerError> {
    decode(&std::fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::FamilyType;

    fn sample(i: usize) -> SamplePair {
        let r = |c: usize| {
            Raster::from_fn(8, 16, |a, b| {
                (((a * 16 + b + c + i) % 97) as f64 / 96.0) as f32 as f64
            })
        };
        SamplePair {
            input: [r(0), r(1), r(2)],
            target: r(3),
            meta: SampleMeta {
                family: FamilyType::II,
                seed: 1000 + i as u64,
                index: i as u64,
                anomalies: vec![],
            },
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let pairs: Vec<_> = (0..10).map(sample).collect();
        let spec = NormalizationSpec::default();
        let bytes = encode(&pairs, &spec).unwrap();
        let (back, s2) = decode(&bytes).unwrap();
        assert_eq!(back, pairs);
        assert_eq!(s2, spec);
        assert_eq!(encode(&back, &s2).unwrap(), bytes);
    }

    #[test]
    fn corruption_is_detected() {
        let pairs: Vec<_> = (0..3).map(sample).collect();
        let bytes = encode(&pairs, &NormalizationSpec::default()).unwrap();
        let mid = HEADER_LEN + BLOCKS * 8 * 16 * 4 + 40;
        assert!(matches!(
            decode(&bytes[..mid]),
            Err(ContainerError::TruncatedFile)
        ));
        let mut flipped = bytes.clone();
        flipped[HEADER_LEN + 17] ^= 0x01;
        assert!(matches!(
            decode(&flipped),
            Err(ContainerError::ChecksumMismatch { .. })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(decode(&magic), Err(ContainerError::BadMagic)));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(
            decode(&version),
            Err(ContainerError::VersionMismatch { found: 9, .. })
        ));
    }

    #[test]
    fn rejects_values_outside_unit_interval() {
        let mut p = sample(0);
        p.input[2].set(0, 0, 3.0);
        assert!(matches!(
            encode(&[p], &NormalizationSpec::default()),
            Err(ContainerError::OutOfRange { index: 0 })
        ));
        assert!(matches!(
            encode(&[], &NormalizationSpec::default()),
            Err(ContainerError::Empty)
        ));
    }
}
