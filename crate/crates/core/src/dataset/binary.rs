//! Embedding (`A2AE`) and presence-mask (`A2AM`) binary files.
//!
//! Both share a 24-byte little-endian header:
//!
//! ```text
//! embedding: "A2AE" | u16 version=1 | u8 dtype=0 (f32) | u8 pad | u64 rows | u64 dims | f32 payload
//! mask:      "A2AM" | u16 version=1 | u16 pad          | u64 rows | u64 modalities | u8 payload
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::io::write_atomic;

pub const EMBEDDING_MAGIC: &[u8; 4] = b"A2AE";
pub const MASK_MAGIC: &[u8; 4] = b"A2AM";
pub const FORMAT_VERSION: u16 = 1;
pub const HEADER_LEN: usize = 24;

/// Row-major instance embeddings. Stored as `f32` on disk and held as `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix {
    rows: usize,
    dims: usize,
    data: Vec<f64>,
}

impl EmbeddingMatrix {
    pub fn new(rows: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        if rows.checked_mul(dims) != Some(data.len()) {
            return Err(Error::DimensionMismatch {
                location: "embedding matrix".into(),
                detail: format!("{rows}x{dims} needs {} values, got {}", rows * dims, data.len()),
            });
        }
        if let Some(index) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                path: "<memory>".into(),
                index,
            });
        }
        Ok(Self { rows, dims, data })
    }

    /// Rounds every value through `f32`, the on-disk precision.
    pub fn from_f64_lossy(rows: usize, dims: usize, data: Vec<f64>) -> Result<Self> {
        Self::new(rows, dims, data.into_iter().map(|v| v as f32 as f64).collect())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dims..(i + 1) * self.dims]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + 4 * self.data.len());
        out.extend_from_slice(EMBEDDING_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.push(0); // dtype f32
        out.push(0);
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.dims as u64).to_le_bytes());
        for &v in &self.data {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (rows, dims) = read_header(bytes, path, EMBEDDING_MAGIC, |b| {
            if b[6] != 0 {
                return Err(Error::Unsupported {
                    path: path.into(),
                    field: "dtype",
                    value: b[6] as u64,
                });
            }
            Ok(())
        })?;
        let count = checked_count(rows, dims, 4, path)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != count {
            return Err(Error::Truncated {
                path: path.into(),
                expected: count,
                found: payload.len() as u64,
            });
        }
        let mut data = Vec::with_capacity((count / 4) as usize);
        for (index, chunk) in payload.chunks_exact(4).enumerate() {
            let v = f32::from_le_bytes(chunk.try_into().unwrap());
            if !v.is_finite() {
                return Err(Error::NonFinite {
                    path: path.into(),
                    index,
                });
            }
            data.push(v as f64);
        }
        Ok(Self {
            rows: rows as usize,
            dims: dims as usize,
            data,
        })
    }
}

/// Per-(instance, modality) availability bits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PresenceMask {
    rows: usize,
    modalities: usize,
    bits: Vec<bool>,
}

impl PresenceMask {
    pub fn all_present(rows: usize, modalities: usize) -> Self {
        Self {
            rows,
            modalities,
            bits: vec![true; rows * modalities],
        }
    }

    pub fn from_bits(rows: usize, modalities: usize, bits: Vec<bool>) -> Result<Self> {
        if rows * modalities != bits.len() {
            return Err(Error::DimensionMismatch {
                location: "presence mask".into(),
                detail: format!("{rows}x{modalities} needs {} bits, got {}", rows * modalities, bits.len()),
            });
        }
        Ok(Self {
            rows,
            modalities,
            bits,
        })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn modalities(&self) -> usize {
        self.modalities
    }

    pub fn get(&self, row: usize, modality: usize) -> bool {
        self.bits[row * self.modalities + modality]
    }

    pub fn set(&mut self, row: usize, modality: usize, present: bool) {
        self.bits[row * self.modalities + modality] = present;
    }

    pub fn row(&self, row: usize) -> &[bool] {
        &self.bits[row * self.modalities..(row + 1) * self.modalities]
    }

    pub fn present_count(&self, row: usize) -> usize {
        self.row(row).iter().filter(|&&b| b).count()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.bits.len());
        out.extend_from_slice(MASK_MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&0u16.to_le_bytes());
        out.extend_from_slice(&(self.rows as u64).to_le_bytes());
        out.extend_from_slice(&(self.modalities as u64).to_le_bytes());
        out.extend(self.bits.iter().map(|&b| b as u8));
        out
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let (rows, modalities) = read_header(bytes, path, MASK_MAGIC, |_| Ok(()))?;
        let count = checked_count(rows, modalities, 1, path)?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() as u64 != count {
            return Err(Error::Truncated {
                path: path.into(),
                expected: count,
                found: payload.len() as u64,
            });
        }
        let mut bits = Vec::with_capacity(payload.len());
        for (i, &b) in payload.iter().enumerate() {
            match b {
                0 => bits.push(false),
                1 => bits.push(true),
                other => {
                    return Err(Error::format(
                        path.display().to_string(),
                        format!("mask byte {i} is {other}, expected 0 or 1"),
                    ))
                }
            }
        }
        Ok(Self {
            rows: rows as usize,
            modalities: modalities as usize,
            bits,
        })
    }
}

fn read_header(
    bytes: &[u8],
    path: &Path,
    magic: &'static [u8; 4],
    extra: impl FnOnce(&[u8]) -> Result<()>,
) -> Result<(u64, u64)> {
    if bytes.len() < 4 || &bytes[..4] != magic {
        let found = String::from_utf8_lossy(&bytes[..bytes.len().min(4)]).into_owned();
        return Err(Error::BadMagic {
            path: path.into(),
            expected: std::str::from_utf8(magic).unwrap(),
            found,
        });
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::Truncated {
            path: path.into(),
            expected: HEADER_LEN as u64,
            found: bytes.len() as u64,
        });
    }
    let version = u16::from_le_bytes([bytes[4], bytes[5]]);
    if version != FORMAT_VERSION {
        return Err(Error::Unsupported {
            path: path.into(),
            field: "version",
            value: version as u64,
        });
    }
    extra(bytes)?;
    let rows = u64::from_le_bytes(bytes[8..16].try_into().unwrap());
    let cols = u64::from_le_bytes(bytes[16..24].try_into().unwrap());
    Ok((rows, cols))
}

fn checked_count(rows: u64, cols: u64, width: u64, path: &Path) -> Result<u64> {
    rows.checked_mul(cols)
        .and_then(|n| n.checked_mul(width))
        .ok_or_else(|| Error::format(path.display().to_string(), "header dimensions overflow"))
}

pub fn read_embedding_file(path: &Path) -> Result<EmbeddingMatrix> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    EmbeddingMatrix::decode(&bytes, path)
}

pub fn write_embedding_file(path: &Path, matrix: &EmbeddingMatrix) -> Result<()> {
    write_atomic(path, &matrix.encode())
}

pub fn read_mask_file(path: &Path) -> Result<PresenceMask> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    PresenceMask::decode(&bytes, path)
}

pub fn write_mask_file(path: &Path, mask: &PresenceMask) -> Result<()> {
    write_atomic(path, &mask.encode())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("test.a2ae")
    }

    #[test]
    fn one_by_two_layout() {
        let m = EmbeddingMatrix::new(1, 2, vec![0.5, -1.0]).unwrap();
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 8);
        assert_eq!(&bytes[..4], b"A2AE");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &1u64.to_le_bytes());
        assert_eq!(&bytes[16..24], &2u64.to_le_bytes());
        assert_eq!(&bytes[24..28], &0.5f32.to_le_bytes());
        assert_eq!(&bytes[28..32], &(-1.0f32).to_le_bytes());
        let back = EmbeddingMatrix::decode(&bytes, p()).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encode(), bytes);
    }

    #[test]
    fn mask_magic_rejected_by_embedding_reader() {
        let mask = PresenceMask::all_present(2, 2).encode();
        let err = EmbeddingMatrix::decode(&mask, p()).unwrap_err();
        assert!(err.to_string().contains("bad magic"), "{err}");
    }

    #[test]
    fn truncated_payload() {
        let mut bytes = EmbeddingMatrix::new(2, 2, vec![1.0; 4]).unwrap().encode();
        bytes.pop();
        assert!(matches!(
            EmbeddingMatrix::decode(&bytes, p()),
            Err(Error::Truncated { .. })
        ));
        assert!(matches!(
            EmbeddingMatrix::decode(&bytes[..10], p()),
            Err(Error::Truncated { .. })
        ));
    }

    #[test]
    fn unsupported_version_and_dtype() {
        let mut bytes = EmbeddingMatrix::new(1, 1, vec![1.0]).unwrap().encode();
        bytes[4] = 2;
        assert!(matches!(
            EmbeddingMatrix::decode(&bytes, p()),
            Err(Error::Unsupported { field: "version", .. })
        ));
        bytes[4] = 1;
        bytes[6] = 1;
        assert!(matches!(
            EmbeddingMatrix::decode(&bytes, p()),
            Err(Error::Unsupported { field: "dtype", .. })
        ));
    }

    #[test]
    fn nan_rejected() {
        let mut bytes = EmbeddingMatrix::new(1, 1, vec![1.0]).unwrap().encode();
        bytes[24..28].copy_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(
            EmbeddingMatrix::decode(&bytes, p()),
            Err(Error::NonFinite { .. })
        ));
        assert!(EmbeddingMatrix::new(1, 1, vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn mask_rejects_non_binary_bytes() {
        let mut bytes = PresenceMask::all_present(1, 2).encode();
        bytes[HEADER_LEN] = 2;
        assert!(PresenceMask::decode(&bytes, p()).is_err());
    }

    #[test]
    fn mask_layout() {
        let m = PresenceMask::from_bits(2, 3, vec![true, false, true, false, false, true]).unwrap();
        let bytes = m.encode();
        assert_eq!(bytes.len(), HEADER_LEN + 6);
        assert_eq!(&bytes[..4], b"A2AM");
        assert_eq!(&bytes[HEADER_LEN..], &[1, 0, 1, 0, 0, 1]);
        assert_eq!(PresenceMask::decode(&bytes, p()).unwrap(), m);
    }

    #[test]
    fn large_random_matrix_round_trips_through_disk() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        let data: Vec<f64> = (0..1000 * 64).map(|_| rng.random_range(-3.0..3.0)).collect();
        let m = EmbeddingMatrix::from_f64_lossy(1000, 64, data).unwrap();
        let dir = std::env::temp_dir().join(format!("cr-bin-{}", std::process::id()));
        fs::create_dir_all(&dir).unwrap();
        let path = dir.join("m.a2ae");
        write_embedding_file(&path, &m).unwrap();
        let back = read_embedding_file(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.encode(), fs::read(&path).unwrap());
        fs::remove_dir_all(&dir).unwrap();
    }

    proptest! {
        #[test]
        fn embedding_bytes_round_trip(rows in 0usize..6, dims in 1usize..6, seed in any::<u64>()) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..rows * dims).map(|_| rng.random::<f32>() as f64 * 2.0 - 1.0).collect();
            let m = EmbeddingMatrix::new(rows, dims, data).unwrap();
            let bytes = m.encode();
            let back = EmbeddingMatrix::decode(&bytes, p()).unwrap();
            prop_assert_eq!(back.encode(), bytes);
        }

        #[test]
        fn mask_bytes_round_trip(bits in proptest::collection::vec(any::<bool>(), 0..40), m in 1usize..5) {
            let rows = bits.len() / m;
            let bits = bits[..rows * m].to_vec();
            let mask = PresenceMask::from_bits(rows, m, bits).unwrap();
            let bytes = mask.encode();
            prop_assert_eq!(PresenceMask::decode(&bytes, p()).unwrap().encode(), bytes);
        }
    }
}
