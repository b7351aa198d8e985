//! `DPET1` tensor container: magic, little-endian `u32` rank and dims,
//! `f32` payload, CRC32 of everything before it.

use std::fs;
use std::io;
use std::path::Path;

use thiserror::Error;

pub const MAGIC: &[u8; 5] = b"DPET1";

#[derive(Debug, Error)]
pub enum TensorFileError {
    #[error("bad magic {0:?}, expected \"DPET1\"")]
    Magic(Vec<u8>),
    #[error("file truncated: need {needed} bytes, have {actual}")]
    Truncated { needed: usize, actual: usize },
    #[error("checksum mismatch: stored {stored:#010x}, computed {computed:#010x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("{0} trailing bytes after checksum")]
    Trailing(usize),
    #[error("payload of {elements} elements does not match dims {dims:?}")]
    Shape { dims: Vec<u32>, elements: usize },
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    pub dims: Vec<u32>,
    pub data: Vec<f32>,
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d as usize))
}

impl TensorFile {
    pub fn new(dims: Vec<u32>, data: Vec<f32>) -> Result<Self, TensorFileError> {
        if element_count(&dims) != Some(data.len()) {
            return Err(TensorFileError::Shape {
                dims,
                elements: data.len(),
            });
        }
        Ok(Self { dims, data })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(MAGIC.len() + 4 * (1 + self.dims.len() + self.data.len()) + 4);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, TensorFileError> {
        let need = |needed: usize| {
            if bytes.len() < needed {
                Err(TensorFileError::Truncated {
                    needed,
                    actual: bytes.len(),
                })
            } else {
                Ok(())
            }
        };
        need(MAGIC.len())?;
        if &bytes[..MAGIC.len()] != MAGIC {
            return Err(TensorFileError::Magic(bytes[..MAGIC.len()].to_vec()));
        }
        let word = |at: usize| u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"));
        let mut at = MAGIC.len();
        need(at + 4)?;
        let rank = word(at) as usize;
        at += 4;
        need(at.saturating_add(rank.saturating_mul(4)))?;
        let dims: Vec<u32> = (0..rank).map(|i| word(at + 4 * i)).collect();
        at += 4 * rank;
        let elements = element_count(&dims).ok_or_else(|| TensorFileError::Shape {
            dims: dims.clone(),
            elements: usize::MAX,
        })?;
        let end = elements
            .checked_mul(4)
            .and_then(|p| p.checked_add(at))
            .ok_or_else(|| TensorFileError::Shape {
                dims: dims.clone(),
                elements,
            })?;
        need(end.saturating_add(4))?;
        let computed = crc32fast::hash(&bytes[..end]);
        let stored = word(end);
        if stored != computed {
            return Err(TensorFileError::Checksum { stored, computed });
        }
        if bytes.len() > end + 4 {
            return Err(TensorFileError::Trailing(bytes.len() - end - 4));
        }
        let data = bytes[at..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        Ok(Self { dims, data })
    }

    pub fn read(path: &Path) -> Result<Self, TensorFileError> {
        Self::from_bytes(&fs::read(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), TensorFileError> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn layout() {
        let t = TensorFile::new(vec![2], vec![1.0, -2.0]).unwrap();
        let b = t.to_bytes();
        assert_eq!(&b[..5], b"DPET1");
        assert_eq!(&b[5..9], &1u32.to_le_bytes());
        assert_eq!(&b[9..13], &2u32.to_le_bytes());
        assert_eq!(&b[13..17], &1.0f32.to_le_bytes());
        assert_eq!(b.len(), 5 + 4 + 4 + 8 + 4);
        assert_eq!(TensorFile::from_bytes(&b).unwrap(), t);
    }

    #[test]
    fn rejects_shape_mismatch() {
        assert!(TensorFile::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(TensorFile::new(vec![], vec![7.0]).unwrap().data, vec![7.0]);
    }
}
