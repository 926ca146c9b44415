//! Binary checkpoints: magic, version, JSON metadata, named tensors.
//!
//! ```text
//! "CRQD" | u32 version | u64 meta_len | meta (JSON)
//! u32 count | per tensor: u32 name_len | name | u8 dtype | u32 rank | u64 dims.. | data (LE)
//! ```

use std::fs;
use std::path::Path;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::params::ParamSet;
use crate::scalar::{DType, Scalar};
use crate::text::Vocab;

pub const MAGIC: &[u8; 4] = b"CRQD";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T: Scalar> {
    pub metadata: serde_json::Value,
    pub tensors: ParamSet<T>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn kind(&self) -> Option<&str> {
        self.metadata.get("kind").and_then(|k| k.as_str())
    }

    pub fn expect_kind(&self, kind: &str) -> Result<()> {
        match self.kind() {
            Some(k) if k == kind => Ok(()),
            other => Err(Error::Format(format!("expected a {kind} checkpoint, found {other:?}"))),
        }
    }

    pub fn vocab_hash(&self) -> Option<&str> {
        self.metadata.get("vocab_hash").and_then(|k| k.as_str())
    }

    pub fn check_vocab(&self, vocab: &Vocab) -> Result<()> {
        let found = vocab.content_hash();
        match self.vocab_hash() {
            Some(expected) if expected == found => Ok(()),
            expected => Err(Error::VocabMismatch {
                expected: expected.unwrap_or("<none>").to_string(),
                found,
            }),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = self.metadata.to_string().into_bytes();
        let mut out = Vec::with_capacity(16 + meta.len() + self.tensors.numel() * T::DTYPE.size());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in self.tensors.iter() {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(T::DTYPE as u8);
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            out.extend_from_slice(&t.le_bytes());
        }
        out
    }

    /// Parses a whole checkpoint; tensors stored at another precision are
    /// converted to `T`.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::Format("bad magic bytes".into()));
        }
        let version = r.u32("version")?;
        if version != FORMAT_VERSION {
            return Err(Error::Version {
                found: version,
                expected: FORMAT_VERSION,
            });
        }
        let meta_len = r.u64("metadata length")? as usize;
        let metadata = serde_json::from_slice(r.take(meta_len, "metadata")?)
            .map_err(|e| Error::Format(format!("metadata: {e}")))?;
        let count = r.u32("tensor count")?;
        let mut tensors = ParamSet::new();
        for _ in 0..count {
            let name_len = r.u32("name length")? as usize;
            let name = std::str::from_utf8(r.take(name_len, "tensor name")?)
                .map_err(|_| Error::Format("tensor name is not UTF-8".into()))?
                .to_string();
            let dtype = DType::from_tag(r.take(1, "dtype")?[0])
                .ok_or_else(|| Error::Format(format!("tensor `{name}`: unknown dtype")))?;
            let rank = r.u32("rank")? as usize;
            let shape = (0..rank)
                .map(|_| r.u64("dimension").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(dtype.size())
                    .ok_or_else(|| Error::Format("tensor size overflows".into()))?,
                "tensor data",
            )?;
            let data = match dtype {
                DType::F32 => raw
                    .chunks_exact(4)
                    .map(|c| T::from_f32(f32::from_le_bytes(c.try_into().unwrap())).unwrap())
                    .collect(),
                DType::F64 => raw
                    .chunks_exact(8)
                    .map(|c| T::c(f64::from_le_bytes(c.try_into().unwrap())))
                    .collect(),
            };
            tensors.insert(name, Tensor::from_vec(shape, data)?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self { metadata, tensors })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Format(format!("truncated while reading {what} at byte {}", self.pos)))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

pub fn save_checkpoint<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, ckpt.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    fn sample() -> Checkpoint<f32> {
        let mut tensors = ParamSet::new();
        tensors.insert("a", Tensor::matrix(2, 3, vec![1.5, -0.0, f32::MIN_POSITIVE, 3.25, 1e-30, -7.0]).unwrap());
        tensors.insert("b.bias", Tensor::row_vector(vec![0.1, 0.2]));
        Checkpoint {
            metadata: json!({"kind": "test", "vocab_hash": "abc"}),
            tensors,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let c = sample();
        let back = Checkpoint::<f32>::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(back.metadata, c.metadata);
        for ((na, a), (nb, b)) in c.tensors.iter().zip(back.tensors.iter()) {
            assert_eq!(na, nb);
            assert_eq!(a.shape(), b.shape());
            let bits = |t: &Tensor<f32>| t.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(a), bits(b));
        }
    }

    #[test]
    fn widening_load_is_exact() {
        let c = sample();
        let wide = Checkpoint::<f64>::from_bytes(&c.to_bytes()).unwrap();
        assert_eq!(wide.tensors.get("a").unwrap().data()[3], 3.25);
    }

    #[test]
    fn truncated_and_versioned_files_fail() {
        let bytes = sample().to_bytes();
        for cut in [0, 3, 9, 20, bytes.len() - 1] {
            assert!(matches!(Checkpoint::<f32>::from_bytes(&bytes[..cut]), Err(Error::Format(_))), "cut {cut}");
        }
        let mut v2 = bytes.clone();
        v2[4] = 2;
        assert!(matches!(
            Checkpoint::<f32>::from_bytes(&v2),
            Err(Error::Version { found: 2, expected: 1 })
        ));
        let mut extra = bytes;
        extra.push(0);
        assert!(Checkpoint::<f32>::from_bytes(&extra).is_err());
    }

    #[test]
    fn vocab_hash_is_checked() {
        let c = sample();
        let v = Vocab::from_words(["x"]);
        assert!(matches!(c.check_vocab(&v), Err(Error::VocabMismatch { .. })));
    }
}
