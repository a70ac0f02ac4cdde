//! Binary checkpoint: `"FPCK"`, u32 version, u32 header length, JSON header
//! (config and label inventory), u32 tensor count, then per tensor a u32
//! name length, UTF-8 name, u32 rank, u32 extents and little-endian f32
//! values. All integers little-endian.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ArchitectureConfig, FusionModel};
use crate::store::write_atomically;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"FPCK";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Header {
    config: ArchitectureConfig,
    labels: Vec<String>,
}

/// A trained model together with the label inventory its classes index.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub model: FusionModel<f32>,
    pub labels: Vec<String>,
}

impl Checkpoint {
    pub fn new(model: FusionModel<f32>, labels: Vec<String>) -> Result<Self> {
        if labels.len() != model.config().n_classes {
            return Err(Error::contract(format!(
                "{} labels for {} classes",
                labels.len(),
                model.config().n_classes
            )));
        }
        Ok(Self { model, labels })
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let header = serde_json::to_vec(&Header {
            config: self.model.config().clone(),
            labels: self.labels.clone(),
        })
        .map_err(|e| Error::contract(format!("checkpoint header: {e}")))?;
        let named = self.model.params.named();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&(named.len() as u32).to_le_bytes());
        for (name, t) in named {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, path };
        if r.take(4)? != MAGIC {
            return Err(r.format("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(r.format(&format!("unsupported version {version}")));
        }
        let header_len = r.u32()? as usize;
        let header: Header =
            serde_json::from_slice(r.take(header_len)?).map_err(|e| r.format(&format!("header: {e}")))?;
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| r.format("tensor name is not UTF-8"))?
                .to_string();
            let rank = r.u32()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = r
                .take(n * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::new(shape, data)?.with_grad()));
        }
        if r.pos != bytes.len() {
            return Err(Error::TrailingBytes {
                path: path.to_path_buf(),
                extra: (bytes.len() - r.pos) as u64,
            });
        }

        let mut model = FusionModel::<f32>::new(header.config, &mut ChaCha8Rng::seed_from_u64(0))?;
        let mut slots = model.params.named_mut();
        if slots.len() != tensors.len() {
            return Err(r.format(&format!("{} tensors, expected {}", tensors.len(), slots.len())));
        }
        for ((want, slot), (name, t)) in slots.iter_mut().zip(tensors) {
            if *want != name || slot.shape() != t.shape() {
                return Err(r.format(&format!(
                    "tensor {name} {:?} where {want} {:?} was expected",
                    t.shape(),
                    slot.shape()
                )));
            }
            **slot = t;
        }
        Checkpoint::new(model, header.labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        write_atomically(path, |f| f.write_all(&bytes))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::storage(path, e))?;
        Self::decode(&bytes, path)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Truncated {
                path: self.path.to_path_buf(),
                expected: (self.pos + n) as u64,
                actual: self.bytes.len() as u64,
            })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn format(&self, reason: &str) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            reason: reason.to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;

    fn checkpoint(variant: Variant) -> Checkpoint {
        let config = ArchitectureConfig {
            speech_layers: 3,
            speech_dim: 6,
            selected_speech_layers: vec![2],
            ..ArchitectureConfig::text_only(variant, 3, 2, 8)
        };
        let mut model = FusionModel::new(config, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        model.params.predictor.bias.data_mut()[1] = -0.25;
        Checkpoint::new(model, vec!["a".into(), "b".into(), "c".into()]).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        for v in Variant::ALL {
            let ck = checkpoint(v);
            let path = dir.path().join(format!("{v}.ckpt"));
            ck.save(&path).unwrap();
            let back = Checkpoint::load(&path).unwrap();
            assert_eq!(back, ck);
            assert_eq!(back.encode().unwrap(), ck.encode().unwrap());
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let p = Path::new("x.ckpt");
        let bytes = checkpoint(Variant::A4).encode().unwrap();
        assert!(matches!(
            Checkpoint::decode(&bytes[..bytes.len() - 2], p),
            Err(Error::Truncated { .. })
        ));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::decode(&extra, p),
            Err(Error::TrailingBytes { .. })
        ));
        let mut magic = bytes.clone();
        magic[0] = b'X';
        assert!(matches!(Checkpoint::decode(&magic, p), Err(Error::Format { .. })));
        let mut version = bytes;
        version[4] = 9;
        assert!(matches!(Checkpoint::decode(&version, p), Err(Error::Format { .. })));
    }

    #[test]
    fn label_count_must_match_classes() {
        let ck = checkpoint(Variant::A1);
        assert!(Checkpoint::new(ck.model, vec!["only".into()]).is_err());
    }
}
