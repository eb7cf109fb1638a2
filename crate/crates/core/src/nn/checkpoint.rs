//! Binary checkpoint container.
//!
//! Layout: the 8-byte magic `LKCKPT01`, a little-endian `u64` header length,
//! a JSON header (metadata plus a block table of name/shape/trainable), then
//! every block's values as little-endian `f64` in table order. Values
//! round-trip bit-exactly, including NaN payloads and signed zeros.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::param::ParamBlock;
use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"LKCKPT01";

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub seed: u64,
    pub step: u64,
    pub mode: String,
    /// Free-form records such as the policy architecture or config digest.
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    meta: CheckpointMeta,
    blocks: Vec<BlockEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: CheckpointMeta,
    pub blocks: Vec<ParamBlock>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            meta: self.meta.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| BlockEntry {
                    name: b.name.clone(),
                    shape: b.shape.clone(),
                    trainable: b.trainable,
                })
                .collect(),
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Format(e.to_string()))?;
        let n_values: usize = self.blocks.iter().map(ParamBlock::len).sum();
        let mut out = Vec::with_capacity(16 + json.len() + 8 * n_values);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for b in &self.blocks {
            for v in &b.values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::Format("not a checkpoint (bad magic)".into()));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        let body = bytes
            .get(16..16 + hlen)
            .ok_or_else(|| Error::Format("truncated checkpoint header".into()))?;
        let header: Header = serde_json::from_slice(body).map_err(|e| Error::Format(e.to_string()))?;
        let mut offset = 16 + hlen;
        let mut blocks = Vec::with_capacity(header.blocks.len());
        for entry in header.blocks {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(offset..offset + 8 * n)
                .ok_or_else(|| Error::Format(format!("truncated values for block `{}`", entry.name)))?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            let mut block = ParamBlock::from_values(entry.name, &entry.shape, values)?;
            block.trainable = entry.trainable;
            blocks.push(block);
        }
        if offset != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after checkpoint", bytes.len() - offset)));
        }
        Ok(Checkpoint {
            meta: header.meta,
            blocks,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn block(&self, name: &str) -> Result<&ParamBlock> {
        self.blocks
            .iter()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::Format(format!("checkpoint has no block `{name}`")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn bit_exact_round_trip(
            bits in proptest::collection::vec(any::<u64>(), 0..40),
            seed in any::<u64>(),
            step in any::<u64>(),
        ) {
            let values: Vec<f64> = bits.iter().map(|b| f64::from_bits(*b)).collect();
            let mut frozen = ParamBlock::from_values("enc.0.weight", &[values.len()], values).unwrap();
            frozen.trainable = false;
            let ck = Checkpoint {
                meta: CheckpointMeta { seed, step, mode: "delock".into(), extra: BTreeMap::from([("k".into(), "v".into())]) },
                blocks: vec![frozen, ParamBlock::zeros("b", &[2, 3])],
            };
            let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
            prop_assert_eq!(&back.meta, &ck.meta);
            for (a, b) in back.blocks.iter().zip(&ck.blocks) {
                prop_assert!(a.same_layout(b));
                prop_assert_eq!(a.trainable, b.trainable);
                let ab: Vec<u64> = a.values.iter().map(|v| v.to_bits()).collect();
                let bb: Vec<u64> = b.values.iter().map(|v| v.to_bits()).collect();
                prop_assert_eq!(ab, bb);
            }
        }
    }

    #[test]
    fn rejects_garbage() {
        assert!(Checkpoint::from_bytes(b"hello").is_err());
        let ck = Checkpoint {
            meta: CheckpointMeta::default(),
            blocks: vec![ParamBlock::zeros("w", &[4])],
        };
        let mut bytes = ck.to_bytes().unwrap();
        bytes.pop();
        assert!(Checkpoint::from_bytes(&bytes).is_err());
    }
}
