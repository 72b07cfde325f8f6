//! Binary checkpoint format.
//!
//! ```text
//! "DANLI" version:u8
//! meta_len:u64 meta:[u8; meta_len]          canonical JSON, UTF-8
//! repeated for every tensor listed in meta:
//!   name_len:u32 name:[u8; name_len] rows:u64 cols:u64 data:[f64; rows*cols]
//! checksum:u64                              FNV-1a of every preceding byte
//! ```
//!
//! All integers and floats are little-endian.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::OptimizerState;
use crate::embeddings::{fnv1a64_bytes, EmbeddingTable, Vocab};
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::Matrix;

pub const MAGIC: &[u8; 5] = b"DANLI";
pub const FORMAT_VERSION: u8 = 1;

const EMBEDDINGS_TENSOR: &str = "embeddings";
const ACCUMULATOR_PREFIX: &str = "adagrad/";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("not a checkpoint (bad magic bytes)")]
    BadMagic,
    #[error("unsupported checkpoint version {0}")]
    UnsupportedVersion(u8),
    #[error("checkpoint truncated: needed {needed} bytes at offset {offset}, {available} left")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("corrupt checkpoint: {0}")]
    Corrupt(String),
}

/// Seeds a run was started with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Seeds {
    /// Parameter initialization.
    pub init: u64,
    /// Shuffling and dropout.
    pub train: u64,
}

/// Everything needed to resume training or run inference.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub vocab: Arc<Vocab>,
    pub embeddings: Arc<EmbeddingTable>,
    pub params: ModelParams,
    pub optimizer: OptimizerState,
    /// Optimizer steps taken.
    pub step: u64,
    pub seeds: Seeds,
    pub dev_accuracy: Option<f64>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    rows: u64,
    cols: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format_version: u8,
    config: ModelConfig,
    vocab: Vocab,
    step: u64,
    seeds: Seeds,
    learning_rate: f64,
    dev_accuracy: Option<f64>,
    tensors: Vec<TensorEntry>,
}

impl Checkpoint {
    fn tensors(&self) -> Vec<(String, &Matrix)> {
        let named = self.params.named_tensors();
        let accumulators = named
            .iter()
            .zip(&self.optimizer.accumulators)
            .map(|((n, _), a)| (format!("{ACCUMULATOR_PREFIX}{n}"), a))
            .collect::<Vec<_>>();
        std::iter::once((EMBEDDINGS_TENSOR.to_string(), self.embeddings.vectors()))
            .chain(named)
            .chain(accumulators)
            .collect()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, CheckpointError> {
        let tensors = self.tensors();
        let meta = Meta {
            format_version: FORMAT_VERSION,
            config: self.config,
            vocab: (*self.vocab).clone(),
            step: self.step,
            seeds: self.seeds,
            learning_rate: self.optimizer.learning_rate,
            dev_accuracy: self.dev_accuracy,
            tensors: tensors
                .iter()
                .map(|(name, m)| TensorEntry {
                    name: name.clone(),
                    rows: m.rows() as u64,
                    cols: m.cols() as u64,
                })
                .collect(),
        };
        let meta =
            serde_json::to_vec(&meta).map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let payload: usize = tensors
            .iter()
            .map(|(n, m)| 20 + n.len() + 8 * m.len())
            .sum();
        let mut out = Vec::with_capacity(MAGIC.len() + 17 + meta.len() + payload);
        out.extend_from_slice(MAGIC);
        out.push(FORMAT_VERSION);
        out.extend_from_slice(&(meta.len() as u64).to_le_bytes());
        out.extend_from_slice(&meta);
        for (name, m) in &tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(m.rows() as u64).to_le_bytes());
            out.extend_from_slice(&(m.cols() as u64).to_le_bytes());
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let checksum = fnv1a64_bytes(&out);
        out.extend_from_slice(&checksum.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, offset: 0 };
        if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        r.take(MAGIC.len())?;
        let version = r.take(1)?[0];
        if version != FORMAT_VERSION {
            return Err(CheckpointError::UnsupportedVersion(version));
        }
        let meta_len = r.len_u64()?;
        let meta: Meta = serde_json::from_slice(r.take(meta_len)?)
            .map_err(|e| CheckpointError::Corrupt(format!("metadata: {e}")))?;
        if meta.format_version != version {
            return Err(CheckpointError::Corrupt(format!(
                "metadata version {} disagrees with header version {version}",
                meta.format_version
            )));
        }

        let mut tensors = HashMap::with_capacity(meta.tensors.len());
        for entry in &meta.tensors {
            let name_len = r.u32()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| CheckpointError::Corrupt("tensor name is not UTF-8".into()))?;
            if name != entry.name {
                return Err(CheckpointError::Corrupt(format!(
                    "expected tensor {}, found {name}",
                    entry.name
                )));
            }
            let rows = r.len_u64()?;
            let cols = r.len_u64()?;
            if (rows as u64, cols as u64) != (entry.rows, entry.cols) {
                return Err(CheckpointError::Corrupt(format!(
                    "shape of {name} disagrees with metadata"
                )));
            }
            let count = rows
                .checked_mul(cols)
                .and_then(|n| n.checked_mul(8))
                .ok_or_else(|| CheckpointError::Corrupt(format!("tensor {name} too large")))?;
            let data = r
                .take(count)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                .collect();
            let m = Matrix::from_vec(rows, cols, data).expect("length checked");
            if tensors.insert(name.to_string(), m).is_some() {
                return Err(CheckpointError::Corrupt(format!("duplicate tensor {name}")));
            }
        }
        let body = r.offset;
        let stored = u64::from_le_bytes(r.take(8)?.try_into().expect("8 bytes"));
        if r.offset != bytes.len() {
            return Err(CheckpointError::Corrupt(format!(
                "{} trailing bytes",
                bytes.len() - r.offset
            )));
        }
        if stored != fnv1a64_bytes(&bytes[..body]) {
            return Err(CheckpointError::Corrupt("checksum mismatch".into()));
        }

        let embeddings = tensors
            .remove(EMBEDDINGS_TENSOR)
            .ok_or_else(|| CheckpointError::Corrupt("missing embeddings".into()))?;
        if embeddings.rows() != meta.vocab.len() || embeddings.cols() != meta.config.embed_dim {
            return Err(CheckpointError::Corrupt(format!(
                "embedding table is {}×{}, expected {}×{}",
                embeddings.rows(),
                embeddings.cols(),
                meta.vocab.len(),
                meta.config.embed_dim
            )));
        }
        let accumulator_names: Vec<String> = tensors
            .keys()
            .filter(|n| n.starts_with(ACCUMULATOR_PREFIX))
            .cloned()
            .collect();
        let mut accumulators: HashMap<String, Matrix> = accumulator_names
            .into_iter()
            .map(|n| {
                let m = tensors.remove(&n).expect("key listed");
                (n[ACCUMULATOR_PREFIX.len()..].to_string(), m)
            })
            .collect();
        let params = ModelParams::from_named(&meta.config, tensors)
            .map_err(|e| CheckpointError::Corrupt(e.to_string()))?;
        let mut ordered = Vec::new();
        for (name, p) in params.named_tensors() {
            let a = accumulators.remove(&name).ok_or_else(|| {
                CheckpointError::Corrupt(format!("missing accumulator for {name}"))
            })?;
            if a.shape() != p.shape() {
                return Err(CheckpointError::Corrupt(format!(
                    "accumulator shape of {name}"
                )));
            }
            ordered.push(a);
        }
        if let Some(extra) = accumulators.keys().next() {
            return Err(CheckpointError::Corrupt(format!(
                "unexpected accumulator {extra}"
            )));
        }
        if !params.tensors().iter().all(|m| m.is_finite())
            || !ordered.iter().all(|m| m.is_finite())
            || !embeddings.is_finite()
        {
            return Err(CheckpointError::Corrupt("non-finite values".into()));
        }

        Ok(Self {
            config: meta.config,
            vocab: Arc::new(meta.vocab),
            embeddings: Arc::new(EmbeddingTable::from_normalized(embeddings)),
            params,
            optimizer: OptimizerState {
                accumulators: ordered,
                learning_rate: meta.learning_rate,
            },
            step: meta.step,
            seeds: meta.seeds,
            dev_accuracy: meta.dev_accuracy,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], CheckpointError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(CheckpointError::Truncated {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(
            self.take(4)?.try_into().expect("4 bytes"),
        ))
    }

    fn len_u64(&mut self) -> Result<usize, CheckpointError> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| CheckpointError::Corrupt(format!("length {v} too large")))
    }
}

/// Writes `ckpt` to `path` through a temporary file in the same directory,
/// so an interrupted save never leaves a partial checkpoint behind.
pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), CheckpointError> {
    let io = |source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    };
    let bytes = ckpt.to_bytes()?;
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(io)?;
    f.write_all(&bytes).map_err(io)?;
    f.sync_all().map_err(io)?;
    drop(f);
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, CheckpointError> {
    let bytes = fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Checkpoint::from_bytes(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Checkpoint {
        let config = ModelConfig {
            embed_dim: 4,
            proj_dim: 3,
            hidden: 2,
            layers: 2,
            classes: 3,
            dropout: 0.1,
            use_intra: true,
            distance_cap: 2,
        };
        let mut vocab = Vocab::new(true);
        vocab.insert("cat");
        vocab.insert("dog");
        let params = ModelParams::init(&config, 3).unwrap();
        let optimizer = OptimizerState::new(&params, 0.025);
        Checkpoint {
            config,
            embeddings: Arc::new(EmbeddingTable::random(vocab.len(), 4, 1)),
            vocab: Arc::new(vocab),
            params,
            optimizer,
            step: 12,
            seeds: Seeds { init: 1, train: 2 },
            dev_accuracy: Some(1.0 / 3.0),
        }
    }

    #[test]
    fn roundtrip_is_exact() {
        let ckpt = small();
        let bytes = ckpt.to_bytes().unwrap();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ckpt);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn header_errors_are_typed() {
        let bytes = small().to_bytes().unwrap();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::BadMagic)
        ));
        assert!(matches!(
            Checkpoint::from_bytes(b"DAN"),
            Err(CheckpointError::BadMagic)
        ));
        let mut bad = bytes.clone();
        bad[5] = 2;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::UnsupportedVersion(2))
        ));
    }

    #[test]
    fn every_truncation_is_detected() {
        let bytes = small().to_bytes().unwrap();
        for cut in (MAGIC.len()..bytes.len()).step_by(7) {
            match Checkpoint::from_bytes(&bytes[..cut]) {
                Err(CheckpointError::Truncated { .. }) => {}
                other => panic!("cut at {cut}: {other:?}"),
            }
        }
    }

    #[test]
    fn corruption_is_detected() {
        let bytes = small().to_bytes().unwrap();
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(
            Checkpoint::from_bytes(&extra),
            Err(CheckpointError::Corrupt(_))
        ));
        // a '{' in the metadata turned into something else
        let mut bad = bytes.clone();
        bad[14] = b'#';
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Corrupt(_))
        ));
        // the first tensor name
        let meta_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        let mut bad = bytes.clone();
        bad[14 + meta_len + 4] ^= 0x20;
        assert!(matches!(
            Checkpoint::from_bytes(&bad),
            Err(CheckpointError::Corrupt(_))
        ));
    }

    #[test]
    fn flipped_value_bits_fail_the_checksum() {
        let ckpt = small();
        let bytes = ckpt.to_bytes().unwrap();
        let meta_len = u64::from_le_bytes(bytes[6..14].try_into().unwrap()) as usize;
        // payload of the first tensor, the embedding table
        let start = 14 + meta_len + 4 + EMBEDDINGS_TENSOR.len() + 16;
        let end = start + 8 * ckpt.embeddings.vectors().len();
        for pos in (start..end).step_by(13) {
            let mut bad = bytes.clone();
            bad[pos] ^= 1;
            match Checkpoint::from_bytes(&bad) {
                Err(CheckpointError::Corrupt(msg)) => assert!(msg.contains("checksum"), "{msg}"),
                other => panic!("flip at {pos}: {other:?}"),
            }
        }
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.danli");
        let ckpt = small();
        save_checkpoint(&ckpt, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), ckpt);
        let err = load_checkpoint(&dir.path().join("missing")).unwrap_err();
        assert!(err.to_string().contains("missing"));
    }
}
