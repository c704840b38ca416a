//! Binary model checkpoints.
//!
//! Layout: 8-byte magic, `u32` format version (LE), `u64` header length (LE),
//! UTF-8 JSON header, then every block as contiguous little-endian `f64`.
//! Header offsets are byte offsets into that payload.

use std::io::{Read, Write};
use std::path::Path;

use ndarray::Array1;
use serde::{Deserialize, Serialize};

use super::params::{BlockId, ModelParams, NetSpec};
use crate::error::{Error, Result};
use crate::flowdata::{Normalizer, Scaling};
use crate::seeds::sha256_hex;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"XMLSTMCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub spec: NetSpec,
    pub scaling: Scaling,
    pub params: ModelParams,
}

#[derive(Debug, Serialize, Deserialize)]
struct BlockEntry {
    name: String,
    offset: u64,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format_version: u32,
    spec: NetSpec,
    blocks: Vec<BlockEntry>,
}

const NORM_BLOCKS: [&str; 4] = [
    "norm.input.mean",
    "norm.input.std",
    "norm.output.mean",
    "norm.output.std",
];

impl Checkpoint {
    fn named_blocks(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = self
            .params
            .block_ids()
            .into_iter()
            .map(|id| {
                (
                    id.to_string(),
                    self.params.block_shape(id),
                    self.params.block(id).expect("block"),
                )
            })
            .collect();
        let norms = [
            &self.scaling.input.mean,
            &self.scaling.input.std,
            &self.scaling.output.mean,
            &self.scaling.output.std,
        ];
        for (name, v) in NORM_BLOCKS.iter().zip(norms) {
            out.push((
                name.to_string(),
                vec![v.len()],
                v.as_slice().expect("contiguous"),
            ));
        }
        out
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        self.params.check_shapes(&self.spec)?;
        let blocks = self.named_blocks();
        let mut entries = Vec::with_capacity(blocks.len());
        let mut payload = Vec::new();
        for (name, shape, values) in &blocks {
            entries.push(BlockEntry {
                name: name.clone(),
                offset: payload.len() as u64,
                shape: shape.clone(),
            });
            for v in *values {
                payload.extend_from_slice(&v.to_le_bytes());
            }
        }
        let header = serde_json::to_vec(&Header {
            format_version: CHECKPOINT_VERSION,
            spec: self.spec.clone(),
            blocks: entries,
        })?;
        let mut out = Vec::with_capacity(20 + header.len() + payload.len());
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        out.extend_from_slice(&payload);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::data(format!("checkpoint: {msg}"));
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported format version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize
            .checked_add(header_len)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| bad("truncated header"))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])?;
        let payload = &bytes[header_end..];
        header.spec.validate()?;

        let read_block = |entry: &BlockEntry| -> Result<Vec<f64>> {
            let n: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start
                .checked_add(n * 8)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| bad("truncated payload"))?;
            Ok(payload[start..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect())
        };
        let find = |name: &str| -> Result<&BlockEntry> {
            header
                .blocks
                .iter()
                .find(|b| b.name == name)
                .ok_or_else(|| bad(&format!("missing block {name}")))
        };

        let mut params = ModelParams::zeros(&header.spec);
        for id in params.block_ids() {
            let entry = find(&id.to_string())?;
            if entry.shape != params.block_shape(id) {
                return Err(bad(&format!("block {id} has shape {:?}", entry.shape)));
            }
            let values = read_block(entry)?;
            params
                .block_mut(id)
                .expect("block")
                .copy_from_slice(&values);
        }
        let mut norms = Vec::with_capacity(4);
        for name in NORM_BLOCKS {
            norms.push(Array1::from(read_block(find(name)?)?));
        }
        let mut norms = norms.into_iter();
        let mut next = || norms.next().expect("four normalizer blocks");
        let scaling = Scaling {
            input: Normalizer {
                mean: next(),
                std: next(),
            },
            output: Normalizer {
                mean: next(),
                std: next(),
            },
        };
        if scaling.input.dim() != header.spec.input_dim
            || scaling.output.dim() != header.spec.output_dim
        {
            return Err(bad("normalizer dimensions do not match the network"));
        }
        Ok(Self {
            spec: header.spec,
            scaling,
            params,
        })
    }

    /// SHA-256 of the serialized checkpoint.
    pub fn hash(&self) -> Result<String> {
        Ok(sha256_hex(&self.to_bytes()?))
    }

    /// Names the block whose values differ between two checkpoints.
    pub fn first_difference(&self, other: &Checkpoint) -> Option<BlockId> {
        self.params.block_ids().into_iter().find(|&id| {
            let a = self.params.block(id);
            let b = other.params.block(id);
            match (a, b) {
                (Some(a), Some(b)) => {
                    a.len() != b.len() || a.iter().zip(b).any(|(x, y)| x.to_bits() != y.to_bits())
                }
                _ => true,
            }
        })
    }
}

pub fn write_checkpoint(checkpoint: &Checkpoint, path: &Path) -> Result<String> {
    let bytes = checkpoint.to_bytes()?;
    let mut file = std::fs::File::create(path)?;
    file.write_all(&bytes)?;
    Ok(sha256_hex(&bytes))
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    Checkpoint::from_bytes(&bytes)
}
