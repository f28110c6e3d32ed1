use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EventSource, ModelConfig, ModelError, ModelParams};
use crate::dsp::DspConfig;
use crate::tensor::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"ONOMACK1";

/// Width preprocessing applied to training inputs.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StretchMode {
    /// One cell per character.
    None,
    /// Text width set to `P * D` cells for a `D`-second sound.
    Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub model: ModelConfig,
    pub dsp: DspConfig,
    pub labels: Vec<String>,
    pub event_source: EventSource,
    pub stretch: StretchMode,
    /// Characters per second of each event cluster.
    pub sounding_rates: BTreeMap<String, f64>,
    pub embedder_seed: u64,
    pub glyph_seed: u64,
    pub seed: u64,
    pub epoch: usize,
}

/// Magic, `u32` header length, JSON header, `u32` tensor count, then per
/// tensor a `u32`-length name, `u32` rows, `u32` cols and f32 data, all
/// little-endian.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: ModelParams<f32>,
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("fits in u32").to_le_bytes());
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let s = self
            .bytes
            .get(self.pos..self.pos + n)
            .ok_or_else(|| ModelError::Checkpoint(format!("truncated at byte {}", self.pos)))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize, ModelError> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = CHECKPOINT_MAGIC.to_vec();
        let header = serde_json::to_vec(&self.header).expect("header serializes");
        put_u32(&mut out, header.len());
        out.extend_from_slice(&header);
        put_u32(&mut out, self.params.len());
        for (name, t) in self.params.names().iter().zip(self.params.tensors()) {
            put_u32(&mut out, name.len());
            out.extend_from_slice(name.as_bytes());
            put_u32(&mut out, t.rows());
            put_u32(&mut out, t.cols());
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(8)? != CHECKPOINT_MAGIC {
            return Err(ModelError::Checkpoint("not a checkpoint file".into()));
        }
        let len = r.u32()?;
        let header: CheckpointHeader = serde_json::from_slice(r.take(len)?)
            .map_err(|e| ModelError::Checkpoint(format!("header: {e}")))?;
        let count = r.u32()?;
        let mut named = Vec::with_capacity(count);
        for _ in 0..count {
            let n = r.u32()?;
            let name = String::from_utf8(r.take(n)?.to_vec())
                .map_err(|_| ModelError::Checkpoint("tensor name is not UTF-8".into()))?;
            let (rows, cols) = (r.u32()?, r.u32()?);
            let data = r
                .take(rows * cols * 4)?
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            named.push((name, Tensor::from_vec(rows, cols, data)));
        }
        if r.pos != bytes.len() {
            return Err(ModelError::Checkpoint("trailing bytes".into()));
        }
        let params = ModelParams::from_named(named);
        let expected = ModelParams::init(&header.model, 0)?;
        if expected.names() != params.names()
            || expected.tensors().iter().zip(params.tensors()).any(|(a, b)| a.shape() != b.shape())
        {
            return Err(ModelError::Checkpoint("tensors do not match the model config".into()));
        }
        Ok(Self { header, params })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    pub fn label_index(&self, label: &str) -> Result<usize, ModelError> {
        self.header
            .labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))
    }
}
