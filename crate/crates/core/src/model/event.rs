use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{ModelError, ModelParams};
use crate::tensor::Tensor;

pub const EVENT_DIM: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventSource {
    LabelEmbedding,
    ImageFile,
    ToyImageEmbedder,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EventFeature {
    pub vector: Vec<f32>,
    pub source: EventSource,
}

/// How the event enters a forward pass. `Label` indexes the trainable
/// table so gradients reach it.
#[derive(Clone, Debug, PartialEq)]
pub enum EventInput {
    Label(usize),
    Feature(Vec<f32>),
    Null,
}

impl From<&EventFeature> for EventInput {
    fn from(f: &EventFeature) -> Self {
        EventInput::Feature(f.vector.clone())
    }
}

impl EventFeature {
    /// Learned table row of `label`.
    pub fn from_label(params: &ModelParams<f32>, labels: &[String], label: &str) -> Result<Self, ModelError> {
        let i = labels
            .iter()
            .position(|l| l == label)
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))?;
        let table = params
            .get("event.table")
            .ok_or_else(|| ModelError::UnknownLabel(label.to_string()))?;
        Ok(Self {
            vector: table.row(i).to_vec(),
            source: EventSource::LabelEmbedding,
        })
    }

    pub fn from_file(path: &Path) -> Result<Self, ModelError> {
        Ok(Self {
            vector: read_embedding_file(path)?,
            source: EventSource::ImageFile,
        })
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt()
    }
}

/// Raw little-endian `256 x f32`.
pub fn read_embedding_file(path: &Path) -> Result<Vec<f32>, ModelError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != EVENT_DIM * 4 {
        return Err(ModelError::BadEmbeddingFile(format!(
            "{}: {} bytes, expected {}",
            path.display(),
            bytes.len(),
            EVENT_DIM * 4
        )));
    }
    let v: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if !v.iter().all(|x| x.is_finite()) {
        return Err(ModelError::BadEmbeddingFile(format!("{}: non-finite value", path.display())));
    }
    Ok(v)
}

pub fn write_embedding_file(path: &Path, vector: &[f32]) -> Result<(), ModelError> {
    if vector.len() != EVENT_DIM {
        return Err(ModelError::BadEmbeddingFile(format!("{} values, expected {EVENT_DIM}", vector.len())));
    }
    let bytes: Vec<u8> = vector.iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes)?;
    Ok(())
}

const GRID: usize = 4;

/// Stand-in image encoder: mean and variance of each cell of a 4x4 grid,
/// mapped to 256 values by a fixed seeded Gaussian projection.
#[derive(Clone, Debug)]
pub struct ToyImageEmbedder {
    projection: Tensor<f32>,
}

impl ToyImageEmbedder {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let stats = 2 * GRID * GRID;
        let scale = 1.0 / (stats as f64).sqrt();
        let projection = Tensor::from_fn(stats, EVENT_DIM, |_, _| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (z * scale) as f32
        });
        Self { projection }
    }

    pub fn statistics(image: &Tensor<f32>) -> Vec<f32> {
        let (h, w) = image.shape();
        let mut out = Vec::with_capacity(2 * GRID * GRID);
        for gy in 0..GRID {
            for gx in 0..GRID {
                let (y0, y1) = (gy * h / GRID, ((gy + 1) * h / GRID).max(gy * h / GRID + 1).min(h));
                let (x0, x1) = (gx * w / GRID, ((gx + 1) * w / GRID).max(gx * w / GRID + 1).min(w));
                let mut sum = 0.0f64;
                let mut sq = 0.0f64;
                let mut count = 0.0f64;
                for y in y0..y1 {
                    for x in x0..x1 {
                        let v = image.get(y, x) as f64;
                        sum += v;
                        sq += v * v;
                        count += 1.0;
                    }
                }
                let mean = if count > 0.0 { sum / count } else { 0.0 };
                let var = if count > 0.0 { (sq / count - mean * mean).max(0.0) } else { 0.0 };
                out.push(mean as f32);
                out.push(var as f32);
            }
        }
        out
    }

    pub fn embed(&self, image: &Tensor<f32>) -> EventFeature {
        let stats = Self::statistics(image);
        let mut vector = vec![0.0f32; EVENT_DIM];
        for (s, row) in stats.iter().zip(0..) {
            for (v, p) in vector.iter_mut().zip(self.projection.row(row)) {
                *v += s * p;
            }
        }
        EventFeature {
            vector,
            source: EventSource::ToyImageEmbedder,
        }
    }

    pub fn embed_file(&self, path: &Path) -> Result<EventFeature, ModelError> {
        Ok(self.embed(&crate::pgm::read_pgm(path)?))
    }
}
