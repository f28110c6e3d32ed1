use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{TrainConfig, TrainError};
use crate::corpus::{CorpusManifest, OnomatopoeiaRecord};
use crate::dsp::{mel_spectrogram, DspConfig};
use crate::model::{read_embedding_file, EventInput, EventSource, ModelConfig, StretchMode, ToyImageEmbedder};
use crate::tensor::Tensor;
use crate::visualtext::{
    remap_alignment_to_tokens, render_visual_text, slice_into_tokens, stretch_to_duration, GlyphBitmap,
    ProceduralGlyphs,
};

/// One preprocessed training example.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingItem {
    pub id: String,
    pub label: String,
    pub tokens: Vec<GlyphBitmap>,
    /// Target frames per token; sums to `target_mel.rows()`.
    pub durations: Vec<usize>,
    pub target_mel: Tensor<f32>,
    pub event: EventInput,
}

fn data_err(record: &OnomatopoeiaRecord, e: impl std::fmt::Display) -> TrainError {
    TrainError::Data(format!("record `{}`: {e}", record.id))
}

/// Renders, optionally stretches and slices every record's text, computes
/// its log-mel target and distributes the aligned frames over tokens.
pub fn prepare_dataset(
    manifest: &CorpusManifest,
    model: &ModelConfig,
    dsp: &DspConfig,
    config: &TrainConfig,
    labels: &[String],
) -> Result<Vec<TrainingItem>, TrainError> {
    dsp.validate()?;
    if dsp.sample_rate != manifest.sample_rate {
        return Err(TrainError::Data(format!(
            "DSP sample rate {} differs from the corpus rate {}",
            dsp.sample_rate, manifest.sample_rate
        )));
    }
    let glyphs = ProceduralGlyphs::new(config.glyph_seed);
    let embedder = ToyImageEmbedder::new(config.embedder_seed);
    let mut items = Vec::with_capacity(manifest.len());
    for record in &manifest.records {
        let wave = manifest.load_wave(record).map_err(|e| data_err(record, e))?;
        let alignment = manifest
            .load_alignment(record)
            .map_err(|e| data_err(record, e))?
            .ok_or_else(|| data_err(record, "no character alignment"))?;
        let mel = mel_spectrogram(&wave.samples, dsp).map_err(|e| data_err(record, e))?;
        let visual = render_visual_text(&record.text, &glyphs, (model.cell_h, model.cell_w))
            .map_err(|e| data_err(record, e))?;
        let visual = match config.stretch {
            StretchMode::None => visual,
            StretchMode::Duration => {
                let rate = manifest
                    .sounding_rate(&record.event_label)
                    .ok_or_else(|| data_err(record, "no cluster sounding rate"))?;
                stretch_to_duration(&visual, rate, wave.duration_sec(), model.cell_w)
                    .map_err(|e| data_err(record, e))?
            }
        };
        let tokens = slice_into_tokens(&visual, model.cell_w);
        let durations = remap_alignment_to_tokens(&alignment, &visual, model.cell_w, dsp.frame_seconds(), mel.n_frames())
            .map_err(|e| data_err(record, e))?;
        if tokens.len() > model.max_tokens || mel.n_frames() > model.max_frames {
            return Err(data_err(
                record,
                format!("{} tokens / {} frames exceed the model limits", tokens.len(), mel.n_frames()),
            ));
        }
        let event = match config.event_source {
            EventSource::LabelEmbedding => EventInput::Label(
                labels
                    .iter()
                    .position(|l| *l == record.event_label)
                    .ok_or_else(|| data_err(record, format!("unknown label `{}`", record.event_label)))?,
            ),
            EventSource::ToyImageEmbedder => EventInput::from(
                &embedder
                    .embed_file(&manifest.event_image_path(record))
                    .map_err(|e| data_err(record, e))?,
            ),
            EventSource::ImageFile => {
                let path = manifest.resolve(&record.audio_path).with_extension("emb");
                EventInput::Feature(read_embedding_file(&path).map_err(|e| data_err(record, e))?)
            }
        };
        items.push(TrainingItem {
            id: record.id.clone(),
            label: record.event_label.clone(),
            tokens,
            durations,
            target_mel: mel.frames,
            event,
        });
    }
    Ok(items)
}

/// Base id of an augmented record (`bell_003#c0x2` -> `bell_003`).
fn base_id(id: &str) -> &str {
    id.split('#').next().unwrap_or(id)
}

/// Deterministic split that keeps all augmented variants of a recording on
/// the same side. Returns `(train, validation)`.
pub fn split_holdout(items: Vec<TrainingItem>, val_fraction: f64, seed: u64) -> (Vec<TrainingItem>, Vec<TrainingItem>) {
    let mut bases: Vec<String> = items.iter().map(|i| base_id(&i.id).to_string()).collect();
    bases.sort();
    bases.dedup();
    let n_val = if bases.len() < 2 {
        0
    } else {
        ((bases.len() as f64 * val_fraction).round() as usize).min(bases.len() - 1)
    };
    bases.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let val: std::collections::BTreeSet<&str> = bases[..n_val].iter().map(String::as_str).collect();
    items.into_iter().partition(|i| !val.contains(base_id(&i.id)))
}
