use std::path::PathBuf;

use super::TrainError;
use crate::dsp::{griffin_lim, MelSpectrogram, Wave};
use crate::model::{infer, Checkpoint, EventFeature, EventInput, ToyImageEmbedder};
use crate::visualtext::{pad_to_canvas, render_visual_text, slice_into_tokens, ProceduralGlyphs, Stretch, VisualOnomatopoeia};

/// Sound-event conditioning for inference.
#[derive(Clone, Debug, PartialEq)]
pub enum EventChoice {
    /// Learned row of the label table.
    Label(String),
    /// PGM image encoded by the toy embedder of the checkpoint.
    Image(PathBuf),
    /// Precomputed 256-value embedding file.
    Embedding(PathBuf),
    Vector(Vec<f32>),
    Null,
}

impl EventChoice {
    pub fn resolve(&self, ckpt: &Checkpoint) -> Result<EventInput, TrainError> {
        Ok(match self {
            EventChoice::Label(l) => EventInput::Label(ckpt.label_index(l)?),
            EventChoice::Image(p) => EventInput::from(&ToyImageEmbedder::new(ckpt.header.embedder_seed).embed_file(p)?),
            EventChoice::Embedding(p) => EventInput::from(&EventFeature::from_file(p)?),
            EventChoice::Vector(v) => EventInput::Feature(v.clone()),
            EventChoice::Null => EventInput::Null,
        })
    }
}

#[derive(Clone, Debug)]
pub struct Synthesis {
    pub visual: VisualOnomatopoeia,
    pub mel: MelSpectrogram,
    pub log_durations: Vec<f32>,
    pub durations: Vec<usize>,
    /// Present when vocoding was requested.
    pub wave: Option<Wave>,
}

/// Text to sound: render, stretch, pad, slice, predict, and optionally
/// invert the mel with Griffin-Lim.
pub fn synthesize(
    ckpt: &Checkpoint,
    text: &str,
    stretch: Stretch,
    event: &EventChoice,
    vocode: bool,
) -> Result<Synthesis, TrainError> {
    let c = &ckpt.header.model;
    let glyphs = ProceduralGlyphs::new(ckpt.header.glyph_seed);
    let visual = render_visual_text(text, &glyphs, (c.cell_h, c.cell_w))?;
    let visual = stretch.apply(&visual, c.cell_w)?;
    let visual = pad_to_canvas(&visual, visual.text_width.div_ceil(c.cell_w) * c.cell_w)?;
    let tokens = slice_into_tokens(&visual, c.cell_w);
    let input = event.resolve(ckpt)?;
    let out = infer(&ckpt.params, c, &tokens, &input, None)?;
    let mel = MelSpectrogram::new(out.mel, ckpt.header.dsp.clone());
    let wave = vocode.then(|| griffin_lim(&mel, ckpt.header.dsp.griffin_lim_iters));
    Ok(Synthesis {
        visual,
        mel,
        log_durations: out.log_durations,
        durations: out.durations,
        wave,
    })
}
