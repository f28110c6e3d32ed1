//! Training: dataset preparation, masked MSE losses, Adam with global-norm
//! clipping, the epoch loop with metrics and checkpoints, end-to-end
//! synthesis and finite-difference gradient checks.

mod data;
mod gradcheck;
mod optim;
mod synth;

use std::collections::BTreeMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{AutodiffError, Tape, Var};
use crate::corpus::{CorpusError, CorpusManifest};
use crate::dsp::{DspConfig, DspError};
use crate::model::{
    forward, Checkpoint, CheckpointHeader, EventSource, ForwardInput, ModelConfig, ModelError, ModelParams,
    StretchMode,
};
use crate::tensor::{Float, Tensor};
use crate::visualtext::VisualError;

pub use data::{prepare_dataset, split_holdout, TrainingItem};
pub use gradcheck::{gradient_check, GradCheckReport};
pub use optim::{clip_gradients, global_norm, Adam, AdamConfig};
pub use synth::{synthesize, EventChoice, Synthesis};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("data error: {0}")]
    Data(String),
    #[error("non-finite loss at epoch {epoch}, record `{id}`: {detail}")]
    NonFiniteLoss { epoch: usize, id: String, detail: String },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Visual(#[from] VisualError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Autodiff(#[from] AutodiffError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Maximum global L2 norm of the gradient.
    pub grad_clip: f64,
    /// Linear learning-rate warmup steps; 0 disables it.
    pub warmup_steps: usize,
    /// Fraction of base records held out for validation.
    pub val_fraction: f64,
    pub min_confidence: u8,
    pub event_source: EventSource,
    pub stretch: StretchMode,
    pub embedder_seed: u64,
    pub glyph_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.98,
            adam_eps: 1e-9,
            batch_size: 8,
            epochs: 40,
            seed: 0,
            grad_clip: 1.0,
            warmup_steps: 0,
            val_fraction: 0.1,
            min_confidence: 3,
            event_source: EventSource::LabelEmbedding,
            stretch: StretchMode::None,
            embedder_seed: 17,
            glyph_seed: crate::visualtext::ProceduralGlyphs::default().seed,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.learning_rate > 0.0) {
            return Err(TrainError::Data(format!("learning_rate must be positive, got {}", self.learning_rate)));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Data("batch_size must be at least 1".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(TrainError::Data("grad_clip must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(TrainError::Data("val_fraction must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.adam_eps,
            warmup_steps: self.warmup_steps,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossBreakdown {
    pub mel_mse: f64,
    pub duration_mse: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn is_finite(&self) -> bool {
        self.mel_mse.is_finite() && self.duration_mse.is_finite() && self.total.is_finite()
    }
}

/// Masked mean squared errors. `frame_mask[t]` marks real (unpadded) mel
/// rows and `token_mask[i]` real tokens; `None` means all rows count.
pub fn compute_loss(
    pred_mel: &Tensor<f32>,
    target_mel: &Tensor<f32>,
    pred_logdur: &[f32],
    target_logdur: &[f32],
    frame_mask: Option<&[bool]>,
    token_mask: Option<&[bool]>,
) -> Result<LossBreakdown, TrainError> {
    if pred_mel.shape() != target_mel.shape() {
        return Err(TrainError::ShapeMismatch(format!(
            "mel {:?} vs {:?}",
            pred_mel.shape(),
            target_mel.shape()
        )));
    }
    if pred_logdur.len() != target_logdur.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} vs {} durations",
            pred_logdur.len(),
            target_logdur.len()
        )));
    }
    let keep = |mask: Option<&[bool]>, i: usize| mask.is_none_or(|m| m.get(i).copied().unwrap_or(false));
    let (mut mel_sum, mut mel_n) = (0.0, 0usize);
    for t in 0..pred_mel.rows() {
        if keep(frame_mask, t) {
            for (p, q) in pred_mel.row(t).iter().zip(target_mel.row(t)) {
                mel_sum += (*p as f64 - *q as f64).powi(2);
                mel_n += 1;
            }
        }
    }
    let (mut dur_sum, mut dur_n) = (0.0, 0usize);
    for (i, (p, q)) in pred_logdur.iter().zip(target_logdur).enumerate() {
        if keep(token_mask, i) {
            dur_sum += (*p as f64 - *q as f64).powi(2);
            dur_n += 1;
        }
    }
    let mel_mse = if mel_n > 0 { mel_sum / mel_n as f64 } else { 0.0 };
    let duration_mse = if dur_n > 0 { dur_sum / dur_n as f64 } else { 0.0 };
    Ok(LossBreakdown {
        mel_mse,
        duration_mse,
        total: mel_mse + duration_mse,
    })
}

pub fn log_duration_targets(durations: &[usize]) -> Vec<f32> {
    durations.iter().map(|&d| ((d + 1) as f64).ln() as f32).collect()
}

/// Records one teacher-forced item on `tape` and returns the mel and
/// duration loss nodes, each already divided by the batch-wide cell and
/// token counts so that summing over the batch gives the masked means.
pub(crate) fn item_loss<S: Float>(
    tape: &mut Tape<S>,
    bound: &crate::model::Bound,
    config: &ModelConfig,
    item: &TrainingItem,
    mel_cells: usize,
    tokens: usize,
) -> Result<(Var, Var), TrainError> {
    let out = forward(
        tape,
        bound,
        config,
        &ForwardInput {
            tokens: &item.tokens,
            event: &item.event,
            durations: Some(&item.durations),
        },
    )?;
    let target = tape.constant(item.target_mel.cast());
    let diff = tape.sub(out.mel, target);
    let sq = tape.mul(diff, diff);
    let mel = tape.sum(sq);
    let mel = tape.scale(mel, 1.0 / mel_cells as f64);
    let logd = log_duration_targets(&item.durations);
    let target_d = tape.constant(Tensor::from_vec(
        logd.len(),
        1,
        logd.iter().map(|&v| S::from_f64_lossy(v as f64)).collect(),
    ));
    let dd = tape.sub(out.log_durations, target_d);
    let dsq = tape.mul(dd, dd);
    let dur = tape.sum(dsq);
    let dur = tape.scale(dur, 1.0 / tokens as f64);
    Ok((mel, dur))
}

/// Loss and gradients of one batch, accumulated over per-item tapes.
pub fn batch_gradients(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    items: &[&TrainingItem],
) -> Result<(LossBreakdown, Vec<Tensor<f32>>), TrainError> {
    let mel_cells: usize = items.iter().map(|i| i.target_mel.len()).sum();
    let tokens: usize = items.iter().map(|i| i.tokens.len()).sum();
    let mut grads: Vec<Tensor<f32>> = params.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
    let mut loss = LossBreakdown::default();
    for item in items {
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape);
        let (mel, dur) = item_loss(&mut tape, &bound, config, item, mel_cells, tokens)?;
        let total = tape.add(mel, dur);
        loss.mel_mse += tape.value(mel).get(0, 0) as f64;
        loss.duration_mse += tape.value(dur).get(0, 0) as f64;
        let mut g = tape.backward(total)?;
        for (acc, &v) in grads.iter_mut().zip(bound.vars()) {
            if let Some(t) = g.take(v) {
                acc.add_assign(&t);
            }
        }
    }
    loss.total = loss.mel_mse + loss.duration_mse;
    Ok((loss, grads))
}

/// Teacher-forced loss over a whole set, without gradients.
pub fn evaluate(params: &ModelParams<f32>, config: &ModelConfig, items: &[TrainingItem]) -> Result<LossBreakdown, TrainError> {
    let mel_cells: usize = items.iter().map(|i| i.target_mel.len()).sum();
    let tokens: usize = items.iter().map(|i| i.tokens.len()).sum();
    let mut loss = LossBreakdown::default();
    for item in items {
        let mut tape = Tape::new();
        let bound = params.bind_constants(&mut tape);
        let (mel, dur) = item_loss(&mut tape, &bound, config, item, mel_cells, tokens)?;
        loss.mel_mse += tape.value(mel).get(0, 0) as f64;
        loss.duration_mse += tape.value(dur).get(0, 0) as f64;
    }
    loss.total = loss.mel_mse + loss.duration_mse;
    Ok(loss)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub train: LossBreakdown,
    pub val_total: f64,
}

pub const METRICS_HEADER: &str = "epoch,mel_mse,duration_mse,total,val_total";

pub fn metrics_csv(rows: &[EpochMetrics]) -> String {
    let mut out = format!("{METRICS_HEADER}\n");
    for r in rows {
        out.push_str(&format!(
            "{},{:.6},{:.6},{:.6},{:.6}\n",
            r.epoch, r.train.mel_mse, r.train.duration_mse, r.train.total, r.val_total
        ));
    }
    out
}

pub struct TrainOutcome {
    /// Parameters after the last epoch.
    pub checkpoint: Checkpoint,
    /// Parameters from the epoch with the lowest validation loss.
    pub best: Checkpoint,
    pub metrics: Vec<EpochMetrics>,
    pub best_epoch: usize,
}

/// Where per-epoch artifacts go: `last.ckpt`, `best.ckpt`, `metrics.csv`.
#[derive(Clone, Debug, Default)]
pub struct TrainOutputs {
    pub dir: Option<PathBuf>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> TrainError + '_ {
    move |source| TrainError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Per-bin mean of the targets into the mel bias and the mean log-duration
/// into the duration bias, so training starts from the data average.
fn init_output_biases(params: &mut ModelParams<f32>, items: &[TrainingItem]) {
    let Some(mel_b) = params.get("mel.b") else { return };
    let n_mels = mel_b.cols();
    let mut sums = vec![0.0f64; n_mels];
    let mut frames = 0usize;
    let mut logd = 0.0f64;
    let mut tokens = 0usize;
    for it in items {
        for t in 0..it.target_mel.rows() {
            for (s, v) in sums.iter_mut().zip(it.target_mel.row(t)) {
                *s += *v as f64;
            }
        }
        frames += it.target_mel.rows();
        logd += log_duration_targets(&it.durations).iter().map(|&v| v as f64).sum::<f64>();
        tokens += it.durations.len();
    }
    if frames > 0 {
        let bias = params.get_mut("mel.b").expect("checked above");
        for (b, s) in bias.data_mut().iter_mut().zip(&sums) {
            *b = (s / frames as f64) as f32;
        }
    }
    if tokens > 0 {
        params.get_mut("dur.out.b").expect("duration head").data_mut()[0] = (logd / tokens as f64) as f32;
    }
}

/// Trains from `manifest`: confidence filter, preprocessing, hold-out
/// split, then `epochs` passes of shuffled mini-batches. Epoch 0 of the
/// metrics is the untrained model.
pub fn train(
    manifest: &CorpusManifest,
    model_config: &ModelConfig,
    dsp: &DspConfig,
    config: &TrainConfig,
    outputs: &TrainOutputs,
) -> Result<TrainOutcome, TrainError> {
    config.validate()?;
    let manifest = manifest.filter_by_confidence(config.min_confidence);
    if manifest.is_empty() {
        return Err(TrainError::Data(format!(
            "no records with confidence >= {}",
            config.min_confidence
        )));
    }
    let labels = manifest.labels();
    let mut model_config = model_config.clone();
    model_config.n_labels = labels.len();
    model_config.n_mels = dsp.n_mels;
    let items = prepare_dataset(&manifest, &model_config, dsp, config, &labels)?;
    let (train_items, val_items) = split_holdout(items, config.val_fraction, config.seed);
    if train_items.is_empty() {
        return Err(TrainError::Data("no training items after the hold-out split".into()));
    }

    let mut params = ModelParams::init(&model_config, config.seed)?;
    init_output_biases(&mut params, &train_items);
    let mut header = CheckpointHeader {
        model: model_config.clone(),
        dsp: dsp.clone(),
        labels,
        event_source: config.event_source,
        stretch: config.stretch,
        sounding_rates: manifest
            .clusters
            .iter()
            .map(|(k, c)| (k.clone(), c.sounding_rate))
            .collect::<BTreeMap<_, _>>(),
        embedder_seed: config.embedder_seed,
        glyph_seed: config.glyph_seed,
        seed: config.seed,
        epoch: 0,
    };
    if let Some(dir) = &outputs.dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
    }

    let val_or_train = if val_items.is_empty() { &train_items } else { &val_items };
    let mut adam = Adam::new(config.adam(), &params);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x5eed);
    let mut metrics = Vec::with_capacity(config.epochs + 1);
    let initial = evaluate(&params, &model_config, &train_items)?;
    let val0 = evaluate(&params, &model_config, val_or_train)?.total;
    check_finite(&initial, 0, "initial evaluation")?;
    metrics.push(EpochMetrics {
        epoch: 0,
        train: initial,
        val_total: val0,
    });
    let mut best = (0, val0);
    let mut best_params = params.clone();
    let mut order: Vec<usize> = (0..train_items.len()).collect();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut running = LossBreakdown::default();
        let batches = order.len().div_ceil(config.batch_size);
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&TrainingItem> = chunk.iter().map(|&i| &train_items[i]).collect();
            let (loss, mut grads) = batch_gradients(&params, &model_config, &batch)?;
            if !loss.is_finite() || !grads.iter().all(Tensor::is_finite) {
                let ids: Vec<&str> = batch.iter().map(|i| i.id.as_str()).collect();
                return Err(TrainError::NonFiniteLoss {
                    epoch,
                    id: ids.join(","),
                    detail: format!("{loss:?}"),
                });
            }
            clip_gradients(&mut grads, config.grad_clip);
            adam.step(&mut params, &grads);
            running.mel_mse += loss.mel_mse / batches as f64;
            running.duration_mse += loss.duration_mse / batches as f64;
        }
        running.total = running.mel_mse + running.duration_mse;
        let val_total = evaluate(&params, &model_config, val_or_train)?.total;
        if !val_total.is_finite() {
            return Err(TrainError::NonFiniteLoss {
                epoch,
                id: "validation".into(),
                detail: format!("val_total={val_total}"),
            });
        }
        metrics.push(EpochMetrics {
            epoch,
            train: running,
            val_total,
        });
        tracing::info!(epoch, mel = running.mel_mse, dur = running.duration_mse, val = val_total, "epoch");
        header.epoch = epoch;
        let improved = val_total < best.1;
        if improved {
            best = (epoch, val_total);
            best_params = params.clone();
        }
        if let Some(dir) = &outputs.dir {
            let ckpt = Checkpoint {
                header: header.clone(),
                params: params.clone(),
            };
            ckpt.save(&dir.join("last.ckpt"))?;
            if improved {
                ckpt.save(&dir.join("best.ckpt"))?;
            }
            write_metrics(&dir.join("metrics.csv"), &metrics)?;
        }
    }
    if let Some(dir) = &outputs.dir {
        write_metrics(&dir.join("metrics.csv"), &metrics)?;
        if config.epochs == 0 {
            Checkpoint {
                header: header.clone(),
                params: params.clone(),
            }
            .save(&dir.join("last.ckpt"))?;
        }
    }
    let mut best_header = header.clone();
    best_header.epoch = best.0;
    let best_ckpt = Checkpoint {
        header: best_header,
        params: best_params,
    };
    if let Some(dir) = &outputs.dir {
        best_ckpt.save(&dir.join("best.ckpt"))?;
    }
    Ok(TrainOutcome {
        best: best_ckpt,
        checkpoint: Checkpoint { header, params },
        metrics,
        best_epoch: best.0,
    })
}

fn check_finite(loss: &LossBreakdown, epoch: usize, id: &str) -> Result<(), TrainError> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(TrainError::NonFiniteLoss {
            epoch,
            id: id.into(),
            detail: format!("{loss:?}"),
        })
    }
}

pub fn write_metrics(path: &Path, rows: &[EpochMetrics]) -> Result<(), TrainError> {
    let mut f = std::fs::File::create(path).map_err(io_err(path))?;
    f.write_all(metrics_csv(rows).as_bytes()).map_err(io_err(path))
}

#[cfg(test)]
mod tests;
