use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{item_loss, TrainError, TrainingItem};
use crate::autodiff::Tape;
use crate::model::{ModelConfig, ModelParams};

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_param: String,
    pub analytic: f64,
    pub numeric: f64,
}

/// Gradients smaller than this in both estimates count as zero.
const ABS_FLOOR: f64 = 1e-8;

fn loss_value(params: &ModelParams<f64>, config: &ModelConfig, item: &TrainingItem) -> Result<f64, TrainError> {
    let mut tape = Tape::new();
    let b = params.bind_constants(&mut tape);
    let cells = item.target_mel.len();
    let (mel, dur) = item_loss(&mut tape, &b, config, item, cells, item.tokens.len())?;
    let total = tape.add(mel, dur);
    Ok(tape.value(total).get(0, 0))
}

/// Compares backprop gradients of the full training loss against central
/// differences in f64 for `samples` randomly chosen scalar parameters.
/// Relative error is `|a - n| / max(|a|, |n|)`.
pub fn gradient_check(
    params: &ModelParams<f32>,
    config: &ModelConfig,
    item: &TrainingItem,
    samples: usize,
    eps: f64,
    seed: u64,
) -> Result<GradCheckReport, TrainError> {
    let mut p64 = params.cast::<f64>();
    let mut tape = Tape::new();
    let b = p64.bind(&mut tape);
    let cells = item.target_mel.len();
    let (mel, dur) = item_loss(&mut tape, &b, config, item, cells, item.tokens.len())?;
    let total = tape.add(mel, dur);
    let grads = tape.backward(total)?;
    let mut flat_grad = Vec::with_capacity(p64.flat_len());
    for (t, &v) in p64.tensors().iter().zip(b.vars()) {
        match grads.get(v) {
            Some(g) => flat_grad.extend_from_slice(g.data()),
            None => flat_grad.extend(std::iter::repeat_n(0.0, t.len())),
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = samples.min(p64.flat_len());
    let mut report = GradCheckReport {
        checked: 0,
        max_rel_error: 0.0,
        worst_param: String::new(),
        analytic: 0.0,
        numeric: 0.0,
    };
    for idx in sample(&mut rng, p64.flat_len(), n) {
        let orig = p64.flat_get(idx);
        p64.flat_set(idx, orig + eps);
        let up = loss_value(&p64, config, item)?;
        p64.flat_set(idx, orig - eps);
        let down = loss_value(&p64, config, item)?;
        p64.flat_set(idx, orig);
        let numeric = (up - down) / (2.0 * eps);
        let analytic = flat_grad[idx];
        let scale = analytic.abs().max(numeric.abs());
        let rel = if scale < ABS_FLOOR { 0.0 } else { (analytic - numeric).abs() / scale };
        report.checked += 1;
        if rel > report.max_rel_error || report.worst_param.is_empty() {
            report.max_rel_error = rel;
            report.worst_param = p64.flat_name(idx).to_string();
            report.analytic = analytic;
            report.numeric = numeric;
        }
    }
    Ok(report)
}
