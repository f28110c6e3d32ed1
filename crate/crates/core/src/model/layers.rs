use crate::autodiff::{Tape, Var};
use crate::tensor::{Float, Tensor};
use crate::visualtext::GlyphBitmap;

use super::{Bound, EventInput, ModelConfig, ModelError, ModelParams};

pub const LN_EPS: f64 = 1e-5;

fn lin<S: Float>(tape: &mut Tape<S>, b: &Bound, name: &str, x: Var) -> Var {
    let (w, bias) = (b.var(&format!("{name}.w")), b.var(&format!("{name}.b")));
    tape.linear(x, w, bias)
}

fn norm<S: Float>(tape: &mut Tape<S>, b: &Bound, name: &str, x: Var) -> Var {
    let y = tape.layer_norm_rows(x, LN_EPS);
    let y = tape.mul_row(y, b.var(&format!("{name}.g")));
    tape.add_row(y, b.var(&format!("{name}.b")))
}

/// Sinusoidal encoding, `n x d`.
pub fn positional_encoding<S: Float>(n: usize, d: usize) -> Tensor<S> {
    Tensor::from_fn(n, d, |pos, j| {
        let rate = 10000f64.powf((2 * (j / 2)) as f64 / d as f64);
        let a = pos as f64 / rate;
        S::from_f64_lossy(if j % 2 == 0 { a.sin() } else { a.cos() })
    })
}

/// Shared conv/pool stack applied to every token: 2x2 average pool,
/// 3x3 convolution + ReLU, 2x2 max pool, flatten, linear.
pub fn extract_visual_features<S: Float>(
    tape: &mut Tape<S>,
    b: &Bound,
    c: &ModelConfig,
    tokens: &[GlyphBitmap],
) -> Result<Var, ModelError> {
    let (h, w) = (c.cell_h, c.cell_w);
    let n = tokens.len();
    if n == 0 {
        return Err(ModelError::ShapeMismatch("no tokens".into()));
    }
    let mut data = Vec::with_capacity(n * h * w);
    for (i, t) in tokens.iter().enumerate() {
        if (t.height(), t.width()) != (h, w) {
            return Err(ModelError::ShapeMismatch(format!(
                "token {i} is {}x{}, expected {h}x{w}",
                t.height(),
                t.width()
            )));
        }
        data.extend(t.pixels.data().iter().map(|&p| S::from_f64_lossy(p as f64)));
    }
    let x = tape.constant(Tensor::from_vec(n * h * w, 1, data));
    let x = tape.avg_pool2(x, n, h, w);
    let (h2, w2) = (h / 2, w / 2);
    let cols = tape.unfold2d(x, n, h2, w2, 3);
    let conv = lin(tape, b, "vis.conv", cols);
    let conv = tape.relu(conv);
    let pooled = tape.max_pool2(conv, n, h2, w2);
    let flat = tape.reshape(pooled, n, c.visual_flat());
    Ok(lin(tape, b, "vis.proj", flat))
}

/// Multi-head self-attention over rows of `x`. Returns the output and the
/// per-head attention matrices.
pub fn attention<S: Float>(tape: &mut Tape<S>, b: &Bound, prefix: &str, x: Var, n_heads: usize) -> (Var, Vec<Var>) {
    let d = tape.shape(x).1;
    let dh = d / n_heads;
    let q = lin(tape, b, &format!("{prefix}.wq"), x);
    let k = lin(tape, b, &format!("{prefix}.wk"), x);
    let v = lin(tape, b, &format!("{prefix}.wv"), x);
    let mut heads = Vec::with_capacity(n_heads);
    let mut maps = Vec::with_capacity(n_heads);
    for hd in 0..n_heads {
        let qh = tape.slice_cols(q, hd * dh, dh);
        let kh = tape.slice_cols(k, hd * dh, dh);
        let vh = tape.slice_cols(v, hd * dh, dh);
        let scores = tape.matmul_nt(qh, kh);
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt());
        let weights = tape.softmax_rows(scores);
        maps.push(weights);
        heads.push(tape.matmul(weights, vh));
    }
    let cat = if n_heads == 1 { heads[0] } else { tape.concat_cols(&heads) };
    (lin(tape, b, &format!("{prefix}.wo"), cat), maps)
}

/// Post-norm block: attention and a kernel-`k` convolutional feed-forward,
/// each with a residual connection and layer norm.
fn block<S: Float>(tape: &mut Tape<S>, b: &Bound, prefix: &str, x: Var, c: &ModelConfig) -> Var {
    let (att, _) = attention(tape, b, prefix, x, c.n_heads);
    let x = tape.add(x, att);
    let x = norm(tape, b, &format!("{prefix}.ln1"), x);
    let u = tape.unfold1d(x, c.ffn_kernel);
    let hdn = lin(tape, b, &format!("{prefix}.ffn1"), u);
    let hdn = tape.relu(hdn);
    let f = lin(tape, b, &format!("{prefix}.ffn2"), hdn);
    let x = tape.add(x, f);
    norm(tape, b, &format!("{prefix}.ln2"), x)
}

fn add_positions<S: Float>(tape: &mut Tape<S>, x: Var) -> Var {
    let (n, d) = tape.shape(x);
    let pe = tape.constant(positional_encoding(n, d));
    tape.add(x, pe)
}

pub fn encode<S: Float>(tape: &mut Tape<S>, b: &Bound, c: &ModelConfig, features: Var) -> Result<Var, ModelError> {
    let n = tape.shape(features).0;
    if n > c.max_tokens {
        return Err(ModelError::TooManyTokens { n, max: c.max_tokens });
    }
    let mut x = add_positions(tape, features);
    for l in 0..c.n_enc_layers {
        x = block(tape, b, &format!("enc.{l}"), x, c);
    }
    Ok(x)
}

/// Per-token `log(frames + 1)` predictions, `n x 1`.
pub fn predict_durations<S: Float>(tape: &mut Tape<S>, b: &Bound, c: &ModelConfig, hidden: Var) -> Var {
    let u = tape.unfold1d(hidden, c.dur_kernel);
    let x = lin(tape, b, "dur.conv1", u);
    let x = tape.relu(x);
    let x = norm(tape, b, "dur.ln1", x);
    let u = tape.unfold1d(x, c.dur_kernel);
    let x = lin(tape, b, "dur.conv2", u);
    let x = tape.relu(x);
    let x = norm(tape, b, "dur.ln2", x);
    lin(tape, b, "dur.out", x)
}

/// Inference rounding: `max(0, round(exp(x) - 1))`.
pub fn durations_from_log(log_durations: &[f64]) -> Vec<usize> {
    log_durations
        .iter()
        .map(|&x| (x.exp() - 1.0).round().max(0.0) as usize)
        .collect()
}

/// Repeats row `i` of `hidden` `durations[i]` times.
pub fn length_regulate<S: Float>(
    tape: &mut Tape<S>,
    hidden: Var,
    durations: &[usize],
    max_frames: usize,
) -> Result<Var, ModelError> {
    let n = tape.shape(hidden).0;
    if durations.len() != n {
        return Err(ModelError::ShapeMismatch(format!("{} durations for {n} tokens", durations.len())));
    }
    let total: usize = durations.iter().sum();
    if total == 0 {
        return Err(ModelError::EmptyOutput);
    }
    if total > max_frames {
        return Err(ModelError::TooManyFrames { n: total, max: max_frames });
    }
    let index = durations
        .iter()
        .enumerate()
        .flat_map(|(i, &d)| std::iter::repeat_n(i, d))
        .collect();
    Ok(tape.gather_rows(hidden, index))
}

/// The 256-wide event vector as a `1 x event_dim` node.
pub fn event_vector<S: Float>(tape: &mut Tape<S>, b: &Bound, c: &ModelConfig, event: &EventInput) -> Result<Var, ModelError> {
    match event {
        EventInput::Label(i) => {
            if !b.has("event.table") || *i >= c.n_labels {
                return Err(ModelError::UnknownLabel(format!("#{i}")));
            }
            let table = b.var("event.table");
            Ok(tape.gather_rows(table, vec![*i]))
        }
        EventInput::Feature(v) => {
            if v.len() != c.event_dim {
                return Err(ModelError::ShapeMismatch(format!("event vector of {} values", v.len())));
            }
            Ok(tape.constant(Tensor::from_vec(
                1,
                v.len(),
                v.iter().map(|&x| S::from_f64_lossy(x as f64)).collect(),
            )))
        }
        EventInput::Null => Ok(tape.constant(Tensor::zeros(1, c.event_dim))),
    }
}

/// Adds the projected event vector to every frame, then runs the decoder
/// blocks and the mel projection.
pub fn decode<S: Float>(tape: &mut Tape<S>, b: &Bound, c: &ModelConfig, frames: Var, event: Var) -> Var {
    let e = lin(tape, b, "event.proj", event);
    let x = tape.add_row(frames, e);
    let mut x = add_positions(tape, x);
    for l in 0..c.n_dec_layers {
        x = block(tape, b, &format!("dec.{l}"), x, c);
    }
    lin(tape, b, "mel", x)
}

pub struct ForwardInput<'a> {
    pub tokens: &'a [GlyphBitmap],
    pub event: &'a EventInput,
    /// Teacher-forced durations; `None` uses the predictions.
    pub durations: Option<&'a [usize]>,
}

pub struct ForwardOutput {
    pub mel: Var,
    pub log_durations: Var,
    pub durations: Vec<usize>,
}

pub fn forward<S: Float>(
    tape: &mut Tape<S>,
    b: &Bound,
    c: &ModelConfig,
    input: &ForwardInput,
) -> Result<ForwardOutput, ModelError> {
    let feats = extract_visual_features(tape, b, c, input.tokens)?;
    let hidden = encode(tape, b, c, feats)?;
    let log_durations = predict_durations(tape, b, c, hidden);
    let durations = match input.durations {
        Some(d) => d.to_vec(),
        None => durations_from_log(
            &tape
                .value(log_durations)
                .data()
                .iter()
                .map(|v| v.as_f64())
                .collect::<Vec<_>>(),
        ),
    };
    let frames = length_regulate(tape, hidden, &durations, c.max_frames)?;
    let event = event_vector(tape, b, c, input.event)?;
    let mel = decode(tape, b, c, frames, event);
    Ok(ForwardOutput {
        mel,
        log_durations,
        durations,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub mel: Tensor<f32>,
    pub log_durations: Vec<f32>,
    pub durations: Vec<usize>,
}

/// Forward pass without gradients.
pub fn infer(
    params: &ModelParams<f32>,
    c: &ModelConfig,
    tokens: &[GlyphBitmap],
    event: &EventInput,
    durations: Option<&[usize]>,
) -> Result<Inference, ModelError> {
    let mut tape = Tape::new();
    let b = params.bind_constants(&mut tape);
    let out = forward(&mut tape, &b, c, &ForwardInput { tokens, event, durations })?;
    Ok(Inference {
        mel: tape.value(out.mel).clone(),
        log_durations: tape.value(out.log_durations).data().to_vec(),
        durations: out.durations,
    })
}
