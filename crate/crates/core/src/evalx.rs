//! Objective experiments: duration measurement, relative-duration curves
//! over repetition counts and stretch ratios, and conditioning diversity.
//! Results are CSV tables with `#meta` footer lines.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::GeneratorSpec;
use crate::augment::{find_char_runs, repeat_char_text, AugmentError, CharRun};
use crate::dsp::{mel_distance, mel_spectrogram, DspConfig, DspError, MelSpectrogram, Wave, DEFAULT_DISTANCE_FRAMES, LOG_FLOOR};
use crate::model::Checkpoint;
use crate::train::{synthesize, EventChoice, TrainError};
use crate::visualtext::Stretch;

pub const SCHEMA: &str = "onoma-eval/1";
const SUBJECTIVE_NOTE: &str = "subjective=skipped (listening-test scores are not reproduced)";

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no frame rises above the silence threshold")]
    AllSilent,
    #[error("need at least two outputs, got {0}")]
    NeedAtLeastTwo(usize),
    #[error("text `{0}` has no character run to repeat")]
    NoRun(String),
    #[error("malformed table: {0}")]
    Table(String),
    #[error(transparent)]
    Train(#[from] TrainError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Augment(#[from] AugmentError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DurationConfig {
    /// Nats above the energy of an all-floor frame that count as sound.
    pub margin_nats: f64,
}

impl Default for DurationConfig {
    fn default() -> Self {
        Self { margin_nats: 3.0 }
    }
}

/// Frame energy: log of the summed mel magnitudes.
pub fn frame_energy(row: &[f32]) -> f64 {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    max + row.iter().map(|&v| (v as f64 - max).exp()).sum::<f64>().ln()
}

/// Seconds from the first to the last frame whose energy exceeds the
/// silence floor by `margin_nats`, counting active frames only.
pub fn measure_duration(mel: &MelSpectrogram, config: &DurationConfig) -> Result<f64, EvalError> {
    let floor = (mel.n_mels() as f64 * LOG_FLOOR).ln();
    let active: Vec<bool> = (0..mel.n_frames())
        .map(|t| frame_energy(mel.frames.row(t)) > floor + config.margin_nats)
        .collect();
    let first = active.iter().position(|&a| a).ok_or(EvalError::AllSilent)?;
    let last = active.iter().rposition(|&a| a).expect("some frame is active");
    let count = active[first..=last].iter().filter(|&&a| a).count();
    Ok(count as f64 * mel.config.frame_seconds())
}

/// Waveforms get a frame of zeros on each side so every window touching
/// the sound is analysed, whatever silence follows. Those windows overhang
/// the sound by `frame_length - hop` samples in total, which is removed.
pub fn measure_wave_duration(wave: &Wave, dsp: &DspConfig, config: &DurationConfig) -> Result<f64, EvalError> {
    let pad = dsp.frame_length;
    let mut padded = vec![0.0f32; wave.samples.len() + 2 * pad];
    padded[pad..pad + wave.samples.len()].copy_from_slice(&wave.samples);
    let overhang = (dsp.frame_length - dsp.hop) as f64 / dsp.sample_rate as f64;
    Ok((measure_duration(&mel_spectrogram(&padded, dsp)?, config)? - overhang).max(0.0))
}

/// Each variant's duration over the base duration.
pub fn relative_duration_curve(
    base: &MelSpectrogram,
    variants: &[(f64, &MelSpectrogram)],
    config: &DurationConfig,
) -> Result<Vec<(f64, f64)>, EvalError> {
    let b = measure_duration(base, config)?;
    variants
        .iter()
        .map(|(k, m)| Ok((*k, measure_duration(m, config)? / b)))
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Diversity {
    pub mean: f64,
    /// `(i, j, distance)` for every unordered pair `i < j`.
    pub pairs: Vec<(usize, usize, f64)>,
}

/// Mean pairwise mel distance.
pub fn diversity_msd(outputs: &[MelSpectrogram]) -> Result<Diversity, EvalError> {
    if outputs.len() < 2 {
        return Err(EvalError::NeedAtLeastTwo(outputs.len()));
    }
    let mut pairs = Vec::with_capacity(outputs.len() * (outputs.len() - 1) / 2);
    for i in 0..outputs.len() {
        for j in i + 1..outputs.len() {
            pairs.push((i, j, mel_distance(&outputs[i], &outputs[j], DEFAULT_DISTANCE_FRAMES)?));
        }
    }
    let mean = pairs.iter().map(|p| p.2).sum::<f64>() / pairs.len() as f64;
    Ok(Diversity { mean, pairs })
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r2: f64,
}

/// Ordinary least squares. `r2` is 1 when the points have no spread in y.
pub fn linear_fit(points: &[(f64, f64)]) -> LinearFit {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let intercept = my - slope * mx;
    let ss_res: f64 = points.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum();
    let r2 = if syy > 0.0 { 1.0 - ss_res / syy } else { 1.0 };
    LinearFit { slope, intercept, r2 }
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Text plus event used as one experiment input.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalInput {
    pub text: String,
    pub label: String,
}

/// How many nucleus characters a base word carries.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BaseShape {
    /// One nucleus character, the starting point for repetition.
    Single,
    /// Midpoint of the class's repeat range, a typical corpus word.
    Typical,
}

/// One word per (onset, nucleus) pair of every class, with the first coda.
pub fn base_inputs(spec: &GeneratorSpec, shape: BaseShape) -> Vec<EvalInput> {
    let mut out = Vec::new();
    for class in &spec.classes {
        let t = &class.template;
        let coda = t.codas.first().map(String::as_str).unwrap_or("");
        let m = match shape {
            BaseShape::Single => 1,
            BaseShape::Typical => (t.min_repeat + t.max_repeat).div_ceil(2),
        };
        for onset in &t.onsets {
            for &nucleus in &t.nuclei {
                let run: String = std::iter::repeat_n(nucleus, m).collect();
                out.push(EvalInput {
                    text: format!("{onset}{run}{coda}"),
                    label: class.label.clone(),
                });
            }
        }
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RepetitionLevel {
    Word,
    Char,
}

impl RepetitionLevel {
    pub fn name(self) -> &'static str {
        match self {
            RepetitionLevel::Word => "word",
            RepetitionLevel::Char => "char",
        }
    }

    /// Evaluation grid: 0..=4 word repeats, 0..=10 character insertions.
    pub fn default_counts(self) -> Vec<usize> {
        match self {
            RepetitionLevel::Word => (0..=4).collect(),
            RepetitionLevel::Char => (0..=10).collect(),
        }
    }
}

/// The run that character-level repetition extends: the longest one,
/// earliest on ties.
pub fn eval_run(text: &str) -> Option<CharRun> {
    find_char_runs(text, 1)
        .into_iter()
        .fold(None, |best: Option<CharRun>, r| match best {
            Some(b) if b.length >= r.length => Some(b),
            _ => Some(r),
        })
}

pub fn repeated_text(text: &str, level: RepetitionLevel, count: usize) -> Result<String, EvalError> {
    match level {
        RepetitionLevel::Word => Ok(text.repeat(count + 1)),
        RepetitionLevel::Char => {
            let run = eval_run(text).ok_or_else(|| EvalError::NoRun(text.to_string()))?;
            Ok(repeat_char_text(text, &run, count)?)
        }
    }
}

/// Experiment result: column names, rows and `#meta` lines.
#[derive(Clone, Debug, PartialEq)]
pub struct Table {
    pub columns: Vec<String>,
    pub rows: Vec<Vec<String>>,
    pub meta: Vec<String>,
}

impl Table {
    fn new(columns: &[&str]) -> Self {
        Self {
            columns: columns.iter().map(|c| c.to_string()).collect(),
            rows: Vec::new(),
            meta: vec![format!("schema={SCHEMA}")],
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = self.columns.join(",");
        out.push('\n');
        for r in &self.rows {
            out.push_str(&r.join(","));
            out.push('\n');
        }
        for m in &self.meta {
            let _ = writeln!(out, "#meta {m}");
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self, EvalError> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        let header = lines.next().ok_or_else(|| EvalError::Table("empty".into()))?;
        let columns: Vec<String> = header.split(',').map(str::to_string).collect();
        let mut rows = Vec::new();
        let mut meta = Vec::new();
        for (i, line) in lines.enumerate() {
            if let Some(m) = line.strip_prefix("#meta ") {
                meta.push(m.to_string());
            } else if !line.starts_with('#') {
                let row: Vec<String> = line.split(',').map(str::to_string).collect();
                if row.len() != columns.len() {
                    return Err(EvalError::Table(format!(
                        "row {} has {} fields, header has {}",
                        i + 2,
                        row.len(),
                        columns.len()
                    )));
                }
                rows.push(row);
            }
        }
        Ok(Self { columns, rows, meta })
    }

    pub fn column(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c == name)
    }

    /// Reads the numeric column `name` of every row.
    pub fn numbers(&self, name: &str) -> Result<Vec<f64>, EvalError> {
        let c = self
            .column(name)
            .ok_or_else(|| EvalError::Table(format!("no column `{name}`")))?;
        self.rows
            .iter()
            .map(|r| {
                r[c].parse()
                    .map_err(|_| EvalError::Table(format!("`{}` in column {name} is not a number", r[c])))
            })
            .collect()
    }
}

fn fmt(v: f64) -> String {
    format!("{v:.6}")
}

/// Duration of the synthesized mel for one configuration.
fn synth_duration(ckpt: &Checkpoint, text: &str, stretch: Stretch, event: &EventChoice, config: &DurationConfig) -> Result<f64, EvalError> {
    let s = synthesize(ckpt, text, stretch, event, false)?;
    measure_duration(&s.mel, config)
}

/// Per-count mean and standard deviation of the relative duration of one
/// system over `inputs`.
pub fn repetition_curve(
    ckpt: &Checkpoint,
    inputs: &[EvalInput],
    level: RepetitionLevel,
    counts: &[usize],
    config: &DurationConfig,
) -> Result<Vec<(usize, f64, f64)>, EvalError> {
    let mut rel = vec![Vec::with_capacity(inputs.len()); counts.len()];
    for input in inputs {
        let event = EventChoice::Label(input.label.clone());
        let base = synth_duration(ckpt, &input.text, Stretch::None, &event, config)?;
        for (slot, &k) in rel.iter_mut().zip(counts) {
            let d = if k == 0 {
                base
            } else {
                synth_duration(ckpt, &repeated_text(&input.text, level, k)?, Stretch::None, &event, config)?
            };
            slot.push(d / base);
        }
    }
    Ok(counts
        .iter()
        .zip(&rel)
        .map(|(&k, xs)| {
            let (m, s) = mean_std(xs);
            (k, m, s)
        })
        .collect())
}

/// Rows `(system, level, repeat_count, mean_rel_duration, std)` for every
/// named system on identical inputs; the footer holds each system's fit.
pub fn run_repetition_experiment(
    systems: &[(&str, &Checkpoint)],
    inputs: &[EvalInput],
    level: RepetitionLevel,
    counts: &[usize],
    config: &DurationConfig,
) -> Result<Table, EvalError> {
    let mut table = Table::new(&["system", "level", "repeat_count", "mean_rel_duration", "std"]);
    for (name, ckpt) in systems {
        let curve = repetition_curve(ckpt, inputs, level, counts, config)?;
        for &(k, m, s) in &curve {
            table
                .rows
                .push(vec![name.to_string(), level.name().into(), k.to_string(), fmt(m), fmt(s)]);
        }
        let fit = linear_fit(&curve.iter().map(|c| (c.0 as f64, c.1)).collect::<Vec<_>>());
        table.meta.push(format!(
            "system={name} slope={} intercept={} r2={}",
            fmt(fit.slope),
            fmt(fit.intercept),
            fmt(fit.r2)
        ));
    }
    table.meta.push(format!("inputs={} margin_nats={}", inputs.len(), config.margin_nats));
    table.meta.push(SUBJECTIVE_NOTE.into());
    Ok(table)
}

pub const DEFAULT_RATIOS: [f64; 4] = [0.5, 1.0, 1.5, 2.0];

/// Rows `(ratio, mean_rel_duration, std)`, relative to ratio 1.0 of the
/// same input; the footer holds the least-squares fit.
pub fn run_stretch_experiment(
    ckpt: &Checkpoint,
    inputs: &[EvalInput],
    ratios: &[f64],
    config: &DurationConfig,
) -> Result<Table, EvalError> {
    let mut rel = vec![Vec::with_capacity(inputs.len()); ratios.len()];
    for input in inputs {
        let event = EventChoice::Label(input.label.clone());
        let base = synth_duration(ckpt, &input.text, Stretch::Ratio { ratio: 1.0 }, &event, config)?;
        for (slot, &r) in rel.iter_mut().zip(ratios) {
            slot.push(synth_duration(ckpt, &input.text, Stretch::Ratio { ratio: r }, &event, config)? / base);
        }
    }
    let mut table = Table::new(&["ratio", "mean_rel_duration", "std"]);
    let mut points = Vec::new();
    for (&r, xs) in ratios.iter().zip(&rel) {
        let (m, s) = mean_std(xs);
        points.push((r, m));
        table.rows.push(vec![fmt(r), fmt(m), fmt(s)]);
    }
    let fit = linear_fit(&points);
    table.meta.push(format!(
        "slope={} intercept={} r2={}",
        fmt(fit.slope),
        fmt(fit.intercept),
        fmt(fit.r2)
    ));
    table.meta.push(format!("inputs={} margin_nats={}", inputs.len(), config.margin_nats));
    table.meta.push(SUBJECTIVE_NOTE.into());
    Ok(table)
}

/// One class of the diversity experiment: texts synthesized once per
/// event image with the image-conditioned system and once per image slot
/// with the label-conditioned system, so both sets have the same size.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityCase {
    pub label: String,
    pub texts: Vec<String>,
    pub images: Vec<std::path::PathBuf>,
}

/// Rows `(label, system, mean_msd, pairs)` plus per-pair rows in a second
/// table for violin-style plots.
pub fn run_diversity_experiment(
    image_system: &Checkpoint,
    label_system: &Checkpoint,
    cases: &[DiversityCase],
) -> Result<(Table, Table), EvalError> {
    let mut summary = Table::new(&["label", "system", "mean_msd", "pairs"]);
    let mut pairs = Table::new(&["label", "system", "i", "j", "distance"]);
    for case in cases {
        let mut img_out = Vec::new();
        let mut lbl_out = Vec::new();
        for text in &case.texts {
            let lbl = synthesize(label_system, text, Stretch::None, &EventChoice::Label(case.label.clone()), false)?.mel;
            for image in &case.images {
                img_out.push(synthesize(image_system, text, Stretch::None, &EventChoice::Image(image.clone()), false)?.mel);
                lbl_out.push(lbl.clone());
            }
        }
        for (name, outs) in [("image", &img_out), ("label", &lbl_out)] {
            let d = diversity_msd(outs)?;
            summary.rows.push(vec![
                case.label.clone(),
                name.into(),
                fmt(d.mean),
                d.pairs.len().to_string(),
            ]);
            for (i, j, v) in d.pairs {
                pairs
                    .rows
                    .push(vec![case.label.clone(), name.into(), i.to_string(), j.to_string(), fmt(v)]);
            }
        }
    }
    summary.meta.push(format!("distance_frames={DEFAULT_DISTANCE_FRAMES}"));
    summary.meta.push(SUBJECTIVE_NOTE.into());
    Ok((summary, pairs))
}

/// Re-emits an experiment table in long format `series,x,y`: the first
/// numeric column after the text columns is `x`, every later numeric
/// column becomes its own series suffix.
pub fn to_long_format(table: &Table) -> Result<String, EvalError> {
    let numeric: Vec<bool> = (0..table.columns.len())
        .map(|c| !table.rows.is_empty() && table.rows.iter().all(|r| r[c].parse::<f64>().is_ok()))
        .collect();
    let x = numeric
        .iter()
        .position(|&n| n)
        .ok_or_else(|| EvalError::Table("no numeric column".into()))?;
    let mut out = String::from("series,x,y\n");
    for r in &table.rows {
        let prefix: Vec<&str> = (0..x).filter(|&c| !numeric[c]).map(|c| r[c].as_str()).collect();
        for c in x + 1..table.columns.len() {
            if !numeric[c] {
                continue;
            }
            let mut series = prefix.join("/");
            if !series.is_empty() {
                series.push('/');
            }
            series.push_str(&table.columns[c]);
            let _ = writeln!(out, "{series},{},{}", r[x], r[c]);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use proptest::prelude::*;

    #[test]
    fn base_inputs_cover_every_onset_and_nucleus() {
        let spec = GeneratorSpec::desk(1);
        let single = base_inputs(&spec, BaseShape::Single);
        let expected: usize = spec.classes.iter().map(|c| c.template.onsets.len() * c.template.nuclei.len()).sum();
        assert_eq!(single.len(), expected);
        assert!(single.iter().any(|i| i.text == "kan" && i.label == "bell"));
        let typical = base_inputs(&spec, BaseShape::Typical);
        let bell = spec.classes.iter().find(|c| c.label == "bell").unwrap();
        let m = (bell.template.min_repeat + bell.template.max_repeat).div_ceil(2);
        assert_eq!(typical[0].text, format!("k{}n", "a".repeat(m)));
    }

    fn dsp() -> DspConfig {
        DspConfig {
            frame_length: 256,
            hop: 64,
            n_mels: 32,
            ..DspConfig::new(8000)
        }
    }

    fn tone(sec: f64, silence_after: f64) -> Wave {
        let sr = 8000.0;
        let n = (sec * sr) as usize;
        let mut s: Vec<f32> = (0..n)
            .map(|i| (0.5 * (2.0 * std::f64::consts::PI * 440.0 * i as f64 / sr).sin()) as f32)
            .collect();
        s.extend(std::iter::repeat_n(0.0, (silence_after * sr) as usize));
        Wave::new(8000, s)
    }

    #[test]
    fn pure_tone_duration() {
        let d = measure_wave_duration(&tone(1.0, 0.0), &dsp(), &DurationConfig::default()).unwrap();
        assert!((d - 1.0).abs() <= 2.0 * 64.0 / 8000.0, "{d}");
    }

    #[test]
    fn silent_tail_is_excluded() {
        let d = measure_wave_duration(&tone(0.6, 0.2), &dsp(), &DurationConfig::default()).unwrap();
        assert!((d - 0.6).abs() <= 2.0 * 64.0 / 8000.0, "{d}");
    }

    #[test]
    fn silence_is_rejected() {
        let w = Wave::new(8000, vec![0.0; 8000]);
        assert!(matches!(
            measure_wave_duration(&w, &dsp(), &DurationConfig::default()),
            Err(EvalError::AllSilent)
        ));
    }

    #[test]
    fn interior_gaps_do_not_count() {
        let mut frames = Tensor::filled(10, 4, LOG_FLOOR.ln() as f32);
        for t in [2, 3, 6, 7] {
            frames.row_mut(t).fill(0.0);
        }
        let mel = MelSpectrogram::new(frames, dsp());
        let d = measure_duration(&mel, &DurationConfig::default()).unwrap();
        assert_eq!(d, 4.0 * 64.0 / 8000.0);
    }

    #[test]
    fn curve_of_identical_variants_is_flat() {
        let mel = mel_spectrogram(&tone(0.5, 0.0).samples, &dsp()).unwrap();
        let c = relative_duration_curve(&mel, &[(0.0, &mel), (1.0, &mel)], &DurationConfig::default()).unwrap();
        assert_eq!(c, vec![(0.0, 1.0), (1.0, 1.0)]);
    }

    #[test]
    fn msd_arithmetic() {
        let mk = |v: f32| MelSpectrogram::new(Tensor::filled(64, 1, v), dsp());
        // Squared distances 1, 4, 1 between levels 0, 1, 2.
        let d = diversity_msd(&[mk(0.0), mk(1.0), mk(2.0)]).unwrap();
        assert_eq!(d.pairs.len(), 3);
        assert!((d.mean - 2.0).abs() < 1e-9, "{}", d.mean);
        assert_eq!(diversity_msd(&[mk(0.0), mk(0.0)]).unwrap().mean, 0.0);
        assert!(matches!(diversity_msd(&[mk(0.0)]), Err(EvalError::NeedAtLeastTwo(1))));
    }

    #[test]
    fn fit_of_a_line() {
        let f = linear_fit(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0)]);
        assert!((f.slope - 2.0).abs() < 1e-12 && (f.intercept - 1.0).abs() < 1e-12 && (f.r2 - 1.0).abs() < 1e-12);
        assert_eq!(linear_fit(&[(0.0, 2.0), (1.0, 2.0)]).r2, 1.0);
    }

    #[test]
    fn repeated_texts() {
        assert_eq!(repeated_text("kan", RepetitionLevel::Word, 2).unwrap(), "kankankan");
        assert_eq!(repeated_text("kiin", RepetitionLevel::Char, 0).unwrap(), "kiin");
        assert_eq!(repeated_text("kiin", RepetitionLevel::Char, 3).unwrap(), "kiiiiin");
        assert_eq!(eval_run("kaaniii").unwrap().ch, 'i');
        assert_eq!(RepetitionLevel::Word.default_counts().len(), 5);
        assert_eq!(RepetitionLevel::Char.default_counts().len(), 11);
    }

    #[test]
    fn table_round_trip_and_long_format() {
        let mut t = Table::new(&["system", "level", "repeat_count", "mean_rel_duration", "std"]);
        t.rows.push(vec!["aug".into(), "word".into(), "0".into(), "1.0".into(), "0.0".into()]);
        t.rows.push(vec!["aug".into(), "word".into(), "1".into(), "1.9".into(), "0.1".into()]);
        t.meta.push("system=aug slope=0.9".into());
        let back = Table::parse(&t.to_csv()).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.numbers("repeat_count").unwrap(), vec![0.0, 1.0]);
        let long = to_long_format(&t).unwrap();
        assert_eq!(
            long,
            "series,x,y\naug/word/mean_rel_duration,0,1.0\naug/word/std,0,0.0\n\
             aug/word/mean_rel_duration,1,1.9\naug/word/std,1,0.1\n"
        );
        assert!(Table::parse("a,b\n1\n").is_err());
    }

    proptest! {
        #[test]
        fn msd_is_permutation_invariant(levels in proptest::collection::vec(-5.0f32..5.0, 2..6), rot in 0usize..6) {
            let mels: Vec<MelSpectrogram> = levels
                .iter()
                .enumerate()
                .map(|(i, &v)| MelSpectrogram::new(Tensor::from_fn(8 + i, 3, |t, b| v + (t * b) as f32 * 0.01), dsp()))
                .collect();
            let mut shuffled = mels.clone();
            shuffled.rotate_left(rot % mels.len());
            shuffled.reverse();
            let a = diversity_msd(&mels).unwrap().mean;
            let b = diversity_msd(&shuffled).unwrap().mean;
            prop_assert!((a - b).abs() <= 1e-9 * a.abs().max(1.0));
        }

        #[test]
        fn appended_silence_does_not_change_duration(sec in 0.2f64..0.8, tail in 0.0f64..0.5) {
            let cfg = DurationConfig::default();
            let a = measure_wave_duration(&tone(sec, 0.0), &dsp(), &cfg).unwrap();
            let b = measure_wave_duration(&tone(sec, tail), &dsp(), &cfg).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
