use std::path::{Path, PathBuf};

use clap::{Args, ValueEnum};
use serde::{Deserialize, Serialize};

use onoma_core::augment::{augment_manifest, AugmentPolicy, CharPolicy, WordPolicy};
use onoma_core::corpus::{generate_synthetic_corpus, load_manifest, GeneratorSpec};
use onoma_core::dsp::{griffin_lim, write_wav, DspConfig};
use onoma_core::evalx::{
    base_inputs, run_diversity_experiment, run_repetition_experiment, run_stretch_experiment, to_long_format,
    BaseShape, DiversityCase, DurationConfig, EvalInput, RepetitionLevel, Table, DEFAULT_RATIOS,
};
use onoma_core::model::{Checkpoint, ModelConfig, ModelParams};
use onoma_core::train::{gradient_check, prepare_dataset, synthesize, train, EventChoice, TrainConfig, TrainOutputs};
use onoma_core::visualtext::{render_visual_text, slice_into_tokens, BitmapFont, GlyphProvider, ProceduralGlyphs, Stretch};

use crate::error::{io_err, CliError};
use crate::settings::{resolve, Common};

type Result<T> = std::result::Result<T, CliError>;

/// Model and analysis sizes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// 24 px cells, 128-wide model, 1024/256 frames, 80 mels
    #[default]
    Paper,
    /// 16 px cells, 32-wide model, 256/64 frames, 32 mels
    Desk,
}

impl Preset {
    fn model(self) -> ModelConfig {
        match self {
            Preset::Paper => ModelConfig::default(),
            Preset::Desk => ModelConfig::desk(),
        }
    }

    fn dsp(self, sample_rate: u32) -> DspConfig {
        match self {
            Preset::Paper => DspConfig::new(sample_rate),
            Preset::Desk => DspConfig::desk(sample_rate),
        }
    }
}

fn default_glyph_seed() -> u64 {
    ProceduralGlyphs::default().seed
}

fn write_output(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(io_err(p)),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn parse_inputs(raw: &[String], fallback: impl FnOnce() -> Vec<EvalInput>) -> Result<Vec<EvalInput>> {
    if raw.is_empty() {
        return Ok(fallback());
    }
    raw.iter()
        .map(|s| match s.rsplit_once(':') {
            Some((text, label)) if !text.is_empty() && !label.is_empty() => Ok(EvalInput {
                text: text.into(),
                label: label.into(),
            }),
            _ => Err(CliError::Usage(format!("input `{s}` is not TEXT:LABEL"))),
        })
        .collect()
}

fn load_ckpt(p: &Path) -> Result<Checkpoint> {
    Ok(Checkpoint::load(p)?)
}

// gen-corpus

#[derive(Args, Serialize)]
pub struct GenCorpusArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Output directory; receives manifest.tsv, audio/ and align/
    #[arg(long)]
    out: Option<PathBuf>,
    /// Records per sound-event class [default: 50]
    #[arg(long)]
    per_class: Option<usize>,
    /// Generator seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct GenCorpusSettings {
    out: PathBuf,
    #[serde(default = "fifty")]
    per_class: usize,
    #[serde(default)]
    seed: u64,
    /// Full generator description; only settable from the file.
    #[serde(default)]
    spec: Option<GeneratorSpec>,
}

fn fifty() -> usize {
    50
}

pub fn gen_corpus(args: GenCorpusArgs) -> Result<()> {
    let Some(s) = resolve::<GenCorpusSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let spec = s.spec.unwrap_or_else(|| GeneratorSpec::desk(s.per_class));
    let m = generate_synthetic_corpus(&spec, s.seed, &s.out)?;
    println!("{} records, {} Hz -> {}", m.len(), m.sample_rate, s.out.join("manifest.tsv").display());
    Ok(())
}

// prepare

#[derive(Args, Serialize)]
pub struct PrepareArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Onomatopoeia to render
    #[arg(long)]
    text: Option<String>,
    /// Cell size in pixels, square [default: 24]
    #[arg(long)]
    cell: Option<usize>,
    /// Bitmap font file; procedural glyphs when absent
    #[arg(long)]
    font: Option<PathBuf>,
    /// Procedural glyph seed [default: built-in]
    #[arg(long)]
    seed: Option<u64>,
    /// Stretch the text width by this ratio
    #[arg(long)]
    ratio: Option<f64>,
    /// Sounding rate P in characters per second, used with --duration
    #[arg(long)]
    rate: Option<f64>,
    /// Stretch to P * D cells for a sound of D seconds
    #[arg(long)]
    duration: Option<f64>,
    /// PGM of the rendered (and stretched) text
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for one PGM per token slice
    #[arg(long)]
    tokens_dir: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct PrepareSettings {
    text: String,
    #[serde(default = "default_cell")]
    cell: usize,
    #[serde(default)]
    font: Option<PathBuf>,
    #[serde(default = "default_glyph_seed")]
    seed: u64,
    #[serde(default)]
    ratio: Option<f64>,
    #[serde(default)]
    rate: Option<f64>,
    #[serde(default)]
    duration: Option<f64>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    tokens_dir: Option<PathBuf>,
}

fn default_cell() -> usize {
    onoma_core::visualtext::DEFAULT_CELL
}

fn stretch_from(ratio: Option<f64>, rate: Option<f64>, duration: Option<f64>) -> Result<Stretch> {
    match (ratio, rate, duration) {
        (None, None, None) => Ok(Stretch::None),
        (Some(ratio), None, None) => Ok(Stretch::Ratio { ratio }),
        (None, Some(rate), Some(duration_sec)) => Ok(Stretch::Duration { rate, duration_sec }),
        (None, _, _) => Err(CliError::Usage("--rate and --duration go together".into())),
        _ => Err(CliError::Usage("--ratio excludes --rate/--duration".into())),
    }
}

pub fn prepare(args: PrepareArgs) -> Result<()> {
    let Some(s) = resolve::<PrepareSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let stretch = stretch_from(s.ratio, s.rate, s.duration)?;
    let glyphs: Box<dyn GlyphProvider> = match &s.font {
        Some(p) => Box::new(BitmapFont::load(p)?),
        None => Box::new(ProceduralGlyphs::new(s.seed)),
    };
    let visual = render_visual_text(&s.text, glyphs.as_ref(), (s.cell, s.cell))?;
    let visual = stretch.apply(&visual, s.cell)?;
    let tokens = slice_into_tokens(&visual, s.cell);
    if let Some(p) = &s.out {
        visual.save_pgm(p)?;
    }
    if let Some(dir) = &s.tokens_dir {
        std::fs::create_dir_all(dir).map_err(io_err(dir))?;
        for (i, t) in tokens.iter().enumerate() {
            let p = dir.join(format!("{i:03}.pgm"));
            onoma_core::pgm::write_pgm(&p, &t.pixels).map_err(|e| CliError::Data(format!("{}: {e}", p.display())))?;
        }
    }
    println!(
        "chars={} text_width={} stretch={:.4} tokens={}",
        visual.char_boxes.len(),
        visual.text_width,
        visual.stretch_applied,
        tokens.len()
    );
    Ok(())
}

// augment

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum Levels {
    Word,
    Char,
    #[default]
    Both,
}

#[derive(Args, Serialize)]
pub struct AugmentArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Source manifest.tsv
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for the augmented corpus
    #[arg(long)]
    out: Option<PathBuf>,
    /// Repetition levels to apply [default: both]
    #[arg(long, value_enum)]
    levels: Option<Levels>,
    /// Largest word repeat k; each word gets k = 1..=K extra copies [default: 2]
    #[arg(long)]
    max_word_repeat: Option<usize>,
    /// Only words of at most this many characters are repeated [default: 7]
    #[arg(long)]
    max_word_chars: Option<usize>,
    /// Largest character insert count r [default: 5]
    #[arg(long)]
    max_char_insert: Option<usize>,
    /// Share of repeated-character mass the augmented set must cover [default: 0.9]
    #[arg(long)]
    char_coverage: Option<f64>,
    /// Distinct insert counts drawn per eligible run [default: 1]
    #[arg(long)]
    variants_per_run: Option<usize>,
    /// 5 ms crossfade at each inserted segment [default: false]
    #[arg(long)]
    crossfade: Option<bool>,
    /// Seed for drawing insert counts [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct AugmentSettings {
    manifest: PathBuf,
    out: PathBuf,
    #[serde(default)]
    levels: Levels,
    #[serde(default = "two")]
    max_word_repeat: usize,
    #[serde(default = "seven")]
    max_word_chars: usize,
    #[serde(default = "five")]
    max_char_insert: usize,
    #[serde(default = "coverage")]
    char_coverage: f64,
    #[serde(default = "one")]
    variants_per_run: usize,
    #[serde(default)]
    crossfade: bool,
    #[serde(default)]
    seed: u64,
}

fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn five() -> usize {
    5
}
fn seven() -> usize {
    7
}
fn coverage() -> f64 {
    0.9
}

pub fn augment(args: AugmentArgs) -> Result<()> {
    let Some(s) = resolve::<AugmentSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let word = WordPolicy {
        max_repeat: s.max_word_repeat,
        max_chars: s.max_word_chars,
        ..WordPolicy::default()
    };
    let char = CharPolicy {
        max_insert: s.max_char_insert,
        coverage: s.char_coverage,
        variants_per_run: s.variants_per_run,
        crossfade: s.crossfade,
        ..CharPolicy::default()
    };
    let policy = AugmentPolicy {
        word: (s.levels != Levels::Char).then_some(word),
        char: (s.levels != Levels::Word).then_some(char),
    };
    let source = load_manifest(&s.manifest)?;
    let out = augment_manifest(&source, &policy, s.seed, &s.out)?;
    println!(
        "{} source records -> {} records in {}",
        source.len(),
        out.len(),
        s.out.join("manifest.tsv").display()
    );
    Ok(())
}

// train

#[derive(Args, Serialize)]
pub struct TrainArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Training manifest.tsv
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Output directory for last.ckpt, best.ckpt and metrics.csv
    #[arg(long)]
    out: Option<PathBuf>,
    /// Model and analysis sizes [default: paper]
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Token cell size in pixels [default: 24 with the paper preset]
    #[arg(long)]
    cell: Option<usize>,
    /// Adam learning rate [default: 0.001]
    #[arg(long)]
    learning_rate: Option<f64>,
    /// Utterances per batch [default: 8]
    #[arg(long)]
    batch_size: Option<usize>,
    /// Training epochs [default: 40]
    #[arg(long)]
    epochs: Option<usize>,
    /// Initialisation and shuffling seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
    /// Maximum global gradient L2 norm [default: 1.0]
    #[arg(long)]
    grad_clip: Option<f64>,
    /// Linear warmup steps, 0 for none [default: 0]
    #[arg(long)]
    warmup_steps: Option<usize>,
    /// Fraction of base records held out for validation [default: 0.1]
    #[arg(long)]
    val_fraction: Option<f64>,
    /// Drop records whose annotator confidence is below this [default: 3]
    #[arg(long)]
    min_confidence: Option<u8>,
    /// Event conditioning [default: label_embedding]
    #[arg(long, value_parser = ["label_embedding", "image_file", "toy_image_embedder"])]
    event_source: Option<String>,
    /// Width preprocessing of training inputs [default: none]
    #[arg(long, value_parser = ["none", "duration"])]
    stretch: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct TrainSettings {
    manifest: PathBuf,
    out: PathBuf,
    #[serde(default)]
    preset: Preset,
    #[serde(default)]
    cell: Option<usize>,
    /// Full model description; overrides the preset.
    #[serde(default)]
    model: Option<ModelConfig>,
    /// Full analysis description; overrides the preset.
    #[serde(default)]
    dsp: Option<DspConfig>,
    #[serde(flatten)]
    train: TrainConfig,
}

pub fn train_cmd(args: TrainArgs) -> Result<()> {
    let Some(s) = resolve::<TrainSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let manifest = load_manifest(&s.manifest)?;
    let mut model = s.model.clone().unwrap_or_else(|| s.preset.model());
    if let Some(c) = s.cell {
        model.cell_h = c;
        model.cell_w = c;
    }
    let dsp = s.dsp.clone().unwrap_or_else(|| s.preset.dsp(manifest.sample_rate));
    std::fs::create_dir_all(&s.out).map_err(io_err(&s.out))?;
    let outcome = train(
        &manifest,
        &model,
        &dsp,
        &s.train,
        &TrainOutputs {
            dir: Some(s.out.clone()),
        },
    )?;
    let last = outcome.metrics.last().expect("epoch 0 is always recorded");
    println!(
        "epochs={} final total={:.5} val={:.5} best_epoch={} -> {}",
        last.epoch,
        last.train.total,
        last.val_total,
        outcome.best_epoch,
        s.out.display()
    );
    Ok(())
}

// synth

#[derive(Args, Serialize)]
pub struct SynthArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Checkpoint file
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Onomatopoeia to synthesize
    #[arg(long)]
    text: Option<String>,
    /// Output WAV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Optional raw mel output (binary)
    #[arg(long)]
    mel_out: Option<PathBuf>,
    /// Width stretch ratio, e.g. one of 0.5, 1.0, 1.5, 2.0
    #[arg(long)]
    ratio: Option<f64>,
    /// Target sound duration in seconds; width becomes P * D cells using
    /// the label's sounding rate
    #[arg(long)]
    duration: Option<f64>,
    /// Sound-event label
    #[arg(long)]
    label: Option<String>,
    /// Event image (PGM) for the toy image embedder
    #[arg(long)]
    image: Option<PathBuf>,
    /// Precomputed 256-value event embedding file
    #[arg(long)]
    embedding: Option<PathBuf>,
    /// Griffin-Lim iterations [default: from the checkpoint]
    #[arg(long)]
    griffin_lim_iters: Option<usize>,
    /// Accepted for uniformity; synthesis itself is deterministic [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct SynthSettings {
    ckpt: PathBuf,
    text: String,
    out: PathBuf,
    #[serde(default)]
    mel_out: Option<PathBuf>,
    #[serde(default)]
    ratio: Option<f64>,
    #[serde(default)]
    duration: Option<f64>,
    #[serde(default)]
    label: Option<String>,
    #[serde(default)]
    image: Option<PathBuf>,
    #[serde(default)]
    embedding: Option<PathBuf>,
    #[serde(default)]
    griffin_lim_iters: Option<usize>,
    #[serde(default)]
    seed: u64,
}

pub fn synth(args: SynthArgs) -> Result<()> {
    let Some(s) = resolve::<SynthSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let event = match (&s.label, &s.image, &s.embedding) {
        (Some(l), None, None) => EventChoice::Label(l.clone()),
        (None, Some(p), None) => EventChoice::Image(p.clone()),
        (None, None, Some(p)) => EventChoice::Embedding(p.clone()),
        _ => return Err(CliError::Usage("give exactly one of --label, --image, --embedding".into())),
    };
    let ckpt = load_ckpt(&s.ckpt)?;
    let stretch = match (s.ratio, s.duration) {
        (Some(_), Some(_)) => return Err(CliError::Usage("--ratio excludes --duration".into())),
        (Some(ratio), None) => Stretch::Ratio { ratio },
        (None, Some(duration_sec)) => {
            let label = s
                .label
                .as_ref()
                .ok_or_else(|| CliError::Usage("--duration needs --label for the sounding rate".into()))?;
            let rate = *ckpt
                .header
                .sounding_rates
                .get(label)
                .ok_or_else(|| CliError::Data(format!("no sounding rate for `{label}` in the checkpoint")))?;
            Stretch::Duration { rate, duration_sec }
        }
        (None, None) => Stretch::None,
    };
    let out = synthesize(&ckpt, &s.text, stretch, &event, false)?;
    let iters = s.griffin_lim_iters.unwrap_or(ckpt.header.dsp.griffin_lim_iters);
    let wave = griffin_lim(&out.mel, iters);
    write_wav(&s.out, &wave)?;
    if let Some(p) = &s.mel_out {
        out.mel.save(p)?;
    }
    println!(
        "tokens={} frames={} seconds={:.3} durations={:?} -> {}",
        out.durations.len(),
        out.mel.n_frames(),
        wave.duration_sec(),
        out.durations,
        s.out.display()
    );
    Ok(())
}

// eval-repetition

#[derive(Args, Serialize)]
pub struct EvalRepetitionArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Checkpoint trained with augmentation
    #[arg(long)]
    aug_ckpt: Option<PathBuf>,
    /// Checkpoint trained without augmentation
    #[arg(long)]
    noaug_ckpt: Option<PathBuf>,
    /// Repetition level [default: word]
    #[arg(long, value_parser = ["word", "char"])]
    level: Option<String>,
    /// Repeat counts [default: 0-4 for word, 0-10 for char]
    #[arg(long, value_delimiter = ',')]
    counts: Option<Vec<usize>>,
    /// Input as TEXT:LABEL, repeatable [default: single-nucleus words of the toy classes]
    #[arg(long = "input")]
    inputs: Option<Vec<String>>,
    /// Output CSV; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Nats above the silent-frame energy that count as sound [default: 3.0]
    #[arg(long)]
    margin_nats: Option<f64>,
    /// Accepted for uniformity; evaluation is deterministic [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct EvalRepetitionSettings {
    aug_ckpt: PathBuf,
    #[serde(default)]
    noaug_ckpt: Option<PathBuf>,
    #[serde(default = "word_level")]
    level: RepetitionLevel,
    #[serde(default)]
    counts: Option<Vec<usize>>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "margin")]
    margin_nats: f64,
    #[serde(default)]
    seed: u64,
}

fn word_level() -> RepetitionLevel {
    RepetitionLevel::Word
}

fn margin() -> f64 {
    DurationConfig::default().margin_nats
}

fn toy_inputs(shape: BaseShape) -> impl FnOnce() -> Vec<EvalInput> {
    move || base_inputs(&GeneratorSpec::desk(1), shape)
}

pub fn eval_repetition(args: EvalRepetitionArgs) -> Result<()> {
    let Some(s) = resolve::<EvalRepetitionSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let inputs = parse_inputs(&s.inputs, toy_inputs(BaseShape::Single))?;
    let aug = load_ckpt(&s.aug_ckpt)?;
    let noaug = s.noaug_ckpt.as_deref().map(load_ckpt).transpose()?;
    let mut systems = vec![("aug", &aug)];
    if let Some(n) = &noaug {
        systems.push(("noaug", n));
    }
    let counts = s.counts.clone().unwrap_or_else(|| s.level.default_counts());
    let config = DurationConfig {
        margin_nats: s.margin_nats,
    };
    let table = run_repetition_experiment(&systems, &inputs, s.level, &counts, &config)?;
    write_output(s.out.as_deref(), &table.to_csv())
}

// eval-stretch

#[derive(Args, Serialize)]
pub struct EvalStretchArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Checkpoint file
    #[arg(long)]
    ckpt: Option<PathBuf>,
    /// Stretch ratios [default: 0.5,1.0,1.5,2.0]
    #[arg(long, value_delimiter = ',')]
    ratios: Option<Vec<f64>>,
    /// Input as TEXT:LABEL, repeatable [default: typical words of the toy classes]
    #[arg(long = "input")]
    inputs: Option<Vec<String>>,
    /// Output CSV; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Nats above the silent-frame energy that count as sound [default: 3.0]
    #[arg(long)]
    margin_nats: Option<f64>,
    /// Accepted for uniformity; evaluation is deterministic [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct EvalStretchSettings {
    ckpt: PathBuf,
    #[serde(default = "ratios")]
    ratios: Vec<f64>,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default = "margin")]
    margin_nats: f64,
    #[serde(default)]
    seed: u64,
}

fn ratios() -> Vec<f64> {
    DEFAULT_RATIOS.to_vec()
}

pub fn eval_stretch(args: EvalStretchArgs) -> Result<()> {
    let Some(s) = resolve::<EvalStretchSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let inputs = parse_inputs(&s.inputs, toy_inputs(BaseShape::Typical))?;
    let ckpt = load_ckpt(&s.ckpt)?;
    let config = DurationConfig {
        margin_nats: s.margin_nats,
    };
    let table = run_stretch_experiment(&ckpt, &inputs, &s.ratios, &config)?;
    write_output(s.out.as_deref(), &table.to_csv())
}

// eval-diversity

#[derive(Args, Serialize)]
pub struct EvalDiversityArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Checkpoint conditioned on event images
    #[arg(long)]
    image_ckpt: Option<PathBuf>,
    /// Checkpoint conditioned on event labels
    #[arg(long)]
    label_ckpt: Option<PathBuf>,
    /// Manifest whose records supply the event images
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Distinct event images per class [default: 10]
    #[arg(long)]
    images_per_class: Option<usize>,
    /// Input as TEXT:LABEL, repeatable [default: typical words of the toy classes]
    #[arg(long = "input")]
    inputs: Option<Vec<String>>,
    /// Summary CSV; standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Per-pair distances CSV
    #[arg(long)]
    pairs_out: Option<PathBuf>,
    /// Accepted for uniformity; evaluation is deterministic [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct EvalDiversitySettings {
    image_ckpt: PathBuf,
    label_ckpt: PathBuf,
    manifest: PathBuf,
    #[serde(default = "ten")]
    images_per_class: usize,
    #[serde(default)]
    inputs: Vec<String>,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    pairs_out: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

fn ten() -> usize {
    10
}

pub fn eval_diversity(args: EvalDiversityArgs) -> Result<()> {
    let Some(s) = resolve::<EvalDiversitySettings>(&args.common, &args)? else {
        return Ok(());
    };
    let inputs = parse_inputs(&s.inputs, toy_inputs(BaseShape::Typical))?;
    let manifest = load_manifest(&s.manifest)?;
    let mut cases = Vec::new();
    for label in manifest.labels() {
        let texts: Vec<String> = inputs.iter().filter(|i| i.label == label).map(|i| i.text.clone()).collect();
        if texts.is_empty() {
            continue;
        }
        let images: Vec<PathBuf> = manifest
            .records
            .iter()
            .filter(|r| r.event_label == label)
            .map(|r| manifest.event_image_path(r))
            .filter(|p| p.is_file())
            .take(s.images_per_class)
            .collect();
        if images.len() < 2 {
            return Err(CliError::Data(format!("class `{label}` has {} event images, need 2", images.len())));
        }
        cases.push(DiversityCase { label, texts, images });
    }
    if cases.is_empty() {
        return Err(CliError::Usage("no input label matches a manifest class".into()));
    }
    let (summary, pairs) = run_diversity_experiment(&load_ckpt(&s.image_ckpt)?, &load_ckpt(&s.label_ckpt)?, &cases)?;
    if let Some(p) = &s.pairs_out {
        write_output(Some(p), &pairs.to_csv())?;
    }
    write_output(s.out.as_deref(), &summary.to_csv())
}

// grad-check

#[derive(Args, Serialize)]
pub struct GradCheckArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Manifest supplying the checked utterance
    #[arg(long)]
    manifest: Option<PathBuf>,
    /// Model and analysis sizes [default: desk]
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Record id; the shortest record when absent
    #[arg(long)]
    record: Option<String>,
    /// Parameters sampled [default: 100]
    #[arg(long)]
    samples: Option<usize>,
    /// Central-difference step [default: 1e-4]
    #[arg(long)]
    eps: Option<f64>,
    /// Largest accepted relative error [default: 1e-4]
    #[arg(long)]
    tolerance: Option<f64>,
    /// Initialisation and sampling seed [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct GradCheckSettings {
    manifest: PathBuf,
    #[serde(default = "desk")]
    preset: Preset,
    #[serde(default)]
    model: Option<ModelConfig>,
    #[serde(default)]
    dsp: Option<DspConfig>,
    #[serde(default)]
    record: Option<String>,
    #[serde(default = "hundred")]
    samples: usize,
    #[serde(default = "small")]
    eps: f64,
    #[serde(default = "small")]
    tolerance: f64,
    #[serde(default)]
    seed: u64,
}

fn desk() -> Preset {
    Preset::Desk
}
fn hundred() -> usize {
    100
}
fn small() -> f64 {
    1e-4
}

pub fn grad_check(args: GradCheckArgs) -> Result<()> {
    let Some(s) = resolve::<GradCheckSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let manifest = load_manifest(&s.manifest)?;
    let labels = manifest.labels();
    let dsp = s.dsp.clone().unwrap_or_else(|| s.preset.dsp(manifest.sample_rate));
    let mut model = s.model.clone().unwrap_or_else(|| s.preset.model());
    model.n_labels = labels.len();
    model.n_mels = dsp.n_mels;
    let config = TrainConfig {
        seed: s.seed,
        min_confidence: 0,
        ..TrainConfig::default()
    };
    let items = prepare_dataset(&manifest, &model, &dsp, &config, &labels)?;
    let item = match &s.record {
        Some(id) => items
            .iter()
            .find(|i| &i.id == id)
            .ok_or_else(|| CliError::Data(format!("record `{id}` not in the manifest")))?,
        None => items
            .iter()
            .min_by_key(|i| i.target_mel.rows())
            .ok_or_else(|| CliError::Data("manifest has no records".into()))?,
    };
    let params = ModelParams::init(&model, s.seed)?;
    let report = gradient_check(&params, &model, item, s.samples, s.eps, s.seed)?;
    println!(
        "record={} checked={} max_rel_error={:.3e} worst={} analytic={:.6e} numeric={:.6e}",
        item.id, report.checked, report.max_rel_error, report.worst_param, report.analytic, report.numeric
    );
    if report.max_rel_error >= s.tolerance {
        return Err(CliError::Numeric(format!(
            "max relative error {:.3e} exceeds {:.1e}",
            report.max_rel_error, s.tolerance
        )));
    }
    Ok(())
}

// plotdata

#[derive(Args, Serialize)]
pub struct PlotdataArgs {
    #[command(flatten)]
    #[serde(skip)]
    common: Common,
    /// Experiment CSV written by an eval-* command
    #[arg(long)]
    input: Option<PathBuf>,
    /// Long-format CSV (series,x,y); standard output when absent
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accepted for uniformity [default: 0]
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Serialize, Deserialize)]
struct PlotdataSettings {
    input: PathBuf,
    #[serde(default)]
    out: Option<PathBuf>,
    #[serde(default)]
    seed: u64,
}

pub fn plotdata(args: PlotdataArgs) -> Result<()> {
    let Some(s) = resolve::<PlotdataSettings>(&args.common, &args)? else {
        return Ok(());
    };
    let text = std::fs::read_to_string(&s.input).map_err(io_err(&s.input))?;
    let table = Table::parse(&text)?;
    write_output(s.out.as_deref(), &to_long_format(&table)?)
}
