//! Hermetic synthetic corpus: analytic per-character signal segments, so
//! the written alignments are exact by construction.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{CharAlignment, CorpusError, CorpusManifest, OnomatopoeiaRecord, Span};
use crate::dsp::{self, Wave};
use crate::pgm;
use crate::tensor::Tensor;

/// Tone-plus-noise signal recipe of one event class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Recipe {
    pub freq_hz: f64,
    /// Number of harmonics including the fundamental.
    pub harmonics: usize,
    /// Share of lowpassed noise in sustained segments, 0..1.
    pub noise: f64,
}

/// Onomatopoeia shape: a word made of an onset, a run of one nucleus
/// character and a coda, itself repeated `min_words..=max_words` times.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TextTemplate {
    pub onsets: Vec<String>,
    pub nuclei: Vec<char>,
    pub codas: Vec<String>,
    pub min_repeat: usize,
    pub max_repeat: usize,
    #[serde(default = "one")]
    pub min_words: usize,
    #[serde(default = "one")]
    pub max_words: usize,
}

fn one() -> usize {
    1
}

/// Timbre variant within a class (e.g. metal vs wood bat).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub pitch: f64,
    pub brightness: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassSpec {
    pub label: String,
    pub samples: usize,
    pub recipe: Recipe,
    pub template: TextTemplate,
    /// Duration at the middle of the nucleus-count range.
    pub duration_sec: f64,
    /// Uniform relative jitter on duration.
    #[serde(default)]
    pub duration_jitter: f64,
    /// 0: duration independent of the nucleus count (run length times
    /// words); 1: proportional to it.
    #[serde(default)]
    pub length_coupling: f64,
    #[serde(default)]
    pub variants: Vec<Variant>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageStyle {
    pub size: usize,
    pub noise: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    pub sample_rate: u32,
    pub classes: Vec<ClassSpec>,
    /// Per-record event images written next to the audio as `<id>.pgm`.
    #[serde(default)]
    pub images: Option<ImageStyle>,
    /// Relative weights of confidence scores 1..=5.
    #[serde(default = "default_confidence_weights")]
    pub confidence_weights: [f64; 5],
}

fn default_confidence_weights() -> [f64; 5] {
    [0.05, 0.1, 0.25, 0.3, 0.3]
}

fn variant(name: &str, pitch: f64, brightness: f64) -> Variant {
    Variant {
        name: name.into(),
        pitch,
        brightness,
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

impl GeneratorSpec {
    /// Four event classes, `per_class` utterances each, 8 kHz, with images.
    pub fn desk(per_class: usize) -> Self {
        let class = |label: &str, recipe: Recipe, template: TextTemplate, dur: f64, variants: Vec<Variant>| ClassSpec {
            label: label.into(),
            samples: per_class,
            recipe,
            template,
            duration_sec: dur,
            duration_jitter: 0.25,
            length_coupling: 0.2,
            variants,
        };
        Self {
            sample_rate: 8000,
            classes: vec![
                class(
                    "bell",
                    Recipe { freq_hz: 880.0, harmonics: 3, noise: 0.02 },
                    TextTemplate { onsets: strings(&["k", "ch"]), nuclei: vec!['a', 'i'], codas: strings(&["n"]), min_repeat: 1, max_repeat: 5, min_words: 1, max_words: 3 },
                    0.8,
                    vec![variant("brass", 1.0, 0.5), variant("steel", 1.26, 0.8), variant("glass", 1.5, 0.3)],
                ),
                class(
                    "drum",
                    Recipe { freq_hz: 150.0, harmonics: 2, noise: 0.5 },
                    TextTemplate { onsets: strings(&["d", "t"]), nuclei: vec!['o', 'u'], codas: strings(&["n", "ng"]), min_repeat: 1, max_repeat: 4, min_words: 1, max_words: 3 },
                    0.6,
                    vec![variant("snare", 1.3, 0.9), variant("tom", 0.8, 0.4), variant("kick", 0.6, 0.2)],
                ),
                class(
                    "whistle",
                    Recipe { freq_hz: 1800.0, harmonics: 1, noise: 0.05 },
                    TextTemplate { onsets: strings(&["p", "h"]), nuclei: vec!['i', 'e'], codas: strings(&["", "t"]), min_repeat: 2, max_repeat: 5, min_words: 1, max_words: 2 },
                    1.0,
                    vec![variant("tin", 1.1, 0.6), variant("referee", 1.0, 0.3), variant("slide", 0.85, 0.5)],
                ),
                class(
                    "bat",
                    Recipe { freq_hz: 520.0, harmonics: 4, noise: 0.3 },
                    TextTemplate { onsets: strings(&["k", "g", "b"]), nuclei: vec!['a', 'o'], codas: strings(&["n", "ng"]), min_repeat: 1, max_repeat: 4, min_words: 1, max_words: 2 },
                    0.5,
                    vec![variant("metal", 1.4, 0.9), variant("wood", 0.9, 0.4), variant("plastic", 0.7, 0.2)],
                ),
            ],
            images: Some(ImageStyle { size: 32, noise: 0.1 }),
            confidence_weights: default_confidence_weights(),
        }
    }
}

#[derive(Clone, Copy, PartialEq)]
enum Part {
    Onset,
    Nucleus,
    Coda,
}

impl Part {
    fn weight(self) -> f64 {
        match self {
            Part::Onset => 0.6,
            Part::Nucleus => 1.0,
            Part::Coda => 1.4,
        }
    }
}

struct Utterance {
    /// Character, part and word index.
    chars: Vec<(char, Part, usize)>,
    duration_sec: f64,
    variant: usize,
}

fn pick<'a, T>(rng: &mut ChaCha8Rng, xs: &'a [T]) -> &'a T {
    &xs[rng.random_range(0..xs.len())]
}

fn draw_utterance(class: &ClassSpec, rng: &mut ChaCha8Rng) -> Utterance {
    let t = &class.template;
    let onset = pick(rng, &t.onsets).clone();
    let nucleus = *pick(rng, &t.nuclei);
    let coda = pick(rng, &t.codas).clone();
    let repeats = rng.random_range(t.min_repeat..=t.max_repeat);
    let (min_w, max_w) = (t.min_words.max(1), t.max_words.max(t.min_words.max(1)));
    let words = rng.random_range(min_w..=max_w);
    let mut chars = Vec::new();
    for w in 0..words {
        chars.extend(onset.chars().map(|c| (c, Part::Onset, w)));
        chars.extend(std::iter::repeat_n((nucleus, Part::Nucleus, w), repeats));
        chars.extend(coda.chars().map(|c| (c, Part::Coda, w)));
    }

    let units = (repeats * words) as f64;
    let mid = (t.min_repeat * min_w + t.max_repeat * max_w) as f64 / 2.0;
    let coupling = 1.0 + class.length_coupling * (units - mid) / mid.max(1.0);
    let jitter = if class.duration_jitter > 0.0 {
        1.0 + rng.random_range(-class.duration_jitter..=class.duration_jitter)
    } else {
        1.0
    };
    let variant = if class.variants.is_empty() {
        0
    } else {
        rng.random_range(0..class.variants.len())
    };
    Utterance {
        chars,
        duration_sec: class.duration_sec * coupling * jitter,
        variant,
    }
}

/// Renders the waveform and its exact alignment.
fn render(class: &ClassSpec, utt: &Utterance, sample_rate: u32, rng: &mut ChaCha8Rng) -> (Vec<f32>, CharAlignment) {
    let sr = sample_rate as f64;
    let total = (utt.duration_sec * sr).round().max(utt.chars.len() as f64) as usize;
    let weight_sum: f64 = utt.chars.iter().map(|(_, p, _)| p.weight()).sum();
    let mut bounds = vec![0usize];
    let mut acc = 0.0;
    for (i, (_, p, _)) in utt.chars.iter().enumerate() {
        acc += p.weight();
        let b = if i + 1 == utt.chars.len() {
            total
        } else {
            ((acc / weight_sum) * total as f64).round() as usize
        };
        bounds.push(b.max(bounds[i] + 1));
    }

    let (pitch, brightness) = class
        .variants
        .get(utt.variant)
        .map_or((1.0, 0.5), |v| (v.pitch, v.brightness));
    let freq = class.recipe.freq_hz * pitch;
    let harmonics = class.recipe.harmonics.max(1);
    // Coda decay runs from the coda start to the end of its word.
    let words = utt.chars.last().map_or(0, |c| c.2 + 1);
    let word_end: Vec<usize> = (0..words)
        .map(|w| bounds[utt.chars.iter().rposition(|c| c.2 == w).expect("word has characters") + 1])
        .collect();
    let coda_start: Vec<usize> = (0..words)
        .map(|w| {
            utt.chars
                .iter()
                .position(|c| c.2 == w && c.1 == Part::Coda)
                .map_or(word_end[w], |i| bounds[i])
        })
        .collect();

    let mut samples = Vec::with_capacity(total);
    let mut lowpassed = 0.0;
    for (i, (_, part, word)) in utt.chars.iter().enumerate() {
        let (start, end) = (bounds[i], bounds[i + 1]);
        let (cs, we) = (coda_start[*word], word_end[*word]);
        for n in start..end {
            let t = n as f64 / sr;
            let mut tone = 0.0;
            let mut norm = 0.0;
            for h in 1..=harmonics {
                let amp = brightness.powi(h as i32 - 1) / h as f64;
                if freq * h as f64 >= sr / 2.0 {
                    break;
                }
                tone += amp * (2.0 * PI * freq * h as f64 * t).sin();
                norm += amp;
            }
            tone /= norm;
            let white: f64 = rng.random_range(-1.0..1.0);
            lowpassed = 0.7 * lowpassed + 0.3 * white;
            let progress = (n - start) as f64 / (end - start) as f64;
            let value = match part {
                Part::Onset => {
                    let env = 0.3 + 0.5 * progress;
                    env * (0.5 * tone + 0.5 * white)
                }
                Part::Nucleus => {
                    let noise = class.recipe.noise;
                    0.6 * ((1.0 - noise) * tone + noise * lowpassed * 2.0)
                }
                Part::Coda => {
                    let tail = (n - cs) as f64 / (we - cs).max(1) as f64;
                    let env = 0.5 * (0.1f64).powf(tail);
                    env * tone
                }
            };
            samples.push(value.clamp(-0.95, 0.95) as f32);
        }
    }
    let spans = utt
        .chars
        .iter()
        .enumerate()
        .map(|(i, (c, _, _))| Span::new(*c, bounds[i] as f64 / sr, bounds[i + 1] as f64 / sr))
        .collect();
    (samples, CharAlignment::new(spans))
}

/// Class stripes with a variant-dependent bright quadrant, plus noise.
fn render_image(style: &ImageStyle, class_index: usize, variant: usize, brightness: f64, rng: &mut ChaCha8Rng) -> Tensor<f32> {
    let size = style.size;
    let period = 2 + class_index;
    let shift = rng.random_range(0..period * 2);
    let half = size / 2;
    let (qy, qx) = ((variant / 2) % 2, variant % 2);
    let vertical = variant >= 2;
    let mut img = Tensor::zeros(size, size);
    for y in 0..size {
        for x in 0..size {
            let mut v = 0.15;
            let coord = if vertical { x } else { y };
            if ((coord + shift) / period) % 2 == 0 {
                v += 0.25;
            }
            if y / half.max(1) == qy && x / half.max(1) == qx {
                v += 0.2 + 0.3 * brightness;
            }
            v += rng.random_range(-style.noise..=style.noise);
            img.set(y, x, v.clamp(0.0, 1.0) as f32);
        }
    }
    img
}

fn draw_confidence(weights: &[f64; 5], rng: &mut ChaCha8Rng) -> u8 {
    let total: f64 = weights.iter().sum();
    let mut u = rng.random_range(0.0..total);
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i as u8 + 1;
        }
        u -= w;
    }
    5
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CorpusError> {
    std::fs::write(path, bytes).map_err(|e| CorpusError::io(path, e))
}

/// Writes `manifest.tsv`, `audio/<id>.wav`, `audio/<id>.pgm` (when images
/// are enabled) and `align/<id>.lab` under `out_dir`. The same `(spec,
/// seed)` always produces byte-identical files.
pub fn generate_synthetic_corpus(spec: &GeneratorSpec, seed: u64, out_dir: &Path) -> Result<CorpusManifest, CorpusError> {
    for sub in ["audio", "align"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| CorpusError::io(&d, e))?;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut durations = HashMap::new();
    for (class_index, class) in spec.classes.iter().enumerate() {
        for i in 0..class.samples {
            let id = format!("{}_{i:03}", class.label);
            let utt = draw_utterance(class, &mut rng);
            let (samples, alignment) = render(class, &utt, spec.sample_rate, &mut rng);
            let wave = Wave::new(spec.sample_rate, samples);
            let audio_rel = PathBuf::from(format!("audio/{id}.wav"));
            let align_rel = PathBuf::from(format!("align/{id}.lab"));
            write_file(&out_dir.join(&audio_rel), &dsp::encode_wav(&wave))?;
            write_file(&out_dir.join(&align_rel), alignment.to_lab().as_bytes())?;
            if let Some(style) = &spec.images {
                let brightness = class.variants.get(utt.variant).map_or(0.5, |v| v.brightness);
                let img = render_image(style, class_index, utt.variant, brightness, &mut rng);
                write_file(&out_dir.join(audio_rel.with_extension("pgm")), &pgm::encode_pgm(&img))?;
            }
            durations.insert(id.clone(), wave.duration_sec());
            records.push(OnomatopoeiaRecord {
                id,
                text: utt.chars.iter().map(|(c, _, _)| *c).collect(),
                audio_path: audio_rel,
                event_label: class.label.clone(),
                confidence: draw_confidence(&spec.confidence_weights, &mut rng),
                alignment_path: Some(align_rel),
            });
        }
    }
    let mut manifest = CorpusManifest::from_records(records, durations, spec.sample_rate, out_dir.to_path_buf())?;
    manifest.comments.push(format!(" synthetic corpus seed={seed}"));
    manifest.write(&out_dir.join("manifest.tsv"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::load_manifest;

    fn bell_spec() -> GeneratorSpec {
        GeneratorSpec {
            sample_rate: 8000,
            classes: vec![ClassSpec {
                label: "bell".into(),
                samples: 1,
                recipe: Recipe { freq_hz: 880.0, harmonics: 2, noise: 0.0 },
                template: TextTemplate {
                    onsets: vec!["k".into()],
                    nuclei: vec!['a'],
                    codas: vec!["n".into()],
                    min_repeat: 2,
                    max_repeat: 2,
                    min_words: 1,
                    max_words: 1,
                },
                duration_sec: 1.0,
                duration_jitter: 0.0,
                length_coupling: 0.0,
                variants: vec![],
            }],
            images: None,
            confidence_weights: default_confidence_weights(),
        }
    }

    #[test]
    fn one_class_one_sample() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(&bell_spec(), 1, dir.path()).unwrap();
        assert_eq!(m.len(), 1);
        let wavs = std::fs::read_dir(dir.path().join("audio")).unwrap().count();
        assert_eq!(wavs, 1);
        let text = std::fs::read_to_string(dir.path().join("manifest.tsv")).unwrap();
        assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1);
        // "kaan", 4 characters over exactly one second
        assert_eq!(m.records[0].text, "kaan");
        assert_eq!(m.sounding_rate("bell"), Some(4.0));
    }

    #[test]
    fn alignments_tile_the_audio_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let m = generate_synthetic_corpus(&GeneratorSpec::desk(3), 5, dir.path()).unwrap();
        let loaded = load_manifest(&dir.path().join("manifest.tsv")).unwrap();
        for r in &loaded.records {
            let a = loaded.load_alignment(r).unwrap().unwrap();
            let wave = loaded.load_wave(r).unwrap();
            assert_eq!(a.spans[0].start_sec, 0.0);
            assert!((a.end_sec() - wave.duration_sec()).abs() < 1e-9);
            for w in a.spans.windows(2) {
                assert!((w[0].end_sec - w[1].start_sec).abs() < 1e-9);
            }
            assert!(dir.path().join(r.audio_path.with_extension("pgm")).is_file());
        }
        assert_eq!(loaded.records, m.records);
    }
}
