//! Repetition augmentation of (text, waveform, alignment) triples: whole
//! word duplication and duplication of the middle character of a run.
//!
//! All arithmetic is in samples; nothing is resampled.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{text_chars, CharAlignment, CorpusError, CorpusManifest, OnomatopoeiaRecord, Span};
use crate::dsp::{self, Wave};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("run {0:?} does not occur in {1:?}")]
    RunNotFound(CharRun, String),
    #[error("record `{0}` has no alignment")]
    NoAlignment(String),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
}

/// A record with its audio and alignment loaded.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioRecord {
    pub record: OnomatopoeiaRecord,
    pub wave: Wave,
    pub alignment: CharAlignment,
}

impl AudioRecord {
    pub fn load(manifest: &CorpusManifest, record: &OnomatopoeiaRecord) -> Result<Self, AugmentError> {
        let alignment = manifest
            .load_alignment(record)?
            .ok_or_else(|| AugmentError::NoAlignment(record.id.clone()))?;
        Ok(Self {
            record: record.clone(),
            wave: manifest.load_wave(record)?,
            alignment,
        })
    }
}

/// Identical characters at `start..start + length` of the character list.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CharRun {
    pub ch: char,
    pub start: usize,
    pub length: usize,
}

impl CharRun {
    /// Index of the duplicated occurrence: `start + floor(length / 2)`.
    pub fn middle(&self) -> usize {
        self.start + self.length / 2
    }

    fn occurs_in(&self, chars: &[char]) -> bool {
        self.length > 0
            && self.start + self.length <= chars.len()
            && chars[self.start..self.start + self.length].iter().all(|&c| c == self.ch)
    }
}

/// Maximal runs of one repeated character with at least `min_len` members.
pub fn find_char_runs(text: &str, min_len: usize) -> Vec<CharRun> {
    let chars = text_chars(text);
    let mut runs = Vec::new();
    let mut i = 0;
    while i < chars.len() {
        let mut j = i + 1;
        while j < chars.len() && chars[j] == chars[i] {
            j += 1;
        }
        if j - i >= min_len.max(1) {
            runs.push(CharRun {
                ch: chars[i],
                start: i,
                length: j - i,
            });
        }
        i = j;
    }
    runs
}

/// Text repeated `k + 1` times, waveform concatenated with no gap and
/// alignment copied with one original duration of offset per copy.
pub fn repeat_word(item: &AudioRecord, k: usize) -> AudioRecord {
    let dur = item.wave.duration_sec();
    let mut samples = Vec::with_capacity(item.wave.samples.len() * (k + 1));
    let mut spans = Vec::with_capacity(item.alignment.len() * (k + 1));
    for copy in 0..=k {
        samples.extend_from_slice(&item.wave.samples);
        spans.extend(item.alignment.shifted(copy as f64 * dur).spans);
    }
    AudioRecord {
        record: OnomatopoeiaRecord {
            text: item.record.text.repeat(k + 1),
            ..item.record.clone()
        },
        wave: Wave::new(item.wave.sample_rate, samples),
        alignment: CharAlignment::new(spans),
    }
}

const CROSSFADE_SEC: f64 = 0.005;

/// Inserts `r` copies of the middle character's waveform segment right
/// after it. The output is exactly `r * segment` samples longer. With
/// `crossfade`, the first 5 ms of each copy fade in from the signal that
/// originally followed the segment; the length is unchanged.
pub fn repeat_char(item: &AudioRecord, run: &CharRun, r: usize, crossfade: bool) -> Result<AudioRecord, AugmentError> {
    let chars = text_chars(&item.record.text);
    if !run.occurs_in(&chars) {
        return Err(AugmentError::RunNotFound(*run, item.record.text.clone()));
    }
    if r == 0 {
        return Ok(item.clone());
    }
    let m = run.middle();
    let span = &item.alignment.spans[m];
    let sr = item.wave.sample_rate as f64;
    let src = &item.wave.samples;
    let s0 = ((span.start_sec * sr).round() as usize).min(src.len());
    let s1 = ((span.end_sec * sr).round() as usize).clamp(s0, src.len());
    let segment = &src[s0..s1];
    let seg_sec = segment.len() as f64 / sr;

    let mut samples = Vec::with_capacity(src.len() + r * segment.len());
    samples.extend_from_slice(&src[..s1]);
    for _ in 0..r {
        let at = samples.len();
        samples.extend_from_slice(segment);
        if crossfade {
            let n = ((CROSSFADE_SEC * sr) as usize).min(segment.len());
            for i in 0..n {
                let follow = src.get(s1 + i).copied().unwrap_or(0.0);
                let w = i as f32 / n as f32;
                samples[at + i] = w * samples[at + i] + (1.0 - w) * follow;
            }
        }
    }
    samples.extend_from_slice(&src[s1..]);

    let mut spans: Vec<Span> = item.alignment.spans[..=m].to_vec();
    for j in 0..r {
        let start = span.end_sec + j as f64 * seg_sec;
        spans.push(Span::new(run.ch, start, start + seg_sec));
    }
    spans.extend(item.alignment.spans[m + 1..].iter().map(|s| {
        Span::new(s.ch, s.start_sec + r as f64 * seg_sec, s.end_sec + r as f64 * seg_sec)
    }));
    let mut text = chars.clone();
    text.splice(m + 1..m + 1, std::iter::repeat_n(run.ch, r));
    Ok(AudioRecord {
        record: OnomatopoeiaRecord {
            text: text.into_iter().collect(),
            ..item.record.clone()
        },
        wave: Wave::new(item.wave.sample_rate, samples),
        alignment: CharAlignment::new(spans),
    })
}

/// Text-only counterpart of `repeat_char`, for building inference inputs.
pub fn repeat_char_text(text: &str, run: &CharRun, r: usize) -> Result<String, AugmentError> {
    let mut chars = text_chars(text);
    if !run.occurs_in(&chars) {
        return Err(AugmentError::RunNotFound(*run, text.to_string()));
    }
    let m = run.middle();
    chars.splice(m + 1..m + 1, std::iter::repeat_n(run.ch, r));
    Ok(chars.into_iter().collect())
}

/// Characters inside runs of three or more, weighted by run length.
pub fn run_char_mass<'a>(texts: impl IntoIterator<Item = &'a str>) -> BTreeMap<char, usize> {
    let mut mass = BTreeMap::new();
    for t in texts {
        for run in find_char_runs(t, 3) {
            *mass.entry(run.ch).or_default() += run.length;
        }
    }
    mass
}

/// Smallest most-frequent prefix of run characters that covers at least
/// `coverage` of the run mass. Ties go to the lower codepoint.
pub fn select_from_mass(mass: &BTreeMap<char, usize>, coverage: f64) -> Vec<char> {
    let total: usize = mass.values().sum();
    let mut ranked: Vec<(char, usize)> = mass.iter().map(|(&c, &n)| (c, n)).collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let mut out = Vec::new();
    let mut acc = 0;
    for (c, n) in ranked {
        if total > 0 && acc as f64 >= coverage * total as f64 {
            break;
        }
        out.push(c);
        acc += n;
    }
    out
}

pub fn select_augmentable_chars(manifest: &CorpusManifest, coverage: f64) -> Vec<char> {
    select_from_mass(&run_char_mass(manifest.records.iter().map(|r| r.text.as_str())), coverage)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WordPolicy {
    pub min_repeat: usize,
    pub max_repeat: usize,
    pub max_chars: usize,
}

impl Default for WordPolicy {
    fn default() -> Self {
        Self {
            min_repeat: 1,
            max_repeat: 2,
            max_chars: 7,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CharPolicy {
    pub min_insert: usize,
    pub max_insert: usize,
    /// Explicit character set; empty means select by `coverage`.
    #[serde(default)]
    pub chars: Vec<char>,
    pub coverage: f64,
    /// Distinct insert counts drawn per eligible run.
    pub variants_per_run: usize,
    #[serde(default)]
    pub crossfade: bool,
}

impl Default for CharPolicy {
    fn default() -> Self {
        Self {
            min_insert: 1,
            max_insert: 5,
            chars: Vec::new(),
            coverage: 0.9,
            variants_per_run: 1,
            crossfade: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub word: Option<WordPolicy>,
    pub char: Option<CharPolicy>,
}

impl AugmentPolicy {
    pub fn word_only() -> Self {
        Self {
            word: Some(WordPolicy::default()),
            char: None,
        }
    }

    pub fn char_only() -> Self {
        Self {
            word: None,
            char: Some(CharPolicy::default()),
        }
    }

    pub fn both() -> Self {
        Self {
            word: Some(WordPolicy::default()),
            char: Some(CharPolicy::default()),
        }
    }
}

fn emit(out_dir: &Path, item: &AudioRecord, id: String, image: Option<&Path>) -> Result<(OnomatopoeiaRecord, f64), AugmentError> {
    let audio_rel = PathBuf::from(format!("audio/{id}.wav"));
    let align_rel = PathBuf::from(format!("align/{id}.lab"));
    dsp::write_wav(&out_dir.join(&audio_rel), &item.wave).map_err(CorpusError::from)?;
    item.alignment.save(&out_dir.join(&align_rel))?;
    if let Some(img) = image {
        let dst = out_dir.join(audio_rel.with_extension("pgm"));
        std::fs::copy(img, &dst).map_err(|e| CorpusError::io(&dst, e))?;
    }
    Ok((
        OnomatopoeiaRecord {
            id,
            audio_path: audio_rel,
            alignment_path: Some(align_rel),
            ..item.record.clone()
        },
        item.wave.duration_sec(),
    ))
}

/// Writes every original record plus its augmented variants (ids
/// `<id>#w<k>` and `<id>#c<run>x<r>`) under `out_dir` and returns the new
/// manifest, also written to `out_dir/manifest.tsv`. Source files are only
/// read.
pub fn augment_manifest(
    manifest: &CorpusManifest,
    policy: &AugmentPolicy,
    seed: u64,
    out_dir: &Path,
) -> Result<CorpusManifest, AugmentError> {
    for sub in ["audio", "align"] {
        let d = out_dir.join(sub);
        std::fs::create_dir_all(&d).map_err(|e| CorpusError::io(&d, e))?;
    }
    let selected = match &policy.char {
        Some(c) if c.chars.is_empty() => select_augmentable_chars(manifest, c.coverage),
        Some(c) => c.chars.clone(),
        None => Vec::new(),
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::new();
    let mut durations = std::collections::HashMap::new();
    for rec in &manifest.records {
        let item = AudioRecord::load(manifest, rec)?;
        let image = manifest.event_image_path(rec);
        let image = image.is_file().then_some(image.as_path());
        let mut push = |item: &AudioRecord, id: String| -> Result<(), AugmentError> {
            let (r, d) = emit(out_dir, item, id, image)?;
            durations.insert(r.id.clone(), d);
            records.push(r);
            Ok(())
        };
        push(&item, rec.id.clone())?;
        if let Some(w) = &policy.word {
            if rec.char_count() <= w.max_chars {
                for k in w.min_repeat..=w.max_repeat {
                    push(&repeat_word(&item, k), format!("{}#w{k}", rec.id))?;
                }
            }
        }
        if let Some(c) = &policy.char {
            let span = c.max_insert + 1 - c.min_insert.min(c.max_insert + 1);
            for (run_index, run) in find_char_runs(&rec.text, 3).iter().enumerate() {
                if !selected.contains(&run.ch) || span == 0 {
                    continue;
                }
                let mut picks: Vec<usize> = sample(&mut rng, span, c.variants_per_run.min(span))
                    .into_iter()
                    .map(|i| c.min_insert + i)
                    .collect();
                picks.sort_unstable();
                for r in picks {
                    let aug = repeat_char(&item, run, r, c.crossfade)?;
                    push(&aug, format!("{}#c{run_index}x{r}", rec.id))?;
                }
            }
        }
    }
    let mut out = CorpusManifest::from_records(records, durations, manifest.sample_rate, out_dir.to_path_buf())?;
    out.comments = manifest.comments.clone();
    out.comments.push(format!(
        " augment seed={seed} policy={}",
        serde_json::to_string(policy).expect("policy serializes")
    ));
    out.write(&out_dir.join("manifest.tsv"))?;
    Ok(out)
}
