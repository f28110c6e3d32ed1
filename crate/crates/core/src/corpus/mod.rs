//! Corpus data model: manifest parsing, confidence filtering, alignments,
//! per-cluster sounding rates and the synthetic micro-corpus generator.
//!
//! Manifest lines are tab separated:
//!
//! ```text
//! #sr=8000
//! id  audio_path  event_label  confidence  text  [alignment_path]
//! ```
//!
//! Relative paths resolve against the manifest's directory.

mod alignment;
mod synth;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt::Write as _;
use std::io;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::dsp::{self, DspError, Wave};

pub use alignment::{text_chars, uniform_alignment, CharAlignment, Span};
pub use synth::{
    generate_synthetic_corpus, ClassSpec, GeneratorSpec, ImageStyle, Recipe, TextTemplate, Variant,
};

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("line {line}: field `{field}`: {reason}")]
    Parse {
        line: usize,
        field: String,
        reason: String,
    },
    #[error("missing file: {0}")]
    MissingFile(PathBuf),
    #[error("duplicate record id `{0}`")]
    DuplicateId(String),
    #[error("cluster has no records")]
    EmptyCluster,
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("text is empty")]
    EmptyText,
    #[error("invalid alignment: {0}")]
    InvalidAlignment(String),
    #[error("record `{id}` has sample rate {found}, manifest declares {expected}")]
    SampleRateMismatch { id: String, expected: u32, found: u32 },
    #[error("unknown record id `{0}`")]
    UnknownRecord(String),
    #[error("audio: {0}")]
    Audio(#[from] DspError),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl CorpusError {
    pub(crate) fn io(path: &Path, source: io::Error) -> Self {
        Self::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OnomatopoeiaRecord {
    pub id: String,
    pub text: String,
    pub audio_path: PathBuf,
    pub event_label: String,
    /// 1..=5
    pub confidence: u8,
    pub alignment_path: Option<PathBuf>,
}

impl OnomatopoeiaRecord {
    pub fn chars(&self) -> Vec<char> {
        text_chars(&self.text)
    }

    pub fn char_count(&self) -> usize {
        self.chars().len()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SoundEventCluster {
    pub label: String,
    pub records: Vec<String>,
    /// Mean characters per second over member records.
    pub sounding_rate: f64,
}

#[derive(Clone, Debug)]
pub struct CorpusManifest {
    pub records: Vec<OnomatopoeiaRecord>,
    pub clusters: BTreeMap<String, SoundEventCluster>,
    pub sample_rate: u32,
    /// Directory relative paths resolve against.
    pub root: PathBuf,
    /// Free-form `#` comment lines (without the `#`), kept for provenance.
    pub comments: Vec<String>,
    durations: HashMap<String, f64>,
}

/// Arithmetic mean of `chars / duration` over the members of a cluster.
pub fn compute_sounding_rate(members: &[(usize, f64)]) -> Result<f64, CorpusError> {
    if members.is_empty() {
        return Err(CorpusError::EmptyCluster);
    }
    let mut total = 0.0;
    for &(chars, dur) in members {
        if !(dur > 0.0) {
            return Err(CorpusError::NonPositiveDuration(dur));
        }
        total += chars as f64 / dur;
    }
    Ok(total / members.len() as f64)
}

impl CorpusManifest {
    /// Builds clusters from records whose audio durations are known.
    pub fn from_records(
        records: Vec<OnomatopoeiaRecord>,
        durations: HashMap<String, f64>,
        sample_rate: u32,
        root: PathBuf,
    ) -> Result<Self, CorpusError> {
        let mut seen = HashSet::new();
        for r in &records {
            if !seen.insert(r.id.clone()) {
                return Err(CorpusError::DuplicateId(r.id.clone()));
            }
        }
        let mut groups: BTreeMap<String, Vec<&OnomatopoeiaRecord>> = BTreeMap::new();
        for r in &records {
            groups.entry(r.event_label.clone()).or_default().push(r);
        }
        let mut clusters = BTreeMap::new();
        for (label, members) in groups {
            let stats: Vec<(usize, f64)> = members
                .iter()
                .map(|r| {
                    durations
                        .get(&r.id)
                        .map(|&d| (r.char_count(), d))
                        .ok_or_else(|| CorpusError::UnknownRecord(r.id.clone()))
                })
                .collect::<Result<_, _>>()?;
            let sounding_rate = compute_sounding_rate(&stats)?;
            clusters.insert(
                label.clone(),
                SoundEventCluster {
                    label,
                    records: members.iter().map(|r| r.id.clone()).collect(),
                    sounding_rate,
                },
            );
        }
        Ok(Self {
            records,
            clusters,
            sample_rate,
            root,
            comments: Vec::new(),
            durations,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }

    pub fn record(&self, id: &str) -> Option<&OnomatopoeiaRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    pub fn duration_sec(&self, id: &str) -> Option<f64> {
        self.durations.get(id).copied()
    }

    pub fn sounding_rate(&self, label: &str) -> Option<f64> {
        self.clusters.get(label).map(|c| c.sounding_rate)
    }

    pub fn labels(&self) -> Vec<String> {
        self.clusters.keys().cloned().collect()
    }

    pub fn load_wave(&self, record: &OnomatopoeiaRecord) -> Result<Wave, CorpusError> {
        let path = self.resolve(&record.audio_path);
        let wave = dsp::load_wav(&path)?;
        if wave.sample_rate != self.sample_rate {
            return Err(CorpusError::SampleRateMismatch {
                id: record.id.clone(),
                expected: self.sample_rate,
                found: wave.sample_rate,
            });
        }
        Ok(wave)
    }

    /// Sidecar event image: the audio path with a `.pgm` extension.
    pub fn event_image_path(&self, record: &OnomatopoeiaRecord) -> PathBuf {
        self.resolve(&record.audio_path).with_extension("pgm")
    }

    /// Loads and validates the record's alignment file, if it has one.
    pub fn load_alignment(&self, record: &OnomatopoeiaRecord) -> Result<Option<CharAlignment>, CorpusError> {
        let Some(p) = &record.alignment_path else {
            return Ok(None);
        };
        let a = CharAlignment::load(&self.resolve(p))?;
        a.check_text(&record.text)?;
        a.validate(self.duration_sec(&record.id))?;
        Ok(Some(a))
    }

    /// Keeps records with `confidence >= min_score` and rebuilds clusters.
    pub fn filter_by_confidence(&self, min_score: u8) -> CorpusManifest {
        let records: Vec<_> = self
            .records
            .iter()
            .filter(|r| r.confidence >= min_score)
            .cloned()
            .collect();
        let durations = records
            .iter()
            .filter_map(|r| self.durations.get(&r.id).map(|&d| (r.id.clone(), d)))
            .collect();
        let mut out = CorpusManifest::from_records(records, durations, self.sample_rate, self.root.clone())
            .expect("subset of a valid manifest is valid");
        out.comments = self.comments.clone();
        out
    }

    pub fn to_tsv(&self) -> String {
        let mut out = format!("#sr={}\n", self.sample_rate);
        for c in &self.comments {
            let _ = writeln!(out, "#{c}");
        }
        for r in &self.records {
            let _ = write!(
                out,
                "{}\t{}\t{}\t{}\t{}",
                r.id,
                r.audio_path.display(),
                r.event_label,
                r.confidence,
                r.text
            );
            if let Some(a) = &r.alignment_path {
                let _ = write!(out, "\t{}", a.display());
            }
            out.push('\n');
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_tsv()).map_err(|e| CorpusError::io(path, e))
    }
}

fn parse_record(line: &str, line_no: usize) -> Result<OnomatopoeiaRecord, CorpusError> {
    let err = |field: &str, reason: String| CorpusError::Parse {
        line: line_no,
        field: field.to_string(),
        reason,
    };
    let fields: Vec<&str> = line.split('\t').collect();
    if !(5..=6).contains(&fields.len()) {
        return Err(err("line", format!("expected 5 or 6 tab-separated fields, got {}", fields.len())));
    }
    let nonempty = |i: usize, name: &str| {
        if fields[i].is_empty() {
            Err(err(name, "empty".into()))
        } else {
            Ok(fields[i])
        }
    };
    let id = nonempty(0, "id")?;
    let audio = nonempty(1, "audio_path")?;
    let label = nonempty(2, "event_label")?;
    let confidence: u8 = fields[3]
        .parse()
        .map_err(|_| err("confidence", format!("{:?} is not an integer", fields[3])))?;
    if !(1..=5).contains(&confidence) {
        return Err(err("confidence", format!("{confidence} outside 1..=5")));
    }
    let text = nonempty(4, "text")?;
    if text.chars().any(char::is_whitespace) {
        return Err(err("text", "contains whitespace".into()));
    }
    let alignment_path = match fields.get(5) {
        Some(p) if !p.is_empty() => Some(PathBuf::from(p)),
        _ => None,
    };
    Ok(OnomatopoeiaRecord {
        id: id.to_string(),
        text: text.to_string(),
        audio_path: PathBuf::from(audio),
        event_label: label.to_string(),
        confidence,
        alignment_path,
    })
}

/// Parses manifest text without touching the filesystem. Returns the
/// records, the declared sample rate and the comment lines.
pub fn parse_manifest(text: &str) -> Result<(Vec<OnomatopoeiaRecord>, Option<u32>, Vec<String>), CorpusError> {
    let mut records = Vec::new();
    let mut sample_rate = None;
    let mut comments = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some(sr) = comment.strip_prefix("sr=") {
                let sr: u32 = sr.trim().parse().map_err(|_| CorpusError::Parse {
                    line: line_no,
                    field: "sr".into(),
                    reason: format!("{sr:?} is not a sample rate"),
                })?;
                sample_rate = Some(sr);
            } else {
                comments.push(comment.to_string());
            }
            continue;
        }
        let r = parse_record(line, line_no)?;
        if !seen.insert(r.id.clone()) {
            return Err(CorpusError::DuplicateId(r.id));
        }
        records.push(r);
    }
    Ok((records, sample_rate, comments))
}

/// Reads a manifest, checks every referenced file exists, reads audio
/// durations and builds clusters with their sounding rates.
pub fn load_manifest(path: &Path) -> Result<CorpusManifest, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
    let (records, declared_sr, comments) = parse_manifest(&text)?;
    let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
    let resolve = |p: &Path| if p.is_absolute() { p.to_path_buf() } else { root.join(p) };

    let mut sample_rate = declared_sr;
    let mut durations = HashMap::new();
    for r in &records {
        let audio = resolve(&r.audio_path);
        if !audio.is_file() {
            return Err(CorpusError::MissingFile(audio));
        }
        if let Some(a) = &r.alignment_path {
            let a = resolve(a);
            if !a.is_file() {
                return Err(CorpusError::MissingFile(a));
            }
        }
        let wave = dsp::load_wav(&audio)?;
        let expected = *sample_rate.get_or_insert(wave.sample_rate);
        if wave.sample_rate != expected {
            return Err(CorpusError::SampleRateMismatch {
                id: r.id.clone(),
                expected,
                found: wave.sample_rate,
            });
        }
        durations.insert(r.id.clone(), wave.duration_sec());
    }
    let mut manifest = CorpusManifest::from_records(records, durations, sample_rate.unwrap_or(0), root)?;
    manifest.comments = comments;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{write_wav, Wave};
    use proptest::prelude::*;

    fn write_audio(dir: &Path, name: &str, seconds: f64) {
        let n = (seconds * 8000.0).round() as usize;
        write_wav(&dir.join(name), &Wave::new(8000, vec![0.1; n])).unwrap();
    }

    #[test]
    fn empty_manifest_has_no_records() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "").unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.len(), 0);
        assert!(m.clusters.is_empty());
    }

    #[test]
    fn records_with_one_label_share_a_cluster() {
        let dir = tempfile::tempdir().unwrap();
        write_audio(dir.path(), "a.wav", 1.0);
        write_audio(dir.path(), "b.wav", 2.0);
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "#sr=8000\na\ta.wav\tbell\t4\tkaan\nb\tb.wav\tbell\t3\tkaaaan\n").unwrap();
        let m = load_manifest(&p).unwrap();
        assert_eq!(m.clusters.len(), 1);
        let bell = &m.clusters["bell"];
        assert_eq!(bell.records, vec!["a", "b"]);
        // (4/1 + 6/2) / 2
        assert!((bell.sounding_rate - 3.5).abs() < 1e-12);
    }

    #[test]
    fn confidence_out_of_range_is_a_parse_error() {
        let err = parse_manifest("a\ta.wav\tbell\t6\tkaan\n").unwrap_err();
        match err {
            CorpusError::Parse { line, field, .. } => {
                assert_eq!(line, 1);
                assert_eq!(field, "confidence");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn structural_errors() {
        assert!(matches!(
            parse_manifest("a\ta.wav\tbell\t3\tkaan\na\tb.wav\tbell\t3\tkan\n"),
            Err(CorpusError::DuplicateId(id)) if id == "a"
        ));
        assert!(matches!(
            parse_manifest("#sr=8000\na\ta.wav\tbell\t3\n"),
            Err(CorpusError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_manifest("a\ta.wav\tbell\t3\tka an\n"),
            Err(CorpusError::Parse { field, .. }) if field == "text"
        ));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.tsv");
        std::fs::write(&p, "a\tmissing.wav\tbell\t3\tkan\n").unwrap();
        assert!(matches!(load_manifest(&p), Err(CorpusError::MissingFile(_))));
    }

    #[test]
    fn sounding_rate_examples() {
        assert_eq!(compute_sounding_rate(&[(4, 1.0)]).unwrap(), 4.0);
        assert_eq!(compute_sounding_rate(&[(4, 2.0), (6, 2.0)]).unwrap(), 2.5);
        assert!(matches!(
            compute_sounding_rate(&[(3, 0.0)]),
            Err(CorpusError::NonPositiveDuration(_))
        ));
        assert!(matches!(compute_sounding_rate(&[]), Err(CorpusError::EmptyCluster)));
    }

    fn manifest_with_confidences(confs: &[u8]) -> CorpusManifest {
        let records: Vec<_> = confs
            .iter()
            .enumerate()
            .map(|(i, &c)| OnomatopoeiaRecord {
                id: format!("r{i}"),
                text: "kan".into(),
                audio_path: format!("r{i}.wav").into(),
                event_label: if i % 2 == 0 { "bell" } else { "drum" }.into(),
                confidence: c,
                alignment_path: None,
            })
            .collect();
        let durations = records.iter().map(|r| (r.id.clone(), 1.0)).collect();
        CorpusManifest::from_records(records, durations, 8000, PathBuf::new()).unwrap()
    }

    #[test]
    fn confidence_filter_examples() {
        let m = manifest_with_confidences(&[2, 3, 5]);
        let kept: Vec<u8> = m.filter_by_confidence(3).records.iter().map(|r| r.confidence).collect();
        assert_eq!(kept, vec![3, 5]);
        assert_eq!(m.filter_by_confidence(1).records, m.records);
        let all4 = manifest_with_confidences(&[4, 4, 4]);
        let none = all4.filter_by_confidence(5);
        assert!(none.is_empty());
        assert!(none.clusters.is_empty());
    }

    proptest! {
        #[test]
        fn confidence_filter_is_idempotent(confs in prop::collection::vec(1u8..=5, 0..30), min in 1u8..=5) {
            let m = manifest_with_confidences(&confs);
            let once = m.filter_by_confidence(min);
            let twice = once.filter_by_confidence(min);
            prop_assert_eq!(&once.records, &twice.records);
            prop_assert_eq!(&once.clusters, &twice.clusters);
        }

        #[test]
        fn doubling_durations_halves_rate(members in prop::collection::vec((1usize..20, 0.01f64..10.0), 1..20)) {
            let p = compute_sounding_rate(&members).unwrap();
            let doubled: Vec<_> = members.iter().map(|&(c, d)| (c, 2.0 * d)).collect();
            let q = compute_sounding_rate(&doubled).unwrap();
            prop_assert!((p - 2.0 * q).abs() <= 1e-12 * p.abs().max(1.0));
        }

        #[test]
        fn tsv_round_trip(
            rows in prop::collection::vec(("[a-z]{1,6}", "[a-zキイン]{1,8}", 1u8..=5, any::<bool>()), 0..12)
        ) {
            let mut seen = HashSet::new();
            let records: Vec<_> = rows
                .into_iter()
                .filter(|(id, ..)| seen.insert(id.clone()))
                .map(|(id, text, conf, has_align)| OnomatopoeiaRecord {
                    audio_path: format!("audio/{id}.wav").into(),
                    alignment_path: has_align.then(|| format!("align/{id}.lab").into()),
                    event_label: "bell".into(),
                    confidence: conf,
                    id,
                    text,
                })
                .collect();
            let durations = records.iter().map(|r| (r.id.clone(), 0.5)).collect();
            let m = CorpusManifest::from_records(records, durations, 8000, PathBuf::new()).unwrap();
            let (parsed, sr, _) = parse_manifest(&m.to_tsv()).unwrap();
            prop_assert_eq!(sr, Some(8000));
            prop_assert_eq!(parsed, m.records);
        }
    }
}
