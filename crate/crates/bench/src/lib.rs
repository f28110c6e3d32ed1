//! Shared fixtures for the benchmarks.

use onoma_core::corpus::{generate_synthetic_corpus, CorpusManifest, GeneratorSpec};
use onoma_core::dsp::Wave;

/// One second of a decaying two-partial tone at `sample_rate`.
pub fn test_tone(sample_rate: u32) -> Wave {
    let sr = sample_rate as f64;
    let samples = (0..sample_rate as usize)
        .map(|i| {
            let t = i as f64 / sr;
            let env = (-3.0 * t).exp();
            (env * (0.4 * (2.0 * std::f64::consts::PI * 440.0 * t).sin() + 0.2 * (2.0 * std::f64::consts::PI * 1320.0 * t).sin())) as f32
        })
        .collect();
    Wave::new(sample_rate, samples)
}

/// Small desk corpus in a temporary directory; keep the guard alive.
pub fn desk_corpus(per_class: usize) -> (tempfile::TempDir, CorpusManifest) {
    let dir = tempfile::tempdir().expect("temp dir");
    let m = generate_synthetic_corpus(&GeneratorSpec::desk(per_class), 1, dir.path()).expect("corpus");
    (dir, m)
}
