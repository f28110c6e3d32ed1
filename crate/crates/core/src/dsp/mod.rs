//! Waveform I/O, log-mel analysis, Griffin-Lim inversion and spectral
//! distances.

mod griffin_lim;
mod spectral;
mod wav;

use std::io;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::Tensor;

pub use griffin_lim::{
    griffin_lim, griffin_lim_traced, magnitude_spectrum, mel_to_linear, spectral_convergence,
    GriffinLimOutput,
};
pub use spectral::{frame_count, hann, hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz};
pub use wav::{decode_wav, encode_wav, i16_to_sample, load_wav, sample_to_i16, write_wav, Wave};

/// Magnitudes below this are clamped before taking the natural log.
pub const LOG_FLOOR: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("unsupported audio format: {0}")]
    UnsupportedFormat(String),
    #[error("waveform of {len} samples is shorter than one frame ({frame_length})")]
    TooShort { len: usize, frame_length: usize },
    #[error("mel dimension mismatch: {0} vs {1}")]
    MelDimMismatch(usize, usize),
    #[error("invalid DSP config: {0}")]
    InvalidConfig(String),
    #[error("malformed mel file: {0}")]
    MalformedMel(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DspConfig {
    pub sample_rate: u32,
    pub frame_length: usize,
    pub hop: usize,
    pub n_mels: usize,
    pub fmin: f64,
    pub fmax: f64,
    pub griffin_lim_iters: usize,
}

impl Default for DspConfig {
    fn default() -> Self {
        Self::new(22050)
    }
}

impl DspConfig {
    /// 1024-sample frames, hop 256, 80 mels spanning `[0, sr/2]`.
    pub fn new(sample_rate: u32) -> Self {
        Self {
            sample_rate,
            frame_length: 1024,
            hop: 256,
            n_mels: 80,
            fmin: 0.0,
            fmax: sample_rate as f64 / 2.0,
            griffin_lim_iters: 60,
        }
    }

    /// 256-sample frames, hop 64, 32 mels, 16 Griffin-Lim iterations.
    /// Sized for the small desk model.
    pub fn desk(sample_rate: u32) -> Self {
        Self {
            frame_length: 256,
            hop: 64,
            n_mels: 32,
            griffin_lim_iters: 16,
            ..Self::new(sample_rate)
        }
    }

    pub fn validate(&self) -> Result<(), DspError> {
        let bad = |m: String| Err(DspError::InvalidConfig(m));
        if self.sample_rate == 0 {
            return bad("sample_rate must be positive".into());
        }
        if self.hop == 0 || self.hop > self.frame_length {
            return bad(format!("hop {} must be in 1..={}", self.hop, self.frame_length));
        }
        if self.n_mels == 0 {
            return bad("n_mels must be at least 1".into());
        }
        if !(self.fmin >= 0.0 && self.fmin < self.fmax && self.fmax <= self.sample_rate as f64 / 2.0) {
            return bad(format!(
                "need 0 <= fmin < fmax <= sr/2, got fmin={} fmax={}",
                self.fmin, self.fmax
            ));
        }
        Ok(())
    }

    pub fn frame_seconds(&self) -> f64 {
        self.hop as f64 / self.sample_rate as f64
    }
}

/// `T x n_mels` natural-log mel magnitudes.
#[derive(Clone, Debug, PartialEq)]
pub struct MelSpectrogram {
    pub frames: Tensor<f32>,
    pub config: DspConfig,
}

impl MelSpectrogram {
    pub fn new(frames: Tensor<f32>, config: DspConfig) -> Self {
        Self { frames, config }
    }

    pub fn n_frames(&self) -> usize {
        self.frames.rows()
    }

    pub fn n_mels(&self) -> usize {
        self.frames.cols()
    }

    /// Little-endian `u32 T`, `u32 n_mels`, then `T*n_mels` f32 values.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(8 + 4 * self.frames.len());
        out.extend_from_slice(&(self.n_frames() as u32).to_le_bytes());
        out.extend_from_slice(&(self.n_mels() as u32).to_le_bytes());
        for v in self.frames.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], config: DspConfig) -> Result<Self, DspError> {
        if bytes.len() < 8 {
            return Err(DspError::MalformedMel("missing header".into()));
        }
        let t = u32::from_le_bytes(bytes[0..4].try_into().unwrap()) as usize;
        let m = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
        if bytes.len() != 8 + 4 * t * m {
            return Err(DspError::MalformedMel(format!(
                "header says {t}x{m} but payload is {} bytes",
                bytes.len() - 8
            )));
        }
        let data = bytes[8..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self::new(Tensor::from_vec(t, m, data), config))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for t in 0..self.n_frames() {
            let row: Vec<String> = self.frames.row(t).iter().map(|v| v.to_string()).collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<(), DspError> {
        std::fs::write(path, self.to_bytes())?;
        Ok(())
    }

    /// Linear interpolation along time to `target` frames.
    pub fn resample_frames(&self, target: usize) -> Tensor<f64> {
        let t = self.n_frames();
        let m = self.n_mels();
        Tensor::from_fn(target, m, |i, j| {
            if t == 1 || target == 1 {
                return self.frames.get(0, j) as f64;
            }
            let pos = i as f64 * (t - 1) as f64 / (target - 1) as f64;
            let lo = (pos.floor() as usize).min(t - 1);
            let hi = (lo + 1).min(t - 1);
            let frac = pos - lo as f64;
            let a = self.frames.get(lo, j) as f64;
            let b = self.frames.get(hi, j) as f64;
            a + (b - a) * frac
        })
    }
}

pub const DEFAULT_DISTANCE_FRAMES: usize = 64;

/// Mean squared difference after resampling both spectrograms to
/// `target_frames` frames.
pub fn mel_distance(a: &MelSpectrogram, b: &MelSpectrogram, target_frames: usize) -> Result<f64, DspError> {
    if a.n_mels() != b.n_mels() {
        return Err(DspError::MelDimMismatch(a.n_mels(), b.n_mels()));
    }
    let ra = a.resample_frames(target_frames);
    let rb = b.resample_frames(target_frames);
    let total: f64 = ra
        .data()
        .iter()
        .zip(rb.data())
        .map(|(x, y)| (x - y).powi(2))
        .sum();
    Ok(total / ra.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_mel(rng: &mut ChaCha8Rng, t: usize, m: usize) -> MelSpectrogram {
        MelSpectrogram::new(
            Tensor::from_fn(t, m, |_, _| rng.random_range(-5.0..1.0)),
            DspConfig::default(),
        )
    }

    #[test]
    fn distance_identity_and_constant_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let a = random_mel(&mut rng, 30, 8);
        assert_eq!(mel_distance(&a, &a, 64).unwrap(), 0.0);
        let b = MelSpectrogram::new(a.frames.map(|v| v + 0.5), a.config.clone());
        assert!((mel_distance(&a, &b, 64).unwrap() - 0.25).abs() < 1e-9);
    }

    #[test]
    fn distance_matches_double_loop_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let a = random_mel(&mut rng, 17, 6);
        let b = random_mel(&mut rng, 41, 6);
        let target = 64;
        let interp = |m: &MelSpectrogram, i: usize, j: usize| -> f64 {
            let t = m.n_frames();
            let pos = i as f64 * (t - 1) as f64 / (target - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = if lo + 1 < t { lo + 1 } else { lo };
            let frac = pos - lo as f64;
            m.frames.get(lo, j) as f64 * (1.0 - frac) + m.frames.get(hi, j) as f64 * frac
        };
        let mut sum = 0.0;
        for i in 0..target {
            for j in 0..6 {
                sum += (interp(&a, i, j) - interp(&b, i, j)).powi(2);
            }
        }
        let expected = sum / (target * 6) as f64;
        let got = mel_distance(&a, &b, target).unwrap();
        assert!((got - expected).abs() < 1e-9, "{got} vs {expected}");
        assert!((mel_distance(&b, &a, target).unwrap() - got).abs() < 1e-12);
    }

    #[test]
    fn distance_rejects_dim_mismatch() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let a = random_mel(&mut rng, 5, 8);
        let b = random_mel(&mut rng, 5, 9);
        assert!(matches!(mel_distance(&a, &b, 64), Err(DspError::MelDimMismatch(8, 9))));
    }

    #[test]
    fn binary_round_trip() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let a = random_mel(&mut rng, 7, 5);
        let bytes = a.to_bytes();
        assert_eq!(bytes.len(), 8 + 7 * 5 * 4);
        assert_eq!(MelSpectrogram::from_bytes(&bytes, a.config.clone()).unwrap(), a);
        assert!(MelSpectrogram::from_bytes(&bytes[..20], a.config.clone()).is_err());
    }

    #[test]
    fn config_validation() {
        assert!(DspConfig::default().validate().is_ok());
        let mut c = DspConfig::default();
        c.hop = 2048;
        assert!(c.validate().is_err());
        let mut c = DspConfig::default();
        c.fmax = 20000.0;
        assert!(c.validate().is_err());
        let mut c = DspConfig::default();
        c.n_mels = 0;
        assert!(c.validate().is_err());
    }
}
