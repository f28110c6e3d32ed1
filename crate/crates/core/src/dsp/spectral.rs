//! STFT magnitude analysis and the triangular mel filterbank.

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{DspConfig, DspError, MelSpectrogram, LOG_FLOOR};
use crate::tensor::Tensor;

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann(len: usize) -> Vec<f64> {
    (0..len)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / len as f64).cos())
        .collect()
}

pub fn frame_count(len: usize, frame_length: usize, hop: usize) -> usize {
    if len < frame_length {
        0
    } else {
        1 + (len - frame_length) / hop
    }
}

/// `n_mels x (frame_length/2 + 1)` triangular filters with unit peak on the
/// HTK mel scale. A filter narrower than one FFT bin puts unit weight on the
/// bin nearest its centre so that no row is empty.
pub fn mel_filterbank(config: &DspConfig) -> Tensor<f64> {
    let n_bins = config.frame_length / 2 + 1;
    let bin_hz = config.sample_rate as f64 / config.frame_length as f64;
    let lo = hz_to_mel(config.fmin);
    let hi = hz_to_mel(config.fmax);
    let points: Vec<f64> = (0..config.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (config.n_mels + 1) as f64))
        .collect();
    let mut bank = Tensor::zeros(config.n_mels, n_bins);
    for m in 0..config.n_mels {
        let (left, centre, right) = (points[m], points[m + 1], points[m + 2]);
        let mut any = false;
        for k in 0..n_bins {
            let f = k as f64 * bin_hz;
            let w = if f > left && f <= centre {
                (f - left) / (centre - left)
            } else if f > centre && f < right {
                (right - f) / (right - centre)
            } else {
                0.0
            };
            if w > 0.0 {
                bank.set(m, k, w);
                any = true;
            }
        }
        if !any {
            let k = ((centre / bin_hz).round() as usize).min(n_bins - 1);
            bank.set(m, k, 1.0);
        }
    }
    bank
}

const MIN_WINDOW_SUM: f64 = 1e-3;

pub(crate) struct Stft {
    frame_length: usize,
    hop: usize,
    window: Vec<f64>,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl Stft {
    pub fn new(frame_length: usize, hop: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            frame_length,
            hop,
            window: hann(frame_length),
            forward: planner.plan_fft_forward(frame_length),
            inverse: planner.plan_fft_inverse(frame_length),
        }
    }

    pub fn n_bins(&self) -> usize {
        self.frame_length / 2 + 1
    }

    /// Half spectrum per frame, `frames x n_bins`.
    pub fn analyze(&self, signal: &[f64]) -> Vec<Vec<Complex<f64>>> {
        let n = frame_count(signal.len(), self.frame_length, self.hop);
        let mut buf = vec![Complex::new(0.0, 0.0); self.frame_length];
        (0..n)
            .map(|t| {
                let start = t * self.hop;
                for (i, b) in buf.iter_mut().enumerate() {
                    *b = Complex::new(signal[start + i] * self.window[i], 0.0);
                }
                self.forward.process(&mut buf);
                buf[..self.n_bins()].to_vec()
            })
            .collect()
    }

    /// Least-squares inverse: windowed overlap-add divided by the summed
    /// squared window, clamped below so edge samples covered only by the
    /// window tails are not amplified.
    pub fn synthesize(&self, frames: &[Vec<Complex<f64>>]) -> Vec<f64> {
        if frames.is_empty() {
            return Vec::new();
        }
        let len = (frames.len() - 1) * self.hop + self.frame_length;
        let mut out = vec![0.0; len];
        let mut norm = vec![0.0; len];
        let n = self.frame_length;
        let mut buf = vec![Complex::new(0.0, 0.0); n];
        for (t, half) in frames.iter().enumerate() {
            for (k, b) in buf.iter_mut().enumerate() {
                *b = if k < half.len() {
                    half[k]
                } else {
                    half[n - k].conj()
                };
            }
            self.inverse.process(&mut buf);
            let start = t * self.hop;
            for i in 0..n {
                let w = self.window[i];
                out[start + i] += w * buf[i].re / n as f64;
                norm[start + i] += w * w;
            }
        }
        for (o, &z) in out.iter_mut().zip(&norm) {
            *o /= z.max(MIN_WINDOW_SUM);
        }
        out
    }
}

pub(crate) fn magnitudes(spec: &[Vec<Complex<f64>>]) -> Vec<Vec<f64>> {
    spec.iter()
        .map(|f| f.iter().map(|c| c.norm()).collect())
        .collect()
}

pub fn mel_spectrogram(samples: &[f32], config: &DspConfig) -> Result<MelSpectrogram, DspError> {
    config.validate()?;
    if samples.len() < config.frame_length {
        return Err(DspError::TooShort {
            len: samples.len(),
            frame_length: config.frame_length,
        });
    }
    let signal: Vec<f64> = samples.iter().map(|&s| s as f64).collect();
    let stft = Stft::new(config.frame_length, config.hop);
    let mags = magnitudes(&stft.analyze(&signal));
    let bank = mel_filterbank(config);
    let mut frames = Tensor::zeros(mags.len(), config.n_mels);
    for (t, mag) in mags.iter().enumerate() {
        for m in 0..config.n_mels {
            let e: f64 = bank.row(m).iter().zip(mag).map(|(w, a)| w * a).sum();
            frames.set(t, m, e.max(LOG_FLOOR).ln() as f32);
        }
    }
    Ok(MelSpectrogram::new(frames, config.clone()))
}
