//! Griffin-Lim phase reconstruction from a log-mel spectrogram.

use rustfft::num_complex::Complex;

use super::spectral::{magnitudes, mel_filterbank, Stft};
use super::{MelSpectrogram, Wave, LOG_FLOOR};

/// Maps log-mel frames back to linear magnitudes with the transpose of the
/// filterbank normalised per FFT bin: `S[f] = Σ_m M[m,f] mel[m] / Σ_m M[m,f]²`.
/// Energies at the log floor count as silence.
pub fn mel_to_linear(mel: &MelSpectrogram) -> Vec<Vec<f64>> {
    let bank = mel_filterbank(&mel.config);
    let n_bins = bank.cols();
    let floor = LOG_FLOOR.ln() as f32;
    let norm: Vec<f64> = (0..n_bins)
        .map(|k| (0..bank.rows()).map(|m| bank.get(m, k).powi(2)).sum())
        .collect();
    (0..mel.n_frames())
        .map(|t| {
            let energies: Vec<f64> = mel
                .frames
                .row(t)
                .iter()
                .map(|&v| if v <= floor { 0.0 } else { (v as f64).exp() })
                .collect();
            (0..n_bins)
                .map(|k| {
                    if norm[k] == 0.0 {
                        return 0.0;
                    }
                    let acc: f64 = (0..bank.rows()).map(|m| bank.get(m, k) * energies[m]).sum();
                    acc / norm[k]
                })
                .collect()
        })
        .collect()
}

/// `‖|STFT(x)| - target‖ / ‖target‖` over all frames and bins.
pub fn spectral_convergence(actual: &[Vec<f64>], target: &[Vec<f64>]) -> f64 {
    let (mut num, mut den) = (0.0, 0.0);
    for (a, t) in actual.iter().zip(target) {
        for (x, y) in a.iter().zip(t) {
            num += (x - y).powi(2);
            den += y * y;
        }
    }
    if den == 0.0 {
        num.sqrt()
    } else {
        (num / den).sqrt()
    }
}

pub struct GriffinLimOutput {
    pub wave: Wave,
    /// Spectral convergence of the iterate after 0, 1, ..., `iters` updates.
    pub convergence: Vec<f64>,
}

fn apply_phase(target: &[Vec<f64>], phase_src: Option<&[Vec<Complex<f64>>]>) -> Vec<Vec<Complex<f64>>> {
    target
        .iter()
        .enumerate()
        .map(|(t, mags)| {
            mags.iter()
                .enumerate()
                .map(|(k, &m)| match phase_src {
                    None => Complex::new(m, 0.0),
                    Some(src) => {
                        let c = src[t][k];
                        let r = c.norm();
                        if r > 0.0 {
                            c * (m / r)
                        } else {
                            Complex::new(m, 0.0)
                        }
                    }
                })
                .collect()
        })
        .collect()
}

/// Zero-phase initialised Griffin-Lim. Output length is
/// `(T - 1) * hop + frame_length`.
pub fn griffin_lim_traced(mel: &MelSpectrogram, iters: usize) -> GriffinLimOutput {
    let cfg = &mel.config;
    let stft = Stft::new(cfg.frame_length, cfg.hop);
    let target = mel_to_linear(mel);
    let mut signal = stft.synthesize(&apply_phase(&target, None));
    let mut spec = stft.analyze(&signal);
    let mut convergence = vec![spectral_convergence(&magnitudes(&spec), &target)];
    for _ in 0..iters {
        signal = stft.synthesize(&apply_phase(&target, Some(&spec)));
        spec = stft.analyze(&signal);
        convergence.push(spectral_convergence(&magnitudes(&spec), &target));
    }
    GriffinLimOutput {
        wave: Wave::new(cfg.sample_rate, signal.iter().map(|&v| v as f32).collect()),
        convergence,
    }
}

pub fn griffin_lim(mel: &MelSpectrogram, iters: usize) -> Wave {
    griffin_lim_traced(mel, iters).wave
}

/// Magnitude of the input's half spectrum; used by tests to locate peaks.
pub fn magnitude_spectrum(samples: &[f32]) -> Vec<f64> {
    let n = samples.len();
    let stft = Stft::new(n, n);
    let frames = stft.analyze(&samples.iter().map(|&v| v as f64).collect::<Vec<_>>());
    frames
        .first()
        .map(|f| f.iter().map(|c| c.norm()).collect())
        .unwrap_or_default()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::{mel_spectrogram, DspConfig};

    fn tone(freq: f64, sr: u32, len: usize) -> Vec<f32> {
        (0..len)
            .map(|n| (0.5 * (2.0 * std::f64::consts::PI * freq * n as f64 / sr as f64).sin()) as f32)
            .collect()
    }

    /// Dominant frequency by direct summation over a Hann-windowed block.
    fn dominant_hz(x: &[f32], sr: u32) -> f64 {
        let n = x.len();
        let w = crate::dsp::spectral::hann(n);
        let mut best = (0.0, 0usize);
        for k in 1..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for (i, &v) in x.iter().enumerate() {
                let a = -2.0 * std::f64::consts::PI * (k * i) as f64 / n as f64;
                re += v as f64 * w[i] * a.cos();
                im += v as f64 * w[i] * a.sin();
            }
            let m = re * re + im * im;
            if m > best.0 {
                best = (m, k);
            }
        }
        best.1 as f64 * sr as f64 / n as f64
    }

    #[test]
    fn reconstructs_tone_frequency() {
        let mut config = DspConfig::new(8000);
        config.frame_length = 512;
        config.hop = 128;
        config.n_mels = 40;
        let x = tone(440.0, 8000, 8000);
        let mel = mel_spectrogram(&x, &config).unwrap();
        let out = griffin_lim(&mel, 30);
        assert_eq!(out.samples.len(), (mel.n_frames() - 1) * config.hop + config.frame_length);
        let mid = &out.samples[2000..2000 + 1024];
        let bin_hz = 8000.0 / 1024.0;
        assert!((dominant_hz(mid, 8000) - 440.0).abs() <= bin_hz + 1e-9);
    }

    #[test]
    fn silence_reconstructs_near_silent() {
        let config = DspConfig::new(16000);
        let mel = mel_spectrogram(&vec![0.0; 8000], &config).unwrap();
        let out = griffin_lim(&mel, 10);
        let rms = (out.samples.iter().map(|v| (*v as f64).powi(2)).sum::<f64>() / out.samples.len() as f64).sqrt();
        assert!(rms < 1e-3, "rms {rms}");
    }

    #[test]
    fn convergence_is_non_increasing() {
        let mut config = DspConfig::new(8000);
        config.frame_length = 256;
        config.hop = 64;
        config.n_mels = 40;
        let x: Vec<f32> = tone(440.0, 8000, 4000)
            .iter()
            .zip(tone(1234.0, 8000, 4000))
            .map(|(a, b)| a + 0.5 * b)
            .collect();
        let mel = mel_spectrogram(&x, &config).unwrap();
        let trace = griffin_lim_traced(&mel, 60).convergence;
        assert_eq!(trace.len(), 61);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "{} -> {}", w[0], w[1]);
        }
        assert!(trace[60] < trace[0]);
    }

    #[test]
    fn deterministic() {
        let config = DspConfig::new(8000);
        let mel = mel_spectrogram(&tone(300.0, 8000, 4000), &config).unwrap();
        assert_eq!(griffin_lim(&mel, 5), griffin_lim(&mel, 5));
    }
}
