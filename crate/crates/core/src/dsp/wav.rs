//! RIFF WAV reading and writing, PCM 16-bit mono only.

use std::fs;
use std::io::Write;
use std::path::Path;

use super::DspError;

/// Mono waveform with samples in `[-1, 1)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Wave {
    pub sample_rate: u32,
    pub samples: Vec<f32>,
}

impl Wave {
    pub fn new(sample_rate: u32, samples: Vec<f32>) -> Self {
        Self {
            sample_rate,
            samples,
        }
    }

    pub fn duration_sec(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

const PCM_SCALE: f32 = 32768.0;

pub fn sample_to_i16(v: f32) -> i16 {
    (v * PCM_SCALE).round().clamp(i16::MIN as f32, i16::MAX as f32) as i16
}

pub fn i16_to_sample(v: i16) -> f32 {
    v as f32 / PCM_SCALE
}

/// Serialises a wave as a canonical 44-byte-header PCM16 mono WAV.
pub fn encode_wav(wave: &Wave) -> Vec<u8> {
    let data_len = (wave.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&wave.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wave.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in &wave.samples {
        out.extend_from_slice(&sample_to_i16(s).to_le_bytes());
    }
    out
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

pub fn decode_wav(bytes: &[u8]) -> Result<Wave, DspError> {
    let bad = |why: &str| DspError::UnsupportedFormat(why.to_string());
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(bad("not a RIFF/WAVE file"));
    }
    let mut pos = 12;
    let mut format: Option<(u16, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let len = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        let end = body.checked_add(len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated chunk"))?;
        match id {
            b"fmt " => {
                if len < 16 {
                    return Err(bad("short fmt chunk"));
                }
                format = Some((
                    u16_at(bytes, body),
                    u16_at(bytes, body + 2),
                    u32_at(bytes, body + 4),
                    u16_at(bytes, body + 14),
                ));
            }
            b"data" => {
                let (tag, channels, rate, bits) = format.ok_or_else(|| bad("data chunk before fmt"))?;
                if tag != 1 {
                    return Err(bad(&format!("format tag {tag} is not PCM")));
                }
                if channels != 1 {
                    return Err(bad(&format!("{channels} channels, expected mono")));
                }
                if bits != 16 {
                    return Err(bad(&format!("{bits}-bit samples, expected 16")));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|c| i16_to_sample(i16::from_le_bytes([c[0], c[1]])))
                    .collect();
                return Ok(Wave::new(rate, samples));
            }
            _ => {}
        }
        // chunks are word aligned
        pos = end + (len & 1);
    }
    Err(bad("missing data chunk"))
}

pub fn write_wav(path: &Path, wave: &Wave) -> Result<(), DspError> {
    let mut f = fs::File::create(path)?;
    f.write_all(&encode_wav(wave))?;
    Ok(())
}

pub fn load_wav(path: &Path) -> Result<Wave, DspError> {
    decode_wav(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn pcm16_round_trip_is_sample_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let ints: Vec<i16> = (0..1000).map(|_| rng.random()).collect();
        let wave = Wave::new(16000, ints.iter().map(|&v| i16_to_sample(v)).collect());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        write_wav(&path, &wave).unwrap();
        let back = load_wav(&path).unwrap();
        assert_eq!(back.sample_rate, 16000);
        let back_ints: Vec<i16> = back.samples.iter().map(|&s| sample_to_i16(s)).collect();
        assert_eq!(back_ints, ints);
    }

    #[test]
    fn stereo_is_rejected() {
        let mut bytes = encode_wav(&Wave::new(8000, vec![0.0; 4]));
        bytes[22] = 2;
        assert!(matches!(decode_wav(&bytes), Err(DspError::UnsupportedFormat(_))));
    }

    #[test]
    fn empty_data_chunk_is_an_empty_wave() {
        let wave = decode_wav(&encode_wav(&Wave::new(8000, vec![]))).unwrap();
        assert!(wave.samples.is_empty());
        assert_eq!(wave.sample_rate, 8000);
    }

    #[test]
    fn unknown_chunks_are_skipped() {
        let plain = encode_wav(&Wave::new(8000, vec![0.5, -0.25]));
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST");
        bytes.extend_from_slice(&3u32.to_le_bytes());
        bytes.extend_from_slice(&[1, 2, 3, 0]);
        bytes.extend_from_slice(&plain[36..]);
        let wave = decode_wav(&bytes).unwrap();
        assert_eq!(wave.samples, vec![0.5, -0.25]);
    }

    #[test]
    fn clipping_saturates() {
        assert_eq!(sample_to_i16(2.0), i16::MAX);
        assert_eq!(sample_to_i16(-2.0), i16::MIN);
    }
}
