//! Binary PGM (P5) encoding for grayscale images stored as `height x width`
//! tensors with values in `[0, 1]`.

use std::path::Path;

use crate::tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum PgmError {
    #[error("malformed PGM: {0}")]
    Malformed(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub fn encode_pgm(image: &Tensor<f32>) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", image.cols(), image.rows()).into_bytes();
    out.extend(
        image
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor<f32>, PgmError> {
    let bad = |m: &str| PgmError::Malformed(m.to_string());
    let mut fields = Vec::new();
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).into_owned());
    }
    pos += 1; // single whitespace byte before the raster
    if fields[0] != "P5" {
        return Err(bad("not a P5 file"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(&fields[1])?, num(&fields[2])?, num(&fields[3])?);
    if max == 0 || max > 255 {
        return Err(bad("only 8-bit maxval supported"));
    }
    let raster = bytes.get(pos..pos + w * h).ok_or_else(|| bad("truncated raster"))?;
    Ok(Tensor::from_vec(
        h,
        w,
        raster.iter().map(|&b| b as f32 / max as f32).collect(),
    ))
}

pub fn write_pgm(path: &Path, image: &Tensor<f32>) -> Result<(), PgmError> {
    std::fs::write(path, encode_pgm(image))?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor<f32>, PgmError> {
    decode_pgm(&std::fs::read(path)?)
}
