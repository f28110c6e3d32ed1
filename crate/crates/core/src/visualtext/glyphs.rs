use std::collections::HashMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::VisualError;
use crate::tensor::Tensor;

/// One `h x w` cell, ink = 1.0, background = 0.0.
#[derive(Clone, Debug, PartialEq)]
pub struct GlyphBitmap {
    pub pixels: Tensor<f32>,
}

impl GlyphBitmap {
    pub fn new(pixels: Tensor<f32>) -> Self {
        Self { pixels }
    }

    pub fn blank(h: usize, w: usize) -> Self {
        Self::new(Tensor::zeros(h, w))
    }

    pub fn height(&self) -> usize {
        self.pixels.rows()
    }

    pub fn width(&self) -> usize {
        self.pixels.cols()
    }
}

pub trait GlyphProvider {
    /// Bitmap of `ch` at exactly `h x w` pixels.
    fn glyph(&self, ch: char, h: usize, w: usize) -> Result<GlyphBitmap, VisualError>;
}

/// Deterministic stroke patterns hashed from the codepoint, so any
/// printable character has a distinct glyph without font files.
#[derive(Clone, Debug)]
pub struct ProceduralGlyphs {
    pub seed: u64,
}

impl Default for ProceduralGlyphs {
    fn default() -> Self {
        Self { seed: 0x6f6e_6f6d_61 }
    }
}

impl ProceduralGlyphs {
    pub fn new(seed: u64) -> Self {
        Self { seed }
    }
}

fn draw_line(img: &mut Tensor<f32>, (y0, x0): (f64, f64), (y1, x1): (f64, f64), thickness: usize) {
    let steps = ((y1 - y0).abs().max((x1 - x0).abs()) * 2.0).ceil().max(1.0) as usize;
    let (h, w) = img.shape();
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let y = (y0 + (y1 - y0) * t).round() as isize;
        let x = (x0 + (x1 - x0) * t).round() as isize;
        for dy in 0..thickness as isize {
            for dx in 0..thickness as isize {
                let (yy, xx) = (y + dy, x + dx);
                if yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w {
                    img.set(yy as usize, xx as usize, 1.0);
                }
            }
        }
    }
}

impl GlyphProvider for ProceduralGlyphs {
    fn glyph(&self, ch: char, h: usize, w: usize) -> Result<GlyphBitmap, VisualError> {
        if ch.is_whitespace() || ch.is_control() {
            return Err(VisualError::UnsupportedGlyph(ch));
        }
        if h < 4 || w < 4 {
            return Err(VisualError::GlyphSize { ch, expected: (h, w), found: (0, 0) });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ (ch as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
        let mut img = Tensor::zeros(h, w);
        let margin = (h.min(w) / 8).max(1) as f64;
        let (ymax, xmax) = (h as f64 - 1.0 - margin, w as f64 - 1.0 - margin);
        let thickness = (h.min(w) / 12).max(1);
        let strokes = rng.random_range(3..=5);
        for _ in 0..strokes {
            let a = (rng.random_range(margin..=ymax), rng.random_range(margin..=xmax));
            let b = match rng.random_range(0..3) {
                0 => (a.0, rng.random_range(margin..=xmax)),
                1 => (rng.random_range(margin..=ymax), a.1),
                _ => (rng.random_range(margin..=ymax), rng.random_range(margin..=xmax)),
            };
            draw_line(&mut img, a, b, thickness);
        }
        Ok(GlyphBitmap::new(img))
    }
}

/// Bitmap font read from the `.glyphs` text format:
///
/// ```text
/// 3 4
/// U+0041 6 9 F
/// ```
///
/// The header is `h w`; each glyph line is a codepoint followed by `h`
/// hexadecimal row masks whose most significant of `w` bits is the
/// leftmost pixel.
#[derive(Clone, Debug)]
pub struct BitmapFont {
    pub height: usize,
    pub width: usize,
    glyphs: HashMap<char, GlyphBitmap>,
}

impl BitmapFont {
    pub fn parse(text: &str) -> Result<Self, VisualError> {
        let err = |line: usize, reason: String| VisualError::FontParse { line, reason };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let (hl, header) = lines.next().ok_or_else(|| err(1, "missing `h w` header".into()))?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| err(hl, format!("bad header value {t:?}"))))
            .collect::<Result<_, _>>()?;
        let [height, width] = dims[..] else {
            return Err(err(hl, "header must be `h w`".into()));
        };
        if height == 0 || width == 0 || width > 64 {
            return Err(err(hl, format!("unsupported cell {height}x{width}")));
        }
        let mut glyphs = HashMap::new();
        for (n, line) in lines {
            let mut parts = line.split_whitespace();
            let cp = parts.next().unwrap_or_default();
            let code = cp
                .strip_prefix("U+")
                .and_then(|h| u32::from_str_radix(h, 16).ok())
                .and_then(char::from_u32)
                .ok_or_else(|| err(n, format!("bad codepoint {cp:?}")))?;
            let rows: Vec<u64> = parts
                .map(|r| u64::from_str_radix(r, 16).map_err(|_| err(n, format!("bad row {r:?}"))))
                .collect::<Result<_, _>>()?;
            if rows.len() != height {
                return Err(err(n, format!("expected {height} rows, got {}", rows.len())));
            }
            let mut px = Tensor::zeros(height, width);
            for (y, mask) in rows.iter().enumerate() {
                if width < 64 && mask >> width != 0 {
                    return Err(err(n, format!("row {y} wider than {width} bits")));
                }
                for x in 0..width {
                    if mask >> (width - 1 - x) & 1 == 1 {
                        px.set(y, x, 1.0);
                    }
                }
            }
            glyphs.insert(code, GlyphBitmap::new(px));
        }
        Ok(Self { height, width, glyphs })
    }

    pub fn load(path: &Path) -> Result<Self, VisualError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn len(&self) -> usize {
        self.glyphs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.glyphs.is_empty()
    }
}

impl GlyphProvider for BitmapFont {
    fn glyph(&self, ch: char, h: usize, w: usize) -> Result<GlyphBitmap, VisualError> {
        let g = self.glyphs.get(&ch).ok_or(VisualError::UnsupportedGlyph(ch))?;
        if (h, w) != (self.height, self.width) {
            return Err(VisualError::GlyphSize {
                ch,
                expected: (h, w),
                found: (self.height, self.width),
            });
        }
        Ok(g.clone())
    }
}
