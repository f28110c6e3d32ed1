//! Visual onomatopoeia: monospaced rendering, width stretching, canvas
//! padding, fixed-width token slicing and alignment remapping.
//!
//! Bitmaps are `height x width` tensors with ink = 1.0 and background = 0.0,
//! so zero padding is background.

mod glyphs;

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{text_chars, CharAlignment};
use crate::pgm;
use crate::tensor::Tensor;

pub use glyphs::{BitmapFont, GlyphBitmap, GlyphProvider, ProceduralGlyphs};

pub const DEFAULT_CELL: usize = 24;

#[derive(Debug, Error)]
pub enum VisualError {
    #[error("text is empty")]
    EmptyText,
    #[error("no glyph for {0:?} (U+{code:04X})", code = *.0 as u32)]
    UnsupportedGlyph(char),
    #[error("glyph {ch:?} is {found:?}, cell is {expected:?}")]
    GlyphSize {
        ch: char,
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("sounding rate must be positive, got {0}")]
    NonPositiveRate(f64),
    #[error("duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("stretch ratio must be positive, got {0}")]
    NonPositiveRatio(f64),
    #[error("visual text is already stretched by {0}")]
    AlreadyStretched(f64),
    #[error("canvas width {canvas} is smaller than the image width {width}")]
    CanvasTooSmall { width: usize, canvas: usize },
    #[error("alignment text {alignment:?} does not match visual text {visual:?}")]
    MismatchedText { alignment: String, visual: String },
    #[error("glyph file line {line}: {reason}")]
    FontParse { line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Horizontal pixel extent of one character. Boundaries stay fractional
/// after stretching and are only rounded when slicing.
#[derive(Clone, Debug, PartialEq)]
pub struct CharBox {
    pub ch: char,
    pub x_start: f64,
    pub x_end: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VisualOnomatopoeia {
    pub pixels: Tensor<f32>,
    pub char_boxes: Vec<CharBox>,
    pub source_text: String,
    pub stretch_applied: f64,
    /// Columns occupied by text; everything right of it is padding.
    pub text_width: usize,
    /// Unrounded text width, so chained stretches round only once.
    pub nominal_width: f64,
}

impl VisualOnomatopoeia {
    pub fn height(&self) -> usize {
        self.pixels.rows()
    }

    pub fn width(&self) -> usize {
        self.pixels.cols()
    }

    pub fn chars(&self) -> Vec<char> {
        self.char_boxes.iter().map(|b| b.ch).collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        pgm::encode_pgm(&self.pixels)
    }

    pub fn save_pgm(&self, path: &Path) -> Result<(), VisualError> {
        std::fs::write(path, self.to_pgm())?;
        Ok(())
    }
}

pub fn render_visual_text(
    text: &str,
    glyphs: &dyn GlyphProvider,
    (h, w): (usize, usize),
) -> Result<VisualOnomatopoeia, VisualError> {
    let chars = text_chars(text);
    if chars.is_empty() {
        return Err(VisualError::EmptyText);
    }
    let mut pixels = Tensor::zeros(h, chars.len() * w);
    let mut boxes = Vec::with_capacity(chars.len());
    for (i, &ch) in chars.iter().enumerate() {
        let g = glyphs.glyph(ch, h, w)?;
        if (g.height(), g.width()) != (h, w) {
            return Err(VisualError::GlyphSize {
                ch,
                expected: (h, w),
                found: (g.height(), g.width()),
            });
        }
        for y in 0..h {
            pixels.row_mut(y)[i * w..(i + 1) * w].copy_from_slice(g.pixels.row(y));
        }
        boxes.push(CharBox {
            ch,
            x_start: (i * w) as f64,
            x_end: ((i + 1) * w) as f64,
        });
    }
    Ok(VisualOnomatopoeia {
        pixels,
        char_boxes: boxes,
        source_text: chars.iter().collect(),
        stretch_applied: 1.0,
        text_width: chars.len() * w,
        nominal_width: (chars.len() * w) as f64,
    })
}

/// Linear column resampling of the text region to `target` columns.
/// Padding is dropped; boxes scale with the text.
fn resample_text(visual: &VisualOnomatopoeia, nominal: f64) -> VisualOnomatopoeia {
    let target = (nominal.round() as usize).max(1);
    let src = visual.text_width;
    let h = visual.height();
    let scale = target as f64 / src as f64;
    let mut pixels = Tensor::zeros(h, target);
    for j in 0..target {
        let x = ((j as f64 + 0.5) / scale - 0.5).clamp(0.0, (src - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(src - 1);
        let frac = (x - x0 as f64) as f32;
        for y in 0..h {
            let (a, b) = (visual.pixels.get(y, x0), visual.pixels.get(y, x1));
            let v = if frac == 0.0 { a } else { a + (b - a) * frac };
            pixels.set(y, j, v);
        }
    }
    VisualOnomatopoeia {
        pixels,
        char_boxes: visual
            .char_boxes
            .iter()
            .map(|b| CharBox {
                ch: b.ch,
                x_start: b.x_start * scale,
                x_end: b.x_end * scale,
            })
            .collect(),
        source_text: visual.source_text.clone(),
        stretch_applied: visual.stretch_applied * scale,
        text_width: target,
        nominal_width: nominal,
    }
}

/// Stretches the text region to `round(P * D * cell_w)` columns so that
/// equal-duration sounds in a cluster get equal widths whatever their
/// character count.
pub fn stretch_to_duration(
    visual: &VisualOnomatopoeia,
    rate: f64,
    duration_sec: f64,
    cell_w: usize,
) -> Result<VisualOnomatopoeia, VisualError> {
    if !(rate > 0.0) {
        return Err(VisualError::NonPositiveRate(rate));
    }
    if !(duration_sec > 0.0) {
        return Err(VisualError::NonPositiveDuration(duration_sec));
    }
    if visual.stretch_applied != 1.0 {
        return Err(VisualError::AlreadyStretched(visual.stretch_applied));
    }
    let mut out = resample_text(visual, rate * duration_sec * cell_w as f64);
    // Nominal ratio rather than the rounded pixel ratio.
    out.stretch_applied = rate * duration_sec / visual.char_boxes.len() as f64;
    Ok(out)
}

pub fn stretch_by_ratio(visual: &VisualOnomatopoeia, ratio: f64) -> Result<VisualOnomatopoeia, VisualError> {
    if !(ratio > 0.0) {
        return Err(VisualError::NonPositiveRatio(ratio));
    }
    let mut out = resample_text(visual, visual.nominal_width * ratio);
    out.stretch_applied = visual.stretch_applied * ratio;
    Ok(out)
}

/// Right-pads with background to `width` columns.
pub fn pad_to_canvas(visual: &VisualOnomatopoeia, width: usize) -> Result<VisualOnomatopoeia, VisualError> {
    if width < visual.width() {
        return Err(VisualError::CanvasTooSmall {
            width: visual.width(),
            canvas: width,
        });
    }
    let mut pixels = Tensor::zeros(visual.height(), width);
    for y in 0..visual.height() {
        pixels.row_mut(y)[..visual.width()].copy_from_slice(visual.pixels.row(y));
    }
    Ok(VisualOnomatopoeia {
        pixels,
        ..visual.clone()
    })
}

/// Cuts the text region into `ceil(text_width / cell_w)` cells; the last
/// one is right-padded with background.
pub fn slice_into_tokens(visual: &VisualOnomatopoeia, cell_w: usize) -> Vec<GlyphBitmap> {
    assert!(cell_w > 0, "cell width must be positive");
    let h = visual.height();
    let n = visual.text_width.div_ceil(cell_w);
    (0..n)
        .map(|t| {
            let start = t * cell_w;
            let end = (start + cell_w).min(visual.text_width);
            let mut cell = Tensor::zeros(h, cell_w);
            for y in 0..h {
                cell.row_mut(y)[..end - start].copy_from_slice(&visual.pixels.row(y)[start..end]);
            }
            GlyphBitmap::new(cell)
        })
        .collect()
}

/// Distributes `total` units over `weights` proportionally: floors first,
/// then one extra unit each to the largest remainders (earlier index wins
/// ties). The result always sums to `total` when some weight is positive.
pub fn largest_remainder(weights: &[f64], total: usize) -> Vec<usize> {
    let sum: f64 = weights.iter().map(|w| w.max(0.0)).sum();
    if weights.is_empty() {
        return Vec::new();
    }
    if !(sum > 0.0) {
        let mut out = vec![0; weights.len()];
        out[0] = total;
        return out;
    }
    let exact: Vec<f64> = weights.iter().map(|w| w.max(0.0) / sum * total as f64).collect();
    let mut out: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let assigned: usize = out.iter().sum();
    let mut order: Vec<usize> = (0..weights.len()).collect();
    order.sort_by(|&a, &b| {
        let (ra, rb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    if assigned <= total {
        for &i in order.iter().cycle().take(total - assigned) {
            out[i] += 1;
        }
    } else {
        // Only reachable through float error; take back from the smallest.
        for &i in order.iter().rev().cycle().take(assigned - total) {
            out[i] = out[i].saturating_sub(1);
        }
    }
    out
}

/// Frame counts per token: each token's pixel interval goes through the
/// piecewise-linear pixel-to-time map whose knots are the character box
/// boundaries, the resulting times are rescaled onto `total_frames` and
/// rounded by largest remainder.
///
/// Box boundaries map to midpoints between neighbouring spans, the left
/// edge to 0 and the right edge to the later of the last span end and
/// `total_frames * frame_hop_sec`, so leading and trailing silence go to
/// the outer tokens.
pub fn remap_alignment_to_tokens(
    alignment: &CharAlignment,
    visual: &VisualOnomatopoeia,
    cell_w: usize,
    frame_hop_sec: f64,
    total_frames: usize,
) -> Result<Vec<usize>, VisualError> {
    let visual_text: String = visual.chars().into_iter().collect();
    if alignment.text() != visual_text {
        return Err(VisualError::MismatchedText {
            alignment: alignment.text(),
            visual: visual_text,
        });
    }
    let n = alignment.len();
    let tokens = visual.text_width.div_ceil(cell_w.max(1));
    if n == 0 || tokens == 0 {
        return Ok(Vec::new());
    }
    let mut xs = vec![0.0];
    let mut ts = vec![0.0];
    for i in 0..n - 1 {
        xs.push(visual.char_boxes[i].x_end);
        ts.push(0.5 * (alignment.spans[i].end_sec + alignment.spans[i + 1].start_sec));
    }
    xs.push(visual.text_width as f64);
    ts.push(alignment.end_sec().max(total_frames as f64 * frame_hop_sec));

    let time_at = |x: f64| -> f64 {
        if x <= xs[0] {
            return ts[0];
        }
        for k in 1..xs.len() {
            if x <= xs[k] {
                let span = xs[k] - xs[k - 1];
                let f = if span > 0.0 { (x - xs[k - 1]) / span } else { 1.0 };
                return ts[k - 1] + f * (ts[k] - ts[k - 1]);
            }
        }
        ts[ts.len() - 1]
    };
    let widths: Vec<f64> = (0..tokens)
        .map(|t| {
            let x0 = (t * cell_w) as f64;
            let x1 = (((t + 1) * cell_w).min(visual.text_width)) as f64;
            time_at(x1) - time_at(x0)
        })
        .collect();
    Ok(largest_remainder(&widths, total_frames))
}

/// Inference-time width control.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Stretch {
    None,
    Ratio { ratio: f64 },
    Duration { rate: f64, duration_sec: f64 },
}

impl Stretch {
    pub fn apply(&self, visual: &VisualOnomatopoeia, cell_w: usize) -> Result<VisualOnomatopoeia, VisualError> {
        match *self {
            Stretch::None => Ok(visual.clone()),
            Stretch::Ratio { ratio } => stretch_by_ratio(visual, ratio),
            Stretch::Duration { rate, duration_sec } => stretch_to_duration(visual, rate, duration_sec, cell_w),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{uniform_alignment, Span};
    use proptest::prelude::*;

    fn render(text: &str) -> VisualOnomatopoeia {
        render_visual_text(text, &ProceduralGlyphs::default(), (24, 24)).unwrap()
    }

    #[test]
    fn render_shapes_and_boxes() {
        let v = render("kiiin");
        assert_eq!(v.pixels.shape(), (24, 120));
        assert_eq!(v.char_boxes.len(), 5);
        for (i, b) in v.char_boxes.iter().enumerate() {
            assert_eq!((b.x_start, b.x_end), ((24 * i) as f64, (24 * (i + 1)) as f64));
        }
        let one = render("キ");
        let g = ProceduralGlyphs::default().glyph('キ', 24, 24).unwrap();
        assert_eq!(one.pixels, g.pixels);
        assert!(matches!(
            render_visual_text("a\u{7}", &ProceduralGlyphs::default(), (24, 24)),
            Err(VisualError::UnsupportedGlyph(_))
        ));
        assert!(matches!(
            render_visual_text("", &ProceduralGlyphs::default(), (24, 24)),
            Err(VisualError::EmptyText)
        ));
    }

    #[test]
    fn slicing_inverts_rendering() {
        let p = ProceduralGlyphs::default();
        let v = render("キイン!");
        let tokens = slice_into_tokens(&v, 24);
        assert_eq!(tokens.len(), 4);
        for (t, ch) in tokens.iter().zip("キイン!".chars()) {
            assert_eq!(*t, p.glyph(ch, 24, 24).unwrap());
        }
    }

    #[test]
    fn stretch_to_duration_examples() {
        let four = stretch_to_duration(&render("kaan"), 4.0, 1.0, 24).unwrap();
        assert_eq!(four.text_width, 96);
        assert_eq!(four.stretch_applied, 1.0);
        assert_eq!(four.pixels, render("kaan").pixels);

        let five = stretch_to_duration(&render("kaaan"), 4.0, 2.0, 24).unwrap();
        assert_eq!(five.text_width, 192);
        assert!((five.char_boxes[1].x_start - 38.4).abs() < 1e-9);
        assert!((five.stretch_applied - 1.6).abs() < 1e-12);

        let eight = stretch_to_duration(&render("kaaaaaan"), 4.0, 1.0, 24).unwrap();
        assert_eq!(eight.text_width, 96);
        assert!(stretch_to_duration(&render("a"), 0.0, 1.0, 24).is_err());
        assert!(stretch_to_duration(&render("a"), 1.0, -1.0, 24).is_err());
        assert!(matches!(
            stretch_to_duration(&five, 4.0, 1.0, 24),
            Err(VisualError::AlreadyStretched(_))
        ));
    }

    #[test]
    fn stretch_by_ratio_examples() {
        let v = render("kaan");
        assert_eq!(stretch_by_ratio(&v, 1.0).unwrap(), v);
        let double = stretch_by_ratio(&v, 2.0).unwrap();
        assert_eq!(double.text_width, 192);
        assert_eq!(double.stretch_applied, 2.0);
        assert_eq!(stretch_by_ratio(&v, 0.5).unwrap().text_width, 48);
        assert!(stretch_by_ratio(&v, 0.0).is_err());
        assert!(double.pixels.data().iter().all(|&p| (0.0..=1.0).contains(&p)));
    }

    #[test]
    fn padding_and_partial_tokens() {
        let v = render("kaan");
        assert_eq!(pad_to_canvas(&v, 96).unwrap(), v);
        let padded = pad_to_canvas(&v, 120).unwrap();
        assert_eq!(padded.width(), 120);
        assert!((96..120).all(|x| (0..24).all(|y| padded.pixels.get(y, x) == 0.0)));
        assert_eq!(padded.char_boxes, v.char_boxes);
        assert!(matches!(pad_to_canvas(&v, 48), Err(VisualError::CanvasTooSmall { .. })));

        let stretched = pad_to_canvas(&stretch_to_duration(&v, 100.0 / 24.0, 1.0, 24).unwrap(), 200).unwrap();
        assert_eq!(stretched.text_width, 100);
        let tokens = slice_into_tokens(&stretched, 24);
        assert_eq!(tokens.len(), 5);
        assert!((4..24).all(|x| (0..24).all(|y| tokens[4].pixels.get(y, x) == 0.0)));

        let mut empty = v.clone();
        empty.text_width = 0;
        empty.nominal_width = 0.0;
        assert!(slice_into_tokens(&empty, 24).is_empty());
    }

    #[test]
    fn remap_examples() {
        let v = render("ab");
        let a = CharAlignment::new(vec![Span::new('a', 0.0, 0.25), Span::new('b', 0.25, 1.0)]);
        assert_eq!(remap_alignment_to_tokens(&a, &v, 24, 0.01, 100).unwrap(), vec![25, 75]);

        let v = render("abcd");
        let u = uniform_alignment("abcd", 1.0).unwrap();
        assert_eq!(remap_alignment_to_tokens(&u, &v, 24, 0.01, 100).unwrap(), vec![25; 4]);

        let wrong = uniform_alignment("abce", 1.0).unwrap();
        assert!(matches!(
            remap_alignment_to_tokens(&wrong, &v, 24, 0.01, 100),
            Err(VisualError::MismatchedText { .. })
        ));
    }

    #[test]
    fn remap_follows_stretched_boxes() {
        // Doubling the width doubles the tokens; each character's frames
        // split evenly over its two cells.
        let v = stretch_by_ratio(&render("ab"), 2.0).unwrap();
        let a = CharAlignment::new(vec![Span::new('a', 0.0, 0.2), Span::new('b', 0.2, 1.0)]);
        assert_eq!(remap_alignment_to_tokens(&a, &v, 24, 0.01, 100).unwrap(), vec![10, 10, 40, 40]);
    }

    #[test]
    fn largest_remainder_examples() {
        assert_eq!(largest_remainder(&[1.0, 1.0, 1.0], 10), vec![4, 3, 3]);
        assert_eq!(largest_remainder(&[0.0, 0.0], 5), vec![5, 0]);
        assert_eq!(largest_remainder(&[], 5), Vec::<usize>::new());
    }

    fn within_one_px(a: usize, b: usize) -> bool {
        a.abs_diff(b) <= 1
    }

    proptest! {
        #[test]
        fn slice_render_round_trip(text in "[a-zアイウエオキン]{1,12}") {
            let p = ProceduralGlyphs::default();
            let v = render_visual_text(&text, &p, (24, 24)).unwrap();
            let tokens = slice_into_tokens(&v, 24);
            prop_assert_eq!(tokens.len(), text.chars().count());
            for (t, ch) in tokens.iter().zip(text.chars()) {
                prop_assert_eq!(&t.pixels, &p.glyph(ch, 24, 24).unwrap().pixels);
            }
        }

        #[test]
        fn ratio_composition_within_one_pixel(n in 1usize..8, a in 0.25f64..3.0, b in 0.25f64..3.0) {
            let v = render(&"o".repeat(n));
            let ab = stretch_by_ratio(&stretch_by_ratio(&v, a).unwrap(), b).unwrap();
            let direct = stretch_by_ratio(&v, a * b).unwrap();
            prop_assert!(within_one_px(ab.text_width, direct.text_width),
                "{} vs {}", ab.text_width, direct.text_width);
        }

        #[test]
        fn duration_width_ignores_char_count(n in 1usize..12, m in 1usize..12, rate in 0.5f64..10.0, d in 0.1f64..3.0) {
            let a = stretch_to_duration(&render(&"a".repeat(n)), rate, d, 24).unwrap();
            let b = stretch_to_duration(&render(&"a".repeat(m)), rate, d, 24).unwrap();
            prop_assert_eq!(a.text_width, b.text_width);
            let tokens = slice_into_tokens(&a, 24).len();
            prop_assert_eq!(tokens, ((rate * d * 24.0).round() as usize).max(1).div_ceil(24));
        }

        #[test]
        fn remap_sums_to_total(
            n in 1usize..10,
            cuts in proptest::collection::vec(0.01f64..1.0, 10),
            ratio in 0.2f64..3.0,
            total in 0usize..500,
        ) {
            let text: String = "kaiontg!xy".chars().take(n).collect();
            let mut t = 0.0;
            let spans = text.chars().zip(&cuts).map(|(c, w)| {
                let s = Span::new(c, t, t + w);
                t += w;
                s
            }).collect();
            let a = CharAlignment::new(spans);
            let v = stretch_by_ratio(&render(&text), ratio).unwrap();
            let frames = remap_alignment_to_tokens(&a, &v, 24, 0.01, total).unwrap();
            prop_assert_eq!(frames.len(), v.text_width.div_ceil(24));
            prop_assert_eq!(frames.iter().sum::<usize>(), total);
        }
    }
}
