use std::fmt::Write as _;
use std::path::Path;

use super::CorpusError;

#[derive(Clone, Debug, PartialEq)]
pub struct Span {
    pub ch: char,
    pub start_sec: f64,
    pub end_sec: f64,
}

impl Span {
    pub fn new(ch: char, start_sec: f64, end_sec: f64) -> Self {
        Self {
            ch,
            start_sec,
            end_sec,
        }
    }

    pub fn width(&self) -> f64 {
        self.end_sec - self.start_sec
    }
}

/// Per-character time spans over a waveform, sorted and non-overlapping.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct CharAlignment {
    pub spans: Vec<Span>,
}

/// Characters of an onomatopoeia: every non-whitespace codepoint.
pub fn text_chars(text: &str) -> Vec<char> {
    text.chars().filter(|c| !c.is_whitespace()).collect()
}

impl CharAlignment {
    pub fn new(spans: Vec<Span>) -> Self {
        Self { spans }
    }

    pub fn len(&self) -> usize {
        self.spans.len()
    }

    pub fn is_empty(&self) -> bool {
        self.spans.is_empty()
    }

    pub fn text(&self) -> String {
        self.spans.iter().map(|s| s.ch).collect()
    }

    pub fn end_sec(&self) -> f64 {
        self.spans.last().map_or(0.0, |s| s.end_sec)
    }

    /// Checks ordering and positivity, and that the last span ends within
    /// `duration_sec` (when given) up to half a microsecond.
    pub fn validate(&self, duration_sec: Option<f64>) -> Result<(), CorpusError> {
        let bad = |m: String| Err(CorpusError::InvalidAlignment(m));
        for (i, s) in self.spans.iter().enumerate() {
            if !(s.start_sec >= 0.0 && s.end_sec > s.start_sec) {
                return bad(format!("span {i} ({}) has [{}, {}]", s.ch, s.start_sec, s.end_sec));
            }
            if let Some(next) = self.spans.get(i + 1) {
                if s.end_sec > next.start_sec + 1e-9 {
                    return bad(format!("span {i} overlaps span {}", i + 1));
                }
            }
        }
        if let Some(d) = duration_sec {
            if self.end_sec() > d + 5e-7 {
                return bad(format!("last span ends at {} past audio end {d}", self.end_sec()));
            }
        }
        Ok(())
    }

    pub fn check_text(&self, text: &str) -> Result<(), CorpusError> {
        let chars = text_chars(text);
        if chars.len() != self.spans.len() || chars.iter().zip(&self.spans).any(|(c, s)| *c != s.ch) {
            return Err(CorpusError::InvalidAlignment(format!(
                "alignment text {:?} does not match record text {text:?}",
                self.text()
            )));
        }
        Ok(())
    }

    /// One `char<TAB>start<TAB>end` line per span, nine fractional digits.
    pub fn to_lab(&self) -> String {
        let mut out = String::new();
        for s in &self.spans {
            let _ = writeln!(out, "{}\t{:.9}\t{:.9}", s.ch, s.start_sec, s.end_sec);
        }
        out
    }

    pub fn parse_lab(text: &str) -> Result<Self, CorpusError> {
        let mut spans = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line_no = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let parse_err = |field: &str, reason: String| CorpusError::Parse {
                line: line_no,
                field: field.to_string(),
                reason,
            };
            if fields.len() != 3 {
                return Err(parse_err("line", format!("expected 3 fields, got {}", fields.len())));
            }
            let mut chars = fields[0].chars();
            let ch = match (chars.next(), chars.next()) {
                (Some(c), None) => c,
                _ => return Err(parse_err("char", format!("{:?} is not one character", fields[0]))),
            };
            let start: f64 = fields[1]
                .parse()
                .map_err(|e| parse_err("start_sec", format!("{e}")))?;
            let end: f64 = fields[2]
                .parse()
                .map_err(|e| parse_err("end_sec", format!("{e}")))?;
            spans.push(Span::new(ch, start, end));
        }
        let a = Self { spans };
        a.validate(None)?;
        Ok(a)
    }

    pub fn load(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path).map_err(|e| CorpusError::io(path, e))?;
        Self::parse_lab(&text)
    }

    pub fn save(&self, path: &Path) -> Result<(), CorpusError> {
        std::fs::write(path, self.to_lab()).map_err(|e| CorpusError::io(path, e))
    }

    /// Same spans shifted later by `offset` seconds.
    pub fn shifted(&self, offset: f64) -> Self {
        Self::new(
            self.spans
                .iter()
                .map(|s| Span::new(s.ch, s.start_sec + offset, s.end_sec + offset))
                .collect(),
        )
    }
}

/// `n` equal contiguous spans tiling `[0, duration_sec]`.
pub fn uniform_alignment(text: &str, duration_sec: f64) -> Result<CharAlignment, CorpusError> {
    let chars = text_chars(text);
    if chars.is_empty() {
        return Err(CorpusError::EmptyText);
    }
    if !(duration_sec > 0.0) {
        return Err(CorpusError::NonPositiveDuration(duration_sec));
    }
    let n = chars.len();
    let spans = chars
        .iter()
        .enumerate()
        .map(|(i, &c)| {
            let start = duration_sec * i as f64 / n as f64;
            let end = if i + 1 == n {
                duration_sec
            } else {
                duration_sec * (i + 1) as f64 / n as f64
            };
            Span::new(c, start, end)
        })
        .collect();
    Ok(CharAlignment::new(spans))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn uniform_examples() {
        let a = uniform_alignment("AB", 1.0).unwrap();
        assert_eq!(a.spans, vec![Span::new('A', 0.0, 0.5), Span::new('B', 0.5, 1.0)]);
        let x = uniform_alignment("X", 2.0).unwrap();
        assert_eq!(x.spans, vec![Span::new('X', 0.0, 2.0)]);
        let four = uniform_alignment("ABCD", 1.0).unwrap();
        for (i, s) in four.spans.iter().enumerate() {
            assert!((s.width() - 0.25).abs() < 1e-12);
            if i > 0 {
                assert_eq!(s.start_sec, four.spans[i - 1].end_sec);
            }
        }
    }

    #[test]
    fn uniform_errors() {
        assert!(matches!(uniform_alignment("", 1.0), Err(CorpusError::EmptyText)));
        assert!(matches!(
            uniform_alignment("ab", 0.0),
            Err(CorpusError::NonPositiveDuration(_))
        ));
    }

    #[test]
    fn lab_round_trip_and_validation() {
        let a = uniform_alignment("キイン", 0.9).unwrap();
        let parsed = CharAlignment::parse_lab(&a.to_lab()).unwrap();
        assert_eq!(parsed.text(), "キイン");
        for (p, q) in parsed.spans.iter().zip(&a.spans) {
            assert!((p.start_sec - q.start_sec).abs() < 1e-9 && (p.end_sec - q.end_sec).abs() < 1e-9);
        }
        assert!(a.validate(Some(0.8)).is_err());
        assert!(CharAlignment::parse_lab("a\t0.5\t0.2\n").is_err());
        assert!(CharAlignment::parse_lab("a\t0.0\t0.5\nb\t0.4\t0.6\n").is_err());
        assert!(matches!(
            CharAlignment::parse_lab("ab\t0.0\t0.5\n"),
            Err(CorpusError::Parse { line: 1, .. })
        ));
    }

    proptest! {
        #[test]
        fn uniform_tiles_duration(text in "[a-zキイン]{1,40}", duration in 1e-3f64..100.0) {
            let a = uniform_alignment(&text, duration).unwrap();
            prop_assert_eq!(a.spans[0].start_sec, 0.0);
            let total: f64 = a.spans.iter().map(Span::width).sum();
            prop_assert!((total - duration).abs() < 1e-9);
            for w in a.spans.windows(2) {
                prop_assert_eq!(w[0].end_sec, w[1].start_sec);
            }
            prop_assert_eq!(a.end_sec(), duration);
        }
    }
}
