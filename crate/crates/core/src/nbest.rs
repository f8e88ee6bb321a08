//! Line-oriented n-best interchange: `rank<TAB>raw<TAB>normalized<TAB>text`.
//!
//! Scores are written with Rust's shortest round-trip float formatting, so a
//! write/read cycle is bit-exact. Tabs, newlines and backslashes in the text
//! are escaped as `\t`, `\n`, `\\`.

use std::fmt::Write as _;

use thiserror::Error;

use crate::dataset::Vocabulary;
use crate::neural::NBestList;

#[derive(Debug, Error)]
pub enum NBestError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: expected rank {expected}, found {found}")]
    RankOrder {
        line: usize,
        expected: usize,
        found: usize,
    },
}

/// One decoded candidate as exchanged between decoder and re-rankers.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub text: String,
    pub raw_score: f64,
    pub normalized_score: f64,
}

/// Decodes beam output into text candidates, keeping list order.
pub fn candidates_from_beam(list: &NBestList, vocab: &Vocabulary) -> Vec<Candidate> {
    list.iter()
        .map(|h| Candidate {
            text: vocab.decode(&h.tokens),
            raw_score: h.raw_score,
            normalized_score: h.normalized_score,
        })
        .collect()
}

pub fn escape(text: &str) -> String {
    let mut out = String::with_capacity(text.len());
    for c in text.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

pub fn unescape(text: &str) -> Result<String, String> {
    let mut out = String::with_capacity(text.len());
    let mut chars = text.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            Some(other) => return Err(format!("unknown escape \\{other}")),
            None => return Err("dangling backslash".into()),
        }
    }
    Ok(out)
}

/// Ranks are written 0-based in list order.
pub fn write_nbest(candidates: &[Candidate]) -> String {
    let mut out = String::new();
    for (rank, c) in candidates.iter().enumerate() {
        writeln!(
            out,
            "{rank}\t{:?}\t{:?}\t{}",
            c.raw_score,
            c.normalized_score,
            escape(&c.text)
        )
        .expect("writing to a String cannot fail");
    }
    out
}

/// Parses records written by [`write_nbest`]. Ranks must run 0, 1, 2, ...
/// Blank lines are skipped.
pub fn read_nbest(input: &str) -> Result<Vec<Candidate>, NBestError> {
    let mut out = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse = |message: String| NBestError::Parse {
            line: line_no,
            message,
        };
        let fields: Vec<&str> = line.splitn(4, '\t').collect();
        if fields.len() != 4 {
            return Err(parse(format!("expected 4 fields, found {}", fields.len())));
        }
        let rank: usize = fields[0].parse().map_err(|e| parse(format!("rank: {e}")))?;
        if rank != out.len() {
            return Err(NBestError::RankOrder {
                line: line_no,
                expected: out.len(),
                found: rank,
            });
        }
        let raw_score: f64 = fields[1]
            .parse()
            .map_err(|e| parse(format!("raw score: {e}")))?;
        let normalized_score: f64 = fields[2]
            .parse()
            .map_err(|e| parse(format!("normalized score: {e}")))?;
        let text = unescape(fields[3]).map_err(parse)?;
        out.push(Candidate {
            text,
            raw_score,
            normalized_score,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let list = vec![
            Candidate {
                text: "Blue Spice is a coffee shop.".into(),
                raw_score: -1.234_567_890_123_456_7,
                normalized_score: -0.1 - 0.2,
            },
            Candidate {
                text: "tab\there, newline\nthere, slash \\t".into(),
                raw_score: -1e-300,
                normalized_score: f64::MIN_POSITIVE * -3.0,
            },
            Candidate {
                text: String::new(),
                raw_score: -0.0,
                normalized_score: -7.0,
            },
        ];
        let text = write_nbest(&list);
        assert_eq!(text.lines().count(), 3);
        let back = read_nbest(&text).unwrap();
        assert_eq!(back.len(), 3);
        for (a, b) in list.iter().zip(&back) {
            assert_eq!(a.text, b.text);
            assert_eq!(a.raw_score.to_bits(), b.raw_score.to_bits());
            assert_eq!(a.normalized_score.to_bits(), b.normalized_score.to_bits());
        }
    }

    #[test]
    fn rejects_bad_records() {
        assert!(matches!(
            read_nbest("0\t-1.0\t-1.0"),
            Err(NBestError::Parse { line: 1, .. })
        ));
        assert!(matches!(
            read_nbest("1\t-1.0\t-1.0\tx"),
            Err(NBestError::RankOrder {
                expected: 0,
                found: 1,
                ..
            })
        ));
        assert!(read_nbest("0\tabc\t-1.0\tx").is_err());
        assert!(read_nbest("0\t-1\t-1\tbad \\q").is_err());
    }

    #[test]
    fn text_may_contain_literal_field_separators_after_escape() {
        let c = Candidate {
            text: "a\tb".into(),
            raw_score: -1.0,
            normalized_score: -1.0,
        };
        let line = write_nbest(std::slice::from_ref(&c));
        assert_eq!(line.matches('\t').count(), 3);
        assert_eq!(read_nbest(&line).unwrap()[0], c);
    }
}
