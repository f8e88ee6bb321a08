//! Corpus BLEU against multiple references, and slot-coverage diagnostics.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;

use serde::Serialize;
use thiserror::Error;

use crate::adequacy::{extract_features, AdequacyError, MatchLexicon};
use crate::mr::{MeaningRepresentation, SlotType};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{hypotheses} hypotheses but {references} reference sets")]
    LengthMismatch {
        hypotheses: usize,
        references: usize,
    },
    #[error("reference set {0} is empty")]
    EmptyReferences(usize),
    #[error(transparent)]
    Adequacy(#[from] AdequacyError),
}

/// Lowercases, splits every character that is neither alphanumeric nor
/// whitespace into its own token, then splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut word = String::new();
    for c in text.to_lowercase().chars() {
        if c.is_alphanumeric() {
            word.push(c);
            continue;
        }
        if !word.is_empty() {
            tokens.push(std::mem::take(&mut word));
        }
        if !c.is_whitespace() {
            tokens.push(c.to_string());
        }
    }
    if !word.is_empty() {
        tokens.push(word);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BleuOptions {
    pub max_n: usize,
    /// Add one to numerator and denominator of every precision with n ≥ 2.
    pub smooth: bool,
}

impl Default for BleuOptions {
    fn default() -> Self {
        Self {
            max_n: 4,
            smooth: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BleuReport {
    pub bleu: f64,
    /// Modified precision for n = 1..=max_n.
    pub precisions: Vec<f64>,
    /// Clipped matches and hypothesis n-gram totals behind each precision.
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
}

impl BleuReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "bleu={:.6}", self.bleu);
        for (i, p) in self.precisions.iter().enumerate() {
            let _ = writeln!(out, "precision_{}={:.6}", i + 1, p);
        }
        let _ = writeln!(out, "brevity_penalty={:.6}", self.brevity_penalty);
        let _ = writeln!(out, "hypothesis_length={}", self.hypothesis_length);
        let _ = writeln!(out, "reference_length={}", self.reference_length);
        out
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], u64> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

pub fn bleu<H, R>(hypotheses: &[H], references: &[R]) -> Result<BleuReport, EvalError>
where
    H: AsRef<str>,
    R: AsRef<[String]>,
{
    bleu_with(hypotheses, references, &BleuOptions::default())
}

/// Corpus BLEU. The brevity penalty sums, per sentence, the reference length
/// closest to the hypothesis length (the shorter on ties).
pub fn bleu_with<H, R>(
    hypotheses: &[H],
    references: &[R],
    opts: &BleuOptions,
) -> Result<BleuReport, EvalError>
where
    H: AsRef<str>,
    R: AsRef<[String]>,
{
    if hypotheses.len() != references.len() {
        return Err(EvalError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let max_n = opts.max_n.max(1);
    let mut matches = vec![0u64; max_n];
    let mut totals = vec![0u64; max_n];
    let mut hyp_len = 0;
    let mut ref_len = 0;

    for (i, (hyp, refs)) in hypotheses.iter().zip(references).enumerate() {
        let refs = refs.as_ref();
        if refs.is_empty() {
            return Err(EvalError::EmptyReferences(i));
        }
        let h = tokenize(hyp.as_ref());
        let rs: Vec<Vec<String>> = refs.iter().map(|r| tokenize(r)).collect();
        hyp_len += h.len();
        ref_len += rs
            .iter()
            .map(|r| r.len())
            .min_by_key(|&l| (l.abs_diff(h.len()), l))
            .unwrap_or(0);
        for n in 1..=max_n {
            let hc = ngram_counts(&h, n);
            let mut best: HashMap<&[String], u64> = HashMap::new();
            for r in &rs {
                for (g, c) in ngram_counts(r, n) {
                    let e = best.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
            for (g, c) in hc {
                matches[n - 1] += c.min(best.get(g).copied().unwrap_or(0));
                totals[n - 1] += c;
            }
        }
    }

    let precisions: Vec<f64> = (0..max_n)
        .map(|i| {
            if opts.smooth && i >= 1 {
                (matches[i] + 1) as f64 / (totals[i] + 1) as f64
            } else if totals[i] == 0 {
                0.0
            } else {
                matches[i] as f64 / totals[i] as f64
            }
        })
        .collect();
    let brevity_penalty = if hyp_len == 0 {
        0.0
    } else if hyp_len > ref_len {
        1.0
    } else {
        (1.0 - ref_len as f64 / hyp_len as f64).exp()
    };
    let bleu = if precisions.contains(&0.0) {
        0.0
    } else {
        let mean_log = precisions.iter().map(|p| p.ln()).sum::<f64>() / max_n as f64;
        brevity_penalty * mean_log.exp()
    };
    Ok(BleuReport {
        bleu,
        precisions,
        matches,
        totals,
        brevity_penalty,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageItem {
    pub arity: usize,
    /// Present slots whose value was not found in the utterance.
    pub omitted: Vec<SlotType>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct ArityStats {
    pub utterances: usize,
    pub with_omission: usize,
    pub slots_checked: usize,
    pub slots_omitted: usize,
}

impl ArityStats {
    fn add(&mut self, checked: usize, omitted: usize) {
        self.utterances += 1;
        self.with_omission += usize::from(omitted > 0);
        self.slots_checked += checked;
        self.slots_omitted += omitted;
    }

    pub fn omission_rate(&self) -> f64 {
        ratio(self.with_omission, self.utterances)
    }
}

fn ratio(a: usize, b: usize) -> f64 {
    if b == 0 {
        0.0
    } else {
        a as f64 / b as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CoverageReport {
    pub items: Vec<CoverageItem>,
    /// Share of utterances with at least one suspected omission.
    pub omission_rate: f64,
    /// Share of present non-name slots that were not found.
    pub slot_omission_rate: f64,
    /// Keyed by MR arity, name included.
    pub by_arity: BTreeMap<usize, ArityStats>,
}

impl CoverageReport {
    pub fn to_key_value(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "utterances={}", self.items.len());
        let _ = writeln!(out, "omission_rate={:.6}", self.omission_rate);
        let _ = writeln!(out, "slot_omission_rate={:.6}", self.slot_omission_rate);
        for (arity, s) in &self.by_arity {
            let _ = writeln!(
                out,
                "arity_{arity}: utterances={} with_omission={} omission_rate={:.6}",
                s.utterances,
                s.with_omission,
                s.omission_rate()
            );
        }
        out
    }
}

pub fn coverage_report<S: AsRef<str>>(
    pairs: &[(MeaningRepresentation, S)],
    lex: &MatchLexicon,
) -> Result<CoverageReport, EvalError> {
    let mut items = Vec::with_capacity(pairs.len());
    let mut by_arity: BTreeMap<usize, ArityStats> = BTreeMap::new();
    let mut total = ArityStats::default();
    for (mr, utterance) in pairs {
        let f = extract_features(mr, utterance.as_ref(), lex)?;
        let checked = SlotType::FEATURE_SLOTS
            .iter()
            .filter(|s| mr.contains(**s))
            .count();
        let omitted: Vec<SlotType> = SlotType::FEATURE_SLOTS
            .into_iter()
            .filter(|&s| mr.contains(s) && f.get(s) == Some(0.0))
            .collect();
        by_arity
            .entry(mr.len())
            .or_default()
            .add(checked, omitted.len());
        total.add(checked, omitted.len());
        items.push(CoverageItem {
            arity: mr.len(),
            omitted,
        });
    }
    Ok(CoverageReport {
        items,
        omission_rate: total.omission_rate(),
        slot_omission_rate: ratio(total.slots_omitted, total.slots_checked),
        by_arity,
    })
}
