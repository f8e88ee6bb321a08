//! Greedy and length-normalized beam-search decoding.

use std::cmp::Ordering;

use super::model::{decode_step, encode, initial_state, DecoderState, EncodedSource};
use super::params::ModelParams;
use super::NeuralError;
use crate::dataset::Vocabulary;

/// `((5 + length) / 6)^alpha`.
pub fn length_penalty(length: usize, alpha: f64) -> f64 {
    debug_assert!(length >= 1);
    ((5.0 + length as f64) / 6.0).powf(alpha)
}

/// PAD and BOS are never emitted.
fn emittable(id: usize) -> bool {
    id != Vocabulary::PAD as usize && id != Vocabulary::BOS as usize
}

fn best_token(log_probs: &[f64]) -> usize {
    let mut best = None;
    for (i, &lp) in log_probs.iter().enumerate() {
        if !emittable(i) {
            continue;
        }
        match best {
            Some((_, b)) if lp <= b => {}
            _ => best = Some((i, lp)),
        }
    }
    best.map_or(Vocabulary::EOS as usize, |(i, _)| i)
}

/// Argmax decoding. Returns the emitted ids without the final EOS.
pub fn greedy_decode(
    params: &ModelParams,
    source: &[u32],
    max_len: usize,
) -> Result<Vec<u32>, NeuralError> {
    let enc = encode(params, source)?;
    let mut state = initial_state(params, &enc);
    let mut prev = Vocabulary::BOS;
    let mut out = Vec::new();
    for _ in 0..max_len {
        let (lp, next) = decode_step(params, prev, &state, &enc)?;
        let tok = best_token(&lp) as u32;
        if tok == Vocabulary::EOS {
            break;
        }
        out.push(tok);
        prev = tok;
        state = next;
    }
    Ok(out)
}

/// Teacher-forced `Σ_t log P(target_t | target_<t, source)`.
pub fn score_sequence(
    params: &ModelParams,
    source: &[u32],
    target: &[u32],
) -> Result<f64, NeuralError> {
    let enc = encode(params, source)?;
    score_with(params, &enc, target)
}

fn score_with(
    params: &ModelParams,
    enc: &EncodedSource,
    target: &[u32],
) -> Result<f64, NeuralError> {
    let mut state = initial_state(params, enc);
    let mut prev = Vocabulary::BOS;
    let mut total = 0.0;
    for &y in target {
        let (lp, next) = decode_step(params, prev, &state, enc)?;
        total += *lp.get(y as usize).ok_or(NeuralError::IdOutOfRange {
            id: y,
            vocab_size: lp.len(),
        })?;
        prev = y;
        state = next;
    }
    Ok(total)
}

/// A complete (or length-capped) beam output.
#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Emitted ids, without EOS.
    pub tokens: Vec<u32>,
    /// Sum of log-probabilities, EOS included when finished.
    pub raw_score: f64,
    /// `raw_score / length_penalty(|Y|, alpha)`, with `|Y|` counting EOS.
    pub normalized_score: f64,
    pub finished: bool,
    /// Decoding step at which the hypothesis entered the finished pool.
    pub finish_step: usize,
}

impl Hypothesis {
    /// `|Y|` as used by the length penalty.
    pub fn scored_length(&self) -> usize {
        (self.tokens.len() + usize::from(self.finished)).max(1)
    }

    /// The ids that [`score_sequence`] must replay to reproduce `raw_score`.
    pub fn scored_ids(&self) -> Vec<u32> {
        let mut ids = self.tokens.clone();
        if self.finished {
            ids.push(Vocabulary::EOS);
        }
        ids
    }
}

/// Hypotheses sorted by normalized score, best first.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct NBestList {
    pub hypotheses: Vec<Hypothesis>,
}

impl NBestList {
    pub fn len(&self) -> usize {
        self.hypotheses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.hypotheses.is_empty()
    }

    pub fn best(&self) -> Option<&Hypothesis> {
        self.hypotheses.first()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Hypothesis> {
        self.hypotheses.iter()
    }

    /// Sorts by normalized score descending; the sort is stable, so ties
    /// keep insertion order.
    pub fn from_unsorted(mut hypotheses: Vec<Hypothesis>) -> Self {
        hypotheses.sort_by(|a, b| {
            b.normalized_score
                .partial_cmp(&a.normalized_score)
                .unwrap_or(Ordering::Equal)
                .then(a.finish_step.cmp(&b.finish_step))
        });
        Self { hypotheses }
    }
}

struct Live {
    tokens: Vec<u32>,
    raw: f64,
    state: DecoderState,
}

/// Beam search with length normalization.
///
/// Each step expands every live hypothesis over the vocabulary and keeps the
/// `beam_width` best candidates by raw score; candidates ending in EOS move
/// to the finished pool. Search stops once the pool holds `beam_width`
/// entries, no live hypotheses remain, or `max_len` steps have run, in which
/// case live hypotheses top the pool up as unfinished entries.
pub fn beam_search(
    params: &ModelParams,
    source: &[u32],
    beam_width: usize,
    alpha: f64,
    max_len: usize,
) -> Result<NBestList, NeuralError> {
    let beam_width = beam_width.max(1);
    let enc = encode(params, source)?;
    let mut live = vec![Live {
        tokens: Vec::new(),
        raw: 0.0,
        state: initial_state(params, &enc),
    }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    let finish = |tokens: Vec<u32>, raw: f64, done: bool, step: usize| {
        let mut h = Hypothesis {
            tokens,
            raw_score: raw,
            normalized_score: raw,
            finished: done,
            finish_step: step,
        };
        h.normalized_score = raw / length_penalty(h.scored_length(), alpha);
        h
    };

    for step in 0..max_len {
        let mut expanded = Vec::with_capacity(live.len());
        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let prev = hyp.tokens.last().copied().unwrap_or(Vocabulary::BOS);
            let (lp, next) = decode_step(params, prev, &hyp.state, &enc)?;
            for (tok, &l) in lp.iter().enumerate() {
                if emittable(tok) {
                    candidates.push((hyp.raw + l, hi, tok));
                }
            }
            expanded.push(next);
        }
        // stable: ties keep (hypothesis, token) order
        candidates.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap_or(Ordering::Equal));
        candidates.truncate(beam_width);

        let mut next_live = Vec::with_capacity(beam_width);
        for (score, hi, tok) in candidates {
            let tokens = live[hi].tokens.clone();
            if tok as u32 == Vocabulary::EOS {
                finished.push(finish(tokens, score, true, step));
            } else {
                let mut tokens = tokens;
                tokens.push(tok as u32);
                next_live.push(Live {
                    tokens,
                    raw: score,
                    state: expanded[hi].clone(),
                });
            }
        }
        live = next_live;
        if finished.len() >= beam_width || live.is_empty() {
            live.clear();
            break;
        }
    }
    for hyp in live {
        if finished.len() >= beam_width {
            break;
        }
        finished.push(finish(hyp.tokens, hyp.raw, false, max_len));
    }
    let mut list = NBestList::from_unsorted(finished);
    list.hypotheses.truncate(beam_width);
    Ok(list)
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;

    #[test]
    fn length_penalty_values() {
        assert_eq!(length_penalty(1, 1.0), 1.0);
        assert_eq!(length_penalty(7, 1.0), 2.0);
        for n in 1..50 {
            assert_eq!(length_penalty(n, 0.0), 1.0);
        }
    }

    fn model() -> ModelParams {
        ModelParams::init_uniform(&ModelConfig::tiny(8), 0.8, 11).unwrap()
    }

    #[test]
    fn greedy_is_beam_one() {
        let p = model();
        for src in [vec![4u32, 5, 6], vec![7, 7], vec![3, 4, 5, 6, 7]] {
            let g = greedy_decode(&p, &src, 15).unwrap();
            let b = beam_search(&p, &src, 1, 0.0, 15).unwrap();
            assert_eq!(b.len(), 1);
            assert_eq!(b.hypotheses[0].tokens, g);
            assert_eq!(greedy_decode(&p, &src, 15).unwrap(), g);
        }
    }

    #[test]
    fn beam_scores_replay() {
        let p = model();
        let src = [4u32, 6, 5, 7];
        let list = beam_search(&p, &src, 5, 1.0, 12).unwrap();
        assert!(!list.is_empty() && list.len() <= 5);
        for h in list.iter() {
            let replay = score_sequence(&p, &src, &h.scored_ids()).unwrap();
            assert!((replay - h.raw_score).abs() < 1e-9);
            assert!(h.raw_score <= 0.0);
        }
        for w in list.hypotheses.windows(2) {
            assert!(w[0].normalized_score >= w[1].normalized_score);
        }
    }

    #[test]
    fn score_decreases_with_appended_chars() {
        let p = model();
        let src = [4u32, 5];
        let mut prev = 0.0;
        let mut tgt = Vec::new();
        for tok in [4u32, 5, 6, 7, 2] {
            tgt.push(tok);
            let s = score_sequence(&p, &src, &tgt).unwrap();
            assert!(s <= prev);
            prev = s;
        }
    }
}
