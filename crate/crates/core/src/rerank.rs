//! Selecting one utterance from an n-best list.

use thiserror::Error;

use crate::adequacy::{extract_features, predict, AdequacyError, ClassifierWeights, MatchLexicon};
use crate::dataset::Vocabulary;
use crate::mr::MeaningRepresentation;
use crate::nbest::Candidate;
use crate::neural::{greedy_decode, ModelParams, NeuralError};

#[derive(Debug, Error)]
pub enum RerankError {
    #[error("n-best list is empty")]
    EmptyNBest,
    #[error(transparent)]
    Neural(#[from] NeuralError),
    #[error(transparent)]
    Adequacy(#[from] AdequacyError),
}

/// Unit-cost edit distance over Unicode scalar values.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RerankRule {
    ZeroEditDistance,
    ClassifierAccept,
    FallbackTop1,
}

impl RerankRule {
    pub fn name(self) -> &'static str {
        match self {
            RerankRule::ZeroEditDistance => "zero-edit-distance",
            RerankRule::ClassifierAccept => "classifier-accept",
            RerankRule::FallbackTop1 => "fallback-top1",
        }
    }
}

impl std::fmt::Display for RerankRule {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Scores for every candidate, in rank order.
#[derive(Debug, Clone, PartialEq)]
pub enum Diagnostics {
    /// No re-ranking was applied.
    None,
    EditDistances(Vec<usize>),
    Probabilities(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankDecision {
    pub chosen: usize,
    pub rule: RerankRule,
    pub diagnostics: Diagnostics,
}

impl RerankDecision {
    /// The vanilla forward choice: always rank 0.
    pub fn top1() -> Self {
        Self {
            chosen: 0,
            rule: RerankRule::FallbackTop1,
            diagnostics: Diagnostics::None,
        }
    }
}

/// First zero distance wins; otherwise rank 0.
pub fn select_by_distances(distances: &[usize]) -> Result<RerankDecision, RerankError> {
    if distances.is_empty() {
        return Err(RerankError::EmptyNBest);
    }
    let (chosen, rule) = match distances.iter().position(|&d| d == 0) {
        Some(i) => (i, RerankRule::ZeroEditDistance),
        None => (0, RerankRule::FallbackTop1),
    };
    Ok(RerankDecision {
        chosen,
        rule,
        diagnostics: Diagnostics::EditDistances(distances.to_vec()),
    })
}

/// First probability ≥ 0.5 wins; otherwise rank 0.
pub fn select_by_probabilities(probabilities: &[f64]) -> Result<RerankDecision, RerankError> {
    if probabilities.is_empty() {
        return Err(RerankError::EmptyNBest);
    }
    let (chosen, rule) = match probabilities.iter().position(|&p| p >= 0.5) {
        Some(i) => (i, RerankRule::ClassifierAccept),
        None => (0, RerankRule::FallbackTop1),
    };
    Ok(RerankDecision {
        chosen,
        rule,
        diagnostics: Diagnostics::Probabilities(probabilities.to_vec()),
    })
}

/// Maps an utterance back to MR text.
pub trait Reconstructor: Sync {
    fn reconstruct(&self, utterance: &str) -> Result<String, RerankError>;
}

/// A reverse (utterance → MR) model decoded greedily.
#[derive(Debug, Clone)]
pub struct ReverseModel {
    pub params: ModelParams,
    pub vocab: Vocabulary,
    pub max_len: usize,
}

impl ReverseModel {
    pub fn new(params: ModelParams, vocab: Vocabulary) -> Self {
        let max_len = params.config.max_decode_len;
        Self {
            params,
            vocab,
            max_len,
        }
    }
}

impl Reconstructor for ReverseModel {
    fn reconstruct(&self, utterance: &str) -> Result<String, RerankError> {
        if utterance.is_empty() {
            return Ok(String::new());
        }
        let ids = self.vocab.encode(utterance);
        let out = greedy_decode(&self.params, &ids, self.max_len)?;
        Ok(self.vocab.decode(&out))
    }
}

/// Edit distance between each candidate's reconstruction and the canonical
/// MR text. Candidates are split over `workers` threads; results keep rank
/// order.
pub fn reconstruction_distances<R: Reconstructor>(
    candidates: &[Candidate],
    mr_text_canonical: &str,
    model: &R,
    workers: usize,
) -> Result<Vec<usize>, RerankError> {
    let one = |c: &Candidate| -> Result<usize, RerankError> {
        Ok(levenshtein(&model.reconstruct(&c.text)?, mr_text_canonical))
    };
    let workers = workers.clamp(1, candidates.len().max(1));
    if workers == 1 {
        return candidates.iter().map(one).collect();
    }
    let chunk = candidates.len().div_ceil(workers);
    std::thread::scope(|s| {
        let handles: Vec<_> = candidates
            .chunks(chunk)
            .map(|part| s.spawn(move || part.iter().map(one).collect::<Result<Vec<_>, _>>()))
            .collect();
        let mut out = Vec::with_capacity(candidates.len());
        for h in handles {
            out.extend(h.join().expect("reconstruction worker panicked")?);
        }
        Ok(out)
    })
}

pub fn reverse_rerank<R: Reconstructor>(
    candidates: &[Candidate],
    mr_text_canonical: &str,
    model: &R,
) -> Result<RerankDecision, RerankError> {
    reverse_rerank_with_workers(candidates, mr_text_canonical, model, 1)
}

pub fn reverse_rerank_with_workers<R: Reconstructor>(
    candidates: &[Candidate],
    mr_text_canonical: &str,
    model: &R,
    workers: usize,
) -> Result<RerankDecision, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyNBest);
    }
    select_by_distances(&reconstruction_distances(
        candidates,
        mr_text_canonical,
        model,
        workers,
    )?)
}

pub fn classifier_probabilities(
    candidates: &[Candidate],
    mr: &MeaningRepresentation,
    weights: &ClassifierWeights,
    lex: &MatchLexicon,
) -> Result<Vec<f64>, RerankError> {
    candidates
        .iter()
        .map(|c| Ok(predict(weights, &extract_features(mr, &c.text, lex)?)))
        .collect()
}

pub fn classifier_rerank(
    candidates: &[Candidate],
    mr: &MeaningRepresentation,
    weights: &ClassifierWeights,
    lex: &MatchLexicon,
) -> Result<RerankDecision, RerankError> {
    if candidates.is_empty() {
        return Err(RerankError::EmptyNBest);
    }
    select_by_probabilities(&classifier_probabilities(candidates, mr, weights, lex)?)
}
