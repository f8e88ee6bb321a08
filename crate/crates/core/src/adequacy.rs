//! String-matching adequacy features and a logistic-regression omission
//! classifier.

use std::collections::BTreeMap;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::augment::Triplet;
use crate::mr::{MeaningRepresentation, SlotType};

pub const NUM_FEATURES: usize = 7;

const DEFAULT_LEXICON: &str = include_str!("../data/lexicon.tsv");

#[derive(Debug, Error)]
pub enum AdequacyError {
    #[error("no lexicon entry for {slot}[{value}]")]
    LexiconMissingValue { slot: SlotType, value: String },
    #[error("lexicon line {line}: {message}")]
    LexiconParse { line: usize, message: String },
    #[error("training data contains a single class")]
    DegenerateLabels,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Surface phrases that count as realizing a slot value.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MatchLexicon {
    /// Lowercased phrases, literal value included.
    entries: BTreeMap<SlotType, BTreeMap<String, Vec<String>>>,
    /// Values without an entry match on their literal text.
    pub literal_fallback: bool,
}

impl Default for MatchLexicon {
    fn default() -> Self {
        Self::parse(DEFAULT_LEXICON).expect("bundled lexicon parses")
    }
}

impl MatchLexicon {
    pub fn empty() -> Self {
        Self {
            entries: BTreeMap::new(),
            literal_fallback: true,
        }
    }

    /// Parses `slot<TAB>value<TAB>phrase` lines; `#` starts a comment line.
    pub fn parse(text: &str) -> Result<Self, AdequacyError> {
        let mut lex = Self::empty();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let err = |message: &str| AdequacyError::LexiconParse {
                line: i + 1,
                message: message.to_string(),
            };
            let mut cols = line.split('\t');
            let (Some(slot), Some(value), Some(phrase), None) =
                (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(err("expected three tab-separated columns"));
            };
            let slot = SlotType::from_key(slot).ok_or_else(|| err("unknown slot"))?;
            if slot == SlotType::Name {
                return Err(err("the name slot has no features"));
            }
            if value.trim().is_empty() || phrase.trim().is_empty() {
                return Err(err("empty value or phrase"));
            }
            lex.insert(slot, value.trim(), phrase.trim());
        }
        Ok(lex)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AdequacyError> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    pub fn insert(&mut self, slot: SlotType, value: &str, phrase: &str) {
        let phrases = self
            .entries
            .entry(slot)
            .or_default()
            .entry(value.to_string())
            .or_insert_with(|| vec![value.to_lowercase()]);
        let phrase = phrase.to_lowercase();
        if !phrases.contains(&phrase) {
            phrases.push(phrase);
        }
    }

    /// Lowercased phrases for a value, or `None` if it has no entry and
    /// fallback is disabled.
    pub fn phrases(&self, slot: SlotType, value: &str) -> Option<Vec<String>> {
        match self.entries.get(&slot).and_then(|m| m.get(value)) {
            Some(p) => Some(p.clone()),
            None if self.literal_fallback => Some(vec![value.to_lowercase()]),
            None => None,
        }
    }

    /// Whether `utterance` realizes `slot[value]` (case-insensitive).
    pub fn realizes(
        &self,
        slot: SlotType,
        value: &str,
        utterance: &str,
    ) -> Result<bool, AdequacyError> {
        let lowered = utterance.to_lowercase();
        self.realizes_lowered(slot, value, &lowered)
    }

    fn realizes_lowered(
        &self,
        slot: SlotType,
        value: &str,
        lowered: &str,
    ) -> Result<bool, AdequacyError> {
        let phrases =
            self.phrases(slot, value)
                .ok_or_else(|| AdequacyError::LexiconMissingValue {
                    slot,
                    value: value.to_string(),
                })?;
        Ok(phrases.iter().any(|p| lowered.contains(p.as_str())))
    }
}

/// One binary feature per non-name slot, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; NUM_FEATURES]);

impl FeatureVector {
    pub fn get(&self, slot: SlotType) -> Option<f64> {
        SlotType::FEATURE_SLOTS
            .iter()
            .position(|&s| s == slot)
            .map(|i| self.0[i])
    }
}

/// 1 if the slot is absent from the MR or one of its phrases occurs in the
/// utterance, 0 otherwise.
pub fn extract_features(
    mr: &MeaningRepresentation,
    utterance: &str,
    lex: &MatchLexicon,
) -> Result<FeatureVector, AdequacyError> {
    let lowered = utterance.to_lowercase();
    let mut f = [1.0; NUM_FEATURES];
    for (i, slot) in SlotType::FEATURE_SLOTS.into_iter().enumerate() {
        if let Some(value) = mr.get(slot) {
            if !lex.realizes_lowered(slot, value, &lowered)? {
                f[i] = 0.0;
            }
        }
    }
    Ok(FeatureVector(f))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierWeights {
    pub weights: [f64; NUM_FEATURES],
    pub bias: f64,
}

impl ClassifierWeights {
    pub fn zeros() -> Self {
        Self {
            weights: [0.0; NUM_FEATURES],
            bias: 0.0,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `σ(w·f + b)`
pub fn predict(weights: &ClassifierWeights, features: &FeatureVector) -> f64 {
    let z = weights.bias
        + weights
            .weights
            .iter()
            .zip(&features.0)
            .map(|(w, f)| w * f)
            .sum::<f64>();
    sigmoid(z)
}

/// Label 1 iff the predicted probability is at least one half.
pub fn predict_label(weights: &ClassifierWeights, features: &FeatureVector) -> u8 {
    u8::from(predict(weights, features) >= 0.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegConfig {
    pub lr: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    /// Initial weights uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
}

impl Default for LogRegConfig {
    fn default() -> Self {
        Self {
            lr: 0.5,
            epochs: 500,
            l2: 1e-4,
            seed: 0,
            init_scale: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRegReport {
    pub weights: ClassifierWeights,
    /// Objective after each epoch; entry 0 is the initial objective.
    pub loss_history: Vec<f64>,
}

/// Mean negative log-likelihood plus `l2/2 · ‖w‖²`.
pub fn objective(weights: &ClassifierWeights, data: &[(FeatureVector, u8)], l2: f64) -> f64 {
    let n = data.len().max(1) as f64;
    let nll: f64 = data
        .iter()
        .map(|(f, y)| {
            let z = weights.bias
                + weights
                    .weights
                    .iter()
                    .zip(&f.0)
                    .map(|(w, x)| w * x)
                    .sum::<f64>();
            // log(1 + e^z) − y·z, computed stably
            let softplus = if z > 0.0 {
                z + (-z).exp().ln_1p()
            } else {
                z.exp().ln_1p()
            };
            softplus - f64::from(*y) * z
        })
        .sum();
    nll / n + 0.5 * l2 * weights.weights.iter().map(|w| w * w).sum::<f64>()
}

/// Full-batch gradient descent on precomputed features.
pub fn train_logreg_features(
    data: &[(FeatureVector, u8)],
    hyper: &LogRegConfig,
) -> Result<LogRegReport, AdequacyError> {
    let positives = data.iter().filter(|(_, y)| *y == 1).count();
    if positives == 0 || positives == data.len() {
        return Err(AdequacyError::DegenerateLabels);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed);
    let mut w = ClassifierWeights::zeros();
    if hyper.init_scale > 0.0 {
        for x in w.weights.iter_mut() {
            *x = rng.random_range(-hyper.init_scale..=hyper.init_scale);
        }
    }
    let n = data.len() as f64;
    let mut history = vec![objective(&w, data, hyper.l2)];
    for _ in 0..hyper.epochs {
        let mut gw = [0.0; NUM_FEATURES];
        let mut gb = 0.0;
        for (f, y) in data {
            let err = predict(&w, f) - f64::from(*y);
            for (g, x) in gw.iter_mut().zip(&f.0) {
                *g += err * x;
            }
            gb += err;
        }
        for (wi, g) in w.weights.iter_mut().zip(gw) {
            *wi -= hyper.lr * (g / n + hyper.l2 * *wi);
        }
        w.bias -= hyper.lr * gb / n;
        history.push(objective(&w, data, hyper.l2));
    }
    Ok(LogRegReport {
        weights: w,
        loss_history: history,
    })
}

pub fn featurize(
    triplets: &[Triplet],
    lex: &MatchLexicon,
) -> Result<Vec<(FeatureVector, u8)>, AdequacyError> {
    triplets
        .iter()
        .map(|t| Ok((extract_features(&t.mr, &t.rf, lex)?, t.label)))
        .collect()
}

pub fn train_logreg(
    triplets: &[Triplet],
    lex: &MatchLexicon,
    hyper: &LogRegConfig,
) -> Result<LogRegReport, AdequacyError> {
    train_logreg_features(&featurize(triplets, lex)?, hyper)
}

/// Share of examples whose predicted label matches.
pub fn accuracy(weights: &ClassifierWeights, data: &[(FeatureVector, u8)]) -> f64 {
    let hits = data
        .iter()
        .filter(|(f, y)| predict_label(weights, f) == *y)
        .count();
    hits as f64 / data.len().max(1) as f64
}
