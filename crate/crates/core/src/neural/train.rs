//! Teacher-forced training with Adam and global-norm gradient clipping.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::{sequence_gradient, SequenceStats};
use super::params::ModelParams;
use super::{ModelConfig, NeuralError};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub epochs: usize,
    /// Global gradient-norm clip; `0` disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
    pub batch_size: usize,
    /// Parameters start uniform in `[-init_scale, init_scale]`.
    pub init_scale: f64,
    /// Stop after the first epoch whose teacher-forced accuracy reaches this.
    pub target_accuracy: Option<f64>,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            epochs: 10,
            clip_norm: 5.0,
            seed: 0,
            batch_size: 1,
            init_scale: 0.08,
            target_accuracy: None,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    /// 1-based.
    pub epoch: usize,
    /// Mean per-character negative log-likelihood.
    pub loss: f64,
    /// Teacher-forced next-character accuracy.
    pub char_accuracy: f64,
}

impl std::fmt::Display for EpochStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} loss={:.6} char_accuracy={:.6}",
            self.epoch, self.loss, self.char_accuracy
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub params: ModelParams,
    pub history: Vec<EpochStats>,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, cfg: &TrainConfig) {
        self.t += 1;
        let bc1 = 1.0 - cfg.beta1.powi(self.t);
        let bc2 = 1.0 - cfg.beta2.powi(self.t);
        let step = cfg.lr * bc2.sqrt() / bc1;
        let mut i = 0;
        for ((_, _, p), (_, _, g)) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            for (pv, &gv) in p.iter_mut().zip(g) {
                self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * gv;
                self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * gv * gv;
                *pv -= step * self.m[i] / (self.v[i].sqrt() + cfg.eps);
                i += 1;
            }
        }
    }
}

fn clip(grads: &mut ModelParams, max_norm: f64) {
    if max_norm <= 0.0 {
        return;
    }
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|(_, _, v)| v.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
}

/// Mean per-character loss and teacher-forced accuracy without updating.
pub fn evaluate(
    params: &ModelParams,
    pairs: &[(Vec<u32>, Vec<u32>)],
) -> Result<EpochStats, NeuralError> {
    let mut total = SequenceStats::default();
    for (src, tgt) in pairs {
        total.accumulate(&sequence_gradient(params, src, tgt, 1.0, None)?);
    }
    Ok(EpochStats {
        epoch: 0,
        loss: total.loss / total.count.max(1) as f64,
        char_accuracy: total.correct as f64 / total.count.max(1) as f64,
    })
}

pub fn train(
    config: &ModelConfig,
    pairs: &[(Vec<u32>, Vec<u32>)],
    hyper: &TrainConfig,
) -> Result<TrainReport, NeuralError> {
    train_with(config, pairs, hyper, |_| {})
}

/// Trains from a fresh initialization; `on_epoch` sees every epoch record.
///
/// Targets must already end with EOS.
pub fn train_with(
    config: &ModelConfig,
    pairs: &[(Vec<u32>, Vec<u32>)],
    hyper: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainReport, NeuralError> {
    if pairs.is_empty() {
        return Err(NeuralError::EmptyTrainingSet);
    }
    let mut params = ModelParams::init_uniform(config, hyper.init_scale, hyper.seed)?;
    let mut adam = Adam::new(params.num_parameters());
    let mut rng = ChaCha8Rng::seed_from_u64(hyper.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let batch = hyper.batch_size.max(1);
    let mut history = Vec::with_capacity(hyper.epochs);

    for epoch in 1..=hyper.epochs {
        order.shuffle(&mut rng);
        let mut per_pair = vec![SequenceStats::default(); pairs.len()];
        for chunk in order.chunks(batch) {
            let chars: usize = chunk.iter().map(|&i| pairs[i].1.len()).sum();
            let weight = 1.0 / chars.max(1) as f64;
            let mut grads = params.zeros_like();
            for &i in chunk {
                let (src, tgt) = &pairs[i];
                let stats = sequence_gradient(&params, src, tgt, weight, Some(&mut grads))?;
                if !stats.loss.is_finite() {
                    return Err(NeuralError::NonFiniteLoss {
                        epoch,
                        example: i,
                        loss: stats.loss,
                    });
                }
                per_pair[i] = stats;
            }
            clip(&mut grads, hyper.clip_norm);
            adam.step(&mut params, &grads, hyper);
        }
        // reduce in index order so the trajectory does not depend on shuffling
        let mut total = SequenceStats::default();
        for s in &per_pair {
            total.accumulate(s);
        }
        let stats = EpochStats {
            epoch,
            loss: total.loss / total.count.max(1) as f64,
            char_accuracy: total.correct as f64 / total.count.max(1) as f64,
        };
        on_epoch(&stats);
        history.push(stats);
        if !params.all_finite() {
            return Err(NeuralError::NonFiniteLoss {
                epoch,
                example: usize::MAX,
                loss: f64::NAN,
            });
        }
        if hyper
            .target_accuracy
            .is_some_and(|t| stats.char_accuracy >= t)
        {
            break;
        }
    }
    Ok(TrainReport { params, history })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pairs() -> Vec<(Vec<u32>, Vec<u32>)> {
        vec![
            (vec![4, 5, 6], vec![6, 5, 4, 2]),
            (vec![5, 7], vec![7, 5, 2]),
            (vec![6, 6, 4], vec![4, 6, 6, 2]),
        ]
    }

    #[test]
    fn zero_learning_rate_keeps_parameters() {
        let cfg = ModelConfig::tiny(8);
        let hyper = TrainConfig {
            lr: 0.0,
            epochs: 3,
            ..Default::default()
        };
        let init = ModelParams::init_uniform(&cfg, hyper.init_scale, hyper.seed).unwrap();
        let report = train(&cfg, &pairs(), &hyper).unwrap();
        assert_eq!(report.params.flatten(), init.flatten());
        let l = report.history[0].loss;
        assert!(report.history.iter().all(|e| e.loss == l));
    }

    #[test]
    fn initial_loss_is_near_uniform() {
        let cfg = ModelConfig::tiny(8);
        let p = ModelParams::init_uniform(&cfg, 0.01, 3).unwrap();
        let e = evaluate(&p, &pairs()).unwrap();
        assert!((e.loss - (8f64).ln()).abs() < 0.01, "{}", e.loss);
    }

    #[test]
    fn overfits_a_single_pair() {
        let mut cfg = ModelConfig::tiny(8);
        cfg.hidden_dim = 16;
        cfg.attention_dim = 16;
        cfg.embed_dim = 8;
        let data = vec![(vec![4, 5, 6, 7], vec![7, 6, 5, 4, 2])];
        let hyper = TrainConfig {
            lr: 0.01,
            epochs: 300,
            ..Default::default()
        };
        let report = train(&cfg, &data, &hyper).unwrap();
        let fin = evaluate(&report.params, &data).unwrap();
        assert_eq!(fin.char_accuracy, 1.0);
        assert!(fin.loss < 0.1 * report.history[0].loss);
        let out = super::super::greedy_decode(&report.params, &data[0].0, 10).unwrap();
        assert_eq!(out, vec![7, 6, 5, 4]);
    }

    #[test]
    fn training_is_deterministic() {
        let cfg = ModelConfig::tiny(8);
        let hyper = TrainConfig {
            lr: 0.01,
            epochs: 5,
            batch_size: 2,
            seed: 17,
            ..Default::default()
        };
        let a = train(&cfg, &pairs(), &hyper).unwrap();
        let b = train(&cfg, &pairs(), &hyper).unwrap();
        assert_eq!(a.history, b.history);
        assert_eq!(a.params.flatten(), b.params.flatten());
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(matches!(
            train(&ModelConfig::tiny(8), &[], &TrainConfig::default()),
            Err(NeuralError::EmptyTrainingSet)
        ));
    }
}
