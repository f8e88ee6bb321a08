//! Central finite-difference verification of the analytic gradient.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::model::sequence_gradient;
use super::params::ModelParams;
use super::NeuralError;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckOptions {
    pub epsilon: f64,
    /// Check a seeded random subset of this many coordinates; `None` checks all.
    pub sample: Option<usize>,
    pub seed: u64,
    /// Denominator floor for the relative error. Central differences at
    /// `ε = 1e-5` carry ~1e-10 of rounding noise, so coordinates with
    /// `|g| < floor` are effectively judged by absolute error.
    pub floor: f64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-5,
            sample: None,
            seed: 0,
            floor: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// `max |a − n| / max(|a|, |n|, floor)` over checked coordinates.
    pub max_relative_error: f64,
    pub max_absolute_error: f64,
    pub checked: usize,
    /// Name of the tensor holding the worst coordinate.
    pub worst_tensor: String,
    /// Analytic gradient, flattened in [`ModelParams::tensors`] order.
    pub analytic: Vec<f64>,
}

/// Compares the analytic gradient of the sequence loss against central
/// differences `(L(θ+ε) − L(θ−ε)) / 2ε`.
pub fn gradient_check(
    params: &ModelParams,
    source: &[u32],
    target: &[u32],
    opts: &GradCheckOptions,
) -> Result<GradCheckReport, NeuralError> {
    let mut grads = params.zeros_like();
    sequence_gradient(params, source, target, 1.0, Some(&mut grads))?;
    let analytic = grads.flatten();
    let names: Vec<(String, usize)> = params
        .tensors()
        .into_iter()
        .map(|(n, _, v)| (n, v.len()))
        .collect();

    let total = analytic.len();
    let coords: Vec<usize> = match opts.sample {
        Some(k) if k < total => {
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
            let mut idx = sample(&mut rng, total, k).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..total).collect(),
    };

    let mut probe = params.clone();
    let loss_at = |p: &ModelParams| -> Result<f64, NeuralError> {
        Ok(sequence_gradient(p, source, target, 1.0, None)?.loss)
    };
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        max_absolute_error: 0.0,
        checked: coords.len(),
        worst_tensor: String::new(),
        analytic: analytic.clone(),
    };
    for &c in &coords {
        let original = read(&probe, c);
        write(&mut probe, c, original + opts.epsilon);
        let plus = loss_at(&probe)?;
        write(&mut probe, c, original - opts.epsilon);
        let minus = loss_at(&probe)?;
        write(&mut probe, c, original);

        let numeric = (plus - minus) / (2.0 * opts.epsilon);
        let a = analytic[c];
        let abs = (a - numeric).abs();
        let rel = abs / a.abs().max(numeric.abs()).max(opts.floor);
        report.max_absolute_error = report.max_absolute_error.max(abs);
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_tensor = tensor_of(&names, c);
        }
    }
    Ok(report)
}

fn tensor_of(names: &[(String, usize)], mut coord: usize) -> String {
    for (name, len) in names {
        if coord < *len {
            return name.clone();
        }
        coord -= len;
    }
    String::new()
}

fn read(p: &ModelParams, mut coord: usize) -> f64 {
    for (_, _, v) in p.tensors() {
        if coord < v.len() {
            return v[coord];
        }
        coord -= v.len();
    }
    panic!("coordinate out of range")
}

fn write(p: &mut ModelParams, mut coord: usize, value: f64) {
    for (_, _, v) in p.tensors_mut() {
        if coord < v.len() {
            v[coord] = value;
            return;
        }
        coord -= v.len();
    }
    panic!("coordinate out of range")
}

#[cfg(test)]
mod tests {
    use super::super::ModelConfig;
    use super::*;

    #[test]
    fn tiny_model_matches_finite_differences() {
        for seed in 0..3 {
            let p = ModelParams::init_uniform(&ModelConfig::tiny(6), 0.5, seed).unwrap();
            let r = gradient_check(
                &p,
                &[4, 5, 3, 4, 5],
                &[5, 4, 4, 3, 2],
                &GradCheckOptions::default(),
            )
            .unwrap();
            assert_eq!(r.checked, p.num_parameters());
            assert!(r.max_relative_error < 1e-6, "{r:?}");
            assert!(r.max_absolute_error < 1e-8);
        }
    }

    #[test]
    fn unused_embedding_rows_have_zero_gradient() {
        let p = ModelParams::init_uniform(&ModelConfig::tiny(8), 0.3, 4).unwrap();
        let mut g = p.zeros_like();
        sequence_gradient(&p, &[4, 5], &[4, 2], 1.0, Some(&mut g)).unwrap();
        // only the source ids, BOS and the teacher-forced prefix are embedded
        for id in [0usize, 2, 3, 6, 7] {
            assert!(g.embedding.row(id).iter().all(|&x| x == 0.0));
        }
        assert!(g.embedding.row(4).iter().any(|&x| x != 0.0));
    }

    #[test]
    fn gradient_is_linear_in_weight() {
        let p = ModelParams::init_uniform(&ModelConfig::tiny(6), 0.3, 9).unwrap();
        let mut g1 = p.zeros_like();
        let mut g2 = p.zeros_like();
        let a = sequence_gradient(&p, &[4, 5, 3], &[5, 2], 1.0, Some(&mut g1)).unwrap();
        let b = sequence_gradient(&p, &[4, 5, 3], &[5, 2], 2.0, Some(&mut g2)).unwrap();
        assert_eq!(a.loss, b.loss);
        for (x, y) in g1.flatten().iter().zip(g2.flatten()) {
            assert!((2.0 * x - y).abs() <= 1e-15 * y.abs().max(1.0));
        }
    }
}
