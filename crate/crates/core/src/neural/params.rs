use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::linalg::Matrix;
use super::{ModelConfig, NeuralError};
use crate::dataset::Tensor;

/// Affine map `w·x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub w: Matrix,
    pub b: Vec<f64>,
}

impl Dense {
    fn zeros(out: usize, input: usize) -> Self {
        Self {
            w: Matrix::zeros(out, input),
            b: vec![0.0; out],
        }
    }
}

/// GRU weights with the three gates stacked as rows `[update; reset; candidate]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GruParams {
    /// `3H × input`
    pub w: Matrix,
    /// `3H × H`
    pub u: Matrix,
    /// `3H`
    pub b: Vec<f64>,
}

impl GruParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        Self {
            w: Matrix::zeros(3 * hidden, input),
            u: Matrix::zeros(3 * hidden, hidden),
            b: vec![0.0; 3 * hidden],
        }
    }

    pub fn hidden(&self) -> usize {
        self.u.cols
    }
}

/// Additive attention `e_j = v · tanh(W s + U h_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `A × H`, applied to the decoder state.
    pub w: Matrix,
    /// `A × 2H`, applied to encoder states.
    pub u: Matrix,
    /// `A`
    pub v: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    /// `V × E`, shared by source and target characters.
    pub embedding: Matrix,
    pub encoder_fwd: Vec<GruParams>,
    pub encoder_bwd: Vec<GruParams>,
    /// One map per decoder layer from `[last fwd state; first bwd state]`
    /// to that layer's initial state.
    pub bridge: Vec<Dense>,
    pub decoder: Vec<GruParams>,
    pub attention: AttentionParams,
    /// `V × (H + 2H)` over `[top decoder state; context]`.
    pub output: Dense,
}

impl ModelParams {
    pub fn zeros(config: &ModelConfig) -> Result<Self, NeuralError> {
        config.validate()?;
        let c = config;
        let h = c.hidden_dim;
        let enc_in = |l: usize| if l == 0 { c.embed_dim } else { 2 * h };
        let dec_in = |l: usize| if l == 0 { c.embed_dim + 2 * h } else { h };
        Ok(Self {
            config: c.clone(),
            embedding: Matrix::zeros(c.vocab_size, c.embed_dim),
            encoder_fwd: (0..c.encoder_layers)
                .map(|l| GruParams::zeros(enc_in(l), h))
                .collect(),
            encoder_bwd: (0..c.encoder_layers)
                .map(|l| GruParams::zeros(enc_in(l), h))
                .collect(),
            bridge: (0..c.decoder_layers)
                .map(|_| Dense::zeros(h, 2 * h))
                .collect(),
            decoder: (0..c.decoder_layers)
                .map(|l| GruParams::zeros(dec_in(l), h))
                .collect(),
            attention: AttentionParams {
                w: Matrix::zeros(c.attention_dim, h),
                u: Matrix::zeros(c.attention_dim, 2 * h),
                v: vec![0.0; c.attention_dim],
            },
            output: Dense::zeros(c.vocab_size, 3 * h),
        })
    }

    /// Every parameter drawn uniformly from `[-scale, scale]`.
    pub fn init_uniform(config: &ModelConfig, scale: f64, seed: u64) -> Result<Self, NeuralError> {
        let mut params = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (_, _, values) in params.tensors_mut() {
            for v in values.iter_mut() {
                *v = rng.random_range(-scale..=scale);
            }
        }
        Ok(params)
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config).expect("config validated at construction")
    }

    /// `(name, shape, values)` for every tensor, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, Vec<usize>, &[f64])> {
        let mut out: Vec<(String, Vec<usize>, &[f64])> = Vec::new();
        fn mat(name: String, m: &Matrix) -> (String, Vec<usize>, &[f64]) {
            (name, vec![m.rows, m.cols], m.data.as_slice())
        }
        out.push(mat("embedding".into(), &self.embedding));
        for (dir, layers) in [("fwd", &self.encoder_fwd), ("bwd", &self.encoder_bwd)] {
            for (l, g) in layers.iter().enumerate() {
                out.push(mat(format!("encoder.{dir}.{l}.w"), &g.w));
                out.push(mat(format!("encoder.{dir}.{l}.u"), &g.u));
                out.push((format!("encoder.{dir}.{l}.b"), vec![g.b.len()], &g.b));
            }
        }
        for (l, d) in self.bridge.iter().enumerate() {
            out.push(mat(format!("bridge.{l}.w"), &d.w));
            out.push((format!("bridge.{l}.b"), vec![d.b.len()], &d.b));
        }
        for (l, g) in self.decoder.iter().enumerate() {
            out.push(mat(format!("decoder.{l}.w"), &g.w));
            out.push(mat(format!("decoder.{l}.u"), &g.u));
            out.push((format!("decoder.{l}.b"), vec![g.b.len()], &g.b));
        }
        out.push(mat("attention.w".into(), &self.attention.w));
        out.push(mat("attention.u".into(), &self.attention.u));
        out.push((
            "attention.v".into(),
            vec![self.attention.v.len()],
            &self.attention.v,
        ));
        out.push(mat("output.w".into(), &self.output.w));
        out.push(("output.b".into(), vec![self.output.b.len()], &self.output.b));
        out
    }

    /// Mutable counterpart of [`tensors`](Self::tensors), same order.
    pub fn tensors_mut(&mut self) -> Vec<(String, Vec<usize>, &mut [f64])> {
        let mut out: Vec<(String, Vec<usize>, &mut [f64])> = Vec::new();
        fn mat(name: String, m: &mut Matrix) -> (String, Vec<usize>, &mut [f64]) {
            (name, vec![m.rows, m.cols], m.data.as_mut_slice())
        }
        fn vector(name: String, v: &mut [f64]) -> (String, Vec<usize>, &mut [f64]) {
            (name, vec![v.len()], v)
        }
        out.push(mat("embedding".into(), &mut self.embedding));
        for (dir, layers) in [
            ("fwd", &mut self.encoder_fwd),
            ("bwd", &mut self.encoder_bwd),
        ] {
            for (l, g) in layers.iter_mut().enumerate() {
                out.push(mat(format!("encoder.{dir}.{l}.w"), &mut g.w));
                out.push(mat(format!("encoder.{dir}.{l}.u"), &mut g.u));
                out.push(vector(format!("encoder.{dir}.{l}.b"), &mut g.b));
            }
        }
        for (l, d) in self.bridge.iter_mut().enumerate() {
            out.push(mat(format!("bridge.{l}.w"), &mut d.w));
            out.push(vector(format!("bridge.{l}.b"), &mut d.b));
        }
        for (l, g) in self.decoder.iter_mut().enumerate() {
            out.push(mat(format!("decoder.{l}.w"), &mut g.w));
            out.push(mat(format!("decoder.{l}.u"), &mut g.u));
            out.push(vector(format!("decoder.{l}.b"), &mut g.b));
        }
        out.push(mat("attention.w".into(), &mut self.attention.w));
        out.push(mat("attention.u".into(), &mut self.attention.u));
        out.push(vector("attention.v".into(), &mut self.attention.v));
        out.push(mat("output.w".into(), &mut self.output.w));
        out.push(vector("output.b".into(), &mut self.output.b));
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, _, v)| v.len()).sum()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors()
            .into_iter()
            .flat_map(|(_, _, v)| v.iter().copied())
            .collect()
    }

    pub fn all_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|(_, _, v)| v.iter().all(|x| x.is_finite()))
    }

    /// Multiplies every parameter by `factor`.
    pub fn scale(&mut self, factor: f64) {
        for (_, _, v) in self.tensors_mut() {
            v.iter_mut().for_each(|x| *x *= factor);
        }
    }

    pub fn to_tensors(&self) -> BTreeMap<String, Tensor> {
        self.tensors()
            .into_iter()
            .map(|(name, shape, values)| (name, Tensor::new(shape, values.to_vec())))
            .collect()
    }

    pub fn from_tensors(
        config: &ModelConfig,
        tensors: &BTreeMap<String, Tensor>,
    ) -> Result<Self, NeuralError> {
        let mut params = Self::zeros(config)?;
        for (name, shape, values) in params.tensors_mut() {
            let t = tensors
                .get(&name)
                .ok_or_else(|| NeuralError::BadTensor(name.clone(), "missing".into()))?;
            if t.shape != shape || t.values.len() != values.len() {
                return Err(NeuralError::BadTensor(
                    name,
                    format!("expected shape {shape:?}, found {:?}", t.shape),
                ));
            }
            values.copy_from_slice(&t.values);
        }
        if tensors.len() != params.tensors().len() {
            return Err(NeuralError::BadTensor(
                "*".into(),
                "unexpected extra tensors".into(),
            ));
        }
        Ok(params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let mut cfg = ModelConfig::tiny(6);
        cfg.encoder_layers = 2;
        let p = ModelParams::zeros(&cfg).unwrap();
        assert_eq!(p.encoder_fwd[0].w.cols, 4);
        assert_eq!(p.encoder_fwd[1].w.cols, 10);
        assert_eq!(p.decoder[0].w.cols, 4 + 10);
        assert_eq!(p.decoder[1].w.cols, 5);
        assert_eq!(p.output.w.rows, 6);
        assert_eq!(p.output.w.cols, 15);
        let names: Vec<_> = p.tensors().into_iter().map(|t| t.0).collect();
        let mut dedup = names.clone();
        dedup.sort();
        dedup.dedup();
        assert_eq!(dedup.len(), names.len());
    }

    #[test]
    fn tensor_round_trip() {
        let cfg = ModelConfig::tiny(7);
        let p = ModelParams::init_uniform(&cfg, 0.08, 3).unwrap();
        assert!(p.flatten().iter().all(|x| x.abs() <= 0.08));
        let back = ModelParams::from_tensors(&cfg, &p.to_tensors()).unwrap();
        assert_eq!(back, p);

        let mut broken = p.to_tensors();
        broken.get_mut("output.b").unwrap().shape = vec![3];
        assert!(ModelParams::from_tensors(&cfg, &broken).is_err());
    }

    #[test]
    fn rejects_zero_dims() {
        let mut cfg = ModelConfig::tiny(6);
        cfg.hidden_dim = 0;
        assert!(ModelParams::zeros(&cfg).is_err());
    }
}
