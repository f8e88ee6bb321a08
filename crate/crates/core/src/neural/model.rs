//! Forward computation and hand-written backpropagation.

use super::linalg::{add_assign, axpy, concat, dot, log_softmax, sigmoid};
use super::params::{AttentionParams, GruParams, ModelParams};
use super::NeuralError;
use crate::dataset::Vocabulary;

struct GruCache {
    x: Vec<f64>,
    h_prev: Vec<f64>,
    z: Vec<f64>,
    r: Vec<f64>,
    n: Vec<f64>,
    rh: Vec<f64>,
}

// z = σ(Wz x + Uz h + bz), r = σ(Wr x + Ur h + br),
// n = tanh(Wn x + Un (r⊙h) + bn), h' = (1−z)⊙n + z⊙h
fn gru_forward(p: &GruParams, x: &[f64], h_prev: &[f64]) -> (Vec<f64>, GruCache) {
    let h = p.hidden();
    let mut a = p.b.clone();
    p.w.mul_vec_add(x, &mut a);
    p.u.mul_vec_add_rows(0..2 * h, h_prev, &mut a[..2 * h]);
    let z: Vec<f64> = a[..h].iter().map(|&v| sigmoid(v)).collect();
    let r: Vec<f64> = a[h..2 * h].iter().map(|&v| sigmoid(v)).collect();
    let rh: Vec<f64> = r.iter().zip(h_prev).map(|(r, h)| r * h).collect();
    p.u.mul_vec_add_rows(2 * h..3 * h, &rh, &mut a[2 * h..]);
    let n: Vec<f64> = a[2 * h..].iter().map(|v| v.tanh()).collect();
    let out = (0..h)
        .map(|i| (1.0 - z[i]) * n[i] + z[i] * h_prev[i])
        .collect();
    let cache = GruCache {
        x: x.to_vec(),
        h_prev: h_prev.to_vec(),
        z,
        r,
        n,
        rh,
    };
    (out, cache)
}

/// Accumulates parameter gradients into `g` and input gradients into `dx`/`dh_prev`.
fn gru_backward(
    p: &GruParams,
    c: &GruCache,
    dh: &[f64],
    g: &mut GruParams,
    dx: &mut [f64],
    dh_prev: &mut [f64],
) {
    let h = p.hidden();
    let mut da = vec![0.0; 3 * h];
    for i in 0..h {
        let (z, n) = (c.z[i], c.n[i]);
        let dn = dh[i] * (1.0 - z);
        let dz = dh[i] * (c.h_prev[i] - n);
        dh_prev[i] += dh[i] * z;
        da[2 * h + i] = dn * (1.0 - n * n);
        da[i] = dz * z * (1.0 - z);
    }
    let mut drh = vec![0.0; h];
    p.u.t_mul_vec_add_rows(2 * h..3 * h, &da[2 * h..], &mut drh);
    g.u.add_outer_rows(2 * h..3 * h, &da[2 * h..], &c.rh);
    for i in 0..h {
        let r = c.r[i];
        dh_prev[i] += drh[i] * r;
        da[h + i] = drh[i] * c.h_prev[i] * r * (1.0 - r);
    }
    g.u.add_outer_rows(0..2 * h, &da[..2 * h], &c.h_prev);
    p.u.t_mul_vec_add_rows(0..2 * h, &da[..2 * h], dh_prev);
    g.w.add_outer(&da, &c.x);
    add_assign(&mut g.b, &da);
    p.w.t_mul_vec_add(&da, dx);
}

/// Encoder output for one source sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    /// `h_j = [forward_j; backward_j]`, one per source position.
    pub states: Vec<Vec<f64>>,
    /// Attention keys `U h_j`.
    pub keys: Vec<Vec<f64>>,
    /// `[last forward state; first backward state]` of the top layer.
    pub summary: Vec<f64>,
}

impl EncodedSource {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }
}

struct EncoderLayerCache {
    fwd: Vec<GruCache>,
    bwd: Vec<GruCache>,
}

fn check_ids(ids: &[u32], vocab_size: usize) -> Result<(), NeuralError> {
    match ids.iter().find(|&&id| id as usize >= vocab_size) {
        Some(&id) => Err(NeuralError::IdOutOfRange { id, vocab_size }),
        None => Ok(()),
    }
}

fn encode_cached(
    params: &ModelParams,
    source: &[u32],
) -> Result<(EncodedSource, Vec<EncoderLayerCache>), NeuralError> {
    let cfg = &params.config;
    check_ids(source, cfg.vocab_size)?;
    if source.is_empty() {
        return Err(NeuralError::EmptySource);
    }
    let n = source.len();
    let hd = cfg.hidden_dim;
    let mut inputs: Vec<Vec<f64>> = source
        .iter()
        .map(|&id| params.embedding.row(id as usize).to_vec())
        .collect();
    let mut caches = Vec::with_capacity(cfg.encoder_layers);
    for (fwd_p, bwd_p) in params.encoder_fwd.iter().zip(&params.encoder_bwd) {
        let mut fwd_states = Vec::with_capacity(n);
        let mut fwd_cache = Vec::with_capacity(n);
        let mut h = vec![0.0; hd];
        for x in &inputs {
            let (next, c) = gru_forward(fwd_p, x, &h);
            fwd_states.push(next.clone());
            fwd_cache.push(c);
            h = next;
        }
        let mut bwd_states = vec![Vec::new(); n];
        let mut bwd_cache: Vec<Option<GruCache>> = (0..n).map(|_| None).collect();
        let mut h = vec![0.0; hd];
        for t in (0..n).rev() {
            let (next, c) = gru_forward(bwd_p, &inputs[t], &h);
            bwd_states[t] = next.clone();
            bwd_cache[t] = Some(c);
            h = next;
        }
        inputs = fwd_states
            .iter()
            .zip(&bwd_states)
            .map(|(f, b)| concat(f, b))
            .collect();
        caches.push(EncoderLayerCache {
            fwd: fwd_cache,
            bwd: bwd_cache.into_iter().map(Option::unwrap).collect(),
        });
    }
    let keys = inputs
        .iter()
        .map(|h| {
            let mut k = vec![0.0; cfg.attention_dim];
            params.attention.u.mul_vec_add(h, &mut k);
            k
        })
        .collect();
    let summary = concat(&inputs[n - 1][..hd], &inputs[0][hd..]);
    Ok((
        EncodedSource {
            states: inputs,
            keys,
            summary,
        },
        caches,
    ))
}

/// Runs the bidirectional encoder over `source`.
pub fn encode(params: &ModelParams, source: &[u32]) -> Result<EncodedSource, NeuralError> {
    encode_cached(params, source).map(|(enc, _)| enc)
}

/// Recurrent state of every decoder layer, bottom first.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderState {
    pub layers: Vec<Vec<f64>>,
}

impl DecoderState {
    pub fn top(&self) -> &[f64] {
        self.layers.last().expect("at least one decoder layer")
    }
}

/// `s_0^l = tanh(B_l · summary + b_l)` per decoder layer.
pub fn initial_state(params: &ModelParams, enc: &EncodedSource) -> DecoderState {
    DecoderState {
        layers: params
            .bridge
            .iter()
            .map(|d| {
                let mut s = d.b.clone();
                d.w.mul_vec_add(&enc.summary, &mut s);
                s.iter_mut().for_each(|v| *v = v.tanh());
                s
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Attention {
    pub weights: Vec<f64>,
    pub context: Vec<f64>,
    /// `tanh(W s + U h_j)` per position.
    hidden: Vec<Vec<f64>>,
}

/// Additive attention of `query` (a decoder state) over the encoder states.
pub fn attend(params: &ModelParams, query: &[f64], enc: &EncodedSource) -> Attention {
    attend_with(&params.attention, query, enc)
}

fn attend_with(att: &AttentionParams, query: &[f64], enc: &EncodedSource) -> Attention {
    let mut q = vec![0.0; att.v.len()];
    att.w.mul_vec_add(query, &mut q);
    let hidden: Vec<Vec<f64>> = enc
        .keys
        .iter()
        .map(|k| q.iter().zip(k).map(|(a, b)| (a + b).tanh()).collect())
        .collect();
    let scores: Vec<f64> = hidden.iter().map(|t| dot(&att.v, t)).collect();
    let weights = super::linalg::softmax(&scores);
    let mut context = vec![0.0; enc.states[0].len()];
    for (w, h) in weights.iter().zip(&enc.states) {
        axpy(*w, h, &mut context);
    }
    Attention {
        weights,
        context,
        hidden,
    }
}

#[allow(clippy::too_many_arguments)]
fn attend_backward(
    att: &AttentionParams,
    a: &Attention,
    query: &[f64],
    enc: &EncodedSource,
    dctx: &[f64],
    g: &mut AttentionParams,
    d_query: &mut [f64],
    d_states: &mut [Vec<f64>],
    d_keys: &mut [Vec<f64>],
) {
    let dalpha: Vec<f64> = enc.states.iter().map(|h| dot(dctx, h)).collect();
    for (ds, &w) in d_states.iter_mut().zip(&a.weights) {
        axpy(w, dctx, ds);
    }
    let mean: f64 = a.weights.iter().zip(&dalpha).map(|(w, d)| w * d).sum();
    let mut dq = vec![0.0; att.v.len()];
    for (j, t) in a.hidden.iter().enumerate() {
        let de = a.weights[j] * (dalpha[j] - mean);
        if de == 0.0 {
            continue;
        }
        axpy(de, t, &mut g.v);
        for (k, (&tk, &vk)) in t.iter().zip(&att.v).enumerate() {
            let da = de * vk * (1.0 - tk * tk);
            dq[k] += da;
            d_keys[j][k] += da;
        }
    }
    g.w.add_outer(&dq, query);
    att.w.t_mul_vec_add(&dq, d_query);
}

struct StepCache {
    prev_id: u32,
    query: Vec<f64>,
    attention: Attention,
    grus: Vec<GruCache>,
    out_in: Vec<f64>,
    log_probs: Vec<f64>,
}

fn step_cached(
    params: &ModelParams,
    prev_id: u32,
    state: &DecoderState,
    enc: &EncodedSource,
) -> (DecoderState, StepCache) {
    let query = state.top().to_vec();
    let attention = attend(params, &query, enc);
    let mut x = concat(params.embedding.row(prev_id as usize), &attention.context);
    let mut layers = Vec::with_capacity(params.decoder.len());
    let mut grus = Vec::with_capacity(params.decoder.len());
    for (p, s) in params.decoder.iter().zip(&state.layers) {
        let (h, c) = gru_forward(p, &x, s);
        grus.push(c);
        layers.push(h.clone());
        x = h;
    }
    let out_in = concat(&x, &attention.context);
    let mut logits = params.output.b.clone();
    params.output.w.mul_vec_add(&out_in, &mut logits);
    let log_probs = log_softmax(&logits);
    (
        DecoderState { layers },
        StepCache {
            prev_id,
            query,
            attention,
            grus,
            out_in,
            log_probs,
        },
    )
}

/// One decoder step: log-probabilities of the next character and the new state.
pub fn decode_step(
    params: &ModelParams,
    prev_id: u32,
    state: &DecoderState,
    enc: &EncodedSource,
) -> Result<(Vec<f64>, DecoderState), NeuralError> {
    check_ids(&[prev_id], params.config.vocab_size)?;
    let (next, cache) = step_cached(params, prev_id, state, enc);
    Ok((cache.log_probs, next))
}

/// Teacher-forced statistics of one sequence.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SequenceStats {
    /// Summed negative log-likelihood in nats.
    pub loss: f64,
    /// Target positions where the argmax prediction was correct.
    pub correct: usize,
    pub count: usize,
}

impl SequenceStats {
    pub fn accumulate(&mut self, other: &SequenceStats) {
        self.loss += other.loss;
        self.correct += other.correct;
        self.count += other.count;
    }
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Teacher-forced loss `Σ_t −log P(target_t | target_<t, source)`.
///
/// `target` should end with EOS; decoding starts from BOS. When `grads` is
/// given, the gradient of `weight · loss` is added to it. The returned loss
/// is unweighted.
pub fn sequence_gradient(
    params: &ModelParams,
    source: &[u32],
    target: &[u32],
    weight: f64,
    grads: Option<&mut ModelParams>,
) -> Result<SequenceStats, NeuralError> {
    let cfg = &params.config;
    check_ids(target, cfg.vocab_size)?;
    let (enc, enc_cache) = encode_cached(params, source)?;
    let init = initial_state(params, &enc);

    let mut stats = SequenceStats::default();
    let mut steps = Vec::with_capacity(target.len());
    let mut state = init.clone();
    for (t, &y) in target.iter().enumerate() {
        let prev = if t == 0 {
            Vocabulary::BOS
        } else {
            target[t - 1]
        };
        let (next, cache) = step_cached(params, prev, &state, &enc);
        stats.loss -= cache.log_probs[y as usize];
        if argmax(&cache.log_probs) == y as usize {
            stats.correct += 1;
        }
        stats.count += 1;
        steps.push(cache);
        state = next;
    }
    let Some(g) = grads else {
        return Ok(stats);
    };

    let hd = cfg.hidden_dim;
    let ed = cfg.embed_dim;
    let top = cfg.decoder_layers - 1;
    let n = enc.len();
    let mut d_states = vec![vec![0.0; 2 * hd]; n];
    let mut d_keys = vec![vec![0.0; cfg.attention_dim]; n];
    let mut ds_next = vec![vec![0.0; hd]; cfg.decoder_layers];

    for (t, c) in steps.iter().enumerate().rev() {
        let y = target[t] as usize;
        let mut dlogits: Vec<f64> = c.log_probs.iter().map(|lp| weight * lp.exp()).collect();
        dlogits[y] -= weight;
        g.output.w.add_outer(&dlogits, &c.out_in);
        add_assign(&mut g.output.b, &dlogits);
        let mut d_out_in = vec![0.0; 3 * hd];
        params.output.w.t_mul_vec_add(&dlogits, &mut d_out_in);
        let mut dctx = d_out_in[hd..].to_vec();

        let mut ds = std::mem::take(&mut ds_next);
        add_assign(&mut ds[top], &d_out_in[..hd]);
        let mut ds_prev = vec![vec![0.0; hd]; cfg.decoder_layers];
        for l in (0..cfg.decoder_layers).rev() {
            let p = &params.decoder[l];
            let mut dx = vec![0.0; p.w.cols];
            let dh = std::mem::take(&mut ds[l]);
            gru_backward(
                p,
                &c.grus[l],
                &dh,
                &mut g.decoder[l],
                &mut dx,
                &mut ds_prev[l],
            );
            if l > 0 {
                add_assign(&mut ds[l - 1], &dx);
            } else {
                add_assign(g.embedding.row_mut(c.prev_id as usize), &dx[..ed]);
                add_assign(&mut dctx, &dx[ed..]);
            }
        }
        let mut d_query = vec![0.0; hd];
        attend_backward(
            &params.attention,
            &c.attention,
            &c.query,
            &enc,
            &dctx,
            &mut g.attention,
            &mut d_query,
            &mut d_states,
            &mut d_keys,
        );
        add_assign(&mut ds_prev[top], &d_query);
        ds_next = ds_prev;
    }

    // bridge
    let mut d_summary = vec![0.0; 2 * hd];
    for (l, ds) in ds_next.iter().enumerate() {
        let s0 = &init.layers[l];
        let dpre: Vec<f64> = ds.iter().zip(s0).map(|(d, s)| d * (1.0 - s * s)).collect();
        g.bridge[l].w.add_outer(&dpre, &enc.summary);
        add_assign(&mut g.bridge[l].b, &dpre);
        params.bridge[l].w.t_mul_vec_add(&dpre, &mut d_summary);
    }
    add_assign(&mut d_states[n - 1][..hd], &d_summary[..hd]);
    add_assign(&mut d_states[0][hd..], &d_summary[hd..]);

    for (j, dk) in d_keys.iter().enumerate() {
        g.attention.u.add_outer(dk, &enc.states[j]);
        params.attention.u.t_mul_vec_add(dk, &mut d_states[j]);
    }

    let mut d_out = d_states;
    for l in (0..cfg.encoder_layers).rev() {
        let cache = &enc_cache[l];
        let in_dim = params.encoder_fwd[l].w.cols;
        let mut d_in = vec![vec![0.0; in_dim]; n];
        let mut carry = vec![0.0; hd];
        for t in (0..n).rev() {
            let mut dh = d_out[t][..hd].to_vec();
            add_assign(&mut dh, &carry);
            carry.iter_mut().for_each(|v| *v = 0.0);
            gru_backward(
                &params.encoder_fwd[l],
                &cache.fwd[t],
                &dh,
                &mut g.encoder_fwd[l],
                &mut d_in[t],
                &mut carry,
            );
        }
        let mut carry = vec![0.0; hd];
        for t in 0..n {
            let mut dh = d_out[t][hd..].to_vec();
            add_assign(&mut dh, &carry);
            carry.iter_mut().for_each(|v| *v = 0.0);
            gru_backward(
                &params.encoder_bwd[l],
                &cache.bwd[t],
                &dh,
                &mut g.encoder_bwd[l],
                &mut d_in[t],
                &mut carry,
            );
        }
        d_out = d_in;
    }
    for (t, &id) in source.iter().enumerate() {
        add_assign(g.embedding.row_mut(id as usize), &d_out[t]);
    }
    Ok(stats)
}
