//! A minimal autoregressive decoder over token sequences: embedding lookup
//! (vision positions take projected resampler outputs instead), one causal
//! self-attention block with a residual connection, and an output head that
//! may be tied to the embedding table. Small enough to finite-difference,
//! expressive enough for loss to fall during smoke training.

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{ForgeError, Result};
use crate::matrix::{log_softmax_rows, softmax_rows, softmax_rows_backward, Matrix};
use crate::sequencer::{TokenKind, TokenSequence};

/// Decoder weights. Field order is the flat-vector layout contract:
/// embedding, vision projection, w_q, w_k, w_v, w_o, then the head when it
/// is not tied to the embedding.
#[derive(Debug, Clone)]
pub struct DecoderParams {
    pub embedding: Matrix,
    pub vision_proj: Matrix,
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    /// `None` means the head is the transposed embedding (tied).
    pub head: Option<Matrix>,
}

impl DecoderParams {
    /// Seeded Gaussian init, scale 1/sqrt(d). Draw order matches field
    /// order.
    pub fn init(vocab: usize, d_model: usize, tied: bool, seed: u64) -> Result<Self> {
        if vocab == 0 || d_model == 0 {
            return Err(ForgeError::InvalidDims(format!(
                "decoder needs vocab > 0 and d_model > 0, got {vocab}, {d_model}"
            )));
        }
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let scale = 1.0 / (d_model as f64).sqrt();
        let g = |r: usize, c: usize, rng: &mut ChaCha12Rng| Matrix::gaussian(r, c, scale, rng);
        Ok(Self {
            embedding: g(vocab, d_model, &mut rng),
            vision_proj: g(d_model, d_model, &mut rng),
            w_q: g(d_model, d_model, &mut rng),
            w_k: g(d_model, d_model, &mut rng),
            w_v: g(d_model, d_model, &mut rng),
            w_o: g(d_model, d_model, &mut rng),
            head: (!tied).then(|| g(d_model, vocab, &mut rng)),
        })
    }

    /// All parameters zero; uniform next-token distribution everywhere.
    pub fn zeros(vocab: usize, d_model: usize, tied: bool) -> Self {
        Self {
            embedding: Matrix::zeros(vocab, d_model),
            vision_proj: Matrix::zeros(d_model, d_model),
            w_q: Matrix::zeros(d_model, d_model),
            w_k: Matrix::zeros(d_model, d_model),
            w_v: Matrix::zeros(d_model, d_model),
            w_o: Matrix::zeros(d_model, d_model),
            head: (!tied).then(|| Matrix::zeros(d_model, vocab)),
        }
    }

    pub fn vocab(&self) -> usize {
        self.embedding.rows()
    }

    pub fn d_model(&self) -> usize {
        self.embedding.cols()
    }

    pub fn tied(&self) -> bool {
        self.head.is_none()
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.vocab(), self.d_model(), self.tied())
    }

    fn matrices(&self) -> Vec<&Matrix> {
        let mut v = vec![
            &self.embedding,
            &self.vision_proj,
            &self.w_q,
            &self.w_k,
            &self.w_v,
            &self.w_o,
        ];
        if let Some(h) = &self.head {
            v.push(h);
        }
        v
    }

    fn matrices_mut(&mut self) -> Vec<&mut Matrix> {
        let mut v = vec![
            &mut self.embedding,
            &mut self.vision_proj,
            &mut self.w_q,
            &mut self.w_k,
            &mut self.w_v,
            &mut self.w_o,
        ];
        if let Some(h) = &mut self.head {
            v.push(h);
        }
        v
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.matrices()
            .into_iter()
            .flat_map(|m| m.as_slice().iter().copied())
            .collect()
    }

    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        if flat.len() != self.param_count() {
            return Err(ForgeError::ShapeMismatch(format!(
                "flat vector has {} values, decoder holds {}",
                flat.len(),
                self.param_count()
            )));
        }
        let mut out = self.clone();
        let mut at = 0;
        for m in out.matrices_mut() {
            let n = m.rows() * m.cols();
            m.as_mut_slice().copy_from_slice(&flat[at..at + n]);
            at += n;
        }
        Ok(out)
    }

    pub fn param_count(&self) -> usize {
        self.matrices().iter().map(|m| m.rows() * m.cols()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.matrices().iter().all(|m| m.is_finite())
    }

    /// SGD step: `self -= lr * grads`, shapes assumed congruent.
    pub fn apply_gradients(&mut self, grads: &DecoderParams, lr: f64) {
        for (p, g) in self.matrices_mut().into_iter().zip(grads.matrices()) {
            p.add_scaled(g, -lr);
        }
    }

    /// Gradient accumulation: `self += other`.
    pub fn accumulate(&mut self, other: &DecoderParams) {
        self.apply_gradients(other, -1.0);
    }
}

/// Forward cache: everything the backward pass reuses.
pub struct DecoderCache {
    x: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Matrix,
    attn: Matrix,
    h: Matrix,
    logprobs: Matrix,
    vision_in: Matrix,
    vision_slots: Vec<usize>,
}

impl DecoderCache {
    /// Row t holds log-probabilities of the token at position t+1 given
    /// positions 0..=t. Each row sums to 1 in probability space.
    pub fn logprobs(&self) -> &Matrix {
        &self.logprobs
    }
}

fn embed_inputs(
    seq: &TokenSequence,
    vision_rows: &Matrix,
    params: &DecoderParams,
) -> Result<(Matrix, Vec<usize>)> {
    let d = params.d_model();
    let vocab = params.vocab();
    let slots: Vec<usize> = seq
        .kinds
        .iter()
        .enumerate()
        .filter_map(|(t, k)| (*k == TokenKind::Vision).then_some(t))
        .collect();
    if vision_rows.rows() != slots.len() || (!slots.is_empty() && vision_rows.cols() != d) {
        return Err(ForgeError::ShapeMismatch(format!(
            "sequence has {} vision positions, got {} vision token rows of width {}",
            slots.len(),
            vision_rows.rows(),
            vision_rows.cols()
        )));
    }
    let mut x = Matrix::zeros(seq.len(), d);
    let mut vi = 0;
    for t in 0..seq.len() {
        if seq.kinds[t] == TokenKind::Vision {
            let row = vision_rows.row(vi);
            let dst = x.row_mut(t);
            for c in 0..d {
                let mut acc = 0.0;
                for j in 0..d {
                    acc += row[j] * params.vision_proj.get(j, c);
                }
                dst[c] = acc;
            }
            vi += 1;
        } else {
            let id = seq.ids[t] as usize;
            if id >= vocab {
                return Err(ForgeError::OutOfRange(format!(
                    "token id {id} at position {t} exceeds vocab {vocab}"
                )));
            }
            x.row_mut(t).copy_from_slice(params.embedding.row(id));
        }
    }
    Ok((x, slots))
}

/// Runs the decoder over one sequence. `vision_rows` stacks the resampled
/// vision tokens for every Vision position in order; its row count must
/// match the sequence's Vision positions exactly.
pub fn forward_logprobs(
    seq: &TokenSequence,
    vision_rows: &Matrix,
    params: &DecoderParams,
) -> Result<DecoderCache> {
    seq.validate()?;
    if seq.is_empty() {
        return Err(ForgeError::EmptyInput("decoder got an empty sequence".into()));
    }
    let d = params.d_model();
    let (x, vision_slots) = embed_inputs(seq, vision_rows, params)?;
    let n = x.rows();
    let q = x.matmul(&params.w_q);
    let k = x.matmul(&params.w_k);
    let v = x.matmul(&params.w_v);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let mut scores = q.matmul_nt(&k);
    for i in 0..n {
        let row = scores.row_mut(i);
        for (j, s) in row.iter_mut().enumerate() {
            if j > i {
                *s = f64::NEG_INFINITY;
            } else {
                *s *= inv_sqrt_d;
            }
        }
    }
    let probs = softmax_rows(&scores);
    let attn = probs.matmul(&v);
    let o = attn.matmul(&params.w_o);
    let mut h = x.clone();
    h.add_scaled(&o, 1.0);
    let logits = match &params.head {
        Some(head) => h.matmul(head),
        None => h.matmul_nt(&params.embedding),
    };
    Ok(DecoderCache {
        x,
        q,
        k,
        v,
        probs,
        attn,
        h,
        logprobs: log_softmax_rows(&logits),
        vision_in: vision_rows.clone(),
        vision_slots,
    })
}

/// Masked mean negative log-likelihood over a sequence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NllResult {
    pub value: f64,
    /// Positions that contributed loss.
    pub counted: usize,
    /// True when the mask selected nothing; the loss is defined as 0 then.
    pub empty_mask: bool,
}

/// Positions contributing loss: mask-true positions with a predecessor. The
/// token at such a position is the prediction target of the row before it.
fn loss_targets(seq: &TokenSequence) -> impl Iterator<Item = usize> + '_ {
    seq.loss_mask
        .iter()
        .enumerate()
        .filter_map(|(t, &m)| (m && t > 0).then_some(t))
}

/// Mean of -logprob over mask-true positions. Vision and Pad positions are
/// never mask-true in a valid sequence, so they contribute nothing.
pub fn masked_nll(cache: &DecoderCache, seq: &TokenSequence) -> Result<NllResult> {
    let lp = &cache.logprobs;
    if lp.rows() != seq.len() {
        return Err(ForgeError::ShapeMismatch(format!(
            "logprobs cover {} positions, sequence has {}",
            lp.rows(),
            seq.len()
        )));
    }
    let mut total = 0.0;
    let mut counted = 0;
    for t in loss_targets(seq) {
        total -= lp.get(t - 1, seq.ids[t] as usize);
        counted += 1;
    }
    if counted == 0 {
        return Ok(NllResult {
            value: 0.0,
            counted: 0,
            empty_mask: true,
        });
    }
    Ok(NllResult {
        value: total / counted as f64,
        counted,
        empty_mask: false,
    })
}

/// Gradients of [`masked_nll`] with respect to decoder parameters and the
/// vision token rows that entered the forward pass.
pub struct DecoderGradients {
    pub params: DecoderParams,
    pub vision_rows: Matrix,
}

/// Reverse pass for `masked_nll(forward_logprobs(...))`. Returns zero
/// gradients when the mask selected nothing.
pub fn backward_nll(
    cache: &DecoderCache,
    seq: &TokenSequence,
    params: &DecoderParams,
) -> Result<DecoderGradients> {
    let d = params.d_model();
    let vocab = params.vocab();
    let n = cache.logprobs.rows();
    if n != seq.len() {
        return Err(ForgeError::ShapeMismatch(format!(
            "cache covers {} positions, sequence has {}",
            n,
            seq.len()
        )));
    }
    let mut grads = params.zeros_like();
    let mut dvision = Matrix::zeros(cache.vision_in.rows(), cache.vision_in.cols());
    let targets: Vec<usize> = loss_targets(seq).collect();
    if targets.is_empty() {
        return Ok(DecoderGradients {
            params: grads,
            vision_rows: dvision,
        });
    }
    let inv_count = 1.0 / targets.len() as f64;

    // d(mean nll)/d(logits[r]) = (softmax(logits[r]) - onehot(target)) / count
    // for rows with a target, zero elsewhere. softmax = exp(logprobs).
    let mut dlogits = Matrix::zeros(n, vocab);
    for &t in &targets {
        let r = t - 1;
        let lp = cache.logprobs.row(r);
        let dst = dlogits.row_mut(r);
        for c in 0..vocab {
            dst[c] += lp[c].exp() * inv_count;
        }
        dst[seq.ids[t] as usize] -= inv_count;
    }

    // Head (or tied embedding-as-head) and hidden-state gradients.
    let mut dh = match &params.head {
        Some(head) => {
            *grads.head.as_mut().expect("layouts congruent") =
                cache.h.matmul_tn(&dlogits);
            dlogits.matmul_nt(head)
        }
        None => {
            grads.embedding.add_scaled(&dlogits.matmul_tn(&cache.h), 1.0);
            dlogits.matmul(&params.embedding)
        }
    };

    // Attention block, mirroring the forward pass.
    let do_ = dh.clone();
    let dattn = do_.matmul_nt(&params.w_o);
    grads.w_o = cache.attn.matmul_tn(&do_);
    let dprobs = dattn.matmul_nt(&cache.v);
    let dv = cache.probs.matmul_tn(&dattn);
    // Masked score entries have prob 0, so their gradient is 0 already.
    let dscores = softmax_rows_backward(&cache.probs, &dprobs);
    let inv_sqrt_d = 1.0 / (d as f64).sqrt();
    let dq = dscores.matmul(&cache.k).scale(inv_sqrt_d);
    let dk = dscores.matmul_tn(&cache.q).scale(inv_sqrt_d);
    grads.w_q = cache.x.matmul_tn(&dq);
    grads.w_k = cache.x.matmul_tn(&dk);
    grads.w_v = cache.x.matmul_tn(&dv);
    // dx = dh (residual) + projections of the attention-input gradients.
    dh.add_scaled(&dq.matmul_nt(&params.w_q), 1.0);
    dh.add_scaled(&dk.matmul_nt(&params.w_k), 1.0);
    dh.add_scaled(&dv.matmul_nt(&params.w_v), 1.0);

    // Input embedding / vision projection split.
    for (vi, &t) in cache.vision_slots.iter().enumerate() {
        let dx_row = dh.row(t);
        let v_in = cache.vision_in.row(vi);
        for j in 0..d {
            let dst = grads.vision_proj.row_mut(j);
            for c in 0..d {
                dst[c] += v_in[j] * dx_row[c];
            }
        }
        let dst = dvision.row_mut(vi);
        for j in 0..d {
            let mut acc = 0.0;
            for c in 0..d {
                acc += dx_row[c] * params.vision_proj.get(j, c);
            }
            dst[j] = acc;
        }
    }
    for t in 0..n {
        if seq.kinds[t] == TokenKind::Vision {
            continue;
        }
        let id = seq.ids[t] as usize;
        let dx_row = dh.row(t).to_vec();
        let dst = grads.embedding.row_mut(id);
        for c in 0..d {
            dst[c] += dx_row[c];
        }
    }
    Ok(DecoderGradients {
        params: grads,
        vision_rows: dvision,
    })
}
