//! Perceiver resampler: m learned query latents cross-attend to patch
//! embeddings, compressing n vision tokens per patch down to m.
//!
//! Normative equation set, pinned here because the cited design is named
//! without equations. Per layer, with z the current latents and x the patch
//! embeddings:
//!
//! ```text
//! kv = concat(x, z)                 (rows; instruction rows appended in
//!                                    instruction-aware mode)
//! z  = z + MHCA(q = z, k = kv, v = kv)    scores scaled by 1/sqrt(d/h)
//! z  = z + W2 * gelu(W1 * layer_norm(z))
//! ```
//!
//! Attention carries no layer norm of its own and no projection biases; the
//! single per-layer norm sits in front of the feed-forward block. Three
//! sampling modes share this core: per-patch (each patch resampled
//! independently, outputs concatenated), fixed-sampling (all patches
//! concatenated into one sequence, resampled once), and instruction-aware
//! (per-patch, with instruction embeddings as extra key/value rows that are
//! never emitted).

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::matrix::{
    gelu_backward, gelu_matrix, layer_norm, layer_norm_backward, softmax_rows,
    softmax_rows_backward, LayerNormCache, Matrix,
};

/// Geometry and seed for a resampler.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResamplerConfig {
    /// Learned query count m; every patch compresses to this many tokens.
    pub queries: usize,
    /// Embedding width d.
    pub d_model: usize,
    /// Cross-attention + FFN layer count.
    pub layers: usize,
    /// Attention heads; must divide d_model.
    pub heads: usize,
    pub seed: u64,
}

impl Default for ResamplerConfig {
    fn default() -> Self {
        Self {
            queries: 128,
            d_model: crate::vision_stub::D_MODEL,
            layers: 2,
            heads: 4,
            seed: 0,
        }
    }
}

/// One layer's weights. FFN expands d -> 4d -> d; no biases anywhere.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams {
    pub w_q: Matrix,
    pub w_k: Matrix,
    pub w_v: Matrix,
    pub w_o: Matrix,
    pub w_ff1: Matrix,
    pub w_ff2: Matrix,
    pub ln_gamma: Vec<f64>,
    pub ln_beta: Vec<f64>,
}

/// Full parameter set. Doubles as the gradient container: `zeros_like`
/// produces a same-shaped accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct ResamplerParams {
    pub queries: Matrix,
    pub layers: Vec<LayerParams>,
    pub heads: usize,
}

impl ResamplerParams {
    /// Seeded Gaussian init, scale 1/sqrt(d); layer-norm starts at identity.
    pub fn init(cfg: &ResamplerConfig) -> Result<Self> {
        if cfg.queries == 0 {
            return Err(ForgeError::InvalidDims("query count must be >= 1".into()));
        }
        if cfg.heads == 0 || cfg.d_model % cfg.heads != 0 {
            return Err(ForgeError::InvalidDims(format!(
                "d_model {} must be divisible by heads {}",
                cfg.d_model, cfg.heads
            )));
        }
        if cfg.layers == 0 {
            return Err(ForgeError::InvalidDims("layer count must be >= 1".into()));
        }
        let d = cfg.d_model;
        let scale = 1.0 / (d as f64).sqrt();
        let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
        let queries = Matrix::gaussian(cfg.queries, d, scale, &mut rng);
        let layers = (0..cfg.layers)
            .map(|_| LayerParams {
                w_q: Matrix::gaussian(d, d, scale, &mut rng),
                w_k: Matrix::gaussian(d, d, scale, &mut rng),
                w_v: Matrix::gaussian(d, d, scale, &mut rng),
                w_o: Matrix::gaussian(d, d, scale, &mut rng),
                w_ff1: Matrix::gaussian(d, 4 * d, scale, &mut rng),
                w_ff2: Matrix::gaussian(4 * d, d, scale, &mut rng),
                ln_gamma: vec![1.0; d],
                ln_beta: vec![0.0; d],
            })
            .collect();
        Ok(Self {
            queries,
            layers,
            heads: cfg.heads,
        })
    }

    pub fn m(&self) -> usize {
        self.queries.rows()
    }

    pub fn d_model(&self) -> usize {
        self.queries.cols()
    }

    /// Same-shaped zero parameters, used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let d = self.d_model();
        Self {
            queries: Matrix::zeros(self.m(), d),
            layers: self
                .layers
                .iter()
                .map(|_| LayerParams {
                    w_q: Matrix::zeros(d, d),
                    w_k: Matrix::zeros(d, d),
                    w_v: Matrix::zeros(d, d),
                    w_o: Matrix::zeros(d, d),
                    w_ff1: Matrix::zeros(d, 4 * d),
                    w_ff2: Matrix::zeros(4 * d, d),
                    ln_gamma: vec![0.0; d],
                    ln_beta: vec![0.0; d],
                })
                .collect(),
            heads: self.heads,
        }
    }

    /// Flattens every parameter into one vector, in a fixed field order.
    /// The inverse is [`ResamplerParams::from_flat`].
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        out.extend_from_slice(self.queries.as_slice());
        for l in &self.layers {
            out.extend_from_slice(l.w_q.as_slice());
            out.extend_from_slice(l.w_k.as_slice());
            out.extend_from_slice(l.w_v.as_slice());
            out.extend_from_slice(l.w_o.as_slice());
            out.extend_from_slice(l.w_ff1.as_slice());
            out.extend_from_slice(l.w_ff2.as_slice());
            out.extend_from_slice(&l.ln_gamma);
            out.extend_from_slice(&l.ln_beta);
        }
        out
    }

    /// Rebuilds parameters from [`ResamplerParams::to_flat`] output.
    pub fn from_flat(&self, flat: &[f64]) -> Result<Self> {
        let mut p = self.clone();
        let mut it = flat.iter();
        let mut take = |dst: &mut [f64]| -> Result<()> {
            for v in dst {
                *v = *it
                    .next()
                    .ok_or_else(|| ForgeError::ShapeMismatch("flat vector too short".into()))?;
            }
            Ok(())
        };
        take(p.queries.as_mut_slice())?;
        for l in &mut p.layers {
            take(l.w_q.as_mut_slice())?;
            take(l.w_k.as_mut_slice())?;
            take(l.w_v.as_mut_slice())?;
            take(l.w_o.as_mut_slice())?;
            take(l.w_ff1.as_mut_slice())?;
            take(l.w_ff2.as_mut_slice())?;
            take(&mut l.ln_gamma)?;
            take(&mut l.ln_beta)?;
        }
        if it.next().is_some() {
            return Err(ForgeError::ShapeMismatch("flat vector too long".into()));
        }
        Ok(p)
    }

    pub fn param_count(&self) -> usize {
        self.to_flat().len()
    }

    /// SGD step: `self -= lr * grads`, shape-checked.
    pub fn apply_gradients(&mut self, grads: &ResamplerParams, lr: f64) {
        self.queries.add_scaled(&grads.queries, -lr);
        for (l, g) in self.layers.iter_mut().zip(&grads.layers) {
            l.w_q.add_scaled(&g.w_q, -lr);
            l.w_k.add_scaled(&g.w_k, -lr);
            l.w_v.add_scaled(&g.w_v, -lr);
            l.w_o.add_scaled(&g.w_o, -lr);
            l.w_ff1.add_scaled(&g.w_ff1, -lr);
            l.w_ff2.add_scaled(&g.w_ff2, -lr);
            for (a, b) in l.ln_gamma.iter_mut().zip(&g.ln_gamma) {
                *a -= lr * b;
            }
            for (a, b) in l.ln_beta.iter_mut().zip(&g.ln_beta) {
                *a -= lr * b;
            }
        }
    }
}

/// How patches enter the resampler.
#[derive(Debug, Clone, PartialEq)]
pub enum SamplingMode {
    /// Each patch resampled independently; outputs concatenated in patch
    /// order, k = m * patches.
    PerPatch,
    /// All patch embeddings concatenated into one sequence, resampled once;
    /// k = m regardless of patch count.
    FixedSampling,
    /// Per-patch, with the given instruction embeddings (t x d) joining the
    /// key/value rows of every layer. Only latents are emitted; a 0-row
    /// instruction reproduces PerPatch exactly.
    InstructionAware(Matrix),
}

/// Gradients of a resample call: parameter gradients, per-patch input
/// gradients, and (instruction-aware mode only) instruction gradients.
#[derive(Debug, Clone)]
pub struct ResamplerGradients {
    pub params: ResamplerParams,
    pub inputs: Vec<Matrix>,
    pub instruction: Option<Matrix>,
}

/// Per-layer forward cache, everything the backward pass reuses.
struct LayerCache {
    z_in: Matrix,
    kv: Matrix,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    probs: Vec<Matrix>,
    o_concat: Matrix,
    ln: LayerNormCache,
    xln: Matrix,
    h_pre: Matrix,
    g: Matrix,
}

/// One resampler run over one key/value source.
struct RunCache {
    layers: Vec<LayerCache>,
    x_rows: usize,
    instr_rows: usize,
}

fn check_inputs(patches: &[Matrix], params: &ResamplerParams, mode: &SamplingMode) -> Result<()> {
    if patches.is_empty() {
        return Err(ForgeError::EmptyInput("patch list is empty".into()));
    }
    let d = params.d_model();
    for (i, p) in patches.iter().enumerate() {
        if p.cols() != d {
            return Err(ForgeError::ShapeMismatch(format!(
                "patch {i} has width {}, resampler expects {d}",
                p.cols()
            )));
        }
        if p.rows() == 0 {
            return Err(ForgeError::EmptyInput(format!("patch {i} has no tokens")));
        }
    }
    if let SamplingMode::InstructionAware(instr) = mode {
        if instr.cols() != d {
            return Err(ForgeError::ShapeMismatch(format!(
                "instruction width {} does not match d_model {d}",
                instr.cols()
            )));
        }
        if !instr.is_finite() {
            return Err(ForgeError::NonFinite("instruction embeddings".into()));
        }
    }
    Ok(())
}

/// Forward for one run. `x` is the key/value source (one patch, or all
/// patches concatenated); `instr` rows are appended to kv but never read
/// back out.
fn run_forward(x: &Matrix, params: &ResamplerParams, instr: Option<&Matrix>) -> (Matrix, RunCache) {
    let d = params.d_model();
    let h = params.heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut z = params.queries.clone();
    let mut layers = Vec::with_capacity(params.layers.len());
    for lp in &params.layers {
        let kv = match instr {
            Some(t) if t.rows() > 0 => Matrix::vcat(&[x, &z, t]),
            _ => Matrix::vcat(&[x, &z]),
        };
        let q = z.matmul(&lp.w_q);
        let k = kv.matmul(&lp.w_k);
        let v = kv.matmul(&lp.w_v);
        let mut o_concat = Matrix::zeros(z.rows(), d);
        let mut probs = Vec::with_capacity(h);
        for head in 0..h {
            let qi = q.col_block(head * dh, dh);
            let ki = k.col_block(head * dh, dh);
            let vi = v.col_block(head * dh, dh);
            let scores = qi.matmul_nt(&ki).scale(scale);
            let a = softmax_rows(&scores);
            let oi = a.matmul(&vi);
            o_concat.set_col_block(head * dh, &oi);
            probs.push(a);
        }
        let attn_out = o_concat.matmul(&lp.w_o);
        let u = z.add(&attn_out);
        let (xln, ln) = layer_norm(&u, &lp.ln_gamma, &lp.ln_beta);
        let h_pre = xln.matmul(&lp.w_ff1);
        let g = gelu_matrix(&h_pre);
        let ffn = g.matmul(&lp.w_ff2);
        let z_out = u.add(&ffn);
        layers.push(LayerCache {
            z_in: z,
            kv,
            q,
            k,
            v,
            probs,
            o_concat,
            ln,
            xln,
            h_pre,
            g,
        });
        z = z_out;
    }
    let cache = RunCache {
        layers,
        x_rows: x.rows(),
        instr_rows: instr.map_or(0, Matrix::rows),
    };
    (z, cache)
}

/// Backward for one run. `dz` is the upstream gradient on the emitted
/// latents; parameter gradients accumulate into `grads`.
fn run_backward(
    cache: &RunCache,
    params: &ResamplerParams,
    grads: &mut ResamplerParams,
    dz_out: &Matrix,
) -> (Matrix, Matrix) {
    let d = params.d_model();
    let h = params.heads;
    let dh = d / h;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut dz = dz_out.clone();
    let mut dx_total = Matrix::zeros(cache.x_rows, d);
    let mut dinstr_total = Matrix::zeros(cache.instr_rows, d);
    for (lc, (lp, lg)) in cache
        .layers
        .iter()
        .zip(params.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
    {
        // FFN branch: z_out = u + gelu(ln(u) W1) W2.
        let df = &dz;
        lg.w_ff2 = lg.w_ff2.add(&lc.g.matmul_tn(df));
        let dg = df.matmul_nt(&lp.w_ff2);
        let dh_pre = gelu_backward(&lc.h_pre, &dg);
        lg.w_ff1 = lg.w_ff1.add(&lc.xln.matmul_tn(&dh_pre));
        let dxln = dh_pre.matmul_nt(&lp.w_ff1);
        let du_ln = layer_norm_backward(&dxln, &lc.ln, &lp.ln_gamma, &mut lg.ln_gamma, &mut lg.ln_beta);
        let du = dz.add(&du_ln);

        // Attention branch: u = z_in + (concat_heads(A_i V_i)) W_o.
        let dattn = &du;
        lg.w_o = lg.w_o.add(&lc.o_concat.matmul_tn(dattn));
        let do_concat = dattn.matmul_nt(&lp.w_o);
        let mut dq = Matrix::zeros(lc.q.rows(), d);
        let mut dk = Matrix::zeros(lc.k.rows(), d);
        let mut dv = Matrix::zeros(lc.v.rows(), d);
        for head in 0..h {
            let doi = do_concat.col_block(head * dh, dh);
            let a = &lc.probs[head];
            let qi = lc.q.col_block(head * dh, dh);
            let ki = lc.k.col_block(head * dh, dh);
            let vi = lc.v.col_block(head * dh, dh);
            let dvi = a.matmul_tn(&doi);
            let da = doi.matmul_nt(&vi);
            let ds = softmax_rows_backward(a, &da).scale(scale);
            let dqi = ds.matmul(&ki);
            let dki = ds.matmul_tn(&qi);
            dq.set_col_block(head * dh, &dqi);
            dk.set_col_block(head * dh, &dki);
            dv.set_col_block(head * dh, &dvi);
        }
        lg.w_q = lg.w_q.add(&lc.z_in.matmul_tn(&dq));
        lg.w_k = lg.w_k.add(&lc.kv.matmul_tn(&dk));
        lg.w_v = lg.w_v.add(&lc.kv.matmul_tn(&dv));
        let dkv = dk.matmul_nt(&lp.w_k).add(&dv.matmul_nt(&lp.w_v));

        let m = lc.z_in.rows();
        let dz_next = du
            .add(&dq.matmul_nt(&lp.w_q))
            .add(&dkv.row_block(cache.x_rows, m));
        dx_total = dx_total.add(&dkv.row_block(0, cache.x_rows));
        if cache.instr_rows > 0 {
            dinstr_total = dinstr_total.add(&dkv.row_block(cache.x_rows + m, cache.instr_rows));
        }
        dz = dz_next;
    }
    grads.queries = grads.queries.add(&dz);
    (dx_total, dinstr_total)
}

/// Resamples patch embeddings down to latents. Output row count k obeys:
/// k = m * patches (PerPatch, InstructionAware) or k = m (FixedSampling).
pub fn resample(patches: &[Matrix], params: &ResamplerParams, mode: &SamplingMode) -> Result<Matrix> {
    check_inputs(patches, params, mode)?;
    match mode {
        SamplingMode::PerPatch => {
            let outs: Vec<Matrix> = patches
                .iter()
                .map(|x| run_forward(x, params, None).0)
                .collect();
            Ok(Matrix::vcat(&outs.iter().collect::<Vec<_>>()))
        }
        SamplingMode::FixedSampling => {
            let all = Matrix::vcat(&patches.iter().collect::<Vec<_>>());
            Ok(run_forward(&all, params, None).0)
        }
        SamplingMode::InstructionAware(instr) => {
            let outs: Vec<Matrix> = patches
                .iter()
                .map(|x| run_forward(x, params, Some(instr)).0)
                .collect();
            Ok(Matrix::vcat(&outs.iter().collect::<Vec<_>>()))
        }
    }
}

/// Output row count for a given patch count, without running anything.
pub fn output_rows(m: usize, patch_count: usize, mode: &SamplingMode) -> usize {
    match mode {
        SamplingMode::FixedSampling => m,
        _ => m * patch_count,
    }
}

/// Exact reverse-mode gradients of [`resample`] with respect to parameters,
/// patch inputs, and instruction embeddings. `upstream` must match the
/// forward output shape.
pub fn resample_grad(
    patches: &[Matrix],
    params: &ResamplerParams,
    mode: &SamplingMode,
    upstream: &Matrix,
) -> Result<ResamplerGradients> {
    check_inputs(patches, params, mode)?;
    let m = params.m();
    let d = params.d_model();
    let expect_rows = output_rows(m, patches.len(), mode);
    if upstream.shape() != (expect_rows, d) {
        return Err(ForgeError::ShapeMismatch(format!(
            "upstream gradient is {:?}, expected ({expect_rows}, {d})",
            upstream.shape()
        )));
    }
    let mut grads = params.zeros_like();
    match mode {
        SamplingMode::PerPatch => {
            let mut inputs = Vec::with_capacity(patches.len());
            for (i, x) in patches.iter().enumerate() {
                let (_, cache) = run_forward(x, params, None);
                let dz = upstream.row_block(i * m, m);
                let (dx, _) = run_backward(&cache, params, &mut grads, &dz);
                inputs.push(dx);
            }
            Ok(ResamplerGradients {
                params: grads,
                inputs,
                instruction: None,
            })
        }
        SamplingMode::FixedSampling => {
            let all = Matrix::vcat(&patches.iter().collect::<Vec<_>>());
            let (_, cache) = run_forward(&all, params, None);
            let (dx, _) = run_backward(&cache, params, &mut grads, upstream);
            let mut inputs = Vec::with_capacity(patches.len());
            let mut row = 0;
            for p in patches {
                inputs.push(dx.row_block(row, p.rows()));
                row += p.rows();
            }
            Ok(ResamplerGradients {
                params: grads,
                inputs,
                instruction: None,
            })
        }
        SamplingMode::InstructionAware(instr) => {
            let mut inputs = Vec::with_capacity(patches.len());
            let mut dinstr = Matrix::zeros(instr.rows(), d);
            for (i, x) in patches.iter().enumerate() {
                let (_, cache) = run_forward(x, params, Some(instr));
                let dz = upstream.row_block(i * m, m);
                let (dx, di) = run_backward(&cache, params, &mut grads, &dz);
                inputs.push(dx);
                if instr.rows() > 0 {
                    dinstr = dinstr.add(&di);
                }
            }
            Ok(ResamplerGradients {
                params: grads,
                inputs,
                instruction: Some(dinstr),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::rel_err;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    const FD_EPSILON: f64 = 1e-4;
    const FD_THRESHOLD: f64 = 1e-3;

    fn tiny_cfg() -> ResamplerConfig {
        ResamplerConfig {
            queries: 2,
            d_model: 8,
            layers: 2,
            heads: 2,
            seed: 17,
        }
    }

    fn rand_patch(rows: usize, d: usize, rng: &mut ChaCha12Rng) -> Matrix {
        Matrix::gaussian(rows, d, 0.7, rng)
    }

    #[test]
    fn output_shapes_follow_mode_law() {
        let cfg = ResamplerConfig {
            queries: 4,
            d_model: 8,
            layers: 1,
            heads: 2,
            seed: 1,
        };
        let params = ResamplerParams::init(&cfg).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let patches: Vec<Matrix> = (0..5).map(|_| rand_patch(6, 8, &mut rng)).collect();
        let per = resample(&patches, &params, &SamplingMode::PerPatch).unwrap();
        assert_eq!(per.shape(), (20, 8));
        let fixed = resample(&patches, &params, &SamplingMode::FixedSampling).unwrap();
        assert_eq!(fixed.shape(), (4, 8));
        let instr = Matrix::gaussian(3, 8, 0.5, &mut rng);
        let ia = resample(&patches, &params, &SamplingMode::InstructionAware(instr)).unwrap();
        assert_eq!(ia.shape(), (20, 8));
    }

    #[test]
    fn default_geometry_reduces_by_factor_five_or_more() {
        let n_vis = crate::vision_stub::VisionStubConfig::default().tokens_per_patch();
        let m = ResamplerConfig::default().queries;
        assert_eq!(n_vis, 729);
        assert_eq!(m, 128);
        assert!(n_vis as f64 / m as f64 >= 5.0);
    }

    /// Scalar-loop oracle for a 1-layer, 1-head resampler, evaluating the
    /// pinned equations element by element with no Matrix helpers.
    fn dense_oracle_single_layer(x: &Matrix, p: &ResamplerParams) -> Matrix {
        let d = p.d_model();
        let m = p.m();
        let n = x.rows();
        let l = &p.layers[0];
        let nkv = n + m;
        // kv rows: x then latents (= queries at layer 0).
        let kv_at = |r: usize, c: usize| -> f64 {
            if r < n {
                x.get(r, c)
            } else {
                p.queries.get(r - n, c)
            }
        };
        let scale = 1.0 / (d as f64).sqrt();
        let mut out = Matrix::zeros(m, d);
        for i in 0..m {
            // q_i = z_i W_q
            let mut qi = vec![0.0; d];
            for c in 0..d {
                for k in 0..d {
                    qi[c] += p.queries.get(i, k) * l.w_q.get(k, c);
                }
            }
            // scores over kv rows
            let mut scores = vec![0.0; nkv];
            for r in 0..nkv {
                let mut kr = vec![0.0; d];
                for c in 0..d {
                    for k in 0..d {
                        kr[c] += kv_at(r, k) * l.w_k.get(k, c);
                    }
                }
                scores[r] = qi.iter().zip(&kr).map(|(a, b)| a * b).sum::<f64>() * scale;
            }
            let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = scores.iter().map(|s| (s - max).exp()).collect();
            let sum: f64 = exps.iter().sum();
            // attention output, then W_o
            let mut attn = vec![0.0; d];
            for r in 0..nkv {
                let w = exps[r] / sum;
                for c in 0..d {
                    let mut vr = 0.0;
                    for k in 0..d {
                        vr += kv_at(r, k) * l.w_v.get(k, c);
                    }
                    attn[c] += w * vr;
                }
            }
            let mut u = vec![0.0; d];
            for c in 0..d {
                let mut o = 0.0;
                for k in 0..d {
                    o += attn[k] * l.w_o.get(k, c);
                }
                u[c] = p.queries.get(i, c) + o;
            }
            // pre-norm FFN with residual
            let mean = u.iter().sum::<f64>() / d as f64;
            let var = u.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
            let rstd = 1.0 / (var + crate::matrix::LAYER_NORM_EPS).sqrt();
            let xln: Vec<f64> = u
                .iter()
                .enumerate()
                .map(|(c, v)| (v - mean) * rstd * l.ln_gamma[c] + l.ln_beta[c])
                .collect();
            let mut hidden = vec![0.0; 4 * d];
            for c in 0..4 * d {
                for k in 0..d {
                    hidden[c] += xln[k] * l.w_ff1.get(k, c);
                }
            }
            for v in hidden.iter_mut() {
                *v = crate::matrix::gelu(*v);
            }
            for c in 0..d {
                let mut f = 0.0;
                for k in 0..4 * d {
                    f += hidden[k] * l.w_ff2.get(k, c);
                }
                out.set(i, c, u[c] + f);
            }
        }
        out
    }

    #[test]
    fn forward_matches_dense_oracle() {
        let cfg = ResamplerConfig {
            queries: 2,
            d_model: 4,
            layers: 1,
            heads: 1,
            seed: 23,
        };
        let params = ResamplerParams::init(&cfg).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        let x = rand_patch(3, 4, &mut rng);
        let got = resample(
            std::slice::from_ref(&x),
            &params,
            &SamplingMode::PerPatch,
        )
        .unwrap();
        let want = dense_oracle_single_layer(&x, &params);
        assert_eq!(got.shape(), want.shape());
        for (a, b) in got.as_slice().iter().zip(want.as_slice()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn per_patch_blocks_ignore_other_patches() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(8);
        let x1 = rand_patch(5, 8, &mut rng);
        let x2 = rand_patch(5, 8, &mut rng);
        let x2_alt = rand_patch(5, 8, &mut rng);
        let a = resample(
            &[x1.clone(), x2],
            &params,
            &SamplingMode::PerPatch,
        )
        .unwrap();
        let b = resample(&[x1, x2_alt], &params, &SamplingMode::PerPatch).unwrap();
        // Bit-identical, not merely close.
        assert_eq!(a.row_block(0, 2), b.row_block(0, 2));
        assert_ne!(a.row_block(2, 2), b.row_block(2, 2));
    }

    #[test]
    fn fixed_sampling_couples_patches() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(9);
        let x1 = rand_patch(5, 8, &mut rng);
        let x2 = rand_patch(5, 8, &mut rng);
        let x2_alt = rand_patch(5, 8, &mut rng);
        let a = resample(&[x1.clone(), x2], &params, &SamplingMode::FixedSampling).unwrap();
        let b = resample(&[x1, x2_alt], &params, &SamplingMode::FixedSampling).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn patch_permutation_permutes_output_blocks() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(10);
        let patches: Vec<Matrix> = (0..4).map(|_| rand_patch(3, 8, &mut rng)).collect();
        let fwd = resample(&patches, &params, &SamplingMode::PerPatch).unwrap();
        let perm = [2usize, 0, 3, 1];
        let permuted: Vec<Matrix> = perm.iter().map(|&i| patches[i].clone()).collect();
        let fwd_p = resample(&permuted, &params, &SamplingMode::PerPatch).unwrap();
        let m = params.m();
        for (slot, &src) in perm.iter().enumerate() {
            assert_eq!(fwd_p.row_block(slot * m, m), fwd.row_block(src * m, m));
        }
    }

    #[test]
    fn empty_instruction_equals_per_patch_exactly() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        let patches: Vec<Matrix> = (0..3).map(|_| rand_patch(4, 8, &mut rng)).collect();
        let per = resample(&patches, &params, &SamplingMode::PerPatch).unwrap();
        let ia = resample(
            &patches,
            &params,
            &SamplingMode::InstructionAware(Matrix::zeros(0, 8)),
        )
        .unwrap();
        assert_eq!(per, ia);
    }

    #[test]
    fn nonempty_instruction_changes_output() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(12);
        let patches = vec![rand_patch(4, 8, &mut rng)];
        let per = resample(&patches, &params, &SamplingMode::PerPatch).unwrap();
        let instr = Matrix::gaussian(2, 8, 1.0, &mut rng);
        let ia = resample(&patches, &params, &SamplingMode::InstructionAware(instr)).unwrap();
        assert_ne!(per, ia);
    }

    #[test]
    fn rejects_bad_inputs() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        assert!(resample(&[], &params, &SamplingMode::PerPatch).is_err());
        let wrong = Matrix::zeros(3, 7);
        assert!(resample(&[wrong], &params, &SamplingMode::PerPatch).is_err());
        let ok = Matrix::zeros(3, 8);
        let bad_instr = Matrix::zeros(2, 5);
        assert!(resample(
            &[ok],
            &params,
            &SamplingMode::InstructionAware(bad_instr)
        )
        .is_err());
        assert!(ResamplerParams::init(&ResamplerConfig {
            queries: 4,
            d_model: 10,
            layers: 1,
            heads: 4,
            seed: 0,
        })
        .is_err());
    }

    #[test]
    fn zero_upstream_gives_zero_gradients() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(13);
        let patches = vec![rand_patch(4, 8, &mut rng)];
        let up = Matrix::zeros(2, 8);
        let g = resample_grad(&patches, &params, &SamplingMode::PerPatch, &up).unwrap();
        assert!(g.params.to_flat().iter().all(|&v| v == 0.0));
        assert!(g.inputs[0].as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn per_patch_cross_gradients_are_exactly_zero() {
        // Upstream nonzero only on patch 0's block: patch 1's input gradient
        // must be identically zero.
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(14);
        let patches = vec![rand_patch(4, 8, &mut rng), rand_patch(4, 8, &mut rng)];
        let mut up = Matrix::zeros(4, 8);
        for c in 0..8 {
            up.set(0, c, 1.0);
            up.set(1, c, -0.5);
        }
        let g = resample_grad(&patches, &params, &SamplingMode::PerPatch, &up).unwrap();
        assert!(g.inputs[0].as_slice().iter().any(|&v| v != 0.0));
        assert!(g.inputs[1].as_slice().iter().all(|&v| v == 0.0));
    }

    /// Scalar probe loss: sum(output .* direction) for a fixed random
    /// direction, so d(loss)/d(anything) is checkable by central differences.
    fn probe_loss(
        patches: &[Matrix],
        params: &ResamplerParams,
        mode: &SamplingMode,
        direction: &Matrix,
    ) -> f64 {
        let out = resample(patches, params, mode).unwrap();
        out.as_slice()
            .iter()
            .zip(direction.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn check_mode_gradients(mode: SamplingMode, seed: u64) {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let patches: Vec<Matrix> = (0..2).map(|_| rand_patch(3, 8, &mut rng)).collect();
        let out_rows = output_rows(params.m(), patches.len(), &mode);
        let direction = Matrix::gaussian(out_rows, 8, 1.0, &mut rng);
        let grads = resample_grad(&patches, &params, &mode, &direction).unwrap();

        // Parameters.
        let flat = params.to_flat();
        let gflat = grads.params.to_flat();
        for i in 0..flat.len() {
            let mut fp = flat.clone();
            fp[i] += FD_EPSILON;
            let pp = params.from_flat(&fp).unwrap();
            fp[i] -= 2.0 * FD_EPSILON;
            let pm = params.from_flat(&fp).unwrap();
            let fd = (probe_loss(&patches, &pp, &mode, &direction)
                - probe_loss(&patches, &pm, &mode, &direction))
                / (2.0 * FD_EPSILON);
            assert!(
                rel_err(gflat[i], fd) <= FD_THRESHOLD,
                "param coord {i}: analytic {} vs fd {fd}",
                gflat[i]
            );
        }

        // Patch inputs.
        for (pi, dx) in grads.inputs.iter().enumerate() {
            for i in 0..dx.as_slice().len() {
                let mut pp = patches.clone();
                pp[pi].as_mut_slice()[i] += FD_EPSILON;
                let mut pm = patches.clone();
                pm[pi].as_mut_slice()[i] -= FD_EPSILON;
                let fd = (probe_loss(&pp, &params, &mode, &direction)
                    - probe_loss(&pm, &params, &mode, &direction))
                    / (2.0 * FD_EPSILON);
                assert!(
                    rel_err(dx.as_slice()[i], fd) <= FD_THRESHOLD,
                    "input {pi} coord {i}"
                );
            }
        }

        // Instruction embeddings.
        if let SamplingMode::InstructionAware(instr) = &mode {
            let dinstr = grads.instruction.as_ref().unwrap();
            for i in 0..instr.as_slice().len() {
                let mut ip = instr.clone();
                ip.as_mut_slice()[i] += FD_EPSILON;
                let mut im = instr.clone();
                im.as_mut_slice()[i] -= FD_EPSILON;
                let fd = (probe_loss(
                    &patches,
                    &params,
                    &SamplingMode::InstructionAware(ip),
                    &direction,
                ) - probe_loss(
                    &patches,
                    &params,
                    &SamplingMode::InstructionAware(im),
                    &direction,
                )) / (2.0 * FD_EPSILON);
                assert!(rel_err(dinstr.as_slice()[i], fd) <= FD_THRESHOLD, "instr {i}");
            }
        }
    }

    #[test]
    fn per_patch_gradients_match_finite_differences() {
        check_mode_gradients(SamplingMode::PerPatch, 101);
    }

    #[test]
    fn fixed_sampling_gradients_match_finite_differences() {
        check_mode_gradients(SamplingMode::FixedSampling, 102);
    }

    #[test]
    fn instruction_aware_gradients_match_finite_differences() {
        let mut rng = ChaCha12Rng::seed_from_u64(103);
        let instr = Matrix::gaussian(2, 8, 0.6, &mut rng);
        check_mode_gradients(SamplingMode::InstructionAware(instr), 104);
    }

    #[test]
    fn flat_round_trip_preserves_params() {
        let params = ResamplerParams::init(&tiny_cfg()).unwrap();
        let flat = params.to_flat();
        let back = params.from_flat(&flat).unwrap();
        assert_eq!(params, back);
        assert_eq!(params.param_count(), flat.len());
        assert!(params.from_flat(&flat[..flat.len() - 1]).is_err());
    }
}
