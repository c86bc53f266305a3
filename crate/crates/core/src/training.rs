//! Smoke training: full-batch SGD over resampler and decoder weights with
//! the vision stub held frozen. The stub encodes pixels once when a corpus
//! is built; its projection never enters the optimizer state, which is the
//! frozen-backbone contract in executable form.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::decoder::{backward_nll, forward_logprobs, masked_nll, DecoderParams};
use crate::error::{ForgeError, Result};
use crate::imaging::{extract_patches, plan_patches, ImageBuffer, ImageDims};
use crate::matrix::Matrix;
use crate::resampler::{resample, resample_grad, ResamplerParams, SamplingMode};
use crate::sequencer::{tokenize_doc, Block, InterleavedDoc, MaskingMode, TokenSequence};
use crate::vision_stub::{VisionStub, VisionStubConfig};

/// One training example: a tokenized sequence plus, for every image in it,
/// the frozen stub embeddings of that image's buffers.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub seq: TokenSequence,
    /// Outer: images in document order. Inner: one matrix per buffer.
    pub images: Vec<Vec<Matrix>>,
}

/// Loss and bookkeeping from one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub loss: f64,
    /// Mask-true positions that actually priced in, summed over the batch.
    pub masked_positions: usize,
}

fn item_vision_rows(
    item: &TrainItem,
    rparams: &ResamplerParams,
) -> Result<(Matrix, Vec<usize>)> {
    let mut blocks = Vec::new();
    let mut row_counts = Vec::new();
    for patches in &item.images {
        let out = resample(patches, rparams, &SamplingMode::PerPatch)?;
        row_counts.push(out.rows());
        blocks.push(out);
    }
    let rows = if blocks.is_empty() {
        Matrix::zeros(0, rparams.d_model())
    } else {
        Matrix::vcat(&blocks.iter().collect::<Vec<_>>())
    };
    Ok((rows, row_counts))
}

/// Mean masked NLL of a batch at the given parameters. Items whose mask
/// selects nothing contribute zero.
pub fn batch_loss(
    items: &[TrainItem],
    rparams: &ResamplerParams,
    dparams: &DecoderParams,
) -> Result<StepOutcome> {
    if items.is_empty() {
        return Err(ForgeError::EmptyInput("empty training batch".into()));
    }
    let mut total = 0.0;
    let mut masked = 0;
    for item in items {
        let (vision_rows, _) = item_vision_rows(item, rparams)?;
        let cache = forward_logprobs(&item.seq, &vision_rows, dparams)?;
        let nll = masked_nll(&cache, &item.seq)?;
        total += nll.value;
        masked += nll.counted;
    }
    Ok(StepOutcome {
        loss: total / items.len() as f64,
        masked_positions: masked,
    })
}

/// One full-batch SGD step on resampler and decoder weights. The vision
/// stub is upstream of the batch and is never touched. A non-finite loss
/// aborts before any parameter moves. `lr` must be >= 0; zero evaluates the
/// loss and gradients without updating.
pub fn train_step(
    items: &[TrainItem],
    rparams: &mut ResamplerParams,
    dparams: &mut DecoderParams,
    lr: f64,
) -> Result<StepOutcome> {
    if !lr.is_finite() || lr < 0.0 {
        return Err(ForgeError::OutOfRange(format!(
            "learning rate must be finite and >= 0, got {lr}"
        )));
    }
    if items.is_empty() {
        return Err(ForgeError::EmptyInput("empty training batch".into()));
    }
    if dparams.d_model() != rparams.d_model() {
        return Err(ForgeError::ShapeMismatch(format!(
            "decoder width {} vs resampler width {}",
            dparams.d_model(),
            rparams.d_model()
        )));
    }
    let inv_n = 1.0 / items.len() as f64;
    let mut racc = rparams.zeros_like();
    let mut dacc = dparams.zeros_like();
    let mut total = 0.0;
    let mut masked = 0;
    for item in items {
        let (vision_rows, row_counts) = item_vision_rows(item, rparams)?;
        let cache = forward_logprobs(&item.seq, &vision_rows, dparams)?;
        let nll = masked_nll(&cache, &item.seq)?;
        total += nll.value;
        masked += nll.counted;
        let grads = backward_nll(&cache, &item.seq, dparams)?;
        // accumulate += grads / n  (apply_gradients subtracts lr * grads).
        dacc.apply_gradients(&grads.params, -inv_n);
        let mut off = 0;
        for (patches, &rows) in item.images.iter().zip(&row_counts) {
            let upstream = grads.vision_rows.row_block(off, rows);
            off += rows;
            let rg = resample_grad(patches, rparams, &SamplingMode::PerPatch, &upstream)?;
            racc.apply_gradients(&rg.params, -inv_n);
        }
    }
    let loss = total * inv_n;
    if !loss.is_finite() {
        return Err(ForgeError::NonFinite(format!(
            "batch loss is {loss}; parameters left untouched"
        )));
    }
    rparams.apply_gradients(&racc, lr);
    dparams.apply_gradients(&dacc, lr);
    Ok(StepOutcome {
        loss,
        masked_positions: masked,
    })
}

/// One row of the training log.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLoss {
    pub step: usize,
    pub loss: f64,
}

/// A full training run: per-step losses (measured before each update) plus
/// the loss after the final update.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub losses: Vec<f64>,
    pub final_loss: f64,
}

impl TrainReport {
    pub fn initial_loss(&self) -> f64 {
        self.losses[0]
    }

    /// Log rows: one per step, then a closing row at `step = steps` holding
    /// the post-training loss.
    pub fn log_rows(&self) -> Vec<StepLoss> {
        let mut rows: Vec<StepLoss> = self
            .losses
            .iter()
            .enumerate()
            .map(|(step, &loss)| StepLoss { step, loss })
            .collect();
        rows.push(StepLoss {
            step: self.losses.len(),
            loss: self.final_loss,
        });
        rows
    }
}

/// Runs `steps` full-batch SGD steps and evaluates once more at the end.
pub fn train_run(
    items: &[TrainItem],
    rparams: &mut ResamplerParams,
    dparams: &mut DecoderParams,
    steps: usize,
    lr: f64,
) -> Result<TrainReport> {
    if steps == 0 {
        return Err(ForgeError::OutOfRange("steps must be >= 1".into()));
    }
    let mut losses = Vec::with_capacity(steps);
    for _ in 0..steps {
        losses.push(train_step(items, rparams, dparams, lr)?.loss);
    }
    let final_loss = batch_loss(items, rparams, dparams)?.loss;
    Ok(TrainReport { losses, final_loss })
}

/// Writes a training log as JSONL, one `StepLoss` per line.
pub fn write_train_log(path: &Path, report: &TrainReport) -> Result<()> {
    let mut out = String::new();
    for row in report.log_rows() {
        out.push_str(&serde_json::to_string(&row)?);
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Checkpoint header stored next to the flat weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: String,
    pub param_count: usize,
    pub sha256: String,
    pub meta: serde_json::Value,
}

fn flat_sha256(flat: &[f64]) -> String {
    let mut hasher = Sha256::new();
    for v in flat {
        hasher.update(v.to_le_bytes());
    }
    format!("{:x}", hasher.finalize())
}

/// Writes `base.bin` (f64 little-endian) and `base.json` (header).
pub fn save_checkpoint(
    base: &Path,
    kind: &str,
    meta: serde_json::Value,
    flat: &[f64],
) -> Result<(PathBuf, PathBuf)> {
    let header = CheckpointHeader {
        kind: kind.to_string(),
        param_count: flat.len(),
        sha256: flat_sha256(flat),
        meta,
    };
    let bin_path = base.with_extension("bin");
    let json_path = base.with_extension("json");
    let mut bytes = Vec::with_capacity(flat.len() * 8);
    for v in flat {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(&bin_path, bytes)?;
    fs::write(&json_path, serde_json::to_string_pretty(&header)?)?;
    Ok((bin_path, json_path))
}

/// Reads a checkpoint back, verifying length and digest.
pub fn load_checkpoint(base: &Path) -> Result<(CheckpointHeader, Vec<f64>)> {
    let header: CheckpointHeader =
        serde_json::from_str(&fs::read_to_string(base.with_extension("json"))?)?;
    let bytes = fs::read(base.with_extension("bin"))?;
    if bytes.len() != header.param_count * 8 {
        return Err(ForgeError::ShapeMismatch(format!(
            "checkpoint holds {} bytes, header promises {} values",
            bytes.len(),
            header.param_count
        )));
    }
    let flat: Vec<f64> = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk is 8 bytes")))
        .collect();
    if flat_sha256(&flat) != header.sha256 {
        return Err(ForgeError::OutOfRange(
            "checkpoint digest mismatch".into(),
        ));
    }
    Ok((header, flat))
}

/// Configuration of the bundled deterministic toy corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyCorpusConfig {
    pub docs: usize,
    pub base: u32,
    pub vit_patch: u32,
    pub d_model: usize,
    pub m: usize,
    pub max_patches: u32,
    pub seed: u64,
}

impl Default for ToyCorpusConfig {
    fn default() -> Self {
        Self {
            docs: 20,
            base: 24,
            vit_patch: 8,
            d_model: 16,
            m: 4,
            max_patches: 9,
            seed: 7,
        }
    }
}

/// The generated corpus plus the frozen stub that encoded it.
pub struct ToyCorpus {
    pub items: Vec<TrainItem>,
    pub stub: VisionStub,
    pub docs: Vec<InterleavedDoc>,
}

const TOY_WORDS: [&str; 16] = [
    "river", "stone", "cloud", "amber", "north", "quiet", "field", "later", "seven", "glass",
    "round", "paper", "light", "early", "coast", "metal",
];

fn toy_phrase(rng: &mut ChaCha12Rng) -> String {
    let n = rng.gen_range(2..5);
    (0..n)
        .map(|_| TOY_WORDS[rng.gen_range(0..TOY_WORDS.len())])
        .collect::<Vec<_>>()
        .join(" ")
}

fn toy_image(rng: &mut ChaCha12Rng, dims: ImageDims) -> ImageBuffer {
    let a = rng.gen_range(1..7u32);
    let b = rng.gen_range(1..7u32);
    let c = rng.gen_range(0..256u32);
    let mut img = ImageBuffer::filled(dims.width, dims.height, [0, 0, 0]);
    for y in 0..dims.height {
        for x in 0..dims.width {
            let v = (a * x + b * y + c) % 256;
            img.set_pixel(x, y, [v as u8, (v * 2 % 256) as u8, (255 - v) as u8]);
        }
    }
    img
}

/// Builds the fixed 20-document corpus: every document interleaves short
/// text with one or two deterministic synthetic images, encoded through the
/// frozen stub and tokenized with all-text loss masking.
pub fn build_toy_corpus(cfg: &ToyCorpusConfig) -> Result<ToyCorpus> {
    if cfg.docs == 0 {
        return Err(ForgeError::EmptyInput("toy corpus needs >= 1 doc".into()));
    }
    let stub = VisionStub::new(VisionStubConfig {
        base: cfg.base,
        vit_patch: cfg.vit_patch,
        d_model: cfg.d_model,
        seed: cfg.seed,
    })?;
    let mut rng = ChaCha12Rng::seed_from_u64(cfg.seed);
    let dim_pool = [
        (cfg.base, cfg.base),
        (cfg.base * 2, cfg.base),
        (cfg.base, cfg.base * 2),
        (cfg.base * 3 / 2, cfg.base * 3 / 2),
        (cfg.base * 2, cfg.base * 2),
    ];
    let mut items = Vec::with_capacity(cfg.docs);
    let mut docs = Vec::with_capacity(cfg.docs);
    for di in 0..cfg.docs {
        let images = 1 + usize::from(di % 4 == 0);
        let mut blocks = vec![Block::text(toy_phrase(&mut rng))];
        let mut plans = std::collections::HashMap::new();
        let mut encoded = Vec::new();
        for ii in 0..images {
            let (w, h) = dim_pool[rng.gen_range(0..dim_pool.len())];
            let dims = ImageDims::new(w, h)?;
            let image_id = format!("img-{di}-{ii}");
            let plan = plan_patches(dims, cfg.base, cfg.max_patches)?;
            let buffers = extract_patches(&toy_image(&mut rng, dims), &plan)?;
            let tokens: Vec<Matrix> = stub
                .encode_all(&buffers)?
                .into_iter()
                .map(|e| e.tokens)
                .collect();
            plans.insert(image_id.clone(), plan);
            encoded.push(tokens);
            blocks.push(Block::image(image_id, dims));
            blocks.push(Block::text(toy_phrase(&mut rng)));
        }
        let doc = InterleavedDoc {
            doc_id: format!("toy-{di}"),
            blocks,
        };
        let seq = tokenize_doc(&doc, &plans, cfg.m, MaskingMode::AllText)?;
        items.push(TrainItem {
            seq,
            images: encoded,
        });
        docs.push(doc);
    }
    Ok(ToyCorpus { items, stub, docs })
}
