//! Post-training toolkit: preference-pair construction from multi-axis
//! scores, the DPO loss kernel with its gradient, deterministic image
//! noising for the extra dispreferred response, LoRA trainable-fraction
//! planning, and safety fine-tuning mixture assembly.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ForgeError, Result};
use crate::imaging::ImageBuffer;

/// Scores along the three judged axes, each on the 1..=5 scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisScores {
    pub helpfulness: f64,
    pub visual_faithfulness: f64,
    pub ethics: f64,
}

impl AxisScores {
    pub fn mean(&self) -> f64 {
        (self.helpfulness + self.visual_faithfulness + self.ethics) / 3.0
    }

    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("helpfulness", self.helpfulness),
            ("visual_faithfulness", self.visual_faithfulness),
            ("ethics", self.ethics),
        ] {
            if !(1.0..=5.0).contains(&v) {
                return Err(ForgeError::OutOfRange(format!(
                    "{name} score {v} outside [1, 5]"
                )));
            }
        }
        Ok(())
    }
}

/// One model's response to an instruction, with its judge scores.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponse {
    pub model: String,
    pub text: String,
    pub scores: AxisScores,
}

/// All judged responses for one instruction over one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredResponseSet {
    pub instruction_id: String,
    pub image: String,
    pub responses: Vec<ScoredResponse>,
}

/// A preference pair. `dispreferred` keeps a list: the first entry is the
/// lowest-scored response, and a second slot is appended later for the
/// response to the noised image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub instruction_id: String,
    pub preferred: String,
    pub dispreferred: Vec<String>,
    pub preferred_mean: f64,
}

/// Output of [`build_pairs`]: the pairs plus what the filters removed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairReport {
    pub pairs: Vec<PreferencePair>,
    /// Sets whose best response scored below the threshold.
    pub dropped_low_score: usize,
    /// Instruction ids skipped for having fewer than two responses.
    pub skipped_few_responses: Vec<String>,
}

/// Picks (preferred, dispreferred) per set by mean score, ties to the
/// lexicographically smaller model name; the dispreferred response is the
/// worst among the rest, so the two always differ. Sets whose preferred
/// mean falls below `tau` are dropped and counted.
pub fn build_pairs(sets: &[ScoredResponseSet], tau: f64) -> Result<PairReport> {
    if !(1.0..=5.0).contains(&tau) {
        return Err(ForgeError::OutOfRange(format!(
            "threshold {tau} outside [1, 5]"
        )));
    }
    let mut report = PairReport {
        pairs: Vec::new(),
        dropped_low_score: 0,
        skipped_few_responses: Vec::new(),
    };
    for set in sets {
        for r in &set.responses {
            r.scores.validate()?;
        }
        if set.responses.len() < 2 {
            report.skipped_few_responses.push(set.instruction_id.clone());
            continue;
        }
        let best = set
            .responses
            .iter()
            .min_by(|a, b| {
                b.scores
                    .mean()
                    .partial_cmp(&a.scores.mean())
                    .expect("validated scores are finite")
                    .then_with(|| a.model.cmp(&b.model))
            })
            .expect(">= 2 responses");
        let worst = set
            .responses
            .iter()
            .filter(|r| !std::ptr::eq(*r, best))
            .min_by(|a, b| {
                a.scores
                    .mean()
                    .partial_cmp(&b.scores.mean())
                    .expect("validated scores are finite")
                    .then_with(|| a.model.cmp(&b.model))
            })
            .expect(">= 2 responses");
        if best.scores.mean() < tau {
            report.dropped_low_score += 1;
            continue;
        }
        report.pairs.push(PreferencePair {
            instruction_id: set.instruction_id.clone(),
            preferred: best.text.clone(),
            dispreferred: vec![worst.text.clone()],
            preferred_mean: best.scores.mean(),
        });
    }
    Ok(report)
}

/// Numerically stable ln(1 + e^x).
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn check_finite(vals: &[(&str, f64)]) -> Result<()> {
    for (name, v) in vals {
        if !v.is_finite() {
            return Err(ForgeError::NonFinite(format!("{name} is {v}")));
        }
    }
    Ok(())
}

/// DPO loss: `-log sigmoid(beta * ((pw - rw) - (pl - rl)))` where `pw, pl`
/// are policy sequence log-probabilities of the preferred and dispreferred
/// responses and `rw, rl` the frozen-reference ones. Computed in softplus
/// form, stable for any margin.
pub fn dpo_loss(pw: f64, pl: f64, rw: f64, rl: f64, beta: f64) -> Result<f64> {
    check_finite(&[
        ("policy preferred logprob", pw),
        ("policy dispreferred logprob", pl),
        ("reference preferred logprob", rw),
        ("reference dispreferred logprob", rl),
        ("beta", beta),
    ])?;
    if beta <= 0.0 {
        return Err(ForgeError::OutOfRange(format!("beta must be > 0, got {beta}")));
    }
    let z = beta * ((pw - rw) - (pl - rl));
    Ok(softplus(-z))
}

/// [`dpo_loss`] plus its gradient with respect to the policy terms:
/// `dL/dpw = -beta * sigmoid(-z)`, `dL/dpl = +beta * sigmoid(-z)`.
pub fn dpo_loss_grad(pw: f64, pl: f64, rw: f64, rl: f64, beta: f64) -> Result<(f64, f64, f64)> {
    let loss = dpo_loss(pw, pl, rw, rl, beta)?;
    let z = beta * ((pw - rw) - (pl - rl));
    let sig_neg = 1.0 / (1.0 + z.exp());
    Ok((loss, -beta * sig_neg, beta * sig_neg))
}

/// Additive seeded Gaussian noise on [0, 1]-normalized pixels, clipped back
/// into range and re-quantized. `sigma = 0` returns the image bit-for-bit.
pub fn noised_dispreferred(img: &ImageBuffer, sigma: f64, seed: u64) -> Result<ImageBuffer> {
    if !sigma.is_finite() || sigma < 0.0 {
        return Err(ForgeError::OutOfRange(format!(
            "noise sigma must be finite and >= 0, got {sigma}"
        )));
    }
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut bytes = img.as_bytes().to_vec();
    for b in bytes.iter_mut() {
        let n: f64 = rng.sample(StandardNormal);
        let v = (*b as f64 / 255.0 + sigma * n).clamp(0.0, 1.0);
        *b = (v * 255.0).round() as u8;
    }
    ImageBuffer::from_raw(img.width(), img.height(), bytes)
}

/// One adapter target: a backbone matrix adapted with rank-r factors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoraTarget {
    pub name: String,
    pub d_in: usize,
    pub d_out: usize,
}

/// A uniform-rank adapter plan over the given targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LoraPlan {
    pub targets: Vec<LoraTarget>,
    pub rank: usize,
    pub trainable_params: usize,
    pub backbone_params: usize,
    pub achieved_fraction: f64,
}

fn lora_fraction(targets: &[LoraTarget], rank: usize) -> (usize, usize, f64) {
    let backbone: usize = targets.iter().map(|t| t.d_in * t.d_out).sum();
    let trainable: usize = targets.iter().map(|t| rank * (t.d_in + t.d_out)).sum();
    (trainable, backbone, trainable as f64 / backbone as f64)
}

/// Chooses the uniform rank maximizing the trainable fraction inside
/// [0.8 f, 1.2 f]. When no rank lands in the band, the error carries the
/// nearest achievable (rank, fraction) alternatives.
pub fn plan_lora(targets: &[LoraTarget], f: f64) -> Result<LoraPlan> {
    if targets.is_empty() {
        return Err(ForgeError::EmptyInput("no adapter targets".into()));
    }
    for t in targets {
        if t.d_in == 0 || t.d_out == 0 {
            return Err(ForgeError::InvalidDims(format!(
                "target {} has a zero dimension",
                t.name
            )));
        }
    }
    if !(f > 0.0 && f < 1.0) {
        return Err(ForgeError::OutOfRange(format!(
            "target fraction must be in (0, 1), got {f}"
        )));
    }
    let lo = 0.8 * f;
    let hi = 1.2 * f;
    let (per_rank, backbone, _) = lora_fraction(targets, 1);
    // fraction(r) = r * per_rank / backbone, increasing in r: the best
    // in-band rank is the largest with fraction <= hi. The cap is found in
    // integer terms with a relative slack so exact band edges stay inside.
    let budget = hi * backbone as f64;
    let slack = 1.0 + 1e-12;
    let mut r_cap = (budget / per_rank as f64).floor() as usize;
    while ((r_cap + 1) * per_rank) as f64 <= budget * slack {
        r_cap += 1;
    }
    while r_cap > 0 && (r_cap * per_rank) as f64 > budget * slack {
        r_cap -= 1;
    }
    if r_cap >= 1 {
        let (trainable, _, frac) = lora_fraction(targets, r_cap);
        if frac * slack >= lo {
            return Ok(LoraPlan {
                targets: targets.to_vec(),
                rank: r_cap,
                trainable_params: trainable,
                backbone_params: backbone,
                achieved_fraction: frac,
            });
        }
    }
    let mut nearest = Vec::new();
    if r_cap >= 1 {
        nearest.push((r_cap, lora_fraction(targets, r_cap).2));
    }
    nearest.push((r_cap + 1, lora_fraction(targets, r_cap + 1).2));
    Err(ForgeError::LoraBandUnreachable { nearest })
}

/// The two shapes of unsafe training records.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SafetyKind {
    /// Objectionable image; the paired response refuses.
    Objectionable,
    /// Safe image carrying both a safe instruction pair and an unsafe
    /// instruction whose response refuses.
    SafeImage,
}

/// One unsafe-pool record. For `SafeImage` the unsafe instruction/response
/// sub-pair must be present and travels with the record as a unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyRecord {
    pub id: String,
    pub kind: SafetyKind,
    pub image: String,
    pub instruction: String,
    pub response: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_instruction: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unsafe_response: Option<String>,
}

impl SafetyRecord {
    pub fn validate(&self) -> Result<()> {
        if self.kind == SafetyKind::SafeImage
            && (self.unsafe_instruction.is_none() || self.unsafe_response.is_none())
        {
            return Err(ForgeError::EmptyInput(format!(
                "safe-image record {} lacks its unsafe instruction pair",
                self.id
            )));
        }
        Ok(())
    }
}

/// One helpful example drawn from the instruction fine-tuning pool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SftExample {
    pub id: String,
    pub instruction: String,
    pub response: String,
}

pub const DEFAULT_SAFETY_EPOCHS: usize = 3;

/// A safety fine-tuning mixture with exact composition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyMixture {
    pub unsafe_examples: Vec<SafetyRecord>,
    pub helpful_examples: Vec<SftExample>,
    pub epochs: usize,
    /// Set when no helpful examples were requested: training on refusals
    /// alone risks over-refusal on safe inputs.
    pub unsafe_only_warning: bool,
}

/// Draws `take` distinct indices from `0..n` by partial Fisher-Yates.
fn sample_indices(n: usize, take: usize, rng: &mut ChaCha12Rng) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for k in 0..take {
        let j = rng.gen_range(k..n);
        idx.swap(k, j);
    }
    idx.truncate(take);
    idx
}

/// Samples exactly `unsafe_n` unsafe records and `helpful_n` helpful
/// examples, deterministically in the seed. Safe-image records keep their
/// instruction sub-pairs intact because sampling is per record.
pub fn build_safety_mixture(
    unsafe_pool: &[SafetyRecord],
    sft_pool: &[SftExample],
    unsafe_n: usize,
    helpful_n: usize,
    seed: u64,
) -> Result<SafetyMixture> {
    for r in unsafe_pool {
        r.validate()?;
    }
    if unsafe_n > unsafe_pool.len() {
        return Err(ForgeError::InsufficientPool(format!(
            "requested {unsafe_n} unsafe records, pool holds {}",
            unsafe_pool.len()
        )));
    }
    if helpful_n > sft_pool.len() {
        return Err(ForgeError::InsufficientPool(format!(
            "requested {helpful_n} helpful examples, pool holds {}",
            sft_pool.len()
        )));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let unsafe_examples: Vec<SafetyRecord> = sample_indices(unsafe_pool.len(), unsafe_n, &mut rng)
        .into_iter()
        .map(|i| unsafe_pool[i].clone())
        .collect();
    rng.set_stream(2);
    let helpful_examples: Vec<SftExample> = sample_indices(sft_pool.len(), helpful_n, &mut rng)
        .into_iter()
        .map(|i| sft_pool[i].clone())
        .collect();
    Ok(SafetyMixture {
        unsafe_examples,
        helpful_examples,
        epochs: DEFAULT_SAFETY_EPOCHS,
        unsafe_only_warning: helpful_n == 0,
    })
}
