//! `pack`: tokenize an interleaved JSONL corpus and pack it into fixed-length
//! training shards, re-checking the mask law and vision-span atomicity on
//! the packed output.

use std::collections::HashMap;
use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::corpus::{read_docs_jsonl, write_shards};
use blip3_forge::imaging::{plan_patches, ImageDims, PatchPlan, BASE_RESOLUTION, MAX_PATCHES};
use blip3_forge::sequencer::{pack_all, tokenize_doc, Block, MaskingMode, TokenKind, TokenSequence};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{parse_enum, resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MaskingArg {
    /// Every text token bears loss.
    AllText,
    /// Only the final text block of each document bears loss.
    CompletionOnly,
}

impl MaskingArg {
    pub fn to_mode(self) -> MaskingMode {
        match self {
            MaskingArg::AllText => MaskingMode::AllText,
            MaskingArg::CompletionOnly => MaskingMode::CompletionOnly,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            MaskingArg::AllText => "all_text",
            MaskingArg::CompletionOnly => "completion_only",
        }
    }
}

#[derive(Debug, Args)]
pub struct PackArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Corpus JSONL, one interleaved document per line.
    #[arg(long = "in", value_name = "JSONL")]
    pub input: Option<PathBuf>,

    /// Packing context length C.
    #[arg(long)]
    pub context: Option<usize>,

    /// Vision tokens per buffer (latent query count m).
    #[arg(short = 'm', long)]
    pub queries: Option<usize>,

    /// Patch edge length for tiling plans.
    #[arg(long)]
    pub base: Option<u32>,

    /// Largest admissible patch count per image.
    #[arg(long)]
    pub max_patches: Option<u32>,

    /// Loss masking mode.
    #[arg(long, value_enum)]
    pub masking: Option<MaskingArg>,

    /// Records per shard file.
    #[arg(long)]
    pub per_shard: Option<usize>,

    /// Shard file stem.
    #[arg(long)]
    pub stem: Option<String>,

    /// Output directory for shards and the index.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// Builds one tiling plan per distinct image id, rejecting an id that
/// appears with two different sizes.
fn collect_plans(
    docs: &[blip3_forge::sequencer::InterleavedDoc],
    base: u32,
    max_patches: u32,
) -> CliResult<HashMap<String, PatchPlan>> {
    let mut dims: HashMap<String, ImageDims> = HashMap::new();
    for doc in docs {
        for block in &doc.blocks {
            if let Block::Image { image, w, h } = block {
                let d = ImageDims::new(*w, *h)?;
                if let Some(prev) = dims.insert(image.clone(), d) {
                    if prev != d {
                        return Err(CliError::Run(format!(
                            "image id {image:?} appears as {}x{} and {}x{}",
                            prev.width, prev.height, d.width, d.height
                        )));
                    }
                }
            }
        }
    }
    let mut plans = HashMap::with_capacity(dims.len());
    for (id, d) in dims {
        plans.insert(id, plan_patches(d, base, max_patches)?);
    }
    Ok(plans)
}

/// True when every loss-bearing position is text and every vision run is
/// flanked by image boundaries on both sides.
fn sequence_laws_hold(seq: &TokenSequence) -> bool {
    let mask_law = (0..seq.len()).all(|p| !seq.loss_mask[p] || seq.kinds[p] == TokenKind::Text);
    let mut atomic = true;
    let mut p = 0;
    while p < seq.len() {
        if seq.kinds[p] == TokenKind::Vision {
            let start = p;
            while p < seq.len() && seq.kinds[p] == TokenKind::Vision {
                p += 1;
            }
            let before = start > 0 && seq.kinds[start - 1] == TokenKind::ImageBoundary;
            let after = p < seq.len() && seq.kinds[p] == TokenKind::ImageBoundary;
            atomic &= before && after;
        } else {
            p += 1;
        }
    }
    mask_law && atomic
}

pub fn run(args: &PackArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("pack")?;
    let input = args
        .input
        .clone()
        .or(section.path("in")?)
        .ok_or_else(|| CliError::Usage("pack needs --in".into()))?;
    let context = args.context.or(section.usize("context")?).unwrap_or(512);
    let queries = args.queries.or(section.usize("queries")?).unwrap_or(4);
    let base = args.base.or(section.u32("base")?).unwrap_or(BASE_RESOLUTION);
    let max_patches = args
        .max_patches
        .or(section.u32("max_patches")?)
        .unwrap_or(MAX_PATCHES);
    let masking = args
        .masking
        .or(parse_enum::<MaskingArg>(&section, "masking")?)
        .unwrap_or(MaskingArg::AllText);
    let per_shard = args.per_shard.or(section.usize("per_shard")?).unwrap_or(1000);
    let stem = args
        .stem
        .clone()
        .or(section.string("stem")?)
        .unwrap_or_else(|| "pack".to_string());
    let out = args
        .out
        .clone()
        .or(section.path("out")?)
        .unwrap_or_else(|| PathBuf::from("shards"));
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "in": input.display().to_string(),
        "context": context,
        "queries": queries,
        "base": base,
        "max_patches": max_patches,
        "masking": masking.name(),
        "per_shard": per_shard,
        "stem": stem,
        "out": out.display().to_string(),
    });
    let mut report = RunReport::new("pack", seed, config);
    let t_total = Instant::now();

    let docs = read_docs_jsonl(&input)?;
    let plans = collect_plans(&docs, base, max_patches)?;

    let t_tok = Instant::now();
    let tokenized = docs
        .par_iter()
        .map(|doc| {
            tokenize_doc(doc, &plans, queries, masking.to_mode())
                .map(|seq| (doc.doc_id.clone(), seq))
        })
        .collect::<Result<Vec<_>, _>>()?;
    report.timing("tokenize", t_tok);

    let t_pack = Instant::now();
    let (seqs, pack_report) = pack_all(&tokenized, context)?;
    report.timing("pack", t_pack);

    let t_check = Instant::now();
    let uniform = seqs.par_iter().all(|s| s.len() == context);
    let laws = seqs.par_iter().all(sequence_laws_hold);
    report.timing("invariant_scan", t_check);
    report.check(
        "uniform_length",
        uniform,
        format!("every packed sequence is {context} tokens"),
    );
    report.check(
        "mask_law_and_atomicity",
        laws,
        "loss only on text; vision runs flanked by boundaries",
    );

    let index = write_shards(&out, &stem, &seqs, per_shard, context, &pack_report)?;
    report.count("docs_in", pack_report.docs_in as u64);
    report.count("docs_rejected", pack_report.docs_rejected.len() as u64);
    report.count("sequences", index.total_sequences as u64);
    report.count("shards", index.shards.len() as u64);
    report.count("tokens_accepted", pack_report.tokens_accepted as u64);
    report.count("pad_tokens", index.pad_tokens as u64);
    let total_out = (index.pad_tokens + index.non_pad_tokens) as f64;
    if total_out > 0.0 {
        report.value("pad_fraction", index.pad_tokens as f64 / total_out);
    }
    report.extra(
        "rejected_doc_ids",
        serde_json::to_value(&pack_report.docs_rejected).map_err(|e| CliError::Run(e.to_string()))?,
    );
    for shard in &index.shards {
        report.output(&out.join(&shard.file));
    }
    report.output(&out.join(format!("{stem}-index.json")));
    report.timing("total", t_total);
    Ok(report)
}
