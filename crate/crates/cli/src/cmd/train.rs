//! `train`: run full-batch gradient descent on the resampler and decoder
//! over a corpus, with the vision stub frozen. `--corpus toy` selects the
//! bundled deterministic 20-document corpus; any other value must be a
//! directory holding `corpus.jsonl` plus the image files it references.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use blip3_forge::corpus::read_docs_jsonl;
use blip3_forge::decoder::DecoderParams;
use blip3_forge::imaging::{extract_patches, plan_patches, PatchPlan};
use blip3_forge::resampler::{ResamplerConfig, ResamplerParams};
use blip3_forge::sequencer::{tokenize_doc, Block, VOCAB_SIZE};
use blip3_forge::training::{
    build_toy_corpus, save_checkpoint, train_run, write_train_log, ToyCorpusConfig, TrainItem,
};
use blip3_forge::vision_stub::{VisionStub, VisionStubConfig};
use clap::Args;
use serde_json::json;

use crate::cmd::pack::MaskingArg;
use crate::cmd::CommonArgs;
use crate::config::{parse_enum, resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::{load_image, write_loss_csv};
use crate::report::RunReport;

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Corpus: the literal name "toy", or a directory with corpus.jsonl.
    #[arg(long, value_name = "PATH")]
    pub corpus: Option<PathBuf>,

    /// Gradient steps.
    #[arg(long)]
    pub steps: Option<usize>,

    /// Learning rate.
    #[arg(long)]
    pub lr: Option<f64>,

    /// Toy corpus document count.
    #[arg(long)]
    pub docs: Option<usize>,

    /// Patch edge length in pixels.
    #[arg(long)]
    pub base: Option<u32>,

    /// Encoder cell edge.
    #[arg(long)]
    pub vit_patch: Option<u32>,

    /// Embedding width shared by stub, resampler, and decoder.
    #[arg(long)]
    pub d_model: Option<usize>,

    /// Latent query count m.
    #[arg(short = 'm', long)]
    pub queries: Option<usize>,

    /// Largest admissible patch count per image.
    #[arg(long)]
    pub max_patches: Option<u32>,

    /// Resampler depth.
    #[arg(long)]
    pub layers: Option<usize>,

    /// Resampler attention heads.
    #[arg(long)]
    pub heads: Option<usize>,

    /// Loss masking for on-disk corpora (the toy corpus is all-text).
    #[arg(long, value_enum)]
    pub masking: Option<MaskingArg>,

    /// Give the decoder its own output head instead of tying it to the
    /// embedding table.
    #[arg(long)]
    pub untied_head: bool,

    /// Output directory for checkpoints, the log, and the loss curve.
    #[arg(long, value_name = "DIR")]
    pub out: Option<PathBuf>,
}

/// The bundled corpus is addressed by name, not by path.
fn is_toy(path: &Path) -> bool {
    path.file_name().map(|n| n == "toy").unwrap_or(false) && !path.join("corpus.jsonl").exists()
}

struct LoadedCorpus {
    items: Vec<TrainItem>,
    stub: VisionStub,
    docs: usize,
}

/// Loads an on-disk corpus: tokenize every document, cut each referenced
/// image into planned patches, and encode them through the frozen stub.
fn load_disk_corpus(
    dir: &Path,
    stub_cfg: VisionStubConfig,
    queries: usize,
    max_patches: u32,
    masking: MaskingArg,
) -> CliResult<LoadedCorpus> {
    let docs = read_docs_jsonl(dir.join("corpus.jsonl"))?;
    if docs.is_empty() {
        return Err(CliError::Run(format!(
            "{}: corpus.jsonl holds no documents",
            dir.display()
        )));
    }
    let stub = VisionStub::new(stub_cfg)?;
    let mut pixel_cache = HashMap::new();
    let mut items = Vec::with_capacity(docs.len());
    for doc in &docs {
        let mut plans: HashMap<String, PatchPlan> = HashMap::new();
        let mut images = Vec::new();
        for block in &doc.blocks {
            let Block::Image { image, .. } = block else {
                continue;
            };
            if !pixel_cache.contains_key(image) {
                pixel_cache.insert(image.clone(), load_image(&dir.join(image))?);
            }
            let pixels = &pixel_cache[image];
            let plan = plan_patches(pixels.dims(), stub_cfg.base, max_patches)?;
            let buffers = extract_patches(pixels, &plan)?;
            let embeds = stub.encode_all(&buffers)?;
            images.push(embeds.into_iter().map(|e| e.tokens).collect());
            plans.insert(image.clone(), plan);
        }
        let seq = tokenize_doc(doc, &plans, queries, masking.to_mode())?;
        items.push(TrainItem { seq, images });
    }
    Ok(LoadedCorpus {
        items,
        stub,
        docs: docs.len(),
    })
}

pub fn run(args: &TrainArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("train")?;
    let corpus = args
        .corpus
        .clone()
        .or(section.path("corpus")?)
        .ok_or_else(|| CliError::Usage("train needs --corpus".into()))?;
    let steps = args.steps.or(section.usize("steps")?).unwrap_or(50);
    let lr = args.lr.or(section.f64("lr")?).unwrap_or(0.05);
    let toy_defaults = ToyCorpusConfig::default();
    let docs = args.docs.or(section.usize("docs")?).unwrap_or(toy_defaults.docs);
    let base = args.base.or(section.u32("base")?).unwrap_or(toy_defaults.base);
    let vit_patch = args
        .vit_patch
        .or(section.u32("vit_patch")?)
        .unwrap_or(toy_defaults.vit_patch);
    let d_model = args
        .d_model
        .or(section.usize("d_model")?)
        .unwrap_or(toy_defaults.d_model);
    let queries = args
        .queries
        .or(section.usize("queries")?)
        .unwrap_or(toy_defaults.m);
    let max_patches = args
        .max_patches
        .or(section.u32("max_patches")?)
        .unwrap_or(toy_defaults.max_patches);
    let layers = args.layers.or(section.usize("layers")?).unwrap_or(1);
    let heads = args.heads.or(section.usize("heads")?).unwrap_or(2);
    let masking = args
        .masking
        .or(parse_enum::<MaskingArg>(&section, "masking")?)
        .unwrap_or(MaskingArg::AllText);
    let untied = args.untied_head || section.bool("untied_head")?.unwrap_or(false);
    let out = args
        .out
        .clone()
        .or(section.path("out")?)
        .unwrap_or_else(|| PathBuf::from("train-run"));
    let seed = resolve_seed(args.common.seed, &section, &file, toy_defaults.seed)?;
    section.deny_unknown()?;

    if steps == 0 {
        return Err(CliError::Usage("train needs --steps >= 1".into()));
    }

    let toy = is_toy(&corpus);
    let config = json!({
        "corpus": corpus.display().to_string(),
        "toy": toy,
        "steps": steps,
        "lr": lr,
        "docs": docs,
        "base": base,
        "vit_patch": vit_patch,
        "d_model": d_model,
        "queries": queries,
        "max_patches": max_patches,
        "layers": layers,
        "heads": heads,
        "masking": masking.name(),
        "untied_head": untied,
        "out": out.display().to_string(),
    });
    let mut report = RunReport::new("train", seed, config);
    let t_total = Instant::now();

    let t_corpus = Instant::now();
    let loaded = if toy {
        let built = build_toy_corpus(&ToyCorpusConfig {
            docs,
            base,
            vit_patch,
            d_model,
            m: queries,
            max_patches,
            seed,
        })?;
        LoadedCorpus {
            docs: built.docs.len(),
            items: built.items,
            stub: built.stub,
        }
    } else {
        let stub_cfg = VisionStubConfig {
            base,
            vit_patch,
            d_model,
            seed,
        };
        load_disk_corpus(&corpus, stub_cfg, queries, max_patches, masking)?
    };
    report.timing("build_corpus", t_corpus);
    let stub_hash_before = loaded.stub.weight_hash();

    let mut rparams = ResamplerParams::init(&ResamplerConfig {
        queries,
        d_model,
        layers,
        heads,
        seed: seed.wrapping_add(4),
    })?;
    let mut dparams = DecoderParams::init(VOCAB_SIZE, d_model, !untied, seed.wrapping_add(5))?;
    let r_before = rparams.to_flat();
    let d_before = dparams.to_flat();

    let t_train = Instant::now();
    let train_report = train_run(&loaded.items, &mut rparams, &mut dparams, steps, lr)?;
    report.timing("train", t_train);

    report.count("docs", loaded.docs as u64);
    report.count("steps", steps as u64);
    report.count("resampler_params", rparams.param_count() as u64);
    report.count("decoder_params", dparams.param_count() as u64);
    report.value("initial_loss", train_report.initial_loss());
    report.value("final_loss", train_report.final_loss);
    report.value(
        "loss_drop",
        train_report.initial_loss() - train_report.final_loss,
    );

    report.check(
        "loss_improved",
        train_report.final_loss < train_report.initial_loss(),
        format!(
            "{:.6} -> {:.6} over {steps} steps",
            train_report.initial_loss(),
            train_report.final_loss
        ),
    );
    report.check(
        "stub_frozen",
        loaded.stub.weight_hash() == stub_hash_before,
        format!("stub digest {}", &stub_hash_before[..16]),
    );
    report.check(
        "weights_moved",
        rparams.to_flat() != r_before && dparams.to_flat() != d_before,
        "resampler and decoder both changed",
    );
    report.check(
        "weights_finite",
        rparams.to_flat().iter().all(|v| v.is_finite()) && dparams.is_finite(),
        "no NaN or infinity in trained weights",
    );

    std::fs::create_dir_all(&out).map_err(|e| CliError::Run(format!("{}: {e}", out.display())))?;
    let log_path = out.join("train_log.jsonl");
    write_train_log(&log_path, &train_report)?;
    report.output(&log_path);

    let csv_path = out.join("losses.csv");
    let rows: Vec<(usize, f64)> = train_report
        .log_rows()
        .iter()
        .map(|r| (r.step, r.loss))
        .collect();
    write_loss_csv(&csv_path, &rows)?;
    report.output(&csv_path);

    let stub_cfg = *loaded.stub.config();
    for (stem, kind, meta, flat) in [
        (
            "resampler",
            "resampler",
            json!({"queries": queries, "d_model": d_model, "layers": layers, "heads": heads, "seed": seed.wrapping_add(4)}),
            rparams.to_flat(),
        ),
        (
            "decoder",
            "decoder",
            json!({"vocab": VOCAB_SIZE, "d_model": d_model, "tied": !untied, "seed": seed.wrapping_add(5)}),
            dparams.to_flat(),
        ),
        (
            "stub",
            "vision_stub",
            json!({
                "base": stub_cfg.base,
                "vit_patch": stub_cfg.vit_patch,
                "d_model": stub_cfg.d_model,
                "seed": stub_cfg.seed,
                "weight_hash": stub_hash_before,
            }),
            loaded.stub.projection().as_slice().to_vec(),
        ),
    ] {
        let (bin, header) = save_checkpoint(&out.join(stem), kind, meta, &flat)?;
        report.output(&bin);
        report.output(&header);
    }

    report.timing("total", t_total);
    Ok(report)
}
