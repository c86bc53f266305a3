//! `resample`: encode one image through the frozen stub and compress it to
//! latent vision tokens, saved as a flat checkpoint.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::imaging::{extract_patches, plan_patches, BASE_RESOLUTION, MAX_PATCHES};
use blip3_forge::resampler::{output_rows, resample, ResamplerConfig, ResamplerParams, SamplingMode};
use blip3_forge::training::save_checkpoint;
use blip3_forge::vision_stub::{VisionStub, VisionStubConfig, D_MODEL, VIT_PATCH};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{parse_enum, resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::load_image;
use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    /// Each patch resampled independently; m tokens per buffer.
    PerPatch,
    /// One pass over all buffers together; m tokens total.
    Fixed,
}

impl ModeArg {
    fn to_mode(self) -> SamplingMode {
        match self {
            ModeArg::PerPatch => SamplingMode::PerPatch,
            ModeArg::Fixed => SamplingMode::FixedSampling,
        }
    }

    fn name(self) -> &'static str {
        match self {
            ModeArg::PerPatch => "per_patch",
            ModeArg::Fixed => "fixed",
        }
    }
}

#[derive(Debug, Args)]
pub struct ResampleArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Image to encode.
    #[arg(long, value_name = "PNG")]
    pub image: Option<PathBuf>,

    /// Patch edge length in pixels.
    #[arg(long)]
    pub base: Option<u32>,

    /// Largest admissible patch count.
    #[arg(long)]
    pub max_patches: Option<u32>,

    /// Encoder cell edge; base/vit-patch cells per side.
    #[arg(long)]
    pub vit_patch: Option<u32>,

    /// Embedding width.
    #[arg(long)]
    pub d_model: Option<usize>,

    /// Latent query count m.
    #[arg(short = 'm', long)]
    pub queries: Option<usize>,

    /// Resampler depth.
    #[arg(long)]
    pub layers: Option<usize>,

    /// Attention heads; must divide d-model.
    #[arg(long)]
    pub heads: Option<usize>,

    /// Sampling mode.
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,

    /// Output stem; writes <stem>.bin and <stem>.json.
    #[arg(long, value_name = "STEM")]
    pub out: Option<PathBuf>,
}

pub fn run(args: &ResampleArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("resample")?;
    let image = args
        .image
        .clone()
        .or(section.path("image")?)
        .ok_or_else(|| CliError::Usage("resample needs --image".into()))?;
    let base = args.base.or(section.u32("base")?).unwrap_or(BASE_RESOLUTION);
    let max_patches = args
        .max_patches
        .or(section.u32("max_patches")?)
        .unwrap_or(MAX_PATCHES);
    let vit_patch = args
        .vit_patch
        .or(section.u32("vit_patch")?)
        .unwrap_or(VIT_PATCH);
    let d_model = args.d_model.or(section.usize("d_model")?).unwrap_or(D_MODEL);
    let queries = args.queries.or(section.usize("queries")?).unwrap_or(128);
    let layers = args.layers.or(section.usize("layers")?).unwrap_or(2);
    let heads = args.heads.or(section.usize("heads")?).unwrap_or(4);
    let mode = args
        .mode
        .or(parse_enum::<ModeArg>(&section, "mode")?)
        .unwrap_or(ModeArg::PerPatch);
    let out = args
        .out
        .clone()
        .or(section.path("out")?)
        .unwrap_or_else(|| PathBuf::from("resampled"));
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "image": image.display().to_string(),
        "base": base,
        "max_patches": max_patches,
        "vit_patch": vit_patch,
        "d_model": d_model,
        "queries": queries,
        "layers": layers,
        "heads": heads,
        "mode": mode.name(),
        "out": out.display().to_string(),
    });
    let mut report = RunReport::new("resample", seed, config);
    let t_total = Instant::now();

    let pixels = load_image(&image)?;
    let plan = plan_patches(pixels.dims(), base, max_patches)?;
    let buffers = extract_patches(&pixels, &plan)?;

    // The stub is frozen: seed alone determines its projection.
    let stub = VisionStub::new(VisionStubConfig {
        base,
        vit_patch,
        d_model,
        seed,
    })?;
    let t_encode = Instant::now();
    let embeds = buffers
        .par_iter()
        .map(|b| stub.encode_patch(b))
        .collect::<Result<Vec<_>, _>>()?;
    report.timing("encode", t_encode);
    let patches: Vec<_> = embeds.into_iter().map(|e| e.tokens).collect();

    let params = ResamplerParams::init(&ResamplerConfig {
        queries,
        d_model,
        layers,
        heads,
        seed: seed.wrapping_add(1),
    })?;
    let t_resample = Instant::now();
    let mode_impl = mode.to_mode();
    let tokens = resample(&patches, &params, &mode_impl)?;
    report.timing("resample", t_resample);

    report.count("patches", plan.grid.patch_count() as u64);
    report.count("buffers", buffers.len() as u64);
    report.count("tokens_out", tokens.rows() as u64);
    report.count("d_model", tokens.cols() as u64);
    report.value(
        "reduction_per_patch",
        stub.config().tokens_per_patch() as f64 / queries as f64,
    );

    let want = output_rows(queries, buffers.len(), &mode_impl);
    report.check(
        "token_count_law",
        tokens.rows() == want && tokens.cols() == d_model,
        format!("{}x{} output, expected {want}x{d_model}", tokens.rows(), tokens.cols()),
    );
    report.check(
        "finite_output",
        tokens.is_finite(),
        "every emitted coordinate is finite",
    );
    report.check(
        "stub_frozen",
        stub.weight_hash() == VisionStub::new(*stub.config())?.weight_hash(),
        format!("projection digest {}", &stub.weight_hash()[..16]),
    );

    let meta = json!({
        "rows": tokens.rows(),
        "cols": tokens.cols(),
        "mode": mode.name(),
        "image": image.display().to_string(),
        "stub_weight_hash": stub.weight_hash(),
    });
    let (bin, header) = save_checkpoint(&out, "resampled_tokens", meta, tokens.as_slice())?;
    report.output(&bin);
    report.output(&header);
    report.timing("total", t_total);
    Ok(report)
}
