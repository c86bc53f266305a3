//! `plan`: compute the tiling plan for one image and report its geometry.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::imaging::{plan_patches, ImageDims, BASE_RESOLUTION, MAX_PATCHES};
use clap::Args;
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::load_image;
use crate::report::RunReport;

#[derive(Debug, Args)]
pub struct PlanArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Image file whose dimensions drive the plan.
    #[arg(long, value_name = "PNG", conflicts_with_all = ["width", "height"])]
    pub image: Option<PathBuf>,

    /// Source width in pixels (with --height, instead of --image).
    #[arg(long, requires = "height")]
    pub width: Option<u32>,

    /// Source height in pixels.
    #[arg(long, requires = "width")]
    pub height: Option<u32>,

    /// Patch edge length in pixels.
    #[arg(long)]
    pub base: Option<u32>,

    /// Largest admissible patch count (grid cols x rows).
    #[arg(long)]
    pub max_patches: Option<u32>,

    /// Also write the plan JSON to this file.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn run(args: &PlanArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("plan")?;
    let base = args.base.or(section.u32("base")?).unwrap_or(BASE_RESOLUTION);
    let max_patches = args
        .max_patches
        .or(section.u32("max_patches")?)
        .unwrap_or(MAX_PATCHES);
    let width = args.width.or(section.u32("width")?);
    let height = args.height.or(section.u32("height")?);
    let image = args.image.clone().or(section.path("image")?);
    let out = args.out.clone().or(section.path("out")?);
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let t_total = Instant::now();
    let (dims, source_label) = match (&image, width, height) {
        (Some(path), None, None) => {
            let img = load_image(path)?;
            (img.dims(), path.display().to_string())
        }
        (None, Some(w), Some(h)) => (
            ImageDims::new(w, h).map_err(|e| CliError::Usage(e.to_string()))?,
            format!("{w}x{h}"),
        ),
        _ => {
            return Err(CliError::Usage(
                "give either --image or both --width and --height".into(),
            ))
        }
    };

    let config = json!({
        "base": base,
        "max_patches": max_patches,
        "source": source_label,
        "width": dims.width,
        "height": dims.height,
    });
    let mut report = RunReport::new("plan", seed, config);

    let t_plan = Instant::now();
    let plan = plan_patches(dims, base, max_patches)?;
    report.timing("plan", t_plan);

    let patches = plan.grid.patch_count();
    report.count("grid_cols", plan.grid.cols as u64);
    report.count("grid_rows", plan.grid.rows as u64);
    report.count("patches", patches as u64);
    report.count("buffers", plan.buffer_count() as u64);

    report.check(
        "patch_budget",
        patches <= max_patches,
        format!("{patches} patches within budget {max_patches}"),
    );
    report.check(
        "global_view_rule",
        plan.include_global == (patches > 1),
        format!(
            "include_global={} for a {}x{} grid",
            plan.include_global, plan.grid.cols, plan.grid.rows
        ),
    );
    let canvas = plan.canvas_dims();
    let tiled: u64 = plan.patch_boxes.iter().map(|b| b.area()).sum();
    let square = plan
        .patch_boxes
        .iter()
        .all(|b| b.width() == base && b.height() == base);
    report.check(
        "canvas_tiled",
        square && tiled == canvas.width as u64 * canvas.height as u64,
        format!(
            "{} base-square boxes cover the {}x{} canvas",
            plan.patch_boxes.len(),
            canvas.width,
            canvas.height
        ),
    );

    report.extra("plan", serde_json::to_value(&plan).map_err(|e| CliError::Run(e.to_string()))?);
    if let Some(path) = &out {
        let text = serde_json::to_string_pretty(&plan).map_err(|e| CliError::Run(e.to_string()))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        report.output(path);
    }
    report.timing("total", t_total);
    Ok(report)
}
