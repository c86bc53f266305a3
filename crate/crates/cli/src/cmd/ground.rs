//! `ground`: rewrite captions with localization info in one of the three
//! formats, reporting the labels that could not be grounded.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::curation::{
    ground_caption, parse_augmented, GroundFormat, GroundRecord, ParsedInfo,
};
use clap::{Args, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::cmd::ocr::derive_out;
use crate::cmd::CommonArgs;
use crate::config::{parse_enum, resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::{read_jsonl, write_jsonl};
use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    /// `label ( <bbox>x1, y1, x2, y2</bbox> )`
    BboxTag,
    /// `label ( starts at (x1, y1) and extends up to (x2, y2) )`
    StartsExtends,
    /// `label ( <region name> )`
    RegionName,
}

impl FormatArg {
    fn to_format(self) -> GroundFormat {
        match self {
            FormatArg::BboxTag => GroundFormat::BboxTag,
            FormatArg::StartsExtends => GroundFormat::StartsExtends,
            FormatArg::RegionName => GroundFormat::RegionName,
        }
    }

    fn name(self) -> &'static str {
        match self {
            FormatArg::BboxTag => "bbox_tag",
            FormatArg::StartsExtends => "starts_extends",
            FormatArg::RegionName => "region_name",
        }
    }
}

#[derive(Debug, Args)]
pub struct GroundArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Localization rendering.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    /// Grounding records JSONL.
    #[arg(long = "in", value_name = "JSONL")]
    pub input: Option<PathBuf>,

    /// Output captions JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Serialize)]
struct GroundRow {
    image_id: String,
    fmt: String,
    caption: String,
    skipped: Vec<String>,
}

pub fn run(args: &GroundArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("ground")?;
    let format = args
        .format
        .or(parse_enum::<FormatArg>(&section, "format")?)
        .ok_or_else(|| CliError::Usage("ground needs --format".into()))?;
    let input = args
        .input
        .clone()
        .or(section.path("in")?)
        .ok_or_else(|| CliError::Usage("ground needs --in".into()))?;
    let out = args
        .out
        .clone()
        .or(section.path("out")?)
        .unwrap_or_else(|| derive_out(&input, "grounded.jsonl"));
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "format": format.name(),
        "in": input.display().to_string(),
        "out": out.display().to_string(),
    });
    let mut report = RunReport::new("ground", seed, config);
    let t_total = Instant::now();

    let records: Vec<GroundRecord> = read_jsonl(&input)?;
    for rec in &records {
        rec.validate()?;
    }

    let t_emit = Instant::now();
    let fmt_impl = format.to_format();
    let rows: Vec<GroundRow> = records
        .par_iter()
        .map(|rec| {
            let grounded = ground_caption(rec, fmt_impl);
            GroundRow {
                image_id: rec.image_id.clone(),
                fmt: format.name().to_string(),
                caption: grounded.caption,
                skipped: grounded.skipped,
            }
        })
        .collect();
    report.timing("emit", t_emit);

    // Every grounded caption must parse; in bbox form the recovered boxes
    // must all come from the record's objects.
    let t_check = Instant::now();
    let round_trip = rows.par_iter().zip(records.par_iter()).all(|(row, rec)| {
        let Ok(segments) = parse_augmented(&row.caption) else {
            return false;
        };
        let grounded_n = rec.objects.len() - row.skipped.len();
        segments.len() == grounded_n
            && segments.iter().all(|seg| match &seg.info {
                ParsedInfo::Bbox(b) => {
                    format == FormatArg::BboxTag && rec.objects.iter().any(|o| o.bbox == *b)
                }
                ParsedInfo::StartsExtends(b) => {
                    format == FormatArg::StartsExtends && rec.objects.iter().any(|o| o.bbox == *b)
                }
                ParsedInfo::Region(_) => format == FormatArg::RegionName,
            })
    });
    report.timing("round_trip", t_check);
    report.check(
        "caption_round_trip",
        round_trip,
        "parser recovers every grounded annotation",
    );

    write_jsonl(&out, &rows)?;
    report.output(&out);
    report.count("records", records.len() as u64);
    report.count(
        "objects_in",
        records.iter().map(|r| r.objects.len() as u64).sum(),
    );
    let skipped: u64 = rows.iter().map(|r| r.skipped.len() as u64).sum();
    report.count("labels_skipped", skipped);
    report.count(
        "objects_grounded",
        records.iter().map(|r| r.objects.len() as u64).sum::<u64>() - skipped,
    );
    report.timing("total", t_total);
    Ok(report)
}
