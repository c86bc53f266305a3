//! `ocr`: emit OCR captions at one granularity level, round-trip checking
//! every caption through the annotation parser before reporting success.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::curation::{
    ocr_caption, parse_augmented, strip_stop_phrases, OcrLevel, OcrRecord, ParsedInfo,
    DEFAULT_STOP_PHRASES,
};
use clap::Args;
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::{read_jsonl, write_jsonl};
use crate::report::RunReport;

#[derive(Debug, Args)]
pub struct OcrArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Caption granularity level, 0..=5 (unit index * 2 + bbox flag).
    #[arg(long)]
    pub level: Option<u8>,

    /// OCR records JSONL.
    #[arg(long = "in", value_name = "JSONL")]
    pub input: Option<PathBuf>,

    /// Output captions JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Stop phrase to strip from item text (repeatable; defaults built in).
    #[arg(long = "stop-phrase", value_name = "PHRASE")]
    pub stop_phrases: Vec<String>,
}

/// One emitted caption row.
#[derive(Debug, Serialize)]
struct CaptionRow {
    image_id: String,
    level: u8,
    caption: String,
}

/// Default output path: the input with its extension swapped.
pub fn derive_out(input: &PathBuf, suffix: &str) -> PathBuf {
    let mut out = input.clone();
    out.set_extension(suffix);
    out
}

pub fn run(args: &OcrArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("ocr")?;
    let level_idx = args
        .level
        .or(section.u8("level")?)
        .ok_or_else(|| CliError::Usage("ocr needs --level 0..=5".into()))?;
    let input = args
        .input
        .clone()
        .or(section.path("in")?)
        .ok_or_else(|| CliError::Usage("ocr needs --in".into()))?;
    let out = args
        .out
        .clone()
        .or(section.path("out")?)
        .unwrap_or_else(|| derive_out(&input, "captions.jsonl"));
    let stops: Vec<String> = if !args.stop_phrases.is_empty() {
        args.stop_phrases.clone()
    } else {
        section
            .strings("stop_phrases")?
            .unwrap_or_else(|| DEFAULT_STOP_PHRASES.iter().map(|s| s.to_string()).collect())
    };
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let level = OcrLevel::from_index(level_idx).map_err(|e| CliError::Usage(e.to_string()))?;
    let config = json!({
        "level": level_idx,
        "in": input.display().to_string(),
        "out": out.display().to_string(),
        "stop_phrases": stops,
    });
    let mut report = RunReport::new("ocr", seed, config);
    let t_total = Instant::now();

    let records: Vec<OcrRecord> = read_jsonl(&input)?;
    for rec in &records {
        rec.validate()?;
    }
    let stop_refs: Vec<&str> = stops.iter().map(String::as_str).collect();

    let t_emit = Instant::now();
    let rows: Vec<CaptionRow> = records
        .par_iter()
        .map(|rec| CaptionRow {
            image_id: rec.image_id.clone(),
            level: level_idx,
            caption: ocr_caption(rec, level, &stop_refs),
        })
        .collect();
    report.timing("emit", t_emit);

    // Round trip: each caption parses, every recovered bbox belongs to the
    // source record, and the annotation count matches the items that
    // survived unit filtering and stop-phrase stripping.
    let t_check = Instant::now();
    let round_trip = rows
        .par_iter()
        .zip(records.par_iter())
        .all(|(row, rec)| {
            if !level.with_bbox {
                // Plain levels carry no markers; nothing to parse.
                return !row.caption.contains("<bbox>");
            }
            let Ok(segments) = parse_augmented(&row.caption) else {
                return false;
            };
            let survivors = rec
                .items
                .iter()
                .filter(|i| i.level == level.unit)
                .filter(|i| !strip_stop_phrases(&i.text, &stop_refs).is_empty())
                .count();
            segments.len() == survivors
                && segments.iter().all(|seg| match seg.info {
                    ParsedInfo::Bbox(b) => rec.items.iter().any(|i| i.bbox == b),
                    _ => false,
                })
        });
    report.timing("round_trip", t_check);
    report.check(
        "caption_round_trip",
        round_trip,
        "parser recovers every emitted annotation",
    );

    write_jsonl(&out, &rows)?;
    report.output(&out);
    report.count("records", records.len() as u64);
    report.count(
        "items_in",
        records.iter().map(|r| r.items.len() as u64).sum(),
    );
    report.count(
        "nonempty_captions",
        rows.iter().filter(|r| !r.caption.is_empty()).count() as u64,
    );
    report.timing("total", t_total);
    Ok(report)
}
