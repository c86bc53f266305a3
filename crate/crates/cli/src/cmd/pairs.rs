//! `pairs`: build preference pairs from scored response sets, filtering
//! low-quality winners and reporting what the filters removed.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::preference::{build_pairs, ScoredResponseSet};
use clap::Args;
use serde_json::json;

use crate::cmd::ocr::derive_out;
use crate::cmd::CommonArgs;
use crate::config::{resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::{read_jsonl, write_jsonl};
use crate::report::RunReport;

#[derive(Debug, Args)]
pub struct PairsArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Scored response sets JSONL.
    #[arg(long = "in", value_name = "JSONL")]
    pub input: Option<PathBuf>,

    /// Minimum mean score the preferred response must reach.
    #[arg(long)]
    pub tau: Option<f64>,

    /// Output pairs JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

pub fn run(args: &PairsArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("pairs")?;
    let input = args
        .input
        .clone()
        .or(section.path("in")?)
        .ok_or_else(|| CliError::Usage("pairs needs --in".into()))?;
    let tau = args.tau.or(section.f64("tau")?).unwrap_or(4.0);
    let out = args
        .out
        .clone()
        .or(section.path("out")?)
        .unwrap_or_else(|| derive_out(&input, "pairs.jsonl"));
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "in": input.display().to_string(),
        "tau": tau,
        "out": out.display().to_string(),
    });
    let mut report = RunReport::new("pairs", seed, config);
    let t_total = Instant::now();

    let sets: Vec<ScoredResponseSet> = read_jsonl(&input)?;
    let t_build = Instant::now();
    let pair_report = build_pairs(&sets, tau)?;
    report.timing("build", t_build);

    report.check(
        "preferred_differs",
        pair_report
            .pairs
            .iter()
            .all(|p| p.dispreferred.iter().all(|d| *d != p.preferred)),
        "no pair prefers and disprefers the same response",
    );
    report.check(
        "threshold_respected",
        pair_report.pairs.iter().all(|p| p.preferred_mean >= tau),
        format!("every preferred mean is at least {tau}"),
    );

    write_jsonl(&out, &pair_report.pairs)?;
    report.output(&out);
    report.count("sets_in", sets.len() as u64);
    report.count("pairs", pair_report.pairs.len() as u64);
    report.count("dropped_low_score", pair_report.dropped_low_score as u64);
    report.count(
        "skipped_few_responses",
        pair_report.skipped_few_responses.len() as u64,
    );
    report.extra(
        "skipped_instruction_ids",
        serde_json::to_value(&pair_report.skipped_few_responses)
            .map_err(|e| CliError::Run(e.to_string()))?,
    );
    report.timing("total", t_total);
    Ok(report)
}
