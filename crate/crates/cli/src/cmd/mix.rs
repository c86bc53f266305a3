//! `mix`: interleave dataset sources at exact weighted ratios. The mixture
//! spec is a TOML file of named, weighted JSONL sources; the realized
//! per-source counts land in the report keyed by source name.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use blip3_forge::mixer::{mix, schedule, realized_counts, ExhaustionPolicy, MixEntry};
use clap::{Args, ValueEnum};
use serde::Deserialize;
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{parse_enum, resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::read_lines;
use crate::report::RunReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PolicyArg {
    /// Exhausted sources restart from the top.
    Wrap,
    /// Exhausted sources drop out; survivors keep their mutual ratio.
    Drop,
}

impl PolicyArg {
    fn to_policy(self) -> ExhaustionPolicy {
        match self {
            PolicyArg::Wrap => ExhaustionPolicy::Wrap,
            PolicyArg::Drop => ExhaustionPolicy::Drop,
        }
    }

    fn name(self) -> &'static str {
        match self {
            PolicyArg::Wrap => "wrap",
            PolicyArg::Drop => "drop",
        }
    }
}

/// One source in the mixture spec file.
#[derive(Debug, Deserialize)]
struct MixSource {
    name: String,
    weight: u64,
    path: PathBuf,
}

#[derive(Debug, Deserialize)]
struct MixSpec {
    source: Vec<MixSource>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Mixture spec: TOML with [[source]] tables (name, weight, path).
    #[arg(long, value_name = "TOML")]
    pub spec: Option<PathBuf>,

    /// Number of records to draw.
    #[arg(short = 'n', long = "draws")]
    pub draws: Option<usize>,

    /// What to do when a source runs out.
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,

    /// Write the mixed JSONL stream here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn load_spec(path: &Path) -> CliResult<MixSpec> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("spec {}: {e}", path.display())))?;
    let spec: MixSpec = toml::from_str(&text)
        .map_err(|e| CliError::Usage(format!("spec {}: {e}", path.display())))?;
    if spec.source.is_empty() {
        return Err(CliError::Usage(format!(
            "spec {}: needs at least one [[source]]",
            path.display()
        )));
    }
    Ok(spec)
}

pub fn run(args: &MixArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("mix")?;
    let spec_path = args
        .spec
        .clone()
        .or(section.path("spec")?)
        .ok_or_else(|| CliError::Usage("mix needs --spec".into()))?;
    let draws = args.draws.or(section.usize("draws")?).or(section.usize("n")?);
    let draws = draws.ok_or_else(|| CliError::Usage("mix needs -n/--draws".into()))?;
    let policy = args
        .policy
        .or(parse_enum::<PolicyArg>(&section, "policy")?)
        .unwrap_or(PolicyArg::Wrap);
    let out = args.out.clone().or(section.path("out")?);
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let spec = load_spec(&spec_path)?;
    let config = json!({
        "spec": spec_path.display().to_string(),
        "draws": draws,
        "policy": policy.name(),
        "sources": spec.source.iter()
            .map(|s| json!({"name": s.name, "weight": s.weight, "path": s.path.display().to_string()}))
            .collect::<Vec<_>>(),
    });
    let mut report = RunReport::new("mix", seed, config);
    let t_total = Instant::now();

    let entries: Vec<MixEntry> = spec
        .source
        .iter()
        .map(|s| MixEntry {
            name: s.name.clone(),
            weight: s.weight,
        })
        .collect();
    let t_read = Instant::now();
    let items: Vec<Vec<String>> = spec
        .source
        .iter()
        .map(|s| read_lines(&s.path))
        .collect::<CliResult<_>>()?;
    report.timing("read_sources", t_read);

    let t_mix = Instant::now();
    let mixed = mix(&entries, &items, draws, policy.to_policy())?;
    report.timing("mix", t_mix);

    let mut realized: BTreeMap<String, u64> = BTreeMap::new();
    let mut wraps: BTreeMap<String, u64> = BTreeMap::new();
    for item in &mixed {
        *realized.entry(item.source.clone()).or_default() += 1;
        let w = wraps.entry(item.source.clone()).or_default();
        *w = (*w).max(item.epoch);
    }
    for (name, n) in &realized {
        report.count(name, *n);
    }
    report.count("total", mixed.len() as u64);
    report.extra(
        "max_epoch",
        serde_json::to_value(&wraps).map_err(|e| CliError::Run(e.to_string()))?,
    );

    report.check(
        "draw_total",
        mixed.len() == draws,
        format!("{} of {draws} requested records", mixed.len()),
    );
    if policy == PolicyArg::Wrap {
        // The wrap policy realizes the schedule exactly.
        let planned = realized_counts(&entries, &schedule(&entries, draws)?);
        let exact = planned
            .iter()
            .all(|(name, n)| realized.get(name).copied().unwrap_or(0) == *n as u64);
        report.check(
            "schedule_exact",
            exact,
            "realized counts equal the scheduled counts",
        );
    }

    if let Some(path) = &out {
        // Lines pass through verbatim so the mixed stream stays a valid
        // corpus for downstream commands; provenance lives in the report.
        let mut text = String::new();
        for m in &mixed {
            text.push_str(&m.item);
            text.push('\n');
        }
        std::fs::write(path, text).map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        report.output(path);
    }
    report.timing("total", t_total);
    Ok(report)
}
