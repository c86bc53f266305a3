//! `report`: post-run analysis artifacts. Three modes: summarize a training
//! log into a CSV curve, plan a low-rank adapter budget, and assemble a
//! safety fine-tuning mixture.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::preference::{
    build_safety_mixture, plan_lora, LoraTarget, SafetyRecord, SftExample, DEFAULT_SAFETY_EPOCHS,
};
use blip3_forge::training::StepLoss;
use blip3_forge::ForgeError;
use clap::{Args, Subcommand};
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::{read_jsonl, write_loss_csv};
use crate::report::RunReport;

#[derive(Debug, Subcommand)]
pub enum ReportCmd {
    /// Summarize a training log and emit its loss curve as CSV.
    Train(TrainLogArgs),
    /// Choose a uniform adapter rank for a target trainable fraction.
    Lora(LoraArgs),
    /// Sample a safety mixture with exact composition.
    Safety(SafetyArgs),
}

impl ReportCmd {
    pub fn common(&self) -> &CommonArgs {
        match self {
            ReportCmd::Train(a) => &a.common,
            ReportCmd::Lora(a) => &a.common,
            ReportCmd::Safety(a) => &a.common,
        }
    }

    pub fn run(&self) -> CliResult<RunReport> {
        match self {
            ReportCmd::Train(a) => run_train_log(a),
            ReportCmd::Lora(a) => run_lora(a),
            ReportCmd::Safety(a) => run_safety(a),
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainLogArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Training log JSONL of {step, loss} rows.
    #[arg(long, value_name = "JSONL")]
    pub log: Option<PathBuf>,

    /// Write the loss curve CSV here.
    #[arg(long, value_name = "CSV")]
    pub out: Option<PathBuf>,
}

fn run_train_log(args: &TrainLogArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.nested_section("report", "train")?;
    let log = args
        .log
        .clone()
        .or(section.path("log")?)
        .ok_or_else(|| CliError::Usage("report train needs --log".into()))?;
    let out = args.out.clone().or(section.path("out")?);
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "log": log.display().to_string(),
        "out": out.as_ref().map(|p| p.display().to_string()),
    });
    let mut report = RunReport::new("report.train", seed, config);
    let t_total = Instant::now();

    let rows: Vec<StepLoss> = read_jsonl(&log)?;
    if rows.is_empty() {
        return Err(CliError::Run(format!("{}: log is empty", log.display())));
    }
    let contiguous = rows.iter().enumerate().all(|(i, r)| r.step == i);
    let initial = rows.first().map(|r| r.loss).unwrap_or(f64::NAN);
    let final_loss = rows.last().map(|r| r.loss).unwrap_or(f64::NAN);
    let min_loss = rows.iter().map(|r| r.loss).fold(f64::INFINITY, f64::min);

    report.count("rows", rows.len() as u64);
    report.value("initial_loss", initial);
    report.value("final_loss", final_loss);
    report.value("min_loss", min_loss);
    report.check(
        "contiguous_steps",
        contiguous,
        "log rows run 0..n without gaps",
    );
    report.check(
        "training_improved",
        final_loss.is_finite() && initial.is_finite() && final_loss < initial,
        format!("{initial:.6} -> {final_loss:.6}"),
    );

    if let Some(path) = &out {
        let curve: Vec<(usize, f64)> = rows.iter().map(|r| (r.step, r.loss)).collect();
        write_loss_csv(path, &curve)?;
        report.output(path);
    }
    report.timing("total", t_total);
    Ok(report)
}

#[derive(Debug, Args)]
pub struct LoraArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// JSON array of adapter targets {name, d_in, d_out}.
    #[arg(long, value_name = "JSON")]
    pub targets: Option<PathBuf>,

    /// Target trainable fraction of backbone parameters.
    #[arg(long)]
    pub fraction: Option<f64>,

    /// Write the adapter plan JSON here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn run_lora(args: &LoraArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.nested_section("report", "lora")?;
    let targets_path = args
        .targets
        .clone()
        .or(section.path("targets")?)
        .ok_or_else(|| CliError::Usage("report lora needs --targets".into()))?;
    let fraction = args.fraction.or(section.f64("fraction")?).unwrap_or(0.025);
    let out = args.out.clone().or(section.path("out")?);
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "targets": targets_path.display().to_string(),
        "fraction": fraction,
    });
    let mut report = RunReport::new("report.lora", seed, config);
    let t_total = Instant::now();

    let text = std::fs::read_to_string(&targets_path)
        .map_err(|e| CliError::Run(format!("{}: {e}", targets_path.display())))?;
    let targets: Vec<LoraTarget> = serde_json::from_str(&text)
        .map_err(|e| CliError::Run(format!("{}: {e}", targets_path.display())))?;
    report.count("targets", targets.len() as u64);
    report.value("target_fraction", fraction);

    match plan_lora(&targets, fraction) {
        Ok(plan) => {
            report.count("rank", plan.rank as u64);
            report.count("trainable_params", plan.trainable_params as u64);
            report.count("backbone_params", plan.backbone_params as u64);
            report.value("achieved_fraction", plan.achieved_fraction);

            // Re-derive the counts from first principles.
            let trainable: usize = targets.iter().map(|t| plan.rank * (t.d_in + t.d_out)).sum();
            let backbone: usize = targets.iter().map(|t| t.d_in * t.d_out).sum();
            report.check(
                "count_formula",
                trainable == plan.trainable_params && backbone == plan.backbone_params,
                "planned counts match direct parameter counting",
            );
            report.check(
                "fraction_in_band",
                plan.achieved_fraction >= 0.8 * fraction
                    && plan.achieved_fraction <= 1.2 * fraction,
                format!(
                    "rank {} achieves {:.5} for target {fraction}",
                    plan.rank, plan.achieved_fraction
                ),
            );

            if let Some(path) = &out {
                let text = serde_json::to_string_pretty(&plan)
                    .map_err(|e| CliError::Run(e.to_string()))?;
                std::fs::write(path, text + "\n")
                    .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
                report.output(path);
            }
            report.extra(
                "plan",
                serde_json::to_value(&plan).map_err(|e| CliError::Run(e.to_string()))?,
            );
        }
        // An empty band is a legitimate planning outcome, not a failure:
        // the report carries the nearest achievable alternatives.
        Err(ForgeError::LoraBandUnreachable { nearest }) => {
            let alts: Vec<_> = nearest
                .iter()
                .map(|(rank, frac)| json!({"rank": rank, "fraction": frac}))
                .collect();
            report.check(
                "planner_contract",
                true,
                format!(
                    "no uniform rank lands in [{:.5}, {:.5}]; nearest alternatives reported",
                    0.8 * fraction,
                    1.2 * fraction
                ),
            );
            report.extra("unreachable_nearest", json!(alts));
            report.count("rank", 0);
        }
        Err(e) => return Err(e.into()),
    }

    report.timing("total", t_total);
    Ok(report)
}

#[derive(Debug, Args)]
pub struct SafetyArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Objectionable-content pool JSONL.
    #[arg(long, value_name = "JSONL")]
    pub objectionable: Option<PathBuf>,

    /// Helpful instruction-example pool JSONL.
    #[arg(long, value_name = "JSONL")]
    pub helpful: Option<PathBuf>,

    /// Records to draw from the objectionable pool.
    #[arg(long)]
    pub unsafe_n: Option<usize>,

    /// Examples to draw from the helpful pool.
    #[arg(long)]
    pub helpful_n: Option<usize>,

    /// Passes over the mixture during fine-tuning.
    #[arg(long)]
    pub epochs: Option<usize>,

    /// Write the mixture JSON here.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,
}

fn run_safety(args: &SafetyArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.nested_section("report", "safety")?;
    let objectionable = args
        .objectionable
        .clone()
        .or(section.path("objectionable")?)
        .ok_or_else(|| CliError::Usage("report safety needs --objectionable".into()))?;
    let helpful = args
        .helpful
        .clone()
        .or(section.path("helpful")?)
        .ok_or_else(|| CliError::Usage("report safety needs --helpful".into()))?;
    let unsafe_n = args
        .unsafe_n
        .or(section.usize("unsafe_n")?)
        .ok_or_else(|| CliError::Usage("report safety needs --unsafe-n".into()))?;
    let helpful_n = args
        .helpful_n
        .or(section.usize("helpful_n")?)
        .ok_or_else(|| CliError::Usage("report safety needs --helpful-n".into()))?;
    let epochs = args
        .epochs
        .or(section.usize("epochs")?)
        .unwrap_or(DEFAULT_SAFETY_EPOCHS);
    let out = args.out.clone().or(section.path("out")?);
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    let config = json!({
        "objectionable": objectionable.display().to_string(),
        "helpful": helpful.display().to_string(),
        "unsafe_n": unsafe_n,
        "helpful_n": helpful_n,
        "epochs": epochs,
    });
    let mut report = RunReport::new("report.safety", seed, config);
    let t_total = Instant::now();

    let unsafe_pool: Vec<SafetyRecord> = read_jsonl(&objectionable)?;
    let sft_pool: Vec<SftExample> = read_jsonl(&helpful)?;
    report.count("unsafe_pool", unsafe_pool.len() as u64);
    report.count("helpful_pool", sft_pool.len() as u64);

    let t_sample = Instant::now();
    let mut mixture = build_safety_mixture(&unsafe_pool, &sft_pool, unsafe_n, helpful_n, seed)?;
    mixture.epochs = epochs;
    report.timing("sample", t_sample);

    report.count("unsafe_selected", mixture.unsafe_examples.len() as u64);
    report.count("helpful_selected", mixture.helpful_examples.len() as u64);
    report.count("epochs", epochs as u64);
    report.count("unsafe_only_warning", mixture.unsafe_only_warning as u64);

    report.check(
        "composition_exact",
        mixture.unsafe_examples.len() == unsafe_n && mixture.helpful_examples.len() == helpful_n,
        format!("{unsafe_n} unsafe + {helpful_n} helpful, as requested"),
    );
    let mut ids: Vec<&str> = mixture
        .unsafe_examples
        .iter()
        .map(|r| r.id.as_str())
        .chain(mixture.helpful_examples.iter().map(|r| r.id.as_str()))
        .collect();
    ids.sort_unstable();
    let before = ids.len();
    ids.dedup();
    report.check(
        "no_duplicate_draws",
        ids.len() == before,
        "sampling without replacement",
    );

    if let Some(path) = &out {
        let text =
            serde_json::to_string_pretty(&mixture).map_err(|e| CliError::Run(e.to_string()))?;
        std::fs::write(path, text + "\n")
            .map_err(|e| CliError::Run(format!("{}: {e}", path.display())))?;
        report.output(path);
    }
    report.timing("total", t_total);
    Ok(report)
}
