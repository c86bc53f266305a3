//! `dpo`: evaluate the preference loss and its gradients on logprob rows,
//! and optionally corrupt an image to produce dispreferred-response input.

use std::path::PathBuf;
use std::time::Instant;

use blip3_forge::preference::{dpo_loss_grad, noised_dispreferred};
use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::cmd::CommonArgs;
use crate::config::{resolve_seed, ConfigFile};
use crate::errors::{CliError, CliResult};
use crate::io::{load_image, read_jsonl, save_image, write_jsonl};
use crate::report::RunReport;

#[derive(Debug, Args)]
pub struct DpoArgs {
    #[command(flatten)]
    pub common: CommonArgs,

    /// Logprob rows JSONL: policy and reference, preferred and dispreferred.
    #[arg(long = "in", value_name = "JSONL")]
    pub input: Option<PathBuf>,

    /// Preference temperature.
    #[arg(long)]
    pub beta: Option<f64>,

    /// Output losses JSONL.
    #[arg(long, value_name = "PATH")]
    pub out: Option<PathBuf>,

    /// Image to corrupt for a second dispreferred sample.
    #[arg(long, value_name = "PNG")]
    pub noise_image: Option<PathBuf>,

    /// Noise scale on [0,1] pixels.
    #[arg(long)]
    pub sigma: Option<f64>,

    /// Where to write the corrupted image.
    #[arg(long, value_name = "PNG")]
    pub noised_out: Option<PathBuf>,
}

/// One evaluated preference comparison.
#[derive(Debug, Deserialize)]
struct DpoRow {
    id: String,
    policy_preferred: f64,
    policy_dispreferred: f64,
    ref_preferred: f64,
    ref_dispreferred: f64,
}

#[derive(Debug, Serialize)]
struct DpoOut {
    id: String,
    margin: f64,
    loss: f64,
    grad_preferred: f64,
    grad_dispreferred: f64,
}

pub fn run(args: &DpoArgs) -> CliResult<RunReport> {
    let file = ConfigFile::load(args.common.config.as_deref())?;
    let section = file.section("dpo")?;
    let input = args.input.clone().or(section.path("in")?);
    let beta = args.beta.or(section.f64("beta")?).unwrap_or(0.1);
    let out = args.out.clone().or(section.path("out")?);
    let noise_image = args.noise_image.clone().or(section.path("noise_image")?);
    let sigma = args.sigma.or(section.f64("sigma")?).unwrap_or(0.5);
    let noised_out = args.noised_out.clone().or(section.path("noised_out")?);
    let seed = resolve_seed(args.common.seed, &section, &file, 0)?;
    section.deny_unknown()?;

    if input.is_none() && noise_image.is_none() {
        return Err(CliError::Usage(
            "dpo needs --in (logprob rows), --noise-image, or both".into(),
        ));
    }

    let config = json!({
        "in": input.as_ref().map(|p| p.display().to_string()),
        "beta": beta,
        "sigma": sigma,
        "noise_image": noise_image.as_ref().map(|p| p.display().to_string()),
    });
    let mut report = RunReport::new("dpo", seed, config);
    let t_total = Instant::now();

    if let Some(input) = &input {
        let rows: Vec<DpoRow> = read_jsonl(input)?;
        let t_eval = Instant::now();
        let mut outs = Vec::with_capacity(rows.len());
        for row in &rows {
            let (loss, gp, gl) = dpo_loss_grad(
                row.policy_preferred,
                row.policy_dispreferred,
                row.ref_preferred,
                row.ref_dispreferred,
                beta,
            )?;
            outs.push(DpoOut {
                id: row.id.clone(),
                margin: (row.policy_preferred - row.ref_preferred)
                    - (row.policy_dispreferred - row.ref_dispreferred),
                loss,
                grad_preferred: gp,
                grad_dispreferred: gl,
            });
        }
        report.timing("evaluate", t_eval);

        report.count("rows", outs.len() as u64);
        if !outs.is_empty() {
            let mean = outs.iter().map(|o| o.loss).sum::<f64>() / outs.len() as f64;
            report.value("mean_loss", mean);
        }
        report.check(
            "losses_positive_finite",
            outs.iter().all(|o| o.loss.is_finite() && o.loss > 0.0),
            "softplus losses are finite and positive",
        );
        report.check(
            "gradient_signs",
            outs.iter()
                .all(|o| o.grad_preferred <= 0.0 && o.grad_dispreferred >= 0.0),
            "raising the preferred logprob lowers the loss",
        );

        let out = out
            .clone()
            .unwrap_or_else(|| crate::cmd::ocr::derive_out(input, "losses.jsonl"));
        write_jsonl(&out, &outs)?;
        report.output(&out);
    }

    if let Some(src) = &noise_image {
        let img = load_image(src)?;
        let t_noise = Instant::now();
        let noised = noised_dispreferred(&img, sigma, seed)?;
        report.timing("noise", t_noise);
        let dst = noised_out.clone().unwrap_or_else(|| {
            let mut p = src.clone();
            p.set_extension("noised.png");
            p
        });
        save_image(&dst, &noised)?;
        report.output(&dst);

        let n = (img.width() * img.height() * 3) as f64;
        let delta: f64 = img
            .as_bytes()
            .iter()
            .zip(noised.as_bytes())
            .map(|(&a, &b)| ((a as f64 - b as f64) / 255.0).abs())
            .sum::<f64>()
            / n;
        report.value("mean_abs_pixel_delta", delta);
        report.check(
            "dims_preserved",
            img.dims() == noised.dims(),
            "noise never resizes the image",
        );
        if sigma == 0.0 {
            report.check(
                "zero_sigma_identity",
                img.as_bytes() == noised.as_bytes(),
                "sigma 0 reproduces the input bytes",
            );
        }
    }

    report.timing("total", t_total);
    Ok(report)
}
