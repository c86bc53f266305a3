//! One module per subcommand. Every `run` resolves its config (flags win
//! over the config file), does the work, and returns a [`RunReport`]; the
//! caller maps failed invariants and errors to exit codes.

pub mod dpo;
pub mod ground;
pub mod mix;
pub mod ocr;
pub mod pack;
pub mod pairs;
pub mod plan;
pub mod report_cmd;
pub mod resample;
pub mod train;

use std::path::PathBuf;

use clap::Args;

/// Flags shared by every command.
#[derive(Debug, Clone, Args)]
pub struct CommonArgs {
    /// TOML config file; explicit flags override its values.
    #[arg(long, value_name = "PATH", global = false)]
    pub config: Option<PathBuf>,

    /// Seed for every random draw the command makes.
    #[arg(long)]
    pub seed: Option<u64>,

    /// Write the JSON run report here instead of stdout.
    #[arg(long, value_name = "PATH")]
    pub report: Option<PathBuf>,
}
