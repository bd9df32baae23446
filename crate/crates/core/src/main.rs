use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use flexctl::app::{run_command, Mode, RunOptions};
use flexctl::config::load_config;

/// Boundary pressure and heat-flux optimal control of Boussinesq flow.
#[derive(Debug, Parser)]
#[command(name = "flexctl", version)]
struct Cli {
    #[arg(value_enum)]
    mode: Mode,
    /// TOML configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory (overrides `output.directory`).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Seed for randomized checks.
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// error, warn, info, debug or trace.
    #[arg(long, default_value = "warn")]
    log_level: log::LevelFilter,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new().filter_level(cli.log_level).init();
    let result = load_config(&cli.config).and_then(|(cfg, base)| {
        let opts = RunOptions {
            out_dir: cli.out.clone(),
            seed: cli.seed,
        };
        run_command(&cfg, &base, cli.mode, &opts)
    });
    match result {
        Ok(out) => {
            println!("wrote {} files to {}", out.files.len(), out.dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("flexctl: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
