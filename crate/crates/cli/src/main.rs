use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use pdmp_cli::{run_command, CliError, Config};

/// Simulate PDMPs, evolve their densities and classify their long-time behaviour.
#[derive(Parser, Debug)]
#[command(name = "pdmp", version)]
struct Args {
    /// TOML experiment config.
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; defaults to the config `output` key, then `out`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for ensembles.
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: &Args) -> Result<serde_json::Value, CliError> {
    if let Some(n) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::config("--threads", e.to_string()))?;
    }
    let mut cfg = Config::load(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.clone().or_else(|| cfg.output.as_ref().map(|p| cfg.resolve(p))).unwrap_or_else(|| "out".into());
    run_command(&cfg, &out)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(report) => {
            println!("{}", serde_json::to_string_pretty(&report).expect("json serialises"));
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.to_json()).expect("json serialises"));
            ExitCode::FAILURE
        }
    }
}
