use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use wassdiff_cli::{run_study, CliError, ExperimentConfig, Study};

#[derive(Debug, Parser)]
#[command(name = "wassdiff", version, about = "Run a sampler verification study")]
struct Args {
    /// rates, bounds-check, init-asymptotics, early-stopping, explosion or w2-selftest
    study: Study,
    /// JSON experiment config
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default: the config's "out", else "out")
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; results do not depend on it
    #[arg(long)]
    threads: Option<usize>,
}

fn run(args: &Args) -> Result<bool, CliError> {
    if let Some(k) = args.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(k.max(1))
            .build_global()
            .map_err(|e| CliError::config(&args.config, format!("cannot start thread pool: {e}")))?;
    }
    let mut cfg = ExperimentConfig::from_file(&args.config)?;
    if let Some(s) = args.seed {
        cfg.seed = s;
    }
    let out = args.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let output = run_study(args.study, &cfg, &args.config)?;
    output.write(&out)?;
    for c in &output.report.checks {
        println!("{} {}: {} (limit {})", if c.passed { "PASS" } else { "FAIL" }, c.name, c.value, c.limit);
    }
    println!("wrote {}", out.display());
    Ok(output.report.passed)
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
