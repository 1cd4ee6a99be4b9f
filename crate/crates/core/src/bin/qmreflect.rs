use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use qmreflect::config::parse_config;
use qmreflect::runner::{run, RunError};

/// Runs a measurement-scattering experiment described by a TOML file.
#[derive(Parser, Debug)]
#[command(version, about)]
struct Args {
    /// Run configuration.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Worker threads for ensembles.
    #[arg(long, value_name = "N", default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    workers: u64,
    /// Master seed; overrides the configuration.
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output directory; overrides the configuration.
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let code = match execute(&args) {
        Ok(true) => 0,
        Ok(false) => 3,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    };
    ExitCode::from(code as u8)
}

fn execute(args: &Args) -> Result<bool, RunError> {
    let mut config = parse_config(&args.config)?;
    if let Some(s) = args.seed {
        config = config.with_seed(s);
    }
    let out = match args.out.clone().or_else(|| config.output.clone()) {
        Some(o) => o,
        None => {
            eprintln!("error: no output directory (use --out or set output in the configuration)");
            std::process::exit(2);
        }
    };
    let bundle = run(&config, args.workers as usize, &out)?;
    for m in bundle.monitors.iter().filter(|m| !m.passed) {
        eprintln!("monitor {} failed: {}", m.name, m.detail);
    }
    println!("{}", out.join("manifest.txt").display());
    Ok(bundle.passed())
}
