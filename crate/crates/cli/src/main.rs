use std::path::PathBuf;
use std::process::ExitCode;

use clap::builder::PossibleValuesParser;
use clap::Parser;
use ggdln::experiments::{self, Settings, SUBCOMMANDS};

/// Run a GGDLN experiment sweep and write `results.csv`, `manifest.json`
/// and optional `kernels/*.csv` into the output directory.
#[derive(Parser, Debug)]
#[command(name = "ggdln", version)]
struct Args {
    /// Experiment to run.
    #[arg(value_parser = PossibleValuesParser::new(SUBCOMMANDS))]
    subcommand: String,

    /// Flat `key = value` settings file, or a `manifest.json` from an
    /// earlier run.
    #[arg(long)]
    config: Option<PathBuf>,

    /// Override a setting; may be repeated.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,

    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

fn run(args: &Args) -> ggdln::Result<PathBuf> {
    let mut settings = Settings::default();
    if let Some(path) = &args.config {
        let (recorded, loaded) = Settings::load(&std::fs::read_to_string(path)?)?;
        if let Some(sub) = recorded.filter(|s| *s != args.subcommand) {
            return Err(ggdln::Error::Config(format!(
                "{} was written by `{sub}`, not `{}`",
                path.display(),
                args.subcommand
            )));
        }
        settings = loaded;
    }
    for pair in &args.overrides {
        settings.set_pair(pair)?;
    }
    let run = experiments::run(&args.subcommand, &settings)?;
    run.write(&args.out)
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var("GGDLN_THREADS") else {
        return Ok(());
    };
    let n: usize = raw
        .parse()
        .map_err(|_| format!("GGDLN_THREADS = {raw:?} is not a positive integer"))?;
    if n == 0 {
        return Err("GGDLN_THREADS must be positive".into());
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let args = Args::parse();
    if let Err(e) = configure_threads() {
        eprintln!("error: {e}");
        return ExitCode::FAILURE;
    }
    match run(&args) {
        Ok(manifest) => {
            log::info!("wrote {}", manifest.display());
            println!("{}", args.out.join("results.csv").display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
