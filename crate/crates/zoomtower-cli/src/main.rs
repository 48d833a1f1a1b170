//! `zoomtower`: builds induced Markov maps from a run config and writes
//! CSV tables plus a JSON manifest per command.
//!
//! Exit status: 0 on success, 1 when a verification fails (or a stage
//! errors), 2 on a config or usage error.

mod commands;
mod output;
mod settings;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use zoomtower::config::ConfigError;

use crate::output::{Manifest, Sink};
use crate::settings::RunConfig;

/// Overrides the output directory of every command.
pub const OUTPUT_ENV: &str = "ZOOMTOWER_OUTPUT";

#[derive(Parser)]
#[command(name = "zoomtower", version, about = "Induced Markov maps for non-uniformly expanding maps")]
struct Cli {
    /// Cap on worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Zooming and hyperbolic times along one orbit.
    Times(RunArgs),
    /// Nested ball at the base centre, or the global partition.
    Nested(RunArgs),
    /// Build the induced map and write its atoms.
    Tower(RunArgs),
    /// Tails of the return time against flagged times on random points.
    Tails(RunArgs),
    /// Invariant density of the induced map and its projection.
    Density(RunArgs),
    /// Decay of correlations under a tower measure.
    Corr(RunArgs),
    /// Periodic repelling orbit search.
    Repeller(RunArgs),
    /// Check the Markov conditions on a stored atom file.
    Verify {
        #[command(flatten)]
        run: RunArgs,
        /// Atom file (default: atoms.csv in the output directory).
        #[arg(long)]
        atoms: Option<PathBuf>,
    },
}

#[derive(Args)]
struct RunArgs {
    /// Run configuration file.
    config: PathBuf,
    /// Output directory (beats the environment and the config).
    #[arg(long, short)]
    output: Option<PathBuf>,
}

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config error: {0}")]
    Config(#[from] ConfigError),
    #[error("{stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: zoomtower::Error,
    },
    #[error("{0}")]
    Input(String),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl RunError {
    fn exit_code(&self) -> u8 {
        match self {
            RunError::Config(_) => 2,
            _ => 1,
        }
    }
}

/// Tags library errors with the stage that raised them.
pub trait Stage<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError>;
}

impl<T> Stage<T> for zoomtower::Result<T> {
    fn stage(self, stage: &'static str) -> Result<T, RunError> {
        self.map_err(|source| RunError::Stage { stage, source })
    }
}

fn output_dir(flag: Option<&Path>, cfg: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    if let Some(p) = std::env::var_os(OUTPUT_ENV).filter(|v| !v.is_empty()) {
        return PathBuf::from(p);
    }
    cfg.output.clone().unwrap_or_else(|| PathBuf::from("zoomtower-out"))
}

fn run(cli: &Cli) -> Result<bool, RunError> {
    let (name, args) = match &cli.command {
        Command::Times(a) => ("times", a),
        Command::Nested(a) => ("nested", a),
        Command::Tower(a) => ("tower", a),
        Command::Tails(a) => ("tails", a),
        Command::Density(a) => ("density", a),
        Command::Corr(a) => ("corr", a),
        Command::Repeller(a) => ("repeller", a),
        Command::Verify { run, .. } => ("verify", run),
    };
    let (cfg, map) = RunConfig::load(&args.config)?;
    // stochastic commands refuse to start without a seed
    if matches!(name, "tails" | "corr") {
        cfg.require_seed(name)?;
    }
    let dir = output_dir(args.output.as_deref(), &cfg);
    let mut sink = Sink::new(&dir)?;
    let t0 = Instant::now();
    let outcome = match &cli.command {
        Command::Times(_) => commands::times(&cfg, &map, &mut sink)?,
        Command::Nested(_) => commands::nested(&cfg, &map, &mut sink)?,
        Command::Tower(_) => commands::tower(&cfg, &map, &mut sink)?,
        Command::Tails(_) => commands::tails(&cfg, &map, &mut sink)?,
        Command::Density(_) => commands::density(&cfg, &map, &mut sink)?,
        Command::Corr(_) => commands::corr(&cfg, &map, &mut sink)?,
        Command::Repeller(_) => commands::repeller(&cfg, &map, &mut sink)?,
        Command::Verify { atoms, .. } => {
            let path = atoms.clone().unwrap_or_else(|| dir.join("atoms.csv"));
            commands::verify(&cfg, &map, &path, &mut sink)?
        }
    };
    let passed = outcome.failures.is_empty();
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        command: name,
        config: args.config.display().to_string(),
        map: &map.name,
        seed: cfg.seed,
        threads: rayon::current_num_threads(),
        settings: &cfg,
        summary: &outcome.summary,
        passed,
        failures: &outcome.failures,
        outputs: &sink.files,
        wall_clock_ms: t0.elapsed().as_millis(),
    };
    let text = serde_json::to_string_pretty(&manifest)?;
    std::fs::write(dir.join(format!("{name}-manifest.json")), text + "\n")?;
    for f in &outcome.failures {
        eprintln!("FAIL {f}");
    }
    println!("{name}: {} ({})", if passed { "ok" } else { "verification failed" }, dir.display());
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("zoomtower: cannot size the thread pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("zoomtower: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
