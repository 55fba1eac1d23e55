use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use algtd::baselines::StrategyKind;
use algtd::cli;
use algtd::config::ExperimentConfig;
use algtd::Error;

#[derive(Parser)]
#[command(
    name = "algtd",
    version,
    about = "Active learning for gaze-target detection on a synthetic world"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Print the default experiment configuration as JSON.
    Defaults {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Generate a pool of synthetic samples.
    Gen {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Overrides world.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of samples; defaults to al.pool_size.
        #[arg(long)]
        n: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        force: bool,
    },
    /// Run active-learning experiments and write results.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Run this single experiment seed instead of al.seeds.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<StrategyKind>,
        #[arg(long)]
        force: bool,
    },
    /// Score paired attention/gaze heatmap archives.
    Score {
        #[arg(long)]
        attention: PathBuf,
        #[arg(long)]
        gaze: PathBuf,
        /// JSON array with one list of detected objects per record.
        #[arg(long)]
        detections: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        /// Ranking CSV path; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Aggregate results files into a report.
    Report {
        #[arg(required = true)]
        files: Vec<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(config: Option<&PathBuf>) -> algtd::Result<ExperimentConfig> {
    match config {
        Some(p) => ExperimentConfig::load(p),
        None => Ok(ExperimentConfig::default()),
    }
}

fn write_out(path: Option<&PathBuf>, text: &str) -> algtd::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn threads() -> algtd::Result<()> {
    let Ok(v) = std::env::var("ALGTD_THREADS") else {
        return Ok(());
    };
    let n: usize = v.parse().map_err(|_| {
        Error::Config(format!(
            "ALGTD_THREADS must be a non-negative integer, got {v:?}"
        ))
    })?;
    if n > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(e.to_string()))?;
    }
    Ok(())
}

fn run(cli: Cli) -> algtd::Result<()> {
    threads()?;
    match cli.cmd {
        Cmd::Defaults { out } => {
            write_out(out.as_ref(), &ExperimentConfig::default().to_json_pretty())
        }
        Cmd::Gen {
            config,
            seed,
            n,
            out,
            force,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(s) = seed {
                cfg.world.seed = s;
            }
            let n = n.unwrap_or(cfg.al.pool_size);
            cli::cmd_gen(&cfg, n, &out, force)
        }
        Cmd::Run {
            config,
            seed,
            out,
            strategies,
            force,
        } => {
            let mut cfg = load(config.as_ref())?;
            if let Some(s) = seed {
                cfg.al.seeds = vec![s];
            }
            if let Some(o) = out {
                cfg.output_dir = o;
            }
            if !strategies.is_empty() {
                cfg.strategies = strategies;
            }
            for (results, _) in cli::cmd_run(&cfg, force)? {
                eprintln!(
                    "{}: {} seeds, results in {}",
                    results.strategy,
                    results.seeds.len(),
                    cfg.output_dir.join(results.strategy.name()).display()
                );
            }
            Ok(())
        }
        Cmd::Score {
            attention,
            gaze,
            detections,
            config,
            out,
        } => {
            let cfg = load(config.as_ref())?;
            let csv = cli::cmd_score(&attention, &gaze, detections.as_deref(), &cfg)?;
            write_out(out.as_ref(), &csv)
        }
        Cmd::Report { files, out } => {
            let report = cli::cmd_report(&files, out.as_deref())?;
            if out.is_none() {
                print!("{}", report.to_markdown());
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_data_error() { 2 } else { 1 })
        }
    }
}
