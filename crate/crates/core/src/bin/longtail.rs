use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use longtail::augmentation::Regime;
use longtail::config::ExperimentConfig;
use longtail::runner::{self, Layout};
use longtail::Error;

#[derive(Parser)]
#[command(version, about = "Track MSP ranks of atypical and noisy examples under augmentation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Replaces every seed in the config.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Build the stratified dataset and write its manifest and features.
    BuildDataset(Common),
    /// Train one augmentation variant on the built dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        variant: Regime,
    },
    /// Compare the separation of atypical and noisy ranks across traces.
    Analyze {
        /// Config whose variants' traces are analysed when no paths are given.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        traces: Vec<PathBuf>,
    },
    /// Build, train every variant, analyse and summarise.
    Report {
        #[command(flatten)]
        common: Common,
        /// Train variants on separate threads.
        #[arg(long)]
        parallel: bool,
    },
}

fn load(common: &Common) -> longtail::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(&common.config)?;
    if let Some(seed) = common.seed {
        cfg.override_seed(seed);
    }
    if let Some(out) = &common.out {
        cfg.output_dir.clone_from(out);
    }
    Ok(cfg)
}

fn run(cli: Cli) -> longtail::Result<()> {
    match cli.command {
        Command::BuildDataset(common) => {
            println!("{}", runner::cmd_build_dataset(&load(&common)?)?);
        }
        Command::Train { common, variant } => {
            println!("{}", runner::cmd_train(&load(&common)?, variant)?);
        }
        Command::Analyze { config, out, traces } => {
            let cfg = config.as_deref().map(ExperimentConfig::load).transpose()?;
            let out = out
                .or_else(|| cfg.as_ref().map(|c| c.output_dir.clone()))
                .ok_or_else(|| Error::Config("analyze needs --out or --config".into()))?;
            let traces = match (traces.is_empty(), &cfg) {
                (false, _) => traces,
                (true, Some(cfg)) => {
                    let layout = Layout::new(&out);
                    cfg.augmentation.variants.iter().map(|&v| layout.trace(v)).collect()
                }
                (true, None) => return Err(Error::Config("no trace files given".into())),
            };
            for r in runner::cmd_analyze(&out, &traces)? {
                let last = r.report.final_row();
                println!(
                    "{}: final epoch {} auroc {:.4} iqr_overlap {:.4}",
                    r.variant, last.epoch, last.auroc, last.iqr_overlap
                );
            }
        }
        Command::Report { common, parallel } => {
            let cfg = load(&common)?;
            for r in runner::cmd_report(&cfg, parallel)? {
                let last = r.report.final_row();
                println!(
                    "{}: final epoch {} auroc {:.4} iqr_overlap {:.4}",
                    r.variant, last.epoch, last.auroc, last.iqr_overlap
                );
            }
            println!("summary: {}", Layout::new(&cfg.output_dir).analysis_dir().join("summary.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(3),
            }
        }
    }
}
