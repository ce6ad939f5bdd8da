use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use beamlab::beamforming::Method;
use beamlab::error::Error;
use beamlab::experiment::{preset, preset_names, run_sweep, summarize, ExperimentConfig, SweepKind};
use clap::{Args, Parser, Subcommand, ValueEnum};

/// Monte Carlo simulator for robust adaptive beamformers.
#[derive(Debug, Parser)]
#[command(name = "beamlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every method at a single SNR point.
    Run {
        #[command(flatten)]
        common: Common,
        /// SNR in dB (defaults to the configured `snr_db`).
        #[arg(long, allow_negative_numbers = true)]
        snr: Option<f64>,
    },
    /// Run the sweep described by the configuration or preset.
    Sweep {
        #[command(flatten)]
        common: Common,
    },
    /// Beampatterns of the reconstructed covariance while varying one shrinkage weight.
    Beampattern {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Weight::Rho)]
        vary: Weight,
    },
    /// Pearson correlation between true and reconstructed interference covariance.
    Correlation {
        #[command(flatten)]
        common: Common,
    },
    /// Direction-tracking MSE against the Cramér–Rao bound.
    Crb {
        #[command(flatten)]
        common: Common,
    },
    /// List the named presets.
    Presets,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Weight {
    Rho,
    Eta,
}

#[derive(Debug, Args)]
struct Common {
    /// TOML configuration file; keys override the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named preset used as the base configuration.
    #[arg(long)]
    preset: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory for CSVs and the plot script.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated methods, e.g. `ppbss,optimal`.
    #[arg(long, value_delimiter = ',')]
    methods: Option<Vec<Method>>,
    /// Worker threads (capped by BEAMLAB_THREADS).
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn resolve(&self, fallback_preset: Option<&str>) -> Result<ExperimentConfig, Error> {
        let preset_name = self.preset.as_deref().or(fallback_preset);
        let mut cfg = match (&self.config, preset_name) {
            (Some(path), name) => {
                let mut text = std::fs::read_to_string(path)?;
                if let Some(name) = name {
                    if !text.lines().any(|l| l.trim_start().starts_with("preset")) {
                        text = format!("preset = \"{name}\"\n{text}");
                    }
                }
                ExperimentConfig::from_toml_str(&text)?
            }
            (None, Some(name)) => preset(name)?,
            (None, None) => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(methods) = &self.methods {
            cfg.methods = methods.clone();
        }
        if self.threads.is_some() {
            cfg.threads = self.threads;
        }
        Ok(cfg)
    }
}

fn configure(command: &Command) -> Result<Option<ExperimentConfig>, Error> {
    let cfg = match command {
        Command::Run { common, snr } => {
            let mut cfg = common.resolve(None)?;
            cfg.sweep = SweepKind::Snr;
            cfg.sweep_values = vec![snr.unwrap_or(cfg.snr_db)];
            cfg
        }
        Command::Sweep { common } => common.resolve(None)?,
        Command::Beampattern { common, vary } => {
            let name = match vary {
                Weight::Rho => "beampattern-rho",
                Weight::Eta => "beampattern-eta",
            };
            let mut cfg = common.resolve(Some(name))?;
            cfg.sweep = match vary {
                Weight::Rho => SweepKind::BeampatternRho,
                Weight::Eta => SweepKind::BeampatternEta,
            };
            cfg
        }
        Command::Correlation { common } => {
            let mut cfg = common.resolve(Some("correlation"))?;
            cfg.sweep = SweepKind::Correlation;
            cfg
        }
        Command::Crb { common } => {
            let mut cfg = common.resolve(Some("crb"))?;
            cfg.sweep = SweepKind::Crb;
            cfg
        }
        Command::Presets => return Ok(None),
    };
    cfg.validate()?;
    Ok(Some(cfg))
}

fn execute(command: &Command) -> Result<(), Error> {
    let Some(cfg) = configure(command)? else {
        for name in preset_names() {
            println!("{name}");
        }
        return Ok(());
    };
    let report = run_sweep(&cfg)?;
    let mut out = std::io::stdout().lock();
    for line in summarize(&report.output) {
        writeln!(out, "{line}")?;
    }
    for file in &report.files {
        writeln!(out, "wrote {}", file.display())?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Error::Io(e)) if e.kind() == std::io::ErrorKind::BrokenPipe => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: code={} message={}", e.code(), e);
            ExitCode::FAILURE
        }
    }
}
