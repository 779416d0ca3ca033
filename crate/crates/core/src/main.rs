use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use geoscore::config::{ConfigError, ExperimentConfig};
use geoscore::experiment::{
    self, analyze_file, preset, run_expand, run_expand_sweep, run_experiment, run_sweep, SweepAxis, MANIFEST_FILE,
    PRESETS,
};
use geoscore::Error;

/// Smoothed-score experiments on embedded curves.
#[derive(Parser)]
#[command(name = "geoscore", version = experiment::version_string())]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
#[group(required = true, multiple = false)]
struct Source {
    /// Configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Bundled preset name (see `geoscore presets`).
    #[arg(long)]
    preset: Option<String>,
}

impl Source {
    fn load(&self) -> Result<ExperimentConfig, Error> {
        match (&self.config, &self.preset) {
            (Some(path), _) => Ok(ExperimentConfig::load(path)?),
            (None, Some(name)) => preset(name).map(|p| p.config()).ok_or_else(|| {
                Error::Config(ConfigError::Invalid {
                    key: "preset",
                    message: format!("unknown preset `{name}`"),
                })
            }),
            (None, None) => unreachable!("clap enforces a source"),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Axis {
    Alpha,
    Beta,
    Sigma,
}

impl From<Axis> for SweepAxis {
    fn from(a: Axis) -> SweepAxis {
        match a {
            Axis::Alpha => SweepAxis::Alpha,
            Axis::Beta => SweepAxis::Beta,
            Axis::Sigma => SweepAxis::Sigma,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Expansion residuals of log p_sigma at the configured points.
    Expand {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
    },
    /// One sampling run: samples.csv, metrics.csv, manifest.toml.
    Sample {
        #[command(flatten)]
        source: Source,
        #[arg(long)]
        out: PathBuf,
        /// Override the master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of steps per chain (burn-in is rescaled).
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Metrics of an existing samples file.
    Analyze {
        #[arg(long)]
        samples: PathBuf,
        /// Defaults to the manifest next to the samples.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// One run per value of an axis; `--expand` sweeps sigma through the expansion instead.
    Sweep {
        #[command(flatten)]
        source: Source,
        #[arg(long, value_enum)]
        axis: Axis,
        #[arg(long, value_delimiter = ',', num_args = 1..)]
        values: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        expand: bool,
    },
    /// List bundled configurations.
    Presets {
        /// Print the configuration of one preset.
        #[arg(long)]
        show: Option<String>,
    },
}

fn override_steps(cfg: &mut ExperimentConfig, steps: usize) -> Result<(), Error> {
    let s = cfg.sampler.as_mut().ok_or_else(|| {
        Error::Config(ConfigError::Invalid {
            key: "sampler",
            message: "missing [sampler] table".into(),
        })
    })?;
    if let Some(b) = s.burn_in {
        s.burn_in = Some(((b as f64 / s.steps as f64) * steps as f64) as usize);
    }
    s.steps = steps;
    Ok(())
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Expand { source, out } => {
            let rows = run_expand(&source.load()?, &out)?;
            println!("{} rows written to {}", rows.len(), out.join(experiment::EXPAND_FILE).display());
        }
        Command::Sample {
            source,
            out,
            seed,
            steps,
        } => {
            let mut cfg = source.load()?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(steps) = steps {
                override_steps(&mut cfg, steps)?;
            }
            let s = run_experiment(&cfg, &out)?;
            println!("field: {}", s.field);
            println!("clipped post-burn-in steps: {:.3e}", s.clipped_fraction);
            print!("{}", s.metrics.to_csv());
        }
        Command::Analyze { samples, config, out } => {
            let path = config.unwrap_or_else(|| samples.parent().unwrap_or(Path::new(".")).join(MANIFEST_FILE));
            let cfg = ExperimentConfig::load(&path)?;
            let m = analyze_file(&cfg, &samples, &out)?;
            print!("{}", m.to_csv());
        }
        Command::Sweep {
            source,
            axis,
            values,
            out,
            expand,
        } => {
            let cfg = source.load()?;
            if expand {
                if !matches!(axis, Axis::Sigma) {
                    return Err(Error::Config(ConfigError::Invalid {
                        key: "axis",
                        message: "expansion sweeps run over sigma".into(),
                    }));
                }
                let rows = run_expand_sweep(&cfg, &values, &out)?;
                println!("{} rows written to {}", rows.len(), out.join(experiment::EXPAND_FILE).display());
            } else {
                let cells = run_sweep(&cfg, axis.into(), &values, &out)?;
                let failed = cells.iter().filter(|c| c.outcome.is_err()).count();
                println!(
                    "{} cells, {failed} failed; table in {}",
                    cells.len(),
                    out.join(experiment::SWEEP_FILE).display()
                );
            }
        }
        Command::Presets { show } => match show {
            Some(name) => match preset(&name) {
                Some(p) => print!("{}", p.text),
                None => {
                    return Err(Error::Config(ConfigError::Invalid {
                        key: "preset",
                        message: format!("unknown preset `{name}`"),
                    }))
                }
            },
            None => {
                for p in PRESETS {
                    println!("{:<26} {}", p.name, p.summary);
                }
            }
        },
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
