//! The `drivermodel` command line: route, advisories, synthetic drivers,
//! EDM calibration, LSTM training, forecasting and the model comparison.

pub mod commands;
pub mod config;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};
use driver_model::Error;

pub use config::PipelineConfig;

const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  unexpected failure
  2  bad usage (unknown flag or subcommand)
  3  missing or unreadable file
  4  invalid configuration or malformed input file
  5  model error (simulation, training or evaluation)";

#[derive(Debug, Parser)]
#[command(name = "drivermodel", version, about, after_help = EXIT_CODES)]
pub struct Cli {
    /// Pipeline configuration (TOML); built-in defaults if omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured master seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write the route file.
    GenRoute {
        /// Route file to copy instead of the built-in route.
        #[arg(long)]
        route: Option<PathBuf>,
    },
    /// Generate advisory profiles from random EDM calibrations.
    GenRefs {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Simulate synthetic drivers following the advisories.
    GenData {
        #[arg(long)]
        drivers: Option<usize>,
    },
    /// Calibrate the EDM against every driver trace.
    Calibrate,
    /// Train the LSTM encoder-decoder on the training drivers.
    Train,
    /// Forecast speed and tracking error after a recorded history.
    Predict {
        /// Trace CSV whose last samples form the history.
        #[arg(long)]
        history: PathBuf,
        /// Model checkpoint; defaults to the one under the output directory.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Write the forecast here instead of standard output.
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Score the model and the calibrated EDM on the test drivers.
    Evaluate,
    /// Print and write the comparison table.
    Compare,
    /// Run every stage from gen-route to compare.
    Repro,
}

impl Cli {
    pub fn pipeline_config(&self) -> anyhow::Result<PipelineConfig> {
        let mut cfg = match &self.config {
            Some(path) => PipelineConfig::load(path)?,
            None => PipelineConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(out) = &self.out {
            cfg.out_dir = out.clone();
        }
        match &self.command {
            Command::GenRoute { route: Some(r) } => cfg.route = Some(r.clone()),
            Command::GenRefs { count: Some(n) } => cfg.n_refs = *n,
            Command::GenData { drivers: Some(n) } => cfg.n_drivers = *n,
            _ => {}
        }
        if !matches!(self.command, Command::Predict { .. }) {
            cfg.validate()?;
        }
        Ok(cfg)
    }
}

/// Parses `args` (program name first) and runs the subcommand.
pub fn run<I, T>(args: I) -> anyhow::Result<()>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args)?;
    let cfg = cli.pipeline_config()?;
    match &cli.command {
        Command::GenRoute { .. } => {
            commands::gen_route(&cfg)?;
        }
        Command::GenRefs { .. } => {
            commands::gen_refs(&cfg)?;
        }
        Command::GenData { .. } => {
            commands::gen_data(&cfg)?;
        }
        Command::Calibrate => {
            commands::calibrate_all(&cfg)?;
        }
        Command::Train => {
            let t = commands::train_model(&cfg)?;
            if let Some(l) = t.loss_history.last() {
                println!("final training loss {l:.6}");
            }
        }
        Command::Predict { history, model, output } => {
            let model = model
                .clone()
                .unwrap_or_else(|| cfg.out_dir.join(commands::MODEL_DIR).join("model.json"));
            let text = commands::predict_csv(&model, history)?;
            match output {
                Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
                    path: path.clone(),
                    source: e,
                })?,
                None => print!("{text}"),
            }
        }
        Command::Evaluate => {
            commands::evaluate(&cfg)?;
        }
        Command::Compare => {
            print!("{}", commands::compare(&cfg)?.text);
        }
        Command::Repro => {
            print!("{}", commands::repro(&cfg)?.text);
        }
    }
    Ok(())
}

/// Process exit code for an error returned by [`run`]; see the help text.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if let Some(e) = err.downcast_ref::<clap::Error>() {
        return e.exit_code();
    }
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Io { .. } => 3,
                Error::Config(_) | Error::Parse { .. } => 4,
                _ => 5,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() {
            return 3;
        }
    }
    1
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_the_config() {
        let cli = Cli::try_parse_from(["drivermodel", "gen-data", "--drivers", "7", "--seed", "3", "--out", "x"]).unwrap();
        let cfg = cli.pipeline_config().unwrap();
        assert_eq!((cfg.n_drivers, cfg.seed), (7, 3));
        assert_eq!(cfg.out_dir, PathBuf::from("x"));
    }

    #[test]
    fn usage_errors_exit_with_two() {
        let err = run(["drivermodel", "gen-data", "--bogus"]).unwrap_err();
        assert_eq!(exit_code(&err), 2);
        let err = run(["drivermodel", "fly"]).unwrap_err();
        assert_eq!(exit_code(&err), 2);
    }

    #[test]
    fn error_kinds_map_to_codes() {
        let io = anyhow::Error::new(Error::Io {
            path: "a".into(),
            source: std::io::ErrorKind::NotFound.into(),
        })
        .context("loading");
        assert_eq!(exit_code(&io), 3);
        assert_eq!(exit_code(&Error::Config("x".into()).into()), 4);
        assert_eq!(exit_code(&Error::Domain("x".into()).into()), 5);
        assert_eq!(exit_code(&anyhow::anyhow!("other")), 1);
    }
}
