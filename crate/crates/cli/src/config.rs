use std::path::{Path, PathBuf};

use anyhow::Context;
use driver_model::gacal::GaConfig;
use driver_model::seqnet::{LstmEdConfig, TrainConfig};
use driver_model::synthdrive::{NoiseConfig, ParamBounds};
use driver_model::{Error, WindowConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Network size; the window lengths come from `[window]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub n_e: usize,
    pub n_d: usize,
    pub dropout_p: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        ModelSection {
            n_e: 32,
            n_d: 32,
            dropout_p: 0.2,
        }
    }
}

/// The whole pipeline in one file. Every random choice is derived from
/// `seed`; the `seed` fields inside `[noise]`, `[ga]` and `[train]` are
/// overwritten per driver or stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub out_dir: PathBuf,
    /// Route file used by `gen-route`; the built-in five-mile route if unset.
    pub route: Option<PathBuf>,
    /// Number of EDM calibrations that produce advisory profiles.
    pub n_refs: usize,
    pub n_drivers: usize,
    /// Drivers held out of training.
    pub n_test: usize,
    pub ref_bounds: ParamBounds,
    pub driver_bounds: ParamBounds,
    pub window: WindowConfig,
    pub noise: NoiseConfig,
    pub ga: GaConfig,
    pub model: ModelSection,
    pub train: TrainConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            seed: 0,
            out_dir: PathBuf::from("out"),
            route: None,
            n_refs: 10,
            n_drivers: 71,
            n_test: 5,
            ref_bounds: ParamBounds {
                a: (1.0, 2.0),
                b: (1.5, 3.0),
                delta: (2.0, 6.0),
                theta0: (0.0, 0.0),
                s_brake: (30.0, 70.0),
            },
            driver_bounds: ParamBounds::default(),
            window: WindowConfig::default(),
            noise: NoiseConfig {
                sigma_a: 1.0,
                tau_noise: 10.0,
                ..Default::default()
            },
            ga: GaConfig {
                population: 24,
                generations: 20,
                ..Default::default()
            },
            model: ModelSection::default(),
            train: TrainConfig {
                epochs: 20,
                samples_per_epoch: Some(2000),
                learning_rate: 2e-3,
                teacher_forcing_ratio: 0.0,
                ..Default::default()
            },
        }
    }
}

/// Independent random streams, one per use.
#[derive(Debug, Clone, Copy)]
#[repr(u64)]
pub enum Stream {
    RefParams = 1,
    DriverParams = 2,
    RefAssignment = 3,
    Noise = 4,
    Calibration = 5,
    Split = 6,
    Training = 7,
}

impl PipelineConfig {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        let cfg = Self::from_toml(&text).map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })?;
        cfg.validate().with_context(|| format!("{}", path.display()))?;
        Ok(cfg)
    }

    /// Parses a possibly partial file. Missing keys, including keys inside
    /// a section that is present, take the pipeline defaults.
    pub fn from_toml(text: &str) -> Result<Self, String> {
        let given: toml::Table = toml::from_str(text).map_err(|e| e.message().to_string())?;
        let mut merged = toml::Table::try_from(Self::default()).expect("defaults serialize");
        merge(&mut merged, given);
        merged.try_into().map_err(|e: toml::de::Error| e.message().to_string())
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.n_refs == 0 {
            return Err(Error::Config("n_refs must be >= 1".into()));
        }
        if self.n_drivers == 0 {
            return Err(Error::Config("n_drivers must be >= 1".into()));
        }
        if self.n_test >= self.n_drivers {
            return Err(Error::Config(format!(
                "n_test = {} leaves no training drivers out of {}",
                self.n_test, self.n_drivers
            )));
        }
        if let Some(route) = &self.route {
            if !route.exists() {
                return Err(Error::Io {
                    path: route.clone(),
                    source: std::io::Error::from(std::io::ErrorKind::NotFound),
                });
            }
        }
        self.ref_bounds.validate()?;
        self.driver_bounds.validate()?;
        self.window.validate()?;
        self.noise.validate()?;
        self.ga.validate()?;
        self.model_config().validate()?;
        self.train.validate()
    }

    pub fn model_config(&self) -> LstmEdConfig {
        LstmEdConfig {
            n_e: self.model.n_e,
            n_d: self.model.n_d,
            dropout_p: self.model.dropout_p,
            ..Default::default()
        }
        .with_window(&self.window)
    }

    /// The first `n` seeds of a stream.
    pub fn seeds(&self, stream: Stream, n: usize) -> Vec<u64> {
        let mut rng = self.rng(stream);
        (0..n).map(|_| rng.random()).collect()
    }

    pub fn rng(&self, stream: Stream) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream as u64);
        rng
    }

    pub fn seed_for(&self, stream: Stream) -> u64 {
        self.seeds(stream, 1)[0]
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
