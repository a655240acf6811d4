use std::path::Path;

use serde::{Deserialize, Serialize};

use super::model::{LstmEdConfig, LstmEdModel, TENSOR_NAMES};
use crate::error::{Error, Result};
use crate::evalcmp::{Forecast, Forecaster};
use crate::synthdrive::{DriveTrace, FeatureVector, NormStats, WindowConfig, N_FEATURES, OUTPUT_CHANNELS};

pub const CHECKPOINT_FORMAT: &str = "LSTMED-v1";

/// Raw-scale forecast of `n_p` steps from the last `n_h` samples of
/// `history`: normalize, encode, decode without dropout, denormalize.
pub fn predict(model: &LstmEdModel, norm: &NormStats, history: &[FeatureVector]) -> Result<(Vec<f64>, Vec<f64>)> {
    let n_h = model.config.n_h;
    if history.len() < n_h {
        return Err(Error::InsufficientHistory {
            needed: n_h,
            got: history.len(),
        });
    }
    let rows: Vec<[f64; N_FEATURES]> = history[history.len() - n_h..]
        .iter()
        .map(|f| norm.normalize_row(f))
        .collect();
    let out = model.forward(&rows)?;
    let [cv, ce] = OUTPUT_CHANNELS;
    Ok((
        out.iter().map(|y| norm.denormalize(cv, y[0])).collect(),
        out.iter().map(|y| norm.denormalize(ce, y[1])).collect(),
    ))
}

/// A trained model together with the normalization it was trained under.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmEdPredictor {
    pub model: LstmEdModel,
    pub norm: NormStats,
}

#[derive(Debug, Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    shape: [usize; 2],
    data: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config: LstmEdConfig,
    norm: NormStats,
    tensors: Vec<TensorRecord>,
}

impl LstmEdPredictor {
    pub fn new(model: LstmEdModel, norm: NormStats) -> Result<Self> {
        model.validate()?;
        Ok(LstmEdPredictor { model, norm })
    }

    pub fn predict(&self, history: &[FeatureVector]) -> Result<(Vec<f64>, Vec<f64>)> {
        predict(&self.model, &self.norm, history)
    }

    pub fn to_json(&self) -> String {
        let shapes = self.model.tensor_shapes();
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config: self.model.config,
            norm: self.norm,
            tensors: TENSOR_NAMES
                .iter()
                .zip(self.model.tensors())
                .zip(shapes)
                .map(|((name, data), (r, c))| TensorRecord {
                    name: name.to_string(),
                    shape: [r, c],
                    data: data.to_vec(),
                })
                .collect(),
        };
        serde_json::to_string(&ck).expect("checkpoint serializes")
    }

    pub fn from_json(text: &str, origin: &Path) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text).map_err(|e| Error::parse(origin, e.to_string()))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::parse(
                origin,
                format!("unsupported checkpoint format {:?}, expected {CHECKPOINT_FORMAT}", ck.format),
            ));
        }
        let mut model = LstmEdModel::zeros(ck.config)?;
        if ck.tensors.len() != TENSOR_NAMES.len() {
            return Err(Error::parse(origin, format!("expected 10 tensors, found {}", ck.tensors.len())));
        }
        let shapes = model.tensor_shapes();
        for ((rec, slot), (name, (r, c))) in ck
            .tensors
            .into_iter()
            .zip(model.tensors_mut())
            .zip(TENSOR_NAMES.iter().zip(shapes))
        {
            if rec.name != *name || rec.shape != [r, c] || rec.data.len() != r * c {
                return Err(Error::parse(
                    origin,
                    format!(
                        "tensor {} with shape {:?} ({} values) does not fit {name} [{r}, {c}]",
                        rec.name,
                        rec.shape,
                        rec.data.len()
                    ),
                ));
            }
            *slot = rec.data;
        }
        let norm = NormStats::new(ck.norm.min, ck.norm.max)?;
        Self::new(model, norm)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path)
    }
}

impl Forecaster for LstmEdPredictor {
    fn forecast(&self, trace: &DriveTrace, start: usize, cfg: &WindowConfig) -> Result<Forecast> {
        let n_h = cfg.n_h();
        if n_h != self.model.config.n_h || cfg.n_p() != self.model.config.n_p {
            return Err(Error::Shape(format!(
                "window {}+{} does not match the model's {}+{}",
                n_h,
                cfg.n_p(),
                self.model.config.n_h,
                self.model.config.n_p
            )));
        }
        let end = (start + n_h).min(trace.len());
        let (v, err) = self.predict(&trace.features[start..end])?;
        Ok(Forecast { v, err })
    }
}
