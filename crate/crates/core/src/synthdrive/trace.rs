use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::edm::ReferenceProfile;
use crate::error::{Error, Result};

/// Column header of a trace file.
pub const TRACE_HEADER: [&str; 8] = ["t", "s", "v", "acc", "d_tl", "v_ref", "tau_sp", "err"];

/// Number of model input channels.
pub const N_FEATURES: usize = 6;

/// Per-sample driving features, in model input order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    /// Speed (m/s).
    pub v: f64,
    /// Acceleration realized over the following sample interval (m/s²).
    pub acc: f64,
    /// Distance to the next light (m).
    pub d_tl: f64,
    /// Displayed advisory speed (m/s).
    pub v_ref: f64,
    /// Signal phase code: 0 green, 0.5 yellow, 1 red.
    pub tau_sp: f64,
    /// Tracking error `v_ref - v` (m/s).
    pub err: f64,
}

impl FeatureVector {
    pub const NAMES: [&'static str; N_FEATURES] = ["v", "acc", "d_tl", "v_ref", "tau_sp", "err"];
    pub const V: usize = 0;
    pub const ERR: usize = 5;

    pub fn to_array(&self) -> [f64; N_FEATURES] {
        [self.v, self.acc, self.d_tl, self.v_ref, self.tau_sp, self.err]
    }
}

/// A uniformly sampled drive along a route.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriveTrace {
    pub driver_id: String,
    pub dt: f64,
    pub positions: Vec<f64>,
    pub features: Vec<FeatureVector>,
}

impl DriveTrace {
    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn duration(&self) -> f64 {
        self.len().saturating_sub(1) as f64 * self.dt
    }

    pub fn speeds(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.v).collect()
    }

    pub fn errors(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.err).collect()
    }

    pub fn advisory(&self) -> Vec<f64> {
        self.features.iter().map(|f| f.v_ref).collect()
    }

    /// The recorded advisory as a profile on the trace's own time grid.
    pub fn advisory_profile(&self) -> Result<ReferenceProfile> {
        ReferenceProfile::new(self.dt, self.advisory())
    }

    /// Largest `|v[k+1] - (v[k] + acc[k] dt)|` over the trace.
    pub fn kinematic_residual(&self) -> f64 {
        self.features
            .windows(2)
            .map(|w| (w[1].v - (w[0].v + w[0].acc * self.dt)).abs())
            .fold(0.0, f64::max)
    }

    /// Largest `|err - (v_ref - v)|` over the trace.
    pub fn error_residual(&self) -> f64 {
        self.features
            .iter()
            .map(|f| (f.err - (f.v_ref - f.v)).abs())
            .fold(0.0, f64::max)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
        w.write_record(TRACE_HEADER).map_err(|e| csv_err(path, e))?;
        for (k, (s, f)) in self.positions.iter().zip(&self.features).enumerate() {
            let row = [
                self.time(k),
                *s,
                f.v,
                f.acc,
                f.d_tl,
                f.v_ref,
                f.tau_sp,
                f.err,
            ];
            w.write_record(row.iter().map(|x| x.to_string()))
                .map_err(|e| csv_err(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads a trace file; the driver id is the file stem.
    pub fn read_csv(path: &Path) -> Result<Self> {
        let driver_id = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
        let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
        if header.iter().ne(TRACE_HEADER.iter().copied()) {
            return Err(Error::parse(
                path,
                format!("expected header {}, found {}", TRACE_HEADER.join(","), header.iter().collect::<Vec<_>>().join(",")),
            ));
        }
        let mut times = Vec::new();
        let mut positions = Vec::new();
        let mut features = Vec::new();
        for (line, rec) in r.records().enumerate() {
            let rec = rec.map_err(|e| csv_err(path, e))?;
            let mut vals = [0.0; 8];
            for (slot, field) in vals.iter_mut().zip(rec.iter()) {
                *slot = field.trim().parse().map_err(|_| {
                    Error::parse(path, format!("row {}: bad number {field:?}", line + 2))
                })?;
            }
            if rec.len() != 8 {
                return Err(Error::parse(path, format!("row {}: expected 8 fields", line + 2)));
            }
            times.push(vals[0]);
            positions.push(vals[1]);
            features.push(FeatureVector {
                v: vals[2],
                acc: vals[3],
                d_tl: vals[4],
                v_ref: vals[5],
                tau_sp: vals[6],
                err: vals[7],
            });
        }
        if times.len() < 2 {
            return Err(Error::parse(path, "trace needs at least two rows"));
        }
        let dt = times[1] - times[0];
        if !(dt > 0.0) {
            return Err(Error::parse(path, "time column must increase"));
        }
        for (k, t) in times.iter().enumerate() {
            if (t - k as f64 * dt).abs() > 1e-6 * (1.0 + t.abs()) {
                return Err(Error::parse(path, format!("row {}: non-uniform sampling", k + 2)));
            }
        }
        Ok(DriveTrace {
            driver_id,
            dt,
            positions,
            features,
        })
    }
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    if e.is_io_error() {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            other => Error::parse(path, format!("{other:?}")),
        }
    } else {
        Error::parse(path, e)
    }
}
