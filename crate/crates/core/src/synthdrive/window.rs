use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthdrive::{DriveTrace, FeatureVector, N_FEATURES};

/// Number of predicted channels: speed and tracking error.
pub const N_OUTPUTS: usize = 2;

/// Input channel feeding each output, in output order.
pub const OUTPUT_CHANNELS: [usize; N_OUTPUTS] = [FeatureVector::V, FeatureVector::ERR];

/// History and prediction spans of a training window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WindowConfig {
    pub t_h: f64,
    pub t_p: f64,
    pub dt: f64,
}

impl Default for WindowConfig {
    fn default() -> Self {
        WindowConfig {
            t_h: 30.0,
            t_p: 5.0,
            dt: 0.1,
        }
    }
}

impl WindowConfig {
    pub fn n_h(&self) -> usize {
        (self.t_h / self.dt).round() as usize
    }

    pub fn n_p(&self) -> usize {
        (self.t_p / self.dt).round() as usize
    }

    pub fn span(&self) -> usize {
        self.n_h() + self.n_p()
    }

    /// Number of stride-1 windows in a trace of `len` samples.
    pub fn window_count(&self, len: usize) -> usize {
        (len + 1).saturating_sub(self.span())
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::Config(format!("window dt must be > 0, got {}", self.dt)));
        }
        if self.n_h() == 0 || self.n_p() == 0 {
            return Err(Error::Config(format!(
                "history ({} s) and prediction ({} s) must each cover at least one sample",
                self.t_h, self.t_p
            )));
        }
        Ok(())
    }
}

/// Per-channel `(min, max)` used for 0-1 scaling. The two outputs reuse the
/// speed and tracking-error channels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub min: [f64; N_FEATURES],
    pub max: [f64; N_FEATURES],
}

/// The phase code already lives in [0, 1].
const PHASE_RANGE: (f64, f64) = (0.0, 1.0);
const PHASE_CHANNEL: usize = 4;

impl NormStats {
    pub fn new(min: [f64; N_FEATURES], max: [f64; N_FEATURES]) -> Result<Self> {
        for c in 0..N_FEATURES {
            if !(min[c].is_finite() && max[c].is_finite() && max[c] > min[c]) {
                return Err(Error::Config(format!(
                    "degenerate normalization range for channel {}: [{}, {}]",
                    FeatureVector::NAMES[c],
                    min[c],
                    max[c]
                )));
            }
        }
        Ok(NormStats { min, max })
    }

    /// Ranges observed over every sample of `traces`.
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a DriveTrace>) -> Result<Self> {
        let mut min = [f64::INFINITY; N_FEATURES];
        let mut max = [f64::NEG_INFINITY; N_FEATURES];
        for f in traces.into_iter().flat_map(|t| &t.features) {
            for (c, x) in f.to_array().into_iter().enumerate() {
                min[c] = min[c].min(x);
                max[c] = max[c].max(x);
            }
        }
        min[PHASE_CHANNEL] = PHASE_RANGE.0;
        max[PHASE_CHANNEL] = PHASE_RANGE.1;
        Self::new(min, max)
    }

    pub fn normalize(&self, channel: usize, x: f64) -> f64 {
        ((x - self.min[channel]) / (self.max[channel] - self.min[channel])).clamp(0.0, 1.0)
    }

    pub fn denormalize(&self, channel: usize, u: f64) -> f64 {
        self.min[channel] + u * (self.max[channel] - self.min[channel])
    }

    pub fn normalize_row(&self, f: &FeatureVector) -> [f64; N_FEATURES] {
        let raw = f.to_array();
        std::array::from_fn(|c| self.normalize(c, raw[c]))
    }
}

/// `(x - min) / (max - min)`, clamped to [0, 1].
pub fn normalize(x: f64, stats: &NormStats, channel: usize) -> f64 {
    stats.normalize(channel, x)
}

pub fn denormalize(u: f64, stats: &NormStats, channel: usize) -> f64 {
    stats.denormalize(channel, u)
}

#[derive(Debug, Clone, PartialEq)]
struct NormalizedTrace {
    driver_id: String,
    rows: Vec<[f64; N_FEATURES]>,
}

/// Location of one window inside the dataset's traces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowRef {
    pub trace: usize,
    pub start: usize,
}

/// Normalized sliding windows over a set of traces. Windows are stored as
/// `(trace, start)` references into the normalized series rather than as
/// copied matrices; [`history`](Self::history) and [`target`](Self::target)
/// materialize them.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowedDataset {
    traces: Vec<NormalizedTrace>,
    windows: Vec<WindowRef>,
    n_h: usize,
    n_p: usize,
    pub norm: NormStats,
}

impl WindowedDataset {
    pub fn build(traces: &[&DriveTrace], cfg: &WindowConfig, norm: NormStats) -> Self {
        let (n_h, n_p) = (cfg.n_h(), cfg.n_p());
        let mut out = WindowedDataset {
            traces: Vec::new(),
            windows: Vec::new(),
            n_h,
            n_p,
            norm,
        };
        for tr in traces {
            let count = cfg.window_count(tr.len());
            if count == 0 {
                log::warn!(
                    "trace {} has {} samples, fewer than the {} a window needs; skipped",
                    tr.driver_id,
                    tr.len(),
                    n_h + n_p
                );
                continue;
            }
            let idx = out.traces.len();
            out.traces.push(NormalizedTrace {
                driver_id: tr.driver_id.clone(),
                rows: tr.features.iter().map(|f| norm.normalize_row(f)).collect(),
            });
            out.windows
                .extend((0..count).map(|start| WindowRef { trace: idx, start }));
        }
        out
    }

    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn n_h(&self) -> usize {
        self.n_h
    }

    pub fn n_p(&self) -> usize {
        self.n_p
    }

    pub fn window(&self, i: usize) -> WindowRef {
        self.windows[i]
    }

    pub fn driver_id(&self, i: usize) -> &str {
        &self.traces[self.windows[i].trace].driver_id
    }

    pub fn driver_ids(&self) -> Vec<&str> {
        self.traces.iter().map(|t| t.driver_id.as_str()).collect()
    }

    /// Normalized history, one row of six features per time step.
    pub fn history(&self, i: usize) -> &[[f64; N_FEATURES]] {
        let w = self.windows[i];
        &self.traces[w.trace].rows[w.start..w.start + self.n_h]
    }

    /// Normalized `(v, err)` targets for the `n_p` steps after the history.
    pub fn target(&self, i: usize) -> Vec<[f64; N_OUTPUTS]> {
        let w = self.windows[i];
        self.traces[w.trace].rows[w.start + self.n_h..w.start + self.n_h + self.n_p]
            .iter()
            .map(|r| OUTPUT_CHANNELS.map(|c| r[c]))
            .collect()
    }
}

/// Splits whole traces into train and test sets (`n_test` traces held out,
/// chosen by `split_seed`), fits normalization on the training traces, and
/// windows both sets with stride 1.
pub fn window_dataset(
    traces: &[DriveTrace],
    cfg: &WindowConfig,
    split_seed: u64,
    n_test: usize,
) -> Result<(WindowedDataset, WindowedDataset)> {
    cfg.validate()?;
    if n_test >= traces.len() {
        return Err(Error::Config(format!(
            "cannot hold out {n_test} of {} traces",
            traces.len()
        )));
    }
    let (train_idx, test_idx) = split_indices(traces.len(), split_seed, n_test);
    let usable = |idx: &[usize]| -> Vec<&DriveTrace> {
        idx.iter()
            .map(|&i| &traces[i])
            .filter(|t| cfg.window_count(t.len()) > 0)
            .collect()
    };
    let train_traces = usable(&train_idx);
    if train_traces.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no training trace has the {} samples a window needs",
            cfg.span()
        )));
    }
    let norm = NormStats::from_traces(train_traces.iter().copied())?;
    let train = WindowedDataset::build(&train_traces, cfg, norm);
    let test_all: Vec<&DriveTrace> = test_idx.iter().map(|&i| &traces[i]).collect();
    let test = WindowedDataset::build(&test_all, cfg, norm);
    Ok((train, test))
}

/// Deterministic held-out selection; both halves keep input order.
pub fn split_indices(n: usize, seed: u64, n_test: usize) -> (Vec<usize>, Vec<usize>) {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut test: Vec<usize> = order[..n_test.min(n)].to_vec();
    let mut train: Vec<usize> = order[n_test.min(n)..].to_vec();
    test.sort_unstable();
    train.sort_unstable();
    (train, test)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(id: &str, len: usize) -> DriveTrace {
        let features = (0..len)
            .map(|k| {
                let v = (k % 17) as f64;
                FeatureVector {
                    v,
                    acc: 0.1 * (k % 5) as f64,
                    d_tl: 1000.0 - k as f64,
                    v_ref: 10.0 + (k % 4) as f64,
                    tau_sp: if k % 3 == 0 { 1.0 } else { 0.0 },
                    err: 10.0 + (k % 4) as f64 - v,
                }
            })
            .collect();
        DriveTrace {
            driver_id: id.into(),
            dt: 1.0,
            positions: (0..len).map(|k| k as f64).collect(),
            features,
        }
    }

    fn cfg() -> WindowConfig {
        WindowConfig {
            t_h: 30.0,
            t_p: 5.0,
            dt: 1.0,
        }
    }

    #[test]
    fn window_counts() {
        let c = cfg();
        assert_eq!((c.n_h(), c.n_p()), (30, 5));
        let tr = ramp("a", 100);
        let ds = WindowedDataset::build(&[&tr], &c, NormStats::from_traces([&tr]).unwrap());
        assert_eq!(ds.len(), 66);
        let exact = ramp("b", 35);
        let ds = WindowedDataset::build(&[&exact], &c, NormStats::from_traces([&tr]).unwrap());
        assert_eq!(ds.len(), 1);
        let short = ramp("c", 34);
        let ds = WindowedDataset::build(&[&short], &c, NormStats::from_traces([&tr]).unwrap());
        assert!(ds.is_empty());
    }

    #[test]
    fn default_window_sizes() {
        let c = WindowConfig::default();
        assert_eq!(c.n_h(), 300);
        assert_eq!(c.n_p(), 50);
    }

    #[test]
    fn split_by_driver() {
        let traces: Vec<DriveTrace> = (0..71).map(|i| ramp(&format!("d{i:02}"), 60)).collect();
        let (train, test) = window_dataset(&traces, &cfg(), 5, 5).unwrap();
        assert_eq!(train.driver_ids().len(), 66);
        assert_eq!(test.driver_ids().len(), 5);
        for id in test.driver_ids() {
            assert!(!train.driver_ids().contains(&id));
        }
        assert_eq!(train.len(), 66 * 26);
    }

    #[test]
    fn split_errors() {
        let traces: Vec<DriveTrace> = (0..3).map(|i| ramp(&format!("d{i}"), 10)).collect();
        assert!(matches!(
            window_dataset(&traces, &cfg(), 0, 1),
            Err(Error::EmptyDataset(_))
        ));
        assert!(matches!(window_dataset(&traces, &cfg(), 0, 3), Err(Error::Config(_))));
    }

    #[test]
    fn normalize_examples() {
        let mut min = [0.0; N_FEATURES];
        let mut max = [10.0; N_FEATURES];
        let s = NormStats::new(min, max).unwrap();
        assert_eq!(normalize(5.0, &s, 0), 0.5);
        assert_eq!(normalize(0.0, &s, 0), 0.0);
        assert_eq!(normalize(10.0, &s, 0), 1.0);
        min[0] = 2.0;
        max[0] = 6.0;
        let s = NormStats::new(min, max).unwrap();
        assert_eq!(normalize(7.0, &s, 0), 1.0);
        assert_eq!(normalize(1.0, &s, 0), 0.0);
        max[1] = 0.0;
        assert!(NormStats::new(min, max).is_err());
    }

    #[test]
    fn phase_channel_is_identity() {
        let tr = ramp("a", 50);
        let s = NormStats::from_traces([&tr]).unwrap();
        assert_eq!((s.min[4], s.max[4]), (0.0, 1.0));
    }

    #[test]
    fn window_contents() {
        let tr = ramp("a", 40);
        let norm = NormStats::from_traces([&tr]).unwrap();
        let ds = WindowedDataset::build(&[&tr], &cfg(), norm);
        let h = ds.history(3);
        assert_eq!(h.len(), 30);
        assert_eq!(h[0], norm.normalize_row(&tr.features[3]));
        let y = ds.target(3);
        assert_eq!(y.len(), 5);
        assert_eq!(y[0][0], norm.normalize(0, tr.features[33].v));
        assert_eq!(y[4][1], norm.normalize(5, tr.features[37].err));
    }
}
