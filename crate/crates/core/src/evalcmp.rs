//! RMSE scoring of the two driver models on held-out drives, comparison
//! tables and distribution summaries.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edm::EdmParams;
use crate::error::{Error, Result};
use crate::gacal::ReplayTarget;
use crate::scenario::RouteMap;
use crate::synthdrive::{DriveTrace, WindowConfig};

/// Root mean square of `y - yhat`.
pub fn rmse(y: &[f64], yhat: &[f64]) -> Result<f64> {
    if y.len() != yhat.len() {
        return Err(Error::Shape(format!(
            "rmse of series with lengths {} and {}",
            y.len(),
            yhat.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Domain("rmse of empty series".into()));
    }
    let sum: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sum / y.len() as f64).sqrt())
}

/// Speed and tracking-error forecast over the prediction span (m/s).
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub v: Vec<f64>,
    pub err: Vec<f64>,
}

/// Anything that forecasts the next `n_p` samples of a drive from the `n_h`
/// samples starting at `start`.
pub trait Forecaster {
    fn forecast(&self, trace: &DriveTrace, start: usize, cfg: &WindowConfig) -> Result<Forecast>;
}

/// Pooled predictions and scores for one driver.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverScore {
    pub driver_id: String,
    pub rmse_v: f64,
    pub rmse_err: f64,
    pub actual_v: Vec<f64>,
    pub predicted_v: Vec<f64>,
    pub actual_err: Vec<f64>,
    pub predicted_err: Vec<f64>,
}

impl DriverScore {
    fn from_series(
        driver_id: &str,
        actual_v: Vec<f64>,
        predicted_v: Vec<f64>,
        actual_err: Vec<f64>,
        predicted_err: Vec<f64>,
    ) -> Result<Self> {
        Ok(DriverScore {
            driver_id: driver_id.to_string(),
            rmse_v: rmse(&actual_v, &predicted_v)?,
            rmse_err: rmse(&actual_err, &predicted_err)?,
            actual_v,
            predicted_v,
            actual_err,
            predicted_err,
        })
    }

    pub fn points(&self) -> usize {
        self.actual_v.len()
    }
}

/// Forecasts every stride-1 window of each trace and scores the pooled
/// point predictions per driver. Traces too short for one window are
/// skipped with a warning.
pub fn evaluate_lstmed<F: Forecaster + Sync>(
    model: &F,
    traces: &[DriveTrace],
    cfg: &WindowConfig,
) -> Result<Vec<DriverScore>> {
    cfg.validate()?;
    let (n_h, n_p) = (cfg.n_h(), cfg.n_p());
    let mut out = Vec::new();
    for tr in traces {
        let count = cfg.window_count(tr.len());
        if count == 0 {
            log::warn!("{}: {} samples is too short to evaluate; skipped", tr.driver_id, tr.len());
            continue;
        }
        let forecasts: Vec<Forecast> = (0..count)
            .into_par_iter()
            .map(|start| model.forecast(tr, start, cfg))
            .collect::<Result<_>>()?;
        let total = count * n_p;
        let mut actual_v = Vec::with_capacity(total);
        let mut actual_err = Vec::with_capacity(total);
        let mut predicted_v = Vec::with_capacity(total);
        let mut predicted_err = Vec::with_capacity(total);
        for (start, f) in forecasts.into_iter().enumerate() {
            if f.v.len() != n_p || f.err.len() != n_p {
                return Err(Error::Shape(format!(
                    "forecast of length {} / {}, expected {n_p}",
                    f.v.len(),
                    f.err.len()
                )));
            }
            let future = &tr.features[start + n_h..start + n_h + n_p];
            actual_v.extend(future.iter().map(|x| x.v));
            actual_err.extend(future.iter().map(|x| x.err));
            predicted_v.extend(f.v);
            predicted_err.extend(f.err);
        }
        out.push(DriverScore::from_series(
            &tr.driver_id,
            actual_v,
            predicted_v,
            actual_err,
            predicted_err,
        )?);
    }
    Ok(out)
}

/// Replays each driver's calibrated EDM against the advisory recorded in its
/// trace. The EDM's tracking error is `v_ref - v_edm`, scored against the
/// recorded `v_ref - v`; both share `v_ref`, so the two RMSEs coincide up
/// to rounding.
pub fn evaluate_edm(
    calibrated: &[EdmParams],
    traces: &[DriveTrace],
    route: &RouteMap,
) -> Result<Vec<DriverScore>> {
    if calibrated.len() != traces.len() {
        return Err(Error::Config(format!(
            "{} calibrations for {} traces",
            calibrated.len(),
            traces.len()
        )));
    }
    traces
        .par_iter()
        .zip(calibrated)
        .map(|(tr, params)| {
            let replay = ReplayTarget::new(tr, route)?.replay(params)?;
            let n = replay.len().min(tr.len());
            let actual = &tr.features[..n];
            let predicted = &replay.features[..n];
            DriverScore::from_series(
                &tr.driver_id,
                actual.iter().map(|f| f.v).collect(),
                predicted.iter().map(|f| f.v).collect(),
                actual.iter().map(|f| f.v_ref - f.v).collect(),
                actual
                    .iter()
                    .zip(predicted)
                    .map(|(a, p)| a.v_ref - p.v)
                    .collect(),
            )
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub driver_id: String,
    pub rmse_v_lstm: f64,
    pub rmse_v_edm: f64,
    pub rmse_err_lstm: f64,
    pub rmse_err_edm: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Tally {
    pub lstm_wins: usize,
    pub edm_wins: usize,
    pub ties: usize,
}

impl Tally {
    fn add(&mut self, lstm: f64, edm: f64) {
        match lstm.partial_cmp(&edm) {
            Some(std::cmp::Ordering::Less) => self.lstm_wins += 1,
            Some(std::cmp::Ordering::Greater) => self.edm_wins += 1,
            _ => self.ties += 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub rows: Vec<ComparisonRow>,
    pub velocity: Tally,
    pub tracking_error: Tally,
    pub text: String,
    pub csv: String,
}

/// Aligned text table (two decimals), CSV, and LSTM-vs-EDM win counts per
/// channel. Equal values count as ties.
pub fn comparison_table(rows: &[ComparisonRow]) -> Result<ComparisonReport> {
    if rows.is_empty() {
        return Err(Error::Domain("comparison needs at least one row".into()));
    }
    let mut velocity = Tally::default();
    let mut tracking_error = Tally::default();
    let id_width = rows
        .iter()
        .map(|r| r.driver_id.len())
        .max()
        .unwrap_or(0)
        .max("Driver ID".len());

    let mut text = format!(
        "{:<w$} | {:>8} {:>8} | {:>8} {:>8}\n{:<w$} | {:>8} {:>8} | {:>8} {:>8}\n",
        "",
        "Velocity",
        "",
        "Error",
        "",
        "Driver ID",
        "LSTM",
        "EDM",
        "LSTM",
        "EDM",
        w = id_width
    );
    text.push_str(&format!("{}\n", "-".repeat(id_width + 41)));
    let mut csv = String::from("driver_id,rmse_v_lstm,rmse_v_edm,rmse_err_lstm,rmse_err_edm\n");
    for r in rows {
        velocity.add(r.rmse_v_lstm, r.rmse_v_edm);
        tracking_error.add(r.rmse_err_lstm, r.rmse_err_edm);
        text.push_str(&format!(
            "{:<w$} | {:>8.2} {:>8.2} | {:>8.2} {:>8.2}\n",
            r.driver_id,
            r.rmse_v_lstm,
            r.rmse_v_edm,
            r.rmse_err_lstm,
            r.rmse_err_edm,
            w = id_width
        ));
        csv.push_str(&format!(
            "{},{},{},{},{}\n",
            r.driver_id, r.rmse_v_lstm, r.rmse_v_edm, r.rmse_err_lstm, r.rmse_err_edm
        ));
    }
    let n = rows.len();
    text.push_str(&format!(
        "LSTMED better: velocity {}/{n} (ties {}), tracking error {}/{n} (ties {})\n",
        velocity.lstm_wins, velocity.ties, tracking_error.lstm_wins, tracking_error.ties
    ));
    Ok(ComparisonReport {
        rows: rows.to_vec(),
        velocity,
        tracking_error,
        text,
        csv,
    })
}

/// Parses the CSV written by [`comparison_table`].
pub fn parse_comparison_csv(text: &str) -> Result<Vec<ComparisonRow>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 5 {
            return Err(Error::parse("<comparison>", format!("line {}: expected 5 fields", i + 1)));
        }
        let num = |s: &str| {
            s.trim()
                .parse::<f64>()
                .map_err(|_| Error::parse("<comparison>", format!("line {}: bad number {s:?}", i + 1)))
        };
        rows.push(ComparisonRow {
            driver_id: f[0].to_string(),
            rmse_v_lstm: num(f[1])?,
            rmse_v_edm: num(f[2])?,
            rmse_err_lstm: num(f[3])?,
            rmse_err_edm: num(f[4])?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Channel {
    Velocity,
    TrackingError,
}

impl Channel {
    /// Histogram range used in reports (m/s).
    pub fn default_range(self) -> (f64, f64) {
        match self {
            Channel::Velocity => (0.0, 30.0),
            Channel::TrackingError => (-10.0, 10.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Actual,
    Lstm,
    Edm,
}

pub const DEFAULT_BINS: usize = 30;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistSummary {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
}

impl DistSummary {
    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.counts.len();
        (0..=n)
            .map(|i| self.lo + (self.hi - self.lo) * i as f64 / n as f64)
            .collect()
    }
}

/// Mean, population std and a fixed-edge histogram; values outside
/// `[lo, hi]` are clipped into the end bins and `hi` itself falls in the
/// last bin.
pub fn dist_summary(series: &[f64], bins: usize, range: (f64, f64)) -> Result<DistSummary> {
    let (lo, hi) = range;
    if series.is_empty() {
        return Err(Error::Domain("distribution of an empty series".into()));
    }
    if bins == 0 || !(hi > lo) {
        return Err(Error::Config(format!(
            "need bins >= 1 and hi > lo, got {bins} bins over [{lo}, {hi}]"
        )));
    }
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let std = (series.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    let mut counts = vec![0usize; bins];
    for &x in series {
        let pos = ((x - lo) / (hi - lo) * bins as f64).floor();
        let idx = if pos.is_nan() { 0.0 } else { pos.clamp(0.0, (bins - 1) as f64) };
        counts[idx as usize] += 1;
    }
    Ok(DistSummary {
        mean,
        std,
        lo,
        hi,
        counts,
    })
}

/// Plot-ready histogram rows for a set of labelled summaries:
/// `driver_id,channel,source,bin_lo,bin_hi,count,mean,std`.
pub fn dist_csv(entries: &[(String, Channel, Source, DistSummary)]) -> String {
    let mut out = String::from("driver_id,channel,source,bin_lo,bin_hi,count,mean,std\n");
    for (id, ch, src, d) in entries {
        let edges = d.bin_edges();
        let ch = serde_json::to_value(ch).expect("enum serializes");
        let src = serde_json::to_value(src).expect("enum serializes");
        for (b, c) in d.counts.iter().enumerate() {
            out.push_str(&format!(
                "{id},{},{},{},{},{c},{},{}\n",
                ch.as_str().unwrap_or_default(),
                src.as_str().unwrap_or_default(),
                edges[b],
                edges[b + 1],
                d.mean,
                d.std
            ));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdrive::FeatureVector;

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(rmse(&[1.0, 2.0, 3.0], &[3.5, 4.5, 5.5]).unwrap(), 2.5);
        let r = rmse(&[0.0, 0.0], &[3.0, 4.0]).unwrap();
        assert!((r - 12.5f64.sqrt()).abs() < 1e-15);
        assert!(matches!(rmse(&[1.0], &[1.0, 2.0]), Err(Error::Shape(_))));
        assert!(matches!(rmse(&[], &[]), Err(Error::Domain(_))));
    }

    fn row(id: &str, vl: f64, ve: f64, el: f64, ee: f64) -> ComparisonRow {
        ComparisonRow {
            driver_id: id.into(),
            rmse_v_lstm: vl,
            rmse_v_edm: ve,
            rmse_err_lstm: el,
            rmse_err_edm: ee,
        }
    }

    #[test]
    fn table_formats_reference_rows() {
        let rows = [
            row("Driver 1", 2.46, 2.84, 1.61, 2.84),
            row("Driver 2", 3.35, 3.19, 1.43, 3.19),
            row("Driver 3", 1.72, 3.04, 1.93, 3.04),
        ];
        let rep = comparison_table(&rows).unwrap();
        assert!(rep.text.contains("Driver 1  |     2.46     2.84 |     1.61     2.84"));
        assert!(rep.text.contains("Driver 2  |     3.35     3.19 |     1.43     3.19"));
        assert!(rep.text.contains("Driver 3  |     1.72     3.04 |     1.93     3.04"));
        assert_eq!(rep.velocity.lstm_wins, 2);
        assert_eq!(rep.tracking_error.lstm_wins, 3);
        assert!(rep.text.contains("tracking error 3/3"));
        assert_eq!(parse_comparison_csv(&rep.csv).unwrap(), rows.to_vec());
    }

    #[test]
    fn ties_are_not_wins() {
        let rep = comparison_table(&[row("a", 1.0, 1.0, 2.0, 2.0)]).unwrap();
        assert_eq!(rep.velocity, Tally { lstm_wins: 0, edm_wins: 0, ties: 1 });
        assert_eq!(rep.tracking_error.ties, 1);
        assert!(comparison_table(&[]).is_err());
    }

    #[test]
    fn dist_examples() {
        let d = dist_summary(&[1.0, 1.0, 1.0], 5, (0.0, 5.0)).unwrap();
        assert_eq!((d.mean, d.std), (1.0, 0.0));
        let grid: Vec<f64> = (0..100).map(|i| i as f64 / 10.0 + 0.05).collect();
        let d = dist_summary(&grid, 10, (0.0, 10.0)).unwrap();
        assert!(d.counts.iter().all(|&c| c == 10));
        let d = dist_summary(&[5.0, -3.0, 99.0], 5, (0.0, 5.0)).unwrap();
        assert_eq!(d.counts, vec![1, 0, 0, 0, 2]);
        assert!(dist_summary(&[], 5, (0.0, 1.0)).is_err());
        assert!(dist_summary(&[1.0], 0, (0.0, 1.0)).is_err());
        assert!(dist_summary(&[1.0], 3, (1.0, 1.0)).is_err());
    }

    struct Zero;
    impl Forecaster for Zero {
        fn forecast(&self, _: &DriveTrace, _: usize, cfg: &WindowConfig) -> Result<Forecast> {
            Ok(Forecast {
                v: vec![0.0; cfg.n_p()],
                err: vec![0.0; cfg.n_p()],
            })
        }
    }

    struct Oracle;
    impl Forecaster for Oracle {
        fn forecast(&self, tr: &DriveTrace, start: usize, cfg: &WindowConfig) -> Result<Forecast> {
            let fut = &tr.features[start + cfg.n_h()..start + cfg.span()];
            Ok(Forecast {
                v: fut.iter().map(|f| f.v).collect(),
                err: fut.iter().map(|f| f.err).collect(),
            })
        }
    }

    fn wavy(len: usize) -> DriveTrace {
        let features = (0..len)
            .map(|k| {
                let v = 10.0 + 3.0 * (k as f64 * 0.3).sin();
                FeatureVector {
                    v,
                    acc: 0.0,
                    d_tl: 0.0,
                    v_ref: 11.0,
                    tau_sp: 0.0,
                    err: 11.0 - v,
                }
            })
            .collect();
        DriveTrace {
            driver_id: "w".into(),
            dt: 1.0,
            positions: vec![0.0; len],
            features,
        }
    }

    #[test]
    fn stub_forecasters() {
        let cfg = WindowConfig {
            t_h: 10.0,
            t_p: 4.0,
            dt: 1.0,
        };
        let tr = wavy(50);
        let short = wavy(5);
        let scores = evaluate_lstmed(&Oracle, &[tr.clone(), short], &cfg).unwrap();
        assert_eq!(scores.len(), 1);
        assert_eq!((scores[0].rmse_v, scores[0].rmse_err), (0.0, 0.0));
        assert_eq!(scores[0].points(), (50 - 10 - 4 + 1) * 4);

        let zero = evaluate_lstmed(&Zero, std::slice::from_ref(&tr), &cfg).unwrap();
        let mut pooled = Vec::new();
        for start in 0..=(50 - 14) {
            pooled.extend(tr.features[start + 10..start + 14].iter().map(|f| f.v));
        }
        let rms = (pooled.iter().map(|v| v * v).sum::<f64>() / pooled.len() as f64).sqrt();
        assert!((zero[0].rmse_v - rms).abs() < 1e-12);
    }
}
