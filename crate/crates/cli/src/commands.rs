//! One function per subcommand. Each reads its inputs from the output
//! directory left by the previous stage and writes its own subdirectory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use driver_model::edm::generate_reference;
use driver_model::evalcmp::{
    comparison_table, dist_csv, dist_summary, evaluate_edm, evaluate_lstmed, Channel, ComparisonReport,
    ComparisonRow, DistSummary, DriverScore, Source, DEFAULT_BINS,
};
use driver_model::gacal::{calibrate, population_summary, summary_csv, CalibrationResult, GaConfig};
use driver_model::seqnet::{train, LstmEdPredictor};
use driver_model::synthdrive::{simulate_human, split_indices, window_dataset, NoiseConfig};
use driver_model::{DriveTrace, EdmParams, Error, ReferenceProfile, RouteMap, SimConfig};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::{PipelineConfig, Stream};

pub const ROUTE_FILE: &str = "route.toml";
pub const REFS_DIR: &str = "refs";
pub const DATA_DIR: &str = "data";
pub const CALIB_DIR: &str = "calib";
pub const MODEL_DIR: &str = "model";
pub const EVAL_DIR: &str = "eval";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub file: String,
    pub dt: f64,
    pub params: EdmParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DriverRecord {
    pub driver_id: String,
    pub file: String,
    pub params: EdmParams,
    /// Index of the advisory profile the driver followed.
    pub reference: usize,
    pub noise_seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitRecord {
    pub split_seed: u64,
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Serialize)]
struct Metadata<'a> {
    command: &'a str,
    seed: u64,
    derived_seeds: BTreeMap<&'a str, Vec<u64>>,
    config: &'a PipelineConfig,
}

fn io_err(path: &Path, e: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: e,
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> anyhow::Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| io_err(path, e))?;
    Ok(())
}

fn read(path: &Path) -> anyhow::Result<String> {
    Ok(std::fs::read_to_string(path).map_err(|e| io_err(path, e))?)
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    write(path, text)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<T> {
    let text = read(path)?;
    Ok(serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?)
}

fn write_metadata(
    cfg: &PipelineConfig,
    dir: &Path,
    command: &str,
    derived_seeds: BTreeMap<&str, Vec<u64>>,
) -> anyhow::Result<()> {
    write_json(
        &dir.join("metadata.json"),
        &Metadata {
            command,
            seed: cfg.seed,
            derived_seeds,
            config: cfg,
        },
    )
}

fn out(cfg: &PipelineConfig, part: &str) -> PathBuf {
    cfg.out_dir.join(part)
}

pub fn load_route(cfg: &PipelineConfig) -> anyhow::Result<RouteMap> {
    Ok(RouteMap::load(&out(cfg, ROUTE_FILE))?)
}

/// Writes `route.toml`: the configured route file, or the built-in route.
pub fn gen_route(cfg: &PipelineConfig) -> anyhow::Result<PathBuf> {
    let route = match &cfg.route {
        Some(path) => RouteMap::load(path)?,
        None => RouteMap::five_mile(),
    };
    let path = out(cfg, ROUTE_FILE);
    write(&path, route.to_toml())?;
    log::info!("route with {} stops written to {}", route.stops().len(), path.display());
    Ok(path)
}

/// Draws `n_refs` advisory calibrations and writes one `t,v_ref` profile
/// for each.
pub fn gen_refs(cfg: &PipelineConfig) -> anyhow::Result<Vec<ReferenceProfile>> {
    let route = load_route(cfg)?;
    let mut rng = cfg.rng(Stream::RefParams);
    let params: Vec<EdmParams> = (0..cfg.n_refs).map(|_| cfg.ref_bounds.sample(&mut rng)).collect();
    let dt = cfg.window.dt;
    let profiles = generate_reference(&params, &route, dt)?;
    let dir = out(cfg, REFS_DIR);
    let mut records = Vec::new();
    for (i, (p, prof)) in params.iter().zip(&profiles).enumerate() {
        let file = format!("ref_{i:02}.csv");
        let mut text = String::from("t,v_ref\n");
        for (t, v) in prof.samples() {
            text.push_str(&format!("{t},{v}\n"));
        }
        write(&dir.join(&file), text)?;
        records.push(ReferenceRecord { file, dt, params: *p });
    }
    write_json(&dir.join("references.json"), &records)?;
    write_metadata(cfg, &dir, "gen-refs", BTreeMap::new())?;
    log::info!("{} advisory profiles written to {}", profiles.len(), dir.display());
    Ok(profiles)
}

pub fn load_refs(cfg: &PipelineConfig) -> anyhow::Result<Vec<ReferenceProfile>> {
    let dir = out(cfg, REFS_DIR);
    let records: Vec<ReferenceRecord> = read_json(&dir.join("references.json"))?;
    records
        .iter()
        .map(|r| {
            let path = dir.join(&r.file);
            let mut reader = csv::Reader::from_path(&path).map_err(|e| Error::Parse {
                path: path.clone(),
                message: e.to_string(),
            })?;
            let mut values = Vec::new();
            for row in reader.deserialize::<(f64, f64)>() {
                let (_, v) = row.map_err(|e| Error::Parse {
                    path: path.clone(),
                    message: e.to_string(),
                })?;
                values.push(v);
            }
            ReferenceProfile::new(r.dt, values).with_context(|| path.display().to_string())
        })
        .collect()
}

/// Simulates `n_drivers` synthetic humans, each following a randomly
/// assigned advisory.
pub fn gen_data(cfg: &PipelineConfig) -> anyhow::Result<Vec<DriveTrace>> {
    let route = load_route(cfg)?;
    let refs = load_refs(cfg)?;
    let n = cfg.n_drivers;
    let mut param_rng = cfg.rng(Stream::DriverParams);
    let mut assign_rng = cfg.rng(Stream::RefAssignment);
    let noise_seeds = cfg.seeds(Stream::Noise, n);
    let sim = SimConfig::with_dt(cfg.window.dt);
    let dir = out(cfg, DATA_DIR);
    let mut records = Vec::with_capacity(n);
    let mut traces = Vec::with_capacity(n);
    for (i, &noise_seed) in noise_seeds.iter().enumerate() {
        let driver_id = format!("driver_{i:03}");
        let params = cfg.driver_bounds.sample(&mut param_rng);
        let reference = assign_rng.random_range(0..refs.len());
        let noise = NoiseConfig {
            seed: noise_seed,
            ..cfg.noise
        };
        let trace = simulate_human(&driver_id, &params, &noise, &refs[reference], &route, &sim)
            .with_context(|| format!("simulating {driver_id}"))?;
        let file = format!("{driver_id}.csv");
        std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
        trace.write_csv(&dir.join(&file))?;
        records.push(DriverRecord {
            driver_id,
            file,
            params,
            reference,
            noise_seed,
        });
        traces.push(trace);
    }
    write_json(&dir.join("drivers.json"), &records)?;
    write_metadata(cfg, &dir, "gen-data", BTreeMap::from([("noise", noise_seeds)]))?;
    log::info!("{n} driver traces written to {}", dir.display());
    Ok(traces)
}

pub fn load_drivers(cfg: &PipelineConfig) -> anyhow::Result<(Vec<DriverRecord>, Vec<DriveTrace>)> {
    let dir = out(cfg, DATA_DIR);
    let records: Vec<DriverRecord> = read_json(&dir.join("drivers.json"))?;
    let traces = records
        .iter()
        .map(|r| DriveTrace::read_csv(&dir.join(&r.file)))
        .collect::<Result<Vec<_>, _>>()?;
    Ok((records, traces))
}

/// GA calibration of the EDM against every driver trace.
pub fn calibrate_all(cfg: &PipelineConfig) -> anyhow::Result<Vec<CalibrationResult>> {
    let route = load_route(cfg)?;
    let (_, traces) = load_drivers(cfg)?;
    let seeds = cfg.seeds(Stream::Calibration, traces.len());
    let mut results = Vec::with_capacity(traces.len());
    for (trace, &seed) in traces.iter().zip(&seeds) {
        let ga = GaConfig { seed, ..cfg.ga };
        let r = calibrate(trace, &route, &ga).with_context(|| format!("calibrating {}", trace.driver_id))?;
        log::info!("{}: replay fitness {:.3}", r.driver_id, r.best_fitness);
        results.push(r);
    }
    let dir = out(cfg, CALIB_DIR);
    write_json(&dir.join("calibrations.json"), &results)?;
    write(
        &dir.join("param_summary.csv"),
        summary_csv(&population_summary(&results, &cfg.ga.bounds)?),
    )?;
    write_metadata(cfg, &dir, "calibrate", BTreeMap::from([("ga", seeds)]))?;
    Ok(results)
}

pub struct Trained {
    pub predictor: LstmEdPredictor,
    pub loss_history: Vec<f64>,
    pub split: SplitRecord,
}

/// Splits the drivers, fits normalization on the training drivers, and
/// trains the encoder-decoder on their windows.
pub fn train_model(cfg: &PipelineConfig) -> anyhow::Result<Trained> {
    let (_, traces) = load_drivers(cfg)?;
    let split_seed = cfg.seed_for(Stream::Split);
    let train_seed = cfg.seed_for(Stream::Training);
    let (train_set, _) = window_dataset(&traces, &cfg.window, split_seed, cfg.n_test)?;
    let (train_idx, test_idx) = split_indices(traces.len(), split_seed, cfg.n_test);
    let ids = |idx: &[usize]| idx.iter().map(|&i| traces[i].driver_id.clone()).collect();
    let split = SplitRecord {
        split_seed,
        train: ids(&train_idx),
        test: ids(&test_idx),
    };
    log::info!(
        "training on {} windows from {} drivers",
        train_set.len(),
        split.train.len()
    );
    let tcfg = driver_model::seqnet::TrainConfig {
        seed: train_seed,
        ..cfg.train
    };
    let outcome = train(&train_set, &cfg.model_config(), &tcfg)?;
    let predictor = LstmEdPredictor::new(outcome.model, train_set.norm)?;

    let dir = out(cfg, MODEL_DIR);
    std::fs::create_dir_all(&dir).map_err(|e| io_err(&dir, e))?;
    predictor.save(&dir.join("model.json"))?;
    let mut loss = String::from("epoch,loss\n");
    for (e, l) in outcome.loss_history.iter().enumerate() {
        loss.push_str(&format!("{},{l}\n", e + 1));
    }
    write(&dir.join("loss.csv"), loss)?;
    write_json(&dir.join("split.json"), &split)?;
    write_metadata(
        cfg,
        &dir,
        "train",
        BTreeMap::from([("split", vec![split_seed]), ("train", vec![train_seed])]),
    )?;
    Ok(Trained {
        predictor,
        loss_history: outcome.loss_history,
        split,
    })
}

/// Forecast from the end of a recorded history: one row per future step.
pub fn predict_csv(model_path: &Path, history_path: &Path) -> anyhow::Result<String> {
    let history = DriveTrace::read_csv(history_path)?;
    let predictor = LstmEdPredictor::load(model_path)?;
    let (v, err) = predictor
        .predict(&history.features)
        .with_context(|| history_path.display().to_string())?;
    let mut text = String::from("step,t,v,err\n");
    for (k, (v, e)) in v.iter().zip(&err).enumerate() {
        text.push_str(&format!("{},{},{v},{e}\n", k + 1, (k + 1) as f64 * history.dt));
    }
    Ok(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub driver_id: String,
    pub model: String,
    pub rmse_v: f64,
    pub rmse_err: f64,
    pub points: usize,
}

pub struct Evaluation {
    pub lstm: Vec<DriverScore>,
    pub edm: Vec<DriverScore>,
}

/// Scores the trained model and the calibrated EDM on the held-out drivers.
pub fn evaluate(cfg: &PipelineConfig) -> anyhow::Result<Evaluation> {
    let route = load_route(cfg)?;
    let model_dir = out(cfg, MODEL_DIR);
    let predictor = LstmEdPredictor::load(&model_dir.join("model.json"))?;
    let split: SplitRecord = read_json(&model_dir.join("split.json"))?;
    let calib: Vec<CalibrationResult> = read_json(&out(cfg, CALIB_DIR).join("calibrations.json"))?;
    let data = out(cfg, DATA_DIR);
    let traces = split
        .test
        .iter()
        .map(|id| DriveTrace::read_csv(&data.join(format!("{id}.csv"))))
        .collect::<Result<Vec<_>, _>>()?;
    let params = split
        .test
        .iter()
        .map(|id| match calib.iter().find(|c| &c.driver_id == id) {
            Some(c) => Ok(c.best),
            None => bail!(Error::Config(format!("no calibration for test driver {id}"))),
        })
        .collect::<anyhow::Result<Vec<_>>>()?;

    let lstm = evaluate_lstmed(&predictor, &traces, &cfg.window)?;
    let edm = evaluate_edm(&params, &traces, &route)?;

    let mut scores = csv::Writer::from_writer(Vec::new());
    for (name, set) in [("lstm", &lstm), ("edm", &edm)] {
        for s in set.iter() {
            scores.serialize(ScoreRow {
                driver_id: s.driver_id.clone(),
                model: name.into(),
                rmse_v: s.rmse_v,
                rmse_err: s.rmse_err,
                points: s.points(),
            })?;
        }
    }
    let dir = out(cfg, EVAL_DIR);
    write(&dir.join("scores.csv"), scores.into_inner()?)?;
    write(&dir.join("distributions.csv"), dist_csv(&distributions(&traces, &lstm, &edm)?))?;
    write_metadata(cfg, &dir, "evaluate", BTreeMap::new())?;
    Ok(Evaluation { lstm, edm })
}

type DistEntry = (String, Channel, Source, DistSummary);

/// Histograms of recorded, LSTM-predicted and EDM-replayed speed and
/// tracking error, per test driver and pooled under the id `all`.
fn distributions(traces: &[DriveTrace], lstm: &[DriverScore], edm: &[DriverScore]) -> anyhow::Result<Vec<DistEntry>> {
    let mut entries = Vec::new();
    let mut pooled: BTreeMap<(u8, u8), Vec<f64>> = BTreeMap::new();
    let channels = [Channel::Velocity, Channel::TrackingError];
    for tr in traces {
        let l = lstm.iter().find(|s| s.driver_id == tr.driver_id);
        let e = edm.iter().find(|s| s.driver_id == tr.driver_id);
        let mut series: Vec<(Channel, Source, Vec<f64>)> =
            vec![(channels[0], Source::Actual, tr.speeds()), (channels[1], Source::Actual, tr.errors())];
        if let Some(l) = l {
            series.push((channels[0], Source::Lstm, l.predicted_v.clone()));
            series.push((channels[1], Source::Lstm, l.predicted_err.clone()));
        }
        if let Some(e) = e {
            series.push((channels[0], Source::Edm, e.predicted_v.clone()));
            series.push((channels[1], Source::Edm, e.predicted_err.clone()));
        }
        for (ch, src, xs) in series {
            entries.push((tr.driver_id.clone(), ch, src, dist_summary(&xs, DEFAULT_BINS, ch.default_range())?));
            pooled.entry((ch as u8, src as u8)).or_default().extend(xs);
        }
    }
    for ch in channels {
        for src in [Source::Actual, Source::Lstm, Source::Edm] {
            if let Some(xs) = pooled.get(&(ch as u8, src as u8)) {
                entries.push(("all".into(), ch, src, dist_summary(xs, DEFAULT_BINS, ch.default_range())?));
            }
        }
    }
    Ok(entries)
}

/// Builds the comparison table from `eval/scores.csv`.
pub fn compare(cfg: &PipelineConfig) -> anyhow::Result<ComparisonReport> {
    let dir = out(cfg, EVAL_DIR);
    let path = dir.join("scores.csv");
    let text = read(&path)?;
    let parse = |e: csv::Error| Error::Parse {
        path: path.clone(),
        message: e.to_string(),
    };
    let rows: Vec<ScoreRow> = csv::Reader::from_reader(text.as_bytes())
        .deserialize()
        .collect::<Result<_, _>>()
        .map_err(parse)?;
    let mut table = Vec::new();
    for l in rows.iter().filter(|r| r.model == "lstm") {
        let Some(e) = rows.iter().find(|r| r.model == "edm" && r.driver_id == l.driver_id) else {
            log::warn!("{}: no EDM score; left out of the comparison", l.driver_id);
            continue;
        };
        table.push(ComparisonRow {
            driver_id: l.driver_id.clone(),
            rmse_v_lstm: l.rmse_v,
            rmse_v_edm: e.rmse_v,
            rmse_err_lstm: l.rmse_err,
            rmse_err_edm: e.rmse_err,
        });
    }
    let report = comparison_table(&table)?;
    write(&dir.join("comparison.txt"), &report.text)?;
    write(&dir.join("comparison.csv"), &report.csv)?;
    Ok(report)
}

/// The full pipeline from route to comparison table.
pub fn repro(cfg: &PipelineConfig) -> anyhow::Result<ComparisonReport> {
    cfg.validate()?;
    gen_route(cfg)?;
    gen_refs(cfg)?;
    gen_data(cfg)?;
    calibrate_all(cfg)?;
    train_model(cfg)?;
    evaluate(cfg)?;
    compare(cfg)
}
