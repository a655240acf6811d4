//! Shared inputs for the benchmarks.

use driver_model::edm::generate_reference;
use driver_model::seqnet::{LstmEdConfig, LstmEdModel};
use driver_model::synthdrive::{sample_driver_params, simulate_human, NoiseConfig, ParamBounds, N_FEATURES, N_OUTPUTS};
use driver_model::{DriveTrace, EdmParams, NormStats, ReferenceProfile, RouteMap, SimConfig, WindowConfig};

pub fn route() -> RouteMap {
    RouteMap::five_mile()
}

pub fn driver(seed: u64) -> EdmParams {
    sample_driver_params(seed, &ParamBounds::default()).expect("default bounds are valid")
}

pub fn advisory(route: &RouteMap) -> ReferenceProfile {
    generate_reference(&[driver(0)], route, 0.1)
        .expect("advisory drive finishes")
        .remove(0)
}

/// A full synthetic drive over the default route.
pub fn human_trace(route: &RouteMap, seed: u64) -> DriveTrace {
    let noise = NoiseConfig {
        seed,
        ..Default::default()
    };
    simulate_human("bench", &driver(seed + 1), &noise, &advisory(route), route, &SimConfig::default())
        .expect("synthetic drive finishes")
}

/// Model sized for the default 30 s / 5 s windows.
pub fn model(hidden: usize) -> LstmEdModel {
    let cfg = LstmEdConfig {
        n_e: hidden,
        n_d: hidden,
        ..Default::default()
    }
    .with_window(&WindowConfig::default());
    LstmEdModel::new(cfg, 0).expect("valid config")
}

/// First normalized window of a trace.
pub fn window(trace: &DriveTrace) -> (Vec<[f64; N_FEATURES]>, Vec<[f64; N_OUTPUTS]>) {
    let w = WindowConfig::default();
    let norm = NormStats::from_traces([trace]).expect("trace varies");
    let rows: Vec<[f64; N_FEATURES]> = trace.features.iter().map(|f| norm.normalize_row(f)).collect();
    let x = rows[..w.n_h()].to_vec();
    let y = rows[w.n_h()..w.span()].iter().map(|r| [r[0], r[5]]).collect();
    (x, y)
}
