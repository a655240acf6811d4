//! Genetic-algorithm calibration of [`EdmParams`] against a recorded drive.
//!
//! The fitness of a parameter set is the RMSE between the recorded speed and
//! an EDM replay that tracks the drive's own recorded advisory. The GA uses
//! tournament selection (size 3), uniform crossover, Gaussian mutation
//! clipped to the bounds, and elitism, so the best fitness per generation
//! never increases.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::edm::{simulate_edm_named, EdmParams, ReferenceProfile, ReferenceSource, SimConfig};
use crate::error::{Error, Result};
use crate::evalcmp::rmse;
use crate::scenario::RouteMap;
use crate::synthdrive::{DriveTrace, ParamBounds};

/// Added to the fitness for every second the replay falls short of the
/// recorded drive (m/s per s).
pub const MISSING_HORIZON_PENALTY: f64 = 0.1;

pub const TOURNAMENT_SIZE: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GaConfig {
    pub population: usize,
    pub generations: usize,
    pub crossover_rate: f64,
    /// Per-gene mutation probability.
    pub mutation_rate: f64,
    /// Mutation standard deviation as a fraction of each gene's range.
    pub mutation_sigma_frac: f64,
    pub elitism: usize,
    pub seed: u64,
    pub bounds: ParamBounds,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            population: 50,
            generations: 100,
            crossover_rate: 0.9,
            mutation_rate: 0.2,
            mutation_sigma_frac: 0.1,
            elitism: 2,
            seed: 0,
            bounds: ParamBounds::default(),
        }
    }
}

impl GaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population < 4 {
            return Err(Error::Config(format!(
                "population must be >= 4, got {}",
                self.population
            )));
        }
        if self.elitism >= self.population {
            return Err(Error::Config("elitism must be smaller than the population".into()));
        }
        for (name, r) in [
            ("crossover_rate", self.crossover_rate),
            ("mutation_rate", self.mutation_rate),
        ] {
            if !(0.0..=1.0).contains(&r) {
                return Err(Error::Config(format!("{name} must lie in [0, 1], got {r}")));
            }
        }
        if !(self.mutation_sigma_frac >= 0.0 && self.mutation_sigma_frac.is_finite()) {
            return Err(Error::Config("mutation_sigma_frac must be >= 0".into()));
        }
        self.bounds.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationResult {
    pub driver_id: String,
    pub best: EdmParams,
    pub best_fitness: f64,
    /// Best fitness after initialization and after each generation.
    pub history: Vec<f64>,
}

/// A recorded drive prepared for repeated EDM replays.
#[derive(Debug, Clone)]
pub struct ReplayTarget<'a> {
    trace: &'a DriveTrace,
    route: &'a RouteMap,
    advisory: ReferenceProfile,
    speeds: Vec<f64>,
    sim: SimConfig,
}

impl<'a> ReplayTarget<'a> {
    pub fn new(trace: &'a DriveTrace, route: &'a RouteMap) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::Domain(format!("trace {} is empty", trace.driver_id)));
        }
        let horizon = trace.duration();
        Ok(ReplayTarget {
            trace,
            route,
            advisory: trace.advisory_profile()?,
            speeds: trace.speeds(),
            sim: SimConfig {
                dt: trace.dt,
                v0: trace.features[0].v,
                horizon: Some(horizon),
                max_time: horizon + trace.dt,
                ..SimConfig::default()
            },
        })
    }

    /// Overrides the replay's time cap.
    pub fn with_max_time(mut self, max_time: f64) -> Self {
        self.sim.max_time = max_time;
        self
    }

    /// EDM replay tracking the recorded advisory on the trace's time grid.
    pub fn replay(&self, params: &EdmParams) -> Result<DriveTrace> {
        simulate_edm_named(
            &self.trace.driver_id,
            params,
            self.route,
            ReferenceSource::Profile(&self.advisory),
            &self.sim,
        )
    }

    /// Replay RMSE over the overlapping horizon, plus the missing-horizon
    /// penalty. Any simulation failure scores `+inf`.
    pub fn fitness(&self, params: &EdmParams) -> f64 {
        match self.replay(params) {
            Ok(replay) => {
                let n = replay.len().min(self.speeds.len());
                let predicted: Vec<f64> = replay.features[..n].iter().map(|f| f.v).collect();
                let missing = (self.speeds.len() - n) as f64 * self.trace.dt;
                match rmse(&self.speeds[..n], &predicted) {
                    Ok(r) => r + MISSING_HORIZON_PENALTY * missing,
                    Err(_) => f64::INFINITY,
                }
            }
            Err(_) => f64::INFINITY,
        }
    }
}

pub fn fitness(params: &EdmParams, target: &DriveTrace, route: &RouteMap) -> f64 {
    match ReplayTarget::new(target, route) {
        Ok(t) => t.fitness(params),
        Err(_) => f64::INFINITY,
    }
}

type Genome = [f64; 5];

fn tournament<'p>(pop: &'p [(Genome, f64)], rng: &mut impl Rng) -> &'p Genome {
    let mut best = &pop[rng.random_range(0..pop.len())];
    for _ in 1..TOURNAMENT_SIZE {
        let c = &pop[rng.random_range(0..pop.len())];
        if c.1 < best.1 {
            best = c;
        }
    }
    &best.0
}

fn rank(pop: &mut [(Genome, f64)]) {
    pop.sort_by(|a, b| a.1.total_cmp(&b.1));
}

pub fn calibrate(target: &DriveTrace, route: &RouteMap, cfg: &GaConfig) -> Result<CalibrationResult> {
    cfg.validate()?;
    let replay = ReplayTarget::new(target, route)?;
    let ranges = cfg.bounds.to_array();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let evaluate = |genomes: Vec<Genome>| -> Vec<(Genome, f64)> {
        genomes
            .into_par_iter()
            .map(|g| {
                let f = replay.fitness(&EdmParams::from_array(g));
                (g, f)
            })
            .collect()
    };

    let initial: Vec<Genome> = (0..cfg.population)
        .map(|_| cfg.bounds.sample(&mut rng).to_array())
        .collect();
    let mut pop = evaluate(initial);
    rank(&mut pop);
    let mut history = vec![pop[0].1];

    for _ in 0..cfg.generations {
        let mut children = Vec::with_capacity(cfg.population - cfg.elitism);
        while children.len() < cfg.population - cfg.elitism {
            let a = tournament(&pop, &mut rng);
            let b = tournament(&pop, &mut rng);
            let mut child = *a;
            if rng.random::<f64>() < cfg.crossover_rate {
                for (gene, other) in child.iter_mut().zip(b) {
                    if rng.random::<bool>() {
                        *gene = *other;
                    }
                }
            }
            for (gene, (lo, hi)) in child.iter_mut().zip(ranges) {
                if rng.random::<f64>() < cfg.mutation_rate {
                    let z: f64 = rng.sample(StandardNormal);
                    *gene = (*gene + z * cfg.mutation_sigma_frac * (hi - lo)).clamp(lo, hi);
                }
            }
            children.push(child);
        }
        let mut next: Vec<(Genome, f64)> = pop[..cfg.elitism].to_vec();
        next.extend(evaluate(children));
        rank(&mut next);
        pop = next;
        history.push(pop[0].1);
    }

    Ok(CalibrationResult {
        driver_id: target.driver_id.clone(),
        best: EdmParams::from_array(pop[0].0),
        best_fitness: pop[0].1,
        history,
    })
}

pub const SUMMARY_BINS: usize = 10;

/// Distribution of one calibrated parameter across drivers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSummary {
    pub name: String,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub lo: f64,
    pub hi: f64,
    pub counts: [usize; SUMMARY_BINS],
}

impl ParamSummary {
    pub fn bin_edges(&self) -> [f64; SUMMARY_BINS + 1] {
        std::array::from_fn(|i| self.lo + (self.hi - self.lo) * i as f64 / SUMMARY_BINS as f64)
    }
}

/// Mean, population standard deviation and a 10-bin histogram over the
/// bound range, for every parameter.
pub fn population_summary(results: &[CalibrationResult], bounds: &ParamBounds) -> Result<Vec<ParamSummary>> {
    if results.is_empty() {
        return Err(Error::Domain("no calibration results to summarize".into()));
    }
    let n = results.len() as f64;
    Ok(EdmParams::NAMES
        .iter()
        .zip(bounds.to_array())
        .enumerate()
        .map(|(i, (name, (lo, hi)))| {
            let xs: Vec<f64> = results.iter().map(|r| r.best.to_array()[i]).collect();
            let mean = xs.iter().sum::<f64>() / n;
            let std = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
            let mut counts = [0usize; SUMMARY_BINS];
            for x in &xs {
                let bin = if hi > lo {
                    (((x - lo) / (hi - lo)) * SUMMARY_BINS as f64).floor()
                } else {
                    0.0
                };
                counts[(bin.max(0.0) as usize).min(SUMMARY_BINS - 1)] += 1;
            }
            ParamSummary {
                name: name.to_string(),
                mean,
                std,
                lo,
                hi,
                counts,
            }
        })
        .collect())
}

/// Plot-ready rows: `parameter,bin_lo,bin_hi,count,mean,std`.
pub fn summary_csv(summaries: &[ParamSummary]) -> String {
    let mut out = String::from("parameter,bin_lo,bin_hi,count,mean,std\n");
    for s in summaries {
        let edges = s.bin_edges();
        for (b, count) in s.counts.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                s.name,
                edges[b],
                edges[b + 1],
                count,
                s.mean,
                s.std
            ));
        }
    }
    out
}
