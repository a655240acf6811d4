use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::edm::{drive, DriveInputs, EdmParams, ReferenceProfile, SimConfig};
use crate::error::{Error, Result};
use crate::scenario::RouteMap;
use crate::synthdrive::DriveTrace;

/// Inclusive `(min, max)` range for each driver parameter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ParamBounds {
    pub a: (f64, f64),
    pub b: (f64, f64),
    pub delta: (f64, f64),
    pub theta0: (f64, f64),
    pub s_brake: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        ParamBounds {
            a: (0.8, 2.5),
            b: (1.0, 3.5),
            delta: (1.0, 6.0),
            theta0: (0.0, 2.0),
            s_brake: (20.0, 80.0),
        }
    }
}

impl ParamBounds {
    pub fn to_array(&self) -> [(f64, f64); 5] {
        [self.a, self.b, self.delta, self.theta0, self.s_brake]
    }

    pub fn from_array(r: [(f64, f64); 5]) -> Self {
        ParamBounds {
            a: r[0],
            b: r[1],
            delta: r[2],
            theta0: r[3],
            s_brake: r[4],
        }
    }

    pub fn point(p: &EdmParams) -> Self {
        let g = p.to_array();
        Self::from_array(g.map(|x| (x, x)))
    }

    pub fn validate(&self) -> Result<()> {
        for (name, (lo, hi)) in EdmParams::NAMES.iter().zip(self.to_array()) {
            if !(lo.is_finite() && hi.is_finite()) {
                return Err(Error::Config(format!("bounds for {name} must be finite")));
            }
            if lo > hi {
                return Err(Error::Config(format!("inverted bounds for {name}: [{lo}, {hi}]")));
            }
        }
        // every point inside the box must be a valid parameter set
        EdmParams::from_array(self.to_array().map(|(lo, _)| lo)).validate()
    }

    pub fn clamp(&self, g: [f64; 5]) -> [f64; 5] {
        let r = self.to_array();
        std::array::from_fn(|i| g[i].clamp(r[i].0, r[i].1))
    }

    pub fn contains(&self, p: &EdmParams) -> bool {
        p.to_array()
            .iter()
            .zip(self.to_array())
            .all(|(x, (lo, hi))| (lo..=hi).contains(x))
    }

    /// Uniform draw inside the box.
    pub fn sample(&self, rng: &mut impl Rng) -> EdmParams {
        EdmParams::from_array(
            self.to_array()
                .map(|(lo, hi)| lo + (hi - lo) * rng.random::<f64>()),
        )
    }
}

pub fn sample_driver_params(seed: u64, bounds: &ParamBounds) -> Result<EdmParams> {
    bounds.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(bounds.sample(&mut rng))
}

/// How a synthetic driver departs from the advisory: a correlated
/// acceleration disturbance plus a fixed reaction lag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Stationary standard deviation of the disturbance (m/s²).
    pub sigma_a: f64,
    /// Correlation time of the disturbance (s).
    pub tau_noise: f64,
    /// Lag between the displayed advisory and the driver's response (s).
    pub perception_delay: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        NoiseConfig {
            sigma_a: 0.5,
            tau_noise: 6.0,
            perception_delay: 0.8,
            seed: 0,
        }
    }
}

impl NoiseConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.sigma_a.is_finite() && self.sigma_a >= 0.0) {
            return Err(Error::Config(format!("sigma_a must be >= 0, got {}", self.sigma_a)));
        }
        if !(self.tau_noise.is_finite() && self.tau_noise > 0.0) {
            return Err(Error::Config(format!("tau_noise must be > 0, got {}", self.tau_noise)));
        }
        if !(self.perception_delay.is_finite() && self.perception_delay >= 0.0) {
            return Err(Error::Config(format!(
                "perception_delay must be >= 0, got {}",
                self.perception_delay
            )));
        }
        Ok(())
    }
}

/// Exact discretization of an Ornstein-Uhlenbeck process, started from its
/// stationary distribution.
struct OuNoise {
    rng: ChaCha8Rng,
    rho: f64,
    kick: f64,
    value: f64,
}

impl OuNoise {
    fn new(cfg: &NoiseConfig, dt: f64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let rho = (-dt / cfg.tau_noise).exp();
        let z: f64 = rng.sample(StandardNormal);
        OuNoise {
            rng,
            rho,
            kick: cfg.sigma_a * (1.0 - rho * rho).sqrt(),
            value: cfg.sigma_a * z,
        }
    }

    fn next(&mut self) -> f64 {
        let out = self.value;
        let z: f64 = self.rng.sample(StandardNormal);
        self.value = self.rho * self.value + self.kick * z;
        out
    }
}

/// A synthetic human drive: the EDM reacting to a delayed advisory under a
/// correlated acceleration disturbance. The recorded `v_ref` and `err`
/// channels use the advisory as displayed, without the delay.
pub fn simulate_human(
    driver_id: &str,
    params: &EdmParams,
    noise: &NoiseConfig,
    advisory: &ReferenceProfile,
    route: &RouteMap,
    cfg: &SimConfig,
) -> Result<DriveTrace> {
    noise.validate()?;
    if !(cfg.dt > 0.0) {
        return Err(Error::Config(format!("dt must be > 0, got {}", cfg.dt)));
    }
    let ratio = if cfg.dt >= advisory.dt {
        cfg.dt / advisory.dt
    } else {
        advisory.dt / cfg.dt
    };
    if (ratio - ratio.round()).abs() > 1e-6 {
        return Err(Error::Config(format!(
            "advisory dt {} and simulation dt {} are not in integer ratio",
            advisory.dt, cfg.dt
        )));
    }

    let delay = noise.perception_delay;
    let mut ou = (noise.sigma_a > 0.0).then(|| OuNoise::new(noise, cfg.dt));
    let trace = drive(
        params,
        route,
        cfg,
        DriveInputs {
            driver_id,
            perceived: |t: f64, _s: f64| advisory.value_at(t - delay),
            displayed: |t: f64, _s: f64| advisory.value_at(t),
            disturbance: move || ou.as_mut().map_or(0.0, OuNoise::next),
        },
    )?;
    if trace.duration() > advisory.duration() + 1e-9 {
        log::debug!(
            "{driver_id}: drive lasts {:.1} s but the advisory ends at {:.1} s; holding its last value",
            trace.duration(),
            advisory.duration()
        );
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::edm::{generate_reference, simulate_edm_named, ReferenceSource};

    fn p() -> EdmParams {
        EdmParams {
            a: 1.6,
            b: 2.4,
            delta: 3.0,
            theta0: 0.7,
            s_brake: 45.0,
        }
    }

    #[test]
    fn param_sampling() {
        let b = ParamBounds::default();
        let x = sample_driver_params(3, &b).unwrap();
        let y = sample_driver_params(3, &b).unwrap();
        assert_eq!(x, y);
        assert!(b.contains(&x));
        for seed in 0..200 {
            assert!(sample_driver_params(seed, &b).unwrap().theta0 <= 2.0);
        }
        let point = ParamBounds::point(&p());
        assert_eq!(sample_driver_params(9, &point).unwrap(), p());
        let inverted = ParamBounds {
            a: (2.0, 1.0),
            ..Default::default()
        };
        assert!(matches!(sample_driver_params(1, &inverted), Err(Error::Config(_))));
    }

    #[test]
    fn zero_noise_matches_deterministic_edm() {
        let route = RouteMap::five_mile();
        let adv = generate_reference(&[p()], &route, 0.1).unwrap().remove(0);
        let quiet = NoiseConfig {
            sigma_a: 0.0,
            perception_delay: 0.0,
            ..Default::default()
        };
        let params = EdmParams { a: 2.0, ..p() };
        let cfg = SimConfig::default();
        let human = simulate_human("h", &params, &quiet, &adv, &route, &cfg).unwrap();
        let edm = simulate_edm_named("h", &params, &route, ReferenceSource::Profile(&adv), &cfg).unwrap();
        assert_eq!(human, edm);
    }

    #[test]
    fn seeded_reproducibility() {
        let route = RouteMap::five_mile();
        let adv = generate_reference(&[p()], &route, 0.1).unwrap().remove(0);
        let noise = NoiseConfig {
            seed: 11,
            ..Default::default()
        };
        let cfg = SimConfig::default();
        let a = simulate_human("h", &p(), &noise, &adv, &route, &cfg).unwrap();
        let b = simulate_human("h", &p(), &noise, &adv, &route, &cfg).unwrap();
        assert_eq!(a, b);
        let other = NoiseConfig { seed: 12, ..noise };
        let c = simulate_human("h", &p(), &other, &adv, &route, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn noisy_driver_deviates_from_advisory() {
        let route = RouteMap::open_road(3000.0, 15.0).unwrap();
        let adv = ReferenceProfile::new(0.1, vec![15.0; 2000]).unwrap();
        let params = EdmParams { theta0: 0.0, ..p() };
        let cfg = SimConfig::default();
        let mut mean_abs = Vec::new();
        for seed in 0..20 {
            let noise = NoiseConfig {
                sigma_a: 0.3,
                seed,
                ..Default::default()
            };
            let tr = simulate_human("h", &params, &noise, &adv, &route, &cfg).unwrap();
            // skip the launch from rest
            let errs: Vec<f64> = tr.errors().into_iter().skip(300).collect();
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / errs.len() as f64;
            assert!(var > 0.0);
            mean_abs.push(errs.iter().map(|e| e.abs()).sum::<f64>() / errs.len() as f64);
            assert!(tr.kinematic_residual() <= 0.05);
            assert!(tr.error_residual() <= 1e-9);
        }
        assert!(mean_abs.iter().all(|m| *m > 0.0));
    }

    #[test]
    fn rejects_incompatible_dt() {
        let route = RouteMap::open_road(500.0, 15.0).unwrap();
        let adv = ReferenceProfile::new(0.15, vec![15.0; 100]).unwrap();
        let r = simulate_human("h", &p(), &NoiseConfig::default(), &adv, &route, &SimConfig::default());
        assert!(matches!(r, Err(Error::Config(_))));
    }
}
