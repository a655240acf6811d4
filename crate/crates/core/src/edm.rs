//! Enhanced Driver Model: a three-mode velocity ODE (accelerate, decelerate,
//! stop) driven by a reference speed, integrated with fixed-step RK4 along a
//! [`RouteMap`].

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scenario::{RouteMap, StopKind};
use crate::synthdrive::{DriveTrace, FeatureVector};

/// Floor on the distance to a stop inside the stop branch (m).
pub const STOP_DIST_FLOOR: f64 = 0.1;
/// Floor on the driver speed inside the decelerate branch (m/s).
pub const DECEL_SPEED_FLOOR: f64 = 1e-3;
/// Physical bound on the accelerate/decelerate-mode response (1 g).
pub const MAX_DECEL: f64 = 9.81;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EdmParams {
    /// Maximum acceleration (m/s²).
    pub a: f64,
    /// Maximum deceleration (m/s²).
    pub b: f64,
    /// Aggressiveness exponent.
    pub delta: f64,
    /// Offset below the reference speed (m/s).
    pub theta0: f64,
    /// Critical braking distance (m).
    pub s_brake: f64,
}

impl EdmParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("a", self.a),
            ("b", self.b),
            ("delta", self.delta),
            ("s_brake", self.s_brake),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {v}")));
            }
        }
        if !(self.theta0.is_finite() && self.theta0 >= 0.0) {
            return Err(Error::Config(format!(
                "theta0 must be finite and >= 0, got {}",
                self.theta0
            )));
        }
        Ok(())
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.a, self.b, self.delta, self.theta0, self.s_brake]
    }

    pub fn from_array(g: [f64; 5]) -> Self {
        EdmParams {
            a: g[0],
            b: g[1],
            delta: g[2],
            theta0: g[3],
            s_brake: g[4],
        }
    }

    pub const NAMES: [&'static str; 5] = ["a", "b", "delta", "theta0", "s_brake"];
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EdmState {
    pub v_d: f64,
    pub s_pos: f64,
    pub t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EdmMode {
    Accelerate,
    Decelerate,
    Stop,
}

pub fn edm_mode(params: &EdmParams, state: &EdmState, v_r: f64, dist_to_stop: Option<f64>) -> EdmMode {
    mode_for(params, state.v_d, v_r, dist_to_stop)
}

fn mode_for(params: &EdmParams, v_d: f64, v_r: f64, dist_to_stop: Option<f64>) -> EdmMode {
    match dist_to_stop {
        Some(d) if d < params.s_brake => EdmMode::Stop,
        _ if v_d < v_r => EdmMode::Accelerate,
        _ => EdmMode::Decelerate,
    }
}

/// Rate of the selected branch, or `None` when the reference is degenerate
/// (`v_r - theta0 <= 0`) in the accelerate/decelerate branches.
fn branch_rate(p: &EdmParams, mode: EdmMode, v_d: f64, v_r: f64, dist: Option<f64>) -> Option<f64> {
    match mode {
        EdmMode::Stop => {
            let d = dist.unwrap_or(STOP_DIST_FLOOR).max(STOP_DIST_FLOOR);
            let q = v_d * v_d / (2.0 * d);
            Some(-(q * q) / p.b)
        }
        EdmMode::Accelerate | EdmMode::Decelerate => {
            let target = v_r - p.theta0;
            if !(target > 0.0) {
                return None;
            }
            Some(if mode == EdmMode::Accelerate {
                p.a * (1.0 - (v_d / target).powf(p.delta))
            } else {
                -p.b * (1.0 - (target / v_d.max(DECEL_SPEED_FLOOR)).powf(p.delta))
            })
        }
    }
}

/// dv_d/dt of the selected operating mode.
pub fn edm_derivative(
    params: &EdmParams,
    state: &EdmState,
    v_r: f64,
    dist_to_stop: Option<f64>,
) -> Result<f64> {
    let mode = edm_mode(params, state, v_r, dist_to_stop);
    branch_rate(params, mode, state.v_d, v_r, dist_to_stop).ok_or(Error::DegenerateReference {
        v_r,
        theta0: params.theta0,
    })
}

/// Rate used by the integrator. Differs from [`edm_derivative`] only where
/// the model is undefined or unphysical: a reference at or below `theta0`
/// means "come to rest" and brakes at `b`, and the accelerate/decelerate
/// response is bounded below by one g.
fn integrator_rate(p: &EdmParams, v_d: f64, v_r: f64, dist: Option<f64>) -> (EdmMode, f64) {
    let v_d = v_d.max(0.0);
    let mode = mode_for(p, v_d, v_r, dist);
    let rate = match branch_rate(p, mode, v_d, v_r, dist) {
        Some(r) if mode == EdmMode::Stop => r,
        Some(r) => r.max(-MAX_DECEL),
        None if v_d > 0.0 => -p.b,
        None => 0.0,
    };
    (mode, rate)
}

/// Reference speed series sampled every `dt` starting at `t = 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProfile {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl ReferenceProfile {
    pub fn new(dt: f64, values: Vec<f64>) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::Config(format!("profile dt must be > 0, got {dt}")));
        }
        if values.is_empty() {
            return Err(Error::Config("reference profile is empty".into()));
        }
        if let Some(v) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::Config(format!("reference speed {v} is negative or not finite")));
        }
        Ok(ReferenceProfile { dt, values })
    }

    pub fn duration(&self) -> f64 {
        (self.values.len() - 1) as f64 * self.dt
    }

    /// Linear interpolation between samples; holds the first value before
    /// `t = 0` and the last value after the end.
    pub fn value_at(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return self.values[0];
        }
        let x = t / self.dt;
        let nearest = x.round();
        if (x - nearest).abs() < 1e-9 {
            return self.values[(nearest as usize).min(self.values.len() - 1)];
        }
        let i = x.floor() as usize;
        if i + 1 >= self.values.len() {
            return self.values[self.values.len() - 1];
        }
        let frac = x - i as f64;
        self.values[i] + (self.values[i + 1] - self.values[i]) * frac
    }

    pub fn samples(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.values
            .iter()
            .enumerate()
            .map(move |(k, &v)| (k as f64 * self.dt, v))
    }
}

#[derive(Debug, Clone, Copy)]
pub enum ReferenceSource<'a> {
    /// Track the posted limit at the vehicle's current position.
    SpeedLimit,
    /// Track a time-indexed advisory.
    Profile(&'a ReferenceProfile),
}

impl ReferenceSource<'_> {
    fn at(&self, route: &RouteMap, t: f64, s: f64) -> f64 {
        match self {
            ReferenceSource::SpeedLimit => route.limit_unchecked(s),
            ReferenceSource::Profile(p) => p.value_at(t),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SimConfig {
    pub dt: f64,
    pub v0: f64,
    /// Requested duration; the run ends normally once reached.
    pub horizon: Option<f64>,
    /// Safety cap; a run that neither finishes the route nor reaches the
    /// horizon within this time fails with [`Error::Timeout`].
    pub max_time: f64,
    /// Time spent at rest at a stop before it is cleared (s).
    pub stop_dwell: f64,
    /// Speed below which a vehicle in stop mode counts as stopped (m/s).
    pub v_stop_eps: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            dt: 0.1,
            v0: 0.0,
            horizon: None,
            max_time: 3600.0,
            stop_dwell: 2.0,
            v_stop_eps: 0.5,
        }
    }
}

impl SimConfig {
    pub fn with_dt(dt: f64) -> Self {
        SimConfig {
            dt,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Config(format!("dt must be > 0, got {}", self.dt)));
        }
        if !(self.v0.is_finite() && self.v0 >= 0.0) {
            return Err(Error::Config(format!("v0 must be >= 0, got {}", self.v0)));
        }
        if let Some(h) = self.horizon {
            if !(h.is_finite() && h >= 0.0) {
                return Err(Error::Config(format!("horizon must be >= 0, got {h}")));
            }
        }
        if !(self.max_time >= 0.0) {
            return Err(Error::Config("max_time must be >= 0".into()));
        }
        if !(self.stop_dwell >= 0.0 && self.v_stop_eps > 0.0) {
            return Err(Error::Config("stop_dwell must be >= 0 and v_stop_eps > 0".into()));
        }
        Ok(())
    }
}

/// Inputs to one drive that are not part of the driver model itself.
pub(crate) struct DriveInputs<'a, P, D, N>
where
    P: Fn(f64, f64) -> f64,
    D: Fn(f64, f64) -> f64,
    N: FnMut() -> f64,
{
    pub driver_id: &'a str,
    /// Reference the driver reacts to, as a function of `(t, s)`.
    pub perceived: P,
    /// Reference recorded in the trace's `v_ref` channel.
    pub displayed: D,
    /// Additive acceleration disturbance, drawn once per step and applied
    /// only outside stop mode.
    pub disturbance: N,
}

/// Shared integrator behind [`simulate_edm`] and the synthetic human driver.
pub(crate) fn drive<P, D, N>(
    params: &EdmParams,
    route: &RouteMap,
    cfg: &SimConfig,
    mut inputs: DriveInputs<'_, P, D, N>,
) -> Result<DriveTrace>
where
    P: Fn(f64, f64) -> f64,
    D: Fn(f64, f64) -> f64,
    N: FnMut() -> f64,
{
    params.validate()?;
    cfg.validate()?;
    if !(route.total_length() > 0.0) {
        return Err(Error::Config("route has zero length".into()));
    }

    let dt = cfg.dt;
    let stops = route.stops();
    let mut cleared = vec![false; stops.len()];
    let mut was_active = vec![false; stops.len()];
    let horizon_steps = cfg.horizon.map(|h| (h / dt).round() as usize);
    let cap_steps = (cfg.max_time / dt).round() as usize;

    let mut t = 0.0;
    let mut s = 0.0;
    let mut v = cfg.v0;
    // (stop index, time left) while standing at a stop
    let mut dwell: Option<(usize, f64)> = None;

    let mut positions = Vec::new();
    let mut speeds = Vec::new();
    let mut refs = Vec::new();
    let mut lights = Vec::new();
    let mut record = |t: f64, s: f64, v: f64| {
        let s = s.min(route.total_length());
        positions.push(s);
        speeds.push(v);
        refs.push((inputs.displayed)(t, s));
        lights.push(route.light_query_unchecked(s, t));
    };
    record(t, s, v);

    let mut step = 0usize;
    loop {
        if s >= route.total_length() || horizon_steps.is_some_and(|h| step >= h) {
            break;
        }
        if step >= cap_steps {
            let partial = assemble(inputs.driver_id, dt, positions, speeds, refs, lights);
            return Err(Error::Timeout {
                max_time: cfg.max_time,
                position: s,
                partial: Box::new(partial),
            });
        }

        // A signal that changes to yellow/red when the vehicle cannot stop
        // comfortably any more is driven through.
        for (i, stop) in stops.iter().enumerate() {
            if stop.kind != StopKind::SignalizedStop || cleared[i] || stop.position < s {
                continue;
            }
            let active = route.stop_active(i, t);
            if active && !was_active[i] && stop.position - s < v * v / (2.0 * params.b) {
                cleared[i] = true;
            }
            was_active[i] = active;
        }

        let noise = (inputs.disturbance)();

        if let Some((idx, left)) = dwell {
            v = 0.0;
            let left = left - dt;
            // a signalized stop also waits for the light to release it
            let held = stops[idx].kind == StopKind::SignalizedStop && route.stop_active(idx, t + dt);
            if left <= 1e-9 && !held {
                cleared[idx] = true;
                dwell = None;
            } else {
                dwell = Some((idx, left.max(0.0)));
            }
        } else {
            let pending = route.next_stop_where(s, t, |i| !cleared[i]);
            let stop_pos = pending.map(|(i, _)| stops[i].position);
            let rate = |tt: f64, ss: f64, vv: f64| -> (EdmMode, f64) {
                let v_r = (inputs.perceived)(tt, ss);
                let dist = stop_pos.map(|p| p - ss);
                integrator_rate(params, vv, v_r, dist)
            };
            let (mode0, k1) = rate(t, s, v);
            let extra = if mode0 == EdmMode::Stop { 0.0 } else { noise };
            let k1 = k1 + extra;
            let h = dt;
            let v1 = v.max(0.0);
            let v2 = (v + 0.5 * h * k1).max(0.0);
            let k2 = rate(t + 0.5 * h, s + 0.5 * h * v1, v2).1 + extra;
            let v3 = (v + 0.5 * h * k2).max(0.0);
            let k3 = rate(t + 0.5 * h, s + 0.5 * h * v2, v3).1 + extra;
            let v4 = (v + h * k3).max(0.0);
            let k4 = rate(t + h, s + h * v3, v4).1 + extra;

            let v_next = (v + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)).max(0.0);
            let ds = h / 6.0 * (v1 + 2.0 * v2 + 2.0 * v3 + v4);
            s += ds;
            v = v_next;
            if !v.is_finite() || !s.is_finite() {
                return Err(Error::Domain(format!("non-finite state at t = {t}")));
            }

            if let Some((idx, _)) = pending {
                let dist = stops[idx].position - s;
                let in_stop_mode = dist < params.s_brake;
                // The exact stop branch only reaches the line at rest; a step
                // that crosses it with speed left over (the distance floor
                // weakens the last metres of braking) is treated as arrival.
                let crossed = dist <= 0.0;
                if in_stop_mode && ((v < cfg.v_stop_eps && dist > -cfg.v_stop_eps) || crossed) {
                    // a stiff stop may halt a little short; the vehicle is
                    // placed on the line
                    if dist > 1.0 {
                        log::debug!("{}: halted {dist:.2} m short of stop {idx}", inputs.driver_id);
                    }
                    if crossed && v >= cfg.v_stop_eps {
                        log::debug!("{}: crossed stop {idx} at {v:.2} m/s", inputs.driver_id);
                    }
                    s = s.max(stops[idx].position);
                    v = 0.0;
                    dwell = Some((idx, cfg.stop_dwell));
                }
            }
        }

        step += 1;
        t = step as f64 * dt;
        record(t, s, v);
    }

    Ok(assemble(inputs.driver_id, dt, positions, speeds, refs, lights))
}

fn assemble(
    driver_id: &str,
    dt: f64,
    positions: Vec<f64>,
    speeds: Vec<f64>,
    refs: Vec<f64>,
    lights: Vec<crate::scenario::PhaseQuery>,
) -> DriveTrace {
    let n = speeds.len();
    let features = (0..n)
        .map(|k| {
            // realized acceleration over [t_k, t_k+1]; the last sample repeats
            // its predecessor
            let acc = if k + 1 < n {
                (speeds[k + 1] - speeds[k]) / dt
            } else if n >= 2 {
                (speeds[n - 1] - speeds[n - 2]) / dt
            } else {
                0.0
            };
            FeatureVector {
                v: speeds[k],
                acc,
                d_tl: lights[k].distance_to_light,
                v_ref: refs[k],
                tau_sp: lights[k].phase_code,
                err: refs[k] - speeds[k],
            }
        })
        .collect();
    DriveTrace {
        driver_id: driver_id.to_string(),
        dt,
        positions,
        features,
    }
}

/// Deterministic EDM drive over the route.
pub fn simulate_edm(
    params: &EdmParams,
    route: &RouteMap,
    source: ReferenceSource<'_>,
    cfg: &SimConfig,
) -> Result<DriveTrace> {
    simulate_edm_named("edm", params, route, source, cfg)
}

pub fn simulate_edm_named(
    driver_id: &str,
    params: &EdmParams,
    route: &RouteMap,
    source: ReferenceSource<'_>,
    cfg: &SimConfig,
) -> Result<DriveTrace> {
    let reference = |t: f64, s: f64| source.at(route, t, s);
    drive(
        params,
        route,
        cfg,
        DriveInputs {
            driver_id,
            perceived: reference,
            displayed: reference,
            disturbance: || 0.0,
        },
    )
}

/// One advisory profile per calibration, each an EDM drive that tracks the
/// posted limits from standstill.
pub fn generate_reference(
    calibrations: &[EdmParams],
    route: &RouteMap,
    dt: f64,
) -> Result<Vec<ReferenceProfile>> {
    if calibrations.is_empty() {
        return Err(Error::Config("need at least one calibration".into()));
    }
    let cfg = SimConfig::with_dt(dt);
    calibrations
        .iter()
        .map(|p| {
            let trace = simulate_edm(p, route, ReferenceSource::SpeedLimit, &cfg)?;
            ReferenceProfile::new(dt, trace.speeds())
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{LimitZone, StopPoint};

    fn params() -> EdmParams {
        EdmParams {
            a: 1.5,
            b: 2.0,
            delta: 4.0,
            theta0: 0.0,
            s_brake: 50.0,
        }
    }

    fn state(v_d: f64) -> EdmState {
        EdmState {
            v_d,
            s_pos: 0.0,
            t: 0.0,
        }
    }

    #[test]
    fn mode_selection() {
        let p = params();
        assert_eq!(edm_mode(&p, &state(5.0), 15.0, None), EdmMode::Accelerate);
        assert_eq!(edm_mode(&p, &state(15.0), 15.0, None), EdmMode::Decelerate);
        assert_eq!(edm_mode(&p, &state(10.0), 15.0, Some(20.0)), EdmMode::Stop);
        assert_eq!(edm_mode(&p, &state(10.0), 15.0, Some(50.0)), EdmMode::Accelerate);
    }

    #[test]
    fn derivative_examples() {
        let p = params();
        assert_eq!(edm_derivative(&p, &state(0.0), 20.0, None).unwrap(), 1.5);

        let p1 = EdmParams { theta0: 1.0, ..p };
        assert_eq!(edm_derivative(&p1, &state(14.0), 15.0, None).unwrap(), 0.0);

        // -(1/2) * (100/50)^2
        let r = edm_derivative(&p, &state(10.0), 15.0, Some(25.0)).unwrap();
        assert!((r + 2.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_reference() {
        let p = EdmParams { theta0: 2.0, ..params() };
        assert!(matches!(
            edm_derivative(&p, &state(1.0), 2.0, None),
            Err(Error::DegenerateReference { .. })
        ));
        // stop branch does not need a valid reference
        assert!(edm_derivative(&p, &state(1.0), 2.0, Some(10.0)).is_ok());
    }

    #[test]
    fn decelerate_guard_at_zero_speed() {
        let p = params();
        let r = edm_derivative(&p, &state(0.0), 0.5, None);
        // v_d = 0 < v_r takes the accelerate branch
        assert_eq!(r.unwrap(), 1.5);
        let r = edm_derivative(&p, &state(0.0), 0.0, None);
        assert!(r.is_err());
    }

    #[test]
    fn stop_branch_floor() {
        let p = params();
        let at_floor = edm_derivative(&p, &state(1.0), 15.0, Some(STOP_DIST_FLOOR)).unwrap();
        let below = edm_derivative(&p, &state(1.0), 15.0, Some(0.0)).unwrap();
        assert_eq!(at_floor, below);
        assert!(below.is_finite());
    }

    #[test]
    fn zero_horizon_gives_single_sample() {
        let route = RouteMap::open_road(1000.0, 20.0).unwrap();
        let cfg = SimConfig {
            horizon: Some(0.0),
            v0: 3.0,
            ..Default::default()
        };
        let tr = simulate_edm(&params(), &route, ReferenceSource::SpeedLimit, &cfg).unwrap();
        assert_eq!(tr.len(), 1);
        assert_eq!(tr.features[0].v, 3.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let route = RouteMap::open_road(1000.0, 20.0).unwrap();
        let bad_dt = SimConfig::with_dt(0.0);
        assert!(simulate_edm(&params(), &route, ReferenceSource::SpeedLimit, &bad_dt).is_err());
        let empty = RouteMap::open_road(0.0, 20.0).unwrap();
        assert!(simulate_edm(&params(), &empty, ReferenceSource::SpeedLimit, &SimConfig::default()).is_err());
    }

    #[test]
    fn timeout_carries_partial_trace() {
        let route = RouteMap::open_road(10_000.0, 20.0).unwrap();
        let cfg = SimConfig {
            max_time: 10.0,
            ..Default::default()
        };
        match simulate_edm(&params(), &route, ReferenceSource::SpeedLimit, &cfg) {
            Err(Error::Timeout { partial, .. }) => assert_eq!(partial.len(), 101),
            other => panic!("expected timeout, got {other:?}"),
        }
    }

    #[test]
    fn stops_at_stop_sign_and_dwells() {
        let route = RouteMap::new(
            1000.0,
            vec![LimitZone {
                start: 0.0,
                limit: 15.0,
            }],
            vec![StopPoint {
                position: 500.0,
                kind: StopKind::StopSign,
            }],
            vec![],
        )
        .unwrap();
        // the second set used to creep over the line at 0.56 m/s
        let creeper = EdmParams {
            a: 1.896,
            b: 3.442,
            delta: 3.296,
            theta0: 1.876,
            s_brake: 20.45,
        };
        for p in [params(), creeper] {
            let tr = simulate_edm(&p, &route, ReferenceSource::SpeedLimit, &SimConfig::default()).unwrap();
            let k = tr.positions.iter().position(|&s| s >= 500.0).unwrap();
            assert!(tr.features[k].v <= 0.5, "v at stop = {}", tr.features[k].v);
            // dwell of 2 s at rest
            let resting = tr.features[k..].iter().take_while(|f| f.v == 0.0).count();
            assert!(resting >= 20);
            assert!(*tr.positions.last().unwrap() >= 1000.0 - 1e-9);
        }
    }

    #[test]
    fn profile_interpolation() {
        let p = ReferenceProfile::new(1.0, vec![0.0, 10.0, 20.0]).unwrap();
        assert_eq!(p.value_at(-1.0), 0.0);
        assert_eq!(p.value_at(0.5), 5.0);
        assert_eq!(p.value_at(1.0), 10.0);
        assert_eq!(p.value_at(7.0), 20.0);
        assert_eq!(p.duration(), 2.0);
        assert!(ReferenceProfile::new(1.0, vec![]).is_err());
        assert!(ReferenceProfile::new(1.0, vec![-1.0]).is_err());
    }

    #[test]
    fn reference_generation() {
        let route = RouteMap::five_mile();
        let cals = [
            params(),
            EdmParams {
                a: 2.2,
                delta: 2.0,
                theta0: 1.0,
                ..params()
            },
        ];
        let refs = generate_reference(&cals, &route, 0.1).unwrap();
        assert_eq!(refs.len(), 2);
        assert!(refs.iter().all(|r| r.dt == 0.1));
        let max = refs[0].values.iter().cloned().fold(0.0, f64::max);
        assert!(max <= route.max_limit() + 1e-9);
        let again = generate_reference(&cals[..1], &route, 0.1).unwrap();
        assert_eq!(again[0], refs[0]);
        assert!(generate_reference(&[], &route, 0.1).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn any_params() -> impl Strategy<Value = EdmParams> {
            (0.8f64..2.5, 1.0f64..3.5, 1.0f64..6.0, 0.0f64..2.0, 20.0f64..80.0).prop_map(
                |(a, b, delta, theta0, s_brake)| EdmParams {
                    a,
                    b,
                    delta,
                    theta0,
                    s_brake,
                },
            )
        }

        proptest! {
            #[test]
            fn accelerate_branch_sign(p in any_params(), v_r in 5.0f64..30.0, frac in 0.0f64..1.0) {
                let target = v_r - p.theta0;
                let v_d = frac * v_r;
                let r = edm_derivative(&p, &state(v_d), v_r, None).unwrap();
                if v_d < target {
                    prop_assert!(r > 0.0);
                } else if v_d > target {
                    prop_assert!(r < 0.0);
                }
            }

            #[test]
            fn decelerate_branch_sign(p in any_params(), v_r in 5.0f64..30.0, extra in 0.0f64..20.0) {
                let r = edm_derivative(&p, &state(v_r + extra), v_r, None).unwrap();
                prop_assert!(r <= 0.0);
            }

            #[test]
            fn stop_magnitude_decreases_with_distance(p in any_params(), v in 0.5f64..25.0, d in 0.2f64..19.0, dd in 0.01f64..1.0) {
                let near = edm_derivative(&p, &state(v), 15.0, Some(d)).unwrap();
                let far = edm_derivative(&p, &state(v), 15.0, Some(d + dd)).unwrap();
                prop_assert!(near.abs() > far.abs());
            }
        }
    }
}
