//! Route description: speed-limit zones, mandatory stops and signalized
//! intersections, plus the position/time queries both driver models use.
//!
//! A [`RouteMap`] is immutable once built and every query is a pure function
//! of `(position, time)`, so a single route can be shared between threads.
//!
//! Route files are TOML documents:
//!
//! ```toml
//! total_length = 8047.0
//! zones = [{ start = 0.0, limit = 11.176 }, { start = 800.0, limit = 15.646 }]
//!
//! [[stops]]
//! position = 1341.0
//! kind = "stop_sign"          # or "signalized_stop"
//!
//! [[lights]]
//! position = 3000.0
//! offset = 0.0
//! cycle = [
//!     { phase = "green", duration = 30.0 },
//!     { phase = "yellow", duration = 4.0 },
//!     { phase = "red", duration = 26.0 },
//! ]
//! ```
//!
//! A `signalized_stop` must sit within [`LIGHT_LINK_TOLERANCE`] of a light;
//! it is only active while that light shows yellow or red.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metres per second in one mile per hour.
pub const MPH: f64 = 0.44704;

/// Five miles, in metres.
pub const DEFAULT_ROUTE_LENGTH: f64 = 8047.0;

/// Maximum distance between a signalized stop and the light that controls it.
pub const LIGHT_LINK_TOLERANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopKind {
    StopSign,
    SignalizedStop,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StopPoint {
    pub position: f64,
    pub kind: StopKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Green,
    Yellow,
    Red,
}

impl Phase {
    /// Ordinal encoding used as the `tau_sp` feature.
    pub fn code(self) -> f64 {
        match self {
            Phase::Green => 0.0,
            Phase::Yellow => 0.5,
            Phase::Red => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub duration: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrafficLight {
    pub position: f64,
    pub cycle: Vec<PhaseSpan>,
    /// Shifts the schedule: the phase at time `t` is the one active at
    /// `(t + offset) mod cycle_total` into the cycle.
    #[serde(default)]
    pub offset: f64,
}

impl TrafficLight {
    pub fn cycle_total(&self) -> f64 {
        self.cycle.iter().map(|p| p.duration).sum()
    }

    pub fn phase_at(&self, t: f64) -> Phase {
        let total = self.cycle_total();
        let local = (t + self.offset).rem_euclid(total);
        let mut end = 0.0;
        for span in &self.cycle {
            end += span.duration;
            if local < end {
                return span.phase;
            }
        }
        // local == total can only come from rounding in rem_euclid
        self.cycle[self.cycle.len() - 1].phase
    }

    fn validate(&self) -> Result<()> {
        if self.cycle.is_empty() {
            return Err(Error::Config(format!(
                "light at {} m has an empty cycle",
                self.position
            )));
        }
        if let Some(span) = self
            .cycle
            .iter()
            .find(|p| !(p.duration.is_finite() && p.duration > 0.0))
        {
            return Err(Error::Config(format!(
                "light at {} m has non-positive phase duration {}",
                self.position, span.duration
            )));
        }
        if !self.offset.is_finite() {
            return Err(Error::Config("light offset must be finite".into()));
        }
        Ok(())
    }
}

/// Distance to the next downstream light and the phase code it shows.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseQuery {
    pub distance_to_light: f64,
    pub phase_code: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LimitZone {
    pub start: f64,
    pub limit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RouteFile", into = "RouteFile")]
pub struct RouteMap {
    total_length: f64,
    zones: Vec<LimitZone>,
    stops: Vec<StopPoint>,
    lights: Vec<TrafficLight>,
    /// For each stop, the light controlling it (signalized stops only).
    stop_lights: Vec<Option<usize>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct RouteFile {
    total_length: f64,
    zones: Vec<LimitZone>,
    #[serde(default)]
    stops: Vec<StopPoint>,
    #[serde(default)]
    lights: Vec<TrafficLight>,
}

impl TryFrom<RouteFile> for RouteMap {
    type Error = Error;

    fn try_from(f: RouteFile) -> Result<Self> {
        RouteMap::new(f.total_length, f.zones, f.stops, f.lights)
    }
}

impl From<RouteMap> for RouteFile {
    fn from(r: RouteMap) -> Self {
        RouteFile {
            total_length: r.total_length,
            zones: r.zones,
            stops: r.stops,
            lights: r.lights,
        }
    }
}

impl RouteMap {
    /// Builds a route, sorting stops and lights by position and checking
    /// every structural invariant.
    pub fn new(
        total_length: f64,
        zones: Vec<LimitZone>,
        mut stops: Vec<StopPoint>,
        mut lights: Vec<TrafficLight>,
    ) -> Result<Self> {
        if !(total_length.is_finite() && total_length >= 0.0) {
            return Err(Error::Config(format!(
                "total_length must be finite and non-negative, got {total_length}"
            )));
        }
        match zones.first() {
            None => return Err(Error::Config("route needs at least one speed zone".into())),
            Some(z) if z.start != 0.0 => {
                return Err(Error::Config(format!(
                    "first speed zone must start at 0, starts at {}",
                    z.start
                )))
            }
            _ => {}
        }
        for pair in zones.windows(2) {
            if !(pair[1].start > pair[0].start) {
                return Err(Error::Config(format!(
                    "zone starts must be strictly increasing ({} then {})",
                    pair[0].start, pair[1].start
                )));
            }
        }
        if let Some(z) = zones
            .iter()
            .find(|z| !(z.limit.is_finite() && z.limit > 0.0) || z.start > total_length)
        {
            return Err(Error::Config(format!(
                "invalid zone (start {}, limit {})",
                z.start, z.limit
            )));
        }

        let in_route = |p: f64| p.is_finite() && (0.0..=total_length).contains(&p);
        if let Some(s) = stops.iter().find(|s| !in_route(s.position)) {
            return Err(Error::Config(format!(
                "stop at {} m lies outside [0, {total_length}]",
                s.position
            )));
        }
        if let Some(l) = lights.iter().find(|l| !in_route(l.position)) {
            return Err(Error::Config(format!(
                "light at {} m lies outside [0, {total_length}]",
                l.position
            )));
        }
        for light in &lights {
            light.validate()?;
        }

        stops.sort_by(|a, b| a.position.total_cmp(&b.position));
        lights.sort_by(|a, b| a.position.total_cmp(&b.position));

        let stop_lights = stops
            .iter()
            .map(|stop| match stop.kind {
                StopKind::StopSign => Ok(None),
                StopKind::SignalizedStop => lights
                    .iter()
                    .position(|l| (l.position - stop.position).abs() <= LIGHT_LINK_TOLERANCE)
                    .map(Some)
                    .ok_or_else(|| {
                        Error::Config(format!(
                            "signalized stop at {} m has no light within {LIGHT_LINK_TOLERANCE} m",
                            stop.position
                        ))
                    }),
            })
            .collect::<Result<Vec<_>>>()?;

        Ok(RouteMap {
            total_length,
            zones,
            stops,
            lights,
            stop_lights,
        })
    }

    /// A 5 mile route with five stop signs spread evenly along it, two
    /// signalized intersections, and limits alternating between the 25, 35
    /// and 50 mph bands.
    pub fn five_mile() -> Self {
        let zone = |start: f64, mph: f64| LimitZone {
            start,
            limit: mph * MPH,
        };
        let zones = vec![
            zone(0.0, 25.0),
            zone(800.0, 35.0),
            zone(1800.0, 50.0),
            zone(3400.0, 35.0),
            zone(4300.0, 50.0),
            zone(6000.0, 35.0),
            zone(7200.0, 25.0),
        ];
        let mut stops: Vec<StopPoint> = (1..=5)
            .map(|k| StopPoint {
                position: (DEFAULT_ROUTE_LENGTH * k as f64 / 6.0).round(),
                kind: StopKind::StopSign,
            })
            .collect();
        let cycle = vec![
            PhaseSpan {
                phase: Phase::Green,
                duration: 30.0,
            },
            PhaseSpan {
                phase: Phase::Yellow,
                duration: 4.0,
            },
            PhaseSpan {
                phase: Phase::Red,
                duration: 26.0,
            },
        ];
        let lights = vec![
            TrafficLight {
                position: 3000.0,
                cycle: cycle.clone(),
                offset: 0.0,
            },
            TrafficLight {
                position: 5900.0,
                cycle,
                offset: 17.0,
            },
        ];
        stops.extend(lights.iter().map(|l| StopPoint {
            position: l.position,
            kind: StopKind::SignalizedStop,
        }));
        RouteMap::new(DEFAULT_ROUTE_LENGTH, zones, stops, lights)
            .expect("default route is well formed")
    }

    /// A route with one speed zone and nothing else on it.
    pub fn open_road(total_length: f64, limit: f64) -> Result<Self> {
        RouteMap::new(
            total_length,
            vec![LimitZone { start: 0.0, limit }],
            Vec::new(),
            Vec::new(),
        )
    }

    pub fn total_length(&self) -> f64 {
        self.total_length
    }

    pub fn zones(&self) -> &[LimitZone] {
        &self.zones
    }

    pub fn stops(&self) -> &[StopPoint] {
        &self.stops
    }

    pub fn lights(&self) -> &[TrafficLight] {
        &self.lights
    }

    /// The light a stop is tied to, if it is a signalized stop.
    pub fn stop_light(&self, stop_index: usize) -> Option<&TrafficLight> {
        self.stop_lights
            .get(stop_index)
            .copied()
            .flatten()
            .map(|i| &self.lights[i])
    }

    pub fn max_limit(&self) -> f64 {
        self.zones.iter().map(|z| z.limit).fold(0.0, f64::max)
    }

    fn check_position(&self, s: f64) -> Result<()> {
        if s.is_finite() && (0.0..=self.total_length).contains(&s) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "position {s} outside route [0, {}]",
                self.total_length
            )))
        }
    }

    pub fn speed_limit_at(&self, s: f64) -> Result<f64> {
        self.check_position(s)?;
        Ok(self.limit_unchecked(s))
    }

    /// Zone lookup without the range check; positions past the end of the
    /// route get the last zone's limit.
    pub(crate) fn limit_unchecked(&self, s: f64) -> f64 {
        let idx = self.zones.partition_point(|z| z.start <= s);
        self.zones[idx.saturating_sub(1)].limit
    }

    /// Whether stop `index` is in force at time `t`.
    pub fn stop_active(&self, index: usize, t: f64) -> bool {
        match self.stop_light(index) {
            None => true,
            Some(light) => light.phase_at(t) != Phase::Green,
        }
    }

    /// The nearest active stop at or downstream of `s`. A vehicle standing
    /// exactly on a stop line still sees that stop (distance zero).
    pub fn next_stop(&self, s: f64, t: f64) -> Result<Option<StopPoint>> {
        self.check_position(s)?;
        Ok(self
            .next_stop_where(s, t, |_| true)
            .map(|(i, _)| self.stops[i]))
    }

    /// Like [`next_stop`](Self::next_stop) but skipping stops for which
    /// `include` returns false. Returns the stop index and its distance.
    pub fn next_stop_where(
        &self,
        s: f64,
        t: f64,
        mut include: impl FnMut(usize) -> bool,
    ) -> Option<(usize, f64)> {
        let first = self.stops.partition_point(|stop| stop.position < s);
        (first..self.stops.len())
            .find(|&i| include(i) && self.stop_active(i, t))
            .map(|i| (i, self.stops[i].position - s))
    }

    pub fn light_query(&self, s: f64, t: f64) -> Result<PhaseQuery> {
        self.check_position(s)?;
        Ok(self.light_query_unchecked(s, t))
    }

    pub(crate) fn light_query_unchecked(&self, s: f64, t: f64) -> PhaseQuery {
        let idx = self.lights.partition_point(|l| l.position < s);
        match self.lights.get(idx) {
            Some(light) => PhaseQuery {
                distance_to_light: light.position - s,
                phase_code: light.phase_at(t).code(),
            },
            None => PhaseQuery {
                distance_to_light: (self.total_length - s).max(0.0),
                phase_code: Phase::Green.code(),
            },
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => Error::parse(path, other),
        })
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::parse("<route>", e.message()))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("route serializes to TOML")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_toml()).map_err(|e| Error::io(path, e))
    }
}
