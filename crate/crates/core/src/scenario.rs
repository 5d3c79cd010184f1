//! Experiment definitions: schedules, boundary profiles and controller settings.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::control::PidConfig;
use crate::model::NetworkModel;

/// Piecewise-linear function of time, held constant outside its breakpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    points: Vec<(f64, f64)>,
}

impl Profile {
    pub fn constant(value: f64) -> Self {
        Self {
            points: vec![(0.0, value)],
        }
    }

    /// Breakpoints must be sorted by strictly increasing time.
    pub fn new(points: Vec<(f64, f64)>) -> Option<Self> {
        if points.is_empty() || points.windows(2).any(|w| !(w[1].0 > w[0].0)) {
            return None;
        }
        Some(Self { points })
    }

    pub fn points(&self) -> &[(f64, f64)] {
        &self.points
    }

    pub fn at(&self, t: f64) -> f64 {
        let p = &self.points;
        if t <= p[0].0 {
            return p[0].1;
        }
        let last = p[p.len() - 1];
        if t >= last.0 {
            return last.1;
        }
        let i = p.partition_point(|&(ti, _)| ti <= t);
        let (t0, v0) = p[i - 1];
        let (t1, v1) = p[i];
        v0 + (v1 - v0) * (t - t0) / (t1 - t0)
    }

    /// Same shape on a stretched clock: `new(t·factor) = old(t)`.
    pub fn time_scaled(&self, factor: f64) -> Self {
        Self {
            points: self.points.iter().map(|&(t, v)| (t * factor, v)).collect(),
        }
    }

    pub fn map_values(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            points: self.points.iter().map(|&(t, v)| (t, f(v))).collect(),
        }
    }

    pub fn is_constant(&self) -> bool {
        self.points.windows(2).all(|w| w[0].1 == w[1].1)
    }
}

/// One occupied period of a thermal mass.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OccupancyWindow {
    pub start: f64,
    pub end: f64,
    /// [°C]
    pub heating_setpoint: f64,
    /// Setpoint applied after this window closes [°C].
    pub cooling_setpoint: f64,
}

/// How the network temperatures start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NetworkStart {
    /// Pipes and exchangers at their steady state for the initial controls.
    Steady,
    /// Every pipe and exchanger volume at one temperature [°C].
    Uniform(f64),
}

/// Full-scale conditions reproduced in the lab through the Peltier walls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmbientEmulation {
    /// Full-scale ambient T_a(t) on the lab clock [°C].
    pub ambient: Profile,
    /// Full-scale supply temperature, giving `k_T = T_s,lab / T_s,full`.
    pub supply_temp: f64,
    /// Full-scale building setpoint [°C].
    pub setpoint: f64,
}

/// Controller section: gains per thermal mass plus sampling.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    pub default: PidConfig,
    pub per_mass: BTreeMap<String, PidConfig>,
    /// Replace the gains by relay auto-tuning before the run.
    pub auto_tune: bool,
    /// Seed for the relay experiment's random start.
    pub seed: u64,
    /// Open-loop valve positions (model valve order); disables the PID loop.
    pub fixed_valves: Option<Vec<f64>>,
}

impl ControllerConfig {
    pub fn for_mass(&self, id: &str) -> &PidConfig {
        self.per_mass.get(id).unwrap_or(&self.default)
    }
}

/// Named time intervals used by the metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Overall,
    Cooling,
    Heating,
    SteadyState,
}

impl Phase {
    pub const ALL: [Phase; 4] = [Phase::Overall, Phase::Cooling, Phase::Heating, Phase::SteadyState];

    pub fn as_str(self) -> &'static str {
        match self {
            Phase::Overall => "overall",
            Phase::Cooling => "cooling",
            Phase::Heating => "heating",
            Phase::SteadyState => "steady_state",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentScenario {
    /// [s]
    pub duration: f64,
    /// Trajectory sampling interval [s]; a whole multiple of the controller sample time.
    pub output_interval: f64,
    /// Integrator step override [s].
    pub dt: Option<f64>,
    /// Well-mixed volumes per pipe segment.
    pub subsegments: usize,
    /// Physical ambient temperature [°C].
    pub ambient: Profile,
    /// Supply temperature override; defaults to the plant setting.
    pub supply_temp: Option<Profile>,
    pub emulation: Option<AmbientEmulation>,
    /// Occupancy windows per thermal mass id.
    pub occupancy: BTreeMap<String, Vec<OccupancyWindow>>,
    /// Setpoint used before any window and for masses without a schedule.
    pub default_cooling_setpoint: f64,
    pub controller: ControllerConfig,
    /// Initial thermal mass temperatures; missing masses start at their setpoint.
    pub initial_mass_temps: BTreeMap<String, f64>,
    pub network_start: NetworkStart,
    /// |T_ThM − setpoint| band for the steady-state phase [K].
    pub steady_band: f64,
    /// Minimum duration inside the band before the phase counts as steady [s].
    pub steady_window: f64,
}

impl ExperimentScenario {
    /// A quiet scenario: constant ambient, no schedule, valves held half open.
    pub fn constant(model: &NetworkModel, duration: f64, ambient: f64) -> Self {
        let output_interval = 10.0;
        Self {
            duration,
            output_interval,
            dt: None,
            subsegments: 4,
            ambient: Profile::constant(ambient),
            supply_temp: None,
            emulation: None,
            occupancy: BTreeMap::new(),
            default_cooling_setpoint: 0.0,
            controller: ControllerConfig {
                default: PidConfig {
                    sample_time: output_interval,
                    ..PidConfig::default()
                },
                fixed_valves: Some(vec![0.5; model.valves.len()]),
                ..ControllerConfig::default()
            },
            initial_mass_temps: BTreeMap::new(),
            network_start: NetworkStart::Steady,
            steady_band: 0.5,
            steady_window: 600.0,
        }
    }

    pub fn supply_temp_at(&self, model: &NetworkModel, t: f64) -> f64 {
        self.supply_temp
            .as_ref()
            .map_or(model.plant.supply_temp, |p| p.at(t))
    }

    /// Windows must be ordered, non-overlapping and inside the run.
    pub fn violations(&self, model: &NetworkModel) -> Vec<String> {
        let mut v = Vec::new();
        if !(self.duration >= 0.0) || !self.duration.is_finite() {
            v.push("scenario: duration must be finite and >= 0".to_string());
        }
        if !(self.output_interval > 0.0) {
            v.push("scenario: output_interval > 0".to_string());
        }
        if self.subsegments == 0 {
            v.push("scenario: subsegments >= 1".to_string());
        }
        if let Some(dt) = self.dt {
            if !(dt > 0.0) {
                v.push("scenario: dt > 0".to_string());
            }
        }
        for (id, windows) in &self.occupancy {
            if model.mass_index(id).is_none() {
                v.push(format!("scenario: occupancy for unknown thermal mass `{id}`"));
            }
            for (i, w) in windows.iter().enumerate() {
                if !(w.end > w.start) {
                    v.push(format!("scenario: window {i} of `{id}` must have end > start"));
                }
                if w.start < 0.0 {
                    v.push(format!("scenario: window {i} of `{id}` starts before t = 0"));
                }
                if i > 0 && w.start < windows[i - 1].end {
                    v.push(format!("scenario: windows of `{id}` overlap"));
                }
            }
        }
        let check_pid = |name: &str, p: &PidConfig, v: &mut Vec<String>| {
            if !(p.sample_time > 0.0) {
                v.push(format!("controller {name}: sample_time > 0"));
            }
            if !(p.u_min < p.u_max) {
                v.push(format!("controller {name}: u_min < u_max"));
            }
            if p.u_min < 0.0 || p.u_max > 1.0 {
                v.push(format!("controller {name}: output range must lie within [0, 1]"));
            }
            let ratio = self.output_interval / p.sample_time;
            if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
                v.push(format!(
                    "controller {name}: output_interval must be a whole multiple of sample_time"
                ));
            }
        };
        check_pid("default", &self.controller.default, &mut v);
        for (id, p) in &self.controller.per_mass {
            if model.mass_index(id).is_none() {
                v.push(format!("controller: gains for unknown thermal mass `{id}`"));
            }
            check_pid(id, p, &mut v);
            if (p.sample_time - self.controller.default.sample_time).abs() > 0.0 {
                v.push(format!(
                    "controller {id}: all masses must share the default sample_time"
                ));
            }
        }
        if let Some(f) = &self.controller.fixed_valves {
            if f.len() != model.valves.len() {
                v.push(format!(
                    "controller: fixed_valves needs {} positions",
                    model.valves.len()
                ));
            }
            if f.iter().any(|u| !(0.0..=1.0).contains(u)) {
                v.push("controller: fixed valve positions must lie in [0, 1]".to_string());
            }
        }
        if let Some(e) = &self.emulation {
            if !(e.supply_temp > 0.0) {
                v.push("scenario: emulated supply temperature must be > 0".to_string());
            }
        }
        for id in self.initial_mass_temps.keys() {
            if model.mass_index(id).is_none() {
                v.push(format!("scenario: initial temperature for unknown mass `{id}`"));
            }
        }
        v
    }

    /// Re-time the scenario for a network whose clock runs `factor` times as long.
    /// Temperatures are left alone.
    pub fn time_scaled(&self, factor: f64) -> Self {
        let mut s = self.clone();
        s.duration *= factor;
        s.output_interval *= factor;
        s.dt = s.dt.map(|d| d * factor);
        s.ambient = s.ambient.time_scaled(factor);
        s.supply_temp = s.supply_temp.as_ref().map(|p| p.time_scaled(factor));
        if let Some(e) = &mut s.emulation {
            e.ambient = e.ambient.time_scaled(factor);
        }
        for windows in s.occupancy.values_mut() {
            for w in windows {
                w.start *= factor;
                w.end *= factor;
            }
        }
        s.controller.default = s.controller.default.time_scaled(1.0, factor);
        for p in s.controller.per_mass.values_mut() {
            *p = p.time_scaled(1.0, factor);
        }
        s.steady_window *= factor;
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profile_interpolates_and_holds() {
        let p = Profile::new(vec![(0.0, 1.0), (10.0, 3.0)]).unwrap();
        assert_eq!(p.at(-5.0), 1.0);
        assert_eq!(p.at(5.0), 2.0);
        assert_eq!(p.at(50.0), 3.0);
        assert_eq!(p.time_scaled(2.0).at(10.0), 2.0);
    }

    #[test]
    fn profile_rejects_unsorted_points() {
        assert!(Profile::new(vec![(1.0, 0.0), (1.0, 2.0)]).is_none());
        assert!(Profile::new(vec![]).is_none());
    }
}
