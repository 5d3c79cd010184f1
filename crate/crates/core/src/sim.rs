//! Fixed-step simulation of a scenario with the valve and Peltier loops closed.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::control::{peltier_tracking_step, pid_step, setpoint_at, PidConfig, PidState};
use crate::hydraulics::{solve_flow_split, FlowState};
use crate::model::{validate_network, NetworkLayout, NetworkModel};
use crate::scenario::{ExperimentScenario, NetworkStart};
use crate::similitude::{peltier_power_for_ambient, NondimBase};
use crate::thermal::{
    check_step, min_time_constant, rk4_step, steady_state, Boundary, Dynamics, Rk4Workspace,
    StateLayout, ENERGY_CHANNELS,
};
use crate::{Error, Result};

/// Share of the shortest time constant used as the default step.
pub const DEFAULT_STEP_FRACTION: f64 = 0.1;

/// Everything known about the network at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationState {
    /// [s]
    pub time: f64,
    /// Flat temperature vector plus energy integrals; see [`StateLayout`].
    pub y: Vec<f64>,
    pub ambient: f64,
    pub supply_temp: f64,
    /// Valve positions in model order.
    pub valves: Vec<f64>,
    pub flows: FlowState,
    /// Applied Peltier power per thermal mass [W].
    pub peltier: Vec<f64>,
    /// Active PID setpoint per thermal mass [°C].
    pub setpoints: Vec<f64>,
    /// Whether each mass is inside an occupancy window.
    pub heating: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub model_hash: String,
    pub scenario_hash: String,
    pub dt: f64,
    pub subsegments: usize,
    pub output_interval: f64,
    /// Nondimensional base of the simulated network.
    pub base: NondimBase,
    /// Design setpoint per thermal mass, used for `T_ThM*`.
    pub mass_setpoints: Vec<(String, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationTrajectory {
    pub samples: Vec<SimulationState>,
    pub meta: RunMetadata,
    pub state_layout: StateLayout,
}

/// A run that stopped early; `partial` holds the samples recorded so far.
#[derive(Debug)]
pub struct SimulationFailure {
    pub partial: SimulationTrajectory,
    pub error: Error,
}

impl std::fmt::Display for SimulationFailure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let t = self.partial.samples.last().map_or(0.0, |s| s.time);
        write!(f, "simulation aborted after t = {t} s")
    }
}

impl std::error::Error for SimulationFailure {
    fn source(&self) -> Option<&(dyn std::error::Error + 'static)> {
        Some(&self.error)
    }
}

impl From<Error> for Box<SimulationFailure> {
    fn from(error: Error) -> Self {
        Box::new(SimulationFailure {
            partial: SimulationTrajectory {
                samples: Vec::new(),
                meta: RunMetadata {
                    model_hash: String::new(),
                    scenario_hash: String::new(),
                    dt: 0.0,
                    subsegments: 0,
                    output_interval: 0.0,
                    base: NondimBase {
                        rho: 1.0,
                        mdot_i: 1.0,
                        t_s: 1.0,
                        d: 1.0,
                    },
                    mass_setpoints: Vec::new(),
                },
                state_layout: StateLayout {
                    n_sub: 1,
                    n_segments: 0,
                    n_exchangers: 0,
                    n_masses: 0,
                },
            },
            error,
        })
    }
}

pub fn sha256_json<T: Serialize>(value: &T) -> String {
    let text = serde_json::to_string(value).expect("serializable");
    hex::encode(Sha256::digest(text.as_bytes()))
}

/// Default integration step: a tenth of the shortest time constant over a
/// sweep of common valve positions.
pub fn default_step(model: &NetworkModel, layout: &NetworkLayout, n_sub: usize) -> Result<f64> {
    let mut tau = f64::INFINITY;
    for u in [0.0, 0.5, 1.0] {
        let flows = solve_flow_split(model, layout, &vec![u; model.valves.len()])?;
        tau = tau.min(min_time_constant(model, layout, &flows, n_sub));
    }
    Ok(DEFAULT_STEP_FRACTION * tau)
}

struct MassControl {
    config: PidConfig,
    state: PidState,
    relay_high: bool,
}

/// Two-position valve law used for auto-tuning: `u = bias ± amplitude`,
/// switching when the error leaves the hysteresis band.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelaySettings {
    pub bias: f64,
    pub amplitude: f64,
    /// [K]
    pub hysteresis: f64,
}

/// Simulate `scenario` on `model`.
///
/// With `controller.auto_tune` set, the PID gains are first replaced by
/// [`auto_tune`] results.
pub fn simulate(
    model: &NetworkModel,
    scenario: &ExperimentScenario,
) -> std::result::Result<SimulationTrajectory, Box<SimulationFailure>> {
    if scenario.controller.auto_tune {
        let gains = auto_tune(model, scenario)?;
        let mut tuned = scenario.clone();
        tuned.controller.auto_tune = false;
        tuned.controller.per_mass = gains.into_iter().map(|g| (g.mass.clone(), g.config)).collect();
        return run(model, &tuned, None);
    }
    run(model, scenario, None)
}

/// Tuned gains for one thermal mass.
#[derive(Debug, Clone, PartialEq)]
pub struct TunedGains {
    pub mass: String,
    pub ultimate_gain: f64,
    /// [s]
    pub ultimate_period: f64,
    pub config: PidConfig,
}

/// Relay experiment around each mass's first heating setpoint, followed by
/// Tyreus-Luyben PI gains.
///
/// The relay's starting direction and hysteresis come from
/// `controller.seed`, so repeated calls agree.
pub fn auto_tune(model: &NetworkModel, scenario: &ExperimentScenario) -> Result<Vec<TunedGains>> {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(scenario.controller.seed);
    let mut s = scenario.clone();
    s.controller.auto_tune = false;
    s.controller.fixed_valves = None;
    let mut setpoints = Vec::new();
    for m in &model.thermal_masses {
        let sp = scenario
            .occupancy
            .get(&m.id)
            .and_then(|w| w.first())
            .map_or(m.setpoint, |w| w.heating_setpoint);
        setpoints.push(sp);
        s.occupancy.insert(
            m.id.clone(),
            vec![crate::scenario::OccupancyWindow {
                start: 0.0,
                end: s.duration.max(1.0),
                heating_setpoint: sp,
                cooling_setpoint: sp,
            }],
        );
        s.initial_mass_temps.insert(m.id.clone(), sp);
    }
    let relay = RelaySettings {
        bias: 0.5,
        amplitude: 0.5,
        hysteresis: rng.random_range(0.02..0.05),
    };
    let start_high: Vec<bool> = model.thermal_masses.iter().map(|_| rng.random_bool(0.5)).collect();
    let traj = run(model, &s, Some((relay, start_high))).map_err(|f| f.error)?;
    let times: Vec<f64> = traj.samples.iter().map(|x| x.time).collect();
    model
        .thermal_masses
        .iter()
        .enumerate()
        .map(|(m, tm)| {
            let e: Vec<f64> = (0..traj.samples.len())
                .map(|k| traj.mass_temp(k, m) - setpoints[m])
                .collect();
            let (amp, period) = relay_oscillation(&times, &e).ok_or_else(|| {
                Error::InsufficientVariation(format!(
                    "relay test on `{}` did not settle into an oscillation",
                    tm.id
                ))
            })?;
            let (ku, pu) = crate::control::relay_ultimate(relay.amplitude, amp, period);
            Ok(TunedGains {
                mass: tm.id.clone(),
                ultimate_gain: ku,
                ultimate_period: pu,
                config: crate::control::pi_from_ultimate(ku, pu, scenario.controller.for_mass(&tm.id)),
            })
        })
        .collect()
}

/// Amplitude and period of the last two full cycles of `e` around zero.
fn relay_oscillation(t: &[f64], e: &[f64]) -> Option<(f64, f64)> {
    let ups: Vec<usize> = (1..e.len()).filter(|&k| e[k - 1] < 0.0 && e[k] >= 0.0).collect();
    if ups.len() < 4 {
        return None;
    }
    let crossing = |k: usize| t[k - 1] + (t[k] - t[k - 1]) * (-e[k - 1]) / (e[k] - e[k - 1]);
    let n = ups.len();
    let period = (crossing(ups[n - 1]) - crossing(ups[n - 3])) / 2.0;
    let window = &e[ups[n - 3]..ups[n - 1]];
    let hi = window.iter().copied().fold(f64::MIN, f64::max);
    let lo = window.iter().copied().fold(f64::MAX, f64::min);
    let amp = (hi - lo) / 2.0;
    (amp > 0.0 && period > 0.0).then_some((amp, period))
}

type RelayRun = (RelaySettings, Vec<bool>);

fn run(
    model: &NetworkModel,
    scenario: &ExperimentScenario,
    relay: Option<RelayRun>,
) -> std::result::Result<SimulationTrajectory, Box<SimulationFailure>> {
    validate_network(model).into_result()?;
    let issues = scenario.violations(model);
    if !issues.is_empty() {
        return Err(Error::Invalid(issues).into());
    }
    let layout = model
        .layout()
        .map_err(Error::Invalid)?;
    let n_sub = scenario.subsegments;
    let st = StateLayout::new(model, n_sub);
    let sample = scenario.controller.default.sample_time;
    let dt_target = match scenario.dt {
        Some(dt) => dt,
        None => default_step(model, &layout, n_sub)?,
    };
    let steps_per_control = ((sample / dt_target) - 1e-9).ceil().max(1.0) as usize;
    let dt = sample / steps_per_control as f64;
    let controls_per_output = (scenario.output_interval / sample).round().max(1.0) as usize;
    let n_controls = (scenario.duration / sample + 1e-9).floor() as usize;
    let n_controls = n_controls - n_controls % controls_per_output;

    let meta = RunMetadata {
        model_hash: sha256_json(model),
        scenario_hash: sha256_json(scenario),
        dt,
        subsegments: n_sub,
        output_interval: sample * controls_per_output as f64,
        base: NondimBase::of_model(model),
        mass_setpoints: model
            .thermal_masses
            .iter()
            .map(|m| (m.id.clone(), m.setpoint))
            .collect(),
    };
    let mut traj = SimulationTrajectory {
        samples: Vec::with_capacity(n_controls / controls_per_output + 1),
        meta,
        state_layout: st,
    };

    let mut pids: Vec<MassControl> = model
        .thermal_masses
        .iter()
        .enumerate()
        .map(|(i, m)| MassControl {
            config: *scenario.controller.for_mass(&m.id),
            state: PidState::default(),
            relay_high: relay.as_ref().is_some_and(|r| r.1[i]),
        })
        .collect();
    let k_t = scenario
        .emulation
        .as_ref()
        .map(|e| model.plant.supply_temp / e.supply_temp);
    let boundary = |t: f64| Boundary {
        supply_temp: scenario.supply_temp_at(model, t),
        ambient: scenario.ambient.at(t),
    };

    let mass_temps: Vec<f64> = model
        .thermal_masses
        .iter()
        .map(|m| {
            scenario
                .initial_mass_temps
                .get(&m.id)
                .copied()
                .unwrap_or(m.setpoint)
        })
        .collect();
    let mut y = vec![0.0; st.len()];
    for (m, &t) in mass_temps.iter().enumerate() {
        y[st.mass(m)] = t;
    }
    let mut peltier = vec![0.0; model.thermal_masses.len()];
    let mut valves = vec![0.0; model.valves.len()];
    let mut setpoints = vec![0.0; model.thermal_masses.len()];
    let mut heating = vec![false; model.thermal_masses.len()];
    let mut ws = Rk4Workspace::default();

    let control = |t: f64,
                   y: &[f64],
                   pids: &mut [MassControl],
                   valves: &mut [f64],
                   setpoints: &mut [f64],
                   heating: &mut [bool]| {
        for lp in &layout.loops {
            let mass = &model.thermal_masses[lp.mass];
            let windows = scenario
                .occupancy
                .get(&mass.id)
                .map(Vec::as_slice)
                .unwrap_or(&[]);
            let (sp, on) = setpoint_at(windows, t, scenario.default_cooling_setpoint);
            setpoints[lp.mass] = sp;
            heating[lp.mass] = on;
            let meas = y[st.mass(lp.mass)];
            match (&scenario.controller.fixed_valves, &relay) {
                (_, Some((r, _))) => {
                    let pc = &mut pids[lp.mass];
                    let e = sp - meas;
                    if pc.relay_high && e < -r.hysteresis {
                        pc.relay_high = false;
                    } else if !pc.relay_high && e > r.hysteresis {
                        pc.relay_high = true;
                    }
                    let sign = if pc.relay_high { 1.0 } else { -1.0 };
                    valves[lp.valve] = (r.bias + sign * r.amplitude).clamp(0.0, 1.0);
                }
                (Some(fixed), None) => valves[lp.valve] = fixed[lp.valve],
                (None, None) => {
                    let pc = &mut pids[lp.mass];
                    let (u, next) = pid_step(&pc.config, pc.state, sp, meas, sample);
                    pc.state = next;
                    valves[lp.valve] = u;
                }
            }
        }
    };
    let peltier_target = |t: f64, y: &[f64], m: usize| -> f64 {
        let mass = &model.thermal_masses[m];
        match (&scenario.emulation, k_t, &mass.peltier) {
            (Some(e), Some(k_t), Some(_)) => {
                let target = mass.setpoint + k_t * (e.ambient.at(t) - e.setpoint);
                peltier_power_for_ambient(mass, y[st.mass(m)], scenario.ambient.at(t), target)
            }
            _ => 0.0,
        }
    };

    control(0.0, &y, &mut pids, &mut valves, &mut setpoints, &mut heating);
    let mut flows = solve_flow_split(model, &layout, &valves)?;
    match scenario.network_start {
        NetworkStart::Steady => {
            let steady = steady_state(model, &layout, &flows, n_sub, boundary(0.0), &mass_temps);
            y[..st.temperatures()].copy_from_slice(&steady[..st.temperatures()]);
        }
        NetworkStart::Uniform(t) => {
            for v in &mut y[..st.mass(0).min(st.temperatures())] {
                *v = t;
            }
        }
    }
    for k in 0..ENERGY_CHANNELS {
        y[st.energy(k)] = 0.0;
    }
    for (m, p) in peltier.iter_mut().enumerate() {
        if let Some(unit) = &model.thermal_masses[m].peltier {
            *p = peltier_tracking_step(unit, 0.0, peltier_target(0.0, &y, m), dt).applied;
        }
    }

    let record = |t: f64,
                  y: &[f64],
                  valves: &[f64],
                  flows: &FlowState,
                  peltier: &[f64],
                  setpoints: &[f64],
                  heating: &[bool]| {
        let b = boundary(t);
        SimulationState {
            time: t,
            y: y.to_vec(),
            ambient: b.ambient,
            supply_temp: b.supply_temp,
            valves: valves.to_vec(),
            flows: flows.clone(),
            peltier: peltier.to_vec(),
            setpoints: setpoints.to_vec(),
            heating: heating.to_vec(),
        }
    };
    let fail = |traj: SimulationTrajectory, error: Error| {
        Box::new(SimulationFailure {
            partial: traj,
            error,
        })
    };
    let mut last_valves = valves.clone();
    for c in 0..=n_controls {
        let t0 = c as f64 * sample;
        if c > 0 {
            control(t0, &y, &mut pids, &mut valves, &mut setpoints, &mut heating);
            if valves != last_valves {
                flows = match solve_flow_split(model, &layout, &valves) {
                    Ok(f) => f,
                    Err(e) => return Err(fail(traj, e)),
                };
                last_valves.clone_from(&valves);
            }
        }
        if c % controls_per_output == 0 {
            traj.samples
                .push(record(t0, &y, &valves, &flows, &peltier, &setpoints, &heating));
        }
        if c == n_controls {
            break;
        }
        if let Err(e) = check_step(dt, min_time_constant(model, &layout, &flows, n_sub)) {
            return Err(fail(traj, e));
        }
        for s in 0..steps_per_control {
            let t = (c * steps_per_control + s) as f64 * dt;
            if s > 0 || c > 0 {
                for (m, p) in peltier.iter_mut().enumerate() {
                    if let Some(unit) = &model.thermal_masses[m].peltier {
                        *p = peltier_tracking_step(unit, *p, peltier_target(t, &y, m), dt).applied;
                    }
                }
            }
            let dynamics = Dynamics {
                model,
                layout: &layout,
                state: st,
                flows: &flows,
                peltier: &peltier,
            };
            rk4_step(&dynamics, &mut y, t, dt, &boundary, &mut ws);
        }
        if y[..st.temperatures()].iter().any(|v| !v.is_finite()) {
            return Err(fail(
                traj,
                Error::Domain(format!("non-finite temperature after t = {t0} s")),
            ));
        }
    }
    Ok(traj)
}

impl SimulationTrajectory {
    pub fn layout(&self) -> StateLayout {
        self.state_layout
    }

    pub fn mass_temp(&self, sample: usize, mass: usize) -> f64 {
        self.samples[sample].y[self.state_layout.mass(mass)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal;

    #[test]
    fn zero_duration_gives_single_sample() {
        let model = nominal::lab_scale_model();
        let s = ExperimentScenario::constant(&model, 0.0, 22.0);
        let traj = simulate(&model, &s).unwrap();
        assert_eq!(traj.samples.len(), 1);
    }

    #[test]
    fn isothermal_network_stays_isothermal() {
        let model = nominal::lab_scale_model();
        let mut s = ExperimentScenario::constant(&model, 600.0, 36.0);
        s.network_start = NetworkStart::Uniform(36.0);
        s.initial_mass_temps = [("ThM1".to_string(), 36.0), ("ThM2".to_string(), 36.0)].into();
        let traj = simulate(&model, &s).unwrap();
        let st = traj.layout();
        for sample in &traj.samples {
            for v in &sample.y[..st.temperatures()] {
                assert!((v - 36.0).abs() < 1e-10, "{v}");
            }
        }
    }

    #[test]
    fn repeated_runs_are_bit_identical() {
        let model = nominal::lab_scale_model();
        let mut s = nominal::lab_scenario();
        s.duration = 1800.0 * nominal::lab_time_ratio();
        s.duration -= s.duration % s.output_interval;
        let a = simulate(&model, &s).unwrap();
        let b = simulate(&model, &s).unwrap();
        assert_eq!(a.samples, b.samples);
    }
}
