#![allow(dead_code)]

use std::collections::BTreeMap;
use std::f64::consts::PI;

use dhnsim::control::PidConfig;
use dhnsim::harness::{self, MetricsOptions, MetricsReport};
use dhnsim::model::{
    FluidProperties, HeatExchanger, NetworkModel, PeltierUnit, PipeSegment, SupplyPlant, ThermalMass,
    ValveCharacteristic, ValveModel,
};
use dhnsim::scenario::{
    AmbientEmulation, ControllerConfig, ExperimentScenario, NetworkStart, OccupancyWindow, Profile,
};
use dhnsim::similitude::{self, NondimBase};
use dhnsim::sim::{self, SimulationTrajectory};
use dhnsim::trajectory::{self, Table};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Run {
    pub model: NetworkModel,
    pub scenario: ExperimentScenario,
    pub traj: SimulationTrajectory,
    pub table: Table,
    pub nondim: Table,
    pub base: NondimBase,
}

impl Run {
    pub fn new(model: NetworkModel, scenario: ExperimentScenario) -> Run {
        let traj = sim::simulate(&model, &scenario).expect("simulation");
        let table = trajectory::trajectory_table(&model, &traj).unwrap();
        let base = traj.meta.base;
        let nondim = similitude::nondimensionalize(&table, &traj.meta.mass_setpoints, &base, &base).unwrap();
        Run {
            model,
            scenario,
            traj,
            table,
            nondim,
            base,
        }
    }

    pub fn metrics(&self) -> MetricsReport {
        let opts = MetricsOptions {
            band: self.scenario.steady_band,
            window: self.scenario.steady_window,
            ..MetricsOptions::default()
        };
        harness::metrics(&self.table, &self.nondim, &self.model, &self.base, &opts).unwrap()
    }
}

fn pipe(id: &str, up: &str, down: &str, length: f64, d: f64, ha: f64, rho: f64) -> PipeSegment {
    PipeSegment {
        id: id.into(),
        length,
        diameter: d,
        loss_coeff: 0.03 * length / (2.0 * rho * d),
        conductance: ha,
        upstream: up.into(),
        downstream: down.into(),
    }
}

/// A one to three loop network with lab-like magnitudes and a short
/// scenario exercising the schedule, the PID loops and, sometimes, Peltier
/// emulation.
pub fn random_case(seed: u64) -> (NetworkModel, ExperimentScenario) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loops = rng.random_range(1..=3usize);
    let rho = rng.random_range(960.0..1000.0);
    let d = rng.random_range(0.01..0.02);
    let mdot = rng.random_range(0.04..0.12) * loops as f64 / 2.0;
    let t_s = rng.random_range(34.0..50.0);
    let emulate = rng.random_bool(0.5);

    let mut segments = vec![pipe(
        "main_s",
        "out",
        "split",
        rng.random_range(1.0..8.0),
        d,
        rng.random_range(0.1..0.6),
        rho,
    )];
    let mut valves = Vec::new();
    let mut exchangers = Vec::new();
    let mut masses = Vec::new();
    for n in 1..=loops {
        let len = |rng: &mut ChaCha8Rng| rng.random_range(1.0..8.0);
        let ha = |rng: &mut ChaCha8Rng| rng.random_range(0.1..0.6);
        let (v, hx_in, merge) = (format!("v{n}"), format!("h{n}"), format!("m{n}"));
        let l = len(&mut rng);
        let h = ha(&mut rng);
        segments.push(pipe(&format!("S{n}"), "split", &v, l, d, h, rho));
        let l = len(&mut rng);
        let h = ha(&mut rng);
        segments.push(pipe(&format!("U{n}"), &v, &hx_in, l, d, h, rho));
        let l = len(&mut rng);
        let h = ha(&mut rng);
        segments.push(pipe(&format!("B{n}"), &v, &merge, l, d, h, rho));
        let l = len(&mut rng);
        let h = ha(&mut rng);
        segments.push(pipe(&format!("R{n}"), &merge, "collect", l, d, h, rho));
        let hx_d = 0.008;
        let area = PI * hx_d * hx_d / 4.0;
        exchangers.push(HeatExchanger {
            id: format!("HX{n}"),
            conductance: rng.random_range(5.0..20.0),
            loss_coeff: rng.random_range(2e3..5e3) * area * area / (0.025f64 * 0.025),
            volume: rng.random_range(1e-4..4e-4),
            diameter: hx_d,
            upstream: hx_in,
            downstream: merge,
        });
        valves.push(ValveModel {
            id: format!("V{n}"),
            user_edge: format!("U{n}"),
            bypass_edge: format!("B{n}"),
            user_k_range: [0.05, 1150.0],
            bypass_k_range: [0.002, 0.045],
            characteristic: if rng.random_bool(0.5) {
                ValveCharacteristic::EqualPercentage
            } else {
                ValveCharacteristic::Linear
            },
        });
        let capacity = rng.random_range(2e4..8e4);
        let conductance = rng.random_range(0.3..1.5);
        masses.push(ThermalMass {
            id: format!("M{n}"),
            heat_capacity: capacity,
            volume: capacity / (1000.0 * 4186.0),
            conductance_actual: conductance,
            conductance_simulated: conductance * rng.random_range(0.5..2.0),
            setpoint: t_s - rng.random_range(5.0..10.0),
            heat_exchanger: format!("HX{n}"),
            peltier: emulate.then(|| PeltierUnit {
                max_power: rng.random_range(5.0..50.0),
                time_constant: rng.random_range(0.0..60.0),
            }),
        });
    }
    segments.push(pipe("main_r", "collect", "in", rng.random_range(1.0..8.0), d, 0.3, rho));

    let model = NetworkModel {
        fluid: FluidProperties { rho, cp: 4180.0 },
        plant: SupplyPlant {
            supply_temp: t_s,
            mass_flow: mdot,
            pump_pressure_rise: 75e3,
            supply_node: "out".into(),
            return_node: "in".into(),
            heater_conductance: rng.random_range(0.0..2.0),
            heater_volume: 0.05,
        },
        segments,
        valves,
        heat_exchangers: exchangers,
        thermal_masses: masses,
    };

    let hour = 3600.0;
    let duration = rng.random_range(2.0..4.0) * hour;
    let room = rng.random_range(15.0..24.0);
    let ambient = Profile::new(vec![
        (0.0, room),
        (duration / 2.0, room - rng.random_range(0.0..4.0)),
        (duration, room + rng.random_range(0.0..2.0)),
    ])
    .unwrap();
    let mut occupancy = BTreeMap::new();
    let mut initial = BTreeMap::new();
    for m in &model.thermal_masses {
        let start = rng.random_range(0.1..0.4) * duration;
        let end = rng.random_range(0.6..0.9) * duration;
        occupancy.insert(
            m.id.clone(),
            vec![OccupancyWindow {
                start,
                end,
                heating_setpoint: m.setpoint,
                cooling_setpoint: m.setpoint - 10.0,
            }],
        );
        initial.insert(m.id.clone(), m.setpoint - rng.random_range(0.0..4.0));
    }
    let scenario = ExperimentScenario {
        duration,
        output_interval: 10.0,
        dt: None,
        subsegments: 2,
        ambient,
        supply_temp: Some(
            Profile::new(vec![(0.0, t_s), (duration, t_s - rng.random_range(0.0..3.0))]).unwrap(),
        ),
        emulation: emulate.then(|| AmbientEmulation {
            ambient: Profile::new(vec![(0.0, -2.0), (duration, 4.0)]).unwrap(),
            supply_temp: 80.0,
            setpoint: 20.0,
        }),
        occupancy,
        default_cooling_setpoint: 0.0,
        controller: ControllerConfig {
            default: PidConfig {
                kp: rng.random_range(0.1..1.0),
                ki: rng.random_range(1e-4..2e-3),
                kd: 0.0,
                sample_time: 10.0,
                ..PidConfig::default()
            },
            ..ControllerConfig::default()
        },
        initial_mass_temps: initial,
        network_start: NetworkStart::Steady,
        steady_band: 0.5,
        steady_window: 600.0,
    };
    (model, scenario)
}

/// A base reached by scaling every base quantity of `b` by a random factor.
pub fn random_target(b: &NondimBase, seed: u64) -> NondimBase {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    NondimBase {
        rho: b.rho * rng.random_range(0.9..1.1),
        mdot_i: b.mdot_i * rng.random_range(0.2..5.0),
        t_s: b.t_s * rng.random_range(0.5..2.0),
        d: b.d * rng.random_range(0.5..3.0),
    }
}
