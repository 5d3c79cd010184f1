//! Reference networks and the two-day validation experiment.
//!
//! Both networks share the two-user layout: a supply main splitting into two
//! loops, each loop a supply run, a three-way valve feeding a user pipe with
//! its heat exchanger or a bypass pipe, a loop return and a common return main.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use crate::control::PidConfig;
use crate::model::{
    FluidProperties, HeatExchanger, NetworkModel, PeltierUnit, PipeSegment, SupplyPlant,
    ThermalMass, ValveCharacteristic, ValveModel,
};
use crate::scenario::{
    AmbientEmulation, ControllerConfig, ExperimentScenario, NetworkStart, OccupancyWindow, Profile,
};
use crate::similitude::{LabConstraints, NondimBase};

/// Darcy friction factor used for the straight runs.
const FRICTION: f64 = 0.03;

pub fn full_scale_base() -> NondimBase {
    NondimBase {
        rho: 971.0,
        mdot_i: 20.0,
        t_s: 80.0,
        d: 0.1,
    }
}

pub fn lab_scale_base() -> NondimBase {
    NondimBase {
        rho: 994.0,
        mdot_i: 0.0862,
        t_s: 36.0,
        d: 0.012,
    }
}

/// Pipe runs of one scale, in `[supply main, loop supply, user, bypass, loop return, return main]` order.
struct Runs {
    length: [f64; 6],
    conductance: [f64; 6],
}

struct Exchanger {
    conductance: f64,
    diameter: f64,
    volume: f64,
    /// `[HX1, HX2]` drop at the reference flow [Pa].
    dp: [f64; 2],
    reference_flow: f64,
}

struct Building {
    capacity: f64,
    volume: f64,
    conductance: f64,
    setpoint: f64,
    peltier: Option<PeltierUnit>,
}

fn pipe(id: &str, up: &str, down: &str, length: f64, d: f64, ha: f64, rho: f64) -> PipeSegment {
    PipeSegment {
        id: id.into(),
        length,
        diameter: d,
        loss_coeff: FRICTION * length / (2.0 * rho * d),
        conductance: ha,
        upstream: up.into(),
        downstream: down.into(),
    }
}

/// Valve port loss coefficients of the lab rig, in `[open, closed]` pairs.
/// Both ports leak slightly at their closed end.
const USER_K: [f64; 2] = [0.05, 1150.0];
const BYPASS_K: [f64; 2] = [0.002, 0.045];

fn network(
    fluid: FluidProperties,
    plant: SupplyPlant,
    d: f64,
    runs: &Runs,
    hx: &Exchanger,
    buildings: [Building; 2],
    valve_k_scale: f64,
) -> NetworkModel {
    let rho = fluid.rho;
    let [l_main, l_sup, l_user, l_byp, l_ret, l_rmain] = runs.length;
    let [h_main, h_sup, h_user, h_byp, h_ret, h_rmain] = runs.conductance;
    let mut segments = vec![pipe("supply_main", "plant_out", "split", l_main, d, h_main, rho)];
    let mut valves = Vec::new();
    let mut exchangers = Vec::new();
    let mut masses = Vec::new();
    let hx_area = PI * hx.diameter * hx.diameter / 4.0;
    for (i, b) in buildings.into_iter().enumerate() {
        let n = i + 1;
        let v = format!("v{n}");
        let hx_in = format!("hx{n}_in");
        let merge = format!("merge{n}");
        segments.push(pipe(&format!("L{n}_supply"), "split", &v, l_sup, d, h_sup, rho));
        segments.push(pipe(&format!("U{n}"), &v, &hx_in, l_user, d, h_user, rho));
        segments.push(pipe(&format!("B{n}"), &v, &merge, l_byp, d, h_byp, rho));
        segments.push(pipe(&format!("L{n}_return"), &merge, "collect", l_ret, d, h_ret, rho));
        exchangers.push(HeatExchanger {
            id: format!("HX{n}"),
            conductance: hx.conductance,
            loss_coeff: hx.dp[i] * hx_area * hx_area / (hx.reference_flow * hx.reference_flow),
            volume: hx.volume,
            diameter: hx.diameter,
            upstream: hx_in,
            downstream: merge,
        });
        valves.push(ValveModel {
            id: format!("V{n}"),
            user_edge: format!("U{n}"),
            bypass_edge: format!("B{n}"),
            user_k_range: USER_K.map(|k| k * valve_k_scale),
            bypass_k_range: BYPASS_K.map(|k| k * valve_k_scale),
            characteristic: ValveCharacteristic::EqualPercentage,
        });
        masses.push(ThermalMass {
            id: format!("ThM{n}"),
            heat_capacity: b.capacity,
            volume: b.volume,
            conductance_actual: b.conductance,
            conductance_simulated: b.conductance,
            setpoint: b.setpoint,
            heat_exchanger: format!("HX{n}"),
            peltier: b.peltier,
        });
    }
    segments.push(pipe("return_main", "collect", "plant_in", l_rmain, d, h_rmain, rho));
    // Keep loop edges grouped by loop for readability of the config files.
    let order = [
        "supply_main",
        "L1_supply",
        "U1",
        "B1",
        "L1_return",
        "L2_supply",
        "U2",
        "B2",
        "L2_return",
        "return_main",
    ];
    segments.sort_by_key(|s| order.iter().position(|o| *o == s.id));
    NetworkModel {
        fluid,
        plant,
        segments,
        valves,
        heat_exchangers: exchangers,
        thermal_masses: masses,
    }
}

/// Full-scale two-building network with literature-range component values.
pub fn full_scale_model() -> NetworkModel {
    full_scale_with_capacity([0.15e9, 0.15e9])
}

/// Full-scale network of the two-day comparison run: larger buildings whose
/// nondimensional heat capacity is roughly 8.6 times that of the lab masses.
pub fn full_scale_validation_model() -> NetworkModel {
    full_scale_with_capacity([0.75e9, 1.1e9])
}

fn full_scale_with_capacity(capacity: [f64; 2]) -> NetworkModel {
    let base = full_scale_base();
    let fluid = FluidProperties {
        rho: base.rho,
        cp: 4180.0,
    };
    let plant = SupplyPlant {
        supply_temp: base.t_s,
        mass_flow: base.mdot_i,
        pump_pressure_rise: 860e3,
        supply_node: "plant_out".into(),
        return_node: "plant_in".into(),
        heater_conductance: 1500.0,
        heater_volume: 10.0,
    };
    let runs = Runs {
        length: [90.0, 75.0, 25.0, 25.0, 75.0, 90.0],
        conductance: [30.0, 25.0, 21.0, 21.0, 25.0, 30.0],
    };
    let scale = lab_scale_base().d / base.d;
    let hx = Exchanger {
        conductance: 8000.0,
        diameter: 0.008 / scale,
        volume: 2.5e-4 / scale.powi(3),
        dp: [41e3, 51e3],
        reference_flow: 0.0024 * base.mdot_i / lab_scale_base().mdot_i,
    };
    let building = |c: f64, ha: f64| Building {
        capacity: c,
        volume: c / (1000.0 * 4186.0),
        conductance: ha,
        setpoint: 20.0,
        peltier: None,
    };
    network(
        fluid,
        plant,
        base.d,
        &runs,
        &hx,
        [building(capacity[0], 650.0), building(capacity[1], 1040.0)],
        lab_scale_base().rho / base.rho,
    )
}

/// Lab-side limits of the as-built rig for sizing from [`full_scale_model`].
pub fn lab_constraints() -> LabConstraints {
    LabConstraints {
        base: lab_scale_base(),
        cp: 4180.0,
        full_design_ambient: -5.0,
        lab_ambient: 22.0,
        hx_conductance_bounds: Some([14.5, 16.0]),
        mass_capacity: BTreeMap::new(),
        mass_conductance_actual: BTreeMap::new(),
        peltier: Some(PeltierUnit {
            max_power: 50.0,
            time_constant: 0.0,
        }),
        pump_pressure_rise: Some(75e3),
    }
}

/// Heat capacity of a water-filled lab tank of `volume` m³ [J/K].
pub fn water_tank_capacity(volume: f64) -> f64 {
    1000.0 * 4186.0 * volume
}

/// The as-built lab rig: 1/2" PEX supply network and water-filled thermal masses.
pub fn lab_scale_model() -> NetworkModel {
    let base = lab_scale_base();
    let fluid = FluidProperties {
        rho: base.rho,
        cp: 4180.0,
    };
    let plant = SupplyPlant {
        supply_temp: base.t_s,
        mass_flow: base.mdot_i,
        pump_pressure_rise: 75e3,
        supply_node: "plant_out".into(),
        return_node: "plant_in".into(),
        heater_conductance: 1.2,
        heater_volume: 0.1136,
    };
    let runs = Runs {
        length: [10.8, 9.0, 3.0, 3.0, 9.0, 10.8],
        conductance: [0.35, 0.30, 0.25, 0.25, 0.30, 0.35],
    };
    let hx = Exchanger {
        conductance: 16.0,
        diameter: 0.008,
        volume: 2.5e-4,
        dp: [3.6e3, 4.5e3],
        reference_flow: 0.0024,
    };
    let peltier = Some(PeltierUnit {
        max_power: 50.0,
        time_constant: 0.0,
    });
    let tank = |v: f64, ha: f64| Building {
        capacity: water_tank_capacity(v),
        volume: v,
        conductance: ha,
        setpoint: 28.0,
        peltier: peltier.clone(),
    };
    network(
        fluid,
        plant,
        base.d,
        &runs,
        &hx,
        [tank(7000e-6, 0.53), tank(10400e-6, 0.85)],
        1.0,
    )
}

/// Lab/full ratio of elapsed time for the same nondimensional time.
pub fn lab_time_ratio() -> f64 {
    let (f, l) = (full_scale_base(), lab_scale_base());
    (f.mdot_i / (f.rho * f.d.powi(3))) / (l.mdot_i / (l.rho * l.d.powi(3)))
}

const HOUR: f64 = 3600.0;

/// Synthetic winter day: coldest (−3 °C) at 03:00, mildest (5 °C) at 15:00.
pub fn winter_ambient(hours: usize) -> Profile {
    let points = (0..=hours)
        .map(|h| {
            let phase = 2.0 * PI * (h as f64 - 9.0) / 24.0;
            (h as f64 * HOUR, 1.0 + 4.0 * phase.sin())
        })
        .collect();
    Profile::new(points).expect("sorted")
}

fn windows(spans: &[(f64, f64)], heating: f64, cooling: f64) -> Vec<OccupancyWindow> {
    spans
        .iter()
        .map(|&(a, b)| OccupancyWindow {
            start: a * HOUR,
            end: b * HOUR,
            heating_setpoint: heating,
            cooling_setpoint: cooling,
        })
        .collect()
}

/// Full-scale gains; the lab gains follow from [`PidConfig::time_scaled`].
pub fn full_scale_pid() -> PidConfig {
    PidConfig {
        kp: 0.9,
        ki: 0.9 / 2400.0,
        kd: 0.0,
        sample_time: 60.0,
        u_min: 0.0,
        u_max: 1.0,
        anti_windup: true,
    }
}

/// The 48 h two-building occupancy experiment on the full-scale network.
pub fn full_scale_scenario() -> ExperimentScenario {
    let occupancy = BTreeMap::from([
        ("ThM1".to_string(), windows(&[(12.0, 24.0), (36.0, 48.0)], 20.0, 0.0)),
        (
            "ThM2".to_string(),
            windows(&[(0.0, 2.75), (13.75, 26.75), (37.75, 48.0)], 20.0, 0.0),
        ),
    ]);
    ExperimentScenario {
        duration: 48.0 * HOUR,
        output_interval: 60.0,
        dt: None,
        subsegments: 4,
        ambient: winter_ambient(48),
        supply_temp: None,
        emulation: None,
        occupancy,
        default_cooling_setpoint: 0.0,
        controller: ControllerConfig {
            default: full_scale_pid(),
            ..ControllerConfig::default()
        },
        initial_mass_temps: BTreeMap::from([("ThM1".into(), 20.0), ("ThM2".into(), 20.0)]),
        network_start: NetworkStart::Steady,
        steady_band: 0.5 / 0.45,
        steady_window: 1800.0,
    }
}

/// The same experiment on the lab rig: clock compressed by [`lab_time_ratio`],
/// heating setpoint 28 °C, and the full-scale winter ambient emulated by the
/// Peltier walls against a 22 °C room.
pub fn lab_scenario() -> ExperimentScenario {
    let full = full_scale_scenario();
    let r = lab_time_ratio();
    let k_t = lab_scale_base().t_s / full_scale_base().t_s;
    let mut s = full.time_scaled(r);
    for ws in s.occupancy.values_mut() {
        for w in ws {
            w.heating_setpoint = 28.0;
        }
    }
    s.controller.default = full_scale_pid().time_scaled(k_t, r);
    s.emulation = Some(AmbientEmulation {
        ambient: full.ambient.time_scaled(r),
        supply_temp: full_scale_base().t_s,
        setpoint: 20.0,
    });
    s.ambient = Profile::constant(22.0);
    s.initial_mass_temps = BTreeMap::from([("ThM1".into(), 28.0), ("ThM2".into(), 28.0)]);
    s.steady_band = 0.5;
    s
}
