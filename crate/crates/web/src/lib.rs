//! Browser demo bindings.
//!
//! Each operation takes and returns JSON so the page stays framework free.
//! The `*_json` functions are plain Rust and are what the tests exercise;
//! the `#[wasm_bindgen]` exports wrap them.

use dhnsim::harness::{self, MetricsOptions};
use dhnsim::nominal;
use dhnsim::scenario::{ExperimentScenario, Phase, Profile};
use dhnsim::sim;
use dhnsim::similitude::{nondimensionalize, solve_lab_scale, NondimBase};
use dhnsim::trajectory::{trajectory_table, Table};
use serde::{Deserialize, Serialize};
use wasm_bindgen::prelude::*;

/// Upper bound on points per series sent back to the page.
const MAX_POINTS: usize = 600;

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct ScaleInput {
    pub rho: f64,
    pub mdot_i: f64,
    pub t_s: f64,
    pub d: f64,
    pub peltier_max_power: f64,
}

impl Default for ScaleInput {
    fn default() -> Self {
        let b = nominal::lab_scale_base();
        Self {
            rho: b.rho,
            mdot_i: b.mdot_i,
            t_s: b.t_s,
            d: b.d,
            peltier_max_power: 50.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleRow {
    pub component: String,
    pub parameter: String,
    pub full: f64,
    pub lab: f64,
    pub unit: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct ScaleOutput {
    pub time_ratio: f64,
    pub lab_hours_for_48h: f64,
    pub k_t: f64,
    pub feasible: bool,
    pub rows: Vec<ScaleRow>,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Series {
    pub name: String,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct SimulateInput {
    /// Full-scale hours of the two-day experiment to replay on the lab clock.
    pub full_hours: f64,
    /// Heating setpoint of the occupied windows [°C].
    pub heating_setpoint: f64,
    pub kp: f64,
}

impl Default for SimulateInput {
    fn default() -> Self {
        Self {
            full_hours: 48.0,
            heating_setpoint: 28.0,
            kp: nominal::lab_scenario().controller.default.kp,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SimulateOutput {
    pub t_hours: Vec<f64>,
    pub series: Vec<Series>,
    pub efficiency_overall: Option<f64>,
    pub efficiency_heating: Option<f64>,
    pub summary: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(default)]
pub struct DelayInput {
    /// Supply oscillation period [s].
    pub period: f64,
    /// Supply oscillation amplitude [K].
    pub amplitude: f64,
    /// Plant flow as a fraction of design.
    pub flow_fraction: f64,
}

impl Default for DelayInput {
    fn default() -> Self {
        Self {
            period: 1200.0,
            amplitude: 1.5,
            flow_fraction: 1.0,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct DelayOutput {
    pub t_seconds: Vec<f64>,
    pub supply: Vec<f64>,
    pub ret: Vec<f64>,
    pub delay_seconds: f64,
    pub delay_t_star: f64,
    pub residence_seconds: f64,
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn parse<T: for<'de> Deserialize<'de> + Default>(input: &str) -> Result<T, String> {
    if input.trim().is_empty() {
        return Ok(T::default());
    }
    serde_json::from_str(input).map_err(err)
}

fn stride(n: usize) -> usize {
    n.div_ceil(MAX_POINTS).max(1)
}

fn thin(values: &[f64], step: usize) -> Vec<f64> {
    values.iter().step_by(step).copied().collect()
}

fn column(table: &Table, name: &str, step: usize) -> Result<Series, String> {
    Ok(Series {
        name: name.to_string(),
        values: thin(table.column(name).map_err(err)?, step),
    })
}

/// Size the lab network from the full-scale reference for a chosen lab base.
pub fn scale_json(input: &str) -> Result<String, String> {
    let input: ScaleInput = parse(input)?;
    let mut c = nominal::lab_constraints();
    c.base = NondimBase {
        rho: input.rho,
        mdot_i: input.mdot_i,
        t_s: input.t_s,
        d: input.d,
    };
    if let Some(p) = &mut c.peltier {
        p.max_power = input.peltier_max_power;
    }
    let sol = solve_lab_scale(&nominal::full_scale_model(), &c).map_err(err)?;
    let out = ScaleOutput {
        time_ratio: sol.time_ratio,
        lab_hours_for_48h: 48.0 * sol.time_ratio,
        k_t: sol.k_t,
        feasible: sol.is_feasible(),
        rows: sol
            .rows
            .iter()
            .map(|r| ScaleRow {
                component: r.component.clone(),
                parameter: r.parameter.clone(),
                full: r.full,
                lab: r.lab,
                unit: r.unit.clone(),
            })
            .collect(),
        violations: sol
            .flags
            .iter()
            .filter(|f| !f.satisfied)
            .map(|f| format!("{}: required {:.3}, limit {:.3}", f.constraint, f.required, f.limit))
            .collect(),
    };
    serde_json::to_string(&out).map_err(err)
}

/// Run the lab experiment and return thermal mass temperatures.
pub fn simulate_json(input: &str) -> Result<String, String> {
    let input: SimulateInput = parse(input)?;
    if !(input.full_hours > 0.0 && input.full_hours <= 48.0) {
        return Err("full_hours must be in (0, 48]".into());
    }
    let model = nominal::lab_scale_model();
    let mut sc = nominal::lab_scenario();
    sc.duration = input.full_hours * 3600.0 * nominal::lab_time_ratio();
    sc.controller.default.kp = input.kp;
    for ws in sc.occupancy.values_mut() {
        for w in ws {
            w.heating_setpoint = input.heating_setpoint;
        }
    }
    let traj = sim::simulate(&model, &sc).map_err(err)?;
    let table = trajectory_table(&model, &traj).map_err(err)?;
    let base = traj.meta.base;
    let nd = nondimensionalize(&table, &traj.meta.mass_setpoints, &base, &base).map_err(err)?;
    let opts = MetricsOptions {
        band: sc.steady_band,
        window: sc.steady_window,
        ..MetricsOptions::default()
    };
    let report = harness::metrics(&table, &nd, &model, &base, &opts).map_err(err)?;
    let step = stride(table.rows());
    let t = table.column("t_s").map_err(err)?;
    let mut series = Vec::new();
    for name in ["T_ThM1_C", "T_ThM2_C", "Tset_ThM1_C", "Tset_ThM2_C", "Tasim_ThM1_C", "Tasim_ThM2_C"] {
        series.push(column(&table, name, step)?);
    }
    let out = SimulateOutput {
        t_hours: t.iter().step_by(step).map(|s| s / 3600.0).collect(),
        series,
        efficiency_overall: report.efficiency(Phase::Overall),
        efficiency_heating: report.efficiency(Phase::Heating),
        summary: report.to_text(),
    };
    serde_json::to_string(&out).map_err(err)
}

/// Oscillate the supply temperature and time the return response.
pub fn delay_json(input: &str) -> Result<String, String> {
    let input: DelayInput = parse(input)?;
    if !(input.period >= 120.0 && input.amplitude > 0.0 && input.flow_fraction > 0.0) {
        return Err("need period >= 120 s, amplitude > 0 and flow_fraction > 0".into());
    }
    let mut model = nominal::lab_scale_model();
    model.plant.mass_flow *= input.flow_fraction;
    let sizing = solve_lab_scale(&nominal::full_scale_model(), &nominal::lab_constraints()).map_err(err)?;
    let duration = 6.0 * input.period;
    let mut sc = ExperimentScenario::constant(&model, duration, 22.0);
    sc.controller.fixed_valves = Some(sizing.design_valves);
    sc.output_interval = sc.controller.default.sample_time;
    let n = (duration / 10.0).ceil() as usize;
    let supply_temp = model.plant.supply_temp;
    sc.supply_temp = Profile::new(
        (0..=n)
            .map(|k| {
                let t = k as f64 * 10.0;
                (t, supply_temp + input.amplitude * (2.0 * std::f64::consts::PI * t / input.period).sin())
            })
            .collect(),
    );
    let traj = sim::simulate(&model, &sc).map_err(err)?;
    let table = trajectory_table(&model, &traj).map_err(err)?;
    let col = |name: &str| table.column(name).map_err(err);
    let d = harness::peak_valley_delay(col("t_s")?, col("T_supply_C")?, col("T_return_C")?, 0.05 * input.amplitude / 1.5, &traj.meta.base)
        .map_err(err)?;
    let residence = harness::residence_delay(&model, &traj.samples[0].flows).map_err(err)?;
    let step = stride(table.rows());
    let out = DelayOutput {
        t_seconds: thin(col("t_s")?, step),
        supply: thin(col("T_supply_C")?, step),
        ret: thin(col("T_return_C")?, step),
        delay_seconds: d.seconds,
        delay_t_star: d.t_star,
        residence_seconds: residence,
    };
    serde_json::to_string(&out).map_err(err)
}

#[wasm_bindgen]
pub fn scale(input: &str) -> Result<String, JsValue> {
    scale_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn simulate(input: &str) -> Result<String, JsValue> {
    simulate_json(input).map_err(|e| JsValue::from_str(&e))
}

#[wasm_bindgen]
pub fn delay(input: &str) -> Result<String, JsValue> {
    delay_json(input).map_err(|e| JsValue::from_str(&e))
}
