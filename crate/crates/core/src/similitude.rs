//! π groups, nondimensional trajectories, lab sizing and ambient emulation.
//!
//! The base quantities are the fluid density `ρ`, the plant flow `ṁ_I`, the
//! supply temperature `T_s` and a reference pipe diameter `D`. Temperatures
//! are divided in °C, so `T* = T/T_s`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::hydraulics::{solve_flow_split, FlowState};
use crate::model::{validate_network, NetworkLayout, NetworkModel, PeltierUnit, ThermalMass};
use crate::scenario::{ExperimentScenario, NetworkStart};
use crate::sim::SimulationState;
use crate::thermal::{steady_state, Boundary, StateLayout};
use crate::trajectory::Table;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NondimBase {
    /// [kg/m³]
    pub rho: f64,
    /// [kg/s]
    pub mdot_i: f64,
    /// [°C]
    pub t_s: f64,
    /// [m]
    pub d: f64,
}

impl NondimBase {
    /// Base of a network: its fluid density, plant flow and supply
    /// temperature, and its narrowest pipe.
    pub fn of_model(model: &NetworkModel) -> Self {
        Self {
            rho: model.fluid.rho,
            mdot_i: model.plant.mass_flow,
            t_s: model.plant.supply_temp,
            d: model.reference_diameter(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v > 0.0;
        if ok(self.rho) && ok(self.mdot_i) && ok(self.t_s) && ok(self.d) {
            Ok(())
        } else {
            Err(Error::Domain(format!(
                "nondimensional base must be strictly positive: {self:?}"
            )))
        }
    }

    /// `ρ^a ṁ_I^b T_s^c D^d`.
    pub fn product(&self, e: [i32; 4]) -> f64 {
        self.rho.powi(e[0]) * self.mdot_i.powi(e[1]) * self.t_s.powi(e[2]) * self.d.powi(e[3])
    }

    /// t* per second, `ṁ_I/(ρD³)`.
    pub fn time_factor(&self) -> f64 {
        self.mdot_i / (self.rho * self.d.powi(3))
    }

    /// Pressure unit `ṁ_I²/(ρD⁴)` [Pa].
    pub fn pressure_scale(&self) -> f64 {
        self.mdot_i * self.mdot_i / (self.rho * self.d.powi(4))
    }

    /// Heat-rate unit `ṁ_I³/(ρ²D⁴)` [W].
    pub fn power_scale(&self) -> f64 {
        self.mdot_i.powi(3) / (self.rho * self.rho * self.d.powi(4))
    }

    /// Heat-capacity unit `ṁ_I²/(ρT_sD)` [J/K].
    pub fn capacity_scale(&self) -> f64 {
        self.mdot_i * self.mdot_i / (self.rho * self.t_s * self.d)
    }

    /// Specific-heat unit `ṁ_I²/(T_sρ²D⁴)`.
    pub fn specific_heat_scale(&self) -> f64 {
        self.mdot_i * self.mdot_i / (self.t_s * self.rho * self.rho * self.d.powi(4))
    }

    pub fn approx_eq(&self, other: &NondimBase, rel: f64) -> bool {
        let close = |a: f64, b: f64| (a - b).abs() <= rel * a.abs().max(b.abs());
        close(self.rho, other.rho)
            && close(self.mdot_i, other.mdot_i)
            && close(self.t_s, other.t_s)
            && close(self.d, other.d)
    }
}

pub fn nondim_time(t: f64, base: &NondimBase) -> f64 {
    t * base.time_factor()
}

pub fn nondim_temperature(t: f64, base: &NondimBase) -> f64 {
    t / base.t_s
}

pub fn nondim_thermal_mass_temp(t_thm: f64, t_set: f64, base: &NondimBase) -> f64 {
    (t_thm - t_set) / base.t_s
}

/// `k_T = T_s,lab / T_s,full`.
pub fn temperature_ratio(lab: &NondimBase, full: &NondimBase) -> f64 {
    lab.t_s / full.t_s
}

/// Seconds on `b`'s clock per second on `a`'s clock for equal t*.
pub fn time_ratio(a: &NondimBase, b: &NondimBase) -> f64 {
    a.time_factor() / b.time_factor()
}

/// Which flow normalises π₃ to π₆.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowBasis {
    /// The plant flow ṁ_I: the groups are design constants.
    #[default]
    Design,
    /// The local component flow, for sensitivity studies.
    Local,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentPi {
    pub id: String,
    pub t_star: f64,
    pub pi1: f64,
    pub pi2: f64,
    pub pi3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExchangerPi {
    pub id: String,
    pub t_star: f64,
    pub pi1: f64,
    /// Coil-to-mass exchange in the π₂ form.
    pub pi2: f64,
    pub pi3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassPi {
    pub id: String,
    pub t_star: f64,
    pub pi4: f64,
    pub pi5: f64,
    pub pi6: f64,
}

/// The nondimensional groups of every component at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiGroupSet {
    pub t_star: f64,
    pub segments: Vec<SegmentPi>,
    pub exchangers: Vec<ExchangerPi>,
    pub masses: Vec<MassPi>,
}

/// Temperatures and heat sinks needed to evaluate the groups.
#[derive(Debug, Clone, PartialEq)]
pub struct PointConditions {
    pub time: f64,
    /// Mean temperature per segment.
    pub segment_temps: Vec<f64>,
    pub exchanger_temps: Vec<f64>,
    pub mass_temps: Vec<f64>,
    pub ambient: f64,
    pub peltier: Vec<f64>,
}

impl PointConditions {
    pub fn from_state(state: &SimulationState, layout: &StateLayout) -> Self {
        Self::from_vector(state.time, &state.y, layout, state.ambient, &state.peltier)
    }

    pub fn from_vector(time: f64, y: &[f64], st: &StateLayout, ambient: f64, peltier: &[f64]) -> Self {
        Self {
            time,
            segment_temps: (0..st.n_segments)
                .map(|j| st.segment(j).map(|k| y[k]).sum::<f64>() / st.n_sub as f64)
                .collect(),
            exchanger_temps: (0..st.n_exchangers).map(|i| y[st.exchanger(i)]).collect(),
            mass_temps: (0..st.n_masses).map(|m| y[st.mass(m)]).collect(),
            ambient,
            peltier: peltier.to_vec(),
        }
    }
}

/// Evaluate all groups for the network in the given condition.
pub fn compute_pi_groups(
    model: &NetworkModel,
    flows: &FlowState,
    point: &PointConditions,
    base: &NondimBase,
    basis: FlowBasis,
) -> PiGroupSet {
    let cp = model.fluid.cp;
    let d3 = base.d.powi(3);
    let scale_flow = |local: f64| match basis {
        FlowBasis::Design => base.mdot_i,
        FlowBasis::Local => local,
    };
    let pi3 = |dp: f64, m: f64| {
        let m = scale_flow(m);
        if m > 0.0 {
            dp * base.rho * base.d.powi(4) / (m * m)
        } else {
            0.0
        }
    };
    let segments = model
        .segments
        .iter()
        .enumerate()
        .map(|(j, s)| {
            let v = s.volume();
            let t = point.segment_temps[j];
            SegmentPi {
                id: s.id.clone(),
                t_star: t / base.t_s,
                pi1: flows.segment_flow[j] * d3 / (v * base.mdot_i),
                pi2: s.conductance * (t - point.ambient) * d3 / (cp * v * base.mdot_i * base.t_s),
                pi3: pi3(flows.segment_dp[j], flows.segment_flow[j]),
            }
        })
        .collect();
    let mass_of = |hx_id: &str| model.thermal_masses.iter().position(|m| m.heat_exchanger == hx_id);
    let exchangers = model
        .heat_exchangers
        .iter()
        .enumerate()
        .map(|(i, h)| {
            let t = point.exchanger_temps[i];
            let tm = mass_of(&h.id).map_or(t, |m| point.mass_temps[m]);
            ExchangerPi {
                id: h.id.clone(),
                t_star: t / base.t_s,
                pi1: flows.exchanger_flow[i] * d3 / (h.volume * base.mdot_i),
                pi2: h.conductance * (t - tm) * d3 / (cp * h.volume * base.mdot_i * base.t_s),
                pi3: pi3(flows.exchanger_dp[i], flows.exchanger_flow[i]),
            }
        })
        .collect();
    let masses = model
        .thermal_masses
        .iter()
        .enumerate()
        .map(|(m, tm)| {
            let hx = model.exchanger_index(&tm.heat_exchanger).expect("validated");
            let local = scale_flow(flows.exchanger_flow[hx]);
            let t = point.mass_temps[m];
            let q_in = model.heat_exchangers[hx].conductance * (point.exchanger_temps[hx] - t);
            let q_out = tm.conductance_actual * (t - point.ambient)
                + point.peltier.get(m).copied().unwrap_or(0.0);
            let power = |q: f64| {
                if local > 0.0 {
                    q * base.rho * base.rho * base.d.powi(4) / local.powi(3)
                } else {
                    0.0
                }
            };
            MassPi {
                id: tm.id.clone(),
                t_star: (t - tm.setpoint) / base.t_s,
                pi4: if local > 0.0 {
                    tm.heat_capacity * base.rho * base.t_s * base.d / (local * local)
                } else {
                    0.0
                },
                pi5: power(q_in),
                pi6: power(q_out),
            }
        })
        .collect();
    PiGroupSet {
        t_star: nondim_time(point.time, base),
        segments,
        exchangers,
        masses,
    }
}

/// Ambient temperature seen by a mass whose wall loses `hA_act(T − T_a) + Q_pelt`,
/// expressed through the emulated coefficient `hA_sim`.
pub fn simulated_ambient(t_thm: f64, t_a: f64, q_pelt: f64, ha_act: f64, ha_sim: f64) -> Result<f64> {
    if !(ha_sim > 0.0) {
        return Err(Error::Domain(format!(
            "simulated conductance must be > 0, got {ha_sim}"
        )));
    }
    Ok(-(ha_act / ha_sim) * (t_thm - t_a) - q_pelt / ha_sim + t_thm)
}

/// Peltier power that makes the wall loss equal `hA_sim(T − target)`.
pub fn peltier_power_for_ambient(mass: &ThermalMass, t_thm: f64, t_a: f64, target: f64) -> f64 {
    mass.conductance_simulated * (t_thm - target) - mass.conductance_actual * (t_thm - t_a)
}

/// Power law `hA((T_a − T_set)_lab − k_T(T_a − T_set)_full)`, clamped to the unit limits.
///
/// It coincides with [`peltier_power_for_ambient`] when `hA_sim = hA_act`.
pub fn peltier_power_setpoint(
    mass: &ThermalMass,
    t_a_lab: f64,
    t_a_full: f64,
    t_set_full: f64,
    k_t: f64,
) -> f64 {
    let raw = mass.conductance_actual * ((t_a_lab - mass.setpoint) - k_t * (t_a_full - t_set_full));
    match &mass.peltier {
        Some(unit) => {
            let q = raw.clamp(0.0, unit.max_power);
            if q != raw {
                log::debug!("peltier `{}`: {raw:.3} W clamped to {q:.3} W", mass.id);
            }
            q
        }
        None => raw,
    }
}

/// Lab-side limits and fixed hardware for [`solve_lab_scale`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabConstraints {
    pub base: NondimBase,
    pub cp: f64,
    /// Ambient of the full-scale design day [°C].
    pub full_design_ambient: f64,
    /// Room temperature around the lab rig [°C].
    pub lab_ambient: f64,
    /// Achievable coil conductance `[min, max]` [W/K].
    pub hx_conductance_bounds: Option<[f64; 2]>,
    /// Heat capacities fixed by the built tanks [J/K].
    pub mass_capacity: BTreeMap<String, f64>,
    /// Natural-convection conductances of the built tanks [W/K].
    pub mass_conductance_actual: BTreeMap<String, f64>,
    pub peltier: Option<PeltierUnit>,
    pub pump_pressure_rise: Option<f64>,
}

impl LabConstraints {
    /// Constraints that reproduce `model` unchanged.
    pub fn identity(model: &NetworkModel, design_ambient: f64) -> Self {
        Self {
            base: NondimBase::of_model(model),
            cp: model.fluid.cp,
            full_design_ambient: design_ambient,
            lab_ambient: design_ambient,
            hx_conductance_bounds: None,
            mass_capacity: BTreeMap::new(),
            mass_conductance_actual: BTreeMap::new(),
            peltier: None,
            pump_pressure_rise: None,
        }
    }
}

/// Steady operating point where each mass sits at its setpoint and receives
/// exactly its loss.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignPoint {
    pub valves: Vec<f64>,
    pub flows: FlowState,
    pub point: PointConditions,
    pub q_in: Vec<f64>,
    pub q_out: Vec<f64>,
    /// Masses whose loss exceeds what a fully open valve delivers.
    pub saturated: Vec<String>,
}

fn steady_point(
    model: &NetworkModel,
    layout: &NetworkLayout,
    valves: &[f64],
    ambient: f64,
) -> Result<(FlowState, PointConditions)> {
    let flows = solve_flow_split(model, layout, valves)?;
    let temps: Vec<f64> = model.thermal_masses.iter().map(|m| m.setpoint).collect();
    let b = Boundary {
        supply_temp: model.plant.supply_temp,
        ambient,
    };
    let y = steady_state(model, layout, &flows, 1, b, &temps);
    let st = StateLayout::new(model, 1);
    let point = PointConditions::from_vector(0.0, &y, &st, ambient, &vec![0.0; temps.len()]);
    Ok((flows, point))
}

/// Find valve positions balancing heat delivery against `q_out` for each mass.
pub fn design_point(
    model: &NetworkModel,
    layout: &NetworkLayout,
    ambient: f64,
    q_out: &[f64],
) -> Result<DesignPoint> {
    let n = model.valves.len();
    let mut valves = vec![0.5; n];
    let q_in = |valves: &[f64], lp: &crate::model::LoopLayout| -> Result<f64> {
        let (_, point) = steady_point(model, layout, valves, ambient)?;
        let hx = &model.heat_exchangers[lp.exchanger];
        Ok(hx.conductance * (point.exchanger_temps[lp.exchanger] - point.mass_temps[lp.mass]))
    };
    let mut saturated = Vec::new();
    for sweep in 0..30 {
        let before = valves.clone();
        for lp in &layout.loops {
            let target = q_out[lp.mass];
            let f = |u: f64, valves: &mut Vec<f64>| -> Result<f64> {
                valves[lp.valve] = u;
                Ok(q_in(valves, lp)? - target)
            };
            let mut trial = valves.clone();
            if f(1.0, &mut trial)? < 0.0 {
                valves[lp.valve] = 1.0;
                if sweep == 0 {
                    saturated.push(model.thermal_masses[lp.mass].id.clone());
                }
                continue;
            }
            if f(0.0, &mut trial)? > 0.0 {
                valves[lp.valve] = 0.0;
                continue;
            }
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..60 {
                let mid = 0.5 * (lo + hi);
                if f(mid, &mut trial)? < 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            valves[lp.valve] = 0.5 * (lo + hi);
        }
        let moved = valves
            .iter()
            .zip(&before)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        if moved < 1e-13 {
            break;
        }
    }
    saturated.sort();
    saturated.dedup();
    let (flows, point) = steady_point(model, layout, &valves, ambient)?;
    let q_in: Vec<f64> = model
        .thermal_masses
        .iter()
        .enumerate()
        .map(|(m, tm)| {
            let hx = model.exchanger_index(&tm.heat_exchanger).expect("validated");
            model.heat_exchangers[hx].conductance * (point.exchanger_temps[hx] - point.mass_temps[m])
        })
        .collect();
    Ok(DesignPoint {
        valves,
        flows,
        point,
        q_in,
        q_out: q_out.to_vec(),
        saturated,
    })
}

/// One line of the sizing report.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalingRow {
    pub component: String,
    pub parameter: String,
    pub symbol: String,
    pub full: f64,
    pub lab: f64,
    pub unit: String,
    /// Relative mismatch of the group fixing this value, if any.
    pub residual: Option<f64>,
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Residual {
    pub group: String,
    pub component: String,
    pub full: f64,
    pub lab: f64,
    pub relative: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeasibilityFlag {
    pub constraint: String,
    pub required: f64,
    pub limit: f64,
    pub satisfied: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingSolution {
    pub lab_model: NetworkModel,
    pub design_valves: Vec<f64>,
    pub rows: Vec<ScalingRow>,
    pub residuals: Vec<Residual>,
    pub flags: Vec<FeasibilityFlag>,
    /// Lab seconds per full-scale second.
    pub time_ratio: f64,
    pub k_t: f64,
}

impl ScalingSolution {
    pub fn is_feasible(&self) -> bool {
        self.flags.iter().all(|f| f.satisfied)
    }

    pub fn max_residual(&self, group: &str) -> f64 {
        self.residuals
            .iter()
            .filter(|r| r.group == group)
            .map(|r| r.relative)
            .fold(0.0, f64::max)
    }

    pub fn row(&self, component: &str, symbol: &str) -> Option<&ScalingRow> {
        self.rows
            .iter()
            .find(|r| r.component == component && r.symbol == symbol)
    }

    /// Report as CSV with the columns of the component-value table.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["component", "parameter", "symbol", "full", "lab", "unit", "residual", "flag"])?;
        for r in &self.rows {
            w.write_record([
                r.component.as_str(),
                r.parameter.as_str(),
                r.symbol.as_str(),
                &format!("{:.6e}", r.full),
                &format!("{:.6e}", r.lab),
                r.unit.as_str(),
                &r.residual.map_or(String::new(), |x| format!("{x:.3e}")),
                r.flag.as_str(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }

    /// Human-readable summary.
    pub fn summary(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "time ratio t_lab/t_full = {:.4}, k_T = {:.4}\n",
            self.time_ratio, self.k_t
        ));
        out.push_str(&format!(
            "48 h at full scale runs {:.2} h in the lab\n",
            48.0 * self.time_ratio
        ));
        let mut groups: Vec<&str> = self.residuals.iter().map(|r| r.group.as_str()).collect();
        groups.sort();
        groups.dedup();
        for g in groups {
            out.push_str(&format!("max residual {g:<6} {:.3e}\n", self.max_residual(g)));
        }
        for f in &self.flags {
            out.push_str(&format!(
                "{} {}: required {:.4}, limit {:.4}\n",
                if f.satisfied { "ok  " } else { "FAIL" },
                f.constraint,
                f.required,
                f.limit
            ));
        }
        out
    }
}

fn relative(full: f64, lab: f64) -> f64 {
    let scale = full.abs().max(lab.abs());
    if scale < 1e-300 {
        0.0
    } else {
        (lab - full).abs() / scale
    }
}

/// Size a lab network whose π groups match `full` at its design point.
///
/// Geometry scales with the diameter ratio; lengths follow π₁, pipe losses
/// π₂, loss coefficients π₃, heat capacities π₄, coil conductances and
/// setpoints π₅, and emulated wall conductances π₆. Hardware limits clamp
/// values; the resulting mismatch is reported, never hidden.
pub fn solve_lab_scale(full: &NetworkModel, c: &LabConstraints) -> Result<ScalingSolution> {
    validate_network(full).into_result()?;
    c.base.validate()?;
    let layout = full.layout().map_err(Error::Invalid)?;
    let fb = NondimBase::of_model(full);
    let lb = c.base;
    let k_t = temperature_ratio(&lb, &fb);
    let g = lb.d / fb.d;
    let rho_ratio = fb.rho / lb.rho;
    let power_ratio = lb.power_scale() / fb.power_scale();

    let full_q_out: Vec<f64> = full
        .thermal_masses
        .iter()
        .map(|m| m.conductance_simulated.max(m.conductance_actual) * (m.setpoint - c.full_design_ambient))
        .collect();
    let design = design_point(full, &layout, c.full_design_ambient, &full_q_out)?;
    let pf = compute_pi_groups(full, &design.flows, &design.point, &fb, FlowBasis::Design);
    let lab_t = |t_full: f64| k_t * t_full;

    let mut lab = full.clone();
    lab.fluid.rho = lb.rho;
    lab.fluid.cp = c.cp;
    lab.plant.supply_temp = lb.t_s;
    lab.plant.mass_flow = lb.mdot_i;
    lab.plant.pump_pressure_rise = c
        .pump_pressure_rise
        .unwrap_or(full.plant.pump_pressure_rise * lb.pressure_scale() / fb.pressure_scale());
    lab.plant.heater_volume = full.plant.heater_volume * g.powi(3);
    let heater_full_dt = full.plant.supply_temp - c.full_design_ambient;
    let heater_lab_dt = lb.t_s - c.lab_ambient;
    lab.plant.heater_conductance = if heater_lab_dt > 0.0 {
        full.plant.heater_conductance * power_ratio * heater_full_dt / heater_lab_dt
    } else {
        0.0
    };

    let mut flags = Vec::new();
    let flow_scale = lb.mdot_i / fb.mdot_i;
    for (j, s) in lab.segments.iter_mut().enumerate() {
        let fs = &full.segments[j];
        let p = &pf.segments[j];
        s.diameter = fs.diameter * g;
        let area = PI * s.diameter * s.diameter / 4.0;
        let mdot = design.flows.segment_flow[j] * flow_scale;
        let volume = if p.pi1 > 0.0 {
            mdot * lb.d.powi(3) / (p.pi1 * lb.mdot_i)
        } else {
            fs.volume() * g.powi(3)
        };
        s.length = volume / area;
        s.loss_coeff = fs.loss_coeff * rho_ratio;
        let dt_lab = lab_t(p.t_star * fb.t_s) - c.lab_ambient;
        s.conductance = if p.pi2 == 0.0 {
            0.0
        } else if dt_lab > 0.0 {
            p.pi2 * c.cp * volume * lb.mdot_i * lb.t_s / (dt_lab * lb.d.powi(3))
        } else {
            flags.push(FeasibilityFlag {
                constraint: format!("segment `{}`: lab pipe above room temperature", s.id),
                required: c.lab_ambient,
                limit: lab_t(p.t_star * fb.t_s),
                satisfied: false,
            });
            fs.conductance
        };
    }
    for v in &mut lab.valves {
        v.user_k_range = v.user_k_range.map(|k| k * rho_ratio);
        v.bypass_k_range = v.bypass_k_range.map(|k| k * rho_ratio);
    }
    for (i, h) in lab.heat_exchangers.iter_mut().enumerate() {
        let fh = &full.heat_exchangers[i];
        h.diameter = fh.diameter * g;
        h.volume = fh.volume * g.powi(3);
        h.loss_coeff = fh.loss_coeff * rho_ratio;
        let unconstrained = fh.conductance * power_ratio / k_t;
        h.conductance = match c.hx_conductance_bounds {
            Some([lo, hi]) => unconstrained.clamp(lo, hi),
            None => unconstrained,
        };
    }

    // Masses: the exchanger inlet follows from the matched pipes, so the
    // setpoint is solved to deliver the scaled π₅ heat through the actual coil.
    let mut setpoints = Vec::new();
    for (m, tm) in lab.thermal_masses.iter_mut().enumerate() {
        let ftm = &full.thermal_masses[m];
        let hx = full.exchanger_index(&ftm.heat_exchanger).expect("validated");
        let lp = layout.loops.iter().find(|l| l.mass == m).expect("mass in a loop");
        let inlet_edge = *lp
            .user
            .iter()
            .take_while(|e| !matches!(e, crate::model::EdgeRef::Exchanger(_)))
            .last()
            .unwrap_or(&lp.user[0]);
        let t_in_full = match inlet_edge {
            crate::model::EdgeRef::Segment(j) => design.point.segment_temps[j],
            crate::model::EdgeRef::Exchanger(_) => full.plant.supply_temp,
        };
        let t_in = lab_t(t_in_full);
        let q_in = pf.masses[m].pi5 * lb.power_scale();
        let mdot_hx = design.flows.exchanger_flow[hx] * flow_scale;
        let ha = lab.heat_exchangers[hx].conductance;
        let mc = mdot_hx * c.cp;
        let t_set = if mc > 0.0 && q_in > 0.0 {
            t_in - q_in * (mc + ha) / (ha * mc)
        } else {
            lab_t(ftm.setpoint)
        };
        if !(t_set < lb.t_s) {
            return Err(Error::Infeasible(format!(
                "thermal mass `{}`: setpoint {t_set:.3} °C is not below the supply temperature",
                tm.id
            )));
        }
        tm.setpoint = t_set;
        setpoints.push(t_set);
        tm.heat_capacity = c
            .mass_capacity
            .get(&tm.id)
            .copied()
            .unwrap_or(pf.masses[m].pi4 * lb.capacity_scale());
        tm.volume = ftm.volume * g.powi(3);
        let q_out = pf.masses[m].pi6 * lb.power_scale();
        let design_gap = k_t * (ftm.setpoint - c.full_design_ambient);
        let ha_sim = if design_gap > 0.0 {
            q_out / design_gap
        } else {
            ftm.conductance_simulated * power_ratio / k_t
        };
        tm.conductance_simulated = ha_sim;
        tm.conductance_actual = c
            .mass_conductance_actual
            .get(&tm.id)
            .copied()
            .unwrap_or(ftm.conductance_actual * power_ratio / k_t);
        if let Some(unit) = &c.peltier {
            tm.peltier = Some(unit.clone());
        }
        if let Some(unit) = &tm.peltier {
            let required = q_out - tm.conductance_actual * (t_set - c.lab_ambient);
            flags.push(FeasibilityFlag {
                constraint: format!("thermal mass `{}`: Peltier duty <= max_power", tm.id),
                required,
                limit: unit.max_power,
                satisfied: required <= unit.max_power,
            });
            flags.push(FeasibilityFlag {
                constraint: format!("thermal mass `{}`: Peltier duty >= 0", tm.id),
                required,
                limit: 0.0,
                satisfied: required >= 0.0,
            });
        } else if tm.conductance_actual > 0.0 {
            // Without a Peltier wall the room must provide the design loss.
            let delivered = tm.conductance_actual * (t_set - c.lab_ambient);
            let ok = (delivered - q_out).abs() <= 1e-9 * q_out.abs().max(1.0);
            if !ok {
                flags.push(FeasibilityFlag {
                    constraint: format!("thermal mass `{}`: natural loss matches design loss", tm.id),
                    required: q_out,
                    limit: delivered,
                    satisfied: false,
                });
            }
        }
    }
    for name in &design.saturated {
        flags.push(FeasibilityFlag {
            constraint: format!("thermal mass `{name}`: design load within fully open valve"),
            required: 1.0,
            limit: 1.0,
            satisfied: false,
        });
    }

    // Lab design state: same valves, lab room, masses at their solved setpoints.
    let lab_layout = lab.layout().map_err(Error::Invalid)?;
    let (lab_flows, mut lab_point) = steady_point(&lab, &lab_layout, &design.valves, c.lab_ambient)?;
    for (m, tm) in lab.thermal_masses.iter().enumerate() {
        let q_out = pf.masses[m].pi6 * lb.power_scale();
        lab_point.peltier[m] = q_out - tm.conductance_actual * (tm.setpoint - c.lab_ambient);
    }
    let pl = compute_pi_groups(&lab, &lab_flows, &lab_point, &lb, FlowBasis::Design);

    let mut residuals = Vec::new();
    let mut push = |group: &str, comp: &str, f: f64, l: f64| {
        residuals.push(Residual {
            group: group.into(),
            component: comp.into(),
            full: f,
            lab: l,
            relative: relative(f, l),
        });
    };
    push("t*", "clock", nondim_time(1.0, &fb), nondim_time(time_ratio(&fb, &lb), &lb));
    for (a, b) in pf.segments.iter().zip(&pl.segments) {
        push("T_p*", &a.id, a.t_star, b.t_star);
        push("pi1", &a.id, a.pi1, b.pi1);
        push("pi2", &a.id, a.pi2, b.pi2);
        push("pi3", &a.id, a.pi3, b.pi3);
    }
    for (a, b) in pf.exchangers.iter().zip(&pl.exchangers) {
        push("T_HX*", &a.id, a.t_star, b.t_star);
        push("pi1", &a.id, a.pi1, b.pi1);
        push("pi3", &a.id, a.pi3, b.pi3);
    }
    for (a, b) in pf.masses.iter().zip(&pl.masses) {
        push("T_ThM*", &a.id, a.t_star, b.t_star);
        push("pi4", &a.id, a.pi4, b.pi4);
        push("pi5", &a.id, a.pi5, b.pi5);
        push("pi6", &a.id, a.pi6, b.pi6);
    }

    let res_of = |group: &str, comp: &str| {
        residuals
            .iter()
            .find(|r| r.group == group && r.component == comp)
            .map(|r| r.relative)
    };
    let mut rows = Vec::new();
    let mut row = |component: &str, parameter: &str, symbol: &str, f: f64, l: f64, unit: &str, residual: Option<f64>, flag: &str| {
        rows.push(ScalingRow {
            component: component.into(),
            parameter: parameter.into(),
            symbol: symbol.into(),
            full: f,
            lab: l,
            unit: unit.into(),
            residual,
            flag: flag.into(),
        });
    };
    row("base", "density", "rho", fb.rho, lb.rho, "kg/m3", None, "");
    row("base", "initial mass flow", "mdot_I", fb.mdot_i, lb.mdot_i, "kg/s", None, "");
    row("base", "supply temperature", "T_s", fb.t_s, lb.t_s, "C", None, "");
    row("base", "reference diameter", "D", fb.d, lb.d, "m", None, "");
    row("plant", "pump pressure rise", "dP_pump", full.plant.pump_pressure_rise, lab.plant.pump_pressure_rise, "Pa", None,
        if c.pump_pressure_rise.is_some() { "fixed" } else { "" });
    row("plant", "heater conductance", "hA_heater", full.plant.heater_conductance, lab.plant.heater_conductance, "W/K", None, "");
    for (j, s) in lab.segments.iter().enumerate() {
        let fs = &full.segments[j];
        row(&s.id, "length", "l", fs.length, s.length, "m", res_of("pi1", &s.id), "");
        row(&s.id, "conductive heat transfer", "hA_s", fs.conductance, s.conductance, "W/K", res_of("pi2", &s.id), "");
        row(&s.id, "loss coefficient", "k_tot", fs.loss_coeff, s.loss_coeff, "m3/kg", res_of("pi3", &s.id), "");
        row(&s.id, "design pressure drop", "dP", design.flows.segment_dp[j], lab_flows.segment_dp[j], "Pa", res_of("pi3", &s.id), "");
    }
    for (i, h) in lab.heat_exchangers.iter().enumerate() {
        let fh = &full.heat_exchangers[i];
        let unconstrained = fh.conductance * power_ratio / k_t;
        let bound = (h.conductance - unconstrained).abs() > 1e-12 * unconstrained.abs();
        row(&h.id, "convective heat transfer", "hA_HX", fh.conductance, h.conductance, "W/K", res_of("T_HX*", &h.id),
            if bound { "hardware bound" } else { "" });
        row(&h.id, "design pressure drop", "dP_HX", design.flows.exchanger_dp[i], lab_flows.exchanger_dp[i], "Pa", res_of("pi3", &h.id), "");
    }
    for (m, tm) in lab.thermal_masses.iter().enumerate() {
        let ftm = &full.thermal_masses[m];
        let fixed = c.mass_capacity.contains_key(&tm.id);
        row(&tm.id, "heat capacity", "C", ftm.heat_capacity, tm.heat_capacity, "J/K", res_of("pi4", &tm.id),
            if fixed { "fixed" } else { "" });
        row(&tm.id, "setpoint", "T_set", ftm.setpoint, tm.setpoint, "C", res_of("pi5", &tm.id), "");
        row(&tm.id, "simulated conductance", "hA_sim", ftm.conductance_simulated, tm.conductance_simulated, "W/K", res_of("pi6", &tm.id), "");
        row(&tm.id, "natural conductance", "hA_act", ftm.conductance_actual, tm.conductance_actual, "W/K", None, "");
        row(&tm.id, "design heat loss", "Q_out", design.q_out[m], pf.masses[m].pi6 * lb.power_scale(), "W", res_of("pi6", &tm.id), "");
        row(&tm.id, "design Peltier duty", "Q_pelt", 0.0, lab_point.peltier[m], "W", None,
            if tm.peltier.is_some() { "" } else { "no unit" });
    }
    let _ = setpoints;
    Ok(ScalingSolution {
        lab_model: lab,
        design_valves: design.valves,
        rows,
        residuals,
        flags,
        time_ratio: time_ratio(&fb, &lb),
        k_t,
    })
}

/// Exactly similar copy of `model` and `scenario` on a new base.
///
/// Every π group and the specific-heat group `c_p T_s ρ²D⁴/ṁ_I²` are kept, so
/// the nondimensional equations of the twin are identical to the original's.
pub fn matched_twin(
    model: &NetworkModel,
    scenario: &ExperimentScenario,
    target: &NondimBase,
) -> Result<(NetworkModel, ExperimentScenario)> {
    target.validate()?;
    let src = NondimBase::of_model(model);
    let g = target.d / src.d;
    let k_t = target.t_s / src.t_s;
    let r = time_ratio(&src, target);
    let power = target.power_scale() / src.power_scale();
    let conductance = power / k_t;
    let capacity = target.capacity_scale() / src.capacity_scale();
    let pressure = target.pressure_scale() / src.pressure_scale();
    let rho_ratio = src.rho / target.rho;

    let mut m = model.clone();
    m.fluid.rho = target.rho;
    m.fluid.cp = model.fluid.cp * target.specific_heat_scale() / src.specific_heat_scale();
    m.plant.supply_temp = target.t_s;
    m.plant.mass_flow = target.mdot_i;
    m.plant.pump_pressure_rise *= pressure;
    m.plant.heater_conductance *= conductance;
    m.plant.heater_volume *= g.powi(3);
    for s in &mut m.segments {
        s.length *= g;
        s.diameter *= g;
        s.loss_coeff *= rho_ratio;
        s.conductance *= conductance;
    }
    for v in &mut m.valves {
        v.user_k_range = v.user_k_range.map(|k| k * rho_ratio);
        v.bypass_k_range = v.bypass_k_range.map(|k| k * rho_ratio);
    }
    for h in &mut m.heat_exchangers {
        h.diameter *= g;
        h.volume *= g.powi(3);
        h.loss_coeff *= rho_ratio;
        h.conductance *= conductance;
    }
    for tm in &mut m.thermal_masses {
        tm.heat_capacity *= capacity;
        tm.volume *= g.powi(3);
        tm.conductance_actual *= conductance;
        tm.conductance_simulated *= conductance;
        tm.setpoint *= k_t;
        if let Some(p) = &mut tm.peltier {
            p.max_power *= power;
            p.time_constant *= r;
        }
    }

    let mut s = scenario.time_scaled(r);
    s.ambient = s.ambient.map_values(|v| v * k_t);
    s.supply_temp = s.supply_temp.map(|p| p.map_values(|v| v * k_t));
    for ws in s.occupancy.values_mut() {
        for w in ws {
            w.heating_setpoint *= k_t;
            w.cooling_setpoint *= k_t;
        }
    }
    s.default_cooling_setpoint *= k_t;
    s.controller.default = scenario.controller.default.time_scaled(k_t, r);
    for (id, p) in &mut s.controller.per_mass {
        *p = scenario.controller.per_mass[id].time_scaled(k_t, r);
    }
    for t in s.initial_mass_temps.values_mut() {
        *t *= k_t;
    }
    if let NetworkStart::Uniform(t) = &mut s.network_start {
        *t *= k_t;
    }
    s.steady_band *= k_t;
    Ok((m, s))
}

/// Columns of a nondimensional table derived from a dimensional one.
///
/// `t_s` becomes `t_star`; `_C` columns become `Tstar_` (divided by `T_s`),
/// thermal mass temperatures additionally give `TThMstar_`; heat rates,
/// pressures and flows are divided by their base units; valve positions are kept.
pub fn nondimensionalize(
    table: &Table,
    setpoints: &[(String, f64)],
    recorded: &NondimBase,
    base: &NondimBase,
) -> Result<Table> {
    if !recorded.approx_eq(base, 1e-9) {
        return Err(Error::BaseMismatch(format!(
            "trajectory was recorded with {recorded:?}, asked to use {base:?}"
        )));
    }
    let t = table.column("t_s")?;
    let mut out = Table::new();
    out.push("t_star", t.iter().map(|&x| nondim_time(x, base)).collect());
    for (name, values) in table.iter() {
        if name == "t_s" {
            continue;
        }
        if let Some(stem) = name.strip_suffix("_C") {
            out.push(
                &format!("Tstar_{}", stem.trim_start_matches("T_")),
                values.iter().map(|v| v / base.t_s).collect(),
            );
            if let Some(id) = stem.strip_prefix("T_") {
                if let Some((_, sp)) = setpoints.iter().find(|(m, _)| m == id) {
                    out.push(
                        &format!("TThMstar_{id}"),
                        values.iter().map(|v| (v - sp) / base.t_s).collect(),
                    );
                }
            }
        } else if let Some(stem) = name.strip_suffix("_W") {
            let p = base.power_scale();
            out.push(&format!("Qstar_{stem}"), values.iter().map(|v| v / p).collect());
        } else if let Some(stem) = name.strip_suffix("_Pa") {
            let p = base.pressure_scale();
            out.push(&format!("Pstar_{stem}"), values.iter().map(|v| v / p).collect());
        } else if let Some(stem) = name.strip_suffix("_kgps") {
            out.push(&format!("mstar_{stem}"), values.iter().map(|v| v / base.mdot_i).collect());
        } else if name.ends_with("_frac") {
            out.push(name, values.to_vec());
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal;
    use approx::assert_relative_eq;

    #[test]
    fn time_scaling_of_the_two_day_run() {
        let full = nominal::full_scale_base();
        let lab = nominal::lab_scale_base();
        let t = 48.0 * 3600.0;
        let t_star = nondim_time(t, &full);
        // Oracle: direct evaluation.
        assert_relative_eq!(t_star, t * 20.0 / (971.0 * 1e-3), max_relative = 1e-12);
        assert!((t_star - 3.559e6).abs() < 1e3);
        let lab_hours = t_star / lab.time_factor() / 3600.0;
        assert!((lab_hours - 19.7).abs() < 0.1, "{lab_hours}");
    }

    #[test]
    fn nondim_time_is_additive() {
        let b = nominal::lab_scale_base();
        assert_relative_eq!(nondim_time(3.0, &b) + nondim_time(4.5, &b), nondim_time(7.5, &b), max_relative = 1e-15);
        assert_eq!(nondim_time(0.0, &b), 0.0);
    }

    #[test]
    fn temperature_ratio_of_the_supply_temperatures() {
        let k = temperature_ratio(&nominal::lab_scale_base(), &nominal::full_scale_base());
        assert_relative_eq!(k, 36.0 / 80.0, max_relative = 1e-15);
    }

    #[test]
    fn capacity_group_both_scales() {
        let full = nominal::full_scale_base();
        let lab = nominal::lab_scale_base();
        // Independent evaluation of C·ρT_sD/ṁ² on both sides.
        let full_factor = 971.0 * 80.0 * 0.1 / (20.0 * 20.0);
        let lab_factor = 994.0 * 36.0 * 0.012 / (0.0862 * 0.0862);
        assert_relative_eq!(1.0 / full.capacity_scale(), full_factor, max_relative = 1e-12);
        assert_relative_eq!(1.0 / lab.capacity_scale(), lab_factor, max_relative = 1e-12);
        assert_relative_eq!(full_factor / lab_factor, 3.36e-4, max_relative = 0.01);
        let c_lab = 0.15e9 * full_factor / lab_factor;
        assert!((c_lab - 50.4e3).abs() < 0.2e3, "{c_lab}");
    }

    #[test]
    fn simulated_ambient_identity_and_round_trip() {
        assert_eq!(simulated_ambient(25.0, 22.0, 0.0, 2.0, 2.0).unwrap(), 22.0);
        assert!(simulated_ambient(25.0, 22.0, 1.0, 2.0, 0.0).is_err());
        let mut tm = nominal::lab_scale_model().thermal_masses[0].clone();
        tm.conductance_actual = 1.3;
        tm.conductance_simulated = 2.1;
        let target = 14.2;
        let q = peltier_power_for_ambient(&tm, 27.0, 22.0, target);
        let back = simulated_ambient(27.0, 22.0, q, tm.conductance_actual, tm.conductance_simulated).unwrap();
        assert!((back - target).abs() < 1e-9);
    }

    #[test]
    fn forty_watts_emulates_minus_five() {
        let mut tm = nominal::lab_scale_model().thermal_masses[0].clone();
        tm.conductance_actual = 5.5;
        tm.conductance_simulated = 5.5;
        tm.setpoint = 26.0;
        let k_t = 36.0 / 80.0;
        let q = peltier_power_setpoint(&tm, 22.0, -5.0, 20.0, k_t);
        assert!((q - 40.0).abs() < 1.0, "{q}");
        assert!(q <= tm.peltier.as_ref().unwrap().max_power);
        let t_a_sim = simulated_ambient(26.0, 22.0, q, 5.5, 5.5).unwrap();
        // Mapped back to the full scale through T_ThM* matching.
        let full = 20.0 + (t_a_sim - 26.0) / k_t;
        assert!((full + 5.0).abs() < 1e-9, "{full}");
    }

    #[test]
    fn no_mismatch_gives_zero_power() {
        let tm = nominal::lab_scale_model().thermal_masses[0].clone();
        let k_t = 0.45;
        let t_a_full = 20.0 + (22.0 - tm.setpoint) / k_t;
        assert!(peltier_power_setpoint(&tm, 22.0, t_a_full, 20.0, k_t).abs() < 1e-12);
    }

    #[test]
    fn zero_flow_zero_drop_groups_vanish() {
        let model = nominal::lab_scale_model();
        let flows = FlowState {
            segment_flow: vec![0.0; model.segments.len()],
            segment_dp: vec![0.0; model.segments.len()],
            exchanger_flow: vec![0.0; 2],
            exchanger_dp: vec![0.0; 2],
            valve_dp: vec![[0.0; 2]; 2],
            loop_flow: vec![0.0; 2],
            loop_dp: vec![0.0; 2],
            network_dp: 0.0,
        };
        let point = PointConditions {
            time: 0.0,
            segment_temps: vec![30.0; model.segments.len()],
            exchanger_temps: vec![30.0; 2],
            mass_temps: vec![28.0; 2],
            ambient: 22.0,
            peltier: vec![0.0; 2],
        };
        let pi = compute_pi_groups(&model, &flows, &point, &NondimBase::of_model(&model), FlowBasis::Design);
        for s in &pi.segments {
            assert_eq!(s.pi1, 0.0);
            assert_eq!(s.pi3, 0.0);
        }
    }

    #[test]
    fn identity_scaling_returns_the_input() {
        let full = nominal::full_scale_model();
        let c = LabConstraints::identity(&full, -5.0);
        let sol = solve_lab_scale(&full, &c).unwrap();
        for r in &sol.residuals {
            assert!(r.relative < 1e-12, "{r:?}");
        }
        for (a, b) in full.segments.iter().zip(&sol.lab_model.segments) {
            assert_relative_eq!(a.length, b.length, max_relative = 1e-12);
            assert_relative_eq!(a.conductance, b.conductance, max_relative = 1e-12);
            assert_relative_eq!(a.loss_coeff, b.loss_coeff, max_relative = 1e-12);
        }
        for (a, b) in full.thermal_masses.iter().zip(&sol.lab_model.thermal_masses) {
            assert_relative_eq!(a.heat_capacity, b.heat_capacity, max_relative = 1e-12);
            assert_relative_eq!(a.setpoint, b.setpoint, max_relative = 1e-9);
            assert_relative_eq!(a.conductance_simulated, b.conductance_simulated, max_relative = 1e-12);
        }
    }
}
