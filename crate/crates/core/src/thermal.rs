//! Lumped thermal dynamics of pipes, heat exchangers and thermal masses.
//!
//! Each pipe segment is split into `n_sub` well-mixed volumes in series. The
//! state vector holds the sub-volume temperatures (segment-major), then one
//! temperature per heat exchanger, then one per thermal mass, then a few
//! running energy integrals that ride along with the integrator.

use crate::hydraulics::FlowState;
use crate::model::{EdgeRef, FluidProperties, HeatExchanger, NetworkLayout, NetworkModel, PipeSegment, ThermalMass};
use crate::{Error, Result};

/// `dT/dt` of a well-mixed pipe volume.
pub fn pipe_temp_rhs(
    segment: &PipeSegment,
    fluid: &FluidProperties,
    t_pipe: f64,
    t_in: f64,
    t_ambient: f64,
    mdot: f64,
) -> f64 {
    mixed_volume_rhs(
        fluid,
        segment.volume(),
        segment.conductance,
        t_pipe,
        t_in,
        t_ambient,
        mdot,
    )
}

/// `dT/dt` of the heat exchanger water, exchanging with its thermal mass.
pub fn hx_temp_rhs(
    hx: &HeatExchanger,
    fluid: &FluidProperties,
    t_hx: f64,
    t_in: f64,
    t_mass: f64,
    mdot: f64,
) -> f64 {
    mixed_volume_rhs(fluid, hx.volume, hx.conductance, t_hx, t_in, t_mass, mdot)
}

/// `C·dT/dt = hA_HX(T_HX − T) − hA_act(T − T_a) − Q_pelt`, divided by `C`.
pub fn thermal_mass_rhs(
    mass: &ThermalMass,
    hx: &HeatExchanger,
    t_mass: f64,
    t_hx: f64,
    t_ambient: f64,
    q_pelt: f64,
) -> f64 {
    (hx.conductance * (t_hx - t_mass) - mass.conductance_actual * (t_mass - t_ambient) - q_pelt)
        / mass.heat_capacity
}

fn mixed_volume_rhs(
    fluid: &FluidProperties,
    volume: f64,
    conductance: f64,
    t: f64,
    t_in: f64,
    t_sink: f64,
    mdot: f64,
) -> f64 {
    let m = fluid.rho * volume;
    mdot / m * (t_in - t) - conductance / (m * fluid.cp) * (t - t_sink)
}

/// Energy integrals carried in the state vector [J].
pub const ENERGY_CHANNELS: usize = 6;

/// Indices of the running energy integrals.
pub mod energy {
    /// `∫ ṁ_I c_p (T_s − T_r) dt`, heat delivered by the plant to the fluid.
    pub const SUPPLIED: usize = 0;
    /// Pipe losses to ambient.
    pub const PIPE_LOSS: usize = 1;
    /// Heat passed from exchangers into thermal masses.
    pub const DELIVERED: usize = 2;
    /// Thermal mass losses to the physical ambient.
    pub const MASS_LOSS: usize = 3;
    /// Heat pumped out by Peltier units.
    pub const PELTIER: usize = 4;
    /// Heater shell losses.
    pub const HEATER_LOSS: usize = 5;
}

/// Offsets into the flat state vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateLayout {
    pub n_sub: usize,
    pub n_segments: usize,
    pub n_exchangers: usize,
    pub n_masses: usize,
}

impl StateLayout {
    pub fn new(model: &NetworkModel, n_sub: usize) -> Self {
        Self {
            n_sub: n_sub.max(1),
            n_segments: model.segments.len(),
            n_exchangers: model.heat_exchangers.len(),
            n_masses: model.thermal_masses.len(),
        }
    }

    pub fn segment(&self, j: usize) -> std::ops::Range<usize> {
        j * self.n_sub..(j + 1) * self.n_sub
    }

    pub fn exchanger(&self, i: usize) -> usize {
        self.n_segments * self.n_sub + i
    }

    pub fn mass(&self, m: usize) -> usize {
        self.n_segments * self.n_sub + self.n_exchangers + m
    }

    pub fn energy(&self, k: usize) -> usize {
        self.temperatures() + k
    }

    /// Number of temperature entries.
    pub fn temperatures(&self) -> usize {
        self.n_segments * self.n_sub + self.n_exchangers + self.n_masses
    }

    pub fn len(&self) -> usize {
        self.temperatures() + ENERGY_CHANNELS
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Boundary values for one right-hand-side evaluation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Boundary {
    pub supply_temp: f64,
    pub ambient: f64,
}

/// Temperatures at named points, derived from a state vector.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeTemperatures {
    pub segment_inlet: Vec<f64>,
    pub exchanger_inlet: Vec<f64>,
    pub return_temp: f64,
}

/// Right-hand side of the network ODE for frozen flows and Peltier powers.
#[derive(Debug, Clone, Copy)]
pub struct Dynamics<'a> {
    pub model: &'a NetworkModel,
    pub layout: &'a NetworkLayout,
    pub state: StateLayout,
    pub flows: &'a FlowState,
    pub peltier: &'a [f64],
}

impl<'a> Dynamics<'a> {
    /// Walk a chain of edges, writing derivatives when `dy` is given.
    #[allow(clippy::too_many_arguments)]
    fn walk(
        &self,
        chain: &[EdgeRef],
        mut t: f64,
        y: &[f64],
        ambient: f64,
        mut dy: Option<&mut [f64]>,
        nodes: &mut Option<&mut NodeTemperatures>,
        loop_mass: Option<usize>,
    ) -> f64 {
        let fluid = &self.model.fluid;
        let n = self.state.n_sub as f64;
        for &e in chain {
            match e {
                EdgeRef::Segment(j) => {
                    let seg = &self.model.segments[j];
                    let m = self.flows.segment_flow[j];
                    let (v, ha) = (seg.volume() / n, seg.conductance / n);
                    if let Some(nt) = nodes.as_deref_mut() {
                        nt.segment_inlet[j] = t;
                    }
                    for k in self.state.segment(j) {
                        if let Some(dy) = dy.as_deref_mut() {
                            dy[k] = mixed_volume_rhs(fluid, v, ha, y[k], t, ambient, m);
                        }
                        t = y[k];
                    }
                }
                EdgeRef::Exchanger(i) => {
                    let hx = &self.model.heat_exchangers[i];
                    let k = self.state.exchanger(i);
                    if let Some(nt) = nodes.as_deref_mut() {
                        nt.exchanger_inlet[i] = t;
                    }
                    if let Some(dy) = dy.as_deref_mut() {
                        let tm = y[self.state.mass(loop_mass.expect("exchanger inside a loop"))];
                        dy[k] = hx_temp_rhs(hx, fluid, y[k], t, tm, self.flows.exchanger_flow[i]);
                    }
                    t = y[k];
                }
            }
        }
        t
    }

    fn propagate(
        &self,
        y: &[f64],
        b: Boundary,
        mut dy: Option<&mut [f64]>,
        mut nodes: Option<&mut NodeTemperatures>,
    ) -> f64 {
        let total = self.model.plant.mass_flow;
        let t_split = self.walk(
            &self.layout.supply_trunk,
            b.supply_temp,
            y,
            b.ambient,
            dy.as_deref_mut(),
            &mut nodes,
            None,
        );
        let mut mixed = 0.0;
        for (lp, &m) in self.layout.loops.iter().zip(&self.flows.loop_flow) {
            let t1 = self.walk(&lp.supply, t_split, y, b.ambient, dy.as_deref_mut(), &mut nodes, None);
            let mu = self.flows.edge_flow(lp.user[0]);
            let mb = self.flows.edge_flow(lp.bypass[0]);
            let tu = self.walk(&lp.user, t1, y, b.ambient, dy.as_deref_mut(), &mut nodes, Some(lp.mass));
            let tb = self.walk(&lp.bypass, t1, y, b.ambient, dy.as_deref_mut(), &mut nodes, None);
            let t_merge = if mu + mb > 0.0 {
                (mu * tu + mb * tb) / (mu + mb)
            } else {
                t1
            };
            let t_out = self.walk(&lp.ret, t_merge, y, b.ambient, dy.as_deref_mut(), &mut nodes, None);
            mixed += m * t_out;
        }
        let t_main = if self.layout.loops.is_empty() {
            t_split
        } else {
            mixed / total
        };
        let t_r = self.walk(
            &self.layout.return_trunk,
            t_main,
            y,
            b.ambient,
            dy,
            &mut nodes,
            None,
        );
        if let Some(nt) = nodes {
            nt.return_temp = t_r;
        }
        t_r
    }

    /// Inlet temperatures of every edge and the plant return temperature.
    pub fn node_temperatures(&self, y: &[f64], b: Boundary) -> NodeTemperatures {
        let mut nt = NodeTemperatures {
            segment_inlet: vec![0.0; self.model.segments.len()],
            exchanger_inlet: vec![0.0; self.model.heat_exchangers.len()],
            return_temp: 0.0,
        };
        self.propagate(y, b, None, Some(&mut nt));
        nt
    }

    /// Fill `dy` with the time derivative of `y`.
    pub fn derivative(&self, y: &[f64], b: Boundary, dy: &mut [f64]) {
        let t_r = self.propagate(y, b, Some(dy), None);
        let model = self.model;
        let st = self.state;
        let mut delivered = 0.0;
        let mut mass_loss = 0.0;
        let mut pelt = 0.0;
        for lp in &self.layout.loops {
            let mass = &model.thermal_masses[lp.mass];
            let hx = &model.heat_exchangers[lp.exchanger];
            let tm = y[st.mass(lp.mass)];
            let th = y[st.exchanger(lp.exchanger)];
            let q = self.peltier.get(lp.mass).copied().unwrap_or(0.0);
            dy[st.mass(lp.mass)] = thermal_mass_rhs(mass, hx, tm, th, b.ambient, q);
            delivered += hx.conductance * (th - tm);
            mass_loss += mass.conductance_actual * (tm - b.ambient);
            pelt += q;
        }
        let n = st.n_sub as f64;
        let mut pipe_loss = 0.0;
        for (j, seg) in model.segments.iter().enumerate() {
            let ha = seg.conductance / n;
            pipe_loss += st.segment(j).map(|k| ha * (y[k] - b.ambient)).sum::<f64>();
        }
        let plant = &model.plant;
        dy[st.energy(energy::SUPPLIED)] = plant.mass_flow * model.fluid.cp * (b.supply_temp - t_r);
        dy[st.energy(energy::PIPE_LOSS)] = pipe_loss;
        dy[st.energy(energy::DELIVERED)] = delivered;
        dy[st.energy(energy::MASS_LOSS)] = mass_loss;
        dy[st.energy(energy::PELTIER)] = pelt;
        dy[st.energy(energy::HEATER_LOSS)] = plant.heater_conductance * (b.supply_temp - b.ambient);
    }

    /// Shortest relaxation time of any state [s].
    pub fn min_time_constant(&self) -> f64 {
        min_time_constant(self.model, self.layout, self.flows, self.state.n_sub)
    }
}

/// Shortest relaxation time `ρc_pV/(ṁc_p + hA)` or `C/(hA_HX + hA_act)`.
pub fn min_time_constant(
    model: &NetworkModel,
    layout: &NetworkLayout,
    flows: &FlowState,
    n_sub: usize,
) -> f64 {
    let fluid = &model.fluid;
    let n = n_sub.max(1) as f64;
    let mut tau = f64::INFINITY;
    for (j, seg) in model.segments.iter().enumerate() {
        let c = fluid.rho * fluid.cp * seg.volume() / n;
        let g = flows.segment_flow[j] * fluid.cp + seg.conductance / n;
        if g > 0.0 {
            tau = tau.min(c / g);
        }
    }
    for (i, hx) in model.heat_exchangers.iter().enumerate() {
        let c = fluid.rho * fluid.cp * hx.volume;
        let g = flows.exchanger_flow[i] * fluid.cp + hx.conductance;
        tau = tau.min(c / g);
    }
    for lp in &layout.loops {
        let mass = &model.thermal_masses[lp.mass];
        let g = model.heat_exchangers[lp.exchanger].conductance + mass.conductance_actual;
        if g > 0.0 {
            tau = tau.min(mass.heat_capacity / g);
        }
    }
    tau
}

/// Largest step accepted by [`rk4_step`], as a fraction of the shortest time constant.
pub const STABILITY_FRACTION: f64 = 0.5;

/// Reusable RK4 stage buffers.
#[derive(Debug, Clone, Default)]
pub struct Rk4Workspace {
    k1: Vec<f64>,
    k2: Vec<f64>,
    k3: Vec<f64>,
    k4: Vec<f64>,
    tmp: Vec<f64>,
}

/// Advance `y` by one classical Runge-Kutta step.
///
/// `boundary(t)` supplies T_s and T_a at stage times; flows and Peltier
/// powers stay frozen over the step.
pub fn rk4_step(
    dynamics: &Dynamics<'_>,
    y: &mut [f64],
    t: f64,
    dt: f64,
    boundary: &dyn Fn(f64) -> Boundary,
    ws: &mut Rk4Workspace,
) {
    let n = y.len();
    for v in [&mut ws.k1, &mut ws.k2, &mut ws.k3, &mut ws.k4, &mut ws.tmp] {
        v.resize(n, 0.0);
    }
    let b0 = boundary(t);
    let bh = boundary(t + 0.5 * dt);
    let b1 = boundary(t + dt);
    let stage = |tmp: &mut [f64], y: &[f64], k: &[f64], h: f64| {
        for ((t, &yi), &ki) in tmp.iter_mut().zip(y).zip(k) {
            *t = yi + h * ki;
        }
    };
    dynamics.derivative(y, b0, &mut ws.k1);
    stage(&mut ws.tmp, y, &ws.k1, 0.5 * dt);
    dynamics.derivative(&ws.tmp, bh, &mut ws.k2);
    stage(&mut ws.tmp, y, &ws.k2, 0.5 * dt);
    dynamics.derivative(&ws.tmp, bh, &mut ws.k3);
    stage(&mut ws.tmp, y, &ws.k3, dt);
    dynamics.derivative(&ws.tmp, b1, &mut ws.k4);
    for (i, yi) in y.iter_mut().enumerate() {
        *yi += dt / 6.0 * (ws.k1[i] + 2.0 * ws.k2[i] + 2.0 * ws.k3[i] + ws.k4[i]);
    }
}

/// Reject steps beyond the stability bound.
pub fn check_step(dt: f64, tau_min: f64) -> Result<()> {
    let limit = STABILITY_FRACTION * tau_min;
    if !(dt > 0.0) || dt > limit {
        return Err(Error::StepTooLarge {
            dt,
            suggested: limit,
        });
    }
    Ok(())
}

/// Steady temperatures of all pipe and exchanger volumes for fixed mass temperatures.
///
/// Returns a full state vector (energy integrals zero) with the thermal
/// masses at `mass_temps`.
pub fn steady_state(
    model: &NetworkModel,
    layout: &NetworkLayout,
    flows: &FlowState,
    n_sub: usize,
    b: Boundary,
    mass_temps: &[f64],
) -> Vec<f64> {
    let st = StateLayout::new(model, n_sub);
    let mut y = vec![0.0; st.len()];
    for (m, &t) in mass_temps.iter().enumerate() {
        y[st.mass(m)] = t;
    }
    let fluid = &model.fluid;
    let n = st.n_sub as f64;
    let relax = |t_in: f64, mdot: f64, ha: f64, sink: f64| {
        let g = mdot * fluid.cp;
        if g + ha > 0.0 {
            (g * t_in + ha * sink) / (g + ha)
        } else {
            t_in
        }
    };
    let walk = |chain: &[EdgeRef], mut t: f64, y: &mut Vec<f64>, mass: Option<usize>| {
        for &e in chain {
            match e {
                EdgeRef::Segment(j) => {
                    let seg = &model.segments[j];
                    for k in st.segment(j) {
                        t = relax(t, flows.segment_flow[j], seg.conductance / n, b.ambient);
                        y[k] = t;
                    }
                }
                EdgeRef::Exchanger(i) => {
                    let hx = &model.heat_exchangers[i];
                    let tm = y[st.mass(mass.expect("exchanger inside a loop"))];
                    t = relax(t, flows.exchanger_flow[i], hx.conductance, tm);
                    y[st.exchanger(i)] = t;
                }
            }
        }
        t
    };
    let t_split = walk(&layout.supply_trunk, b.supply_temp, &mut y, None);
    let mut mixed = 0.0;
    for (lp, &m) in layout.loops.iter().zip(&flows.loop_flow) {
        let t1 = walk(&lp.supply, t_split, &mut y, None);
        let mu = flows.edge_flow(lp.user[0]);
        let mb = flows.edge_flow(lp.bypass[0]);
        let tu = walk(&lp.user, t1, &mut y, Some(lp.mass));
        let tb = walk(&lp.bypass, t1, &mut y, None);
        let tm = if mu + mb > 0.0 {
            (mu * tu + mb * tb) / (mu + mb)
        } else {
            t1
        };
        mixed += m * walk(&lp.ret, tm, &mut y, None);
    }
    let t_main = if layout.loops.is_empty() {
        t_split
    } else {
        mixed / model.plant.mass_flow
    };
    walk(&layout.return_trunk, t_main, &mut y, None);
    y
}

/// Heat stored in the fluid relative to 0 °C, `Σ ρc_pV·T` [J].
pub fn fluid_energy(model: &NetworkModel, st: &StateLayout, y: &[f64]) -> f64 {
    let fluid = &model.fluid;
    let n = st.n_sub as f64;
    let pipes: f64 = model
        .segments
        .iter()
        .enumerate()
        .map(|(j, s)| fluid.rho * fluid.cp * s.volume() / n * st.segment(j).map(|k| y[k]).sum::<f64>())
        .sum();
    let hx: f64 = model
        .heat_exchangers
        .iter()
        .enumerate()
        .map(|(i, h)| fluid.rho * fluid.cp * h.volume * y[st.exchanger(i)])
        .sum();
    pipes + hx
}

/// Heat stored in the thermal masses relative to 0 °C [J].
pub fn mass_energy(model: &NetworkModel, st: &StateLayout, y: &[f64]) -> f64 {
    model
        .thermal_masses
        .iter()
        .enumerate()
        .map(|(m, tm)| tm.heat_capacity * y[st.mass(m)])
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hydraulics::solve_flow_split;
    use crate::nominal;
    use approx::assert_relative_eq;

    fn pipe() -> PipeSegment {
        PipeSegment {
            id: "p".into(),
            length: 10.0,
            diameter: 0.02,
            loss_coeff: 0.0,
            conductance: 2.0,
            upstream: "a".into(),
            downstream: "b".into(),
        }
    }

    #[test]
    fn equal_inlet_without_loss_is_stationary() {
        let mut p = pipe();
        p.conductance = 0.0;
        let f = FluidProperties::water();
        assert_eq!(pipe_temp_rhs(&p, &f, 50.0, 50.0, 10.0, 0.1), 0.0);
    }

    #[test]
    fn pipe_rhs_matches_hand_value() {
        let p = pipe();
        let f = FluidProperties::water();
        let v = std::f64::consts::PI / 4.0 * 0.02 * 0.02 * 10.0;
        let expected = 0.1 / (f.rho * v) * (60.0 - 50.0) - 2.0 / (f.rho * f.cp * v) * (50.0 - 10.0);
        assert_relative_eq!(pipe_temp_rhs(&p, &f, 50.0, 60.0, 10.0, 0.1), expected, max_relative = 1e-14);
    }

    #[test]
    fn steady_state_has_zero_derivative() {
        let model = nominal::lab_scale_model();
        let layout = model.layout().unwrap();
        let flows = solve_flow_split(&model, &layout, &[0.4, 0.7]).unwrap();
        let b = Boundary {
            supply_temp: 36.0,
            ambient: 22.0,
        };
        let y = steady_state(&model, &layout, &flows, 3, b, &[30.0, 27.0]);
        let st = StateLayout::new(&model, 3);
        let dynamics = Dynamics {
            model: &model,
            layout: &layout,
            state: st,
            flows: &flows,
            peltier: &[0.0, 0.0],
        };
        let mut dy = vec![0.0; st.len()];
        dynamics.derivative(&y, b, &mut dy);
        for (k, d) in dy.iter().take(st.mass(0)).enumerate() {
            assert!(d.abs() < 1e-10, "state {k}: {d}");
        }
    }

    #[test]
    fn rk4_energy_integrals_close_the_balance() {
        let model = nominal::lab_scale_model();
        let layout = model.layout().unwrap();
        let flows = solve_flow_split(&model, &layout, &[0.8, 0.2]).unwrap();
        let st = StateLayout::new(&model, 4);
        let mut y = vec![20.0; st.len()];
        for k in 0..ENERGY_CHANNELS {
            y[st.energy(k)] = 0.0;
        }
        let pelt = [3.0, 1.0];
        let dynamics = Dynamics {
            model: &model,
            layout: &layout,
            state: st,
            flows: &flows,
            peltier: &pelt,
        };
        let b = |t: f64| Boundary {
            supply_temp: 36.0 + (t / 50.0).sin(),
            ambient: 22.0,
        };
        let u0 = fluid_energy(&model, &st, &y);
        let c0 = mass_energy(&model, &st, &y);
        let mut ws = Rk4Workspace::default();
        let dt = 0.2 * dynamics.min_time_constant();
        let mut t = 0.0;
        for _ in 0..2000 {
            rk4_step(&dynamics, &mut y, t, dt, &b, &mut ws);
            t += dt;
        }
        let du = fluid_energy(&model, &st, &y) - u0;
        let dc = mass_energy(&model, &st, &y) - c0;
        let e = |k| y[st.energy(k)];
        let fluid_gap = e(energy::SUPPLIED) - e(energy::PIPE_LOSS) - e(energy::DELIVERED) - du;
        let mass_gap = e(energy::DELIVERED) - e(energy::MASS_LOSS) - e(energy::PELTIER) - dc;
        assert!(fluid_gap.abs() <= 1e-9 * e(energy::SUPPLIED).abs().max(du.abs()));
        assert!(mass_gap.abs() <= 1e-9 * dc.abs().max(e(energy::DELIVERED).abs()));
    }

    #[test]
    fn oversized_step_is_rejected() {
        assert!(matches!(check_step(2.0, 3.0), Err(Error::StepTooLarge { .. })));
        assert!(check_step(1.5, 3.0).is_ok());
    }
}
