//! Quasi-static hydraulics: quadratic pressure drops and the flow split that
//! equalises loop pressure losses.
//!
//! Every edge obeys `ΔP = k·(ṁ/A_c)²`, so a chain of edges behaves like a
//! single resistance `R` with `ΔP = R·ṁ²`. Valve ports add their own `k(u)`
//! on the first edge of each branch.

use serde::{Deserialize, Serialize};

use crate::model::{EdgeRef, LoopLayout, NetworkLayout, NetworkModel};
use crate::{Error, Result};

/// Relative pressure-balance tolerance of the loop solver.
pub const BALANCE_TOLERANCE: f64 = 1e-9;
/// Iteration cap for the Newton solve.
pub const MAX_ITERATIONS: usize = 100;

/// Flows and pressure drops for one set of valve positions.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FlowState {
    /// Mass flow per pipe segment, model order [kg/s].
    pub segment_flow: Vec<f64>,
    /// Frictional drop per pipe segment, valve ports excluded [Pa].
    pub segment_dp: Vec<f64>,
    pub exchanger_flow: Vec<f64>,
    pub exchanger_dp: Vec<f64>,
    /// `[user port, bypass port]` drop per valve [Pa].
    pub valve_dp: Vec<[f64; 2]>,
    /// Loop flows ṁ_1, ṁ_2, … in layout order [kg/s].
    pub loop_flow: Vec<f64>,
    /// Loop pressure losses ΔP_L in layout order [Pa].
    pub loop_dp: Vec<f64>,
    /// Total loss from the plant outlet back to the plant inlet [Pa].
    pub network_dp: f64,
}

impl FlowState {
    pub fn edge_flow(&self, edge: EdgeRef) -> f64 {
        match edge {
            EdgeRef::Segment(i) => self.segment_flow[i],
            EdgeRef::Exchanger(i) => self.exchanger_flow[i],
        }
    }

    /// Largest relative mismatch between loop pressure losses.
    pub fn balance_residual(&self) -> f64 {
        relative_spread(&self.loop_dp)
    }
}

fn relative_spread(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = values.iter().cloned().fold(f64::INFINITY, f64::min);
    if values.len() < 2 || max <= 0.0 {
        0.0
    } else {
        (max - min) / max
    }
}

/// `ΔP = k_tot·(ṁ/A_c)²`.
pub fn segment_pressure_drop(k_tot: f64, mdot: f64, area: f64) -> Result<f64> {
    if !(area > 0.0) {
        return Err(Error::Domain(format!("flow area must be positive, got {area}")));
    }
    if k_tot < 0.0 {
        return Err(Error::Domain(format!("loss coefficient must be >= 0, got {k_tot}")));
    }
    if mdot < 0.0 {
        return Err(Error::Domain(format!("mass flow must be >= 0, got {mdot}")));
    }
    let g = mdot / area;
    Ok(k_tot * g * g)
}

fn edge_resistance(model: &NetworkModel, edge: EdgeRef) -> f64 {
    let a = model.edge_area(edge);
    let k = match edge {
        EdgeRef::Segment(i) => model.segments[i].loss_coeff,
        EdgeRef::Exchanger(i) => model.heat_exchangers[i].loss_coeff,
    };
    k / (a * a)
}

fn chain_resistance(model: &NetworkModel, chain: &[EdgeRef]) -> f64 {
    chain.iter().map(|&e| edge_resistance(model, e)).sum()
}

/// Branch resistances of one loop at a given valve position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoopResistance {
    pub supply: f64,
    /// User branch including the valve user port; may be infinite.
    pub user: f64,
    /// Bypass branch including the valve bypass port; may be infinite.
    pub bypass: f64,
    pub ret: f64,
    pub user_port: f64,
    pub bypass_port: f64,
}

impl LoopResistance {
    pub fn new(model: &NetworkModel, lp: &LoopLayout, valve_position: f64) -> Self {
        let valve = &model.valves[lp.valve];
        let ua = model.edge_area(lp.user[0]);
        let ba = model.edge_area(lp.bypass[0]);
        let user_port = valve.user_k(valve_position) / (ua * ua);
        let bypass_port = valve.bypass_k(valve_position) / (ba * ba);
        Self {
            supply: chain_resistance(model, &lp.supply),
            user: chain_resistance(model, &lp.user) + user_port,
            bypass: chain_resistance(model, &lp.bypass) + bypass_port,
            ret: chain_resistance(model, &lp.ret),
            user_port,
            bypass_port,
        }
    }

    /// Equivalent resistance of the user/bypass pair: `(1/√R_u + 1/√R_b)^-2`.
    pub fn parallel(&self) -> Result<f64> {
        let c = conductance(self.user) + conductance(self.bypass);
        if c <= 0.0 {
            return Err(Error::Infeasible(
                "both user and bypass branches are closed".to_string(),
            ));
        }
        Ok(1.0 / (c * c))
    }

    /// Fraction of the loop flow taken by the user branch.
    pub fn user_fraction(&self) -> Result<f64> {
        let cu = conductance(self.user);
        let cb = conductance(self.bypass);
        if cu + cb <= 0.0 {
            return Err(Error::Infeasible(
                "both user and bypass branches are closed".to_string(),
            ));
        }
        Ok(cu / (cu + cb))
    }

    /// Loop coefficient `K` with `ΔP_L = K·ṁ²`.
    pub fn total(&self) -> Result<f64> {
        Ok(self.supply + self.parallel()? + self.ret)
    }
}

/// `1/√R`, zero for a closed (infinite-resistance) branch.
fn conductance(r: f64) -> f64 {
    if r.is_infinite() {
        0.0
    } else if r <= 0.0 {
        f64::INFINITY
    } else {
        1.0 / r.sqrt()
    }
}

/// Loss over a loop's series runs, with the user/bypass pair internally balanced.
pub fn loop_pressure_loss(
    model: &NetworkModel,
    lp: &LoopLayout,
    mdot_loop: f64,
    valve_position: f64,
) -> Result<f64> {
    if !(0.0..=1.0).contains(&valve_position) {
        return Err(Error::Domain(format!(
            "valve position must lie in [0, 1], got {valve_position}"
        )));
    }
    let k = LoopResistance::new(model, lp, valve_position).total()?;
    Ok(k * mdot_loop * mdot_loop)
}

/// Split `total` between loops with pressure laws `dp[i](ṁ)` so all losses agree.
///
/// Damped Newton on the first `N-1` loop flows with the last one eliminated by
/// mass conservation. The Jacobian is diagonal plus a rank-one term, so each
/// step is solved in closed form.
pub fn balance_loops<F>(total: f64, n: usize, dp: F) -> Result<Vec<f64>>
where
    F: Fn(usize, f64) -> (f64, f64),
{
    if n == 0 {
        return Ok(Vec::new());
    }
    if n == 1 {
        return Ok(vec![total]);
    }
    let residual_of = |m: &[f64]| -> (Vec<f64>, f64) {
        let last = total - m.iter().sum::<f64>();
        let (pn, _) = dp(n - 1, last);
        let mut r = Vec::with_capacity(n - 1);
        let mut scale = pn.abs();
        for (i, &mi) in m.iter().enumerate() {
            let (pi, _) = dp(i, mi);
            scale = scale.max(pi.abs());
            r.push(pi - pn);
        }
        let norm = r.iter().map(|x| x.abs()).fold(0.0, f64::max);
        (r, if scale > 0.0 { norm / scale } else { 0.0 })
    };

    let mut m = vec![total / n as f64; n - 1];
    let (mut r, mut res) = residual_of(&m);
    for _ in 0..MAX_ITERATIONS {
        if res <= 1e-14 {
            break;
        }
        let last = total - m.iter().sum::<f64>();
        let (_, cn) = dp(n - 1, last);
        // J = diag(d) + cn·11ᵀ
        let d: Vec<f64> = m.iter().enumerate().map(|(i, &mi)| dp(i, mi).1).collect();
        if d.iter().any(|&x| !(x > 0.0)) || !(cn > 0.0) {
            break;
        }
        let dr: f64 = r.iter().zip(&d).map(|(ri, di)| ri / di).sum();
        let d1: f64 = d.iter().map(|di| 1.0 / di).sum();
        let gamma = cn * dr / (1.0 + cn * d1);
        let step: Vec<f64> = r
            .iter()
            .zip(&d)
            .map(|(ri, di)| -(ri - gamma) / di)
            .collect();
        // Keep every flow strictly positive.
        let mut alpha: f64 = 1.0;
        let dlast = -step.iter().sum::<f64>();
        for (mi, si) in m.iter().zip(&step).chain(std::iter::once((&last, &dlast))) {
            if *si < 0.0 {
                alpha = alpha.min(0.99 * mi / -si);
            }
        }
        let mut accepted = false;
        for _ in 0..40 {
            let trial: Vec<f64> = m.iter().zip(&step).map(|(mi, si)| mi + alpha * si).collect();
            let (tr, tres) = residual_of(&trial);
            if tres < res {
                m = trial;
                r = tr;
                res = tres;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    if res > BALANCE_TOLERANCE {
        if n == 2 {
            return bisect_two(total, |m| dp(0, m).0, |m| dp(1, m).0);
        }
        return Err(Error::NoConvergence {
            iterations: MAX_ITERATIONS,
            residual: res,
        });
    }
    let last = total - m.iter().sum::<f64>();
    m.push(last);
    Ok(m)
}

/// Bisection on the split fraction of two loops; robust fallback and test oracle.
pub fn bisect_two(total: f64, dp1: impl Fn(f64) -> f64, dp2: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let f = |x: f64| dp1(x * total) - dp2((1.0 - x) * total);
    let (mut lo, mut hi) = (0.0_f64, 1.0_f64);
    if f(lo) > 0.0 || f(hi) < 0.0 {
        return Err(Error::Infeasible(
            "loop pressure laws do not bracket a balanced split".to_string(),
        ));
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if f(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON {
            break;
        }
    }
    let x = 0.5 * (lo + hi);
    Ok(vec![x * total, total - x * total])
}

/// Solve the flow split for the given valve positions (model valve order).
pub fn solve_flow_split(
    model: &NetworkModel,
    layout: &NetworkLayout,
    valve_positions: &[f64],
) -> Result<FlowState> {
    let n = layout.loops.len();
    if valve_positions.len() != model.valves.len() {
        return Err(Error::Domain(format!(
            "expected {} valve positions, got {}",
            model.valves.len(),
            valve_positions.len()
        )));
    }
    if let Some(u) = valve_positions.iter().find(|u| !(0.0..=1.0).contains(*u)) {
        return Err(Error::Domain(format!("valve position {u} outside [0, 1]")));
    }
    let resistances: Vec<LoopResistance> = layout
        .loops
        .iter()
        .map(|lp| LoopResistance::new(model, lp, valve_positions[lp.valve]))
        .collect();
    let coeffs = resistances
        .iter()
        .map(LoopResistance::total)
        .collect::<Result<Vec<f64>>>()?;
    let total = model.plant.mass_flow;
    let loop_flow = balance_loops(total, n, |i, m| (coeffs[i] * m * m, 2.0 * coeffs[i] * m))?;

    let mut state = FlowState {
        segment_flow: vec![0.0; model.segments.len()],
        segment_dp: vec![0.0; model.segments.len()],
        exchanger_flow: vec![0.0; model.heat_exchangers.len()],
        exchanger_dp: vec![0.0; model.heat_exchangers.len()],
        valve_dp: vec![[0.0; 2]; model.valves.len()],
        loop_flow: loop_flow.clone(),
        loop_dp: Vec::with_capacity(n),
        network_dp: 0.0,
    };
    let assign = |chain: &[EdgeRef], flow: f64, state: &mut FlowState| {
        for &e in chain {
            let dp = edge_resistance(model, e) * flow * flow;
            match e {
                EdgeRef::Segment(i) => {
                    state.segment_flow[i] = flow;
                    state.segment_dp[i] = dp;
                }
                EdgeRef::Exchanger(i) => {
                    state.exchanger_flow[i] = flow;
                    state.exchanger_dp[i] = dp;
                }
            }
        }
    };
    assign(&layout.supply_trunk, total, &mut state);
    assign(&layout.return_trunk, total, &mut state);
    for ((lp, res), (&m, &k)) in layout
        .loops
        .iter()
        .zip(&resistances)
        .zip(loop_flow.iter().zip(&coeffs))
    {
        let frac = res.user_fraction()?;
        let mu = if frac == 0.0 { 0.0 } else { m * frac };
        let mb = if frac == 1.0 { 0.0 } else { m - mu };
        assign(&lp.supply, m, &mut state);
        assign(&lp.ret, m, &mut state);
        assign(&lp.user, mu, &mut state);
        assign(&lp.bypass, mb, &mut state);
        let port = |r: f64, flow: f64| if flow == 0.0 { 0.0 } else { r * flow * flow };
        state.valve_dp[lp.valve] = [port(res.user_port, mu), port(res.bypass_port, mb)];
        state.loop_dp.push(k * m * m);
    }
    let trunk = chain_resistance(model, &layout.supply_trunk)
        + chain_resistance(model, &layout.return_trunk);
    let max_loop = state.loop_dp.iter().cloned().fold(0.0, f64::max);
    state.network_dp = trunk * total * total + max_loop;
    Ok(state)
}

/// Largest node mass imbalance of a flow state (should be round-off).
pub fn conservation_error(model: &NetworkModel, layout: &NetworkLayout, flows: &FlowState) -> f64 {
    let total = model.plant.mass_flow;
    let mut err: f64 = (flows.loop_flow.iter().sum::<f64>() - total).abs();
    for (lp, &m_loop) in layout.loops.iter().zip(&flows.loop_flow) {
        let m = flows.edge_flow(lp.user[0]) + flows.edge_flow(lp.bypass[0]);
        err = err.max((m - m_loop).abs());
    }
    err
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal;
    use proptest::prelude::*;

    #[test]
    fn zero_flow_has_zero_drop() {
        assert_eq!(segment_pressure_drop(3.0, 0.0, 1e-4).unwrap(), 0.0);
    }

    #[test]
    fn doubling_flow_quadruples_drop() {
        let a = segment_pressure_drop(0.01, 0.04, 1.1e-4).unwrap();
        let b = segment_pressure_drop(0.01, 0.08, 1.1e-4).unwrap();
        assert!((b / a - 4.0).abs() < 1e-12);
    }

    #[test]
    fn nonpositive_area_is_domain_error() {
        assert!(matches!(
            segment_pressure_drop(1.0, 1.0, 0.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn lab_trunk_segment_drop_in_published_band() {
        let model = nominal::lab_scale_model();
        let s = &model.segments[model.segment_index("supply_main").unwrap()];
        let dp = segment_pressure_drop(s.loss_coeff, model.plant.mass_flow, s.cross_section()).unwrap();
        assert!((1e3..=10e3).contains(&dp), "dp = {dp}");
    }

    #[test]
    fn single_edge_loop_reduces_to_segment_drop() {
        let mut model = nominal::lab_scale_model();
        let layout = model.layout().unwrap();
        let lp = layout.loops[0].clone();
        for v in &mut model.valves {
            v.user_k_range = [1e-12, f64::INFINITY];
            v.characteristic = crate::model::ValveCharacteristic::Linear;
        }
        // Close the user side completely: the loop is supply + bypass + return in series.
        let m = 0.04;
        let dp = loop_pressure_loss(&model, &lp, m, 0.0).unwrap();
        let valve = &model.valves[lp.valve];
        let ba = model.edge_area(lp.bypass[0]);
        let mut expected = valve.bypass_k(0.0) * (m / ba).powi(2);
        for &e in lp.supply.iter().chain(&lp.bypass).chain(&lp.ret) {
            let (k, a) = match e {
                EdgeRef::Segment(i) => (model.segments[i].loss_coeff, model.segments[i].cross_section()),
                EdgeRef::Exchanger(i) => (model.heat_exchangers[i].loss_coeff, model.heat_exchangers[i].cross_section()),
            };
            expected += segment_pressure_drop(k, m, a).unwrap();
        }
        assert!((dp - expected).abs() <= 1e-9 * expected);
    }

    #[test]
    fn equal_branches_split_evenly_and_one_to_four_gives_two_to_one() {
        let r = |u: f64, b: f64| LoopResistance {
            supply: 0.0,
            user: u,
            bypass: b,
            ret: 0.0,
            user_port: 0.0,
            bypass_port: 0.0,
        };
        assert!((r(5.0, 5.0).user_fraction().unwrap() - 0.5).abs() < 1e-15);
        // Oracle: bisection on R_u·x² = R_b·(1-x)².
        let (ru, rb) = (1.0, 4.0);
        let oracle = bisect_two(1.0, |m| ru * m * m, |m| rb * m * m).unwrap();
        let frac = r(ru, rb).user_fraction().unwrap();
        assert!((frac - oracle[0]).abs() < 1e-12);
        assert!((frac / (1.0 - frac) - 2.0).abs() < 1e-12);
    }

    #[test]
    fn closed_valve_branch_carries_exactly_zero() {
        let mut model = nominal::lab_scale_model();
        for v in &mut model.valves {
            v.characteristic = crate::model::ValveCharacteristic::Linear;
            v.user_k_range[1] = f64::INFINITY;
        }
        let layout = model.layout().unwrap();
        let flows = solve_flow_split(&model, &layout, &[0.0, 0.0]).unwrap();
        for lp in &layout.loops {
            assert_eq!(flows.edge_flow(lp.user[0]), 0.0);
            assert_eq!(flows.exchanger_flow[lp.exchanger], 0.0);
        }
    }

    #[test]
    fn both_branches_closed_is_infeasible() {
        let res = LoopResistance {
            supply: 1.0,
            user: f64::INFINITY,
            bypass: f64::INFINITY,
            ret: 1.0,
            user_port: f64::INFINITY,
            bypass_port: f64::INFINITY,
        };
        assert!(matches!(res.total(), Err(Error::Infeasible(_))));
    }

    #[test]
    fn identical_loops_split_evenly() {
        let model = nominal::lab_scale_model();
        let mut sym = model.clone();
        // Make loop 2 a copy of loop 1.
        let layout = sym.layout().unwrap();
        let (a, b) = (layout.loops[0].clone(), layout.loops[1].clone());
        for (ea, eb) in a.supply.iter().chain(&a.user).chain(&a.bypass).chain(&a.ret).zip(
            b.supply.iter().chain(&b.user).chain(&b.bypass).chain(&b.ret),
        ) {
            match (ea, eb) {
                (EdgeRef::Segment(i), EdgeRef::Segment(j)) => {
                    sym.segments[*j].loss_coeff = sym.segments[*i].loss_coeff;
                    sym.segments[*j].diameter = sym.segments[*i].diameter;
                }
                (EdgeRef::Exchanger(i), EdgeRef::Exchanger(j)) => {
                    sym.heat_exchangers[*j].loss_coeff = sym.heat_exchangers[*i].loss_coeff;
                    sym.heat_exchangers[*j].diameter = sym.heat_exchangers[*i].diameter;
                }
                _ => panic!("loops differ in structure"),
            }
        }
        sym.valves[b.valve] = crate::model::ValveModel {
            id: sym.valves[b.valve].id.clone(),
            user_edge: sym.valves[b.valve].user_edge.clone(),
            bypass_edge: sym.valves[b.valve].bypass_edge.clone(),
            ..sym.valves[a.valve].clone()
        };
        let flows = solve_flow_split(&sym, &layout, &[0.3, 0.3]).unwrap();
        let half = sym.plant.mass_flow / 2.0;
        assert!((flows.loop_flow[0] - half).abs() < 1e-15);
        assert!((flows.loop_flow[1] - half).abs() < 1e-15);
    }

    #[test]
    fn nominal_split_is_balanced_and_conservative() {
        let model = nominal::lab_scale_model();
        let layout = model.layout().unwrap();
        for u in [0.0, 0.25, 0.6, 1.0] {
            let flows = solve_flow_split(&model, &layout, &[u, 1.0 - u]).unwrap();
            assert!(flows.balance_residual() <= BALANCE_TOLERANCE);
            assert!(conservation_error(&model, &layout, &flows) <= 1e-15);
        }
    }

    #[test]
    fn three_loops_solve() {
        let k = [1.0, 3.0, 9.0];
        let flows = balance_loops(2.0, 3, |i, m| (k[i] * m * m, 2.0 * k[i] * m)).unwrap();
        let w: Vec<f64> = k.iter().map(|k| 1.0 / k.sqrt()).collect();
        let sw: f64 = w.iter().sum();
        for (f, wi) in flows.iter().zip(&w) {
            assert!((f - 2.0 * wi / sw).abs() < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn two_loop_split_matches_closed_form(k1 in 1e-3f64..1e6, k2 in 1e-3f64..1e6, total in 1e-3f64..50.0) {
            let k = [k1, k2];
            let flows = balance_loops(total, 2, |i, m| (k[i] * m * m, 2.0 * k[i] * m)).unwrap();
            let ratio = flows[0] / flows[1];
            let expected = (k2 / k1).sqrt();
            prop_assert!((ratio - expected).abs() <= 1e-8 * expected);
            prop_assert!((flows[0] + flows[1] - total).abs() <= 1e-12 * total);
            let dp1 = k1 * flows[0] * flows[0];
            let dp2 = k2 * flows[1] * flows[1];
            prop_assert!((dp1 - dp2).abs() <= BALANCE_TOLERANCE * dp1.max(dp2));
        }

        #[test]
        fn raising_one_loop_resistance_lowers_its_share(k1 in 1e-2f64..1e4, k2 in 1e-2f64..1e4, bump in 1.01f64..10.0) {
            let f = |a: f64, b: f64| balance_loops(1.0, 2, |i, m| {
                let k = if i == 0 { a } else { b };
                (k * m * m, 2.0 * k * m)
            }).unwrap()[0];
            prop_assert!(f(k1 * bump, k2) < f(k1, k2));
        }
    }
}
