//! Network topology, component parameters and structural validation.
//!
//! A network is a set of directed edges (pipe segments and heat exchangers)
//! between named nodes. The supported layout is a supply trunk that splits
//! into parallel user loops; each loop carries a three-way valve dividing the
//! flow between a user branch (through a heat exchanger) and a bypass branch,
//! and the loops remerge into a return trunk that feeds the plant.
//!
//! Temperatures are in °C everywhere.

use std::collections::{BTreeMap, BTreeSet};
use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Working fluid, constant over a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FluidProperties {
    /// Density [kg/m³].
    pub rho: f64,
    /// Specific heat at constant pressure [J/(kg·K)].
    pub cp: f64,
}

impl FluidProperties {
    pub fn water() -> Self {
        Self {
            rho: 994.0,
            cp: 4180.0,
        }
    }
}

/// Straight pipe run between two nodes.
///
/// `loss_coeff` lumps distributed and concentrated losses so that
/// `ΔP = loss_coeff · (ṁ / A_c)²`; its unit is therefore m³/kg.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipeSegment {
    pub id: String,
    /// [m]
    pub length: f64,
    /// Internal diameter [m].
    pub diameter: f64,
    /// [m³/kg]
    pub loss_coeff: f64,
    /// Conductance to ambient hA_s [W/K].
    pub conductance: f64,
    pub upstream: String,
    pub downstream: String,
}

impl PipeSegment {
    /// Cross-sectional flow area [m²].
    pub fn cross_section(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }

    /// Water volume `(π/4)·D²·l` [m³].
    pub fn volume(&self) -> f64 {
        PI / 4.0 * self.diameter * self.diameter * self.length
    }
}

/// Supply plant: heater plus fixed-flow pump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SupplyPlant {
    /// Supply temperature T_s [°C].
    pub supply_temp: f64,
    /// Circulated mass flow ṁ_I [kg/s].
    pub mass_flow: f64,
    /// [Pa]
    pub pump_pressure_rise: f64,
    pub supply_node: String,
    pub return_node: String,
    /// Heater shell conductance to ambient [W/K].
    pub heater_conductance: f64,
    /// Heater buffer volume [m³] (sizing reports only; the heater holds T_s).
    pub heater_volume: f64,
}

/// Heat exchanger coil inside a thermal mass; an edge of the user branch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeatExchanger {
    pub id: String,
    /// (hA_s)_HX [W/K]
    pub conductance: f64,
    /// [m³/kg], referenced to the coil flow area.
    pub loss_coeff: f64,
    /// Coil water volume [m³].
    pub volume: f64,
    /// Coil internal diameter [m].
    pub diameter: f64,
    pub upstream: String,
    pub downstream: String,
}

impl HeatExchanger {
    pub fn cross_section(&self) -> f64 {
        PI * self.diameter * self.diameter / 4.0
    }
}

/// Thermoelectric cooler mounted on a thermal mass wall.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeltierUnit {
    /// [W]
    pub max_power: f64,
    /// First-order tracking time constant of the built-in power loop [s];
    /// zero means the commanded power is applied instantly.
    pub time_constant: f64,
}

/// Lumped building (or lab tank) heated through one heat exchanger.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThermalMass {
    pub id: String,
    /// (ρ c_p V)_ThM [J/K]
    pub heat_capacity: f64,
    /// [m³], sizing reports only.
    pub volume: f64,
    /// Natural-convection conductance to the physical ambient [W/K].
    pub conductance_actual: f64,
    /// Conductance the wall is meant to emulate [W/K].
    pub conductance_simulated: f64,
    /// Design setpoint used to normalise the mass temperature [°C].
    pub setpoint: f64,
    /// Id of the heat exchanger feeding this mass.
    pub heat_exchanger: String,
    pub peltier: Option<PeltierUnit>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValveCharacteristic {
    /// Flow coefficient (∝ k^-1/2) linear in the port opening.
    #[default]
    Linear,
    /// Flow coefficient grows geometrically with the port opening.
    EqualPercentage,
}

impl ValveCharacteristic {
    pub fn as_str(self) -> &'static str {
        match self {
            ValveCharacteristic::Linear => "linear",
            ValveCharacteristic::EqualPercentage => "equal_percentage",
        }
    }
}

/// Three-way characterized valve splitting a loop into user and bypass branches.
///
/// The valve adds a loss `k(u)·(ṁ/A_c)²` to the first edge of each branch,
/// using that edge's flow area. Position `u = 1` opens the user port fully
/// and closes the bypass port as far as its range allows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValveModel {
    pub id: String,
    pub user_edge: String,
    pub bypass_edge: String,
    /// `[k at fully open, k at fully closed]`; the closed value may be infinite.
    pub user_k_range: [f64; 2],
    pub bypass_k_range: [f64; 2],
    pub characteristic: ValveCharacteristic,
}

impl ValveModel {
    fn port_k(range: [f64; 2], opening: f64, characteristic: ValveCharacteristic) -> f64 {
        let opening = opening.clamp(0.0, 1.0);
        let [k_open, k_closed] = range;
        match characteristic {
            ValveCharacteristic::Linear => {
                let c_open = 1.0 / k_open.sqrt();
                let c_closed = if k_closed.is_infinite() {
                    0.0
                } else {
                    1.0 / k_closed.sqrt()
                };
                let c = c_closed + opening * (c_open - c_closed);
                if c <= 0.0 {
                    f64::INFINITY
                } else {
                    1.0 / (c * c)
                }
            }
            ValveCharacteristic::EqualPercentage => {
                if opening >= 1.0 {
                    k_open
                } else {
                    k_open * (k_closed / k_open).powf(1.0 - opening)
                }
            }
        }
    }

    /// Loss coefficient of the user port at position `u`.
    pub fn user_k(&self, u: f64) -> f64 {
        Self::port_k(self.user_k_range, u, self.characteristic)
    }

    /// Loss coefficient of the bypass port at position `u`.
    pub fn bypass_k(&self, u: f64) -> f64 {
        Self::port_k(self.bypass_k_range, 1.0 - u, self.characteristic)
    }
}

/// A complete network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkModel {
    pub fluid: FluidProperties,
    pub plant: SupplyPlant,
    pub segments: Vec<PipeSegment>,
    pub valves: Vec<ValveModel>,
    pub heat_exchangers: Vec<HeatExchanger>,
    pub thermal_masses: Vec<ThermalMass>,
}

/// Reference to a flow-carrying edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum EdgeRef {
    Segment(usize),
    Exchanger(usize),
}

/// One user loop resolved from the edge graph.
#[derive(Debug, Clone, PartialEq)]
pub struct LoopLayout {
    pub supply: Vec<EdgeRef>,
    pub user: Vec<EdgeRef>,
    pub bypass: Vec<EdgeRef>,
    pub ret: Vec<EdgeRef>,
    pub valve: usize,
    pub exchanger: usize,
    pub mass: usize,
    pub split_node: String,
    pub merge_node: String,
}

/// The tree-of-parallel-loops structure of a network, in flow order.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkLayout {
    pub supply_trunk: Vec<EdgeRef>,
    pub loops: Vec<LoopLayout>,
    pub return_trunk: Vec<EdgeRef>,
}

impl NetworkModel {
    pub fn segment_index(&self, id: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.id == id)
    }

    pub fn exchanger_index(&self, id: &str) -> Option<usize> {
        self.heat_exchangers.iter().position(|h| h.id == id)
    }

    pub fn mass_index(&self, id: &str) -> Option<usize> {
        self.thermal_masses.iter().position(|m| m.id == id)
    }

    pub fn edge_id(&self, edge: EdgeRef) -> &str {
        match edge {
            EdgeRef::Segment(i) => &self.segments[i].id,
            EdgeRef::Exchanger(i) => &self.heat_exchangers[i].id,
        }
    }

    pub fn edge_nodes(&self, edge: EdgeRef) -> (&str, &str) {
        match edge {
            EdgeRef::Segment(i) => (&self.segments[i].upstream, &self.segments[i].downstream),
            EdgeRef::Exchanger(i) => (
                &self.heat_exchangers[i].upstream,
                &self.heat_exchangers[i].downstream,
            ),
        }
    }

    pub fn edge_area(&self, edge: EdgeRef) -> f64 {
        match edge {
            EdgeRef::Segment(i) => self.segments[i].cross_section(),
            EdgeRef::Exchanger(i) => self.heat_exchangers[i].cross_section(),
        }
    }

    fn edge_by_id(&self, id: &str) -> Option<EdgeRef> {
        self.segment_index(id)
            .map(EdgeRef::Segment)
            .or_else(|| self.exchanger_index(id).map(EdgeRef::Exchanger))
    }

    /// Resolve the loop structure, or return the topology violations found.
    pub fn layout(&self) -> Result<NetworkLayout, Vec<String>> {
        LayoutBuilder::new(self).build()
    }

    /// Smallest internal pipe diameter, used as the default nondimensional length.
    pub fn reference_diameter(&self) -> f64 {
        self.segments
            .iter()
            .map(|s| s.diameter)
            .fold(f64::INFINITY, f64::min)
    }
}

/// Result of [`validate_network`]: a list of violated invariants.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn into_result(self) -> crate::Result<()> {
        if self.violations.is_empty() {
            Ok(())
        } else {
            Err(crate::Error::Invalid(self.violations))
        }
    }
}

fn positive(v: f64) -> bool {
    v.is_finite() && v > 0.0
}

fn non_negative(v: f64) -> bool {
    v.is_finite() && v >= 0.0
}

/// Check all component invariants and the topology rules.
pub fn validate_network(model: &NetworkModel) -> ValidationReport {
    let mut v = Vec::new();
    let fluid = &model.fluid;
    if !positive(fluid.rho) {
        v.push("fluid: rho > 0".to_string());
    }
    if !positive(fluid.cp) {
        v.push("fluid: cp > 0".to_string());
    }

    let plant = &model.plant;
    if !plant.supply_temp.is_finite() {
        v.push("plant: supply_temp must be finite".to_string());
    }
    if !positive(plant.mass_flow) {
        v.push("plant: initial_mass_flow_mdotI > 0".to_string());
    }
    if !non_negative(plant.pump_pressure_rise) {
        v.push("plant: pump_pressure_rise >= 0".to_string());
    }
    if !non_negative(plant.heater_conductance) {
        v.push("plant: heater_conductance >= 0".to_string());
    }
    if !non_negative(plant.heater_volume) {
        v.push("plant: heater_volume >= 0".to_string());
    }

    if model.segments.is_empty() {
        v.push("network: at least one segment".to_string());
    }
    let mut ids = BTreeSet::new();
    for s in &model.segments {
        if !ids.insert(s.id.as_str()) {
            v.push(format!("duplicate edge id `{}`", s.id));
        }
        if !positive(s.length) {
            v.push(format!("segment `{}`: length_l > 0", s.id));
        }
        if !positive(s.diameter) {
            v.push(format!("segment `{}`: diameter_D > 0", s.id));
        }
        if !non_negative(s.loss_coeff) {
            v.push(format!("segment `{}`: loss_coeff_k_tot >= 0", s.id));
        }
        if !non_negative(s.conductance) {
            v.push(format!("segment `{}`: conductive_hAs >= 0", s.id));
        }
    }
    for h in &model.heat_exchangers {
        if !ids.insert(h.id.as_str()) {
            v.push(format!("duplicate edge id `{}`", h.id));
        }
        if !positive(h.conductance) {
            v.push(format!("heat_exchanger `{}`: convective_hAs_HX > 0", h.id));
        }
        if !positive(h.volume) {
            v.push(format!("heat_exchanger `{}`: volume > 0", h.id));
        }
        if !positive(h.diameter) {
            v.push(format!("heat_exchanger `{}`: diameter > 0", h.id));
        }
        if !non_negative(h.loss_coeff) {
            v.push(format!("heat_exchanger `{}`: loss_coeff_k_HX >= 0", h.id));
        }
        let feeding = model
            .thermal_masses
            .iter()
            .filter(|m| m.heat_exchanger == h.id)
            .count();
        if feeding != 1 {
            v.push(format!(
                "heat_exchanger `{}`: must feed exactly one thermal mass (found {feeding})",
                h.id
            ));
        }
    }
    let mut mass_ids = BTreeSet::new();
    for m in &model.thermal_masses {
        if !mass_ids.insert(m.id.as_str()) {
            v.push(format!("duplicate thermal mass id `{}`", m.id));
        }
        if ids.contains(m.id.as_str()) {
            v.push(format!("thermal mass id `{}` clashes with an edge id", m.id));
        }
        if !positive(m.heat_capacity) {
            v.push(format!("thermal_mass `{}`: heat_capacity_C > 0", m.id));
        }
        if !non_negative(m.volume) {
            v.push(format!("thermal_mass `{}`: volume >= 0", m.id));
        }
        if !non_negative(m.conductance_actual) {
            v.push(format!("thermal_mass `{}`: hAs_actual >= 0", m.id));
        }
        if !m.setpoint.is_finite() {
            v.push(format!("thermal_mass `{}`: setpoint must be finite", m.id));
        }
        if m.peltier.is_some() && !positive(m.conductance_simulated) {
            v.push(format!(
                "thermal_mass `{}`: hAs_simulated > 0 when peltier present",
                m.id
            ));
        }
        if !non_negative(m.conductance_simulated) {
            v.push(format!("thermal_mass `{}`: hAs_simulated >= 0", m.id));
        }
        if let Some(p) = &m.peltier {
            if !non_negative(p.max_power) {
                v.push(format!("thermal_mass `{}`: peltier max_power >= 0", m.id));
            }
            if !non_negative(p.time_constant) {
                v.push(format!("thermal_mass `{}`: peltier time_constant >= 0", m.id));
            }
        }
        if model.exchanger_index(&m.heat_exchanger).is_none() {
            v.push(format!(
                "thermal_mass `{}`: unknown heat exchanger `{}`",
                m.id, m.heat_exchanger
            ));
        }
    }
    for valve in &model.valves {
        for (name, range) in [("user", valve.user_k_range), ("bypass", valve.bypass_k_range)] {
            let [open, closed] = range;
            if !positive(open) {
                v.push(format!(
                    "valve `{}`: {name} port k at full opening must be finite and > 0",
                    valve.id
                ));
            }
            if closed.is_nan() || closed < open {
                v.push(format!("valve `{}`: {name} k range must satisfy k_min <= k_max", valve.id));
            }
            if valve.characteristic == ValveCharacteristic::EqualPercentage && !closed.is_finite() {
                v.push(format!(
                    "valve `{}`: equal_percentage needs a finite {name} k_max",
                    valve.id
                ));
            }
        }
        if model.edge_by_id(&valve.user_edge).is_none() {
            v.push(format!("valve `{}`: unknown user edge `{}`", valve.id, valve.user_edge));
        }
        if model.edge_by_id(&valve.bypass_edge).is_none() {
            v.push(format!(
                "valve `{}`: unknown bypass edge `{}`",
                valve.id, valve.bypass_edge
            ));
        }
    }

    // Topology is only meaningful once references resolve.
    if v.is_empty() {
        if let Err(mut topo) = model.layout() {
            v.append(&mut topo);
        }
    }
    ValidationReport { violations: v }
}

struct LayoutBuilder<'a> {
    model: &'a NetworkModel,
    outgoing: BTreeMap<&'a str, Vec<EdgeRef>>,
    incoming: BTreeMap<&'a str, Vec<EdgeRef>>,
    /// split node -> valve index
    valve_splits: BTreeMap<&'a str, usize>,
    violations: Vec<String>,
    used: BTreeSet<EdgeRef>,
}

impl<'a> LayoutBuilder<'a> {
    fn new(model: &'a NetworkModel) -> Self {
        let mut outgoing: BTreeMap<&str, Vec<EdgeRef>> = BTreeMap::new();
        let mut incoming: BTreeMap<&str, Vec<EdgeRef>> = BTreeMap::new();
        let edges = (0..model.segments.len())
            .map(EdgeRef::Segment)
            .chain((0..model.heat_exchangers.len()).map(EdgeRef::Exchanger));
        for e in edges {
            let (up, down) = model.edge_nodes(e);
            outgoing.entry(up).or_default().push(e);
            incoming.entry(down).or_default().push(e);
        }
        let mut violations = Vec::new();
        let mut valve_splits = BTreeMap::new();
        for (i, valve) in model.valves.iter().enumerate() {
            let (Some(user), Some(bypass)) = (
                model.edge_by_id(&valve.user_edge),
                model.edge_by_id(&valve.bypass_edge),
            ) else {
                violations.push(format!("valve `{}`: unresolved branch edges", valve.id));
                continue;
            };
            let split = model.edge_nodes(user).0;
            if model.edge_nodes(bypass).0 != split {
                violations.push(format!(
                    "valve `{}`: user and bypass branches must share a split node",
                    valve.id
                ));
                continue;
            }
            if valve_splits.insert(split, i).is_some() {
                violations.push(format!("node `{split}`: more than one valve"));
            }
        }
        Self {
            model,
            outgoing,
            incoming,
            valve_splits,
            violations,
            used: BTreeSet::new(),
        }
    }

    fn out_of(&self, node: &str) -> &[EdgeRef] {
        self.outgoing.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    fn in_degree(&self, node: &str) -> usize {
        self.incoming.get(node).map_or(0, Vec::len)
    }

    fn take(&mut self, e: EdgeRef, chain: &mut Vec<EdgeRef>) -> bool {
        if !self.used.insert(e) {
            self.violations
                .push(format!("edge `{}` reached twice (cycle)", self.model.edge_id(e)));
            return false;
        }
        chain.push(e);
        true
    }

    /// Follow single-out-edge nodes starting at `node` until `stop` holds.
    fn follow(
        &mut self,
        mut node: &'a str,
        what: &str,
        stop: impl Fn(&Self, &str) -> bool,
    ) -> Option<(Vec<EdgeRef>, &'a str)> {
        let mut chain = Vec::new();
        while !stop(self, node) {
            let outs = self.out_of(node);
            if outs.len() != 1 {
                self.violations.push(format!(
                    "{what}: node `{node}` has {} outgoing edges where a single pipe run was expected",
                    outs.len()
                ));
                return None;
            }
            let e = outs[0];
            if !self.take(e, &mut chain) {
                return None;
            }
            node = self.model.edge_nodes(e).1;
        }
        Some((chain, node))
    }

    /// Chain starting with edge `first`, continuing until a node where flows merge.
    fn branch(&mut self, first: EdgeRef, what: &str) -> Option<(Vec<EdgeRef>, &'a str)> {
        let mut chain = Vec::new();
        if !self.take(first, &mut chain) {
            return None;
        }
        let start = self.model.edge_nodes(first).1;
        let ret = self.model.plant.return_node.as_str();
        let (rest, end) = self.follow(start, what, |b, n| n == ret || b.in_degree(n) >= 2)?;
        chain.extend(rest);
        Some((chain, end))
    }

    fn build(mut self) -> Result<NetworkLayout, Vec<String>> {
        let model = self.model;
        let supply = model.plant.supply_node.as_str();
        let ret = model.plant.return_node.as_str();
        if self.in_degree(supply) != 0 {
            self.violations
                .push(format!("plant supply node `{supply}` must have no incoming edges"));
        }
        if !self.out_of(ret).is_empty() {
            self.violations
                .push(format!("plant return node `{ret}` must have no outgoing edges"));
        }
        if !self.violations.is_empty() {
            return Err(self.violations);
        }

        let Some((supply_trunk, split)) = self.follow(supply, "supply line", |b, n| {
            b.valve_splits.contains_key(n) || b.out_of(n).len() != 1
        }) else {
            return Err(self.violations);
        };

        let mut loop_starts: Vec<(Vec<EdgeRef>, &str)> = Vec::new();
        if self.valve_splits.contains_key(split) {
            loop_starts.push((Vec::new(), split));
        } else {
            let outs = self.out_of(split).to_vec();
            if outs.len() < 2 {
                self.violations
                    .push(format!("supply line dead-ends at node `{split}`"));
                return Err(self.violations);
            }
            for e in outs {
                let mut chain = Vec::new();
                if !self.take(e, &mut chain) {
                    return Err(self.violations);
                }
                let start = model.edge_nodes(e).1;
                let Some((rest, node)) = self.follow(start, "loop supply", |b, n| {
                    b.valve_splits.contains_key(n)
                }) else {
                    return Err(self.violations);
                };
                chain.extend(rest);
                loop_starts.push((chain, node));
            }
        }

        let mut loops = Vec::new();
        let mut return_node: Option<&str> = None;
        for (loop_supply, split_node) in loop_starts {
            let vi = self.valve_splits[split_node];
            let valve = &model.valves[vi];
            let user_first = model.edge_by_id(&valve.user_edge).expect("resolved");
            let bypass_first = model.edge_by_id(&valve.bypass_edge).expect("resolved");
            let what = format!("valve `{}`", valve.id);
            let Some((user, user_end)) = self.branch(user_first, &what) else {
                return Err(self.violations);
            };
            let Some((bypass, bypass_end)) = self.branch(bypass_first, &what) else {
                return Err(self.violations);
            };
            if user_end != bypass_end {
                self.violations.push(format!(
                    "valve `{}`: user and bypass branches share merge node (user ends at `{user_end}`, bypass at `{bypass_end}`)",
                    valve.id
                ));
                return Err(self.violations);
            }
            if self.in_degree(user_end) != 2 {
                self.violations.push(format!(
                    "valve `{}`: merge node `{user_end}` must join exactly the user and bypass branches",
                    valve.id
                ));
            }
            let merge = user_end;
            let (ret_chain, end) = if merge == ret {
                (Vec::new(), merge)
            } else {
                let first = match *self.out_of(merge).to_vec() {
                    [e] => e,
                    ref outs => {
                        self.violations.push(format!(
                            "merge node `{merge}` has {} outgoing edges",
                            outs.len()
                        ));
                        return Err(self.violations);
                    }
                };
                let Some(b) = self.branch(first, "loop return") else {
                    return Err(self.violations);
                };
                b
            };
            match return_node {
                None => return_node = Some(end),
                Some(r) if r != end => {
                    self.violations.push(format!(
                        "loops must remerge at one return node (`{r}` vs `{end}`)"
                    ));
                    return Err(self.violations);
                }
                _ => {}
            }

            let exchangers: Vec<usize> = user
                .iter()
                .filter_map(|e| match e {
                    EdgeRef::Exchanger(i) => Some(*i),
                    _ => None,
                })
                .collect();
            if exchangers.len() != 1 {
                self.violations.push(format!(
                    "valve `{}`: user branch must contain exactly one heat exchanger (found {})",
                    valve.id,
                    exchangers.len()
                ));
                return Err(self.violations);
            }
            let others = loop_supply
                .iter()
                .chain(&bypass)
                .chain(&ret_chain)
                .any(|e| matches!(e, EdgeRef::Exchanger(_)));
            if others {
                self.violations.push(format!(
                    "valve `{}`: heat exchangers are only allowed on the user branch",
                    valve.id
                ));
                return Err(self.violations);
            }
            let exchanger = exchangers[0];
            let hx_id = &model.heat_exchangers[exchanger].id;
            let Some(mass) = model
                .thermal_masses
                .iter()
                .position(|m| &m.heat_exchanger == hx_id)
            else {
                self.violations
                    .push(format!("heat exchanger `{hx_id}` feeds no thermal mass"));
                return Err(self.violations);
            };
            loops.push(LoopLayout {
                supply: loop_supply,
                user,
                bypass,
                ret: ret_chain,
                valve: vi,
                exchanger,
                mass,
                split_node: split_node.to_string(),
                merge_node: merge.to_string(),
            });
        }

        let main_return = return_node.expect("at least one loop");
        if loops.len() > 1 && self.in_degree(main_return) != loops.len() {
            self.violations.push(format!(
                "return node `{main_return}` must collect every loop"
            ));
        }
        let return_trunk = if main_return == ret {
            Vec::new()
        } else {
            let first = match *self.out_of(main_return).to_vec() {
                [e] => e,
                ref outs => {
                    self.violations.push(format!(
                        "return node `{main_return}` has {} outgoing edges",
                        outs.len()
                    ));
                    return Err(self.violations);
                }
            };
            let mut chain = Vec::new();
            if !self.take(first, &mut chain) {
                return Err(self.violations);
            }
            let start = model.edge_nodes(first).1;
            let Some((rest, end)) = self.follow(start, "return line", |_, n| n == ret) else {
                return Err(self.violations);
            };
            debug_assert_eq!(end, ret);
            chain.extend(rest);
            chain
        };

        let total = model.segments.len() + model.heat_exchangers.len();
        if self.used.len() != total {
            let stray: Vec<&str> = (0..model.segments.len())
                .map(EdgeRef::Segment)
                .chain((0..model.heat_exchangers.len()).map(EdgeRef::Exchanger))
                .filter(|e| !self.used.contains(e))
                .map(|e| model.edge_id(e))
                .collect();
            self.violations.push(format!(
                "graph is not connected to the plant circuit: {}",
                stray.join(", ")
            ));
        }
        let placed: BTreeSet<usize> = loops.iter().map(|l| l.valve).collect();
        if placed.len() != model.valves.len() {
            self.violations
                .push("every valve must sit at a loop split node".to_string());
        }
        if !self.violations.is_empty() {
            return Err(self.violations);
        }
        Ok(NetworkLayout {
            supply_trunk,
            loops,
            return_trunk,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal;

    #[test]
    fn volume_matches_formula() {
        let s = PipeSegment {
            id: "s".into(),
            length: 7.5,
            diameter: 0.012,
            loss_coeff: 0.0,
            conductance: 0.0,
            upstream: "a".into(),
            downstream: "b".into(),
        };
        assert_eq!(s.volume(), PI / 4.0 * 0.012 * 0.012 * 7.5);
    }

    #[test]
    fn both_nominal_networks_validate() {
        for model in [nominal::full_scale_model(), nominal::lab_scale_model()] {
            let report = validate_network(&model);
            assert!(report.is_valid(), "{:?}", report.violations);
            let layout = model.layout().unwrap();
            assert_eq!(layout.loops.len(), 2);
        }
    }

    #[test]
    fn zero_length_segment_is_reported() {
        let mut model = nominal::lab_scale_model();
        model.segments[0].length = 0.0;
        let report = validate_network(&model);
        assert!(report.violations.iter().any(|v| v.contains("length_l > 0")));
    }

    #[test]
    fn bypass_that_never_remerges_is_reported() {
        let mut model = nominal::lab_scale_model();
        let vi = 0;
        let bypass = model.valves[vi].bypass_edge.clone();
        let i = model.segment_index(&bypass).unwrap();
        // Send the bypass straight to the main return node instead of the loop merge.
        let layout = model.layout().unwrap();
        let main_return = model.edge_nodes(layout.loops[0].ret[0]).1.to_string();
        model.segments[i].downstream = main_return;
        let report = validate_network(&model);
        assert!(
            report
                .violations
                .iter()
                .any(|v| v.contains("merge node")),
            "{:?}",
            report.violations
        );
    }

    #[test]
    fn valve_ports_move_in_opposite_directions() {
        let v = ValveModel {
            id: "v".into(),
            user_edge: "u".into(),
            bypass_edge: "b".into(),
            user_k_range: [1.0, f64::INFINITY],
            bypass_k_range: [2.0, 200.0],
            characteristic: ValveCharacteristic::Linear,
        };
        assert!(v.user_k(0.0).is_infinite());
        assert_eq!(v.user_k(1.0), 1.0);
        assert!((v.bypass_k(0.0) - 2.0).abs() < 1e-12);
        assert!((v.bypass_k(1.0) - 200.0).abs() < 1e-9);
        let mut last = f64::INFINITY;
        for i in 0..=10 {
            let k = v.user_k(i as f64 / 10.0);
            assert!(k <= last);
            last = k;
        }
    }

    #[test]
    fn equal_percentage_endpoints() {
        let v = ValveModel {
            id: "v".into(),
            user_edge: "u".into(),
            bypass_edge: "b".into(),
            user_k_range: [4.0, 400.0],
            bypass_k_range: [4.0, 400.0],
            characteristic: ValveCharacteristic::EqualPercentage,
        };
        assert!((v.user_k(0.0) - 400.0).abs() < 1e-9);
        assert!((v.user_k(0.5) - 40.0).abs() < 1e-9);
        assert_eq!(v.user_k(1.0), 4.0);
        assert!((v.bypass_k(1.0) - 400.0).abs() < 1e-9);
    }
}
