//! Post-processing of trajectories: enthalpy accounting, phases, efficiency,
//! transport delay, statistics and scale comparison.
//!
//! Everything here works on [`Table`]s so that simulated runs and ingested
//! measurements go through the same code.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::model::NetworkModel;
use crate::scenario::Phase;
use crate::similitude::{nondim_time, NondimBase};
use crate::trajectory::Table;
use crate::{Error, Result};

/// Per-sample enthalpy terms [W].
#[derive(Debug, Clone, PartialEq)]
pub struct EnthalpyLosses {
    pub time: Vec<f64>,
    /// `ṁ_I c_p (T_s − T_r)`
    pub q_tot: Vec<f64>,
    /// `ṁ_HX c_p (T_in − T_out)` per thermal mass, model order.
    pub q_thm: Vec<Vec<f64>>,
    /// `Q_tot − Σ Q_ThM`
    pub q_amb: Vec<f64>,
    /// Heater shell loss `hA (T_s − T_a)`, outside `Q_tot`.
    pub q_heater: Vec<f64>,
}

pub fn enthalpy_losses(table: &Table, model: &NetworkModel) -> Result<EnthalpyLosses> {
    let mut need: Vec<String> = ["t_s", "T_supply_C", "T_return_C", "T_ambient_C"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let exchangers: Vec<&str> = model
        .thermal_masses
        .iter()
        .map(|m| m.heat_exchanger.as_str())
        .collect();
    for hx in &exchangers {
        need.push(format!("Tin_{hx}_C"));
        need.push(format!("T_{hx}_C"));
        need.push(format!("mdot_{hx}_kgps"));
    }
    table.require(&need)?;
    let cp = model.fluid.cp;
    let ts = table.column("T_supply_C")?;
    let tr = table.column("T_return_C")?;
    let ta = table.column("T_ambient_C")?;
    let q_tot: Vec<f64> = ts
        .iter()
        .zip(tr)
        .map(|(s, r)| model.plant.mass_flow * cp * (s - r))
        .collect();
    let mut q_thm = Vec::new();
    for hx in &exchangers {
        let tin = table.column(&format!("Tin_{hx}_C"))?;
        let tout = table.column(&format!("T_{hx}_C"))?;
        let m = table.column(&format!("mdot_{hx}_kgps"))?;
        q_thm.push(
            (0..table.rows())
                .map(|k| m[k] * cp * (tin[k] - tout[k]))
                .collect::<Vec<f64>>(),
        );
    }
    let q_amb = (0..table.rows())
        .map(|k| q_tot[k] - q_thm.iter().map(|q| q[k]).sum::<f64>())
        .collect();
    let q_heater = ts
        .iter()
        .zip(ta)
        .map(|(s, a)| model.plant.heater_conductance * (s - a))
        .collect();
    Ok(EnthalpyLosses {
        time: table.column("t_s")?.to_vec(),
        q_tot,
        q_thm,
        q_amb,
        q_heater,
    })
}

/// Sample intervals `[t_k, t_{k+1})` labelled by phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhasePartition {
    pub time: Vec<f64>,
    /// Phase of each interval starting at `time[k]`; `None` for mixed states.
    pub labels: Vec<Option<Phase>>,
}

impl PhasePartition {
    /// Every interval of the run as one phase.
    pub fn uniform(time: &[f64], phase: Option<Phase>) -> Self {
        Self {
            time: time.to_vec(),
            labels: vec![phase; time.len().saturating_sub(1)],
        }
    }

    /// Whether interval `k` belongs to `phase`; every interval is overall.
    pub fn contains(&self, k: usize, phase: Phase) -> bool {
        phase == Phase::Overall || self.labels[k] == Some(phase)
    }

    /// Merged `[start, end)` spans of a phase.
    pub fn intervals(&self, phase: Phase) -> Vec<(f64, f64)> {
        let mut out: Vec<(f64, f64)> = Vec::new();
        for k in 0..self.labels.len() {
            if self.contains(k, phase) {
                match out.last_mut() {
                    Some(last) if last.1 == self.time[k] => last.1 = self.time[k + 1],
                    _ => out.push((self.time[k], self.time[k + 1])),
                }
            }
        }
        out
    }

    pub fn duration(&self, phase: Phase) -> f64 {
        self.intervals(phase).iter().map(|(a, b)| b - a).sum()
    }

    /// Whether sample `k` lies in a phase, taking the label of the interval it starts.
    pub fn sample_in(&self, k: usize, phase: Phase) -> bool {
        if phase == Phase::Overall {
            return true;
        }
        let idx = k.min(self.labels.len().saturating_sub(1));
        !self.labels.is_empty() && self.labels[idx] == Some(phase)
    }
}

/// Label the run from the occupancy flags and mass temperatures.
///
/// Cooling: every mass outside its occupancy window. Steady state: every mass
/// occupied and within `band` of its setpoint for runs of at least `window`
/// seconds. Heating: every mass occupied and not steady.
pub fn partition_phases(table: &Table, masses: &[String], band: f64, window: f64) -> Result<PhasePartition> {
    let mut need = vec!["t_s".to_string()];
    for m in masses {
        need.push(format!("heat_{m}_flag"));
        need.push(format!("T_{m}_C"));
        need.push(format!("Tset_{m}_C"));
    }
    table.require(&need)?;
    let t = table.column("t_s")?;
    let n = t.len();
    let mut heating = vec![true; n];
    let mut cooling = vec![true; n];
    let mut steady = vec![true; n];
    for m in masses {
        let flag = table.column(&format!("heat_{m}_flag"))?;
        let temp = table.column(&format!("T_{m}_C"))?;
        let sp = table.column(&format!("Tset_{m}_C"))?;
        let in_band: Vec<bool> = (0..n)
            .map(|k| flag[k] > 0.5 && (temp[k] - sp[k]).abs() < band)
            .collect();
        let mut sustained = vec![false; n];
        let mut k = 0;
        while k < n {
            if !in_band[k] {
                k += 1;
                continue;
            }
            let start = k;
            while k < n && in_band[k] {
                k += 1;
            }
            let end_t = if k < n { t[k] } else { t[n - 1] };
            if end_t - t[start] >= window {
                sustained[start..k].iter_mut().for_each(|s| *s = true);
            }
        }
        for k in 0..n {
            heating[k] &= flag[k] > 0.5;
            cooling[k] &= flag[k] <= 0.5;
            steady[k] &= sustained[k];
        }
    }
    let labels = (0..n.saturating_sub(1))
        .map(|k| {
            if cooling[k] {
                Some(Phase::Cooling)
            } else if steady[k] {
                Some(Phase::SteadyState)
            } else if heating[k] {
                Some(Phase::Heating)
            } else {
                None
            }
        })
        .collect();
    Ok(PhasePartition {
        time: t.to_vec(),
        labels,
    })
}

/// Trapezoidal integral of `q` over the intervals of `phase`.
fn integrate(p: &PhasePartition, q: &[f64], phase: Phase) -> f64 {
    (0..p.labels.len())
        .filter(|&k| p.contains(k, phase))
        .map(|k| 0.5 * (q[k] + q[k + 1]) * (p.time[k + 1] - p.time[k]))
        .sum()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhaseEfficiency {
    pub phase: Phase,
    /// [s]
    pub duration: f64,
    /// `∫ Q_tot` [J]
    pub supplied: f64,
    /// `∫ Σ Q_ThM` [J]
    pub delivered: f64,
    /// `delivered / supplied`; `None` when nothing was supplied.
    pub useful: Option<f64>,
}

impl PhaseEfficiency {
    pub fn lost(&self) -> Option<f64> {
        self.useful.map(|u| 1.0 - u)
    }
}

pub fn efficiency_by_phase(losses: &EnthalpyLosses, partition: &PhasePartition) -> Vec<PhaseEfficiency> {
    let delivered: Vec<f64> = (0..losses.time.len())
        .map(|k| losses.q_thm.iter().map(|q| q[k]).sum())
        .collect();
    Phase::ALL
        .iter()
        .map(|&phase| {
            let supplied = integrate(partition, &losses.q_tot, phase);
            let delivered = integrate(partition, &delivered, phase);
            PhaseEfficiency {
                phase,
                duration: partition.duration(phase),
                supplied,
                delivered,
                useful: (supplied != 0.0).then(|| delivered / supplied),
            }
        })
        .collect()
}

/// Where the heat put into the water went, per phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyBreakdown {
    pub phase: Phase,
    /// `(component, energy [J])`: the network's ambient loss, the heater
    /// shell loss and one entry per thermal mass.
    pub parts: Vec<(String, f64)>,
}

impl EnergyBreakdown {
    pub fn total(&self) -> f64 {
        self.parts.iter().map(|p| p.1).sum()
    }

    pub fn fractions(&self) -> Vec<(String, f64)> {
        let total = self.total();
        self.parts
            .iter()
            .map(|(n, e)| (n.clone(), if total != 0.0 { e / total } else { 0.0 }))
            .collect()
    }
}

pub fn energy_breakdown(
    losses: &EnthalpyLosses,
    partition: &PhasePartition,
    model: &NetworkModel,
) -> Vec<EnergyBreakdown> {
    Phase::ALL
        .iter()
        .map(|&phase| {
            let mut parts = vec![
                ("pipes".to_string(), integrate(partition, &losses.q_amb, phase)),
                ("heater".to_string(), integrate(partition, &losses.q_heater, phase)),
            ];
            for (m, q) in model.thermal_masses.iter().zip(&losses.q_thm) {
                parts.push((m.id.clone(), integrate(partition, q, phase)));
            }
            EnergyBreakdown { phase, parts }
        })
        .collect()
}

/// Independent check of the enthalpy balance: `∫ Q_amb` against the summed
/// segment losses plus the change of energy stored in the pipes and coils.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossAudit {
    /// `∫ Q_amb` from enthalpies [J].
    pub enthalpy: f64,
    /// `∫ Σ hA_s (T_p − T_a)` [J].
    pub segment_losses: f64,
    /// Energy gained by the water in the pipes between the run's ends [J].
    pub storage: f64,
    pub relative_error: f64,
}

/// Compare `∫ Q_amb` from the sampled enthalpies with the summed segment
/// losses plus pipe storage. Both integrals are trapezoidal over the output
/// samples, so the agreement depends on the output interval resolving the
/// valve updates.
pub fn loss_audit(table: &Table, model: &NetworkModel) -> Result<LossAudit> {
    let losses = enthalpy_losses(table, model)?;
    let all = PhasePartition::uniform(&losses.time, None);
    let enthalpy = integrate(&all, &losses.q_amb, Phase::Overall);
    let mut segment_losses = 0.0;
    for s in &model.segments {
        segment_losses += integrate(&all, table.column(&format!("Qloss_{}_W", s.id))?, Phase::Overall);
    }
    // Pipe storage: total water energy change from the exact in-state
    // integrals, minus what the coils gained.
    let delta = |name: &str| -> Result<f64> {
        let c = table.column(name)?;
        Ok(c[c.len() - 1] - c[0])
    };
    let fluid = delta("E_supplied_J")? - delta("E_pipe_loss_J")? - delta("E_delivered_J")?;
    let mut coils = 0.0;
    for h in &model.heat_exchangers {
        coils += model.fluid.rho * model.fluid.cp * h.volume * delta(&format!("T_{}_C", h.id))?;
    }
    let storage = fluid - coils;
    let reference = segment_losses + storage;
    let relative_error = if reference != 0.0 {
        (enthalpy - reference).abs() / reference.abs()
    } else {
        enthalpy.abs()
    };
    Ok(LossAudit {
        enthalpy,
        segment_losses,
        storage,
        relative_error,
    })
}

/// Averaged supply-to-return lag of matched extrema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayEstimate {
    /// [s]
    pub seconds: f64,
    pub t_star: f64,
    pub pairs: usize,
}

/// Refined times of prominent local maxima of `x`.
fn prominent_peaks(t: &[f64], x: &[f64], min_prominence: f64) -> Vec<f64> {
    let n = x.len();
    let mut out = Vec::new();
    let mut k = 1;
    while k + 1 < n {
        if !(x[k] > x[k - 1]) {
            k += 1;
            continue;
        }
        // Walk over a plateau.
        let mut j = k;
        while j + 1 < n && x[j + 1] == x[k] {
            j += 1;
        }
        if j + 1 >= n || x[j + 1] > x[k] {
            k = j + 1;
            continue;
        }
        let peak = x[k];
        let mut left_min = peak;
        let mut i = k;
        while i > 0 && x[i - 1] <= peak {
            i -= 1;
            left_min = left_min.min(x[i]);
        }
        let mut right_min = peak;
        let mut i = j;
        while i + 1 < n && x[i + 1] <= peak {
            i += 1;
            right_min = right_min.min(x[i]);
        }
        let prominence = peak - left_min.max(right_min);
        if prominence >= min_prominence {
            let time = if j == k {
                // Vertex of the parabola through the three samples around the peak.
                let (a, b, cc) = (x[k - 1], x[k], x[k + 1]);
                let denom = a - 2.0 * b + cc;
                let h = t[k + 1] - t[k];
                if denom != 0.0 {
                    t[k] + 0.5 * (a - cc) / denom * h
                } else {
                    t[k]
                }
            } else {
                0.5 * (t[k] + t[j])
            };
            out.push(time);
        }
        k = j + 1;
    }
    out
}

/// Supply-to-return delay by pairing each prominent supply extremum with the
/// next return extremum of the same kind.
///
/// Prominence threshold is `prominence` times the signal's range.
pub fn peak_valley_delay(
    t: &[f64],
    supply: &[f64],
    ret: &[f64],
    prominence: f64,
    base: &NondimBase,
) -> Result<DelayEstimate> {
    let range = |x: &[f64]| {
        x.iter().copied().fold(f64::MIN, f64::max) - x.iter().copied().fold(f64::MAX, f64::min)
    };
    let (rs, rr) = (range(supply), range(ret));
    if !(rs > 0.0) || !(rr > 0.0) {
        return Err(Error::InsufficientVariation("a series is constant".into()));
    }
    let neg = |x: &[f64]| x.iter().map(|v| -v).collect::<Vec<f64>>();
    let mut lags = Vec::new();
    for (s, r) in [
        (prominent_peaks(t, supply, prominence * rs), prominent_peaks(t, ret, prominence * rr)),
        (
            prominent_peaks(t, &neg(supply), prominence * rs),
            prominent_peaks(t, &neg(ret), prominence * rr),
        ),
    ] {
        for (i, &ts) in s.iter().enumerate() {
            let next_supply = s.get(i + 1).copied().unwrap_or(f64::INFINITY);
            if let Some(&tr) = r.iter().find(|&&tr| tr >= ts) {
                if tr < next_supply {
                    lags.push(tr - ts);
                }
            }
        }
    }
    if lags.is_empty() {
        return Err(Error::InsufficientVariation(
            "no matched supply/return extrema".into(),
        ));
    }
    let seconds = lags.iter().sum::<f64>() / lags.len() as f64;
    Ok(DelayEstimate {
        seconds,
        t_star: nondim_time(seconds, base),
        pairs: lags.len(),
    })
}

/// Sum of residence times `ρV/ṁ` along the supply main, loop supply,
/// user branch, loop return and return main, weighted by loop flow.
pub fn residence_delay(model: &NetworkModel, flows: &crate::hydraulics::FlowState) -> Result<f64> {
    let layout = model.layout().map_err(Error::Invalid)?;
    let rho = model.fluid.rho;
    let residence = |e: crate::model::EdgeRef| -> f64 {
        let (v, m) = match e {
            crate::model::EdgeRef::Segment(j) => (model.segments[j].volume(), flows.segment_flow[j]),
            crate::model::EdgeRef::Exchanger(i) => (model.heat_exchangers[i].volume, flows.exchanger_flow[i]),
        };
        if m > 0.0 {
            rho * v / m
        } else {
            0.0
        }
    };
    let trunk: f64 = layout
        .supply_trunk
        .iter()
        .chain(&layout.return_trunk)
        .map(|&e| residence(e))
        .sum();
    let total: f64 = flows.loop_flow.iter().sum();
    let mut loops = 0.0;
    for (lp, &flow) in layout.loops.iter().zip(&flows.loop_flow) {
        let mut path: f64 = lp.supply.iter().chain(&lp.ret).map(|&e| residence(e)).sum();
        // The bypass carries most of the loop flow at design; follow the larger branch.
        let user_flow = flows.edge_flow(lp.user[0]);
        let bypass_flow = flows.edge_flow(lp.bypass[0]);
        let branch = if user_flow >= bypass_flow { &lp.user } else { &lp.bypass };
        path += branch.iter().map(|&e| residence(e)).sum::<f64>();
        loops += path * flow / total;
    }
    Ok(trunk + loops)
}

/// Summary statistics of one mass's `T_ThM*` over one phase.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MassStatistics {
    pub mass: String,
    pub phase: Phase,
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub median: f64,
    pub q25: f64,
    pub q75: f64,
}

/// Linear-interpolation quantile of sorted data (type 7).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn describe(values: &[f64]) -> Result<(f64, f64, f64, f64, f64)> {
    if values.is_empty() {
        return Err(Error::EmptyInterval("no samples".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok((
        mean,
        std,
        quantile_sorted(&sorted, 0.5),
        quantile_sorted(&sorted, 0.25),
        quantile_sorted(&sorted, 0.75),
    ))
}

/// Per-mass statistics of the `TThMstar_<id>` columns of a nondimensional
/// table, for every phase that has samples.
pub fn trajectory_statistics(
    nondim: &Table,
    partition: &PhasePartition,
    masses: &[String],
) -> Result<Vec<MassStatistics>> {
    if nondim.rows() == 0 {
        return Err(Error::EmptyInterval("trajectory has no samples".into()));
    }
    let need: Vec<String> = masses.iter().map(|m| format!("TThMstar_{m}")).collect();
    nondim.require(&need)?;
    let mut out = Vec::new();
    for m in masses {
        let col = nondim.column(&format!("TThMstar_{m}"))?;
        for &phase in &Phase::ALL {
            let values: Vec<f64> = (0..col.len())
                .filter(|&k| partition.sample_in(k, phase))
                .map(|k| col[k])
                .collect();
            if values.is_empty() {
                continue;
            }
            let (mean, std, median, q25, q75) = describe(&values)?;
            out.push(MassStatistics {
                mass: m.clone(),
                phase,
                n: values.len(),
                mean,
                std,
                median,
                q25,
                q75,
            });
        }
    }
    Ok(out)
}

/// Differences between two nondimensional tables on a shared t* grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonReport {
    pub t_star: Vec<f64>,
    /// Per common `Tstar_`/`TThMstar_` column: `(name, rms, max |Δ|)`.
    pub residuals: Vec<(String, f64, f64)>,
    /// Per mass: mean `T_ThM*` of `b` over mean of `a`.
    pub mean_ratio: BTreeMap<String, f64>,
    /// `b − a` on the grid, one column per compared channel.
    pub differences: Table,
}

impl ComparisonReport {
    pub fn rms(&self, name: &str) -> Option<f64> {
        self.residuals.iter().find(|r| r.0 == name).map(|r| r.1)
    }

    pub fn max_rms(&self, prefix: &str) -> f64 {
        self.residuals
            .iter()
            .filter(|r| r.0.starts_with(prefix))
            .map(|r| r.1)
            .fold(0.0, f64::max)
    }

    /// Overlay table: `t_star`, then `a_<name>`, `b_<name>` and `diff_<name>`.
    pub fn overlay(&self, a: &Table, b: &Table) -> Result<Table> {
        let mut out = Table::new();
        out.push("t_star", self.t_star.clone());
        for (name, _, _) in &self.residuals {
            out.push(&format!("a_{name}"), resample(a, name, &self.t_star)?);
            out.push(&format!("b_{name}"), resample(b, name, &self.t_star)?);
            out.push(&format!("diff_{name}"), self.differences.column(name)?.to_vec());
        }
        Ok(out)
    }
}

fn interp(t: &[f64], x: &[f64], at: f64) -> f64 {
    match t.partition_point(|&v| v <= at) {
        0 => x[0],
        i if i >= t.len() => x[t.len() - 1],
        i => {
            let (t0, t1) = (t[i - 1], t[i]);
            x[i - 1] + (x[i] - x[i - 1]) * (at - t0) / (t1 - t0)
        }
    }
}

fn resample(table: &Table, name: &str, grid: &[f64]) -> Result<Vec<f64>> {
    let t = table.column("t_star")?;
    let x = table.column(name)?;
    Ok(grid.iter().map(|&g| interp(t, x, g)).collect())
}

/// Compare two nondimensional tables (`a` typically full scale, `b` lab).
///
/// The spans must agree to within 5% of the longer one.
pub fn compare_runs(a: &Table, b: &Table) -> Result<ComparisonReport> {
    let ta = a.column("t_star")?;
    let tb = b.column("t_star")?;
    if ta.is_empty() || tb.is_empty() {
        return Err(Error::EmptyInterval("trajectory has no samples".into()));
    }
    let (a0, a1) = (ta[0], ta[ta.len() - 1]);
    let (b0, b1) = (tb[0], tb[tb.len() - 1]);
    let lo = a0.max(b0);
    let hi = a1.min(b1);
    let longest = (a1 - a0).max(b1 - b0);
    if hi < lo || (longest > 0.0 && (hi - lo) < 0.95 * longest) {
        return Err(Error::SpanMismatch { a0, a1, b0, b1 });
    }
    let grid: Vec<f64> = ta.iter().copied().filter(|&t| t >= lo && t <= hi).collect();
    let mut residuals = Vec::new();
    let mut differences = Table::new();
    differences.push("t_star", grid.clone());
    let mut mean_ratio = BTreeMap::new();
    for name in a.names() {
        if !(name.starts_with("Tstar_") || name.starts_with("TThMstar_")) || !b.has(name) {
            continue;
        }
        let xa = resample(a, name, &grid)?;
        let xb = resample(b, name, &grid)?;
        let d: Vec<f64> = xa.iter().zip(&xb).map(|(p, q)| q - p).collect();
        let rms = (d.iter().map(|v| v * v).sum::<f64>() / d.len().max(1) as f64).sqrt();
        let max = d.iter().map(|v| v.abs()).fold(0.0, f64::max);
        if let Some(id) = name.strip_prefix("TThMstar_") {
            let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len() as f64;
            mean_ratio.insert(id.to_string(), mean(&xb) / mean(&xa));
        }
        residuals.push((name.clone(), rms, max));
        differences.push(name, d);
    }
    Ok(ComparisonReport {
        t_star: grid,
        residuals,
        mean_ratio,
        differences,
    })
}

/// Everything the metrics pipeline reports for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub efficiency: Vec<PhaseEfficiency>,
    pub breakdown: Vec<EnergyBreakdown>,
    pub audit: LossAudit,
    pub delay: Option<DelayEstimate>,
    pub statistics: Vec<MassStatistics>,
    /// RMS of `T_ThM − T_set` while occupied [K], per mass.
    pub tracking_rms: BTreeMap<String, f64>,
}

impl MetricsReport {
    pub fn efficiency(&self, phase: Phase) -> Option<f64> {
        self.efficiency.iter().find(|e| e.phase == phase).and_then(|e| e.useful)
    }

    pub fn statistics(&self, mass: &str, phase: Phase) -> Option<&MassStatistics> {
        self.statistics.iter().find(|s| s.mass == mass && s.phase == phase)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str("efficiency (useful fraction)\n");
        for e in &self.efficiency {
            s.push_str(&format!(
                "  {:<13} {:>8}  duration {:.0} s\n",
                e.phase.as_str(),
                e.useful.map_or("undefined".to_string(), |u| format!("{u:.4}")),
                e.duration
            ));
        }
        s.push_str("energy breakdown\n");
        for b in &self.breakdown {
            let parts: Vec<String> = b
                .fractions()
                .iter()
                .map(|(n, f)| format!("{n} {f:.4}"))
                .collect();
            s.push_str(&format!("  {:<13} {}\n", b.phase.as_str(), parts.join(", ")));
        }
        s.push_str(&format!(
            "loss audit: enthalpy {:.4e} J vs segments {:.4e} J + storage {:.4e} J (rel. error {:.2e})\n",
            self.audit.enthalpy, self.audit.segment_losses, self.audit.storage, self.audit.relative_error
        ));
        if let Some(d) = &self.delay {
            s.push_str(&format!(
                "delay: {:.1} s, t* {:.0} ({} pairs)\n",
                d.seconds, d.t_star, d.pairs
            ));
        }
        for st in &self.statistics {
            s.push_str(&format!(
                "  {} {:<13} mean {:+.4e} std {:.4e} median {:+.4e} q25 {:+.4e} q75 {:+.4e}\n",
                st.mass,
                st.phase.as_str(),
                st.mean,
                st.std,
                st.median,
                st.q25,
                st.q75
            ));
        }
        for (m, r) in &self.tracking_rms {
            s.push_str(&format!("tracking RMS {m}: {r:.4} K\n"));
        }
        s
    }

    /// `section,key,value` rows.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["section", "key", "value"])?;
        for e in &self.efficiency {
            w.write_record([
                "efficiency",
                e.phase.as_str(),
                &e.useful.map_or(String::new(), |u| format!("{u:.9}")),
            ])?;
        }
        for b in &self.breakdown {
            for (n, f) in b.fractions() {
                w.write_record(["breakdown", &format!("{}:{n}", b.phase.as_str()), &format!("{f:.9}")])?;
            }
        }
        w.write_record(["audit", "relative_error", &format!("{:.9e}", self.audit.relative_error)])?;
        if let Some(d) = &self.delay {
            w.write_record(["delay", "seconds", &format!("{:.6}", d.seconds)])?;
            w.write_record(["delay", "t_star", &format!("{:.6}", d.t_star)])?;
        }
        for st in &self.statistics {
            let key = format!("{}:{}", st.mass, st.phase.as_str());
            for (k, v) in [("mean", st.mean), ("std", st.std), ("median", st.median), ("q25", st.q25), ("q75", st.q75)] {
                w.write_record(["statistics", &format!("{key}:{k}"), &format!("{v:.9e}")])?;
            }
        }
        for (m, r) in &self.tracking_rms {
            w.write_record(["tracking_rms", m.as_str(), &format!("{r:.9}")])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Io(e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("utf-8"))
    }
}

/// Settings for [`metrics`].
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsOptions {
    pub band: f64,
    pub window: f64,
    pub prominence: f64,
}

impl Default for MetricsOptions {
    fn default() -> Self {
        Self {
            band: 0.5,
            window: 1800.0,
            prominence: 0.05,
        }
    }
}

/// Full metrics for a dimensional table with its nondimensional counterpart.
pub fn metrics(
    table: &Table,
    nondim: &Table,
    model: &NetworkModel,
    base: &NondimBase,
    opts: &MetricsOptions,
) -> Result<MetricsReport> {
    let masses: Vec<String> = model.thermal_masses.iter().map(|m| m.id.clone()).collect();
    let losses = enthalpy_losses(table, model)?;
    let partition = partition_phases(table, &masses, opts.band, opts.window)?;
    let t = table.column("t_s")?;
    let delay = peak_valley_delay(
        t,
        table.column("T_supply_C")?,
        table.column("T_return_C")?,
        opts.prominence,
        base,
    )
    .ok();
    let mut tracking_rms = BTreeMap::new();
    for m in &masses {
        let temp = table.column(&format!("T_{m}_C"))?;
        let sp = table.column(&format!("Tset_{m}_C"))?;
        let flag = table.column(&format!("heat_{m}_flag"))?;
        let e: Vec<f64> = (0..t.len())
            .filter(|&k| flag[k] > 0.5)
            .map(|k| (temp[k] - sp[k]).powi(2))
            .collect();
        if !e.is_empty() {
            tracking_rms.insert(m.clone(), (e.iter().sum::<f64>() / e.len() as f64).sqrt());
        }
    }
    Ok(MetricsReport {
        efficiency: efficiency_by_phase(&losses, &partition),
        breakdown: energy_breakdown(&losses, &partition, model),
        audit: loss_audit(table, model)?,
        delay,
        statistics: trajectory_statistics(nondim, &partition, &masses)?,
        tracking_rms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn base() -> NondimBase {
        crate::nominal::lab_scale_base()
    }

    #[test]
    fn pure_shift_is_recovered_exactly() {
        let t: Vec<f64> = (0..2000).map(|k| k as f64).collect();
        let f = |x: f64| 30.0 + 3.0 * (2.0 * std::f64::consts::PI * x / 400.0).sin();
        let s: Vec<f64> = t.iter().map(|&x| f(x)).collect();
        let r: Vec<f64> = t.iter().map(|&x| f(x - 37.0)).collect();
        let d = peak_valley_delay(&t, &s, &r, 0.05, &base()).unwrap();
        assert!((d.seconds - 37.0).abs() < 1e-6, "{d:?}");
        assert!(d.pairs >= 6);
    }

    #[test]
    fn constant_signal_has_no_delay() {
        let t: Vec<f64> = (0..10).map(|k| k as f64).collect();
        let c = vec![1.0; 10];
        assert!(matches!(
            peak_valley_delay(&t, &c, &c, 0.05, &base()),
            Err(Error::InsufficientVariation(_))
        ));
    }

    #[test]
    fn constant_statistics() {
        let (mean, std, med, q25, q75) = describe(&[0.25; 7]).unwrap();
        assert_eq!((mean, std, med, q25, q75), (0.25, 0.0, 0.25, 0.25, 0.25));
        assert!(describe(&[]).is_err());
    }

    proptest! {
        #[test]
        fn quantiles_match_brute_force(mut v in proptest::collection::vec(-1e3f64..1e3, 1..60), q in 0.0f64..1.0) {
            v.sort_by(f64::total_cmp);
            // Brute force: the fraction of points at or below the type-7
            // estimate brackets q·(n−1)/(n−1).
            let est = quantile_sorted(&v, q);
            let n = v.len();
            let h = (n - 1) as f64 * q;
            let lo = v[h.floor() as usize];
            let hi = v[(h.ceil() as usize).min(n - 1)];
            prop_assert!(est >= lo - 1e-9 && est <= hi + 1e-9);
            let below = v.iter().filter(|&&x| x < est - 1e-9).count();
            prop_assert!(below <= h.ceil() as usize);
        }

        #[test]
        fn shift_by_whole_samples_is_exact(shift in 1usize..40, period in 150.0f64..400.0) {
            let t: Vec<f64> = (0..3000).map(|k| k as f64 * 0.5).collect();
            let f = |x: f64| (2.0 * std::f64::consts::PI * x / period).cos();
            let s: Vec<f64> = t.iter().map(|&x| f(x)).collect();
            let r: Vec<f64> = t.iter().map(|&x| 0.8 * f(x - shift as f64 * 0.5) + 10.0).collect();
            let d = peak_valley_delay(&t, &s, &r, 0.05, &base()).unwrap();
            prop_assert!((d.seconds - shift as f64 * 0.5).abs() < 1e-6, "{:?}", d);
        }

        #[test]
        fn efficiency_is_time_unit_invariant(scale in 0.01f64..100.0) {
            let time: Vec<f64> = (0..50).map(|k| k as f64).collect();
            let q_tot: Vec<f64> = (0..50).map(|k| 100.0 + (k as f64).sin() * 10.0).collect();
            let q1: Vec<f64> = q_tot.iter().map(|q| 0.4 * q).collect();
            let mk = |time: Vec<f64>| EnthalpyLosses {
                q_amb: q_tot.iter().zip(&q1).map(|(a, b)| a - b).collect(),
                q_heater: vec![0.0; 50],
                q_tot: q_tot.clone(),
                q_thm: vec![q1.clone()],
                time,
            };
            let a = mk(time.clone());
            let b = mk(time.iter().map(|t| t * scale).collect());
            let ea = efficiency_by_phase(&a, &PhasePartition::uniform(&a.time, Some(Phase::Heating)));
            let eb = efficiency_by_phase(&b, &PhasePartition::uniform(&b.time, Some(Phase::Heating)));
            for (x, y) in ea.iter().zip(&eb) {
                prop_assert!((x.useful.unwrap_or(0.0) - y.useful.unwrap_or(0.0)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn self_comparison_is_zero() {
        let mut t = Table::new();
        t.push("t_star", vec![0.0, 1.0, 2.0]);
        t.push("TThMstar_A", vec![-0.01, 0.0, 0.02]);
        let r = compare_runs(&t, &t).unwrap();
        assert_eq!(r.rms("TThMstar_A"), Some(0.0));
        assert_eq!(r.mean_ratio["A"], 1.0);
    }

    #[test]
    fn disjoint_spans_are_rejected() {
        let mut a = Table::new();
        a.push("t_star", vec![0.0, 1.0]);
        let mut b = Table::new();
        b.push("t_star", vec![5.0, 6.0]);
        assert!(matches!(compare_runs(&a, &b), Err(Error::SpanMismatch { .. })));
    }
}
