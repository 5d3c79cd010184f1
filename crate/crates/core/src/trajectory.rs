//! Column tables, the trajectory CSV format and its metadata sidecar.
//!
//! The first column is `t_s`. Every other column ends in a unit suffix:
//! `_C`, `_kgps`, `_Pa`, `_W`, `_J` or `_frac`, with `_flag` for 0/1
//! indicators. Time is written with six decimals and all other values with
//! nine, so identical runs give identical bytes.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use crate::model::NetworkModel;
use crate::sim::{RunMetadata, SimulationTrajectory};
use crate::thermal::{energy, Boundary, Dynamics};
use crate::{Error, Result};

/// Named, equally long `f64` columns in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl Table {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append a column, replacing an existing one of the same name.
    pub fn push(&mut self, name: &str, values: Vec<f64>) {
        match self.names.iter().position(|n| n == name) {
            Some(i) => self.columns[i] = values,
            None => {
                self.names.push(name.to_string());
                self.columns.push(values);
            }
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn rows(&self) -> usize {
        self.columns.first().map_or(0, Vec::len)
    }

    pub fn has(&self, name: &str) -> bool {
        self.names.iter().any(|n| n == name)
    }

    pub fn get(&self, name: &str) -> Option<&[f64]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
    }

    pub fn column(&self, name: &str) -> Result<&[f64]> {
        self.get(name)
            .ok_or_else(|| Error::MissingChannels(vec![name.to_string()]))
    }

    /// Fail with every name in `names` that is absent.
    pub fn require(&self, names: &[String]) -> Result<()> {
        let missing: Vec<String> = names.iter().filter(|n| !self.has(n)).cloned().collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::MissingChannels(missing))
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[f64])> {
        self.names
            .iter()
            .map(String::as_str)
            .zip(self.columns.iter().map(Vec::as_slice))
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(&self.names)?;
        let mut record = Vec::with_capacity(self.names.len());
        for r in 0..self.rows() {
            record.clear();
            for (name, col) in self.iter() {
                record.push(if name == "t_s" {
                    format!("{:.6}", col[r])
                } else {
                    format!("{:.9}", col[r])
                });
            }
            out.write_record(&record)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Table> {
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
        let names: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        let mut columns = vec![Vec::new(); names.len()];
        for (i, rec) in rdr.records().enumerate() {
            let rec = rec?;
            for (j, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| Error::Parse {
                    line: i + 2,
                    message: format!("column `{}`: `{field}` is not a number", names[j]),
                })?;
                columns[j].push(v);
            }
        }
        Ok(Table { names, columns })
    }

    /// Subset of rows `[start, end)`.
    pub fn slice(&self, start: usize, end: usize) -> Table {
        Table {
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[start..end].to_vec()).collect(),
        }
    }
}

/// Path of the metadata file written next to a trajectory CSV.
pub fn sidecar_path(csv: &Path) -> PathBuf {
    let mut name = csv.as_os_str().to_owned();
    name.push(".meta.json");
    PathBuf::from(name)
}

pub fn write_trajectory(path: &Path, table: &Table, meta: &RunMetadata) -> Result<()> {
    table.write_csv(std::fs::File::create(path)?)?;
    let json = serde_json::to_string_pretty(meta)?;
    std::fs::write(sidecar_path(path), json + "\n")?;
    Ok(())
}

/// Read a trajectory CSV and its sidecar, if present.
pub fn read_trajectory(path: &Path) -> Result<(Table, Option<RunMetadata>)> {
    let table = Table::read_csv(std::fs::File::open(path)?)?;
    let side = sidecar_path(path);
    let meta = if side.exists() {
        Some(serde_json::from_str(&std::fs::read_to_string(side)?)?)
    } else {
        None
    };
    Ok((table, meta))
}

/// Names of the energy-integral columns, in state order.
pub const ENERGY_COLUMNS: [&str; 6] = [
    "E_supplied_J",
    "E_pipe_loss_J",
    "E_delivered_J",
    "E_mass_loss_J",
    "E_peltier_J",
    "E_heater_loss_J",
];

/// Flatten a simulated trajectory into the canonical columns.
pub fn trajectory_table(model: &NetworkModel, traj: &SimulationTrajectory) -> Result<Table> {
    let layout = model.layout().map_err(Error::Invalid)?;
    let st = traj.state_layout;
    let n = traj.samples.len();
    let mut cols: Vec<(String, Vec<f64>)> = Vec::new();
    let add = |name: String, cols: &mut Vec<(String, Vec<f64>)>| -> usize {
        cols.push((name, Vec::with_capacity(n)));
        cols.len() - 1
    };
    let c_t = add("t_s".into(), &mut cols);
    let c_ts = add("T_supply_C".into(), &mut cols);
    let c_tr = add("T_return_C".into(), &mut cols);
    let c_ta = add("T_ambient_C".into(), &mut cols);
    let seg_cols: Vec<[usize; 5]> = model
        .segments
        .iter()
        .map(|s| {
            [
                add(format!("T_{}_C", s.id), &mut cols),
                add(format!("Tin_{}_C", s.id), &mut cols),
                add(format!("mdot_{}_kgps", s.id), &mut cols),
                add(format!("dP_{}_Pa", s.id), &mut cols),
                add(format!("Qloss_{}_W", s.id), &mut cols),
            ]
        })
        .collect();
    let hx_cols: Vec<[usize; 4]> = model
        .heat_exchangers
        .iter()
        .map(|h| {
            [
                add(format!("T_{}_C", h.id), &mut cols),
                add(format!("Tin_{}_C", h.id), &mut cols),
                add(format!("mdot_{}_kgps", h.id), &mut cols),
                add(format!("dP_{}_Pa", h.id), &mut cols),
            ]
        })
        .collect();
    let mass_cols: Vec<[usize; 7]> = model
        .thermal_masses
        .iter()
        .map(|m| {
            [
                add(format!("T_{}_C", m.id), &mut cols),
                add(format!("Tset_{}_C", m.id), &mut cols),
                add(format!("Qin_{}_W", m.id), &mut cols),
                add(format!("Qout_{}_W", m.id), &mut cols),
                add(format!("Qpelt_{}_W", m.id), &mut cols),
                add(format!("Tasim_{}_C", m.id), &mut cols),
                add(format!("heat_{}_flag", m.id), &mut cols),
            ]
        })
        .collect();
    let valve_cols: Vec<[usize; 3]> = model
        .valves
        .iter()
        .map(|v| {
            [
                add(format!("u_{}_frac", v.id), &mut cols),
                add(format!("dPuser_{}_Pa", v.id), &mut cols),
                add(format!("dPbypass_{}_Pa", v.id), &mut cols),
            ]
        })
        .collect();
    let c_dp = add("dP_network_Pa".into(), &mut cols);
    let c_e: Vec<usize> = ENERGY_COLUMNS
        .iter()
        .map(|name| add(name.to_string(), &mut cols))
        .collect();

    for s in &traj.samples {
        let dynamics = Dynamics {
            model,
            layout: &layout,
            state: st,
            flows: &s.flows,
            peltier: &s.peltier,
        };
        let b = Boundary {
            supply_temp: s.supply_temp,
            ambient: s.ambient,
        };
        let nodes = dynamics.node_temperatures(&s.y, b);
        let mut put = |c: usize, v: f64| cols[c].1.push(v);
        put(c_t, s.time);
        put(c_ts, s.supply_temp);
        put(c_tr, nodes.return_temp);
        put(c_ta, s.ambient);
        for (j, seg) in model.segments.iter().enumerate() {
            let range = st.segment(j);
            let loss: f64 = range
                .clone()
                .map(|k| seg.conductance / st.n_sub as f64 * (s.y[k] - s.ambient))
                .sum();
            let c = seg_cols[j];
            put(c[0], s.y[range.end - 1]);
            put(c[1], nodes.segment_inlet[j]);
            put(c[2], s.flows.segment_flow[j]);
            put(c[3], s.flows.segment_dp[j]);
            put(c[4], loss);
        }
        for (i, _) in model.heat_exchangers.iter().enumerate() {
            let c = hx_cols[i];
            put(c[0], s.y[st.exchanger(i)]);
            put(c[1], nodes.exchanger_inlet[i]);
            put(c[2], s.flows.exchanger_flow[i]);
            put(c[3], s.flows.exchanger_dp[i]);
        }
        for (m, tm) in model.thermal_masses.iter().enumerate() {
            let hx = model
                .exchanger_index(&tm.heat_exchanger)
                .expect("validated model");
            let t = s.y[st.mass(m)];
            let q_in = model.heat_exchangers[hx].conductance * (s.y[st.exchanger(hx)] - t);
            let q_pelt = s.peltier[m];
            let t_a_sim = if tm.conductance_simulated > 0.0 {
                crate::similitude::simulated_ambient(
                    t,
                    s.ambient,
                    q_pelt,
                    tm.conductance_actual,
                    tm.conductance_simulated,
                )?
            } else {
                s.ambient
            };
            let c = mass_cols[m];
            put(c[0], t);
            put(c[1], s.setpoints[m]);
            put(c[2], q_in);
            put(c[3], tm.conductance_actual * (t - s.ambient) + q_pelt);
            put(c[4], q_pelt);
            put(c[5], t_a_sim);
            put(c[6], if s.heating[m] { 1.0 } else { 0.0 });
        }
        for (v, _) in model.valves.iter().enumerate() {
            let c = valve_cols[v];
            put(c[0], s.valves[v]);
            put(c[1], s.flows.valve_dp[v][0]);
            put(c[2], s.flows.valve_dp[v][1]);
        }
        put(c_dp, s.flows.network_dp);
        for (k, &c) in c_e.iter().enumerate() {
            put(c, s.y[st.energy(k)]);
        }
    }
    debug_assert_eq!(ENERGY_COLUMNS.len(), energy::HEATER_LOSS + 1);
    let mut table = Table::new();
    for (name, values) in cols {
        table.push(&name, values);
    }
    Ok(table)
}
