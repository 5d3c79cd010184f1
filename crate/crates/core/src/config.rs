//! Plain-text configuration files for networks, scenarios and lab constraints.
//!
//! The format is line based:
//!
//! ```text
//! # comment
//! [plant]
//! supply_temp = 36
//! [segment supply_main]
//! length = 10.8
//! ```
//!
//! A header is a section kind optionally followed by an id. Values are
//! numbers (`1e-3`, `inf`), words, comma-separated number lists, or profiles
//! written as `t:value` pairs. Unknown sections and keys are errors.
//! Command-line overrides use the same grammar: `plant.mass_flow=0.09` or
//! `segment supply_main.length=3` edit an existing key.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::control::PidConfig;
use crate::model::{
    FluidProperties, HeatExchanger, NetworkModel, PeltierUnit, PipeSegment, SupplyPlant, ThermalMass,
    ValveCharacteristic, ValveModel,
};
use crate::scenario::{
    AmbientEmulation, ControllerConfig, ExperimentScenario, NetworkStart, OccupancyWindow, Profile,
};
use crate::similitude::{LabConstraints, NondimBase};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Section {
    pub kind: String,
    pub id: Option<String>,
    pub line: usize,
    pub entries: Vec<Entry>,
}

impl Section {
    fn header(&self) -> String {
        match &self.id {
            Some(id) => format!("{} {id}", self.kind),
            None => self.kind.clone(),
        }
    }
}

/// A parsed file: sections in order of appearance.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Document {
    pub sections: Vec<Section>,
}

impl Document {
    pub fn parse(text: &str) -> Result<Document> {
        let mut sections: Vec<Section> = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let s = raw.split('#').next().unwrap_or("").trim();
            if s.is_empty() {
                continue;
            }
            if let Some(inner) = s.strip_prefix('[') {
                let inner = inner
                    .strip_suffix(']')
                    .ok_or_else(|| Error::parse(line, "unterminated section header"))?;
                let mut words = inner.split_whitespace();
                let kind = words
                    .next()
                    .ok_or_else(|| Error::parse(line, "empty section header"))?
                    .to_string();
                let id = words.next().map(str::to_string);
                if words.next().is_some() {
                    return Err(Error::parse(line, "section header takes a kind and at most one id"));
                }
                if sections.iter().any(|x| x.kind == kind && x.id == id) {
                    return Err(Error::parse(line, format!("duplicate section [{inner}]")));
                }
                sections.push(Section {
                    kind,
                    id,
                    line,
                    entries: Vec::new(),
                });
                continue;
            }
            let (key, value) = s
                .split_once('=')
                .ok_or_else(|| Error::parse(line, format!("expected `key = value`, got `{s}`")))?;
            let key = key.trim();
            if key.is_empty() || key.contains(char::is_whitespace) {
                return Err(Error::parse(line, format!("invalid key `{key}`")));
            }
            let section = sections
                .last_mut()
                .ok_or_else(|| Error::parse(line, "key outside of any section"))?;
            if section.entries.iter().any(|e| e.key == key) {
                return Err(Error::parse(line, format!("duplicate key `{key}`")));
            }
            section.entries.push(Entry {
                key: key.to_string(),
                value: value.trim().to_string(),
                line,
            });
        }
        Ok(Document { sections })
    }

    fn find_mut(&mut self, kind: &str, id: Option<&str>) -> Option<&mut Section> {
        self.sections
            .iter_mut()
            .find(|s| s.kind == kind && s.id.as_deref() == id)
    }

    pub fn has_section(&self, kind: &str, id: Option<&str>) -> bool {
        self.sections.iter().any(|s| s.kind == kind && s.id.as_deref() == id)
    }

    /// Apply `header.key=value` overrides to existing keys.
    pub fn apply_overrides(&mut self, overrides: &[String]) -> Result<()> {
        for (n, o) in overrides.iter().enumerate() {
            self.apply(&Override::parse(o, n + 1)?)?;
        }
        Ok(())
    }

    pub fn apply(&mut self, o: &Override) -> Result<()> {
        let header = o.header();
        let target = self
            .find_mut(&o.kind, o.id.as_deref())
            .ok_or_else(|| Error::parse(o.index, format!("override `{}`: no section [{header}]", o.text)))?;
        let existing = target
            .entries
            .iter_mut()
            .find(|e| e.key == o.key)
            .ok_or_else(|| Error::parse(o.index, format!("override `{}`: no key `{}` in [{header}]", o.text, o.key)))?;
        existing.value = o.value.clone();
        Ok(())
    }
}

/// One `section.key=value` edit from the command line.
#[derive(Debug, Clone, PartialEq)]
pub struct Override {
    pub kind: String,
    pub id: Option<String>,
    pub key: String,
    pub value: String,
    text: String,
    /// Position on the command line, reported as the error line.
    index: usize,
}

impl Override {
    pub fn parse(text: &str, index: usize) -> Result<Override> {
        let (path, value) = text
            .split_once('=')
            .ok_or_else(|| Error::parse(index, format!("override `{text}` lacks `=`")))?;
        let (header, key) = path
            .trim()
            .rsplit_once('.')
            .ok_or_else(|| Error::parse(index, format!("override `{text}` must be `section.key=value`")))?;
        // Round-trip through the file grammar so both accept the same text.
        let snippet = Document::parse(&format!("[{header}]\n{key} = {value}\n"))
            .map_err(|e| Error::parse(index, format!("override `{text}`: {e}")))?;
        let sec = &snippet.sections[0];
        let entry = &sec.entries[0];
        Ok(Override {
            kind: sec.kind.clone(),
            id: sec.id.clone(),
            key: entry.key.clone(),
            value: entry.value.clone(),
            text: text.to_string(),
            index,
        })
    }

    fn header(&self) -> String {
        match &self.id {
            Some(id) => format!("{} {id}", self.kind),
            None => self.kind.clone(),
        }
    }
}

/// Send each override to the first document that has its section.
pub fn route_overrides(docs: &mut [&mut Document], overrides: &[String]) -> Result<()> {
    for (n, text) in overrides.iter().enumerate() {
        let o = Override::parse(text, n + 1)?;
        match docs.iter_mut().find(|d| d.has_section(&o.kind, o.id.as_deref())) {
            Some(doc) => doc.apply(&o)?,
            None => return Err(Error::parse(n + 1, format!("override `{text}`: no section [{}]", o.header()))),
        }
    }
    Ok(())
}

/// Reads keys off one section and rejects leftovers.
struct Fields<'a> {
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> Fields<'a> {
    fn new(section: &'a Section) -> Self {
        Self {
            section,
            used: vec![false; section.entries.len()],
        }
    }

    fn raw(&mut self, key: &str) -> Option<(&'a str, usize)> {
        let i = self.section.entries.iter().position(|e| e.key == key)?;
        self.used[i] = true;
        let e = &self.section.entries[i];
        Some((e.value.as_str(), e.line))
    }

    fn missing(&self, key: &str) -> Error {
        Error::parse(
            self.section.line,
            format!("[{}] is missing `{key}`", self.section.header()),
        )
    }

    fn str(&mut self, key: &str) -> Result<String> {
        self.raw(key).map(|(v, _)| v.to_string()).ok_or_else(|| self.missing(key))
    }

    fn opt_f64(&mut self, key: &str) -> Result<Option<f64>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => parse_f64(v, line).map(Some),
        }
    }

    fn f64(&mut self, key: &str) -> Result<f64> {
        self.opt_f64(key)?.ok_or_else(|| self.missing(key))
    }

    fn opt_bool(&mut self, key: &str) -> Result<Option<bool>> {
        match self.raw(key) {
            None => Ok(None),
            Some(("true", _)) => Ok(Some(true)),
            Some(("false", _)) => Ok(Some(false)),
            Some((v, line)) => Err(Error::parse(line, format!("`{key}`: expected true or false, got `{v}`"))),
        }
    }

    fn opt_usize(&mut self, key: &str) -> Result<Option<usize>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .parse()
                .map(Some)
                .map_err(|_| Error::parse(line, format!("`{key}`: expected a non-negative integer, got `{v}`"))),
        }
    }

    fn opt_list(&mut self, key: &str) -> Result<Option<Vec<f64>>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v
                .split(',')
                .map(|x| parse_f64(x.trim(), line))
                .collect::<Result<Vec<f64>>>()
                .map(Some),
        }
    }

    fn pair(&mut self, key: &str) -> Result<[f64; 2]> {
        let line = self.raw(key).map(|r| r.1).unwrap_or(self.section.line);
        // Unmark so opt_list can re-read.
        if let Some(i) = self.section.entries.iter().position(|e| e.key == key) {
            self.used[i] = false;
        }
        let v = self.opt_list(key)?.ok_or_else(|| self.missing(key))?;
        match v.as_slice() {
            [a, b] => Ok([*a, *b]),
            _ => Err(Error::parse(line, format!("`{key}`: expected two numbers"))),
        }
    }

    fn opt_profile(&mut self, key: &str) -> Result<Option<Profile>> {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => parse_profile(v, line).map(Some),
        }
    }

    fn finish(self) -> Result<()> {
        for (e, used) in self.section.entries.iter().zip(&self.used) {
            if !used {
                return Err(Error::parse(
                    e.line,
                    format!("unknown key `{}` in [{}]", e.key, self.section.header()),
                ));
            }
        }
        Ok(())
    }
}

fn parse_f64(v: &str, line: usize) -> Result<f64> {
    v.parse::<f64>()
        .ok()
        .filter(|x| !x.is_nan())
        .ok_or_else(|| Error::parse(line, format!("`{v}` is not a number")))
}

/// `22` (constant) or `0:22, 3600:20, ...`.
fn parse_profile(v: &str, line: usize) -> Result<Profile> {
    if !v.contains(':') {
        return Ok(Profile::constant(parse_f64(v, line)?));
    }
    let points = v
        .split(',')
        .map(|p| {
            let (t, x) = p
                .trim()
                .split_once(':')
                .ok_or_else(|| Error::parse(line, format!("profile point `{p}` must be `t:value`")))?;
            Ok((parse_f64(t.trim(), line)?, parse_f64(x.trim(), line)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Profile::new(points).ok_or_else(|| Error::parse(line, "profile times must be strictly increasing"))
}

fn section_id(s: &Section) -> Result<String> {
    s.id
        .clone()
        .ok_or_else(|| Error::parse(s.line, format!("[{}] needs an id", s.kind)))
}

fn no_id(s: &Section) -> Result<()> {
    match &s.id {
        Some(_) => Err(Error::parse(s.line, format!("[{}] takes no id", s.kind))),
        None => Ok(()),
    }
}

fn single<'a>(doc: &'a Document, kind: &str) -> Result<&'a Section> {
    let mut it = doc.sections.iter().filter(|s| s.kind == kind);
    let s = it
        .next()
        .ok_or_else(|| Error::parse(0, format!("missing section [{kind}]")))?;
    no_id(s)?;
    Ok(s)
}

const MODEL_SECTIONS: [&str; 6] = ["fluid", "plant", "segment", "valve", "heat_exchanger", "thermal_mass"];

pub fn model_from_document(doc: &Document) -> Result<NetworkModel> {
    for s in &doc.sections {
        if !MODEL_SECTIONS.contains(&s.kind.as_str()) {
            return Err(Error::parse(s.line, format!("unknown section [{}]", s.kind)));
        }
    }
    let mut f = Fields::new(single(doc, "fluid")?);
    let fluid = FluidProperties {
        rho: f.f64("rho")?,
        cp: f.f64("cp")?,
    };
    f.finish()?;
    let mut f = Fields::new(single(doc, "plant")?);
    let plant = SupplyPlant {
        supply_temp: f.f64("supply_temp")?,
        mass_flow: f.f64("mass_flow")?,
        pump_pressure_rise: f.f64("pump_pressure_rise")?,
        supply_node: f.str("supply_node")?,
        return_node: f.str("return_node")?,
        heater_conductance: f.opt_f64("heater_conductance")?.unwrap_or(0.0),
        heater_volume: f.opt_f64("heater_volume")?.unwrap_or(0.0),
    };
    f.finish()?;
    let mut model = NetworkModel {
        fluid,
        plant,
        segments: Vec::new(),
        valves: Vec::new(),
        heat_exchangers: Vec::new(),
        thermal_masses: Vec::new(),
    };
    for s in &doc.sections {
        let mut f = Fields::new(s);
        match s.kind.as_str() {
            "segment" => model.segments.push(PipeSegment {
                id: section_id(s)?,
                length: f.f64("length")?,
                diameter: f.f64("diameter")?,
                loss_coeff: f.f64("loss_coeff")?,
                conductance: f.f64("conductance")?,
                upstream: f.str("upstream")?,
                downstream: f.str("downstream")?,
            }),
            "valve" => {
                let characteristic = match f.raw("characteristic") {
                    None | Some(("linear", _)) => ValveCharacteristic::Linear,
                    Some(("equal_percentage", _)) => ValveCharacteristic::EqualPercentage,
                    Some((v, line)) => {
                        return Err(Error::parse(line, format!("unknown valve characteristic `{v}`")))
                    }
                };
                model.valves.push(ValveModel {
                    id: section_id(s)?,
                    user_edge: f.str("user_edge")?,
                    bypass_edge: f.str("bypass_edge")?,
                    user_k_range: f.pair("user_k_range")?,
                    bypass_k_range: f.pair("bypass_k_range")?,
                    characteristic,
                })
            }
            "heat_exchanger" => model.heat_exchangers.push(HeatExchanger {
                id: section_id(s)?,
                conductance: f.f64("conductance")?,
                loss_coeff: f.f64("loss_coeff")?,
                volume: f.f64("volume")?,
                diameter: f.f64("diameter")?,
                upstream: f.str("upstream")?,
                downstream: f.str("downstream")?,
            }),
            "thermal_mass" => {
                let id = section_id(s)?;
                let heat_capacity = f.f64("heat_capacity")?;
                let volume = f.opt_f64("volume")?.unwrap_or(0.0);
                let conductance_actual = f.f64("conductance_actual")?;
                let conductance_simulated = f.opt_f64("conductance_simulated")?.unwrap_or(conductance_actual);
                let setpoint = f.f64("setpoint")?;
                let heat_exchanger = f.str("heat_exchanger")?;
                let peltier = match f.opt_f64("peltier_max_power")? {
                    Some(max_power) => Some(PeltierUnit {
                        max_power,
                        time_constant: f.opt_f64("peltier_time_constant")?.unwrap_or(0.0),
                    }),
                    None => None,
                };
                model.thermal_masses.push(ThermalMass {
                    id,
                    heat_capacity,
                    volume,
                    conductance_actual,
                    conductance_simulated,
                    setpoint,
                    heat_exchanger,
                    peltier,
                })
            }
            _ => continue,
        }
        f.finish()?;
    }
    Ok(model)
}

pub fn parse_model(text: &str) -> Result<NetworkModel> {
    model_from_document(&Document::parse(text)?)
}

/// Shortest text that parses back to the same `f64`.
fn num(x: f64) -> String {
    format!("{x:?}")
}

pub fn model_to_string(m: &NetworkModel) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "[fluid]\nrho = {}\ncp = {}\n", num(m.fluid.rho), num(m.fluid.cp));
    let p = &m.plant;
    let _ = writeln!(
        s,
        "[plant]\nsupply_temp = {}\nmass_flow = {}\npump_pressure_rise = {}\nsupply_node = {}\nreturn_node = {}\nheater_conductance = {}\nheater_volume = {}\n",
        num(p.supply_temp),
        num(p.mass_flow),
        num(p.pump_pressure_rise),
        p.supply_node,
        p.return_node,
        num(p.heater_conductance),
        num(p.heater_volume)
    );
    for g in &m.segments {
        let _ = writeln!(
            s,
            "[segment {}]\nlength = {}\ndiameter = {}\nloss_coeff = {}\nconductance = {}\nupstream = {}\ndownstream = {}\n",
            g.id,
            num(g.length),
            num(g.diameter),
            num(g.loss_coeff),
            num(g.conductance),
            g.upstream,
            g.downstream
        );
    }
    for v in &m.valves {
        let _ = writeln!(
            s,
            "[valve {}]\nuser_edge = {}\nbypass_edge = {}\nuser_k_range = {}, {}\nbypass_k_range = {}, {}\ncharacteristic = {}\n",
            v.id,
            v.user_edge,
            v.bypass_edge,
            num(v.user_k_range[0]),
            num(v.user_k_range[1]),
            num(v.bypass_k_range[0]),
            num(v.bypass_k_range[1]),
            v.characteristic.as_str()
        );
    }
    for h in &m.heat_exchangers {
        let _ = writeln!(
            s,
            "[heat_exchanger {}]\nconductance = {}\nloss_coeff = {}\nvolume = {}\ndiameter = {}\nupstream = {}\ndownstream = {}\n",
            h.id,
            num(h.conductance),
            num(h.loss_coeff),
            num(h.volume),
            num(h.diameter),
            h.upstream,
            h.downstream
        );
    }
    for t in &m.thermal_masses {
        let _ = write!(
            s,
            "[thermal_mass {}]\nheat_capacity = {}\nvolume = {}\nconductance_actual = {}\nconductance_simulated = {}\nsetpoint = {}\nheat_exchanger = {}\n",
            t.id,
            num(t.heat_capacity),
            num(t.volume),
            num(t.conductance_actual),
            num(t.conductance_simulated),
            num(t.setpoint),
            t.heat_exchanger
        );
        if let Some(p) = &t.peltier {
            let _ = write!(
                s,
                "peltier_max_power = {}\npeltier_time_constant = {}\n",
                num(p.max_power),
                num(p.time_constant)
            );
        }
        s.push('\n');
    }
    s
}

fn profile_to_string(p: &Profile) -> String {
    if p.points().len() == 1 {
        return num(p.points()[0].1);
    }
    p.points()
        .iter()
        .map(|(t, v)| format!("{}:{}", num(*t), num(*v)))
        .collect::<Vec<_>>()
        .join(", ")
}

fn pid_fields(f: &mut Fields, base: &PidConfig) -> Result<PidConfig> {
    Ok(PidConfig {
        kp: f.opt_f64("kp")?.unwrap_or(base.kp),
        ki: f.opt_f64("ki")?.unwrap_or(base.ki),
        kd: f.opt_f64("kd")?.unwrap_or(base.kd),
        sample_time: f.opt_f64("sample_time")?.unwrap_or(base.sample_time),
        u_min: f.opt_f64("u_min")?.unwrap_or(base.u_min),
        u_max: f.opt_f64("u_max")?.unwrap_or(base.u_max),
        anti_windup: f.opt_bool("anti_windup")?.unwrap_or(base.anti_windup),
    })
}

const SCENARIO_SECTIONS: [&str; 5] = ["scenario", "emulation", "occupancy", "controller", "initial"];

pub fn scenario_from_document(doc: &Document) -> Result<ExperimentScenario> {
    for s in &doc.sections {
        if !SCENARIO_SECTIONS.contains(&s.kind.as_str()) {
            return Err(Error::parse(s.line, format!("unknown section [{}]", s.kind)));
        }
    }
    let sec = single(doc, "scenario")?;
    let mut f = Fields::new(sec);
    let duration = f.f64("duration")?;
    let output_interval = f.f64("output_interval")?;
    let dt = f.opt_f64("dt")?;
    let subsegments = f.opt_usize("subsegments")?.unwrap_or(4);
    let ambient = f
        .opt_profile("ambient")?
        .ok_or_else(|| Error::parse(sec.line, "[scenario] is missing `ambient`"))?;
    let supply_temp = f.opt_profile("supply_temp")?;
    let default_cooling_setpoint = f.opt_f64("default_cooling_setpoint")?.unwrap_or(0.0);
    let network_start = match f.raw("network_start") {
        None | Some(("steady", _)) => NetworkStart::Steady,
        Some((v, line)) => match v.strip_prefix("uniform:") {
            Some(t) => NetworkStart::Uniform(parse_f64(t.trim(), line)?),
            None => {
                return Err(Error::parse(line, format!("network_start: expected `steady` or `uniform:<T>`, got `{v}`")))
            }
        },
    };
    let steady_band = f.opt_f64("steady_band")?.unwrap_or(0.5);
    let steady_window = f.opt_f64("steady_window")?.unwrap_or(1800.0);
    f.finish()?;

    let mut scenario = ExperimentScenario {
        duration,
        output_interval,
        dt,
        subsegments,
        ambient,
        supply_temp,
        emulation: None,
        occupancy: BTreeMap::new(),
        default_cooling_setpoint,
        controller: ControllerConfig::default(),
        initial_mass_temps: BTreeMap::new(),
        network_start,
        steady_band,
        steady_window,
    };
    // The shared controller section first, so per-mass sections inherit from it.
    if let Some(c) = doc.sections.iter().find(|s| s.kind == "controller" && s.id.is_none()) {
        let mut f = Fields::new(c);
        scenario.controller.default = pid_fields(&mut f, &PidConfig::default())?;
        scenario.controller.auto_tune = f.opt_bool("auto_tune")?.unwrap_or(false);
        scenario.controller.seed = f.opt_usize("seed")?.unwrap_or(0) as u64;
        scenario.controller.fixed_valves = f.opt_list("fixed_valves")?;
        f.finish()?;
    }
    for s in &doc.sections {
        let mut f = Fields::new(s);
        match s.kind.as_str() {
            "controller" => match &s.id {
                Some(id) => {
                    let cfg = pid_fields(&mut f, &scenario.controller.default)?;
                    scenario.controller.per_mass.insert(id.clone(), cfg);
                }
                None => continue,
            },
            "emulation" => {
                no_id(s)?;
                scenario.emulation = Some(AmbientEmulation {
                    ambient: f
                        .opt_profile("ambient")?
                        .ok_or_else(|| f.missing("ambient"))?,
                    supply_temp: f.f64("supply_temp")?,
                    setpoint: f.f64("setpoint")?,
                });
            }
            "occupancy" => {
                let id = section_id(s)?;
                let (v, line) = f.raw("windows").ok_or_else(|| f.missing("windows"))?;
                let windows = if v.is_empty() {
                    Vec::new()
                } else {
                    v.split(',')
                        .map(|w| {
                            let parts = w
                                .split(':')
                                .map(|x| parse_f64(x.trim(), line))
                                .collect::<Result<Vec<f64>>>()?;
                            match parts.as_slice() {
                                [start, end, heating, cooling] => Ok(OccupancyWindow {
                                    start: *start,
                                    end: *end,
                                    heating_setpoint: *heating,
                                    cooling_setpoint: *cooling,
                                }),
                                _ => Err(Error::parse(line, format!("window `{w}` must be start:end:heating:cooling"))),
                            }
                        })
                        .collect::<Result<Vec<_>>>()?
                };
                scenario.occupancy.insert(id, windows);
            }
            "initial" => {
                no_id(s)?;
                for e in &s.entries {
                    scenario
                        .initial_mass_temps
                        .insert(e.key.clone(), parse_f64(&e.value, e.line)?);
                }
                continue;
            }
            _ => continue,
        }
        f.finish()?;
    }
    Ok(scenario)
}

pub fn parse_scenario(text: &str) -> Result<ExperimentScenario> {
    scenario_from_document(&Document::parse(text)?)
}

fn pid_to_string(s: &mut String, p: &PidConfig) {
    let _ = writeln!(
        s,
        "kp = {}\nki = {}\nkd = {}\nsample_time = {}\nu_min = {}\nu_max = {}\nanti_windup = {}",
        num(p.kp),
        num(p.ki),
        num(p.kd),
        num(p.sample_time),
        num(p.u_min),
        num(p.u_max),
        p.anti_windup
    );
}

pub fn scenario_to_string(sc: &ExperimentScenario) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "[scenario]\nduration = {}\noutput_interval = {}\nsubsegments = {}\nambient = {}",
        num(sc.duration),
        num(sc.output_interval),
        sc.subsegments,
        profile_to_string(&sc.ambient)
    );
    if let Some(dt) = sc.dt {
        let _ = writeln!(s, "dt = {}", num(dt));
    }
    if let Some(p) = &sc.supply_temp {
        let _ = writeln!(s, "supply_temp = {}", profile_to_string(p));
    }
    let start = match sc.network_start {
        NetworkStart::Steady => "steady".to_string(),
        NetworkStart::Uniform(t) => format!("uniform:{}", num(t)),
    };
    let _ = writeln!(
        s,
        "default_cooling_setpoint = {}\nnetwork_start = {start}\nsteady_band = {}\nsteady_window = {}\n",
        num(sc.default_cooling_setpoint),
        num(sc.steady_band),
        num(sc.steady_window)
    );
    s.push_str("[controller]\n");
    pid_to_string(&mut s, &sc.controller.default);
    let _ = writeln!(s, "auto_tune = {}\nseed = {}", sc.controller.auto_tune, sc.controller.seed);
    if let Some(v) = &sc.controller.fixed_valves {
        let list: Vec<String> = v.iter().map(|x| num(*x)).collect();
        let _ = writeln!(s, "fixed_valves = {}", list.join(", "));
    }
    s.push('\n');
    for (id, p) in &sc.controller.per_mass {
        let _ = writeln!(s, "[controller {id}]");
        pid_to_string(&mut s, p);
        s.push('\n');
    }
    if let Some(e) = &sc.emulation {
        let _ = writeln!(
            s,
            "[emulation]\nambient = {}\nsupply_temp = {}\nsetpoint = {}\n",
            profile_to_string(&e.ambient),
            num(e.supply_temp),
            num(e.setpoint)
        );
    }
    for (id, ws) in &sc.occupancy {
        let list: Vec<String> = ws
            .iter()
            .map(|w| {
                format!(
                    "{}:{}:{}:{}",
                    num(w.start),
                    num(w.end),
                    num(w.heating_setpoint),
                    num(w.cooling_setpoint)
                )
            })
            .collect();
        let _ = writeln!(s, "[occupancy {id}]\nwindows = {}\n", list.join(", "));
    }
    if !sc.initial_mass_temps.is_empty() {
        s.push_str("[initial]\n");
        for (id, t) in &sc.initial_mass_temps {
            let _ = writeln!(s, "{id} = {}", num(*t));
        }
    }
    s
}

fn base_from_section(f: &mut Fields) -> Result<NondimBase> {
    Ok(NondimBase {
        rho: f.f64("rho")?,
        mdot_i: f.f64("mdot_i")?,
        t_s: f.f64("t_s")?,
        d: f.f64("d")?,
    })
}

/// `[base]` file with `rho`, `mdot_i`, `t_s` and `d`.
pub fn parse_base(text: &str) -> Result<NondimBase> {
    let doc = Document::parse(text)?;
    for s in &doc.sections {
        if s.kind != "base" {
            return Err(Error::parse(s.line, format!("unknown section [{}]", s.kind)));
        }
    }
    let mut f = Fields::new(single(&doc, "base")?);
    let b = base_from_section(&mut f)?;
    f.finish()?;
    Ok(b)
}

/// `[lab]` with the base and limits, plus optional `[lab_mass <id>]` sections
/// fixing built tank values.
pub fn parse_lab_constraints(text: &str) -> Result<LabConstraints> {
    lab_constraints_from_document(&Document::parse(text)?)
}

pub fn lab_constraints_from_document(doc: &Document) -> Result<LabConstraints> {
    for s in &doc.sections {
        if s.kind != "lab" && s.kind != "lab_mass" {
            return Err(Error::parse(s.line, format!("unknown section [{}]", s.kind)));
        }
    }
    let mut f = Fields::new(single(doc, "lab")?);
    let base = base_from_section(&mut f)?;
    let cp = f.f64("cp")?;
    let full_design_ambient = f.f64("full_design_ambient")?;
    let lab_ambient = f.f64("lab_ambient")?;
    let hx_conductance_bounds = match (f.opt_f64("hx_conductance_min")?, f.opt_f64("hx_conductance_max")?) {
        (None, None) => None,
        (lo, hi) => Some([lo.unwrap_or(0.0), hi.unwrap_or(f64::INFINITY)]),
    };
    let pump_pressure_rise = f.opt_f64("pump_pressure_rise")?;
    let peltier = match f.opt_f64("peltier_max_power")? {
        Some(max_power) => Some(PeltierUnit {
            max_power,
            time_constant: f.opt_f64("peltier_time_constant")?.unwrap_or(0.0),
        }),
        None => None,
    };
    f.finish()?;
    let mut c = LabConstraints {
        base,
        cp,
        full_design_ambient,
        lab_ambient,
        hx_conductance_bounds,
        mass_capacity: BTreeMap::new(),
        mass_conductance_actual: BTreeMap::new(),
        peltier,
        pump_pressure_rise,
    };
    for s in doc.sections.iter().filter(|s| s.kind == "lab_mass") {
        let id = section_id(s)?;
        let mut f = Fields::new(s);
        if let Some(v) = f.opt_f64("heat_capacity")? {
            c.mass_capacity.insert(id.clone(), v);
        }
        if let Some(v) = f.opt_f64("conductance_actual")? {
            c.mass_conductance_actual.insert(id.clone(), v);
        }
        f.finish()?;
    }
    Ok(c)
}

pub fn lab_constraints_to_string(c: &LabConstraints) -> String {
    let mut s = format!(
        "[lab]\nrho = {}\nmdot_i = {}\nt_s = {}\nd = {}\ncp = {}\nfull_design_ambient = {}\nlab_ambient = {}\n",
        num(c.base.rho),
        num(c.base.mdot_i),
        num(c.base.t_s),
        num(c.base.d),
        num(c.cp),
        num(c.full_design_ambient),
        num(c.lab_ambient)
    );
    if let Some([lo, hi]) = c.hx_conductance_bounds {
        let _ = writeln!(s, "hx_conductance_min = {}\nhx_conductance_max = {}", num(lo), num(hi));
    }
    if let Some(p) = c.pump_pressure_rise {
        let _ = writeln!(s, "pump_pressure_rise = {}", num(p));
    }
    if let Some(p) = &c.peltier {
        let _ = writeln!(
            s,
            "peltier_max_power = {}\npeltier_time_constant = {}",
            num(p.max_power),
            num(p.time_constant)
        );
    }
    let ids: std::collections::BTreeSet<&String> =
        c.mass_capacity.keys().chain(c.mass_conductance_actual.keys()).collect();
    for id in ids {
        let _ = writeln!(s, "\n[lab_mass {id}]");
        if let Some(v) = c.mass_capacity.get(id) {
            let _ = writeln!(s, "heat_capacity = {}", num(*v));
        }
        if let Some(v) = c.mass_conductance_actual.get(id) {
            let _ = writeln!(s, "conductance_actual = {}", num(*v));
        }
    }
    s
}

pub fn base_to_string(b: &NondimBase) -> String {
    format!(
        "[base]\nrho = {}\nmdot_i = {}\nt_s = {}\nd = {}\n",
        num(b.rho),
        num(b.mdot_i),
        num(b.t_s),
        num(b.d)
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nominal;
    use proptest::prelude::*;

    #[test]
    fn nominal_files_round_trip() {
        for m in [nominal::lab_scale_model(), nominal::full_scale_model()] {
            assert_eq!(parse_model(&model_to_string(&m)).unwrap(), m);
        }
        for s in [nominal::lab_scenario(), nominal::full_scale_scenario()] {
            assert_eq!(parse_scenario(&scenario_to_string(&s)).unwrap(), s);
        }
        let c = nominal::lab_constraints();
        assert_eq!(parse_lab_constraints(&lab_constraints_to_string(&c)).unwrap(), c);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let mut text = model_to_string(&nominal::lab_scale_model());
        text = text.replacen("[plant]\n", "[plant]\ncolour = blue\n", 1);
        match parse_model(&text) {
            Err(Error::Parse { line, message }) => {
                assert!(message.contains("colour"), "{message}");
                assert_eq!(text.lines().nth(line - 1), Some("colour = blue"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn numbers_accept_scientific_and_infinity() {
        let doc = Document::parse("[x]\na = 1.5e-3\nb = inf\n").unwrap();
        assert_eq!(parse_f64(&doc.sections[0].entries[0].value, 2).unwrap(), 1.5e-3);
        assert!(parse_f64(&doc.sections[0].entries[1].value, 3).unwrap().is_infinite());
        assert!(parse_f64("nan", 1).is_err());
    }

    #[test]
    fn overrides_edit_existing_keys_only() {
        let text = model_to_string(&nominal::lab_scale_model());
        let mut doc = Document::parse(&text).unwrap();
        doc.apply_overrides(&["plant.mass_flow=0.09".into(), "segment U1.length = 2.5".into()])
            .unwrap();
        let m = model_from_document(&doc).unwrap();
        assert_eq!(m.plant.mass_flow, 0.09);
        assert_eq!(m.segments[m.segment_index("U1").unwrap()].length, 2.5);
        assert!(doc.apply_overrides(&["plant.colour=1".into()]).is_err());
        assert!(doc.apply_overrides(&["segment nope.length=1".into()]).is_err());
    }

    fn finite() -> impl Strategy<Value = f64> {
        prop_oneof![
            1e-9f64..1e9,
            -1e3f64..1e3,
            Just(f64::INFINITY),
            Just(0.0),
        ]
    }

    proptest! {
        #[test]
        fn arbitrary_values_round_trip(seg_len in 1e-3f64..1e4, ha in finite(), k in finite(), cap in 1.0f64..1e12, volume in 1e-9f64..1.0) {
            let mut m = nominal::lab_scale_model();
            m.segments[0].length = seg_len;
            m.segments[1].conductance = ha;
            m.valves[0].user_k_range[1] = k;
            m.thermal_masses[0].heat_capacity = cap;
            m.heat_exchangers[1].volume = volume;
            prop_assert_eq!(parse_model(&model_to_string(&m)).unwrap(), m);
        }
    }
}
