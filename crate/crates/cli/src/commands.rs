use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use dhnsim::config::{self, Document};
use dhnsim::harness::{self, MetricsOptions};
use dhnsim::model::{validate_network, NetworkModel};
use dhnsim::scenario::ExperimentScenario;
use dhnsim::sim::{self, SimulationFailure};
use dhnsim::similitude::{nondimensionalize, solve_lab_scale, NondimBase};
use dhnsim::trajectory::{read_trajectory, trajectory_table, write_trajectory, Table};
use dhnsim::Error;

use crate::{Cli, Command, RunArgs};

/// Sizing finished but violated a constraint.
#[derive(Debug)]
pub struct Infeasible(pub Vec<String>);

impl std::fmt::Display for Infeasible {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "infeasible sizing: {}", self.0.join("; "))
    }
}

impl std::error::Error for Infeasible {}

pub fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<Infeasible>() {
            return 3;
        }
        if cause.is::<SimulationFailure>() {
            return 4;
        }
        if let Some(err) = cause.downcast_ref::<Error>() {
            return match err {
                Error::Parse { .. } | Error::Invalid(_) => 2,
                Error::Infeasible(_) => 3,
                Error::SpanMismatch { .. } => 5,
                _ => 1,
            };
        }
    }
    1
}

fn read_doc(path: &Path) -> Result<Document> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Document::parse(&text).with_context(|| format!("parsing {}", path.display()))
}

fn out_file(dir: &Path, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    Ok(dir.join(name))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Scale { full, lab_constraints } => scale(cli, full, lab_constraints),
        Command::Simulate { run, name } => simulate(cli, run, name),
        Command::Nondim { trajectory, base } => nondim(cli, trajectory, base.as_deref()),
        Command::Compare { a, b, base_a, base_b } => compare(cli, a, b, base_a.as_deref(), base_b.as_deref()),
        Command::Metrics {
            trajectory,
            model,
            scenario,
        } => metrics(cli, trajectory, model, scenario.as_deref()),
        Command::Validate { model, scenario } => validate(cli, model, scenario.as_deref()),
    }
}

fn load_model_and_scenario(
    model: &Path,
    scenario: Option<&Path>,
    overrides: &[String],
) -> Result<(NetworkModel, Option<ExperimentScenario>)> {
    let mut m = read_doc(model)?;
    let mut s = scenario.map(read_doc).transpose()?;
    match &mut s {
        Some(s) => config::route_overrides(&mut [&mut m, s], overrides)?,
        None => config::route_overrides(&mut [&mut m], overrides)?,
    }
    let model = config::model_from_document(&m).with_context(|| format!("in {}", model.display()))?;
    let scen = match (&s, scenario) {
        (Some(doc), Some(path)) => {
            Some(config::scenario_from_document(doc).with_context(|| format!("in {}", path.display()))?)
        }
        _ => None,
    };
    Ok((model, scen))
}

fn scale(cli: &Cli, full: &Path, constraints: &Path) -> Result<()> {
    let mut f = read_doc(full)?;
    let text = fs::read_to_string(constraints).with_context(|| format!("reading {}", constraints.display()))?;
    let mut c_doc = Document::parse(&text).with_context(|| format!("parsing {}", constraints.display()))?;
    config::route_overrides(&mut [&mut f, &mut c_doc], &cli.overrides)?;
    let model = config::model_from_document(&f).with_context(|| format!("in {}", full.display()))?;
    let c = config::lab_constraints_from_document(&c_doc).with_context(|| format!("in {}", constraints.display()))?;
    let sol = solve_lab_scale(&model, &c)?;

    let report = out_file(&cli.out_dir, "scaling_report.csv")?;
    write(&report, &sol.to_csv()?)?;
    let lab = out_file(&cli.out_dir, "lab_model.conf")?;
    let header = format!(
        "# Lab network sized from {}; time ratio {:.6}, k_T {:.6}.\n# Design valve positions: {}\n\n",
        full.display(),
        sol.time_ratio,
        sol.k_t,
        sol.design_valves.iter().map(|u| format!("{u:.4}")).collect::<Vec<_>>().join(", ")
    );
    write(&lab, &(header + &config::model_to_string(&sol.lab_model)))?;
    print!("{}", sol.summary());
    println!("wrote {} and {}", report.display(), lab.display());
    if !sol.is_feasible() {
        let failed = sol
            .flags
            .iter()
            .filter(|f| !f.satisfied)
            .map(|f| format!("{} (required {:.4}, limit {:.4})", f.constraint, f.required, f.limit))
            .collect();
        return Err(Infeasible(failed).into());
    }
    Ok(())
}

fn simulate(cli: &Cli, args: &RunArgs, name: &str) -> Result<()> {
    let (model, scenario) = load_model_and_scenario(&args.model, Some(&args.scenario), &cli.overrides)?;
    let mut scenario = scenario.expect("scenario path given");
    if let Some(seed) = args.seed {
        scenario.controller.seed = seed;
    }
    if let Some(dt) = args.dt {
        scenario.dt = Some(dt);
    }
    if let Some(n) = args.subsegments {
        scenario.subsegments = n;
    }
    let path = out_file(&cli.out_dir, name)?;
    let start = std::time::Instant::now();
    let traj = match sim::simulate(&model, &scenario) {
        Ok(t) => t,
        Err(failure) => {
            if failure.partial.samples.len() > 1 {
                let partial = path.with_extension("partial.csv");
                if let Ok(table) = trajectory_table(&model, &failure.partial) {
                    let _ = write_trajectory(&partial, &table, &failure.partial.meta);
                    eprintln!("partial trajectory written to {}", partial.display());
                }
            }
            return Err(*failure).context("simulation failed");
        }
    };
    let table = trajectory_table(&model, &traj)?;
    write_trajectory(&path, &table, &traj.meta)?;
    let end = traj.samples.last().map_or(0.0, |s| s.time);
    println!(
        "simulated {:.2} h in {:.2} s (dt {:.4} s, {} rows)",
        end / 3600.0,
        start.elapsed().as_secs_f64(),
        traj.meta.dt,
        table.rows()
    );
    println!("wrote {}", path.display());
    Ok(())
}

/// Trajectory plus the base it should be read with.
struct Loaded {
    table: Table,
    setpoints: Vec<(String, f64)>,
    recorded: NondimBase,
    base: NondimBase,
}

fn load_trajectory(path: &Path, base_file: Option<&Path>) -> Result<Loaded> {
    let (table, meta) = read_trajectory(path).with_context(|| format!("reading {}", path.display()))?;
    let requested = base_file
        .map(|p| -> Result<NondimBase> {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            config::parse_base(&text).with_context(|| format!("parsing {}", p.display()))
        })
        .transpose()?;
    let (recorded, setpoints) = match meta {
        Some(m) => (m.base, m.mass_setpoints),
        None => match requested {
            Some(b) => (b, Vec::new()),
            None => bail!("{} has no metadata sidecar; pass a base file", path.display()),
        },
    };
    Ok(Loaded {
        table,
        setpoints,
        recorded,
        base: requested.unwrap_or(recorded),
    })
}

fn nondim_table(path: &Path, base_file: Option<&Path>) -> Result<Table> {
    let l = load_trajectory(path, base_file)?;
    nondimensionalize(&l.table, &l.setpoints, &l.recorded, &l.base).with_context(|| format!("in {}", path.display()))
}

fn nondim(cli: &Cli, trajectory: &Path, base: Option<&Path>) -> Result<()> {
    let nd = nondim_table(trajectory, base)?;
    let path = out_file(&cli.out_dir, "nondim.csv")?;
    write(&path, &nd.to_csv_string()?)?;
    println!("{} rows, {} channels", nd.rows(), nd.names().len());
    println!("wrote {}", path.display());
    Ok(())
}

fn compare(cli: &Cli, a: &Path, b: &Path, base_a: Option<&Path>, base_b: Option<&Path>) -> Result<()> {
    let (ta, tb) = std::thread::scope(|s| {
        let ha = s.spawn(|| nondim_table(a, base_a));
        let hb = s.spawn(|| nondim_table(b, base_b));
        (ha.join().expect("worker"), hb.join().expect("worker"))
    });
    let (ta, tb) = (ta?, tb?);
    let report = harness::compare_runs(&ta, &tb)?;
    let overlay = out_file(&cli.out_dir, "comparison.csv")?;
    write(&overlay, &report.overlay(&ta, &tb)?.to_csv_string()?)?;
    let mut residuals = String::from("channel,rms,max_abs\n");
    for (name, rms, max) in &report.residuals {
        residuals.push_str(&format!("{name},{rms:.6e},{max:.6e}\n"));
    }
    let res_path = out_file(&cli.out_dir, "residuals.csv")?;
    write(&res_path, &residuals)?;

    let span = (report.t_star.first(), report.t_star.last());
    if let (Some(lo), Some(hi)) = span {
        println!("shared t* span {lo:.0} to {hi:.0} ({} points)", report.t_star.len());
    }
    for (name, rms, max) in report.residuals.iter().filter(|r| r.0.starts_with("TThMstar_")) {
        println!("{name}: rms {rms:.3e}, max {max:.3e}");
    }
    println!("max Tstar rms {:.3e}", report.max_rms("Tstar_"));
    for (id, ratio) in &report.mean_ratio {
        println!("mean T_ThM* ratio b/a for {id}: {ratio:.3}");
    }
    println!("wrote {} and {}", overlay.display(), res_path.display());
    Ok(())
}

fn metrics(cli: &Cli, trajectory: &Path, model: &Path, scenario: Option<&Path>) -> Result<()> {
    let (model, scenario) = load_model_and_scenario(model, scenario, &cli.overrides)?;
    let Loaded {
        table,
        setpoints,
        recorded,
        base,
    } = load_trajectory(trajectory, None)?;
    let nd = nondimensionalize(&table, &setpoints, &recorded, &base)?;
    let opts = match &scenario {
        Some(s) => MetricsOptions {
            band: s.steady_band,
            window: s.steady_window,
            ..MetricsOptions::default()
        },
        None => MetricsOptions::default(),
    };
    let report = harness::metrics(&table, &nd, &model, &base, &opts)?;
    let path = out_file(&cli.out_dir, "metrics.csv")?;
    write(&path, &report.to_csv()?)?;
    print!("{}", report.to_text());
    println!("wrote {}", path.display());
    Ok(())
}

fn validate(cli: &Cli, model: &Path, scenario: Option<&Path>) -> Result<()> {
    let (m, s) = load_model_and_scenario(model, scenario, &cli.overrides)?;
    let mut problems = validate_network(&m).violations;
    if let Some(s) = &s {
        problems.extend(s.violations(&m));
    }
    if !problems.is_empty() {
        return Err(Error::Invalid(problems).into());
    }
    println!(
        "{}: {} segments, {} valves, {} thermal masses: ok",
        model.display(),
        m.segments.len(),
        m.valves.len(),
        m.thermal_masses.len()
    );
    if let (Some(s), Some(p)) = (&s, scenario) {
        println!("{}: {:.2} h scenario: ok", p.display(), s.duration / 3600.0);
    }
    Ok(())
}
