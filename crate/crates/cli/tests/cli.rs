use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use approx::assert_relative_eq;
use dhnsim::config;
use dhnsim::nominal;
use dhnsim::similitude::LabConstraints;

fn configs(name: &str) -> String {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../configs")
        .join(name)
        .to_string_lossy()
        .into_owned()
}

fn dhnsim(out: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dhnsim"))
        .arg("--out-dir")
        .arg(out)
        .args(args)
        .env_remove("DHN_OUT_DIR")
        .output()
        .unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn simulate(out: &Path, name: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "simulate",
        "--model",
        &configs("lab_scale.conf")[..],
        "--scenario",
        &configs("lab_scenario.conf")[..],
        "--name",
        name,
    ]
    .into_iter()
    .map(String::from)
    .collect::<Vec<_>>();
    args.extend(extra.iter().map(|s| s.to_string()));
    let refs: Vec<&str> = args.iter().map(String::as_str).collect();
    dhnsim(out, &refs)
}

#[test]
fn scale_writes_a_lab_config_in_the_published_ranges() {
    let dir = tempfile::tempdir().unwrap();
    let o = dhnsim(
        dir.path(),
        &["scale", "--full", &configs("full_scale.conf"), "--lab-constraints", &configs("lab_constraints.conf")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("19.70 h"));
    let lab = config::parse_model(&std::fs::read_to_string(dir.path().join("lab_model.conf")).unwrap()).unwrap();
    for s in &lab.segments {
        assert!((2.5..=11.0).contains(&s.length), "{}: {}", s.id, s.length);
        assert!((0.23..=1.0).contains(&s.conductance), "{}: {}", s.id, s.conductance);
    }
    let report = std::fs::read_to_string(dir.path().join("scaling_report.csv")).unwrap();
    assert!(report.starts_with("component,parameter,symbol,full,lab,unit,residual,flag"));
}

#[test]
fn identity_constraints_return_the_input_network() {
    let dir = tempfile::tempdir().unwrap();
    let model = nominal::full_scale_model();
    let constraints = dir.path().join("identity.conf");
    std::fs::write(&constraints, config::lab_constraints_to_string(&LabConstraints::identity(&model, -5.0))).unwrap();
    let o = dhnsim(
        dir.path(),
        &["scale", "--full", &configs("full_scale.conf"), "--lab-constraints", constraints.to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = config::parse_model(&std::fs::read_to_string(dir.path().join("lab_model.conf")).unwrap()).unwrap();
    assert_eq!(out.segments.len(), model.segments.len());
    for (a, b) in out.segments.iter().zip(&model.segments) {
        assert_eq!(a.id, b.id);
        assert_relative_eq!(a.length, b.length, max_relative = 1e-9);
        assert_relative_eq!(a.conductance, b.conductance, max_relative = 1e-9);
        assert_relative_eq!(a.loss_coeff, b.loss_coeff, max_relative = 1e-9);
    }
    for (a, b) in out.thermal_masses.iter().zip(&model.thermal_masses) {
        assert_relative_eq!(a.heat_capacity, b.heat_capacity, max_relative = 1e-9);
        assert_relative_eq!(a.conductance_actual, b.conductance_actual, max_relative = 1e-9);
    }
    for (a, b) in out.heat_exchangers.iter().zip(&model.heat_exchangers) {
        assert_relative_eq!(a.conductance, b.conductance, max_relative = 1e-9);
    }
}

#[test]
fn undersized_peltier_exits_3_and_names_the_constraint() {
    let dir = tempfile::tempdir().unwrap();
    let o = dhnsim(
        dir.path(),
        &[
            "scale",
            "--full",
            &configs("full_scale.conf"),
            "--lab-constraints",
            &configs("lab_constraints.conf"),
            "--override",
            "lab.peltier_max_power=1",
        ],
    );
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    assert!(stderr(&o).contains("Peltier duty <= max_power"), "{}", stderr(&o));
}

#[test]
fn parse_errors_exit_2_with_a_line_number() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.conf");
    let text = std::fs::read_to_string(configs("lab_scale.conf")).unwrap().replacen("rho = ", "rho = abc", 1);
    std::fs::write(&bad, text).unwrap();
    let o = dhnsim(dir.path(), &["validate", "--model", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("line 4"), "{}", stderr(&o));

    let o = dhnsim(dir.path(), &["validate", "--model", &configs("lab_scale.conf"), "--override", "plant.colour=1"]);
    assert_eq!(code(&o), 2);
    let o = dhnsim(dir.path(), &["validate", "--model", &configs("lab_scale.conf"), "--override", "plant.mass_flow=-1"]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn zero_duration_gives_a_single_row() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "zero.csv", &["--override", "scenario.duration=0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("zero.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    assert!(dir.path().join("zero.csv.meta.json").exists());
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let args = ["--override", "scenario.duration=14400", "--override", "controller.auto_tune=true", "--seed", "5"];
    for name in ["a.csv", "b.csv"] {
        let o = simulate(dir.path(), name, &args);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let a = std::fs::read(dir.path().join("a.csv")).unwrap();
    let b = std::fs::read(dir.path().join("b.csv")).unwrap();
    assert_eq!(a, b);
}

#[test]
fn oversized_step_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let o = simulate(dir.path(), "t.csv", &["--override", "scenario.duration=600", "--dt", "20"]);
    assert_eq!(code(&o), 4, "{}", stderr(&o));
}

#[test]
fn compare_self_is_zero_and_mismatched_spans_exit_5() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&simulate(dir.path(), "long.csv", &["--override", "scenario.duration=7200"])), 0);
    assert_eq!(code(&simulate(dir.path(), "short.csv", &["--override", "scenario.duration=1800"])), 0);
    let long = dir.path().join("long.csv");
    let short = dir.path().join("short.csv");

    let o = dhnsim(dir.path(), &["compare", long.to_str().unwrap(), long.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("max Tstar rms 0.000e0"), "{}", stdout(&o));
    let residuals = std::fs::read_to_string(dir.path().join("residuals.csv")).unwrap();
    for line in residuals.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        assert_eq!(f[1].parse::<f64>().unwrap(), 0.0, "{line}");
    }

    let o = dhnsim(dir.path(), &["compare", long.to_str().unwrap(), short.to_str().unwrap()]);
    assert_eq!(code(&o), 5, "{}", stderr(&o));

    let o = dhnsim(dir.path(), &["metrics", long.to_str().unwrap(), "--model", &configs("lab_scale.conf")]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("metrics.csv").exists());

    let o = dhnsim(dir.path(), &["nondim", long.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let nd = std::fs::read_to_string(dir.path().join("nondim.csv")).unwrap();
    assert!(nd.starts_with("t_star,"));
}

#[test]
fn capacity_mismatched_pair_reports_ratio_above_one() {
    let dir = tempfile::tempdir().unwrap();
    let full = dhnsim(
        dir.path(),
        &[
            "simulate",
            "--model",
            &configs("full_scale_validation.conf"),
            "--scenario",
            &configs("full_scale_scenario.conf"),
            "--name",
            "full.csv",
        ],
    );
    assert_eq!(code(&full), 0, "{}", stderr(&full));
    assert_eq!(code(&simulate(dir.path(), "lab.csv", &[])), 0);
    let o = dhnsim(
        dir.path(),
        &["compare", dir.path().join("full.csv").to_str().unwrap(), dir.path().join("lab.csv").to_str().unwrap()],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let out = stdout(&o);
    for id in ["ThM1", "ThM2"] {
        let line = out.lines().find(|l| l.contains(&format!("ratio b/a for {id}"))).unwrap();
        let ratio: f64 = line.rsplit(' ').next().unwrap().parse().unwrap();
        assert!(ratio > 1.0, "{line}");
    }
}

#[test]
fn output_directory_defaults_to_the_environment() {
    let dir = tempfile::tempdir().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_dhnsim"))
        .args(["simulate", "--model", &configs("lab_scale.conf"), "--scenario", &configs("lab_scenario.conf")])
        .args(["--override", "scenario.duration=0"])
        .env("DHN_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(dir.path().join("trajectory.csv").exists());
}
