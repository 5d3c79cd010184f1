mod common;

use std::path::PathBuf;

use approx::assert_relative_eq;
use common::{random_case, Run};
use dhnsim::config;
use dhnsim::harness::compare_runs;
use dhnsim::nominal;
use dhnsim::scenario::ExperimentScenario;
use dhnsim::similitude::{nondimensionalize, NondimBase};
use dhnsim::sim;
use dhnsim::trajectory::{read_trajectory, sidecar_path, write_trajectory};
use dhnsim::Error;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn read(name: &str) -> String {
    std::fs::read_to_string(configs().join(name)).unwrap()
}

#[test]
fn shipped_configs_match_the_reference_networks() {
    assert_eq!(config::parse_model(&read("full_scale.conf")).unwrap(), nominal::full_scale_model());
    assert_eq!(
        config::parse_model(&read("full_scale_validation.conf")).unwrap(),
        nominal::full_scale_validation_model()
    );
    assert_eq!(config::parse_model(&read("lab_scale.conf")).unwrap(), nominal::lab_scale_model());
    assert_eq!(
        config::parse_lab_constraints(&read("lab_constraints.conf")).unwrap(),
        nominal::lab_constraints()
    );
    assert_eq!(config::parse_scenario(&read("lab_scenario.conf")).unwrap(), nominal::lab_scenario());
    assert_eq!(
        config::parse_scenario(&read("full_scale_scenario.conf")).unwrap(),
        nominal::full_scale_scenario()
    );
}

#[test]
fn trajectory_files_round_trip_with_metadata() {
    let (model, mut scenario) = random_case(11);
    scenario.duration = 1800.0;
    let run = Run::new(model, scenario);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("run.csv");
    write_trajectory(&path, &run.table, &run.traj.meta).unwrap();
    assert!(sidecar_path(&path).exists());
    let (table, meta) = read_trajectory(&path).unwrap();
    let meta = meta.unwrap();
    assert_eq!(meta, run.traj.meta);
    assert_eq!(table.names(), run.table.names());
    assert_eq!(table.rows(), run.table.rows());
    let nd = nondimensionalize(&table, &meta.mass_setpoints, &meta.base, &meta.base).unwrap();
    let cmp = compare_runs(&run.nondim, &nd).unwrap();
    // Rounded to the CSV precision only.
    assert!(cmp.max_rms("Tstar_") < 1e-8);
}

#[test]
fn nondimensionalizing_with_another_base_is_refused() {
    let run = Run::new(nominal::lab_scale_model(), ExperimentScenario::constant(&nominal::lab_scale_model(), 60.0, 22.0));
    let other = NondimBase::of_model(&nominal::full_scale_model());
    let err = nondimensionalize(&run.table, &run.traj.meta.mass_setpoints, &run.base, &other).unwrap_err();
    assert!(matches!(err, Error::BaseMismatch(_)));
}

#[test]
fn auto_tuning_is_seeded() {
    let model = nominal::lab_scale_model();
    let mut sc = nominal::lab_scenario();
    sc.duration = 3.0 * 3600.0;
    sc.controller.seed = 1;
    let a = sim::auto_tune(&model, &sc).unwrap();
    let b = sim::auto_tune(&model, &sc).unwrap();
    assert_eq!(a, b);
    sc.controller.seed = 2;
    let c = sim::auto_tune(&model, &sc).unwrap();
    assert_ne!(a, c);
    for g in a.iter().chain(&c) {
        assert!(g.config.kp > 0.0 && g.config.ki > 0.0, "{g:?}");
        assert!(g.ultimate_period > 0.0);
    }
}

#[test]
fn zero_duration_run_has_one_row() {
    let model = nominal::lab_scale_model();
    let mut sc = nominal::lab_scenario();
    sc.duration = 0.0;
    let run = Run::new(model, sc);
    assert_eq!(run.table.rows(), 1);
    assert_relative_eq!(run.table.column("E_supplied_J").unwrap()[0], 0.0);
}
