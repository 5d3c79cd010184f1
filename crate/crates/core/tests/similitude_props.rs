mod common;

use approx::assert_relative_eq;
use common::{random_case, random_target};
use dhnsim::hydraulics::solve_flow_split;
use dhnsim::nominal;
use dhnsim::similitude::{
    compute_pi_groups, matched_twin, solve_lab_scale, FlowBasis, LabConstraints, NondimBase, PointConditions,
};
use dhnsim::thermal::StateLayout;
use proptest::prelude::*;

fn groups_flat(set: &dhnsim::similitude::PiGroupSet) -> Vec<f64> {
    let mut v = vec![set.t_star];
    for s in &set.segments {
        v.extend([s.pi1, s.pi2, s.pi3]);
    }
    for h in &set.exchangers {
        v.extend([h.pi1, h.pi2, h.pi3]);
    }
    for m in &set.masses {
        v.extend([m.pi4, m.pi5, m.pi6]);
    }
    v
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    // A twin evaluated at the corresponding instant, valve setting and
    // scaled temperatures has the same groups as the original.
    #[test]
    fn matched_twin_preserves_every_group(seed in 0u64..10_000, u in 0.0f64..1.0, time in 0.0f64..1e4) {
        let (model, scenario) = random_case(seed);
        let src = NondimBase::of_model(&model);
        let target = random_target(&src, seed);
        let (twin, _) = matched_twin(&model, &scenario, &target).unwrap();
        let valves = vec![u; model.valves.len()];
        let flows = solve_flow_split(&model, &model.layout().unwrap(), &valves).unwrap();
        let twin_flows = solve_flow_split(&twin, &twin.layout().unwrap(), &valves).unwrap();

        let st = StateLayout::new(&model, 2);
        let y: Vec<f64> = (0..st.len()).map(|k| 20.0 + (k % 7) as f64).collect();
        let k_t = target.t_s / src.t_s;
        let r = target.rho * target.d.powi(3) / target.mdot_i / (src.rho * src.d.powi(3) / src.mdot_i);
        let power = target.power_scale() / src.power_scale();
        let peltier: Vec<f64> = (0..model.thermal_masses.len()).map(|m| 1.0 + m as f64).collect();
        let a = PointConditions::from_vector(time, &y, &st, 15.0, &peltier);
        let yt: Vec<f64> = y.iter().map(|v| v * k_t).collect();
        let pt: Vec<f64> = peltier.iter().map(|p| p * power).collect();
        let b = PointConditions::from_vector(time * r, &yt, &st, 15.0 * k_t, &pt);

        for basis in [FlowBasis::Design, FlowBasis::Local] {
            let ga = groups_flat(&compute_pi_groups(&model, &flows, &a, &src, basis));
            let gb = groups_flat(&compute_pi_groups(&twin, &twin_flows, &b, &target, basis));
            prop_assert_eq!(ga.len(), gb.len());
            for (x, z) in ga.iter().zip(&gb) {
                prop_assert!((x - z).abs() <= 1e-9 * x.abs().max(z.abs()).max(1e-12), "{} vs {}", x, z);
            }
        }
    }

    // Flow splits reached by the twin are the same fractions of its plant flow.
    #[test]
    fn twin_flow_fractions_match(seed in 0u64..10_000, u in 0.0f64..1.0) {
        let (model, scenario) = random_case(seed);
        let target = random_target(&NondimBase::of_model(&model), seed);
        let (twin, _) = matched_twin(&model, &scenario, &target).unwrap();
        let valves = vec![u; model.valves.len()];
        let fa = solve_flow_split(&model, &model.layout().unwrap(), &valves).unwrap();
        let fb = solve_flow_split(&twin, &twin.layout().unwrap(), &valves).unwrap();
        for (x, z) in fa.segment_flow.iter().zip(&fb.segment_flow) {
            prop_assert!((x / model.plant.mass_flow - z / twin.plant.mass_flow).abs() < 1e-9);
        }
    }
}

#[test]
fn twin_of_twin_is_the_original() {
    let (model, scenario) = random_case(3);
    let src = NondimBase::of_model(&model);
    let (twin, ts) = matched_twin(&model, &scenario, &random_target(&src, 3)).unwrap();
    let (back, bs) = matched_twin(&twin, &ts, &src).unwrap();
    assert_relative_eq!(back.plant.pump_pressure_rise, model.plant.pump_pressure_rise, max_relative = 1e-12);
    for (a, b) in back.segments.iter().zip(&model.segments) {
        assert_relative_eq!(a.length, b.length, max_relative = 1e-12);
        assert_relative_eq!(a.conductance, b.conductance, max_relative = 1e-12);
        assert_relative_eq!(a.loss_coeff, b.loss_coeff, max_relative = 1e-12);
    }
    for (a, b) in back.thermal_masses.iter().zip(&model.thermal_masses) {
        assert_relative_eq!(a.heat_capacity, b.heat_capacity, max_relative = 1e-12);
    }
    assert_relative_eq!(bs.duration, scenario.duration, max_relative = 1e-12);
    assert_relative_eq!(bs.controller.default.kp, scenario.controller.default.kp, max_relative = 1e-12);
}

#[test]
fn identity_constraints_keep_random_networks() {
    for seed in 0..5 {
        let (model, _) = random_case(seed);
        let c = LabConstraints::identity(&model, 5.0);
        let sol = solve_lab_scale(&model, &c).unwrap();
        for (a, b) in sol.lab_model.segments.iter().zip(&model.segments) {
            assert_relative_eq!(a.length, b.length, max_relative = 1e-9);
            assert_relative_eq!(a.conductance, b.conductance, max_relative = 1e-9);
        }
        assert!(sol.max_residual("pi1") < 1e-9, "seed {seed}");
    }
}

#[test]
fn tight_peltier_limit_makes_sizing_infeasible() {
    let mut c = nominal::lab_constraints();
    c.peltier.as_mut().unwrap().max_power = 0.5;
    let sol = solve_lab_scale(&nominal::full_scale_model(), &c).unwrap();
    assert!(!sol.is_feasible());
    assert!(sol.flags.iter().any(|f| !f.satisfied && f.constraint.contains("Peltier")));
}
