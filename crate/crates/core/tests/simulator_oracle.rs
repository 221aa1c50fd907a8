//! The switched-network simulator against a brute-force fixed-step
//! integrator written here from the circuit description alone, and against
//! the closed-form currents.

use equalizer::analytic;
use equalizer::network::{self, commutation, ZVS_EPSILON};
use equalizer::par::Execution;
use equalizer::suite::{self, Ordering};
use equalizer::{EqualizerParams, OperatingPoint, Role};
use proptest::prelude::*;

/// Forward integration at `steps` samples per period. The drive is
/// piecewise constant, so sampling the source at each step's midpoint is
/// exact except in the steps that straddle an edge.
fn brute_force_dc_currents(op: &OperatingPoint, steps: usize) -> Vec<f64> {
    let n = op.n();
    let ts = 1.0 / op.params.switching_frequency;
    let dt = ts / steps as f64;
    let l = op.params.inductance;
    let active: Vec<usize> = (0..n).filter(|&k| op.assignment.role(k) != Role::Idle).collect();
    let phase = |k: usize| match op.assignment.role(k) {
        Role::Charge => -op.params.phase_shift,
        _ => 0.0,
    };
    let square = |x: f64| if (x - x.floor()) < 0.5 { 1.0 } else { -1.0 };

    let run = |start: &[f64], record: bool| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let mut i = start.to_vec();
        let mut mean = vec![0.0; n];
        let mut top = vec![0.0; n];
        for j in 0..steps {
            let x = (j as f64 + 0.5) / steps as f64;
            let v: Vec<f64> = (0..n).map(|k| op.voltages[k] / 2.0 * square(x + phase(k))).collect();
            let v_o = active.iter().map(|&k| v[k]).sum::<f64>() / active.len() as f64;
            for &k in &active {
                let next = i[k] + (v[k] - v_o) / l * dt;
                let avg = 0.5 * (i[k] + next);
                mean[k] += avg * dt / ts;
                if record && square(x + phase(k)) > 0.0 {
                    top[k] += avg * dt / ts;
                }
                i[k] = next;
            }
        }
        (i, mean, top)
    };
    let (_, mean, _) = run(&vec![0.0; n], false);
    let start: Vec<f64> = mean.iter().map(|m| -m).collect();
    run(&start, true).2
}

#[test]
fn brute_force_agrees_on_table_point() {
    let op = OperatingPoint::from_roles(
        vec![12.69, 12.59, 12.52, 12.04],
        vec![Role::Discharge, Role::Discharge, Role::Charge, Role::Charge],
        EqualizerParams::default(),
    )
    .unwrap();
    let brute = brute_force_dc_currents(&op, 40_000);
    let (_, sol) = network::simulate(&op, 20, 64).unwrap();
    for k in 0..4 {
        assert!((brute[k] - sol.dc_currents[k]).abs() < 1e-3 * sol.dc_currents[k].abs());
    }
}

#[test]
fn suite_points_match_brute_force() {
    let points = suite::random_points(&EqualizerParams::default(), 11, 24, Ordering::Banded, Execution::default());
    for op in &points {
        let brute = brute_force_dc_currents(op, 20_000);
        let (_, sol) = network::simulate(op, 4, 64).unwrap();
        let scale = sol.dc_currents.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..op.n() {
            assert!((brute[k] - sol.dc_currents[k]).abs() < 2e-3 * scale, "{op:?}");
            if op.assignment.role(k) == Role::Idle {
                assert_eq!(sol.dc_currents[k], 0.0);
            }
        }
    }
}

fn any_point() -> impl Strategy<Value = OperatingPoint> {
    (any::<u64>(), 0usize..64, prop_oneof![Just(Ordering::Free), Just(Ordering::ControllerConsistent)])
        .prop_map(|(seed, index, ordering)| suite::random_point(&EqualizerParams::default(), seed, index, ordering))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn simulated_currents_match_closed_form(op in any_point()) {
        let (_, sol) = network::simulate(&op, 3, 64).unwrap();
        let formula = analytic::battery_currents(&op);
        let scale = formula.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        for k in 0..op.n() {
            prop_assert!((sol.dc_currents[k] - formula[k]).abs() <= 1e-9 * scale);
        }
        let p: f64 = sol.powers.iter().sum();
        let pmax = sol.powers.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        prop_assert!(p.abs() <= 5e-3 * pmax);
    }

    #[test]
    fn kcl_and_half_wave_symmetry(op in any_point()) {
        let (trace, sol) = network::simulate(&op, 2, 64).unwrap();
        prop_assert!(sol.kcl_residual < 1e-9);
        let last = &trace.rows[64..];
        for j in 0..32 {
            for k in 0..op.n() {
                let a = last[j].currents[k];
                let b = last[j + 32].currents[k];
                prop_assert!((a + b).abs() <= 1e-6 * a.abs().max(1.0));
            }
        }
    }

    #[test]
    fn trace_matches_inductor_current(op in any_point(), j in 0usize..64) {
        let (trace, _) = network::simulate(&op, 1, 64).unwrap();
        let row = &trace.rows[j];
        for k in 0..op.n() {
            let want = analytic::inductor_current(k, row.t, &op).unwrap();
            prop_assert!((row.currents[k] - want).abs() <= 1e-9 * want.abs().max(1.0));
        }
    }

    #[test]
    fn zvs_flag_tracks_residual(
        i0 in -20.0f64..20.0,
        c in 1e-9f64..2e-8,
        v in 10.0f64..15.0,
        dead in 0.0f64..1e-6,
    ) {
        let r = commutation(i0, c, v, dead).unwrap();
        prop_assert_eq!(r.zvs_achieved, r.residual_voltage <= ZVS_EPSILON);
        prop_assert!(r.residual_voltage >= 0.0 && r.residual_voltage <= v);
        if i0 < 0.0 {
            prop_assert!((r.t_r - 2.0 * c * v / -i0).abs() <= 1e-12 * r.t_r);
        }
    }
}
