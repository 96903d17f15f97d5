mod common;

use common::{oracle, layout_strategy, Layout};
use ntl_core::grid::{Phase, PerUnitBase};
use ntl_core::powerflow::{power_balance_residual, solve_series_with, solve_snapshot, LoadSnapshot, SolverConfig};
use ntl_core::Execution;
use num_complex::Complex64;
use proptest::prelude::*;
use proptest::strategy::ValueTree;

fn solve(layout: &Layout, scale: f64) -> (ntl_core::grid::PuNetwork, LoadSnapshot, ntl_core::powerflow::VoltageSolution) {
    let pu = layout.network().to_per_unit(PerUnitBase::default()).unwrap();
    let snap = layout.snapshot(scale);
    let sol = solve_snapshot(&pu, &snap, &SolverConfig::default()).unwrap();
    (pu, snap, sol)
}

fn bus_index(pu: &ntl_core::grid::PuNetwork, i: usize) -> usize {
    pu.network().bus_index(&common::bus_id(i)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn matches_scalar_oracle_on_small_networks(layout in layout_strategy(3, 0.2, 5.0)) {
        let (pu, _, sol) = solve(&layout, 1.0);
        prop_assert!(sol.converged);
        let expected = oracle(&layout);
        for (i, phases) in expected.iter().enumerate() {
            let b = bus_index(&pu, i);
            for (ph, want) in phases.iter().enumerate() {
                if let Some(want) = want {
                    let got = sol.magnitude(b, Phase::ALL[ph]);
                    prop_assert!((got - want).abs() <= 1e-7, "bus {i} phase {ph}: {got} vs {want}");
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn zero_load_is_exactly_slack_voltage(layout in layout_strategy(30, 0.5, 10.0)) {
        let (_, _, sol) = solve(&layout, 0.0);
        prop_assert!(sol.converged);
        prop_assert_eq!(sol.iterations, 1);
        for v in &sol.voltages {
            for ph in v {
                prop_assert_eq!(*ph, Complex64::new(1.0, 0.0));
            }
        }
    }

    #[test]
    fn converged_solutions_balance_power(layout in layout_strategy(30, 0.2, 8.0)) {
        let (pu, snap, sol) = solve(&layout, 1.0);
        prop_assume!(sol.converged);
        let residual = power_balance_residual(&pu, &snap, &sol).unwrap();
        prop_assert!(residual < 10.0 * SolverConfig::default().tolerance, "residual {residual}");
    }

    #[test]
    fn voltage_never_rises_towards_the_leaves(layout in layout_strategy(30, 0.2, 8.0)) {
        let (pu, _, sol) = solve(&layout, 1.0);
        prop_assume!(sol.converged);
        let net = pu.network();
        for b in 0..net.buses().len() {
            if let Some((p, _)) = net.parent(b) {
                for ph in Phase::ALL {
                    if net.buses()[b].phases.contains(ph) {
                        prop_assert!(sol.magnitude(b, ph) <= sol.magnitude(p, ph) + 1e-12);
                    }
                }
            }
        }
    }

    #[test]
    fn doubling_loads_never_raises_voltage(layout in layout_strategy(30, 0.2, 5.0)) {
        let (pu, _, single) = solve(&layout, 1.0);
        let (_, _, double) = solve(&layout, 2.0);
        prop_assume!(single.converged && double.converged);
        for b in 0..pu.network().buses().len() {
            for ph in Phase::ALL {
                prop_assert!(double.magnitude(b, ph) <= single.magnitude(b, ph) + 1e-12);
            }
        }
    }
}

#[test]
fn sequential_and_parallel_series_agree() {
    let mut runner = proptest::test_runner::TestRunner::deterministic();
    let layout = layout_strategy(30, 0.2, 5.0).new_tree(&mut runner).unwrap().current();
    let pu = layout.network().to_per_unit(PerUnitBase::default()).unwrap();
    let snaps: Vec<LoadSnapshot> = (0..48)
        .map(|h| {
            let mut s = layout.snapshot(0.5 + (h as f64 * 0.7).sin().abs());
            s.timestamp = common::t0() + chrono::Duration::hours(h);
            s
        })
        .collect();
    let cfg = SolverConfig::default();
    let seq = solve_series_with(&pu, &snaps, &cfg, Execution::Sequential).unwrap();
    let par = solve_series_with(&pu, &snaps, &cfg, Execution::Auto).unwrap();
    assert_eq!(seq, par);
}
