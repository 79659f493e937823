//! Follower and subproblem builders against the enumeration oracles on
//! the bundled fixtures.

mod common;

use common::{onebus_cost, tri3bus_cost};
use dp_bilevel::dcopf::{
    build_follower, build_hpr, build_pushup, fixtures, DcOpfInstance, VarLayout,
};
use dp_bilevel::domain::{CostTarget, CostTargetSource, DemandRole, DemandVector};
use dp_bilevel::solver::{solve, SolveStatus};

fn dv(values: &[f64]) -> DemandVector {
    DemandVector::new(values.to_vec(), DemandRole::Noisy).unwrap()
}

fn instance(net: dp_bilevel::dcopf::Network, f_tilde: f64, beta: f64) -> DcOpfInstance {
    DcOpfInstance::new(
        net,
        CostTarget::new(f_tilde, CostTargetSource::Public).unwrap(),
        beta,
    )
    .unwrap()
}

#[test]
fn onebus_follower_matches_merit_order_curve() {
    let inst = instance(fixtures::onebus_2gen(), 0.5, 0.01);
    for k in 0..=48 {
        // Exact lattice (k/20) so the capacity boundary stays exact.
        let d = k as f64 / 20.0;
        let sol = solve(&build_follower(&inst, &dv(&[d])).unwrap()).unwrap();
        match onebus_cost(d) {
            Some(cost) => {
                assert_eq!(sol.status, SolveStatus::Optimal, "d = {d}");
                assert!(
                    (sol.objective - cost).abs() <= 1e-6 * (1.0 + cost),
                    "d = {d}: ipm {} vs oracle {cost}",
                    sol.objective
                );
            }
            None => {
                assert_eq!(sol.status, SolveStatus::Infeasible, "d = {d}");
            }
        }
    }
}

#[test]
fn tri3bus_follower_matches_vertex_enumeration() {
    let inst = instance(fixtures::tri_3bus(), 0.6, 0.01);
    let grid: Vec<f64> = (0..=9).map(|k| 0.1 * k as f64).collect();
    let mut checked = 0;
    for &d2 in &grid {
        for &d3 in &grid {
            let sol = solve(&build_follower(&inst, &dv(&[d2, d3])).unwrap()).unwrap();
            match tri3bus_cost(d2, d3) {
                Some(cost) => {
                    assert_eq!(sol.status, SolveStatus::Optimal, "d = ({d2}, {d3})");
                    assert!(
                        (sol.objective - cost).abs() <= 1e-6 * (1.0 + cost),
                        "d = ({d2}, {d3}): ipm {} vs oracle {cost}",
                        sol.objective
                    );
                    checked += 1;
                }
                None => {
                    assert_eq!(sol.status, SolveStatus::Infeasible, "d = ({d2}, {d3})");
                }
            }
        }
    }
    assert!(checked > 50, "oracle skipped too many points: {checked}");
}

#[test]
fn tri3bus_congestion_changes_dispatch() {
    // At equal demands below 0.4 p.u. the cheap generator carries all
    // load; above, line limits force the expensive units on.
    let inst = instance(fixtures::tri_3bus(), 0.6, 0.01);
    let layout = VarLayout::follower(&inst.network);

    let sol = solve(&build_follower(&inst, &dv(&[0.35, 0.35])).unwrap()).unwrap();
    let dispatch = layout.dispatch(&sol.x);
    assert!((dispatch[0] - 0.7).abs() < 1e-5, "uncongested: {dispatch:?}");

    let sol = solve(&build_follower(&inst, &dv(&[0.55, 0.55])).unwrap()).unwrap();
    let dispatch = layout.dispatch(&sol.x);
    assert!(dispatch[1] + dispatch[2] > 0.05, "congested: {dispatch:?}");
    // Cross-check the congested value against the oracle.
    let cost = tri3bus_cost(0.55, 0.55).unwrap();
    assert!((sol.objective - cost).abs() <= 1e-6 * (1.0 + cost));
}

#[test]
fn hpr_distance_matches_band_frontier_oracle() {
    // Band-reachable demands for the one-bus system satisfy
    // 2 d >= f_tilde - beta and d <= f_tilde + beta. The relaxation
    // returns the box projection of the noisy point onto that segment.
    let f_tilde = 0.5;
    let beta = 0.01;
    let (lo, hi) = ((f_tilde - beta) / 2.0, f_tilde + beta);
    let inst = instance(fixtures::onebus_2gen(), f_tilde, beta);
    for d_tilde in [-0.5, 0.0, 0.1, 0.244, 0.3, 0.49, 0.51, 0.9, 2.0] {
        let sol = solve(&build_hpr(&inst, &dv(&[d_tilde])).unwrap()).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal, "d~ = {d_tilde}");
        let expected = d_tilde.clamp(lo, hi);
        let got = VarLayout::extended(&inst.network).demands(&sol.x)[0];
        // Near a zero-distance optimum the position is only accurate to
        // the square root of the objective tolerance.
        assert!(
            (got - expected).abs() < 5e-5,
            "d~ = {d_tilde}: hpr point {got} vs {expected}"
        );
        let dist = (expected - d_tilde) * (expected - d_tilde);
        assert!(
            (sol.objective - dist).abs() < 1e-6,
            "d~ = {d_tilde}: distance {} vs {dist}",
            sol.objective
        );
    }
}

#[test]
fn pushup_matches_interval_oracle() {
    // One-bus push-up: maximize d over the band-reachable segment
    // intersected with the ball around d_tilde.
    let f_tilde = 0.5;
    let beta = 0.01;
    let (lo, hi) = ((f_tilde - beta) / 2.0, f_tilde + beta);
    let inst = instance(fixtures::onebus_2gen(), f_tilde, beta);
    let layout = VarLayout::extended(&inst.network);
    for d_tilde in [0.3f64, 0.45, 0.5] {
        for delta in [0.0025f64, 0.01, 0.04, 0.09] {
            let r = delta.sqrt();
            let feasible = d_tilde + r >= lo; // segment reachable from the ball
            let sol = solve(&build_pushup(&inst, &dv(&[d_tilde]), delta).unwrap()).unwrap();
            if !feasible {
                assert_eq!(sol.status, SolveStatus::Infeasible);
                continue;
            }
            let expected = (d_tilde + r).min(hi);
            assert_eq!(sol.status, SolveStatus::Optimal);
            let got = layout.demands(&sol.x)[0];
            assert!(
                (got - expected).abs() < 1e-5,
                "d~ = {d_tilde}, delta = {delta}: {got} vs {expected}"
            );
        }
    }
}

#[test]
fn relaxation_cost_bounds_release_cost_on_fixtures() {
    // O(d_h) <= O(d*) whenever both exist, on both fixtures.
    use dp_bilevel::bilevel::{run_obfuscation, BilevelStatus};
    use dp_bilevel::domain::PrivacyParams;
    for (net, f_tilde) in [(fixtures::onebus_2gen(), 0.5), (fixtures::tri_3bus(), 0.6)] {
        let inst = instance(net.clone(), f_tilde, 0.01 * f_tilde);
        let d_orig = net.demand_vector();
        for seed in 0..15u64 {
            let params = PrivacyParams::new(1.0, 0.1, 0.01 * f_tilde, None, 1e-3, 3000, seed).unwrap();
            let (result, metrics) = run_obfuscation(&inst, &d_orig, &params).unwrap();
            if result.status == BilevelStatus::Converged {
                if let Some(hpr_cost) = metrics.hpr_cost {
                    assert!(
                        hpr_cost <= result.cost + 1e-6,
                        "seed {seed}: O(d_h) = {hpr_cost} > O(d*) = {}",
                        result.cost
                    );
                }
            }
        }
    }
}
