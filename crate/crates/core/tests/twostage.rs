mod common;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ersaa::bench::{gen_instance, to_two_stage, InstanceConfig, ResourceAllocInstance};
use ersaa::scenario::ScenarioSet;
use ersaa::twostage::*;

fn instance(seed: u64, ni: usize, nj: usize) -> TwoStageLp {
    let cfg = InstanceConfig { z_max: 200.0, ..InstanceConfig::default() };
    to_two_stage(&gen_instance(ni, nj, seed, &cfg).unwrap()).unwrap()
}

fn scenarios(rng: &mut ChaCha8Rng, n: usize, d: usize) -> ScenarioSet {
    ScenarioSet::uniform(DMatrix::from_fn(n, d, |_, _| rng.gen_range(0.0..60.0))).unwrap()
}

fn micro() -> TwoStageLp {
    let inst = ResourceAllocInstance {
        n_resources: 1,
        n_customers: 1,
        c_z: vec![1.0],
        rho: vec![1.0],
        mu: DMatrix::from_element(1, 1, 1.0),
        tau: vec![10.0],
        q_w: vec![10.0],
        z_max: 1e4,
    };
    to_two_stage(&inst).unwrap()
}

fn fixed_first_stage(model: &TwoStageLp, z: &[f64]) -> TwoStageLp {
    TwoStageLp::new(
        model.c_z().to_vec(),
        FirstStage::boxed(z.to_vec(), z.to_vec()),
        model.w().clone(),
        model.t().clone(),
        model.c_v().to_vec(),
        model.h0().to_vec(),
        model.h().clone(),
    )
    .unwrap()
}

#[test]
fn micro_instance_shortfall_cost() {
    let m = micro();
    assert!((second_stage_value(&m, &[1.0], &[2.0]).unwrap().value - 10.0).abs() < 1e-9);
    for y in [0.0, -3.0] {
        assert!(second_stage_value(&m, &[1.0], &[y]).unwrap().value.abs() < 1e-9);
    }
    for (z, y) in [(0.0, 5.0), (3.0, 4.5), (2.0, 1.0)] {
        let v = second_stage_value(&m, &[z], &[y]).unwrap().value;
        assert!((v - 10.0 * f64::max(0.0, y - z)).abs() < 1e-9);
    }
    assert!(cost(&m, &[0.0], &[-1.0]).unwrap().abs() < 1e-12);
}

#[test]
fn recourse_equals_max_over_dual_vertices() {
    let m = instance(21, 2, 3);
    let verts = common::dual_vertices(m.w(), m.c_v());
    assert!(!verts.is_empty());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for _ in 0..100 {
        let z: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y: Vec<f64> = (0..3).map(|_| rng.gen_range(-10.0..80.0)).collect();
        let h = m.h_of(&y).unwrap();
        let tz = m.t_times(&z);
        let r = DVector::from_iterator(h.len(), h.iter().zip(&tz).map(|(a, b)| a - b));
        let best = verts.iter().map(|l| l.dot(&r)).fold(f64::NEG_INFINITY, f64::max);
        let rec = second_stage_value(&m, &z, &y).unwrap();
        assert!((rec.value - best).abs() < 1e-8);
        // the returned multiplier is dual feasible and certifies the value
        let lam = DVector::from_vec(rec.dual.clone());
        assert!((lam.dot(&r) - rec.value).abs() < 1e-8);
        let wtl = m.w().transpose() * &lam;
        assert!(wtl.iter().zip(m.c_v()).all(|(a, c)| *a <= c + 1e-8));
    }
}

#[test]
fn recourse_is_lipschitz_in_demand() {
    let m = instance(22, 2, 2);
    let verts = common::dual_vertices(m.w(), m.c_v());
    let h_norm = m.h().clone().svd(false, false).singular_values.max();
    let lip = verts.iter().map(|l| l.norm()).fold(0.0, f64::max) * h_norm;
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    for _ in 0..200 {
        let z: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..80.0)).collect();
        let y: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..80.0)).collect();
        let y2: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..80.0)).collect();
        let d = y.iter().zip(&y2).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let gap = (cost(&m, &z, &y).unwrap() - cost(&m, &z, &y2).unwrap()).abs();
        assert!(gap <= lip * d + 1e-8);
    }
}

#[test]
fn cost_matches_single_scenario_extensive_form() {
    let m = instance(23, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    for _ in 0..10 {
        let z: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..60.0)).collect();
        let c = cost(&m, &z, &y).unwrap();
        assert!((c - m.first_stage_cost(&z) - second_stage_value(&m, &z, &y).unwrap().value).abs() < 1e-12);
        let single = ScenarioSet::new(DMatrix::from_row_slice(1, 4, &y), vec![1.0]).unwrap();
        let ex = solve_extensive(&fixed_first_stage(&m, &z), &single).unwrap();
        assert!((ex.objective - c).abs() <= 1e-8 * c.abs().max(1.0));
    }
}

#[test]
fn lshaped_agrees_with_extensive_form() {
    let mut rng = ChaCha8Rng::seed_from_u64(24);
    for s in 0..20u64 {
        let m = instance(2400 + s, 3, 4);
        let n = rng.gen_range(1..=20);
        let scen = scenarios(&mut rng, n, 4);
        let ex = solve_extensive(&m, &scen).unwrap();
        let trace = solve_lshaped_traced(&m, &scen, &LShapedOptions::default()).unwrap();
        let ls = &trace.result;
        assert!((ls.objective - ex.objective).abs() <= 1e-6 * ex.objective.abs().max(1.0), "instance {s}");
        assert!(m.first_stage().contains(&ls.z_star) && m.first_stage().contains(&ex.z_star));
        assert!(ls.gap <= 1e-6);
        for w in trace.lower_bounds.windows(2) {
            assert!(w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0), "lower bound decreased");
        }
        for (lb, ub) in trace.lower_bounds.iter().zip(&trace.upper_bounds) {
            assert!(*ub >= *lb - 1e-9 * ub.abs().max(1.0));
        }
        let at_opt = saa_objective(&m, &scen, &ex.z_star).unwrap();
        assert!((at_opt - ex.objective).abs() <= 1e-8 * ex.objective.abs().max(1.0));
    }
}

#[test]
fn point_prediction_converges_quickly() {
    let m = micro();
    let scen = ScenarioSet::new(DMatrix::from_element(1, 1, 7.0), vec![1.0]).unwrap();
    let ls = solve_lshaped(&m, &scen, 1e-9, 50).unwrap();
    let ex = solve_extensive(&m, &scen).unwrap();
    assert!(ls.iterations <= 2);
    assert!((ls.objective - ex.objective).abs() < 1e-9);
    assert!((ls.objective - 7.0).abs() < 1e-9);
}

#[test]
fn iteration_limit_returns_incumbent() {
    let m = instance(25, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(25);
    let scen = scenarios(&mut rng, 20, 4);
    match solve_lshaped(&m, &scen, 1e-12, 1) {
        Err(ersaa::Error::IterationLimit { gap, best }) => {
            assert!(gap > 0.0);
            assert!(m.first_stage().contains(&best.z_star));
        }
        Ok(r) => assert!(r.gap <= 1e-12),
        Err(e) => panic!("unexpected error {e}"),
    }
}

#[test]
fn extensive_form_respects_size_cap() {
    let m = instance(26, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(26);
    let scen = scenarios(&mut rng, 10, 4);
    assert!(matches!(solve_extensive_capped(&m, &scen, 50), Err(ersaa::Error::SizeCapExceeded { .. })));
}

#[test]
fn recourse_solver_matches_cold_solves() {
    let m = instance(27, 3, 4);
    let mut rng = ChaCha8Rng::seed_from_u64(27);
    let mut solver = RecourseSolver::new(&m);
    for _ in 0..200 {
        let z: Vec<f64> = (0..3).map(|_| rng.gen_range(0.0..100.0)).collect();
        let y: Vec<f64> = (0..4).map(|_| rng.gen_range(0.0..60.0)).collect();
        let warm = solver.value(&z, &y).unwrap().value;
        let cold = second_stage_value(&m, &z, &y).unwrap().value;
        assert!((warm - cold).abs() <= 1e-8 * cold.abs().max(1.0));
    }
    assert!(solver.cache_hits + solver.warm_solves > 0);
}

#[test]
fn text_round_trip() {
    let m = instance(28, 2, 3);
    let back = TwoStageLp::from_text(&m.to_text()).unwrap();
    assert_eq!(back.to_text(), m.to_text());
    assert!(TwoStageLp::from_text("twostage 1\ndims 1").is_err());
}

#[test]
fn rejects_rank_deficient_recourse() {
    let w = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
    let r = TwoStageLp::new(
        vec![1.0],
        FirstStage::boxed(vec![0.0], vec![1.0]),
        w,
        DMatrix::zeros(2, 1),
        vec![1.0, 1.0],
        vec![0.0; 2],
        DMatrix::identity(2, 2),
    );
    assert!(r.is_err());
}

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 24, failure_persistence: None, ..ProptestConfig::default() }
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn extensive_form_ignores_order_and_duplication(seed in any::<u64>(), n in 1usize..8) {
        let m = instance(seed, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let scen = scenarios(&mut rng, n, 3);
        let base = solve_extensive(&m, &scen).unwrap().objective;
        let tol = 1e-9 * base.abs().max(1.0);

        let mut perm: Vec<usize> = (0..n).collect();
        perm.reverse();
        let permuted = ScenarioSet::uniform(scen.points().select_rows(&perm)).unwrap();
        prop_assert!((solve_extensive(&m, &permuted).unwrap().objective - base).abs() <= tol);

        let twice: Vec<usize> = (0..n).chain(0..n).collect();
        let doubled = ScenarioSet::uniform(scen.points().select_rows(&twice)).unwrap();
        prop_assert!((solve_extensive(&m, &doubled).unwrap().objective - base).abs() <= tol);

        let mut pts = scen.points().clone().insert_row(n, 0.0);
        pts.row_mut(n).fill(500.0);
        let mut w = scen.weights().to_vec();
        w.push(0.0);
        let padded = ScenarioSet::new(pts, w).unwrap();
        prop_assert!((solve_extensive(&m, &padded).unwrap().objective - base).abs() <= tol);
        prop_assert!((solve_lshaped(&m, &padded, 1e-9, 500).unwrap().objective - base).abs() <= 1e-8 * base.abs().max(1.0));
    }

    #[test]
    fn saa_objective_is_a_weighted_sum_and_convex(seed in any::<u64>(), t in 0.0f64..1.0) {
        let m = instance(seed, 2, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pts = DMatrix::from_fn(5, 3, |_, _| rng.gen_range(0.0..60.0));
        let w = vec![0.1, 0.4, 0.2, 0.2, 0.1];
        let scen = ScenarioSet::new(pts, w.clone()).unwrap();
        let za: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..150.0)).collect();
        let zb: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..150.0)).collect();
        let naive: f64 = (0..5).map(|i| w[i] * cost(&m, &za, &scen.point(i)).unwrap()).sum();
        let fa = saa_objective(&m, &scen, &za).unwrap();
        prop_assert!((fa - naive).abs() <= 1e-9 * naive.abs().max(1.0));
        let zm: Vec<f64> = za.iter().zip(&zb).map(|(a, b)| t * a + (1.0 - t) * b).collect();
        let fb = saa_objective(&m, &scen, &zb).unwrap();
        let fm = saa_objective(&m, &scen, &zm).unwrap();
        prop_assert!(fm <= t * fa + (1.0 - t) * fb + 1e-8 * fm.abs().max(1.0));
    }
}
