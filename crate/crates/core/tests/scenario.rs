use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use ersaa::regress::*;
use ersaa::scenario::*;

fn random_dataset(seed: u64, n: usize, d_raw: usize, d_y: usize) -> Dataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw = DMatrix::from_fn(n, d_raw, |_, _| rng.sample::<f64, _>(StandardNormal));
    let y = DMatrix::from_fn(n, d_y, |i, j| {
        2.0 + j as f64 + raw.row(i).sum() + rng.sample::<f64, _>(StandardNormal)
    });
    Dataset::with_intercept(&raw, y).unwrap()
}

fn query(data: &Dataset, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let raw: Vec<f64> = (0..data.d_x() - 1).map(|_| rng.gen_range(-1.5..1.5)).collect();
    data.design_point(&raw)
}

fn ols(data: &Dataset) -> PointModel {
    fit_ols(data, None).unwrap().into()
}

#[test]
fn constant_scale_halves_residuals() {
    let data = random_dataset(1, 12, 2, 2);
    let f = ols(&data);
    let base = empirical_residuals(&data, &f, &HeteroModel::identity(2)).unwrap();
    // pi = [ln 4, 0, 0] gives q ≡ 2
    let mut pi = DMatrix::zeros(2, 3);
    pi.column_mut(0).fill(4f64.ln());
    let h = HeteroModel::loglinear(pi, FeatureTransform::Log1p, DEFAULT_DELTA, true);
    let pos = Dataset::new(data.covariates().map(f64::abs), data.responses().clone(), true).unwrap();
    let fp = ols(&pos);
    let base_pos = empirical_residuals(&pos, &fp, &HeteroModel::identity(2)).unwrap();
    let halved = empirical_residuals(&pos, &fp, &h).unwrap();
    assert!((&base_pos.values / 2.0 - &halved.values).abs().max() < 1e-14);
    for i in 0..12 {
        let p = f.predict(&data.x(i)).unwrap();
        for j in 0..2 {
            assert!((base.values[(i, j)] - (data.responses()[(i, j)] - p[j])).abs() < 1e-14);
        }
    }
}

#[test]
fn loo_residuals_from_shortcut_and_refits_agree() {
    let data = random_dataset(2, 14, 2, 2);
    let bundle = loo_ols(&data).unwrap();
    let short = loo_residuals(&data, &OlsShortcut { bundle: &bundle, data: &data }).unwrap();
    let refits = loo_refit(&data, FitMethod::Ols, HeteroSpec::Identity).unwrap();
    let long = loo_residuals(&data, &refits).unwrap();
    assert!((&short.values - &bundle.loo_residuals).abs().max() < 1e-8);
    assert!((&short.values - &long.values).abs().max() < 1e-8);
}

#[test]
fn j_saa_points_follow_leverage_identity() {
    let data = random_dataset(3, 16, 2, 2);
    let bundle = loo_ols(&data).unwrap();
    let f: PointModel = bundle.model.clone().into();
    let res = loo_residuals(&data, &OlsShortcut { bundle: &bundle, data: &data }).unwrap();
    let x = query(&data, 3);
    let s = build_j_saa(&x, &f, &HeteroModel::identity(2), &res, &SupportBox::unbounded(2)).unwrap();
    let fx = f.predict(&x).unwrap();
    for i in 0..16 {
        for j in 0..2 {
            let e = bundle.base_residuals[(i, j)] / (1.0 - bundle.leverages[i]);
            assert!((s.points()[(i, j)] - (fx[j] + e)).abs() < 1e-8);
        }
    }
}

#[test]
fn jplus_points_match_explicit_refits() {
    let data = random_dataset(4, 16, 2, 2);
    let bundle = loo_ols(&data).unwrap();
    let sc = OlsShortcut { bundle: &bundle, data: &data };
    let res = loo_residuals(&data, &sc).unwrap();
    let x = query(&data, 4);
    let s = build_jplus_saa(&x, &sc, &res, &SupportBox::unbounded(2)).unwrap();
    for i in 0..16 {
        let refit = ols(&data.without(i)).predict(&x).unwrap();
        for j in 0..2 {
            assert!((s.points()[(i, j)] - (refit[j] + bundle.loo_residuals[(i, j)])).abs() < 1e-8);
        }
    }
}

#[test]
fn knn_weights_match_distance_sort() {
    let data = random_dataset(5, 20, 3, 1);
    for (k, seed) in [(1, 50), (4, 51), (7, 52), (20, 53)] {
        let x = query(&data, seed);
        let s = build_knn_saa(&data, &x, k).unwrap();
        let mut order: Vec<(f64, usize)> = (0..20)
            .map(|i| (data.x(i).iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum(), i))
            .collect();
        order.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut expect = vec![0.0; 20];
        for &(_, i) in &order[..k] {
            expect[i] = 1.0 / k as f64;
        }
        assert_eq!(s.weights(), &expect[..]);
        assert_eq!(s.points(), data.responses());
    }
    assert!(matches!(build_knn_saa(&data, &query(&data, 0), 21), Err(ersaa::Error::KOutOfRange { .. })));
}

#[test]
fn mean_deviation_bound_holds_on_perturbed_fits() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let coef = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, -1.0, 0.5, 0.0, 3.0]);
    let truth = PointModel::Linear(LinearModel { coef: coef.clone(), kind: LinearKind::Ols, lambda: 0.0 });
    let f_true = |v: &[f64]| truth.predict(v).unwrap();
    for draw in 0..100 {
        let n = 1 + draw % 30;
        let raw = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = DMatrix::from_fn(n, 2, |i, j| {
            let x = [1.0, raw[(i, 0)], raw[(i, 1)]];
            (0..3).map(|k| coef[(j, k)] * x[k]).sum::<f64>() + rng.sample::<f64, _>(StandardNormal)
        });
        let data = Dataset::with_intercept(&raw, y).unwrap();
        let noise = DMatrix::from_fn(2, 3, |_, _| 0.3 * rng.sample::<f64, _>(StandardNormal));
        let f = PointModel::Linear(LinearModel { coef: &coef + noise, kind: LinearKind::Ols, lambda: 0.0 });
        let res = empirical_residuals(&data, &f, &HeteroModel::identity(2)).unwrap();
        let x = data.design_point(&[rng.gen_range(-2.0..2.0), rng.gen_range(-2.0..2.0)]);
        let c = check_mean_deviation_bound(&x, &f, true, Some(&f_true), &res, &data).unwrap();
        assert!(c.holds(), "draw {draw}: {} > {}", c.lhs, c.rhs);
        let exact = check_mean_deviation_bound(&x, &truth, true, Some(&f_true), &empirical_residuals(&data, &truth, &HeteroModel::identity(2)).unwrap(), &data).unwrap();
        assert!(exact.lhs.abs() < 1e-12 && exact.rhs.abs() < 1e-12);
    }
    let data = random_dataset(7, 5, 2, 2);
    let res = empirical_residuals(&data, &truth, &HeteroModel::identity(2)).unwrap();
    assert!(matches!(check_mean_deviation_bound(&data.x(0), &truth, true, None, &res, &data), Err(ersaa::Error::TrueModelUnavailable)));
}

fn cfg() -> ProptestConfig {
    ProptestConfig { cases: 64, failure_persistence: None, ..ProptestConfig::default() }
}

fn box_strategy() -> impl Strategy<Value = SupportBox> {
    prop::collection::vec((-5.0f64..5.0, 0.0f64..5.0, any::<bool>(), any::<bool>()), 3).prop_map(|v| {
        let lo = v.iter().map(|&(l, _, inf, _)| if inf { f64::NEG_INFINITY } else { l }).collect();
        let hi = v.iter().map(|&(l, w, _, inf)| if inf { f64::INFINITY } else { l + w }).collect();
        SupportBox::new(lo, hi).unwrap()
    })
}

proptest! {
    #![proptest_config(cfg())]

    #[test]
    fn projection_is_idempotent_and_nonexpansive(
        bx in box_strategy(),
        a in prop::collection::vec(-20.0f64..20.0, 3),
        b in prop::collection::vec(-20.0f64..20.0, 3),
    ) {
        let d0: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum();
        let (mut pa, mut pb) = (a.clone(), b.clone());
        bx.project(&mut pa);
        bx.project(&mut pb);
        prop_assert!(bx.contains(&pa) && bx.contains(&pb));
        let d1: f64 = pa.iter().zip(&pb).map(|(x, y)| (x - y).powi(2)).sum();
        prop_assert!(d1 <= d0 + 1e-12);
        let again = { let mut t = pa.clone(); bx.project(&mut t); t };
        prop_assert_eq!(again, pa);
    }

    #[test]
    fn builders_keep_counts_and_stay_in_support(seed in any::<u64>(), n in 6usize..25, k in 1usize..6) {
        let data = random_dataset(seed, n, 2, 2);
        let support = SupportBox::nonnegative(2);
        let f = ols(&data);
        let id = HeteroModel::identity(2);
        let x = query(&data, seed ^ 1);
        let res = empirical_residuals(&data, &f, &id).unwrap();
        let bundle = loo_ols(&data).unwrap();
        let sc = OlsShortcut { bundle: &bundle, data: &data };
        let lres = loo_residuals(&data, &sc).unwrap();
        let sets = [
            build_er_saa(&x, &f, &id, &res, &support).unwrap(),
            build_j_saa(&x, &f, &id, &lres, &support).unwrap(),
            build_jplus_saa(&x, &sc, &lres, &support).unwrap(),
        ];
        for s in &sets {
            prop_assert_eq!(s.len(), n);
            prop_assert!(s.weights().iter().all(|&w| w == 1.0 / n as f64));
            prop_assert!((0..n).all(|i| support.contains(&s.point(i))));
        }
        prop_assert_eq!(build_n_saa(&data).len(), n);
        prop_assert_eq!(build_pp(&x, &f, &support).unwrap().len(), 1);
        let knn = build_knn_saa(&data, &x, k).unwrap();
        prop_assert_eq!(knn.len(), n);
        prop_assert_eq!(knn.weights().iter().filter(|&&w| w > 0.0).count(), k);
    }

    #[test]
    fn zero_residuals_collapse_to_point_prediction(seed in any::<u64>()) {
        let data = random_dataset(seed, 10, 2, 2);
        let f = ols(&data);
        let id = HeteroModel::identity(2);
        let x = query(&data, seed);
        let zero = ResidualMatrix::new(DMatrix::zeros(10, 2)).unwrap();
        let support = SupportBox::nonnegative(2);
        let pp = build_pp(&x, &f, &support).unwrap().point(0);
        let same: Vec<(PointModel, HeteroModel)> = (0..10).map(|_| (f.clone(), id.clone())).collect();
        for s in [
            build_er_saa(&x, &f, &id, &zero, &support).unwrap(),
            build_j_saa(&x, &f, &id, &zero, &support).unwrap(),
            build_jplus_saa(&x, &same, &zero, &support).unwrap(),
        ] {
            prop_assert!((0..10).all(|i| s.point(i) == pp));
        }
    }

    #[test]
    fn er_saa_shifts_with_responses(seed in any::<u64>(), c in prop::collection::vec(-50.0f64..50.0, 2)) {
        let data = random_dataset(seed, 15, 2, 2);
        let shifted_y = DMatrix::from_fn(15, 2, |i, j| data.responses()[(i, j)] + c[j]);
        let shifted = Dataset::new(data.covariates().clone(), shifted_y, true).unwrap();
        let id = HeteroModel::identity(2);
        let x = query(&data, seed);
        let free = SupportBox::unbounded(2);
        let build = |d: &Dataset| {
            let f = ols(d);
            let r = empirical_residuals(d, &f, &id).unwrap();
            build_er_saa(&x, &f, &id, &r, &free).unwrap()
        };
        let (a, b) = (build(&data), build(&shifted));
        for i in 0..15 {
            for j in 0..2 {
                prop_assert!((b.points()[(i, j)] - a.points()[(i, j)] - c[j]).abs() < 1e-8);
            }
        }
    }
}
