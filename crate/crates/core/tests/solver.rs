mod common;

use common::{huber_oracle, least_squares_oracle, max_abs_diff, random_instance};
use ndarray::{Array1, Array2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use robust_transfer::solver::{
    self, cross_validate, cross_validate_folds, default_gamma, fit, fit_traced, huber_loss,
    huber_objective, huber_psi, intercept_only, lambda_path, CvOptions, PathOptions, SolverConfig,
    CV_TIE_TOL,
};
use robust_transfer::{standardize, CoefVector, Dataset};

#[test]
fn matches_proximal_oracle_on_small_lasso() {
    let d = random_instance(7, 30, 4);
    let cfg = SolverConfig::new(1.5, 1.0, 0.1);
    let res = fit(&d, &cfg, None).unwrap();
    assert!(res.converged);
    let oracle = huber_oracle(d.x(), d.y(), 1.5, 1.0, 0.1);
    let ours = res.coef.to_full();
    let theirs: Vec<f64> = std::iter::once(oracle.intercept)
        .chain(oracle.slopes.iter().copied())
        .collect();
    assert!(max_abs_diff(&ours, &theirs) < 1e-4, "{ours:?} vs {theirs:?}");
    assert!((res.objective - oracle.objective).abs() < 1e-8);
}

#[test]
fn lambda_max_zeroes_every_slope() {
    for seed in 0..10 {
        let d = random_instance(seed, 40, 8);
        for alpha in [1.0, 0.5, 0.2] {
            let gamma = default_gamma(d.y(), None).unwrap();
            let path = lambda_path(&d, alpha, gamma, 5, 0.01).unwrap();
            let res = fit(&d, &SolverConfig::new(gamma, alpha, path[0]), None).unwrap();
            assert!(res.converged);
            assert!(res.coef.slopes.iter().all(|&b| b == 0.0), "{:?}", res.coef.slopes);
            // the intercept minimizes the intercept-only loss
            let b0 = intercept_only(d.y().as_slice().unwrap(), gamma);
            let cfg0 = SolverConfig::new(gamma, alpha, 0.0);
            let at_fit = huber_objective(&res.coef, &d, &cfg0).unwrap();
            let at_b0 = huber_objective(&CoefVector::new(b0, Array1::zeros(8)).unwrap(), &d, &cfg0)
                .unwrap();
            assert!(at_fit <= at_b0 + 1e-14);

            // just below λ_max at least one slope activates
            let below = fit(&d, &SolverConfig::new(gamma, alpha, path[0] * 0.9), None).unwrap();
            assert!(below.coef.slopes.iter().any(|&b| b != 0.0));
        }
    }
}

#[test]
fn noiseless_recovery() {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (n, p) = (50, 5);
    let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
    let truth = [1.0, -0.5, 0.0, 2.0, 0.25];
    let y: Array1<f64> = (0..n)
        .map(|i| 0.7 + (0..p).map(|j| x[[i, j]] * truth[j]).sum::<f64>())
        .collect();
    let d = Dataset::new(y, x, "noiseless").unwrap();
    let res = fit(&d, &SolverConfig::new(1.0, 1.0, 1e-6), None).unwrap();
    assert!(res.converged);
    assert!(max_abs_diff(res.coef.slopes.as_slice().unwrap(), &truth) < 1e-3);
    let fitted = d.predict(&res.coef).unwrap();
    let worst = (d.y() - &fitted).iter().fold(0.0f64, |m, r| m.max(r.abs()));
    assert!(worst < 1e-3);
}

#[test]
fn path_shape() {
    let d = random_instance(3, 30, 6);
    let path = lambda_path(&d, 1.0, 1.0, 5, 0.01).unwrap();
    assert_eq!(path.len(), 5);
    assert!((path[4] / path[0] - 0.01).abs() < 1e-14);
    assert!(path.windows(2).all(|w| w[1] < w[0]));
    assert!(lambda_path(&d, 1.0, 1.0, 1, 0.01).is_err());
    assert!(lambda_path(&d, 1.0, 1.0, 5, 1.5).is_err());

    let flat = Dataset::new(Array1::from_elem(30, 4.0), d.x().clone(), "flat").unwrap();
    assert!(matches!(
        lambda_path(&flat, 1.0, 1.0, 5, 0.01),
        Err(robust_transfer::Error::ConstantResponse)
    ));
}

// The γ-scaled loss has derivative clamp(t/γ, −1, 1), which is invariant
// under (y, γ) → (2y, 2γ); λ_max therefore stays fixed under joint scaling and
// doubles only when the classical (unscaled) loss is used, i.e. after
// multiplying the objective by γ.
#[test]
fn lambda_max_under_joint_rescaling() {
    let d = random_instance(12, 40, 5);
    let gamma = 0.8;
    let d2 = Dataset::new(d.y() * 2.0, d.x().clone(), "doubled").unwrap();
    let l1 = lambda_path(&d, 1.0, gamma, 3, 0.1).unwrap()[0];
    let l2 = lambda_path(&d2, 1.0, 2.0 * gamma, 3, 0.1).unwrap()[0];
    assert_eq!(l1, l2);
    // classical-scale λ_max is λ_max·γ, which doubles exactly
    assert_eq!(l2 * (2.0 * gamma), 2.0 * (l1 * gamma));
}

#[test]
fn cv_is_deterministic() {
    let d = random_instance(5, 40, 6);
    let a = cross_validate(&d, 1.0, 1.0, 5, 17).unwrap();
    let b = cross_validate(&d, 1.0, 1.0, 5, 17).unwrap();
    assert_eq!(a, b);
    let mut sizes = [0; 5];
    for &f in &a.fold_of {
        sizes[f] += 1;
    }
    assert_eq!(sizes, [8; 5]);
}

#[test]
fn cv_loo_picks_largest_tied_minimizer() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let x = Array2::from_shape_fn((6, 2), |_| rng.random::<f64>() * 2.0 - 1.0);
    let y: Array1<f64> = (0..6)
        .map(|i| 1.0 + 2.0 * x[[i, 0]] - x[[i, 1]] + 1e-6 * (rng.random::<f64>() - 0.5))
        .collect();
    let d = Dataset::new(y, x, "loo").unwrap();
    let cv = cross_validate(&d, 1.0, 1.0, 6, 1).unwrap();
    let min = cv
        .table
        .iter()
        .map(|r| r.mean_loss)
        .fold(f64::INFINITY, f64::min);
    let tie = CV_TIE_TOL * min.abs().max(1.0);
    let expected = cv
        .table
        .iter()
        .filter(|r| r.mean_loss <= min + tie)
        .map(|r| r.lambda)
        .fold(0.0f64, f64::max);
    assert_eq!(cv.lambda_star, expected);
    // every fold holds exactly one row
    let mut seen = cv.fold_of.clone();
    seen.sort_unstable();
    assert_eq!(seen, (0..6).collect::<Vec<_>>());
}

// Moving rows together with their fold labels reproduces the CV table; the
// zero-slope entry at λ_max is also unchanged.
#[test]
fn cv_permutation_invariance() {
    let d = random_instance(8, 35, 4);
    let gamma = 1.0;
    let opts = CvOptions {
        seed: 3,
        path: PathOptions {
            n_lambda: 20,
            ratio: Some(0.05),
        },
        ..CvOptions::default()
    };
    let base = solver::cross_validate_with(&d, None, 1.0, gamma, &opts).unwrap();

    let mut perm: Vec<usize> = (0..d.n()).collect();
    perm.reverse();
    perm.swap(3, 20);
    let shuffled = d.select_rows(&perm).unwrap();
    let labels: Vec<usize> = perm.iter().map(|&i| base.fold_of[i]).collect();
    let moved = cross_validate_folds(&shuffled, None, 1.0, gamma, labels, &opts).unwrap();
    assert_eq!(base.table.len(), moved.table.len());
    for (a, b) in base.table.iter().zip(&moved.table) {
        assert!((a.lambda - b.lambda).abs() <= 1e-12 * a.lambda);
        assert!((a.mean_loss - b.mean_loss).abs() <= 1e-9, "{a:?} vs {b:?}");
    }
    assert!((base.table[0].mean_loss - moved.table[0].mean_loss).abs() <= 1e-12);

    // reseeding on permuted rows keeps λ_max
    let reseeded = solver::cross_validate_with(&shuffled, None, 1.0, gamma, &opts).unwrap();
    assert!((reseeded.table[0].lambda - base.table[0].lambda).abs() <= 1e-12 * base.table[0].lambda);
}

#[test]
fn cv_rejects_bad_fold_counts() {
    let d = random_instance(1, 10, 3);
    assert!(cross_validate(&d, 1.0, 1.0, 1, 0).is_err());
    assert!(cross_validate(&d, 1.0, 1.0, 11, 0).is_err());
}

#[test]
fn large_gamma_matches_least_squares() {
    let gamma = 1e6;
    for (seed, alpha) in [(21u64, 1.0), (22, 0.5), (23, 0.0)] {
        let d = random_instance(seed, 40, 5);
        let lambda_ls = 0.05;
        let res = fit(
            &d,
            &SolverConfig {
                tol: 1e-12,
                max_iter: 200_000,
                ..SolverConfig::new(gamma, alpha, lambda_ls / gamma)
            },
            None,
        )
        .unwrap();
        let ls = least_squares_oracle(d.x(), d.y(), alpha, lambda_ls);
        let theirs: Vec<f64> = std::iter::once(ls.intercept).chain(ls.slopes).collect();
        let diff = max_abs_diff(&res.coef.to_full(), &theirs);
        assert!(diff < 1e-4, "alpha {alpha}: diff {diff}");
    }
}

#[test]
fn bounded_influence_of_one_outlier() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let (n, p) = (50, 3);
    let x = Array2::from_shape_fn((n, p), |_| rng.random::<f64>() * 2.0 - 1.0);
    let y: Array1<f64> = (0..n)
        .map(|i| x[[i, 0]] - x[[i, 2]] + 0.1 * (rng.random::<f64>() - 0.5))
        .collect();
    let clean = Dataset::new(y.clone(), x.clone(), "clean").unwrap();
    let mut y_bad = y;
    y_bad[7] += 1000.0;
    let dirty = Dataset::new(y_bad, x, "dirty").unwrap();

    let cfg = SolverConfig {
        tol: 1e-10,
        max_iter: 100_000,
        ..SolverConfig::new(1.0, 1.0, 0.0)
    };
    let h_clean = fit(&clean, &cfg, None).unwrap().coef.slopes;
    let h_dirty = fit(&dirty, &cfg, None).unwrap().coef.slopes;
    let huber_shift = (&h_clean - &h_dirty).mapv(|v| v * v).sum().sqrt();

    // least squares via the huge-γ limit
    let ls_cfg = SolverConfig {
        tol: 1e-12,
        max_iter: 100_000,
        ..SolverConfig::new(1e7, 1.0, 0.0)
    };
    let l_clean = fit(&clean, &ls_cfg, None).unwrap().coef.slopes;
    let l_dirty = fit(&dirty, &ls_cfg, None).unwrap().coef.slopes;
    let ls_shift = (&l_clean - &l_dirty).mapv(|v| v * v).sum().sqrt();
    assert!(huber_shift < ls_shift, "{huber_shift} vs {ls_shift}");
}

#[test]
fn standardized_fit_maps_back_to_raw_predictions() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let (n, p) = (60, 3);
    let x = Array2::from_shape_fn((n, p), |(_, j)| {
        10.0 * (j + 1) as f64 + (j + 1) as f64 * 3.0 * rng.random::<f64>()
    });
    let y: Array1<f64> = (0..n)
        .map(|i| 2.0 + 0.3 * x[[i, 0]] - 0.1 * x[[i, 2]] + rng.random::<f64>() - 0.5)
        .collect();
    let raw = Dataset::new(y, x, "raw").unwrap();
    let (std_d, stats) = standardize(&raw).unwrap();
    let cfg = SolverConfig {
        tol: 1e-13,
        max_iter: 1_000_000,
        ..SolverConfig::new(0.3, 1.0, 0.0)
    };
    let on_std = fit(&std_d, &cfg, None).unwrap();
    let back = stats.coef_to_original(&on_std.coef).unwrap();
    let on_raw = fit(&raw, &cfg, Some(&back)).unwrap();
    let a = raw.predict(&back).unwrap();
    let b = raw.predict(&on_raw.coef).unwrap();
    let worst = (&a - &b).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-10, "{worst}");
    // and a cold raw fit lands on the same predictions
    let cold = fit(&raw, &cfg, None).unwrap();
    let c = raw.predict(&cold.coef).unwrap();
    let worst = (&a - &c).iter().fold(0.0f64, |m, v| m.max(v.abs()));
    assert!(worst < 1e-8, "{worst}");
}

#[test]
fn kkt_and_monotone_trace_battery() {
    for seed in 0..30u64 {
        let n = [20, 35, 60][seed as usize % 3];
        let p = [3, 8, 25][(seed / 3) as usize % 3];
        let d = random_instance(100 + seed, n, p);
        let alpha = [1.0, 0.5, 0.0][seed as usize % 3];
        let gamma = default_gamma(d.y(), None).unwrap() * [0.3, 1.0][seed as usize % 2];
        let path = lambda_path(&d, alpha, gamma, 10, 0.01).unwrap();
        let cfg = SolverConfig::new(gamma, alpha, path[(seed as usize) % 10]);
        let (res, trace) = fit_traced(&d, None, &cfg, None).unwrap();
        assert!(res.converged, "seed {seed}");
        assert!(res.kkt_residual <= 100.0 * cfg.tol, "seed {seed}: {}", res.kkt_residual);
        for w in trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-13 * w[0].abs().max(1.0));
        }
    }
}

proptest! {
    #[test]
    fn huber_loss_convex(t1 in -10.0f64..10.0, t2 in -10.0f64..10.0, th in 0.0f64..1.0, g in 0.05f64..5.0) {
        let lhs = huber_loss(th * t1 + (1.0 - th) * t2, g).unwrap();
        let rhs = th * huber_loss(t1, g).unwrap() + (1.0 - th) * huber_loss(t2, g).unwrap();
        prop_assert!(lhs <= rhs + 1e-12);
        prop_assert!(huber_loss(t1, g).unwrap() >= 0.0);
    }

    #[test]
    fn huber_derivative_matches_finite_differences(t in -10.0f64..10.0, g in 0.05f64..5.0) {
        prop_assume!((t.abs() - g).abs() > 1e-6);
        let h = 1e-6;
        let fd = (huber_loss(t + h, g).unwrap() - huber_loss(t - h, g).unwrap()) / (2.0 * h);
        prop_assert!((fd - huber_psi(t, g)).abs() < 1e-6);
    }

    #[test]
    fn l1_distance_is_a_metric(
        a in proptest::collection::vec(-5.0f64..5.0, 6),
        b in proptest::collection::vec(-5.0f64..5.0, 6),
        c in proptest::collection::vec(-5.0f64..5.0, 6),
    ) {
        use robust_transfer::l1_distance;
        let (a, b, c) = (
            CoefVector::from_full(&a).unwrap(),
            CoefVector::from_full(&b).unwrap(),
            CoefVector::from_full(&c).unwrap(),
        );
        let ab = l1_distance(&a, &b).unwrap();
        prop_assert_eq!(ab, l1_distance(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!(ab <= l1_distance(&a, &c).unwrap() + l1_distance(&c, &b).unwrap() + 1e-12);
        prop_assert_eq!(l1_distance(&a, &a).unwrap(), 0.0);
        prop_assert_eq!(ab == 0.0, a == b);
    }

    #[test]
    fn standardize_is_idempotent(seed in 0u64..1000, n in 3usize..40, p in 1usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = Array2::from_shape_fn((n, p), |(i, j)| (i * (j + 2)) as f64 + 5.0 * rng.random::<f64>());
        let d = Dataset::new(Array1::zeros(n), x, "p").unwrap();
        let (once, _) = standardize(&d).unwrap();
        let (twice, stats) = standardize(&once).unwrap();
        for (u, v) in once.x().iter().zip(twice.x().iter()) {
            prop_assert!((u - v).abs() < 1e-12);
        }
        for j in 0..p {
            prop_assert!(stats.means[j].abs() < 1e-12);
            prop_assert!((stats.scales[j] - 1.0).abs() < 1e-12);
        }
    }
}
