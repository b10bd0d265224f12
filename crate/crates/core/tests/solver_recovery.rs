mod common;

use common::*;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use pmn_sensing::measurement::block_coefficients;
use pmn_sensing::solver::{refit_support, solve_block_mmv, solve_block_mmv_with_gram, ColumnGram, DenseGram};
use pmn_sensing::{CMatrix, Complex64, SolverOptions, StoppingRule};

#[test]
fn single_path_matches_exhaustive_single_bin_search() {
    let spec = Spec::small(1);
    let scene = vec![pmn_sensing::MultipathComponent {
        source_id: 1,
        delay_bin: 3,
        doppler_hz: 0.0,
        aoa: 0.4,
        aod: 0.0,
        amplitude: Complex64::new(0.6, -0.3),
    }];
    let meas = observe(&spec, &scene, 5, None);
    let (w, y, bs) = (meas.sensing_matrix(0), &meas.blocks[0], meas.block_size());
    let sol = solve_block_mmv(&w, y, bs, &SolverOptions::default()).unwrap();
    assert_eq!(sol.bins(), vec![3]);
    assert_eq!(exhaustive_support(&w, y, bs, 1), vec![3]);
    let (rx, tx) = arrays(&spec);
    let truth = block_coefficients(&scene, spec.sources, &rx, &tx, &grid(&spec), 0, meas.ofdm.block_period_s(), 1.0).unwrap();
    let g_true = truth.rows(3 * bs, bs).into_owned();
    let err = (sol.block(3).unwrap() - &g_true).norm() / g_true.norm();
    assert!(err < 1e-8, "{err}");
}

#[test]
fn three_paths_match_exhaustive_oracle() {
    let mut r = rng(202);
    for trial in 0..20 {
        let spec = Spec::small(3);
        let scene = random_scene(&spec, &mut r);
        let meas = observe(&spec, &scene, trial, None);
        let (w, y, bs) = (meas.sensing_matrix(0), &meas.blocks[0], meas.block_size());
        let sol = solve_block_mmv(&w, y, bs, &SolverOptions::new(StoppingRule::FixedSparsity(3))).unwrap();
        let oracle = exhaustive_support(&w, y, bs, 3);
        assert_eq!(sol.bins(), oracle, "trial {trial}");
        assert_eq!(oracle, true_bins(&scene));
    }
}

#[test]
fn stopping_rules_on_noiseless_data() {
    let mut r = rng(203);
    let spec = Spec::small(3);
    let scene = random_scene(&spec, &mut r);
    let meas = observe(&spec, &scene, 1, None);
    let (w, y, bs) = (meas.sensing_matrix(0), &meas.blocks[0], meas.block_size());
    let fixed = solve_block_mmv(&w, y, bs, &SolverOptions::new(StoppingRule::FixedSparsity(3))).unwrap();
    assert_eq!(fixed.iterations, 3);
    let ratio = solve_block_mmv(&w, y, bs, &SolverOptions::new(StoppingRule::ResidualRatio(1e-6))).unwrap();
    assert!(ratio.residual_norm < 1e-6 * y.norm());
}

fn recovery_spec(paths: usize) -> Spec {
    Spec {
        num_subcarriers: 128,
        sources: 2,
        tx: 2,
        bins: 32,
        ..Spec::small(paths)
    }
}

#[test]
fn exact_recovery_and_least_squares_invariants() {
    let mut r = rng(204);
    for trial in 0..100 {
        // L ≤ N_s / (4·block_size) = 128 / 16
        let spec = recovery_spec(r.random_range(1..=8));
        let scene = random_scene(&spec, &mut r);
        let meas = observe(&spec, &scene, 1000 + trial, None);
        let (w, y, bs) = (meas.sensing_matrix(0), &meas.blocks[0], meas.block_size());
        let sol = solve_block_mmv(&w, y, bs, &SolverOptions::default()).unwrap();
        assert_eq!(sol.bins(), true_bins(&scene), "trial {trial}");

        for pair in sol.residual_history.windows(2) {
            assert!(pair[1] <= pair[0] * (1.0 + 1e-12), "trial {trial}: {:?}", sol.residual_history);
        }

        for k in 1..=sol.bins().len() {
            let partial = solve_block_mmv(&w, y, bs, &SolverOptions::new(StoppingRule::FixedSparsity(k))).unwrap();
            let fitted = partial.blocks.iter().fold(CMatrix::zeros(y.nrows(), y.ncols()), |acc, b| {
                acc + w.columns(b.bin * bs, bs) * &b.coefficients
            });
            let resid = y - fitted;
            for j in columns_of(&partial.bins(), bs) {
                let inner = w.column(j).adjoint() * &resid;
                let worst = inner.iter().map(|z| z.norm()).fold(0.0, f64::max);
                assert!(worst < 1e-8 * y.norm(), "trial {trial} k {k}");
            }
        }
    }
}

#[test]
fn row_permutation_leaves_solution_unchanged() {
    let mut r = rng(205);
    for trial in 0..20 {
        let spec = recovery_spec(r.random_range(1..=6));
        let scene = random_scene(&spec, &mut r);
        let meas = observe(&spec, &scene, 2000 + trial, Some(-80.0));
        let (w, y, bs) = (meas.sensing_matrix(0), &meas.blocks[0], meas.block_size());
        let opts = SolverOptions::new(StoppingRule::FixedSparsity(spec.paths));
        let base = solve_block_mmv(&w, y, bs, &opts).unwrap();

        let mut perm: Vec<usize> = (0..w.nrows()).collect();
        perm.shuffle(&mut r);
        let wp = w.select_rows(&perm);
        let yp = y.select_rows(&perm);
        let other = solve_block_mmv(&wp, &yp, bs, &opts).unwrap();
        assert_eq!(base.bins(), other.bins());
        for (a, b) in base.blocks.iter().zip(&other.blocks) {
            assert!(max_abs(&(&a.coefficients - &b.coefficients)) < 1e-10 * max_abs(&a.coefficients).max(1e-300));
        }
    }
}

#[test]
fn structured_gram_gives_same_solution() {
    let mut r = rng(206);
    let mut spec = recovery_spec(6);
    spec.oversampling = 2;
    spec.globally_distinct = false;
    let scene = random_scene(&spec, &mut r);
    let meas = observe(&spec, &scene, 3, Some(-60.0));
    let (w, y, bs) = (meas.sensing_matrix(0), &meas.blocks[0], meas.block_size());
    let gram = meas.gram(0);
    let dense = DenseGram(&w);
    assert!((gram.inner(5, 77) - dense.inner(5, 77)).norm() < 1e-10);
    let opts = SolverOptions::new(StoppingRule::FixedSparsity(10));
    let a = solve_block_mmv(&w, y, bs, &opts).unwrap();
    let b = solve_block_mmv_with_gram(&w, &gram, y, bs, &opts).unwrap();
    assert_eq!(a.bins(), b.bins());
    for (x, z) in a.blocks.iter().zip(&b.blocks) {
        assert!(max_abs(&(&x.coefficients - &z.coefficients)) < 1e-8 * max_abs(&x.coefficients));
    }
    let refit = refit_support(&w, y, bs, &a.bins()).unwrap();
    assert!((refit.residual_norm - a.residual_norm).abs() < 1e-10 * y.norm());
}

#[test]
fn plateau_terminates_on_pure_noise() {
    let mut spec = Spec::small(0);
    spec.num_subcarriers = 256;
    let expected_paths = 3;
    let opts = SolverOptions {
        stop: StoppingRule::Plateau(0.01),
        max_iterations: Some(2 * expected_paths),
    };
    let meas = observe(&spec, &[], 9, None);
    let (w, bs) = (meas.sensing_matrix(0), meas.block_size());
    let mut r = rng(207);
    let mut early = 0;
    for _ in 0..100 {
        let y = CMatrix::from_fn(w.nrows(), spec.rx, |_, _| {
            let re: f64 = StandardNormal.sample(&mut r);
            let im: f64 = StandardNormal.sample(&mut r);
            Complex64::new(re, im)
        });
        let sol = solve_block_mmv(&w, &y, bs, &opts).unwrap();
        assert!(sol.iterations <= 2 * expected_paths);
        assert!(sol.blocks.len() <= 2 * expected_paths);
        if sol.blocks.len() < 2 * expected_paths {
            early += 1;
        }
    }
    // one noise bin explains about block_size / N_s of the energy, well under 1%
    assert_eq!(early, 100);
}
