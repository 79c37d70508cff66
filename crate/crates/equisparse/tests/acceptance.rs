//! Acceptance suite: nine numbered end-to-end criteria, each with pinned
//! seeds, pinned tolerances, and a runtime budget.  Every test prints one
//! `PASS criterion N: ...` line with the measured quantities, so a full run
//! doubles as a succinct report card.
//!
//! Expected values are never taken from the library itself: each criterion
//! checks the implementation against an independent reference written from
//! first principles in `tests/common` (proximal splitting, plain proximal
//! gradient, dense eigendecompositions, finite differences), against exact
//! structural invariants (sum preservation, limiting fits), or against
//! qualitative orderings that must hold for the statistical experiments.

mod common;

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_distr::StandardNormal;

use equisparse::bench::{run_scenario, BenchOptions, Method};
use equisparse::inference::{infer_pipeline, wald_contrasts, SelectionRule};
use equisparse::linalg::quantile;
use equisparse::penalty::{PenaltySpec, DEFAULT_MERGE_TOL};
use equisparse::select::{adjusted_rand_index, extract_partition, score_path};
use equisparse::simulate::{derive_seed, gen_design, ground_truth_exp1, Scenario, SimConfig};
use equisparse::solver::{
    fista_fit, lambda_max_for, loss_and_grad, solution_path, tree_problem, Dataset, FitOptions,
    GridOptions, LossKind,
};
use equisparse::tree::Tree;

/// Tight solver settings used whenever a fit is compared against an
/// oracle at 1e-6: the stopping rule needs to be far below the
/// comparison tolerance for the comparison to measure the algorithm
/// rather than the stopping rule.
fn tight_fit() -> FitOptions {
    FitOptions {
        max_iter: 200_000,
        tol: 1e-14,
        ..FitOptions::default()
    }
}

fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

// ---------------------------------------------------------------------------
// Criterion 1: the one-pass prox matches a proximal-splitting solver.
// ---------------------------------------------------------------------------

#[test]
fn criterion_1_prox_matches_splitting_oracle() {
    let start = Instant::now();
    let mut rng = common::rng(0xACC1);
    let trees = 200;
    let mut worst = 0.0_f64;
    for case in 0..trees {
        let tree = common::random_tree(&mut rng, 12, 4);
        let p = tree.p();
        let spec = PenaltySpec::with_default_weights(tree);
        let blocks = common::penalty_blocks(&spec);
        // Vary the data scale over two decades so absolute agreement is
        // checked away from unit scale as well.
        let scale = 10f64.powf(rng.random_range(-1.0..1.0));
        let eta: Vec<f64> = (0..p)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect();
        let lambda = rng.random_range(0.01..2.0) * scale;
        let ours = spec.prox(lambda, &eta).expect("prox on valid input");
        let oracle = common::splitting_prox_oracle(p, &blocks, lambda, &eta);
        let err = ours
            .iter()
            .zip(&oracle)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(
            err <= 1e-6,
            "case {case}: prox disagrees with splitting solver by {err:.3e} (p = {p}, lambda = {lambda:.4})"
        );
        worst = worst.max(err);
    }
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 1 took {secs:.1}s (budget 60s)");
    println!(
        "PASS criterion 1: prox matches splitting solver on {trees} random trees, \
         worst linf error {worst:.2e} <= 1e-6 ({secs:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 2: the prox preserves the coefficient sum.
// ---------------------------------------------------------------------------

#[test]
fn criterion_2_prox_preserves_sums() {
    let start = Instant::now();
    let mut rng = common::rng(0xACC2);
    let mut calls = 0usize;
    let mut worst = 0.0_f64;

    let check = |spec: &PenaltySpec, rng: &mut rand_chacha::ChaCha8Rng| {
        let p = spec.tree().p();
        let eta: Vec<f64> = (0..p).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let lambda = 10f64.powf(rng.random_range(-3.0..1.0));
        let out = spec.prox(lambda, &eta).expect("prox on valid input");
        let sum_in = common::kahan_sum(eta.iter().copied());
        let sum_out = common::kahan_sum(out.iter().copied());
        let drift = (sum_out - sum_in).abs();
        let allowed = 1e-12 * (1.0 + sum_in.abs());
        assert!(
            drift <= allowed,
            "sum drift {drift:.3e} exceeds {allowed:.3e} at p = {p}, lambda = {lambda:.4}"
        );
        (drift / allowed).max(0.0)
    };

    // The bulk: ten thousand calls on small random trees, fresh vector and
    // penalty level every call.
    for i in 0..10_000 {
        // Re-use each tree for a handful of calls so tree construction does
        // not dominate the runtime; the input vector changes every call.
        if i % 5 == 0 {
            let tree = common::random_tree(&mut rng, 64, 6);
            let spec = PenaltySpec::with_default_weights(tree);
            for _ in 0..5 {
                worst = worst.max(check(&spec, &mut rng));
                calls += 1;
            }
        }
    }
    // Large instances: trees over ten thousand features.
    for _ in 0..20 {
        let tree = common::random_tree_with_p(&mut rng, 10_000, 8);
        let spec = PenaltySpec::with_default_weights(tree);
        worst = worst.max(check(&spec, &mut rng));
        calls += 1;
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 60.0, "criterion 2 took {secs:.1}s (budget 60s)");
    println!(
        "PASS criterion 2: sum preserved on {calls} prox calls (incl. p = 10000), \
         worst drift {:.3} of the 1e-12*(1+|sum|) allowance ({secs:.1}s)",
        worst
    );
}

// ---------------------------------------------------------------------------
// Criterion 3: the accelerated solver reaches reference objectives, and the
// logistic gradient matches finite differences of an independent loss.
// ---------------------------------------------------------------------------

/// One random regression instance over a random tree.
fn random_instance(
    rng: &mut rand_chacha::ChaCha8Rng,
    kind: LossKind,
) -> (Dataset, PenaltySpec, f64) {
    loop {
        let tree = common::random_tree(rng, 14, 4);
        let p = tree.p();
        let n = p + rng.random_range(20..50);
        let mut x = Array2::<f64>::zeros((n, p));
        for v in x.iter_mut() {
            *v = rng.sample(StandardNormal);
        }
        // Piecewise-constant truth over the tree's root groups plus noise.
        let spec = PenaltySpec::with_default_weights(tree);
        let mut beta = vec![0.0f64; p];
        for &root in spec.tree().roots() {
            let value: f64 = rng.sample::<f64, _>(StandardNormal);
            for j in spec.tree().leaf_set(root) {
                beta[j] = value;
            }
        }
        let xb = x.dot(&Array1::from_vec(beta.clone()));
        let y: Array1<f64> = match kind {
            LossKind::Squared => {
                Array1::from_iter(xb.iter().map(|&m| m + 0.3 * rng.sample::<f64, _>(StandardNormal)))
            }
            LossKind::Logistic => Array1::from_iter(xb.iter().map(|&m| {
                let prob = 1.0 / (1.0 + (-m).exp());
                if rng.random::<f64>() < prob {
                    1.0
                } else {
                    0.0
                }
            })),
        };
        if kind == LossKind::Logistic {
            let ones = y.iter().filter(|&&v| v == 1.0).count();
            if ones < 10 || n - ones < 10 {
                continue; // keep both classes well represented
            }
        }
        let data = Dataset::new(x, y).expect("consistent dimensions");
        let lambda = 10f64.powf(rng.random_range(-2.0..-0.3));
        return (data, spec, lambda);
    }
}

#[test]
fn criterion_3_solver_reaches_reference_objectives() {
    let start = Instant::now();
    let mut rng = common::rng(0xACC3);
    let opts = tight_fit();
    let mut worst_gap = f64::NEG_INFINITY;
    for kind in [LossKind::Squared, LossKind::Logistic] {
        for case in 0..50 {
            let (data, spec, lambda) = random_instance(&mut rng, kind);
            let fit = fista_fit(&data, &spec, lambda, kind, &opts).expect("solver runs");
            // Both objectives are evaluated with the independent loss and
            // penalty definitions so the comparison shares no library code
            // with either solver's internals.
            let blocks = common::penalty_blocks(&spec);
            let ours = common::oracle_loss(kind, &data.x, &data.y, &fit.beta)
                + lambda * common::penalty_value(&blocks, &fit.beta);
            let reference =
                common::ista_oracle(kind, &data.x, &data.y, &spec, lambda, 30_000);
            let gap = ours - reference;
            assert!(
                gap <= 1e-6,
                "{kind:?} case {case}: objective {ours:.12} exceeds reference {reference:.12} by {gap:.3e}"
            );
            worst_gap = worst_gap.max(gap);
        }
    }

    // Logistic gradients against central finite differences of the
    // independent loss.
    let mut worst_fd = 0.0_f64;
    for _ in 0..10 {
        let (data, _, _) = random_instance(&mut rng, LossKind::Logistic);
        let p = data.x.ncols();
        let beta: Vec<f64> =
            (0..p).map(|_| 0.5 * rng.sample::<f64, _>(StandardNormal)).collect();
        let (_, grad) =
            loss_and_grad(LossKind::Logistic, &data.x, &data.y, &Array1::from_vec(beta.clone()))
                .expect("gradient evaluates");
        let mut fd = vec![0.0f64; p];
        for j in 0..p {
            let h = 1e-5 * (1.0 + beta[j].abs());
            let mut hi = beta.clone();
            hi[j] += h;
            let mut lo = beta.clone();
            lo[j] -= h;
            fd[j] = (common::oracle_loss(LossKind::Logistic, &data.x, &data.y, &hi)
                - common::oracle_loss(LossKind::Logistic, &data.x, &data.y, &lo))
                / (2.0 * h);
        }
        let scale = 1.0 + grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
        let err = grad
            .iter()
            .zip(&fd)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
            / scale;
        assert!(err <= 1e-5, "logistic gradient deviates from finite differences: rel {err:.3e}");
        worst_fd = worst_fd.max(err);
    }

    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 120.0, "criterion 3 took {secs:.1}s (budget 120s)");
    println!(
        "PASS criterion 3: solver objective within {worst_gap:.2e} of plain proximal-gradient \
         reference on 100 instances (tolerance 1e-6); logistic gradient matches finite \
         differences to rel {worst_fd:.2e} <= 1e-5 ({secs:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 4: guide-tree misspecification orderings in experiment 1.
// ---------------------------------------------------------------------------

#[test]
fn criterion_4_tree_variant_orderings() {
    let start = Instant::now();
    let reps = 50;
    let mut mse = BTreeMap::new();
    let mut ari = BTreeMap::new();
    for variant in [0usize, 3, 5] {
        let mut config = SimConfig::for_scenario(Scenario::Exp1, 2024);
        config.tree_variant = variant;
        let opts = BenchOptions {
            reps,
            seed: 2024,
            methods: Some(vec![Method::Tree]),
            ..BenchOptions::default()
        };
        let records = run_scenario(&config, &opts).expect("benchmark runs");
        assert_eq!(records.len(), reps);
        let errs: Vec<f64> = records.iter().map(|r| r.test_error).collect();
        let aris: Vec<f64> = records.iter().map(|r| r.ari).collect();
        mse.insert(variant, median(&errs));
        ari.insert(variant, median(&aris));
    }
    // Removing nodes above the true aggregating set leaves the truth
    // expressible (variant 5, no worse than the true tree); removing nodes
    // below it destroys needed splits (variant 3, strictly worse).
    assert!(
        mse[&5] <= mse[&0] && mse[&0] < mse[&3],
        "median test MSE ordering violated: t5 = {:.4}, t0 = {:.4}, t3 = {:.4}",
        mse[&5], mse[&0], mse[&3]
    );
    assert!(
        ari[&5] >= ari[&0] && ari[&0] > ari[&3],
        "median ARI ordering violated: t5 = {:.4}, t0 = {:.4}, t3 = {:.4}",
        ari[&5], ari[&0], ari[&3]
    );
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 900.0, "criterion 4 took {secs:.1}s (budget 900s)");
    println!(
        "PASS criterion 4: over {reps} reps, median MSE t5 {:.4} <= t0 {:.4} < t3 {:.4} and \
         median ARI t5 {:.3} >= t0 {:.3} > t3 {:.3} ({secs:.1}s)",
        mse[&5], mse[&0], mse[&3], ari[&5], ari[&0], ari[&3]
    );
}

// ---------------------------------------------------------------------------
// Criterion 5: tree-vs-RARE error ratio improves with dimension.
// ---------------------------------------------------------------------------

#[test]
fn criterion_5_error_ratio_improves_with_dimension() {
    let start = Instant::now();
    let reps = 50;
    let dims = [60usize, 200, 600];
    let mut ratios = Vec::new();
    for &p in &dims {
        let mut config = SimConfig::for_scenario(Scenario::Exp2, 7);
        config.p = p;
        let opts = BenchOptions {
            reps,
            seed: 7,
            methods: Some(vec![Method::Tree, Method::Rare]),
            // A looser stopping rule keeps the large-p paths affordable; the
            // comparison is between methods run under identical settings.
            fit: FitOptions {
                tol: 1e-7,
                ..FitOptions::default()
            },
            ..BenchOptions::default()
        };
        let records = run_scenario(&config, &opts).expect("benchmark runs");
        let mut tree_err = vec![f64::NAN; reps];
        let mut rare_err = vec![f64::NAN; reps];
        for r in &records {
            match r.method.as_str() {
                "tree" => tree_err[r.rep] = r.test_error,
                "rare" => rare_err[r.rep] = r.test_error,
                other => panic!("unexpected method {other}"),
            }
        }
        let per_rep: Vec<f64> = tree_err
            .iter()
            .zip(&rare_err)
            .map(|(t, r)| {
                assert!(t.is_finite() && r.is_finite() && *r > 0.0);
                t / r
            })
            .collect();
        ratios.push(per_rep.iter().sum::<f64>() / reps as f64);
    }
    assert!(
        ratios[0] >= ratios[1] && ratios[1] >= ratios[2],
        "mean error ratio not nonincreasing in p: {ratios:.4?}"
    );
    assert!(ratios[2] < 1.0, "mean error ratio at p = 600 is {:.4}, expected < 1", ratios[2]);
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 1800.0, "criterion 5 took {secs:.1}s (budget 1800s)");
    println!(
        "PASS criterion 5: mean tree/RARE error ratio nonincreasing over p = {dims:?}: \
         {:.4} >= {:.4} >= {:.4}, and < 1 at p = 600 ({secs:.1}s)",
        ratios[0], ratios[1], ratios[2]
    );
}

// ---------------------------------------------------------------------------
// Criterion 6: logistic scenario, tree method at least as good as RARE.
// ---------------------------------------------------------------------------

#[test]
fn criterion_6_logistic_scenario_tree_vs_rare() {
    let start = Instant::now();
    let reps = 20;
    let config = SimConfig::for_scenario(Scenario::S3, 11);
    assert_eq!(config.p, 400);
    assert_eq!(config.n, 50);
    let opts = BenchOptions {
        reps,
        seed: 11,
        methods: Some(vec![Method::Tree, Method::Rare]),
        ..BenchOptions::default()
    };
    let records = run_scenario(&config, &opts).expect("benchmark runs");
    let collect = |name: &str, f: &dyn Fn(&equisparse::bench::BenchRecord) -> f64| -> Vec<f64> {
        records.iter().filter(|r| r.method == name).map(f).collect()
    };
    let tree_ce = median(&collect("tree", &|r| r.test_error));
    let rare_ce = median(&collect("rare", &|r| r.test_error));
    let tree_ari = median(&collect("tree", &|r| r.ari));
    let rare_ari = median(&collect("rare", &|r| r.ari));
    assert!(
        tree_ce <= rare_ce,
        "median test cross-entropy: tree {tree_ce:.4} > rare {rare_ce:.4}"
    );
    assert!(tree_ari >= rare_ari, "median ARI: tree {tree_ari:.3} < rare {rare_ari:.3}");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 900.0, "criterion 6 took {secs:.1}s (budget 900s)");
    println!(
        "PASS criterion 6: logistic p = 400, {reps} reps: median cross-entropy tree {tree_ce:.4} \
         <= rare {rare_ce:.4}; median ARI tree {tree_ari:.3} >= rare {rare_ari:.3} ({secs:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 7: limiting fits and exact recovery on noiseless data.
// ---------------------------------------------------------------------------

/// Dense least squares via an independent singular-value decomposition.
fn svd_lstsq(x: &Array2<f64>, y: &Array1<f64>) -> Vec<f64> {
    let (n, p) = x.dim();
    let xm = nalgebra::DMatrix::from_fn(n, p, |i, j| x[[i, j]]);
    let yv = nalgebra::DVector::from_fn(n, |i, _| y[i]);
    let sol = xm
        .svd(true, true)
        .solve(&yv, 1e-12)
        .expect("least squares solvable");
    sol.iter().copied().collect()
}

#[test]
fn criterion_7_limits_and_noiseless_recovery() {
    let start = Instant::now();
    let mut rng = common::rng(0xACC7);

    // (a) lambda = 0 equals the unpenalized least-squares solution.
    let tree_a = common::random_tree_with_p(&mut rng, 12, 3);
    let spec_a = PenaltySpec::with_default_weights(tree_a);
    let n = 80;
    let mut x = Array2::<f64>::zeros((n, 12));
    for v in x.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let truth: Vec<f64> = (0..12).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let y = Array1::from_iter(
        x.dot(&Array1::from_vec(truth)).iter().map(|&m| m + 0.2 * rng.sample::<f64, _>(StandardNormal)),
    );
    let ls = svd_lstsq(&x, &y);
    let data_a = Dataset::new(x.clone(), y.clone()).unwrap();
    let fit0 = fista_fit(&data_a, &spec_a, 0.0, LossKind::Squared, &tight_fit()).unwrap();
    let err_zero = fit0
        .beta
        .iter()
        .zip(&ls)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(err_zero <= 1e-6, "lambda = 0 fit deviates from least squares by {err_zero:.3e}");

    // (b) lambda above the full-aggregation threshold equals the
    // root-aggregated least-squares fit, checked on a three-root forest.
    let mut edges: Vec<(String, Option<String>, Option<usize>)> = Vec::new();
    let root_cols: [&[usize]; 3] = [&[0, 1], &[2, 3, 4], &[5, 6, 7, 8]];
    for (g, cols) in root_cols.iter().enumerate() {
        edges.push((format!("r{g}"), None, None));
        for &c in cols.iter() {
            edges.push((format!("r{g}leaf{c}"), Some(format!("r{g}")), Some(c)));
        }
    }
    let tree_b = Tree::from_edges(&edges).unwrap();
    let spec_b = PenaltySpec::with_default_weights(tree_b);
    let p_b = 9;
    let n_b = 60;
    let mut xb = Array2::<f64>::zeros((n_b, p_b));
    for v in xb.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
    let yb = Array1::from_iter((0..n_b).map(|i| {
        xb.row(i).sum() * 0.5 + rng.sample::<f64, _>(StandardNormal)
    }));
    let data_b = Dataset::new(xb.clone(), yb.clone()).unwrap();
    let problem = tree_problem(&data_b, &spec_b, LossKind::Squared).unwrap();
    let lam_max = lambda_max_for(&problem).unwrap();
    let fit_hi = fista_fit(&data_b, &spec_b, 1.5 * lam_max, LossKind::Squared, &tight_fit()).unwrap();
    // Independent aggregated fit: least squares on per-root column sums,
    // expanded back to features.
    let mut xagg = Array2::<f64>::zeros((n_b, 3));
    for (g, cols) in root_cols.iter().enumerate() {
        for &c in cols.iter() {
            for i in 0..n_b {
                xagg[[i, g]] += xb[[i, c]];
            }
        }
    }
    let gamma = svd_lstsq(&xagg, &yb);
    let mut expanded = vec![0.0f64; p_b];
    for (g, cols) in root_cols.iter().enumerate() {
        for &c in cols.iter() {
            expanded[c] = gamma[g];
        }
    }
    let err_agg = fit_hi
        .beta
        .iter()
        .zip(&expanded)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f64, f64::max);
    assert!(
        err_agg <= 1e-6,
        "fit at 1.5 x lambda_max deviates from aggregated least squares by {err_agg:.3e}"
    );

    // (c) noiseless realizable data with the correct tree: the partition
    // extracted at the validation-tuned penalty equals the truth.  The
    // design is overdetermined (n > p) so the noiseless problem has a
    // unique unpenalized solution for the path to approach.
    let reps = 50;
    let mut exact = 0usize;
    for rep in 0..reps {
        let seed = derive_seed(0xACC7, 100 + rep as u64);
        let truth = ground_truth_exp1(0, seed).expect("fixed tree truth");
        let p = truth.beta_star.len();
        let beta_star = Array1::from_vec(truth.beta_star.clone());
        let x_tr = gen_design(120, p, 0.5, derive_seed(seed, 1)).unwrap();
        let x_va = gen_design(120, p, 0.5, derive_seed(seed, 2)).unwrap();
        let y_tr = x_tr.dot(&beta_star);
        let y_va = x_va.dot(&beta_star);
        let spec = PenaltySpec::with_default_weights(truth.tree.clone());
        let data = Dataset::new(x_tr, y_tr).unwrap();
        let path = solution_path(
            &data,
            &spec,
            LossKind::Squared,
            &GridOptions::default(),
            &FitOptions::default(),
        )
        .unwrap();
        let (_, best) = score_path(&path, LossKind::Squared, &x_va, &y_va, None);
        let part = extract_partition(&path.betas[best], spec.tree(), DEFAULT_MERGE_TOL)
            .unwrap()
            .partition;
        let ari = adjusted_rand_index(&part, truth.partition_star()).unwrap();
        if ari >= 1.0 - 1e-12 {
            exact += 1;
        }
    }
    assert!(
        exact >= 45,
        "exact recovery on noiseless data in only {exact}/{reps} replications (need >= 45)"
    );

    let secs = start.elapsed().as_secs_f64();
    println!(
        "PASS criterion 7: lambda = 0 matches least squares to {err_zero:.2e}; \
         lambda > threshold matches aggregated least squares to {err_agg:.2e}; \
         noiseless recovery exact in {exact}/{reps} reps ({secs:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 8: inference pipeline calibration under the global null.
// ---------------------------------------------------------------------------

#[test]
fn criterion_8_inference_null_calibration() {
    let start = Instant::now();
    // Twelve groups of three features each; the fully aggregated selection
    // yields twelve coefficients and eleven contrasts against group 0.
    let mut edges: Vec<(String, Option<String>, Option<usize>)> = Vec::new();
    for g in 0..12 {
        edges.push((format!("r{g}"), None, None));
        for j in 0..3 {
            edges.push((format!("r{g}c{j}"), Some(format!("r{g}")), Some(3 * g + j)));
        }
    }
    let tree = Tree::from_edges(&edges).unwrap();
    let spec = PenaltySpec::with_default_weights(tree);

    let n = 400;
    let reps = 1000;
    let delta = 0.9;
    let grid = GridOptions::default();
    let opts = FitOptions::default();
    let mut rejections = 0usize;
    let mut tests_total = 0usize;
    let mut false_discovery_reps = 0usize;
    for rep in 0..reps {
        let seed = derive_seed(0xACC8, rep as u64);
        let x = gen_design(n, 36, 1.0, derive_seed(seed, 1)).unwrap();
        // Null response: independent fair coin flips, no feature effects.
        let mut coin = common::rng(derive_seed(seed, 2));
        let y = Array1::from_iter((0..n).map(|_| if coin.random::<bool>() { 1.0 } else { 0.0 }));
        let report = infer_pipeline(
            &x,
            &y,
            &spec,
            delta,
            derive_seed(seed, 3),
            &SelectionRule::LambdaMax,
            &grid,
            &opts,
        )
        .expect("inference pipeline runs");
        assert_eq!(report.partition.n_groups(), 12);
        assert!(report.glm.converged, "GLM did not converge in rep {rep}");

        // Size of nominal-5% Wald tests on the selected aggregated effects.
        let basis: Vec<(String, Vec<f64>)> = (0..12)
            .map(|j| {
                let mut c = vec![0.0; 12];
                c[j] = 1.0;
                (format!("b{j}"), c)
            })
            .collect();
        for t in wald_contrasts(&report.glm, &basis).unwrap() {
            assert!(!t.zero_variance);
            tests_total += 1;
            if t.p < 0.05 {
                rejections += 1;
            }
        }

        // Benjamini-Hochberg over the eleven null contrasts: any rejection
        // is a false discovery, so the false-discovery proportion is the
        // indicator of at least one adjusted p-value at or below 0.05.
        assert_eq!(report.p_bh.len(), 11);
        if report.p_bh.iter().any(|&q| q <= 0.05) {
            false_discovery_reps += 1;
        }
    }
    let size = rejections as f64 / tests_total as f64;
    let fdr = false_discovery_reps as f64 / reps as f64;
    assert!(
        (0.03..=0.07).contains(&size),
        "empirical size {size:.4} outside [0.03, 0.07] ({rejections}/{tests_total})"
    );
    assert!(fdr <= 0.07, "BH false-discovery rate {fdr:.4} exceeds 0.05 + 0.02 slack");
    let secs = start.elapsed().as_secs_f64();
    assert!(secs < 600.0, "criterion 8 took {secs:.1}s (budget 600s)");
    println!(
        "PASS criterion 8: null calibration over {reps} reps: empirical 5% test size \
         {size:.4} in [0.03, 0.07] ({tests_total} tests); BH FDR {fdr:.4} <= 0.07 on 11 \
         null contrasts ({secs:.1}s)"
    );
}

// ---------------------------------------------------------------------------
// Criterion 9: every CLI command is byte-reproducible with a fixed seed.
// ---------------------------------------------------------------------------

fn run_cli(cwd: &Path, args: &[&str]) {
    let out = std::process::Command::new(env!("CARGO_BIN_EXE_equisparse"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary launches");
    assert!(
        out.status.success(),
        "command {:?} failed: {}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
}

/// Collects every file under `dir`, keyed by path relative to it.
fn collect_files(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(base: &Path, cur: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(cur).expect("readable directory") {
            let path = entry.expect("dir entry").path();
            if path.is_dir() {
                walk(base, &path, out);
            } else {
                let rel = path.strip_prefix(base).unwrap().to_path_buf();
                out.insert(rel, std::fs::read(&path).expect("readable file"));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Drops the wall-clock line from a run manifest so timing is the only
/// tolerated difference between two otherwise identical runs.
fn strip_wall_clock(bytes: &[u8]) -> Vec<u8> {
    let text = String::from_utf8(bytes.to_vec()).expect("manifest is UTF-8");
    text.lines()
        .filter(|l| !l.contains("\"wall_clock_ms\""))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

#[test]
fn criterion_9_cli_runs_are_reproducible() {
    let start = Instant::now();
    let scratch = tempfile::tempdir().expect("scratch dir");

    let command_sets: Vec<Vec<&str>> = vec![
        vec![
            "--threads", "1", "simulate", "--scenario", "s3", "--seed", "5", "--n", "200",
            "--p", "24", "--k", "6", "--out", "sim",
        ],
        vec![
            "--threads", "1", "fit", "--x", "sim/x.csv", "--y", "sim/y.csv", "--tree",
            "sim/tree.tsv", "--loss", "logistic", "--lambda", "0.05", "--out", "fit",
        ],
        vec![
            "--threads", "1", "path", "--x", "sim/x.csv", "--y", "sim/y.csv", "--tree",
            "sim/tree.tsv", "--loss", "logistic", "--n-lambda", "10", "--out", "pth",
        ],
        vec![
            "--threads", "1", "cv", "--x", "sim/x.csv", "--y", "sim/y.csv", "--tree",
            "sim/tree.tsv", "--loss", "logistic", "--folds", "3", "--seed", "2", "--n-lambda",
            "8", "--out", "cvd",
        ],
        vec![
            "--threads", "1", "prox", "--eta", "eta.csv", "--tree", "sim/tree.tsv",
            "--lambda", "0.4", "--out", "prx",
        ],
        vec![
            "--threads", "1", "bench", "--scenario", "s2", "--reps", "2", "--seed", "3",
            "--n", "30", "--p", "24", "--k", "6", "--n-lambda", "8", "--out", "bch",
        ],
        vec![
            "--threads", "1", "infer", "--x", "sim/x.csv", "--y", "sim/y.csv", "--tree",
            "sim/tree.tsv", "--delta", "0.9", "--seed", "4", "--at-max", "--out", "inf",
        ],
    ];

    let mut sides = Vec::new();
    for side in ["a", "b"] {
        let root = scratch.path().join(side);
        std::fs::create_dir(&root).unwrap();
        let eta: Vec<String> =
            (0..24).map(|i| format!("{}", ((i * 37) % 11) as f64 * 0.3 - 1.5)).collect();
        std::fs::write(root.join("eta.csv"), eta.join("\n") + "\n").unwrap();
        for args in &command_sets {
            run_cli(&root, args);
        }
        sides.push(collect_files(&root));
    }
    let (a, b) = (&sides[0], &sides[1]);
    assert_eq!(
        a.keys().collect::<Vec<_>>(),
        b.keys().collect::<Vec<_>>(),
        "the two runs produced different file sets"
    );
    let mut compared = 0usize;
    for (rel, bytes_a) in a {
        let bytes_b = &b[rel];
        if rel.file_name().is_some_and(|f| f == "manifest.json") {
            assert_eq!(
                strip_wall_clock(bytes_a),
                strip_wall_clock(bytes_b),
                "manifest differs beyond wall clock: {}",
                rel.display()
            );
        } else {
            assert_eq!(bytes_a, bytes_b, "output differs between runs: {}", rel.display());
        }
        compared += 1;
    }
    let secs = start.elapsed().as_secs_f64();
    println!(
        "PASS criterion 9: {} commands re-run byte-identically across {compared} output files \
         (manifests identical up to wall clock) ({secs:.1}s)",
        command_sets.len()
    );
}
