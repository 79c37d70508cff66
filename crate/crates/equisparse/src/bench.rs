//! Replicated benchmarks over the simulation scenarios.
//!
//! Each replication draws a fresh ground truth plus independent train,
//! validation, and test sets.  Every method is tuned on the validation
//! set (strict improvement, so ties keep the heavier penalty) and scored
//! on the test set: prediction error (mean squared error or mean
//! cross-entropy) and the adjusted Rand index of the recovered feature
//! partition against the true one.

use std::collections::HashMap;
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::baselines::{
    expansion_matrix, lasso_problem, oracle_aggregated_ls, rare_problem, ridge_fit, GroupMap,
};
use crate::error::Result;
use crate::linalg::quantile;
use crate::penalty::{PenaltySpec, DEFAULT_MERGE_TOL};
use crate::select::{
    adjusted_rand_index, extract_partition, partition_by_value, prediction_criterion, score_path,
};
use crate::simulate::{derive_seed, GroundTruth, Scenario, SimConfig};
use crate::solver::{log_grid, path_over_problem, tree_problem, Dataset, FitOptions, GridOptions, LossKind};

/// Estimators the harness knows how to tune and score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// Tree-guided aggregation penalty on the original features.
    Tree,
    /// Weighted l1 on the tree-expansion coefficients.
    Rare,
    /// Plain lasso on the original features.
    Lasso,
    /// Ridge on the original features.
    Ridge,
    /// Least squares on the true groups (knows the true partition).
    OracleLs,
    /// Ridge on the true groups, tuned like the other methods.
    OracleRidge,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Tree => "tree",
            Method::Rare => "rare",
            Method::Lasso => "lasso",
            Method::Ridge => "ridge",
            Method::OracleLs => "oracle-ls",
            Method::OracleRidge => "oracle-ridge",
        }
    }
}

/// The method roster each scenario is benchmarked with.
pub fn methods_for(scenario: Scenario) -> Vec<Method> {
    match scenario {
        Scenario::Exp1 => vec![
            Method::Tree,
            Method::Rare,
            Method::OracleLs,
            Method::OracleRidge,
        ],
        Scenario::Exp2 => vec![Method::Tree, Method::Rare],
        Scenario::S1 | Scenario::S2 | Scenario::S3 => vec![
            Method::Tree,
            Method::Rare,
            Method::Lasso,
            Method::Ridge,
        ],
    }
}

/// Harness controls; the records are a pure function of these plus the
/// scenario configuration.
#[derive(Debug, Clone)]
pub struct BenchOptions {
    pub reps: usize,
    /// Master seed; per-replication seeds are derived from it.
    pub seed: u64,
    /// Penalty grid shared by the path-based methods (tree, rare, lasso).
    pub grid: GridOptions,
    pub fit: FitOptions,
    /// Absolute ridge grid, tried in descending order.
    pub ridge_grid: Vec<f64>,
    /// Test-set size (train and validation reuse the scenario's `n`).
    pub test_n: usize,
    /// Method roster override (`None` = the scenario's default roster).
    pub methods: Option<Vec<Method>>,
}

impl Default for BenchOptions {
    fn default() -> Self {
        BenchOptions {
            reps: 50,
            seed: 0,
            grid: GridOptions::default(),
            fit: FitOptions::default(),
            ridge_grid: log_grid(1e2, 1e-8, 50).expect("static grid parameters"),
            test_n: 500,
            methods: None,
        }
    }
}

/// One replication x method outcome.
#[derive(Debug, Clone, Serialize)]
pub struct BenchRecord {
    pub method: String,
    pub rep: usize,
    pub test_error: f64,
    pub ari: f64,
    pub selected_lambda: f64,
}

/// Per-method medians and quartiles over the replications.
#[derive(Debug, Clone, Serialize)]
pub struct SummaryRow {
    pub method: String,
    pub reps: usize,
    pub test_error_median: f64,
    pub test_error_q1: f64,
    pub test_error_q3: f64,
    pub ari_median: f64,
    pub ari_q1: f64,
    pub ari_q3: f64,
}

struct RepData {
    truth: GroundTruth,
    train: Dataset,
    valid: Dataset,
    test: Dataset,
    kind: LossKind,
}

fn draw_rep(config: &SimConfig, opts: &BenchOptions, rep: usize) -> Result<RepData> {
    let rep_cfg = SimConfig {
        seed: derive_seed(opts.seed, 1_000_000 + rep as u64),
        ..config.clone()
    };
    let truth = rep_cfg.ground_truth()?;
    let r = rep as u64;
    let (xtr, ytr, _) = rep_cfg.draw(&truth, derive_seed(opts.seed, 3 * r + 1))?;
    let (xva, yva, _) = rep_cfg.draw(&truth, derive_seed(opts.seed, 3 * r + 2))?;
    let test_cfg = SimConfig {
        n: opts.test_n,
        ..rep_cfg.clone()
    };
    let (xte, yte, _) = test_cfg.draw(&truth, derive_seed(opts.seed, 3 * r + 3))?;
    Ok(RepData {
        truth,
        train: Dataset::new(xtr, ytr)?,
        valid: Dataset::new(xva, yva)?,
        test: Dataset::new(xte, yte)?,
        kind: rep_cfg.loss_kind(),
    })
}

/// Tunes a path-based problem on the validation set and scores the winner
/// on the test set.  Returns (test_error, selected beta, selected lambda).
fn tune_and_score(
    path: &crate::solver::SolutionPath,
    data: &RepData,
) -> (f64, Vec<f64>, f64) {
    let (_, best) = score_path(path, data.kind, &data.valid.x, &data.valid.y, None);
    let beta = path.betas[best].clone();
    let err = prediction_criterion(data.kind, &data.test.x, &data.test.y, None, &beta);
    (err, beta, path.lambdas[best])
}

fn eval_method(method: Method, data: &RepData, opts: &BenchOptions) -> Result<(f64, f64, f64)> {
    let truth_partition = data.truth.partition_star();
    match method {
        Method::Tree => {
            let spec = PenaltySpec::with_default_weights(data.truth.tree.clone());
            let problem = tree_problem(&data.train, &spec, data.kind)?;
            let path = path_over_problem(&problem, &opts.grid, &opts.fit)?;
            let (err, beta, lambda) = tune_and_score(&path, data);
            let part = extract_partition(&beta, &data.truth.tree, DEFAULT_MERGE_TOL)?.partition;
            Ok((err, adjusted_rand_index(&part, truth_partition)?, lambda))
        }
        Method::Rare => {
            let expansion = expansion_matrix(&data.truth.tree);
            let problem = rare_problem(&data.train, &expansion, data.kind, None)?;
            let path = path_over_problem(&problem, &opts.grid, &opts.fit)?;
            let (err, beta, lambda) = tune_and_score(&path, data);
            let part = partition_by_value(&beta, DEFAULT_MERGE_TOL);
            Ok((err, adjusted_rand_index(&part, truth_partition)?, lambda))
        }
        Method::Lasso => {
            let problem = lasso_problem(&data.train, data.kind)?;
            let path = path_over_problem(&problem, &opts.grid, &opts.fit)?;
            let (err, beta, lambda) = tune_and_score(&path, data);
            let part = partition_by_value(&beta, DEFAULT_MERGE_TOL);
            Ok((err, adjusted_rand_index(&part, truth_partition)?, lambda))
        }
        Method::Ridge => {
            let mut best: Option<(f64, f64, Vec<f64>)> = None;
            for &lam in descending(&opts.ridge_grid).iter() {
                let fit = ridge_fit(&data.train, lam, data.kind)?;
                let crit =
                    prediction_criterion(data.kind, &data.valid.x, &data.valid.y, None, &fit.beta);
                if best.as_ref().is_none_or(|(c, _, _)| crit < *c) {
                    best = Some((crit, lam, fit.beta));
                }
            }
            let (_, lambda, beta) = best.expect("nonempty ridge grid");
            let err = prediction_criterion(data.kind, &data.test.x, &data.test.y, None, &beta);
            let part = partition_by_value(&beta, DEFAULT_MERGE_TOL);
            Ok((err, adjusted_rand_index(&part, truth_partition)?, lambda))
        }
        Method::OracleLs => {
            let map = GroupMap::from_partition(truth_partition);
            let fit = oracle_aggregated_ls(&data.train, &map, None)?;
            let err = prediction_criterion(data.kind, &data.test.x, &data.test.y, None, &fit.beta);
            let part = partition_by_value(&fit.beta, DEFAULT_MERGE_TOL);
            Ok((err, adjusted_rand_index(&part, truth_partition)?, 0.0))
        }
        Method::OracleRidge => {
            let map = GroupMap::from_partition(truth_partition);
            let mut best: Option<(f64, f64, Vec<f64>)> = None;
            for &lam in descending(&opts.ridge_grid).iter() {
                let fit = oracle_aggregated_ls(&data.train, &map, Some(lam))?;
                let crit =
                    prediction_criterion(data.kind, &data.valid.x, &data.valid.y, None, &fit.beta);
                if best.as_ref().is_none_or(|(c, _, _)| crit < *c) {
                    best = Some((crit, lam, fit.beta));
                }
            }
            let (_, lambda, beta) = best.expect("nonempty ridge grid");
            let err = prediction_criterion(data.kind, &data.test.x, &data.test.y, None, &beta);
            let part = partition_by_value(&beta, DEFAULT_MERGE_TOL);
            Ok((err, adjusted_rand_index(&part, truth_partition)?, lambda))
        }
    }
}

fn descending(grid: &[f64]) -> Vec<f64> {
    let mut g = grid.to_vec();
    g.sort_by(|a, b| b.total_cmp(a));
    g
}

/// Runs one scenario configuration.  Replications are independent and may
/// run in parallel; the record order and contents are deterministic given
/// the configuration and options.
pub fn run_scenario(config: &SimConfig, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    config.validate()?;
    let methods = opts
        .methods
        .clone()
        .unwrap_or_else(|| methods_for(config.scenario));
    let per_rep: Result<Vec<Vec<BenchRecord>>> = (0..opts.reps)
        .into_par_iter()
        .map(|rep| {
            let data = draw_rep(config, opts, rep)?;
            let mut out = Vec::with_capacity(methods.len());
            for &m in &methods {
                let (test_error, ari, selected_lambda) = eval_method(m, &data, opts)?;
                out.push(BenchRecord {
                    method: m.name().to_string(),
                    rep,
                    test_error,
                    ari,
                    selected_lambda,
                });
            }
            Ok(out)
        })
        .collect();
    Ok(per_rep?.into_iter().flatten().collect())
}

/// Full benchmark entry point.  The first experiment sweeps all six tree
/// variants, tagging each method as `name:t<variant>`; every other
/// scenario runs as configured.
pub fn run_bench(config: &SimConfig, opts: &BenchOptions) -> Result<Vec<BenchRecord>> {
    if config.scenario == Scenario::Exp1 {
        let mut all = Vec::new();
        for variant in 0..=5usize {
            let cfg = SimConfig {
                tree_variant: variant,
                ..config.clone()
            };
            let mut records = run_scenario(&cfg, opts)?;
            for r in &mut records {
                r.method = format!("{}:t{variant}", r.method);
            }
            all.extend(records);
        }
        Ok(all)
    } else {
        run_scenario(config, opts)
    }
}

/// Groups records by method (order of first appearance) and reduces each
/// group to medians and quartiles.
pub fn summarize(records: &[BenchRecord]) -> Vec<SummaryRow> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, (Vec<f64>, Vec<f64>)> = HashMap::new();
    for r in records {
        if !groups.contains_key(&r.method) {
            order.push(r.method.clone());
        }
        let entry = groups.entry(r.method.clone()).or_default();
        entry.0.push(r.test_error);
        entry.1.push(r.ari);
    }
    order
        .into_iter()
        .map(|method| {
            let (errs, aris) = &groups[&method];
            SummaryRow {
                reps: errs.len(),
                test_error_median: quantile(errs, 0.5),
                test_error_q1: quantile(errs, 0.25),
                test_error_q3: quantile(errs, 0.75),
                ari_median: quantile(aris, 0.5),
                ari_q1: quantile(aris, 0.25),
                ari_q3: quantile(aris, 0.75),
                method,
            }
        })
        .collect()
}

/// Writes per-replication records as CSV (header from the field names).
pub fn write_records_csv(path: &Path, records: &[BenchRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// Writes the per-method summary as CSV.
pub fn write_summary_csv(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
