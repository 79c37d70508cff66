//! Partitions of the feature set, fitted-coefficient partition extraction,
//! agreement scoring, and penalty-level tuning.

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::penalty::PenaltySpec;
use crate::solver::{
    loss_value, path_over_problem, Dataset, FitOptions, FitResult, GridOptions, LossKind,
    SolutionPath,
};
use crate::tree::{coarsest_aggregating_set, AggregatingSet, Tree};

/// A partition of feature columns into labeled groups.
///
/// Labels are canonical: group ids are dense `0..n_groups` and numbered by
/// first occurrence in column order, so two partitions of the same features
/// are equal iff they group identically.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Partition {
    labels: Vec<usize>,
    n_groups: usize,
}

impl Partition {
    /// Canonicalizes arbitrary labels by first occurrence.
    pub fn from_labels(raw: &[usize]) -> Result<Partition> {
        let mut remap: std::collections::HashMap<usize, usize> = std::collections::HashMap::new();
        let mut labels = Vec::with_capacity(raw.len());
        for &r in raw {
            let next = remap.len();
            labels.push(*remap.entry(r).or_insert(next));
        }
        Ok(Partition {
            labels,
            n_groups: remap.len(),
        })
    }

    /// One group per feature.
    pub fn singletons(p: usize) -> Partition {
        Partition {
            labels: (0..p).collect(),
            n_groups: p,
        }
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn n_groups(&self) -> usize {
        self.n_groups
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Feature columns in group `g`, ascending.
    pub fn group_members(&self, g: usize) -> Vec<usize> {
        (0..self.labels.len())
            .filter(|&j| self.labels[j] == g)
            .collect()
    }

    /// Sizes of all groups.
    pub fn group_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0usize; self.n_groups];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }
}

/// Flags each internal node as merged when the fitted coefficients under it
/// deviate from their mean by at most `tol_rel * (1 + ||beta||_2)` in
/// Euclidean norm, then extracts the coarsest aggregating set those flags
/// allow. The induced partition is tree-coherent by construction.
pub fn extract_partition(beta: &[f64], tree: &Tree, tol_rel: f64) -> Result<AggregatingSet> {
    if beta.len() != tree.p() {
        return Err(Error::DimensionMismatch(format!(
            "beta has {} entries, tree has {} leaves",
            beta.len(),
            tree.p()
        )));
    }
    let norm = beta.iter().map(|b| b * b).sum::<f64>().sqrt();
    let tol = tol_rel * (1.0 + norm);
    let perm = tree.to_permuted_order(beta);
    let mut merged = vec![false; tree.n_nodes()];
    for &node in tree.internal() {
        let (s, e) = tree.leaf_range(node);
        let v = &perm[s..e];
        let m = v.iter().sum::<f64>() / v.len() as f64;
        let dev = v.iter().map(|x| (x - m) * (x - m)).sum::<f64>().sqrt();
        merged[node] = dev <= tol;
    }
    coarsest_aggregating_set(tree, &merged)
}

/// Groups features whose coefficient values coincide up to
/// `tol_rel * (1 + ||values||_2)`, with no tree structure involved: sorted
/// values are chained into one group while consecutive gaps stay below the
/// tolerance. Useful for scoring methods whose fits tie coefficients exactly
/// but not necessarily along a tree.
pub fn partition_by_value(values: &[f64], tol_rel: f64) -> Partition {
    let p = values.len();
    if p == 0 {
        return Partition {
            labels: Vec::new(),
            n_groups: 0,
        };
    }
    let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
    let tol = tol_rel * (1.0 + norm);
    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut raw = vec![0usize; p];
    let mut group = 0usize;
    raw[order[0]] = 0;
    for w in 1..p {
        if values[order[w]] - values[order[w - 1]] > tol {
            group += 1;
        }
        raw[order[w]] = group;
    }
    Partition::from_labels(&raw).expect("labels are well-formed")
}

/// Adjusted Rand index between two partitions of the same features.
///
/// 1 means identical grouping (including the all-singletons and one-group
/// edge cases), 0 is the chance level, and negative values indicate
/// below-chance agreement.
pub fn adjusted_rand_index(a: &Partition, b: &Partition) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch(format!(
            "partitions cover {} and {} features",
            a.len(),
            b.len()
        )));
    }
    let n = a.len();
    if n == 0 {
        return Ok(1.0);
    }
    let choose2 = |m: usize| (m * m.saturating_sub(1)) as f64 / 2.0;
    let mut contingency: std::collections::HashMap<(usize, usize), usize> =
        std::collections::HashMap::new();
    for j in 0..n {
        *contingency.entry((a.labels[j], b.labels[j])).or_insert(0) += 1;
    }
    let index: f64 = contingency.values().map(|&m| choose2(m)).sum();
    let sum_a: f64 = a.group_sizes().iter().map(|&m| choose2(m)).sum();
    let sum_b: f64 = b.group_sizes().iter().map(|&m| choose2(m)).sum();
    let total = choose2(n);
    let expected = sum_a * sum_b / total;
    let max_index = 0.5 * (sum_a + sum_b);
    if (max_index - expected).abs() < 1e-12 {
        // both partitions degenerate in the same way: perfect agreement
        return Ok(1.0);
    }
    Ok((index - expected) / (max_index - expected))
}

/// Outcome of tuning the penalty level on held-out data.
#[derive(Debug, Clone, Serialize)]
pub struct TuneReport {
    pub lambdas: Vec<f64>,
    /// Held-out criterion per grid point (mean squared error or mean
    /// cross-entropy), aligned with `lambdas`.
    pub criterion: Vec<f64>,
    pub best_index: usize,
    pub best_lambda: f64,
    pub best_fit: FitResult,
    /// Fold assignment per row (cross-validation only).
    pub folds: Option<Vec<usize>>,
}

/// Index of the smallest criterion; the grid is descending in lambda, so ties
/// resolve toward the larger penalty.
pub(crate) fn pick_best(criterion: &[f64]) -> usize {
    let mut best = 0usize;
    for (i, &c) in criterion.iter().enumerate() {
        if c < criterion[best] {
            best = i;
        }
    }
    best
}

/// Mean held-out prediction criterion for one coefficient vector: mean
/// squared error under the squared loss, mean cross-entropy under the
/// logistic loss.
pub fn prediction_criterion(
    kind: LossKind,
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    beta: &[f64],
) -> f64 {
    let b = Array1::from_vec(beta.to_vec());
    let mut z = x.dot(&b);
    if let Some(o) = offset {
        z += o;
    }
    match kind {
        LossKind::Squared => {
            let n = y.len() as f64;
            y.iter().zip(z.iter()).map(|(yi, zi)| (yi - zi) * (yi - zi)).sum::<f64>() / n
        }
        LossKind::Logistic => loss_value(kind, &z, y),
    }
}

/// Tunes the penalty level on a validation set: fits a warm-started solution
/// path on the training data, scores every grid point on the validation
/// data, and refits at the winner (ties go to the larger penalty).
pub fn tune_validation(
    train: &Dataset,
    valid: &Dataset,
    spec: &PenaltySpec,
    kind: LossKind,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<TuneReport> {
    if valid.p() != train.p() {
        return Err(Error::DimensionMismatch(format!(
            "train has {} features, validation has {}",
            train.p(),
            valid.p()
        )));
    }
    let problem = crate::solver::tree_problem(train, spec, kind)?;
    let path = path_over_problem(&problem, grid, opts)?;
    let criterion: Vec<f64> = path
        .betas
        .iter()
        .map(|b| prediction_criterion(kind, &valid.x, &valid.y, valid.offset.as_ref(), b))
        .collect();
    let best = pick_best(&criterion);
    let mut refit_opts = opts.clone();
    refit_opts.warm_start = Some(path.betas[best].clone());
    let mut fit = crate::solver::fista_fit(train, spec, path.lambdas[best], kind, &refit_opts)?;
    fit.partition = Some(
        extract_partition(&fit.beta, spec.tree(), crate::penalty::DEFAULT_MERGE_TOL)?.partition,
    );
    Ok(TuneReport {
        lambdas: path.lambdas,
        criterion,
        best_index: best,
        best_lambda: fit.lambda,
        best_fit: fit,
        folds: None,
    })
}

/// K-fold cross-validation over a shared grid computed on the full data.
///
/// Rows are shuffled once with the seeded generator and dealt round-robin
/// into `k` folds; the report echoes the assignment. The criterion per grid
/// point is the mean of the per-fold held-out criteria, reduced in fold
/// order, and the final fit is on the full data at the winning penalty.
pub fn kfold_cv(
    data: &Dataset,
    spec: &PenaltySpec,
    kind: LossKind,
    k: usize,
    grid: &GridOptions,
    opts: &FitOptions,
    seed: u64,
) -> Result<TuneReport> {
    let n = data.n();
    if k < 2 || k > n {
        return Err(Error::FoldTooSmall { k, n });
    }

    // Shared grid from the full data.
    let problem = crate::solver::tree_problem(data, spec, kind)?;
    let full_path = path_over_problem(&problem, grid, opts)?;
    let lambdas = full_path.lambdas.clone();

    let folds = fold_assignment(n, k, seed);
    let mut criterion = vec![0.0f64; lambdas.len()];
    for fold in 0..k {
        let train_rows: Vec<usize> = (0..n).filter(|&i| folds[i] != fold).collect();
        let held_rows: Vec<usize> = (0..n).filter(|&i| folds[i] == fold).collect();
        let sub = data.select_rows(&train_rows);
        let held = data.select_rows(&held_rows);
        let sub_problem = crate::solver::tree_problem(&sub, spec, kind)?;
        let mut sub_grid = grid.clone();
        sub_grid.lambdas = Some(lambdas.clone());
        let path = path_over_problem(&sub_problem, &sub_grid, opts)?;
        for (i, beta) in path.betas.iter().enumerate() {
            criterion[i] +=
                prediction_criterion(kind, &held.x, &held.y, held.offset.as_ref(), beta);
        }
    }
    for c in criterion.iter_mut() {
        *c /= k as f64;
    }

    let best = pick_best(&criterion);
    let mut refit_opts = opts.clone();
    refit_opts.warm_start = Some(full_path.betas[best].clone());
    let mut fit = crate::solver::fista_fit(data, spec, lambdas[best], kind, &refit_opts)?;
    fit.partition = Some(
        extract_partition(&fit.beta, spec.tree(), crate::penalty::DEFAULT_MERGE_TOL)?.partition,
    );
    Ok(TuneReport {
        lambdas,
        criterion,
        best_index: best,
        best_lambda: fit.lambda,
        best_fit: fit,
        folds: Some(folds),
    })
}

/// Deterministic fold labels: rows are shuffled with the seeded generator and
/// dealt round-robin.
pub fn fold_assignment(n: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = crate::simulate::rng_for(seed, crate::simulate::streams::FOLDS);
    order.shuffle(&mut rng);
    let mut folds = vec![0usize; n];
    for (pos, &row) in order.iter().enumerate() {
        folds[row] = pos % k;
    }
    folds
}

/// Validation scoring of an already-computed path (shared by the baseline
/// methods, which produce their own paths).
pub fn score_path(
    path: &SolutionPath,
    kind: LossKind,
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
) -> (Vec<f64>, usize) {
    let criterion: Vec<f64> = path
        .betas
        .iter()
        .map(|b| prediction_criterion(kind, x, y, offset, b))
        .collect();
    let best = pick_best(&criterion);
    (criterion, best)
}
