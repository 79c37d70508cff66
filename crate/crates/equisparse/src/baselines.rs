//! Comparison estimators: the tree-expanded one-norm fit ("rare"), plain
//! lasso, ridge, and least squares on a known feature grouping.
//!
//! All of them reuse the accelerated proximal solver through
//! [`ProxProblem`], so convergence behavior, warm starts, and path/grid
//! handling are identical across methods.

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};
use crate::linalg;
use crate::select::Partition;
use crate::solver::{
    fit_over_problem, lipschitz_bound, loss_value, path_over_problem, Dataset, FitOptions,
    FitResult, GridOptions, LossKind, ProxProblem, SolutionPath,
};
use crate::tree::Tree;

/// Path-incidence expansion of a tree.
///
/// Column `i` of `A` is the 0/1 indicator of the leaves below node `i`, so
/// `beta = A gamma` assigns every feature the sum of the node effects along
/// its root-to-leaf path (both endpoints included).  Root columns are
/// marked unpenalized: shifting a whole root group is never charged.
#[derive(Debug, Clone)]
pub struct ExpansionMatrix {
    a: Array2<f64>,
    penalized: Vec<bool>,
}

impl ExpansionMatrix {
    /// The `p x L` incidence matrix (features by tree nodes).
    pub fn matrix(&self) -> &Array2<f64> {
        &self.a
    }

    /// Which node columns carry a one-norm charge (`false` for roots).
    pub fn penalized(&self) -> &[bool] {
        &self.penalized
    }

    pub fn p(&self) -> usize {
        self.a.nrows()
    }

    pub fn n_nodes(&self) -> usize {
        self.a.ncols()
    }

    /// Feature coefficients `beta = A gamma`.
    ///
    /// Each entry is a plain sum of the node effects on one root-to-leaf
    /// path; no scaling is involved.
    pub fn expand(&self, gamma: &[f64]) -> Result<Vec<f64>> {
        if gamma.len() != self.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "expansion has {} node columns but got {} node effects",
                self.n_nodes(),
                gamma.len()
            )));
        }
        let mut beta = vec![0.0; self.p()];
        for j in 0..self.p() {
            let mut acc = 0.0;
            for (i, &g) in gamma.iter().enumerate() {
                if self.a[[j, i]] != 0.0 {
                    acc += g;
                }
            }
            beta[j] = acc;
        }
        Ok(beta)
    }
}

/// Builds the path-incidence matrix of a tree.
///
/// `A[j, i] = 1` exactly when node `i` lies on the path from feature `j`'s
/// root down to its leaf; every row therefore has at least one entry (the
/// leaf itself) and exactly one unpenalized entry per root above it.
pub fn expansion_matrix(tree: &Tree) -> ExpansionMatrix {
    let p = tree.p();
    let l = tree.n_nodes();
    let perm = tree.leaf_perm();
    let mut a = Array2::zeros((p, l));
    let mut penalized = vec![true; l];
    for node in 0..l {
        if tree.is_root(node) {
            penalized[node] = false;
        }
        let (s, e) = tree.leaf_range(node);
        for k in s..e {
            a[[perm[k], node]] = 1.0;
        }
    }
    ExpansionMatrix { a, penalized }
}

/// Feature-to-group indicator matrix `H` (`p x K`, exactly one 1 per row).
///
/// `beta = H beta_tilde` replicates each group coefficient across the
/// features of that group; `X H` is the design with group-summed columns.
#[derive(Debug, Clone)]
pub struct GroupMap {
    h: Array2<f64>,
    k: usize,
}

impl GroupMap {
    /// Indicator matrix of a feature partition.
    pub fn from_partition(partition: &Partition) -> GroupMap {
        let p = partition.len();
        let k = partition.n_groups();
        let mut h = Array2::zeros((p, k));
        for (j, &g) in partition.labels().iter().enumerate() {
            h[[j, g]] = 1.0;
        }
        GroupMap { h, k }
    }

    /// One group per feature: `H = I_p`.
    pub fn identity(p: usize) -> GroupMap {
        GroupMap::from_partition(&Partition::singletons(p))
    }

    pub fn matrix(&self) -> &Array2<f64> {
        &self.h
    }

    pub fn n_groups(&self) -> usize {
        self.k
    }

    pub fn p(&self) -> usize {
        self.h.nrows()
    }

    /// Feature coefficients `beta = H beta_tilde`.
    pub fn expand(&self, tilde: &[f64]) -> Result<Vec<f64>> {
        if tilde.len() != self.k {
            return Err(Error::DimensionMismatch(format!(
                "group map has {} groups but got {} group coefficients",
                self.k,
                tilde.len()
            )));
        }
        let mut beta = vec![0.0; self.p()];
        for j in 0..self.p() {
            for (g, &t) in tilde.iter().enumerate() {
                if self.h[[j, g]] != 0.0 {
                    beta[j] = t;
                }
            }
        }
        Ok(beta)
    }
}

/// Generic weighted-one-norm problem on an explicit design.
///
/// `weights[i] = 0` marks coordinate `i` as unpenalized; the aggregated
/// ("kernel") fit minimizes the loss over the unpenalized coordinates with
/// every penalized coordinate pinned at zero.
fn l1_problem<'a>(
    design: Array2<f64>,
    y: &'a Array1<f64>,
    offset: Option<&'a Array1<f64>>,
    kind: LossKind,
    weights: Vec<f64>,
    to_beta: Box<dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a>,
) -> Result<ProxProblem<'a>> {
    let q = design.ncols();
    if weights.len() != q {
        return Err(Error::DimensionMismatch(format!(
            "design has {q} columns but got {} penalty weights",
            weights.len()
        )));
    }
    for &w in &weights {
        if !(w.is_finite() && w >= 0.0) {
            return Err(Error::OutOfRange(w));
        }
    }
    if y.len() != design.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has {}",
            design.nrows(),
            y.len()
        )));
    }
    let lipschitz = lipschitz_bound(kind, &design)?;
    let free: Vec<usize> = (0..q).filter(|&i| weights[i] == 0.0).collect();

    let design_for_kernel = design.clone();
    let free_for_kernel = free.clone();
    let kernel_fit: Box<dyn Fn() -> Result<Vec<f64>> + Sync + 'a> = Box::new(move || {
        let mut out = vec![0.0; q];
        if free_for_kernel.is_empty() {
            return Ok(out);
        }
        let sub = design_for_kernel.select(Axis(1), &free_for_kernel);
        let coefs: Vec<f64> = match kind {
            LossKind::Squared => {
                let target = match offset {
                    Some(off) => y - off,
                    None => y.clone(),
                };
                linalg::min_norm_lstsq(&sub, &target).to_vec()
            }
            LossKind::Logistic => {
                let (beta, _, _) = linalg::newton_logistic(&sub, y, offset, 0.0, 1e-10, 100);
                beta.to_vec()
            }
        };
        for (slot, &i) in free_for_kernel.iter().enumerate() {
            out[i] = coefs[slot];
        }
        Ok(out)
    });

    let weights_for_prox = weights.clone();
    let prox: Box<dyn Fn(f64, &mut [f64]) + Sync + 'a> = Box::new(move |t, v| {
        for (vi, &w) in v.iter_mut().zip(&weights_for_prox) {
            if w > 0.0 {
                let thr = t * w;
                *vi = vi.signum() * (vi.abs() - thr).max(0.0);
            }
        }
    });

    let weights_for_penalty = weights.clone();
    let penalty: Box<dyn Fn(&[f64]) -> f64 + Sync + 'a> = Box::new(move |v| {
        let mut acc = linalg::KahanSum::new();
        for (vi, &w) in v.iter().zip(&weights_for_penalty) {
            acc.add(w * vi.abs());
        }
        acc.value()
    });

    let weights_for_agg = weights.clone();
    let is_aggregated: Box<dyn Fn(&[f64]) -> bool + Sync + 'a> = Box::new(move |v| {
        let scale = 1.0 + v.iter().fold(0.0_f64, |m, &c| m.max(c.abs()));
        v.iter()
            .zip(&weights_for_agg)
            .all(|(&vi, &w)| w == 0.0 || vi.abs() <= 1e-9 * scale)
    });

    Ok(ProxProblem {
        design,
        y,
        offset,
        kind,
        lipschitz,
        prox,
        penalty,
        kernel_fit,
        is_aggregated,
        l1_weights: Some(weights),
        to_beta,
    })
}

/// Validates per-node weights for the tree-expanded fit and zeroes the
/// root entries (roots are never charged).
fn rare_weights(expansion: &ExpansionMatrix, weights: Option<&[f64]>) -> Result<Vec<f64>> {
    let l = expansion.n_nodes();
    let mut w = match weights {
        Some(w) => {
            if w.len() != l {
                return Err(Error::DimensionMismatch(format!(
                    "tree has {l} nodes but got {} node weights",
                    w.len()
                )));
            }
            w.to_vec()
        }
        None => vec![1.0; l],
    };
    for (wi, &pen) in w.iter_mut().zip(expansion.penalized()) {
        if !pen {
            *wi = 0.0;
        }
    }
    Ok(w)
}

/// Solver problem for the tree-expanded one-norm fit.
///
/// The solver coordinates are per-node effects `gamma`; the design is
/// `X A` and feature coefficients are recovered as `beta = A gamma`.  The
/// expanded design is deliberately left unstandardized: its columns are
/// sums of overlapping feature groups and rescaling them would change the
/// estimator.
pub fn rare_problem<'a>(
    data: &'a Dataset,
    expansion: &'a ExpansionMatrix,
    kind: LossKind,
    weights: Option<&[f64]>,
) -> Result<ProxProblem<'a>> {
    if data.p() != expansion.p() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but the expansion covers {} features",
            data.p(),
            expansion.p()
        )));
    }
    if kind == LossKind::Logistic {
        data.validate_binary()?;
    }
    let w = rare_weights(expansion, weights)?;
    let design = data.x.dot(expansion.matrix());
    l1_problem(
        design,
        &data.y,
        data.offset.as_ref(),
        kind,
        w,
        Box::new(move |gamma| expansion.expand(gamma).expect("gamma length fixed")),
    )
}

/// Result of a tree-expanded one-norm fit.
#[derive(Debug, Clone)]
pub struct RareResult {
    /// Feature-space result (`beta = A gamma`).
    pub fit: FitResult,
    /// Node effects, one per tree node.
    pub gamma: Vec<f64>,
    /// Nodes with a nonzero effect.
    pub support: Vec<usize>,
}

/// Tree-expanded one-norm fit at one penalty level.
///
/// Solves `min_gamma loss(X A gamma) + lambda * sum_i w_i |gamma_i|` with
/// soft-thresholding on the penalized node effects (default weight 1,
/// roots always exempt) and returns `beta = A gamma` together with the
/// node effects and their support.
pub fn rare_fit(
    data: &Dataset,
    tree: &Tree,
    lambda: f64,
    kind: LossKind,
    weights: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<RareResult> {
    let expansion = expansion_matrix(tree);
    let problem = rare_problem(data, &expansion, kind, weights)?;
    let (fit, gamma) = fit_over_problem(&problem, lambda, opts)?;
    let support = gamma
        .iter()
        .enumerate()
        .filter(|&(_, &g)| g != 0.0)
        .map(|(i, _)| i)
        .collect();
    Ok(RareResult { fit, gamma, support })
}

/// Warm-started descending path of tree-expanded one-norm fits.
pub fn rare_path(
    data: &Dataset,
    tree: &Tree,
    kind: LossKind,
    weights: Option<&[f64]>,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<SolutionPath> {
    let expansion = expansion_matrix(tree);
    let problem = rare_problem(data, &expansion, kind, weights)?;
    path_over_problem(&problem, grid, opts)
}

/// Solver problem for the plain lasso (unit weights on every column).
pub fn lasso_problem<'a>(data: &'a Dataset, kind: LossKind) -> Result<ProxProblem<'a>> {
    if kind == LossKind::Logistic {
        data.validate_binary()?;
    }
    l1_problem(
        data.x.clone(),
        &data.y,
        data.offset.as_ref(),
        kind,
        vec![1.0; data.p()],
        Box::new(|v| v.to_vec()),
    )
}

/// Plain lasso fit (no intercept, no standardization).
pub fn lasso_fit(data: &Dataset, lambda: f64, kind: LossKind, opts: &FitOptions) -> Result<FitResult> {
    let problem = lasso_problem(data, kind)?;
    Ok(fit_over_problem(&problem, lambda, opts)?.0)
}

/// Warm-started descending lasso path.
pub fn lasso_path(
    data: &Dataset,
    kind: LossKind,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<SolutionPath> {
    let problem = lasso_problem(data, kind)?;
    path_over_problem(&problem, grid, opts)
}

/// Ridge fit: `min_beta loss(X beta) + (lambda/2) ||beta||^2`.
///
/// Squared loss solves the normal equations
/// `(X^T X / n + lambda I) beta = X^T (y - offset) / n` directly (falling
/// back to the minimum-norm least-squares solution when `lambda = 0` and
/// the Gram matrix is singular); the logistic loss runs a damped Newton
/// iteration.
pub fn ridge_fit(data: &Dataset, lambda: f64, kind: LossKind) -> Result<FitResult> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::NegativeLambda(lambda));
    }
    let n = data.n();
    let p = data.p();
    let beta: Array1<f64> = match kind {
        LossKind::Squared => {
            let target = match &data.offset {
                Some(off) => &data.y - off,
                None => data.y.clone(),
            };
            if lambda == 0.0 {
                linalg::min_norm_lstsq(&data.x, &target)
            } else {
                let nf = n as f64;
                let mut gram = nalgebra::DMatrix::zeros(p, p);
                for r in 0..p {
                    for c in r..p {
                        let v = data.x.column(r).dot(&data.x.column(c)) / nf;
                        gram[(r, c)] = v;
                        gram[(c, r)] = v;
                    }
                }
                for d in 0..p {
                    gram[(d, d)] += lambda;
                }
                let rhs = nalgebra::DVector::from_fn(p, |i, _| {
                    data.x.column(i).dot(&target) / nf
                });
                let sol = linalg::solve_spd(&gram, &rhs);
                Array1::from_iter(sol.iter().copied())
            }
        }
        LossKind::Logistic => {
            data.validate_binary()?;
            let (beta, status, _) =
                linalg::newton_logistic(&data.x, &data.y, data.offset.as_ref(), lambda, 1e-10, 100);
            if status == linalg::NewtonStatus::Separated {
                return Err(Error::Separation);
            }
            beta
        }
    };
    let mut z = data.x.dot(&beta);
    if let Some(off) = &data.offset {
        z += off;
    }
    let objective = loss_value(kind, &z, &data.y) + 0.5 * lambda * beta.dot(&beta);
    Ok(FitResult {
        beta: beta.to_vec(),
        lambda,
        loss: kind,
        objective_trace: vec![objective],
        iterations: 1,
        converged: true,
        partition: None,
    })
}

/// Least squares on known feature groups (squared loss only).
///
/// Fits `y` on the group-summed design `X H` — minimum-norm on rank
/// deficiency — optionally with a ridge term `(lambda/2) ||beta_tilde||^2`
/// on the group coefficients, then replicates the group coefficients back
/// to the features: `beta = H beta_tilde`.
pub fn oracle_aggregated_ls(
    data: &Dataset,
    map: &GroupMap,
    ridge_lambda: Option<f64>,
) -> Result<FitResult> {
    if data.p() != map.p() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but the group map covers {} features",
            data.p(),
            map.p()
        )));
    }
    let lambda = ridge_lambda.unwrap_or(0.0);
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::NegativeLambda(lambda));
    }
    let agg = data.x.dot(map.matrix());
    let target = match &data.offset {
        Some(off) => &data.y - off,
        None => data.y.clone(),
    };
    let tilde: Array1<f64> = if lambda == 0.0 {
        linalg::min_norm_lstsq(&agg, &target)
    } else {
        let k = map.n_groups();
        let nf = data.n() as f64;
        let mut gram = nalgebra::DMatrix::zeros(k, k);
        for r in 0..k {
            for c in r..k {
                let v = agg.column(r).dot(&agg.column(c)) / nf;
                gram[(r, c)] = v;
                gram[(c, r)] = v;
            }
        }
        for d in 0..k {
            gram[(d, d)] += lambda;
        }
        let rhs = nalgebra::DVector::from_fn(k, |i, _| agg.column(i).dot(&target) / nf);
        let sol = linalg::solve_spd(&gram, &rhs);
        Array1::from_iter(sol.iter().copied())
    };
    let beta = map.expand(tilde.as_slice().expect("contiguous"))?;
    let beta_arr = Array1::from_vec(beta.clone());
    let mut z = data.x.dot(&beta_arr);
    if let Some(off) = &data.offset {
        z += off;
    }
    let objective = loss_value(LossKind::Squared, &z, &data.y) + 0.5 * lambda * tilde.dot(&tilde);
    Ok(FitResult {
        beta,
        lambda,
        loss: LossKind::Squared,
        objective_trace: vec![objective],
        iterations: 1,
        converged: true,
        partition: None,
    })
}
