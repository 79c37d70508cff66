//! Proximal-gradient solvers for penalized regression over a feature
//! hierarchy.
//!
//! The central routine is an accelerated proximal gradient loop
//! ([`fista_fit`]) specialized to objectives of the form
//!
//! ```text
//!     F(beta) = g(X beta) + lambda * Omega(beta)
//! ```
//!
//! where `g` is either the mean squared-error loss or the mean logistic
//! deviance, and `Omega` is any penalty with a cheap exact proximal map.
//! The loop is written once over a [`ProxProblem`] so that the tree-guided
//! penalty and the one-norm baselines share the same optimizer, step-size
//! logic, and path driver.
//!
//! Regularization paths ([`solution_path`]) are computed on a descending
//! log-spaced grid starting at the smallest `lambda` whose solution is fully
//! aggregated (all penalized structure collapsed), with warm starts carried
//! from one grid point to the next.

use ndarray::{Array1, Array2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, KahanSum};
use crate::penalty::PenaltySpec;
use crate::tree::Tree;

/// Which data-fidelity term the objective uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Mean squared error, `1/(2n) * sum (y_i - z_i)^2`.
    Squared,
    /// Mean logistic deviance, `1/n * sum [log(1 + exp(z_i)) - y_i z_i]`
    /// for responses in `{0, 1}`.
    Logistic,
}

impl std::str::FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "squared" | "gaussian" | "ls" => Ok(LossKind::Squared),
            "logistic" | "binomial" => Ok(LossKind::Logistic),
            _ => Err(Error::UnknownVariant(format!("loss `{s}`"))),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LossKind::Squared => write!(f, "squared"),
            LossKind::Logistic => write!(f, "logistic"),
        }
    }
}

/// A design matrix and response, plus optional fixed offsets and feature
/// names.
///
/// The offset enters the linear predictor additively (`z = X beta + offset`)
/// and is never penalized or estimated; it is used by the data-fission
/// selection stage.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub offset: Option<Array1<f64>>,
    pub feature_names: Option<Vec<String>>,
}

impl Dataset {
    /// Builds a dataset, checking shapes and rejecting non-finite entries.
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        if x.nrows() == 0 || x.ncols() == 0 {
            return Err(Error::EmptyInput);
        }
        if y.len() != x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "design has {} rows but response has {} entries",
                x.nrows(),
                y.len()
            )));
        }
        for ((i, j), &v) in x.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    what: "design matrix".into(),
                    row: i,
                    col: j,
                });
            }
        }
        for (i, &v) in y.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    what: "response".into(),
                    row: i,
                    col: 0,
                });
            }
        }
        Ok(Dataset {
            x,
            y,
            offset: None,
            feature_names: None,
        })
    }

    /// Attaches per-feature names (must match the number of columns).
    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.x.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "{} feature names for {} columns",
                names.len(),
                self.x.ncols()
            )));
        }
        self.feature_names = Some(names);
        Ok(self)
    }

    /// Attaches a fixed additive offset for the linear predictor.
    pub fn with_offset(mut self, offset: Array1<f64>) -> Result<Self> {
        if offset.len() != self.x.nrows() {
            return Err(Error::DimensionMismatch(format!(
                "offset has {} entries for {} rows",
                offset.len(),
                self.x.nrows()
            )));
        }
        for (i, &v) in offset.iter().enumerate() {
            if !v.is_finite() {
                return Err(Error::NonFiniteValue {
                    what: "offset".into(),
                    row: i,
                    col: 0,
                });
            }
        }
        self.offset = Some(offset);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }

    pub fn p(&self) -> usize {
        self.x.ncols()
    }

    /// Copies out the given rows (for cross-validation folds).
    pub fn select_rows(&self, rows: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), rows),
            y: self.y.select(Axis(0), rows),
            offset: self
                .offset
                .as_ref()
                .map(|o| o.select(Axis(0), rows)),
            feature_names: self.feature_names.clone(),
        }
    }

    /// Checks that every response value is exactly 0.0 or 1.0.
    pub fn validate_binary(&self) -> Result<()> {
        for (i, &v) in self.y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryResponse { row: i, value: v });
            }
        }
        Ok(())
    }
}

/// Optimizer knobs for a single fit.
#[derive(Debug, Clone)]
pub struct FitOptions {
    /// Outer iteration cap.
    pub max_iter: usize,
    /// Relative objective-change tolerance used for the stopping rule
    /// `|F_k - F_{k-1}| <= tol * (1 + |F_k|)`.
    pub tol: f64,
    /// Restart the momentum sequence whenever the objective increases.
    pub restart: bool,
    /// Optional initial coefficients in feature space (original column
    /// order).
    pub warm_start: Option<Vec<f64>>,
    /// Halve the step size when a plain gradient step still increases the
    /// objective (off by default; the spectral bound is exact for these
    /// losses).
    pub backtracking: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            max_iter: 20_000,
            tol: 1e-9,
            restart: true,
            warm_start: None,
            backtracking: false,
        }
    }
}

/// Grid controls for a regularization path.
#[derive(Debug, Clone)]
pub struct GridOptions {
    /// Number of grid points.
    pub n_lambda: usize,
    /// Ratio of the smallest to the largest grid value.
    pub lambda_min_ratio: f64,
    /// Overrides the computed largest grid value.
    pub lambda_max: Option<f64>,
    /// Fixes the entire grid (descending); used to share one grid across
    /// cross-validation folds.
    pub lambdas: Option<Vec<f64>>,
}

impl Default for GridOptions {
    fn default() -> Self {
        GridOptions {
            n_lambda: 50,
            lambda_min_ratio: 1e-3,
            lambda_max: None,
            lambdas: None,
        }
    }
}

/// Result of a single penalized fit.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    /// Coefficients in original column order.
    pub beta: Vec<f64>,
    pub lambda: f64,
    pub loss: LossKind,
    /// Objective value after each accepted iteration, starting with the
    /// initial point.
    pub objective_trace: Vec<f64>,
    /// Number of accepted proximal-gradient steps.
    pub iterations: usize,
    pub converged: bool,
    /// Groups of features sharing one fitted value, when the caller asked
    /// for them.
    pub partition: Option<crate::select::Partition>,
}

impl FitResult {
    pub fn objective(&self) -> f64 {
        *self
            .objective_trace
            .last()
            .expect("objective trace is never empty")
    }
}

/// A sequence of fits over a descending penalty grid.
#[derive(Debug, Clone, Serialize)]
pub struct SolutionPath {
    pub lambdas: Vec<f64>,
    /// Coefficients per grid point, feature space, original column order.
    pub betas: Vec<Vec<f64>>,
    /// Solver-internal coefficients per grid point (equal to `betas` up to
    /// reordering for the tree penalty; expansion weights for the
    /// reparametrized baselines).
    pub coefs: Vec<Vec<f64>>,
    pub objectives: Vec<f64>,
    pub iterations: Vec<usize>,
    pub converged: Vec<bool>,
    /// Smallest penalty level at which the fit is fully aggregated.
    pub lambda_max: f64,
    pub loss: LossKind,
}

/// Mean loss of a linear predictor `z` against the response `y`.
///
/// Squared: `1/(2n) * sum (y_i - z_i)^2`.  Logistic:
/// `1/n * sum [log(1 + exp(z_i)) - y_i z_i]`.
pub fn loss_value(kind: LossKind, z: &Array1<f64>, y: &Array1<f64>) -> f64 {
    let n = y.len() as f64;
    let mut acc = KahanSum::new();
    match kind {
        LossKind::Squared => {
            for (&zi, &yi) in z.iter().zip(y.iter()) {
                let r = yi - zi;
                acc.add(0.5 * r * r);
            }
        }
        LossKind::Logistic => {
            for (&zi, &yi) in z.iter().zip(y.iter()) {
                acc.add(linalg::log1p_exp(zi) - yi * zi);
            }
        }
    }
    acc.value() / n
}

/// Loss value and gradient of the data-fidelity term at `beta`.
///
/// Validates shapes and, for the logistic loss, that the response is
/// binary.  The gradient is `X^T (mu - y) / n`, with `mu = X beta` for the
/// squared loss and `mu = sigmoid(X beta)` for the logistic loss.
pub fn loss_and_grad(
    kind: LossKind,
    x: &Array2<f64>,
    y: &Array1<f64>,
    beta: &Array1<f64>,
) -> Result<(f64, Array1<f64>)> {
    if y.len() != x.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} rows but response has {}",
            x.nrows(),
            y.len()
        )));
    }
    if beta.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but coefficient vector has {}",
            x.ncols(),
            beta.len()
        )));
    }
    if kind == LossKind::Logistic {
        for (i, &v) in y.iter().enumerate() {
            if v != 0.0 && v != 1.0 {
                return Err(Error::NonBinaryResponse { row: i, value: v });
            }
        }
    }
    let z = x.dot(beta);
    let value = loss_value(kind, &z, y);
    let grad = grad_from_predictor(kind, x, y, &z);
    Ok((value, grad))
}

fn grad_from_predictor(
    kind: LossKind,
    x: &Array2<f64>,
    y: &Array1<f64>,
    z: &Array1<f64>,
) -> Array1<f64> {
    let n = y.len() as f64;
    let resid: Array1<f64> = match kind {
        LossKind::Squared => z - y,
        LossKind::Logistic => {
            Array1::from_iter(z.iter().zip(y.iter()).map(|(&zi, &yi)| linalg::sigmoid(zi) - yi))
        }
    };
    resid.dot(x) / n
}

/// Upper bound on the Lipschitz constant of the loss gradient.
///
/// `sigma_max(X)^2 / n` for the squared loss and `sigma_max(X)^2 / (4n)`
/// for the logistic loss, with the spectral norm obtained by power
/// iteration.
pub fn lipschitz_bound(kind: LossKind, x: &Array2<f64>) -> Result<f64> {
    let s2 = linalg::spectral_norm_sq(x, 1e-8, 500)?;
    let n = x.nrows() as f64;
    Ok(match kind {
        LossKind::Squared => s2 / n,
        LossKind::Logistic => s2 / (4.0 * n),
    })
}

/// A penalized problem in solver coordinates.
///
/// `design` maps solver coefficients to the linear predictor; `prox` and
/// `penalty` act on solver coefficients; `to_beta` converts solver
/// coefficients back to feature space in original column order.  The
/// optimizer itself never needs to know which parametrization it is
/// working in.
pub struct ProxProblem<'a> {
    pub design: Array2<f64>,
    pub y: &'a Array1<f64>,
    pub offset: Option<&'a Array1<f64>>,
    pub kind: LossKind,
    pub lipschitz: f64,
    /// Applies the proximal map of `t * penalty` in place.
    pub prox: Box<dyn Fn(f64, &mut [f64]) + Sync + 'a>,
    /// Evaluates the penalty (without the `lambda` factor).
    pub penalty: Box<dyn Fn(&[f64]) -> f64 + Sync + 'a>,
    /// Computes the fully aggregated fit: the loss minimizer over the
    /// penalty's null space.  Used as the anchor for the `lambda_max`
    /// search.
    pub kernel_fit: Box<dyn Fn() -> Result<Vec<f64>> + Sync + 'a>,
    /// Tests whether a coefficient vector is fully aggregated (penalized
    /// structure collapsed to the null space).
    pub is_aggregated: Box<dyn Fn(&[f64]) -> bool + Sync + 'a>,
    /// Per-coordinate one-norm weights when the penalty is a weighted
    /// one-norm (zero marks unpenalized coordinates); enables the
    /// closed-form `lambda_max`.  `None` falls back to the fixed-point
    /// search.
    pub l1_weights: Option<Vec<f64>>,
    /// Converts solver coefficients to feature-space coefficients.
    pub to_beta: Box<dyn Fn(&[f64]) -> Vec<f64> + Sync + 'a>,
}

impl<'a> ProxProblem<'a> {
    fn predictor(&self, coefs: &Array1<f64>) -> Array1<f64> {
        let mut z = self.design.dot(coefs);
        if let Some(off) = self.offset {
            z += off;
        }
        z
    }

    fn objective(&self, coefs: &Array1<f64>, lambda: f64) -> f64 {
        let z = self.predictor(coefs);
        loss_value(self.kind, &z, self.y)
            + lambda * (self.penalty)(coefs.as_slice().expect("contiguous"))
    }

    fn gradient(&self, coefs: &Array1<f64>) -> Array1<f64> {
        let z = self.predictor(coefs);
        grad_from_predictor(self.kind, &self.design, self.y, &z)
    }
}

/// Outcome of the core accelerated loop, in solver coordinates.
struct CoreFit {
    coefs: Array1<f64>,
    trace: Vec<f64>,
    iterations: usize,
    converged: bool,
}

/// Accelerated proximal gradient descent with a monotone restart.
///
/// Momentum follows the classic `t_{k+1} = (1 + sqrt(1 + 4 t_k^2)) / 2`
/// schedule.  Whenever an accelerated step increases the objective, the
/// momentum is discarded and the step is recomputed as a plain proximal
/// gradient step from the last accepted iterate, which keeps the recorded
/// objective trace non-increasing whenever the step size is valid.
fn fista_core(problem: &ProxProblem<'_>, lambda: f64, warm: Option<&[f64]>, opts: &FitOptions) -> CoreFit {
    let q = problem.design.ncols();
    let mut tau = 1.0 / problem.lipschitz.max(1e-12);
    let mut x_cur: Array1<f64> = match warm {
        Some(w) => Array1::from_vec(w.to_vec()),
        None => Array1::zeros(q),
    };
    let mut f_cur = problem.objective(&x_cur, lambda);
    let mut trace = vec![f_cur];
    let mut y_vec = x_cur.clone();
    let mut t = 1.0_f64;
    let mut converged = false;
    let mut iterations = 0;

    let prox_step = |tau: f64, point: &Array1<f64>, grad: &Array1<f64>| -> Array1<f64> {
        let mut cand = point - &(grad * tau);
        (problem.prox)(tau * lambda, cand.as_slice_mut().expect("contiguous"));
        cand
    };

    for _ in 0..opts.max_iter {
        let grad = problem.gradient(&y_vec);
        let mut cand = prox_step(tau, &y_vec, &grad);
        let mut f_cand = problem.objective(&cand, lambda);

        if opts.restart && f_cand > f_cur {
            // Discard the momentum and retry from the last accepted point.
            t = 1.0;
            let grad_cur = problem.gradient(&x_cur);
            cand = prox_step(tau, &x_cur, &grad_cur);
            f_cand = problem.objective(&cand, lambda);
            if f_cand > f_cur && opts.backtracking {
                for _ in 0..30 {
                    tau *= 0.5;
                    cand = prox_step(tau, &x_cur, &grad_cur);
                    f_cand = problem.objective(&cand, lambda);
                    if f_cand <= f_cur {
                        break;
                    }
                }
            }
            if f_cand > f_cur {
                // The plain step cannot make progress; the iterate is as
                // good as the step size allows.
                converged = (f_cand - f_cur).abs() <= opts.tol * (1.0 + f_cand.abs());
                break;
            }
        }

        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
        let momentum = (t - 1.0) / t_next;
        y_vec = &cand + &((&cand - &x_cur) * momentum);
        t = t_next;

        let delta = (f_cur - f_cand).abs();
        x_cur = cand;
        f_cur = f_cand;
        trace.push(f_cur);
        iterations += 1;

        if delta <= opts.tol * (1.0 + f_cur.abs()) {
            converged = true;
            break;
        }
    }

    CoreFit {
        coefs: x_cur,
        trace,
        iterations,
        converged,
    }
}

/// Builds the solver problem for the tree-guided penalty: solver
/// coordinates are the design columns permuted so that every tree node
/// covers a contiguous block.
pub fn tree_problem<'a>(data: &'a Dataset, spec: &'a PenaltySpec, kind: LossKind) -> Result<ProxProblem<'a>> {
    let tree = spec.tree();
    if data.p() != tree.p() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but the tree has {} leaves",
            data.p(),
            tree.p()
        )));
    }
    if kind == LossKind::Logistic {
        data.validate_binary()?;
    }
    let perm = tree.leaf_perm();
    let design = data.x.select(Axis(1), perm);
    let lipschitz = lipschitz_bound(kind, &design)?;

    let root_ranges: Vec<std::ops::Range<usize>> = tree
        .roots()
        .iter()
        .map(|&r| {
            let (s, e) = tree.leaf_range(r);
            s..e
        })
        .collect();

    let y = &data.y;
    let offset = data.offset.as_ref();
    let design_for_kernel = design.clone();
    let kernel_fit: Box<dyn Fn() -> Result<Vec<f64>> + Sync + 'a> = {
        let ranges = root_ranges.clone();
        Box::new(move || kernel_fit_by_groups(&design_for_kernel, y, offset, kind, &ranges))
    };

    let is_aggregated: Box<dyn Fn(&[f64]) -> bool + Sync + 'a> = {
        let ranges = root_ranges.clone();
        Box::new(move |v: &[f64]| {
            let scale = 1.0 + v.iter().fold(0.0_f64, |m, &c| m.max(c.abs()));
            ranges.iter().all(|r| {
                let m = crate::penalty::kahan_mean(&v[r.clone()]);
                v[r.clone()].iter().all(|&c| (c - m).abs() <= 1e-9 * scale)
            })
        })
    };

    Ok(ProxProblem {
        design,
        y,
        offset,
        kind,
        lipschitz,
        prox: Box::new(move |t, v| spec.prox_permuted_inplace(t, v)),
        penalty: Box::new(move |v| spec.omega_permuted(v)),
        kernel_fit,
        is_aggregated,
        l1_weights: None,
        to_beta: Box::new(move |v| tree.to_original_order(v)),
    })
}

/// Loss minimizer constrained to be constant within each index group.
///
/// Groups must tile `0..q`.  Returns the expanded coefficient vector in
/// solver coordinates.
pub(crate) fn kernel_fit_by_groups(
    design: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    kind: LossKind,
    groups: &[std::ops::Range<usize>],
) -> Result<Vec<f64>> {
    let n = design.nrows();
    let mut agg = Array2::<f64>::zeros((n, groups.len()));
    for (g, range) in groups.iter().enumerate() {
        for j in range.clone() {
            let col = design.column(j);
            let mut agg_col = agg.column_mut(g);
            agg_col += &col;
        }
    }
    let group_coefs: Vec<f64> = match kind {
        LossKind::Squared => {
            let target = match offset {
                Some(off) => y - off,
                None => y.clone(),
            };
            linalg::min_norm_lstsq(&agg, &target).to_vec()
        }
        LossKind::Logistic => {
            // A separated aggregated fit still anchors the search — the
            // bounded coefficients the damped iteration stops at are a
            // valid starting point for the fixed-point check.
            let (beta, _, _) = linalg::newton_logistic(&agg, y, offset, 0.0, 1e-10, 100);
            beta.to_vec()
        }
    };
    let q = design.ncols();
    let mut out = vec![0.0; q];
    for (g, range) in groups.iter().enumerate() {
        for j in range.clone() {
            out[j] = group_coefs[g];
        }
    }
    Ok(out)
}

/// Smallest penalty level whose solution is fully aggregated.
///
/// For weighted one-norm penalties this is exact:
/// `max_i |grad_i(kernel)| / w_i` over penalized coordinates.  Otherwise a
/// doubling-then-bisection search finds the smallest `lambda` at which one
/// proximal gradient step from the aggregated fit stays aggregated — the
/// fixed-point condition that characterizes optimality of the aggregated
/// fit.
pub fn lambda_max_for(problem: &ProxProblem<'_>) -> Result<f64> {
    let kernel = (problem.kernel_fit)()?;
    let kernel = Array1::from_vec(kernel);
    let grad = problem.gradient(&kernel);

    if let Some(w) = &problem.l1_weights {
        let mut best = 0.0_f64;
        for (i, &wi) in w.iter().enumerate() {
            if wi > 0.0 {
                best = best.max(grad[i].abs() / wi);
            }
        }
        return Ok(if best > 0.0 { best } else { 1.0 });
    }

    let tau = 1.0 / problem.lipschitz.max(1e-12);
    let base = &kernel - &(&grad * tau);
    let stays_aggregated = |lam: f64| -> bool {
        let mut v = base.to_vec();
        (problem.prox)(tau * lam, &mut v);
        (problem.is_aggregated)(&v)
    };

    let mut hi = 1e-6;
    let mut lo = 0.0;
    if stays_aggregated(hi) {
        // Already aggregated at a tiny penalty; shrink downward.
        let mut probe = hi;
        while probe > 1e-15 && stays_aggregated(probe * 0.5) {
            probe *= 0.5;
        }
        return Ok(refine_lambda(probe * 0.5, probe, &stays_aggregated));
    }
    while !stays_aggregated(hi) {
        lo = hi;
        hi *= 2.0;
        if hi > 1e18 {
            // The penalty never collapses the fit (weights vanish); treat
            // the current bound as the top of the grid.
            return Ok(hi);
        }
    }
    Ok(refine_lambda(lo, hi, &stays_aggregated))
}

fn refine_lambda(mut lo: f64, mut hi: f64, stays_aggregated: &dyn Fn(f64) -> bool) -> f64 {
    for _ in 0..100 {
        if hi - lo <= 1e-6 * hi {
            break;
        }
        let mid = 0.5 * (lo + hi);
        if stays_aggregated(mid) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    hi
}

/// Descending log-spaced grid from `lambda_max` down to
/// `lambda_max * ratio`.
pub fn log_grid(lambda_max: f64, ratio: f64, k: usize) -> Result<Vec<f64>> {
    if k == 0 {
        return Err(Error::EmptyInput);
    }
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::OutOfRange(ratio));
    }
    if !(lambda_max.is_finite() && lambda_max > 0.0) {
        return Err(Error::OutOfRange(lambda_max));
    }
    if k == 1 {
        return Ok(vec![lambda_max]);
    }
    Ok((0..k)
        .map(|j| lambda_max * ratio.powf(j as f64 / (k - 1) as f64))
        .collect())
}

/// Runs a warm-started descending path over an already-built problem.
pub fn path_over_problem(problem: &ProxProblem<'_>, grid: &GridOptions, opts: &FitOptions) -> Result<SolutionPath> {
    let (lambdas, lambda_max) = match &grid.lambdas {
        Some(fixed) => {
            if fixed.is_empty() {
                return Err(Error::EmptyInput);
            }
            let mut sorted = fixed.clone();
            sorted.sort_by(|a, b| b.partial_cmp(a).expect("finite lambdas"));
            for &l in &sorted {
                if !(l.is_finite() && l >= 0.0) {
                    return Err(Error::NegativeLambda(l));
                }
            }
            let top = sorted[0];
            (sorted, top)
        }
        None => {
            let lmax = match grid.lambda_max {
                Some(l) if l > 0.0 && l.is_finite() => l,
                Some(l) => return Err(Error::OutOfRange(l)),
                None => lambda_max_for(problem)?,
            };
            (
                log_grid(lmax, grid.lambda_min_ratio, grid.n_lambda)?,
                lmax,
            )
        }
    };

    let mut betas = Vec::with_capacity(lambdas.len());
    let mut coefs = Vec::with_capacity(lambdas.len());
    let mut objectives = Vec::with_capacity(lambdas.len());
    let mut iterations = Vec::with_capacity(lambdas.len());
    let mut converged = Vec::with_capacity(lambdas.len());

    let mut warm: Option<Vec<f64>> = None;
    for &lam in &lambdas {
        let fit = fista_core(problem, lam, warm.as_deref(), opts);
        let c = fit.coefs.to_vec();
        betas.push((problem.to_beta)(&c));
        objectives.push(*fit.trace.last().expect("non-empty trace"));
        iterations.push(fit.iterations);
        converged.push(fit.converged);
        warm = Some(c.clone());
        coefs.push(c);
    }

    Ok(SolutionPath {
        lambdas,
        betas,
        coefs,
        objectives,
        iterations,
        converged,
        lambda_max,
        loss: problem.kind,
    })
}

/// Single fit over an already-built problem at one penalty level.
///
/// Unlike [`fista_fit`], the warm start in `opts` is interpreted in solver
/// coordinates.  Returns the feature-space result together with the final
/// solver-coordinate vector (for reparametrized problems the two differ).
pub fn fit_over_problem(
    problem: &ProxProblem<'_>,
    lambda: f64,
    opts: &FitOptions,
) -> Result<(FitResult, Vec<f64>)> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::NegativeLambda(lambda));
    }
    if let Some(w) = &opts.warm_start {
        if w.len() != problem.design.ncols() {
            return Err(Error::DimensionMismatch(format!(
                "warm start has {} entries for {} solver coordinates",
                w.len(),
                problem.design.ncols()
            )));
        }
    }
    let fit = fista_core(problem, lambda, opts.warm_start.as_deref(), opts);
    let coefs = fit.coefs.to_vec();
    let beta = (problem.to_beta)(&coefs);
    Ok((
        FitResult {
            beta,
            lambda,
            loss: problem.kind,
            objective_trace: fit.trace,
            iterations: fit.iterations,
            converged: fit.converged,
            partition: None,
        },
        coefs,
    ))
}

/// Single fit of the tree-guided penalty at one penalty level.
pub fn fista_fit(
    data: &Dataset,
    spec: &PenaltySpec,
    lambda: f64,
    kind: LossKind,
    opts: &FitOptions,
) -> Result<FitResult> {
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::NegativeLambda(lambda));
    }
    let problem = tree_problem(data, spec, kind)?;
    let warm_permuted: Option<Vec<f64>> = match &opts.warm_start {
        Some(w) => {
            if w.len() != data.p() {
                return Err(Error::DimensionMismatch(format!(
                    "warm start has {} entries for {} features",
                    w.len(),
                    data.p()
                )));
            }
            Some(spec.tree().to_permuted_order(w))
        }
        None => None,
    };
    let fit = fista_core(&problem, lambda, warm_permuted.as_deref(), opts);
    let beta = (problem.to_beta)(fit.coefs.as_slice().expect("contiguous"));
    Ok(FitResult {
        beta,
        lambda,
        loss: kind,
        objective_trace: fit.trace,
        iterations: fit.iterations,
        converged: fit.converged,
        partition: None,
    })
}

/// Regularization path of the tree-guided penalty.
pub fn solution_path(
    data: &Dataset,
    spec: &PenaltySpec,
    kind: LossKind,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<SolutionPath> {
    let problem = tree_problem(data, spec, kind)?;
    path_over_problem(&problem, grid, opts)
}

/// Theory-driven penalty level for the squared loss with sub-Gaussian
/// noise of scale `sigma` and design columns bounded by `c` in Euclidean
/// norm divided by `sqrt(n)`:
///
/// ```text
///     lambda = (4 * sqrt(2) * sigma * c / sqrt(n))
///              * theta(T) * sqrt(ln(2 p) + ln |I|)
/// ```
///
/// where `theta` is the tree's aggregation-complexity factor.
pub fn theory_lambda(tree: &Tree, sigma: f64, c: f64, n: usize) -> Result<f64> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::OutOfRange(sigma));
    }
    if !(c.is_finite() && c > 0.0) {
        return Err(Error::OutOfRange(c));
    }
    if n == 0 {
        return Err(Error::EmptyInput);
    }
    let theta = crate::tree::theta(tree)?;
    let p = tree.p() as f64;
    let n_internal = tree.internal().len() as f64;
    let tail = ((2.0 * p).ln() + n_internal.ln()).sqrt();
    Ok(4.0 * std::f64::consts::SQRT_2 * sigma * c / (n as f64).sqrt() * theta * tail)
}
