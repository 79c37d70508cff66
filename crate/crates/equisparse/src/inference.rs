//! Post-selection inference for binary outcomes.
//!
//! The response is split by randomized flipping ("fission") into a
//! selection copy and an inference copy.  Feature groups are selected on
//! the first copy with the penalized logistic fit; group effects are then
//! estimated on the second copy with a fixed-offset logistic GLM, whose
//! offsets encode the conditional law of the original response given the
//! selection copy.  Wald contrasts and Benjamini–Hochberg adjustment
//! finish the pipeline.

use ndarray::{Array1, Array2};
use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::penalty::{PenaltySpec, DEFAULT_MERGE_TOL};
use crate::select::{extract_partition, kfold_cv, Partition};
use crate::simulate::{rng_for, streams};
use crate::solver::{
    fista_fit, lambda_max_for, tree_problem, Dataset, FitOptions, GridOptions, LossKind,
};

/// Split of one binary response into a selection copy and an inference
/// copy.
#[derive(Debug, Clone)]
pub struct FissionResult {
    /// Selection response: `y` with each entry flipped independently with
    /// probability `delta`.
    pub y1: Array1<f64>,
    /// Inference response; equals the original `y` entry for entry.
    pub y2: Array1<f64>,
    /// Flip probability, in (1/2, 1).
    pub delta: f64,
    /// Per-observation log-odds offsets: `log((1-delta)/delta)` where
    /// `y1 = 1` and `log(delta/(1-delta))` where `y1 = 0`.  Conditional on
    /// `y1`, the original response follows a logistic model with this
    /// offset added to its linear predictor.
    pub offsets: Array1<f64>,
    pub seed: u64,
}

/// Randomized response split for post-selection inference.
///
/// Flips each `y_i` independently with probability `delta` to produce the
/// selection copy `y1`, keeps `y2 = y` for inference, and records the
/// log-odds offsets of the conditional law of `y` given `y1`.
pub fn fission(y: &Array1<f64>, delta: f64, seed: u64) -> Result<FissionResult> {
    if !(delta > 0.5 && delta < 1.0) {
        return Err(Error::DeltaOutOfRange(delta));
    }
    for (i, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::NonBinaryResponse { row: i, value: v });
        }
    }
    let mut rng = rng_for(seed, streams::FISSION);
    let low = ((1.0 - delta) / delta).ln();
    let n = y.len();
    let mut y1 = Array1::zeros(n);
    let mut offsets = Array1::zeros(n);
    for i in 0..n {
        let flip = rng.random_bool(delta);
        let v = if flip { 1.0 - y[i] } else { y[i] };
        y1[i] = v;
        offsets[i] = if v == 1.0 { low } else { -low };
    }
    Ok(FissionResult {
        y1,
        y2: y.clone(),
        delta,
        offsets,
        seed,
    })
}

/// Sums the design columns within each partition group.
///
/// Column `g` of the result is the row-sum of the columns in group `g`
/// (the product `X H` with `H` the group indicator matrix).
pub fn aggregate_design(x: &Array2<f64>, partition: &Partition) -> Result<Array2<f64>> {
    if partition.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but the partition covers {} features",
            x.ncols(),
            partition.len()
        )));
    }
    let n = x.nrows();
    let g = partition.n_groups();
    let mut out = Array2::zeros((n, g));
    for (j, &lab) in partition.labels().iter().enumerate() {
        let col = x.column(j);
        let mut target = out.column_mut(lab);
        target += &col;
    }
    Ok(out)
}

/// Offset logistic maximum-likelihood fit.
#[derive(Debug, Clone)]
pub struct GlmFit {
    /// Coefficients, one per design column; aliased columns are pinned at
    /// zero.
    pub coef: Vec<f64>,
    /// Inverse observed Fisher information, with zero rows/columns for
    /// aliased columns.  Symmetric positive semidefinite.
    pub cov: Array2<f64>,
    /// Fitted log-odds per observation, offsets included.
    pub fitted_logodds: Array1<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Columns dropped as linear combinations of earlier columns.
    pub dropped: Vec<usize>,
    /// Euclidean norm of the score (unscaled gradient of the
    /// log-likelihood) at exit.
    pub score_norm: f64,
}

/// Columns that survive a left-to-right modified Gram–Schmidt sweep;
/// later columns that lie in the span of earlier ones (relative residual
/// below `rel_tol`) are reported as dropped.
fn independent_columns(x: &Array2<f64>, rel_tol: f64) -> (Vec<usize>, Vec<usize>) {
    let n = x.nrows();
    let q = x.ncols();
    let mut basis: Vec<Array1<f64>> = Vec::new();
    let mut kept = Vec::new();
    let mut dropped = Vec::new();
    for j in 0..q {
        let original = x.column(j).to_owned();
        let scale = original.dot(&original).sqrt();
        let mut resid = original;
        for b in &basis {
            let proj = resid.dot(b);
            resid.scaled_add(-proj, b);
        }
        let rnorm = resid.dot(&resid).sqrt();
        if rnorm > rel_tol * scale.max(f64::MIN_POSITIVE) && scale > 0.0 && basis.len() < n {
            resid /= rnorm;
            basis.push(resid);
            kept.push(j);
        } else {
            dropped.push(j);
        }
    }
    (kept, dropped)
}

/// Logistic GLM with fixed per-observation offsets, by iteratively
/// reweighted least squares.
///
/// Maximizes the Bernoulli log-likelihood of `y` with linear predictor
/// `offset + x coef`.  The iteration stops when the Euclidean norm of the
/// score `x^T (y - mu)` falls below `1e-10`, capped at 100 iterations.
/// Columns that are linear combinations of earlier columns are dropped
/// (zero coefficient, zero covariance) and reported.  A fit whose
/// coefficients run past 30 in absolute value — implausible on the
/// log-odds scale — is reported as separated.
pub fn glm_logistic_offset(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offsets: &Array1<f64>,
) -> Result<GlmFit> {
    let n = x.nrows();
    let q = x.ncols();
    if y.len() != n || offsets.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "design has {n} rows, response {} and offsets {}",
            y.len(),
            offsets.len()
        )));
    }
    for (i, &v) in y.iter().enumerate() {
        if v != 0.0 && v != 1.0 {
            return Err(Error::NonBinaryResponse { row: i, value: v });
        }
    }
    if q == 0 {
        return Err(Error::EmptyInput);
    }

    let (kept, dropped) = independent_columns(x, 1e-8);
    let xk = x.select(ndarray::Axis(1), &kept);
    let qk = kept.len();

    // Unscaled negative log-likelihood, for the descent check.
    let nll = |z: &Array1<f64>| -> f64 {
        let mut acc = linalg::KahanSum::new();
        for (&zi, &yi) in z.iter().zip(y.iter()) {
            acc.add(linalg::log1p_exp(zi) - yi * zi);
        }
        acc.value()
    };

    let mut coef = Array1::<f64>::zeros(qk);
    let mut z = offsets.clone();
    let mut f_cur = nll(&z);
    let mut converged = false;
    let mut iterations = 0usize;
    let mut score_norm = f64::INFINITY;
    for it in 1..=100 {
        iterations = it;
        let mu = z.mapv(linalg::sigmoid);
        let resid = y - &mu;
        let score = resid.dot(&xk);
        score_norm = score.dot(&score).sqrt();
        if score_norm <= 1e-10 {
            converged = true;
            iterations = it - 1;
            break;
        }
        // Fisher information X^T W X with W = mu(1-mu); the floor keeps it
        // nonsingular without stalling a diverging (separated) fit before
        // the guard below can see it.
        let mut info = nalgebra::DMatrix::zeros(qk, qk);
        for i in 0..n {
            let w = (mu[i] * (1.0 - mu[i])).max(1e-15);
            for r in 0..qk {
                let xr = xk[[i, r]] * w;
                for c in r..qk {
                    info[(r, c)] += xr * xk[[i, c]];
                }
            }
        }
        for r in 0..qk {
            for c in r..qk {
                info[(c, r)] = info[(r, c)];
            }
        }
        let rhs = nalgebra::DVector::from_fn(qk, |i, _| score[i]);
        let step = linalg::solve_spd(&info, &rhs);
        let dir = Array1::from_iter(step.iter().copied());

        let f_prev = f_cur;
        let mut t = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &coef + &(t * &dir);
            let zc = offsets + &xk.dot(&cand);
            let f_cand = nll(&zc);
            if f_cand <= f_cur {
                coef = cand;
                z = zc;
                f_cur = f_cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            // Objective flat to working precision; recompute the score for
            // the exit report.
            let mu = z.mapv(linalg::sigmoid);
            let s = (y - &mu).dot(&xk);
            score_norm = s.dot(&s).sqrt();
            converged = score_norm <= 1e-8;
            break;
        }
        // Objective stall: the accepted step no longer changes the
        // likelihood beyond working precision, so the fit is stationary
        // even when rounding keeps the raw score above the absolute
        // threshold; report the score at the final iterate.
        if f_prev - f_cur <= 1e-12 * (1.0 + f_cur.abs()) {
            let mu = z.mapv(linalg::sigmoid);
            let s = (y - &mu).dot(&xk);
            score_norm = s.dot(&s).sqrt();
            converged = true;
            break;
        }
    }

    if coef.iter().any(|c| c.abs() > 30.0) {
        return Err(Error::Separation);
    }

    // Covariance: inverse Fisher information at the final weights, without
    // the iteration floor.
    let mu = z.mapv(linalg::sigmoid);
    let mut info = nalgebra::DMatrix::zeros(qk, qk);
    for i in 0..n {
        let w = mu[i] * (1.0 - mu[i]);
        for r in 0..qk {
            let xr = xk[[i, r]] * w;
            for c in r..qk {
                info[(r, c)] += xr * xk[[i, c]];
            }
        }
    }
    for r in 0..qk {
        for c in r..qk {
            info[(c, r)] = info[(r, c)];
        }
    }
    let inv = linalg::spd_inverse(&info);

    let mut full_coef = vec![0.0; q];
    let mut full_cov = Array2::zeros((q, q));
    for (a, &ja) in kept.iter().enumerate() {
        full_coef[ja] = coef[a];
        for (b, &jb) in kept.iter().enumerate() {
            full_cov[[ja, jb]] = inv[(a, b)];
        }
    }

    Ok(GlmFit {
        coef: full_coef,
        cov: full_cov,
        fitted_logodds: z,
        converged,
        iterations,
        dropped,
        score_norm,
    })
}

/// One tested linear combination of GLM coefficients.
#[derive(Debug, Clone, Serialize)]
pub struct ContrastTest {
    pub name: String,
    /// `c^T coef`.
    pub estimate: f64,
    /// `sqrt(c^T cov c)`; zero when the contrast variance is degenerate.
    pub se: f64,
    /// Wald statistic `estimate / se` (zero when degenerate).
    pub z: f64,
    /// Two-sided normal p-value (one when degenerate).
    pub p: f64,
    /// Set when the contrast variance is numerically zero, so the normal
    /// approximation does not apply.
    pub zero_variance: bool,
}

/// Wald tests of linear contrasts `c^T coef`.
///
/// Each contrast must have one entry per design column of the fit.
/// Contrasts whose variance is numerically degenerate (for example the
/// zero contrast, or one supported on dropped columns) are flagged and
/// given `p = 1`.
pub fn wald_contrasts(fit: &GlmFit, contrasts: &[(String, Vec<f64>)]) -> Result<Vec<ContrastTest>> {
    let q = fit.coef.len();
    let max_diag = (0..q).fold(0.0_f64, |m, j| m.max(fit.cov[[j, j]]));
    let mut out = Vec::with_capacity(contrasts.len());
    for (name, c) in contrasts {
        if c.len() != q {
            return Err(Error::DimensionMismatch(format!(
                "contrast `{name}` has {} entries for {q} coefficients",
                c.len()
            )));
        }
        let estimate: f64 = c.iter().zip(&fit.coef).map(|(ci, bi)| ci * bi).sum();
        let mut var = 0.0;
        for (a, &ca) in c.iter().enumerate() {
            if ca == 0.0 {
                continue;
            }
            for (b, &cb) in c.iter().enumerate() {
                if cb != 0.0 {
                    var += ca * cb * fit.cov[[a, b]];
                }
            }
        }
        let c_norm2: f64 = c.iter().map(|v| v * v).sum();
        let degenerate = !(var > 1e-12 * c_norm2 * max_diag) || !var.is_finite();
        if degenerate {
            out.push(ContrastTest {
                name: name.clone(),
                estimate,
                se: 0.0,
                z: 0.0,
                p: 1.0,
                zero_variance: true,
            });
        } else {
            let se = var.sqrt();
            let z = estimate / se;
            let p = 2.0 * linalg::normal_sf(z.abs());
            out.push(ContrastTest {
                name: name.clone(),
                estimate,
                se,
                z,
                p: p.min(1.0),
                zero_variance: false,
            });
        }
    }
    Ok(out)
}

/// Benjamini–Hochberg step-up adjustment.
///
/// Returns the adjusted p-values in the input order: sort ascending,
/// multiply `p_(i)` by `m/i`, enforce monotonicity by a cumulative
/// minimum from the largest rank down, and cap at one.
pub fn bh_adjust(pvalues: &[f64]) -> Result<Vec<f64>> {
    for &v in pvalues {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::OutOfRange(v));
        }
    }
    let m = pvalues.len();
    if m == 0 {
        return Ok(Vec::new());
    }
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| pvalues[a].total_cmp(&pvalues[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running = 1.0_f64;
    for rank in (1..=m).rev() {
        let idx = order[rank - 1];
        let raw = pvalues[idx] * m as f64 / rank as f64;
        running = running.min(raw).min(1.0);
        adjusted[idx] = running;
    }
    Ok(adjusted)
}

/// How the selection step picks its penalty level.
#[derive(Debug, Clone)]
pub enum SelectionRule {
    /// K-fold cross-validation on the selection copy.
    CrossValidate { folds: usize },
    /// One fixed penalty level.
    Fixed(f64),
    /// The smallest level at which the fit is fully aggregated.
    LambdaMax,
}

/// Output of the full fission–select–test pipeline.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub fission: FissionResult,
    pub selected_lambda: f64,
    /// Feature groups selected on the first copy.
    pub partition: Partition,
    /// Offset GLM on the aggregated design and the inference copy.
    pub glm: GlmFit,
    /// Pairwise contrasts of each group against group 0, BH-adjusted.
    pub contrasts: Vec<ContrastTest>,
    pub p_bh: Vec<f64>,
}

/// Runs fission, penalized selection on the first copy, and offset-GLM
/// Wald inference on the second copy.
///
/// The selection fit uses the flipped response together with its fission
/// offsets in the penalized logistic loss.  The inference GLM uses the
/// original response with the same offsets — the conditional law of the
/// response given the selection copy.  Contrasts compare every selected
/// group against group 0 and are Benjamini–Hochberg adjusted.
pub fn infer_pipeline(
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &PenaltySpec,
    delta: f64,
    seed: u64,
    rule: &SelectionRule,
    grid: &GridOptions,
    opts: &FitOptions,
) -> Result<InferenceReport> {
    let split = fission(y, delta, seed)?;
    let s1 = Dataset::new(x.clone(), split.y1.clone())?.with_offset(split.offsets.clone())?;

    let (selected_lambda, beta) = match rule {
        SelectionRule::Fixed(lam) => {
            let fit = fista_fit(&s1, spec, *lam, LossKind::Logistic, opts)?;
            (*lam, fit.beta)
        }
        SelectionRule::LambdaMax => {
            let problem = tree_problem(&s1, spec, LossKind::Logistic)?;
            let lam = lambda_max_for(&problem)?;
            // At `lambda_max` the solution is the aggregated fit by
            // construction; computing it directly keeps the group
            // structure exact instead of approximately collapsed.
            let coefs = (problem.kernel_fit)()?;
            let beta = (problem.to_beta)(&coefs);
            (lam, beta)
        }
        SelectionRule::CrossValidate { folds } => {
            let report = kfold_cv(&s1, spec, LossKind::Logistic, *folds, grid, opts, seed)?;
            (report.best_lambda, report.best_fit.beta)
        }
    };
    let partition = extract_partition(&beta, spec.tree(), DEFAULT_MERGE_TOL)?
        .partition;

    let xg = aggregate_design(x, &partition)?;
    let glm = glm_logistic_offset(&xg, &split.y2, &split.offsets)?;

    let g = partition.n_groups();
    let mut contrasts = Vec::new();
    for other in 1..g {
        let mut c = vec![0.0; g];
        c[other] = 1.0;
        c[0] = -1.0;
        contrasts.push((format!("g{other}-g0"), c));
    }
    let tests = wald_contrasts(&glm, &contrasts)?;
    let p_bh = bh_adjust(&tests.iter().map(|t| t.p).collect::<Vec<_>>())?;

    Ok(InferenceReport {
        fission: split,
        selected_lambda,
        partition,
        glm,
        contrasts: tests,
        p_bh,
    })
}
