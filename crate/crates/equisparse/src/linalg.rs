//! Shared numeric kernels: compensated summation, stable logistic
//! primitives, power iteration for the spectral norm, small dense solves,
//! and a damped Newton loop for logistic likelihoods.

use ndarray::{Array1, Array2};

use crate::error::{Error, Result};

/// Kahan compensated accumulator for long sums.
#[derive(Debug, Clone, Copy, Default)]
pub struct KahanSum {
    sum: f64,
    carry: f64,
}

impl KahanSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let y = x - self.carry;
        let t = self.sum + y;
        self.carry = (t - self.sum) - y;
        self.sum = t;
    }

    #[inline]
    pub fn value(&self) -> f64 {
        self.sum
    }
}

/// Compensated sum of a slice.
pub fn kahan_sum(xs: &[f64]) -> f64 {
    let mut acc = KahanSum::new();
    for &x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Numerically stable `log(1 + exp(z))`.
#[inline]
pub fn log1p_exp(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Upper tail of the standard normal distribution.
pub fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

/// Squared spectral norm (largest squared singular value) of `x` by power
/// iteration on `x^T x`, from a fixed seeded start. Stops when the Rayleigh
/// quotient stabilizes to `tol` relative change or after `max_iter` rounds.
pub fn spectral_norm_sq(x: &Array2<f64>, tol: f64, max_iter: usize) -> Result<f64> {
    let p = x.ncols();
    if p == 0 || x.nrows() == 0 {
        return Ok(0.0);
    }
    // Deterministic start: a fixed full-support direction with varying signs
    // rather than the constant vector, which can be orthogonal to the top
    // singular direction.
    let mut v = Array1::from_shape_fn(p, |j| {
        let t = (j as f64 + 1.0) * 0.754_877_666_246_692_9; // fractional part spreads entries
        (t - t.floor()) - 0.5 + 1e-3
    });
    let nrm = v.dot(&v).sqrt();
    v.mapv_inplace(|a| a / nrm);

    let mut sigma_sq = 0.0f64;
    for _ in 0..max_iter {
        let xv = x.dot(&v);
        let mut w = xv.dot(x); // x^T (x v)
        let new_sigma_sq = xv.dot(&xv);
        if !new_sigma_sq.is_finite() {
            return Err(Error::PowerIterationDiverged);
        }
        if new_sigma_sq == 0.0 {
            return Ok(0.0); // v in the null space of a rank-deficient x; restart not needed for our PSD use
        }
        let wn = w.dot(&w).sqrt();
        w.mapv_inplace(|a| a / wn);
        v = w;
        if (new_sigma_sq - sigma_sq).abs() <= tol * new_sigma_sq.max(1e-300) {
            return Ok(new_sigma_sq);
        }
        sigma_sq = new_sigma_sq;
    }
    Ok(sigma_sq)
}

/// Minimum-norm least-squares solution of `x b = y` via singular value
/// decomposition, with the usual `max(n, p) * eps * sigma_max` rank cutoff.
pub fn min_norm_lstsq(x: &Array2<f64>, y: &Array1<f64>) -> Array1<f64> {
    let (n, p) = (x.nrows(), x.ncols());
    let m = nalgebra::DMatrix::from_fn(n, p, |i, j| x[[i, j]]);
    let rhs = nalgebra::DVector::from_fn(n, |i, _| y[i]);
    let svd = m.svd(true, true);
    let eps = f64::EPSILON * (n.max(p) as f64) * svd.singular_values.max();
    let sol = svd
        .solve(&rhs, eps)
        .expect("svd.solve requires u and v_t, both requested");
    Array1::from_iter(sol.iter().copied())
}

/// Solves the symmetric positive definite system `a b = rhs` by Cholesky,
/// falling back to an eigenvalue-thresholded pseudoinverse when `a` is
/// singular to working precision.
pub fn solve_spd(a: &nalgebra::DMatrix<f64>, rhs: &nalgebra::DVector<f64>) -> nalgebra::DVector<f64> {
    if let Some(chol) = a.clone().cholesky() {
        return chol.solve(rhs);
    }
    let eig = nalgebra::SymmetricEigen::new(a.clone());
    let cut = f64::EPSILON * (a.nrows() as f64) * eig.eigenvalues.amax().max(1e-300);
    let mut coef = eig.eigenvectors.transpose() * rhs;
    for (i, c) in coef.iter_mut().enumerate() {
        let ev = eig.eigenvalues[i];
        *c = if ev.abs() > cut { *c / ev } else { 0.0 };
    }
    &eig.eigenvectors * coef
}

/// Inverse of a symmetric positive semidefinite matrix: Cholesky when
/// positive definite, eigenvalue-thresholded pseudoinverse otherwise.
/// The result is symmetrized to remove rounding asymmetry.
pub fn spd_inverse(a: &nalgebra::DMatrix<f64>) -> nalgebra::DMatrix<f64> {
    let inv = match a.clone().cholesky() {
        Some(chol) => chol.inverse(),
        None => {
            let eig = nalgebra::SymmetricEigen::new(a.clone());
            let cut = f64::EPSILON * (a.nrows() as f64) * eig.eigenvalues.amax().max(1e-300);
            let mut d = eig.eigenvalues.clone();
            for v in d.iter_mut() {
                *v = if *v > cut { 1.0 / *v } else { 0.0 };
            }
            &eig.eigenvectors * nalgebra::DMatrix::from_diagonal(&d) * eig.eigenvectors.transpose()
        }
    };
    0.5 * (&inv + inv.transpose())
}

/// Exit state of the damped Newton loop.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NewtonStatus {
    Converged,
    MaxIter,
    /// Coefficients ran past the divergence guard without converging,
    /// the signature of a separated logistic fit.
    Separated,
}

/// Damped Newton for the (optionally ridge-penalized) logistic objective
/// `(1/n) sum[log(1 + exp(z_i)) - y_i z_i] + (ridge/2) ||b||^2` with
/// `z = x b + offset`. Step halving enforces descent; iteration stops when
/// the gradient norm falls below `tol`.
pub fn newton_logistic(
    x: &Array2<f64>,
    y: &Array1<f64>,
    offset: Option<&Array1<f64>>,
    ridge: f64,
    tol: f64,
    max_iter: usize,
) -> (Array1<f64>, NewtonStatus, usize) {
    let (n, p) = (x.nrows(), x.ncols());
    let nf = n as f64;
    let mut beta = Array1::zeros(p);
    let objective = |b: &Array1<f64>| -> f64 {
        let mut z = x.dot(b);
        if let Some(o) = offset {
            z += o;
        }
        let mut acc = KahanSum::new();
        for i in 0..n {
            acc.add(log1p_exp(z[i]) - y[i] * z[i]);
        }
        acc.value() / nf + 0.5 * ridge * b.dot(b)
    };
    let mut f_cur = objective(&beta);
    let mut status = NewtonStatus::MaxIter;
    let mut iters = 0usize;
    for it in 1..=max_iter {
        iters = it;
        let mut z = x.dot(&beta);
        if let Some(o) = offset {
            z += o;
        }
        let mu = z.mapv(sigmoid);
        let resid = &mu - y;
        let mut grad = resid.dot(x) / nf;
        grad.scaled_add(ridge, &beta);
        let gnorm = grad.dot(&grad).sqrt();
        if gnorm <= tol {
            status = NewtonStatus::Converged;
            break;
        }
        // weighted Gram matrix x^T W x / n + ridge I
        let mut a = nalgebra::DMatrix::zeros(p, p);
        for i in 0..n {
            // The floor keeps the Gram matrix nonsingular without stalling the
            // iteration before the divergence guard below can fire: a larger
            // floor inflates the Hessian once |z_i| is large, freezing the
            // coefficients just short of the separation threshold.
            let w = (mu[i] * (1.0 - mu[i])).max(1e-15);
            for r in 0..p {
                let xr = x[[i, r]] * w;
                for c in r..p {
                    a[(r, c)] += xr * x[[i, c]];
                }
            }
        }
        for r in 0..p {
            for c in r..p {
                let v = a[(r, c)] / nf + if r == c { ridge } else { 0.0 };
                a[(r, c)] = v;
                a[(c, r)] = v;
            }
        }
        let g = nalgebra::DVector::from_fn(p, |i, _| grad[i]);
        let step = solve_spd(&a, &g);
        let dir = Array1::from_iter(step.iter().copied());

        // step halving
        let mut t = 1.0f64;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = &beta - &(t * &dir);
            let f_cand = objective(&cand);
            if f_cand <= f_cur {
                beta = cand;
                f_cur = f_cand;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            status = NewtonStatus::Converged; // objective flat to working precision
            break;
        }
    }
    // An unpenalized fit that ran past the divergence guard is separated,
    // whether or not a gradient tolerance fired on the way out.
    if ridge == 0.0 && beta.iter().any(|b| b.abs() > 30.0) {
        status = NewtonStatus::Separated;
    }
    (beta, status, iters)
}

/// Median of a sample (averaging the middle pair), NaN for empty input.
pub fn median(xs: &[f64]) -> f64 {
    quantile(xs, 0.5)
}

/// Linear-interpolation quantile, `q` in [0, 1].
pub fn quantile(xs: &[f64], q: f64) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    let mut v = xs.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    if lo == hi {
        v[lo]
    } else {
        let w = pos - lo as f64;
        v[lo] * (1.0 - w) + v[hi] * w
    }
}
