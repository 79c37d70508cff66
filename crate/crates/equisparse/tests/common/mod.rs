//! Shared fixtures and independent reference implementations ("oracles")
//! used by the integration suites.  Everything here is written from the
//! mathematical definitions, deliberately avoiding the library's internal
//! layering, so agreement is evidence rather than tautology.

#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use equisparse::penalty::PenaltySpec;
use equisparse::solver::LossKind;
use equisparse::tree::Tree;

type Edge = (String, Option<String>, Option<usize>);

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Compensated (Kahan) sum, independent of the library's accumulator.
pub fn kahan_sum<I: IntoIterator<Item = f64>>(values: I) -> f64 {
    let mut s = 0.0f64;
    let mut c = 0.0f64;
    for v in values {
        let y = v - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

/// Random rooted tree (occasionally a two-root forest) over exactly `p`
/// features, depth at most `max_depth`, fanout 2..=4, with leaf columns
/// assigned in shuffled order so column order is independent of the
/// node layout.
pub fn random_tree_with_p(rng: &mut ChaCha8Rng, p: usize, max_depth: usize) -> Tree {
    assert!(p >= 1 && max_depth >= 1);
    let mut cols: Vec<usize> = (0..p).collect();
    cols.shuffle(rng);
    let mut edges: Vec<Edge> = Vec::new();
    let mut counter = 0usize;
    if p >= 4 && rng.random_bool(0.15) {
        let cut = rng.random_range(1..p);
        let (a, b) = cols.split_at(cut);
        grow(rng, a, None, max_depth, &mut counter, &mut edges);
        grow(rng, b, None, max_depth, &mut counter, &mut edges);
    } else {
        grow(rng, &cols, None, max_depth, &mut counter, &mut edges);
    }
    Tree::from_edges(&edges).expect("generated edges form a valid tree")
}

/// Random tree with 1..=max_p features.
pub fn random_tree(rng: &mut ChaCha8Rng, max_p: usize, max_depth: usize) -> Tree {
    let p = rng.random_range(1..=max_p);
    random_tree_with_p(rng, p, max_depth)
}

fn grow(
    rng: &mut ChaCha8Rng,
    cols: &[usize],
    parent: Option<String>,
    depth_left: usize,
    counter: &mut usize,
    edges: &mut Vec<Edge>,
) {
    let next_id = |c: &mut usize| {
        let id = format!("n{c}");
        *c += 1;
        id
    };
    if cols.len() == 1 {
        edges.push((next_id(counter), parent, Some(cols[0])));
        return;
    }
    let id = next_id(counter);
    edges.push((id.clone(), parent.clone(), None));
    if depth_left <= 1 {
        for &c in cols {
            edges.push((next_id(counter), Some(id.clone()), Some(c)));
        }
        return;
    }
    let parts = rng.random_range(2..=cols.len().min(4));
    // Random sorted interior cut points split `cols` into nonempty parts.
    let mut cuts: Vec<usize> = Vec::new();
    while cuts.len() < parts - 1 {
        let c = rng.random_range(1..cols.len());
        if !cuts.contains(&c) {
            cuts.push(c);
        }
    }
    cuts.sort_unstable();
    let mut start = 0usize;
    for &cut in cuts.iter().chain(std::iter::once(&cols.len())) {
        grow(
            rng,
            &cols[start..cut],
            Some(id.clone()),
            depth_left - 1,
            counter,
            edges,
        );
        start = cut;
    }
}

/// Internal-node blocks of a penalty: (member feature columns, weight).
pub fn penalty_blocks(spec: &PenaltySpec) -> Vec<(Vec<usize>, f64)> {
    let tree = spec.tree();
    tree.internal()
        .iter()
        .map(|&node| (tree.leaf_set(node), spec.weight(node)))
        .collect()
}

/// Penalty value computed from the block definition alone.
pub fn penalty_value(blocks: &[(Vec<usize>, f64)], beta: &[f64]) -> f64 {
    let mut total = 0.0;
    for (members, w) in blocks {
        let mean = members.iter().map(|&j| beta[j]).sum::<f64>() / members.len() as f64;
        let norm = members
            .iter()
            .map(|&j| (beta[j] - mean).powi(2))
            .sum::<f64>()
            .sqrt();
        total += w * norm;
    }
    total
}

/// Proximal objective 0.5 ||b - eta||^2 + t * Omega(b).
pub fn prox_objective(blocks: &[(Vec<usize>, f64)], t: f64, eta: &[f64], beta: &[f64]) -> f64 {
    let quad: f64 = beta
        .iter()
        .zip(eta)
        .map(|(b, e)| 0.5 * (b - e) * (b - e))
        .sum();
    quad + t * penalty_value(blocks, beta)
}

/// Shrinks one block toward its mean: the proximal map of
/// `threshold * ||centered||_2` restricted to `members`.
fn shrink_block(v: &mut [f64], members: &[usize], threshold: f64) {
    let mean = members.iter().map(|&j| v[j]).sum::<f64>() / members.len() as f64;
    let norm = members
        .iter()
        .map(|&j| (v[j] - mean).powi(2))
        .sum::<f64>()
        .sqrt();
    let scale = if norm > threshold {
        1.0 - threshold / norm
    } else {
        0.0
    };
    for &j in members {
        v[j] = mean + scale * (v[j] - mean);
    }
}

/// High-precision proximal-splitting oracle for the full penalty's
/// proximal map: consensus ADMM over the per-node terms, run to tiny
/// primal residual and objective stationarity.
pub fn splitting_prox_oracle(
    p: usize,
    blocks: &[(Vec<usize>, f64)],
    t: f64,
    eta: &[f64],
) -> Vec<f64> {
    if blocks.is_empty() || t == 0.0 {
        return eta.to_vec();
    }
    // The objective is positively homogeneous in (eta, t) jointly, so solve
    // at unit scale and rescale; the absolute stopping thresholds below then
    // deliver the same relative precision at every input scale.
    let scale = eta.iter().fold(t.abs(), |m, v| m.max(v.abs())).max(1e-300);
    let eta_s: Vec<f64> = eta.iter().map(|v| v / scale).collect();
    let t_s = t / scale;

    let m = blocks.len();
    let rho = 1.0f64;
    let mut beta = eta_s.clone();
    let mut z = vec![eta_s.clone(); m];
    let mut u = vec![vec![0.0f64; p]; m];
    let mut last_obj = f64::INFINITY;
    for it in 0..400_000usize {
        for j in 0..p {
            let s: f64 = (0..m).map(|l| z[l][j] - u[l][j]).sum();
            beta[j] = (eta_s[j] + rho * s) / (1.0 + rho * m as f64);
        }
        let mut primal = 0.0f64;
        let mut dual = 0.0f64;
        for l in 0..m {
            let prev = z[l].clone();
            for j in 0..p {
                z[l][j] = beta[j] + u[l][j];
            }
            shrink_block(&mut z[l], &blocks[l].0, t_s * blocks[l].1 / rho);
            for j in 0..p {
                dual = dual.max((z[l][j] - prev[j]).abs());
                let r = beta[j] - z[l][j];
                primal = primal.max(r.abs());
                u[l][j] += r;
            }
        }
        if it % 10 == 0 {
            let obj = prox_objective(blocks, t_s, &eta_s, &beta);
            let stationary = (last_obj - obj).abs() <= 1e-12 * (1.0 + obj.abs());
            last_obj = obj;
            if primal <= 1e-10 && dual <= 1e-10 && stationary {
                break;
            }
        }
    }
    beta.iter().map(|v| v * scale).collect()
}

/// Independent data-fit value: squared = ||y - Xb||^2 / (2n); logistic =
/// (1/n) sum log(1 + e^z) - y z with z = Xb.
pub fn oracle_loss(kind: LossKind, x: &Array2<f64>, y: &Array1<f64>, beta: &[f64]) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let mut total = 0.0f64;
    for i in 0..n {
        let mut z = 0.0f64;
        for j in 0..p {
            z += x[[i, j]] * beta[j];
        }
        match kind {
            LossKind::Squared => {
                let r = y[i] - z;
                total += 0.5 * r * r;
            }
            LossKind::Logistic => {
                // log(1 + e^z) evaluated stably for either sign of z.
                let softplus = if z > 0.0 {
                    z + (-z).exp().ln_1p()
                } else {
                    z.exp().ln_1p()
                };
                total += softplus - y[i] * z;
            }
        }
    }
    total / n as f64
}

/// Independent gradient of `oracle_loss`.
pub fn oracle_grad(kind: LossKind, x: &Array2<f64>, y: &Array1<f64>, beta: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let p = x.ncols();
    let mut g = vec![0.0f64; p];
    for i in 0..n {
        let mut z = 0.0f64;
        for j in 0..p {
            z += x[[i, j]] * beta[j];
        }
        let r = match kind {
            LossKind::Squared => z - y[i],
            LossKind::Logistic => 1.0 / (1.0 + (-z).exp()) - y[i],
        };
        for j in 0..p {
            g[j] += x[[i, j]] * r;
        }
    }
    for gj in &mut g {
        *gj /= n as f64;
    }
    g
}

/// Exact curvature bound via a dense symmetric eigendecomposition of
/// X'X (largest eigenvalue / n, quartered for the logistic loss).
pub fn oracle_lipschitz(kind: LossKind, x: &Array2<f64>) -> f64 {
    let n = x.nrows();
    let p = x.ncols();
    let mut gram = nalgebra::DMatrix::<f64>::zeros(p, p);
    for a in 0..p {
        for b in a..p {
            let mut s = 0.0;
            for i in 0..n {
                s += x[[i, a]] * x[[i, b]];
            }
            gram[(a, b)] = s;
            gram[(b, a)] = s;
        }
    }
    let eigen = gram.symmetric_eigen();
    let top = eigen.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
    match kind {
        LossKind::Squared => top / n as f64,
        LossKind::Logistic => top / (4.0 * n as f64),
    }
}

/// Plain (unaccelerated) proximal-gradient reference solver run at a
/// conservative half step; returns its final objective value computed
/// from the independent loss and penalty definitions.
pub fn ista_oracle(
    kind: LossKind,
    x: &Array2<f64>,
    y: &Array1<f64>,
    spec: &PenaltySpec,
    lambda: f64,
    iters: usize,
) -> f64 {
    let p = x.ncols();
    let blocks = penalty_blocks(spec);
    let step = 0.5 / oracle_lipschitz(kind, x).max(1e-12);
    let mut beta = vec![0.0f64; p];
    for _ in 0..iters {
        let g = oracle_grad(kind, x, y, &beta);
        let v: Vec<f64> = beta.iter().zip(&g).map(|(b, gj)| b - step * gj).collect();
        beta = spec
            .prox(lambda * step, &v)
            .expect("prox accepts in-range arguments");
    }
    oracle_loss(kind, x, y, &beta) + lambda * penalty_value(&blocks, &beta)
}
