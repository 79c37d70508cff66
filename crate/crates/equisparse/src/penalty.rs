//! The tree-guided aggregation penalty and its exact proximal operator.
//!
//! For a guide tree with internal nodes `I`, leaf-count `a_l` per node, and
//! nonnegative node weights `w_l`, the penalty of a coefficient vector
//! `beta` is
//!
//! ```text
//! Omega(beta) = sum over internal l of  w_l * || beta_{A_l} - mean(beta_{A_l}) ||_2
//! ```
//!
//! i.e. each internal node charges the Euclidean deviation of its covered
//! coefficients from their mean. Omega is a seminorm; it vanishes exactly on
//! vectors constant within every root's leaf set, which is what drives
//! fitted coefficients to aggregate along the tree.
//!
//! The proximal map `argmin_b 0.5 ||b - eta||^2 + lam * Omega(b)` has an
//! exact non-iterative evaluation: sweep the internal nodes one depth layer
//! at a time from the deepest layer up to the roots, and at each node shrink
//! the covered block toward its mean,
//!
//! ```text
//! v  ->  m + max(0, 1 - t/s) * (v - m),    m = mean(v), s = ||v - m||_2,
//! ```
//!
//! with per-node threshold `t = lam * w_l` (block soft-thresholding of the
//! centered part; the block collapses to its mean when `t >= s`). Same-depth
//! nodes cover disjoint blocks, and a shallower node's update commutes with
//! the already-shrunk deeper blocks, so one bottom-up pass is exact.
//!
//! Every update preserves the block sum, so the grand sum of `eta` survives
//! the whole pass; means and deviations accumulate through compensated
//! summation to keep that true at the 1e-12 level even for 10^4 features.

use crate::error::{Error, Result};
use crate::linalg::KahanSum;
use crate::tree::Tree;

/// Relative tolerance used by partition extraction when deciding that a
/// fitted block is constant.
pub const DEFAULT_MERGE_TOL: f64 = 1e-8;

/// Default node weights `w_l = a_l^{-1/2}`; entries for leaves are zero and
/// never read.
pub fn default_weights(tree: &Tree) -> Vec<f64> {
    (0..tree.n_nodes())
        .map(|i| {
            if tree.is_leaf(i) {
                0.0
            } else {
                1.0 / (tree.a(i) as f64).sqrt()
            }
        })
        .collect()
}

/// A guide tree together with validated per-node penalty weights.
#[derive(Debug, Clone)]
pub struct PenaltySpec {
    tree: Tree,
    weights: Vec<f64>,
}

impl PenaltySpec {
    /// Weights `a_l^{-1/2}` on every internal node.
    pub fn with_default_weights(tree: Tree) -> PenaltySpec {
        let weights = default_weights(&tree);
        PenaltySpec { tree, weights }
    }

    /// Custom weights, one entry per node; leaf entries are ignored and
    /// internal entries must be nonnegative and finite.
    pub fn new(tree: Tree, weights: Vec<f64>) -> Result<PenaltySpec> {
        if weights.len() != tree.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "weights: expected one per node ({}), got {}",
                tree.n_nodes(),
                weights.len()
            )));
        }
        let mut w = weights;
        for i in 0..tree.n_nodes() {
            if tree.is_leaf(i) {
                w[i] = 0.0;
            } else if !(w[i].is_finite() && w[i] >= 0.0) {
                return Err(Error::NegativeWeight {
                    node: tree.id(i).to_string(),
                    weight: w[i],
                });
            }
        }
        Ok(PenaltySpec { tree, weights: w })
    }

    pub fn tree(&self) -> &Tree {
        &self.tree
    }

    pub fn weight(&self, node: usize) -> f64 {
        self.weights[node]
    }

    /// Penalty value for a coefficient vector in original column order.
    pub fn omega(&self, beta: &[f64]) -> Result<f64> {
        if beta.len() != self.tree.p() {
            return Err(Error::DimensionMismatch(format!(
                "beta has {} entries, tree has {} leaves",
                beta.len(),
                self.tree.p()
            )));
        }
        let perm = self.tree.to_permuted_order(beta);
        Ok(self.omega_permuted(&perm))
    }

    /// Penalty value for a vector already in permuted leaf order.
    pub fn omega_permuted(&self, v: &[f64]) -> f64 {
        let mut total = KahanSum::new();
        for &node in self.tree.internal() {
            let (s, e) = self.tree.leaf_range(node);
            total.add(self.weights[node] * centered_norm(&v[s..e]));
        }
        total.value()
    }

    /// Exact proximal map of `lam * Omega` at `eta` (original column order).
    pub fn prox(&self, lam: f64, eta: &[f64]) -> Result<Vec<f64>> {
        if lam < 0.0 {
            return Err(Error::NegativeLambda(lam));
        }
        if eta.len() != self.tree.p() {
            return Err(Error::DimensionMismatch(format!(
                "eta has {} entries, tree has {} leaves",
                eta.len(),
                self.tree.p()
            )));
        }
        let mut v = self.tree.to_permuted_order(eta);
        self.prox_permuted_inplace(lam, &mut v);
        Ok(self.tree.to_original_order(&v))
    }

    /// In-place prox on a permuted-order vector: one bottom-up sweep over the
    /// depth layers, block-shrinking each internal node's contiguous range.
    pub fn prox_permuted_inplace(&self, lam: f64, v: &mut [f64]) {
        if lam == 0.0 {
            return;
        }
        for layer in self.tree.layers_internal().iter().rev() {
            for &node in layer {
                let (s, e) = self.tree.leaf_range(node);
                group_shrink_inplace(&mut v[s..e], lam * self.weights[node]);
            }
        }
    }
}

/// Euclidean norm of the deviation of `v` from its mean, with compensated
/// accumulation.
fn centered_norm(v: &[f64]) -> f64 {
    let m = kahan_mean(v);
    let mut ss = KahanSum::new();
    for &x in v {
        let d = x - m;
        ss.add(d * d);
    }
    ss.value().sqrt()
}

#[inline]
pub(crate) fn kahan_mean(v: &[f64]) -> f64 {
    let mut s = KahanSum::new();
    for &x in v {
        s.add(x);
    }
    s.value() / v.len() as f64
}

/// Single-block shrink toward the mean: `v -> m + max(0, 1 - t/s)(v - m)`.
/// Preserves the block sum; collapses to the mean when `t >= s` or the block
/// is already constant.
fn group_shrink_inplace(v: &mut [f64], threshold: f64) {
    if threshold <= 0.0 || v.len() < 2 {
        return; // single entries and unweighted nodes contribute nothing
    }
    let m = kahan_mean(v);
    let mut ss = KahanSum::new();
    for &x in v.iter() {
        let d = x - m;
        ss.add(d * d);
    }
    let s = ss.value().sqrt();
    if s <= threshold {
        for x in v.iter_mut() {
            *x = m;
        }
    } else {
        let c = 1.0 - threshold / s;
        for x in v.iter_mut() {
            *x = m + c * (*x - m);
        }
    }
}

/// Pure single-node update on a full vector: shrinks the contiguous block
/// `group` toward its mean with the given threshold and returns the result.
pub fn prox_group_update(
    beta0: &[f64],
    group: std::ops::Range<usize>,
    threshold: f64,
) -> Result<Vec<f64>> {
    if threshold < 0.0 {
        return Err(Error::NegativeLambda(threshold));
    }
    if group.end > beta0.len() || group.start > group.end {
        return Err(Error::DimensionMismatch(format!(
            "group {}..{} out of bounds for vector of length {}",
            group.start,
            group.end,
            beta0.len()
        )));
    }
    let mut out = beta0.to_vec();
    group_shrink_inplace(&mut out[group], threshold);
    Ok(out)
}
