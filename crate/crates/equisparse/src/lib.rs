//! Tree-guided feature aggregation for high-dimensional regression.
//!
//! Fits linear and logistic models under a hierarchical penalty that pulls
//! coefficients within tree-node groups toward their common mean, so that at
//! strong enough penalty levels whole subtrees collapse to a single fitted
//! value and features aggregate into sums.  The crate bundles the penalized
//! solvers, penalty-level tuning, baseline estimators, simulation scenarios,
//! post-selection inference for binary outcomes, and a command-line
//! interface over stable CSV/TSV/JSON formats.

pub mod baselines;
pub mod bench;
pub mod cli;
pub mod error;
pub mod inference;
pub mod io;
pub mod linalg;
pub mod penalty;
pub mod select;
pub mod simulate;
pub mod solver;
pub mod tree;

pub use error::{Error, Result};
