//! Deterministic generation of trees, coefficients, designs, and responses
//! for the packaged simulation studies.
//!
//! Every generator is a pure function of `(config, seed)`.  Randomness comes
//! from counter-based ChaCha streams keyed by a seed and a stream id, so the
//! design, effect, noise, tree, fold, and fission draws are mutually
//! independent and replications can run concurrently without shared state.

use ndarray::{Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::select::Partition;
use crate::solver::LossKind;
use crate::tree::{aggregating_set_from_nodes, delete_internal_nodes, AggregatingSet, Tree};

/// Stream ids separating independent random sources under one seed.
pub mod streams {
    /// Design-matrix entries.
    pub const DESIGN: u64 = 1;
    /// Group effect magnitudes.
    pub const EFFECTS: u64 = 2;
    /// Response noise / Bernoulli draws.
    pub const NOISE: u64 = 3;
    /// Random tree structure (latent points, subtree shapes).
    pub const TREE: u64 = 4;
    /// Cross-validation fold shuffling.
    pub const FOLDS: u64 = 5;
    /// Response-splitting perturbations.
    pub const FISSION: u64 = 6;
}

/// A seeded generator on its own stream.
pub fn rng_for(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Derives an independent child seed (replication or split index) from a
/// base seed via one round of splitmix64 mixing.
pub fn derive_seed(seed: u64, salt: u64) -> u64 {
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `k` group effects: magnitudes iid Uniform(1.5, 2.5) with strictly
/// alternating signs, starting positive.
pub fn gen_effects(k: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_for(seed, streams::EFFECTS);
    (0..k)
        .map(|i| {
            let mag: f64 = rng.random_range(1.5..2.5);
            if i % 2 == 0 {
                mag
            } else {
                -mag
            }
        })
        .collect()
}

/// `n x p` design with iid Poisson(rate) entries, stored dense, filled in
/// row-major order.
pub fn gen_design(n: usize, p: usize, rate: f64, seed: u64) -> Result<Array2<f64>> {
    if !(rate.is_finite() && rate > 0.0) {
        return Err(Error::OutOfRange(rate));
    }
    let pois = Poisson::new(rate).map_err(|_| Error::OutOfRange(rate))?;
    let mut rng = rng_for(seed, streams::DESIGN);
    let mut x = Array2::<f64>::zeros((n, p));
    for i in 0..n {
        for j in 0..p {
            x[[i, j]] = pois.sample(&mut rng);
        }
    }
    Ok(x)
}

/// Draws a response for the given design and true coefficients.
///
/// Squared loss: `y = X beta* + sigma z` with
/// `sigma^2 = ||X beta*||^2 / (snr_divisor * n)` (error when the signal is
/// identically zero, since the noise scale is then undefined).  Logistic
/// loss: independent Bernoulli draws with success probability
/// `sigmoid(x_i' beta*)`.  Returns the response and, for the squared loss,
/// the noise scale used.
pub fn gen_response(
    x: &Array2<f64>,
    beta_star: &[f64],
    kind: LossKind,
    snr_divisor: f64,
    seed: u64,
) -> Result<(Array1<f64>, Option<f64>)> {
    if beta_star.len() != x.ncols() {
        return Err(Error::DimensionMismatch(format!(
            "design has {} columns but true coefficients have {}",
            x.ncols(),
            beta_star.len()
        )));
    }
    if !(snr_divisor.is_finite() && snr_divisor > 0.0) {
        return Err(Error::OutOfRange(snr_divisor));
    }
    let b = Array1::from_vec(beta_star.to_vec());
    let signal = x.dot(&b);
    let mut rng = rng_for(seed, streams::NOISE);
    match kind {
        LossKind::Squared => {
            let ss: f64 = signal.iter().map(|s| s * s).sum();
            if ss == 0.0 {
                return Err(Error::ZeroSignal);
            }
            let sigma = (ss / (snr_divisor * x.nrows() as f64)).sqrt();
            let y = Array1::from_iter(signal.iter().map(|&s| {
                let z: f64 = StandardNormal.sample(&mut rng);
                s + sigma * z
            }));
            Ok((y, Some(sigma)))
        }
        LossKind::Logistic => {
            let y = Array1::from_iter(signal.iter().map(|&s| {
                let u: f64 = rng.random();
                if u < crate::linalg::sigmoid(s) {
                    1.0
                } else {
                    0.0
                }
            }));
            Ok((y, None))
        }
    }
}

/// True data-generating structure: guiding tree, true coefficients, and the
/// designated aggregating set whose groups the coefficients are constant on.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub tree: Tree,
    pub beta_star: Vec<f64>,
    pub aggregating: AggregatingSet,
}

impl GroundTruth {
    pub fn p(&self) -> usize {
        self.tree.p()
    }

    pub fn k(&self) -> usize {
        self.aggregating.partition.n_groups()
    }

    pub fn partition_star(&self) -> &Partition {
        &self.aggregating.partition
    }
}

fn beta_from_partition(partition: &Partition, effects: &[f64]) -> Vec<f64> {
    partition
        .labels()
        .iter()
        .map(|&g| effects[g])
        .collect()
}

type Edge = (String, Option<String>, Option<usize>);

fn leaf_edge(parent: &str, col: usize) -> Edge {
    (format!("x{col}"), Some(parent.to_string()), Some(col))
}

fn inner_edge(id: &str, parent: &str) -> Edge {
    (id.to_string(), Some(parent.to_string()), None)
}

/// Edges of the full first-experiment tree: 60 leaves in 10 true groups
/// (five groups of nine, five of three), each group refined by a binary
/// subtree, and a two-level structure above the group nodes.
fn exp1_edges() -> Vec<Edge> {
    let mut e: Vec<Edge> = vec![("r".to_string(), None, None)];
    e.push(inner_edge("a1", "r"));
    e.push(inner_edge("a2", "r"));
    e.push(inner_edge("b1", "a1"));
    e.push(inner_edge("b2", "a1"));
    e.push(inner_edge("b3", "a2"));
    e.push(inner_edge("b4", "a2"));
    let group_parent = |g: usize| -> &'static str {
        match g {
            0 | 1 => "b1",
            2 | 3 => "b2",
            4 | 5 => "b3",
            6 | 7 => "b4",
            8 => "a1",
            _ => "a2",
        }
    };
    for g in 0..10usize {
        let gid = format!("g{g}");
        e.push(inner_edge(&gid, group_parent(g)));
        if g < 5 {
            // nine leaves refined by seven internal nodes
            let c = 9 * g;
            let u = |j: usize| format!("{gid}u{j}");
            e.push(inner_edge(&u(0), &gid));
            e.push(inner_edge(&u(2), &u(0)));
            e.push(leaf_edge(&u(2), c));
            e.push(leaf_edge(&u(2), c + 1));
            e.push(inner_edge(&u(3), &u(0)));
            e.push(leaf_edge(&u(3), c + 2));
            e.push(leaf_edge(&u(3), c + 3));
            e.push(inner_edge(&u(1), &gid));
            e.push(inner_edge(&u(4), &u(1)));
            e.push(leaf_edge(&u(4), c + 4));
            e.push(leaf_edge(&u(4), c + 5));
            e.push(inner_edge(&u(5), &u(1)));
            e.push(inner_edge(&u(6), &u(5)));
            e.push(leaf_edge(&u(6), c + 6));
            e.push(leaf_edge(&u(6), c + 7));
            e.push(leaf_edge(&u(5), c + 8));
        } else {
            // three leaves refined by one internal node
            let c = 45 + 3 * (g - 5);
            let v = format!("{gid}v0");
            e.push(inner_edge(&v, &gid));
            e.push(leaf_edge(&v, c));
            e.push(leaf_edge(&v, c + 1));
            e.push(leaf_edge(&gid, c + 2));
        }
    }
    e
}

/// Internal nodes strictly below the group level, grouped by owning group in
/// declaration order; used to pick deletion victims round-robin across the
/// groups so structure loss is spread evenly.
fn exp1_below_victims(count: usize) -> Vec<String> {
    let per_group: Vec<Vec<String>> = (0..10usize)
        .map(|g| {
            let gid = format!("g{g}");
            if g < 5 {
                ["u0", "u2", "u3", "u1", "u4", "u5", "u6"]
                    .iter()
                    .map(|s| format!("{gid}{s}"))
                    .collect()
            } else {
                vec![format!("{gid}v0")]
            }
        })
        .collect();
    let mut out = Vec::with_capacity(count);
    let mut round = 0usize;
    while out.len() < count {
        let mut advanced = false;
        for group in &per_group {
            if out.len() == count {
                break;
            }
            if round < group.len() {
                out.push(group[round].clone());
                advanced = true;
            }
        }
        if !advanced {
            break;
        }
        round += 1;
    }
    out
}

/// First-experiment guiding tree, variant `0..=5`: 0 is the full tree;
/// 1, 2, 3 delete 10, 20, 30 internal nodes below the group level
/// (round-robin across groups); 4, 5 delete 3, 6 internal nodes above it.
/// Every variant keeps all ten group nodes.
pub fn gen_tree_exp1(variant: usize) -> Result<Tree> {
    let full = Tree::from_edges(&exp1_edges())?;
    let victim_ids: Vec<String> = match variant {
        0 => Vec::new(),
        1 => exp1_below_victims(10),
        2 => exp1_below_victims(20),
        3 => exp1_below_victims(30),
        4 => ["a1", "a2", "b1"].iter().map(|s| s.to_string()).collect(),
        5 => ["a1", "a2", "b1", "b2", "b3", "b4"]
            .iter()
            .map(|s| s.to_string())
            .collect(),
        _ => return Err(Error::UnknownVariant(format!("tree variant {variant}"))),
    };
    if victim_ids.is_empty() {
        return Ok(full);
    }
    let victims: Vec<usize> = victim_ids
        .iter()
        .map(|id| full.node_by_id(id).expect("victim ids exist in the full tree"))
        .collect();
    delete_internal_nodes(&full, &victims)
}

/// Ground truth of the first experiment: the variant tree with the ten
/// group nodes as the aggregating set and seeded alternating-sign effects.
pub fn ground_truth_exp1(variant: usize, seed: u64) -> Result<GroundTruth> {
    let tree = gen_tree_exp1(variant)?;
    let nodes: Vec<usize> = (0..10usize)
        .map(|g| {
            tree.node_by_id(&format!("g{g}"))
                .expect("group nodes survive every variant")
        })
        .collect();
    let aggregating = aggregating_set_from_nodes(&tree, &nodes)?;
    let effects = gen_effects(10, seed);
    let beta_star = beta_from_partition(&aggregating.partition, &effects);
    Ok(GroundTruth {
        tree,
        beta_star,
        aggregating,
    })
}

/// A rooted binary shape with a given number of leaves; splits drawn
/// uniformly so one shape can be replicated under many group nodes.
#[derive(Debug, Clone)]
enum Shape {
    Leaf,
    Node(Box<Shape>, Box<Shape>),
}

fn random_shape(size: usize, rng: &mut ChaCha8Rng) -> Shape {
    if size == 1 {
        Shape::Leaf
    } else {
        let left = rng.random_range(1..size);
        Shape::Node(
            Box::new(random_shape(left, rng)),
            Box::new(random_shape(size - left, rng)),
        )
    }
}

fn emit_shape_under(
    shape: &Shape,
    parent: &str,
    gid: &str,
    counter: &mut usize,
    col: &mut usize,
    edges: &mut Vec<Edge>,
) {
    match shape {
        Shape::Leaf => {
            edges.push(leaf_edge(parent, *col));
            *col += 1;
        }
        Shape::Node(l, r) => {
            let id = format!("{gid}n{}", *counter);
            *counter += 1;
            edges.push(inner_edge(&id, parent));
            emit_shape_under(l, &id, gid, counter, col, edges);
            emit_shape_under(r, &id, gid, counter, col, edges);
        }
    }
}

/// Emits one group subtree and returns the id of its aggregating node: the
/// group node `gid` when the shape has several leaves, or the single leaf
/// itself when the shape is one leaf.
fn emit_group(
    shape: &Shape,
    parent: &str,
    gid: &str,
    col: &mut usize,
    edges: &mut Vec<Edge>,
) -> String {
    match shape {
        Shape::Leaf => {
            let id = format!("x{}", *col);
            edges.push(leaf_edge(parent, *col));
            *col += 1;
            id
        }
        Shape::Node(l, r) => {
            edges.push(inner_edge(gid, parent));
            let mut counter = 0usize;
            emit_shape_under(l, gid, gid, &mut counter, col, edges);
            emit_shape_under(r, gid, gid, &mut counter, col, edges);
            gid.to_string()
        }
    }
}

/// Second-experiment ground truth: a fixed structure above (root over four
/// mid-level nodes, five group nodes each, so 20 true groups) with one
/// seeded random binary subtree of `p_s` leaves replicated under every
/// group node; `p = 20 * p_s`.
pub fn gen_tree_exp2(p_s: usize, seed: u64) -> Result<GroundTruth> {
    if p_s == 0 {
        return Err(Error::EmptyInput);
    }
    let mut rng = rng_for(seed, streams::TREE);
    let shape = random_shape(p_s, &mut rng);
    let mut edges: Vec<Edge> = vec![("r".to_string(), None, None)];
    let mut col = 0usize;
    let mut agg_ids = Vec::with_capacity(20);
    for m in 0..4usize {
        let mid = format!("m{m}");
        edges.push(inner_edge(&mid, "r"));
        for t in 0..5usize {
            let k = 5 * m + t;
            agg_ids.push(emit_group(&shape, &mid, &format!("g{k}"), &mut col, &mut edges));
        }
    }
    let tree = Tree::from_edges(&edges)?;
    let nodes: Vec<usize> = agg_ids
        .iter()
        .map(|id| tree.node_by_id(id).expect("emitted ids exist"))
        .collect();
    let aggregating = aggregating_set_from_nodes(&tree, &nodes)?;
    let effects = gen_effects(20, seed);
    let beta_star = beta_from_partition(&aggregating.partition, &effects);
    Ok(GroundTruth {
        tree,
        beta_star,
        aggregating,
    })
}

/// Average-linkage agglomeration over 2-D points.
///
/// Returns the `m - 1` merges as pairs of cluster indices, where indices
/// `0..m` are the original items and `m + t` is the cluster created by merge
/// `t`.  Cluster distances follow the average-linkage (UPGMA) rule — the
/// mean pairwise distance between member points — maintained incrementally
/// via the Lance–Williams update.  Ties break toward the lexicographically
/// smallest index pair, making the dendrogram deterministic.
pub(crate) fn average_linkage(points: &[[f64; 2]]) -> Vec<(usize, usize)> {
    let m = points.len();
    if m <= 1 {
        return Vec::new();
    }
    let total = 2 * m - 1;
    let mut dist = vec![f64::INFINITY; total * total];
    let mut size = vec![0usize; total];
    let mut active = vec![false; total];
    for i in 0..m {
        size[i] = 1;
        active[i] = true;
    }
    for i in 0..m {
        for j in (i + 1)..m {
            let dx = points[i][0] - points[j][0];
            let dy = points[i][1] - points[j][1];
            let d = (dx * dx + dy * dy).sqrt();
            dist[i * total + j] = d;
            dist[j * total + i] = d;
        }
    }
    let mut merges = Vec::with_capacity(m - 1);
    for t in 0..(m - 1) {
        let act: Vec<usize> = (0..m + t).filter(|&i| active[i]).collect();
        let mut best = (f64::INFINITY, usize::MAX, usize::MAX);
        for (pos, &i) in act.iter().enumerate() {
            for &j in &act[pos + 1..] {
                let d = dist[i * total + j];
                if d < best.0 {
                    best = (d, i, j);
                }
            }
        }
        let (_, a, b) = best;
        let new = m + t;
        for &k in &act {
            if k == a || k == b {
                continue;
            }
            let d = (size[a] as f64 * dist[a * total + k] + size[b] as f64 * dist[b * total + k])
                / (size[a] + size[b]) as f64;
            dist[new * total + k] = d;
            dist[k * total + new] = d;
        }
        size[new] = size[a] + size[b];
        active[a] = false;
        active[b] = false;
        active[new] = true;
        merges.push((a, b));
    }
    merges
}

/// Converts a merge sequence into parent-child rows in root-first
/// depth-first order.  The final merge is named `root_id`; other merges get
/// `internal_prefix` plus their merge index.
fn merge_tree_rows(
    leaf_ids: &[String],
    merges: &[(usize, usize)],
    internal_prefix: &str,
    root_id: &str,
) -> Vec<(String, Option<String>)> {
    let m = leaf_ids.len();
    if m == 1 {
        return vec![(leaf_ids[0].clone(), None)];
    }
    let id_of = |c: usize| -> String {
        if c < m {
            leaf_ids[c].clone()
        } else if c == m + merges.len() - 1 {
            root_id.to_string()
        } else {
            format!("{internal_prefix}{}", c - m)
        }
    };
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); m + merges.len()];
    for (t, &(a, b)) in merges.iter().enumerate() {
        children[m + t] = vec![a, b];
    }
    let mut rows = Vec::with_capacity(m + merges.len());
    let mut stack: Vec<(usize, Option<usize>)> = vec![(m + merges.len() - 1, None)];
    while let Some((c, parent)) = stack.pop() {
        rows.push((id_of(c), parent.map(&id_of)));
        for &ch in children[c].iter().rev() {
            stack.push((ch, Some(c)));
        }
    }
    rows
}

/// Scenario ground truth built by two-stage hierarchical clustering.
///
/// The first `K/2` groups take `3p/(2K)` consecutive columns each and the
/// remaining `K/2` take `p/(2K)`; both sizes must be integers.  Each column
/// draws a latent standard-normal point in the plane; average-linkage
/// clustering within each group builds that group's subtree, and
/// average-linkage over the group centroids builds the structure above, so
/// the prescribed groups are exactly the subtree roots of the designated
/// aggregating set.
pub fn gen_tree_hclust(p: usize, k: usize, seed: u64) -> Result<GroundTruth> {
    if k < 2 || k % 2 != 0 || k > p || p % (2 * k) != 0 {
        return Err(Error::IndivisibleSizes { p, k });
    }
    let small = p / (2 * k);
    let big = 3 * small;
    let mut rng = rng_for(seed, streams::TREE);
    let points: Vec<[f64; 2]> = (0..p)
        .map(|_| {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            [a, b]
        })
        .collect();

    let mut groups: Vec<std::ops::Range<usize>> = Vec::with_capacity(k);
    let mut start = 0usize;
    for g in 0..k {
        let sz = if g < k / 2 { big } else { small };
        groups.push(start..start + sz);
        start += sz;
    }

    let mut group_root_ids = Vec::with_capacity(k);
    let mut centroids = Vec::with_capacity(k);
    let mut group_rows: Vec<Vec<(String, Option<String>)>> = Vec::with_capacity(k);
    for (g, range) in groups.iter().enumerate() {
        let sub: Vec<[f64; 2]> = range.clone().map(|j| points[j]).collect();
        let len = sub.len() as f64;
        centroids.push([
            sub.iter().map(|q| q[0]).sum::<f64>() / len,
            sub.iter().map(|q| q[1]).sum::<f64>() / len,
        ]);
        let leaf_ids: Vec<String> = range.clone().map(|j| format!("x{j}")).collect();
        if range.len() == 1 {
            group_root_ids.push(leaf_ids[0].clone());
            group_rows.push(Vec::new());
        } else {
            let merges = average_linkage(&sub);
            group_root_ids.push(format!("g{g}"));
            group_rows.push(merge_tree_rows(
                &leaf_ids,
                &merges,
                &format!("g{g}n"),
                &format!("g{g}"),
            ));
        }
    }

    let top_merges = average_linkage(&centroids);
    let top_rows = merge_tree_rows(&group_root_ids, &top_merges, "t", "r");

    let to_edge = |(id, parent): (String, Option<String>)| -> Edge {
        let col = id.strip_prefix('x').and_then(|s| s.parse::<usize>().ok());
        (id, parent, col)
    };
    let mut edges: Vec<Edge> = top_rows.into_iter().map(to_edge).collect();
    for rows in group_rows {
        // the group root's row came from the top tree; keep descendants only
        edges.extend(rows.into_iter().filter(|(_, p)| p.is_some()).map(to_edge));
    }

    let tree = Tree::from_edges(&edges)?;
    let nodes: Vec<usize> = group_root_ids
        .iter()
        .map(|id| tree.node_by_id(id).expect("group roots exist"))
        .collect();
    let aggregating = aggregating_set_from_nodes(&tree, &nodes)?;
    let effects = gen_effects(k, seed);
    let beta_star = beta_from_partition(&aggregating.partition, &effects);
    Ok(GroundTruth {
        tree,
        beta_star,
        aggregating,
    })
}

/// Named simulation scenario.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Fixed 60-feature tree with deletion variants, gaussian response.
    Exp1,
    /// Replicated random subtrees under 20 fixed groups, gaussian response.
    Exp2,
    /// Clustered tree, 100 features, 50 observations, gaussian response.
    S1,
    /// Clustered tree with `p = 4K`, gaussian response.
    S2,
    /// Clustered tree with 20 groups and growing dimension, binary response.
    S3,
}

impl std::str::FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "exp1" => Ok(Scenario::Exp1),
            "exp2" => Ok(Scenario::Exp2),
            "s1" => Ok(Scenario::S1),
            "s2" => Ok(Scenario::S2),
            "s3" => Ok(Scenario::S3),
            _ => Err(Error::UnknownVariant(format!("scenario `{s}`"))),
        }
    }
}

impl std::fmt::Display for Scenario {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Scenario::Exp1 => "exp1",
            Scenario::Exp2 => "exp2",
            Scenario::S1 => "s1",
            Scenario::S2 => "s2",
            Scenario::S3 => "s3",
        };
        write!(f, "{s}")
    }
}

/// Full simulation configuration; a pure function of its fields.
#[derive(Debug, Clone, Serialize)]
pub struct SimConfig {
    pub scenario: Scenario,
    pub n: usize,
    pub p: usize,
    pub k: usize,
    pub seed: u64,
    pub poisson_rate: f64,
    pub snr_divisor: f64,
    /// First-experiment tree variant (0..=5); ignored elsewhere.
    pub tree_variant: usize,
}

impl SimConfig {
    /// Desk-scale defaults per scenario.
    pub fn for_scenario(scenario: Scenario, seed: u64) -> SimConfig {
        let (n, p, k) = match scenario {
            Scenario::Exp1 => (50, 60, 10),
            Scenario::Exp2 => (50, 60, 20),
            Scenario::S1 => (50, 100, 10),
            Scenario::S2 => (50, 120, 30),
            Scenario::S3 => (50, 400, 20),
        };
        SimConfig {
            scenario,
            n,
            p,
            k,
            seed,
            poisson_rate: 0.02,
            snr_divisor: 5.0,
            tree_variant: 0,
        }
    }

    /// Response family implied by the scenario.
    pub fn loss_kind(&self) -> LossKind {
        match self.scenario {
            Scenario::S3 => LossKind::Logistic,
            _ => LossKind::Squared,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 || self.p == 0 || self.k == 0 {
            return Err(Error::EmptyInput);
        }
        if self.k > self.p {
            return Err(Error::DimensionMismatch(format!(
                "{} groups cannot partition {} features",
                self.k, self.p
            )));
        }
        if !(self.poisson_rate.is_finite() && self.poisson_rate > 0.0) {
            return Err(Error::OutOfRange(self.poisson_rate));
        }
        if !(self.snr_divisor.is_finite() && self.snr_divisor > 0.0) {
            return Err(Error::OutOfRange(self.snr_divisor));
        }
        match self.scenario {
            Scenario::Exp1 => {
                if self.p != 60 || self.k != 10 {
                    return Err(Error::DimensionMismatch(format!(
                        "the first experiment is fixed at p = 60, K = 10 (got p = {}, K = {})",
                        self.p, self.k
                    )));
                }
                if self.tree_variant > 5 {
                    return Err(Error::UnknownVariant(format!(
                        "tree variant {}",
                        self.tree_variant
                    )));
                }
            }
            Scenario::Exp2 => {
                if self.p % 20 != 0 || self.k != 20 {
                    return Err(Error::DimensionMismatch(format!(
                        "the second experiment needs p divisible by 20 and K = 20 (got p = {}, K = {})",
                        self.p, self.k
                    )));
                }
            }
            Scenario::S1 => {
                if self.p != 100 || self.n != 50 {
                    return Err(Error::DimensionMismatch(format!(
                        "scenario s1 is fixed at p = 100, n = 50 (got p = {}, n = {})",
                        self.p, self.n
                    )));
                }
            }
            Scenario::S2 => {
                if self.p != 4 * self.k {
                    return Err(Error::DimensionMismatch(format!(
                        "scenario s2 needs p = 4K (got p = {}, K = {})",
                        self.p, self.k
                    )));
                }
            }
            // The binary scenario fixes the group count while the dimension
            // grows; the clustered-tree generator enforces divisibility.
            Scenario::S3 => {}
        }
        Ok(())
    }

    /// Generates the scenario's true structure from the configured seed.
    pub fn ground_truth(&self) -> Result<GroundTruth> {
        self.validate()?;
        match self.scenario {
            Scenario::Exp1 => ground_truth_exp1(self.tree_variant, self.seed),
            Scenario::Exp2 => gen_tree_exp2(self.p / 20, self.seed),
            Scenario::S1 | Scenario::S2 | Scenario::S3 => {
                gen_tree_hclust(self.p, self.k, self.seed)
            }
        }
    }

    /// Draws one design and response for an existing ground truth; distinct
    /// `draw_seed` values give independent draws (train/validation/test).
    pub fn draw(
        &self,
        truth: &GroundTruth,
        draw_seed: u64,
    ) -> Result<(Array2<f64>, Array1<f64>, Option<f64>)> {
        let x = gen_design(self.n, truth.p(), self.poisson_rate, draw_seed)?;
        let (y, sigma) =
            gen_response(&x, &truth.beta_star, self.loss_kind(), self.snr_divisor, draw_seed)?;
        Ok((x, y, sigma))
    }

    /// Ground truth plus one draw, both from the configured seed.
    pub fn generate(&self) -> Result<SimInstance> {
        let truth = self.ground_truth()?;
        let (x, y, sigma) = self.draw(&truth, self.seed)?;
        Ok(SimInstance {
            kind: self.loss_kind(),
            truth,
            x,
            y,
            sigma,
        })
    }
}

/// One generated dataset with its ground truth.
#[derive(Debug, Clone)]
pub struct SimInstance {
    pub truth: GroundTruth,
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    /// Noise scale actually used (gaussian response only).
    pub sigma: Option<f64>,
    pub kind: LossKind,
}
