//! Rooted forests that guide feature aggregation.
//!
//! A guide tree (more generally a forest) has one leaf per feature column and
//! any number of internal nodes. Each node covers the set of feature columns
//! found at the leaves of its subtree; by construction these covered sets
//! nest or are disjoint, never partially overlap. The penalty, the proximal
//! operator, and partition extraction all consume this structure.
//!
//! Internally the leaves are re-ordered once at construction (`leaf_perm`) so
//! that every node covers a contiguous range of permuted positions. Solvers
//! work in permuted order and convert back at the I/O boundary; `leaf_set`
//! always reports original column indices.

use crate::error::{Error, Result};
use crate::select::Partition;

/// Immutable rooted forest over feature columns.
///
/// Construction validates the structure completely; afterwards the tree is
/// read-only and safe to share across concurrent fits.
#[derive(Debug, Clone)]
pub struct Tree {
    ids: Vec<String>,
    parent: Vec<Option<usize>>,
    children: Vec<Vec<usize>>,
    leaf_col: Vec<Option<usize>>,
    depth: Vec<usize>,
    roots: Vec<usize>,
    internal: Vec<usize>,
    /// Internal nodes grouped by depth, shallowest first.
    layers_internal: Vec<Vec<usize>>,
    /// `leaf_perm[k]` = original feature column at permuted position `k`.
    leaf_perm: Vec<usize>,
    /// Per node: covered half-open range `[start, end)` in permuted positions.
    range: Vec<(usize, usize)>,
    p: usize,
}

impl Tree {
    /// Builds a tree from `(node_id, parent_id, leaf_col)` entries.
    ///
    /// Entry order matters twice: children keep the order in which they were
    /// declared, and roots keep declaration order; both feed the depth-first
    /// traversal that fixes the internal leaf permutation.
    pub fn from_edges(entries: &[(String, Option<String>, Option<usize>)]) -> Result<Tree> {
        if entries.is_empty() {
            return Err(Error::EmptyInput);
        }
        let n = entries.len();

        let mut index = std::collections::HashMap::with_capacity(n);
        for (i, (id, _, _)) in entries.iter().enumerate() {
            if index.insert(id.clone(), i).is_some() {
                return Err(Error::DuplicateNodeId(id.clone()));
            }
        }

        let mut parent = vec![None; n];
        let mut children: Vec<Vec<usize>> = vec![Vec::new(); n];
        for (i, (id, par, _)) in entries.iter().enumerate() {
            if let Some(pid) = par {
                let &pi = index.get(pid).ok_or_else(|| Error::DanglingParent {
                    node: id.clone(),
                    parent: pid.clone(),
                })?;
                parent[i] = Some(pi);
                children[pi].push(i);
            }
        }

        // Depths via parent chains; a chain that revisits a node is a cycle.
        let mut depth = vec![usize::MAX; n];
        let mut state = vec![0u8; n]; // 0 fresh, 1 on current chain, 2 done
        for start in 0..n {
            if state[start] == 2 {
                continue;
            }
            let mut chain = Vec::new();
            let mut node = start;
            loop {
                if state[node] == 1 {
                    return Err(Error::CycleDetected(entries[node].0.clone()));
                }
                if state[node] == 2 {
                    break;
                }
                state[node] = 1;
                chain.push(node);
                match parent[node] {
                    Some(q) => node = q,
                    None => break,
                }
            }
            // `node` is resolved (done or a root); unwind the chain.
            let mut d = if state[node] == 2 { depth[node] } else { 0 };
            if state[node] != 2 {
                // node is the root terminating this chain
                let last = chain.pop().expect("chain holds at least the root");
                debug_assert_eq!(last, node);
                depth[node] = 0;
                state[node] = 2;
            }
            for &m in chain.iter().rev() {
                d += 1;
                depth[m] = d;
                state[m] = 2;
            }
        }

        // Leaves carry feature columns, exactly one leaf per column 0..p-1.
        let mut leaf_col = vec![None; n];
        let p = (0..n).filter(|&i| children[i].is_empty()).count();
        let mut seen = vec![false; p];
        for (i, (id, _, col)) in entries.iter().enumerate() {
            let is_leaf = children[i].is_empty();
            match (is_leaf, *col) {
                (true, Some(c)) => {
                    if c >= p {
                        return Err(Error::TreeFormat {
                            line: i + 1,
                            msg: format!("leaf column {c} out of range for {p} leaves"),
                        });
                    }
                    if seen[c] {
                        return Err(Error::DuplicateLeafColumn(c));
                    }
                    seen[c] = true;
                    leaf_col[i] = Some(c);
                }
                (true, None) => return Err(Error::LeafWithoutColumn(id.clone())),
                (false, Some(_)) => return Err(Error::ColumnOnInternalNode(id.clone())),
                (false, None) => {}
            }
        }
        if let Some(c) = seen.iter().position(|&s| !s) {
            return Err(Error::MissingLeafColumn(c));
        }

        let roots: Vec<usize> = (0..n).filter(|&i| parent[i].is_none()).collect();

        // Depth-first walk (children in declaration order) assigns each node a
        // contiguous permuted range and builds the leaf permutation.
        let mut leaf_perm = Vec::with_capacity(p);
        let mut range = vec![(0usize, 0usize); n];
        let mut stack: Vec<(usize, bool)> = roots.iter().rev().map(|&r| (r, false)).collect();
        while let Some((node, expanded)) = stack.pop() {
            if expanded {
                let start = children[node]
                    .first()
                    .map(|&c| range[c].0)
                    .expect("expanded node has children");
                let end = children[node]
                    .last()
                    .map(|&c| range[c].1)
                    .expect("expanded node has children");
                range[node] = (start, end);
            } else if children[node].is_empty() {
                let pos = leaf_perm.len();
                leaf_perm.push(leaf_col[node].expect("leaf column validated"));
                range[node] = (pos, pos + 1);
            } else {
                stack.push((node, true));
                for &c in children[node].iter().rev() {
                    stack.push((c, false));
                }
            }
        }

        let internal: Vec<usize> = (0..n).filter(|&i| !children[i].is_empty()).collect();
        let max_depth = internal.iter().map(|&i| depth[i]).max().unwrap_or(0);
        let mut layers_internal = vec![Vec::new(); max_depth + 1];
        for &i in &internal {
            layers_internal[depth[i]].push(i);
        }

        Ok(Tree {
            ids: entries.iter().map(|(id, _, _)| id.clone()).collect(),
            parent,
            children,
            leaf_col,
            depth,
            roots,
            internal,
            layers_internal,
            leaf_perm,
            range,
            p,
        })
    }

    /// Number of feature columns (= leaves).
    pub fn p(&self) -> usize {
        self.p
    }

    /// Total node count, leaves included.
    pub fn n_nodes(&self) -> usize {
        self.ids.len()
    }

    pub fn id(&self, node: usize) -> &str {
        &self.ids[node]
    }

    pub fn node_by_id(&self, id: &str) -> Option<usize> {
        self.ids.iter().position(|s| s == id)
    }

    pub fn is_leaf(&self, node: usize) -> bool {
        self.children[node].is_empty()
    }

    pub fn is_root(&self, node: usize) -> bool {
        self.parent[node].is_none()
    }

    pub fn parent(&self, node: usize) -> Option<usize> {
        self.parent[node]
    }

    pub fn children(&self, node: usize) -> &[usize] {
        &self.children[node]
    }

    pub fn depth(&self, node: usize) -> usize {
        self.depth[node]
    }

    /// Root nodes in declaration order.
    pub fn roots(&self) -> &[usize] {
        &self.roots
    }

    /// Internal nodes (>= 1 child), ascending by node index.
    pub fn internal(&self) -> &[usize] {
        &self.internal
    }

    /// Internal nodes grouped by depth, shallowest layer first. Nodes within
    /// one layer cover pairwise disjoint leaf ranges.
    pub fn layers_internal(&self) -> &[Vec<usize>] {
        &self.layers_internal
    }

    /// Leaf permutation: `leaf_perm()[k]` is the original column stored at
    /// permuted position `k`.
    pub fn leaf_perm(&self) -> &[usize] {
        &self.leaf_perm
    }

    /// Covered half-open range of permuted positions for `node`.
    pub fn leaf_range(&self, node: usize) -> (usize, usize) {
        self.range[node]
    }

    /// Number of leaves covered by `node`.
    pub fn a(&self, node: usize) -> usize {
        let (s, e) = self.range[node];
        e - s
    }

    /// Covered original feature columns, sorted ascending.
    pub fn leaf_set(&self, node: usize) -> Vec<usize> {
        let (s, e) = self.range[node];
        let mut cols: Vec<usize> = self.leaf_perm[s..e].to_vec();
        cols.sort_unstable();
        cols
    }

    /// Feature column of a leaf node, if `node` is a leaf.
    pub fn leaf_col(&self, node: usize) -> Option<usize> {
        self.leaf_col[node]
    }

    /// Walks ancestors from parent up to the root.
    pub fn ancestors(&self, node: usize) -> Ancestors<'_> {
        Ancestors {
            tree: self,
            cur: self.parent[node],
        }
    }

    /// Scatters a permuted-order vector back to original column order.
    pub fn to_original_order(&self, permuted: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.p];
        for (k, &col) in self.leaf_perm.iter().enumerate() {
            out[col] = permuted[k];
        }
        out
    }

    /// Gathers an original-order vector into permuted order.
    pub fn to_permuted_order(&self, original: &[f64]) -> Vec<f64> {
        self.leaf_perm.iter().map(|&col| original[col]).collect()
    }

    /// Serializes to the tab-separated on-disk format, one node per line:
    /// `node_id<TAB>parent_id<TAB>leaf_col` with `-` for absent fields.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n_nodes() {
            let par = match self.parent[i] {
                Some(q) => self.ids[q].as_str(),
                None => "-",
            };
            let col = match self.leaf_col[i] {
                Some(c) => c.to_string(),
                None => "-".to_string(),
            };
            out.push_str(&format!("{}\t{}\t{}\n", self.ids[i], par, col));
        }
        out
    }
}

pub struct Ancestors<'a> {
    tree: &'a Tree,
    cur: Option<usize>,
}

impl Iterator for Ancestors<'_> {
    type Item = usize;

    fn next(&mut self) -> Option<usize> {
        let node = self.cur?;
        self.cur = self.tree.parent[node];
        Some(node)
    }
}

/// Parses the tab-separated tree format.
///
/// One node per line: `node_id<TAB>parent_id<TAB>leaf_col`, `parent_id` is
/// `-` for roots, `leaf_col` is `-` for internal nodes and a 0-based feature
/// column for leaves. Blank lines and lines starting with `#` are skipped.
pub fn parse_tree(text: &str) -> Result<Tree> {
    let mut entries = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(Error::TreeFormat {
                line: lineno + 1,
                msg: format!("expected 3 tab-separated fields, found {}", fields.len()),
            });
        }
        let id = fields[0].trim();
        if id.is_empty() {
            return Err(Error::TreeFormat {
                line: lineno + 1,
                msg: "empty node id".to_string(),
            });
        }
        let parent = match fields[1].trim() {
            "-" => None,
            s if s.is_empty() => {
                return Err(Error::TreeFormat {
                    line: lineno + 1,
                    msg: "empty parent field (use `-` for roots)".to_string(),
                })
            }
            s => Some(s.to_string()),
        };
        let col = match fields[2].trim() {
            "-" => None,
            s => Some(s.parse::<usize>().map_err(|_| Error::TreeFormat {
                line: lineno + 1,
                msg: format!("leaf column `{s}` is not a nonnegative integer"),
            })?),
        };
        entries.push((id.to_string(), parent, col));
    }
    Tree::from_edges(&entries)
}

/// Removes internal non-root nodes, splicing their children into the place
/// the removed node held among its siblings. Leaf columns and roots are
/// unchanged; depths and layers are recomputed.
pub fn delete_internal_nodes(tree: &Tree, victims: &[usize]) -> Result<Tree> {
    let mut doomed = vec![false; tree.n_nodes()];
    for &v in victims {
        if tree.is_leaf(v) {
            return Err(Error::CannotDeleteLeaf(tree.id(v).to_string()));
        }
        if tree.is_root(v) {
            return Err(Error::CannotDeleteRoot(tree.id(v).to_string()));
        }
        doomed[v] = true;
    }

    // Emit survivors in depth-first pre-order; a removed node contributes its
    // children in place, so sibling order is spliced rather than appended.
    let mut entries = Vec::with_capacity(tree.n_nodes() - victims.len());
    let mut stack: Vec<(usize, Option<usize>)> = tree
        .roots()
        .iter()
        .rev()
        .map(|&r| (r, None))
        .collect();
    while let Some((node, live_parent)) = stack.pop() {
        if doomed[node] {
            for &c in tree.children(node).iter().rev() {
                stack.push((c, live_parent));
            }
            continue;
        }
        entries.push((
            tree.id(node).to_string(),
            live_parent.map(|q: usize| tree.id(q).to_string()),
            tree.leaf_col(node),
        ));
        for &c in tree.children(node).iter().rev() {
            stack.push((c, Some(node)));
        }
    }
    Tree::from_edges(&entries)
}

/// Nodes whose leaf sets tile the features into one group per node.
///
/// `nodes` is sorted ascending; `partition` maps each feature column to the
/// group of the unique covering node.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregatingSet {
    pub nodes: Vec<usize>,
    pub partition: Partition,
}

/// Extracts the coarsest aggregating set consistent with per-node merge flags.
///
/// `merged` has one entry per node; only internal entries are read. A node
/// belongs to the result iff it is merged (or a leaf) and none of its
/// ancestors is merged, which makes the covered leaf sets a partition of the
/// features.
pub fn coarsest_aggregating_set(tree: &Tree, merged: &[bool]) -> Result<AggregatingSet> {
    if merged.len() != tree.n_nodes() {
        return Err(Error::DimensionMismatch(format!(
            "merge flags: expected one per node ({}), got {}",
            tree.n_nodes(),
            merged.len()
        )));
    }
    let mut nodes = Vec::new();
    let mut labels_raw = vec![0usize; tree.p()];
    let mut stack: Vec<usize> = tree.roots().iter().rev().copied().collect();
    while let Some(node) = stack.pop() {
        if tree.is_leaf(node) || merged[node] {
            for &col in tree.leaf_set(node).iter() {
                labels_raw[col] = nodes.len();
            }
            nodes.push(node);
        } else {
            for &c in tree.children(node).iter().rev() {
                stack.push(c);
            }
        }
    }
    nodes.sort_unstable();
    Ok(AggregatingSet {
        nodes,
        partition: Partition::from_labels(&labels_raw)?,
    })
}

/// Builds an aggregating set from explicitly chosen nodes, checking that
/// their leaf sets partition the feature columns (each column covered exactly
/// once).
pub fn aggregating_set_from_nodes(tree: &Tree, nodes: &[usize]) -> Result<AggregatingSet> {
    let mut labels_raw = vec![usize::MAX; tree.p()];
    for (g, &node) in nodes.iter().enumerate() {
        if node >= tree.n_nodes() {
            return Err(Error::DimensionMismatch(format!(
                "node index {node} out of range ({} nodes)",
                tree.n_nodes()
            )));
        }
        for &col in tree.leaf_set(node).iter() {
            if labels_raw[col] != usize::MAX {
                return Err(Error::DimensionMismatch(format!(
                    "column {col} covered by more than one aggregating node"
                )));
            }
            labels_raw[col] = g;
        }
    }
    if let Some(col) = labels_raw.iter().position(|&l| l == usize::MAX) {
        return Err(Error::DimensionMismatch(format!(
            "column {col} not covered by any aggregating node"
        )));
    }
    let mut sorted = nodes.to_vec();
    sorted.sort_unstable();
    Ok(AggregatingSet {
        nodes: sorted,
        partition: Partition::from_labels(&labels_raw)?,
    })
}

/// Tree complexity factor `sqrt(max_a) * (1 + sqrt(max_a / ln |I|))` where
/// `max_a` is the largest covered-leaf count among internal nodes and `I` is
/// the internal node set. Needs at least two internal nodes so the logarithm
/// is positive.
pub fn theta(tree: &Tree) -> Result<f64> {
    let n_internal = tree.internal().len();
    if n_internal < 2 {
        return Err(Error::TooFewInternalNodes(n_internal));
    }
    let max_a = tree
        .internal()
        .iter()
        .map(|&i| tree.a(i))
        .max()
        .expect("internal set nonempty") as f64;
    let log_i = (n_internal as f64).ln();
    Ok(max_a.sqrt() * (1.0 + (max_a / log_i).sqrt()))
}
