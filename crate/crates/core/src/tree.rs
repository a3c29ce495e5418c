//! Constant-leaf regression trees over the unit cube.
//!
//! Nodes live in a flat array in breadth-first insertion order, so a parent
//! always has a smaller index than its children and a complete tree gets the
//! familiar heap numbering (`0`; `1, 2`; `3..=6`; ...). Every node records the
//! axis-aligned cell it covers. A point goes to the left child when
//! `x[variable] <= threshold`.

use alloc::collections::VecDeque;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Split {
    pub variable: usize,
    pub threshold: f64,
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Node {
    pub index: usize,
    pub parent: Option<usize>,
    pub depth: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Mean response of the training points in the cell.
    pub value: f64,
    pub count: usize,
    pub split: Option<Split>,
}

impl Node {
    pub fn is_leaf(&self) -> bool {
        self.split.is_none()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lower.iter().zip(&self.upper))
            .all(|(v, (l, u))| l <= v && v <= u)
    }

    pub fn volume(&self) -> f64 {
        self.lower
            .iter()
            .zip(&self.upper)
            .map(|(l, u)| u - l)
            .product()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SplitRule {
    /// Greedy variance-reduction splits.
    Cart,
    /// Split variable `depth mod P` at the within-node median, ignoring the
    /// response.
    CyclicMedian,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DepthLimit {
    Fixed(usize),
    /// `ceil(scale * P * log2(log2 N))`, at least 1.
    LogLog {
        scale: f64,
    },
}

impl DepthLimit {
    pub fn resolve(self, n: usize, p: usize) -> usize {
        match self {
            DepthLimit::Fixed(k) => k,
            DepthLimit::LogLog { scale } => {
                let n = (n as f64).max(2.0);
                let ll = libm::log2(libm::log2(n)).max(0.0);
                (libm::ceil(scale * p as f64 * ll) as usize).max(1)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub mode: SplitRule,
    pub depth: DepthLimit,
    pub min_leaf: usize,
    /// Fraction of the variables examined at each CART split (random subset
    /// drawn from `seed`); 1.0 examines all of them.
    pub feature_fraction: f64,
    pub seed: u64,
}

impl FitConfig {
    pub fn cart(max_depth: usize) -> Self {
        Self {
            mode: SplitRule::Cart,
            depth: DepthLimit::Fixed(max_depth),
            min_leaf: 1,
            feature_fraction: 1.0,
            seed: 0,
        }
    }

    pub fn cyclic_median(depth: DepthLimit) -> Self {
        Self {
            mode: SplitRule::CyclicMedian,
            depth,
            min_leaf: 1,
            feature_fraction: 1.0,
            seed: 0,
        }
    }

    pub fn with_min_leaf(self, min_leaf: usize) -> Self {
        Self { min_leaf, ..self }
    }

    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if let DepthLimit::Fixed(0) = self.depth {
            return Err(Error::InvalidConfig(
                "depth limit must be at least 1".into(),
            ));
        }
        if let DepthLimit::LogLog { scale } = self.depth {
            if !(scale > 0.0 && scale.is_finite()) {
                return Err(Error::InvalidConfig(
                    "depth schedule scale must be positive".into(),
                ));
            }
        }
        if self.min_leaf == 0 {
            return Err(Error::InvalidConfig("min_leaf must be at least 1".into()));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "feature_fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

/// How a tree was fitted; `None` on hand-built trees.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitInfo {
    pub mode: SplitRule,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub feature_fraction: f64,
    pub seed: u64,
}

/// Result of [`RegressionTree::locate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Located {
    pub index: usize,
    /// False when the requested depth lies below the leaf reached.
    pub reached_depth: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TreeRecord")]
pub struct RegressionTree {
    dim: usize,
    fit: Option<FitInfo>,
    nodes: Vec<Node>,
}

#[derive(Deserialize)]
struct TreeRecord {
    dim: usize,
    fit: Option<FitInfo>,
    nodes: Vec<Node>,
}

impl TryFrom<TreeRecord> for RegressionTree {
    type Error = Error;

    fn try_from(r: TreeRecord) -> Result<Self> {
        RegressionTree::from_nodes(r.dim, r.fit, r.nodes)
    }
}

impl RegressionTree {
    /// A single leaf covering the unit cube.
    pub fn single_leaf(dim: usize, value: f64, count: usize) -> Self {
        Self {
            dim,
            fit: None,
            nodes: vec![Node {
                index: 0,
                parent: None,
                depth: 0,
                lower: vec![0.0; dim],
                upper: vec![1.0; dim],
                value,
                count,
                split: None,
            }],
        }
    }

    /// Rebuilds a tree from stored nodes, checking every structural invariant.
    pub fn from_nodes(dim: usize, fit: Option<FitInfo>, nodes: Vec<Node>) -> Result<Self> {
        let tree = Self { dim, fit, nodes };
        tree.validate()?;
        Ok(tree)
    }

    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidTree(msg));
        if self.dim == 0 {
            return bad("dimension is zero".into());
        }
        if self.nodes.is_empty() {
            return bad("no nodes".into());
        }
        let mut parent_seen = vec![false; self.nodes.len()];
        for (i, node) in self.nodes.iter().enumerate() {
            if node.index != i {
                return bad(format!("node {i} stores index {}", node.index));
            }
            if node.lower.len() != self.dim || node.upper.len() != self.dim {
                return bad(format!("node {i} has bounds of the wrong length"));
            }
            if node.lower.iter().zip(&node.upper).any(|(l, u)| !(l < u)) {
                return bad(format!("node {i} has an empty cell"));
            }
            if !node.value.is_finite() {
                return bad(format!("node {i} has a non-finite value"));
            }
            match node.parent {
                None if i == 0 => {
                    if node.depth != 0
                        || node.lower.iter().any(|&l| l != 0.0)
                        || node.upper.iter().any(|&u| u != 1.0)
                    {
                        return bad("root must be the unit cube at depth 0".into());
                    }
                }
                Some(p) if p < i && i > 0 => {
                    if parent_seen[i] {
                        return bad(format!("node {i} has two parents"));
                    }
                    parent_seen[i] = true;
                    let parent = &self.nodes[p];
                    let is_child = parent
                        .split
                        .as_ref()
                        .is_some_and(|s| s.left == i || s.right == i);
                    if !is_child || node.depth != parent.depth + 1 {
                        return bad(format!("node {i} is not a child of node {p}"));
                    }
                }
                _ => return bad(format!("node {i} has an invalid parent link")),
            }
            if let Some(s) = &node.split {
                if s.variable >= self.dim {
                    return bad(format!("node {i} splits on variable {}", s.variable));
                }
                let (l, u) = (node.lower[s.variable], node.upper[s.variable]);
                if !(l < s.threshold && s.threshold < u) {
                    return bad(format!("node {i} threshold outside its cell"));
                }
                if s.left <= i
                    || s.right <= i
                    || s.left >= self.nodes.len()
                    || s.right >= self.nodes.len()
                {
                    return bad(format!("node {i} has invalid child indices"));
                }
                for (child, is_left) in [(s.left, true), (s.right, false)] {
                    let c = &self.nodes[child];
                    if c.parent != Some(i) {
                        return bad(format!("child {child} does not point back to {i}"));
                    }
                    for p in 0..self.dim {
                        let (el, eu) = if p != s.variable {
                            (node.lower[p], node.upper[p])
                        } else if is_left {
                            (node.lower[p], s.threshold)
                        } else {
                            (s.threshold, node.upper[p])
                        };
                        if c.lower[p] != el || c.upper[p] != eu {
                            return bad(format!("child {child} bounds do not match its parent"));
                        }
                    }
                }
            }
        }
        if parent_seen.iter().skip(1).any(|s| !s) {
            return bad("orphan node".into());
        }
        Ok(())
    }

    /// Splits leaf `node` and appends its two children; returns their indices.
    pub fn split_leaf(
        &mut self,
        node: usize,
        variable: usize,
        threshold: f64,
        (left_value, left_count): (f64, usize),
        (right_value, right_count): (f64, usize),
    ) -> Result<(usize, usize)> {
        let parent = self
            .nodes
            .get(node)
            .ok_or_else(|| Error::InvalidTree(format!("no node {node}")))?;
        if !parent.is_leaf() {
            return Err(Error::InvalidTree(format!("node {node} is already split")));
        }
        if variable >= self.dim {
            return Err(Error::DimensionMismatch {
                expected: self.dim,
                found: variable + 1,
            });
        }
        if !(parent.lower[variable] < threshold && threshold < parent.upper[variable]) {
            return Err(Error::InvalidTree(format!(
                "threshold {threshold} outside node {node}"
            )));
        }
        let (left, right) = (self.nodes.len(), self.nodes.len() + 1);
        let mut lchild = Node {
            index: left,
            parent: Some(node),
            depth: parent.depth + 1,
            lower: parent.lower.clone(),
            upper: parent.upper.clone(),
            value: left_value,
            count: left_count,
            split: None,
        };
        let mut rchild = Node {
            index: right,
            value: right_value,
            count: right_count,
            ..lchild.clone()
        };
        lchild.upper[variable] = threshold;
        rchild.lower[variable] = threshold;
        self.nodes[node].split = Some(Split {
            variable,
            threshold,
            left,
            right,
        });
        self.nodes.push(lchild);
        self.nodes.push(rchild);
        Ok((left, right))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn fit_info(&self) -> Option<&FitInfo> {
        self.fit.as_ref()
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn node(&self, i: usize) -> &Node {
        &self.nodes[i]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Depth of the deepest node.
    pub fn depth(&self) -> usize {
        self.nodes.iter().map(|n| n.depth).max().unwrap_or(0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = &Node> {
        self.nodes.iter().filter(|n| n.is_leaf())
    }

    pub fn n_leaves(&self) -> usize {
        self.leaves().count()
    }

    /// Overwrites every node value, e.g. with exact population cell means.
    pub fn set_values_with(&mut self, mut f: impl FnMut(&Node) -> f64) {
        for node in self.nodes.iter_mut() {
            node.value = f(node);
        }
    }

    /// Index of the node at depth `depth` (or the leaf, for `None`) whose
    /// cell contains `x`. Out-of-cube points are clamped first.
    pub fn locate(&self, x: &[f64], depth: Option<usize>) -> Located {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            if depth == Some(node.depth) {
                return Located {
                    index: i,
                    reached_depth: true,
                };
            }
            match &node.split {
                None => {
                    return Located {
                        index: i,
                        reached_depth: depth.is_none(),
                    }
                }
                Some(s) => {
                    let v = x[s.variable].clamp(0.0, 1.0);
                    i = if v <= s.threshold { s.left } else { s.right };
                }
            }
        }
    }

    #[inline]
    pub fn leaf_index(&self, x: &[f64]) -> usize {
        self.locate(x, None).index
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.nodes[self.leaf_index(x)].value
    }

    /// All node indices at `depth`, ascending.
    pub fn nodes_at_depth(&self, depth: usize) -> Vec<usize> {
        self.nodes
            .iter()
            .filter(|n| n.depth == depth)
            .map(|n| n.index)
            .collect()
    }
}

/// Fits a tree to a dataset whose features already lie in the unit cube.
pub fn fit(d: &Dataset, cfg: &FitConfig) -> Result<RegressionTree> {
    cfg.validate()?;
    let n = d.n_rows();
    let p = d.n_features();
    if p == 0 {
        return Err(Error::EmptyDataset);
    }
    if n < 2 * cfg.min_leaf {
        return Err(Error::TooFewSamples {
            samples: n,
            min_leaf: cfg.min_leaf,
        });
    }
    if let Some((row, column, value)) = d.first_outside_unit_cube() {
        return Err(Error::OutOfDomain { row, column, value });
    }
    let max_depth = cfg.depth.resolve(n, p);
    let y = d.response();

    let mut tree = RegressionTree::single_leaf(p, mean(y, &(0..n).collect::<Vec<_>>()), n);
    tree.fit = Some(FitInfo {
        mode: cfg.mode,
        max_depth,
        min_leaf: cfg.min_leaf,
        feature_fraction: cfg.feature_fraction,
        seed: cfg.seed,
    });

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let n_candidates = (libm::round(cfg.feature_fraction * p as f64) as usize).clamp(1, p);

    let mut queue: VecDeque<(usize, Vec<usize>)> = VecDeque::new();
    queue.push_back((0, (0..n).collect()));
    while let Some((node, rows)) = queue.pop_front() {
        let depth = tree.nodes[node].depth;
        if depth >= max_depth || rows.len() < 2 * cfg.min_leaf {
            continue;
        }
        let choice = match cfg.mode {
            SplitRule::Cart => {
                let vars: Vec<usize> = if n_candidates == p {
                    (0..p).collect()
                } else {
                    let mut v = index::sample(&mut rng, p, n_candidates).into_vec();
                    v.sort_unstable();
                    v
                };
                best_cart_split(d, &rows, &vars, &tree.nodes[node], cfg.min_leaf)
            }
            SplitRule::CyclicMedian => {
                median_split(d, &rows, depth % p, &tree.nodes[node], cfg.min_leaf)
            }
        };
        let Some((variable, threshold)) = choice else {
            continue;
        };

        let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| d.value(r, variable) <= threshold);
        let (l, r) = tree.split_leaf(
            node,
            variable,
            threshold,
            (mean(y, &left_rows), left_rows.len()),
            (mean(y, &right_rows), right_rows.len()),
        )?;
        queue.push_back((l, left_rows));
        queue.push_back((r, right_rows));
    }
    Ok(tree)
}

fn mean(y: &[f64], rows: &[usize]) -> f64 {
    rows.iter().map(|&r| y[r]).sum::<f64>() / rows.len() as f64
}

fn threshold_fits(node: &Node, variable: usize, t: f64) -> bool {
    node.lower[variable] < t && t < node.upper[variable]
}

/// Best variance-reduction split over the midpoints between consecutive
/// distinct values. Ties go to the lowest variable, then lowest threshold.
fn best_cart_split(
    d: &Dataset,
    rows: &[usize],
    vars: &[usize],
    node: &Node,
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let y = d.response();
    let first = y[rows[0]];
    if rows.iter().all(|&r| y[r] == first) {
        return None;
    }
    let n = rows.len();
    let mu = mean(y, rows);
    let sse: f64 = rows.iter().map(|&r| (y[r] - mu) * (y[r] - mu)).sum();

    let mut best: Option<(f64, usize, f64)> = None;
    let mut order: Vec<(f64, f64)> = Vec::with_capacity(n);
    for &var in vars {
        order.clear();
        order.extend(rows.iter().map(|&r| (d.value(r, var), y[r] - mu)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0));

        // with centred responses the reduction is sL²/nL + sR²/nR, sR = -sL
        let mut left_sum = 0.0;
        for i in 0..n - 1 {
            left_sum += order[i].1;
            let n_left = i + 1;
            let n_right = n - n_left;
            if n_left < min_leaf {
                continue;
            }
            if n_right < min_leaf {
                break;
            }
            let (a, b) = (order[i].0, order[i + 1].0);
            if a == b {
                continue;
            }
            let t = a + (b - a) / 2.0;
            if !(t < b) || !threshold_fits(node, var, t) {
                continue;
            }
            let gain = left_sum * left_sum * (1.0 / n_left as f64 + 1.0 / n_right as f64);
            if best.is_none_or(|(g, _, _)| gain > g) {
                best = Some((gain, var, t));
            }
        }
    }
    match best {
        Some((gain, var, t)) if gain > 1e-12 * sse => Some((var, t)),
        _ => None,
    }
}

fn median_split(
    d: &Dataset,
    rows: &[usize],
    variable: usize,
    node: &Node,
    min_leaf: usize,
) -> Option<(usize, f64)> {
    let mut values: Vec<f64> = rows.iter().map(|&r| d.value(r, variable)).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len();
    let t = if n.is_multiple_of(2) {
        let (a, b) = (values[n / 2 - 1], values[n / 2]);
        a + (b - a) / 2.0
    } else {
        values[n / 2]
    };
    if !threshold_fits(node, variable, t) {
        return None;
    }
    let n_left = values.partition_point(|&v| v <= t);
    if n_left < min_leaf || n - n_left < min_leaf {
        return None;
    }
    Some((variable, t))
}
