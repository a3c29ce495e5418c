//! Per-node gradient estimates extracted from a fitted tree.
//!
//! Every split `(σ, τ)` of a node with cell `[l, u]` yields the finite
//! difference analog
//!
//! ```text
//! γ = 2 (μ_right − μ_left) / (u_σ − l_σ)
//! ```
//!
//! of `∂f/∂x_σ` over that cell. Walking the tree parents-first, each node
//! inherits its parent's vector and overwrites coordinate `σ` with its own
//! `γ`. Leaves do not split, so a leaf carries the vector of its parent, and
//! the field evaluated at `x` is the vector of the leaf containing `x`.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::tree::{Node, RegressionTree};

#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    tree: RegressionTree,
    /// Row `i` is the estimate attached to node `i`.
    grads: Vec<f64>,
}

/// One row of the per-leaf export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LeafGradient {
    pub leaf: usize,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub gradient: Vec<f64>,
}

/// The split estimate of a node, if it has a split.
pub fn split_gamma(tree: &RegressionTree, node: &Node) -> Option<f64> {
    let s = node.split.as_ref()?;
    let (left, right) = (tree.node(s.left).value, tree.node(s.right).value);
    Some(2.0 * (right - left) / (node.upper[s.variable] - node.lower[s.variable]))
}

impl GradientField {
    pub fn extract(tree: RegressionTree) -> Self {
        let (field, _) = Self::extract_counting(tree);
        field
    }

    /// Extraction plus the number of node visits it took.
    pub(crate) fn extract_counting(tree: RegressionTree) -> (Self, usize) {
        let p = tree.dim();
        let mut grads = vec![0.0; tree.len() * p];
        let mut visits = 0;
        // index order is parents-first
        for node in tree.nodes() {
            visits += 1;
            let i = node.index;
            if let Some(parent) = node.parent {
                let (head, tail) = grads.split_at_mut(i * p);
                tail[..p].copy_from_slice(&head[parent * p..parent * p + p]);
            }
            if let (Some(s), Some(gamma)) = (&node.split, split_gamma(&tree, node)) {
                grads[i * p + s.variable] = gamma;
            }
        }
        (Self { tree, grads }, visits)
    }

    pub fn tree(&self) -> &RegressionTree {
        &self.tree
    }

    pub fn into_tree(self) -> RegressionTree {
        self.tree
    }

    pub fn dim(&self) -> usize {
        self.tree.dim()
    }

    pub fn node_gradient(&self, i: usize) -> &[f64] {
        let p = self.dim();
        &self.grads[i * p..(i + 1) * p]
    }

    /// The piecewise-constant gradient estimate at `x` (clamped to the cube).
    pub fn grad_at(&self, x: &[f64]) -> &[f64] {
        self.node_gradient(self.tree.leaf_index(x))
    }

    pub fn grad_dataset<X: AsRef<[f64]>>(&self, xs: &[X]) -> Vec<Vec<f64>> {
        xs.iter()
            .map(|x| self.grad_at(x.as_ref()).to_vec())
            .collect()
    }

    pub fn leaf_gradients(&self) -> Vec<LeafGradient> {
        self.tree
            .leaves()
            .map(|leaf| LeafGradient {
                leaf: leaf.index,
                lower: leaf.lower.clone(),
                upper: leaf.upper.clone(),
                gradient: self.node_gradient(leaf.index).to_vec(),
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, Dataset, InputLaw, SyntheticFunction, SyntheticSpec};
    use crate::linalg::vector_angle;
    use crate::tree::tests::notation_tree;
    use crate::tree::{fit, DepthLimit, FitConfig};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn uniform_grid_dataset(p: usize, n: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random::<f64>()).collect())
            .collect();
        Dataset::from_rows(&rows, vec![0.0; n]).unwrap()
    }

    /// Exact uniform-measure mean of `aᵀx + b` over a cell: `aᵀ(l+u)/2 + b`.
    fn linear_cell_mean(a: &[f64], b: f64, node: &Node) -> f64 {
        a.iter()
            .zip(node.lower.iter().zip(&node.upper))
            .map(|(ai, (l, u))| ai * (l + u) / 2.0)
            .sum::<f64>()
            + b
    }

    #[test]
    fn single_split_with_factor_two() {
        let mut t = RegressionTree::single_leaf(2, 0.5, 2);
        t.split_leaf(0, 0, 0.5, (0.2, 1), (0.8, 1)).unwrap();
        let gf = GradientField::extract(t);
        for i in 0..3 {
            let g = gf.node_gradient(i);
            assert!((g[0] - 1.2).abs() < 1e-15);
            assert_eq!(g[1], 0.0);
        }
        let at = gf.grad_at(&[0.1, 0.9]);
        assert!((at[0] - 1.2).abs() < 1e-15);
        // without the factor 2 this would be the 0.6 of the illustration
        assert!((at[0] / 2.0 - 0.6).abs() < 1e-15);
    }

    #[test]
    fn notation_tree_gradients() {
        let gf = GradientField::extract(notation_tree());
        // node 2 splits y on [0, 1]: 2 (0.6 − 1.0) / 1
        let g5 = gf.node_gradient(5);
        assert!((g5[0] - 1.2).abs() < 1e-15);
        assert!((g5[1] + 0.8).abs() < 1e-15);
        let g3 = gf.node_gradient(3);
        assert!((g3[1] - 0.4).abs() < 1e-15);
    }

    #[test]
    fn constant_tree_has_zero_field() {
        let rows: Vec<Vec<f64>> = (0..30)
            .map(|i| vec![i as f64 / 29.0, 1.0 - i as f64 / 29.0])
            .collect();
        let d = Dataset::from_rows(&rows, vec![4.0; 30]).unwrap();
        let mut t = fit(&d, &FitConfig::cyclic_median(DepthLimit::Fixed(3))).unwrap();
        assert!(t.len() > 1);
        t.set_values_with(|_| 4.0);
        let gf = GradientField::extract(t);
        assert!(gf.grads.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn linear_exactness_with_population_means() {
        let a = [0.6, -0.4, 1.3];
        let b = 0.25;
        let d = uniform_grid_dataset(3, 3000, 2);
        for mode in [DepthLimit::Fixed(7)] {
            let mut t = fit(&d, &FitConfig::cyclic_median(mode)).unwrap();
            t.set_values_with(|n| linear_cell_mean(&a, b, n));
            let gf = GradientField::extract(t);
            for node in gf.tree().nodes() {
                if let Some(s) = &node.split {
                    let gamma = split_gamma(gf.tree(), node).unwrap();
                    assert!((gamma - a[s.variable]).abs() <= 1e-12);
                }
            }
            for leaf in gf.tree().leaves() {
                let g = gf.node_gradient(leaf.index);
                for p in 0..3 {
                    assert!((g[p] - a[p]).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn inheritance_and_zero_propagation() {
        let spec = SyntheticSpec::random(
            SyntheticFunction::LogRidge,
            4,
            4,
            0.0,
            InputLaw::UniformCube,
            6,
        )
        .unwrap();
        let d = generate_synthetic(&spec, 3000).unwrap();
        let t = fit(&d, &FitConfig::cart(8).with_min_leaf(5)).unwrap();
        let (gf, visits) = GradientField::extract_counting(t);
        assert_eq!(visits, gf.tree().len());
        let tree = gf.tree();
        for node in tree.nodes() {
            let g = gf.node_gradient(node.index);
            if let Some(parent) = node.parent {
                let gp = gf.node_gradient(parent);
                let changed: Vec<usize> = (0..4).filter(|&k| g[k] != gp[k]).collect();
                assert!(changed.len() <= 1);
                if let Some(&k) = changed.first() {
                    let s = node
                        .split
                        .as_ref()
                        .expect("only a split changes a coordinate");
                    assert_eq!(k, s.variable);
                    assert_eq!(g[k], split_gamma(tree, node).unwrap());
                }
            }
            if node.is_leaf() {
                let mut split_vars = [false; 4];
                let mut cur = node.parent;
                while let Some(i) = cur {
                    split_vars[tree.node(i).split.as_ref().unwrap().variable] = true;
                    cur = tree.node(i).parent;
                }
                for k in 0..4 {
                    if !split_vars[k] {
                        assert_eq!(g[k], 0.0);
                    } else {
                        // nonzero responses make an exact zero vanishingly unlikely
                        assert_ne!(g[k], 0.0);
                    }
                }
            }
        }
    }

    #[test]
    fn bounded_by_lipschitz_constant() {
        // Each partial of log-ridge (nonnegative unit a) is at most 1, and
        // sibling cell means differ by at most the parent width times that,
        // so |γ| ≤ 2.
        let spec = SyntheticSpec::random(
            SyntheticFunction::LogRidge,
            3,
            3,
            0.0,
            InputLaw::UniformCube,
            9,
        )
        .unwrap();
        let d = uniform_grid_dataset(3, 4000, 10);
        let mut t = fit(&d, &FitConfig::cyclic_median(DepthLimit::Fixed(9))).unwrap();
        // population means by midpoint quadrature on a fine grid per cell
        t.set_values_with(|n| {
            let m = 6;
            let mut s = 0.0;
            for i in 0..m {
                for j in 0..m {
                    for k in 0..m {
                        let x: Vec<f64> = [i, j, k]
                            .iter()
                            .enumerate()
                            .map(|(p, &q)| {
                                n.lower[p] + (q as f64 + 0.5) / m as f64 * (n.upper[p] - n.lower[p])
                            })
                            .collect();
                        s += spec.evaluate(&x);
                    }
                }
            }
            s / (m * m * m) as f64
        });
        let gf = GradientField::extract(t);
        assert!(gf.grads.iter().all(|g| g.abs() <= 2.0 + 1e-12));
    }

    #[test]
    fn grad_dataset_matches_loop() {
        let spec = SyntheticSpec::random(
            SyntheticFunction::RidgeCosine,
            3,
            3,
            0.0,
            InputLaw::UniformCube,
            12,
        )
        .unwrap();
        let d = generate_synthetic(&spec, 2000).unwrap();
        let gf = GradientField::extract(fit(&d, &FitConfig::cart(6)).unwrap());
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let xs: Vec<Vec<f64>> = (0..1000)
            .map(|_| (0..3).map(|_| rng.random::<f64>()).collect())
            .collect();
        let batch = gf.grad_dataset(&xs);
        for (x, g) in xs.iter().zip(&batch) {
            assert_eq!(g.as_slice(), gf.grad_at(x));
        }
        assert_eq!(gf.grad_dataset(&xs[..1]), vec![gf.grad_at(&xs[0]).to_vec()]);
        let dup = gf.grad_dataset(&[xs[3].clone(), xs[3].clone()]);
        assert_eq!(dup[0], dup[1]);
        // piecewise constancy: two points in one leaf share the vector
        let leaf = gf.tree().leaves().next().unwrap();
        let mid: Vec<f64> = leaf
            .lower
            .iter()
            .zip(&leaf.upper)
            .map(|(l, u)| (l + u) / 2.0)
            .collect();
        let near: Vec<f64> = leaf
            .lower
            .iter()
            .zip(&leaf.upper)
            .map(|(l, u)| l + 0.9 * (u - l))
            .collect();
        assert_eq!(gf.grad_at(&mid), gf.grad_at(&near));
    }

    #[test]
    fn deep_median_trees_converge_on_log_ridge() {
        let spec = SyntheticSpec::new(
            SyntheticFunction::LogRidge,
            alloc::vec![0.6, 0.8],
            0.0,
            InputLaw::UniformCube,
            31,
        )
        .unwrap();
        let mut probe_rng = ChaCha8Rng::seed_from_u64(77);
        let probes: Vec<Vec<f64>> = (0..100)
            .map(|_| (0..2).map(|_| probe_rng.random_range(0.05..0.95)).collect())
            .collect();
        let median_angle = |n: usize| {
            let d = generate_synthetic(&spec, n).unwrap();
            let gf = GradientField::extract(
                fit(
                    &d,
                    &FitConfig::cyclic_median(DepthLimit::LogLog { scale: 1.0 }),
                )
                .unwrap(),
            );
            let mut angles: Vec<f64> = probes
                .iter()
                .map(|x| vector_angle(gf.grad_at(x), &spec.function.gradient(&spec.direction, x)))
                .collect();
            angles.sort_by(f64::total_cmp);
            (angles[49] + angles[50]) / 2.0
        };
        let small = median_angle(100);
        let large = median_angle(100_000);
        assert!(large < small, "N=1e5 median angle {large} vs N=1e2 {small}");
    }

    #[test]
    fn leaf_export_covers_leaves() {
        let gf = GradientField::extract(notation_tree());
        let leaves = gf.leaf_gradients();
        assert_eq!(
            leaves.iter().map(|l| l.leaf).collect::<Vec<_>>(),
            vec![3, 4, 5, 6]
        );
        assert_eq!(leaves[2].gradient, gf.node_gradient(5).to_vec());
    }
}
