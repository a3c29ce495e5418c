//! Integrals of functions of the tree gradient field.
//!
//! For an integrand `h` and a probability measure `μ` on the cube the target
//! is `∫ h(∇f) dμ`. Two estimators plug in the tree field:
//!
//! * [`mce`] averages `h` over draws from `μ` (any measure that can sample);
//! * [`pbe`] sums `h(G) μ(cell)` over the leaf cells, which is the exact
//!   integral of the piecewise-constant field (measures with rectangle mass).
//!
//! Integrated gradients ([`tbig`], [`tbig_exact`]) take `μ` uniform on a
//! segment and `h` the identity; the active-subspace matrix ([`tbas`]) takes
//! `h(g) = g gᵀ`.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::clamp_unit;
use crate::error::{Error, Result};
use crate::gradfield::GradientField;
use crate::linalg::{eig_sym, SymmetricMatrix};
use crate::measure::Measure;
use crate::tree::RegressionTree;

/// Monte Carlo sample count used for integrated gradients unless overridden.
pub const DEFAULT_TBIG_SAMPLES: usize = 500;

/// Anything that can report a gradient estimate at a point.
pub trait GradientSource {
    fn dim(&self) -> usize;
    /// Writes the estimate at `x` (clamped to the cube) into `out`.
    fn gradient_into(&self, x: &[f64], out: &mut [f64]);
    fn describe(&self) -> String;
}

impl GradientSource for GradientField {
    fn dim(&self) -> usize {
        GradientField::dim(self)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(self.grad_at(x));
    }

    fn describe(&self) -> String {
        alloc::format!(
            "tree(nodes={}, leaves={}, depth={})",
            self.tree().len(),
            self.tree().n_leaves(),
            self.tree().depth()
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Vector(usize),
    Matrix(usize, usize),
}

impl Shape {
    pub fn len(self) -> usize {
        match self {
            Shape::Vector(n) => n,
            Shape::Matrix(r, c) => r * c,
        }
    }

    pub fn is_empty(self) -> bool {
        self.len() == 0
    }
}

/// The function `h` applied to gradient vectors.
pub trait Integrand {
    fn shape(&self, dim: usize) -> Shape;
    /// Writes `h(grad)` into `out` (length `shape(dim).len()`).
    fn evaluate(&self, grad: &[f64], out: &mut [f64]);
}

/// `h(g) = g`
#[derive(Debug, Clone, Copy, Default)]
pub struct Identity;

/// `h(g) = g gᵀ`, row-major.
#[derive(Debug, Clone, Copy, Default)]
pub struct OuterProduct;

impl Integrand for Identity {
    fn shape(&self, dim: usize) -> Shape {
        Shape::Vector(dim)
    }

    fn evaluate(&self, grad: &[f64], out: &mut [f64]) {
        out.copy_from_slice(grad);
    }
}

impl Integrand for OuterProduct {
    fn shape(&self, dim: usize) -> Shape {
        Shape::Matrix(dim, dim)
    }

    fn evaluate(&self, grad: &[f64], out: &mut [f64]) {
        let n = grad.len();
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = grad[i] * grad[j];
            }
        }
    }
}

/// Any closure over (gradient, output buffer) with a fixed output shape.
pub struct FnIntegrand<F> {
    pub shape: Shape,
    pub f: F,
}

impl<F: Fn(&[f64], &mut [f64])> Integrand for FnIntegrand<F> {
    fn shape(&self, _dim: usize) -> Shape {
        self.shape
    }

    fn evaluate(&self, grad: &[f64], out: &mut [f64]) {
        (self.f)(grad, out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IntegralValue {
    pub shape: Shape,
    pub data: Vec<f64>,
}

impl IntegralValue {
    pub fn frobenius_distance(&self, other: &IntegralValue) -> f64 {
        libm::sqrt(
            self.data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| (a - b) * (a - b))
                .sum(),
        )
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|a| a * a).sum())
    }
}

/// Monte Carlo estimate `(1/M) Σ h(∇̃f(x_m))`, `x_m ~ μ`.
///
/// Kept as a running mean, so a constant integrand reproduces its value
/// exactly for every `M`.
pub fn mce<S, H, R>(
    source: &S,
    h: &H,
    measure: &Measure,
    samples: usize,
    rng: &mut R,
) -> Result<IntegralValue>
where
    S: GradientSource + ?Sized,
    H: Integrand + ?Sized,
    R: rand::Rng + ?Sized,
{
    if !measure.can_sample() {
        return Err(Error::MissingCapability {
            measure: measure.name(),
            capability: "sample",
        });
    }
    if samples == 0 {
        return Err(Error::InvalidConfig(
            "Monte Carlo needs at least one sample".into(),
        ));
    }
    let dim = source.dim();
    if measure.dim() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            found: measure.dim(),
        });
    }
    let shape = h.shape(dim);
    let mut acc = vec![0.0; shape.len()];
    let mut value = vec![0.0; shape.len()];
    let mut x = vec![0.0; dim];
    let mut g = vec![0.0; dim];
    for m in 1..=samples {
        measure.sample_into(rng, &mut x);
        source.gradient_into(&x, &mut g);
        h.evaluate(&g, &mut value);
        let inv = 1.0 / m as f64;
        for (a, v) in acc.iter_mut().zip(&value) {
            *a += (v - *a) * inv;
        }
    }
    Ok(IntegralValue { shape, data: acc })
}

/// Partition estimate `Σ_leaves h(G_leaf) μ(cell)`.
pub fn pbe<H: Integrand + ?Sized>(
    field: &GradientField,
    h: &H,
    measure: &Measure,
) -> Result<IntegralValue> {
    if !measure.can_rect_mass() {
        return Err(Error::MissingCapability {
            measure: measure.name(),
            capability: "measure rectangles",
        });
    }
    let masses = measure.leaf_masses(field.tree())?;
    let shape = h.shape(field.dim());
    let mut acc = vec![0.0; shape.len()];
    let mut value = vec![0.0; shape.len()];
    for leaf in field.tree().leaves() {
        let w = masses[leaf.index];
        if w == 0.0 {
            continue;
        }
        h.evaluate(field.node_gradient(leaf.index), &mut value);
        acc.iter_mut().zip(&value).for_each(|(a, v)| *a += w * v);
    }
    Ok(IntegralValue { shape, data: acc })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AttributionMethod {
    MonteCarlo,
    Exact,
}

/// Integrated-gradient attribution of `x` relative to `x_ref`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionResult {
    pub x: Vec<f64>,
    pub x_ref: Vec<f64>,
    pub ig: Vec<f64>,
    /// Monte Carlo sample count; 0 for the exact path integral.
    pub m: usize,
    pub seed: Option<u64>,
    pub method: AttributionMethod,
}

fn prepare_endpoints(dim: usize, x: &[f64], x_ref: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
    for v in [x, x_ref] {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: v.len(),
            });
        }
    }
    let (mut x, mut r) = (x.to_vec(), x_ref.to_vec());
    clamp_unit(&mut x);
    clamp_unit(&mut r);
    Ok((x, r))
}

/// Monte Carlo integrated gradient:
/// `(x − x_ref) ⊙ (1/M) Σ ∇̃f(x_ref + u_m (x − x_ref))`, `u_m ~ U[0, 1]`.
pub fn tbig<S: GradientSource + ?Sized>(
    source: &S,
    x: &[f64],
    x_ref: &[f64],
    samples: usize,
    seed: u64,
) -> Result<AttributionResult> {
    let (x, x_ref) = prepare_endpoints(source.dim(), x, x_ref)?;
    let segment = Measure::segment(x_ref.clone(), x.clone())?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let avg = mce(source, &Identity, &segment, samples, &mut rng)?;
    let ig = x
        .iter()
        .zip(&x_ref)
        .zip(&avg.data)
        .map(|((a, b), g)| (a - b) * g)
        .collect();
    Ok(AttributionResult {
        x,
        x_ref,
        ig,
        m: samples,
        seed: Some(seed),
        method: AttributionMethod::MonteCarlo,
    })
}

/// Part of the segment `x_ref + t (x − x_ref)` spent inside one leaf.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentPiece {
    pub t_start: f64,
    pub t_end: f64,
    pub leaf: usize,
}

/// Splits `[0, 1]` into the parameter intervals where the segment stays in a
/// single leaf, in increasing `t`. Endpoints are clamped to the cube.
///
/// The walk descends the tree clipping the interval at each threshold
/// crossing. A segment running exactly along a split face follows the
/// left-on-ties rule, which is what the interval midpoint would give.
pub fn segment_pieces(
    tree: &RegressionTree,
    x: &[f64],
    x_ref: &[f64],
) -> Result<Vec<SegmentPiece>> {
    let (x, x_ref) = prepare_endpoints(tree.dim(), x, x_ref)?;
    let mut pieces = Vec::new();
    // explicit stack: (node, t0, t1); right pushed first when it comes later
    let mut stack = vec![(0usize, 0.0f64, 1.0f64)];
    while let Some((i, t0, t1)) = stack.pop() {
        let node = tree.node(i);
        let Some(s) = &node.split else {
            pieces.push(SegmentPiece {
                t_start: t0,
                t_end: t1,
                leaf: i,
            });
            continue;
        };
        let start = x_ref[s.variable];
        let delta = x[s.variable] - start;
        if delta == 0.0 {
            let child = if start <= s.threshold {
                s.left
            } else {
                s.right
            };
            stack.push((child, t0, t1));
            continue;
        }
        let cross = ((s.threshold - start) / delta).clamp(t0, t1);
        // moving up along the variable: left part first
        let (first, second) = if delta > 0.0 {
            (s.left, s.right)
        } else {
            (s.right, s.left)
        };
        if cross < t1 {
            stack.push((second, cross, t1));
        }
        if cross > t0 {
            stack.push((first, t0, cross));
        }
    }
    Ok(pieces)
}

/// Integrated gradient computed exactly from the leaf crossings of the
/// segment.
pub fn tbig_exact(field: &GradientField, x: &[f64], x_ref: &[f64]) -> Result<AttributionResult> {
    let (x, x_ref) = prepare_endpoints(field.dim(), x, x_ref)?;
    let mut avg = vec![0.0; field.dim()];
    for piece in segment_pieces(field.tree(), &x, &x_ref)? {
        let w = piece.t_end - piece.t_start;
        avg.iter_mut()
            .zip(field.node_gradient(piece.leaf))
            .for_each(|(a, g)| *a += w * g);
    }
    let ig = x
        .iter()
        .zip(&x_ref)
        .zip(&avg)
        .map(|((a, b), g)| (a - b) * g)
        .collect();
    Ok(AttributionResult {
        x,
        x_ref,
        ig,
        m: 0,
        seed: None,
        method: AttributionMethod::Exact,
    })
}

/// Active-subspace matrix with its eigendecomposition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubspaceResult {
    /// Descending, with rounding-level negatives clamped to 0.
    pub eigenvalues: Vec<f64>,
    /// `eigenvectors[k]` pairs with `eigenvalues[k]`.
    pub eigenvectors: Vec<Vec<f64>>,
    /// Row-major.
    pub matrix: Vec<Vec<f64>>,
    pub measure: String,
    pub model: String,
    pub seed: Option<u64>,
}

impl SubspaceResult {
    pub fn from_matrix(
        c: &SymmetricMatrix,
        measure: &str,
        model: String,
        seed: Option<u64>,
    ) -> Result<Self> {
        let eig = eig_sym(c)?;
        Ok(Self {
            eigenvalues: eig
                .values
                .iter()
                .map(|&l| {
                    if l < 0.0 && l >= -1e-10 * c.max_abs() {
                        0.0
                    } else {
                        l
                    }
                })
                .collect(),
            eigenvectors: eig.vectors,
            matrix: c.rows().map(|r| r.to_vec()).collect(),
            measure: measure.into(),
            model,
            seed,
        })
    }

    pub fn symmetric_matrix(&self) -> SymmetricMatrix {
        let dim = self.matrix.len();
        SymmetricMatrix::from_row_major(dim, self.matrix.iter().flatten().copied().collect())
            .expect("square by construction")
    }

    /// The leading `k` eigenvectors.
    pub fn leading(&self, k: usize) -> Vec<Vec<f64>> {
        self.eigenvectors.iter().take(k).cloned().collect()
    }
}

pub(crate) fn outer_product_matrix(value: IntegralValue) -> Result<SymmetricMatrix> {
    match value.shape {
        Shape::Matrix(n, m) if n == m => SymmetricMatrix::from_row_major(n, value.data),
        _ => Err(Error::InvalidConfig("expected a square matrix".into())),
    }
}

/// Active-subspace matrix `Σ_leaves G Gᵀ μ(cell)` and its eigensystem.
pub fn tbas(field: &GradientField, measure: &Measure) -> Result<SubspaceResult> {
    if !measure.can_rect_mass() {
        return Err(Error::MissingCapability {
            measure: measure.name(),
            capability: "measure rectangles",
        });
    }
    let c = outer_product_matrix(pbe(field, &OuterProduct, measure)?)?;
    SubspaceResult::from_matrix(&c, measure.name(), field.describe(), None)
}

/// Active-subspace matrix by Monte Carlo, for measures without rectangle mass.
pub fn tbas_monte_carlo<S: GradientSource + ?Sized>(
    source: &S,
    measure: &Measure,
    samples: usize,
    seed: u64,
) -> Result<SubspaceResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = outer_product_matrix(mce(source, &OuterProduct, measure, samples, &mut rng)?)?;
    SubspaceResult::from_matrix(&c, measure.name(), source.describe(), Some(seed))
}
