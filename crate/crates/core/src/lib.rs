//! Gradient estimation from fitted regression trees.
//!
//! A constant-leaf regression tree carries enough information to recover a
//! coarse estimate of the gradient of the function it approximates: the
//! difference between the means of two sibling cells, scaled by the extent of
//! their parent along the split variable, acts like a finite difference. This
//! crate fits trees, turns them into piecewise-constant gradient fields and
//! integrates those fields against a measure to get integrated-gradient
//! attributions and active-subspace matrices.
//!
//! The crate is `no_std` and only needs `alloc`; file formats, the experiment
//! harness and the command line live in `treediff-cli`.

#![no_std]
#![forbid(unsafe_code)]
// `!(a < b)` is used on purpose so that NaN fails the check
#![allow(clippy::neg_cmp_op_on_partial_ord)]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod data;
pub mod ensemble;
pub mod error;
pub mod gradfield;
pub mod integrodiff;
pub mod linalg;
pub mod measure;
pub mod tree;

pub use crate::data::{
    generate_synthetic, normalize_unit_cube, true_gradient, Dataset, InputLaw, Normalizer,
    SyntheticFunction, SyntheticSpec,
};
pub use crate::ensemble::{fit_forest, BootstrapConfig, Forest};
pub use crate::error::{Error, Result};
pub use crate::gradfield::{GradientField, LeafGradient};
pub use crate::integrodiff::{
    mce, pbe, segment_pieces, tbas, tbas_monte_carlo, tbig, tbig_exact, AttributionMethod,
    AttributionResult, GradientSource, Identity, IntegralValue, Integrand, OuterProduct, Shape,
    SubspaceResult, DEFAULT_TBIG_SAMPLES,
};
pub use crate::linalg::{eig_sym, principal_angle, sqrt_psd, EigenDecomposition, SymmetricMatrix};
pub use crate::measure::Measure;
pub use crate::tree::{
    fit, DepthLimit, FitConfig, FitInfo, Located, Node, RegressionTree, Split, SplitRule,
};

/// Clamps every coordinate of `x` into the unit cube, in place.
pub fn clamp_unit(x: &mut [f64]) {
    for v in x.iter_mut() {
        *v = v.clamp(0.0, 1.0);
    }
}
