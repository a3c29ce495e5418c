//! Bagged forests of regression trees.
//!
//! The forest gradient at a point is the mean of the member fields. The
//! forest active-subspace matrix is the mean of the members' partition
//! integrals, each over that member's own cells. That is not the same as
//! integrating the outer product of the mean field.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::gradfield::GradientField;
use crate::integrodiff::{outer_product_matrix, pbe, GradientSource, OuterProduct, SubspaceResult};
use crate::linalg::SymmetricMatrix;
use crate::measure::Measure;
use crate::tree::{fit, FitConfig, RegressionTree};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapConfig {
    /// Resample size as a fraction of the training rows.
    pub sample_fraction: f64,
    pub replace: bool,
    /// Fraction of variables examined per split.
    pub feature_fraction: f64,
    /// Member `t` uses seed `seed + t` for both resampling and fitting.
    pub seed: u64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            sample_fraction: 1.0,
            replace: true,
            feature_fraction: 1.0,
            seed: 0,
        }
    }
}

impl BootstrapConfig {
    pub fn with_seed(self, seed: u64) -> Self {
        Self { seed, ..self }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sample_fraction > 0.0 && self.sample_fraction.is_finite()) {
            return Err(Error::InvalidConfig(
                "sample fraction must be positive".into(),
            ));
        }
        if !self.replace && self.sample_fraction > 1.0 {
            return Err(Error::InvalidConfig(
                "sampling without replacement needs fraction <= 1".into(),
            ));
        }
        if !(self.feature_fraction > 0.0 && self.feature_fraction <= 1.0) {
            return Err(Error::InvalidConfig(
                "feature fraction must lie in (0, 1]".into(),
            ));
        }
        Ok(())
    }

    /// Row indices for member `t`. Without replacement at fraction 1 this is
    /// every row in order.
    pub fn resample(&self, n: usize, t: usize) -> Vec<usize> {
        let size = (libm::round(self.sample_fraction * n as f64) as usize).max(1);
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_add(t as u64));
        if self.replace {
            (0..size).map(|_| rng.random_range(0..n)).collect()
        } else if size >= n {
            (0..n).collect()
        } else {
            let mut rows = index::sample(&mut rng, n, size).into_vec();
            rows.sort_unstable();
            rows
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ForestRecord", into = "ForestRecord")]
pub struct Forest {
    bootstrap: BootstrapConfig,
    members: Vec<GradientField>,
}

#[derive(Serialize, Deserialize)]
struct ForestRecord {
    n_trees: usize,
    bootstrap: BootstrapConfig,
    trees: Vec<RegressionTree>,
}

impl TryFrom<ForestRecord> for Forest {
    type Error = Error;

    fn try_from(r: ForestRecord) -> Result<Self> {
        if r.n_trees != r.trees.len() {
            return Err(Error::InvalidTree(format!(
                "header says {} trees, found {}",
                r.n_trees,
                r.trees.len()
            )));
        }
        Forest::from_trees(r.trees, r.bootstrap)
    }
}

impl From<Forest> for ForestRecord {
    fn from(f: Forest) -> Self {
        ForestRecord {
            n_trees: f.members.len(),
            bootstrap: f.bootstrap,
            trees: f
                .members
                .into_iter()
                .map(GradientField::into_tree)
                .collect(),
        }
    }
}

/// Fits member `t` of a forest. Exposed so callers can fit members in
/// parallel and assemble them with [`Forest::from_members`].
pub fn fit_member(
    d: &Dataset,
    cfg: &FitConfig,
    boot: &BootstrapConfig,
    t: usize,
) -> Result<GradientField> {
    boot.validate()?;
    let rows = boot.resample(d.n_rows(), t);
    let sample = if rows.len() == d.n_rows() && rows.iter().enumerate().all(|(i, &r)| i == r) {
        None
    } else {
        Some(d.select_rows(&rows))
    };
    let cfg = FitConfig {
        feature_fraction: boot.feature_fraction,
        seed: boot.seed.wrapping_add(t as u64),
        ..*cfg
    };
    let tree = fit(sample.as_ref().unwrap_or(d), &cfg)?;
    Ok(GradientField::extract(tree))
}

/// Fits `n_trees` members one after another.
pub fn fit_forest(
    d: &Dataset,
    cfg: &FitConfig,
    n_trees: usize,
    boot: &BootstrapConfig,
) -> Result<Forest> {
    let members = (0..n_trees)
        .map(|t| fit_member(d, cfg, boot, t))
        .collect::<Result<Vec<_>>>()?;
    Forest::from_members(members, *boot)
}

impl Forest {
    pub fn from_members(members: Vec<GradientField>, bootstrap: BootstrapConfig) -> Result<Self> {
        let Some(first) = members.first() else {
            return Err(Error::InvalidConfig(
                "a forest needs at least one tree".into(),
            ));
        };
        let dim = first.dim();
        if let Some(m) = members.iter().find(|m| m.dim() != dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: m.dim(),
            });
        }
        Ok(Self { bootstrap, members })
    }

    pub fn from_trees(trees: Vec<RegressionTree>, bootstrap: BootstrapConfig) -> Result<Self> {
        Self::from_members(
            trees.into_iter().map(GradientField::extract).collect(),
            bootstrap,
        )
    }

    pub fn n_trees(&self) -> usize {
        self.members.len()
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }

    pub fn bootstrap(&self) -> &BootstrapConfig {
        &self.bootstrap
    }

    pub fn members(&self) -> &[GradientField] {
        &self.members
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.members
            .iter()
            .map(|m| m.tree().predict(x))
            .sum::<f64>()
            / self.members.len() as f64
    }

    pub fn grad_at(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(x, &mut out);
        out
    }

    /// Mean of the members' partition integrals of `g gᵀ`, then its
    /// eigensystem.
    pub fn tbas(&self, measure: &Measure) -> Result<SubspaceResult> {
        let dim = self.dim();
        let mut acc = vec![0.0; dim * dim];
        for m in &self.members {
            let c = pbe(m, &OuterProduct, measure)?;
            acc.iter_mut().zip(&c.data).for_each(|(a, v)| *a += v);
        }
        let t = self.members.len() as f64;
        acc.iter_mut().for_each(|a| *a /= t);
        let c = outer_product_matrix(crate::integrodiff::IntegralValue {
            shape: crate::integrodiff::Shape::Matrix(dim, dim),
            data: acc,
        })?;
        SubspaceResult::from_matrix(
            &c,
            measure.name(),
            self.describe(),
            Some(self.bootstrap.seed),
        )
    }

    /// Per-member matrices, in member order.
    pub fn member_matrices(&self, measure: &Measure) -> Result<Vec<SymmetricMatrix>> {
        self.members
            .iter()
            .map(|m| outer_product_matrix(pbe(m, &OuterProduct, measure)?))
            .collect()
    }
}

impl GradientSource for Forest {
    fn dim(&self) -> usize {
        Forest::dim(self)
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for m in &self.members {
            out.iter_mut().zip(m.grad_at(x)).for_each(|(o, g)| *o += g);
        }
        let t = self.members.len() as f64;
        out.iter_mut().for_each(|o| *o /= t);
    }

    fn describe(&self) -> String {
        format!("forest(trees={}, field-average)", self.members.len())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, InputLaw, SyntheticFunction, SyntheticSpec};
    use crate::integrodiff::{tbas, tbig, tbig_exact};
    use crate::linalg::eig_sym;

    fn data(seed: u64) -> Dataset {
        let spec = SyntheticSpec::random(
            SyntheticFunction::LogRidge,
            3,
            3,
            0.05,
            InputLaw::UniformCube,
            seed,
        )
        .unwrap();
        generate_synthetic(&spec, 800).unwrap()
    }

    #[test]
    fn single_member_without_replacement_is_a_tree() {
        let d = data(1);
        let cfg = FitConfig::cart(6);
        let boot = BootstrapConfig {
            replace: false,
            ..BootstrapConfig::default()
        }
        .with_seed(42);
        let f = fit_forest(&d, &cfg, 1, &boot).unwrap();
        let t = fit(&d, &cfg.with_seed(42)).unwrap();
        assert_eq!(f.members()[0].tree(), &t);
    }

    #[test]
    fn determinism_and_distinct_members() {
        let d = data(2);
        let boot = BootstrapConfig::default().with_seed(7);
        let a = fit_forest(&d, &FitConfig::cart(5), 4, &boot).unwrap();
        let b = fit_forest(&d, &FitConfig::cart(5), 4, &boot).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.members()[0].tree(), a.members()[1].tree());
        let m2 = fit_member(&d, &FitConfig::cart(5), &boot, 2).unwrap();
        assert_eq!(&m2, &a.members()[2]);
    }

    #[test]
    fn resample_sizes() {
        let boot = BootstrapConfig {
            sample_fraction: 0.5,
            replace: false,
            ..Default::default()
        };
        let rows = boot.resample(100, 3);
        assert_eq!(rows.len(), 50);
        assert!(rows.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(BootstrapConfig::default().resample(100, 0).len(), 100);
        assert!(BootstrapConfig {
            sample_fraction: 2.0,
            replace: false,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn copies_of_one_tree() {
        let t = fit(&data(3), &FitConfig::cart(6)).unwrap();
        let gf = GradientField::extract(t.clone());
        let f =
            Forest::from_trees(vec![t.clone(), t.clone(), t], BootstrapConfig::default()).unwrap();
        for x in [[0.1, 0.5, 0.9], [0.7, 0.2, 0.4]] {
            for (a, b) in f.grad_at(&x).iter().zip(gf.grad_at(&x)) {
                assert!((a - b).abs() <= 1e-15 * (1.0 + b.abs()));
            }
        }
        let r = f.tbas(&Measure::uniform(3)).unwrap();
        let s = tbas(&gf, &Measure::uniform(3)).unwrap();
        for (a, b) in r.matrix.iter().flatten().zip(s.matrix.iter().flatten()) {
            assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()));
        }
        // tbig through the averaged field agrees with the exact single-tree path
        let mc = tbig(&f, &[0.9, 0.9, 0.9], &[0.1, 0.1, 0.1], 50_000, 1).unwrap();
        let ex = tbig_exact(&gf, &[0.9, 0.9, 0.9], &[0.1, 0.1, 0.1]).unwrap();
        for (a, b) in mc.ig.iter().zip(&ex.ig) {
            assert!((a - b).abs() <= 0.02 * (b.abs() + 0.01));
        }
    }

    #[test]
    fn forest_field_and_matrix_are_means() {
        let d = data(4);
        let f = fit_forest(&d, &FitConfig::cart(5), 5, &BootstrapConfig::default()).unwrap();
        let x = [0.3, 0.6, 0.2];
        let mut mean = [0.0; 3];
        for m in f.members() {
            for (acc, g) in mean.iter_mut().zip(m.grad_at(&x)) {
                *acc += g / 5.0;
            }
        }
        for (a, b) in f.grad_at(&x).iter().zip(mean) {
            assert!((a - b).abs() <= 1e-14);
        }
        let u = Measure::uniform(3);
        let r = f.tbas(&u).unwrap();
        let mats = f.member_matrices(&u).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                let m: f64 = mats.iter().map(|c| c.get(i, j)).sum::<f64>() / 5.0;
                assert!((r.matrix[i][j] - m).abs() <= 1e-12);
            }
        }
        let eig = eig_sym(&r.symmetric_matrix()).unwrap();
        assert!(eig.values[2] >= -1e-10 * eig.values[0]);
    }

    #[test]
    fn json_round_trip() {
        let f = fit_forest(
            &data(5),
            &FitConfig::cart(4),
            3,
            &BootstrapConfig::default(),
        )
        .unwrap();
        let s = serde_json::to_string(&f).unwrap();
        let g: Forest = serde_json::from_str(&s).unwrap();
        assert_eq!(f, g);
        let broken = s.replacen("\"n_trees\":3", "\"n_trees\":2", 1);
        assert!(serde_json::from_str::<Forest>(&broken).is_err());
    }
}
