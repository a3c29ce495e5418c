//! Feature augmentation by linear maps, and its cross-validated comparison.
//!
//! A map appends `k = ⌈√P⌉` linear combinations of the unit-cube features to
//! the original columns. For a PSD matrix `C = V Λ Vᵀ` (the active-subspace
//! matrix, or the feature covariance for PCA) the appended columns are
//! `X V_k Λ_k^{1/2}`, the leading part of `X C^{1/2}`.

use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use treediff::linalg::random_orthonormal_basis;
use treediff::{
    eig_sym, fit, normalize_unit_cube, tbas, Dataset, FitConfig, GradientField, Measure,
    SymmetricMatrix,
};

use crate::error::{CliError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Rotation {
    Tbas,
    Pca,
    Random,
    Identity,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [
        Rotation::Tbas,
        Rotation::Pca,
        Rotation::Random,
        Rotation::Identity,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Rotation::Tbas => "tbas",
            Rotation::Pca => "pca",
            Rotation::Random => "random",
            Rotation::Identity => "identity",
        }
    }
}

impl FromStr for Rotation {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        Rotation::ALL
            .into_iter()
            .find(|r| r.name() == s)
            .ok_or_else(|| {
                CliError::usage(format!(
                    "unknown rotation {s:?} (expected tbas, pca, random or identity)"
                ))
            })
    }
}

/// Number of appended columns for `p` features.
pub fn n_components(p: usize) -> usize {
    let mut k = (p as f64).sqrt().floor() as usize;
    while k * k < p {
        k += 1;
    }
    k
}

/// `columns[j]` is the `P`-vector producing appended feature `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMap {
    pub columns: Vec<Vec<f64>>,
}

impl LinearMap {
    pub fn identity() -> Self {
        Self {
            columns: Vec::new(),
        }
    }

    /// Leading `k` eigenvectors of `c`, each scaled by the square root of its
    /// eigenvalue.
    pub fn from_psd(c: &SymmetricMatrix, k: usize) -> Result<Self> {
        let eig = eig_sym(c)?;
        let columns = eig
            .values
            .iter()
            .zip(eig.vectors)
            .take(k)
            .map(|(&l, v)| {
                let s = l.max(0.0).sqrt();
                v.into_iter().map(|x| x * s).collect()
            })
            .collect();
        Ok(Self { columns })
    }

    pub fn pca(d: &Dataset, k: usize) -> Result<Self> {
        let mean = d.feature_means();
        let p = d.n_features();
        let mut cov = SymmetricMatrix::zeros(p);
        let w = 1.0 / d.n_rows() as f64;
        let mut centered = vec![0.0; p];
        for row in d.rows() {
            centered
                .iter_mut()
                .zip(row.iter().zip(&mean))
                .for_each(|(c, (x, m))| *c = x - m);
            cov.add_outer(&centered, w);
        }
        Self::from_psd(&cov, k)
    }

    pub fn random(p: usize, k: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Self {
            columns: random_orthonormal_basis(p, k, &mut rng)?,
        })
    }

    pub fn k(&self) -> usize {
        self.columns.len()
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.columns
            .iter()
            .map(|c| c.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Appended columns for every row of `d`, row-major.
    pub fn project(&self, d: &Dataset) -> Vec<f64> {
        d.rows().flat_map(|r| self.apply(r)).collect()
    }

    pub fn augment(&self, d: &Dataset) -> Result<Dataset> {
        let names = (1..=self.k()).map(|j| format!("rot{j}")).collect();
        Ok(d.with_extra_columns(&self.project(d), names)?)
    }
}

/// Settings for the cross-validated comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CvConfig {
    pub folds: usize,
    /// Tree whose error is measured.
    pub model: FitConfig,
    /// Tree fitted on each training fold to estimate the subspace.
    pub subspace_model: FitConfig,
    pub seed: u64,
}

impl Default for CvConfig {
    fn default() -> Self {
        Self {
            folds: 10,
            model: FitConfig::cart(4),
            subspace_model: FitConfig::cart(8),
            seed: 0,
        }
    }
}

/// Map learned from a training set whose features lie in the unit cube.
pub fn learn_map(
    rotation: Rotation,
    train: &Dataset,
    cfg: &CvConfig,
    seed: u64,
) -> Result<LinearMap> {
    let p = train.n_features();
    let k = n_components(p);
    match rotation {
        Rotation::Identity => Ok(LinearMap::identity()),
        Rotation::Pca => LinearMap::pca(train, k),
        Rotation::Random => LinearMap::random(p, k, seed),
        Rotation::Tbas => {
            let gf = GradientField::extract(fit(train, &cfg.subspace_model)?);
            let res = tbas(&gf, &Measure::empirical_from_dataset(train)?)?;
            LinearMap::from_psd(&res.symmetric_matrix(), k)
        }
    }
}

/// Root mean squared error on each held-out fold. Rows are assigned to folds
/// by a seeded shuffle; the appended columns are renormalized on the training
/// fold (held-out values outside the cube are clamped when routed).
pub fn cv_rmse(d: &Dataset, rotation: Rotation, cfg: &CvConfig) -> Result<Vec<f64>> {
    let n = d.n_rows();
    if cfg.folds < 2 || cfg.folds > n {
        return Err(CliError::usage(format!("fold count must lie in 2..={n}")));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut out = Vec::with_capacity(cfg.folds);
    for fold in 0..cfg.folds {
        let (mut test_rows, mut train_rows) = (Vec::new(), Vec::new());
        for (pos, &i) in order.iter().enumerate() {
            if pos % cfg.folds == fold {
                test_rows.push(i)
            } else {
                train_rows.push(i)
            }
        }
        let train = d.select_rows(&train_rows);
        let test = d.select_rows(&test_rows);
        let map = learn_map(rotation, &train, cfg, cfg.seed.wrapping_add(fold as u64))?;
        let (train_aug, norm) = normalize_unit_cube(&map.augment(&train)?);
        let test_aug = norm.apply(&map.augment(&test)?)?;
        let tree = fit(&train_aug, &cfg.model)?;
        let sse: f64 = test_aug
            .rows()
            .zip(test_aug.response())
            .map(|(x, y)| (tree.predict(x) - y).powi(2))
            .sum();
        out.push((sse / test.n_rows() as f64).sqrt());
    }
    Ok(out)
}
