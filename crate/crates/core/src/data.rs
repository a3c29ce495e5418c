//! Datasets, unit-cube normalization and the synthetic test functions.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::str::FromStr;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::norm;

/// Feature matrix (row-major, `N × P`) with its response vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Vec<f64>,
    response: Vec<f64>,
    feature_names: Vec<String>,
    n_features: usize,
}

impl Dataset {
    pub fn new(
        features: Vec<f64>,
        n_features: usize,
        response: Vec<f64>,
        feature_names: Vec<String>,
    ) -> Result<Self> {
        if n_features == 0 || response.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if features.len() != response.len() * n_features {
            return Err(Error::DimensionMismatch {
                expected: response.len() * n_features,
                found: features.len(),
            });
        }
        if feature_names.len() != n_features {
            return Err(Error::DimensionMismatch {
                expected: n_features,
                found: feature_names.len(),
            });
        }
        if let Some(i) = features.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i / n_features,
                column: Some(i % n_features),
            });
        }
        if let Some(row) = response.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { row, column: None });
        }
        Ok(Self {
            features,
            response,
            feature_names,
            n_features,
        })
    }

    /// Builds a dataset with default feature names `x1..xP`.
    pub fn from_rows(rows: &[Vec<f64>], response: Vec<f64>) -> Result<Self> {
        let p = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != p) {
            return Err(Error::DimensionMismatch {
                expected: p,
                found: bad.len(),
            });
        }
        let features = rows.iter().flatten().copied().collect();
        Self::new(features, p, response, default_names(p))
    }

    pub fn n_rows(&self) -> usize {
        self.response.len()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> {
        self.features.chunks_exact(self.n_features)
    }

    #[inline]
    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.features[row * self.n_features + col]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn response(&self) -> &[f64] {
        &self.response
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    /// Rows selected by `indices`, in that order (repeats allowed).
    pub fn select_rows(&self, indices: &[usize]) -> Dataset {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut response = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.row(i));
            response.push(self.response[i]);
        }
        Dataset {
            features,
            response,
            feature_names: self.feature_names.clone(),
            n_features: self.n_features,
        }
    }

    /// Appends extra feature columns; `extra` is row-major `N × k`.
    pub fn with_extra_columns(&self, extra: &[f64], names: Vec<String>) -> Result<Dataset> {
        let k = names.len();
        if extra.len() != k * self.n_rows() {
            return Err(Error::DimensionMismatch {
                expected: k * self.n_rows(),
                found: extra.len(),
            });
        }
        let p = self.n_features + k;
        let mut features = Vec::with_capacity(p * self.n_rows());
        for (i, row) in self.rows().enumerate() {
            features.extend_from_slice(row);
            features.extend_from_slice(&extra[i * k..(i + 1) * k]);
        }
        let mut all_names = self.feature_names.clone();
        all_names.extend(names);
        Dataset::new(features, p, self.response.clone(), all_names)
    }

    pub fn feature_means(&self) -> Vec<f64> {
        let mut means = vec![0.0; self.n_features];
        for row in self.rows() {
            means.iter_mut().zip(row).for_each(|(m, v)| *m += v);
        }
        let n = self.n_rows() as f64;
        means.iter_mut().for_each(|m| *m /= n);
        means
    }

    /// Index of the first value outside `[0, 1]`, as (row, column, value).
    pub fn first_outside_unit_cube(&self) -> Option<(usize, usize, f64)> {
        self.features
            .iter()
            .position(|v| !(0.0..=1.0).contains(v))
            .map(|i| (i / self.n_features, i % self.n_features, self.features[i]))
    }
}

pub(crate) fn default_names(p: usize) -> Vec<String> {
    (1..=p).map(|i| format!("x{i}")).collect()
}

/// Per-feature affine map onto `[0, 1]`.
///
/// A constant column `c` is stored with bounds `c ± 0.5`, so it maps to 0.5
/// and the map stays invertible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub constant: Vec<bool>,
}

impl Normalizer {
    pub fn fit(d: &Dataset) -> Self {
        let p = d.n_features();
        let mut lower = vec![f64::INFINITY; p];
        let mut upper = vec![f64::NEG_INFINITY; p];
        for row in d.rows() {
            for (j, &v) in row.iter().enumerate() {
                lower[j] = lower[j].min(v);
                upper[j] = upper[j].max(v);
            }
        }
        let mut constant = vec![false; p];
        for j in 0..p {
            if !(upper[j] > lower[j]) {
                constant[j] = true;
                let c = lower[j];
                lower[j] = c - 0.5;
                upper[j] = c + 0.5;
            }
        }
        Self {
            lower,
            upper,
            constant,
        }
    }

    pub fn identity(p: usize) -> Self {
        Self {
            lower: vec![0.0; p],
            upper: vec![1.0; p],
            constant: vec![false; p],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn normalize_point(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .enumerate()
            .map(|(j, &v)| (v - self.lower[j]) / (self.upper[j] - self.lower[j]))
            .collect()
    }

    pub fn denormalize_point(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .enumerate()
            .map(|(j, &v)| self.lower[j] + v * (self.upper[j] - self.lower[j]))
            .collect()
    }

    pub fn apply(&self, d: &Dataset) -> Result<Dataset> {
        if d.n_features() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: self.dim(),
                found: d.n_features(),
            });
        }
        let features = d.rows().flat_map(|r| self.normalize_point(r)).collect();
        Dataset::new(
            features,
            d.n_features(),
            d.response.clone(),
            d.feature_names.clone(),
        )
    }
}

/// Min-max normalizes every feature onto `[0, 1]`.
pub fn normalize_unit_cube(d: &Dataset) -> (Dataset, Normalizer) {
    let norm = Normalizer::fit(d);
    let out = norm
        .apply(d)
        .expect("normalizer fitted on the same dataset");
    (out, norm)
}

/// Noiseless test functions on the unit cube.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyntheticFunction {
    /// `cos(6π aᵀ(x − 0.5))`
    RidgeCosine,
    /// `log(1 + aᵀx)`
    LogRidge,
    /// Ackley's function on `z = 4x − 2 ∈ [−2, 2]^P`; ignores the direction.
    Ackley,
}

impl SyntheticFunction {
    pub fn name(self) -> &'static str {
        match self {
            SyntheticFunction::RidgeCosine => "ridge-cosine",
            SyntheticFunction::LogRidge => "log-ridge",
            SyntheticFunction::Ackley => "ackley",
        }
    }

    pub fn evaluate(self, direction: &[f64], x: &[f64]) -> f64 {
        match self {
            SyntheticFunction::RidgeCosine => {
                let t: f64 = direction.iter().zip(x).map(|(a, v)| a * (v - 0.5)).sum();
                libm::cos(6.0 * PI * t)
            }
            SyntheticFunction::LogRidge => {
                let t: f64 = direction.iter().zip(x).map(|(a, v)| a * v).sum();
                libm::log1p(t)
            }
            SyntheticFunction::Ackley => {
                let p = x.len() as f64;
                let (sq, cs) = x.iter().fold((0.0, 0.0), |(sq, cs), &v| {
                    let z = ACKLEY_SCALE * v - ACKLEY_SHIFT;
                    (sq + z * z, cs + libm::cos(2.0 * PI * z))
                });
                -20.0 * libm::exp(-0.2 * libm::sqrt(sq / p)) - libm::exp(cs / p)
                    + 20.0
                    + core::f64::consts::E
            }
        }
    }

    pub fn gradient(self, direction: &[f64], x: &[f64]) -> Vec<f64> {
        match self {
            SyntheticFunction::RidgeCosine => {
                let t: f64 = direction.iter().zip(x).map(|(a, v)| a * (v - 0.5)).sum();
                let s = -6.0 * PI * libm::sin(6.0 * PI * t);
                direction.iter().map(|a| s * a).collect()
            }
            SyntheticFunction::LogRidge => {
                let t: f64 = direction.iter().zip(x).map(|(a, v)| a * v).sum();
                direction.iter().map(|a| a / (1.0 + t)).collect()
            }
            SyntheticFunction::Ackley => {
                let p = x.len() as f64;
                let z: Vec<f64> = x.iter().map(|v| ACKLEY_SCALE * v - ACKLEY_SHIFT).collect();
                let sq: f64 = z.iter().map(|v| v * v).sum();
                let cs: f64 = z.iter().map(|v| libm::cos(2.0 * PI * v)).sum();
                let r = libm::sqrt(sq / p);
                let radial = if r > 0.0 {
                    4.0 * libm::exp(-0.2 * r) / (p * r)
                } else {
                    0.0
                };
                let periodic = 2.0 * PI / p * libm::exp(cs / p);
                z.iter()
                    .map(|&zi| ACKLEY_SCALE * (radial * zi + periodic * libm::sin(2.0 * PI * zi)))
                    .collect()
            }
        }
    }
}

/// Ackley inputs are `ACKLEY_SCALE * x - ACKLEY_SHIFT`, i.e. `[−2, 2]^P`.
pub const ACKLEY_SCALE: f64 = 4.0;
pub const ACKLEY_SHIFT: f64 = 2.0;

impl FromStr for SyntheticFunction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ridge-cosine" => Ok(SyntheticFunction::RidgeCosine),
            "log-ridge" => Ok(SyntheticFunction::LogRidge),
            "ackley" => Ok(SyntheticFunction::Ackley),
            other => Err(Error::UnknownFunction(other.to_string())),
        }
    }
}

/// Truncated-normal marginal: mean 0.5, standard deviation 0.15.
pub const TRUNCATED_NORMAL_MEAN: f64 = 0.5;
pub const TRUNCATED_NORMAL_SD: f64 = 0.15;
const MAX_CONSECUTIVE_REJECTIONS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InputLaw {
    UniformCube,
    /// Equicorrelated normal restricted to the unit cube by rejection.
    TruncatedNormal {
        rho: f64,
    },
}

impl InputLaw {
    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) -> Result<()> {
        match *self {
            InputLaw::UniformCube => {
                out.iter_mut().for_each(|v| *v = rng.random::<f64>());
                Ok(())
            }
            InputLaw::TruncatedNormal { rho } => {
                let shared_w = libm::sqrt(rho);
                let own_w = libm::sqrt(1.0 - rho);
                for _ in 0..MAX_CONSECUTIVE_REJECTIONS {
                    let shared: f64 = StandardNormal.sample(rng);
                    let mut inside = true;
                    for v in out.iter_mut() {
                        let own: f64 = StandardNormal.sample(rng);
                        *v = TRUNCATED_NORMAL_MEAN
                            + TRUNCATED_NORMAL_SD * (shared_w * shared + own_w * own);
                        inside &= (0.0..=1.0).contains(v);
                    }
                    if inside {
                        return Ok(());
                    }
                }
                Err(Error::SamplerExhausted {
                    attempts: MAX_CONSECUTIVE_REJECTIONS,
                })
            }
        }
    }
}

/// Everything needed to regenerate a synthetic dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub function: SyntheticFunction,
    /// Unit-norm direction `a`; its length is the dimension.
    pub direction: Vec<f64>,
    /// Number of nonzero entries of `direction`.
    pub sparsity: usize,
    pub noise_sd: f64,
    pub input_law: InputLaw,
    pub seed: u64,
}

impl SyntheticSpec {
    pub fn new(
        function: SyntheticFunction,
        direction: Vec<f64>,
        noise_sd: f64,
        input_law: InputLaw,
        seed: u64,
    ) -> Result<Self> {
        let sparsity = direction.iter().filter(|v| **v != 0.0).count();
        let spec = Self {
            function,
            direction,
            sparsity,
            noise_sd,
            input_law,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Draws a random direction with `sparsity` nonzero Gaussian entries
    /// (on uniformly chosen coordinates), normalized to unit length. For
    /// `log-ridge` the entries are taken in absolute value so that
    /// `1 + aᵀx > 0` on the whole cube.
    pub fn random(
        function: SyntheticFunction,
        dim: usize,
        sparsity: usize,
        noise_sd: f64,
        input_law: InputLaw,
        seed: u64,
    ) -> Result<Self> {
        if dim == 0 || sparsity == 0 || sparsity > dim {
            return Err(Error::InvalidConfig(format!(
                "sparsity {sparsity} must lie in 1..={dim}"
            )));
        }
        // separate stream from the one used for the sample itself
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(DIRECTION_STREAM);
        let mut direction = vec![0.0; dim];
        let mut support = index::sample(&mut rng, dim, sparsity).into_vec();
        support.sort_unstable();
        loop {
            for &j in &support {
                let g: f64 = StandardNormal.sample(&mut rng);
                direction[j] = if function == SyntheticFunction::LogRidge {
                    g.abs()
                } else {
                    g
                };
            }
            let len = norm(&direction);
            if len > 1e-8 {
                direction.iter_mut().for_each(|v| *v /= len);
                break;
            }
        }
        Self::new(function, direction, noise_sd, input_law, seed)
    }

    pub fn dim(&self) -> usize {
        self.direction.len()
    }

    pub fn validate(&self) -> Result<()> {
        let p = self.direction.len();
        if p == 0 {
            return Err(Error::InvalidDirection("empty".into()));
        }
        if self.direction.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidDirection("non-finite entry".into()));
        }
        let len = norm(&self.direction);
        if (len - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidDirection(format!("norm {len} is not 1")));
        }
        if self.sparsity > p {
            return Err(Error::InvalidConfig("sparsity exceeds dimension".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(
                "noise standard deviation must be >= 0".into(),
            ));
        }
        if let InputLaw::TruncatedNormal { rho } = self.input_law {
            if !(0.0..=0.99).contains(&rho) {
                return Err(Error::InvalidConfig(format!(
                    "correlation {rho} outside [0, 0.99]"
                )));
            }
        }
        Ok(())
    }

    /// Noiseless function value.
    pub fn evaluate(&self, x: &[f64]) -> f64 {
        self.function.evaluate(&self.direction, x)
    }
}

const NOISE_STREAM: u64 = 1;
const DIRECTION_STREAM: u64 = 2;

/// Draws `n` rows from the spec's input law and evaluates the function,
/// adding Gaussian noise to the response. Inputs and noise come from
/// separate streams of the same seed, so the same seed with different noise
/// levels gives the same design points.
pub fn generate_synthetic(spec: &SyntheticSpec, n: usize) -> Result<Dataset> {
    spec.validate()?;
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    let p = spec.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    noise_rng.set_stream(NOISE_STREAM);

    let mut features = vec![0.0; n * p];
    let mut response = Vec::with_capacity(n);
    for (i, row) in features.chunks_exact_mut(p).enumerate() {
        spec.input_law.draw(&mut rng, row)?;
        let mut y = spec.evaluate(row);
        if spec.noise_sd > 0.0 {
            let e: f64 = StandardNormal.sample(&mut noise_rng);
            y += spec.noise_sd * e;
        }
        if !y.is_finite() {
            return Err(Error::NonFinite {
                row: i,
                column: None,
            });
        }
        response.push(y);
    }
    Dataset::new(features, p, response, default_names(p))
}

/// Analytic gradient of the noiseless function at `x`.
pub fn true_gradient(spec: &SyntheticSpec, x: &[f64]) -> Result<Vec<f64>> {
    if x.len() != spec.dim() {
        return Err(Error::DimensionMismatch {
            expected: spec.dim(),
            found: x.len(),
        });
    }
    Ok(spec.function.gradient(&spec.direction, x))
}
