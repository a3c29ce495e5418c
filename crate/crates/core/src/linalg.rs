//! Small dense symmetric linear algebra.
//!
//! Everything here works on matrices of modest order (the input dimension of
//! a tree, rarely more than a few hundred), so a cyclic Jacobi solver is used
//! throughout: it is accurate, needs no workspace beyond the matrix itself and
//! gives bit-identical results run to run.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const JACOBI_RELATIVE_TOLERANCE: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 100;
const PSD_RELATIVE_TOLERANCE: f64 = 1e-10;
const ORTHONORMAL_TOLERANCE: f64 = 1e-8;

/// Dense symmetric matrix stored row-major.
///
/// Construction copies the upper triangle onto the lower one, so
/// `get(i, j) == get(j, i)` holds bit for bit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetricMatrix {
    dim: usize,
    data: Vec<f64>,
}

impl SymmetricMatrix {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            data: vec![0.0; dim * dim],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            m.data[i * dim + i] = 1.0;
        }
        m
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m.data[i * diag.len() + i] = d;
        }
        m
    }

    /// Builds from a row-major buffer; the upper triangle is authoritative.
    pub fn from_row_major(dim: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim,
                found: data.len(),
            });
        }
        let mut m = Self { dim, data };
        m.symmetrize_from_upper();
        Ok(m)
    }

    pub fn from_fn(dim: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Self::zeros(dim);
        for i in 0..dim {
            for j in i..dim {
                m.data[i * dim + j] = f(i, j);
            }
        }
        m.symmetrize_from_upper();
        m
    }

    fn symmetrize_from_upper(&mut self) {
        let n = self.dim;
        for i in 0..n {
            for j in 0..i {
                self.data[i * n + j] = self.data[j * n + i];
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.dim + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim.max(1)).take(self.dim)
    }

    /// Largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.get(i, i)).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            dim: self.dim,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    /// `self += weight * g gᵀ`.
    pub fn add_outer(&mut self, g: &[f64], weight: f64) {
        let n = self.dim;
        for (row, &gi) in self.data.chunks_exact_mut(n).zip(g) {
            let wi = weight * gi;
            for (a, &gj) in row.iter_mut().zip(g) {
                *a += wi * gj;
            }
        }
    }

    /// Dense product with another symmetric matrix (the result is general).
    pub fn matmul(&self, other: &SymmetricMatrix) -> Vec<f64> {
        let n = self.dim;
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for k in 0..n {
                let a = self.get(i, k);
                for j in 0..n {
                    out[i * n + j] += a * other.get(k, j);
                }
            }
        }
        out
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// Eigenvalues in descending order with their unit eigenvectors.
///
/// `vectors[k]` pairs with `values[k]`; each eigenvector has its
/// largest-magnitude component positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    pub values: Vec<f64>,
    pub vectors: Vec<Vec<f64>>,
}

impl EigenDecomposition {
    /// `V diag(f(λ)) Vᵀ`.
    pub fn reconstruct_with(&self, mut f: impl FnMut(f64) -> f64) -> SymmetricMatrix {
        let n = self.values.len();
        let weights: Vec<f64> = self.values.iter().map(|&v| f(v)).collect();
        SymmetricMatrix::from_fn(n, |i, j| {
            self.vectors
                .iter()
                .zip(&weights)
                .map(|(v, w)| w * v[i] * v[j])
                .sum()
        })
    }

    pub fn reconstruct(&self) -> SymmetricMatrix {
        self.reconstruct_with(|v| v)
    }
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Sweeps run in fixed row-cyclic order until the largest off-diagonal entry
/// drops below `1e-12 * max|a|`, or 100 sweeps.
pub fn eig_sym(a: &SymmetricMatrix) -> Result<EigenDecomposition> {
    if !a.is_finite() {
        return Err(Error::InvalidConfig("matrix has non-finite entries".into()));
    }
    let n = a.dim();
    let mut m = a.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    let tol = JACOBI_RELATIVE_TOLERANCE * a.max_abs();

    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut off = 0.0f64;
        for p in 0..n {
            for q in p + 1..n {
                off = off.max(m[p * n + q].abs());
            }
        }
        if off <= tol {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = m[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (m[q * n + q] - m[p * n + p]) / (2.0 * apq);
                let t = if theta.abs() > 1e150 {
                    0.5 / theta
                } else {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + libm::sqrt(theta * theta + 1.0))
                };
                let c = 1.0 / libm::sqrt(t * t + 1.0);
                let s = t * c;

                for k in 0..n {
                    if k == p || k == q {
                        continue;
                    }
                    let akp = m[k * n + p];
                    let akq = m[k * n + q];
                    let new_kp = c * akp - s * akq;
                    let new_kq = s * akp + c * akq;
                    m[k * n + p] = new_kp;
                    m[p * n + k] = new_kp;
                    m[k * n + q] = new_kq;
                    m[q * n + k] = new_kq;
                }
                m[p * n + p] -= t * apq;
                m[q * n + q] += t * apq;
                m[p * n + q] = 0.0;
                m[q * n + p] = 0.0;

                for k in 0..n {
                    let vkp = v[k * n + p];
                    let vkq = v[k * n + q];
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| m[j * n + j].total_cmp(&m[i * n + i]));

    let values = order.iter().map(|&k| m[k * n + k]).collect();
    let vectors = order
        .iter()
        .map(|&k| {
            let mut col: Vec<f64> = (0..n).map(|r| v[r * n + k]).collect();
            let mut lead = 0;
            for (r, x) in col.iter().enumerate() {
                if x.abs() > col[lead].abs() {
                    lead = r;
                }
            }
            if col[lead] < 0.0 {
                col.iter_mut().for_each(|x| *x = -*x);
            }
            col
        })
        .collect();
    Ok(EigenDecomposition { values, vectors })
}

/// Principal square root of a numerically PSD matrix.
///
/// Negative eigenvalues down to `-1e-10 * max|a|` are treated as rounding
/// noise and zeroed; anything more negative is rejected.
pub fn sqrt_psd(a: &SymmetricMatrix) -> Result<SymmetricMatrix> {
    let eig = eig_sym(a)?;
    let floor = -PSD_RELATIVE_TOLERANCE * a.max_abs();
    if let Some(&min) = eig.values.last() {
        if min < floor {
            return Err(Error::NotPositiveSemidefinite {
                min_eigenvalue: min,
            });
        }
    }
    Ok(eig.reconstruct_with(|l| libm::sqrt(l.max(0.0))))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    libm::sqrt(dot(a, a))
}

/// Angle in `[0, π]` between two vectors; `π/2` if either is zero.
pub fn vector_angle(a: &[f64], b: &[f64]) -> f64 {
    let denom = norm(a) * norm(b);
    if denom == 0.0 {
        return core::f64::consts::FRAC_PI_2;
    }
    libm::acos((dot(a, b) / denom).clamp(-1.0, 1.0))
}

fn check_orthonormal(basis: &[Vec<f64>], dim: usize) -> Result<()> {
    for (i, u) in basis.iter().enumerate() {
        if u.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: u.len(),
            });
        }
        for (j, w) in basis.iter().enumerate().skip(i) {
            let target = if i == j { 1.0 } else { 0.0 };
            if (dot(u, w) - target).abs() > ORTHONORMAL_TOLERANCE {
                return Err(Error::NotOrthonormal);
            }
        }
    }
    Ok(())
}

/// Largest principal angle between the spans of two orthonormal bases.
///
/// Each basis is a list of `d` column vectors of length `P`. The angle is the
/// arccosine of the smallest singular value of `uᵀv`, obtained from the
/// eigenvalues of the `d × d` Gram matrix `(uᵀv)ᵀ(uᵀv)`.
pub fn principal_angle(u: &[Vec<f64>], v: &[Vec<f64>]) -> Result<f64> {
    if u.len() != v.len() {
        return Err(Error::DimensionMismatch {
            expected: u.len(),
            found: v.len(),
        });
    }
    let d = u.len();
    if d == 0 {
        return Err(Error::InvalidConfig("empty basis".into()));
    }
    let dim = u[0].len();
    check_orthonormal(u, dim)?;
    check_orthonormal(v, dim)?;

    if d == 1 {
        return Ok(libm::acos(dot(&u[0], &v[0]).abs().clamp(0.0, 1.0)));
    }
    let cross: Vec<f64> = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| dot(&u[i], &v[j]))
        .collect();
    let gram = SymmetricMatrix::from_fn(d, |i, j| {
        (0..d).map(|k| cross[k * d + i] * cross[k * d + j]).sum()
    });
    let eig = eig_sym(&gram)?;
    let smallest = eig.values.last().copied().unwrap_or(0.0).max(0.0);
    Ok(libm::acos(libm::sqrt(smallest).clamp(0.0, 1.0)))
}

/// Orthonormalizes the given columns with two passes of modified
/// Gram-Schmidt. Fails if the columns are (numerically) dependent.
pub fn orthonormalize(columns: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let mut out: Vec<Vec<f64>> = Vec::with_capacity(columns.len());
    for col in columns {
        let mut w = col.clone();
        let original = norm(&w);
        for _ in 0..2 {
            for q in &out {
                let proj = dot(q, &w);
                w.iter_mut().zip(q).for_each(|(x, qi)| *x -= proj * qi);
            }
        }
        let len = norm(&w);
        if !(len > 1e-10 * original.max(f64::MIN_POSITIVE)) {
            return Err(Error::InvalidConfig(
                "columns are linearly dependent".into(),
            ));
        }
        w.iter_mut().for_each(|x| *x /= len);
        out.push(w);
    }
    Ok(out)
}

/// `k` orthonormal directions in dimension `dim`, uniformly distributed on the
/// Stiefel manifold (Gaussian columns, orthonormalized).
pub fn random_orthonormal_basis<R: Rng + ?Sized>(
    dim: usize,
    k: usize,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    if k > dim {
        return Err(Error::InvalidConfig(
            "more directions than dimensions".into(),
        ));
    }
    loop {
        let cols: Vec<Vec<f64>> = (0..k)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
            .collect();
        if let Ok(basis) = orthonormalize(&cols) {
            return Ok(basis);
        }
    }
}
