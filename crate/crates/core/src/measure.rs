//! Probability measures on the unit cube.
//!
//! The Monte Carlo estimators only need to draw from a measure; the
//! partition estimators need the mass of an axis-aligned rectangle. The three
//! measures here cover what the estimators use: Lebesgue measure on the cube,
//! the empirical measure of a point set, and the uniform measure on a segment
//! (sampling only).

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::tree::RegressionTree;

#[derive(Debug, Clone, PartialEq)]
pub enum Measure {
    UniformCube {
        dim: usize,
    },
    /// Equal weight on each point; points are stored row-major.
    Empirical {
        dim: usize,
        points: Vec<f64>,
    },
    /// Uniform on the segment from `start` to `end`.
    Segment {
        start: Vec<f64>,
        end: Vec<f64>,
    },
}

impl Measure {
    pub fn uniform(dim: usize) -> Self {
        Measure::UniformCube { dim }
    }

    /// Empirical measure of points that must lie in the unit cube.
    pub fn empirical<X: AsRef<[f64]>>(points: &[X]) -> Result<Self> {
        let dim = points.first().map_or(0, |p| p.as_ref().len());
        if dim == 0 {
            return Err(Error::EmptyDataset);
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for (row, p) in points.iter().enumerate() {
            let p = p.as_ref();
            if p.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: p.len(),
                });
            }
            if let Some(column) = p.iter().position(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::OutOfDomain {
                    row,
                    column,
                    value: p[column],
                });
            }
            flat.extend_from_slice(p);
        }
        Ok(Measure::Empirical { dim, points: flat })
    }

    pub fn empirical_from_dataset(d: &Dataset) -> Result<Self> {
        if let Some((row, column, value)) = d.first_outside_unit_cube() {
            return Err(Error::OutOfDomain { row, column, value });
        }
        Ok(Measure::Empirical {
            dim: d.n_features(),
            points: d.features().to_vec(),
        })
    }

    pub fn segment(start: Vec<f64>, end: Vec<f64>) -> Result<Self> {
        if start.len() != end.len() {
            return Err(Error::DimensionMismatch {
                expected: start.len(),
                found: end.len(),
            });
        }
        Ok(Measure::Segment { start, end })
    }

    pub fn dim(&self) -> usize {
        match self {
            Measure::UniformCube { dim } | Measure::Empirical { dim, .. } => *dim,
            Measure::Segment { start, .. } => start.len(),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Measure::UniformCube { .. } => "uniform-cube",
            Measure::Empirical { .. } => "empirical",
            Measure::Segment { .. } => "segment",
        }
    }

    pub fn can_sample(&self) -> bool {
        true
    }

    pub fn can_rect_mass(&self) -> bool {
        !matches!(self, Measure::Segment { .. })
    }

    fn n_points(&self) -> usize {
        match self {
            Measure::Empirical { dim, points } => points.len() / dim,
            _ => 0,
        }
    }

    /// One draw, written into `out`.
    pub fn sample_into<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        match self {
            Measure::UniformCube { .. } => out.iter_mut().for_each(|v| *v = rng.random::<f64>()),
            Measure::Empirical { dim, points } => {
                let i = rng.random_range(0..self.n_points());
                out.copy_from_slice(&points[i * dim..(i + 1) * dim]);
            }
            Measure::Segment { start, end } => {
                let u: f64 = rng.random();
                for ((o, s), e) in out.iter_mut().zip(start).zip(end) {
                    *o = s + u * (e - s);
                }
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, count: usize, rng: &mut R) -> Result<Vec<Vec<f64>>> {
        if !self.can_sample() {
            return Err(Error::MissingCapability {
                measure: self.name(),
                capability: "sample",
            });
        }
        Ok((0..count)
            .map(|_| {
                let mut x = vec![0.0; self.dim()];
                self.sample_into(rng, &mut x);
                x
            })
            .collect())
    }

    /// Mass of the rectangle `[lo, hi]`.
    ///
    /// For the empirical measure a point counts when `lo < x <= hi` in every
    /// coordinate, except that a lower bound on the cube face (`lo <= 0`) is
    /// closed. This matches the tree's left-on-ties rule, so the leaf cells of
    /// any tree partition the points exactly.
    pub fn rect_mass(&self, lo: &[f64], hi: &[f64]) -> Result<f64> {
        let dim = self.dim();
        if lo.len() != dim || hi.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                found: lo.len().min(hi.len()),
            });
        }
        if let Some(coordinate) = (0..dim).find(|&p| lo[p] > hi[p]) {
            return Err(Error::InvalidBounds { coordinate });
        }
        match self {
            Measure::UniformCube { .. } => Ok(lo
                .iter()
                .zip(hi)
                .map(|(&l, &h)| (h.min(1.0) - l.max(0.0)).max(0.0))
                .product()),
            Measure::Empirical { dim, points } => {
                let inside = points
                    .chunks_exact(*dim)
                    .filter(|x| {
                        x.iter()
                            .zip(lo.iter().zip(hi))
                            .all(|(&v, (&l, &h))| (v > l || (l <= 0.0 && v >= l)) && v <= h)
                    })
                    .count();
                Ok(inside as f64 / self.n_points() as f64)
            }
            Measure::Segment { .. } => Err(Error::MissingCapability {
                measure: self.name(),
                capability: "measure rectangles",
            }),
        }
    }

    /// Mass of every leaf cell of `tree`, indexed like the node array
    /// (internal nodes get 0).
    ///
    /// Same numbers as calling [`rect_mass`](Self::rect_mass) per leaf; the
    /// empirical case routes each point once instead of scanning all points
    /// per leaf.
    pub fn leaf_masses(&self, tree: &RegressionTree) -> Result<Vec<f64>> {
        if tree.dim() != self.dim() {
            return Err(Error::DimensionMismatch {
                expected: tree.dim(),
                found: self.dim(),
            });
        }
        let mut masses = vec![0.0; tree.len()];
        match self {
            Measure::Empirical { dim, points } => {
                let mut counts = vec![0usize; tree.len()];
                for x in points.chunks_exact(*dim) {
                    counts[tree.leaf_index(x)] += 1;
                }
                let n = self.n_points() as f64;
                for (m, c) in masses.iter_mut().zip(counts) {
                    *m = c as f64 / n;
                }
            }
            _ => {
                for leaf in tree.leaves() {
                    masses[leaf.index] = self.rect_mass(&leaf.lower, &leaf.upper)?;
                }
            }
        }
        Ok(masses)
    }
}
