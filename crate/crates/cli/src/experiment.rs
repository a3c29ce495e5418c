//! Synthetic study protocols.
//!
//! Each experiment expands into independent jobs, one per grid cell and
//! replicate. Replicate `r` uses seed `seed + r` for its data, so rows are
//! reproducible one at a time and the design points for a smaller sample
//! size are a prefix of those for a larger one. Jobs run on the rayon pool;
//! rows are sorted into a canonical order before they are written.

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use treediff::linalg::vector_angle;
use treediff::{
    fit, generate_synthetic, principal_angle, tbas, true_gradient, DepthLimit, FitConfig,
    GradientField, InputLaw, Measure, SyntheticFunction, SyntheticSpec,
};

use crate::csv_io::fmt_f64;
use crate::error::{CliError, Result};
use crate::rotation::{cv_rmse, CvConfig, Rotation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentId {
    SubspaceLowdim,
    SubspaceSparse,
    GradConvergence,
    Noise,
    Correlation,
    RotationCv,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 6] = [
        ExperimentId::SubspaceLowdim,
        ExperimentId::SubspaceSparse,
        ExperimentId::GradConvergence,
        ExperimentId::Noise,
        ExperimentId::Correlation,
        ExperimentId::RotationCv,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::SubspaceLowdim => "subspace-lowdim",
            ExperimentId::SubspaceSparse => "subspace-sparse",
            ExperimentId::GradConvergence => "grad-convergence",
            ExperimentId::Noise => "noise",
            ExperimentId::Correlation => "correlation",
            ExperimentId::RotationCv => "rotation-cv",
        }
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ExperimentId {
    type Err = CliError;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s)
            .ok_or_else(|| CliError::usage(format!("unknown experiment {s:?}")))
    }
}

/// Grid and settings for one experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub id: ExperimentId,
    pub p_list: Vec<usize>,
    pub n_list: Vec<usize>,
    /// Fixed depths; empty means the log-log schedule with `depth_scale`.
    pub depth_list: Vec<usize>,
    pub depth_scale: f64,
    /// Smallest leaf the fitter may create.
    pub min_leaf: usize,
    pub reps: usize,
    pub noise: f64,
    pub rho_list: Vec<f64>,
    /// Nonzero entries of the direction; `None` means dense.
    pub sparsity: Option<usize>,
    /// Probe points for the gradient-angle metrics.
    pub probes: usize,
    pub folds: usize,
    pub seed: u64,
    /// Record wall-clock seconds. Off by default so outputs are reproducible
    /// byte for byte.
    pub timing: bool,
}

impl ExperimentSpec {
    pub fn defaults(id: ExperimentId) -> Self {
        let base = Self {
            id,
            p_list: vec![2, 3, 4],
            n_list: vec![100, 1000, 10_000],
            depth_list: Vec::new(),
            depth_scale: 1.0,
            min_leaf: 1,
            reps: 20,
            noise: 0.0,
            rho_list: vec![0.0],
            sparsity: None,
            probes: 100,
            folds: 10,
            seed: 0,
            timing: false,
        };
        match id {
            // leaves of one point make sibling differences too erratic
            ExperimentId::SubspaceLowdim => Self {
                min_leaf: 2,
                ..base
            },
            ExperimentId::Noise => Self {
                noise: 0.1,
                min_leaf: 2,
                ..base
            },
            ExperimentId::SubspaceSparse => Self {
                p_list: vec![50],
                n_list: vec![10_000],
                depth_list: vec![12],
                reps: 10,
                sparsity: Some(3),
                ..base
            },
            ExperimentId::GradConvergence => Self {
                p_list: vec![5],
                n_list: vec![1000, 10_000, 100_000],
                depth_list: vec![4, 12],
                reps: 5,
                ..base
            },
            ExperimentId::Correlation => Self {
                p_list: vec![5],
                n_list: vec![10_000],
                // grown out to the leaf-size limit
                depth_list: vec![20],
                min_leaf: 5,
                reps: 10,
                rho_list: vec![0.0, 0.5, 0.9, 0.99],
                ..base
            },
            ExperimentId::RotationCv => Self {
                p_list: vec![5],
                n_list: vec![1000],
                depth_list: vec![4],
                reps: 5,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(CliError::usage(format!("{}: {what}", self.id)));
        if self.reps == 0 {
            return bad("replicate count must be at least 1");
        }
        if self.p_list.is_empty() || self.p_list.contains(&0) {
            return bad("dimensions must be positive");
        }
        if self.n_list.is_empty() || self.n_list.iter().any(|&n| n < 2) {
            return bad("sample sizes must be at least 2");
        }
        if self.depth_list.contains(&0) {
            return bad("depths must be positive");
        }
        if self.min_leaf == 0 {
            return bad("min_leaf must be at least 1");
        }
        if !(self.depth_scale > 0.0 && self.depth_scale.is_finite()) {
            return bad("depth scale must be positive");
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad("noise must be non-negative");
        }
        if self.rho_list.is_empty() || self.rho_list.iter().any(|r| !(0.0..=0.99).contains(r)) {
            return bad("correlations must lie in [0, 0.99]");
        }
        if self
            .sparsity
            .is_some_and(|s| s == 0 || self.p_list.iter().any(|&p| s > p))
        {
            return bad("sparsity must lie in 1..=P");
        }
        if self.probes == 0 {
            return bad("probe count must be positive");
        }
        if self.id == ExperimentId::RotationCv
            && (self.folds < 2 || self.n_list.iter().any(|&n| n < self.folds))
        {
            return bad("fold count must lie in 2..=N");
        }
        Ok(())
    }

    fn depths(&self) -> Vec<Option<usize>> {
        if self.depth_list.is_empty() {
            vec![None]
        } else {
            self.depth_list.iter().map(|&d| Some(d)).collect()
        }
    }
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub replicate: usize,
    pub p: usize,
    pub n: usize,
    pub depth: usize,
    pub noise: f64,
    pub rho: f64,
    pub metric: String,
    pub value: f64,
    pub seconds: f64,
    pub seed: u64,
}

pub const COLUMNS: [&str; 11] = [
    "experiment",
    "replicate",
    "p",
    "n",
    "depth",
    "noise",
    "rho",
    "metric",
    "value",
    "seconds",
    "seed",
];

impl ResultRow {
    fn sort_key(&self, other: &Self) -> std::cmp::Ordering {
        self.experiment
            .cmp(&other.experiment)
            .then(self.p.cmp(&other.p))
            .then(self.n.cmp(&other.n))
            .then(self.depth.cmp(&other.depth))
            .then(self.noise.total_cmp(&other.noise))
            .then(self.rho.total_cmp(&other.rho))
            .then(self.replicate.cmp(&other.replicate))
            .then(self.metric.cmp(&other.metric))
    }

    fn record(&self) -> [String; 11] {
        [
            self.experiment.clone(),
            self.replicate.to_string(),
            self.p.to_string(),
            self.n.to_string(),
            self.depth.to_string(),
            fmt_f64(self.noise),
            fmt_f64(self.rho),
            self.metric.clone(),
            fmt_f64(self.value),
            fmt_f64(self.seconds),
            self.seed.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Copy)]
struct Job {
    p: usize,
    n: usize,
    depth: Option<usize>,
    rho: f64,
    replicate: usize,
}

/// Runs every job of `spec` and returns the rows in canonical order.
pub fn run(spec: &ExperimentSpec) -> Result<Vec<ResultRow>> {
    spec.validate()?;
    let mut jobs = Vec::new();
    for &p in &spec.p_list {
        for &n in &spec.n_list {
            for depth in spec.depths() {
                for &rho in &spec.rho_list {
                    for replicate in 0..spec.reps {
                        jobs.push(Job {
                            p,
                            n,
                            depth,
                            rho,
                            replicate,
                        });
                    }
                }
            }
        }
    }
    let per_job: Vec<Vec<ResultRow>> = jobs
        .par_iter()
        .map(|job| run_job(spec, job))
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_job.into_iter().flatten().collect();
    rows.sort_by(ResultRow::sort_key);
    Ok(rows)
}

pub fn write_rows(path: &Path, rows: &[ResultRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::data(path, e.to_string()))?;
    let err = |e: csv::Error| CliError::data(path, e.to_string());
    w.write_record(COLUMNS).map_err(err)?;
    for row in rows {
        w.write_record(row.record()).map_err(err)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

fn run_job(spec: &ExperimentSpec, job: &Job) -> Result<Vec<ResultRow>> {
    let start = Instant::now();
    let seed = spec.seed.wrapping_add(job.replicate as u64);
    let sparsity = spec.sparsity.unwrap_or(job.p);
    // the correlation study draws from the truncated normal even at rho = 0
    let law = if job.rho > 0.0 || spec.id == ExperimentId::Correlation {
        InputLaw::TruncatedNormal { rho: job.rho }
    } else {
        InputLaw::UniformCube
    };
    let function = match spec.id {
        ExperimentId::SubspaceLowdim | ExperimentId::SubspaceSparse | ExperimentId::Noise => {
            SyntheticFunction::RidgeCosine
        }
        ExperimentId::GradConvergence | ExperimentId::RotationCv => SyntheticFunction::LogRidge,
        ExperimentId::Correlation => SyntheticFunction::Ackley,
    };
    let synth = SyntheticSpec::random(function, job.p, sparsity, spec.noise, law, seed)?;
    let data = generate_synthetic(&synth, job.n)?;

    let depth = match job.depth {
        Some(d) => DepthLimit::Fixed(d),
        None => DepthLimit::LogLog {
            scale: spec.depth_scale,
        },
    };
    let resolved = depth.resolve(job.n, job.p);
    let cfg = match (spec.id, job.depth) {
        (ExperimentId::SubspaceLowdim | ExperimentId::Noise, _) | (_, None) => {
            FitConfig::cyclic_median(depth)
        }
        (_, Some(d)) => FitConfig::cart(d),
    }
    .with_min_leaf(spec.min_leaf);

    let mut metrics: Vec<(String, f64)> = Vec::new();
    match spec.id {
        ExperimentId::SubspaceLowdim | ExperimentId::Noise | ExperimentId::SubspaceSparse => {
            let gf = GradientField::extract(fit(&data, &cfg)?);
            let res = tbas(&gf, &Measure::uniform(job.p))?;
            metrics.push((
                "angle".into(),
                principal_angle(&res.leading(1), std::slice::from_ref(&synth.direction))?,
            ));
            if spec.id == ExperimentId::SubspaceSparse {
                let v = &res.eigenvectors[0];
                let on: f64 = (0..job.p)
                    .filter(|&j| synth.direction[j] != 0.0)
                    .map(|j| v[j] * v[j])
                    .sum();
                let total: f64 = v.iter().map(|x| x * x).sum();
                metrics.push(("energy".into(), on / total));
            }
        }
        ExperimentId::GradConvergence | ExperimentId::Correlation => {
            let gf = GradientField::extract(fit(&data, &cfg)?);
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(PROBE_STREAM);
            let mut x = vec![0.0; job.p];
            let mut total = 0.0;
            for _ in 0..spec.probes {
                if spec.id == ExperimentId::Correlation {
                    // the same probes at every correlation level
                    InputLaw::TruncatedNormal { rho: 0.0 }.draw(&mut rng, &mut x)?;
                } else {
                    x.iter_mut().for_each(|v| {
                        *v = PROBE_MARGIN + (1.0 - 2.0 * PROBE_MARGIN) * rng.random::<f64>()
                    });
                }
                total += vector_angle(gf.grad_at(&x), &true_gradient(&synth, &x)?);
            }
            metrics.push(("angle".into(), total / spec.probes as f64));
        }
        ExperimentId::RotationCv => {
            let cv = CvConfig {
                folds: spec.folds,
                model: cfg,
                seed,
                ..CvConfig::default()
            };
            for rotation in Rotation::ALL {
                let mut rmse = cv_rmse(&data, rotation, &cv)?;
                let mean = rmse.iter().sum::<f64>() / rmse.len() as f64;
                rmse.sort_by(f64::total_cmp);
                metrics.push((format!("rmse-mean-{}", rotation.name()), mean));
                metrics.push((
                    format!("rmse-median-{}", rotation.name()),
                    median_sorted(&rmse),
                ));
            }
        }
    }

    let seconds = if spec.timing {
        start.elapsed().as_secs_f64()
    } else {
        0.0
    };
    Ok(metrics
        .into_iter()
        .map(|(metric, value)| ResultRow {
            experiment: spec.id.name().into(),
            replicate: job.replicate,
            p: job.p,
            n: job.n,
            depth: resolved,
            noise: spec.noise,
            rho: job.rho,
            metric,
            value,
            seconds,
            seed,
        })
        .collect())
}

const PROBE_STREAM: u64 = 3;
/// Uniform probes are kept this far from the faces of the cube.
const PROBE_MARGIN: f64 = 0.05;

pub fn median_sorted(v: &[f64]) -> f64 {
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Grid cell: (p, n, depth, rho).
pub type CellKey = (usize, usize, usize, f64);

/// Median of `metric` over replicates for every grid cell.
pub fn medians(rows: &[ResultRow], metric: &str) -> Vec<(CellKey, f64)> {
    summarize(rows, metric, |v| {
        v.sort_by(f64::total_cmp);
        median_sorted(v)
    })
}

/// Mean of `metric` over replicates for every grid cell.
pub fn means(rows: &[ResultRow], metric: &str) -> Vec<(CellKey, f64)> {
    summarize(rows, metric, |v| v.iter().sum::<f64>() / v.len() as f64)
}

fn summarize(
    rows: &[ResultRow],
    metric: &str,
    f: impl Fn(&mut Vec<f64>) -> f64,
) -> Vec<(CellKey, f64)> {
    let mut groups: Vec<(CellKey, Vec<f64>)> = Vec::new();
    for r in rows.iter().filter(|r| r.metric == metric) {
        let key = (r.p, r.n, r.depth, r.rho);
        match groups.iter_mut().find(|(k, _)| *k == key) {
            Some((_, v)) => v.push(r.value),
            None => groups.push((key, vec![r.value])),
        }
    }
    groups
        .into_iter()
        .map(|(k, mut v)| (k, f(&mut v)))
        .collect()
}
