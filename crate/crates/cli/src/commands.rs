//! Argument definitions and the body of each subcommand.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Serialize;
use treediff::ensemble::fit_member;
use treediff::{
    clamp_unit, normalize_unit_cube, tbas, tbas_monte_carlo, tbig, tbig_exact, AttributionResult,
    BootstrapConfig, DepthLimit, FitConfig, Forest, GradientField, GradientSource, Measure,
    SubspaceResult, DEFAULT_TBIG_SAMPLES,
};

use crate::csv_io::{fmt_f64, load_dataset, load_points, read_table, write_json, write_table};
use crate::error::{CliError, Result};
use crate::experiment::{self, ExperimentId, ExperimentSpec};
use crate::model::{Fitted, ModelFile, ModelKind, FORMAT, VERSION};
use crate::rotation::{learn_map, n_components, CvConfig, LinearMap, Rotation};

#[derive(Debug, Parser)]
#[command(
    name = "treediff",
    version,
    about = "Gradient estimates, attributions and active subspaces from regression trees"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit a tree or forest to a CSV file and save it as JSON.
    Fit(FitArgs),
    /// Tree gradient estimate at each point of a CSV file.
    Grad(GradArgs),
    /// Active-subspace matrix and its eigensystem.
    Tbas(TbasArgs),
    /// Integrated-gradient attribution of one point.
    Tbig(TbigArgs),
    /// Append rotated feature columns to a CSV file.
    Rotate(RotateArgs),
    /// Run a synthetic study and write its results table.
    Experiment(ExperimentArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Mode {
    Cart,
    Cyclic,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MeasureArg {
    Uniform,
    Empirical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MethodArg {
    Tbas,
    Pca,
    Random,
    Identity,
}

impl From<MethodArg> for Rotation {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Tbas => Rotation::Tbas,
            MethodArg::Pca => Rotation::Pca,
            MethodArg::Random => Rotation::Random,
            MethodArg::Identity => Rotation::Identity,
        }
    }
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, default_value = "y")]
    pub target: String,
    #[arg(long, value_enum, default_value_t = Mode::Cart)]
    pub mode: Mode,
    /// Depth limit. Defaults to 8 for CART; cyclic trees default to the
    /// log-log schedule.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub max_depth: Option<u64>,
    /// Multiplier of the log-log depth schedule.
    #[arg(long, default_value_t = 1.0)]
    pub depth_scale: f64,
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    pub min_leaf: u64,
    /// Fit a bagged forest of this many trees instead of a single tree.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub trees: Option<u64>,
    /// Fraction of variables examined per CART split.
    #[arg(long, default_value_t = 1.0)]
    pub feature_fraction: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct GradArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Points with a column per model feature.
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TbasArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, value_enum, default_value_t = MeasureArg::Empirical)]
    pub measure: MeasureArg,
    /// Points for the empirical measure and for `--rotate`.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Estimate by Monte Carlo with this many draws instead of summing over
    /// the cells.
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// Also write the input features with the leading rotated columns
    /// appended.
    #[arg(long)]
    pub rotate: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct TbigArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// Point to explain, as comma-separated raw feature values.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        conflicts_with = "row"
    )]
    pub x: Option<Vec<f64>>,
    /// Reference point; defaults to the training-feature mean.
    #[arg(
        long,
        value_delimiter = ',',
        allow_hyphen_values = true,
        conflicts_with = "ref_row"
    )]
    pub x_ref: Option<Vec<f64>>,
    /// Take the point from this data row of `--input` (0-based).
    #[arg(long, requires = "input")]
    pub row: Option<usize>,
    #[arg(long, requires = "input")]
    pub ref_row: Option<usize>,
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = DEFAULT_TBIG_SAMPLES)]
    pub samples: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Integrate exactly over the leaf crossings (single trees only).
    #[arg(long)]
    pub exact: bool,
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RotateArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long, value_enum, default_value_t = MethodArg::Tbas)]
    pub method: MethodArg,
    #[arg(long, value_enum, default_value_t = MeasureArg::Empirical)]
    pub measure: MeasureArg,
    /// Carry this column of the input through as the last output column.
    #[arg(long)]
    pub target: Option<String>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExperimentArgs {
    /// subspace-lowdim, subspace-sparse, grad-convergence, noise,
    /// correlation or rotation-cv.
    pub id: String,
    #[arg(long)]
    pub output: PathBuf,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long = "p", value_delimiter = ',')]
    pub p_list: Option<Vec<usize>>,
    #[arg(long = "n", value_delimiter = ',')]
    pub n_list: Option<Vec<usize>>,
    #[arg(long = "depths", value_delimiter = ',')]
    pub depth_list: Option<Vec<usize>>,
    #[arg(long)]
    pub depth_scale: Option<f64>,
    #[arg(long)]
    pub min_leaf: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long = "rho", value_delimiter = ',')]
    pub rho_list: Option<Vec<f64>>,
    #[arg(long)]
    pub sparsity: Option<usize>,
    #[arg(long)]
    pub probes: Option<usize>,
    #[arg(long)]
    pub folds: Option<usize>,
    /// Record wall-clock seconds per row (makes output run-dependent).
    #[arg(long)]
    pub timing: bool,
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Fit(a) => cmd_fit(&a),
        Command::Grad(a) => cmd_grad(&a),
        Command::Tbas(a) => cmd_tbas(&a),
        Command::Tbig(a) => cmd_tbig(&a),
        Command::Rotate(a) => cmd_rotate(&a),
        Command::Experiment(a) => cmd_experiment(&a),
    }
}

fn emit_json<T: Serialize>(output: Option<&Path>, value: &T) -> Result<()> {
    match output {
        Some(p) => write_json(p, value),
        None => {
            let text = serde_json::to_string_pretty(value).expect("serializable output");
            let mut out = std::io::stdout().lock();
            writeln!(out, "{text}").map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

fn to_u(v: u64) -> usize {
    usize::try_from(v).unwrap_or(usize::MAX)
}

pub fn cmd_fit(a: &FitArgs) -> Result<()> {
    let raw = load_dataset(&a.input, &a.target)?;
    let (data, normalizer) = normalize_unit_cube(&raw);
    let depth = match (a.mode, a.max_depth) {
        (_, Some(d)) => DepthLimit::Fixed(to_u(d)),
        (Mode::Cart, None) => DepthLimit::Fixed(8),
        (Mode::Cyclic, None) => DepthLimit::LogLog {
            scale: a.depth_scale,
        },
    };
    let cfg = FitConfig {
        depth,
        min_leaf: to_u(a.min_leaf),
        feature_fraction: a.feature_fraction,
        seed: a.seed,
        ..match a.mode {
            Mode::Cart => FitConfig::cart(1),
            Mode::Cyclic => FitConfig::cyclic_median(depth),
        }
    };
    cfg.validate()?;

    let (fitted, kind) = match a.trees {
        None => (
            Fitted::Tree(GradientField::extract(treediff::fit(&data, &cfg)?)),
            ModelKind::Tree,
        ),
        Some(t) => {
            let boot = BootstrapConfig {
                feature_fraction: a.feature_fraction,
                seed: a.seed,
                ..Default::default()
            };
            boot.validate()?;
            let members = (0..to_u(t))
                .into_par_iter()
                .map(|i| fit_member(&data, &cfg, &boot, i))
                .collect::<treediff::Result<Vec<_>>>()?;
            (
                Fitted::Forest(Forest::from_members(members, boot)?),
                ModelKind::Forest,
            )
        }
    };

    let sse: f64 = data
        .rows()
        .zip(data.response())
        .map(|(x, y)| (fitted.predict(x) - y).powi(2))
        .sum();
    let rmse = (sse / data.n_rows() as f64).sqrt();
    let (depth, leaves) = match &fitted {
        Fitted::Tree(gf) => (gf.tree().depth(), gf.tree().n_leaves()),
        Fitted::Forest(f) => (
            f.members()
                .iter()
                .map(|m| m.tree().depth())
                .max()
                .unwrap_or(0),
            f.members().iter().map(|m| m.tree().n_leaves()).sum(),
        ),
    };
    let (tree, forest) = match fitted {
        Fitted::Tree(gf) => (Some(gf.into_tree()), None),
        Fitted::Forest(f) => (None, Some(f)),
    };
    let model = ModelFile {
        format: FORMAT.into(),
        version: VERSION,
        kind,
        target: a.target.clone(),
        feature_names: data.feature_names().to_vec(),
        normalizer,
        feature_mean: data.feature_means(),
        training_rmse: rmse,
        tree,
        forest,
    };
    write_json(&a.output, &model)?;
    println!(
        "depth={depth} leaves={leaves} training_rmse={}",
        fmt_f64(rmse)
    );
    Ok(())
}

/// Loads points named like the model's features and maps them into the
/// unit cube (clamped).
fn normalized_points(model: &ModelFile, path: &Path) -> Result<Vec<Vec<f64>>> {
    load_points(path, &model.feature_names)?
        .iter()
        .map(|x| {
            let mut z = model.normalize(x)?;
            clamp_unit(&mut z);
            Ok(z)
        })
        .collect()
}

pub fn cmd_grad(a: &GradArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let fitted = model.fitted()?;
    let points = normalized_points(&model, &a.input)?;
    let mut g = vec![0.0; model.dim()];
    let rows: Vec<Vec<f64>> = points
        .iter()
        .map(|x| {
            fitted.gradient_into(x, &mut g);
            g.clone()
        })
        .collect();
    let header: Vec<String> = model
        .feature_names
        .iter()
        .map(|n| format!("d_{n}"))
        .collect();
    match &a.output {
        Some(p) => write_table(p, &header, &rows),
        None => {
            let mut w = csv::Writer::from_writer(std::io::stdout().lock());
            let err = |e: csv::Error| CliError::data("<stdout>", e.to_string());
            w.write_record(&header).map_err(err)?;
            for r in &rows {
                w.write_record(r.iter().map(|v| fmt_f64(*v))).map_err(err)?;
            }
            w.flush().map_err(|e| CliError::io("<stdout>", e))
        }
    }
}

#[derive(Serialize)]
struct TbasOutput<'a> {
    feature_names: &'a [String],
    coordinates: &'static str,
    aggregation: &'static str,
    #[serde(flatten)]
    result: &'a SubspaceResult,
}

fn measure_for(model: &ModelFile, kind: MeasureArg, input: Option<&Path>) -> Result<Measure> {
    match kind {
        MeasureArg::Uniform => Ok(Measure::uniform(model.dim())),
        MeasureArg::Empirical => {
            let path =
                input.ok_or_else(|| CliError::usage("the empirical measure needs --input"))?;
            Ok(Measure::empirical(&normalized_points(model, path)?)?)
        }
    }
}

fn subspace(
    fitted: &Fitted,
    measure: &Measure,
    samples: Option<usize>,
    seed: u64,
) -> Result<SubspaceResult> {
    Ok(match (samples, fitted) {
        (Some(m), _) => tbas_monte_carlo(fitted, measure, m, seed)?,
        (None, Fitted::Tree(gf)) => tbas(gf, measure)?,
        (None, Fitted::Forest(f)) => f.tbas(measure)?,
    })
}

/// Original raw columns followed by the appended ones.
fn rotated_rows(
    model: &ModelFile,
    map: &LinearMap,
    input: &Path,
) -> Result<(Vec<String>, Vec<Vec<f64>>)> {
    let raw = load_points(input, &model.feature_names)?;
    let norm = normalized_points(model, input)?;
    let mut header = model.feature_names.clone();
    header.extend((1..=map.k()).map(|j| format!("rot{j}")));
    let rows = raw.into_iter().zip(&norm).map(|(mut r, z)| {
        r.extend(map.apply(z));
        r
    });
    Ok((header, rows.collect()))
}

pub fn cmd_tbas(a: &TbasArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let fitted = model.fitted()?;
    let measure = measure_for(&model, a.measure, a.input.as_deref())?;
    let res = subspace(&fitted, &measure, a.samples, a.seed)?;
    if let Some(out) = &a.rotate {
        let input = a
            .input
            .as_deref()
            .ok_or_else(|| CliError::usage("--rotate needs --input"))?;
        let map = LinearMap::from_psd(&res.symmetric_matrix(), n_components(model.dim()))?;
        let (header, rows) = rotated_rows(&model, &map, input)?;
        write_table(out, &header, &rows)?;
    }
    let out = TbasOutput {
        feature_names: &model.feature_names,
        coordinates: "unit-cube",
        aggregation: fitted.aggregation(),
        result: &res,
    };
    emit_json(a.output.as_deref(), &out)
}

#[derive(Serialize)]
struct TbigOutput<'a> {
    feature_names: &'a [String],
    coordinates: &'static str,
    aggregation: &'static str,
    reference: &'static str,
    #[serde(flatten)]
    attribution: &'a AttributionResult,
}

fn pick_point(
    model: &ModelFile,
    inline: &Option<Vec<f64>>,
    row: Option<usize>,
    input: Option<&Path>,
) -> Result<Option<Vec<f64>>> {
    if let Some(x) = inline {
        return model.normalize(x).map(Some);
    }
    match (row, input) {
        (Some(r), Some(path)) => {
            let points = load_points(path, &model.feature_names)?;
            let x = points.get(r).ok_or_else(|| {
                CliError::data(path, format!("no data row {r} ({} rows)", points.len()))
            })?;
            model.normalize(x).map(Some)
        }
        _ => Ok(None),
    }
}

pub fn cmd_tbig(a: &TbigArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let fitted = model.fitted()?;
    let x = pick_point(&model, &a.x, a.row, a.input.as_deref())?
        .ok_or_else(|| CliError::usage("give the point with --x or --row"))?;
    let (x_ref, reference) = match pick_point(&model, &a.x_ref, a.ref_row, a.input.as_deref())? {
        Some(r) => (r, "supplied"),
        None => (model.feature_mean.clone(), "training-mean"),
    };
    if a.samples == 0 && !a.exact {
        return Err(CliError::usage("--samples must be positive"));
    }
    let attribution = match (&fitted, a.exact) {
        (Fitted::Tree(gf), true) => tbig_exact(gf, &x, &x_ref)?,
        (Fitted::Forest(_), true) => {
            return Err(CliError::usage("--exact works with single trees only"))
        }
        (_, false) => tbig(&fitted, &x, &x_ref, a.samples, a.seed)?,
    };
    let out = TbigOutput {
        feature_names: &model.feature_names,
        coordinates: "unit-cube",
        aggregation: fitted.aggregation(),
        reference,
        attribution: &attribution,
    };
    emit_json(a.output.as_deref(), &out)
}

pub fn cmd_rotate(a: &RotateArgs) -> Result<()> {
    let model = ModelFile::load(&a.model)?;
    let k = n_components(model.dim());
    let rotation = Rotation::from(a.method);
    let map = match rotation {
        Rotation::Tbas => {
            let fitted = model.fitted()?;
            let measure = measure_for(&model, a.measure, Some(&a.input))?;
            LinearMap::from_psd(
                &subspace(&fitted, &measure, None, a.seed)?.symmetric_matrix(),
                k,
            )?
        }
        _ => {
            let pts = normalized_points(&model, &a.input)?;
            let d = treediff::Dataset::from_rows(&pts, vec![0.0; pts.len()])?;
            learn_map(rotation, &d, &CvConfig::default(), a.seed)?
        }
    };
    let (mut header, mut rows) = rotated_rows(&model, &map, &a.input)?;
    if let Some(t) = &a.target {
        let table = read_table(&a.input)?;
        let c = table
            .header
            .iter()
            .position(|h| h == t)
            .ok_or_else(|| CliError::data(&a.input, format!("no column named {t:?}")))?;
        header.push(t.clone());
        rows.iter_mut()
            .zip(&table.rows)
            .for_each(|(r, src)| r.push(src[c]));
    }
    write_table(&a.output, &header, &rows)
}

pub fn cmd_experiment(a: &ExperimentArgs) -> Result<()> {
    let id: ExperimentId = a.id.parse()?;
    let d = ExperimentSpec::defaults(id);
    let spec = ExperimentSpec {
        id,
        p_list: a.p_list.clone().unwrap_or(d.p_list),
        n_list: a.n_list.clone().unwrap_or(d.n_list),
        depth_list: a.depth_list.clone().unwrap_or(d.depth_list),
        depth_scale: a.depth_scale.unwrap_or(d.depth_scale),
        min_leaf: a.min_leaf.unwrap_or(d.min_leaf),
        reps: a.reps.unwrap_or(d.reps),
        noise: a.noise.unwrap_or(d.noise),
        rho_list: a.rho_list.clone().unwrap_or(d.rho_list),
        sparsity: a.sparsity.or(d.sparsity),
        probes: a.probes.unwrap_or(d.probes),
        folds: a.folds.unwrap_or(d.folds),
        seed: a.seed.unwrap_or(d.seed),
        timing: a.timing,
    };
    let rows = experiment::run(&spec)?;
    experiment::write_rows(&a.output, &rows)?;
    eprintln!(
        "{}: wrote {} rows to {}",
        id,
        rows.len(),
        a.output.display()
    );
    Ok(())
}
