//! The JSON model file written by `fit` and read by every other command.
//!
//! A model is fitted on min-max normalized features, so the file carries the
//! normalizer alongside the tree or forest. Gradients, subspace matrices and
//! attributions are all computed in those unit-cube coordinates.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use treediff::{Forest, GradientField, GradientSource, Normalizer, RegressionTree};

use crate::error::{CliError, Result};

pub const FORMAT: &str = "treediff-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Tree,
    Forest,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub format: String,
    pub version: u32,
    pub kind: ModelKind,
    pub target: String,
    pub feature_names: Vec<String>,
    pub normalizer: Normalizer,
    /// Training-feature mean in normalized coordinates; the default
    /// integrated-gradient reference.
    pub feature_mean: Vec<f64>,
    pub training_rmse: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tree: Option<RegressionTree>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub forest: Option<Forest>,
}

/// A loaded model ready for gradient queries.
#[derive(Debug, Clone)]
pub enum Fitted {
    Tree(GradientField),
    Forest(Forest),
}

impl Fitted {
    pub fn predict(&self, x: &[f64]) -> f64 {
        match self {
            Fitted::Tree(gf) => gf.tree().predict(x),
            Fitted::Forest(f) => f.predict(x),
        }
    }

    pub fn aggregation(&self) -> &'static str {
        match self {
            Fitted::Tree(_) => "single-tree",
            Fitted::Forest(_) => "forest-field-average",
        }
    }
}

impl GradientSource for Fitted {
    fn dim(&self) -> usize {
        match self {
            Fitted::Tree(gf) => gf.dim(),
            Fitted::Forest(f) => f.dim(),
        }
    }

    fn gradient_into(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Fitted::Tree(gf) => gf.gradient_into(x, out),
            Fitted::Forest(f) => f.gradient_into(x, out),
        }
    }

    fn describe(&self) -> String {
        match self {
            Fitted::Tree(gf) => gf.describe(),
            Fitted::Forest(f) => f.describe(),
        }
    }
}

impl ModelFile {
    pub fn fitted(&self) -> Result<Fitted> {
        match (self.kind, &self.tree, &self.forest) {
            (ModelKind::Tree, Some(t), None) => Ok(Fitted::Tree(GradientField::extract(t.clone()))),
            (ModelKind::Forest, None, Some(f)) => Ok(Fitted::Forest(f.clone())),
            _ => Err(CliError::Usage(format!(
                "model file of kind {:?} has the wrong body",
                self.kind
            ))),
        }
    }

    pub fn dim(&self) -> usize {
        self.feature_names.len()
    }

    /// Maps raw feature values to the model's unit-cube coordinates.
    pub fn normalize(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.dim() {
            return Err(CliError::Model(treediff::Error::DimensionMismatch {
                expected: self.dim(),
                found: x.len(),
            }));
        }
        Ok(self.normalizer.normalize_point(x))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let model: ModelFile = serde_json::from_str(&text).map_err(|e| CliError::Json {
            path: path.into(),
            source: e,
        })?;
        if model.format != FORMAT {
            return Err(CliError::data(
                path,
                format!("not a model file (format {:?})", model.format),
            ));
        }
        if model.version != VERSION {
            return Err(CliError::data(
                path,
                format!("unsupported model version {}", model.version),
            ));
        }
        let p = model.dim();
        let body_dim = match (&model.tree, &model.forest) {
            (Some(t), _) => t.dim(),
            (_, Some(f)) => f.dim(),
            _ => return Err(CliError::data(path, "model file has no tree or forest")),
        };
        if model.normalizer.dim() != p || model.feature_mean.len() != p || body_dim != p {
            return Err(CliError::data(path, "model file dimensions disagree"));
        }
        Ok(model)
    }
}
