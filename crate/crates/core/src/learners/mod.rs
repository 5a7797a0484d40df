//! Base regression estimators under one contract: fit on a feature matrix
//! and targets (optionally row weights and per-row school codes), predict on
//! a feature matrix. Families: ridge, CART, random forest, gradient
//! boosting, and a multilayer perceptron.
//!
//! Loss convention everywhere: mean (not summed) squared error, with any
//! penalty added on top as each fit documents. Every family is
//! deterministic given (data, config, seed).

mod forest;
mod gbm;
mod mlp;
pub(crate) mod net;
mod ridge;
mod tree;

pub use forest::{forest_fit, ForestModel};
pub use gbm::{gbm_fit, GbmModel};
pub use mlp::{mlp_fit, MlpModel};
pub use ridge::{ridge_fit, RidgeModel};
pub use tree::{tree_fit, TreeModel, TreeNode};

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TreeParams {
    pub max_depth: usize,
    pub min_leaf_rows: usize,
    pub min_leaf_schools: usize,
}

impl Default for TreeParams {
    fn default() -> Self {
        Self {
            max_depth: 6,
            min_leaf_rows: 5,
            min_leaf_schools: 1,
        }
    }
}

impl TreeParams {
    pub fn validate(&self) -> Result<()> {
        if self.min_leaf_rows < 1 {
            return Err(Error::Argument("min_leaf_rows must be at least 1".into()));
        }
        if self.min_leaf_schools < 1 {
            return Err(Error::Argument("min_leaf_schools must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Fraction of features tried per split, in (0, 1].
    pub feature_subsample: f64,
    /// Fraction of rows per tree, in (0, 1].
    pub row_subsample: f64,
    pub with_replacement: bool,
    pub seed: u64,
    pub tree: TreeParams,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            feature_subsample: 1.0 / 3.0,
            row_subsample: 1.0,
            with_replacement: true,
            seed: 0,
            tree: TreeParams::default(),
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees < 1 {
            return Err(Error::Argument("n_trees must be at least 1".into()));
        }
        for (name, rate) in [
            ("feature_subsample", self.feature_subsample),
            ("row_subsample", self.row_subsample),
        ] {
            if !(rate > 0.0 && rate <= 1.0) {
                return Err(Error::Argument(format!("{name} {rate} must lie in (0, 1]")));
            }
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GbmParams {
    pub n_rounds: usize,
    pub learning_rate: f64,
    pub tree: TreeParams,
    pub seed: u64,
}

impl Default for GbmParams {
    fn default() -> Self {
        Self {
            n_rounds: 100,
            learning_rate: 0.1,
            tree: TreeParams {
                max_depth: 3,
                min_leaf_rows: 5,
                min_leaf_schools: 1,
            },
            seed: 0,
        }
    }
}

impl GbmParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_rounds < 1 {
            return Err(Error::Argument("n_rounds must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::Argument(format!(
                "learning_rate {} must lie in (0, 1]",
                self.learning_rate
            )));
        }
        self.tree.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Optimizer {
    Sgd { learning_rate: f64, momentum: f64 },
    Adam { learning_rate: f64 },
}

impl Optimizer {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Optimizer::Sgd { learning_rate, momentum } => {
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(Error::Argument("sgd learning_rate must be positive".into()));
                }
                if !(0.0..1.0).contains(&momentum) {
                    return Err(Error::Argument("momentum must lie in [0, 1)".into()));
                }
            }
            Optimizer::Adam { learning_rate } => {
                if !(learning_rate > 0.0 && learning_rate.is_finite()) {
                    return Err(Error::Argument("adam learning_rate must be positive".into()));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpParams {
    /// Hidden-layer widths; empty means a pure linear model.
    pub layer_widths: Vec<usize>,
    pub activation: Activation,
    pub l2_penalty: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for MlpParams {
    fn default() -> Self {
        Self {
            layer_widths: vec![64, 64],
            activation: Activation::Relu,
            l2_penalty: 1e-4,
            optimizer: Optimizer::Adam { learning_rate: 1e-3 },
            epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl MlpParams {
    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Argument("l2_penalty must be finite and nonnegative".into()));
        }
        self.optimizer.validate()
    }
}

/// Family choice plus its hyperparameters, dispatched by [`EstimatorConfig::fit`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum EstimatorConfig {
    Ridge { lambda: f64 },
    Tree(TreeParams),
    Forest(ForestParams),
    Gbm(GbmParams),
    Mlp(MlpParams),
}

impl EstimatorConfig {
    pub fn family(&self) -> &'static str {
        match self {
            EstimatorConfig::Ridge { .. } => "ridge",
            EstimatorConfig::Tree(_) => "tree",
            EstimatorConfig::Forest(_) => "forest",
            EstimatorConfig::Gbm(_) => "gbm",
            EstimatorConfig::Mlp(_) => "mlp",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            EstimatorConfig::Ridge { lambda } => {
                if !(lambda.is_finite() && *lambda >= 0.0) {
                    return Err(Error::Argument("lambda must be finite and nonnegative".into()));
                }
                Ok(())
            }
            EstimatorConfig::Tree(p) => p.validate(),
            EstimatorConfig::Forest(p) => p.validate(),
            EstimatorConfig::Gbm(p) => p.validate(),
            EstimatorConfig::Mlp(p) => p.validate(),
        }
    }

    /// Fit the configured family with its stream reseeded to `seed`
    /// (families without randomness ignore it).
    pub fn fit(
        &self,
        x: &FeatureMatrix,
        y: &[f64],
        schools: Option<&[u32]>,
        seed: u64,
    ) -> Result<FittedModel> {
        Ok(match self {
            EstimatorConfig::Ridge { lambda } => FittedModel::Ridge(ridge_fit(x, y, *lambda)?),
            EstimatorConfig::Tree(p) => FittedModel::Tree(tree_fit(x, y, None, schools, p)?),
            EstimatorConfig::Forest(p) => {
                let params = ForestParams { seed, ..p.clone() };
                FittedModel::Forest(forest_fit(x, y, schools, &params)?)
            }
            EstimatorConfig::Gbm(p) => {
                let params = GbmParams { seed, ..p.clone() };
                FittedModel::Gbm(gbm_fit(x, y, schools, &params)?)
            }
            EstimatorConfig::Mlp(p) => {
                let params = MlpParams { seed, ..p.clone() };
                FittedModel::Mlp(mlp_fit(x, y, &params)?)
            }
        })
    }
}

/// A trained estimator of any family, tagged for serialization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    Ridge(RidgeModel),
    Tree(TreeModel),
    Forest(ForestModel),
    Gbm(GbmModel),
    Mlp(MlpModel),
}

impl FittedModel {
    pub fn family(&self) -> &'static str {
        match self {
            FittedModel::Ridge(_) => "ridge",
            FittedModel::Tree(_) => "tree",
            FittedModel::Forest(_) => "forest",
            FittedModel::Gbm(_) => "gbm",
            FittedModel::Mlp(_) => "mlp",
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            FittedModel::Ridge(m) => m.coefficients.len(),
            FittedModel::Tree(m) => m.n_features,
            FittedModel::Forest(m) => m.n_features,
            FittedModel::Gbm(m) => m.n_features,
            FittedModel::Mlp(m) => m.n_features(),
        }
    }

    /// Predict one value per row. Pure in (parameters, input).
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>> {
        check_width(self.n_features(), x)?;
        Ok(match self {
            FittedModel::Ridge(m) => m.predict(x),
            FittedModel::Tree(m) => m.predict(x),
            FittedModel::Forest(m) => m.predict(x),
            FittedModel::Gbm(m) => m.predict(x),
            FittedModel::Mlp(m) => m.predict(x),
        })
    }
}

pub(crate) fn check_width(expected: usize, x: &FeatureMatrix) -> Result<()> {
    if x.n_cols() != expected {
        return Err(Error::Argument(format!(
            "model expects {expected} features, input has {}",
            x.n_cols()
        )));
    }
    Ok(())
}

pub(crate) fn check_xy(x: &FeatureMatrix, y: &[f64]) -> Result<()> {
    if x.n_rows() == 0 {
        return Err(Error::Argument("fit needs at least one row".into()));
    }
    if x.n_rows() != y.len() {
        return Err(Error::Argument(format!(
            "feature matrix has {} rows but targets have {}",
            x.n_rows(),
            y.len()
        )));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("targets must be finite".into()));
    }
    Ok(())
}

/// Envelope for model files on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelDocument {
    pub format_version: u32,
    pub model: FittedModel,
}

impl ModelDocument {
    pub const CURRENT_VERSION: u32 = 1;

    pub fn new(model: FittedModel) -> Self {
        Self {
            format_version: Self::CURRENT_VERSION,
            model,
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: ModelDocument = serde_json::from_str(text)?;
        if doc.format_version != Self::CURRENT_VERSION {
            return Err(Error::Schema(format!(
                "unsupported model format version {}",
                doc.format_version
            )));
        }
        Ok(doc)
    }
}
