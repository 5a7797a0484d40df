//! Covariate encoding: numeric standardization and one-hot expansion of
//! categorical columns, with parameters learned on a fitting subset and
//! reused verbatim elsewhere.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{ColumnValues, Dataset};

/// One output feature of an [`Encoder`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EncodedColumn {
    /// `(value - mean) / stddev` of a numeric source column.
    Numeric {
        source: String,
        mean: f64,
        stddev: f64,
    },
    /// Indicator for one category of a categorical source column.
    OneHot { source: String, category: String },
}

impl EncodedColumn {
    pub fn feature_name(&self) -> String {
        match self {
            EncodedColumn::Numeric { source, .. } => source.clone(),
            EncodedColumn::OneHot { source, category } => format!("{source}={category}"),
        }
    }

    pub fn source(&self) -> &str {
        match self {
            EncodedColumn::Numeric { source, .. } => source,
            EncodedColumn::OneHot { source, .. } => source,
        }
    }
}

/// Maps raw covariates to a numeric feature matrix.
///
/// Numeric columns are centered and scaled by statistics of the fitting
/// rows (population standard deviation; a constant column gets scale 1 so
/// it encodes to exactly zero). Categorical columns expand to one indicator
/// per category seen during fitting, in lexicographic order; unseen
/// categories encode as all zeros.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    specs: Vec<EncodedColumn>,
    standardize: bool,
}

impl Encoder {
    /// Learn encoding parameters from `fit_rows` of `dataset`. With
    /// `standardize = false`, numeric columns pass through unchanged
    /// (mean 0, scale 1) while categorical expansion still applies.
    pub fn fit(dataset: &Dataset, fit_rows: &[usize], standardize: bool) -> Result<Self> {
        let names: Vec<String> = dataset
            .schema()
            .covariates()
            .map(|c| c.name.clone())
            .collect();
        Self::fit_columns(dataset, fit_rows, standardize, &names)
    }

    /// Like [`Encoder::fit`], restricted to the named covariates, expanded
    /// in the order given.
    pub fn fit_columns(
        dataset: &Dataset,
        fit_rows: &[usize],
        standardize: bool,
        columns: &[String],
    ) -> Result<Self> {
        if fit_rows.is_empty() {
            return Err(Error::Argument("encoder needs at least one fitting row".into()));
        }
        if columns.is_empty() {
            return Err(Error::Argument("encoder needs at least one covariate".into()));
        }
        for &r in fit_rows {
            if r >= dataset.n_rows() {
                return Err(Error::Argument(format!("row index {r} out of range")));
            }
        }
        let mut seen = BTreeSet::new();
        let mut specs = Vec::new();
        for name in columns {
            if !seen.insert(name.as_str()) {
                return Err(Error::Argument(format!("duplicate covariate `{name}`")));
            }
            let (_, col) = dataset
                .covariate(name)
                .ok_or_else(|| Error::Argument(format!("unknown covariate `{name}`")))?;
            match col {
                ColumnValues::Numeric(values) => {
                    let (mean, stddev) = if standardize {
                        let m = fit_rows.len() as f64;
                        let mean = fit_rows.iter().map(|&r| values[r]).sum::<f64>() / m;
                        let var = fit_rows
                            .iter()
                            .map(|&r| (values[r] - mean).powi(2))
                            .sum::<f64>()
                            / m;
                        let sd = var.sqrt();
                        (mean, if sd > 0.0 { sd } else { 1.0 })
                    } else {
                        (0.0, 1.0)
                    };
                    specs.push(EncodedColumn::Numeric {
                        source: name.clone(),
                        mean,
                        stddev,
                    });
                }
                ColumnValues::Categorical(values) => {
                    let categories: BTreeSet<&String> =
                        fit_rows.iter().map(|&r| &values[r]).collect();
                    for c in categories {
                        specs.push(EncodedColumn::OneHot {
                            source: name.clone(),
                            category: c.clone(),
                        });
                    }
                }
            }
        }
        Ok(Self { specs, standardize })
    }

    pub fn specs(&self) -> &[EncodedColumn] {
        &self.specs
    }

    pub fn n_features(&self) -> usize {
        self.specs.len()
    }

    pub fn feature_names(&self) -> Vec<String> {
        self.specs.iter().map(|s| s.feature_name()).collect()
    }

    /// Encode every row of `dataset` with the learned parameters.
    pub fn transform(&self, dataset: &Dataset) -> Result<FeatureMatrix> {
        let n_rows = dataset.n_rows();
        let n_cols = self.specs.len();
        let mut values = vec![0.0; n_rows * n_cols];
        for (j, spec) in self.specs.iter().enumerate() {
            let (_, col) = dataset.covariate(spec.source()).ok_or_else(|| {
                Error::Argument(format!("dataset lacks covariate `{}`", spec.source()))
            })?;
            match (spec, col) {
                (EncodedColumn::Numeric { mean, stddev, .. }, ColumnValues::Numeric(raw)) => {
                    for (i, v) in raw.iter().enumerate() {
                        values[i * n_cols + j] = (v - mean) / stddev;
                    }
                }
                (EncodedColumn::OneHot { category, .. }, ColumnValues::Categorical(raw)) => {
                    for (i, v) in raw.iter().enumerate() {
                        values[i * n_cols + j] = if v == category { 1.0 } else { 0.0 };
                    }
                }
                _ => {
                    return Err(Error::Argument(format!(
                        "covariate `{}` kind does not match the encoder",
                        spec.source()
                    )))
                }
            }
        }
        Ok(FeatureMatrix {
            n_rows,
            n_cols,
            values,
            feature_names: self.feature_names(),
            encoder: Some(self.clone()),
        })
    }
}

/// Fit a standardizing encoder on `fit_rows` and encode the whole dataset.
pub fn encode(dataset: &Dataset, fit_rows: &[usize]) -> Result<FeatureMatrix> {
    Encoder::fit(dataset, fit_rows, true)?.transform(dataset)
}

/// Dense row-major numeric design matrix with named columns.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    n_rows: usize,
    n_cols: usize,
    values: Vec<f64>,
    feature_names: Vec<String>,
    encoder: Option<Encoder>,
}

impl FeatureMatrix {
    /// Build directly from rows, mainly for tests and small fixtures.
    pub fn from_rows(feature_names: Vec<String>, rows: &[Vec<f64>]) -> Result<Self> {
        let n_cols = feature_names.len();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(Error::Argument(format!(
                    "row {i} has {} values, expected {n_cols}",
                    row.len()
                )));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            n_rows: rows.len(),
            n_cols,
            values,
            feature_names,
            encoder: None,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.n_rows
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n_cols..(i + 1) * self.n_cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn encoder(&self) -> Option<&Encoder> {
        self.encoder.as_ref()
    }

    /// Copy of column `j`.
    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.n_rows).map(|i| self.values[i * self.n_cols + j]).collect()
    }

    /// New matrix containing `rows` in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> FeatureMatrix {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        FeatureMatrix {
            n_rows: rows.len(),
            n_cols: self.n_cols,
            values,
            feature_names: self.feature_names.clone(),
            encoder: self.encoder.clone(),
        }
    }
}
