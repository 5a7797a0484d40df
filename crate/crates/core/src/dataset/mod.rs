//! Multi-level data model: students nested in schools, with covariates at
//! both levels, a binary treatment, and a real-valued outcome.
//!
//! A [`Schema`] declares column names, levels, kinds, and roles; a
//! [`Dataset`] holds validated column data plus an index from school id to
//! row indices. Feature encoding lives in [`encode`], synthetic data with
//! known ground-truth effects in [`synthetic`].

mod encode;
mod synthetic;

pub use encode::{encode, EncodedColumn, Encoder, FeatureMatrix};
pub use synthetic::{
    generate_synthetic, CmpOp, EffectSpec, GroundTruth, LinearSpec, PropensitySpec,
    SyntheticConfig, ThresholdCondition,
};

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Whether a column describes the student or the school.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnLevel {
    Student,
    School,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnKind {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Covariate,
    Treatment,
    Outcome,
    SchoolId,
}

/// Declaration of a single input column.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub name: String,
    pub level: ColumnLevel,
    pub kind: ColumnKind,
    pub role: ColumnRole,
}

impl ColumnSpec {
    pub fn new(name: &str, level: ColumnLevel, kind: ColumnKind, role: ColumnRole) -> Self {
        Self {
            name: name.to_string(),
            level,
            kind,
            role,
        }
    }
}

/// Ordered column declarations for a dataset.
///
/// Exactly one column each must carry the treatment, outcome, and school-id
/// roles, and column names must be unique.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<ColumnSpec>", into = "Vec<ColumnSpec>")]
pub struct Schema {
    columns: Vec<ColumnSpec>,
}

impl TryFrom<Vec<ColumnSpec>> for Schema {
    type Error = Error;
    fn try_from(columns: Vec<ColumnSpec>) -> Result<Self> {
        Schema::new(columns)
    }
}

impl From<Schema> for Vec<ColumnSpec> {
    fn from(s: Schema) -> Self {
        s.columns
    }
}

impl Schema {
    pub fn new(columns: Vec<ColumnSpec>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for c in &columns {
            if !names.insert(c.name.clone()) {
                return Err(Error::Schema(format!("duplicate column name `{}`", c.name)));
            }
        }
        for (role, label) in [
            (ColumnRole::Treatment, "treatment"),
            (ColumnRole::Outcome, "outcome"),
            (ColumnRole::SchoolId, "school_id"),
        ] {
            let k = columns.iter().filter(|c| c.role == role).count();
            if k != 1 {
                return Err(Error::Schema(format!(
                    "schema must declare exactly one {label} column, found {k}"
                )));
            }
        }
        Ok(Self { columns })
    }

    pub fn columns(&self) -> &[ColumnSpec] {
        &self.columns
    }

    pub fn covariates(&self) -> impl Iterator<Item = &ColumnSpec> {
        self.columns
            .iter()
            .filter(|c| c.role == ColumnRole::Covariate)
    }

    fn role_column(&self, role: ColumnRole) -> &ColumnSpec {
        self.columns
            .iter()
            .find(|c| c.role == role)
            .expect("validated at construction")
    }

    pub fn treatment_name(&self) -> &str {
        &self.role_column(ColumnRole::Treatment).name
    }

    pub fn outcome_name(&self) -> &str {
        &self.role_column(ColumnRole::Outcome).name
    }

    pub fn school_id_name(&self) -> &str {
        &self.role_column(ColumnRole::SchoolId).name
    }

    pub fn covariate(&self, name: &str) -> Option<&ColumnSpec> {
        self.covariates().find(|c| c.name == name)
    }
}

/// Raw values of one covariate column.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnValues {
    Numeric(Vec<f64>),
    Categorical(Vec<String>),
}

impl ColumnValues {
    pub fn len(&self) -> usize {
        match self {
            ColumnValues::Numeric(v) => v.len(),
            ColumnValues::Categorical(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            ColumnValues::Numeric(v) => Some(v),
            ColumnValues::Categorical(_) => None,
        }
    }

    pub fn as_categorical(&self) -> Option<&[String]> {
        match self {
            ColumnValues::Categorical(v) => Some(v),
            ColumnValues::Numeric(_) => None,
        }
    }
}

/// A validated, immutable table of observations.
///
/// Rows are students; each row belongs to exactly one school. `school_index`
/// maps every school id to the (ascending) row indices of its students.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    schema: Schema,
    covariates: Vec<ColumnValues>,
    treatment: Vec<u8>,
    outcome: Vec<f64>,
    school_ids: Vec<String>,
    school_index: BTreeMap<String, Vec<usize>>,
}

impl Dataset {
    /// Assemble a dataset from parallel columns. `covariates` must follow the
    /// schema's covariate order.
    pub fn from_parts(
        schema: Schema,
        covariates: Vec<ColumnValues>,
        treatment: Vec<u8>,
        outcome: Vec<f64>,
        school_ids: Vec<String>,
    ) -> Result<Self> {
        let m = treatment.len();
        if m == 0 {
            return Err(Error::Argument("dataset must contain at least one row".into()));
        }
        if outcome.len() != m || school_ids.len() != m {
            return Err(Error::Argument("column lengths differ".into()));
        }
        let n_cov = schema.covariates().count();
        if covariates.len() != n_cov {
            return Err(Error::Argument(format!(
                "expected {n_cov} covariate columns, got {}",
                covariates.len()
            )));
        }
        for (spec, col) in schema.covariates().zip(&covariates) {
            if col.len() != m {
                return Err(Error::Argument(format!(
                    "covariate `{}` has {} rows, expected {m}",
                    spec.name,
                    col.len()
                )));
            }
            let kind_ok = match (spec.kind, col) {
                (ColumnKind::Numeric, ColumnValues::Numeric(_)) => true,
                (ColumnKind::Categorical, ColumnValues::Categorical(_)) => true,
                _ => false,
            };
            if !kind_ok {
                return Err(Error::Argument(format!(
                    "covariate `{}` values do not match its declared kind",
                    spec.name
                )));
            }
        }
        for (i, z) in treatment.iter().enumerate() {
            if *z > 1 {
                return Err(Error::Validation {
                    row: i + 1,
                    msg: format!("treatment value `{z}` is not 0 or 1"),
                });
            }
        }
        for (i, y) in outcome.iter().enumerate() {
            if !y.is_finite() {
                return Err(Error::Validation {
                    row: i + 1,
                    msg: format!("outcome value `{y}` is not finite"),
                });
            }
        }
        let mut school_index: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, sid) in school_ids.iter().enumerate() {
            if sid.is_empty() {
                return Err(Error::Validation {
                    row: i + 1,
                    msg: "empty school id".into(),
                });
            }
            school_index.entry(sid.clone()).or_default().push(i);
        }
        Ok(Self {
            schema,
            covariates,
            treatment,
            outcome,
            school_ids,
            school_index,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    /// Number of rows (students).
    pub fn n_rows(&self) -> usize {
        self.treatment.len()
    }

    /// Number of distinct schools.
    pub fn n_schools(&self) -> usize {
        self.school_index.len()
    }

    pub fn treatment(&self) -> &[u8] {
        &self.treatment
    }

    pub fn outcome(&self) -> &[f64] {
        &self.outcome
    }

    pub fn school_ids(&self) -> &[String] {
        &self.school_ids
    }

    pub fn school_index(&self) -> &BTreeMap<String, Vec<usize>> {
        &self.school_index
    }

    /// School labels in sorted order.
    pub fn school_labels(&self) -> Vec<String> {
        self.school_index.keys().cloned().collect()
    }

    /// Dense school codes per row, plus the label for each code.
    /// Codes follow the sorted label order.
    pub fn school_codes(&self) -> (Vec<u32>, Vec<String>) {
        let labels = self.school_labels();
        let lookup: BTreeMap<&str, u32> = labels
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i as u32))
            .collect();
        let codes = self
            .school_ids
            .iter()
            .map(|s| lookup[s.as_str()])
            .collect();
        (codes, labels)
    }

    /// Row indices of the group with treatment value `z`.
    pub fn group_rows(&self, z: u8) -> Vec<usize> {
        self.treatment
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == z)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn covariate_values(&self) -> &[ColumnValues] {
        &self.covariates
    }

    /// Covariate spec and values by name.
    pub fn covariate(&self, name: &str) -> Option<(&ColumnSpec, &ColumnValues)> {
        self.schema
            .covariates()
            .zip(&self.covariates)
            .find(|(spec, _)| spec.name == name)
    }

    /// New dataset containing `rows` in the given order.
    pub fn subset(&self, rows: &[usize]) -> Result<Dataset> {
        self.subset_relabeled(rows, None)
    }

    /// Like [`Dataset::subset`], with optional replacement school labels
    /// (parallel to `rows`). Used by cluster resampling to keep duplicated
    /// schools distinct.
    pub fn subset_relabeled(&self, rows: &[usize], labels: Option<&[String]>) -> Result<Dataset> {
        if rows.is_empty() {
            return Err(Error::Argument("row subset must be nonempty".into()));
        }
        if let Some(l) = labels {
            if l.len() != rows.len() {
                return Err(Error::Argument("label vector length mismatch".into()));
            }
        }
        for &r in rows {
            if r >= self.n_rows() {
                return Err(Error::Argument(format!("row index {r} out of range")));
            }
        }
        let covariates = self
            .covariates
            .iter()
            .map(|col| match col {
                ColumnValues::Numeric(v) => {
                    ColumnValues::Numeric(rows.iter().map(|&r| v[r]).collect())
                }
                ColumnValues::Categorical(v) => {
                    ColumnValues::Categorical(rows.iter().map(|&r| v[r].clone()).collect())
                }
            })
            .collect();
        let school_ids = match labels {
            Some(l) => l.to_vec(),
            None => rows.iter().map(|&r| self.school_ids[r].clone()).collect(),
        };
        Dataset::from_parts(
            self.schema.clone(),
            covariates,
            rows.iter().map(|&r| self.treatment[r]).collect(),
            rows.iter().map(|&r| self.outcome[r]).collect(),
            school_ids,
        )
    }

    /// Write as delimited text (comma separator, header row). Numeric values
    /// use the shortest representation that parses back to the same float.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let header: Vec<&str> = self.schema.columns.iter().map(|c| c.name.as_str()).collect();
        w.write_record(&header)?;
        let cov_pos: Vec<usize> = self
            .schema
            .columns
            .iter()
            .enumerate()
            .filter(|(_, c)| c.role == ColumnRole::Covariate)
            .map(|(i, _)| i)
            .collect();
        let mut cell = String::new();
        for row in 0..self.n_rows() {
            let mut record: Vec<String> = Vec::with_capacity(self.schema.columns.len());
            let mut cov_iter = 0usize;
            for (ci, spec) in self.schema.columns.iter().enumerate() {
                cell.clear();
                match spec.role {
                    ColumnRole::Treatment => cell.push_str(&self.treatment[row].to_string()),
                    ColumnRole::Outcome => cell.push_str(&self.outcome[row].to_string()),
                    ColumnRole::SchoolId => cell.push_str(&self.school_ids[row]),
                    ColumnRole::Covariate => {
                        debug_assert_eq!(ci, cov_pos[cov_iter]);
                        match &self.covariates[cov_iter] {
                            ColumnValues::Numeric(v) => cell.push_str(&v[row].to_string()),
                            ColumnValues::Categorical(v) => cell.push_str(&v[row]),
                        }
                        cov_iter += 1;
                    }
                }
                record.push(cell.clone());
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_csv_path(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_csv(std::io::BufWriter::new(f))
    }
}

/// Load a delimited file against a schema.
///
/// The header must contain every schema column (extra columns are ignored).
/// Row numbers in errors are 1-based data rows, excluding the header.
pub fn load_csv_reader<R: Read>(reader: R, schema: &Schema) -> Result<Dataset> {
    let mut r = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = r.headers()?.clone();
    let mut positions = Vec::with_capacity(schema.columns().len());
    for spec in schema.columns() {
        let pos = headers
            .iter()
            .position(|h| h == spec.name)
            .ok_or_else(|| Error::Schema(format!("column `{}` missing from header", spec.name)))?;
        positions.push(pos);
    }

    let n_cov = schema.covariates().count();
    let mut covariates: Vec<ColumnValues> = schema
        .covariates()
        .map(|spec| match spec.kind {
            ColumnKind::Numeric => ColumnValues::Numeric(Vec::new()),
            ColumnKind::Categorical => ColumnValues::Categorical(Vec::new()),
        })
        .collect();
    let mut treatment = Vec::new();
    let mut outcome = Vec::new();
    let mut school_ids = Vec::new();

    for (row_idx, record) in r.records().enumerate() {
        let row = row_idx + 1;
        let record = record?;
        let mut cov_iter = 0usize;
        for (spec, &pos) in schema.columns().iter().zip(&positions) {
            let raw = record.get(pos).ok_or_else(|| Error::Validation {
                row,
                msg: format!("row has no field for column `{}`", spec.name),
            })?;
            let raw = raw.trim();
            match spec.role {
                ColumnRole::Treatment => {
                    let v: f64 = raw.parse().map_err(|_| Error::Validation {
                        row,
                        msg: format!("treatment value `{raw}` is not a number"),
                    })?;
                    if v == 0.0 {
                        treatment.push(0);
                    } else if v == 1.0 {
                        treatment.push(1);
                    } else {
                        return Err(Error::Validation {
                            row,
                            msg: format!("treatment value `{raw}` is not 0 or 1"),
                        });
                    }
                }
                ColumnRole::Outcome => {
                    let v: f64 = raw.parse().map_err(|_| Error::Validation {
                        row,
                        msg: format!("outcome value `{raw}` is not a number"),
                    })?;
                    if !v.is_finite() {
                        return Err(Error::Validation {
                            row,
                            msg: format!("outcome value `{raw}` is not finite"),
                        });
                    }
                    outcome.push(v);
                }
                ColumnRole::SchoolId => {
                    if raw.is_empty() {
                        return Err(Error::Validation {
                            row,
                            msg: "empty school id".into(),
                        });
                    }
                    school_ids.push(raw.to_string());
                }
                ColumnRole::Covariate => {
                    match &mut covariates[cov_iter] {
                        ColumnValues::Numeric(col) => {
                            let v: f64 = raw.parse().map_err(|_| Error::Validation {
                                row,
                                msg: format!(
                                    "column `{}`: value `{raw}` is not a number",
                                    spec.name
                                ),
                            })?;
                            if !v.is_finite() {
                                return Err(Error::Validation {
                                    row,
                                    msg: format!("column `{}`: value `{raw}` is not finite", spec.name),
                                });
                            }
                            col.push(v);
                        }
                        ColumnValues::Categorical(col) => col.push(raw.to_string()),
                    }
                    cov_iter += 1;
                }
            }
        }
        debug_assert_eq!(cov_iter, n_cov);
    }

    Dataset::from_parts(schema.clone(), covariates, treatment, outcome, school_ids)
}

/// Load a delimited file from disk. See [`load_csv_reader`].
pub fn load_csv(path: &Path, schema: &Schema) -> Result<Dataset> {
    let f = std::fs::File::open(path)
        .map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?;
    load_csv_reader(std::io::BufReader::new(f), schema)
}
