//! Synthetic two-level trial generator with known ground truth.
//!
//! Draws a fixed covariate layout: per school, numeric `X1`..`X5` uniform on
//! (-1, 1) and a categorical urbanicity `XC` uniform over {A, B, C, D}; per
//! student, `S3` uniform on (1, 7) and `C1`..`C3` uniform on (-1, 1).
//! Outcomes follow `Y = mu0(x) + Z * tau(x) + eps` with independent Gaussian
//! noise, and treatment is Bernoulli with configurable propensity. All draws
//! come from one seeded stream, so equal configs give byte-identical data.

use std::collections::BTreeMap;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{ColumnKind, ColumnLevel, ColumnRole, ColumnSpec, ColumnValues, Dataset, Schema};

/// Affine function of numeric covariates: `intercept + sum(coef * value)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearSpec {
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<(String, f64)>,
}

impl Default for LinearSpec {
    fn default() -> Self {
        Self {
            intercept: 0.0,
            terms: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Lt,
    Gt,
}

/// One threshold clause, e.g. `X1 < 0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCondition {
    pub covariate: String,
    pub op: CmpOp,
    pub threshold: f64,
}

impl ThresholdCondition {
    fn holds(&self, value: f64) -> bool {
        match self.op {
            CmpOp::Lt => value < self.threshold,
            CmpOp::Gt => value > self.threshold,
        }
    }
}

/// Treatment-effect surface `tau(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EffectSpec {
    Constant { value: f64 },
    Linear { intercept: f64, terms: Vec<(String, f64)> },
    /// `base + bonus * 1{all conditions hold}`.
    ThresholdInteraction {
        base: f64,
        bonus: f64,
        conditions: Vec<ThresholdCondition>,
    },
}

/// Treatment assignment probability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PropensitySpec {
    Constant { value: f64 },
    /// Linear probability model, clamped into [0.02, 0.98].
    Linear { intercept: f64, terms: Vec<(String, f64)> },
}

impl Default for PropensitySpec {
    fn default() -> Self {
        PropensitySpec::Constant { value: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub n_schools: usize,
    pub students_per_school: usize,
    pub effect: EffectSpec,
    #[serde(default)]
    pub baseline: LinearSpec,
    #[serde(default)]
    pub propensity: PropensitySpec,
    pub noise_sd: f64,
    #[serde(default)]
    pub seed: u64,
}

/// Per-row generative quantities recorded alongside the data.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub tau: Vec<f64>,
    pub mu0: Vec<f64>,
    pub propensity: Vec<f64>,
}

impl GroundTruth {
    pub fn mu1(&self) -> Vec<f64> {
        self.mu0.iter().zip(&self.tau).map(|(m, t)| m + t).collect()
    }
}

const STUDENT_NUMERIC: [&str; 4] = ["S3", "C1", "C2", "C3"];
const SCHOOL_NUMERIC: [&str; 5] = ["X1", "X2", "X3", "X4", "X5"];
const URBANICITY: [&str; 4] = ["A", "B", "C", "D"];

/// The column layout produced by [`generate_synthetic`].
pub fn synthetic_schema() -> Schema {
    let mut cols = Vec::new();
    for name in STUDENT_NUMERIC {
        cols.push(ColumnSpec::new(
            name,
            ColumnLevel::Student,
            ColumnKind::Numeric,
            ColumnRole::Covariate,
        ));
    }
    for name in SCHOOL_NUMERIC {
        cols.push(ColumnSpec::new(
            name,
            ColumnLevel::School,
            ColumnKind::Numeric,
            ColumnRole::Covariate,
        ));
    }
    cols.push(ColumnSpec::new(
        "XC",
        ColumnLevel::School,
        ColumnKind::Categorical,
        ColumnRole::Covariate,
    ));
    cols.push(ColumnSpec::new(
        "schoolid",
        ColumnLevel::School,
        ColumnKind::Categorical,
        ColumnRole::SchoolId,
    ));
    cols.push(ColumnSpec::new(
        "Z",
        ColumnLevel::Student,
        ColumnKind::Numeric,
        ColumnRole::Treatment,
    ));
    cols.push(ColumnSpec::new(
        "Y",
        ColumnLevel::Student,
        ColumnKind::Numeric,
        ColumnRole::Outcome,
    ));
    Schema::new(cols).expect("fixed layout is valid")
}

fn check_terms<'a, I: Iterator<Item = &'a String>>(
    names: I,
    columns: &BTreeMap<&str, Vec<f64>>,
    context: &str,
) -> Result<()> {
    for name in names {
        if !columns.contains_key(name.as_str()) {
            return Err(Error::Argument(format!(
                "{context} references unknown numeric covariate `{name}`"
            )));
        }
    }
    Ok(())
}

fn eval_linear(intercept: f64, terms: &[(String, f64)], columns: &BTreeMap<&str, Vec<f64>>, row: usize) -> f64 {
    intercept
        + terms
            .iter()
            .map(|(name, coef)| coef * columns[name.as_str()][row])
            .sum::<f64>()
}

/// Generate a dataset and its ground truth from `config`.
pub fn generate_synthetic(config: &SyntheticConfig) -> Result<(Dataset, GroundTruth)> {
    if config.n_schools == 0 {
        return Err(Error::Argument("n_schools must be positive".into()));
    }
    if config.students_per_school == 0 {
        return Err(Error::Argument("students_per_school must be positive".into()));
    }
    if !config.noise_sd.is_finite() || config.noise_sd < 0.0 {
        return Err(Error::Argument("noise_sd must be finite and nonnegative".into()));
    }
    if let PropensitySpec::Constant { value } = config.propensity {
        if !(value > 0.0 && value < 1.0) {
            return Err(Error::Argument(format!(
                "constant propensity {value} must lie strictly inside (0, 1)"
            )));
        }
    }

    let n = config.n_schools;
    let per = config.students_per_school;
    let m = n * per;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);

    let mut columns: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    for name in STUDENT_NUMERIC.iter().chain(SCHOOL_NUMERIC.iter()) {
        columns.insert(name, Vec::with_capacity(m));
    }
    let mut urbanicity: Vec<String> = Vec::with_capacity(m);
    let mut school_ids: Vec<String> = Vec::with_capacity(m);

    for school in 0..n {
        let x: Vec<f64> = (0..SCHOOL_NUMERIC.len())
            .map(|_| rng.gen_range(-1.0..1.0))
            .collect();
        let xc = URBANICITY[rng.gen_range(0..URBANICITY.len())];
        let label = format!("s{:03}", school + 1);
        for _ in 0..per {
            let s3 = rng.gen_range(1.0..7.0);
            let c: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
            columns.get_mut("S3").unwrap().push(s3);
            columns.get_mut("C1").unwrap().push(c[0]);
            columns.get_mut("C2").unwrap().push(c[1]);
            columns.get_mut("C3").unwrap().push(c[2]);
            for (name, value) in SCHOOL_NUMERIC.iter().zip(&x) {
                columns.get_mut(name).unwrap().push(*value);
            }
            urbanicity.push(xc.to_string());
            school_ids.push(label.clone());
        }
    }

    match &config.effect {
        EffectSpec::Constant { .. } => {}
        EffectSpec::Linear { terms, .. } => {
            check_terms(terms.iter().map(|(n, _)| n), &columns, "effect")?
        }
        EffectSpec::ThresholdInteraction { conditions, .. } => {
            check_terms(conditions.iter().map(|c| &c.covariate), &columns, "effect")?
        }
    }
    check_terms(config.baseline.terms.iter().map(|(n, _)| n), &columns, "baseline")?;
    if let PropensitySpec::Linear { terms, .. } = &config.propensity {
        check_terms(terms.iter().map(|(n, _)| n), &columns, "propensity")?;
    }

    let tau: Vec<f64> = (0..m)
        .map(|i| match &config.effect {
            EffectSpec::Constant { value } => *value,
            EffectSpec::Linear { intercept, terms } => eval_linear(*intercept, terms, &columns, i),
            EffectSpec::ThresholdInteraction { base, bonus, conditions } => {
                let hit = conditions
                    .iter()
                    .all(|c| c.holds(columns[c.covariate.as_str()][i]));
                base + if hit { *bonus } else { 0.0 }
            }
        })
        .collect();
    let mu0: Vec<f64> = (0..m)
        .map(|i| eval_linear(config.baseline.intercept, &config.baseline.terms, &columns, i))
        .collect();
    let propensity: Vec<f64> = (0..m)
        .map(|i| match &config.propensity {
            PropensitySpec::Constant { value } => *value,
            PropensitySpec::Linear { intercept, terms } => {
                eval_linear(*intercept, terms, &columns, i).clamp(0.02, 0.98)
            }
        })
        .collect();

    let treatment: Vec<u8> = propensity.iter().map(|&p| rng.gen_bool(p) as u8).collect();
    let noise: Vec<f64> = if config.noise_sd > 0.0 {
        let normal = Normal::new(0.0, config.noise_sd)
            .map_err(|e| Error::Argument(format!("invalid noise distribution: {e}")))?;
        (0..m).map(|_| normal.sample(&mut rng)).collect()
    } else {
        vec![0.0; m]
    };
    let outcome: Vec<f64> = (0..m)
        .map(|i| mu0[i] + f64::from(treatment[i]) * tau[i] + noise[i])
        .collect();

    let schema = synthetic_schema();
    let covariates: Vec<ColumnValues> = schema
        .covariates()
        .map(|spec| {
            if spec.name == "XC" {
                ColumnValues::Categorical(urbanicity.clone())
            } else {
                ColumnValues::Numeric(columns[spec.name.as_str()].clone())
            }
        })
        .collect();
    let dataset = Dataset::from_parts(schema, covariates, treatment, outcome, school_ids)?;
    Ok((dataset, GroundTruth { tau, mu0, propensity }))
}
