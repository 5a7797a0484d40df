//! Pipeline configuration: one JSON document describing the data source,
//! the train/validation split, the candidate estimators, bootstrap
//! settings, interpretation outputs, and diagnostics.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use hetfx_core::dataset::{Schema, SyntheticConfig};
use hetfx_core::interpret::{Binning, LeafConstraints};
use hetfx_core::learners::EstimatorConfig;
use hetfx_core::repnet::RepNetConfig;
use hetfx_core::rng::substream_seed;
use hetfx_core::splitting::{MomentWeighting, SplitParams};

use crate::{Error, Result};

/// Substream indices reserved per pipeline stage; every random quantity in
/// a run derives from (config seed, stage, unit).
pub mod stage {
    pub const DATA: u64 = 0;
    pub const SPLIT: u64 = 1;
    pub const FIT: u64 = 2;
    pub const BOOTSTRAP: u64 = 3;
    pub const INTERPRET: u64 = 4;
}

/// Where the rows come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    /// Load a CSV file against an explicit column schema.
    Csv { path: PathBuf, schema: Schema },
    /// Generate rows; the generator seed is derived from the run seed.
    Synthetic(SyntheticConfig),
}

/// One results-table row: a named family with its tuning candidates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EstimatorEntry {
    /// Independent per-arm regressions; all candidates must share a family.
    TLearner {
        #[serde(default)]
        name: Option<String>,
        candidates: Vec<EstimatorConfig>,
    },
    /// Shared-representation network; alpha 0 is TARNet, positive is CFR.
    Repnet {
        #[serde(default)]
        name: Option<String>,
        candidates: Vec<RepNetConfig>,
    },
}

impl EstimatorEntry {
    pub fn n_candidates(&self) -> usize {
        match self {
            EstimatorEntry::TLearner { candidates, .. } => candidates.len(),
            EstimatorEntry::Repnet { candidates, .. } => candidates.len(),
        }
    }

    /// The results-table label: the explicit name when given, otherwise the
    /// shared family for T-learners and tarnet/cfr (by alpha) for networks.
    pub fn display_name(&self) -> String {
        match self {
            EstimatorEntry::TLearner { name, candidates } => name
                .clone()
                .unwrap_or_else(|| candidates.first().map_or("t_learner", |c| c.family()).into()),
            EstimatorEntry::Repnet { name, candidates } => name.clone().unwrap_or_else(|| {
                if candidates.iter().all(|c| c.alpha == 0.0) {
                    "tarnet".into()
                } else if candidates.iter().all(|c| c.alpha > 0.0) {
                    "cfr".into()
                } else {
                    "repnet".into()
                }
            }),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_candidates() == 0 {
            return Err(Error::Config(format!(
                "estimator `{}` has no candidates",
                self.display_name()
            )));
        }
        match self {
            EstimatorEntry::TLearner { candidates, .. } => {
                let family = candidates[0].family();
                for c in candidates {
                    if c.family() != family {
                        return Err(Error::Config(format!(
                            "t_learner entry mixes families `{family}` and `{}`; \
                             use one entry per family",
                            c.family()
                        )));
                    }
                    c.validate()?;
                }
            }
            EstimatorEntry::Repnet { candidates, .. } => {
                for c in candidates {
                    c.validate()?;
                }
            }
        }
        Ok(())
    }
}

/// Train/validation split settings; the split seed derives from the run
/// seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub train_fraction: f64,
    pub n_candidates: usize,
    pub treatment_weight: f64,
    pub weighting: MomentWeighting,
}

impl Default for SplitSection {
    fn default() -> Self {
        let p = SplitParams::default();
        Self {
            train_fraction: p.train_fraction,
            n_candidates: p.n_candidates,
            treatment_weight: p.treatment_weight,
            weighting: p.weighting,
        }
    }
}

impl SplitSection {
    pub fn to_params(&self, run_seed: u64) -> SplitParams {
        SplitParams {
            train_fraction: self.train_fraction,
            n_candidates: self.n_candidates,
            treatment_weight: self.treatment_weight,
            weighting: self.weighting,
            seed: substream_seed(run_seed, stage::SPLIT),
        }
    }
}

/// Which cohort each bootstrap replicate resamples.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapScope {
    /// Resample training schools only; the validation set stays fixed.
    TrainOnly,
    /// Resample the full cohort; each replicate keeps drawn schools on
    /// their original side of the split.
    TrainAndValid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BootstrapSection {
    /// Replicate count; 0 skips interval estimation entirely.
    pub b: usize,
    pub level: f64,
    pub scope: BootstrapScope,
}

impl Default for BootstrapSection {
    fn default() -> Self {
        Self {
            b: 500,
            level: 0.95,
            scope: BootstrapScope::TrainOnly,
        }
    }
}

/// Interpretation outputs over the best model's imputed effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InterpretSection {
    pub enabled: bool,
    /// Covariates offered to the interpretation tree; all when absent.
    pub covariates: Option<Vec<String>>,
    /// Leaf sample requirements; level-based defaults when absent.
    pub constraints: Option<LeafConstraints>,
    pub depth: usize,
    /// Covariates to stratify effects over.
    pub stratify: Vec<String>,
    pub stratify_bins: usize,
    pub binning: Binning,
    /// Covariate pairs rendered as leaf-membership grids.
    pub pairs: Vec<(String, String)>,
    pub pair_steps: usize,
}

impl Default for InterpretSection {
    fn default() -> Self {
        Self {
            enabled: true,
            covariates: None,
            constraints: None,
            depth: 3,
            stratify: Vec::new(),
            stratify_bins: 5,
            binning: Binning::Quantile,
            pairs: Vec::new(),
            pair_steps: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiagnosticsSection {
    pub enabled: bool,
    pub n_bins: usize,
    /// MMD kernel bandwidth; median heuristic when absent.
    pub mmd_sigma: Option<f64>,
}

impl Default for DiagnosticsSection {
    fn default() -> Self {
        Self {
            enabled: true,
            n_bins: 20,
            mmd_sigma: None,
        }
    }
}

/// The full pipeline configuration document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PipelineConfig {
    pub data: DataConfig,
    #[serde(default)]
    pub split: SplitSection,
    pub estimators: Vec<EstimatorEntry>,
    #[serde(default)]
    pub bootstrap: BootstrapSection,
    #[serde(default)]
    pub interpret: InterpretSection,
    #[serde(default)]
    pub diagnostics: DiagnosticsSection,
    #[serde(default)]
    pub seed: u64,
    /// Estimator name whose effects feed interpretation, instead of the
    /// highest validation R².
    #[serde(default)]
    pub best: Option<String>,
    /// Report directory; the `--out` flag overrides it.
    #[serde(default)]
    pub output: Option<PathBuf>,
}

impl PipelineConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let config: PipelineConfig = serde_json::from_str(text)?;
        config.validate()?;
        Ok(config)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read config `{}`: {e}", path.display()))
        })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(Error::Config("at least one estimator entry is required".into()));
        }
        let mut names = BTreeSet::new();
        for entry in &self.estimators {
            entry.validate()?;
            let name = entry.display_name();
            if name == "naive" {
                return Err(Error::Config(
                    "estimator name `naive` is reserved for the unadjusted row".into(),
                ));
            }
            if !names.insert(name.clone()) {
                return Err(Error::Config(format!(
                    "duplicate estimator name `{name}`; set explicit names"
                )));
            }
        }
        if let Some(best) = &self.best {
            if !names.contains(best) {
                return Err(Error::Config(format!(
                    "best = `{best}` does not match any estimator name"
                )));
            }
        }
        if !(self.split.train_fraction > 0.0 && self.split.train_fraction < 1.0) {
            return Err(Error::Config(format!(
                "train_fraction {} must lie in (0, 1)",
                self.split.train_fraction
            )));
        }
        if self.split.n_candidates < 1 {
            return Err(Error::Config("split n_candidates must be at least 1".into()));
        }
        if !(self.split.treatment_weight >= 0.0 && self.split.treatment_weight.is_finite()) {
            return Err(Error::Config("treatment_weight must be finite and nonnegative".into()));
        }
        if !(self.bootstrap.level > 0.0 && self.bootstrap.level < 1.0) {
            return Err(Error::Config(format!(
                "bootstrap level {} must lie in (0, 1)",
                self.bootstrap.level
            )));
        }
        if self.interpret.depth < 1 {
            return Err(Error::Config("interpret depth must be at least 1".into()));
        }
        if self.interpret.stratify_bins < 1 {
            return Err(Error::Config("stratify_bins must be at least 1".into()));
        }
        if self.interpret.pair_steps < 2 {
            return Err(Error::Config("pair_steps must be at least 2".into()));
        }
        if self.diagnostics.n_bins < 1 {
            return Err(Error::Config("diagnostics n_bins must be at least 1".into()));
        }
        if let DataConfig::Synthetic(spec) = &self.data {
            if spec.n_schools == 0 || spec.students_per_school == 0 {
                return Err(Error::Config(
                    "synthetic data needs at least one school and one student".into(),
                ));
            }
        }
        Ok(())
    }

    /// Apply command-line overrides and derive dependent seeds; the result
    /// is the exact document echoed to `config_resolved.json`.
    pub fn resolve(mut self, seed: Option<u64>, output: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = output {
            self.output = Some(o);
        }
        if let DataConfig::Synthetic(spec) = &mut self.data {
            spec.seed = substream_seed(self.seed, stage::DATA);
        }
        Ok(self)
    }
}
