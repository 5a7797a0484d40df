//! Pipeline execution: load data, report balance, split by school, select
//! each estimator's tuning candidate on held-out R², impute effects with
//! the best model, bootstrap intervals, interpret, and write every artifact
//! under the output directory.
//!
//! Fixed output names: `config_resolved.json`, `balance.json`,
//! `selection_log.csv`, `results.csv`, `cate_imputed.csv`,
//! `cate_histogram.csv`, `importance.csv`, `strata_<covariate>.csv`,
//! `tree_rules.txt`, `tree_rules.json`, `pair_grid_<x>_<y>.csv`,
//! `run_report.json`, and `timings.txt`. Every file except `timings.txt` is
//! byte-identical across runs with the same config and seed.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use hetfx_core::dataset::{generate_synthetic, load_csv, Dataset, Encoder};
use hetfx_core::diagnostics::{balance_report, BalanceReport};
use hetfx_core::inference::{
    cluster_bootstrap, cluster_bootstrap_multi, naive_ate, r2_heldout, write_results_csv,
    EstimatorSummary,
};
use hetfx_core::interpret::{
    export_rules, feature_importance, interpret_tree_fit, pair_grid, rules_to_json, rules_to_text,
    stratify_cate_with, ImportanceReport, InterpretLeaf, LeafConstraints, Rule,
    StratificationSummary,
};
use hetfx_core::learners::{EstimatorConfig, ForestParams};
use hetfx_core::repnet::{repnet_fit, RepNetConfig};
use hetfx_core::rng::substream_seed;
use hetfx_core::tlearner::{fit_t_learner, impute_cate, CateTable, OutcomePairModel};

use crate::config::{stage, BootstrapScope, DataConfig, EstimatorEntry, PipelineConfig};
use crate::{Error, Result, StageError};

/// Row counts and provenance of the loaded cohort.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DataSummary {
    pub source: String,
    pub n_rows: usize,
    pub n_schools: usize,
}

/// The realized school partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub n_train_schools: usize,
    pub n_valid_schools: usize,
    pub n_train_rows: usize,
    pub n_valid_rows: usize,
    pub score: f64,
    pub train_schools: Vec<String>,
    pub valid_schools: Vec<String>,
}

/// One grid candidate's validation outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionEntry {
    pub estimator: String,
    pub candidate: usize,
    pub config: serde_json::Value,
    pub r2_valid: Option<f64>,
    pub error: Option<String>,
    pub selected: bool,
}

/// Final numbers for one estimator entry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FamilyReport {
    pub name: String,
    pub model_id: String,
    pub selected_candidate: usize,
    pub selected_config: serde_json::Value,
    /// Held-out R² of the selected candidate on the original split.
    pub r2_valid: f64,
    pub summary: EstimatorSummary,
    pub n_bootstrap_failures: usize,
}

/// Binned imputed effects of the best model (fixed 50 bins).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateHistogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

/// Interpretation outputs over the best model's imputed effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretReport {
    pub importance: ImportanceReport,
    pub strata: Vec<StratificationSummary>,
    pub rules: Vec<Rule>,
    pub leaves: Vec<InterpretLeaf>,
    pub constraints: LeafConstraints,
}

/// Reproducibility metadata. The embedded config has its output path
/// cleared so reports do not depend on where they were written.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub seed: u64,
    pub cli_version: String,
    pub core_version: String,
    pub config: PipelineConfig,
}

/// Everything a run produced, as written to `run_report.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub metadata: RunMetadata,
    pub data: DataSummary,
    pub split: SplitSummary,
    pub selection: Vec<SelectionEntry>,
    pub naive: EstimatorSummary,
    pub estimators: Vec<FamilyReport>,
    /// Estimator whose effects feed interpretation.
    pub best: String,
    pub cate_histogram: CateHistogram,
    pub interpret: Option<InterpretReport>,
    pub balance: Option<BalanceReport>,
}

/// The results-table rows: the naive estimator first, then one row per
/// estimator entry in config order.
pub fn selection_table(report: &RunReport) -> Vec<EstimatorSummary> {
    let mut rows = vec![report.naive.clone()];
    rows.extend(report.estimators.iter().map(|f| f.summary.clone()));
    rows
}

/// Fixed-width text rendering of the results table for terminal output.
pub fn format_summary_table(rows: &[EstimatorSummary]) -> String {
    let ci = |v: Option<(f64, f64)>| match v {
        Some((lo, hi)) => format!("[{lo:.3}, {hi:.3}]"),
        None => String::new(),
    };
    let mut lines = vec![format!(
        "{:<12} {:>8} {:<18} {:>8} {:<18}",
        "estimator", "ate", "ate 95% ci", "r2", "r2 95% ci"
    )];
    for r in rows {
        lines.push(format!(
            "{:<12} {:>8.3} {:<18} {:>8} {:<18}",
            r.estimator,
            r.ate,
            ci(r.ate_ci),
            r.r2.map(|v| format!("{v:.3}")).unwrap_or_default(),
            ci(r.r2_ci),
        ));
    }
    lines.join("\n")
}

#[derive(Clone)]
enum FitSpec {
    TLearner(EstimatorConfig),
    Repnet(RepNetConfig),
}

impl FitSpec {
    fn fit(&self, train: &Dataset, seed: u64) -> hetfx_core::Result<OutcomePairModel> {
        match self {
            FitSpec::TLearner(c) => fit_t_learner(train, c, seed),
            FitSpec::Repnet(c) => {
                let mut c = c.clone();
                c.seed = seed;
                Ok(repnet_fit(train, &c)?.into_pair_model())
            }
        }
    }

    fn to_value(&self) -> serde_json::Value {
        match self {
            FitSpec::TLearner(c) => serde_json::to_value(c).expect("estimator config serializes"),
            FitSpec::Repnet(c) => serde_json::to_value(c).expect("repnet config serializes"),
        }
    }
}

fn candidate_specs(entry: &EstimatorEntry) -> Vec<FitSpec> {
    match entry {
        EstimatorEntry::TLearner { candidates, .. } => {
            candidates.iter().cloned().map(FitSpec::TLearner).collect()
        }
        EstimatorEntry::Repnet { candidates, .. } => {
            candidates.iter().cloned().map(FitSpec::Repnet).collect()
        }
    }
}

struct Selected {
    name: String,
    candidate: usize,
    spec: FitSpec,
    fit_seed: u64,
    model: OutcomePairModel,
    r2_valid: f64,
}

fn write_text(dir: &Path, name: &str, text: &str) -> Result<()> {
    Ok(fs::write(dir.join(name), text)?)
}

/// File-name-safe covariate slug.
fn slug(name: &str) -> String {
    name.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn histogram_50(tau: &[f64]) -> CateHistogram {
    let n_bins = 50;
    let lo = tau.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = tau.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let edges = (0..=n_bins).map(|b| lo + width * b as f64).collect();
    let mut counts = vec![0usize; n_bins];
    for &v in tau {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    CateHistogram { edges, counts }
}

/// Relabel every school with a `t|`/`v|` side prefix so bootstrap
/// replicates of the full cohort can be partitioned back into sides.
fn tag_sides(data: &Dataset, train_schools: &BTreeSet<String>) -> hetfx_core::Result<Dataset> {
    let rows: Vec<usize> = (0..data.n_rows()).collect();
    let labels: Vec<String> = data
        .school_ids()
        .iter()
        .map(|s| {
            if train_schools.contains(s) {
                format!("t|{s}")
            } else {
                format!("v|{s}")
            }
        })
        .collect();
    data.subset_relabeled(&rows, Some(&labels))
}

fn side_rows(d: &Dataset) -> (Vec<usize>, Vec<usize>) {
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (i, s) in d.school_ids().iter().enumerate() {
        if s.starts_with("t|") {
            train.push(i);
        } else {
            valid.push(i);
        }
    }
    (train, valid)
}

struct StageClock {
    timings: Vec<(&'static str, f64)>,
}

impl StageClock {
    fn run<T>(
        &mut self,
        name: &'static str,
        f: impl FnOnce() -> Result<T>,
    ) -> std::result::Result<T, StageError> {
        let start = Instant::now();
        let out = f().map_err(|e| StageError::new(name, e))?;
        self.timings.push((name, start.elapsed().as_secs_f64()));
        Ok(out)
    }
}

/// Execute every configured stage and write all artifacts under the
/// config's output directory. Artifacts written before a failing stage are
/// retained.
pub fn run_pipeline(config: &PipelineConfig) -> std::result::Result<RunReport, StageError> {
    let mut clock = StageClock { timings: Vec::new() };

    let out_dir: PathBuf = clock.run("config", || {
        config.validate()?;
        config
            .output
            .clone()
            .ok_or_else(|| Error::Config("no output directory; set `output` or pass --out".into()))
    })?;

    clock.run("output", || {
        fs::create_dir_all(&out_dir)?;
        write_text(&out_dir, "config_resolved.json", &config.to_json()?)
    })?;

    let (data, source) = clock.run("data", || match &config.data {
        DataConfig::Csv { path, schema } => {
            Ok((load_csv(path, schema)?, format!("csv:{}", path.display())))
        }
        DataConfig::Synthetic(spec) => {
            let (d, _) = generate_synthetic(spec)?;
            Ok((d, "synthetic".to_string()))
        }
    })?;
    let data_summary = DataSummary {
        source,
        n_rows: data.n_rows(),
        n_schools: data.n_schools(),
    };

    let balance = if config.diagnostics.enabled {
        Some(clock.run("diagnostics", || {
            let report =
                balance_report(&data, config.diagnostics.n_bins, config.diagnostics.mmd_sigma)?;
            write_text(&out_dir, "balance.json", &report.to_json()?)?;
            Ok(report)
        })?)
    } else {
        None
    };

    let (d_train, d_valid, split_summary) = clock.run("split", || {
        let params = config.split.to_params(config.seed);
        let assignment = hetfx_core::splitting::balanced_split(&data, &params)?;
        let d_train = data.subset(&assignment.train_rows(&data))?;
        let d_valid = data.subset(&assignment.valid_rows(&data))?;
        let summary = SplitSummary {
            n_train_schools: assignment.train_schools.len(),
            n_valid_schools: assignment.valid_schools.len(),
            n_train_rows: d_train.n_rows(),
            n_valid_rows: d_valid.n_rows(),
            score: assignment.score,
            train_schools: assignment.train_schools.clone(),
            valid_schools: assignment.valid_schools.clone(),
        };
        Ok((d_train, d_valid, summary))
    })?;

    let (selected, selection_log, best_idx) = clock.run("selection", || {
        let (selected, log) = select_candidates(config, &d_train, &d_valid, &out_dir)?;
        let best_idx = match &config.best {
            Some(name) => selected
                .iter()
                .position(|s| &s.name == name)
                .ok_or_else(|| Error::Config(format!("best = `{name}` matches no estimator")))?,
            None => selected
                .iter()
                .enumerate()
                .max_by(|(ia, a), (ib, b)| a.r2_valid.total_cmp(&b.r2_valid).then(ib.cmp(ia)))
                .map(|(i, _)| i)
                .expect("validated config has estimators"),
        };
        Ok((selected, log, best_idx))
    })?;

    let (cate_full, hist) = clock.run("impute", || {
        let cate = impute_cate(&selected[best_idx].model, &data)?;
        let mut buf = Vec::new();
        cate.write_csv(&mut buf)?;
        fs::write(out_dir.join("cate_imputed.csv"), buf)?;

        let hist = histogram_50(&cate.tau_hat);
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["bin_low", "bin_high", "count"]).map_err(hetfx_core::Error::from)?;
        for b in 0..hist.counts.len() {
            w.write_record([
                hist.edges[b].to_string(),
                hist.edges[b + 1].to_string(),
                hist.counts[b].to_string(),
            ])
            .map_err(hetfx_core::Error::from)?;
        }
        let buf = w.into_inner().expect("vec writer");
        fs::write(out_dir.join("cate_histogram.csv"), buf)?;
        Ok((cate, hist))
    })?;

    let (naive, families) = clock.run("bootstrap", || {
        bootstrap_estimates(config, &data, &d_train, &d_valid, &split_summary, &selected)
    })?;

    let interpret = if config.interpret.enabled {
        Some(clock.run("interpret", || {
            interpret_outputs(config, &data, &cate_full, &out_dir)
        })?)
    } else {
        None
    };

    let mut public_config = config.clone();
    public_config.output = None;
    let report = RunReport {
        metadata: RunMetadata {
            seed: config.seed,
            cli_version: env!("CARGO_PKG_VERSION").to_string(),
            core_version: hetfx_core::VERSION.to_string(),
            config: public_config,
        },
        data: data_summary,
        split: split_summary,
        selection: selection_log,
        naive,
        estimators: families,
        best: selected[best_idx].name.clone(),
        cate_histogram: hist,
        interpret,
        balance,
    };

    clock.run("report", || {
        let mut buf = Vec::new();
        write_results_csv(&selection_table(&report), &mut buf)?;
        fs::write(out_dir.join("results.csv"), buf)?;
        write_text(&out_dir, "run_report.json", &serde_json::to_string_pretty(&report)?)
    })?;

    let timings: String = clock
        .timings
        .iter()
        .map(|(name, secs)| format!("{name}\t{secs:.3}s\n"))
        .collect();
    // Best effort: timings are informational and excluded from determinism.
    let _ = fs::write(out_dir.join("timings.txt"), timings);

    Ok(report)
}

/// Fit every candidate of every entry on the training side in parallel,
/// score each once on the validation side, and keep the best per entry.
fn select_candidates(
    config: &PipelineConfig,
    d_train: &Dataset,
    d_valid: &Dataset,
    out_dir: &Path,
) -> Result<(Vec<Selected>, Vec<SelectionEntry>)> {
    let fit_base = substream_seed(config.seed, stage::FIT);
    let specs: Vec<Vec<FitSpec>> = config.estimators.iter().map(candidate_specs).collect();
    let jobs: Vec<(usize, usize)> = specs
        .iter()
        .enumerate()
        .flat_map(|(ei, cs)| (0..cs.len()).map(move |ci| (ei, ci)))
        .collect();

    let mut fits: Vec<Vec<Option<std::result::Result<(OutcomePairModel, f64), String>>>> =
        specs.iter().map(|cs| vec![None; cs.len()]).collect();
    let outcomes: Vec<(usize, usize, std::result::Result<(OutcomePairModel, f64), String>)> = jobs
        .into_par_iter()
        .map(|(ei, ci)| {
            let fit_seed = substream_seed(fit_base, ((ei as u64) << 20) | ci as u64);
            let res = specs[ei][ci].fit(d_train, fit_seed).and_then(|m| {
                let r2 = r2_heldout(&m, d_valid)?;
                Ok((m, r2))
            });
            (ei, ci, res.map_err(|e| e.to_string()))
        })
        .collect();
    for (ei, ci, res) in outcomes {
        fits[ei][ci] = Some(res);
    }

    let mut selected = Vec::with_capacity(config.estimators.len());
    let mut log = Vec::new();
    for (ei, entry) in config.estimators.iter().enumerate() {
        let name = entry.display_name();
        let mut best: Option<(usize, f64)> = None;
        for (ci, res) in fits[ei].iter().enumerate() {
            if let Some(Ok((_, r2))) = res {
                if best.map_or(true, |(_, b)| *r2 > b) {
                    best = Some((ci, *r2));
                }
            }
        }
        let (best_ci, best_r2) = best.ok_or_else(|| {
            let last = fits[ei]
                .iter()
                .flatten()
                .filter_map(|r| r.as_ref().err())
                .last()
                .cloned()
                .unwrap_or_default();
            Error::Core(hetfx_core::Error::Fit(format!(
                "every candidate of estimator `{name}` failed; last error: {last}"
            )))
        })?;

        for (ci, res) in fits[ei].iter().enumerate() {
            let (r2_valid, error) = match res.as_ref().expect("all jobs ran") {
                Ok((_, r2)) => (Some(*r2), None),
                Err(e) => (None, Some(e.clone())),
            };
            log.push(SelectionEntry {
                estimator: name.clone(),
                candidate: ci,
                config: specs[ei][ci].to_value(),
                r2_valid,
                error,
                selected: ci == best_ci,
            });
        }

        let model = match fits[ei][best_ci].take() {
            Some(Ok((m, _))) => m,
            _ => unreachable!("best candidate succeeded"),
        };
        selected.push(Selected {
            name,
            candidate: best_ci,
            spec: specs[ei][best_ci].clone(),
            fit_seed: substream_seed(fit_base, ((ei as u64) << 20) | best_ci as u64),
            model,
            r2_valid: best_r2,
        });
    }

    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["estimator", "candidate", "config", "r2_valid", "error", "selected"])
        .map_err(hetfx_core::Error::from)?;
    for row in &log {
        w.write_record([
            row.estimator.clone(),
            row.candidate.to_string(),
            row.config.to_string(),
            row.r2_valid.map(|v| v.to_string()).unwrap_or_default(),
            row.error.clone().unwrap_or_default(),
            row.selected.to_string(),
        ])
        .map_err(hetfx_core::Error::from)?;
    }
    let buf = w.into_inner().expect("vec writer");
    fs::write(out_dir.join("selection_log.csv"), buf)?;

    Ok((selected, log))
}

/// Point estimates and cluster-bootstrap intervals for the naive row and
/// every selected estimator.
fn bootstrap_estimates(
    config: &PipelineConfig,
    data: &Dataset,
    d_train: &Dataset,
    d_valid: &Dataset,
    split: &SplitSummary,
    selected: &[Selected],
) -> Result<(EstimatorSummary, Vec<FamilyReport>)> {
    let b = config.bootstrap.b;
    let level = config.bootstrap.level;
    let boot_base = substream_seed(config.seed, stage::BOOTSTRAP);

    let naive = if b > 0 {
        let res = cluster_bootstrap(data, naive_ate, b, level, substream_seed(boot_base, 0))?;
        EstimatorSummary {
            estimator: "naive".into(),
            ate: res.point_estimate,
            ate_ci: Some((res.ci_low, res.ci_high)),
            r2: None,
            r2_ci: None,
        }
    } else {
        EstimatorSummary {
            estimator: "naive".into(),
            ate: naive_ate(data)?,
            ate_ci: None,
            r2: None,
            r2_ci: None,
        }
    };

    let train_set: BTreeSet<String> = split.train_schools.iter().cloned().collect();
    let tagged = match config.bootstrap.scope {
        BootstrapScope::TrainAndValid if b > 0 => Some(tag_sides(data, &train_set)?),
        _ => None,
    };

    let mut families = Vec::with_capacity(selected.len());
    for (i, sel) in selected.iter().enumerate() {
        let entry_seed = substream_seed(boot_base, 1 + i as u64);
        let summary;
        let n_failures;
        if b == 0 {
            let cate = impute_cate(&sel.model, data)?;
            summary = EstimatorSummary {
                estimator: sel.name.clone(),
                ate: cate.mean(),
                ate_ci: None,
                r2: Some(sel.r2_valid),
                r2_ci: None,
            };
            n_failures = 0;
        } else {
            let results = match config.bootstrap.scope {
                BootstrapScope::TrainOnly => {
                    // Replicates resample training schools; the model refits
                    // and is scored against the fixed validation set, with
                    // ATE over replicate-train plus original-valid rows.
                    let stat = |d: &Dataset| -> hetfx_core::Result<Vec<f64>> {
                        let model = sel.spec.fit(d, sel.fit_seed)?;
                        let ct = impute_cate(&model, d)?;
                        let cv = impute_cate(&model, d_valid)?;
                        let sum: f64 = ct.tau_hat.iter().chain(&cv.tau_hat).sum();
                        let ate = sum / (ct.len() + cv.len()) as f64;
                        Ok(vec![ate, r2_heldout(&model, d_valid)?])
                    };
                    cluster_bootstrap_multi(d_train, stat, b, level, entry_seed)?
                }
                BootstrapScope::TrainAndValid => {
                    // Replicates resample the full cohort; drawn schools
                    // keep their original side, so both the refit and the
                    // held-out score see resampled data.
                    let stat = |d: &Dataset| -> hetfx_core::Result<Vec<f64>> {
                        let (tr, va) = side_rows(d);
                        if tr.is_empty() || va.is_empty() {
                            return Err(hetfx_core::Error::Fit(
                                "replicate drew schools from only one side".into(),
                            ));
                        }
                        let dt = d.subset(&tr)?;
                        let dv = d.subset(&va)?;
                        let model = sel.spec.fit(&dt, sel.fit_seed)?;
                        let cate = impute_cate(&model, d)?;
                        Ok(vec![cate.mean(), r2_heldout(&model, &dv)?])
                    };
                    let tagged = tagged.as_ref().expect("tagged cohort built");
                    cluster_bootstrap_multi(tagged, stat, b, level, entry_seed)?
                }
            };
            n_failures = results[0].n_failures;
            summary = EstimatorSummary {
                estimator: sel.name.clone(),
                ate: results[0].point_estimate,
                ate_ci: Some((results[0].ci_low, results[0].ci_high)),
                r2: Some(results[1].point_estimate),
                r2_ci: Some((results[1].ci_low, results[1].ci_high)),
            };
        }
        families.push(FamilyReport {
            name: sel.name.clone(),
            model_id: sel.model.model_id.clone(),
            selected_candidate: sel.candidate,
            selected_config: sel.spec.to_value(),
            r2_valid: sel.r2_valid,
            summary,
            n_bootstrap_failures: n_failures,
        });
    }
    Ok((naive, families))
}

/// Importance, stratifications, the rule tree, and pair grids over the best
/// model's imputed effects.
fn interpret_outputs(
    config: &PipelineConfig,
    data: &Dataset,
    cate: &CateTable,
    out_dir: &Path,
) -> Result<InterpretReport> {
    let section = &config.interpret;
    let all_rows: Vec<usize> = (0..data.n_rows()).collect();
    let features = Encoder::fit(data, &all_rows, false)?.transform(data)?;
    let fparams = ForestParams {
        seed: substream_seed(config.seed, stage::INTERPRET),
        ..ForestParams::default()
    };
    let importance = feature_importance(cate, &features, &fparams)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["feature", "split_frequency", "rank"])
        .map_err(hetfx_core::Error::from)?;
    for f in importance.by_rank() {
        w.write_record([
            f.feature.clone(),
            f.split_frequency.to_string(),
            f.rank.to_string(),
        ])
        .map_err(hetfx_core::Error::from)?;
    }
    let buf = w.into_inner().expect("vec writer");
    fs::write(out_dir.join("importance.csv"), buf)?;

    let subset: Vec<String> = match &section.covariates {
        Some(names) => names.clone(),
        None => data.schema().covariates().map(|c| c.name.clone()).collect(),
    };
    let tree = interpret_tree_fit(cate, data, &subset, section.constraints, section.depth)?;
    let rules = export_rules(&tree);
    write_text(out_dir, "tree_rules.txt", &rules_to_text(&rules))?;
    write_text(out_dir, "tree_rules.json", &rules_to_json(&rules)?)?;

    let mut strata = Vec::new();
    for cov in &section.stratify {
        let s = stratify_cate_with(cate, data, cov, section.stratify_bins, section.binning)?;
        let mut buf = Vec::new();
        s.write_csv(&mut buf)?;
        fs::write(out_dir.join(format!("strata_{}.csv", slug(cov))), buf)?;
        strata.push(s);
    }

    for (x, y) in &section.pairs {
        let pair_tree = interpret_tree_fit(
            cate,
            data,
            &[x.clone(), y.clone()],
            section.constraints,
            section.depth,
        )?;
        let grid = pair_grid(&pair_tree, section.pair_steps)?;
        let mut buf = Vec::new();
        grid.write_csv(&mut buf)?;
        fs::write(
            out_dir.join(format!("pair_grid_{}_{}.csv", slug(x), slug(y))),
            buf,
        )?;
    }

    Ok(InterpretReport {
        importance,
        strata,
        rules,
        leaves: tree.leaves.clone(),
        constraints: tree.constraints,
    })
}

/// Load the configured data and write only the balance report.
pub fn run_diagnose(config: &PipelineConfig) -> std::result::Result<(BalanceReport, PathBuf), StageError> {
    let mut clock = StageClock { timings: Vec::new() };
    let out_dir: PathBuf = clock.run("config", || {
        config.validate()?;
        config
            .output
            .clone()
            .ok_or_else(|| Error::Config("no output directory; set `output` or pass --out".into()))
    })?;
    clock.run("output", || Ok(fs::create_dir_all(&out_dir)?))?;
    let data = clock.run("data", || match &config.data {
        DataConfig::Csv { path, schema } => Ok(load_csv(path, schema)?),
        DataConfig::Synthetic(spec) => Ok(generate_synthetic(spec)?.0),
    })?;
    let report = clock.run("diagnostics", || {
        let report =
            balance_report(&data, config.diagnostics.n_bins, config.diagnostics.mmd_sigma)?;
        write_text(&out_dir, "balance.json", &report.to_json()?)?;
        Ok(report)
    })?;
    let path = out_dir.join("balance.json");
    Ok((report, path))
}

/// Generate the configured synthetic cohort and write it as CSV.
pub fn run_synth(config: &PipelineConfig, out: &Path) -> std::result::Result<DataSummary, StageError> {
    let spec = match &config.data {
        DataConfig::Synthetic(spec) => spec,
        DataConfig::Csv { .. } => {
            return Err(StageError::new(
                "config",
                Error::Config("synth requires a synthetic data source".into()),
            ))
        }
    };
    let data = (|| -> Result<Dataset> {
        let (d, _) = generate_synthetic(spec)?;
        if let Some(dir) = out.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        d.write_csv_path(out)?;
        Ok(d)
    })()
    .map_err(|e| StageError::new("data", e))?;
    Ok(DataSummary {
        source: "synthetic".into(),
        n_rows: data.n_rows(),
        n_schools: data.n_schools(),
    })
}
