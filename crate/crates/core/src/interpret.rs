//! Heterogeneity characterization over imputed effects: split-frequency
//! feature importance from a forest, covariate-stratified effect summaries,
//! and leaf-constrained regression trees with exported decision rules.

use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnLevel, ColumnValues, Dataset, Encoder, FeatureMatrix};
use crate::inference::quantile_sorted;
use crate::learners::{forest_fit, tree_fit, ForestParams, TreeModel, TreeNode, TreeParams};
use crate::tlearner::CateTable;
use crate::{Error, Result};

/// One feature's share of all split nodes in the importance forest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureImportance {
    pub feature: String,
    pub split_frequency: f64,
    /// 1-based position by descending frequency; ties break by feature
    /// order.
    pub rank: usize,
}

/// Split-frequency importance over all features, in feature order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceReport {
    pub features: Vec<FeatureImportance>,
    pub n_split_nodes: usize,
    /// True when the forest never split: constant imputed effects.
    pub no_heterogeneity: bool,
}

impl ImportanceReport {
    /// Features sorted by rank.
    pub fn by_rank(&self) -> Vec<&FeatureImportance> {
        let mut refs: Vec<&FeatureImportance> = self.features.iter().collect();
        refs.sort_by_key(|f| f.rank);
        refs
    }
}

/// Fit a forest to the imputed effects and report how often each feature
/// splits its nodes. Frequencies sum to 1 whenever any split exists; the
/// forest is seeded by `params.seed`.
pub fn feature_importance(
    cate: &CateTable,
    features: &FeatureMatrix,
    params: &ForestParams,
) -> Result<ImportanceReport> {
    if cate.len() != features.n_rows() {
        return Err(Error::Argument(format!(
            "effect table has {} rows, features have {}",
            cate.len(),
            features.n_rows()
        )));
    }
    let forest = forest_fit(features, &cate.tau_hat, None, params)?;
    let counts = forest.split_counts();
    let total: usize = counts.iter().sum();
    let freqs: Vec<f64> = counts
        .iter()
        .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
        .collect();

    let mut order: Vec<usize> = (0..freqs.len()).collect();
    order.sort_by(|&a, &b| freqs[b].total_cmp(&freqs[a]).then(a.cmp(&b)));
    let mut ranks = vec![0usize; freqs.len()];
    for (pos, &j) in order.iter().enumerate() {
        ranks[j] = pos + 1;
    }

    Ok(ImportanceReport {
        features: features
            .feature_names()
            .iter()
            .zip(freqs)
            .zip(ranks)
            .map(|((name, split_frequency), rank)| FeatureImportance {
                feature: name.clone(),
                split_frequency,
                rank,
            })
            .collect(),
        n_split_nodes: total,
        no_heterogeneity: total == 0,
    })
}

/// Which rows a stratum holds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum StratumBin {
    /// Left-closed value range; the topmost range also closes on the right.
    Range {
        low: f64,
        high: f64,
        closed_right: bool,
    },
    Category { value: String },
}

impl StratumBin {
    pub fn label(&self) -> String {
        match self {
            StratumBin::Range {
                low,
                high,
                closed_right,
            } => format!("[{low}, {high}{}", if *closed_right { "]" } else { ")" }),
            StratumBin::Category { value } => value.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub bin: StratumBin,
    pub mean_tau: f64,
    pub min_tau: f64,
    pub max_tau: f64,
    pub n_students: usize,
    pub n_schools: usize,
}

/// Per-stratum effect summaries for one covariate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationSummary {
    pub covariate: String,
    pub strata: Vec<Stratum>,
}

impl StratificationSummary {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "covariate",
            "stratum",
            "mean_tau",
            "min_tau",
            "max_tau",
            "n_students",
            "n_schools",
        ])?;
        for s in &self.strata {
            w.write_record([
                self.covariate.clone(),
                s.bin.label(),
                s.mean_tau.to_string(),
                s.min_tau.to_string(),
                s.max_tau.to_string(),
                s.n_students.to_string(),
                s.n_schools.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// How numeric covariates are cut into strata.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binning {
    /// Equal-frequency bins at value quantiles.
    Quantile,
    /// Equal-width bins over the observed range.
    Uniform,
}

/// Summarize imputed effects by strata of one covariate: equal-frequency
/// quantile bins for numeric columns (`n_bins` of them, fewer under heavy
/// ties), one stratum per category otherwise.
pub fn stratify_cate(
    cate: &CateTable,
    dataset: &Dataset,
    covariate: &str,
    n_bins: usize,
) -> Result<StratificationSummary> {
    stratify_cate_with(cate, dataset, covariate, n_bins, Binning::Quantile)
}

/// [`stratify_cate`] with an explicit numeric binning rule.
pub fn stratify_cate_with(
    cate: &CateTable,
    dataset: &Dataset,
    covariate: &str,
    n_bins: usize,
    binning: Binning,
) -> Result<StratificationSummary> {
    if cate.len() != dataset.n_rows() {
        return Err(Error::Argument(format!(
            "effect table has {} rows, dataset has {}",
            cate.len(),
            dataset.n_rows()
        )));
    }
    if n_bins < 1 {
        return Err(Error::Argument("n_bins must be at least 1".into()));
    }
    let (_, col) = dataset
        .covariate(covariate)
        .ok_or_else(|| Error::Argument(format!("unknown covariate `{covariate}`")))?;

    let (bins, assignment): (Vec<StratumBin>, Vec<usize>) = match col {
        ColumnValues::Numeric(values) => {
            let mut sorted = values.clone();
            sorted.sort_by(f64::total_cmp);
            let (lo, hi) = (sorted[0], sorted[sorted.len() - 1]);
            let mut edges = vec![lo];
            for k in 1..n_bins {
                edges.push(match binning {
                    Binning::Quantile => quantile_sorted(&sorted, k as f64 / n_bins as f64),
                    Binning::Uniform => lo + (hi - lo) * k as f64 / n_bins as f64,
                });
            }
            edges.push(hi);
            edges.dedup();
            if edges.len() == 1 {
                edges.push(edges[0]);
            }
            let k = edges.len() - 1;
            let bins = (0..k)
                .map(|j| StratumBin::Range {
                    low: edges[j],
                    high: edges[j + 1],
                    closed_right: j == k - 1,
                })
                .collect();
            let interior = &edges[1..k];
            let assignment = values
                .iter()
                .map(|v| interior.partition_point(|e| e <= v))
                .collect();
            (bins, assignment)
        }
        ColumnValues::Categorical(values) => {
            let categories: BTreeSet<&String> = values.iter().collect();
            let index: BTreeMap<&String, usize> = categories
                .iter()
                .enumerate()
                .map(|(i, c)| (*c, i))
                .collect();
            let bins = categories
                .iter()
                .map(|c| StratumBin::Category {
                    value: (*c).clone(),
                })
                .collect();
            let assignment = values.iter().map(|v| index[v]).collect();
            (bins, assignment)
        }
    };

    struct Acc<'a> {
        sum: f64,
        min: f64,
        max: f64,
        n: usize,
        schools: BTreeSet<&'a str>,
    }
    let mut accs: Vec<Acc> = bins
        .iter()
        .map(|_| Acc {
            sum: 0.0,
            min: f64::INFINITY,
            max: f64::NEG_INFINITY,
            n: 0,
            schools: BTreeSet::new(),
        })
        .collect();
    for (i, &j) in assignment.iter().enumerate() {
        let t = cate.tau_hat[i];
        let a = &mut accs[j];
        a.sum += t;
        a.min = a.min.min(t);
        a.max = a.max.max(t);
        a.n += 1;
        a.schools.insert(dataset.school_ids()[i].as_str());
    }

    // Interpolated quantile edges can strand a bin with no observations;
    // such bins are dropped rather than reported with undefined summaries.
    let strata = bins
        .into_iter()
        .zip(accs)
        .filter(|(_, a)| a.n > 0)
        .map(|(bin, a)| Stratum {
            bin,
            mean_tau: a.sum / a.n as f64,
            min_tau: a.min,
            max_tau: a.max,
            n_students: a.n,
            n_schools: a.schools.len(),
        })
        .collect();
    Ok(StratificationSummary {
        covariate: covariate.to_string(),
        strata,
    })
}

/// Per-leaf sample requirements for interpretation trees. Splits that would
/// create a leaf below either floor are rejected; a tree that cannot split
/// at all is a single root leaf.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeafConstraints {
    pub min_schools: usize,
    pub min_students: usize,
}

impl LeafConstraints {
    /// Defaults by covariate level: subsets of school-level columns demand
    /// 10 schools per leaf; any student-level column raises the floor to
    /// 1000 students instead.
    pub fn level_defaults(dataset: &Dataset, covariate_subset: &[String]) -> Result<Self> {
        let mut any_student = false;
        for name in covariate_subset {
            let (spec, _) = dataset
                .covariate(name)
                .ok_or_else(|| Error::Argument(format!("unknown covariate `{name}`")))?;
            any_student |= spec.level == ColumnLevel::Student;
        }
        Ok(if any_student {
            Self {
                min_schools: 1,
                min_students: 1000,
            }
        } else {
            Self {
                min_schools: 10,
                min_students: 1,
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretLeaf {
    /// Node id within the tree.
    pub leaf_id: usize,
    pub mean_tau: f64,
    pub n_students: usize,
    pub n_schools: usize,
}

/// A leaf-constrained regression tree over imputed effects, fit on raw
/// (unstandardized) covariate values so thresholds read in natural units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InterpretTree {
    pub tree: TreeModel,
    pub covariates: Vec<String>,
    pub feature_names: Vec<String>,
    /// Observed (min, max) per feature at fit time; used for grid bounds.
    pub feature_ranges: Vec<(f64, f64)>,
    pub leaves: Vec<InterpretLeaf>,
    pub constraints: LeafConstraints,
    pub encoder: Encoder,
}

/// Fit a depth-capped CART on (selected covariates -> tau_hat) with
/// school-aware leaf floors. Categorical covariates expand to indicators;
/// numeric ones keep their raw scale.
pub fn interpret_tree_fit(
    cate: &CateTable,
    dataset: &Dataset,
    covariate_subset: &[String],
    constraints: Option<LeafConstraints>,
    max_depth: usize,
) -> Result<InterpretTree> {
    if cate.len() != dataset.n_rows() {
        return Err(Error::Argument(format!(
            "effect table has {} rows, dataset has {}",
            cate.len(),
            dataset.n_rows()
        )));
    }
    if covariate_subset.is_empty() {
        return Err(Error::Argument("covariate subset is empty".into()));
    }
    let constraints = match constraints {
        Some(c) => c,
        None => LeafConstraints::level_defaults(dataset, covariate_subset)?,
    };

    let all: Vec<usize> = (0..dataset.n_rows()).collect();
    let encoder = Encoder::fit_columns(dataset, &all, false, covariate_subset)?;
    let x = encoder.transform(dataset)?;
    let (codes, _) = dataset.school_codes();
    let params = TreeParams {
        max_depth,
        min_leaf_rows: constraints.min_students,
        min_leaf_schools: constraints.min_schools,
    };
    let tree = tree_fit(&x, &cate.tau_hat, None, Some(&codes), &params)?;

    let leaves = tree
        .leaf_ids()
        .into_iter()
        .map(|leaf_id| match &tree.nodes[leaf_id] {
            TreeNode::Leaf {
                value,
                n_rows,
                n_schools,
            } => InterpretLeaf {
                leaf_id,
                mean_tau: *value,
                n_students: *n_rows,
                n_schools: *n_schools,
            },
            TreeNode::Split { .. } => unreachable!("leaf_ids returns leaves"),
        })
        .collect();
    let feature_ranges = (0..x.n_cols())
        .map(|j| {
            let col = x.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (lo, hi)
        })
        .collect();

    Ok(InterpretTree {
        tree,
        covariates: covariate_subset.to_vec(),
        feature_names: x.feature_names().to_vec(),
        feature_ranges,
        leaves,
        constraints,
        encoder,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOp {
    LessEq,
    Greater,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RuleCondition {
    pub feature: String,
    pub feature_index: usize,
    pub op: RuleOp,
    pub threshold: f64,
}

impl RuleCondition {
    pub fn matches(&self, row: &[f64]) -> bool {
        match self.op {
            RuleOp::LessEq => row[self.feature_index] <= self.threshold,
            RuleOp::Greater => row[self.feature_index] > self.threshold,
        }
    }

    fn text(&self) -> String {
        let op = match self.op {
            RuleOp::LessEq => "<=",
            RuleOp::Greater => ">",
        };
        format!("{} {op} {}", self.feature, self.threshold)
    }
}

/// One leaf as a conjunction of threshold conditions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub leaf_id: usize,
    pub conditions: Vec<RuleCondition>,
    pub tau: f64,
    pub n_students: usize,
    pub n_schools: usize,
}

impl Rule {
    pub fn matches(&self, row: &[f64]) -> bool {
        self.conditions.iter().all(|c| c.matches(row))
    }

    pub fn text(&self) -> String {
        let cond = if self.conditions.is_empty() {
            "always".to_string()
        } else {
            self.conditions
                .iter()
                .map(RuleCondition::text)
                .collect::<Vec<_>>()
                .join(" and ")
        };
        format!(
            "if {cond} then tau = {} (students={}, schools={})",
            self.tau, self.n_students, self.n_schools
        )
    }
}

/// One rule per leaf, root-to-leaf conditions in path order. The rules are
/// mutually exclusive and exhaustive, so evaluating them reproduces the
/// tree's predictions exactly.
pub fn export_rules(tree: &InterpretTree) -> Vec<Rule> {
    let counts: BTreeMap<usize, (usize, usize)> = tree
        .leaves
        .iter()
        .map(|l| (l.leaf_id, (l.n_students, l.n_schools)))
        .collect();
    let mut rules = Vec::new();
    let mut stack = vec![(0usize, Vec::<RuleCondition>::new())];
    while let Some((id, path)) = stack.pop() {
        match &tree.tree.nodes[id] {
            TreeNode::Leaf { value, .. } => {
                let (n_students, n_schools) = counts[&id];
                rules.push(Rule {
                    leaf_id: id,
                    conditions: path,
                    tau: *value,
                    n_students,
                    n_schools,
                });
            }
            TreeNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let mut on_left = path.clone();
                on_left.push(RuleCondition {
                    feature: tree.feature_names[*feature].clone(),
                    feature_index: *feature,
                    op: RuleOp::LessEq,
                    threshold: *threshold,
                });
                let mut on_right = path;
                on_right.push(RuleCondition {
                    feature: tree.feature_names[*feature].clone(),
                    feature_index: *feature,
                    op: RuleOp::Greater,
                    threshold: *threshold,
                });
                // Right first so the pop order walks leaves left to right.
                stack.push((*right, on_right));
                stack.push((*left, on_left));
            }
        }
    }
    rules
}

pub fn rules_to_text(rules: &[Rule]) -> String {
    let mut out = String::new();
    for r in rules {
        out.push_str(&r.text());
        out.push('\n');
    }
    out
}

pub fn rules_to_json(rules: &[Rule]) -> Result<String> {
    Ok(serde_json::to_string_pretty(rules)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub x: f64,
    pub y: f64,
    pub leaf_id: usize,
    pub leaf_mean: f64,
}

/// Tree predictions over a regular grid spanning two features' observed
/// ranges, for external 2-D rendering.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairGrid {
    pub x_feature: String,
    pub y_feature: String,
    pub points: Vec<GridPoint>,
}

impl PairGrid {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "leaf_id", "leaf_mean"])?;
        for p in &self.points {
            w.write_record([
                p.x.to_string(),
                p.y.to_string(),
                p.leaf_id.to_string(),
                p.leaf_mean.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluate a two-feature tree on a `steps` x `steps` grid over the observed
/// ranges, x-major. Pair trees must expand to exactly two numeric features,
/// so categorical covariates are not grid-compatible.
pub fn pair_grid(tree: &InterpretTree, steps: usize) -> Result<PairGrid> {
    if tree.feature_names.len() != 2 {
        return Err(Error::Argument(format!(
            "pair grid needs exactly two features, tree has {}",
            tree.feature_names.len()
        )));
    }
    if steps < 2 {
        return Err(Error::Argument("grid needs at least two steps".into()));
    }
    let axis = |j: usize| -> Vec<f64> {
        let (lo, hi) = tree.feature_ranges[j];
        (0..steps)
            .map(|i| lo + (hi - lo) * i as f64 / (steps - 1) as f64)
            .collect()
    };
    let xs = axis(0);
    let ys = axis(1);
    let mut points = Vec::with_capacity(steps * steps);
    for &x in &xs {
        for &y in &ys {
            let leaf_id = tree.tree.leaf_for_row(&[x, y]);
            let leaf_mean = match &tree.tree.nodes[leaf_id] {
                TreeNode::Leaf { value, .. } => *value,
                TreeNode::Split { .. } => unreachable!("leaf_for_row returns a leaf"),
            };
            points.push(GridPoint {
                x,
                y,
                leaf_id,
                leaf_mean,
            });
        }
    }
    Ok(PairGrid {
        x_feature: tree.feature_names[0].clone(),
        y_feature: tree.feature_names[1].clone(),
        points,
    })
}

#[cfg(test)]
mod tests {
    use rand::Rng;

    use super::*;
    use crate::dataset::{
        generate_synthetic, EffectSpec, LinearSpec, PropensitySpec, SyntheticConfig,
    };
    use crate::rng::substream;

    fn table_for(tau: Vec<f64>) -> CateTable {
        CateTable {
            row_ids: (0..tau.len()).collect(),
            school_ids: (0..tau.len()).map(|i| format!("s{}", i % 7)).collect(),
            tau_hat: tau,
            model_id: "test".into(),
            seed: 0,
            replicate_id: 0,
        }
    }

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        let names = (0..rows[0].len()).map(|j| format!("f{j}")).collect();
        FeatureMatrix::from_rows(names, rows).unwrap()
    }

    fn synthetic(n_schools: usize, per: usize, seed: u64) -> Dataset {
        let (d, _) = generate_synthetic(&SyntheticConfig {
            n_schools,
            students_per_school: per,
            effect: EffectSpec::Constant { value: 0.2 },
            baseline: LinearSpec {
                intercept: 0.5,
                terms: vec![("C1".into(), 0.4)],
            },
            propensity: PropensitySpec::Constant { value: 0.5 },
            noise_sd: 0.3,
            seed,
        })
        .unwrap();
        d
    }

    /// tau from covariate columns, bypassing any fitted model.
    fn planted_tau(d: &Dataset, f: impl Fn(f64, f64) -> f64) -> CateTable {
        let x1 = match &d.covariate("X1").unwrap().1 {
            ColumnValues::Numeric(v) => v.clone(),
            _ => unreachable!(),
        };
        let s3 = match &d.covariate("S3").unwrap().1 {
            ColumnValues::Numeric(v) => v.clone(),
            _ => unreachable!(),
        };
        CateTable {
            row_ids: (0..d.n_rows()).collect(),
            school_ids: d.school_ids().to_vec(),
            tau_hat: x1.iter().zip(&s3).map(|(&a, &b)| f(a, b)).collect(),
            model_id: "planted".into(),
            seed: 0,
            replicate_id: 0,
        }
    }

    fn small_forest(seed: u64) -> ForestParams {
        ForestParams {
            n_trees: 30,
            feature_subsample: 1.0,
            row_subsample: 1.0,
            with_replacement: true,
            seed,
            tree: TreeParams {
                max_depth: 4,
                min_leaf_rows: 2,
                min_leaf_schools: 1,
            },
        }
    }

    #[test]
    fn only_informative_feature_takes_every_split() {
        let rows: Vec<Vec<f64>> = (0..40)
            .map(|i| vec![if i < 20 { 0.0 } else { 1.0 }, 0.5, 0.5, 0.5])
            .collect();
        let x = matrix(&rows);
        let tau: Vec<f64> = (0..40).map(|i| if i < 20 { 0.0 } else { 1.0 }).collect();
        let report = feature_importance(&table_for(tau), &x, &small_forest(3)).unwrap();
        assert!(!report.no_heterogeneity);
        assert_eq!(report.features[0].split_frequency, 1.0);
        assert_eq!(report.features[0].rank, 1);
        for f in &report.features[1..] {
            assert_eq!(f.split_frequency, 0.0);
        }
    }

    #[test]
    fn constant_effects_flag_no_heterogeneity() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64, -(i as f64)]).collect();
        let x = matrix(&rows);
        let report = feature_importance(&table_for(vec![0.7; 30]), &x, &small_forest(1)).unwrap();
        assert!(report.no_heterogeneity);
        assert_eq!(report.n_split_nodes, 0);
        for f in &report.features {
            assert_eq!(f.split_frequency, 0.0);
        }
        assert_eq!(report.features[0].rank, 1);
        assert_eq!(report.features[1].rank, 2);
    }

    #[test]
    fn informative_pair_outranks_noise_features() {
        let mut rng = substream(12, 0);
        let rows: Vec<Vec<f64>> = (0..400)
            .map(|_| (0..10).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let tau: Vec<f64> = rows.iter().map(|r| 3.0 * r[2] - 2.0 * r[7]).collect();
        let x = matrix(&rows);
        let mut params = small_forest(5);
        params.feature_subsample = 1.0 / 3.0;
        let report = feature_importance(&table_for(tau), &x, &params).unwrap();
        let total: f64 = report.features.iter().map(|f| f.split_frequency).sum();
        assert!((total - 1.0).abs() < 1e-12);
        let top: BTreeSet<&str> = report
            .by_rank()
            .iter()
            .take(2)
            .map(|f| f.feature.as_str())
            .collect();
        assert_eq!(top, BTreeSet::from(["f2", "f7"]));
    }

    #[test]
    fn constant_effect_strata_are_flat() {
        let d = synthetic(6, 10, 2);
        let cate = table_for_dataset(&d, vec![0.26; d.n_rows()]);
        let s = stratify_cate(&cate, &d, "C1", 3).unwrap();
        assert!(!s.strata.is_empty());
        let mut students = 0;
        for st in &s.strata {
            assert!((st.mean_tau - 0.26).abs() < 1e-12);
            assert_eq!(st.min_tau, 0.26);
            assert_eq!(st.max_tau, 0.26);
            students += st.n_students;
        }
        assert_eq!(students, d.n_rows());
    }

    fn table_for_dataset(d: &Dataset, tau: Vec<f64>) -> CateTable {
        CateTable {
            row_ids: (0..d.n_rows()).collect(),
            school_ids: d.school_ids().to_vec(),
            tau_hat: tau,
            model_id: "test".into(),
            seed: 0,
            replicate_id: 0,
        }
    }

    #[test]
    fn categorical_covariate_gets_one_stratum_per_category() {
        let d = synthetic(12, 8, 4);
        let cate = table_for_dataset(&d, (0..d.n_rows()).map(|i| i as f64 * 0.01).collect());
        let s = stratify_cate(&cate, &d, "XC", 99).unwrap();
        let labels: Vec<String> = s.strata.iter().map(|st| st.bin.label()).collect();
        assert_eq!(labels, ["A", "B", "C", "D"]);
        let students: usize = s.strata.iter().map(|st| st.n_students).sum();
        assert_eq!(students, d.n_rows());
        let schools: usize = s.strata.iter().map(|st| st.n_schools).sum();
        assert_eq!(schools, 12, "school-level category: schools partition");
    }

    #[test]
    fn two_equal_frequency_bins_on_a_ramp() {
        // C1 = 1..=100 with tau equal to it: bins split at 50.5, so the
        // stratum means are the midpoints 25.5 and 75.5.
        let d = ramp_dataset(100);
        let cate = table_for_dataset(&d, (1..=100).map(|v| v as f64).collect());
        let s = stratify_cate(&cate, &d, "C1", 2).unwrap();
        assert_eq!(s.strata.len(), 2);
        assert!((s.strata[0].mean_tau - 25.5).abs() < 1e-9);
        assert!((s.strata[1].mean_tau - 75.5).abs() < 1e-9);
        assert_eq!(s.strata[0].n_students, 50);
        assert_eq!(s.strata[1].n_students, 50);
        assert_eq!(s.strata[0].min_tau, 1.0);
        assert_eq!(s.strata[1].max_tau, 100.0);
    }

    #[test]
    fn uniform_binning_cuts_the_range_not_the_mass() {
        // 99 values at 1..=99 plus one at 1000: the uniform midpoint 500.5
        // isolates the outlier, while quantile edges split the bulk.
        let d = ramp_dataset(100);
        let mut values: Vec<f64> = (1..=99).map(|v| v as f64).collect();
        values.push(1000.0);
        let d = Dataset::from_parts(
            d.schema().clone(),
            vec![ColumnValues::Numeric(values.clone())],
            d.treatment().to_vec(),
            d.outcome().to_vec(),
            d.school_ids().to_vec(),
        )
        .unwrap();
        let cate = table_for_dataset(&d, values);
        let s = stratify_cate_with(&cate, &d, "C1", 2, Binning::Uniform).unwrap();
        assert_eq!(s.strata.len(), 2);
        assert_eq!(s.strata[0].n_students, 99);
        assert_eq!(s.strata[1].n_students, 1);
        assert_eq!(s.strata[0].mean_tau, 50.0);
        assert_eq!(s.strata[1].mean_tau, 1000.0);
        let q = stratify_cate_with(&cate, &d, "C1", 2, Binning::Quantile).unwrap();
        assert_eq!(q.strata[0].n_students, 50);
        assert_eq!(q.strata[1].n_students, 50);
    }

    fn ramp_dataset(n: usize) -> Dataset {
        use crate::dataset::{ColumnKind, ColumnRole, ColumnSpec, Schema};
        let schema = Schema::new(vec![
            ColumnSpec::new("C1", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Covariate),
            ColumnSpec::new("Z", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Treatment),
            ColumnSpec::new("Y", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Outcome),
            ColumnSpec::new("sid", ColumnLevel::School, ColumnKind::Categorical, ColumnRole::SchoolId),
        ])
        .unwrap();
        Dataset::from_parts(
            schema,
            vec![ColumnValues::Numeric((1..=n).map(|v| v as f64).collect())],
            (0..n).map(|i| (i % 2) as u8).collect(),
            vec![0.0; n],
            (0..n).map(|i| format!("s{}", i % 5)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn unknown_covariate_is_an_argument_error() {
        let d = synthetic(5, 6, 1);
        let cate = table_for_dataset(&d, vec![0.0; d.n_rows()]);
        let err = stratify_cate(&cate, &d, "nope", 2).unwrap_err();
        assert!(matches!(err, Error::Argument(_)), "{err}");
    }

    #[test]
    fn too_few_schools_yields_a_root_only_tree() {
        let d = synthetic(9, 30, 6);
        let cate = planted_tau(&d, |x1, _| if x1 > 0.0 { 1.0 } else { 0.0 });
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into()],
            Some(LeafConstraints {
                min_schools: 10,
                min_students: 1,
            }),
            3,
        )
        .unwrap();
        assert_eq!(t.tree.nodes.len(), 1);
        assert_eq!(t.leaves.len(), 1);
        assert_eq!(t.leaves[0].n_students, 270);
        assert_eq!(t.leaves[0].n_schools, 9);
        let global = cate.mean();
        assert!((t.leaves[0].mean_tau - global).abs() < 1e-12);
    }

    #[test]
    fn school_level_defaults_keep_ten_schools_per_leaf() {
        let d = synthetic(76, 30, 7);
        let cate = planted_tau(&d, |x1, _| x1);
        let subset = vec!["X1".to_string(), "X2".to_string()];
        assert_eq!(
            LeafConstraints::level_defaults(&d, &subset).unwrap(),
            LeafConstraints {
                min_schools: 10,
                min_students: 1
            }
        );
        let t = interpret_tree_fit(&cate, &d, &subset, None, 3).unwrap();
        assert!(t.leaves.len() > 1, "heterogeneous effects should split");
        for leaf in &t.leaves {
            assert!(leaf.n_schools >= 10, "leaf with {} schools", leaf.n_schools);
        }
    }

    #[test]
    fn student_level_defaults_demand_a_thousand_students() {
        let d = synthetic(5, 6, 1);
        let c = LeafConstraints::level_defaults(&d, &["X1".into(), "S3".into()]).unwrap();
        assert_eq!(c.min_students, 1000);
        assert_eq!(c.min_schools, 1);
    }

    /// 60 schools on a regular X1 grid, 50 students each on a regular S3
    /// grid: no observation sits closer to a planted boundary than half a
    /// grid cell, so greedy splits land exactly between the bracketing
    /// values. Irregular draws can legally shift a threshold past a lone
    /// boundary-adjacent point, which this layout rules out.
    fn grid_interaction_dataset() -> Dataset {
        use crate::dataset::{ColumnKind, ColumnRole, ColumnSpec, Schema};
        let schema = Schema::new(vec![
            ColumnSpec::new("S3", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Covariate),
            ColumnSpec::new("X1", ColumnLevel::School, ColumnKind::Numeric, ColumnRole::Covariate),
            ColumnSpec::new("Z", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Treatment),
            ColumnSpec::new("Y", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Outcome),
            ColumnSpec::new("sid", ColumnLevel::School, ColumnKind::Categorical, ColumnRole::SchoolId),
        ])
        .unwrap();
        let (mut s3, mut x1, mut sid) = (Vec::new(), Vec::new(), Vec::new());
        for i in 0..60 {
            let xv = -1.0 + (i as f64 + 0.5) / 30.0;
            for j in 0..50 {
                s3.push(1.0 + 0.12 * (j as f64 + 0.5));
                x1.push(xv);
                sid.push(format!("s{i:02}"));
            }
        }
        let n = s3.len();
        Dataset::from_parts(
            schema,
            vec![ColumnValues::Numeric(s3), ColumnValues::Numeric(x1)],
            (0..n).map(|i| (i % 2) as u8).collect(),
            vec![0.0; n],
            sid,
        )
        .unwrap()
    }

    #[test]
    fn planted_interaction_is_recovered_within_one_grid_step() {
        let d = grid_interaction_dataset();
        let cate = planted_tau(&d, |x1, s3| if x1 > 0.0 && s3 > 5.0 { 1.0 } else { 0.0 });
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into(), "S3".into()],
            Some(LeafConstraints {
                min_schools: 2,
                min_students: 50,
            }),
            2,
        )
        .unwrap();

        let x1 = match &d.covariate("X1").unwrap().1 {
            ColumnValues::Numeric(v) => v.clone(),
            _ => unreachable!(),
        };
        let s3 = match &d.covariate("S3").unwrap().1 {
            ColumnValues::Numeric(v) => v.clone(),
            _ => unreachable!(),
        };
        let bracket = |values: &[f64], boundary: f64| {
            let below = values.iter().copied().filter(|v| *v <= boundary).fold(f64::NEG_INFINITY, f64::max);
            let above = values.iter().copied().filter(|v| *v > boundary).fold(f64::INFINITY, f64::min);
            (below, above)
        };
        let mut found = BTreeMap::new();
        for node in &t.tree.nodes {
            if let TreeNode::Split { feature, threshold, .. } = node {
                found.insert(*feature, *threshold);
            }
        }
        let (lo, hi) = bracket(&x1, 0.0);
        let tx = found[&0];
        assert!(lo <= tx && tx < hi, "X1 threshold {tx} outside [{lo}, {hi})");
        let (lo, hi) = bracket(&s3, 5.0);
        let ts = found[&1];
        assert!(lo <= ts && ts < hi, "S3 threshold {ts} outside [{lo}, {hi})");

        assert_eq!(t.tree.predict_row(&[0.5, 6.0]), 1.0);
        assert_eq!(t.tree.predict_row(&[-0.5, 6.0]), 0.0);
        assert_eq!(t.tree.predict_row(&[0.5, 3.0]), 0.0);
    }

    #[test]
    fn root_only_rule_is_unconditional() {
        let d = synthetic(4, 8, 3);
        let cate = table_for_dataset(&d, vec![0.31; d.n_rows()]);
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into()],
            Some(LeafConstraints {
                min_schools: 1,
                min_students: 1,
            }),
            3,
        )
        .unwrap();
        let rules = export_rules(&t);
        assert_eq!(rules.len(), 1);
        assert!(rules[0].conditions.is_empty());
        assert!((rules[0].tau - 0.31).abs() < 1e-12);
        assert_eq!(rules[0].n_students, d.n_rows());
        assert!(rules[0].text().starts_with("if always then tau = 0.3"));
        assert!(rules[0].text().contains("students="));
    }

    #[test]
    fn depth_one_rules_are_complementary() {
        let d = synthetic(20, 10, 8);
        let cate = planted_tau(&d, |x1, _| if x1 > 0.0 { 1.0 } else { 0.0 });
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into()],
            Some(LeafConstraints {
                min_schools: 1,
                min_students: 1,
            }),
            1,
        )
        .unwrap();
        let rules = export_rules(&t);
        assert_eq!(rules.len(), 2);
        assert_eq!(rules[0].conditions.len(), 1);
        assert_eq!(rules[1].conditions.len(), 1);
        assert_eq!(rules[0].conditions[0].feature, "X1");
        assert_eq!(rules[0].conditions[0].op, RuleOp::LessEq);
        assert_eq!(rules[1].conditions[0].op, RuleOp::Greater);
        assert_eq!(
            rules[0].conditions[0].threshold,
            rules[1].conditions[0].threshold
        );
    }

    #[test]
    fn rules_reproduce_tree_predictions_exactly() {
        let d = synthetic(40, 25, 10);
        let cate = planted_tau(&d, |x1, s3| x1 * (s3 - 4.0));
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into(), "S3".into()],
            Some(LeafConstraints {
                min_schools: 2,
                min_students: 20,
            }),
            3,
        )
        .unwrap();
        assert!(t.leaves.len() > 2);
        let rules = export_rules(&t);
        assert_eq!(rules.len(), t.leaves.len());
        let x = t.encoder.transform(&d).unwrap();
        for i in 0..d.n_rows() {
            let row = x.row(i);
            let matching: Vec<&Rule> = rules.iter().filter(|r| r.matches(row)).collect();
            assert_eq!(matching.len(), 1, "row {i} matches {}", matching.len());
            assert_eq!(matching[0].tau, t.tree.predict_row(row));
        }
        // Off-sample probes: exclusivity and exhaustiveness hold anywhere.
        let mut rng = substream(99, 0);
        for _ in 0..200 {
            let row = [rng.gen_range(-3.0..3.0), rng.gen_range(0.0..10.0)];
            let matching: Vec<&Rule> = rules.iter().filter(|r| r.matches(&row)).collect();
            assert_eq!(matching.len(), 1);
            assert_eq!(matching[0].tau, t.tree.predict_row(&row));
        }
    }

    #[test]
    fn pair_grid_spans_ranges_and_matches_the_tree() {
        let d = synthetic(30, 20, 11);
        let cate = planted_tau(&d, |x1, s3| if x1 > 0.0 && s3 > 5.0 { 1.0 } else { 0.0 });
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into(), "S3".into()],
            Some(LeafConstraints {
                min_schools: 2,
                min_students: 20,
            }),
            2,
        )
        .unwrap();
        let g = pair_grid(&t, 9).unwrap();
        assert_eq!(g.points.len(), 81);
        assert_eq!(g.x_feature, "X1");
        assert_eq!(g.y_feature, "S3");
        let (xlo, xhi) = t.feature_ranges[0];
        assert_eq!(g.points.first().unwrap().x, xlo);
        assert_eq!(g.points.last().unwrap().x, xhi);
        for p in &g.points {
            assert_eq!(p.leaf_mean, t.tree.predict_row(&[p.x, p.y]));
            assert_eq!(p.leaf_id, t.tree.leaf_for_row(&[p.x, p.y]));
        }
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,y,leaf_id,leaf_mean\n"));
        assert_eq!(text.lines().count(), 82);
    }

    #[test]
    fn grid_rejects_trees_without_two_features() {
        let d = synthetic(10, 10, 12);
        let cate = planted_tau(&d, |x1, _| x1);
        let t = interpret_tree_fit(
            &cate,
            &d,
            &["X1".into()],
            Some(LeafConstraints {
                min_schools: 1,
                min_students: 1,
            }),
            2,
        )
        .unwrap();
        assert!(matches!(pair_grid(&t, 5), Err(Error::Argument(_))));
    }
}
