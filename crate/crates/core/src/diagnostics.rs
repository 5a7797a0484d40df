//! Overlap and balance diagnostics between treatment groups: standardized
//! mean differences, shared-bin marginal histograms, full-cohort covariate
//! MMD, and a deterministic 2-D principal-component projection. All outputs
//! are pure functions of the dataset.

use std::io::Write;

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{ColumnValues, Dataset, Encoder, FeatureMatrix};
use crate::repnet::{median_pairwise_distance, mmd2_rbf};
use crate::rng::substream;
use crate::{Error, Result};

/// Shared-edge histogram with one count vector per treatment group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    /// `n_bins + 1` uniform-width edges over the pooled range. All edges
    /// coincide for a constant column, which occupies only bin 0.
    pub edges: Vec<f64>,
    pub counts_control: Vec<usize>,
    pub counts_treated: Vec<usize>,
}

/// Balance summary of one encoded feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureBalance {
    pub feature: String,
    pub smd: f64,
    pub histogram: Histogram,
}

/// 2-D coordinates per row plus the group label, for overlap plots.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    pub coordinates: Vec<[f64; 2]>,
    pub treatment: Vec<u8>,
}

impl Projection {
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "y", "z"])?;
        for (c, z) in self.coordinates.iter().zip(&self.treatment) {
            w.write_record([c[0].to_string(), c[1].to_string(), z.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Group MMD with the bandwidth that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupMmd {
    pub mmd2: f64,
    pub sigma: f64,
}

/// Full balance assessment: per-feature marginals and standardized
/// differences on raw-scale encodings, covariate MMD on standardized
/// encodings, and a linear 2-D projection (absent with fewer than two
/// encoded features).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub features: Vec<FeatureBalance>,
    pub mmd: GroupMmd,
    pub projection: Option<Projection>,
    /// Names the projection method; it is a deterministic linear map, not a
    /// stochastic embedding.
    pub projection_method: String,
}

impl BalanceReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Histograms as long-form CSV rows.
    pub fn write_histograms_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "feature",
            "bin_low",
            "bin_high",
            "count_control",
            "count_treated",
        ])?;
        for f in &self.features {
            let h = &f.histogram;
            for b in 0..h.counts_control.len() {
                w.write_record([
                    f.feature.clone(),
                    h.edges[b].to_string(),
                    h.edges[b + 1].to_string(),
                    h.counts_control[b].to_string(),
                    h.counts_treated[b].to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

fn group_stats(values: &[f64], z: &[u8]) -> ([f64; 2], [f64; 2], [usize; 2]) {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for (&v, &g) in values.iter().zip(z) {
        sums[g as usize] += v;
        counts[g as usize] += 1;
    }
    let means = [
        sums[0] / counts[0].max(1) as f64,
        sums[1] / counts[1].max(1) as f64,
    ];
    let mut vars = [0.0; 2];
    for (&v, &g) in values.iter().zip(z) {
        let d = v - means[g as usize];
        vars[g as usize] += d * d;
    }
    vars[0] /= counts[0].max(1) as f64;
    vars[1] /= counts[1].max(1) as f64;
    (means, vars, counts)
}

/// Standardized mean difference of the values between groups:
/// `(mean1 - mean0) / sqrt((var0 + var1) / 2)`, 0 when the pooled spread
/// vanishes.
fn smd_values(values: &[f64], z: &[u8]) -> Result<f64> {
    let (means, vars, counts) = group_stats(values, z);
    if counts[0] == 0 || counts[1] == 0 {
        return Err(Error::Argument("both treatment groups must be nonempty".into()));
    }
    let pooled = ((vars[0] + vars[1]) / 2.0).sqrt();
    if pooled == 0.0 {
        return Ok(0.0);
    }
    Ok((means[1] - means[0]) / pooled)
}

/// Standardized mean difference of a numeric covariate between treatment
/// groups.
pub fn smd(dataset: &Dataset, covariate: &str) -> Result<f64> {
    let (_, col) = dataset
        .covariate(covariate)
        .ok_or_else(|| Error::Argument(format!("unknown covariate `{covariate}`")))?;
    match col {
        ColumnValues::Numeric(values) => smd_values(values, dataset.treatment()),
        ColumnValues::Categorical(_) => Err(Error::Argument(format!(
            "covariate `{covariate}` is categorical; standardized differences need numeric values"
        ))),
    }
}

fn histogram(values: &[f64], z: &[u8], n_bins: usize) -> Histogram {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = (hi - lo) / n_bins as f64;
    let edges: Vec<f64> = (0..=n_bins).map(|b| lo + width * b as f64).collect();
    let mut counts = [vec![0usize; n_bins], vec![0usize; n_bins]];
    for (&v, &g) in values.iter().zip(z) {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(n_bins - 1)
        } else {
            0
        };
        counts[g as usize][b] += 1;
    }
    let [counts_control, counts_treated] = counts;
    Histogram {
        edges,
        counts_control,
        counts_treated,
    }
}

/// Per-feature balance over the raw-scale encoding (numeric columns pass
/// through; categoricals expand to indicators): histograms share pooled
/// uniform-width edges across groups.
pub fn covariate_marginals(dataset: &Dataset, n_bins: usize) -> Result<Vec<FeatureBalance>> {
    if n_bins < 1 {
        return Err(Error::Argument("n_bins must be at least 1".into()));
    }
    let all: Vec<usize> = (0..dataset.n_rows()).collect();
    let x = Encoder::fit(dataset, &all, false)?.transform(dataset)?;
    let z = dataset.treatment();
    (0..x.n_cols())
        .map(|j| {
            let values = x.column(j);
            Ok(FeatureBalance {
                feature: x.feature_names()[j].clone(),
                smd: smd_values(&values, z)?,
                histogram: histogram(&values, z, n_bins),
            })
        })
        .collect()
}

fn encoded_groups(x: &FeatureMatrix, z: &[u8]) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut groups = (Vec::new(), Vec::new());
    for i in 0..x.n_rows() {
        let row = x.row(i).to_vec();
        if z[i] == 0 {
            groups.0.push(row);
        } else {
            groups.1.push(row);
        }
    }
    groups
}

/// Bandwidth for covariate MMD: median pairwise distance over the first
/// 500 encoded rows, or 1 when degenerate.
fn default_sigma(x: &FeatureMatrix) -> f64 {
    let take = x.n_rows().min(500);
    let points: Vec<Vec<f64>> = (0..take).map(|i| x.row(i).to_vec()).collect();
    match median_pairwise_distance(&points) {
        Some(d) if d > 0.0 && d.is_finite() => d,
        _ => 1.0,
    }
}

/// Squared MMD between the groups' standardized covariate encodings. With
/// `sigma` absent, the median pairwise distance heuristic picks the
/// bandwidth.
pub fn group_mmd(dataset: &Dataset, sigma: Option<f64>) -> Result<GroupMmd> {
    let all: Vec<usize> = (0..dataset.n_rows()).collect();
    let x = Encoder::fit(dataset, &all, true)?.transform(dataset)?;
    let sigma = sigma.unwrap_or_else(|| default_sigma(&x));
    let (g0, g1) = encoded_groups(&x, dataset.treatment());
    Ok(GroupMmd {
        mmd2: mmd2_rbf(&g0, &g1, sigma)?,
        sigma,
    })
}

/// Covariate MMD under `n_perms` random reassignments of the group labels
/// (group sizes preserved), for null-reference comparison. Permutation `k`
/// draws from substream `k`, so any single value is reproducible alone.
pub fn permutation_null_mmd(
    dataset: &Dataset,
    sigma: Option<f64>,
    n_perms: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    if n_perms == 0 {
        return Err(Error::Argument("need at least one permutation".into()));
    }
    let all: Vec<usize> = (0..dataset.n_rows()).collect();
    let x = Encoder::fit(dataset, &all, true)?.transform(dataset)?;
    let sigma = sigma.unwrap_or_else(|| default_sigma(&x));
    let z = dataset.treatment();
    let n1 = z.iter().filter(|&&g| g == 1).count();
    if n1 == 0 || n1 == z.len() {
        return Err(Error::Argument("both treatment groups must be nonempty".into()));
    }
    (0..n_perms)
        .map(|k| {
            let mut rng = substream(seed, k as u64);
            let mut order: Vec<usize> = (0..x.n_rows()).collect();
            order.shuffle(&mut rng);
            let mut perm_z = vec![0u8; x.n_rows()];
            for &i in order.iter().take(n1) {
                perm_z[i] = 1;
            }
            let (g0, g1) = encoded_groups(&x, &perm_z);
            mmd2_rbf(&g0, &g1, sigma)
        })
        .collect()
}

/// Project standardized encodings onto their top two principal components.
/// Components order by descending eigenvalue; each flips so its first
/// loading above 1e-12 in magnitude is positive, making the map
/// deterministic.
pub fn pca_project(dataset: &Dataset) -> Result<Projection> {
    let all: Vec<usize> = (0..dataset.n_rows()).collect();
    let x = Encoder::fit(dataset, &all, true)?.transform(dataset)?;
    let (m, p) = (x.n_rows(), x.n_cols());
    if p < 2 {
        return Err(Error::Argument(format!(
            "projection needs at least two encoded features, found {p}"
        )));
    }
    let mut means = vec![0.0; p];
    for i in 0..m {
        for (j, v) in x.row(i).iter().enumerate() {
            means[j] += v;
        }
    }
    for v in &mut means {
        *v /= m as f64;
    }
    let xc = DMatrix::from_fn(m, p, |i, j| x.row(i)[j] - means[j]);
    let cov = xc.transpose() * &xc / m as f64;
    let eig = cov.symmetric_eigen();

    let mut order: Vec<usize> = (0..p).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let mut components = Vec::with_capacity(2);
    for &j in order.iter().take(2) {
        let mut v: Vec<f64> = eig.eigenvectors.column(j).iter().copied().collect();
        if let Some(first) = v.iter().find(|c| c.abs() > 1e-12) {
            if *first < 0.0 {
                for c in &mut v {
                    *c = -*c;
                }
            }
        }
        components.push(v);
    }

    let coordinates = (0..m)
        .map(|i| {
            let mut out = [0.0; 2];
            for (k, comp) in components.iter().enumerate() {
                out[k] = xc.row(i).iter().zip(comp).map(|(a, b)| a * b).sum();
            }
            out
        })
        .collect();
    Ok(Projection {
        coordinates,
        treatment: dataset.treatment().to_vec(),
    })
}

/// Assemble marginals, group MMD, and the 2-D projection. The projection is
/// omitted (not an error) when the encoding has fewer than two features.
pub fn balance_report(
    dataset: &Dataset,
    n_bins: usize,
    sigma: Option<f64>,
) -> Result<BalanceReport> {
    let features = covariate_marginals(dataset, n_bins)?;
    let mmd = group_mmd(dataset, sigma)?;
    let projection = match pca_project(dataset) {
        Ok(p) => Some(p),
        Err(Error::Argument(_)) => None,
        Err(e) => return Err(e),
    };
    Ok(BalanceReport {
        features,
        mmd,
        projection,
        projection_method: "principal components (top 2, deterministic)".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{
        generate_synthetic, ColumnKind, ColumnLevel, ColumnRole, ColumnSpec, EffectSpec,
        LinearSpec, PropensitySpec, Schema, SyntheticConfig,
    };
    use crate::inference::quantile_sorted;

    fn two_column_dataset(c1: Vec<f64>, c2: Vec<f64>, z: Vec<u8>) -> Dataset {
        let n = c1.len();
        let schema = Schema::new(vec![
            ColumnSpec::new("C1", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Covariate),
            ColumnSpec::new("C2", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Covariate),
            ColumnSpec::new("Z", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Treatment),
            ColumnSpec::new("Y", ColumnLevel::Student, ColumnKind::Numeric, ColumnRole::Outcome),
            ColumnSpec::new("sid", ColumnLevel::School, ColumnKind::Categorical, ColumnRole::SchoolId),
        ])
        .unwrap();
        Dataset::from_parts(
            schema,
            vec![ColumnValues::Numeric(c1), ColumnValues::Numeric(c2)],
            z,
            vec![0.0; n],
            (0..n).map(|i| format!("s{}", i % 4)).collect(),
        )
        .unwrap()
    }

    fn randomized_synthetic(n_schools: usize, per: usize, seed: u64) -> Dataset {
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

    fn swap_groups(d: &Dataset) -> Dataset {
        Dataset::from_parts(
            d.schema().clone(),
            d.covariate_values().to_vec(),
            d.treatment().iter().map(|z| 1 - z).collect(),
            d.outcome().to_vec(),
            d.school_ids().to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn identical_group_distributions_have_zero_smd() {
        let d = two_column_dataset(
            vec![1.0, 2.0, 3.0, 1.0, 2.0, 3.0],
            vec![0.0; 6],
            vec![0, 0, 0, 1, 1, 1],
        );
        assert_eq!(smd(&d, "C1").unwrap(), 0.0);
    }

    #[test]
    fn unit_gap_at_unit_spread_gives_one() {
        // Group 0 holds {-1, 1} (mean 0, sd 1); group 1 holds {0, 2}.
        let d = two_column_dataset(
            vec![-1.0, 1.0, 0.0, 2.0],
            vec![0.0; 4],
            vec![0, 0, 1, 1],
        );
        assert_eq!(smd(&d, "C1").unwrap(), 1.0);
    }

    #[test]
    fn smd_flips_sign_under_group_swap() {
        let d = two_column_dataset(
            vec![0.4, 1.9, -0.3, 2.2, 0.8, 1.1],
            vec![0.0; 6],
            vec![0, 1, 0, 1, 0, 1],
        );
        let a = smd(&d, "C1").unwrap();
        let b = smd(&swap_groups(&d), "C1").unwrap();
        assert_eq!(a, -b);
        assert!(a != 0.0);
    }

    #[test]
    fn smd_rejects_unknown_and_categorical_covariates() {
        let d = randomized_synthetic(5, 6, 1);
        assert!(matches!(smd(&d, "nope"), Err(Error::Argument(_))));
        assert!(matches!(smd(&d, "XC"), Err(Error::Argument(_))));
    }

    #[test]
    fn randomization_keeps_standardized_differences_small() {
        let d = randomized_synthetic(50, 200, 3);
        assert_eq!(d.n_rows(), 10_000);
        for name in ["S3", "C1", "C2", "C3", "X1", "X2", "X3", "X4", "X5"] {
            let v = smd(&d, name).unwrap();
            assert!(v.abs() < 0.1, "{name} smd {v}");
        }
    }

    #[test]
    fn constant_feature_occupies_one_bin_per_group() {
        let d = two_column_dataset(vec![5.0; 6], vec![0.0; 6], vec![0, 0, 0, 1, 1, 1]);
        let report = covariate_marginals(&d, 8).unwrap();
        let h = &report[0].histogram;
        assert_eq!(h.counts_control[0], 3);
        assert_eq!(h.counts_treated[0], 3);
        assert!(h.counts_control[1..].iter().all(|c| *c == 0));
        assert!(h.counts_treated[1..].iter().all(|c| *c == 0));
        assert_eq!(report[0].smd, 0.0);
    }

    #[test]
    fn histogram_counts_conserve_group_sizes() {
        let d = randomized_synthetic(12, 15, 4);
        let n1 = d.treatment().iter().filter(|z| **z == 1).count();
        let n0 = d.n_rows() - n1;
        for f in covariate_marginals(&d, 20).unwrap() {
            assert_eq!(f.histogram.counts_control.iter().sum::<usize>(), n0);
            assert_eq!(f.histogram.counts_treated.iter().sum::<usize>(), n1);
            assert_eq!(f.histogram.edges.len(), 21);
        }
    }

    #[test]
    fn randomized_groups_match_bin_proportions() {
        let d = randomized_synthetic(50, 200, 5);
        let n1 = d.treatment().iter().filter(|z| **z == 1).count();
        let p = n1 as f64 / d.n_rows() as f64;
        let report = covariate_marginals(&d, 20).unwrap();
        let c1 = report.iter().find(|f| f.feature == "C1").unwrap();
        for b in 0..20 {
            let n0 = c1.histogram.counts_control[b] as f64;
            let nt = c1.histogram.counts_treated[b] as f64;
            let n = n0 + nt;
            if n < 30.0 {
                continue;
            }
            let se = (p * (1.0 - p) / n).sqrt();
            assert!(
                (nt / n - p).abs() < 3.0 * se,
                "bin {b}: share {} vs {p}",
                nt / n
            );
        }
    }

    #[test]
    fn far_disjoint_supports_approach_the_kernel_limit() {
        let d = two_column_dataset(
            vec![0.0, 0.01, 1000.0, 1000.01],
            vec![0.0, 0.01, 1000.0, 1000.01],
            vec![0, 0, 1, 1],
        );
        let g = group_mmd(&d, Some(0.05)).unwrap();
        assert!(g.mmd2 > 1.9, "mmd2 {}", g.mmd2);
        assert!(g.mmd2 <= 2.0);
    }

    #[test]
    fn group_mmd_is_symmetric_under_label_swap() {
        let d = randomized_synthetic(8, 10, 6);
        let a = group_mmd(&d, Some(1.0)).unwrap();
        let b = group_mmd(&swap_groups(&d), Some(1.0)).unwrap();
        assert!((a.mmd2 - b.mmd2).abs() < 1e-12);
        assert_eq!(a.sigma, 1.0);
    }

    #[test]
    fn group_mmd_delegates_to_the_kernel_statistic() {
        let d = randomized_synthetic(6, 8, 7);
        let g = group_mmd(&d, None).unwrap();
        let all: Vec<usize> = (0..d.n_rows()).collect();
        let x = Encoder::fit(&d, &all, true).unwrap().transform(&d).unwrap();
        let (g0, g1) = encoded_groups(&x, d.treatment());
        assert_eq!(g.mmd2, mmd2_rbf(&g0, &g1, g.sigma).unwrap());
        assert!(g.sigma > 0.0);
    }

    #[test]
    fn randomized_assignment_sits_inside_the_permutation_null() {
        let d = randomized_synthetic(20, 15, 8);
        let g = group_mmd(&d, None).unwrap();
        let mut null = permutation_null_mmd(&d, Some(g.sigma), 200, 11).unwrap();
        null.sort_by(f64::total_cmp);
        let q95 = quantile_sorted(&null, 0.95);
        assert!(g.mmd2 < q95, "observed {} vs null 95th {q95}", g.mmd2);
    }

    #[test]
    fn rank_one_data_projects_onto_a_line() {
        let t: Vec<f64> = (0..40).map(|i| i as f64 * 0.25 - 5.0).collect();
        let c2 = t.iter().map(|v| 2.0 * v + 1.0).collect();
        let z = (0..40).map(|i| (i % 2) as u8).collect();
        let d = two_column_dataset(t, c2, z);
        let proj = pca_project(&d).unwrap();
        for c in &proj.coordinates {
            assert!(c[1].abs() < 1e-9, "second coordinate {}", c[1]);
        }
    }

    #[test]
    fn projected_coordinates_are_centered_and_variance_ordered() {
        let d = randomized_synthetic(10, 12, 9);
        let proj = pca_project(&d).unwrap();
        let m = proj.coordinates.len() as f64;
        for k in 0..2 {
            let mean: f64 = proj.coordinates.iter().map(|c| c[k]).sum::<f64>() / m;
            assert!(mean.abs() < 1e-10, "axis {k} mean {mean}");
        }
        let var = |k: usize| proj.coordinates.iter().map(|c| c[k] * c[k]).sum::<f64>() / m;
        assert!(var(0) >= var(1));
        assert!(var(0) > 0.0);
    }

    #[test]
    fn projection_is_deterministic() {
        let d = randomized_synthetic(10, 12, 10);
        assert_eq!(pca_project(&d).unwrap(), pca_project(&d).unwrap());
    }

    #[test]
    fn report_bundles_all_sections_and_serializes() {
        let d = randomized_synthetic(8, 10, 12);
        let r = balance_report(&d, 10, None).unwrap();
        assert!(!r.features.is_empty());
        assert!(r.mmd.mmd2 >= 0.0);
        assert!(r.projection.is_some());
        let json = r.to_json().unwrap();
        assert!(json.contains("\"mmd\""));
        let mut hist = Vec::new();
        r.write_histograms_csv(&mut hist).unwrap();
        assert!(String::from_utf8(hist)
            .unwrap()
            .starts_with("feature,bin_low,bin_high,count_control,count_treated\n"));
        let mut proj = Vec::new();
        r.projection.unwrap().write_csv(&mut proj).unwrap();
        assert!(String::from_utf8(proj).unwrap().starts_with("x,y,z\n"));
    }
}
