//! School-level train/validation partitioning.
//!
//! Many candidate partitions are drawn uniformly at random, whole schools at
//! a time, and the winner minimizes a weighted Euclidean distance between
//! the two sides' covariate moments and treatment shares. Every student of a
//! school lands on one side only.

use std::collections::BTreeSet;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{encode, Dataset};
use crate::rng::substream;
use crate::{Error, Result};

/// How schools of different sizes enter the partition moments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentWeighting {
    /// Moments over student rows; large schools count more.
    Student,
    /// Average of per-school moments; each school counts once.
    School,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitParams {
    pub train_fraction: f64,
    pub n_candidates: usize,
    pub treatment_weight: f64,
    pub weighting: MomentWeighting,
    pub seed: u64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            train_fraction: 0.8,
            n_candidates: 10_000,
            treatment_weight: 10.0,
            weighting: MomentWeighting::Student,
            seed: 0,
        }
    }
}

/// Summary statistics of one side of a partition: per encoded covariate the
/// mean and raw second moment (interleaved), plus the treated fraction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentVector {
    pub covariate_moments: Vec<f64>,
    pub treatment_share: f64,
}

impl MomentVector {
    pub fn len(&self) -> usize {
        self.covariate_moments.len() + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Distance between two moment vectors: the Euclidean norm of their
/// difference after scaling the treatment-share coordinate by `w_z`.
pub fn split_score(a: &MomentVector, b: &MomentVector, w_z: f64) -> Result<f64> {
    if a.covariate_moments.len() != b.covariate_moments.len() {
        return Err(Error::Argument(format!(
            "moment vectors have different lengths ({} vs {})",
            a.len(),
            b.len()
        )));
    }
    let mut sum = a
        .covariate_moments
        .iter()
        .zip(&b.covariate_moments)
        .map(|(x, y)| (x - y).powi(2))
        .sum::<f64>();
    sum += (w_z * (a.treatment_share - b.treatment_share)).powi(2);
    Ok(sum.sqrt())
}

/// A chosen train/validation partition of schools.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitAssignment {
    pub train_schools: Vec<String>,
    pub valid_schools: Vec<String>,
    pub score: f64,
    pub candidate_count: usize,
    pub seed: u64,
    /// Realized training-school count; whole schools make an exact
    /// student-level fraction unattainable in general.
    pub n_train_schools: usize,
}

impl SplitAssignment {
    fn rows_of(&self, dataset: &Dataset, schools: &[String]) -> Vec<usize> {
        let mut rows: Vec<usize> = schools
            .iter()
            .filter_map(|s| dataset.school_index().get(s))
            .flatten()
            .copied()
            .collect();
        rows.sort_unstable();
        rows
    }

    /// Ascending row indices of the training side.
    pub fn train_rows(&self, dataset: &Dataset) -> Vec<usize> {
        self.rows_of(dataset, &self.train_schools)
    }

    /// Ascending row indices of the validation side.
    pub fn valid_rows(&self, dataset: &Dataset) -> Vec<usize> {
        self.rows_of(dataset, &self.valid_schools)
    }
}

/// Per-school sufficient statistics over encoded covariates.
struct SchoolStats {
    n_rows: f64,
    n_treated: f64,
    sum: Vec<f64>,
    sumsq: Vec<f64>,
}

fn school_stats(dataset: &Dataset) -> Result<Vec<SchoolStats>> {
    let all_rows: Vec<usize> = (0..dataset.n_rows()).collect();
    let x = encode(dataset, &all_rows)?;
    let p = x.n_cols();
    let mut stats: Vec<SchoolStats> = Vec::with_capacity(dataset.n_schools());
    for rows in dataset.school_index().values() {
        let mut s = SchoolStats {
            n_rows: rows.len() as f64,
            n_treated: 0.0,
            sum: vec![0.0; p],
            sumsq: vec![0.0; p],
        };
        for &r in rows {
            s.n_treated += f64::from(dataset.treatment()[r]);
            for (j, v) in x.row(r).iter().enumerate() {
                s.sum[j] += v;
                s.sumsq[j] += v * v;
            }
        }
        stats.push(s);
    }
    Ok(stats)
}

fn side_moments(stats: &[SchoolStats], members: &[usize], weighting: MomentWeighting) -> MomentVector {
    let p = stats[0].sum.len();
    let mut covariate_moments = vec![0.0; 2 * p];
    let mut share = 0.0;
    match weighting {
        MomentWeighting::Student => {
            let total: f64 = members.iter().map(|&s| stats[s].n_rows).sum();
            for &s in members {
                let st = &stats[s];
                share += st.n_treated;
                for j in 0..p {
                    covariate_moments[2 * j] += st.sum[j];
                    covariate_moments[2 * j + 1] += st.sumsq[j];
                }
            }
            for v in &mut covariate_moments {
                *v /= total;
            }
            share /= total;
        }
        MomentWeighting::School => {
            let k = members.len() as f64;
            for &s in members {
                let st = &stats[s];
                share += st.n_treated / st.n_rows;
                for j in 0..p {
                    covariate_moments[2 * j] += st.sum[j] / st.n_rows;
                    covariate_moments[2 * j + 1] += st.sumsq[j] / st.n_rows;
                }
            }
            for v in &mut covariate_moments {
                *v /= k;
            }
            share /= k;
        }
    }
    MomentVector {
        covariate_moments,
        treatment_share: share,
    }
}

/// Moments of the two sides implied by a set of training schools. Encoding
/// is fit on the full dataset so both sides share one scale.
pub fn partition_moments(
    dataset: &Dataset,
    train_schools: &BTreeSet<String>,
    weighting: MomentWeighting,
) -> Result<(MomentVector, MomentVector)> {
    let stats = school_stats(dataset)?;
    let labels = dataset.school_labels();
    let mut train = Vec::new();
    let mut valid = Vec::new();
    for (i, label) in labels.iter().enumerate() {
        if train_schools.contains(label) {
            train.push(i);
        } else {
            valid.push(i);
        }
    }
    if train.is_empty() || valid.is_empty() {
        return Err(Error::Argument("both partition sides must be nonempty".into()));
    }
    if train.len() != train_schools.len() {
        return Err(Error::Argument("unknown school in training set".into()));
    }
    Ok((
        side_moments(&stats, &train, weighting),
        side_moments(&stats, &valid, weighting),
    ))
}

/// Search `params.n_candidates` random whole-school partitions and keep the
/// one whose sides' moments are closest under [`split_score`].
///
/// Candidate `k` draws from a dedicated substream of `params.seed`, so the
/// candidate sequence is a prefix-stable function of the seed: raising
/// `n_candidates` can only improve (never worsen) the returned score, and
/// parallel scoring reduces to the same winner as a serial scan (minimal
/// score, then minimal candidate index).
pub fn balanced_split(dataset: &Dataset, params: &SplitParams) -> Result<SplitAssignment> {
    let n = dataset.n_schools();
    if n < 2 {
        return Err(Error::Argument(format!(
            "balanced split needs at least 2 schools, found {n}"
        )));
    }
    if !(params.train_fraction > 0.0 && params.train_fraction < 1.0) {
        return Err(Error::Argument(format!(
            "train_fraction {} must lie strictly inside (0, 1)",
            params.train_fraction
        )));
    }
    if params.n_candidates == 0 {
        return Err(Error::Argument("n_candidates must be at least 1".into()));
    }
    if !(params.treatment_weight.is_finite() && params.treatment_weight >= 0.0) {
        return Err(Error::Argument("treatment_weight must be finite and nonnegative".into()));
    }

    let n_train = ((params.train_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let stats = school_stats(dataset)?;

    let draw = |k: usize| -> Vec<usize> {
        let mut rng = substream(params.seed, k as u64);
        let mut chosen = rand::seq::index::sample(&mut rng, n, n_train).into_vec();
        chosen.sort_unstable();
        chosen
    };
    let score_candidate = |k: usize| -> f64 {
        let train = draw(k);
        let mut in_train = vec![false; n];
        for &s in &train {
            in_train[s] = true;
        }
        let valid: Vec<usize> = (0..n).filter(|&s| !in_train[s]).collect();
        let a = side_moments(&stats, &train, params.weighting);
        let b = side_moments(&stats, &valid, params.weighting);
        split_score(&a, &b, params.treatment_weight).expect("equal lengths by construction")
    };

    let (best_score, best_k) = (0..params.n_candidates)
        .into_par_iter()
        .map(|k| (score_candidate(k), k))
        .min_by(|(sa, ka), (sb, kb)| sa.total_cmp(sb).then(ka.cmp(kb)))
        .expect("at least one candidate");

    let labels = dataset.school_labels();
    let train_idx = draw(best_k);
    let mut in_train = vec![false; n];
    for &s in &train_idx {
        in_train[s] = true;
    }
    let train_schools: Vec<String> = train_idx.iter().map(|&s| labels[s].clone()).collect();
    let valid_schools: Vec<String> = (0..n)
        .filter(|&s| !in_train[s])
        .map(|s| labels[s].clone())
        .collect();

    Ok(SplitAssignment {
        train_schools,
        valid_schools,
        score: best_score,
        candidate_count: params.n_candidates,
        seed: params.seed,
        n_train_schools: n_train,
    })
}
