//! Effect aggregation and uncertainty: naive group difference, mean imputed
//! effect, held-out factual R², and school-level cluster bootstrap intervals.

use std::io::Write;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::Dataset;
use crate::rng::substream;
use crate::tlearner::{CateTable, OutcomePairModel};
use crate::{Error, Result};

/// Point estimate, replicate distribution, and interval for one statistic.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point_estimate: f64,
    /// Successful replicate values, sorted ascending.
    pub replicates: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub method: String,
    pub n_failures: usize,
}

/// Difference between observed mean outcomes of the treated and control
/// groups. Both groups must be nonempty.
pub fn naive_ate(dataset: &Dataset) -> Result<f64> {
    let mut sums = [0.0f64; 2];
    let mut counts = [0usize; 2];
    for (&z, &y) in dataset.treatment().iter().zip(dataset.outcome()) {
        sums[z as usize] += y;
        counts[z as usize] += 1;
    }
    for z in 0..2 {
        if counts[z] == 0 {
            return Err(Error::Argument(format!("treatment group z={z} is empty")));
        }
    }
    Ok(sums[1] / counts[1] as f64 - sums[0] / counts[0] as f64)
}

/// Mean of the imputed per-row effects.
pub fn ate(cate: &CateTable) -> Result<f64> {
    if cate.is_empty() {
        return Err(Error::Argument("effect table is empty".into()));
    }
    Ok(cate.mean())
}

/// Factual R² of a fitted pair model on held-out data: each row is scored by
/// the head matching its own treatment group.
pub fn r2_heldout(model: &OutcomePairModel, valid: &Dataset) -> Result<f64> {
    let (mu0, mu1) = model.predict_mu_pair(valid)?;
    let y = valid.outcome();
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let sst: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    if sst == 0.0 {
        return Err(Error::UndefinedMetric(
            "held-out outcome variance is zero".into(),
        ));
    }
    let sse: f64 = valid
        .treatment()
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            let pred = if z == 1 { mu1[i] } else { mu0[i] };
            (y[i] - pred) * (y[i] - pred)
        })
        .sum();
    Ok(1.0 - sse / sst)
}

/// Draw n schools with replacement and concatenate their rows. Each draw is
/// relabeled `{label}#{draw}` so duplicated schools stay distinct clusters;
/// rows within a drawn school are copied whole, never subsampled.
pub fn resample_schools(dataset: &Dataset, rng: &mut ChaCha8Rng) -> Result<Dataset> {
    let labels = dataset.school_labels();
    let index = dataset.school_index();
    let n = labels.len();
    let mut rows = Vec::with_capacity(dataset.n_rows());
    let mut new_labels = Vec::with_capacity(dataset.n_rows());
    for draw in 0..n {
        let label = &labels[rng.gen_range(0..n)];
        let relabel = format!("{label}#{draw}");
        for &r in &index[label] {
            rows.push(r);
            new_labels.push(relabel.clone());
        }
    }
    dataset.subset_relabeled(&rows, Some(&new_labels))
}

/// The k-th bootstrap replicate of `dataset` under `seed`, reproducible in
/// isolation. Replicates are numbered from 1; 0 is the point estimate.
pub fn replicate_dataset(dataset: &Dataset, seed: u64, k: u64) -> Result<Dataset> {
    let mut rng = substream(seed, k);
    resample_schools(dataset, &mut rng)
}

/// School-level cluster bootstrap of a vector-valued statistic. Returns one
/// [`BootstrapResult`] per statistic output, all sharing the same replicate
/// datasets. Intervals are empirical (percentile-of-deviations):
/// [2θ̂ − q_hi, 2θ̂ − q_lo] where q are replicate quantiles.
///
/// Replicates run in parallel, each on its own random substream. A replicate
/// whose statistic errors or returns non-finite values is recorded as failed;
/// more than 20% failures is an aggregation error.
pub fn cluster_bootstrap_multi<F>(
    dataset: &Dataset,
    statistic: F,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<Vec<BootstrapResult>>
where
    F: Fn(&Dataset) -> Result<Vec<f64>> + Sync,
{
    if b == 0 {
        return Err(Error::Argument("bootstrap needs at least one replicate".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::Argument(format!(
            "confidence level {level} must lie strictly between 0 and 1"
        )));
    }
    let point = statistic(dataset)?;
    if point.is_empty() {
        return Err(Error::Argument("statistic returned no outputs".into()));
    }
    if point.iter().any(|v| !v.is_finite()) {
        return Err(Error::Aggregation("point estimate is not finite".into()));
    }
    let n_out = point.len();

    let outcomes: Vec<Option<Vec<f64>>> = (1..=b as u64)
        .into_par_iter()
        .map(|k| {
            let resampled = replicate_dataset(dataset, seed, k).ok()?;
            match statistic(&resampled) {
                Ok(v) if v.len() == n_out && v.iter().all(|x| x.is_finite()) => Some(v),
                _ => None,
            }
        })
        .collect();

    let n_failures = outcomes.iter().filter(|o| o.is_none()).count();
    if n_failures * 5 > b {
        return Err(Error::Aggregation(format!(
            "{n_failures} of {b} bootstrap replicates failed"
        )));
    }

    let alpha = 1.0 - level;
    let results = (0..n_out)
        .map(|j| {
            let mut reps: Vec<f64> = outcomes.iter().flatten().map(|v| v[j]).collect();
            reps.sort_by(f64::total_cmp);
            let q_lo = quantile_sorted(&reps, alpha / 2.0);
            let q_hi = quantile_sorted(&reps, 1.0 - alpha / 2.0);
            BootstrapResult {
                point_estimate: point[j],
                ci_low: 2.0 * point[j] - q_hi,
                ci_high: 2.0 * point[j] - q_lo,
                level,
                method: "empirical".into(),
                n_failures,
                replicates: reps,
            }
        })
        .collect();
    Ok(results)
}

/// [`cluster_bootstrap_multi`] for a scalar statistic.
pub fn cluster_bootstrap<F>(
    dataset: &Dataset,
    statistic: F,
    b: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult>
where
    F: Fn(&Dataset) -> Result<f64> + Sync,
{
    let mut v = cluster_bootstrap_multi(dataset, |d| statistic(d).map(|x| vec![x]), b, level, seed)?;
    Ok(v.pop().expect("exactly one output"))
}

/// Linearly interpolated quantile of an ascending-sorted nonempty slice,
/// with p in [0, 1].
pub(crate) fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = p * (sorted.len() - 1) as f64;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// One row of the final results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimatorSummary {
    pub estimator: String,
    pub ate: f64,
    pub ate_ci: Option<(f64, f64)>,
    /// Absent for estimators without a predictive model (the naive row).
    pub r2: Option<f64>,
    pub r2_ci: Option<(f64, f64)>,
}

/// Write estimator summaries as CSV: estimator, ATE, ATE interval, R²,
/// R² interval. Interval cells are empty when no bootstrap ran; both R²
/// cells are empty for rows without one.
pub fn write_results_csv<W: Write>(rows: &[EstimatorSummary], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "estimator",
        "ate",
        "ate_ci_low",
        "ate_ci_high",
        "r2",
        "r2_ci_low",
        "r2_ci_high",
    ])?;
    let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.estimator.clone(),
            r.ate.to_string(),
            cell(r.ate_ci.map(|c| c.0)),
            cell(r.ate_ci.map(|c| c.1)),
            cell(r.r2),
            cell(r.r2_ci.map(|c| c.0)),
            cell(r.r2_ci.map(|c| c.1)),
        ])?;
    }
    w.flush()?;
    Ok(())
}
