//! Random forest of CART trees: bootstrap row samples, a random feature
//! subset tried at each split, unweighted mean prediction.
//!
//! Tree `t` draws from substream(seed, t), so the ensemble is identical no
//! matter how tree fits are scheduled.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::rng::substream;
use crate::Result;

use super::tree::tree_fit_rows;
use super::{check_xy, ForestParams, TreeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForestModel {
    pub trees: Vec<TreeModel>,
    pub n_features: usize,
    pub seed: u64,
}

impl ForestModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut out = vec![0.0; x.n_rows()];
        for tree in &self.trees {
            for (acc, i) in out.iter_mut().zip(0..x.n_rows()) {
                *acc += tree.predict_row(x.row(i));
            }
        }
        let k = self.trees.len() as f64;
        for v in &mut out {
            *v /= k;
        }
        out
    }

    /// Number of internal splits on each feature, summed over trees.
    pub fn split_counts(&self) -> Vec<usize> {
        let mut counts = vec![0usize; self.n_features];
        for tree in &self.trees {
            for f in tree.split_features() {
                counts[f] += 1;
            }
        }
        counts
    }
}

pub fn forest_fit(
    x: &FeatureMatrix,
    y: &[f64],
    schools: Option<&[u32]>,
    params: &ForestParams,
) -> Result<ForestModel> {
    params.validate()?;
    check_xy(x, y)?;
    let m = x.n_rows();
    let p = x.n_cols();
    let n_draw = ((params.row_subsample * m as f64).round() as usize).clamp(1, m);
    let n_try = ((params.feature_subsample * p as f64).ceil() as usize).clamp(1, p);

    let trees: Vec<Result<TreeModel>> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = substream(params.seed, t as u64);
            let rows: Vec<usize> = if params.with_replacement {
                (0..n_draw).map(|_| rng.gen_range(0..m)).collect()
            } else if n_draw == m {
                (0..m).collect()
            } else {
                rand::seq::index::sample(&mut rng, m, n_draw).into_vec()
            };
            let sampler = if n_try < p { Some(rng) } else { None };
            tree_fit_rows(x, y, None, schools, &params.tree, rows, sampler, n_try)
        })
        .collect();

    let trees = trees.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(ForestModel {
        trees,
        n_features: p,
        seed: params.seed,
    })
}
