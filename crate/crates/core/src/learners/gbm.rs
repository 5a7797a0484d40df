//! Stagewise least-squares gradient boosting.
//!
//! Starts from the target mean, then each round fits a depth-limited CART
//! to the current residuals and adds `learning_rate` times it. Because each
//! leaf of the residual tree carries the residual mean of its rows, a full
//! round changes training MSE by `-lr * (2 - lr) * mean(h^2)`, which is
//! never positive for `lr` in (0, 1]; the recorded trace reflects that.

use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::Result;

use super::{check_xy, tree_fit, GbmParams, TreeModel};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbmModel {
    pub init: f64,
    pub learning_rate: f64,
    pub trees: Vec<TreeModel>,
    /// Training MSE after each round.
    pub loss_trace: Vec<f64>,
    pub n_features: usize,
}

impl GbmModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut out = vec![self.init; x.n_rows()];
        for tree in &self.trees {
            for (i, v) in out.iter_mut().enumerate() {
                *v += self.learning_rate * tree.predict_row(x.row(i));
            }
        }
        out
    }
}

pub fn gbm_fit(
    x: &FeatureMatrix,
    y: &[f64],
    schools: Option<&[u32]>,
    params: &GbmParams,
) -> Result<GbmModel> {
    params.validate()?;
    check_xy(x, y)?;
    let m = x.n_rows();
    let init = y.iter().sum::<f64>() / m as f64;

    let mut fitted = vec![init; m];
    let mut residual = vec![0.0; m];
    let mut trees = Vec::with_capacity(params.n_rounds);
    let mut loss_trace = Vec::with_capacity(params.n_rounds);
    for _ in 0..params.n_rounds {
        for i in 0..m {
            residual[i] = y[i] - fitted[i];
        }
        let tree = tree_fit(x, &residual, None, schools, &params.tree)?;
        for i in 0..m {
            fitted[i] += params.learning_rate * tree.predict_row(x.row(i));
        }
        let mse = fitted
            .iter()
            .zip(y)
            .map(|(f, t)| (t - f).powi(2))
            .sum::<f64>()
            / m as f64;
        loss_trace.push(mse);
        trees.push(tree);
    }

    Ok(GbmModel {
        init,
        learning_rate: params.learning_rate,
        trees,
        loss_trace,
        n_features: x.n_cols(),
    })
}
