//! Ridge regression by the normal equations.
//!
//! Minimizes `mean((y - Xb - a)^2) + lambda * ||b||^2` with the intercept
//! `a` unpenalized. Centering features and targets decouples the intercept,
//! leaving the symmetric positive definite system
//! `(Xc'Xc / m + lambda I) b = Xc'yc / m`, solved by Cholesky. At
//! `lambda = 0` a singular system falls back to the minimum-norm
//! least-squares solution via SVD and is flagged.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::{Error, Result};

use super::check_xy;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub coefficients: Vec<f64>,
    pub intercept: f64,
    pub lambda: f64,
    /// True when the lambda = 0 system was singular and the minimum-norm
    /// solution was used instead of an exact solve.
    pub min_norm_fallback: bool,
}

impl RidgeModel {
    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows())
            .map(|i| {
                self.intercept
                    + x.row(i)
                        .iter()
                        .zip(&self.coefficients)
                        .map(|(v, c)| v * c)
                        .sum::<f64>()
            })
            .collect()
    }

    /// Penalized training objective at given parameters.
    pub fn objective(x: &FeatureMatrix, y: &[f64], coefficients: &[f64], intercept: f64, lambda: f64) -> f64 {
        let m = x.n_rows() as f64;
        let sse: f64 = (0..x.n_rows())
            .map(|i| {
                let pred = intercept
                    + x.row(i)
                        .iter()
                        .zip(coefficients)
                        .map(|(v, c)| v * c)
                        .sum::<f64>();
                (y[i] - pred).powi(2)
            })
            .sum();
        sse / m + lambda * coefficients.iter().map(|c| c * c).sum::<f64>()
    }
}

pub fn ridge_fit(x: &FeatureMatrix, y: &[f64], lambda: f64) -> Result<RidgeModel> {
    check_xy(x, y)?;
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(Error::Argument(format!("lambda {lambda} must be finite and nonnegative")));
    }
    let m = x.n_rows();
    let p = x.n_cols();
    let mf = m as f64;

    let y_mean = y.iter().sum::<f64>() / mf;
    let mut x_mean = vec![0.0; p];
    for i in 0..m {
        for (j, v) in x.row(i).iter().enumerate() {
            x_mean[j] += v;
        }
    }
    for v in &mut x_mean {
        *v /= mf;
    }

    if p == 0 {
        return Ok(RidgeModel {
            coefficients: Vec::new(),
            intercept: y_mean,
            lambda,
            min_norm_fallback: false,
        });
    }

    let xc = DMatrix::from_fn(m, p, |i, j| x.row(i)[j] - x_mean[j]);
    let yc = DVector::from_fn(m, |i, _| y[i] - y_mean);
    let gram = (xc.transpose() * &xc) / mf + DMatrix::identity(p, p) * lambda;
    let rhs = xc.transpose() * &yc / mf;

    let (beta, fallback) = match gram.clone().cholesky() {
        Some(chol) => (chol.solve(&rhs), false),
        None => {
            if lambda > 0.0 {
                return Err(Error::Fit(
                    "ridge normal equations not positive definite despite positive lambda".into(),
                ));
            }
            let svd = xc.svd(true, true);
            let sol = svd
                .solve(&yc, 1e-12)
                .map_err(|e| Error::Fit(format!("singular value decomposition failed: {e}")))?;
            (sol, true)
        }
    };

    let coefficients: Vec<f64> = beta.iter().copied().collect();
    let intercept = y_mean
        - x_mean
            .iter()
            .zip(&coefficients)
            .map(|(m, c)| m * c)
            .sum::<f64>();
    Ok(RidgeModel {
        coefficients,
        intercept,
        lambda,
        min_norm_fallback: fallback,
    })
}
