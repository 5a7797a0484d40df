//! Squared maximum mean discrepancy with an RBF kernel,
//! `k(a, b) = exp(-||a - b||^2 / (2 sigma^2))`.
//!
//! The estimator is the complete (biased) V-statistic
//! `mean k(A, A) + mean k(B, B) - 2 mean k(A, B)`, which is nonnegative for
//! any positive definite kernel.

use crate::{Error, Result};

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_kernel(a: &[&[f64]], b: &[&[f64]], inv_two_sigma_sq: f64) -> f64 {
    let mut sum = 0.0;
    for x in a {
        for y in b {
            sum += (-sq_dist(x, y) * inv_two_sigma_sq).exp();
        }
    }
    sum / (a.len() * b.len()) as f64
}

fn check_sets(a_len: usize, b_len: usize, sigma: f64) -> Result<()> {
    if a_len == 0 || b_len == 0 {
        return Err(Error::Argument("mmd needs nonempty point sets".into()));
    }
    if !(sigma > 0.0 && sigma.is_finite()) {
        return Err(Error::Argument(format!("sigma {sigma} must be positive and finite")));
    }
    Ok(())
}

/// Squared MMD between two point sets, clamped at zero against rounding.
pub fn mmd2_rbf(a: &[Vec<f64>], b: &[Vec<f64>], sigma: f64) -> Result<f64> {
    check_sets(a.len(), b.len(), sigma)?;
    let av: Vec<&[f64]> = a.iter().map(|p| p.as_slice()).collect();
    let bv: Vec<&[f64]> = b.iter().map(|p| p.as_slice()).collect();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let v = mean_kernel(&av, &av, inv) + mean_kernel(&bv, &bv, inv)
        - 2.0 * mean_kernel(&av, &bv, inv);
    Ok(v.max(0.0))
}

/// Unclamped squared MMD plus its gradient with respect to every point,
/// added into `grad_a` / `grad_b` (buffers must be point-shaped and zeroed
/// by the caller if fresh gradients are wanted).
pub(crate) fn mmd2_rbf_with_grad(
    a: &[&[f64]],
    b: &[&[f64]],
    sigma: f64,
    grad_a: &mut [Vec<f64>],
    grad_b: &mut [Vec<f64>],
) -> f64 {
    let n = a.len();
    let m = b.len();
    let inv = 1.0 / (2.0 * sigma * sigma);
    let inv_sq = 1.0 / (sigma * sigma);

    let mut s_aa = 0.0;
    for i in 0..n {
        for j in 0..n {
            let k = (-sq_dist(a[i], a[j]) * inv).exp();
            s_aa += k;
            // d/d a_i of the (i, j) and (j, i) terms combined.
            let c = 2.0 * k * inv_sq / (n * n) as f64;
            for (g, (xj, xi)) in grad_a[i].iter_mut().zip(a[j].iter().zip(a[i])) {
                *g += c * (xj - xi);
            }
        }
    }
    let mut s_bb = 0.0;
    for i in 0..m {
        for j in 0..m {
            let k = (-sq_dist(b[i], b[j]) * inv).exp();
            s_bb += k;
            let c = 2.0 * k * inv_sq / (m * m) as f64;
            for (g, (xj, xi)) in grad_b[i].iter_mut().zip(b[j].iter().zip(b[i])) {
                *g += c * (xj - xi);
            }
        }
    }
    let mut s_ab = 0.0;
    for i in 0..n {
        for j in 0..m {
            let k = (-sq_dist(a[i], b[j]) * inv).exp();
            s_ab += k;
            let c = -2.0 * k * inv_sq / (n * m) as f64;
            for (g, (yj, xi)) in grad_a[i].iter_mut().zip(b[j].iter().zip(a[i])) {
                *g += c * (yj - xi);
            }
            for (g, (xi, yj)) in grad_b[j].iter_mut().zip(a[i].iter().zip(b[j])) {
                *g += c * (xi - yj);
            }
        }
    }

    s_aa / (n * n) as f64 + s_bb / (m * m) as f64 - 2.0 * s_ab / (n * m) as f64
}

/// Median Euclidean distance over all point pairs; `None` with fewer than
/// two points.
pub fn median_pairwise_distance(points: &[Vec<f64>]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            dists.push(sq_dist(&points[i], &points[j]).sqrt());
        }
    }
    dists.sort_by(f64::total_cmp);
    Some(dists[dists.len() / 2])
}
