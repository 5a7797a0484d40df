//! Greedy binary CART for weighted least squares.
//!
//! Split search scans features in ascending index and thresholds in
//! ascending value, keeping the first strict maximum of the weighted
//! variance reduction; thresholds are midpoints between consecutive
//! distinct sorted values. A split is admissible only when both children
//! keep `min_leaf_rows` rows and, when school codes are supplied, at least
//! `min_leaf_schools` distinct schools each.

use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::{Error, Result};

use super::{check_xy, TreeParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
        n_rows: usize,
        /// Distinct schools among the leaf's training rows; 0 when school
        /// codes were not supplied at fit time.
        n_schools: usize,
    },
}

/// Nodes in depth-first preorder; node 0 is the root. Rows route left when
/// `row[feature] <= threshold`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<TreeNode>,
    pub n_features: usize,
}

impl TreeModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        match &self.nodes[self.leaf_for_row(row)] {
            TreeNode::Leaf { value, .. } => *value,
            TreeNode::Split { .. } => unreachable!("leaf_for_row returns a leaf"),
        }
    }

    /// Node id of the leaf that `row` routes to.
    pub fn leaf_for_row(&self, row: &[f64]) -> usize {
        let mut id = 0;
        loop {
            match &self.nodes[id] {
                TreeNode::Leaf { .. } => return id,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    id = if row[*feature] <= *threshold { *left } else { *right };
                }
            }
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        (0..x.n_rows()).map(|i| self.predict_row(x.row(i))).collect()
    }

    /// Leaf node ids in depth-first preorder.
    pub fn leaf_ids(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n, TreeNode::Leaf { .. }))
            .map(|(i, _)| i)
            .collect()
    }

    /// Feature index of every internal split.
    pub fn split_features(&self) -> Vec<usize> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreeNode::Split { feature, .. } => Some(*feature),
                TreeNode::Leaf { .. } => None,
            })
            .collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], id: usize) -> usize {
            match &nodes[id] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left).max(walk(nodes, *right))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

struct Builder<'a> {
    x: &'a FeatureMatrix,
    y: &'a [f64],
    w: &'a [f64],
    schools: Option<&'a [u32]>,
    n_school_codes: usize,
    params: &'a TreeParams,
    n_try: usize,
    rng: Option<ChaCha8Rng>,
    nodes: Vec<TreeNode>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    left_rows: Vec<usize>,
    right_rows: Vec<usize>,
}

impl<'a> Builder<'a> {
    fn node_school_counts(&self, rows: &[usize]) -> Option<(Vec<u32>, usize)> {
        let schools = self.schools?;
        let mut counts = vec![0u32; self.n_school_codes];
        let mut distinct = 0usize;
        for &r in rows {
            let c = schools[r] as usize;
            if counts[c] == 0 {
                distinct += 1;
            }
            counts[c] += 1;
        }
        Some((counts, distinct))
    }

    fn candidate_features(&mut self) -> Vec<usize> {
        let p = self.x.n_cols();
        match &mut self.rng {
            Some(rng) if self.n_try < p => {
                let mut chosen = rand::seq::index::sample(rng, p, self.n_try).into_vec();
                chosen.sort_unstable();
                chosen
            }
            _ => (0..p).collect(),
        }
    }

    fn best_split(&mut self, rows: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let min_rows = self.params.min_leaf_rows;
        if n < 2 * min_rows {
            return None;
        }
        let node_schools = self.node_school_counts(rows);
        if let Some((_, distinct)) = &node_schools {
            if *distinct < self.params.min_leaf_schools {
                return None;
            }
        }
        let first = self.y[rows[0]];
        if rows.iter().all(|&r| self.y[r] == first) {
            return None;
        }

        let w_total: f64 = rows.iter().map(|&r| self.w[r]).sum();
        let wy_total: f64 = rows.iter().map(|&r| self.w[r] * self.y[r]).sum();
        let wy2_total: f64 = rows.iter().map(|&r| self.w[r] * self.y[r] * self.y[r]).sum();
        if w_total <= 0.0 {
            return None;
        }
        let sse_node = wy2_total - wy_total * wy_total / w_total;

        let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
        let mut sorted: Vec<(f64, usize)> = Vec::with_capacity(n);
        for feature in self.candidate_features() {
            sorted.clear();
            sorted.extend(rows.iter().map(|&r| (self.x.row(r)[feature], r)));
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            if sorted[0].0 == sorted[n - 1].0 {
                continue;
            }

            let mut w_l = 0.0;
            let mut wy_l = 0.0;
            let mut wy2_l = 0.0;
            let mut left_school_counts = node_schools
                .as_ref()
                .map(|_| vec![0u32; self.n_school_codes]);
            let mut right_school_counts = node_schools.as_ref().map(|(c, _)| c.clone());
            let mut distinct_l = 0usize;
            let mut distinct_r = node_schools.as_ref().map_or(0, |(_, d)| *d);

            for k in 0..n - 1 {
                let (v, r) = sorted[k];
                let wr = self.w[r];
                w_l += wr;
                wy_l += wr * self.y[r];
                wy2_l += wr * self.y[r] * self.y[r];
                if let (Some(lc), Some(rc), Some(schools)) = (
                    left_school_counts.as_mut(),
                    right_school_counts.as_mut(),
                    self.schools,
                ) {
                    let c = schools[r] as usize;
                    if lc[c] == 0 {
                        distinct_l += 1;
                    }
                    lc[c] += 1;
                    rc[c] -= 1;
                    if rc[c] == 0 {
                        distinct_r -= 1;
                    }
                }

                let v_next = sorted[k + 1].0;
                if v == v_next {
                    continue;
                }
                let n_l = k + 1;
                let n_r = n - n_l;
                if n_l < min_rows || n_r < min_rows {
                    continue;
                }
                if node_schools.is_some()
                    && (distinct_l < self.params.min_leaf_schools
                        || distinct_r < self.params.min_leaf_schools)
                {
                    continue;
                }
                let w_r = w_total - w_l;
                if w_l <= 0.0 || w_r <= 0.0 {
                    continue;
                }
                let wy_r = wy_total - wy_l;
                let wy2_r = wy2_total - wy2_l;
                let sse_l = wy2_l - wy_l * wy_l / w_l;
                let sse_r = wy2_r - wy_r * wy_r / w_r;
                let gain = sse_node - sse_l - sse_r;
                if !gain.is_finite() || gain <= 0.0 {
                    continue;
                }
                if best.as_ref().is_none_or(|(g, _, _)| gain > *g) {
                    let mut t = 0.5 * (v + v_next);
                    if t >= v_next {
                        t = v;
                    }
                    best = Some((gain, feature, t));
                }
            }
        }

        best.map(|(_, feature, threshold)| {
            let mut left_rows = Vec::new();
            let mut right_rows = Vec::new();
            for &r in rows {
                if self.x.row(r)[feature] <= threshold {
                    left_rows.push(r);
                } else {
                    right_rows.push(r);
                }
            }
            BestSplit {
                feature,
                threshold,
                left_rows,
                right_rows,
            }
        })
    }

    fn leaf(&mut self, rows: &[usize]) -> usize {
        let w_total: f64 = rows.iter().map(|&r| self.w[r]).sum();
        let wy: f64 = rows.iter().map(|&r| self.w[r] * self.y[r]).sum();
        let value = if w_total > 0.0 {
            wy / w_total
        } else {
            rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64
        };
        let n_schools = self.node_school_counts(rows).map_or(0, |(_, d)| d);
        let id = self.nodes.len();
        self.nodes.push(TreeNode::Leaf {
            value,
            n_rows: rows.len(),
            n_schools,
        });
        id
    }

    fn grow(&mut self, rows: Vec<usize>, depth: usize) -> usize {
        if depth >= self.params.max_depth {
            return self.leaf(&rows);
        }
        match self.best_split(&rows) {
            None => self.leaf(&rows),
            Some(split) => {
                let id = self.nodes.len();
                self.nodes.push(TreeNode::Leaf {
                    value: 0.0,
                    n_rows: 0,
                    n_schools: 0,
                });
                let left = self.grow(split.left_rows, depth + 1);
                let right = self.grow(split.right_rows, depth + 1);
                self.nodes[id] = TreeNode::Split {
                    feature: split.feature,
                    threshold: split.threshold,
                    left,
                    right,
                };
                id
            }
        }
    }
}

/// Fit on all rows with every feature eligible at each split.
pub fn tree_fit(
    x: &FeatureMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    schools: Option<&[u32]>,
    params: &TreeParams,
) -> Result<TreeModel> {
    let rows: Vec<usize> = (0..x.n_rows()).collect();
    tree_fit_rows(x, y, weights, schools, params, rows, None, x.n_cols())
}

/// Fit on a chosen multiset of rows, optionally sampling `n_try` features
/// per split from `rng`. Row order and duplicates are honored as given.
#[allow(clippy::too_many_arguments)]
pub(crate) fn tree_fit_rows(
    x: &FeatureMatrix,
    y: &[f64],
    weights: Option<&[f64]>,
    schools: Option<&[u32]>,
    params: &TreeParams,
    rows: Vec<usize>,
    rng: Option<ChaCha8Rng>,
    n_try: usize,
) -> Result<TreeModel> {
    params.validate()?;
    check_xy(x, y)?;
    if rows.is_empty() {
        return Err(Error::Argument("fit needs at least one row".into()));
    }
    if x.n_cols() == 0 {
        return Err(Error::Argument("fit needs at least one feature".into()));
    }
    let ones;
    let w = match weights {
        Some(w) => {
            if w.len() != x.n_rows() {
                return Err(Error::Argument("weights length must match rows".into()));
            }
            if w.iter().any(|v| !v.is_finite() || *v < 0.0) {
                return Err(Error::Argument("weights must be finite and nonnegative".into()));
            }
            w
        }
        None => {
            ones = vec![1.0; x.n_rows()];
            &ones
        }
    };
    if let Some(s) = schools {
        if s.len() != x.n_rows() {
            return Err(Error::Argument("school codes length must match rows".into()));
        }
    }
    let n_school_codes = schools
        .map(|s| s.iter().copied().max().map_or(0, |m| m as usize + 1))
        .unwrap_or(0);

    let mut builder = Builder {
        x,
        y,
        w,
        schools,
        n_school_codes,
        params,
        n_try: n_try.max(1),
        rng,
        nodes: Vec::new(),
    };
    builder.grow(rows, 0);
    Ok(TreeModel {
        nodes: builder.nodes,
        n_features: x.n_cols(),
    })
}
