//! Multilayer perceptron regressor: configurable hidden widths, rectifier
//! or tanh activations, linear output, squared-error loss plus an optional
//! l2 weight penalty (biases unpenalized), trained by mini-batch SGD or
//! Adam on shuffled batches.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::FeatureMatrix;
use crate::{Error, Result};

use super::net::{OptimizerState, Stack, StackCache, StackGrads};
use super::{check_width, check_xy, MlpParams};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel {
    pub(crate) stack: Stack,
    /// Mean training objective per epoch.
    pub loss_trace: Vec<f64>,
    pub seed: u64,
    pub l2_penalty: f64,
}

impl MlpModel {
    pub fn n_features(&self) -> usize {
        self.stack.in_dim()
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        let mut cache = StackCache::default();
        (0..x.n_rows())
            .map(|i| self.stack.forward(x.row(i), &mut cache)[0])
            .collect()
    }

    /// Flat view of all weights and biases, layer by layer.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.stack.n_params());
        self.stack.append_params(&mut out);
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.stack.n_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.stack.n_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        self.stack.read_params(params, &mut offset);
        Ok(())
    }

    /// Full-batch training objective and its exact gradient in the flat
    /// parameter order of [`MlpModel::parameters`].
    pub fn loss_and_gradient(&self, x: &FeatureMatrix, y: &[f64]) -> Result<(f64, Vec<f64>)> {
        check_xy(x, y)?;
        check_width(self.n_features(), x)?;
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        let mut grads = StackGrads::zeros_like(&self.stack);
        let mut cache = StackCache::default();
        let loss = batch_objective(&self.stack, x, y, &rows, self.l2_penalty, &mut grads, &mut cache);
        let mut flat = Vec::with_capacity(self.stack.n_params());
        Stack::append_grads(&grads, &mut flat);
        Ok((loss, flat))
    }
}

/// Mean squared error over `rows` plus the l2 weight penalty; gradients are
/// accumulated into `grads` (reset first).
fn batch_objective(
    stack: &Stack,
    x: &FeatureMatrix,
    y: &[f64],
    rows: &[usize],
    l2: f64,
    grads: &mut StackGrads,
    cache: &mut StackCache,
) -> f64 {
    grads.reset();
    let b = rows.len() as f64;
    let mut sse = 0.0;
    for &r in rows {
        let out = stack.forward(x.row(r), cache)[0];
        let err = out - y[r];
        sse += err * err;
        stack.backward(cache, &[2.0 * err / b], grads, None);
    }
    stack.add_l2_grad(l2, grads);
    sse / b + l2 * stack.weight_sq_norm()
}

pub fn mlp_fit(x: &FeatureMatrix, y: &[f64], params: &MlpParams) -> Result<MlpModel> {
    params.validate()?;
    check_xy(x, y)?;
    if x.n_cols() == 0 {
        return Err(Error::Argument("fit needs at least one feature".into()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut widths = params.layer_widths.clone();
    widths.push(1);
    let mut stack = Stack::new(x.n_cols(), &widths, params.activation, false, &mut rng);

    let n_params = stack.n_params();
    let mut opt = OptimizerState::new(&params.optimizer, n_params);
    let mut grads = StackGrads::zeros_like(&stack);
    let mut cache = StackCache::default();
    let mut flat_params = Vec::with_capacity(n_params);
    let mut flat_grads = Vec::with_capacity(n_params);
    let mut order: Vec<usize> = (0..x.n_rows()).collect();
    let mut loss_trace = Vec::with_capacity(params.epochs);

    for epoch in 0..params.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for batch in order.chunks(params.batch_size) {
            let loss = batch_objective(&stack, x, y, batch, params.l2_penalty, &mut grads, &mut cache);
            epoch_loss += loss;
            n_batches += 1;

            flat_params.clear();
            stack.append_params(&mut flat_params);
            flat_grads.clear();
            Stack::append_grads(&grads, &mut flat_grads);
            opt.step(&mut flat_params, &flat_grads);
            let mut offset = 0;
            stack.read_params(&flat_params, &mut offset);
        }
        epoch_loss /= n_batches as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Training {
                epoch,
                msg: format!("objective became non-finite ({epoch_loss})"),
            });
        }
        loss_trace.push(epoch_loss);
    }

    Ok(MlpModel {
        stack,
        loss_trace,
        seed: params.seed,
        l2_penalty: params.l2_penalty,
    })
}
