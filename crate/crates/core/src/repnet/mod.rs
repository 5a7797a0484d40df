//! Shared-representation outcome estimation: a joint representation stack
//! feeds two per-arm heads. With `alpha = 0` the objective is the factual
//! mean squared error alone (TARNet); with `alpha > 0` an RBF-kernel MMD
//! penalty between the arms' batch representations is added (CFR).

mod mmd;

pub use mmd::{median_pairwise_distance, mmd2_rbf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Encoder, FeatureMatrix};
use crate::learners::net::{OptimizerState, Stack, StackCache, StackGrads};
use crate::learners::{check_width, Activation, Optimizer};
use crate::tlearner::{OutcomePairModel, PairPredictor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RepNetConfig {
    /// Representation widths; the last entry is the representation size.
    pub rep_layers: Vec<usize>,
    /// Hidden widths of each head; the scalar output layer is implied.
    pub head_layers: Vec<usize>,
    pub activation: Activation,
    /// Imbalance penalty weight. 0 trains TARNet, positive trains CFR.
    pub alpha: f64,
    /// Kernel bandwidth; when absent, the median pairwise distance of
    /// initial representations (up to 500 rows) is used.
    pub mmd_sigma: Option<f64>,
    pub l2_penalty: f64,
    pub optimizer: Optimizer,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for RepNetConfig {
    fn default() -> Self {
        Self {
            rep_layers: vec![64, 64],
            head_layers: vec![32],
            activation: Activation::Relu,
            alpha: 0.0,
            mmd_sigma: None,
            l2_penalty: 1e-4,
            optimizer: Optimizer::Adam { learning_rate: 1e-3 },
            epochs: 100,
            batch_size: 128,
            seed: 0,
        }
    }
}

impl RepNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rep_layers.is_empty() {
            return Err(Error::Argument("rep_layers must be nonempty".into()));
        }
        if self.rep_layers.iter().chain(&self.head_layers).any(|&w| w == 0) {
            return Err(Error::Argument("layer widths must be positive".into()));
        }
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            return Err(Error::Argument("alpha must be finite and nonnegative".into()));
        }
        if let Some(s) = self.mmd_sigma {
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Argument("mmd_sigma must be positive".into()));
            }
        }
        if !(self.l2_penalty >= 0.0 && self.l2_penalty.is_finite()) {
            return Err(Error::Argument("l2_penalty must be finite and nonnegative".into()));
        }
        if self.epochs < 1 {
            return Err(Error::Argument("epochs must be at least 1".into()));
        }
        if self.batch_size < 1 {
            return Err(Error::Argument("batch_size must be at least 1".into()));
        }
        self.optimizer.validate()
    }
}

/// Per-epoch mean of the two loss components (penalty column is 0 when
/// `alpha = 0`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub factual_mse: f64,
    pub mmd2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepNetModel {
    pub(crate) rep: Stack,
    pub(crate) head0: Stack,
    pub(crate) head1: Stack,
    pub sigma: f64,
    pub alpha: f64,
    pub l2_penalty: f64,
    pub trace: Vec<TraceEntry>,
    pub seed: u64,
    pub encoder: Encoder,
}

impl RepNetModel {
    pub fn n_features(&self) -> usize {
        self.rep.in_dim()
    }

    pub fn rep_dim(&self) -> usize {
        self.rep.out_dim()
    }

    /// Both heads evaluated on every row of `data` after encoding.
    pub fn predict_pair(&self, data: &Dataset) -> Result<(Vec<f64>, Vec<f64>)> {
        let x = self.encoder.transform(data)?;
        self.predict_pair_features(&x)
    }

    pub fn predict_pair_features(&self, x: &FeatureMatrix) -> Result<(Vec<f64>, Vec<f64>)> {
        check_width(self.n_features(), x)?;
        let mut cache = StackCache::default();
        let mut mu0 = Vec::with_capacity(x.n_rows());
        let mut mu1 = Vec::with_capacity(x.n_rows());
        for i in 0..x.n_rows() {
            let rep = self.rep.forward_alloc(x.row(i));
            mu0.push(self.head0.forward(&rep, &mut cache)[0]);
            mu1.push(self.head1.forward(&rep, &mut cache)[0]);
        }
        Ok((mu0, mu1))
    }

    /// Representation vectors for every row of `x`.
    pub fn representations(&self, x: &FeatureMatrix) -> Result<Vec<Vec<f64>>> {
        check_width(self.n_features(), x)?;
        Ok((0..x.n_rows()).map(|i| self.rep.forward_alloc(x.row(i))).collect())
    }

    /// Flat parameters in (representation, head0, head1) order.
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        self.rep.append_params(&mut out);
        self.head0.append_params(&mut out);
        self.head1.append_params(&mut out);
        out
    }

    pub fn n_params(&self) -> usize {
        self.rep.n_params() + self.head0.n_params() + self.head1.n_params()
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.n_params() {
            return Err(Error::Argument(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                params.len()
            )));
        }
        let mut offset = 0;
        self.rep.read_params(params, &mut offset);
        self.head0.read_params(params, &mut offset);
        self.head1.read_params(params, &mut offset);
        Ok(())
    }

    /// Full-batch training objective (factual MSE + alpha * MMD^2 + l2
    /// penalty) and its exact gradient in the order of
    /// [`RepNetModel::parameters`]. With `alpha > 0` both arms must appear
    /// in the data.
    pub fn objective_and_gradient(
        &self,
        x: &FeatureMatrix,
        z: &[u8],
        y: &[f64],
    ) -> Result<(f64, Vec<f64>)> {
        check_width(self.n_features(), x)?;
        if z.len() != x.n_rows() || y.len() != x.n_rows() {
            return Err(Error::Argument("z and y must match the feature rows".into()));
        }
        let rows: Vec<usize> = (0..x.n_rows()).collect();
        if self.alpha > 0.0
            && (!z.iter().any(|&v| v == 0) || !z.iter().any(|&v| v == 1))
        {
            return Err(Error::Argument(
                "penalized objective needs both arms present".into(),
            ));
        }
        let mut ws = Workspace::new(self);
        let parts = batch_pass(
            &self.rep,
            &self.head0,
            &self.head1,
            self.sigma,
            self.alpha,
            self.l2_penalty,
            x,
            z,
            y,
            &rows,
            &mut ws,
        );
        let mut grads = Vec::with_capacity(self.n_params());
        Stack::append_grads(&ws.rep_grads, &mut grads);
        Stack::append_grads(&ws.h0_grads, &mut grads);
        Stack::append_grads(&ws.h1_grads, &mut grads);
        Ok((parts.total(), grads))
    }

    /// Wrap as a pair model for imputation and serialization.
    pub fn into_pair_model(self) -> OutcomePairModel {
        OutcomePairModel {
            model_id: if self.alpha > 0.0 { "repnet/cfr" } else { "repnet/tarnet" }.into(),
            fit_seed: self.seed,
            predictor: PairPredictor::RepNet(self),
        }
    }
}

struct Workspace {
    rep_caches: Vec<StackCache>,
    head_cache: StackCache,
    rep_grads: StackGrads,
    h0_grads: StackGrads,
    h1_grads: StackGrads,
    rep_outs: Vec<Vec<f64>>,
    rep_gradouts: Vec<Vec<f64>>,
}

impl Workspace {
    fn new(model: &RepNetModel) -> Self {
        Self {
            rep_caches: Vec::new(),
            head_cache: StackCache::default(),
            rep_grads: StackGrads::zeros_like(&model.rep),
            h0_grads: StackGrads::zeros_like(&model.head0),
            h1_grads: StackGrads::zeros_like(&model.head1),
            rep_outs: Vec::new(),
            rep_gradouts: Vec::new(),
        }
    }
}

struct LossParts {
    factual_mse: f64,
    mmd2: f64,
    alpha: f64,
    l2_term: f64,
}

impl LossParts {
    fn total(&self) -> f64 {
        self.factual_mse + self.alpha * self.mmd2 + self.l2_term
    }
}

/// One exact gradient accumulation over `batch`: factual squared error
/// through the per-arm head, plus the MMD penalty on the batch's
/// representations when `alpha > 0`. Gradients land in `ws`.
#[allow(clippy::too_many_arguments)]
fn batch_pass(
    rep: &Stack,
    head0: &Stack,
    head1: &Stack,
    sigma: f64,
    alpha: f64,
    l2: f64,
    x: &FeatureMatrix,
    z: &[u8],
    y: &[f64],
    batch: &[usize],
    ws: &mut Workspace,
) -> LossParts {
    let b = batch.len();
    let bf = b as f64;
    let rep_dim = rep.out_dim();
    ws.rep_grads.reset();
    ws.h0_grads.reset();
    ws.h1_grads.reset();
    if ws.rep_caches.len() < b {
        ws.rep_caches.resize_with(b, StackCache::default);
    }
    ws.rep_outs.resize(b, Vec::new());
    ws.rep_gradouts.resize(b, Vec::new());

    let mut sse = 0.0;
    for (bi, &r) in batch.iter().enumerate() {
        let rep_out = rep.forward(x.row(r), &mut ws.rep_caches[bi]);
        ws.rep_outs[bi].clear();
        ws.rep_outs[bi].extend_from_slice(rep_out);
        let rep_out = ws.rep_outs[bi].clone();

        let (head, head_grads) = if z[r] == 0 {
            (head0, &mut ws.h0_grads)
        } else {
            (head1, &mut ws.h1_grads)
        };
        let pred = head.forward(&rep_out, &mut ws.head_cache)[0];
        let err = pred - y[r];
        sse += err * err;
        ws.rep_gradouts[bi].resize(rep_dim, 0.0);
        head.backward(
            &ws.head_cache,
            &[2.0 * err / bf],
            head_grads,
            Some(&mut ws.rep_gradouts[bi]),
        );
    }

    let mut mmd2 = 0.0;
    if alpha > 0.0 {
        let g0: Vec<usize> = (0..b).filter(|&bi| z[batch[bi]] == 0).collect();
        let g1: Vec<usize> = (0..b).filter(|&bi| z[batch[bi]] == 1).collect();
        debug_assert!(!g0.is_empty() && !g1.is_empty(), "batches are stratified");
        let a_pts: Vec<&[f64]> = g0.iter().map(|&bi| ws.rep_outs[bi].as_slice()).collect();
        let b_pts: Vec<&[f64]> = g1.iter().map(|&bi| ws.rep_outs[bi].as_slice()).collect();
        let mut ga = vec![vec![0.0; rep_dim]; a_pts.len()];
        let mut gb = vec![vec![0.0; rep_dim]; b_pts.len()];
        mmd2 = mmd::mmd2_rbf_with_grad(&a_pts, &b_pts, sigma, &mut ga, &mut gb);
        for (k, &bi) in g0.iter().enumerate() {
            for (slot, g) in ws.rep_gradouts[bi].iter_mut().zip(&ga[k]) {
                *slot += alpha * g;
            }
        }
        for (k, &bi) in g1.iter().enumerate() {
            for (slot, g) in ws.rep_gradouts[bi].iter_mut().zip(&gb[k]) {
                *slot += alpha * g;
            }
        }
    }

    for (bi, _) in batch.iter().enumerate() {
        let gradout = std::mem::take(&mut ws.rep_gradouts[bi]);
        rep.backward(&ws.rep_caches[bi], &gradout, &mut ws.rep_grads, None);
        ws.rep_gradouts[bi] = gradout;
    }

    rep.add_l2_grad(l2, &mut ws.rep_grads);
    head0.add_l2_grad(l2, &mut ws.h0_grads);
    head1.add_l2_grad(l2, &mut ws.h1_grads);
    let l2_term = l2 * (rep.weight_sq_norm() + head0.weight_sq_norm() + head1.weight_sq_norm());

    LossParts {
        factual_mse: sse / bf,
        mmd2,
        alpha,
        l2_term,
    }
}

/// Split each arm's shuffled rows across batches so every batch holds at
/// least one row from each arm.
fn stratified_batches(
    g0: &[usize],
    g1: &[usize],
    batch_size: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<Vec<usize>> {
    let m = g0.len() + g1.len();
    let n_batches = m
        .div_ceil(batch_size)
        .clamp(1, g0.len().min(g1.len()));
    let mut a = g0.to_vec();
    let mut b = g1.to_vec();
    a.shuffle(rng);
    b.shuffle(rng);
    let mut batches = vec![Vec::new(); n_batches];
    for (src, dst_sizes) in [(&a, g0.len()), (&b, g1.len())] {
        let mut start = 0;
        for (k, batch) in batches.iter_mut().enumerate() {
            let end = dst_sizes * (k + 1) / n_batches;
            batch.extend_from_slice(&src[start..end]);
            start = end;
        }
    }
    batches
}

pub fn repnet_fit(train: &Dataset, config: &RepNetConfig) -> Result<RepNetModel> {
    config.validate()?;
    let g0 = train.group_rows(0);
    let g1 = train.group_rows(1);
    for (rows, name, z) in [(&g0, "control", 0), (&g1, "treated", 1)] {
        if rows.is_empty() {
            return Err(Error::Fit(format!("{name} group (z={z}) is empty")));
        }
    }

    let all_rows: Vec<usize> = (0..train.n_rows()).collect();
    let encoder = Encoder::fit(train, &all_rows, true)?;
    let x = encoder.transform(train)?;
    let y = train.outcome();
    let z = train.treatment();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let rep = Stack::new(x.n_cols(), &config.rep_layers, config.activation, true, &mut rng);
    let mut head_widths = config.head_layers.clone();
    head_widths.push(1);
    let head0 = Stack::new(rep.out_dim(), &head_widths, config.activation, false, &mut rng);
    let head1 = Stack::new(rep.out_dim(), &head_widths, config.activation, false, &mut rng);

    let sigma = match config.mmd_sigma {
        Some(s) => s,
        None => {
            let probe = 500.min(x.n_rows());
            let initial: Vec<Vec<f64>> = (0..probe).map(|i| rep.forward_alloc(x.row(i))).collect();
            match median_pairwise_distance(&initial) {
                Some(v) if v > 0.0 => v,
                _ => 1.0,
            }
        }
    };

    let mut model = RepNetModel {
        rep,
        head0,
        head1,
        sigma,
        alpha: config.alpha,
        l2_penalty: config.l2_penalty,
        trace: Vec::with_capacity(config.epochs),
        seed: config.seed,
        encoder,
    };

    let n_params = model.n_params();
    let mut opt = OptimizerState::new(&config.optimizer, n_params);
    let mut ws = Workspace::new(&model);
    let mut flat_params = Vec::with_capacity(n_params);
    let mut flat_grads = Vec::with_capacity(n_params);
    let mut plain_order: Vec<usize> = all_rows.clone();

    for epoch in 0..config.epochs {
        let batches: Vec<Vec<usize>> = if config.alpha > 0.0 {
            stratified_batches(&g0, &g1, config.batch_size, &mut rng)
        } else {
            plain_order.shuffle(&mut rng);
            plain_order.chunks(config.batch_size).map(|c| c.to_vec()).collect()
        };

        let mut epoch_mse = 0.0;
        let mut epoch_mmd = 0.0;
        for batch in &batches {
            let parts = batch_pass(
                &model.rep,
                &model.head0,
                &model.head1,
                model.sigma,
                model.alpha,
                model.l2_penalty,
                &x,
                z,
                y,
                batch,
                &mut ws,
            );
            epoch_mse += parts.factual_mse;
            epoch_mmd += parts.mmd2.max(0.0);

            flat_params.clear();
            model.rep.append_params(&mut flat_params);
            model.head0.append_params(&mut flat_params);
            model.head1.append_params(&mut flat_params);
            flat_grads.clear();
            Stack::append_grads(&ws.rep_grads, &mut flat_grads);
            Stack::append_grads(&ws.h0_grads, &mut flat_grads);
            Stack::append_grads(&ws.h1_grads, &mut flat_grads);
            opt.step(&mut flat_params, &flat_grads);
            let mut offset = 0;
            model.rep.read_params(&flat_params, &mut offset);
            model.head0.read_params(&flat_params, &mut offset);
            model.head1.read_params(&flat_params, &mut offset);
        }
        let nb = batches.len() as f64;
        let entry = TraceEntry {
            factual_mse: epoch_mse / nb,
            mmd2: epoch_mmd / nb,
        };
        if !(entry.factual_mse.is_finite() && entry.mmd2.is_finite()) {
            return Err(Error::Training {
                epoch,
                msg: format!(
                    "objective became non-finite (mse {}, mmd2 {})",
                    entry.factual_mse, entry.mmd2
                ),
            });
        }
        model.trace.push(entry);
    }

    Ok(model)
}
