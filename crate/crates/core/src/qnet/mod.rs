//! Recurrent Q-network.
//!
//! ```text
//! market window (W × F) ─ LSTM1 ─ LSTM2 ─ last hidden ─┐
//!                                                      ├─ concat ─ dense+ReLU ─ dense+ReLU ─ head → Q(s, ·)
//! position [L, S, PnL] ── dense+ReLU ──────────────────┘
//! ```
//!
//! LSTM1 feeds its full hidden sequence into LSTM2; only LSTM2's final
//! hidden state enters the merge. The head is linear by default, or softmax.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod layers;

use rand::distributions::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;
use crate::market::N_FEATURES;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use checkpoint::{load_binary, load_json, save_binary, save_json, CHECKPOINT_VERSION};
pub use layers::{Dense, Lstm, LstmCache};

pub const POSITION_INPUTS: usize = 3;
pub const N_ACTIONS: usize = 3;

#[derive(Debug, Error)]
pub enum QNetError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("backward called without a cached forward pass")]
    NoForwardCache,
    #[error("soft update rate {0} outside [0, 1]")]
    Tau(f64),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadActivation {
    #[default]
    Linear,
    Softmax,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetDims {
    pub features: usize,
    pub lstm1: usize,
    pub lstm2: usize,
    pub position: usize,
    pub merge1: usize,
    pub merge2: usize,
}

impl Default for NetDims {
    fn default() -> Self {
        Self {
            features: N_FEATURES,
            lstm1: 32,
            lstm2: 16,
            position: 8,
            merge1: 32,
            merge2: 16,
        }
    }
}

/// Action values indexed by action code.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QValues(pub [f64; N_ACTIONS]);

impl QValues {
    /// Highest-valued action; ties go to the lowest action code.
    pub fn argmax(&self) -> Action {
        let mut best = 0;
        for i in 1..N_ACTIONS {
            if self.0[i] > self.0[best] {
                best = i;
            }
        }
        Action::ALL[best]
    }

    pub fn get(&self, action: Action) -> f64 {
        self.0[action.index()]
    }

    pub fn max(&self) -> f64 {
        self.get(self.argmax())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub dims: NetDims,
    pub head_activation: HeadActivation,
    pub lstm1: Lstm,
    pub lstm2: Lstm,
    pub pos_dense: Dense,
    pub merge_dense1: Dense,
    pub merge_dense2: Dense,
    pub head: Dense,
}

pub(crate) const TENSOR_NAMES: [&str; 14] = [
    "lstm1.w_ih",
    "lstm1.w_hh",
    "lstm1.b",
    "lstm2.w_ih",
    "lstm2.w_hh",
    "lstm2.b",
    "pos_dense.w",
    "pos_dense.b",
    "merge_dense1.w",
    "merge_dense1.b",
    "merge_dense2.w",
    "merge_dense2.b",
    "head.w",
    "head.b",
];

impl NetworkParams {
    pub fn zeros(dims: NetDims, head_activation: HeadActivation) -> Self {
        Self {
            dims,
            head_activation,
            lstm1: Lstm::zeros(dims.features, dims.lstm1),
            lstm2: Lstm::zeros(dims.lstm1, dims.lstm2),
            pos_dense: Dense::zeros(POSITION_INPUTS, dims.position),
            merge_dense1: Dense::zeros(dims.lstm2 + dims.position, dims.merge1),
            merge_dense2: Dense::zeros(dims.merge1, dims.merge2),
            head: Dense::zeros(dims.merge2, N_ACTIONS),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.dims, self.head_activation)
    }

    /// Shape `[rows, cols]` of every tensor, in [`TENSOR_NAMES`] order.
    pub fn shapes(&self) -> [Vec<usize>; 14] {
        let lstm = |l: &Lstm| {
            [
                vec![4 * l.hidden, l.n_in],
                vec![4 * l.hidden, l.hidden],
                vec![4 * l.hidden],
            ]
        };
        let dense = |d: &Dense| [vec![d.n_out, d.n_in], vec![d.n_out]];
        let [a, b, c] = lstm(&self.lstm1);
        let [d, e, f] = lstm(&self.lstm2);
        let [g, h] = dense(&self.pos_dense);
        let [i, j] = dense(&self.merge_dense1);
        let [k, l] = dense(&self.merge_dense2);
        let [m, n] = dense(&self.head);
        [a, b, c, d, e, f, g, h, i, j, k, l, m, n]
    }

    pub fn tensors(&self) -> [&[f64]; 14] {
        [
            &self.lstm1.w_ih,
            &self.lstm1.w_hh,
            &self.lstm1.b,
            &self.lstm2.w_ih,
            &self.lstm2.w_hh,
            &self.lstm2.b,
            &self.pos_dense.w,
            &self.pos_dense.b,
            &self.merge_dense1.w,
            &self.merge_dense1.b,
            &self.merge_dense2.w,
            &self.merge_dense2.b,
            &self.head.w,
            &self.head.b,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut [f64]; 14] {
        [
            &mut self.lstm1.w_ih,
            &mut self.lstm1.w_hh,
            &mut self.lstm1.b,
            &mut self.lstm2.w_ih,
            &mut self.lstm2.w_hh,
            &mut self.lstm2.b,
            &mut self.pos_dense.w,
            &mut self.pos_dense.b,
            &mut self.merge_dense1.w,
            &mut self.merge_dense1.b,
            &mut self.merge_dense2.w,
            &mut self.merge_dense2.b,
            &mut self.head.w,
            &mut self.head.b,
        ]
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.tensors().into_iter().flatten()
    }

    /// Checks that every tensor agrees with `dims`.
    pub fn validate(&self) -> Result<(), QNetError> {
        let expected = Self::zeros(self.dims, self.head_activation);
        for ((name, shape), (a, b)) in TENSOR_NAMES
            .iter()
            .zip(expected.shapes())
            .zip(self.tensors().iter().zip(expected.tensors()))
        {
            if a.len() != b.len() {
                return Err(QNetError::Shape(format!(
                    "{name}: expected {shape:?} ({} values), got {}",
                    b.len(),
                    a.len()
                )));
            }
        }
        let layer_dims_ok = self.lstm1.n_in == self.dims.features
            && self.lstm1.hidden == self.dims.lstm1
            && self.lstm2.n_in == self.dims.lstm1
            && self.lstm2.hidden == self.dims.lstm2
            && self.pos_dense.n_in == POSITION_INPUTS
            && self.pos_dense.n_out == self.dims.position
            && self.merge_dense1.n_in == self.dims.lstm2 + self.dims.position
            && self.merge_dense1.n_out == self.dims.merge1
            && self.merge_dense2.n_in == self.dims.merge1
            && self.merge_dense2.n_out == self.dims.merge2
            && self.head.n_in == self.dims.merge2
            && self.head.n_out == N_ACTIONS;
        if !layer_dims_ok {
            return Err(QNetError::Shape(
                "layer dimensions disagree with dims".into(),
            ));
        }
        Ok(())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.dims == other.dims
    }

    pub fn forward(
        &self,
        market: &[f64],
        position: &[f64; POSITION_INPUTS],
    ) -> Result<QValues, QNetError> {
        self.forward_cached(market, position).map(|(q, _)| q)
    }

    pub fn forward_cached(
        &self,
        market: &[f64],
        position: &[f64; POSITION_INPUTS],
    ) -> Result<(QValues, ForwardCache), QNetError> {
        let f = self.dims.features;
        if market.is_empty() || !market.len().is_multiple_of(f) {
            return Err(QNetError::Shape(format!(
                "market input of {} values is not a non-empty multiple of {f} features",
                market.len()
            )));
        }
        let rows: Vec<Vec<f64>> = market.chunks_exact(f).map(<[f64]>::to_vec).collect();

        let l1 = self.lstm1.forward(rows);
        let l2 = self.lstm2.forward(l1.hidden.clone());
        let h_last = l2.hidden.last().expect("at least one step").clone();

        let pos_pre = self.pos_dense.forward(position);
        let pos_act = relu(&pos_pre);

        let mut merged = h_last;
        merged.extend_from_slice(&pos_act);
        let m1_pre = self.merge_dense1.forward(&merged);
        let m1_act = relu(&m1_pre);
        let m2_pre = self.merge_dense2.forward(&m1_act);
        let m2_act = relu(&m2_pre);
        let head_pre = self.head.forward(&m2_act);

        let out: [f64; N_ACTIONS] = match self.head_activation {
            HeadActivation::Linear => [head_pre[0], head_pre[1], head_pre[2]],
            HeadActivation::Softmax => softmax(&head_pre),
        };

        let cache = ForwardCache {
            lstm1: l1,
            lstm2: l2,
            position: *position,
            pos_pre,
            merged,
            m1_pre,
            m1_act,
            m2_pre,
            m2_act,
            output: out,
        };
        Ok((QValues(out), cache))
    }

    /// Gradient of `⟨output_grad, forward(·)⟩` with respect to every parameter.
    pub fn backward(&self, cache: &ForwardCache, output_grad: &[f64; N_ACTIONS]) -> NetworkParams {
        let mut grad = self.zeros_like();

        let d_head_pre: Vec<f64> = match self.head_activation {
            HeadActivation::Linear => output_grad.to_vec(),
            HeadActivation::Softmax => {
                let s = &cache.output;
                let dot: f64 = s.iter().zip(output_grad).map(|(a, b)| a * b).sum();
                s.iter()
                    .zip(output_grad)
                    .map(|(si, gi)| si * (gi - dot))
                    .collect()
            }
        };

        let d_m2_act = self
            .head
            .backward(&cache.m2_act, &d_head_pre, &mut grad.head);
        let d_m2_pre = relu_backward(&cache.m2_pre, &d_m2_act);
        let d_m1_act = self
            .merge_dense2
            .backward(&cache.m1_act, &d_m2_pre, &mut grad.merge_dense2);
        let d_m1_pre = relu_backward(&cache.m1_pre, &d_m1_act);
        let d_merged = self
            .merge_dense1
            .backward(&cache.merged, &d_m1_pre, &mut grad.merge_dense1);

        let (d_h_last, d_pos_act) = d_merged.split_at(self.dims.lstm2);
        let d_pos_pre = relu_backward(&cache.pos_pre, d_pos_act);
        self.pos_dense
            .backward(&cache.position, &d_pos_pre, &mut grad.pos_dense);

        let steps = cache.lstm2.hidden.len();
        let mut dh2 = vec![vec![0.0; self.dims.lstm2]; steps];
        dh2[steps - 1].copy_from_slice(d_h_last);
        let dh1 = self.lstm2.backward(&cache.lstm2, &dh2, &mut grad.lstm2);
        self.lstm1.backward(&cache.lstm1, &dh1, &mut grad.lstm1);

        grad
    }
}

/// Intermediate activations of one forward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    lstm1: LstmCache,
    lstm2: LstmCache,
    position: [f64; POSITION_INPUTS],
    pos_pre: Vec<f64>,
    merged: Vec<f64>,
    m1_pre: Vec<f64>,
    m1_act: Vec<f64>,
    m2_pre: Vec<f64>,
    m2_act: Vec<f64>,
    output: [f64; N_ACTIONS],
}

impl ForwardCache {
    pub fn output(&self) -> QValues {
        QValues(self.output)
    }
}

/// Holds the most recent forward pass so that `backward` can follow it.
#[derive(Debug, Default)]
pub struct ForwardContext {
    cache: Option<ForwardCache>,
}

impl ForwardContext {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn forward(
        &mut self,
        params: &NetworkParams,
        market: &[f64],
        position: &[f64; POSITION_INPUTS],
    ) -> Result<QValues, QNetError> {
        let (q, cache) = params.forward_cached(market, position)?;
        self.cache = Some(cache);
        Ok(q)
    }

    pub fn backward(
        &self,
        params: &NetworkParams,
        output_grad: &[f64; N_ACTIONS],
    ) -> Result<NetworkParams, QNetError> {
        let cache = self.cache.as_ref().ok_or(QNetError::NoForwardCache)?;
        Ok(params.backward(cache, output_grad))
    }
}

fn relu(x: &[f64]) -> Vec<f64> {
    x.iter().map(|v| v.max(0.0)).collect()
}

fn relu_backward(pre: &[f64], dy: &[f64]) -> Vec<f64> {
    pre.iter()
        .zip(dy)
        .map(|(p, d)| if *p > 0.0 { *d } else { 0.0 })
        .collect()
}

fn softmax(x: &[f64]) -> [f64; N_ACTIONS] {
    let m = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - m).exp()).collect();
    let sum: f64 = e.iter().sum();
    [e[0] / sum, e[1] / sum, e[2] / sum]
}

/// Uniform `[-1/√fan_in, 1/√fan_in]` weights, zero biases, LSTM forget-gate
/// bias 1. Deterministic in `seed`.
pub fn init_params(dims: NetDims, head_activation: HeadActivation, seed: u64) -> NetworkParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = NetworkParams::zeros(dims, head_activation);

    let mut fill = |w: &mut [f64], fan_in: usize| {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        for v in w {
            *v = dist.sample(&mut rng);
        }
    };
    for lstm in [&mut p.lstm1, &mut p.lstm2] {
        fill(&mut lstm.w_ih, lstm.n_in);
        fill(&mut lstm.w_hh, lstm.hidden);
        lstm.b[lstm.hidden..2 * lstm.hidden].fill(1.0);
    }
    for dense in [
        &mut p.pos_dense,
        &mut p.merge_dense1,
        &mut p.merge_dense2,
        &mut p.head,
    ] {
        fill(&mut dense.w, dense.n_in);
    }
    p
}

/// `target ← (1 − τ)·target + τ·online`, elementwise.
pub fn soft_update(
    target: &mut NetworkParams,
    online: &NetworkParams,
    tau: f64,
) -> Result<(), QNetError> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(QNetError::Tau(tau));
    }
    if !target.same_shape(online) {
        return Err(QNetError::Shape(
            "soft update between different shapes".into(),
        ));
    }
    for (t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
        for (a, b) in t.iter_mut().zip(o) {
            *a = (1.0 - tau) * *a + tau * b;
        }
    }
    Ok(())
}
