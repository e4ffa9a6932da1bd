//! Reinforced fractal probabilities.
//!
//! Rewards follow the entropy-gain / inverse-previous-reward rule, rewards
//! become transformation probabilities by floored normalization, and a
//! small feed-forward value network regresses the observed reward of each
//! transformation from state features so that probabilities can be
//! predicted for unseen states.

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::explorer::TransformKind;
use crate::gateway::{cosine, Embedder, GatewayError};

/// Rewards below this are floored before normalization; also the minimum
/// magnitude of a previous reward before it is inverted.
pub const REWARD_FLOOR: f64 = 1e-3;
/// Number of discrete states; the index is clamped to `[0, STATE_BUCKETS - 1]`.
pub const STATE_BUCKETS: usize = 64;
pub const FEATURE_LEN: usize = 3;
pub const DEFAULT_OMEGA: f64 = 0.5;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("feature length {got} does not match network input {want}")]
    Shape { got: usize, want: usize },
    #[error("dataset has {got} samples, fewer than the batch size {batch}")]
    DatasetTooSmall { got: usize, batch: usize },
    #[error("training diverged at epoch {epoch}: loss {loss} (learning rate {learning_rate})")]
    Diverged { epoch: usize, loss: f64, learning_rate: f64 },
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("checkpoint is malformed: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

/// Reward of one exploration step.
///
/// With every response clean (`sig_product != 0`) the reward is the entropy
/// gain `h_cur - h_prev`. Otherwise it is `|1 / r_prev|`, where `r_prev`
/// is pushed away from zero to at least [`REWARD_FLOOR`] in magnitude.
pub fn reward(h_prev: f64, h_cur: f64, sig_product: u8, r_prev: f64) -> f64 {
    if sig_product != 0 {
        h_cur - h_prev
    } else {
        let guarded = if r_prev.abs() < REWARD_FLOOR { REWARD_FLOOR } else { r_prev };
        (1.0 / guarded).abs()
    }
}

/// Reward of a step with no predecessor.
pub const INITIAL_REWARD: f64 = 1.0;

/// `p_j = R_j / sum_k R_k` after flooring each reward at [`REWARD_FLOOR`].
pub fn probabilities_from_rewards(rewards: [f64; 3]) -> [f64; 3] {
    let floored = rewards.map(|r| if r.is_nan() || r < REWARD_FLOOR { REWARD_FLOOR } else { r.min(f64::MAX / 4.0) });
    let total: f64 = floored.iter().sum();
    floored.map(|r| r / total)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateFeatures {
    pub index: usize,
    pub features: Vec<f64>,
}

/// Discretized state from the drift away from the seed query and the
/// current entropy: `index = floor(drift * e^h / omega)` clamped to 63.
pub fn state_from_drift(drift: f64, h: f64, omega: f64) -> StateFeatures {
    assert!(omega > 0.0, "omega must be positive");
    let raw = drift.max(0.0) * h.exp() / omega;
    // Guard against exp/ln round-off pushing exact integers just below.
    let index = ((raw + 1e-9).floor().max(0.0) as usize).min(STATE_BUCKETS - 1);
    StateFeatures {
        index,
        features: vec![index as f64 / (STATE_BUCKETS - 1) as f64, drift, h],
    }
}

/// Drift is `1 - cosine(embed(seed), embed(query))`.
pub fn state_features(
    seed_query: &str,
    query: &str,
    h: f64,
    omega: f64,
    embedder: &dyn Embedder,
) -> Result<StateFeatures, GatewayError> {
    let drift = 1.0 - cosine(&embedder.embed(seed_query)?, &embedder.embed(query)?);
    Ok(state_from_drift(drift, h, omega))
}

/// One training quadruple plus the fields needed to regress its reward.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicySample {
    pub query: String,
    pub responses: Vec<String>,
    pub h_prev: f64,
    pub h_cur: f64,
    pub sig_product: u8,
    pub reward: f64,
    pub p_target: [f64; 3],
    pub state_features: Vec<f64>,
    pub transform: TransformKind,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    #[serde(default = "default_lr")]
    pub learning_rate: f64,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_epochs")]
    pub max_epochs: usize,
    #[serde(default)]
    pub rng_seed: u64,
    #[serde(default = "default_omega")]
    pub omega: f64,
}

fn default_lr() -> f64 {
    1e-4
}
fn default_batch() -> usize {
    64
}
fn default_epochs() -> usize {
    300
}
fn default_omega() -> f64 {
    DEFAULT_OMEGA
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: default_lr(),
            batch_size: default_batch(),
            max_epochs: default_epochs(),
            rng_seed: 0,
            omega: default_omega(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
struct Dense {
    inputs: usize,
    outputs: usize,
    /// Row-major `outputs x inputs`.
    weights: Vec<f64>,
    bias: Vec<f64>,
}

impl Dense {
    fn apply(&self, x: &[f64]) -> Vec<f64> {
        (0..self.outputs)
            .map(|o| {
                let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
                self.bias[o] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
            })
            .collect()
    }
}

/// Feed-forward network `features -> 64 -> 64 -> 3`, rectifier on hidden
/// layers, identity on the output. One output per [`TransformKind`].
#[derive(Clone, Debug, PartialEq)]
pub struct ValueNetwork {
    layers: Vec<Dense>,
    pub seed: u64,
    pub epochs_trained: usize,
}

pub const HIDDEN: [usize; 2] = [64, 64];

/// Output bias at initialization: an untrained network values every
/// transformation at about the initial reward.
pub const INITIAL_VALUE: f64 = INITIAL_REWARD;

impl ValueNetwork {
    pub fn new(inputs: usize, seed: u64) -> Self {
        Self::with_layers(&[inputs, HIDDEN[0], HIDDEN[1], 3], seed)
    }

    /// Arbitrary layer sizes; the last must be 3. He-uniform weights, zero
    /// hidden biases and output biases of [`INITIAL_VALUE`].
    pub fn with_layers(sizes: &[usize], seed: u64) -> Self {
        assert!(sizes.len() >= 2 && sizes[sizes.len() - 1] == 3, "output layer must have 3 units");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let bound = (6.0 / w[0] as f64).sqrt();
                Dense {
                    inputs: w[0],
                    outputs: w[1],
                    weights: (0..w[0] * w[1]).map(|_| rng.random_range(-bound..bound)).collect(),
                    bias: vec![if i == last { INITIAL_VALUE } else { 0.0 }; w[1]],
                }
            })
            .collect();
        Self { layers, seed, epochs_trained: 0 }
    }

    pub fn zeros(sizes: &[usize]) -> Self {
        let mut net = Self::with_layers(sizes, 0);
        net.set_params(&vec![0.0; net.param_count()]);
        net
    }

    pub fn layer_sizes(&self) -> Vec<usize> {
        std::iter::once(self.layers[0].inputs)
            .chain(self.layers.iter().map(|l| l.outputs))
            .collect()
    }

    pub fn input_len(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Parameters flattened layer by layer, weights before biases.
    pub fn params(&self) -> Vec<f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.bias).copied())
            .collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        assert_eq!(params.len(), self.param_count(), "parameter count mismatch");
        let mut it = params.iter().copied();
        for l in &mut self.layers {
            l.weights.iter_mut().chain(l.bias.iter_mut()).for_each(|p| *p = it.next().unwrap());
        }
    }

    fn activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut acts = vec![x.to_vec()];
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = layer.apply(acts.last().unwrap());
            if i < last {
                z.iter_mut().for_each(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, features: &[f64]) -> Result<[f64; 3], PolicyError> {
        if features.len() != self.input_len() {
            return Err(PolicyError::Shape { got: features.len(), want: self.input_len() });
        }
        let out = self.activations(features).pop().unwrap();
        Ok([out[0], out[1], out[2]])
    }

    pub fn forward_batch(&self, batch: &[Vec<f64>]) -> Result<Vec<[f64; 3]>, PolicyError> {
        batch.iter().map(|x| self.forward(x)).collect()
    }

    /// Sum of squared errors `sum (target - q_action(x))^2` and its gradient
    /// with respect to [`params`](Self::params).
    pub fn loss_and_grad(&self, batch: &[(&[f64], usize, f64)]) -> Result<(f64, Vec<f64>), PolicyError> {
        let mut grads: Vec<(Vec<f64>, Vec<f64>)> = self
            .layers
            .iter()
            .map(|l| (vec![0.0; l.weights.len()], vec![0.0; l.bias.len()]))
            .collect();
        let mut loss = 0.0;
        for &(x, action, target) in batch {
            if x.len() != self.input_len() {
                return Err(PolicyError::Shape { got: x.len(), want: self.input_len() });
            }
            let acts = self.activations(x);
            let out = acts.last().unwrap();
            let err = out[action] - target;
            loss += err * err;
            // dL/dz for the output layer.
            let mut delta = vec![0.0; 3];
            delta[action] = 2.0 * err;
            for li in (0..self.layers.len()).rev() {
                let layer = &self.layers[li];
                let input = &acts[li];
                let (gw, gb) = &mut grads[li];
                for o in 0..layer.outputs {
                    if delta[o] == 0.0 {
                        continue;
                    }
                    gb[o] += delta[o];
                    let row = &mut gw[o * layer.inputs..(o + 1) * layer.inputs];
                    row.iter_mut().zip(input).for_each(|(g, v)| *g += delta[o] * v);
                }
                if li == 0 {
                    break;
                }
                let mut prev = vec![0.0; layer.inputs];
                for o in 0..layer.outputs {
                    if delta[o] == 0.0 {
                        continue;
                    }
                    let row = &layer.weights[o * layer.inputs..(o + 1) * layer.inputs];
                    prev.iter_mut().zip(row).for_each(|(p, w)| *p += delta[o] * w);
                }
                // Rectifier derivative of the hidden activation feeding this layer.
                prev.iter_mut().zip(input).for_each(|(p, a)| {
                    if *a <= 0.0 {
                        *p = 0.0;
                    }
                });
                delta = prev;
            }
        }
        let flat = grads.into_iter().flat_map(|(w, b)| w.into_iter().chain(b)).collect();
        Ok((loss, flat))
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let mut file = std::fs::File::create(path)?;
        file.write_all(&self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        Self::from_bytes(&std::fs::read(path)?)
    }

    /// Header (magic, layer sizes, seed, epoch) then little-endian f32 parameters.
    pub fn to_bytes(&self) -> Vec<u8> {
        let sizes = self.layer_sizes();
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&(sizes.len() as u32).to_le_bytes());
        for s in &sizes {
            out.extend_from_slice(&(*s as u32).to_le_bytes());
        }
        out.extend_from_slice(&self.seed.to_le_bytes());
        out.extend_from_slice(&(self.epochs_trained as u32).to_le_bytes());
        for p in self.params() {
            out.extend_from_slice(&(p as f32).to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, PolicyError> {
        let bad = |m: &str| PolicyError::Checkpoint(m.to_string());
        if bytes.len() < 12 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("missing magic"));
        }
        let mut pos = 8;
        let read_u32 = |pos: &mut usize| -> Result<u32, PolicyError> {
            let b = bytes.get(*pos..*pos + 4).ok_or_else(|| bad("truncated header"))?;
            *pos += 4;
            Ok(u32::from_le_bytes(b.try_into().unwrap()))
        };
        let n = read_u32(&mut pos)? as usize;
        if !(2..=16).contains(&n) {
            return Err(bad("implausible layer count"));
        }
        let sizes = (0..n).map(|_| read_u32(&mut pos).map(|s| s as usize)).collect::<Result<Vec<_>, _>>()?;
        if sizes[n - 1] != 3 || sizes.contains(&0) {
            return Err(bad("bad layer sizes"));
        }
        let seed = u64::from_le_bytes(bytes.get(pos..pos + 8).ok_or_else(|| bad("truncated header"))?.try_into().unwrap());
        pos += 8;
        let epochs = read_u32(&mut pos)? as usize;
        let mut net = Self::with_layers(&sizes, seed);
        let params: Vec<f64> = bytes[pos..]
            .chunks_exact(4)
            .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
            .collect();
        if params.len() != net.param_count() || (bytes.len() - pos) % 4 != 0 {
            return Err(bad("parameter block has the wrong length"));
        }
        net.set_params(&params);
        net.epochs_trained = epochs;
        Ok(net)
    }
}

const CHECKPOINT_MAGIC: &[u8; 8] = b"HALMITVN";

/// Floors and normalizes the network's three values into probabilities.
pub fn select_probabilities(net: &ValueNetwork, features: &[f64]) -> Result<[f64; 3], PolicyError> {
    Ok(probabilities_from_rewards(net.forward(features)?))
}

/// Trains a fresh default-shaped network. See [`train_network`].
pub fn train(dataset: &[PolicySample], config: &TrainConfig) -> Result<(ValueNetwork, Vec<f64>), PolicyError> {
    let inputs = dataset.first().map(|s| s.state_features.len()).unwrap_or(FEATURE_LEN);
    let mut net = ValueNetwork::new(inputs, config.rng_seed);
    let curve = train_network(&mut net, dataset, config)?;
    Ok((net, curve))
}

/// Mini-batch gradient descent on the summed squared error between each
/// sample's observed reward and the value of its transformation. Returns
/// the mean per-sample loss of every epoch.
pub fn train_network(net: &mut ValueNetwork, dataset: &[PolicySample], config: &TrainConfig) -> Result<Vec<f64>, PolicyError> {
    if config.batch_size == 0 || !(config.learning_rate > 0.0) {
        return Err(PolicyError::Config("batch_size and learning_rate must be positive".into()));
    }
    if dataset.len() < config.batch_size {
        return Err(PolicyError::DatasetTooSmall { got: dataset.len(), batch: config.batch_size });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed ^ 0x5eed);
    let mut order: Vec<usize> = (0..dataset.len()).collect();
    let mut params = net.params();
    let mut curve = Vec::with_capacity(config.max_epochs);
    for epoch in 0..config.max_epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<(&[f64], usize, f64)> = chunk
                .iter()
                .map(|&i| {
                    let s = &dataset[i];
                    (s.state_features.as_slice(), s.transform.index(), s.reward)
                })
                .collect();
            let (loss, grad) = net.loss_and_grad(&batch)?;
            epoch_loss += loss;
            params.iter_mut().zip(&grad).for_each(|(p, g)| *p -= config.learning_rate * g);
            net.set_params(&params);
        }
        let mean = epoch_loss / dataset.len() as f64;
        if !mean.is_finite() || params.iter().any(|p| !p.is_finite()) {
            return Err(PolicyError::Diverged { epoch, loss: mean, learning_rate: config.learning_rate });
        }
        curve.push(mean);
        net.epochs_trained += 1;
    }
    Ok(curve)
}

/// Writes `epoch loss` rows.
pub fn write_loss_curve(curve: &[f64], mut out: impl Write) -> std::io::Result<()> {
    for (epoch, loss) in curve.iter().enumerate() {
        writeln!(out, "{epoch}\t{loss:.9e}")?;
    }
    Ok(())
}

/// A policy dataset with a known smooth reward per transformation, for
/// exercising training without an exploration run.
pub fn synthetic_dataset(n: usize, seed: u64) -> Vec<PolicySample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let h_max = 5f64.ln();
    (0..n)
        .map(|_| {
            let drift: f64 = rng.random_range(0.0..1.0);
            let h: f64 = rng.random_range(0.0..h_max);
            let state = state_from_drift(drift, h, DEFAULT_OMEGA);
            let transform = TransformKind::ALL[rng.random_range(0..3)];
            let targets = [0.6 - 0.5 * drift, 0.2 + 0.4 * drift, 0.1 + 0.6 * drift + 0.3 * h / h_max];
            PolicySample {
                query: format!("synthetic state {}", state.index),
                responses: Vec::new(),
                h_prev: 0.0,
                h_cur: h,
                sig_product: 1,
                reward: targets[transform.index()],
                p_target: probabilities_from_rewards(targets),
                state_features: state.features,
                transform,
            }
        })
        .collect()
}
