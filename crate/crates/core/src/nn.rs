//! Fully-connected tanh networks with hand-written backprop, a categorical
//! action head, and Adam/SGD optimizers.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch: expected {expected}, got {got}")]
    Shape { expected: String, got: String },
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("action index {0} out of range for {1} actions")]
    InvalidAction(usize, usize),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("checkpoint format: {0}")]
    Format(String),
}

fn shape_err(expected: impl ToString, got: impl ToString) -> NnError {
    NnError::Shape { expected: expected.to_string(), got: got.to_string() }
}

/// Affine layer computing `x · weights + bias`; weights are `in × out`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    pub fn zeros(in_dim: usize, out_dim: usize) -> Self {
        Self { weights: Array2::zeros((in_dim, out_dim)), bias: Array1::zeros(out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.ncols()
    }
}

/// tanh on every hidden layer, identity on the last.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<Dense>,
}

/// Activations kept from a batched forward pass for the backward pass.
/// `activations[0]` is the input, the last entry is the network output.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub activations: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn output(&self) -> &Array2<f64> {
        self.activations.last().expect("cache holds at least the input")
    }
}

pub const HIDDEN_SIZES: [usize; 2] = [64, 64];

impl MlpParams {
    pub fn zeros(sizes: &[usize]) -> Self {
        let layers = sizes.windows(2).map(|w| Dense::zeros(w[0], w[1])).collect();
        Self { layers }
    }

    /// Scaled-uniform (Glorot) weights, zero biases; the output layer is
    /// further multiplied by `output_scale`.
    pub fn init<R: Rng + ?Sized>(sizes: &[usize], output_scale: f64, rng: &mut R) -> Self {
        let mut params = Self::zeros(sizes);
        let n = params.layers.len();
        for (i, layer) in params.layers.iter_mut().enumerate() {
            let limit = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
            let scale = if i + 1 == n { output_scale } else { 1.0 };
            layer.weights.mapv_inplace(|_| rng.random_range(-limit..limit) * scale);
        }
        params
    }

    /// `in_dim → 64 → 64 → out_dim`.
    pub fn standard<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, output_scale: f64, rng: &mut R) -> Self {
        Self::init(&[in_dim, HIDDEN_SIZES[0], HIDDEN_SIZES[1], out_dim], output_scale, rng)
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(|l| Dense::zeros(l.in_dim(), l.out_dim())).collect() }
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map_or(0, Dense::in_dim)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, Dense::out_dim)
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut s = vec![self.in_dim()];
        s.extend(self.layers.iter().map(Dense::out_dim));
        s
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// Every parameter tensor as a flat slice, weights before bias per layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers
            .iter()
            .flat_map(|l| {
                [l.weights.as_slice().expect("standard layout"), l.bias.as_slice().expect("standard layout")]
            })
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| {
                [
                    l.weights.as_slice_mut().expect("standard layout"),
                    l.bias.as_slice_mut().expect("standard layout"),
                ]
            })
            .collect()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn forward(&self, input: &[f64]) -> Result<Vec<f64>, NnError> {
        let x = ArrayView2::from_shape((1, input.len()), input).map_err(|e| shape_err(self.in_dim(), e))?;
        let cache = self.forward_batch(x)?;
        Ok(cache.output().row(0).to_vec())
    }

    pub fn forward_batch(&self, input: ArrayView2<f64>) -> Result<ForwardCache, NnError> {
        if input.ncols() != self.in_dim() {
            return Err(shape_err(format!("{} input features", self.in_dim()), input.ncols()));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        activations.push(input.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = activations[i].dot(&layer.weights);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(f64::tanh);
            }
            activations.push(z);
        }
        Ok(ForwardCache { activations })
    }

    /// Gradients of `sum(output ⊙ output_grad)` with respect to every
    /// parameter, and with respect to the input batch.
    pub fn backward(&self, cache: &ForwardCache, output_grad: ArrayView2<f64>) -> Result<(MlpParams, Array2<f64>), NnError> {
        let out = cache.output();
        if output_grad.dim() != out.dim() {
            return Err(shape_err(format!("{:?}", out.dim()), format!("{:?}", output_grad.dim())));
        }
        let mut grads = self.zeros_like();
        let mut delta = output_grad.to_owned();
        for i in (0..self.layers.len()).rev() {
            if i + 1 < self.layers.len() {
                // through tanh: d/dz tanh(z) = 1 - tanh(z)^2
                let a = &cache.activations[i + 1];
                delta.zip_mut_with(a, |d, &y| *d *= 1.0 - y * y);
            }
            let input = &cache.activations[i];
            let gw = input.t().dot(&delta);
            grads.layers[i].weights = if gw.is_standard_layout() { gw } else { gw.as_standard_layout().into_owned() };
            grads.layers[i].bias = delta.sum_axis(Axis(0));
            delta = delta.dot(&self.layers[i].weights.t());
        }
        Ok((grads, delta))
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &MlpParams) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.scaled_add(alpha, &b.weights);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }
}

/// Log-softmax with max subtraction.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|&z| (z - max).exp()).sum::<f64>().ln();
    logits.iter().map(|&z| z - lse).collect()
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    log_softmax(logits).into_iter().map(f64::exp).collect()
}

fn check_logits(logits: &[f64]) -> Result<(), NnError> {
    if logits.is_empty() || logits.iter().any(|z| !z.is_finite()) {
        return Err(NnError::NonFinite("logits"));
    }
    Ok(())
}

/// Draws an action from the softmax distribution; returns it with its log-probability.
pub fn sample_action<R: Rng + ?Sized>(logits: &[f64], rng: &mut R) -> Result<(usize, f64), NnError> {
    check_logits(logits)?;
    let logp = log_softmax(logits);
    let u: f64 = rng.random();
    let mut acc = 0.0;
    let mut chosen = logp.len() - 1;
    for (i, lp) in logp.iter().enumerate() {
        acc += lp.exp();
        if u < acc {
            chosen = i;
            break;
        }
    }
    Ok((chosen, logp[chosen]))
}

pub fn greedy_action(logits: &[f64]) -> Result<(usize, f64), NnError> {
    check_logits(logits)?;
    let logp = log_softmax(logits);
    let (i, _) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |best, (i, &z)| if z > best.1 { (i, z) } else { best });
    Ok((i, logp[i]))
}

pub fn log_prob_and_entropy(logits: &[f64], action: usize) -> Result<(f64, f64), NnError> {
    check_logits(logits)?;
    if action >= logits.len() {
        return Err(NnError::InvalidAction(action, logits.len()));
    }
    let logp = log_softmax(logits);
    let entropy = -logp.iter().map(|&lp| if lp == f64::NEG_INFINITY { 0.0 } else { lp.exp() * lp }).sum::<f64>();
    Ok((logp[action], entropy))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum OptimizerKind {
    #[default]
    Adam,
    Sgd,
}

/// Adam moment accumulators for one network.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: MlpParams,
    pub v: MlpParams,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self { beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, m: params.zeros_like(), v: params.zeros_like() }
    }

    pub fn update(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<(), NnError> {
        if params.sizes() != grads.sizes() || params.sizes() != self.m.sizes() {
            return Err(shape_err(format!("{:?}", params.sizes()), format!("{:?}", grads.sizes())));
        }
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Optimizer for one network: Adam with its moments, or plain SGD.
#[derive(Debug, Clone, PartialEq)]
pub enum Optimizer {
    Adam(AdamState),
    Sgd,
}

impl Optimizer {
    pub fn new(kind: OptimizerKind, params: &MlpParams) -> Self {
        match kind {
            OptimizerKind::Adam => Optimizer::Adam(AdamState::new(params)),
            OptimizerKind::Sgd => Optimizer::Sgd,
        }
    }

    /// Descent step on `params` along `grads` (gradients of a loss to minimize).
    pub fn step(&mut self, params: &mut MlpParams, grads: &MlpParams, lr: f64) -> Result<(), NnError> {
        match self {
            Optimizer::Adam(state) => state.update(params, grads, lr),
            Optimizer::Sgd => {
                if params.sizes() != grads.sizes() {
                    return Err(shape_err(format!("{:?}", params.sizes()), format!("{:?}", grads.sizes())));
                }
                params.scaled_add(-lr, grads);
                Ok(())
            }
        }
    }
}

pub const NUM_ACTIONS: usize = 3;

/// Separate policy (3 logits) and value (1 output) networks with their optimizers.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub policy: MlpParams,
    pub value: MlpParams,
    pub policy_opt: Optimizer,
    pub value_opt: Optimizer,
    /// Free-form run metadata persisted with checkpoints.
    pub meta: BTreeMap<String, String>,
}

impl PolicyBundle {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, optimizer: OptimizerKind, rng: &mut R) -> Self {
        let policy = MlpParams::standard(obs_dim, NUM_ACTIONS, 0.01, rng);
        let value = MlpParams::standard(obs_dim, 1, 1.0, rng);
        Self {
            policy_opt: Optimizer::new(optimizer, &policy),
            value_opt: Optimizer::new(optimizer, &value),
            policy,
            value,
            meta: BTreeMap::new(),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.policy.in_dim()
    }

    pub fn apply_policy_grads(&mut self, grads: &MlpParams, lr: f64) -> Result<(), NnError> {
        self.policy_opt.step(&mut self.policy, grads, lr)
    }

    pub fn apply_value_grads(&mut self, grads: &MlpParams, lr: f64) -> Result<(), NnError> {
        self.value_opt.step(&mut self.value, grads, lr)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), NnError> {
        let path = path.as_ref();
        let text = serde_json::to_string(&CheckpointFile::from(self)).map_err(|e| NnError::Format(e.to_string()))?;
        fs::write(path, text).map_err(|source| NnError::Io { path: path.display().to_string(), source })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, NnError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| NnError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> Result<String, NnError> {
        serde_json::to_string(&CheckpointFile::from(self)).map_err(|e| NnError::Format(e.to_string()))
    }

    pub fn from_json(text: &str) -> Result<Self, NnError> {
        let file: CheckpointFile = serde_json::from_str(text).map_err(|e| NnError::Format(e.to_string()))?;
        file.into_bundle()
    }
}

// Checkpoint container: JSON with explicit layer shapes and row-major weights.
// serde_json's float round-trip keeps every f64 bit-exact.

pub const CHECKPOINT_FORMAT: &str = "taxtrade-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct LayerRecord {
    in_dim: usize,
    out_dim: usize,
    weights: Vec<f64>,
    bias: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct NetRecord {
    layers: Vec<LayerRecord>,
}

#[derive(Serialize, Deserialize)]
struct OptRecord {
    kind: OptimizerKind,
    step: u64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    m: Option<NetRecord>,
    v: Option<NetRecord>,
}

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    policy: NetRecord,
    value: NetRecord,
    policy_opt: OptRecord,
    value_opt: OptRecord,
    meta: BTreeMap<String, String>,
}

impl From<&MlpParams> for NetRecord {
    fn from(p: &MlpParams) -> Self {
        NetRecord {
            layers: p
                .layers
                .iter()
                .map(|l| LayerRecord {
                    in_dim: l.in_dim(),
                    out_dim: l.out_dim(),
                    weights: l.weights.iter().copied().collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl NetRecord {
    fn into_params(self) -> Result<MlpParams, NnError> {
        let mut layers = Vec::with_capacity(self.layers.len());
        for (i, l) in self.layers.into_iter().enumerate() {
            let weights = Array2::from_shape_vec((l.in_dim, l.out_dim), l.weights)
                .map_err(|e| NnError::Format(format!("layer {i} weights: {e}")))?;
            if l.bias.len() != l.out_dim {
                return Err(NnError::Format(format!("layer {i} bias has {} entries, want {}", l.bias.len(), l.out_dim)));
            }
            if let Some(prev) = layers.last().map(Dense::out_dim) {
                if prev != l.in_dim {
                    return Err(NnError::Format(format!("layer {i} input {} does not chain from {prev}", l.in_dim)));
                }
            }
            layers.push(Dense { weights, bias: Array1::from(l.bias) });
        }
        if layers.is_empty() {
            return Err(NnError::Format("network has no layers".into()));
        }
        let params = MlpParams { layers };
        if !params.is_finite() {
            return Err(NnError::NonFinite("checkpoint parameters"));
        }
        Ok(params)
    }
}

impl From<&Optimizer> for OptRecord {
    fn from(o: &Optimizer) -> Self {
        match o {
            Optimizer::Adam(s) => OptRecord {
                kind: OptimizerKind::Adam,
                step: s.step,
                beta1: s.beta1,
                beta2: s.beta2,
                eps: s.eps,
                m: Some((&s.m).into()),
                v: Some((&s.v).into()),
            },
            Optimizer::Sgd => {
                OptRecord { kind: OptimizerKind::Sgd, step: 0, beta1: 0.0, beta2: 0.0, eps: 0.0, m: None, v: None }
            }
        }
    }
}

impl OptRecord {
    fn into_optimizer(self, params: &MlpParams) -> Result<Optimizer, NnError> {
        match self.kind {
            OptimizerKind::Sgd => Ok(Optimizer::Sgd),
            OptimizerKind::Adam => {
                let missing = || NnError::Format("adam state missing moments".into());
                let m = self.m.ok_or_else(missing)?.into_params()?;
                let v = self.v.ok_or_else(missing)?.into_params()?;
                if m.sizes() != params.sizes() || v.sizes() != params.sizes() {
                    return Err(NnError::Format("adam moments do not match network shape".into()));
                }
                Ok(Optimizer::Adam(AdamState { beta1: self.beta1, beta2: self.beta2, eps: self.eps, step: self.step, m, v }))
            }
        }
    }
}

impl From<&PolicyBundle> for CheckpointFile {
    fn from(b: &PolicyBundle) -> Self {
        CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            policy: (&b.policy).into(),
            value: (&b.value).into(),
            policy_opt: (&b.policy_opt).into(),
            value_opt: (&b.value_opt).into(),
            meta: b.meta.clone(),
        }
    }
}

impl CheckpointFile {
    fn into_bundle(self) -> Result<PolicyBundle, NnError> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(NnError::Format(format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(NnError::Format(format!("unsupported version {}", self.version)));
        }
        let policy = self.policy.into_params()?;
        let value = self.value.into_params()?;
        if policy.in_dim() != value.in_dim() || policy.out_dim() != NUM_ACTIONS || value.out_dim() != 1 {
            return Err(NnError::Format(format!(
                "policy {:?} / value {:?} shapes are not a policy/value pair",
                policy.sizes(),
                value.sizes()
            )));
        }
        let policy_opt = self.policy_opt.into_optimizer(&policy)?;
        let value_opt = self.value_opt.into_optimizer(&value)?;
        Ok(PolicyBundle { policy, value, policy_opt, value_opt, meta: self.meta })
    }
}
