//! Proximal policy optimization: clipped surrogate objective, GAE(γ, λ)
//! advantages, separate policy and value networks trained full-batch.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{Action, EnvConfig, EnvError, TradingEnv};
use crate::market::{sample_window, DataError, PriceSeries};
use crate::nn::{self, MlpParams, NnError, OptimizerKind, PolicyBundle};

#[derive(Debug, Error)]
pub enum PpoError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("invalid ppo config: {0}")]
    Config(String),
    #[error("trajectory buffer: {0}")]
    Buffer(&'static str),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PpoError + '_ {
    move |source| PpoError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PpoConfig {
    pub clip_ratio: f64,
    pub gae_lambda: f64,
    pub gamma: f64,
    pub steps_per_epoch: usize,
    pub epochs: usize,
    pub policy_lr: f64,
    pub value_lr: f64,
    pub policy_update_iters: usize,
    pub value_update_iters: usize,
    /// Stop policy iterations once the mean KL estimate exceeds this.
    pub target_kl: Option<f64>,
    pub advantage_normalization: bool,
    pub entropy_coef: f64,
    pub optimizer: OptimizerKind,
    /// Train on rewards divided by the episode's initial notional, so that
    /// per-episode sums are episode returns.
    pub reward_normalization: bool,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            gae_lambda: 0.97,
            gamma: 0.99,
            steps_per_epoch: 5000,
            epochs: 50,
            policy_lr: 1e-3,
            value_lr: 3e-4,
            policy_update_iters: 80,
            value_update_iters: 80,
            target_kl: Some(0.015),
            advantage_normalization: true,
            entropy_coef: 0.0,
            optimizer: OptimizerKind::Adam,
            reward_normalization: true,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<(), PpoError> {
        let bad = |m: String| Err(PpoError::Config(m));
        if !(self.clip_ratio > 0.0 && self.clip_ratio < 1.0) {
            return bad(format!("clip_ratio must be in (0,1), got {}", self.clip_ratio));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("gae_lambda must be in [0,1], got {}", self.gae_lambda));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0,1], got {}", self.gamma));
        }
        if self.steps_per_epoch == 0 {
            return bad("steps_per_epoch must be positive".into());
        }
        if !(self.policy_lr > 0.0) || !(self.value_lr > 0.0) {
            return bad("learning rates must be positive".into());
        }
        if !(self.entropy_coef >= 0.0) {
            return bad(format!("entropy_coef must be >= 0, got {}", self.entropy_coef));
        }
        Ok(())
    }
}

/// GAE advantages and returns for a buffer that may hold several episodes.
///
/// `values` has one more entry than `rewards`: `values[t]` is V(s_t), and
/// `values[n]` bootstraps the last step when it is not terminal. `dones[t]`
/// marks a step that ends its episode; nothing flows across it.
/// `returns[t] = advantages[t] + values[t]`.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
) -> Result<(Vec<f64>, Vec<f64>), PpoError> {
    let n = rewards.len();
    if values.len() != n + 1 || dones.len() != n {
        return Err(PpoError::Length(format!(
            "{} rewards need {} values and {} done flags, got {} and {}",
            n,
            n + 1,
            n,
            values.len(),
            dones.len()
        )));
    }
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * values[t + 1] * live - values[t];
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyLoss {
    pub loss: f64,
    /// d loss / d log π_new for each sample.
    pub grad_log_prob: Vec<f64>,
    pub clip_fraction: f64,
}

/// `-mean_t min(r_t A_t, clip(r_t, 1-ε, 1+ε) A_t)` with `r_t = exp(new - old)`.
pub fn clipped_policy_loss(
    log_probs_new: &[f64],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_ratio: f64,
) -> Result<PolicyLoss, PpoError> {
    let n = log_probs_new.len();
    if log_probs_old.len() != n || advantages.len() != n {
        return Err(PpoError::Length(format!(
            "log_probs_new {n}, log_probs_old {}, advantages {}",
            log_probs_old.len(),
            advantages.len()
        )));
    }
    if n == 0 {
        return Err(PpoError::Length("empty batch".into()));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut clipped = 0usize;
    let mut grad = Vec::with_capacity(n);
    for i in 0..n {
        let ratio = (log_probs_new[i] - log_probs_old[i]).exp();
        if !ratio.is_finite() {
            return Err(PpoError::NonFinite("importance ratio"));
        }
        let a = advantages[i];
        let unclipped = ratio * a;
        let bounded = ratio.clamp(1.0 - clip_ratio, 1.0 + clip_ratio) * a;
        if unclipped <= bounded {
            loss -= unclipped * inv_n;
            // d(r A)/d log π = r A
            grad.push(-unclipped * inv_n);
        } else {
            loss -= bounded * inv_n;
            grad.push(0.0);
        }
        if (ratio - 1.0).abs() > clip_ratio {
            clipped += 1;
        }
    }
    Ok(PolicyLoss { loss, grad_log_prob: grad, clip_fraction: clipped as f64 * inv_n })
}

/// Mean squared error and its gradient with respect to the predictions.
pub fn value_loss(values_pred: &[f64], returns: &[f64]) -> Result<(f64, Vec<f64>), PpoError> {
    let n = values_pred.len();
    if returns.len() != n || n == 0 {
        return Err(PpoError::Length(format!("{n} predictions vs {} returns", returns.len())));
    }
    let inv_n = 1.0 / n as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(n);
    for (p, r) in values_pred.iter().zip(returns) {
        let d = p - r;
        loss += d * d * inv_n;
        grad.push(2.0 * d * inv_n);
    }
    Ok((loss, grad))
}

/// Shifts and scales `x` to zero mean and unit (population) variance.
pub fn normalize(x: &mut [f64]) {
    let n = x.len() as f64;
    if x.is_empty() {
        return;
    }
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let sd = var.sqrt();
    let scale = if sd > 1e-12 { 1.0 / sd } else { 1.0 };
    for v in x.iter_mut() {
        *v = (*v - mean) * scale;
    }
}

/// Fixed-capacity rollout storage.
#[derive(Debug, Clone)]
pub struct TrajectoryBuffer {
    obs_dim: usize,
    capacity: usize,
    observations: Vec<f64>,
    actions: Vec<usize>,
    rewards: Vec<f64>,
    values: Vec<f64>,
    log_probs: Vec<f64>,
    dones: Vec<bool>,
    advantages: Vec<f64>,
    returns: Vec<f64>,
    finalized: bool,
}

impl TrajectoryBuffer {
    pub fn new(obs_dim: usize, capacity: usize) -> Self {
        Self {
            obs_dim,
            capacity,
            observations: Vec::with_capacity(obs_dim * capacity),
            actions: Vec::with_capacity(capacity),
            rewards: Vec::with_capacity(capacity),
            values: Vec::with_capacity(capacity),
            log_probs: Vec::with_capacity(capacity),
            dones: Vec::with_capacity(capacity),
            advantages: Vec::new(),
            returns: Vec::new(),
            finalized: false,
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    pub fn is_full(&self) -> bool {
        self.len() == self.capacity
    }

    pub fn is_finalized(&self) -> bool {
        self.finalized
    }

    pub fn push(
        &mut self,
        observation: &[f64],
        action: usize,
        reward: f64,
        value: f64,
        log_prob: f64,
        done: bool,
    ) -> Result<(), PpoError> {
        if self.finalized {
            return Err(PpoError::Buffer("push after finalize"));
        }
        if self.is_full() {
            return Err(PpoError::Buffer("buffer full"));
        }
        if observation.len() != self.obs_dim {
            return Err(PpoError::Length(format!("observation has {} features, want {}", observation.len(), self.obs_dim)));
        }
        self.observations.extend_from_slice(observation);
        self.actions.push(action);
        self.rewards.push(reward);
        self.values.push(value);
        self.log_probs.push(log_prob);
        self.dones.push(done);
        Ok(())
    }

    /// Computes advantages and returns once. `last_value` bootstraps the
    /// final step when the rollout was cut mid-episode (ignored if the final
    /// step is terminal).
    pub fn finalize(&mut self, last_value: f64, gamma: f64, lambda: f64, normalize_advantages: bool) -> Result<(), PpoError> {
        if self.finalized {
            return Err(PpoError::Buffer("already finalized"));
        }
        if self.is_empty() {
            return Err(PpoError::Buffer("nothing to finalize"));
        }
        let mut values = self.values.clone();
        values.push(last_value);
        let (mut adv, ret) = compute_gae(&self.rewards, &values, &self.dones, gamma, lambda)?;
        if normalize_advantages {
            normalize(&mut adv);
        }
        self.advantages = adv;
        self.returns = ret;
        self.finalized = true;
        Ok(())
    }

    pub fn observations(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.len(), self.obs_dim), &self.observations).expect("buffer shape")
    }

    pub fn actions(&self) -> &[usize] {
        &self.actions
    }

    pub fn rewards(&self) -> &[f64] {
        &self.rewards
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn log_probs(&self) -> &[f64] {
        &self.log_probs
    }

    pub fn dones(&self) -> &[bool] {
        &self.dones
    }

    pub fn advantages(&self) -> Result<&[f64], PpoError> {
        if !self.finalized {
            return Err(PpoError::Buffer("advantages read before finalize"));
        }
        Ok(&self.advantages)
    }

    pub fn returns(&self) -> Result<&[f64], PpoError> {
        if !self.finalized {
            return Err(PpoError::Buffer("returns read before finalize"));
        }
        Ok(&self.returns)
    }
}

/// Row-wise log-softmax of a logits batch.
fn batch_log_softmax(logits: &Array2<f64>) -> Array2<f64> {
    let mut out = logits.clone();
    for mut row in out.rows_mut() {
        let lp = nn::log_softmax(row.as_slice().expect("contiguous row"));
        row.assign(&ndarray::Array1::from(lp));
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGradient {
    pub grads: MlpParams,
    pub loss: f64,
    /// Mean of `old - new` log-probabilities at the current parameters.
    pub approx_kl: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// Clipped-surrogate loss (minus the entropy bonus) and its gradient with
/// respect to the policy parameters.
pub fn policy_gradient(
    policy: &MlpParams,
    observations: ArrayView2<f64>,
    actions: &[usize],
    log_probs_old: &[f64],
    advantages: &[f64],
    clip_ratio: f64,
    entropy_coef: f64,
) -> Result<PolicyGradient, PpoError> {
    let n = actions.len();
    if observations.nrows() != n {
        return Err(PpoError::Length(format!("{} observations vs {n} actions", observations.nrows())));
    }
    let cache = policy.forward_batch(observations)?;
    let logp_all = batch_log_softmax(cache.output());
    let k = logp_all.ncols();
    let mut logp_new = Vec::with_capacity(n);
    for (i, &a) in actions.iter().enumerate() {
        if a >= k {
            return Err(NnError::InvalidAction(a, k).into());
        }
        logp_new.push(logp_all[[i, a]]);
    }
    let surrogate = clipped_policy_loss(&logp_new, log_probs_old, advantages, clip_ratio)?;

    let inv_n = 1.0 / n as f64;
    let mut entropy_sum = 0.0;
    let mut dlogits = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        let lp = logp_all.row(i);
        let h: f64 = -lp.iter().map(|&l| l.exp() * l).sum::<f64>();
        entropy_sum += h;
        let g = surrogate.grad_log_prob[i];
        for j in 0..k {
            let p = lp[j].exp();
            // d log π(a) / d z_j = 1{j=a} - p_j
            let onehot = if j == actions[i] { 1.0 } else { 0.0 };
            let mut d = g * (onehot - p);
            if entropy_coef != 0.0 {
                // d H / d z_j = -p_j (log p_j + H)
                d -= entropy_coef * inv_n * (-p * (lp[j] + h));
            }
            dlogits[[i, j]] = d;
        }
    }
    let entropy = entropy_sum * inv_n;
    let (grads, _) = policy.backward(&cache, dlogits.view())?;
    let approx_kl = log_probs_old.iter().zip(&logp_new).map(|(o, n)| o - n).sum::<f64>() * inv_n;
    Ok(PolicyGradient {
        grads,
        loss: surrogate.loss - entropy_coef * entropy,
        approx_kl,
        entropy,
        clip_fraction: surrogate.clip_fraction,
    })
}

/// Value-net MSE against `returns` and its parameter gradient.
pub fn value_gradient(value: &MlpParams, observations: ArrayView2<f64>, returns: &[f64]) -> Result<(f64, MlpParams), PpoError> {
    let cache = value.forward_batch(observations)?;
    let pred: Vec<f64> = cache.output().column(0).to_vec();
    let (loss, grad) = value_loss(&pred, returns)?;
    let seed = Array2::from_shape_vec((grad.len(), 1), grad).expect("column");
    let (grads, _) = value.backward(&cache, seed.view())?;
    Ok((loss, grads))
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub entropy: f64,
    pub policy_iters: usize,
}

/// Policy iterations (with KL early stop), then value iterations.
pub fn update(bundle: &mut PolicyBundle, buffer: &TrajectoryBuffer, config: &PpoConfig) -> Result<UpdateStats, PpoError> {
    let obs = buffer.observations();
    let adv = buffer.advantages()?;
    let ret = buffer.returns()?;

    let first = policy_gradient(&bundle.policy, obs, buffer.actions(), buffer.log_probs(), adv, config.clip_ratio, config.entropy_coef)?;
    let (policy_loss, entropy) = (first.loss, first.entropy);
    let mut iters = 0;
    let mut pg = first;
    let kl = loop {
        let kl = pg.approx_kl;
        if iters >= config.policy_update_iters || config.target_kl.is_some_and(|t| kl > t) {
            break kl;
        }
        bundle.apply_policy_grads(&pg.grads, config.policy_lr)?;
        iters += 1;
        pg = policy_gradient(&bundle.policy, obs, buffer.actions(), buffer.log_probs(), adv, config.clip_ratio, config.entropy_coef)?;
    };

    let mut value_loss = f64::NAN;
    for i in 0..config.value_update_iters {
        let (loss, grads) = value_gradient(&bundle.value, obs, ret)?;
        if i == 0 {
            value_loss = loss;
        }
        bundle.apply_value_grads(&grads, config.value_lr)?;
    }
    if !bundle.policy.is_finite() || !bundle.value.is_finite() {
        return Err(PpoError::NonFinite("network parameters after update"));
    }
    Ok(UpdateStats { policy_loss, value_loss, kl, entropy, policy_iters: iters })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochMetrics {
    pub epoch: usize,
    /// Mean return of episodes completed during the epoch's rollout; NaN
    /// when none completed.
    pub mean_episode_return: f64,
    pub episodes: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub kl: f64,
    pub entropy: f64,
    pub wall_seconds: f64,
}

pub const METRICS_HEADER: &str = "epoch,mean_episode_return,policy_loss,value_loss,kl,entropy,wall_seconds";

impl EpochMetrics {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{:.3}",
            self.epoch, self.mean_episode_return, self.policy_loss, self.value_loss, self.kl, self.entropy, self.wall_seconds
        )
    }

    /// Equality ignoring wall-clock time.
    pub fn same_results(&self, other: &EpochMetrics) -> bool {
        let eq = |a: f64, b: f64| a.to_bits() == b.to_bits();
        self.epoch == other.epoch
            && self.episodes == other.episodes
            && eq(self.mean_episode_return, other.mean_episode_return)
            && eq(self.policy_loss, other.policy_loss)
            && eq(self.value_loss, other.value_loss)
            && eq(self.kl, other.kl)
            && eq(self.entropy, other.entropy)
    }
}

/// Collects `steps_per_epoch` transitions with the current policy, starting
/// a fresh randomly placed episode at the beginning of the epoch and after
/// each completed episode; the rollout may end mid-episode, in which case
/// the value net bootstraps the cut.
pub fn collect_rollout(
    env: &mut TradingEnv,
    bundle: &PolicyBundle,
    config: &PpoConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(TrajectoryBuffer, Vec<f64>, f64), PpoError> {
    let obs_dim = env.config().obs_dim();
    if bundle.obs_dim() != obs_dim {
        return Err(NnError::Shape { expected: format!("{obs_dim} features"), got: bundle.obs_dim().to_string() }.into());
    }
    let episode_length = env.config().episode_length;
    let mut buffer = TrajectoryBuffer::new(obs_dim, config.steps_per_epoch);
    let mut completed = Vec::new();
    let window = sample_window(env.series(), episode_length, rng)?;
    env.reset(window)?;
    let mut episode_return = 0.0;
    let mut last_done = false;
    for _ in 0..config.steps_per_epoch {
        let features = env.observe_features();
        let logits = bundle.policy.forward(&features)?;
        let (a, logp) = nn::sample_action(&logits, rng)?;
        let value = bundle.value.forward(&features)?[0];
        let scale = env.reward_scale();
        let tr = env.step(Action::from_index(a).expect("three actions"))?;
        let reward = if config.reward_normalization { tr.reward * scale } else { tr.reward };
        buffer.push(&features, a, reward, value, logp, tr.done)?;
        episode_return += tr.reward * scale;
        last_done = tr.done;
        if tr.done {
            completed.push(episode_return);
            episode_return = 0.0;
            let window = sample_window(env.series(), episode_length, rng)?;
            env.reset(window)?;
        }
    }
    let last_value = if last_done { 0.0 } else { bundle.value.forward(&env.observe_features())?[0] };
    Ok((buffer, completed, last_value))
}

/// One epoch: rollout, GAE, policy and value updates.
pub fn run_epoch(
    env: &mut TradingEnv,
    bundle: &mut PolicyBundle,
    config: &PpoConfig,
    epoch: usize,
    rng: &mut ChaCha8Rng,
) -> Result<EpochMetrics, PpoError> {
    let started = Instant::now();
    let (mut buffer, completed, last_value) = collect_rollout(env, bundle, config, rng)?;
    buffer.finalize(last_value, config.gamma, config.gae_lambda, config.advantage_normalization)?;
    let stats = update(bundle, &buffer, config)?;
    let mean_episode_return = if completed.is_empty() {
        f64::NAN
    } else {
        completed.iter().sum::<f64>() / completed.len() as f64
    };
    Ok(EpochMetrics {
        epoch,
        mean_episode_return,
        episodes: completed.len(),
        policy_loss: stats.policy_loss,
        value_loss: stats.value_loss,
        kl: stats.kl,
        entropy: stats.entropy,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

/// RNG for one epoch, independent of every other epoch so that resumed
/// runs replay exactly.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    rng
}

pub const META_EPOCHS_COMPLETED: &str = "epochs_completed";
pub const META_SEED: &str = "seed";
pub const META_TAX: &str = "tax_enabled";

pub fn epochs_completed(bundle: &PolicyBundle) -> usize {
    bundle.meta.get(META_EPOCHS_COMPLETED).and_then(|s| s.parse().ok()).unwrap_or(0)
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Rewritten after every epoch.
    pub checkpoint_path: Option<PathBuf>,
    /// One row appended per epoch; header written when the file is new.
    pub metrics_path: Option<PathBuf>,
    /// Continue from this bundle instead of a fresh initialization.
    pub resume: Option<PolicyBundle>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub bundle: PolicyBundle,
    pub metrics: Vec<EpochMetrics>,
}

pub fn init_bundle(env_config: &EnvConfig, config: &PpoConfig, seed: u64) -> PolicyBundle {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bundle = PolicyBundle::new(env_config.obs_dim(), config.optimizer, &mut rng);
    bundle.meta.insert(META_EPOCHS_COMPLETED.into(), "0".into());
    bundle.meta.insert(META_SEED.into(), seed.to_string());
    bundle.meta.insert(META_TAX.into(), env_config.tax_enabled.to_string());
    bundle
}

/// Runs epochs `epochs_completed .. config.epochs`, checkpointing and
/// logging after each.
pub fn train(
    config: &PpoConfig,
    env_config: &EnvConfig,
    series: Arc<PriceSeries>,
    seed: u64,
    options: TrainOptions,
) -> Result<TrainOutcome, PpoError> {
    config.validate()?;
    let mut env = TradingEnv::new(env_config.clone(), series)?;
    let mut bundle = match options.resume {
        Some(b) => b,
        None => init_bundle(env_config, config, seed),
    };
    let start_epoch = epochs_completed(&bundle);

    let mut metrics_out = match &options.metrics_path {
        Some(path) => {
            let fresh = !path.exists() || start_epoch == 0;
            let file = if fresh {
                File::create(path)
            } else {
                OpenOptions::new().append(true).open(path)
            }
            .map_err(io_err(path))?;
            let mut w = BufWriter::new(file);
            if fresh {
                writeln!(w, "{METRICS_HEADER}").map_err(io_err(path))?;
            }
            Some((path.clone(), w))
        }
        None => None,
    };

    let mut metrics = Vec::new();
    for epoch in start_epoch..config.epochs {
        let mut rng = epoch_rng(seed, epoch);
        let m = run_epoch(&mut env, &mut bundle, config, epoch, &mut rng)?;
        bundle.meta.insert(META_EPOCHS_COMPLETED.into(), (epoch + 1).to_string());
        if let Some((path, w)) = metrics_out.as_mut() {
            writeln!(w, "{}", m.csv_row()).map_err(io_err(path))?;
            w.flush().map_err(io_err(path))?;
        }
        if let Some(path) = &options.checkpoint_path {
            bundle.save(path)?;
        }
        metrics.push(m);
    }
    if let Some(path) = &options.checkpoint_path {
        if metrics.is_empty() {
            bundle.save(path)?;
        }
    }
    Ok(TrainOutcome { bundle, metrics })
}
