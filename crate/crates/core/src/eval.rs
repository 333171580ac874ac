//! Policy evaluation over fixed sets of episode windows.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::sync::Arc;

use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::{Action, EnvConfig, EnvError, TradingEnv};
use crate::market::{sample_window, DataError, EpisodeWindow, PriceSeries};
use crate::nn::{self, MlpParams, NnError};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("need at least one evaluation episode")]
    NoEpisodes,
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
}

/// Something that picks an action from observation features.
pub trait Policy {
    fn act(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Result<Action, EvalError>;
}

/// Fixed-action baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scripted(pub Action);

impl Policy for Scripted {
    fn act(&self, _features: &[f64], _rng: &mut ChaCha8Rng) -> Result<Action, EvalError> {
        Ok(self.0)
    }
}

/// A trained policy network, sampled or argmax.
#[derive(Debug, Clone, Copy)]
pub struct NetPolicy<'a> {
    pub net: &'a MlpParams,
    pub greedy: bool,
}

impl Policy for NetPolicy<'_> {
    fn act(&self, features: &[f64], rng: &mut ChaCha8Rng) -> Result<Action, EvalError> {
        let logits = self.net.forward(features)?;
        let (a, _) = if self.greedy { nn::greedy_action(&logits)? } else { nn::sample_action(&logits, rng)? };
        Ok(Action::from_index(a).expect("three actions"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub window_start: usize,
    pub episode_return: f64,
    pub gain_tax: f64,
    pub loss_rebate: f64,
    pub txn_cost: f64,
    pub trades: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub n_episodes: usize,
    pub mean_return: f64,
    /// Sample standard deviation (n - 1 denominator; 0 for one episode).
    pub std_return: f64,
    pub episodes: Vec<EpisodeResult>,
    pub total_taxes: f64,
    pub total_rebates: f64,
    pub total_costs: f64,
}

impl EvalReport {
    pub fn from_episodes(episodes: Vec<EpisodeResult>) -> Result<Self, EvalError> {
        let n = episodes.len();
        if n == 0 {
            return Err(EvalError::NoEpisodes);
        }
        let returns: Vec<f64> = episodes.iter().map(|e| e.episode_return).collect();
        let (mean_return, std_return) = mean_std(&returns);
        Ok(Self {
            n_episodes: n,
            mean_return,
            std_return,
            total_taxes: episodes.iter().map(|e| e.gain_tax).sum(),
            total_rebates: episodes.iter().map(|e| e.loss_rebate).sum(),
            total_costs: episodes.iter().map(|e| e.txn_cost).sum(),
            episodes,
        })
    }

    pub fn returns(&self) -> Vec<f64> {
        self.episodes.iter().map(|e| e.episode_return).collect()
    }

    pub fn standard_error(&self) -> f64 {
        self.std_return / (self.n_episodes as f64).sqrt()
    }

    pub fn window_starts(&self) -> Vec<usize> {
        self.episodes.iter().map(|e| e.window_start).collect()
    }

    /// `key = value` text summary.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n_episodes = {}", self.n_episodes).unwrap();
        writeln!(s, "mean_return = {}", self.mean_return).unwrap();
        writeln!(s, "std_return = {}", self.std_return).unwrap();
        writeln!(s, "total_taxes = {}", self.total_taxes).unwrap();
        writeln!(s, "total_rebates = {}", self.total_rebates).unwrap();
        writeln!(s, "total_costs = {}", self.total_costs).unwrap();
        s
    }

    pub fn episodes_csv(&self) -> String {
        let mut s = String::from("episode,window_start,return,gain_tax,loss_rebate,txn_cost,trades\n");
        for (i, e) in self.episodes.iter().enumerate() {
            writeln!(
                s,
                "{i},{},{},{},{},{},{}",
                e.window_start, e.episode_return, e.gain_tax, e.loss_rebate, e.txn_cost, e.trades
            )
            .unwrap();
        }
        s
    }
}

/// Mean and sample standard deviation.
pub fn mean_std(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    if x.len() < 2 {
        return (mean, 0.0);
    }
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// `n` windows drawn from a seed dedicated to window placement, so every
/// policy evaluated with the same seed sees the same windows.
pub fn eval_windows(series: &PriceSeries, episode_length: usize, n: usize, seed: u64) -> Result<Vec<EpisodeWindow>, EvalError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| Ok(sample_window(series, episode_length, &mut rng)?)).collect()
}

fn action_rng(seed: u64, episode: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_ac71_0000_0000);
    rng.set_stream(episode as u64);
    rng
}

pub fn run_episode<P: Policy + ?Sized>(
    env: &mut TradingEnv,
    policy: &P,
    window: EpisodeWindow,
    rng: &mut ChaCha8Rng,
) -> Result<EpisodeResult, EvalError> {
    env.reset(window)?;
    let scale = env.reward_scale();
    let mut total = 0.0;
    let mut result =
        EpisodeResult { window_start: window.start, episode_return: 0.0, gain_tax: 0.0, loss_rebate: 0.0, txn_cost: 0.0, trades: 0 };
    loop {
        let before = env.ledger_state().position;
        let action = policy.act(&env.observe_features(), rng)?;
        let tr = env.step(action)?;
        total += tr.reward;
        result.gain_tax += tr.cashflow.gain_tax;
        result.loss_rebate += tr.cashflow.loss_rebate;
        result.txn_cost += tr.cashflow.txn_cost;
        if env.ledger_state().position != before {
            result.trades += 1;
        }
        if tr.done {
            break;
        }
    }
    result.episode_return = total * scale;
    Ok(result)
}

/// Runs `policy` once on every window.
pub fn evaluate<P: Policy + ?Sized>(
    policy: &P,
    env_config: &EnvConfig,
    series: Arc<PriceSeries>,
    windows: &[EpisodeWindow],
    seed: u64,
) -> Result<EvalReport, EvalError> {
    let mut env = TradingEnv::new(env_config.clone(), series)?;
    let episodes = windows
        .iter()
        .enumerate()
        .map(|(i, &w)| run_episode(&mut env, policy, w, &mut action_rng(seed, i)))
        .collect::<Result<Vec<_>, _>>()?;
    EvalReport::from_episodes(episodes)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CrossEvalReport {
    /// Tax-aware policy in the taxed environment.
    pub tax_aware: EvalReport,
    /// Tax-naive policy in the taxed environment.
    pub tax_naive: EvalReport,
    /// Tax-naive policy in the untaxed environment it was trained in.
    pub tax_naive_untaxed: EvalReport,
    /// `(aware - naive) / aware`.
    pub relative_loss: f64,
}

impl CrossEvalReport {
    pub fn new(tax_aware: EvalReport, tax_naive: EvalReport, tax_naive_untaxed: EvalReport) -> Self {
        let relative_loss = if tax_aware.mean_return == tax_naive.mean_return {
            0.0
        } else {
            (tax_aware.mean_return - tax_naive.mean_return) / tax_aware.mean_return
        };
        Self { tax_aware, tax_naive, tax_naive_untaxed, relative_loss }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "n_episodes = {}", self.tax_aware.n_episodes).unwrap();
        writeln!(s, "tax_aware_mean_return = {}", self.tax_aware.mean_return).unwrap();
        writeln!(s, "tax_aware_std_return = {}", self.tax_aware.std_return).unwrap();
        writeln!(s, "tax_naive_mean_return = {}", self.tax_naive.mean_return).unwrap();
        writeln!(s, "tax_naive_std_return = {}", self.tax_naive.std_return).unwrap();
        writeln!(s, "tax_naive_untaxed_mean_return = {}", self.tax_naive_untaxed.mean_return).unwrap();
        writeln!(s, "relative_loss = {}", self.relative_loss).unwrap();
        writeln!(s, "tax_aware_total_taxes = {}", self.tax_aware.total_taxes).unwrap();
        writeln!(s, "tax_naive_total_taxes = {}", self.tax_naive.total_taxes).unwrap();
        s
    }

    /// One row per common window.
    pub fn comparison_csv(&self) -> String {
        let mut s = String::from("episode,window_start,tax_aware_return,tax_naive_return,tax_naive_untaxed_return\n");
        let rows = self.tax_aware.episodes.iter().zip(&self.tax_naive.episodes).zip(&self.tax_naive_untaxed.episodes);
        for (i, ((a, n), u)) in rows.enumerate() {
            writeln!(s, "{i},{},{},{},{}", a.window_start, a.episode_return, n.episode_return, u.episode_return).unwrap();
        }
        s
    }
}

/// Both policies in the taxed environment on identical windows and
/// action-sampling seeds, plus the naive policy in the same environment with
/// taxes switched off.
pub fn cross_evaluate<A: Policy + ?Sized, N: Policy + ?Sized>(
    tax_aware: &A,
    tax_naive: &N,
    taxed_env: &EnvConfig,
    series: Arc<PriceSeries>,
    n_episodes: usize,
    seed: u64,
) -> Result<CrossEvalReport, EvalError> {
    let windows = eval_windows(&series, taxed_env.episode_length, n_episodes, seed)?;
    let aware = evaluate(tax_aware, taxed_env, series.clone(), &windows, seed)?;
    let naive = evaluate(tax_naive, taxed_env, series.clone(), &windows, seed)?;
    let untaxed_env = EnvConfig { tax_enabled: false, ..taxed_env.clone() };
    let naive_untaxed = evaluate(tax_naive, &untaxed_env, series, &windows, seed)?;
    debug_assert_eq!(aware.window_starts(), naive.window_starts());
    Ok(CrossEvalReport::new(aware, naive, naive_untaxed))
}

pub fn write_file(path: &Path, contents: &str) -> Result<(), EvalError> {
    fs::write(path, contents).map_err(|source| EvalError::Io { path: path.display().to_string(), source })
}
