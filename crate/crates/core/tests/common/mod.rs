//! Independent reference implementations shared by the integration tests and
//! the acceptance runner. Nothing here calls the code it is checking except
//! to obtain the value under test.

#![allow(dead_code)]

use std::sync::Arc;

use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use taxtrade::env::{Action, EnvConfig, TradingEnv};
use taxtrade::ledger::{self, BasisState, Branch, CostMode, ShortCoverConvention, TaxParams};
use taxtrade::market::{synthetic_gbm, EpisodeWindow, PriceSeries};
use taxtrade::nn::{self, MlpParams};
use taxtrade::ppo;

/// Relative difference, absolute below magnitude 1.
pub fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1.0)
}

/// Average-cost ledger kept as total cost and dollar-days rather than
/// per-share averages.
#[derive(Debug, Clone, Copy, Default)]
pub struct OracleLedger {
    pub position: f64,
    pub cost: f64,
    pub dollar_days: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OracleCash {
    pub gain_tax: f64,
    pub loss_rebate: f64,
    pub txn_cost: f64,
}

impl OracleCash {
    pub fn net(&self) -> f64 {
        self.loss_rebate - self.gain_tax - self.txn_cost
    }
}

impl OracleLedger {
    pub fn basis(&self) -> f64 {
        self.cost / self.position.abs()
    }

    pub fn holding(&self) -> f64 {
        if self.cost == 0.0 {
            0.0
        } else {
            self.dollar_days / self.cost
        }
    }

    /// Shares of the current position closed by moving to `target`.
    pub fn closed_shares(&self, target: f64) -> f64 {
        let a = self.position;
        if a > 0.0 {
            (a - target.max(0.0)).clamp(0.0, a)
        } else if a < 0.0 {
            (-a - (-target).max(0.0)).clamp(0.0, -a)
        } else {
            0.0
        }
    }

    pub fn trade(&mut self, price: f64, target: f64, p: &TaxParams) -> OracleCash {
        let a = self.position;
        let closed = self.closed_shares(target);
        let mut cash = OracleCash { gain_tax: 0.0, loss_rebate: 0.0, txn_cost: 0.0 };
        if closed > 0.0 {
            let b = self.basis();
            let economic_short = a < 0.0 && p.short_cover_convention == ShortCoverConvention::Economic;
            let per_share = if economic_short { b - price } else { price - b };
            let rate = if self.holding() >= p.long_term_threshold { p.rate_long } else { p.rate_short };
            if per_share >= 0.0 {
                cash.gain_tax = per_share * closed * rate;
            } else {
                cash.loss_rebate = -per_share * closed * p.rate_short;
            }
        }
        cash.txn_cost = match p.txn_cost_mode {
            CostMode::Notional => p.txn_cost_rate * price * (target - a).abs(),
            CostMode::Pnl => {
                if closed > 0.0 {
                    p.txn_cost_rate * (price - self.basis()).abs() * closed
                } else {
                    0.0
                }
            }
        };

        self.dollar_days += self.cost * p.dt;
        if a * target <= 0.0 {
            self.cost = price * target.abs();
            self.dollar_days = 0.0;
        } else if target.abs() > a.abs() {
            self.cost += price * (target.abs() - a.abs());
        } else {
            let keep = target.abs() / a.abs();
            self.cost *= keep;
            self.dollar_days *= keep;
        }
        self.position = target;
        cash
    }
}

pub fn random_params(rng: &mut ChaCha8Rng) -> TaxParams {
    let rate_short = rng.random_range(0.0..0.5);
    TaxParams {
        rate_long: rng.random_range(0.0..=rate_short),
        rate_short,
        long_term_threshold: rng.random_range(1.0..20.0),
        txn_cost_rate: rng.random_range(0.0..0.01),
        txn_cost_mode: if rng.random_bool(0.5) { CostMode::Notional } else { CostMode::Pnl },
        dt: if rng.random_bool(0.5) { 1.0 } else { rng.random_range(0.5..3.0) },
        short_cover_convention: if rng.random_bool(0.5) {
            ShortCoverConvention::AsWritten
        } else {
            ShortCoverConvention::Economic
        },
        annual_loss_offset_cap: None,
    }
}

/// Integer positions in -200..=200, with a bias toward holding or hitting zero
/// so every branch shows up often.
pub fn random_target(rng: &mut ChaCha8Rng, current: f64) -> f64 {
    match rng.random_range(0..10) {
        0 => 0.0,
        1 | 2 => current,
        3 => -current,
        _ => rng.random_range(-200..=200) as f64,
    }
}

#[derive(Debug, Default, Clone)]
pub struct LedgerCheck {
    pub paths: usize,
    pub steps: usize,
    pub reset: usize,
    pub short_extend: usize,
    pub long_extend: usize,
    pub reduce_or_hold: usize,
    pub max_cost_err: f64,
    pub max_holding_err: f64,
    pub max_cash_err: f64,
    pub max_liquidation_err: f64,
    pub liquidations: usize,
}

impl LedgerCheck {
    pub fn max_err(&self) -> f64 {
        self.max_cost_err.max(self.max_holding_err).max(self.max_cash_err).max(self.max_liquidation_err)
    }

    pub fn all_branches(&self) -> bool {
        self.reset > 0 && self.short_extend > 0 && self.long_extend > 0 && self.reduce_or_hold > 0
    }
}

/// Runs the ledger and the oracle side by side on random paths.
///
/// Total cost: `avg_basis * |position|` against the oracle's running cost, and
/// `avg_holding` against dollar-days over cost. Full liquidation: over every
/// stretch from opening a side to closing it, the realized P&L summed by the
/// ledger equals the cash the trades in that stretch actually produced.
pub fn check_ledger_paths(rng: &mut ChaCha8Rng, paths: usize, steps: usize) -> LedgerCheck {
    let mut out = LedgerCheck { paths, ..Default::default() };
    for _ in 0..paths {
        let params = random_params(rng);
        let mut price: f64 = rng.random_range(20.0..200.0);
        let mut state = BasisState::flat(price);
        let mut oracle = OracleLedger::default();
        let mut stretch_pnl = 0.0;
        let mut stretch_cash = 0.0;
        for i in 0..steps {
            price = (price * rng.random_range(0.9..1.1)).max(1.0);
            let target = if i + 1 == steps { 0.0 } else { random_target(rng, state.position) };
            let a = state.position;
            match ledger::branch(a, target) {
                Branch::Reset => out.reset += 1,
                Branch::ShortExtend => out.short_extend += 1,
                Branch::Otherwise if a > 0.0 && target > a => out.long_extend += 1,
                Branch::Otherwise => out.reduce_or_hold += 1,
            }

            let pnl = ledger::realized_pnl(&state, price, target);
            let (next, cf) = ledger::step_ledger(&state, price, target, &params).unwrap();
            let oc = oracle.trade(price, target, &params);
            out.steps += 1;

            out.max_cash_err = out
                .max_cash_err
                .max(rel(cf.gain_tax, oc.gain_tax))
                .max(rel(cf.loss_rebate, oc.loss_rebate))
                .max(rel(cf.txn_cost, oc.txn_cost))
                .max(rel(cf.net, oc.net()));
            if target != 0.0 {
                out.max_cost_err = out.max_cost_err.max(rel(next.avg_basis * target.abs(), oracle.cost));
                out.max_holding_err = out.max_holding_err.max(rel(next.avg_holding, oracle.holding()));
            }

            // Split a flip into a close of the old side and an open of the new one.
            let closes_side = a != 0.0 && a * target <= 0.0;
            let close_qty = if closes_side { -a } else { target - a };
            stretch_pnl += pnl;
            stretch_cash -= close_qty * price;
            if closes_side {
                out.max_liquidation_err = out.max_liquidation_err.max(rel(stretch_pnl, stretch_cash));
                out.liquidations += 1;
                stretch_pnl = 0.0;
                stretch_cash = -target * price;
            }
            state = next;
        }
    }
    out
}

pub fn random_series(rng: &mut ChaCha8Rng, n: usize) -> Arc<PriceSeries> {
    let mu = rng.random_range(-0.5..0.5);
    let sigma = rng.random_range(0.05..0.6);
    Arc::new(synthetic_gbm(rng.random(), n, rng.random_range(20.0..300.0), mu, sigma).unwrap())
}

#[derive(Debug, Default, Clone, Copy)]
pub struct WealthCheck {
    pub episodes: usize,
    pub max_err: f64,
}

/// Sum of rewards against the change in a separately simulated cash-plus-stock
/// equity, plus the oracle's tax and cost cashflows.
pub fn check_wealth(rng: &mut ChaCha8Rng, episodes: usize) -> WealthCheck {
    let mut out = WealthCheck { episodes, max_err: 0.0 };
    for _ in 0..episodes {
        let series = random_series(rng, 120);
        let config = EnvConfig {
            tax_enabled: rng.random_bool(0.7),
            lot_size: rng.random_range(1..=200) as f64,
            episode_length: rng.random_range(1..=100),
            tax_params: random_params(rng),
            include_position: true,
        };
        let window = EpisodeWindow::new(&series, rng.random_range(0..series.len() - config.episode_length), config.episode_length)
            .unwrap();
        let mut env = TradingEnv::new(config.clone(), series.clone()).unwrap();
        env.reset(window).unwrap();
        let closes = series.closes();
        let mut oracle = OracleLedger::default();
        let (mut cash, mut rewards, mut net) = (0.0, 0.0, 0.0);
        let mut position = 0.0;
        for t in 0..config.episode_length {
            let action = Action::ALL[rng.random_range(0..3)];
            let tr = env.step(action).unwrap();
            rewards += tr.reward;
            let price = closes[window.start + t];
            let target = config.lot_size * action.direction();
            let oc = oracle.trade(price, target, &config.tax_params);
            net += if config.tax_enabled { oc.net() } else { -oc.txn_cost };
            cash -= (target - position) * price;
            position = target;
        }
        let equity = cash + position * closes[window.start + config.episode_length];
        out.max_err = out.max_err.max(rel(rewards, equity + net));
    }
    out
}

/// O(T^2) advantage sum: `A_t = sum_l (gamma lambda)^l delta_{t+l}`, stopping
/// after the first terminal step.
pub fn gae_brute(rewards: &[f64], values: &[f64], dones: &[bool], gamma: f64, lambda: f64) -> Vec<f64> {
    let n = rewards.len();
    (0..n)
        .map(|t| {
            let mut total = 0.0;
            let mut w = 1.0;
            for k in t..n {
                let next = if dones[k] { 0.0 } else { values[k + 1] };
                total += w * (rewards[k] + gamma * next - values[k]);
                if dones[k] {
                    break;
                }
                w *= gamma * lambda;
            }
            total
        })
        .collect()
}

pub fn check_gae(rng: &mut ChaCha8Rng, trials: usize, max_len: usize) -> f64 {
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let n = rng.random_range(1..=max_len);
        let rewards: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let values: Vec<f64> = (0..=n).map(|_| rng.random_range(-2.0..2.0)).collect();
        let dones: Vec<bool> = (0..n).map(|_| rng.random_bool(0.2)).collect();
        let gamma = rng.random_range(0.0..=1.0);
        let lambda = rng.random_range(0.0..=1.0);
        let (adv, ret) = ppo::compute_gae(&rewards, &values, &dones, gamma, lambda).unwrap();
        let brute = gae_brute(&rewards, &values, &dones, gamma, lambda);
        for t in 0..n {
            worst = worst.max((adv[t] - brute[t]).abs()).max((ret[t] - brute[t] - values[t]).abs());
        }
    }
    worst
}

/// `|analytic - numeric| / max(|analytic|, |numeric|, 1e-6)`.
pub fn grad_rel(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `f` along flat parameter `idx`.
pub fn numeric_grad(params: &MlpParams, idx: usize, h: f64, f: impl Fn(&MlpParams) -> f64) -> f64 {
    let perturbed = |delta: f64| {
        let mut p = params.clone();
        let mut k = idx;
        for t in p.tensors_mut() {
            if k < t.len() {
                t[k] += delta;
                break;
            }
            k -= t.len();
        }
        f(&p)
    };
    (perturbed(h) - perturbed(-h)) / (2.0 * h)
}

pub fn random_net(rng: &mut ChaCha8Rng, in_dim: usize, out_dim: usize) -> MlpParams {
    let mut net = MlpParams::standard(in_dim, out_dim, 1.0, rng);
    for t in net.tensors_mut() {
        for v in t.iter_mut() {
            *v += rng.random_range(-0.1..0.1);
        }
    }
    net
}

pub fn random_obs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
    Array2::from_shape_fn((n, dim), |_| rng.random_range(-1.5..1.5))
}

const FD_STEP: f64 = 1e-5;
const FD_SAMPLES: usize = 12;

fn sample_indices(rng: &mut ChaCha8Rng, n: usize) -> Vec<usize> {
    (0..FD_SAMPLES).map(|_| rng.random_range(0..n)).collect()
}

/// Gradient of the mean log-probability of chosen actions.
pub fn fd_log_prob(rng: &mut ChaCha8Rng) -> f64 {
    let dim = rng.random_range(1..=6);
    let net = random_net(rng, dim, nn::NUM_ACTIONS);
    let n = rng.random_range(1..=5);
    let obs = random_obs(rng, n, dim);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..nn::NUM_ACTIONS)).collect();
    let objective = |p: &MlpParams| {
        (0..n)
            .map(|i| {
                let logits = p.forward(obs.row(i).as_slice().unwrap()).unwrap();
                nn::log_prob_and_entropy(&logits, actions[i]).unwrap().0
            })
            .sum::<f64>()
            / n as f64
    };
    let cache = net.forward_batch(obs.view()).unwrap();
    let mut seed = Array2::zeros((n, nn::NUM_ACTIONS));
    for i in 0..n {
        let p = nn::softmax(cache.output().row(i).as_slice().unwrap());
        for j in 0..nn::NUM_ACTIONS {
            seed[[i, j]] = ((j == actions[i]) as u8 as f64 - p[j]) / n as f64;
        }
    }
    let (grads, _) = net.backward(&cache, seed.view()).unwrap();
    let flat = grads.flatten();
    sample_indices(rng, flat.len())
        .into_iter()
        .map(|k| grad_rel(flat[k], numeric_grad(&net, k, FD_STEP, objective)))
        .fold(0.0, f64::max)
}

pub fn fd_value(rng: &mut ChaCha8Rng) -> f64 {
    let dim = rng.random_range(1..=6);
    let net = random_net(rng, dim, 1);
    let n = rng.random_range(1..=8);
    let obs = random_obs(rng, n, dim);
    let returns: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let objective = |p: &MlpParams| {
        (0..n)
            .map(|i| {
                let v = p.forward(obs.row(i).as_slice().unwrap()).unwrap()[0];
                (v - returns[i]).powi(2)
            })
            .sum::<f64>()
            / n as f64
    };
    let (loss, grads) = ppo::value_gradient(&net, obs.view(), &returns).unwrap();
    assert!((loss - objective(&net)).abs() < 1e-12);
    let flat = grads.flatten();
    sample_indices(rng, flat.len())
        .into_iter()
        .map(|k| grad_rel(flat[k], numeric_grad(&net, k, FD_STEP, objective)))
        .fold(0.0, f64::max)
}

/// Clipped surrogate with an entropy bonus. Old log-probabilities are
/// perturbed so that some samples clip; samples too close to a clip edge for
/// a central difference are redrawn.
pub fn fd_clipped(rng: &mut ChaCha8Rng) -> f64 {
    let dim = rng.random_range(1..=6);
    let net = random_net(rng, dim, nn::NUM_ACTIONS);
    let n = rng.random_range(2..=8);
    let obs = random_obs(rng, n, dim);
    let actions: Vec<usize> = (0..n).map(|_| rng.random_range(0..nn::NUM_ACTIONS)).collect();
    let advantages: Vec<f64> = (0..n).map(|_| rng.random_range(-2.0..2.0)).collect();
    let clip = 0.2;
    let entropy_coef = if rng.random_bool(0.5) { 0.0 } else { 0.05 };
    let logp: Vec<f64> = (0..n)
        .map(|i| nn::log_prob_and_entropy(&net.forward(obs.row(i).as_slice().unwrap()).unwrap(), actions[i]).unwrap().0)
        .collect();
    let old: Vec<f64> = logp
        .iter()
        .map(|&lp| loop {
            let o = lp + rng.random_range(-0.5..0.5);
            let r = (lp - o).exp();
            if (r - (1.0 - clip)).abs() > 1e-3 && (r - (1.0 + clip)).abs() > 1e-3 {
                break o;
            }
        })
        .collect();
    // Reference loss computed from scratch.
    let objective = |p: &MlpParams| {
        let mut loss = 0.0;
        for i in 0..n {
            let logits = p.forward(obs.row(i).as_slice().unwrap()).unwrap();
            let (lp, h) = nn::log_prob_and_entropy(&logits, actions[i]).unwrap();
            let r = (lp - old[i]).exp();
            let a = advantages[i];
            loss += -(r * a).min(r.clamp(1.0 - clip, 1.0 + clip) * a) - entropy_coef * h;
        }
        loss / n as f64
    };
    let g = ppo::policy_gradient(&net, obs.view(), &actions, &old, &advantages, clip, entropy_coef).unwrap();
    assert!((g.loss - objective(&net)).abs() < 1e-12);
    let flat = g.grads.flatten();
    sample_indices(rng, flat.len())
        .into_iter()
        .map(|k| grad_rel(flat[k], numeric_grad(&net, k, FD_STEP, objective)))
        .fold(0.0, f64::max)
}

pub fn mean_se(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy)]
pub struct Learning {
    pub baseline_mean: f64,
    pub baseline_se: f64,
    pub trained_mean: f64,
    pub trained_se: f64,
}

impl Learning {
    /// Improvement in units of the combined standard error.
    pub fn z(&self) -> f64 {
        (self.trained_mean - self.baseline_mean) / self.baseline_se.hypot(self.trained_se)
    }
}

/// Trains without taxes on a steadily rising series and evaluates the initial
/// and the trained policy on the same held-out windows and action seeds.
pub fn learning_smoke(seed: u64, epochs: usize, steps_per_epoch: usize, episode_length: usize) -> Learning {
    use taxtrade::eval::{eval_windows, evaluate, NetPolicy};
    let series = Arc::new(synthetic_gbm(seed, 4 * episode_length + 1, 100.0, 0.8, 0.15).unwrap());
    let env = EnvConfig { tax_enabled: false, episode_length, ..EnvConfig::default() };
    let config = ppo::PpoConfig { epochs, steps_per_epoch, ..ppo::PpoConfig::default() };
    let initial = ppo::init_bundle(&env, &config, seed);
    let outcome = ppo::train(&config, &env, series.clone(), seed, ppo::TrainOptions::default()).unwrap();
    let windows = eval_windows(&series, episode_length, 100, seed + 1).unwrap();
    let eval = |net: &MlpParams| {
        let r = evaluate(&NetPolicy { net, greedy: false }, &env, series.clone(), &windows, seed + 2).unwrap();
        (r.mean_return, r.standard_error())
    };
    let (baseline_mean, baseline_se) = eval(&initial.policy);
    let (trained_mean, trained_se) = eval(&outcome.bundle.policy);
    Learning { baseline_mean, baseline_se, trained_mean, trained_se }
}
