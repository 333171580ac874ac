//! Run settings resolved from defaults, a `key = value` file, `TAXTRADE_*`
//! environment variables and command-line flags, in that order of precedence.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use taxtrade::env::EnvConfig;
use taxtrade::ledger::{CostMode, ShortCoverConvention, TaxParams};
use taxtrade::nn::OptimizerKind;
use taxtrade::ppo::PpoConfig;

pub const ENV_PREFIX: &str = "TAXTRADE_";

pub struct Key {
    pub name: &'static str,
    pub help: &'static str,
}

const fn key(name: &'static str, help: &'static str) -> Key {
    Key { name, help }
}

/// Every settable key. Flags are `--<name>`, file keys are `<name>` (with `-`
/// or `_`), environment variables are `TAXTRADE_<NAME>` with `_`.
pub const KEYS: &[Key] = &[
    key("config", "key = value settings file"),
    key("data", "daily price CSV (date,close,volume)"),
    key("seed", "random seed [0]"),
    key("tax", "tax-aware environment: on|off [on]"),
    key("out", "output directory [out]"),
    key("epochs", "training epochs [50]"),
    key("steps-per-epoch", "environment steps per epoch [5000]"),
    key("episode-length", "trading days per episode [1260]"),
    key("lot-size", "shares per position unit [100]"),
    key("include-position", "add position to observations: true|false [true]"),
    key("rate-long", "long-term gain tax rate [0.15]"),
    key("rate-short", "short-term gain tax rate, also used for loss rebates [0.25]"),
    key("long-term-threshold", "holding days for long-term treatment [252]"),
    key("txn-cost-rate", "transaction cost rate [0.001]"),
    key("txn-cost-mode", "notional|pnl [notional]"),
    key("dt", "trading days per step [1]"),
    key("short-cover", "as-written|economic [as-written]"),
    key("loss-cap", "yearly loss offset cap or none [none]"),
    key("clip-ratio", "PPO clip ratio [0.2]"),
    key("gae-lambda", "GAE lambda [0.97]"),
    key("gamma", "discount factor [0.99]"),
    key("policy-lr", "policy learning rate [0.001]"),
    key("value-lr", "value learning rate [0.0003]"),
    key("policy-iters", "policy gradient steps per epoch [80]"),
    key("value-iters", "value gradient steps per epoch [80]"),
    key("target-kl", "early-stop KL threshold or none [0.015]"),
    key("adv-norm", "normalize advantages: true|false [true]"),
    key("reward-norm", "scale rewards by initial notional: true|false [true]"),
    key("entropy-coef", "entropy bonus coefficient [0]"),
    key("optimizer", "adam|sgd [adam]"),
    key("resume", "continue training from this checkpoint"),
    key("checkpoint", "policy checkpoint to evaluate"),
    key("policy", "checkpoint|always-long|always-flat|always-short [checkpoint]"),
    key("checkpoint-aware", "checkpoint trained with taxes"),
    key("checkpoint-naive", "checkpoint trained without taxes"),
    key("n-episodes", "evaluation episodes [100]"),
    key("greedy", "argmax actions instead of sampling: true|false [false]"),
    key("trades", "trade log CSV (date,price,target_position[,elapsed])"),
];

pub fn env_var_name(key: &str) -> String {
    format!("{ENV_PREFIX}{}", key.to_ascii_uppercase().replace('-', "_"))
}

fn canonical(key: &str) -> Option<&'static str> {
    let k = key.trim().replace('_', "-").to_ascii_lowercase();
    KEYS.iter().find(|x| x.name == k).map(|x| x.name)
}

/// `key = value` lines; `#` starts a comment.
pub fn parse_config_text(text: &str, source: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| anyhow!("{source}:{}: expected key = value", i + 1))?;
        let name = canonical(k).ok_or_else(|| anyhow!("{source}:{}: unknown key {:?}", i + 1, k.trim()))?;
        out.insert(name.to_string(), v.trim().to_string());
    }
    Ok(out)
}

pub fn read_config_file(path: &Path) -> Result<BTreeMap<String, String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read config file {}", path.display()))?;
    parse_config_text(&text, &path.display().to_string())
}

/// Merges the layers. `lookup_env` is injectable for tests.
pub fn resolve(
    flags: &BTreeMap<String, String>,
    lookup_env: impl Fn(&str) -> Option<String>,
) -> Result<BTreeMap<String, String>> {
    let mut env = BTreeMap::new();
    for k in KEYS {
        if let Some(v) = lookup_env(&env_var_name(k.name)) {
            env.insert(k.name.to_string(), v);
        }
    }
    let config_path = flags.get("config").or_else(|| env.get("config"));
    let mut merged = match config_path {
        Some(p) => read_config_file(Path::new(p))?,
        None => BTreeMap::new(),
    };
    merged.extend(env);
    merged.extend(flags.iter().map(|(k, v)| (k.clone(), v.clone())));
    Ok(merged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PolicyChoice {
    Checkpoint,
    AlwaysLong,
    AlwaysFlat,
    AlwaysShort,
}

#[derive(Debug, Clone)]
pub struct Settings {
    pub data: Option<PathBuf>,
    pub seed: u64,
    pub out: PathBuf,
    pub env: EnvConfig,
    pub ppo: PpoConfig,
    pub resume: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub policy: PolicyChoice,
    pub checkpoint_aware: Option<PathBuf>,
    pub checkpoint_naive: Option<PathBuf>,
    pub n_episodes: usize,
    pub greedy: bool,
    pub trades: Option<PathBuf>,
}

fn parse<T: std::str::FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: std::fmt::Display,
{
    v.parse::<T>().map_err(|e| anyhow!("invalid value {v:?} for {key}: {e}"))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v.to_ascii_lowercase().as_str() {
        "true" | "on" | "yes" | "1" => Ok(true),
        "false" | "off" | "no" | "0" => Ok(false),
        _ => bail!("invalid value {v:?} for {key}: expected on|off"),
    }
}

fn parse_optional_f64(key: &str, v: &str) -> Result<Option<f64>> {
    if v.eq_ignore_ascii_case("none") {
        Ok(None)
    } else {
        parse(key, v).map(Some)
    }
}

impl Settings {
    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut s = Settings {
            data: None,
            seed: 0,
            out: PathBuf::from("out"),
            env: EnvConfig::default(),
            ppo: PpoConfig::default(),
            resume: None,
            checkpoint: None,
            policy: PolicyChoice::Checkpoint,
            checkpoint_aware: None,
            checkpoint_naive: None,
            n_episodes: 100,
            greedy: false,
            trades: None,
        };
        let tp: &mut TaxParams = &mut s.env.tax_params;
        for (k, v) in map {
            let v = v.as_str();
            match k.as_str() {
                "config" => {}
                "data" => s.data = Some(v.into()),
                "seed" => s.seed = parse(k, v)?,
                "tax" => s.env.tax_enabled = parse_bool(k, v)?,
                "out" => s.out = v.into(),
                "epochs" => s.ppo.epochs = parse(k, v)?,
                "steps-per-epoch" => s.ppo.steps_per_epoch = parse(k, v)?,
                "episode-length" => s.env.episode_length = parse(k, v)?,
                "lot-size" => s.env.lot_size = parse(k, v)?,
                "include-position" => s.env.include_position = parse_bool(k, v)?,
                "rate-long" => tp.rate_long = parse(k, v)?,
                "rate-short" => tp.rate_short = parse(k, v)?,
                "long-term-threshold" => tp.long_term_threshold = parse(k, v)?,
                "txn-cost-rate" => tp.txn_cost_rate = parse(k, v)?,
                "txn-cost-mode" => {
                    tp.txn_cost_mode = match v {
                        "notional" => CostMode::Notional,
                        "pnl" => CostMode::Pnl,
                        _ => bail!("invalid value {v:?} for {k}: expected notional|pnl"),
                    }
                }
                "dt" => tp.dt = parse(k, v)?,
                "short-cover" => {
                    tp.short_cover_convention = match v {
                        "as-written" => ShortCoverConvention::AsWritten,
                        "economic" => ShortCoverConvention::Economic,
                        _ => bail!("invalid value {v:?} for {k}: expected as-written|economic"),
                    }
                }
                "loss-cap" => tp.annual_loss_offset_cap = parse_optional_f64(k, v)?,
                "clip-ratio" => s.ppo.clip_ratio = parse(k, v)?,
                "gae-lambda" => s.ppo.gae_lambda = parse(k, v)?,
                "gamma" => s.ppo.gamma = parse(k, v)?,
                "policy-lr" => s.ppo.policy_lr = parse(k, v)?,
                "value-lr" => s.ppo.value_lr = parse(k, v)?,
                "policy-iters" => s.ppo.policy_update_iters = parse(k, v)?,
                "value-iters" => s.ppo.value_update_iters = parse(k, v)?,
                "target-kl" => s.ppo.target_kl = parse_optional_f64(k, v)?,
                "adv-norm" => s.ppo.advantage_normalization = parse_bool(k, v)?,
                "reward-norm" => s.ppo.reward_normalization = parse_bool(k, v)?,
                "entropy-coef" => s.ppo.entropy_coef = parse(k, v)?,
                "optimizer" => {
                    s.ppo.optimizer = match v {
                        "adam" => OptimizerKind::Adam,
                        "sgd" => OptimizerKind::Sgd,
                        _ => bail!("invalid value {v:?} for {k}: expected adam|sgd"),
                    }
                }
                "resume" => s.resume = Some(v.into()),
                "checkpoint" => s.checkpoint = Some(v.into()),
                "policy" => {
                    s.policy = match v {
                        "checkpoint" => PolicyChoice::Checkpoint,
                        "always-long" => PolicyChoice::AlwaysLong,
                        "always-flat" => PolicyChoice::AlwaysFlat,
                        "always-short" => PolicyChoice::AlwaysShort,
                        _ => bail!("invalid value {v:?} for {k}"),
                    }
                }
                "checkpoint-aware" => s.checkpoint_aware = Some(v.into()),
                "checkpoint-naive" => s.checkpoint_naive = Some(v.into()),
                "n-episodes" => s.n_episodes = parse(k, v)?,
                "greedy" => s.greedy = parse_bool(k, v)?,
                "trades" => s.trades = Some(v.into()),
                other => bail!("unknown key {other:?}"),
            }
        }
        s.env.validate().map_err(|e| anyhow!("invalid environment settings: {e}"))?;
        s.ppo.validate().map_err(|e| anyhow!("invalid training settings: {e}"))?;
        Ok(s)
    }

    /// Resolved settings as `key = value` lines, readable back as a config file.
    pub fn to_text(&self) -> String {
        let tp = &self.env.tax_params;
        let opt = |x: Option<f64>| x.map_or("none".to_string(), |v| v.to_string());
        let mut lines = vec![
            format!("seed = {}", self.seed),
            format!("tax = {}", if self.env.tax_enabled { "on" } else { "off" }),
            format!("epochs = {}", self.ppo.epochs),
            format!("steps-per-epoch = {}", self.ppo.steps_per_epoch),
            format!("episode-length = {}", self.env.episode_length),
            format!("lot-size = {}", self.env.lot_size),
            format!("include-position = {}", self.env.include_position),
            format!("rate-long = {}", tp.rate_long),
            format!("rate-short = {}", tp.rate_short),
            format!("long-term-threshold = {}", tp.long_term_threshold),
            format!("txn-cost-rate = {}", tp.txn_cost_rate),
            format!(
                "txn-cost-mode = {}",
                match tp.txn_cost_mode {
                    CostMode::Notional => "notional",
                    CostMode::Pnl => "pnl",
                }
            ),
            format!("dt = {}", tp.dt),
            format!(
                "short-cover = {}",
                match tp.short_cover_convention {
                    ShortCoverConvention::AsWritten => "as-written",
                    ShortCoverConvention::Economic => "economic",
                }
            ),
            format!("loss-cap = {}", opt(tp.annual_loss_offset_cap)),
            format!("clip-ratio = {}", self.ppo.clip_ratio),
            format!("gae-lambda = {}", self.ppo.gae_lambda),
            format!("gamma = {}", self.ppo.gamma),
            format!("policy-lr = {}", self.ppo.policy_lr),
            format!("value-lr = {}", self.ppo.value_lr),
            format!("policy-iters = {}", self.ppo.policy_update_iters),
            format!("value-iters = {}", self.ppo.value_update_iters),
            format!("target-kl = {}", opt(self.ppo.target_kl)),
            format!("adv-norm = {}", self.ppo.advantage_normalization),
            format!("reward-norm = {}", self.ppo.reward_normalization),
            format!("entropy-coef = {}", self.ppo.entropy_coef),
            format!(
                "optimizer = {}",
                match self.ppo.optimizer {
                    OptimizerKind::Adam => "adam",
                    OptimizerKind::Sgd => "sgd",
                }
            ),
        ];
        if let Some(d) = &self.data {
            lines.insert(0, format!("data = {}", d.display()));
        }
        lines.push(String::new());
        lines.join("\n")
    }
}
