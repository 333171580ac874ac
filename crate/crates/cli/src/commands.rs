use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use taxtrade::env::{Action, EnvConfig};
use taxtrade::eval::{cross_evaluate, eval_windows, evaluate, EvalReport, NetPolicy, Policy, Scripted};
use taxtrade::market::{PriceSeries, TRADING_DAYS_PER_YEAR};
use taxtrade::nn::PolicyBundle;
use taxtrade::ppo::{epochs_completed, train, TrainOptions};

use crate::config::{PolicyChoice, Settings};
use crate::report;

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const SETTINGS_FILE: &str = "settings.cfg";
pub const EVAL_REPORT_FILE: &str = "eval_report.txt";
pub const EVAL_EPISODES_FILE: &str = "eval_episodes.csv";
pub const CROSS_REPORT_FILE: &str = "cross_eval_report.txt";
pub const CROSS_EPISODES_FILE: &str = "cross_eval_episodes.csv";
pub const LEDGER_REPORT_FILE: &str = "ledger_report.csv";

fn load_series(settings: &Settings) -> Result<Arc<PriceSeries>> {
    let Some(path) = &settings.data else {
        bail!("no price data given (use --data PATH)");
    };
    if !path.exists() {
        bail!("price data file not found: {}", path.display());
    }
    let series = PriceSeries::load_csv(path).with_context(|| format!("loading {}", path.display()))?;
    Ok(Arc::new(series))
}

fn out_dir(settings: &Settings) -> Result<&Path> {
    fs::create_dir_all(&settings.out).with_context(|| format!("creating output directory {}", settings.out.display()))?;
    Ok(&settings.out)
}

fn write(path: PathBuf, text: &str) -> Result<()> {
    fs::write(&path, text).with_context(|| format!("writing {}", path.display()))
}

fn load_checkpoint(path: Option<&PathBuf>, what: &str, env: &EnvConfig) -> Result<PolicyBundle> {
    let Some(path) = path else {
        bail!("no {what} given (use --{what} PATH)");
    };
    if !path.exists() {
        bail!("checkpoint not found: {}", path.display());
    }
    let bundle = PolicyBundle::load(path).with_context(|| format!("loading {}", path.display()))?;
    let input = bundle.policy.sizes()[0];
    if input != env.obs_dim() {
        bail!(
            "checkpoint {} expects {input} observation features but the environment produces {}",
            path.display(),
            env.obs_dim()
        );
    }
    Ok(bundle)
}

pub fn cmd_train(settings: &Settings) -> Result<String> {
    let series = load_series(settings)?;
    let out = out_dir(settings)?;
    write(out.join(SETTINGS_FILE), &settings.to_text())?;
    let resume = match &settings.resume {
        Some(p) => Some(load_checkpoint(Some(p), "resume", &settings.env)?),
        None => None,
    };
    let options = TrainOptions {
        checkpoint_path: Some(out.join(CHECKPOINT_FILE)),
        metrics_path: Some(out.join(METRICS_FILE)),
        resume,
    };
    let outcome = train(&settings.ppo, &settings.env, series, settings.seed, options)?;
    let last = outcome.metrics.last();
    let mut s = format!(
        "trained {} epochs (tax {})\n",
        epochs_completed(&outcome.bundle),
        if settings.env.tax_enabled { "on" } else { "off" }
    );
    if let Some(m) = last {
        s.push_str(&format!("final mean_episode_return = {}\n", m.mean_episode_return));
    }
    s.push_str(&format!("checkpoint = {}\n", out.join(CHECKPOINT_FILE).display()));
    s.push_str(&format!("metrics = {}\n", out.join(METRICS_FILE).display()));
    Ok(s)
}

pub fn cmd_eval(settings: &Settings) -> Result<String> {
    let series = load_series(settings)?;
    let env = &settings.env;
    let bundle;
    let net;
    let policy: &dyn Policy = match settings.policy {
        PolicyChoice::Checkpoint => {
            bundle = load_checkpoint(settings.checkpoint.as_ref(), "checkpoint", env)?;
            net = NetPolicy { net: &bundle.policy, greedy: settings.greedy };
            &net
        }
        PolicyChoice::AlwaysLong => &Scripted(Action::Long),
        PolicyChoice::AlwaysFlat => &Scripted(Action::Flat),
        PolicyChoice::AlwaysShort => &Scripted(Action::Short),
    };
    let windows = eval_windows(&series, env.episode_length, settings.n_episodes, settings.seed)?;
    let report = evaluate(policy, env, series, &windows, settings.seed)?;
    let out = out_dir(settings)?;
    let text = eval_text(&report, env.tax_enabled);
    write(out.join(EVAL_REPORT_FILE), &text)?;
    write(out.join(EVAL_EPISODES_FILE), &report.episodes_csv())?;
    Ok(text)
}

fn eval_text(report: &EvalReport, tax: bool) -> String {
    format!("tax = {}\n{}standard_error = {}\n", if tax { "on" } else { "off" }, report.to_text(), report.standard_error())
}

pub fn cmd_cross_eval(settings: &Settings) -> Result<String> {
    let series = load_series(settings)?;
    let taxed = EnvConfig { tax_enabled: true, ..settings.env.clone() };
    let aware = load_checkpoint(settings.checkpoint_aware.as_ref(), "checkpoint-aware", &taxed)?;
    let naive = load_checkpoint(settings.checkpoint_naive.as_ref(), "checkpoint-naive", &taxed)?;
    let pa = NetPolicy { net: &aware.policy, greedy: settings.greedy };
    let pn = NetPolicy { net: &naive.policy, greedy: settings.greedy };
    let cross = cross_evaluate(&pa, &pn, &taxed, series, settings.n_episodes, settings.seed)?;
    let out = out_dir(settings)?;
    let text = cross.to_text();
    write(out.join(CROSS_REPORT_FILE), &text)?;
    write(out.join(CROSS_EPISODES_FILE), &cross.comparison_csv())?;
    Ok(text)
}

pub fn cmd_ledger_report(settings: &Settings) -> Result<String> {
    let Some(path) = &settings.trades else {
        bail!("no trade log given (use --trades PATH)");
    };
    if !path.exists() {
        bail!("trade log not found: {}", path.display());
    }
    let trades = report::read_trades(path)?;
    let r = report::replay(&trades, &settings.env.tax_params)?;
    let csv = r.to_csv(TRADING_DAYS_PER_YEAR);
    let out = out_dir(settings)?;
    write(out.join(LEDGER_REPORT_FILE), &csv)?;
    Ok(csv)
}
