//! Command-line front end: `train`, `eval`, `cross-eval` and `ledger-report`.

pub mod commands;
pub mod config;
pub mod report;

use std::collections::BTreeMap;

use anyhow::Result;
use clap::{Arg, ArgMatches, Command};

use config::{Settings, KEYS};

pub const SUBCOMMANDS: &[(&str, &str)] = &[
    ("train", "train a policy with PPO"),
    ("eval", "evaluate a checkpoint or a scripted baseline"),
    ("cross-eval", "compare tax-aware and tax-naive checkpoints in the taxed environment"),
    ("ledger-report", "replay a trade log through the tax ledger"),
];

pub fn cli() -> Command {
    let mut cmd = Command::new("taxtrade")
        .about("Tax-aware stock trading with PPO")
        .subcommand_required(true)
        .arg_required_else_help(true);
    for (name, about) in SUBCOMMANDS {
        let mut sub = Command::new(*name).about(*about);
        for k in KEYS {
            sub = sub.arg(Arg::new(k.name).long(k.name).value_name("VALUE").help(k.help));
        }
        cmd = cmd.subcommand(sub);
    }
    cmd
}

fn flags(m: &ArgMatches) -> BTreeMap<String, String> {
    KEYS.iter()
        .filter_map(|k| m.get_one::<String>(k.name).map(|v| (k.name.to_string(), v.clone())))
        .collect()
}

/// Runs one parsed invocation and returns what should be printed.
pub fn run(matches: &ArgMatches, lookup_env: impl Fn(&str) -> Option<String>) -> Result<String> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let settings = Settings::from_map(&config::resolve(&flags(sub), lookup_env)?)?;
    match name {
        "train" => commands::cmd_train(&settings),
        "eval" => commands::cmd_eval(&settings),
        "cross-eval" => commands::cmd_cross_eval(&settings),
        "ledger-report" => commands::cmd_ledger_report(&settings),
        _ => unreachable!(),
    }
}
