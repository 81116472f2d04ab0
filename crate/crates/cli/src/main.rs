//! `advcover`: bound reports, lemma checks, Rademacher estimates, training
//! and cover verification from the command line.
//!
//! Exit codes: 0 success, 1 a check failed (the report is still written),
//! 2 usage, parse or runtime error.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

mod cmd;
mod formats;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::parser::ValueSource;
use clap::{ArgMatches, Args, Command, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::Serialize;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Parser)]
#[command(name = "advcover", version, about = "Adversarial covering-number bounds, lemma checks and toy experiments")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Norm profile and every generalization bound for a network and dataset.
    Bounds(cmd::bounds::BoundsConfig),
    /// Check the covering lemmas on random or given instances.
    LemmaCheck(cmd::lemma::LemmaConfig),
    /// Monte Carlo standard and adversarial Rademacher complexity.
    Rademacher(cmd::rademacher::RademacherConfig),
    /// Train a toy network (optionally with PGD) and compare its robust gap with the bound.
    Train(cmd::train::TrainCmdConfig),
    /// Verify the uniform Maurey cover on sampled weight/data pairs.
    CoverVerify(cmd::cover::CoverConfig),
}

/// Raised when a check ran to completion and failed.
#[derive(Debug)]
pub struct CheckFailed(pub String);

impl std::fmt::Display for CheckFailed {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CheckFailed {}

/// Common envelope of every report.
#[derive(Serialize)]
pub struct Report<'a, C, R> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'static str,
    pub config: &'a C,
    pub passed: bool,
    pub result: &'a R,
}

/// Write the report; a failed check still writes it and then exits 1.
pub fn finish<C: Serialize, R: Serialize>(
    command: &'static str,
    config: &C,
    out: Option<&Path>,
    passed: bool,
    result: &R,
    failure: impl FnOnce() -> String,
) -> Result<()> {
    let report = Report {
        tool: "advcover",
        version: VERSION,
        command,
        config,
        passed,
        result,
    };
    formats::emit(out, &formats::to_json(&report)?)?;
    if passed {
        Ok(())
    } else {
        Err(CheckFailed(failure()).into())
    }
}

/// Values a subcommand's flags take when none are given.
pub fn flag_defaults<T: Args + FromArgMatches>() -> T {
    let cmd = T::augment_args(Command::new("defaults").no_binary_name(true));
    let m = cmd.get_matches_from(Vec::<String>::new());
    T::from_arg_matches(&m).expect("flag defaults parse")
}

/// A config comes either from flags or from a JSON file given by `--config`
/// (fields as in the flags, snake_case, missing fields take the flag
/// defaults, unknown fields rejected); mixing the two is an error.
pub fn resolve<T: Args + DeserializeOwned>(from_flags: T, config: Option<&PathBuf>, m: &ArgMatches) -> Result<T> {
    let Some(path) = config else {
        return Ok(from_flags);
    };
    let spec = T::augment_args(Command::new("flags"));
    let mixed: Vec<String> = spec
        .get_arguments()
        .map(|a| a.get_id().as_str())
        .filter(|&id| id != "config" && m.value_source(id) == Some(ValueSource::CommandLine))
        .map(|id| format!("--{}", id.replace('_', "-")))
        .collect();
    if !mixed.is_empty() {
        bail!("--config cannot be combined with {}", mixed.join(", "));
    }
    let text = formats::read_text(path, "config")?;
    serde_json::from_str(&text).with_context(|| format!("invalid config file {}", path.display()))
}

fn configure_threads() -> Result<()> {
    if let Ok(v) = std::env::var("THREADS") {
        let n: usize = v.trim().parse().ok().filter(|&n| n > 0).with_context(|| format!("THREADS must be a positive integer, got {v:?}"))?;
        if n == 1 {
            advcover::par::set_execution(advcover::par::Execution::Sequential);
        }
        advcover::par::set_threads(n);
    }
    Ok(())
}

fn run(matches: &ArgMatches) -> Result<()> {
    configure_threads()?;
    let cli = Cli::from_arg_matches(matches)?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match cli.command {
        Cmd::Bounds(c) => cmd::bounds::run(c, sub),
        Cmd::LemmaCheck(c) => cmd::lemma::run(c, sub),
        Cmd::Rademacher(c) => cmd::rademacher::run(c, sub),
        Cmd::Train(c) => cmd::train::run(c, sub),
        Cmd::CoverVerify(c) => cmd::cover::run(c, sub),
    }
}

fn main() -> ExitCode {
    let matches = Cli::command().get_matches();
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if let Some(f) = e.downcast_ref::<CheckFailed>() {
                eprintln!("check failed: {f}");
                ExitCode::from(1)
            } else {
                eprintln!("error: {e:#}");
                ExitCode::from(2)
            }
        }
    }
}
