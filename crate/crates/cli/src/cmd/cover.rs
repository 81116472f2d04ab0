use std::path::PathBuf;

use advcover::covers::{uniform_cover_verify, CoverVerifyConfig, UniformCoverSpec};
use anyhow::{bail, Result};
use clap::{ArgMatches, Args};
use serde::{Deserialize, Serialize};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CoverConfig {
    /// JSON config file instead of flags.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Entrywise ℓ1 budget of W.
    #[arg(long, default_value_t = 1.0)]
    pub a: f64,
    /// Frobenius bound of X.
    #[arg(long, default_value_t = 1.0)]
    pub b: f64,
    /// Cover radius.
    #[arg(long, default_value_t = 0.5)]
    pub eps: f64,
    /// Columns of W.
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    /// Rows of W.
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Random roundings per sample (a greedy rounding is always added).
    #[arg(long, default_value_t = 64)]
    pub restarts: usize,
    /// Columns of each sampled X.
    #[arg(long, default_value_t = 4)]
    pub data_cols: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Required fraction of samples with residual ≤ eps.
    #[arg(long, default_value_t = 0.99)]
    pub min_success_rate: f64,
    /// Report path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

impl Default for CoverConfig {
    fn default() -> Self {
        crate::flag_defaults()
    }
}

pub fn run(flags: CoverConfig, m: &ArgMatches) -> Result<()> {
    let cfg = crate::resolve(flags.clone(), flags.config.as_ref(), m)?;
    if cfg.samples == 0 || cfg.data_cols == 0 {
        bail!("samples and data-cols must be >= 1");
    }
    if !(0.0..=1.0).contains(&cfg.min_success_rate) {
        bail!("min-success-rate must lie in [0, 1]");
    }
    let spec = UniformCoverSpec::new(cfg.a, cfg.b, cfg.eps, cfg.d, cfg.m)?;
    let report = uniform_cover_verify(
        &spec,
        &CoverVerifyConfig {
            samples: cfg.samples,
            restarts: cfg.restarts,
            data_cols: cfg.data_cols,
            seed: cfg.seed,
        },
    )?;
    let passed = report.success_rate >= cfg.min_success_rate && report.expectation_check_passed;
    crate::finish("cover-verify", &cfg, cfg.out.as_deref(), passed, &report, || {
        format!(
            "success rate {} (required {}), expectation check {}",
            report.success_rate, cfg.min_success_rate, report.expectation_check_passed
        )
    })
}
