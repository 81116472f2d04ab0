use std::path::PathBuf;

use advcover::bounds::{bound_report, BoundInputs};
use advcover::linalg::Exponent;
use advcover::network::LossSpec;
use anyhow::{bail, Result};
use clap::{ArgMatches, Args};
use serde::{Deserialize, Serialize};

use super::{ball, parse_exponent, require};
use crate::formats::{load_dataset, load_network};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoundsConfig {
    /// JSON config file instead of flags.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Network JSON file.
    #[arg(long, value_name = "FILE")]
    pub network: Option<PathBuf>,
    /// Dataset CSV file; n is its row count.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Attack norm: 2 or inf.
    #[arg(long, default_value = "inf", value_parser = parse_exponent)]
    pub p: Exponent,
    /// Attack radius.
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    /// Ramp-loss margin.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Failure probability, in (0, 1).
    #[arg(long, default_value_t = 0.05)]
    pub delta: f64,
    /// Unspecified constants of the weight-space comparison bound.
    #[arg(long, default_value_t = 1.0)]
    pub c1: f64,
    #[arg(long, default_value_t = 1.0)]
    pub c2: f64,
    /// Input norm bound B; defaults to the largest ‖x‖_2 in the data.
    #[arg(long)]
    pub b: Option<f64>,
    /// Report path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

impl Default for BoundsConfig {
    fn default() -> Self {
        crate::flag_defaults()
    }
}

pub fn run(flags: BoundsConfig, m: &ArgMatches) -> Result<()> {
    let cfg = crate::resolve(flags.clone(), flags.config.as_ref(), m)?;
    if !(cfg.delta > 0.0 && cfg.delta < 1.0) {
        bail!("delta must lie in (0, 1), got {}", cfg.delta);
    }
    if !(cfg.gamma > 0.0 && cfg.c1 > 0.0 && cfg.c2 > 0.0) {
        bail!("gamma, c1 and c2 must be positive");
    }
    let ball = ball(cfg.p, cfg.eps)?;
    let net = load_network(require(&cfg.network, "network")?)?;
    let data = load_dataset(require(&cfg.data, "data")?)?;
    if data.dim() != net.input_dim() {
        bail!("dataset has dimension {} but the network takes {}", data.dim(), net.input_dim());
    }
    if data.num_classes() > net.output_dim() {
        bail!("dataset labels exceed the network's {} outputs", net.output_dim());
    }
    let measured = data.max_norm();
    let b = match cfg.b {
        Some(b) if !(b > 0.0 && b.is_finite()) => bail!("b must be positive"),
        Some(b) if b < measured => bail!("b = {b} is below the largest data norm {measured}"),
        Some(b) => b,
        None => measured,
    };
    let loss = LossSpec::ramp(cfg.gamma)?;
    let report = bound_report(
        &net,
        &loss,
        BoundInputs {
            b,
            n: data.len(),
            ball,
            delta: cfg.delta,
            c1: cfg.c1,
            c2: cfg.c2,
        },
    )?;
    let passed = report.norm_chain.iter().all(|c| c.holds);
    crate::finish("bounds", &cfg, cfg.out.as_deref(), passed, &report, || {
        "norm chain ‖W‖_{2,1} ≤ ‖W‖_1 ≤ √d‖W‖_{2,1} violated".into()
    })
}
