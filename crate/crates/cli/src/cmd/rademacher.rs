use std::path::PathBuf;

use advcover::bounds::{linear_sandwich, Sandwich};
use advcover::linalg::Exponent;
use advcover::network::LossSpec;
use advcover::rademacher::{mc_adversarial_rc, mc_standard_rc, ClassKind, HypothesisClass, RademacherEstimate, WeightSearch};
use anyhow::{bail, Result};
use clap::{ArgMatches, Args, ValueEnum};
use serde::{Deserialize, Serialize};

use super::{ball, parse_exponent, require, scaled_attack};
use crate::formats::{load_dataset, load_network};

#[derive(ValueEnum, Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassChoice {
    /// `y⟨w, x⟩` with `‖w‖_r ≤ budget`; labels 1 ↦ +1, others ↦ −1.
    Linear,
    /// Ramp loss of networks shaped like --network with Frobenius caps.
    Network,
}

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RademacherConfig {
    /// JSON config file instead of flags.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Dataset CSV file.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = ClassChoice::Linear)]
    pub class: ClassChoice,
    /// Weight norm bound W of the linear class.
    #[arg(long, default_value_t = 1.0)]
    pub budget: f64,
    /// Weight norm exponent r of the linear class (adversarial runs need 2).
    #[arg(long, default_value = "2", value_parser = parse_exponent)]
    pub r: Exponent,
    #[arg(long, default_value = "inf", value_parser = parse_exponent)]
    pub p: Exponent,
    #[arg(long, default_value_t = 0.1)]
    pub eps: f64,
    #[arg(long, default_value_t = 400)]
    pub trials: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Template network of the network class.
    #[arg(long, value_name = "FILE")]
    pub network: Option<PathBuf>,
    /// Layer caps as multiples of the template's Frobenius norms.
    #[arg(long, default_value_t = 1.0)]
    pub cap_scale: f64,
    /// Ramp-loss margin of the network class.
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Random starts of the weight search besides the template.
    #[arg(long, default_value_t = 2)]
    pub search_starts: usize,
    #[arg(long, default_value_t = 20)]
    pub search_steps: usize,
    #[arg(long, default_value_t = 0.1)]
    pub search_step_size: f64,
    /// PGD steps and restarts of the inner attack (network class).
    #[arg(long, default_value_t = 20)]
    pub attack_steps: usize,
    #[arg(long, default_value_t = 2)]
    pub attack_restarts: usize,
    /// Report path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

impl Default for RademacherConfig {
    fn default() -> Self {
        crate::flag_defaults()
    }
}

#[derive(Serialize)]
struct RademacherResult {
    n: usize,
    d: usize,
    standard: RademacherEstimate,
    adversarial: RademacherEstimate,
    /// Linear class only: bounds on the adversarial complexity given the
    /// standard estimate.
    sandwich: Option<Sandwich>,
    /// `lower − 3·stderr ≤ adversarial ≤ upper + 3·stderr`.
    within_sandwich: Option<bool>,
    /// At `eps = 0`: whether the two estimates are bitwise identical.
    zero_radius_identical: Option<bool>,
}

pub fn run(flags: RademacherConfig, m: &ArgMatches) -> Result<()> {
    let cfg = crate::resolve(flags.clone(), flags.config.as_ref(), m)?;
    if cfg.trials < 2 {
        bail!("trials must be >= 2");
    }
    let ball = ball(cfg.p, cfg.eps)?;
    let data = load_dataset(require(&cfg.data, "data")?)?;
    let attack = scaled_attack(cfg.eps, cfg.attack_steps, cfg.attack_restarts, cfg.seed);
    let class = match cfg.class {
        ClassChoice::Linear => HypothesisClass::linear(cfg.r, cfg.budget),
        ClassChoice::Network => {
            let template = load_network(require(&cfg.network, "network")?)?;
            if !(cfg.cap_scale > 0.0) {
                bail!("cap-scale must be positive");
            }
            HypothesisClass {
                kind: ClassKind::Network {
                    caps: template.weights().iter().map(|w| cfg.cap_scale * w.frobenius_norm()).collect(),
                    template,
                    loss: LossSpec::ramp(cfg.gamma)?,
                    search: WeightSearch {
                        starts: cfg.search_starts,
                        steps: cfg.search_steps,
                        step_size: cfg.search_step_size,
                    },
                },
                attack: None,
            }
        }
    }
    .with_attack(ball, attack);
    class.validate(&data)?;
    let standard = mc_standard_rc(&class, &data, cfg.trials, cfg.seed)?;
    let adversarial = mc_adversarial_rc(&class, &data, cfg.trials, cfg.seed)?;
    let sandwich = (cfg.class == ClassChoice::Linear)
        .then(|| linear_sandwich(cfg.budget, cfg.eps, cfg.p, cfg.r, data.dim(), data.len(), standard.mean));
    let within_sandwich = sandwich.map(|s| {
        adversarial.mean >= s.lower - 3.0 * adversarial.stderr && adversarial.mean <= s.upper + 3.0 * adversarial.stderr
    });
    let zero_radius_identical = (cfg.eps == 0.0).then(|| {
        standard.mean.to_bits() == adversarial.mean.to_bits()
            && standard.per_trial.iter().zip(&adversarial.per_trial).all(|(a, b)| a.to_bits() == b.to_bits())
    });
    let passed = within_sandwich != Some(false) && zero_radius_identical != Some(false);
    let result = RademacherResult {
        n: data.len(),
        d: data.dim(),
        standard,
        adversarial,
        sandwich,
        within_sandwich,
        zero_radius_identical,
    };
    crate::finish("rademacher", &cfg, cfg.out.as_deref(), passed, &result, || {
        "adversarial estimate outside the linear sandwich, or eps = 0 estimates differ".into()
    })
}
