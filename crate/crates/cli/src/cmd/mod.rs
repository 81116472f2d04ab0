pub mod bounds;
pub mod cover;
pub mod lemma;
pub mod rademacher;
pub mod train;

use advcover::attack::{AttackConfig, BallSpec};
use advcover::linalg::Exponent;
use anyhow::{bail, Result};

/// `2`, `inf` (also `infinity`), or any number ≥ 1.
pub fn parse_exponent(s: &str) -> Result<Exponent, String> {
    let v = match s.trim() {
        "inf" | "infinity" | "Inf" => f64::INFINITY,
        t => t.parse::<f64>().map_err(|_| format!("{s:?} is not an exponent"))?,
    };
    Exponent::new(v).map_err(|e| e.to_string())
}

pub fn ball(p: Exponent, eps: f64) -> Result<BallSpec> {
    if !(eps >= 0.0 && eps.is_finite()) {
        bail!("eps must be finite and >= 0, got {eps}");
    }
    p.require_two_or_inf()?;
    Ok(BallSpec::new(p, eps)?)
}

pub fn require<'a, T>(v: &'a Option<T>, flag: &str) -> Result<&'a T> {
    match v {
        Some(v) => Ok(v),
        None => bail!("missing required --{flag}"),
    }
}

/// Step size 2.5ε/steps, the library default recipe at a custom step count.
pub fn scaled_attack(eps: f64, steps: usize, restarts: usize, seed: u64) -> AttackConfig {
    AttackConfig {
        steps,
        step_size: (2.5 * eps / steps.max(1) as f64).max(f64::MIN_POSITIVE),
        restarts,
        seed,
    }
}
