use std::path::PathBuf;

use advcover::attack::{AttackConfig, BallSpec};
use advcover::covers::UniformCoverSpec;
use advcover::data::{Dataset, Sample};
use advcover::linalg::Exponent;
use advcover::network::LossSpec;
use advcover::rng::StreamKey;
use advcover::verify::{
    check_intermediate_adv_example, check_layer_recursion, check_maurey_residual_stats, check_recorded,
    cover_distance_pipeline, intermediate_example_suite, layer_recursion_suite, random_pair, CheckReport,
    CoverBuildConfig, CoverPipeline, InnerOracle, LemmaSuiteConfig, RecordedInequality, StatsReport,
};
use anyhow::{bail, Context, Result};
use clap::{ArgMatches, Args};
use serde::{Deserialize, Serialize};

use super::{ball, parse_exponent};
use crate::formats::{load_dataset, load_network, read_text};

#[derive(Args, Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaConfig {
    /// JSON config file instead of flags.
    #[arg(long, value_name = "FILE")]
    #[serde(skip)]
    pub config: Option<PathBuf>,
    /// Check precomputed {lhs, rhs, allowance} rows instead of running oracles.
    #[arg(long, value_name = "FILE", conflicts_with_all = ["net1", "net2"])]
    pub recorded: Option<PathBuf>,
    /// First network of a given pair (with --net2 and --data).
    #[arg(long, value_name = "FILE", requires_all = ["net2", "data"])]
    pub net1: Option<PathBuf>,
    #[arg(long, value_name = "FILE", requires = "net1")]
    pub net2: Option<PathBuf>,
    /// Labelled points for a given pair.
    #[arg(long, value_name = "FILE")]
    pub data: Option<PathBuf>,
    /// Random network pairs in the suite.
    #[arg(long, default_value_t = 100)]
    pub pairs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Input dimension of suite networks (grid oracle: at most 3).
    #[arg(long, default_value_t = 2)]
    pub d: usize,
    #[arg(long, default_value_t = 6)]
    pub hidden: usize,
    #[arg(long, default_value_t = 3)]
    pub classes: usize,
    #[arg(long, default_value = "inf", value_parser = parse_exponent)]
    pub p: Exponent,
    #[arg(long, default_value_t = 0.3)]
    pub eps: f64,
    /// Grid points per axis of the exact attack oracle.
    #[arg(long, default_value_t = 201)]
    pub resolution: usize,
    #[arg(long, default_value_t = 1.0)]
    pub gamma: f64,
    /// Perturbed inputs per pair for the layer recursion.
    #[arg(long, default_value_t = 20)]
    pub recursion_points: usize,
    /// Networks on which a per-layer Maurey cover is built and checked.
    #[arg(long, default_value_t = 4)]
    pub cover_nets: usize,
    #[arg(long, default_value_t = 6)]
    pub cover_points: usize,
    /// Target distance of the constructed covers.
    #[arg(long, default_value_t = 0.5)]
    pub cover_eps: f64,
    /// Grid resolution inside the cover pipeline.
    #[arg(long, default_value_t = 21)]
    pub cover_resolution: usize,
    /// (W, X) instances for the Maurey residual statistics.
    #[arg(long, default_value_t = 20)]
    pub maurey_instances: usize,
    #[arg(long, default_value_t = 400)]
    pub maurey_trials: usize,
    /// Also run PGD-based intermediate-example checks (reported separately, never gating).
    #[arg(long)]
    pub soft_pgd: bool,
    /// Report path; stdout when absent.
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
}

impl Default for LemmaConfig {
    fn default() -> Self {
        crate::flag_defaults()
    }
}

#[derive(Serialize)]
struct LemmaResult {
    checks: Vec<CheckReport>,
    /// PGD-based checks; informational only.
    soft_checks: Vec<CheckReport>,
    maurey_stats: Option<StatsReport>,
    covers: Vec<CoverPipeline>,
}

fn suite_points(n: usize, d: usize, classes: usize, key: StreamKey) -> Result<Dataset> {
    let mut s = key.stream();
    let samples = (0..n)
        .map(|_| Sample {
            x: (0..d).map(|_| s.next_uniform_in(-1.0, 1.0)).collect(),
            y: s.next_below(classes),
        })
        .collect();
    Ok(Dataset::new(samples)?)
}

/// One report over several runs of the same check.
fn merge_reports(parts: &[CheckReport]) -> Option<CheckReport> {
    let (first, rest) = parts.split_first()?;
    let mut m = first.clone();
    for r in rest {
        m.samples += r.samples;
        m.violations += r.violations;
        m.max_excess = m.max_excess.max(r.max_excess);
        m.min_slack = m.min_slack.min(r.min_slack);
        m.slack_allowance = m.slack_allowance.max(r.slack_allowance);
        m.passed &= r.passed;
        m.failures.extend(r.failures.iter().cloned());
    }
    m.failures.truncate(10);
    Some(m)
}

fn soft_oracle(ball: BallSpec, seed: u64) -> InnerOracle {
    InnerOracle::Pgd(AttackConfig {
        restarts: 10,
        ..AttackConfig::default_for(ball.eps, seed)
    })
}

fn given_pair(cfg: &LemmaConfig, ball: BallSpec, loss: &LossSpec) -> Result<LemmaResult> {
    let net1 = load_network(cfg.net1.as_ref().expect("clap requires net1"))?;
    let net2 = load_network(super::require(&cfg.net2, "net2")?)?;
    let data = load_dataset(super::require(&cfg.data, "data")?)?;
    if !net1.same_architecture(&net2) {
        bail!("the two networks must share an architecture");
    }
    if data.dim() != net1.input_dim() || data.num_classes() > net1.output_dim() {
        bail!("dataset does not fit the networks");
    }
    let mut checks = vec![check_intermediate_adv_example(
        &net1,
        &net2,
        data.samples(),
        ball,
        loss,
        InnerOracle::Grid { resolution: cfg.resolution },
    )?];
    checks.push(check_layer_recursion(&net1, &net2, &data.data_matrix())?);
    let soft_checks = if cfg.soft_pgd {
        vec![check_intermediate_adv_example(&net1, &net2, data.samples(), ball, loss, soft_oracle(ball, cfg.seed))?]
    } else {
        Vec::new()
    };
    Ok(LemmaResult {
        checks,
        soft_checks,
        maurey_stats: None,
        covers: Vec::new(),
    })
}

fn suite(cfg: &LemmaConfig, ball: BallSpec, loss: &LossSpec) -> Result<LemmaResult> {
    if cfg.pairs == 0 || cfg.classes < 2 || cfg.hidden == 0 || cfg.d == 0 {
        bail!("suite needs pairs >= 1, classes >= 2, hidden >= 1, d >= 1");
    }
    let suite = LemmaSuiteConfig {
        pairs: cfg.pairs,
        d: cfg.d,
        hidden: cfg.hidden,
        classes: cfg.classes,
        ball,
        resolution: cfg.resolution,
        gamma: cfg.gamma,
        recursion_points: cfg.recursion_points,
        seed: cfg.seed,
    };
    let mut checks = vec![intermediate_example_suite(&suite)?, layer_recursion_suite(&suite)?];
    let mut soft_checks = Vec::new();
    if cfg.soft_pgd {
        let mut parts = Vec::with_capacity(cfg.pairs);
        for t in 0..cfg.pairs {
            let (n1, n2) = random_pair(&suite, t)?;
            let pts = suite_points(1, cfg.d, cfg.classes, StreamKey::new(cfg.seed).child("soft", t))?;
            parts.push(check_intermediate_adv_example(&n1, &n2, pts.samples(), ball, loss, soft_oracle(ball, cfg.seed))?);
        }
        soft_checks.extend(merge_reports(&parts));
    }
    let maurey_stats = if cfg.maurey_instances > 0 {
        let spec = UniformCoverSpec::new(1.0, 1.0, 0.5, 2, 2)?;
        let s = check_maurey_residual_stats(&spec, cfg.maurey_instances, cfg.maurey_trials, cfg.seed)?;
        checks.push(s.report.clone());
        Some(s)
    } else {
        None
    };
    let mut covers = Vec::with_capacity(cfg.cover_nets);
    for t in 0..cfg.cover_nets {
        let (net, _) = random_pair(&suite, t)?;
        let data = suite_points(cfg.cover_points.max(1), cfg.d, cfg.classes, StreamKey::new(cfg.seed).child("cover_data", t))?;
        let p = cover_distance_pipeline(
            &net,
            &data,
            ball,
            loss,
            &CoverBuildConfig {
                eps: cfg.cover_eps,
                restarts: 8,
                rounds: 4,
                resolution: cfg.cover_resolution,
                seed: StreamKey::new(cfg.seed).derive("cover", t as u64).seed(),
            },
        )
        .with_context(|| format!("cover pipeline on network {t}"))?;
        covers.push(p);
    }
    let cover_reports: Vec<CheckReport> = covers.iter().map(|c| c.check.report.clone()).collect();
    checks.extend(merge_reports(&cover_reports));
    Ok(LemmaResult {
        checks,
        soft_checks,
        maurey_stats,
        covers,
    })
}

pub fn run(flags: LemmaConfig, m: &ArgMatches) -> Result<()> {
    let cfg = crate::resolve(flags.clone(), flags.config.as_ref(), m)?;
    if cfg.net1.is_some() != cfg.net2.is_some() || (cfg.net1.is_some() && cfg.data.is_none()) {
        bail!("--net1, --net2 and --data go together");
    }
    if cfg.recorded.is_some() && cfg.net1.is_some() {
        bail!("--recorded cannot be combined with --net1/--net2");
    }
    let result = if let Some(path) = &cfg.recorded {
        let rows: Vec<RecordedInequality> = serde_json::from_str(&read_text(path, "recorded")?)
            .with_context(|| format!("invalid recorded file {}", path.display()))?;
        LemmaResult {
            checks: vec![check_recorded("recorded", &rows)],
            soft_checks: Vec::new(),
            maurey_stats: None,
            covers: Vec::new(),
        }
    } else {
        if !(cfg.gamma > 0.0) {
            bail!("gamma must be positive");
        }
        let ball = ball(cfg.p, cfg.eps)?;
        let loss = LossSpec::ramp(cfg.gamma)?;
        if cfg.net1.is_some() {
            given_pair(&cfg, ball, &loss)?
        } else {
            suite(&cfg, ball, &loss)?
        }
    };
    let passed = result.checks.iter().all(|c| c.passed);
    crate::finish("lemma-check", &cfg, cfg.out.as_deref(), passed, &result, || {
        let failed: Vec<String> = result
            .checks
            .iter()
            .filter(|c| !c.passed)
            .map(|c| format!("{} ({} of {} violated)", c.check, c.violations, c.samples))
            .collect();
        failed.join("; ")
    })
}
