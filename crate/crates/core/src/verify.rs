//! Property checks for the covering lemmas on concrete instances.
//!
//! Every check compares a measured left-hand side with a right-hand side
//! plus an explicit allowance (grid slack for approximate maxima, 0 for exact
//! algebra) and the absolute tolerance [`TOLERANCE`].

use serde::Serialize;

use crate::attack::{exact_attack_grid, grid_slack, pgd_attack, AttackConfig, BallSpec};
use crate::covers::{
    ceil_sq_ratio, composed_cover_radius, draw_cover_instance, epsilon_allocation, maurey_cover_params,
    maurey_expected_sq_residual, maurey_round, single_sample_round, CoverProfile, UniformCoverSpec,
};
use crate::data::{Dataset, Sample};
use crate::error::{invalid, Error, Result};
use crate::linalg::{entrywise_p_norm, Exponent, Matrix};
use crate::network::{loss_value, ActivationKind, LossSpec, Network};
use crate::par;
use crate::rng::StreamKey;

/// Absolute tolerance for exact algebraic inequalities.
pub const TOLERANCE: f64 = 1e-9;

/// Machine-readable outcome of one check.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckReport {
    pub check: String,
    pub samples: usize,
    pub violations: usize,
    /// `max (lhs − rhs − allowance)`; negative when every instance has room.
    pub max_excess: f64,
    /// `min (rhs + allowance − lhs)`.
    pub min_slack: f64,
    pub tolerance: f64,
    pub oracle_resolution: Option<usize>,
    /// Largest allowance used on any instance.
    pub slack_allowance: f64,
    pub passed: bool,
    /// Up to ten violating instances, described.
    pub failures: Vec<String>,
}

/// Running tally of `lhs ≤ rhs + allowance + TOLERANCE` instances.
#[derive(Clone, Debug)]
pub struct Tally {
    report: CheckReport,
}

impl Tally {
    pub fn new(check: impl Into<String>, oracle_resolution: Option<usize>) -> Self {
        Tally {
            report: CheckReport {
                check: check.into(),
                samples: 0,
                violations: 0,
                max_excess: f64::NEG_INFINITY,
                min_slack: f64::INFINITY,
                tolerance: TOLERANCE,
                oracle_resolution,
                slack_allowance: 0.0,
                passed: false,
                failures: Vec::new(),
            },
        }
    }

    pub fn record(&mut self, lhs: f64, rhs: f64, allowance: f64, what: impl FnOnce() -> String) {
        let r = &mut self.report;
        r.samples += 1;
        let excess = lhs - rhs - allowance;
        r.max_excess = r.max_excess.max(excess);
        r.min_slack = r.min_slack.min(-excess);
        r.slack_allowance = r.slack_allowance.max(allowance);
        // NaN on either side counts as a violation
        if !(excess <= TOLERANCE) {
            r.violations += 1;
            if r.failures.len() < 10 {
                r.failures.push(format!("{}: lhs {lhs:e} > rhs {rhs:e} + allowance {allowance:e}", what()));
            }
        }
    }

    pub fn merge(&mut self, other: Tally) {
        let (r, o) = (&mut self.report, other.report);
        r.samples += o.samples;
        r.violations += o.violations;
        r.max_excess = r.max_excess.max(o.max_excess);
        r.min_slack = r.min_slack.min(o.min_slack);
        r.slack_allowance = r.slack_allowance.max(o.slack_allowance);
        for f in o.failures {
            if r.failures.len() < 10 {
                r.failures.push(f);
            }
        }
    }

    /// A check never passes without samples.
    pub fn finish(mut self) -> CheckReport {
        self.report.passed = self.report.samples > 0 && self.report.violations == 0;
        self.report
    }
}

/// How the inner maximization over the ball is carried out.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum InnerOracle {
    /// Exhaustive grid with computed slack; the lemma checks use this.
    Grid { resolution: usize },
    /// PGD, no slack; results are soft checks only.
    Pgd(AttackConfig),
}

impl InnerOracle {
    fn resolution(self) -> Option<usize> {
        match self {
            InnerOracle::Grid { resolution } => Some(resolution),
            InnerOracle::Pgd(_) => None,
        }
    }

    /// Attacked point, its loss and the slack allowance of the oracle.
    fn maximize(self, net: &Network, x: &[f64], y: usize, ball: BallSpec, loss: &LossSpec) -> Result<(Vec<f64>, f64, f64)> {
        let pset = ball.around(x);
        match self {
            InnerOracle::Grid { resolution } => {
                let r = exact_attack_grid(net, x, y, &pset, loss, resolution)?;
                Ok((r.x_adv, r.loss, grid_slack(net, loss, ball, resolution)?))
            }
            InnerOracle::Pgd(cfg) => {
                let r = pgd_attack(net, x, y, &pset, loss, &cfg)?;
                Ok((r.x_adv, r.loss, 0.0))
            }
        }
    }
}

/// One intermediate-adversarial-example instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct IntermediateExample {
    /// `|h̃1 − h̃2|` from the oracle maxima.
    pub lhs: f64,
    /// `|h1(x′) − h2(x′)|`.
    pub rhs: f64,
    /// `max` of the two oracle slacks.
    pub allowance: f64,
    pub x_prime: Vec<f64>,
    /// Whether `x′ = x(h̃1)`.
    pub from_first: bool,
    pub robust1: f64,
    pub robust2: f64,
}

/// Builds `x′(h̃1, h̃2)`: the maximizer of `h1` if `h1(x(h̃1)) ≥ h2(x(h̃2))`,
/// else the maximizer of `h2`.
pub fn intermediate_example(
    net1: &Network,
    net2: &Network,
    x: &[f64],
    y: usize,
    ball: BallSpec,
    loss: &LossSpec,
    oracle: InnerOracle,
) -> Result<IntermediateExample> {
    let (x1, g1, s1) = oracle.maximize(net1, x, y, ball, loss)?;
    let (x2, g2, s2) = oracle.maximize(net2, x, y, ball, loss)?;
    let from_first = g1 >= g2;
    let x_prime = if from_first { x1 } else { x2 };
    let h1 = loss_value(net1, &x_prime, y, loss)?;
    let h2 = loss_value(net2, &x_prime, y, loss)?;
    Ok(IntermediateExample {
        lhs: (g1 - g2).abs(),
        rhs: (h1 - h2).abs(),
        allowance: s1.max(s2),
        x_prime,
        from_first,
        robust1: g1,
        robust2: g2,
    })
}

/// `|h̃1 − h̃2| ≤ |h1(x′) − h2(x′)| + slack` at every sample.
pub fn check_intermediate_adv_example(
    net1: &Network,
    net2: &Network,
    samples: &[Sample],
    ball: BallSpec,
    loss: &LossSpec,
    oracle: InnerOracle,
) -> Result<CheckReport> {
    if !net1.same_architecture(net2) && net1.input_dim() != net2.input_dim() {
        return Err(Error::ArchitectureMismatch("networks take different inputs".into()));
    }
    let name = match oracle {
        InnerOracle::Grid { .. } => "intermediate_adversarial_example",
        InnerOracle::Pgd(_) => "intermediate_adversarial_example (pgd, soft)",
    };
    let rows = par::try_map_indexed(samples.len(), |i| {
        intermediate_example(net1, net2, &samples[i].x, samples[i].y, ball, loss, oracle)
    })?;
    let mut t = Tally::new(name, oracle.resolution());
    for (i, r) in rows.iter().enumerate() {
        t.record(r.lhs, r.rhs, r.allowance, || format!("sample {i}"));
    }
    Ok(t.finish())
}

/// Per-layer quantities of the recursion `Δ_{i+1} ≤ ρ_i(‖W_i‖_σ Δ_i + ‖(W_i − W′_i)X̂_{i−1}‖)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecursionLayer {
    pub delta_in: f64,
    pub delta_out: f64,
    pub inner: f64,
    pub bound: f64,
}

/// Layer-by-layer Frobenius distances between the two networks' outputs on
/// the same inputs (columns of `inputs`).
pub fn layer_recursion(net1: &Network, net2: &Network, inputs: &Matrix) -> Result<Vec<RecursionLayer>> {
    if !net1.same_architecture(net2) {
        return Err(Error::ArchitectureMismatch("layer recursion needs equal widths".into()));
    }
    let a = net1.layer_outputs_batch(inputs)?;
    let b = net2.layer_outputs_batch(inputs)?;
    let spectral = net1.spectral_norms()?;
    let mut out = Vec::with_capacity(net1.depth());
    let mut delta = 0.0;
    for (i, (l1, l2)) in net1.layers().iter().zip(net2.layers()).enumerate() {
        let inner = l1.weights.sub(&l2.weights)?.matmul(&b[i])?.frobenius_norm();
        let next = a[i + 1].sub(&b[i + 1])?.frobenius_norm();
        out.push(RecursionLayer {
            delta_in: delta,
            delta_out: next,
            inner,
            bound: l1.activation.lipschitz * (spectral[i] * delta + inner),
        });
        delta = next;
    }
    Ok(out)
}

/// Checks the recursion on the whole matrix of inputs and on each column.
pub fn check_layer_recursion(net1: &Network, net2: &Network, inputs: &Matrix) -> Result<CheckReport> {
    let mut t = Tally::new("layer_recursion", None);
    record_recursion(&mut t, net1, net2, inputs, "matrix")?;
    for c in 0..inputs.cols() {
        let col = Matrix::from_columns(&[inputs.column(c)])?;
        record_recursion(&mut t, net1, net2, &col, &format!("column {c}"))?;
    }
    Ok(t.finish())
}

fn record_recursion(t: &mut Tally, net1: &Network, net2: &Network, inputs: &Matrix, what: &str) -> Result<()> {
    for (i, l) in layer_recursion(net1, net2, inputs)?.iter().enumerate() {
        t.record(l.delta_out, l.bound, 0.0, || format!("{what}, layer {}", i + 1));
    }
    Ok(())
}

/// Outcome of [`check_final_cover_distance`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverDistanceCheck {
    pub report: CheckReport,
    /// `‖(W_i − W′_i)X̂_{i−1}‖_F` at the intermediate examples.
    pub residuals: Vec<f64>,
    pub eps_i: Vec<f64>,
    /// First layer (1-based) whose residual exceeds `ε_i`.
    pub failed_layer: Option<usize>,
    /// `‖h̃1(X, Y) − h̃2(X, Y)‖_2` over the samples.
    pub lhs: f64,
    /// `ρ Σ_j ε_j ρ_j Π_{l>j} ρ_l c_l`.
    pub rhs: f64,
    /// `√n` times the largest oracle slack.
    pub allowance: f64,
    /// The intermediate examples, one column per sample.
    pub x_prime: Matrix,
}

/// `‖h̃1(X, Y) − h̃2(X, Y)‖_2 ≤ ρ Σ_j ε_j ρ_j Π_{l>j} ρ_l c_l` on the samples,
/// after verifying the per-layer residual precondition at the intermediate
/// examples. If a layer fails the precondition the report fails and names
/// it; the final inequality is not evaluated.
#[allow(clippy::too_many_arguments)]
pub fn check_final_cover_distance(
    net1: &Network,
    cover: &Network,
    data: &Dataset,
    ball: BallSpec,
    loss: &LossSpec,
    eps_i: &[f64],
    c: &[f64],
    resolution: usize,
) -> Result<CoverDistanceCheck> {
    if !net1.same_architecture(cover) {
        return Err(Error::ArchitectureMismatch("cover network must match the network".into()));
    }
    if eps_i.len() != net1.depth() || c.len() != net1.depth() {
        return Err(Error::DimensionMismatch {
            context: "per-layer radii",
            expected: net1.depth(),
            actual: eps_i.len().min(c.len()),
        });
    }
    let oracle = InnerOracle::Grid { resolution };
    let samples = data.samples();
    let rows = par::try_map_indexed(samples.len(), |i| {
        intermediate_example(net1, cover, &samples[i].x, samples[i].y, ball, loss, oracle)
    })?;
    let cols: Vec<Vec<f64>> = rows.iter().map(|r| r.x_prime.clone()).collect();
    let x_prime = Matrix::from_columns(&cols)?;
    let residuals = cover_residuals(net1, cover, &x_prime)?;
    let mut t = Tally::new("final_cover_distance", Some(resolution));
    let mut failed_layer = None;
    for (i, (r, e)) in residuals.iter().zip(eps_i).enumerate() {
        t.record(*r, *e, 0.0, || format!("precondition, layer {}", i + 1));
        if failed_layer.is_none() && !(*r - *e <= TOLERANCE) {
            failed_layer = Some(i + 1);
        }
    }
    let rho: Vec<f64> = net1.layers().iter().map(|l| l.activation.lipschitz).collect();
    let rhs = composed_cover_radius(eps_i, &rho, c, loss.lipschitz().value);
    let lhs = rows.iter().map(|r| (r.robust1 - r.robust2).powi(2)).sum::<f64>().sqrt();
    let allowance = (rows.len() as f64).sqrt() * rows.iter().map(|r| r.allowance).fold(0.0, f64::max);
    if failed_layer.is_none() {
        t.record(lhs, rhs, allowance, || "final distance".into());
    }
    Ok(CoverDistanceCheck {
        report: t.finish(),
        residuals,
        eps_i: eps_i.to_vec(),
        failed_layer,
        lhs,
        rhs,
        allowance,
        x_prime,
    })
}

/// `‖(W_i − W′_i)X̂_{i−1}‖_F` with `X̂` the cover network's layer inputs.
pub fn cover_residuals(net: &Network, cover: &Network, inputs: &Matrix) -> Result<Vec<f64>> {
    let hat = cover.layer_outputs_batch(inputs)?;
    net.layers()
        .iter()
        .zip(cover.layers())
        .enumerate()
        .map(|(i, (l, c))| Ok(l.weights.sub(&c.weights)?.matmul(&hat[i])?.frobenius_norm()))
        .collect()
}

/// Settings for building a per-layer Maurey cover of one network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverBuildConfig {
    /// Target final distance `ε`, split over layers.
    pub eps: f64,
    pub restarts: usize,
    /// Rebuilds allowed when the intermediate examples move.
    pub rounds: usize,
    pub resolution: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverPipeline {
    pub check: CoverDistanceCheck,
    #[serde(skip)]
    pub cover: Network,
    pub k: Vec<u64>,
    pub rounds_used: usize,
}

/// Round every layer of `net` with Maurey sparsification against the
/// cover's own layer inputs on `blocks` (each a `d × n` matrix), with
/// `k_i = ⌈a_i² b_i²/ε_i²⌉`, `b_i` the Frobenius norm of the stacked inputs.
/// If the search misses `ε_i`, `k_i` is doubled (up to four times).
pub fn build_maurey_cover(
    net: &Network,
    blocks: &[Matrix],
    eps_i: &[f64],
    restarts: usize,
    key: StreamKey,
) -> Result<(Network, Vec<u64>)> {
    let mut weights = Vec::with_capacity(net.depth());
    let mut ks = Vec::with_capacity(net.depth());
    for (i, l) in net.layers().iter().enumerate() {
        let partial = Network::new(
            net.layers()[..i]
                .iter()
                .zip(&weights)
                .map(|(layer, w): (_, &Matrix)| crate::network::Layer {
                    weights: w.clone(),
                    activation: layer.activation,
                })
                .collect(),
        );
        let mut cols = Vec::new();
        for b in blocks {
            let hat = match &partial {
                Ok(p) => p.layer_outputs_batch(b)?.pop().expect("non-empty"),
                Err(_) => b.clone(),
            };
            cols.extend((0..hat.cols()).map(|c| hat.column(c)));
        }
        let x = Matrix::from_columns(&cols)?;
        let a = entrywise_p_norm(&l.weights, Exponent::ONE);
        if a == 0.0 {
            weights.push(l.weights.clone());
            ks.push(1);
            continue;
        }
        let b = x.frobenius_norm().max(f64::MIN_POSITIVE);
        let mut k = ceil_sq_ratio(a, b, eps_i[i])?.max(1);
        let mut round = maurey_round(&l.weights, &x, a, k, restarts, key.child("layer", i))?;
        for _ in 0..4 {
            if round.residual <= eps_i[i] {
                break;
            }
            k *= 2;
            round = maurey_round(&l.weights, &x, a, k, restarts, key.child("layer", i))?;
        }
        weights.push(round.element.realize());
        ks.push(k);
    }
    Ok((net.with_weights(weights)?, ks))
}

/// End-to-end construction: allocate `ε_i`, round each layer against the
/// network's attacked points, recompute the intermediate examples under the
/// cover, and rebuild with those points added until the per-layer residual
/// precondition holds there (or the rounds run out). Then checks the final
/// distance with `c_l = ‖W_l‖_σ`.
pub fn cover_distance_pipeline(
    net: &Network,
    data: &Dataset,
    ball: BallSpec,
    loss: &LossSpec,
    cfg: &CoverBuildConfig,
) -> Result<CoverPipeline> {
    let s = net.spectral_norms()?;
    let profile = CoverProfile {
        s: s.clone(),
        a: net.weights().iter().map(|w| entrywise_p_norm(w, Exponent::ONE)).collect(),
        rho: net.layers().iter().map(|l| l.activation.lipschitz).collect(),
        widths: net.widths(),
        loss_rho: loss.lipschitz().value,
    };
    let eps_i = epsilon_allocation(&profile, cfg.eps)?.eps;
    let oracle = InnerOracle::Grid { resolution: cfg.resolution };
    let samples = data.samples();
    let attacked = par::try_map_indexed(samples.len(), |i| {
        oracle.maximize(net, &samples[i].x, samples[i].y, ball, loss).map(|r| r.0)
    })?;
    let mut blocks = vec![data.data_matrix(), Matrix::from_columns(&attacked)?];
    let key = StreamKey::new(cfg.seed);
    let mut round = 0;
    loop {
        let (cover, k) = build_maurey_cover(net, &blocks, &eps_i, cfg.restarts, key.child("round", round))?;
        let check = check_final_cover_distance(net, &cover, data, ball, loss, &eps_i, &s, cfg.resolution)?;
        if check.failed_layer.is_none() || round >= cfg.rounds {
            return Ok(CoverPipeline {
                check,
                cover,
                k,
                rounds_used: round + 1,
            });
        }
        blocks.push(check.x_prime.clone());
        round += 1;
    }
}

/// Monte Carlo of single-sample Maurey rounding on one instance.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResidualStats {
    pub mean_sq: f64,
    pub stderr_sq: f64,
    /// Exact expectation `(a Σ|W_ij|‖X_j‖² − ‖WX‖²)/k`.
    pub exact_expectation: f64,
    /// The lemma's bound `(a² max_j ‖X_j‖² − ‖WX‖²)/k`.
    pub lemma_bound: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct StatsReport {
    pub report: CheckReport,
    pub spec: UniformCoverSpec,
    pub k: u64,
    pub trials: usize,
    pub instances: Vec<ResidualStats>,
}

/// Squared residual statistics of `trials` independent roundings of `W`.
pub fn residual_stats(w: &Matrix, x: &Matrix, a: f64, k: u64, trials: usize, key: StreamKey) -> Result<ResidualStats> {
    if trials < 2 {
        return Err(invalid("residual statistics need at least two trials"));
    }
    let sq = par::try_map_indexed(trials, |t| {
        single_sample_round(w, x, a, k, key.child("trial", t)).map(|(_, r)| r * r)
    })?;
    let n = trials as f64;
    let mean = sq.iter().sum::<f64>() / n;
    let var = sq.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    let u = w.matmul(x)?.frobenius_norm();
    let max_row_sq = (0..x.rows())
        .map(|j| x.row(j).iter().map(|v| v * v).sum::<f64>())
        .fold(0.0, f64::max);
    Ok(ResidualStats {
        mean_sq: mean,
        stderr_sq: (var / n).sqrt(),
        exact_expectation: maurey_expected_sq_residual(w, x, a, k)?,
        lemma_bound: ((a * a * max_row_sq - u * u) / k as f64).max(0.0),
    })
}

/// For `instances` draws of `(W, X)` within `spec`, the mean squared
/// single-sample residual must not exceed the lemma bound by more than three
/// standard errors.
pub fn check_maurey_residual_stats(spec: &UniformCoverSpec, instances: usize, trials: usize, seed: u64) -> Result<StatsReport> {
    let k = maurey_cover_params(spec)?.k;
    let root = StreamKey::new(seed);
    let stats = (0..instances)
        .map(|s| {
            let key = root.child("instance", s);
            let (w, x) = draw_cover_instance(spec, 4, s, key.derive("draw", 0));
            residual_stats(&w, &x, spec.a, k, trials, key.derive("stats", 0))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut t = Tally::new("maurey_residual_stats", None);
    for (i, s) in stats.iter().enumerate() {
        t.record(s.mean_sq, s.lemma_bound, 3.0 * s.stderr_sq, || format!("instance {i}"));
    }
    Ok(StatsReport {
        report: t.finish(),
        spec: *spec,
        k,
        trials,
        instances: stats,
    })
}

/// An inequality instance read from a file rather than computed, for
/// exercising the reporting path (no oracle involved).
#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct RecordedInequality {
    pub lhs: f64,
    pub rhs: f64,
    #[serde(default)]
    pub allowance: f64,
}

pub fn check_recorded(name: &str, rows: &[RecordedInequality]) -> CheckReport {
    let mut t = Tally::new(name, None);
    for (i, r) in rows.iter().enumerate() {
        t.record(r.lhs, r.rhs, r.allowance, || format!("row {i}"));
    }
    t.finish()
}

/// Settings for the randomized lemma suites.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct LemmaSuiteConfig {
    pub pairs: usize,
    pub d: usize,
    pub hidden: usize,
    pub classes: usize,
    pub ball: BallSpec,
    pub resolution: usize,
    pub gamma: f64,
    /// Inputs per pair for the layer recursion.
    pub recursion_points: usize,
    pub seed: u64,
}

impl LemmaSuiteConfig {
    pub fn new(pairs: usize, seed: u64) -> Self {
        LemmaSuiteConfig {
            pairs,
            d: 2,
            hidden: 6,
            classes: 3,
            ball: BallSpec {
                p: Exponent::INF,
                eps: 0.3,
            },
            resolution: 201,
            gamma: 1.0,
            recursion_points: 20,
            seed,
        }
    }
}

/// Pair `t` of random two-layer networks. Odd pairs are independent draws,
/// even pairs a network and a small perturbation of it (the regime a cover
/// produces).
pub fn random_pair(cfg: &LemmaSuiteConfig, t: usize) -> Result<(Network, Network)> {
    let key = StreamKey::new(cfg.seed).child("pair", t);
    let widths = [cfg.d, cfg.hidden, cfg.classes];
    let acts = [ActivationKind::Relu, ActivationKind::Identity];
    let net1 = Network::random(&widths, &acts, 1.5, key.derive("first", 0))?;
    let net2 = if t % 2 == 1 {
        Network::random(&widths, &acts, 1.5, key.derive("second", 0))?
    } else {
        let mut s = key.derive("noise", 0).stream();
        let rel = 0.2 * s.next_uniform();
        let ws = net1
            .weights()
            .into_iter()
            .map(|mut w| {
                w.as_mut_slice().iter_mut().for_each(|v| *v += rel * s.next_gaussian());
                w
            })
            .collect();
        net1.with_weights(ws)?
    };
    Ok((net1, net2))
}

fn random_point(d: usize, key: StreamKey) -> Vec<f64> {
    let mut s = key.stream();
    (0..d).map(|_| s.next_uniform_in(-1.0, 1.0)).collect()
}

/// Intermediate-example lemma on `cfg.pairs` random pairs, one random
/// labelled point each, grid oracle.
pub fn intermediate_example_suite(cfg: &LemmaSuiteConfig) -> Result<CheckReport> {
    let loss = LossSpec::ramp(cfg.gamma)?;
    let root = StreamKey::new(cfg.seed);
    let rows = par::try_map_indexed(cfg.pairs, |t| -> Result<IntermediateExample> {
        let (n1, n2) = random_pair(cfg, t)?;
        let key = root.child("point", t);
        let x = random_point(cfg.d, key);
        let y = key.derive("label", 0).stream().next_below(cfg.classes);
        intermediate_example(&n1, &n2, &x, y, cfg.ball, &loss, InnerOracle::Grid { resolution: cfg.resolution })
    })?;
    let mut t = Tally::new("intermediate_adversarial_example", Some(cfg.resolution));
    for (i, r) in rows.iter().enumerate() {
        t.record(r.lhs, r.rhs, r.allowance, || format!("pair {i}"));
    }
    Ok(t.finish())
}

/// Layer recursion on `cfg.pairs` random pairs with `cfg.recursion_points`
/// perturbed inputs each.
pub fn layer_recursion_suite(cfg: &LemmaSuiteConfig) -> Result<CheckReport> {
    let root = StreamKey::new(cfg.seed);
    let tallies = par::try_map_indexed(cfg.pairs, |t| -> Result<Tally> {
        let (n1, n2) = random_pair(cfg, t)?;
        let key = root.child("recursion", t);
        let mut cols = Vec::with_capacity(cfg.recursion_points);
        for j in 0..cfg.recursion_points {
            let x = random_point(cfg.d, key.child("x", j));
            let pset = cfg.ball.around(&x);
            let mut s = key.child("x_prime", j).stream();
            let raw: Vec<f64> = x.iter().map(|v| v + cfg.ball.eps * s.next_uniform_in(-1.5, 1.5)).collect();
            cols.push(pset.project(&raw)?);
        }
        let inputs = Matrix::from_columns(&cols)?;
        let mut tally = Tally::new("layer_recursion", None);
        record_recursion(&mut tally, &n1, &n2, &inputs, &format!("pair {t}"))?;
        for c in 0..inputs.cols() {
            let col = Matrix::from_columns(&[inputs.column(c)])?;
            record_recursion(&mut tally, &n1, &n2, &col, &format!("pair {t}, column {c}"))?;
        }
        Ok(tally)
    })?;
    let mut total = Tally::new("layer_recursion", None);
    for t in tallies {
        total.merge(t);
    }
    Ok(total.finish())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg(pairs: usize) -> LemmaSuiteConfig {
        LemmaSuiteConfig {
            resolution: 41,
            ..LemmaSuiteConfig::new(pairs, 17)
        }
    }

    fn toy_data(n: usize, seed: u64) -> Dataset {
        let mut s = StreamKey::new(seed).stream();
        Dataset::new(
            (0..n)
                .map(|_| Sample {
                    x: (0..2).map(|_| s.next_uniform_in(-1.0, 1.0)).collect(),
                    y: s.next_below(3),
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tally_never_passes_empty() {
        assert!(!Tally::new("empty", None).finish().passed);
        let mut t = Tally::new("one", None);
        t.record(1.0, 1.0, 0.0, String::new);
        let r = t.finish();
        assert!(r.passed && r.samples == 1 && r.max_excess == 0.0);
        let mut t = Tally::new("nan", None);
        t.record(f64::NAN, 1.0, 0.0, || "x".into());
        assert_eq!(t.finish().violations, 1);
    }

    #[test]
    fn identical_networks_give_zero_both_sides() {
        let (n1, _) = random_pair(&small_cfg(1), 0).unwrap();
        let loss = LossSpec::ramp(1.0).unwrap();
        let ball = BallSpec::new(Exponent::INF, 0.3).unwrap();
        let r = intermediate_example(&n1, &n1, &[0.2, -0.4], 1, ball, &loss, InnerOracle::Grid { resolution: 41 }).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        let rec = layer_recursion(&n1, &n1, &Matrix::from_columns(&[vec![0.3, 0.1], vec![-1.0, 2.0]]).unwrap()).unwrap();
        assert!(rec.iter().all(|l| l.delta_out == 0.0 && l.inner == 0.0));
    }

    #[test]
    fn zero_radius_is_pointwise() {
        let cfg = small_cfg(6);
        let loss = LossSpec::ramp(1.0).unwrap();
        let ball = BallSpec::new(Exponent::INF, 0.0).unwrap();
        for t in 0..6 {
            let (n1, n2) = random_pair(&cfg, t).unwrap();
            let x = [0.5, -0.25];
            let r = intermediate_example(&n1, &n2, &x, 2, ball, &loss, InnerOracle::Grid { resolution: 41 }).unwrap();
            let direct = (loss_value(&n1, &x, 2, &loss).unwrap() - loss_value(&n2, &x, 2, &loss).unwrap()).abs();
            assert_eq!(r.lhs, direct);
            assert_eq!(r.rhs, direct);
            assert_eq!(r.allowance, 0.0);
        }
    }

    #[test]
    fn intermediate_suite_small() {
        let r = intermediate_example_suite(&small_cfg(60)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.samples, 60);
        let mut cfg = small_cfg(20);
        cfg.ball = BallSpec::new(Exponent::TWO, 0.3).unwrap();
        assert!(intermediate_example_suite(&cfg).unwrap().passed);
    }

    #[test]
    fn grid_dimension_limit_is_enforced() {
        let net = Network::random(&[4, 3, 2], &[ActivationKind::Relu, ActivationKind::Identity], 1.0, StreamKey::new(1)).unwrap();
        let loss = LossSpec::ramp(1.0).unwrap();
        let ball = BallSpec::new(Exponent::INF, 0.1).unwrap();
        let s = [Sample { x: vec![0.0; 4], y: 0 }];
        assert!(matches!(
            check_intermediate_adv_example(&net, &net, &s, ball, &loss, InnerOracle::Grid { resolution: 11 }),
            Err(Error::GridTooLarge { .. })
        ));
    }

    #[test]
    fn perturbing_one_layer_only_shows_after_it() {
        let net = Network::random(
            &[2, 4, 4, 3],
            &[ActivationKind::Relu, ActivationKind::Relu, ActivationKind::Identity],
            1.0,
            StreamKey::new(4),
        )
        .unwrap();
        let mut ws = net.weights();
        let v = ws[1].get(0, 0) + 0.5;
        ws[1].set(0, 0, v);
        let other = net.with_weights(ws).unwrap();
        let inputs = Matrix::from_columns(&[vec![0.3, 0.9], vec![-0.7, 0.2], vec![1.0, 1.0]]).unwrap();
        let rec = layer_recursion(&net, &other, &inputs).unwrap();
        assert_eq!(rec[0].delta_out, 0.0);
        assert_eq!(rec[0].inner, 0.0);
        assert!(rec[1].inner > 0.0);
        assert!(check_layer_recursion(&net, &other, &inputs).unwrap().passed);
    }

    #[test]
    fn recursion_suite_small() {
        let r = layer_recursion_suite(&small_cfg(40)).unwrap();
        assert!(r.passed, "{r:?}");
        assert_eq!(r.samples, 40 * 2 * 21);
    }

    #[test]
    fn identical_cover_gives_zero_distance() {
        let (net, _) = random_pair(&small_cfg(1), 0).unwrap();
        let data = toy_data(5, 2);
        let loss = LossSpec::ramp(1.0).unwrap();
        let ball = BallSpec::new(Exponent::INF, 0.2).unwrap();
        let s = net.spectral_norms().unwrap();
        let r = check_final_cover_distance(&net, &net, &data, ball, &loss, &[0.0, 0.0], &s, 21).unwrap();
        assert_eq!(r.lhs, 0.0);
        assert!(r.report.passed);
    }

    #[test]
    fn single_layer_bound_is_loss_rho_times_eps() {
        let net = Network::random(&[2, 3], &[ActivationKind::Identity], 1.0, StreamKey::new(8)).unwrap();
        let loss = LossSpec::ramp(0.5).unwrap();
        let data = toy_data(4, 3);
        let ball = BallSpec::new(Exponent::INF, 0.1).unwrap();
        let cfg = CoverBuildConfig {
            eps: 0.4,
            restarts: 8,
            rounds: 3,
            resolution: 21,
            seed: 1,
        };
        let p = cover_distance_pipeline(&net, &data, ball, &loss, &cfg).unwrap();
        assert!((p.check.rhs - 4.0 * p.check.eps_i[0]).abs() < 1e-12);
        assert!((p.check.rhs - 0.4).abs() < 1e-12);
        assert!(p.check.report.passed, "{:?}", p.check);
    }

    #[test]
    fn cover_pipeline_on_toy_nets() {
        let cfg = small_cfg(4);
        let loss = LossSpec::ramp(1.0).unwrap();
        for t in 0..4 {
            let (net, _) = random_pair(&cfg, t).unwrap();
            let data = toy_data(6, 10 + t as u64);
            let build = CoverBuildConfig {
                eps: 0.5,
                restarts: 8,
                rounds: 4,
                resolution: 21,
                seed: t as u64,
            };
            let p = cover_distance_pipeline(&net, &data, cfg.ball, &loss, &build).unwrap();
            assert!(p.check.report.passed, "{:?}", p.check);
            assert!(p.check.lhs <= p.check.rhs + p.check.allowance + TOLERANCE);
        }
    }

    #[test]
    fn residual_stats_examples() {
        // u = 0: W = 0 with a = 1 samples only the zero element... use a
        // cancelling W instead: WX = 0 with ‖W‖_1 = 1
        let w = Matrix::from_rows(&[vec![0.5, -0.5]]).unwrap();
        let x = Matrix::from_rows(&[vec![1.0, 0.0], vec![1.0, 0.0]]).unwrap();
        let k = 16;
        let s = residual_stats(&w, &x, 1.0, k, 4000, StreamKey::new(1)).unwrap();
        assert!(s.mean_sq <= 1.0 / k as f64 + 3.0 * s.stderr_sq);
        let s4 = residual_stats(&w, &x, 1.0, 4 * k, 4000, StreamKey::new(2)).unwrap();
        let ratio = s.mean_sq / s4.mean_sq;
        assert!((ratio - 4.0).abs() < 0.6, "{ratio}");
        // exactly k-sparse: entries multiples of a/k
        let w = Matrix::from_rows(&[vec![0.25, -0.5], vec![0.0, 0.25]]).unwrap();
        let x = Matrix::from_rows(&[vec![0.3, -1.0, 0.2], vec![0.9, 0.1, 0.0]]).unwrap();
        let r = maurey_round(&w, &x, 1.0, 4, 4, StreamKey::new(3)).unwrap();
        assert!(r.residual < 1e-15);
    }

    #[test]
    fn maurey_stats_suite_passes() {
        let spec = UniformCoverSpec::new(1.0, 1.0, 0.5, 2, 3).unwrap();
        let r = check_maurey_residual_stats(&spec, 10, 400, 5).unwrap();
        assert!(r.report.passed, "{:?}", r.report);
        for s in &r.instances {
            assert!(s.exact_expectation <= s.lemma_bound + 1e-15);
        }
    }

    #[test]
    fn recorded_rows() {
        let ok = check_recorded("rows", &[RecordedInequality { lhs: 0.5, rhs: 0.5, allowance: 0.0 }]);
        assert!(ok.passed);
        let bad = check_recorded(
            "rows",
            &[
                RecordedInequality { lhs: 0.5, rhs: 0.5, allowance: 0.0 },
                RecordedInequality { lhs: 0.9, rhs: 0.5, allowance: 0.1 },
            ],
        );
        assert!(!bad.passed);
        assert_eq!(bad.violations, 1);
        assert!((bad.max_excess - 0.3).abs() < 1e-12);
    }
}
