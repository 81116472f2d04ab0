//! Inner maximization `max_{x′ ∈ B(x)} ℓ(f(x′), y)` over ℓp balls.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::linalg::{lp_ball_project, norm2, vector_p_norm, Exponent};
use crate::network::{backprop, loss_value, margin, margin_grad, LossSpec, Network};
use crate::par;
use crate::rng::{Stream, StreamKey};

/// An ℓp ball shape: exponent `p ∈ {2, ∞}` and radius `ε ≥ 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BallSpec {
    pub p: Exponent,
    pub eps: f64,
}

impl BallSpec {
    pub fn new(p: Exponent, eps: f64) -> Result<Self> {
        p.require_two_or_inf()?;
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(invalid(format!("attack radius must be finite and >= 0, got {eps}")));
        }
        Ok(BallSpec { p, eps })
    }

    pub fn around(self, center: &[f64]) -> PerturbationSet {
        PerturbationSet {
            ball: self,
            center: center.to_vec(),
        }
    }
}

/// `B_ε^p(x)`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PerturbationSet {
    pub ball: BallSpec,
    pub center: Vec<f64>,
}

impl PerturbationSet {
    pub fn new(ball: BallSpec, center: Vec<f64>) -> Self {
        PerturbationSet { ball, center }
    }

    pub fn eps(&self) -> f64 {
        self.ball.eps
    }

    pub fn p(&self) -> Exponent {
        self.ball.p
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn project(&self, v: &[f64]) -> Result<Vec<f64>> {
        lp_ball_project(v, &self.center, self.ball.p, self.ball.eps)
    }

    /// `‖x − center‖_p − ε`.
    pub fn excess(&self, x: &[f64]) -> f64 {
        let d: Vec<f64> = x.iter().zip(&self.center).map(|(a, b)| a - b).collect();
        vector_p_norm(&d, self.ball.p) - self.ball.eps
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        x.len() == self.center.len() && self.excess(x) <= tol
    }

    /// Uniform draw from the ball.
    fn sample(&self, s: &mut Stream) -> Vec<f64> {
        let d = self.dim();
        let eps = self.ball.eps;
        if self.ball.p.is_infinite() {
            self.center
                .iter()
                .map(|c| c + eps * s.next_uniform_in(-1.0, 1.0))
                .collect()
        } else {
            let g = s.gaussian_vec(d);
            let n = norm2(&g);
            let r = eps * s.next_uniform().powf(1.0 / d as f64);
            if n == 0.0 {
                return self.center.clone();
            }
            self.center.iter().zip(&g).map(|(c, z)| c + r * z / n).collect()
        }
    }
}

/// PGD settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttackConfig {
    pub steps: usize,
    pub step_size: f64,
    pub restarts: usize,
    pub seed: u64,
}

impl AttackConfig {
    /// 40 steps of size `2.5 ε / 40`, 5 restarts.
    pub fn default_for(eps: f64, seed: u64) -> Self {
        let steps = 40;
        AttackConfig {
            steps,
            step_size: (2.5 * eps / steps as f64).max(f64::MIN_POSITIVE),
            restarts: 5,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.restarts == 0 {
            return Err(invalid("attack steps and restarts must be >= 1"));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(invalid("attack step size must be positive"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
#[serde(tag = "method", rename_all = "snake_case")]
pub enum AttackMethod {
    Pgd,
    Fgsm,
    Grid { resolution: usize },
    LinearOptimal,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttackResult {
    pub x_adv: Vec<f64>,
    /// `loss_value(net, x_adv, y)`.
    pub loss: f64,
    pub method: AttackMethod,
    /// Set when the attack direction at the clean point vanished.
    pub zero_gradient: bool,
}

/// Direction that increases the loss. For the ramp loss this is `−∇_x margin`,
/// which stays informative where the ramp is flat.
pub fn ascent_direction(net: &Network, x: &[f64], y: usize, loss: &LossSpec) -> Result<Vec<f64>> {
    let bp = match loss {
        LossSpec::RampMargin { .. } => backprop(
            net,
            x,
            |logits| {
                let g = margin_grad(logits, y).into_iter().map(|v| -v).collect();
                (-margin(logits, y), g)
            },
            false,
        )?,
        LossSpec::Custom(_) => backprop(net, x, |logits| loss.value_and_grad(logits, y), false)?,
    };
    Ok(bp.input_grad)
}

fn check_set(net: &Network, pset: &PerturbationSet) -> Result<()> {
    if pset.dim() != net.input_dim() {
        return Err(Error::DimensionMismatch {
            context: "perturbation center",
            expected: net.input_dim(),
            actual: pset.dim(),
        });
    }
    Ok(())
}

/// One ascent step of length `alpha`: sign step for ℓ∞, normalized step for ℓ2.
fn step(x: &[f64], g: &[f64], p: Exponent, alpha: f64) -> Option<Vec<f64>> {
    if p.is_infinite() {
        if g.iter().all(|&v| v == 0.0) {
            return None;
        }
        Some(
            x.iter()
                .zip(g)
                .map(|(xi, gi)| xi + alpha * sign(*gi))
                .collect(),
        )
    } else {
        let n = norm2(g);
        if n == 0.0 {
            return None;
        }
        Some(x.iter().zip(g).map(|(xi, gi)| xi + alpha * gi / n).collect())
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Projected gradient ascent with random starts. Returns the best iterate
/// over all restarts, with the clean point as an extra candidate. Ties go to
/// the clean point, then to the lowest restart and earliest iterate.
pub fn pgd_attack(
    net: &Network,
    x: &[f64],
    y: usize,
    pset: &PerturbationSet,
    loss: &LossSpec,
    cfg: &AttackConfig,
) -> Result<AttackResult> {
    check_set(net, pset)?;
    cfg.validate()?;
    let clean = loss_value(net, x, y, loss)?;
    let mut best = AttackResult {
        x_adv: x.to_vec(),
        loss: clean,
        method: AttackMethod::Pgd,
        zero_gradient: false,
    };
    if pset.eps() == 0.0 {
        return Ok(best);
    }
    let root = StreamKey::new(cfg.seed);
    let runs = par::try_map_indexed(cfg.restarts, |r| -> Result<(Vec<f64>, f64)> {
        let mut s = root.child("restart", r).stream();
        let mut cur = pset.sample(&mut s);
        let mut best_x = cur.clone();
        let mut best_l = loss_value(net, &cur, y, loss)?;
        for _ in 0..cfg.steps {
            if best_l >= 1.0 {
                break;
            }
            let g = ascent_direction(net, &cur, y, loss)?;
            let Some(next) = step(&cur, &g, pset.p(), cfg.step_size) else {
                break;
            };
            cur = pset.project(&next)?;
            let l = loss_value(net, &cur, y, loss)?;
            if l > best_l {
                best_l = l;
                best_x = cur.clone();
            }
        }
        Ok((best_x, best_l))
    })?;
    for (xr, lr) in runs {
        if lr > best.loss {
            best.loss = lr;
            best.x_adv = xr;
        }
    }
    Ok(best)
}

/// Single signed (ℓ∞) or normalized (ℓ2) gradient step of length ε from the
/// clean point; returns the better of the stepped and clean points.
pub fn fgsm_attack(
    net: &Network,
    x: &[f64],
    y: usize,
    pset: &PerturbationSet,
    loss: &LossSpec,
) -> Result<AttackResult> {
    check_set(net, pset)?;
    let clean = loss_value(net, x, y, loss)?;
    let mut out = AttackResult {
        x_adv: x.to_vec(),
        loss: clean,
        method: AttackMethod::Fgsm,
        zero_gradient: false,
    };
    if pset.eps() == 0.0 {
        return Ok(out);
    }
    let g = ascent_direction(net, x, y, loss)?;
    match step(x, &g, pset.p(), pset.eps()) {
        None => out.zero_gradient = true,
        Some(next) => {
            let cand = pset.project(&next)?;
            let l = loss_value(net, &cand, y, loss)?;
            if l > clean {
                out.loss = l;
                out.x_adv = cand;
            }
        }
    }
    Ok(out)
}

pub const GRID_MAX_DIM: usize = 3;
pub const GRID_MAX_RESOLUTION: usize = 401;

/// Axis offsets `ε(2i/(r−1) − 1)`, `i = 0..r`. The grid for `2r − 1` contains
/// the grid for `r` bit for bit.
fn grid_offsets(eps: f64, resolution: usize) -> Vec<f64> {
    if resolution == 1 {
        return vec![0.0];
    }
    let denom = (resolution - 1) as f64;
    (0..resolution)
        .map(|i| eps * ((2 * i) as f64 / denom - 1.0))
        .collect()
}

fn check_grid(dim: usize, p: Exponent, resolution: usize) -> Result<()> {
    if dim > GRID_MAX_DIM || resolution == 0 || resolution > GRID_MAX_RESOLUTION {
        return Err(Error::GridTooLarge { dim, resolution });
    }
    if !p.is_infinite() && resolution.is_multiple_of(2) {
        return Err(invalid(
            "the l2 grid oracle needs an odd resolution so the center lies on the grid",
        ));
    }
    Ok(())
}

/// Grid spacing `2ε/(r − 1)`.
pub fn grid_pitch(eps: f64, resolution: usize) -> f64 {
    if resolution <= 1 {
        2.0 * eps
    } else {
        2.0 * eps / (resolution - 1) as f64
    }
}

/// Largest ℓ2 distance from a point of the ball to the nearest grid point
/// inside the ball: `pitch·√d/2` for ℓ∞, `pitch·√d` for ℓ2 (round each
/// coordinate toward the center).
pub fn grid_covering_radius(ball: BallSpec, dim: usize, resolution: usize) -> f64 {
    let pitch = grid_pitch(ball.eps, resolution);
    let root_d = (dim as f64).sqrt();
    if ball.p.is_infinite() {
        pitch * root_d / 2.0
    } else {
        pitch * root_d
    }
}

/// Bound on `max_B ℓ − max_grid ℓ`: loss Lipschitz × network Lipschitz ×
/// covering radius.
pub fn grid_slack(net: &Network, loss: &LossSpec, ball: BallSpec, resolution: usize) -> Result<f64> {
    Ok(loss.lipschitz().value
        * net.lipschitz_upper_bound()?
        * grid_covering_radius(ball, net.input_dim(), resolution))
}

/// Exhaustive maximization over the axis-aligned grid intersected with the
/// ball. Ties go to the clean point, then to the lowest grid index.
pub fn exact_attack_grid(
    net: &Network,
    x: &[f64],
    y: usize,
    pset: &PerturbationSet,
    loss: &LossSpec,
    resolution: usize,
) -> Result<AttackResult> {
    check_set(net, pset)?;
    let d = pset.dim();
    check_grid(d, pset.p(), resolution)?;
    let clean = loss_value(net, x, y, loss)?;
    let mut best = AttackResult {
        x_adv: x.to_vec(),
        loss: clean,
        method: AttackMethod::Grid { resolution },
        zero_gradient: false,
    };
    if pset.eps() == 0.0 {
        return Ok(best);
    }
    let offsets = grid_offsets(pset.eps(), resolution);
    let eps = pset.eps();
    let l2 = !pset.p().is_infinite();
    let inner: usize = resolution.pow(d as u32 - 1);
    // one work item per first-axis offset; each returns its best (loss, index)
    let slabs = par::try_map_indexed(resolution, |i0| -> Result<Option<(f64, usize)>> {
        let mut best: Option<(f64, usize)> = None;
        let mut point = vec![0.0; d];
        let mut off = vec![0.0; d];
        for rest in 0..inner {
            let mut idx = rest;
            off[0] = offsets[i0];
            for k in (1..d).rev() {
                off[k] = offsets[idx % resolution];
                idx /= resolution;
            }
            if l2 && norm2(&off) > eps {
                continue;
            }
            for k in 0..d {
                point[k] = pset.center[k] + off[k];
            }
            let l = loss_value(net, &point, y, loss)?;
            if best.is_none_or(|(b, _)| l > b) {
                best = Some((l, i0 * inner + rest));
            }
        }
        Ok(best)
    })?;
    let mut best_idx = None;
    for (l, idx) in slabs.into_iter().flatten() {
        if l > best.loss {
            best.loss = l;
            best_idx = Some(idx);
        }
    }
    if let Some(mut idx) = best_idx {
        let mut point = vec![0.0; d];
        for k in (0..d).rev() {
            point[k] = pset.center[k] + offsets[idx % resolution];
            idx /= resolution;
        }
        best.x_adv = point;
    }
    Ok(best)
}

/// Optimal attack on the linear score `y⟨w, x⟩` with `y ∈ {−1, +1}`: returns
/// the minimizer `x′` and the robust margin `y⟨w, x⟩ − ε‖w‖_q`.
pub fn linear_optimal_attack(w: &[f64], x: &[f64], y: f64, ball: BallSpec) -> Result<(Vec<f64>, f64)> {
    ball.p.require_two_or_inf()?;
    if w.len() != x.len() {
        return Err(Error::DimensionMismatch {
            context: "linear attack weights",
            expected: x.len(),
            actual: w.len(),
        });
    }
    if y != 1.0 && y != -1.0 {
        return Err(invalid("linear attack label must be +1 or -1"));
    }
    let eps = ball.eps;
    let score = y * crate::linalg::dot(w, x);
    let q = ball.p.dual();
    let wn = vector_p_norm(w, q);
    let x_adv = if ball.p.is_infinite() {
        x.iter().zip(w).map(|(xi, wi)| xi - y * eps * sign(*wi)).collect()
    } else if wn == 0.0 {
        x.to_vec()
    } else {
        x.iter().zip(w).map(|(xi, wi)| xi - y * eps * wi / wn).collect()
    };
    Ok((x_adv, score - eps * wn))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::Matrix;
    use crate::network::{ramp_loss, Activation, ActivationKind, Layer};

    fn linear_net(rows: Vec<Vec<f64>>) -> Network {
        Network::new(vec![Layer {
            weights: Matrix::from_rows(&rows).unwrap(),
            activation: Activation::new(ActivationKind::Identity),
        }])
        .unwrap()
    }

    fn two_layer(seed: u64, d: usize) -> Network {
        Network::random(
            &[d, 6, 3],
            &[ActivationKind::Relu, ActivationKind::Identity],
            1.5,
            StreamKey::new(seed),
        )
        .unwrap()
    }

    fn ball(p: Exponent, eps: f64) -> BallSpec {
        BallSpec::new(p, eps).unwrap()
    }

    #[test]
    fn zero_radius_returns_clean_point() {
        let net = two_layer(1, 2);
        let loss = LossSpec::ramp(1.0).unwrap();
        let x = [0.3, -0.2];
        let pset = ball(Exponent::INF, 0.0).around(&x);
        let clean = loss_value(&net, &x, 1, &loss).unwrap();
        let cfg = AttackConfig::default_for(0.0, 3);
        for r in [
            pgd_attack(&net, &x, 1, &pset, &loss, &cfg).unwrap(),
            fgsm_attack(&net, &x, 1, &pset, &loss).unwrap(),
            exact_attack_grid(&net, &x, 1, &pset, &loss, 11).unwrap(),
        ] {
            assert_eq!(r.x_adv, x.to_vec());
            assert_eq!(r.loss, clean);
        }
    }

    #[test]
    fn linear_attack_examples() {
        let (xa, m) = linear_optimal_attack(&[1.0, 0.0], &[1.0, 1.0], 1.0, ball(Exponent::INF, 0.5)).unwrap();
        assert_eq!(m, 0.5);
        assert_eq!(xa, vec![0.5, 1.0]);
        let (_, m) = linear_optimal_attack(&[3.0, 4.0], &[1.0, 0.0], 1.0, ball(Exponent::TWO, 1.0)).unwrap();
        assert!((m + 2.0).abs() < 1e-15);
        let (xa, m) = linear_optimal_attack(&[2.0, -1.0], &[1.0, 1.0], -1.0, ball(Exponent::TWO, 0.0)).unwrap();
        assert_eq!((xa, m), (vec![1.0, 1.0], -1.0));
    }

    #[test]
    fn linear_attack_attains_margin_and_beats_grid() {
        // a dense scan of the ball never finds a smaller margin
        for p in [Exponent::TWO, Exponent::INF] {
            let b = ball(p, 0.4);
            let (w, x) = ([0.8, -1.7], [0.2, 0.5]);
            let (xa, m) = linear_optimal_attack(&w, &x, 1.0, b).unwrap();
            assert!((crate::linalg::dot(&w, &xa) - m).abs() < 1e-14);
            assert!(b.around(&x).contains(&xa, 1e-12));
            let offs = grid_offsets(0.4, 201);
            let mut lowest = f64::INFINITY;
            for &u in &offs {
                for &v in &offs {
                    if !p.is_infinite() && (u * u + v * v).sqrt() > 0.4 {
                        continue;
                    }
                    lowest = lowest.min(w[0] * (x[0] + u) + w[1] * (x[1] + v));
                }
            }
            assert!(lowest >= m - 1e-12);
            assert!(lowest - m <= norm2(&w) * grid_covering_radius(b, 2, 201) + 1e-12);
        }
    }

    fn linear_case() -> (Network, Vec<f64>, Vec<f64>, LossSpec) {
        let net = linear_net(vec![vec![1.2, -0.4, 0.3], vec![-0.2, 0.5, 0.9]]);
        let w: Vec<f64> = (0..3)
            .map(|j| net.layers()[0].weights.get(0, j) - net.layers()[0].weights.get(1, j))
            .collect();
        let x = vec![0.9, -0.3, 0.4];
        (net, w, x, LossSpec::ramp(10.0).unwrap())
    }

    #[test]
    fn pgd_matches_linear_oracle() {
        let (net, w, x, loss) = linear_case();
        for p in [Exponent::TWO, Exponent::INF] {
            let b = ball(p, 0.25);
            let (_, m) = linear_optimal_attack(&w, &x, 1.0, b).unwrap();
            // on the ℓ2 sphere the angle to w shrinks by ε/(ε+α) per step, so the
            // default α = ε/40 is too slow for 1e-6 in 100 steps
            let cfg = AttackConfig {
                steps: 100,
                step_size: 0.5 * 0.25,
                restarts: 5,
                seed: 7,
            };
            let r = pgd_attack(&net, &x, 0, &b.around(&x), &loss, &cfg).unwrap();
            assert!((r.loss - ramp_loss(m, 10.0)).abs() < 1e-6, "{p}: {} vs {}", r.loss, ramp_loss(m, 10.0));
        }
    }

    #[test]
    fn fgsm_is_exact_on_linear_linf() {
        let (net, w, x, loss) = linear_case();
        let b = ball(Exponent::INF, 0.25);
        let (xa, m) = linear_optimal_attack(&w, &x, 1.0, b).unwrap();
        let r = fgsm_attack(&net, &x, 0, &b.around(&x), &loss).unwrap();
        assert_eq!(r.x_adv, xa);
        assert_eq!(r.loss, ramp_loss(m, 10.0));
    }

    #[test]
    fn fgsm_flags_zero_gradient() {
        let net = linear_net(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        let loss = LossSpec::ramp(1.0).unwrap();
        let r = fgsm_attack(&net, &[1.0, 1.0], 0, &ball(Exponent::INF, 0.1).around(&[1.0, 1.0]), &loss).unwrap();
        assert!(r.zero_gradient);
        assert_eq!(r.x_adv, vec![1.0, 1.0]);
    }

    #[test]
    fn pgd_close_to_grid_on_two_layer_nets() {
        let loss = LossSpec::ramp(2.0).unwrap();
        for seed in 0..10 {
            let net = two_layer(40 + seed, 2);
            let mut s = StreamKey::new(seed).derive("x", 0).stream();
            let x = s.gaussian_vec(2);
            let y = s.next_below(3);
            for p in [Exponent::INF, Exponent::TWO] {
                let b = ball(p, 0.3);
                let pset = b.around(&x);
                let grid = exact_attack_grid(&net, &x, y, &pset, &loss, 201).unwrap();
                let pgd = pgd_attack(&net, &x, y, &pset, &loss, &AttackConfig::default_for(0.3, seed)).unwrap();
                let slack = grid_slack(&net, &loss, b, 201).unwrap();
                assert!(pgd.loss >= grid.loss - 1e-3, "seed {seed}: pgd {} grid {}", pgd.loss, grid.loss);
                assert!(pgd.loss <= grid.loss + slack + 1e-12);
            }
        }
    }

    #[test]
    fn fgsm_rarely_beats_pgd() {
        let loss = LossSpec::ramp(1.0).unwrap();
        let trials = 100;
        let mut ok = 0;
        for t in 0..trials {
            let net = two_layer(500 + t, 3);
            let mut s = StreamKey::new(t).derive("x", 1).stream();
            let x = s.gaussian_vec(3);
            let y = s.next_below(3);
            let pset = ball(Exponent::INF, 0.2).around(&x);
            let f = fgsm_attack(&net, &x, y, &pset, &loss).unwrap();
            let p = pgd_attack(&net, &x, y, &pset, &loss, &AttackConfig::default_for(0.2, t)).unwrap();
            if f.loss <= p.loss + 1e-9 {
                ok += 1;
            }
        }
        assert!(ok * 100 >= 95 * trials, "{ok}/{trials}");
    }

    #[test]
    fn grid_refinement_is_monotone_and_feasible() {
        let loss = LossSpec::ramp(1.0).unwrap();
        for seed in 0..5 {
            let net = two_layer(80 + seed, 2);
            let x = [0.1 * seed as f64, -0.2];
            for p in [Exponent::INF, Exponent::TWO] {
                let pset = ball(p, 0.5).around(&x);
                let mut last = f64::NEG_INFINITY;
                for r in [51, 101, 201, 401] {
                    let g = exact_attack_grid(&net, &x, 2, &pset, &loss, r).unwrap();
                    assert!(g.loss >= last);
                    assert!(pset.contains(&g.x_adv, 1e-9));
                    assert_eq!(loss_value(&net, &g.x_adv, 2, &loss).unwrap(), g.loss);
                    last = g.loss;
                }
            }
        }
    }

    #[test]
    fn grid_rejects_large_problems() {
        let net = two_layer(1, 4);
        let loss = LossSpec::ramp(1.0).unwrap();
        let x = [0.0; 4];
        let e = exact_attack_grid(&net, &x, 0, &ball(Exponent::INF, 0.1).around(&x), &loss, 5);
        assert!(matches!(e, Err(Error::GridTooLarge { .. })));
        let net = two_layer(1, 2);
        let e = exact_attack_grid(&net, &[0.0; 2], 0, &ball(Exponent::INF, 0.1).around(&[0.0; 2]), &loss, 402);
        assert!(matches!(e, Err(Error::GridTooLarge { .. })));
    }

    #[test]
    fn pgd_monotone_in_restarts_and_steps() {
        let loss = LossSpec::ramp(3.0).unwrap();
        for seed in 0..10 {
            let net = two_layer(900 + seed, 3);
            let x = [0.2, 0.1, -0.4];
            let pset = ball(Exponent::TWO, 0.4).around(&x);
            let base = AttackConfig {
                steps: 5,
                step_size: 0.03,
                restarts: 1,
                seed,
            };
            let mut last = f64::NEG_INFINITY;
            for restarts in [1, 2, 4, 8] {
                let r = pgd_attack(&net, &x, 0, &pset, &loss, &AttackConfig { restarts, ..base }).unwrap();
                assert!(r.loss >= last);
                last = r.loss;
            }
            let mut last = f64::NEG_INFINITY;
            for steps in [1, 5, 20, 80] {
                let r = pgd_attack(&net, &x, 0, &pset, &loss, &AttackConfig { steps, ..base }).unwrap();
                assert!(r.loss >= last);
                assert!(pset.contains(&r.x_adv, 1e-9));
                last = r.loss;
            }
        }
    }

    #[test]
    fn pgd_is_schedule_independent() {
        let loss = LossSpec::ramp(1.0).unwrap();
        let net = two_layer(5, 3);
        let x = [0.5, 0.5, -0.1];
        let pset = ball(Exponent::INF, 0.3).around(&x);
        let cfg = AttackConfig::default_for(0.3, 11);
        let a = pgd_attack(&net, &x, 1, &pset, &loss, &cfg).unwrap();
        par::set_execution(par::Execution::Sequential);
        let b = pgd_attack(&net, &x, 1, &pset, &loss, &cfg).unwrap();
        par::set_execution(par::Execution::Parallel);
        assert_eq!(a, b);
    }

    #[test]
    fn nested_offsets_agree_bitwise() {
        let coarse = grid_offsets(0.3, 201);
        let fine = grid_offsets(0.3, 401);
        for (i, v) in coarse.iter().enumerate() {
            assert_eq!(v.to_bits(), fine[2 * i].to_bits());
        }
    }
}
