//! Monte Carlo estimates of the standard and adversarial empirical
//! Rademacher complexity.
//!
//! Trial `t` draws its signs from `StreamKey::new(seed).derive("trial", t)`,
//! so estimates do not depend on the execution order of the trials.

use serde::Serialize;

use crate::attack::{pgd_attack, AttackConfig, BallSpec};
use crate::data::Dataset;
use crate::error::{invalid, Error, Result};
use crate::linalg::{vector_p_norm, Exponent, Matrix};
use crate::network::{backprop, loss_value, margin, margin_grad, LossSpec, Network};
use crate::par;
use crate::rng::StreamKey;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RademacherEstimate {
    pub mean: f64,
    /// Sample standard deviation over `√trials`.
    pub stderr: f64,
    pub trials: usize,
    /// `(1/n) sup_h Σ σ_i h(x_i, y_i)` per trial.
    pub per_trial: Vec<f64>,
}

impl RademacherEstimate {
    pub fn from_trials(per_trial: Vec<f64>) -> Result<Self> {
        let t = per_trial.len();
        if t < 2 {
            return Err(invalid("at least two trials are required"));
        }
        let tf = t as f64;
        let mean = per_trial.iter().sum::<f64>() / tf;
        let var = per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (tf - 1.0);
        Ok(RademacherEstimate {
            mean,
            stderr: (var / tf).sqrt(),
            trials: t,
            per_trial,
        })
    }
}

/// Settings for the weight-space search used on network classes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct WeightSearch {
    /// Random starts besides the template itself.
    pub starts: usize,
    pub steps: usize,
    /// Step length relative to each layer's cap.
    pub step_size: f64,
}

impl Default for WeightSearch {
    fn default() -> Self {
        WeightSearch {
            starts: 2,
            steps: 20,
            step_size: 0.1,
        }
    }
}

#[derive(Clone, Debug)]
pub enum ClassKind {
    /// `{(x, y) ↦ y⟨w, x⟩ : ‖w‖_r ≤ budget}` with `y ∈ {−1, +1}`.
    Linear { r: Exponent, budget: f64 },
    /// `{(x, y) ↦ loss(f_W(x), y)}` over networks shaped like `template`
    /// with `‖W_i‖_F ≤ caps[i]`. The Frobenius cap is a stand-in for a
    /// spectral cap and only shrinks the class.
    Network {
        template: Network,
        caps: Vec<f64>,
        loss: LossSpec,
        search: WeightSearch,
    },
}

#[derive(Clone, Debug)]
pub struct HypothesisClass {
    pub kind: ClassKind,
    /// Perturbation ball and, for network classes, the inner PGD settings.
    pub attack: Option<(BallSpec, AttackConfig)>,
}

impl HypothesisClass {
    pub fn linear(r: Exponent, budget: f64) -> Self {
        HypothesisClass {
            kind: ClassKind::Linear { r, budget },
            attack: None,
        }
    }

    pub fn with_attack(mut self, ball: BallSpec, cfg: AttackConfig) -> Self {
        self.attack = Some((ball, cfg));
        self
    }

    pub fn validate(&self, data: &Dataset) -> Result<()> {
        match &self.kind {
            ClassKind::Linear { r, budget } => {
                if !(*budget > 0.0) || !budget.is_finite() {
                    return Err(invalid("linear budget must be positive"));
                }
                if let Some((ball, _)) = &self.attack {
                    ball.p.require_two_or_inf()?;
                    if ball.eps > 0.0 && r.value() != 2.0 {
                        return Err(invalid("adversarial linear classes support r = 2 only"));
                    }
                }
            }
            ClassKind::Network {
                template, caps, search, ..
            } => {
                if caps.len() != template.depth() {
                    return Err(Error::DimensionMismatch {
                        context: "spectral caps",
                        expected: template.depth(),
                        actual: caps.len(),
                    });
                }
                if caps.iter().any(|c| !(*c > 0.0) || !c.is_finite()) {
                    return Err(invalid("caps must be positive"));
                }
                if !(search.step_size > 0.0) {
                    return Err(invalid("search step size must be positive"));
                }
                if template.input_dim() != data.dim() {
                    return Err(Error::DimensionMismatch {
                        context: "network input vs data",
                        expected: data.dim(),
                        actual: template.input_dim(),
                    });
                }
                if data.num_classes() > template.output_dim() {
                    return Err(invalid("labels exceed network outputs"));
                }
                if let Some((ball, cfg)) = &self.attack {
                    ball.p.require_two_or_inf()?;
                    cfg.validate()?;
                }
            }
        }
        Ok(())
    }

    fn effective_ball(&self) -> Option<&(BallSpec, AttackConfig)> {
        self.attack.as_ref().filter(|(b, _)| b.eps > 0.0)
    }
}

/// `W‖Σ σ_i x_i‖_{r*}`, the exact value of `sup_{‖w‖_r ≤ W} Σ σ_i⟨w, x_i⟩`.
pub fn linear_rc_exact_per_sigma(points: &[Vec<f64>], sigma: &[f64], r: Exponent, budget: f64) -> Result<f64> {
    let u = signed_sum(points, sigma)?;
    Ok(budget * vector_p_norm(&u, r.dual()))
}

/// Exact `sup_{‖w‖_2 ≤ W} Σ σ_i min_{x′ ∈ B_ε^p(x_i)} ⟨w, x′⟩` for p ∈ {2, ∞}.
///
/// With `u = Σσ_i x_i` and `c = εΣσ_i` the objective is `⟨w, u⟩ − c‖w‖_q`.
/// For q = 2 the supremum is `W(‖u‖_2 − c)_+`; for q = 1 it is
/// `W‖((|u_j| − c)_+)_j‖_2`, which covers both signs of `c`.
pub fn linear_arc_exact_per_sigma(points: &[Vec<f64>], sigma: &[f64], budget: f64, ball: BallSpec) -> Result<f64> {
    ball.p.require_two_or_inf()?;
    if ball.eps == 0.0 {
        return linear_rc_exact_per_sigma(points, sigma, Exponent::TWO, budget);
    }
    let u = signed_sum(points, sigma)?;
    let c = ball.eps * sigma.iter().sum::<f64>();
    let v = if ball.p.is_infinite() {
        let t: Vec<f64> = u.iter().map(|x| (x.abs() - c).max(0.0)).collect();
        vector_p_norm(&t, Exponent::TWO)
    } else {
        (vector_p_norm(&u, Exponent::TWO) - c).max(0.0)
    };
    Ok(budget * v)
}

fn signed_sum(points: &[Vec<f64>], sigma: &[f64]) -> Result<Vec<f64>> {
    if points.len() != sigma.len() {
        return Err(Error::DimensionMismatch {
            context: "signs vs points",
            expected: points.len(),
            actual: sigma.len(),
        });
    }
    if sigma.iter().any(|s| *s != 1.0 && *s != -1.0) {
        return Err(invalid("signs must be +1 or -1"));
    }
    let d = points.first().map_or(0, |p| p.len());
    let mut u = vec![0.0; d];
    for (p, s) in points.iter().zip(sigma) {
        for (uj, pj) in u.iter_mut().zip(p) {
            *uj += s * pj;
        }
    }
    Ok(u)
}

/// Points `y_i x_i` with binary labels, so the linear class value becomes
/// `Σ σ_i ⟨w, y_i x_i⟩`. Since `min_{x′} y⟨w, x′⟩` over a symmetric ball
/// equals `⟨w, y x⟩ − ε‖w‖_q`, the same trick covers the adversarial case.
fn label_signed_points(data: &Dataset) -> Vec<Vec<f64>> {
    data.samples()
        .iter()
        .zip(data.binary_signs())
        .map(|(s, y)| s.x.iter().map(|v| y * v).collect())
        .collect()
}

fn draw_signs(key: StreamKey, n: usize) -> Vec<f64> {
    let mut s = key.stream();
    (0..n).map(|_| s.next_sign()).collect()
}

fn estimate(class: &HypothesisClass, data: &Dataset, trials: usize, seed: u64, adversarial: bool) -> Result<RademacherEstimate> {
    class.validate(data)?;
    if trials < 2 {
        return Err(invalid("at least two trials are required"));
    }
    let n = data.len();
    let nf = n as f64;
    let root = StreamKey::new(seed);
    let ball = if adversarial { class.effective_ball() } else { None };
    let per_trial = match &class.kind {
        ClassKind::Linear { r, budget } => {
            let points = label_signed_points(data);
            par::try_map_indexed(trials, |t| -> Result<f64> {
                let sigma = draw_signs(root.derive("trial", t as u64), n);
                let v = match ball {
                    Some((b, _)) => linear_arc_exact_per_sigma(&points, &sigma, *budget, *b)?,
                    None => linear_rc_exact_per_sigma(&points, &sigma, *r, *budget)?,
                };
                Ok(v / nf)
            })?
        }
        ClassKind::Network {
            template,
            caps,
            loss,
            search,
        } => par::try_map_indexed(trials, |t| -> Result<f64> {
            let key = root.derive("trial", t as u64);
            let sigma = draw_signs(key, n);
            let v = network_sup(template, caps, loss, *search, data, &sigma, ball, key)?;
            Ok(v / nf)
        })?,
    };
    RademacherEstimate::from_trials(per_trial)
}

/// Monte Carlo estimate of `E_σ (1/n) sup_h Σ σ_i h(x_i, y_i)`. Exact per
/// trial for linear classes; a lower estimate for network classes.
pub fn mc_standard_rc(class: &HypothesisClass, data: &Dataset, trials: usize, seed: u64) -> Result<RademacherEstimate> {
    estimate(class, data, trials, seed, false)
}

/// Monte Carlo estimate of the adversarial Rademacher complexity. Linear
/// classes use the optimal attack in closed form; network classes use PGD for
/// the inner max and a weight search for the sup, so the result is a lower
/// estimate. With `ε = 0` this is bit-for-bit [`mc_standard_rc`].
pub fn mc_adversarial_rc(class: &HypothesisClass, data: &Dataset, trials: usize, seed: u64) -> Result<RademacherEstimate> {
    if class.attack.is_none() {
        return Err(invalid("adversarial estimate needs a perturbation set"));
    }
    estimate(class, data, trials, seed, true)
}

/// Robust (or clean, without a ball) loss at every sample, with the attacked
/// points.
fn robust_points(
    net: &Network,
    loss: &LossSpec,
    data: &Dataset,
    ball: Option<&(BallSpec, AttackConfig)>,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let mut losses = Vec::with_capacity(data.len());
    let mut points = Vec::with_capacity(data.len());
    for (i, s) in data.samples().iter().enumerate() {
        match ball {
            None => {
                losses.push(loss_value(net, &s.x, s.y, loss)?);
                points.push(s.x.clone());
            }
            Some((b, cfg)) => {
                let cfg = AttackConfig {
                    seed: StreamKey::new(cfg.seed).derive("point", i as u64).seed(),
                    ..*cfg
                };
                let res = pgd_attack(net, &s.x, s.y, &b.around(&s.x), loss, &cfg)?;
                losses.push(res.loss);
                points.push(res.x_adv);
            }
        }
    }
    Ok((losses, points))
}

fn frobenius_cap(w: &mut Matrix, cap: f64) {
    let f = w.frobenius_norm();
    if f > cap {
        let s = cap / f;
        w.as_mut_slice().iter_mut().for_each(|v| *v *= s);
    }
}

/// Heuristic `sup_W Σ σ_i h̃_W(x_i, y_i)`: starts from the capped template and
/// from random capped networks, then ascends `Σ σ_i (−margin_i)` at the
/// attacked points (the ramp loss is flat almost everywhere, the margin is
/// not). Every iterate is scored with the actual (robust) loss and the best
/// score is kept.
#[allow(clippy::too_many_arguments)]
fn network_sup(
    template: &Network,
    caps: &[f64],
    loss: &LossSpec,
    search: WeightSearch,
    data: &Dataset,
    sigma: &[f64],
    ball: Option<&(BallSpec, AttackConfig)>,
    key: StreamKey,
) -> Result<f64> {
    let score = |net: &Network| -> Result<(f64, Vec<Vec<f64>>)> {
        let (losses, pts) = robust_points(net, loss, data, ball)?;
        Ok((losses.iter().zip(sigma).map(|(l, s)| l * s).sum(), pts))
    };
    let mut best = f64::NEG_INFINITY;
    for start in 0..=search.starts {
        let mut ws = template.weights();
        if start > 0 {
            let mut s = key.child("start", start).stream();
            for w in ws.iter_mut() {
                w.as_mut_slice().iter_mut().for_each(|v| *v = s.next_gaussian());
            }
        }
        for (w, &c) in ws.iter_mut().zip(caps) {
            if start > 0 {
                let f = w.frobenius_norm();
                if f > 0.0 {
                    w.as_mut_slice().iter_mut().for_each(|v| *v *= c / f);
                }
            } else {
                frobenius_cap(w, c);
            }
        }
        let mut net = template.with_weights(ws)?;
        for step in 0..=search.steps {
            let (v, pts) = score(&net)?;
            if v > best {
                best = v;
            }
            if step == search.steps {
                break;
            }
            let mut grads: Vec<Matrix> = net
                .weights()
                .iter()
                .map(|w| Matrix::zeros(w.shape().0, w.shape().1))
                .collect();
            for ((x, s), sg) in pts.iter().zip(data.samples()).zip(sigma) {
                let y = s.y;
                let bp = backprop(&net, x, |z| (-margin(z, y), margin_grad(z, y).iter().map(|g| -g).collect()), true)?;
                for (g, gw) in grads.iter_mut().zip(bp.weight_grads.expect("requested")) {
                    for (a, b) in g.as_mut_slice().iter_mut().zip(gw.as_slice()) {
                        *a += sg * b;
                    }
                }
            }
            let mut ws = net.weights();
            for ((w, g), &c) in ws.iter_mut().zip(&grads).zip(caps) {
                let gn = g.frobenius_norm();
                if gn > 0.0 {
                    let h = search.step_size * c / gn;
                    for (a, b) in w.as_mut_slice().iter_mut().zip(g.as_slice()) {
                        *a += h * b;
                    }
                }
                frobenius_cap(w, c);
            }
            net = net.with_weights(ws)?;
        }
    }
    Ok(best)
}
