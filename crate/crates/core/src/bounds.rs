//! Generalization-bound calculators: the covering-number bound via Dudley's
//! integral, its constant-free form, and the competitor bounds it is
//! compared against.

use serde::Serialize;

use crate::attack::BallSpec;
use crate::covers::{adversarial_cover_bound, AdversarialCoverBound, CoverProfile};
use crate::error::{invalid, Result};
use crate::linalg::{entrywise_p_norm, group_norm_1_inf, group_norm_2_1, Exponent};
use crate::network::{LipschitzSource, LossSpec, Network};

/// Per-layer norms of a network plus the constants the bounds need.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NormProfile {
    /// Spectral bounds `s_i` (the actual spectral norms when built from a network).
    pub spectral: Vec<f64>,
    /// Entrywise ℓ1 bounds `a_i`.
    pub l1: Vec<f64>,
    pub group_2_1: Vec<f64>,
    pub frobenius: Vec<f64>,
    pub group_1_inf: Vec<f64>,
    /// Activation Lipschitz constants `ρ_i`.
    pub rho: Vec<f64>,
    /// `m_0 = d, m_1, …, m_L = k`.
    pub widths: Vec<usize>,
    pub loss_rho: f64,
    pub loss_rho_source: LipschitzSource,
    pub gamma: Option<f64>,
}

impl NormProfile {
    pub fn from_network(net: &Network, loss: &LossSpec) -> Result<Self> {
        let lip = loss.lipschitz();
        let ws = net.weights();
        Ok(NormProfile {
            spectral: net.spectral_norms()?,
            l1: ws.iter().map(|w| entrywise_p_norm(w, Exponent::ONE)).collect(),
            group_2_1: ws.iter().map(group_norm_2_1).collect(),
            frobenius: ws.iter().map(|w| w.frobenius_norm()).collect(),
            group_1_inf: ws.iter().map(group_norm_1_inf).collect(),
            rho: net.layers().iter().map(|l| l.activation.lipschitz).collect(),
            widths: net.widths(),
            loss_rho: lip.value,
            loss_rho_source: lip.source,
            gamma: loss.gamma(),
        })
    }

    pub fn depth(&self) -> usize {
        self.spectral.len()
    }

    pub fn input_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn cover_profile(&self) -> CoverProfile {
        CoverProfile {
            s: self.spectral.clone(),
            a: self.l1.clone(),
            rho: self.rho.clone(),
            widths: self.widths.clone(),
            loss_rho: self.loss_rho,
        }
    }

    /// `Π ρ_i s_i`.
    pub fn lipschitz_product(&self) -> f64 {
        self.rho.iter().zip(&self.spectral).map(|(r, s)| r * s).product()
    }

    /// `(Σ (a_i/s_i)^{2/3})^{3/2}`.
    pub fn complexity_sum(&self) -> f64 {
        self.l1
            .iter()
            .zip(&self.spectral)
            .map(|(a, s)| (a / s).powf(2.0 / 3.0))
            .sum::<f64>()
            .powf(1.5)
    }

    /// Same profile with every weight matrix scaled by `c`.
    pub fn scaled(&self, c: f64) -> NormProfile {
        let sc = |v: &Vec<f64>| v.iter().map(|x| x * c).collect();
        NormProfile {
            spectral: sc(&self.spectral),
            l1: sc(&self.l1),
            group_2_1: sc(&self.group_2_1),
            frobenius: sc(&self.frobenius),
            group_1_inf: sc(&self.group_1_inf),
            ..self.clone()
        }
    }
}

/// `B + max{1, d^{1/2 − 1/p}} ε`, a bound on `‖x′‖_2` over ℓp balls around
/// points of norm at most `B`.
pub fn b_tilde(b: f64, eps: f64, p: Exponent, d: usize) -> f64 {
    let factor = (d as f64).powf(0.5 - p.recip()).max(1.0);
    b + factor * eps
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DudleyResult {
    /// `min_α 4α/√n + (12/n) ∫_α^{√n} √(ln N(ε)) dε`.
    pub value: f64,
    pub alpha: f64,
    pub integral: f64,
}

/// Number of log-spaced α grid points.
pub const DUDLEY_GRID: usize = 400;
/// Smallest α on the grid, relative to `√n`.
pub const DUDLEY_ALPHA_FLOOR: f64 = 1e-12;

#[allow(clippy::too_many_arguments)]
fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, fa: f64, fm: f64, fb: f64, whole: f64, tol: f64, depth: u32) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (f(lm), f(rm));
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1) + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
}

/// Adaptive Simpson quadrature of `f` on `[a, b]` to absolute tolerance `tol`.
pub fn integrate(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let (fa, fb, fm) = (f(a), f(b), f(0.5 * (a + b)));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 50)
}

/// An entropy function `ε ↦ ln N(ε)` together with a way to integrate its
/// square root.
pub trait Entropy {
    fn ln_cover(&self, eps: f64) -> f64;

    /// `∫_a^b √(ln N(ε)) dε`.
    fn sqrt_integral(&self, a: f64, b: f64) -> f64 {
        let g = |e: f64| self.ln_cover(e).max(0.0).sqrt();
        let scale = g(a).max(g(b)).max(1e-300) * (b - a);
        integrate(&g, a, b, 1e-13 * scale)
    }
}

/// A smooth entropy function given as a closure; integrated by adaptive Simpson.
pub struct SmoothEntropy<F>(pub F);

impl<F: Fn(f64) -> f64> Entropy for SmoothEntropy<F> {
    fn ln_cover(&self, eps: f64) -> f64 {
        (self.0)(eps)
    }
}

/// `ln N(ε) = Σ_i ⌈c_i/ε²⌉ w_i`, the shape of the assembled adversarial
/// cover bound. Integrated exactly between breakpoints `ε = √(c_i/j)` for the
/// largest [`STEP_BREAKPOINT_LIMIT`] or so breakpoints; below those the
/// integrand is replaced by the upper envelope `√(Σ c_i w_i/ε² + Σ w_i)`, so the integral
/// stays an upper bound.
#[derive(Clone, Debug, PartialEq)]
pub struct CeiledInverseSquare {
    pub coeffs: Vec<f64>,
    pub weights: Vec<f64>,
}

pub const STEP_BREAKPOINT_LIMIT: f64 = 1e5;

impl CeiledInverseSquare {
    fn exact(&self, a: f64, b: f64) -> f64 {
        let mut cuts = vec![a, b];
        for &c in &self.coeffs {
            if c <= 0.0 {
                continue;
            }
            let lo = (c / (b * b)).ceil().max(1.0) as u64;
            let hi = (c / (a * a)).floor() as u64;
            for j in lo..=hi {
                let e = (c / j as f64).sqrt();
                if e > a && e < b {
                    cuts.push(e);
                }
            }
        }
        cuts.sort_by(f64::total_cmp);
        cuts.windows(2)
            .map(|w| (w[1] - w[0]) * self.ln_cover(0.5 * (w[0] + w[1])).max(0.0).sqrt())
            .sum()
    }
}

impl Entropy for CeiledInverseSquare {
    fn ln_cover(&self, eps: f64) -> f64 {
        self.coeffs
            .iter()
            .zip(&self.weights)
            .map(|(c, w)| (c / (eps * eps)).ceil() * w)
            .sum()
    }

    fn sqrt_integral(&self, a: f64, b: f64) -> f64 {
        if b <= a {
            return 0.0;
        }
        let total_c: f64 = self.coeffs.iter().sum();
        let max_c = self.coeffs.iter().cloned().fold(0.0, f64::max);
        if total_c <= 0.0 {
            return 0.0;
        }
        // below `cut` breakpoints are too dense to enumerate, or j = c/ε²
        // is no longer exactly representable
        // the cut does not depend on [a, b], so a sweep over many adjacent
        // intervals enumerates at most ~STEP_BREAKPOINT_LIMIT breakpoints in total
        let cut = (total_c / STEP_BREAKPOINT_LIMIT)
            .sqrt()
            .max((max_c / EXACT_J_MAX).sqrt())
            .max(a);
        let k: f64 = self.coeffs.iter().zip(&self.weights).map(|(c, w)| c * w).sum();
        let s: f64 = self.weights.iter().sum();
        let env = |e: f64| (k / (e * e) + s).sqrt();
        let lo_end = cut.min(b);
        let lower = if lo_end > a {
            integrate(&env, a, lo_end, 1e-13 * (env(a) * (lo_end - a)).max(1e-300))
        } else {
            0.0
        };
        if cut >= b {
            lower
        } else {
            lower + self.exact(cut, b)
        }
    }
}

const EXACT_J_MAX: f64 = (1u64 << 50) as f64;

/// Dudley's entropy integral bound, minimized over a log-spaced α grid on
/// `[10⁻¹² √n, √n]` and refined by golden-section search around the best
/// grid point. `ln N` must be nonincreasing.
pub fn dudley_value(entropy: &dyn Entropy, n: usize) -> Result<DudleyResult> {
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let nf = n as f64;
    let top = nf.sqrt();
    let objective = |alpha: f64, integral: f64| 4.0 * alpha / top + 12.0 / nf * integral;
    let lo = DUDLEY_ALPHA_FLOOR * top;
    let alphas: Vec<f64> = (0..DUDLEY_GRID)
        .map(|i| lo * (top / lo).powf(i as f64 / (DUDLEY_GRID - 1) as f64))
        .collect();
    // tail[i] = ∫_{alphas[i]}^{√n} √ln N
    let mut tail = vec![0.0; DUDLEY_GRID];
    for i in (0..DUDLEY_GRID - 1).rev() {
        tail[i] = tail[i + 1] + entropy.sqrt_integral(alphas[i], alphas[i + 1]);
    }
    let mut best = (0, objective(alphas[0], tail[0]));
    for i in 1..DUDLEY_GRID {
        let v = objective(alphas[i], tail[i]);
        if v < best.1 {
            best = (i, v);
        }
    }
    let mut result = DudleyResult {
        value: best.1,
        alpha: alphas[best.0],
        integral: tail[best.0],
    };
    // golden-section refinement on [α_{i−1}, α_{i+1}]
    let left = alphas[best.0.saturating_sub(1)];
    let right_idx = (best.0 + 1).min(DUDLEY_GRID - 1);
    let right = alphas[right_idx];
    let eval = |alpha: f64| {
        let integral = tail[right_idx] + entropy.sqrt_integral(alpha, right);
        (objective(alpha, integral), integral)
    };
    let phi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (left, right);
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (eval(c), eval(d));
    for _ in 0..200 {
        if (b - a) <= 1e-14 * b {
            break;
        }
        if fc.0 < fd.0 {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = eval(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = eval(d);
        }
    }
    for (alpha, (v, integral)) in [(c, fc), (d, fd)] {
        if v < result.value {
            result = DudleyResult { value: v, alpha, integral };
        }
    }
    Ok(result)
}

/// `12√R/n · (1 + ln(n/(3√R)))`: the Dudley bound for `ln N(ε) = R/ε²`,
/// attained at `α = 3√R/√n` (requires `3√R < n`).
pub fn dudley_closed_form_inverse_square(r: f64, n: usize) -> f64 {
    let nf = n as f64;
    12.0 * r.sqrt() / nf * (1.0 + (nf / (3.0 * r.sqrt())).ln())
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MainBound {
    pub b_tilde: f64,
    pub n: usize,
    pub delta: f64,
    /// Frobenius bound `B̃ √n` of the perturbed data matrix.
    pub data_norm: f64,
    pub dudley: DudleyResult,
    /// `2 × dudley`.
    pub rademacher_term: f64,
    /// `3 √(ln(2/δ)/(2n))`.
    pub confidence_term: f64,
    /// Constant-pinned bound: `rademacher_term + confidence_term`.
    pub value: f64,
    /// `B̃ ρ Π ρ_i s_i (Σ (a_i/s_i)^{2/3})^{3/2} / √n + √(ln(1/δ)/n)`, the
    /// expression inside the Õ.
    pub constant_free: f64,
}

/// Robust generalization-gap bound with explicit constants: twice Dudley's
/// integral over the assembled adversarial covering bound plus the
/// concentration term.
pub fn main_bound(profile: &NormProfile, b_tilde: f64, n: usize, delta: f64) -> Result<MainBound> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must lie in (0, 1), got {delta}")));
    }
    if n == 0 {
        return Err(invalid("n must be >= 1"));
    }
    let nf = n as f64;
    let data_norm = b_tilde * nf.sqrt();
    let cover = profile.cover_profile();
    cover.validate()?;
    // every per-layer k_i scales as 1/ε², so the assembled bound is
    // Σ ⌈c_i/ε²⌉ ln(2 m_i m_{i-1}) with c_i read off at ε = 1
    let unit = adversarial_cover_bound(&cover, data_norm, 1.0)?;
    let entropy = CeiledInverseSquare {
        coeffs: unit.layers.iter().map(|t| t.unceiled_k).collect(),
        weights: unit.layers.iter().map(|t| t.ln_factor).collect(),
    };
    let dudley = dudley_value(&entropy, n)?;
    let rademacher_term = 2.0 * dudley.value;
    let confidence_term = 3.0 * ((2.0 / delta).ln() / (2.0 * nf)).sqrt();
    let constant_free = b_tilde * profile.loss_rho * profile.lipschitz_product() * profile.complexity_sum() / nf.sqrt()
        + ((1.0 / delta).ln() / nf).sqrt();
    Ok(MainBound {
        b_tilde,
        n,
        delta,
        data_norm,
        dudley,
        rademacher_term,
        confidence_term,
        value: rademacher_term + confidence_term,
        constant_free,
    })
}

/// `B̃ m √(L max{ln L, 1}) Π ‖W_i‖_σ / √n` with `m` the largest layer width
/// `max(m_1, …, m_L)`. The log floor keeps `L = 1` from collapsing to zero.
pub fn xiao_bound(profile: &NormProfile, b_tilde: f64, n: usize) -> f64 {
    let l = profile.depth() as f64;
    let m = *profile.widths[1..].iter().max().expect("at least one layer") as f64;
    let prod: f64 = profile.spectral.iter().product();
    b_tilde * m * (l * l.ln().max(1.0)).sqrt() * prod / (n as f64).sqrt()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MustafaBound {
    pub term1: f64,
    pub term2: f64,
    pub product: f64,
    /// `Γ = max_i Π_j ‖W_j‖_σ · ‖W_i‖_F m_i / ‖W_i‖_σ`.
    pub gamma_const: f64,
    /// `λ = (2/γ) Π_{i≥2} ‖W_i‖_σ · ‖W_1‖_{1,∞} √m_1`.
    pub lambda: f64,
    pub m_bar: f64,
    pub c1: f64,
    pub c2: f64,
}

/// Weight-space adversarial bound with unspecified constants `C1, C2`.
/// Term 2 is `√ln((C1 B̃ Γ n/γ + C2 m̄) n (6 ε λ n/γ)^d + 1) · ln n`, evaluated
/// in log space.
#[allow(clippy::too_many_arguments)]
pub fn mustafa_bound(
    profile: &NormProfile,
    b_tilde: f64,
    n: usize,
    gamma: f64,
    eps: f64,
    c1: f64,
    c2: f64,
) -> Result<MustafaBound> {
    if !(gamma > 0.0 && c1 > 0.0 && c2 > 0.0) || eps < 0.0 {
        return Err(invalid("mustafa bound needs gamma, C1, C2 > 0 and eps >= 0"));
    }
    let nf = n as f64;
    let l = profile.depth();
    let op = &profile.spectral;
    let prod: f64 = op.iter().product();
    let ratio_sum: f64 = profile
        .group_2_1
        .iter()
        .zip(op)
        .map(|(g, s)| (g / s).powi(2))
        .sum();
    let term1 = b_tilde * l as f64 * prod * ratio_sum.sqrt() / nf.sqrt();
    let gamma_const = (0..l)
        .map(|i| prod * profile.frobenius[i] * profile.widths[i + 1] as f64 / op[i])
        .fold(0.0, f64::max);
    let m_bar = *profile.widths[1..].iter().max().expect("at least one layer") as f64;
    let lambda = 2.0 / gamma * op[1..].iter().product::<f64>() * profile.group_1_inf[0] * (profile.widths[1] as f64).sqrt();
    let d = profile.input_dim() as f64;
    // ln of (C1 B̃ Γ n/γ + C2 m̄) n (6ελn/γ)^d
    let ln_inner = (c1 * b_tilde * gamma_const * nf / gamma + c2 * m_bar).ln() + nf.ln() + d * (6.0 * eps * lambda * nf / gamma).ln();
    // ln(e^x + 1) without overflow
    let ln_total = if ln_inner > 0.0 {
        ln_inner + (-ln_inner).exp().ln_1p()
    } else {
        ln_inner.exp().ln_1p()
    };
    let term2 = ln_total.sqrt() * nf.ln();
    Ok(MustafaBound {
        term1,
        term2,
        product: term1 * term2,
        gamma_const,
        lambda,
        m_bar,
        c1,
        c2,
    })
}

/// Two-layer bound `B̃ ‖W_1‖_σ ‖W_2‖_σ (1 + √(d(m+1))) / √n`, `m = m_1`.
pub fn awasthi_two_layer_bound(profile: &NormProfile, b_tilde: f64, n: usize) -> Result<f64> {
    if profile.depth() != 2 {
        return Err(invalid(format!(
            "the two-layer bound needs L = 2, got L = {}",
            profile.depth()
        )));
    }
    let d = profile.widths[0] as f64;
    let m = profile.widths[1] as f64;
    let a = 1.0 + (d * (m + 1.0)).sqrt();
    Ok(b_tilde * profile.spectral[0] * profile.spectral[1] * a / (n as f64).sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Sandwich {
    pub lower: f64,
    pub upper: f64,
}

/// Bounds on the adversarial Rademacher complexity of
/// `{y⟨w, x⟩ : ‖w‖_r ≤ W}` under ℓp attacks of radius ε:
/// `max{R, εW f/(2√(2n))} ≤ R̃ ≤ R + εW f/(2√n)`, `f = max{d^{1−1/p−1/r}, 1}`.
pub fn linear_sandwich(w_budget: f64, eps: f64, p: Exponent, r: Exponent, d: usize, n: usize, standard_rc: f64) -> Sandwich {
    let factor = (d as f64).powf(1.0 - p.recip() - r.recip()).max(1.0);
    let nf = n as f64;
    let shift = eps * w_budget * factor;
    Sandwich {
        lower: standard_rc.max(shift / (2.0 * (2.0 * nf).sqrt())),
        upper: standard_rc + shift / (2.0 * nf.sqrt()),
    }
}

/// Inputs that are not part of the network.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct BoundInputs {
    /// `max_i ‖x_i‖_2`.
    pub b: f64,
    pub n: usize,
    pub ball: BallSpec,
    pub delta: f64,
    pub c1: f64,
    pub c2: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct NormChain {
    pub group_2_1: f64,
    pub l1: f64,
    /// `√cols · ‖W‖_{2,1}`.
    pub upper: f64,
    pub l1_over_group_2_1: f64,
    pub holds: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    pub b_tilde: f64,
    pub profile: NormProfile,
    pub main: MainBound,
    /// Cover bound at the Dudley-optimal scale.
    pub cover_at_alpha: AdversarialCoverBound,
    pub xiao: f64,
    pub mustafa: Option<MustafaBound>,
    pub awasthi_two_layer: Option<f64>,
    /// For one-layer, two-class networks: the linear sandwich with
    /// `w = W_{1,0} − W_{1,1}`, `r = 2`, `R = B‖w‖_2/√n`.
    pub linear_sandwich: Option<Sandwich>,
    pub ratio_main_over_xiao: f64,
    pub ratio_main_over_mustafa: Option<f64>,
    pub ratio_main_over_awasthi: Option<f64>,
    pub ratio_main_over_sandwich_upper: Option<f64>,
    pub norm_chain: Vec<NormChain>,
}

pub fn bound_report(net: &Network, loss: &LossSpec, inputs: BoundInputs) -> Result<BoundReport> {
    let profile = NormProfile::from_network(net, loss)?;
    let bt = b_tilde(inputs.b, inputs.ball.eps, inputs.ball.p, profile.input_dim());
    let main = main_bound(&profile, bt, inputs.n, inputs.delta)?;
    let cover_at_alpha = adversarial_cover_bound(&profile.cover_profile(), main.data_norm, main.dudley.alpha)?;
    let xiao = xiao_bound(&profile, bt, inputs.n);
    let mustafa = match profile.gamma {
        Some(g) => Some(mustafa_bound(&profile, bt, inputs.n, g, inputs.ball.eps, inputs.c1, inputs.c2)?),
        None => None,
    };
    let awasthi_two_layer = awasthi_two_layer_bound(&profile, bt, inputs.n).ok();
    let linear_sandwich = (profile.depth() == 1 && profile.widths[1] == 2).then(|| {
        let w = &net.layers()[0].weights;
        let diff: Vec<f64> = (0..w.cols()).map(|j| w.get(0, j) - w.get(1, j)).collect();
        let wn = crate::linalg::norm2(&diff);
        let standard = inputs.b * wn / (inputs.n as f64).sqrt();
        linear_sandwich(wn, inputs.ball.eps, inputs.ball.p, Exponent::TWO, profile.input_dim(), inputs.n, standard)
    });
    let norm_chain = profile
        .group_2_1
        .iter()
        .zip(&profile.l1)
        .zip(&profile.widths)
        .map(|((&g, &l1), &cols)| {
            let upper = (cols as f64).sqrt() * g;
            NormChain {
                group_2_1: g,
                l1,
                upper,
                l1_over_group_2_1: if g > 0.0 { l1 / g } else { 1.0 },
                holds: g <= l1 * (1.0 + 1e-12) && l1 <= upper * (1.0 + 1e-12),
            }
        })
        .collect();
    let v = main.value;
    Ok(BoundReport {
        inputs,
        b_tilde: bt,
        cover_at_alpha,
        xiao,
        ratio_main_over_xiao: v / xiao,
        ratio_main_over_mustafa: mustafa.map(|m| v / m.product),
        ratio_main_over_awasthi: awasthi_two_layer.map(|a| v / a),
        ratio_main_over_sandwich_upper: linear_sandwich.map(|s| v / s.upper),
        mustafa,
        awasthi_two_layer,
        linear_sandwich,
        norm_chain,
        profile,
        main,
    })
}
