//! Maurey sparsification, uniform covers of `{WX : ‖W‖_1 ≤ a}`, and the
//! covering-number bounds built from them.
//!
//! A cover element is an integer composition over the signed basis
//! `{±e_i e_jᵀ}` plus one zero pseudo-element that absorbs unused mass. The
//! candidate set depends only on `(a, k, m, d)`, never on the data `X`; a
//! witness for a particular `(W, X)` is found by randomized rounding and a
//! greedy pass.

use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::linalg::{entrywise_p_norm, Exponent, Matrix};
use crate::par;
use crate::rng::{Stream, StreamKey};

/// Parameters `(a, b, ε, d, m)`: `W` is `m × d` with `‖W‖_1 ≤ a`, `X` is
/// `d × n` with `‖X‖_F ≤ b`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct UniformCoverSpec {
    pub a: f64,
    pub b: f64,
    pub eps: f64,
    pub d: usize,
    pub m: usize,
}

impl UniformCoverSpec {
    pub fn new(a: f64, b: f64, eps: f64, d: usize, m: usize) -> Result<Self> {
        for (name, v) in [("a", a), ("b", b), ("eps", eps)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(invalid(format!("cover parameter {name} must be positive, got {v}")));
            }
        }
        if d == 0 || m == 0 {
            return Err(invalid("cover dimensions must be positive"));
        }
        Ok(UniformCoverSpec { a, b, eps, d, m })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverParams {
    /// `⌈a²b²/ε²⌉`, computed exactly.
    pub k: u64,
    /// `k · ln(2dm)`.
    pub ln_cardinality_bound: f64,
}

fn exact(v: f64) -> BigRational {
    BigRational::from_float(v).expect("finite value")
}

/// `⌈(ab/ε)²⌉` in exact rational arithmetic on the given floats.
pub fn ceil_sq_ratio(a: f64, b: f64, eps: f64) -> Result<u64> {
    if !(a.is_finite() && b.is_finite() && eps > 0.0 && eps.is_finite()) {
        return Err(invalid("cover size needs finite a, b and positive eps"));
    }
    let ab = exact(a) * exact(b);
    let e = exact(eps);
    let q = (&ab * &ab) / (&e * &e);
    q.ceil()
        .to_integer()
        .to_u64()
        .ok_or_else(|| invalid("cover size k does not fit in 64 bits"))
}

pub fn maurey_cover_params(spec: &UniformCoverSpec) -> Result<CoverParams> {
    let k = ceil_sq_ratio(spec.a, spec.b, spec.eps)?.max(1);
    Ok(CoverParams {
        k,
        ln_cardinality_bound: k as f64 * (2.0 * spec.d as f64 * spec.m as f64).ln(),
    })
}

/// One signed basis matrix `sign · e_row e_colᵀ`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct MaureyBasisIndex {
    pub row: usize,
    pub col: usize,
    pub sign: i8,
}

/// Indexing of the `2md` signed basis matrices. Index `t` has entry
/// `((t/2) / d, (t/2) % d)` and sign `+` when `t` is even; index `2md` is the
/// zero pseudo-element.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct MaureyBasis {
    pub m: usize,
    pub d: usize,
}

impl MaureyBasis {
    pub fn len(&self) -> usize {
        2 * self.m * self.d
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn zero_index(&self) -> usize {
        self.len()
    }

    pub fn get(&self, t: usize) -> Option<MaureyBasisIndex> {
        (t < self.len()).then(|| MaureyBasisIndex {
            row: (t / 2) / self.d,
            col: (t / 2) % self.d,
            sign: if t.is_multiple_of(2) { 1 } else { -1 },
        })
    }

    pub fn position(&self, row: usize, col: usize, sign: i8) -> usize {
        2 * (row * self.d + col) + usize::from(sign < 0)
    }
}

/// `(a/k) Σ_t k_t V_t` with `Σ_t k_t = k`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaureyCoverElement {
    pub m: usize,
    pub d: usize,
    pub a: f64,
    pub k: u64,
    /// One count per basis index, the last for the zero pseudo-element.
    pub counts: Vec<u64>,
}

impl MaureyCoverElement {
    pub fn zero(m: usize, d: usize, a: f64, k: u64) -> Self {
        let mut counts = vec![0; 2 * m * d + 1];
        counts[2 * m * d] = k;
        MaureyCoverElement { m, d, a, k, counts }
    }

    pub fn basis(&self) -> MaureyBasis {
        MaureyBasis { m: self.m, d: self.d }
    }

    pub fn realize(&self) -> Matrix {
        let scale = if self.k == 0 { 0.0 } else { self.a / self.k as f64 };
        Matrix::from_fn(self.m, self.d, |i, j| {
            let plus = self.counts[2 * (i * self.d + j)] as f64;
            let minus = self.counts[2 * (i * self.d + j) + 1] as f64;
            scale * (plus - minus)
        })
    }

    /// Integer form of `‖element‖_1 ≤ a`: `Σ_ij |k⁺_ij − k⁻_ij| ≤ k`.
    pub fn l1_within_budget(&self) -> bool {
        let total: u64 = self.counts.iter().sum();
        let net: u64 = self
            .counts
            .chunks(2)
            .take(self.m * self.d)
            .map(|c| c[0].abs_diff(c[1]))
            .sum();
        total == self.k && net <= self.k
    }
}

/// Outcome of [`maurey_round`].
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MaureyRound {
    pub element: MaureyCoverElement,
    /// `‖WX − element·X‖_F`.
    pub residual: f64,
    pub sampled_residuals: Vec<f64>,
    pub greedy_residual: f64,
    /// `‖WX‖_F`, the residual of the zero element.
    pub zero_residual: f64,
}

fn residual(w: &Matrix, e: &Matrix, x: &Matrix) -> Result<f64> {
    Ok(w.sub(e)?.matmul(x)?.frobenius_norm())
}

fn check_round_args(w: &Matrix, x: &Matrix, a: f64, k: u64) -> Result<()> {
    if w.cols() != x.rows() {
        return Err(Error::DimensionMismatch {
            context: "W columns vs X rows",
            expected: w.cols(),
            actual: x.rows(),
        });
    }
    if k == 0 {
        return Err(invalid("k must be >= 1"));
    }
    if !(a >= 0.0 && a.is_finite()) {
        return Err(invalid("budget a must be finite and >= 0"));
    }
    if a > 0.0 && entrywise_p_norm(w, Exponent::ONE) > a * (1.0 + 1e-12) {
        return Err(invalid(format!(
            "||W||_1 = {} exceeds the budget a = {a}",
            entrywise_p_norm(w, Exponent::ONE)
        )));
    }
    Ok(())
}

/// Sampling weights `|W_ij|` on the matching signed index, with the rest of
/// the budget on the zero pseudo-element.
fn sampling_weights(w: &Matrix, a: f64) -> Vec<f64> {
    let basis = MaureyBasis { m: w.rows(), d: w.cols() };
    let mut p = vec![0.0; basis.len() + 1];
    let mut used = 0.0;
    for i in 0..w.rows() {
        for j in 0..w.cols() {
            let v = w.get(i, j);
            if v != 0.0 {
                p[basis.position(i, j, if v > 0.0 { 1 } else { -1 })] = v.abs();
                used += v.abs();
            }
        }
    }
    p[basis.zero_index()] = (a - used).max(0.0);
    p
}

fn sample_element(w: &Matrix, a: f64, k: u64, dist: &WeightedIndex<f64>, s: &mut Stream) -> MaureyCoverElement {
    let mut e = MaureyCoverElement::zero(w.rows(), w.cols(), a, k);
    e.counts.iter_mut().for_each(|c| *c = 0);
    for _ in 0..k {
        e.counts[dist.sample(s)] += 1;
    }
    e
}

/// One i.i.d. rounding of `W` with `k` draws and its residual.
pub fn single_sample_round(w: &Matrix, x: &Matrix, a: f64, k: u64, key: StreamKey) -> Result<(MaureyCoverElement, f64)> {
    check_round_args(w, x, a, k)?;
    if a == 0.0 {
        let e = MaureyCoverElement::zero(w.rows(), w.cols(), a, k);
        let r = residual(w, &e.realize(), x)?;
        return Ok((e, r));
    }
    let dist = WeightedIndex::new(sampling_weights(w, a)).map_err(|e| invalid(e.to_string()))?;
    let e = sample_element(w, a, k, &dist, &mut key.stream());
    let r = residual(w, &e.realize(), x)?;
    Ok((e, r))
}

/// Greedy pass: at each of `k` steps add the basis element (or the zero
/// element) that most reduces `‖WX − partial·X‖_F`; ties to the lowest index.
fn greedy_element(w: &Matrix, x: &Matrix, a: f64, k: u64) -> Result<MaureyCoverElement> {
    let (m, d) = w.shape();
    let basis = MaureyBasis { m, d };
    let xt = x.transpose();
    let gram = x.matmul(&xt)?;
    // g[i][j] = ⟨R_i, X_j⟩ for the current residual R
    let mut g = w.matmul(x)?.matmul(&xt)?;
    let c = a / k as f64;
    let mut e = MaureyCoverElement::zero(m, d, a, k);
    e.counts.iter_mut().for_each(|v| *v = 0);
    for _ in 0..k {
        let mut best = (0.0, basis.zero_index());
        let mut found = false;
        for t in 0..basis.len() {
            let b = basis.get(t).expect("in range");
            let sg = b.sign as f64;
            let change = -2.0 * c * sg * g.get(b.row, b.col) + c * c * gram.get(b.col, b.col);
            if !found || change < best.0 {
                best = (change, t);
                found = true;
            }
        }
        if best.0 > 0.0 {
            best.1 = basis.zero_index();
        }
        e.counts[best.1] += 1;
        if let Some(b) = basis.get(best.1) {
            let sg = b.sign as f64;
            for l in 0..d {
                let v = g.get(b.row, l) - c * sg * gram.get(b.col, l);
                g.set(b.row, l, v);
            }
        }
    }
    Ok(e)
}

/// Search for a cover element close to `W` on data `X`: `restarts` i.i.d.
/// roundings, one greedy pass, and the zero element as fallback. The best
/// residual wins; ties go to the earliest candidate in that order.
pub fn maurey_round(w: &Matrix, x: &Matrix, a: f64, k: u64, restarts: usize, key: StreamKey) -> Result<MaureyRound> {
    check_round_args(w, x, a, k)?;
    let zero = MaureyCoverElement::zero(w.rows(), w.cols(), a, k);
    let zero_residual = w.matmul(x)?.frobenius_norm();
    if a == 0.0 {
        return Ok(MaureyRound {
            element: zero,
            residual: zero_residual,
            sampled_residuals: vec![],
            greedy_residual: zero_residual,
            zero_residual,
        });
    }
    let dist = WeightedIndex::new(sampling_weights(w, a)).map_err(|e| invalid(e.to_string()))?;
    let mut best: Option<(MaureyCoverElement, f64)> = None;
    let mut sampled_residuals = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let e = sample_element(w, a, k, &dist, &mut key.child("restart", r).stream());
        let res = residual(w, &e.realize(), x)?;
        sampled_residuals.push(res);
        if best.as_ref().is_none_or(|(_, b)| res < *b) {
            best = Some((e, res));
        }
    }
    let greedy = greedy_element(w, x, a, k)?;
    let greedy_residual = residual(w, &greedy.realize(), x)?;
    for (e, res) in [(greedy, greedy_residual), (zero, zero_residual)] {
        if best.as_ref().is_none_or(|(_, b)| res < *b) {
            best = Some((e, res));
        }
    }
    let (element, residual) = best.expect("at least one candidate");
    Ok(MaureyRound {
        element,
        residual,
        sampled_residuals,
        greedy_residual,
        zero_residual,
    })
}

/// Exact `E‖WX − ÊX‖_F²` for one i.i.d. rounding with `k` draws:
/// `(a Σ_ij |W_ij| ‖X_j‖² − ‖WX‖_F²) / k`, with `X_j` the rows of `X`.
pub fn maurey_expected_sq_residual(w: &Matrix, x: &Matrix, a: f64, k: u64) -> Result<f64> {
    check_round_args(w, x, a, k)?;
    let row_sq: Vec<f64> = (0..x.rows()).map(|j| x.row(j).iter().map(|v| v * v).sum()).collect();
    let mut weighted = 0.0;
    for i in 0..w.rows() {
        for (j, rs) in row_sq.iter().enumerate() {
            weighted += w.get(i, j).abs() * rs;
        }
    }
    let u = w.matmul(x)?.frobenius_norm();
    Ok(((a * weighted - u * u) / k as f64).max(0.0))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CoverVerifyConfig {
    pub samples: usize,
    pub restarts: usize,
    /// Number of columns `n` of each sampled `X`.
    pub data_cols: usize,
    pub seed: u64,
}

impl CoverVerifyConfig {
    pub fn new(samples: usize, restarts: usize, seed: u64) -> Self {
        CoverVerifyConfig {
            samples,
            restarts,
            data_cols: 4,
            seed,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverVerifyReport {
    pub spec: UniformCoverSpec,
    pub config: CoverVerifyConfig,
    pub k: u64,
    pub ln_cardinality_bound: f64,
    pub samples: usize,
    pub boundary_samples: usize,
    pub successes: usize,
    pub violations: usize,
    pub success_rate: f64,
    pub worst_residual: f64,
    /// Mean of `‖WX − ÊX‖²` for one i.i.d. rounding per sample.
    pub mean_sq_single_residual: f64,
    pub stderr_sq_single_residual: f64,
    /// Mean of the exact per-sample expectation of the same quantity.
    pub mean_expected_sq_residual: f64,
    /// `a²b²/k`.
    pub expectation_bound: f64,
    /// `mean_sq_single_residual ≤ expectation_bound + 3·stderr`.
    pub expectation_check_passed: bool,
}

fn scale_to(m: &mut Matrix, current: f64, target: f64) {
    if current > 0.0 {
        let c = target / current;
        m.as_mut_slice().iter_mut().for_each(|v| *v *= c);
    }
}

/// Draw `(W, X)` for sample `s`. Even samples sit on the boundary
/// `‖W‖_1 = a`, `‖X‖_F = b`; every third sample has a sparse `W`.
pub fn draw_cover_instance(spec: &UniformCoverSpec, n: usize, s: usize, key: StreamKey) -> (Matrix, Matrix) {
    let mut st = key.stream();
    let boundary = s.is_multiple_of(2);
    let mut w = Matrix::from_fn(spec.m, spec.d, |_, _| st.next_gaussian());
    if s.is_multiple_of(3) {
        let keep = st.next_below(spec.m * spec.d);
        for (idx, v) in w.as_mut_slice().iter_mut().enumerate() {
            if idx != keep && st.next_uniform() < 0.5 {
                *v = 0.0;
            }
        }
    }
    let mut x = Matrix::from_fn(spec.d, n, |_, _| st.next_gaussian());
    let (ta, tb) = if boundary {
        (spec.a, spec.b)
    } else {
        (spec.a * (1.0 - st.next_uniform()), spec.b * (1.0 - st.next_uniform()))
    };
    let l1 = entrywise_p_norm(&w, Exponent::ONE);
    scale_to(&mut w, l1, ta);
    // rounding can leave ‖W‖_1 a few ulps above the target
    while entrywise_p_norm(&w, Exponent::ONE) > ta {
        w.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
    let fro = x.frobenius_norm();
    scale_to(&mut x, fro, tb);
    while x.frobenius_norm() > tb {
        x.as_mut_slice().iter_mut().for_each(|v| *v *= 1.0 - f64::EPSILON);
    }
    (w, x)
}

/// Sample `(W, X)` pairs within `spec` and check that a cover element
/// within `ε` is found for each, with `k` from [`maurey_cover_params`].
pub fn uniform_cover_verify(spec: &UniformCoverSpec, cfg: &CoverVerifyConfig) -> Result<CoverVerifyReport> {
    if cfg.samples == 0 || cfg.restarts == 0 || cfg.data_cols == 0 {
        return Err(invalid("cover verification needs samples, restarts and data columns >= 1"));
    }
    let params = maurey_cover_params(spec)?;
    let k = params.k;
    let root = StreamKey::new(cfg.seed);
    let rows = par::try_map_indexed(cfg.samples, |s| -> Result<(f64, f64, f64)> {
        let key = root.child("sample", s);
        let (w, x) = draw_cover_instance(spec, cfg.data_cols, s, key.derive("instance", 0));
        let round = maurey_round(&w, &x, spec.a, k, cfg.restarts, key.derive("round", 0))?;
        let (_, single) = single_sample_round(&w, &x, spec.a, k, key.derive("single", 0))?;
        let expected = maurey_expected_sq_residual(&w, &x, spec.a, k)?;
        Ok((round.residual, single * single, expected))
    })?;
    let n = rows.len() as f64;
    let successes = rows.iter().filter(|r| r.0 <= spec.eps).count();
    let worst = rows.iter().map(|r| r.0).fold(0.0, f64::max);
    let mean_sq = rows.iter().map(|r| r.1).sum::<f64>() / n;
    let var = if rows.len() > 1 {
        rows.iter().map(|r| (r.1 - mean_sq).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    let stderr = (var / n).sqrt();
    let bound = spec.a * spec.a * spec.b * spec.b / k as f64;
    Ok(CoverVerifyReport {
        spec: *spec,
        config: *cfg,
        k,
        ln_cardinality_bound: params.ln_cardinality_bound,
        samples: cfg.samples,
        boundary_samples: cfg.samples.div_ceil(2),
        successes,
        violations: cfg.samples - successes,
        success_rate: successes as f64 / n,
        worst_residual: worst,
        mean_sq_single_residual: mean_sq,
        stderr_sq_single_residual: stderr,
        mean_expected_sq_residual: rows.iter().map(|r| r.2).sum::<f64>() / n,
        expectation_bound: bound,
        expectation_check_passed: mean_sq <= bound + 3.0 * stderr,
    })
}

/// `⌈a²b²m^{2/r}/ε²⌉ · ln(2dm)`. For `r = ∞` the ceiling is exact.
pub fn standard_cover_bound(a: f64, b: f64, eps: f64, d: usize, m: usize, r: Exponent) -> Result<f64> {
    UniformCoverSpec::new(a, b, eps, d, m)?;
    let k = if r.is_infinite() {
        ceil_sq_ratio(a, b, eps)? as f64
    } else {
        (a * a * b * b * (m as f64).powf(2.0 * r.recip()) / (eps * eps)).ceil()
    };
    Ok(k * (2.0 * d as f64 * m as f64).ln())
}

/// Per-layer norms feeding the adversarial cover bound.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CoverProfile {
    /// Spectral bounds `s_i`.
    pub s: Vec<f64>,
    /// Entrywise ℓ1 bounds `a_i`.
    pub a: Vec<f64>,
    /// Activation Lipschitz constants `ρ_i`.
    pub rho: Vec<f64>,
    /// `m_0 = d, m_1, …, m_L`.
    pub widths: Vec<usize>,
    /// Loss Lipschitz constant `ρ`.
    pub loss_rho: f64,
}

impl CoverProfile {
    pub fn depth(&self) -> usize {
        self.s.len()
    }

    pub fn validate(&self) -> Result<()> {
        let l = self.s.len();
        if l == 0 || self.a.len() != l || self.rho.len() != l || self.widths.len() != l + 1 {
            return Err(invalid("cover profile needs L spectral, l1 and Lipschitz values and L+1 widths"));
        }
        if self.s.iter().chain(&self.rho).any(|&v| !(v > 0.0 && v.is_finite())) {
            return Err(invalid("spectral bounds and Lipschitz constants must be positive"));
        }
        if self.a.iter().any(|&v| !(v >= 0.0 && v.is_finite())) {
            return Err(invalid("l1 bounds must be finite and >= 0"));
        }
        if !(self.loss_rho > 0.0 && self.loss_rho.is_finite()) || self.widths.contains(&0) {
            return Err(invalid("loss Lipschitz constant and widths must be positive"));
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        self.a
            .iter()
            .zip(&self.s)
            .map(|(a, s)| (a / s).powf(2.0 / 3.0))
            .collect()
    }

    /// `Π_{j ∈ range} ρ_j s_j` (0-based layer indices).
    fn chain(&self, range: std::ops::Range<usize>) -> f64 {
        range.map(|j| self.rho[j] * self.s[j]).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpsilonAllocation {
    /// `ε_i = ε w_i / (ρ ρ_i Π_{j>i} ρ_j s_j · Σ_j w_j)`, `w_i = (a_i/s_i)^{2/3}`.
    /// These satisfy `ρ Σ_i ε_i ρ_i Π_{l>i} ρ_l s_l = ε`.
    pub eps: Vec<f64>,
    /// Same with the product over `j < i` instead of `j > i`.
    pub eps_prefix_product: Vec<f64>,
}

pub fn epsilon_allocation(profile: &CoverProfile, eps: f64) -> Result<EpsilonAllocation> {
    profile.validate()?;
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps must be positive"));
    }
    let w = profile.weights();
    let total: f64 = w.iter().sum();
    if total == 0.0 {
        return Err(Error::DegenerateNetwork);
    }
    let l = profile.depth();
    let rho = profile.loss_rho;
    let alloc = |i: usize, tail: f64| eps * w[i] / (rho * profile.rho[i] * tail * total);
    Ok(EpsilonAllocation {
        eps: (0..l).map(|i| alloc(i, profile.chain(i + 1..l))).collect(),
        eps_prefix_product: (0..l).map(|i| alloc(i, profile.chain(0..i))).collect(),
    })
}

/// `ρ Σ_i ε_i ρ_i Π_{l>i} ρ_l c_l`, the final cover distance for per-layer
/// radii `ε_i` and operator bounds `c_l`.
pub fn composed_cover_radius(eps_i: &[f64], rho: &[f64], c: &[f64], loss_rho: f64) -> f64 {
    let l = eps_i.len();
    loss_rho
        * (0..l)
            .map(|i| eps_i[i] * rho[i] * (i + 1..l).map(|j| rho[j] * c[j]).product::<f64>())
            .sum::<f64>()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LayerCoverTerm {
    pub eps_i: f64,
    /// `b_{i-1} = b Π_{j<i} ρ_j s_j`.
    pub input_norm: f64,
    /// `a_i² b_{i-1}² / ε_i²` (0 when `a_i = 0`).
    pub unceiled_k: f64,
    pub k: f64,
    /// `ln(2 m_i m_{i-1})`.
    pub ln_factor: f64,
    pub term: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AdversarialCoverBound {
    pub eps: f64,
    pub data_norm: f64,
    pub allocation: EpsilonAllocation,
    pub layers: Vec<LayerCoverTerm>,
    /// `Σ_i ⌈a_i² b_{i-1}²/ε_i²⌉ ln(2 m_i m_{i-1})`.
    pub assembled: f64,
    /// Same sum without ceilings.
    pub unceiled: f64,
    /// `Σ_i ln(2 m_i m_{i-1})`, the most the ceilings can add.
    pub ceiling_slack: f64,
    /// `b² ρ² (Π ρ_i s_i)² (Σ w_i)³ ln(2m̄²) / ε²`: the per-layer sum in
    /// closed form, with every `ln(2 m_i m_{i-1})` replaced by `ln(2m̄²)`.
    pub closed_form: f64,
    /// `b² ρ ln(2m̄²) (Π ρ_i s_i) (Σ w_i)^{3/2} / ε²`.
    pub closed_form_printed: f64,
    pub printed_over_assembled: f64,
    /// Set when the printed closed form is smaller than the assembled sum.
    pub printed_below_assembled: bool,
}

/// Covering-number bound for the adversarial loss class, assembled layer by
/// layer. `data_norm` bounds the Frobenius norm of the perturbed data matrix
/// (`B̃ √n` for `n` points with `‖x′‖_2 ≤ B̃`).
pub fn adversarial_cover_bound(profile: &CoverProfile, data_norm: f64, eps: f64) -> Result<AdversarialCoverBound> {
    if !(data_norm > 0.0 && data_norm.is_finite()) {
        return Err(invalid("data norm must be positive"));
    }
    let allocation = epsilon_allocation(profile, eps)?;
    let l = profile.depth();
    let layers: Vec<LayerCoverTerm> = (0..l)
        .map(|i| {
            let input_norm = data_norm * profile.chain(0..i);
            let eps_i = allocation.eps[i];
            let unceiled_k = if profile.a[i] == 0.0 {
                0.0
            } else {
                let r = profile.a[i] * input_norm / eps_i;
                r * r
            };
            let k = unceiled_k.ceil();
            let ln_factor = (2.0 * profile.widths[i + 1] as f64 * profile.widths[i] as f64).ln();
            LayerCoverTerm {
                eps_i,
                input_norm,
                unceiled_k,
                k,
                ln_factor,
                term: k * ln_factor,
            }
        })
        .collect();
    let assembled = layers.iter().map(|t| t.term).sum::<f64>();
    let unceiled = layers.iter().map(|t| t.unceiled_k * t.ln_factor).sum();
    let ceiling_slack = layers.iter().map(|t| t.ln_factor).sum();
    let m_bar = *profile.widths.iter().max().expect("non-empty") as f64;
    let ln_bar = (2.0 * m_bar * m_bar).ln();
    let total: f64 = profile.weights().iter().sum();
    let prod = profile.chain(0..l);
    let rho = profile.loss_rho;
    let b2 = data_norm * data_norm;
    let closed_form = b2 * rho * rho * prod * prod * total.powi(3) * ln_bar / (eps * eps);
    let closed_form_printed = b2 * rho * ln_bar * prod * total.powf(1.5) / (eps * eps);
    Ok(AdversarialCoverBound {
        eps,
        data_norm,
        allocation,
        layers,
        assembled,
        unceiled,
        ceiling_slack,
        closed_form,
        closed_form_printed,
        printed_over_assembled: closed_form_printed / assembled,
        printed_below_assembled: closed_form_printed < assembled,
    })
}

/// Norm used by [`brute_force_cover_number`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverNorm {
    Frobenius,
    MaxAbs,
}

pub const BRUTE_FORCE_MAX_POINTS: usize = 5000;

/// Size of a greedy internal ε-cover of a finite set: an upper bound on the
/// optimal internal cover, within a factor `1 + ln|points|`.
pub fn brute_force_cover_number(points: &[Matrix], eps: f64, norm: CoverNorm) -> Result<usize> {
    if points.len() > BRUTE_FORCE_MAX_POINTS {
        return Err(invalid(format!(
            "brute-force cover supports at most {BRUTE_FORCE_MAX_POINTS} points"
        )));
    }
    if !(eps >= 0.0) {
        return Err(invalid("eps must be >= 0"));
    }
    if let Some(first) = points.first() {
        if points.iter().any(|p| p.shape() != first.shape()) {
            return Err(invalid("all points must have the same shape"));
        }
    }
    let n = points.len();
    let balls: Vec<Vec<usize>> = par::map_indexed(n, |i| {
        (0..n)
            .filter(|&j| {
                let diff = points[i].sub(&points[j]).expect("same shape");
                let dist = match norm {
                    CoverNorm::Frobenius => diff.frobenius_norm(),
                    CoverNorm::MaxAbs => diff.max_abs(),
                };
                dist <= eps
            })
            .collect()
    });
    let mut covered = vec![false; n];
    let mut remaining = n;
    let mut count = 0;
    while remaining > 0 {
        let (best, _) = balls
            .iter()
            .enumerate()
            .map(|(i, b)| (i, b.iter().filter(|&&j| !covered[j]).count()))
            .fold((0, 0), |acc, (i, c)| if c > acc.1 { (i, c) } else { acc });
        for &j in &balls[best] {
            if !covered[j] {
                covered[j] = true;
                remaining -= 1;
            }
        }
        count += 1;
    }
    Ok(count)
}

/// Smallest `k` with `k ε² ≥ a²b²` by linear search; test oracle only.
#[cfg(test)]
fn ceil_by_search(a: f64, b: f64, eps: f64) -> u64 {
    use num_bigint::BigInt;
    let target = {
        let ab = exact(a) * exact(b);
        &ab * &ab
    };
    let e2 = exact(eps) * exact(eps);
    let mut k = 0u64;
    while BigRational::from_integer(BigInt::from(k)) * &e2 < target {
        k += 1;
    }
    k
}
