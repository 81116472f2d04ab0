//! Dense row-major matrices, vector helpers, and the norms used by the bounds.
//!
//! Norms on matrices are entrywise unless the name says otherwise, so
//! `entrywise_p_norm(w, 2)` is the Frobenius norm. Group norms follow the
//! row convention: `‖W‖_{q,s}` is the q-norm of the vector of row s-norms.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

/// Default relative tolerance for [`spectral_norm`].
pub const SPECTRAL_TOL: f64 = 1e-10;
/// Default iteration cap for [`spectral_norm`].
pub const SPECTRAL_MAX_ITERS: usize = 10_000;

/// An exponent `p ∈ [1, ∞]` for ℓp norms.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct Exponent(f64);

impl Exponent {
    pub const ONE: Exponent = Exponent(1.0);
    pub const TWO: Exponent = Exponent(2.0);
    pub const INF: Exponent = Exponent(f64::INFINITY);

    pub fn new(p: f64) -> Result<Self> {
        if p.is_nan() || p < 1.0 {
            return Err(invalid(format!("exponent must be >= 1 or inf, got {p}")));
        }
        Ok(Exponent(p))
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_infinite(self) -> bool {
        self.0.is_infinite()
    }

    /// `1/p`, with `1/∞ = 0`.
    pub fn recip(self) -> f64 {
        if self.is_infinite() {
            0.0
        } else {
            1.0 / self.0
        }
    }

    /// Conjugate exponent `q` with `1/p + 1/q = 1`.
    pub fn dual(self) -> Exponent {
        dual_exponent(self)
    }

    /// Errors unless `p ∈ {2, ∞}`.
    pub fn require_two_or_inf(self) -> Result<Self> {
        if self.is_infinite() || self.0 == 2.0 {
            Ok(self)
        } else {
            Err(Error::UnsupportedExponent(self.0))
        }
    }
}

/// Conjugate exponent: dual(1) = ∞, dual(∞) = 1, dual(p) = p/(p−1).
pub fn dual_exponent(p: Exponent) -> Exponent {
    if p.is_infinite() {
        Exponent::ONE
    } else if p.0 == 1.0 {
        Exponent::INF
    } else {
        Exponent(p.0 / (p.0 - 1.0))
    }
}

impl fmt::Display for Exponent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_infinite() {
            f.write_str("inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl FromStr for Exponent {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Exponent::INF),
            other => {
                let p: f64 = other
                    .parse()
                    .map_err(|_| invalid(format!("cannot parse exponent {s:?}")))?;
                Exponent::new(p)
            }
        }
    }
}

impl Serialize for Exponent {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        if self.is_infinite() {
            s.serialize_str("inf")
        } else {
            s.serialize_f64(self.0)
        }
    }
}

impl<'de> Deserialize<'de> for Exponent {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        let parsed = match Raw::deserialize(d)? {
            Raw::Num(p) => Exponent::new(p),
            Raw::Str(s) => s.parse(),
        };
        parsed.map_err(serde::de::Error::custom)
    }
}

/// Dense real matrix, row-major, all entries finite. Serializes as a list
/// of rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(invalid("matrix dimensions must be positive"));
        }
        if data.len() != rows * cols {
            return Err(Error::DimensionMismatch {
                context: "matrix entry count",
                expected: rows * cols,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("matrix entries"));
        }
        Ok(Matrix { rows, cols, data })
    }

    /// Builds a matrix from row vectors; all rows must have equal length.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if let Some(bad) = rows.iter().find(|r| r.len() != cols) {
            return Err(Error::DimensionMismatch {
                context: "row length",
                expected: cols,
                actual: bad.len(),
            });
        }
        Matrix::new(rows.len(), cols, rows.concat())
    }

    /// Builds a matrix whose columns are the given vectors.
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let rows = columns.first().map_or(0, Vec::len);
        if let Some(bad) = columns.iter().find(|c| c.len() != rows) {
            return Err(Error::DimensionMismatch {
                context: "column length",
                expected: rows,
                actual: bad.len(),
            });
        }
        let n = columns.len();
        let mut data = vec![0.0; rows * n];
        for (j, c) in columns.iter().enumerate() {
            for (i, &v) in c.iter().enumerate() {
                data[i * n + j] = v;
            }
        }
        Matrix::new(rows, n, data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        (0..self.rows).map(|i| self.row(i).to_vec()).collect()
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|&v| v == 0.0)
    }

    /// `W x`. Panics if `x.len() != cols`.
    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        assert_eq!(x.len(), self.cols, "mul_vec dimension mismatch");
        (0..self.rows).map(|i| dot(self.row(i), x)).collect()
    }

    /// `Wᵀ y`. Panics if `y.len() != rows`.
    pub fn tr_mul_vec(&self, y: &[f64]) -> Vec<f64> {
        assert_eq!(y.len(), self.rows, "tr_mul_vec dimension mismatch");
        let mut out = vec![0.0; self.cols];
        for (i, &yi) in y.iter().enumerate() {
            if yi != 0.0 {
                axpy(yi, self.row(i), &mut out);
            }
        }
        out
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(Error::DimensionMismatch {
                context: "matmul inner dimension",
                expected: self.cols,
                actual: other.rows,
            });
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for (k, &a) in self.row(i).iter().enumerate() {
                if a != 0.0 {
                    axpy(a, other.row(k), out.row_mut(i));
                }
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, c: f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * c).collect(),
        }
    }

    pub fn sub(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect(),
        })
    }

    pub fn add(&self, other: &Matrix) -> Result<Matrix> {
        self.check_same_shape(other)?;
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect(),
        })
    }

    fn check_same_shape(&self, other: &Matrix) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::DimensionMismatch {
                context: "matrix shapes",
                expected: self.rows * self.cols,
                actual: other.rows * other.cols,
            });
        }
        Ok(())
    }

    pub fn frobenius_norm(&self) -> f64 {
        norm2(&self.data)
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Largest ℓ2 norm of any column; a lower bound on the spectral norm.
    pub fn max_column_norm(&self) -> f64 {
        (0..self.cols)
            .map(|j| norm2(&self.column(j)))
            .fold(0.0, f64::max)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `y += a·x`
#[inline]
pub fn axpy(a: f64, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    debug_assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// ℓp norm of a vector.
pub fn vector_p_norm(x: &[f64], p: Exponent) -> f64 {
    if p.is_infinite() {
        x.iter().fold(0.0, |m, v| m.max(v.abs()))
    } else if p.value() == 1.0 {
        x.iter().map(|v| v.abs()).sum()
    } else if p.value() == 2.0 {
        norm2(x)
    } else {
        let q = p.value();
        x.iter().map(|v| v.abs().powf(q)).sum::<f64>().powf(1.0 / q)
    }
}

/// `(Σ|w_ij|^p)^{1/p}`; p = 2 is Frobenius, p = ∞ is max |w_ij|.
pub fn entrywise_p_norm(w: &Matrix, p: Exponent) -> f64 {
    vector_p_norm(w.as_slice(), p)
}

/// `‖W‖_{2,1} = Σ_rows ‖row‖_2`.
pub fn group_norm_2_1(w: &Matrix) -> f64 {
    (0..w.rows()).map(|i| norm2(w.row(i))).sum()
}

/// `‖W‖_{1,∞} = Σ_rows max_j |w_ij|`.
pub fn group_norm_1_inf(w: &Matrix) -> f64 {
    (0..w.rows())
        .map(|i| w.row(i).iter().fold(0.0_f64, |m, v| m.max(v.abs())))
        .sum()
}

/// Largest singular value by power iteration on `WᵀW`.
///
/// Starts from the normalized all-ones vector. If that start lands outside the
/// top singular space (detected when the converged value falls below the
/// largest column norm, itself a lower bound on σ_max) the iteration is rerun
/// once from a fixed perturbed start and the largest of the two runs and the
/// column-norm floor is returned.
pub fn spectral_norm(w: &Matrix, tol: f64, max_iters: usize) -> Result<f64> {
    if !(tol > 0.0) {
        return Err(invalid("spectral_norm tolerance must be positive"));
    }
    if max_iters == 0 {
        return Err(invalid("spectral_norm needs at least one iteration"));
    }
    if w.is_zero() {
        return Ok(0.0);
    }
    let n = w.cols();
    let ones = vec![1.0 / (n as f64).sqrt(); n];
    let first = power_iterate(w, ones, tol, max_iters)?;
    let floor = w.max_column_norm();
    if first >= floor * (1.0 - 1e-12) {
        return Ok(first);
    }
    // Irrational-ish weights so the second start is not orthogonal to the
    // same subspace as the first.
    let mut start: Vec<f64> = (0..n)
        .map(|j| 1.0 + 0.618_033_988_749_895 * (j as f64 + 1.0).sqrt())
        .collect();
    let s = norm2(&start);
    start.iter_mut().for_each(|v| *v /= s);
    let second = power_iterate(w, start, tol, max_iters)?;
    // Both iterates and the column norm are lower bounds on σ_max.
    Ok(first.max(second).max(floor))
}

/// [`spectral_norm`] with the default tolerance and iteration cap.
pub fn spectral_norm_default(w: &Matrix) -> Result<f64> {
    spectral_norm(w, SPECTRAL_TOL, SPECTRAL_MAX_ITERS)
}

fn power_iterate(w: &Matrix, mut v: Vec<f64>, tol: f64, max_iters: usize) -> Result<f64> {
    let mut sigma = 0.0;
    for iter in 0..max_iters {
        let u = w.mul_vec(&v);
        let next = norm2(&u);
        if next == 0.0 {
            return Ok(0.0);
        }
        if iter > 0 && (next - sigma).abs() <= tol * next {
            return Ok(next);
        }
        sigma = next;
        let mut z = w.tr_mul_vec(&u);
        let zn = norm2(&z);
        if zn == 0.0 {
            return Ok(sigma);
        }
        z.iter_mut().for_each(|c| *c /= zn);
        v = z;
    }
    Err(Error::NotConverged {
        iterations: max_iters,
        last: sigma,
    })
}

/// Euclidean projection of `v` onto `{u : ‖u − center‖_p ≤ eps}` for p ∈ {2, ∞}.
pub fn lp_ball_project(v: &[f64], center: &[f64], p: Exponent, eps: f64) -> Result<Vec<f64>> {
    p.require_two_or_inf()?;
    if !(eps >= 0.0) || !eps.is_finite() {
        return Err(invalid(format!("ball radius must be finite and >= 0, got {eps}")));
    }
    if v.len() != center.len() {
        return Err(Error::DimensionMismatch {
            context: "projection center",
            expected: center.len(),
            actual: v.len(),
        });
    }
    if p.is_infinite() {
        return Ok(v
            .iter()
            .zip(center)
            .map(|(&x, &c)| x.clamp(c - eps, c + eps))
            .collect());
    }
    let diff = sub(v, center);
    let r = norm2(&diff);
    // A few ulps of slack keeps the projection idempotent under rounding.
    if r <= eps * (1.0 + 4.0 * f64::EPSILON) {
        return Ok(v.to_vec());
    }
    let scale = eps / r;
    Ok(center
        .iter()
        .zip(&diff)
        .map(|(&c, &d)| c + d * scale)
        .collect())
}

impl Serialize for Matrix {
    fn serialize<S: Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        let rows: Vec<&[f64]> = (0..self.rows).map(|r| &self.data[r * self.cols..(r + 1) * self.cols]).collect();
        rows.serialize(serializer)
    }
}
