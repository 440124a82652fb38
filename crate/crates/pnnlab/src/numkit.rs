//! Minimal dense numeric kernels shared by every other module.
//!
//! Design rules:
//!
//! * **No external numeric dependency.** Everything here is plain `f64`
//!   loops; matrices are row-major `Vec<f64>` and small enough that cache
//!   behavior, not BLAS, decides performance at the scales this crate runs.
//! * **Deterministic arithmetic.** All reductions accumulate strictly
//!   left-to-right in index order, so a computation repeated on identical
//!   inputs is bitwise identical. Tests and equivalence oracles rely on this.
//! * **Shape errors, not panics.** Public kernels validate operand shapes and
//!   return [`Error::ShapeMismatch`] naming both shapes.
//!
//! The module also hosts the seeded random generator ([`Rng`], SplitMix64)
//! and the central finite-difference gradient checker used as the independent
//! oracle for every hand-derived backward pass in the crate.

use crate::error::{Error, Result};

// ---------------------------------------------------------------------------
// Matrix
// ---------------------------------------------------------------------------

/// Dense row-major `f64` matrix. Vectors are represented as `n x 1` matrices.
///
/// Invariants: `data.len() == rows * cols`; construction and file loading
/// reject non-finite entries, and every kernel in this module maps finite
/// inputs to finite outputs (no division, bounded activations are elsewhere).
#[derive(Clone, Debug, PartialEq)]
pub struct Mat {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Mat {
    /// All-zero matrix.
    pub fn zeros(rows: usize, cols: usize) -> Mat {
        Mat { rows, cols, data: vec![0.0; rows * cols] }
    }

    /// Builds a matrix from row-major data; errors when the length does not
    /// match `rows * cols`.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Mat> {
        if data.len() != rows * cols {
            return Err(Error::InvalidArg(format!(
                "Mat::from_vec: {}x{} needs {} entries, got {}",
                rows,
                cols,
                rows * cols,
                data.len()
            )));
        }
        Ok(Mat { rows, cols, data })
    }

    /// Builds a matrix by evaluating `f(row, col)` at every position.
    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Mat {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Mat { rows, cols, data }
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

    /// Row-major backing slice.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        debug_assert!(i < self.rows && j < self.cols);
        self.data[i * self.cols + j] = v;
    }

    /// Contiguous view of row `i`.
    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        debug_assert!(i < self.rows);
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, i: usize) -> &mut [f64] {
        debug_assert!(i < self.rows);
        &mut self.data[i * self.cols..(i + 1) * self.cols]
    }

    /// Column `j` copied into a fresh vector (rows are contiguous, columns
    /// are strided; embedding lookups use this).
    pub fn col(&self, j: usize) -> Vec<f64> {
        debug_assert!(j < self.cols);
        (0..self.rows).map(|i| self.data[i * self.cols + j]).collect()
    }

    /// True when every entry is finite (no NaN/Inf).
    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Matrix-vector product `self * x` for `x` of shape `cols x 1`.
    pub fn matvec(&self, x: &Mat) -> Result<Mat> {
        if x.rows != self.cols || x.cols != 1 {
            return Err(Error::ShapeMismatch {
                op: "matvec",
                left: self.shape(),
                right: x.shape(),
            });
        }
        let mut out = Mat::zeros(self.rows, 1);
        for i in 0..self.rows {
            let mut acc = 0.0;
            let row = self.row(i);
            for j in 0..self.cols {
                acc += row[j] * x.data[j];
            }
            out.data[i] = acc;
        }
        Ok(out)
    }

    /// Matrix product `self * b`.
    pub fn matmul(&self, b: &Mat) -> Result<Mat> {
        if b.rows != self.cols {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                left: self.shape(),
                right: b.shape(),
            });
        }
        let mut out = Mat::zeros(self.rows, b.cols);
        for i in 0..self.rows {
            for j in 0..b.cols {
                let mut acc = 0.0;
                for k in 0..self.cols {
                    acc += self.data[i * self.cols + k] * b.data[k * b.cols + j];
                }
                out.data[i * b.cols + j] = acc;
            }
        }
        Ok(out)
    }

    /// Transposed copy.
    pub fn transpose(&self) -> Mat {
        let mut out = Mat::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                out.data[j * self.rows + i] = self.data[i * self.cols + j];
            }
        }
        out
    }
}

/// Frobenius inner product of two same-shaped matrices (for `n x 1` operands
/// this is the ordinary dot product).
pub fn dot(a: &Mat, b: &Mat) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::ShapeMismatch { op: "dot", left: a.shape(), right: b.shape() });
    }
    Ok(dot_slices(&a.data, &b.data))
}

/// Left-to-right dot product over raw slices; callers guarantee equal length.
#[inline]
pub(crate) fn dot_slices(a: &[f64], b: &[f64]) -> f64 {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = 0.0;
    for i in 0..a.len() {
        acc += a[i] * b[i];
    }
    acc
}

/// Outer product `u * v^T` of two column vectors (`m x 1`, `n x 1` -> `m x n`).
pub fn outer(u: &Mat, v: &Mat) -> Result<Mat> {
    if u.cols != 1 || v.cols != 1 {
        return Err(Error::ShapeMismatch { op: "outer", left: u.shape(), right: v.shape() });
    }
    let mut out = Mat::zeros(u.rows, v.rows);
    for i in 0..u.rows {
        for j in 0..v.rows {
            out.data[i * v.rows + j] = u.data[i] * v.data[j];
        }
    }
    Ok(out)
}

/// In-place `y += alpha * x` over same-shaped matrices.
pub fn axpy(alpha: f64, x: &Mat, y: &mut Mat) -> Result<()> {
    if x.shape() != y.shape() {
        return Err(Error::ShapeMismatch { op: "axpy", left: x.shape(), right: y.shape() });
    }
    for i in 0..x.data.len() {
        y.data[i] += alpha * x.data[i];
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// `max(0, x)`.
#[inline]
pub fn relu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        0.0
    }
}

/// Numerically stable logistic function: never over/underflows to NaN, stays
/// inside `[0, 1]` for any finite input (including `|x|` up to 700+).
#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Hyperbolic tangent.
#[inline]
pub fn tanh_act(x: f64) -> f64 {
    x.tanh()
}

// ---------------------------------------------------------------------------
// Seeded RNG
// ---------------------------------------------------------------------------

/// Deterministic 64-bit generator (SplitMix64, Steele et al. 2014).
///
/// The only contract the crate relies on is seed-determinism: two instances
/// created with the same seed produce identical draw sequences, forever.
/// SplitMix64 is tiny, passes standard statistical batteries, and keeps this
/// module dependency-free.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rng {
    state: u64,
}

impl Rng {
    pub fn new(seed: u64) -> Rng {
        Rng { state: seed }
    }

    /// Next raw 64-bit draw.
    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in `[0, 1)` with 53 random mantissa bits.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform draw in `[lo, hi)`.
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Bernoulli draw: `true` with probability `p`.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.next_f64() < p
    }

    /// Unbiased-enough index draw in `0..n` (widening-multiply reduction).
    pub fn index(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        ((self.next_u64() as u128 * n as u128) >> 64) as usize
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.index(i + 1);
            xs.swap(i, j);
        }
    }
}

// ---------------------------------------------------------------------------
// Finite differences
// ---------------------------------------------------------------------------

/// Central finite-difference gradient of a scalar function over a matrix of
/// inputs: entry `(i, j)` of the result is
/// `(f(x + eps*e_ij) - f(x - eps*e_ij)) / (2*eps)`.
///
/// This is the independent oracle every analytic backward pass in the crate
/// is checked against. Errors when `f` fails or returns a non-finite value.
pub fn finite_diff_grad(
    mut f: impl FnMut(&Mat) -> Result<f64>,
    at: &Mat,
    eps: f64,
) -> Result<Mat> {
    if !(eps > 0.0) {
        return Err(Error::InvalidArg(format!("finite_diff_grad: eps must be > 0, got {eps}")));
    }
    let mut x = at.clone();
    let mut grad = Mat::zeros(at.rows(), at.cols());
    for idx in 0..x.data.len() {
        let orig = x.data[idx];
        x.data[idx] = orig + eps;
        let fp = f(&x)?;
        x.data[idx] = orig - eps;
        let fm = f(&x)?;
        x.data[idx] = orig;
        if !fp.is_finite() || !fm.is_finite() {
            return Err(Error::NonFinite(format!(
                "finite_diff_grad: f returned {fp} / {fm} at flat index {idx}"
            )));
        }
        grad.data[idx] = (fp - fm) / (2.0 * eps);
    }
    Ok(grad)
}
