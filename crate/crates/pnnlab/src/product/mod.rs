//! Product-layer kernels: the quadratic feature-interaction signals that
//! distinguish the product networks from a plain embedding MLP.
//!
//! Every kernel maps looked-up embeddings `f` (`N x M`, one row per field) to
//! a vector `lp` with one entry per first-layer node. Two families exist:
//!
//! * **inner-product** nodes contract a node-specific `N x N` weight matrix
//!   against the Gram matrix of field embeddings;
//! * **outer-product** nodes contract a node-specific `(N*M) x (N*M)`-sized
//!   block structure against outer products `f_i f_j^T`.
//!
//! The naive forms cost `O(N^2)` (inner, after the Gram matrix) and
//! `O(N^2 M^2)` (outer) per node and exist as reference oracles and scaling
//! baselines. The reduced forms — factorized inner weights and superposed
//! outer weights — are the ones the trainable networks use:
//!
//! * rank-K inner: `W_p^n = sum_k theta_k^n (theta_k^n)^T`, giving
//!   `lp_n = sum_k | sum_i theta_{k,i}^n f_i |^2` in `O(K N M)`;
//! * superposed outer: the per-pair blocks collapse onto `f_Sigma W f_Sigma^T`
//!   with `f_Sigma = sum_i f_i`, giving `lp_n = f_Sigma^T W^n f_Sigma` in
//!   `O(N M + M^2)`.

pub mod nets;
pub mod scaling;

use crate::error::{Error, Result};
use crate::numkit::{dot_slices, Mat, Rng};

/// Absolute tolerance when validating that a full matrix is symmetric.
pub const SYMMETRY_TOL: f64 = 1e-12;

// ---------------------------------------------------------------------------
// Packed symmetric matrices
// ---------------------------------------------------------------------------

/// A stack of `count` symmetric `m x m` matrices, each stored as its packed
/// upper triangle (row-major: `(0,0..m), (1,1..m), ...`). The full matrix is
/// never materialized; the packed entries are the trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct PackedSym {
    m: usize,
    /// `count x packed_len(m)`.
    mat: Mat,
}

impl PackedSym {
    pub fn packed_len(m: usize) -> usize {
        m * (m + 1) / 2
    }

    pub fn zeros(count: usize, m: usize) -> PackedSym {
        PackedSym { m, mat: Mat::zeros(count, Self::packed_len(m)) }
    }

    /// Xavier init over the packed storage (its `rows x cols` are the fans).
    pub fn init_xavier(count: usize, m: usize, rng: &mut Rng) -> PackedSym {
        PackedSym { m, mat: crate::models::xavier(count, Self::packed_len(m), rng) }
    }

    /// Wraps an existing `count x packed_len(m)` matrix.
    pub fn from_packed(m: usize, mat: Mat) -> Result<PackedSym> {
        if mat.cols() != Self::packed_len(m) {
            return Err(Error::InvalidArg(format!(
                "packed symmetric storage needs {} columns for m = {m}, got {}",
                Self::packed_len(m),
                mat.cols()
            )));
        }
        Ok(PackedSym { m, mat })
    }

    /// Packs full matrices, rejecting asymmetry beyond [`SYMMETRY_TOL`].
    pub fn from_full_mats(mats: &[Mat]) -> Result<PackedSym> {
        let m = mats
            .first()
            .map(Mat::rows)
            .ok_or_else(|| Error::InvalidArg("need at least one matrix".into()))?;
        let mut out = PackedSym::zeros(mats.len(), m);
        for (n, full) in mats.iter().enumerate() {
            out.set_from_full(n, full)?;
        }
        Ok(out)
    }

    pub fn set_from_full(&mut self, n: usize, full: &Mat) -> Result<()> {
        if full.rows() != self.m || full.cols() != self.m {
            return Err(Error::ShapeMismatch {
                op: "pack symmetric",
                left: (self.m, self.m),
                right: full.shape(),
            });
        }
        check_symmetric(full)?;
        let m = self.m;
        let row = self.mat.row_mut(n);
        let mut idx = 0;
        for a in 0..m {
            for b in a..m {
                row[idx] = full.get(a, b);
                idx += 1;
            }
        }
        Ok(())
    }

    pub fn to_full(&self, n: usize) -> Mat {
        let m = self.m;
        let mut full = Mat::zeros(m, m);
        let row = self.mat.row(n);
        let mut idx = 0;
        for a in 0..m {
            for b in a..m {
                full.set(a, b, row[idx]);
                full.set(b, a, row[idx]);
                idx += 1;
            }
        }
        full
    }

    pub fn count(&self) -> usize {
        self.mat.rows()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn mat(&self) -> &Mat {
        &self.mat
    }

    pub fn mat_mut(&mut self) -> &mut Mat {
        &mut self.mat
    }

    pub fn zeros_like(&self) -> PackedSym {
        PackedSym::zeros(self.count(), self.m)
    }

    /// `v^T W_n v` straight off the packed triangle:
    /// `sum_a w_aa v_a^2 + 2 sum_{a<b} w_ab v_a v_b`.
    pub fn quad_form(&self, n: usize, v: &[f64]) -> f64 {
        debug_assert_eq!(v.len(), self.m);
        let row = self.mat.row(n);
        let mut idx = 0;
        let mut acc = 0.0;
        for a in 0..self.m {
            let va = v[a];
            acc += row[idx] * va * va;
            idx += 1;
            let tail = &row[idx..idx + (self.m - a - 1)];
            let mut off = 0.0;
            for (w, vb) in tail.iter().zip(&v[a + 1..]) {
                off += w * vb;
            }
            acc += 2.0 * va * off;
            idx += self.m - a - 1;
        }
        acc
    }

    /// Accumulates `scale * d(v^T W_n v)/dW_n` into this stack's entry `n`:
    /// `v_a^2` on the diagonal, `2 v_a v_b` off it.
    pub fn accum_quad_grad(&mut self, n: usize, v: &[f64], scale: f64) {
        debug_assert_eq!(v.len(), self.m);
        let m = self.m;
        let row = self.mat.row_mut(n);
        let mut idx = 0;
        for a in 0..m {
            let va = v[a];
            row[idx] += scale * va * va;
            idx += 1;
            for vb in &v[a + 1..] {
                row[idx] += scale * 2.0 * va * vb;
                idx += 1;
            }
        }
    }

    /// `out += scale * W_n v` (symmetric matrix-vector product).
    pub fn accum_matvec(&self, n: usize, v: &[f64], scale: f64, out: &mut [f64]) {
        debug_assert_eq!(v.len(), self.m);
        debug_assert_eq!(out.len(), self.m);
        let row = self.mat.row(n);
        let mut idx = 0;
        for a in 0..self.m {
            out[a] += scale * row[idx] * v[a];
            idx += 1;
            for b in (a + 1)..self.m {
                let w = row[idx];
                out[a] += scale * w * v[b];
                out[b] += scale * w * v[a];
                idx += 1;
            }
        }
    }
}

fn check_symmetric(w: &Mat) -> Result<()> {
    for a in 0..w.rows() {
        for b in (a + 1)..w.cols() {
            if (w.get(a, b) - w.get(b, a)).abs() > SYMMETRY_TOL {
                return Err(Error::InvalidArg(format!(
                    "weight matrix is asymmetric at ({a}, {b}): {} vs {}",
                    w.get(a, b),
                    w.get(b, a)
                )));
            }
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

/// Linear signal: `lz_n = <Wz_n, f>` where row `n` of `wz` is the flattened
/// `N x M` weight tensor of node `n` (same layout as `f.data()`).
pub fn lz_forward(wz: &Mat, f: &Mat) -> Result<Vec<f64>> {
    if wz.cols() != f.rows() * f.cols() {
        return Err(Error::ShapeMismatch {
            op: "lz_forward",
            left: wz.shape(),
            right: f.shape(),
        });
    }
    let mut out = Vec::with_capacity(wz.rows());
    lz_forward_into(wz, f.data(), &mut out);
    Ok(out)
}

/// Allocation-free core of [`lz_forward`] (the scaling harness reuses
/// buffers across timed calls).
pub fn lz_forward_into(wz: &Mat, flat: &[f64], out: &mut Vec<f64>) {
    debug_assert_eq!(wz.cols(), flat.len());
    out.clear();
    for n in 0..wz.rows() {
        out.push(dot_slices(wz.row(n), flat));
    }
}

/// Naive inner-product signal: `lp_n = sum_{i,j} (Wp_n)_{ij} <f_i, f_j>`,
/// the full double sum including the diagonal. Each `wp_full[n]` must be
/// `N x N` and symmetric to [`SYMMETRY_TOL`]. Cost `O(N^2 M)` for the Gram
/// matrix plus `O(N^2)` per node.
pub fn ipnn_lp_naive(wp_full: &[Mat], f: &Mat) -> Result<Vec<f64>> {
    let n_fields = f.rows();
    for w in wp_full {
        if w.shape() != (n_fields, n_fields) {
            return Err(Error::ShapeMismatch {
                op: "ipnn_lp_naive",
                left: w.shape(),
                right: (n_fields, n_fields),
            });
        }
        check_symmetric(w)?;
    }
    let gram = gram_matrix(f);
    Ok(wp_full.iter().map(|w| dot_slices(w.data(), gram.data())).collect())
}

/// `G_{ij} = <f_i, f_j>`.
pub fn gram_matrix(f: &Mat) -> Mat {
    let n = f.rows();
    let mut g = Mat::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = dot_slices(f.row(i), f.row(j));
            g.set(i, j, v);
            g.set(j, i, v);
        }
    }
    g
}

/// Rank-1 factorized inner-product signal: with `Wp_n = theta_n theta_n^T`,
/// `lp_n = | sum_i theta_{n,i} f_i |^2`. `theta` is `D1 x N`. Cost
/// `O(N M)` per node.
pub fn ipnn_lp_factorized(theta: &Mat, f: &Mat) -> Result<Vec<f64>> {
    if theta.cols() != f.rows() {
        return Err(Error::ShapeMismatch {
            op: "ipnn_lp_factorized",
            left: theta.shape(),
            right: f.shape(),
        });
    }
    let m = f.cols();
    let mut out = Vec::with_capacity(theta.rows());
    let mut q = vec![0.0; m];
    for n in 0..theta.rows() {
        let coeffs = theta.row(n);
        q.iter_mut().for_each(|v| *v = 0.0);
        for (i, &c) in coeffs.iter().enumerate() {
            let fi = f.row(i);
            for (qm, fm) in q.iter_mut().zip(fi) {
                *qm += c * fm;
            }
        }
        out.push(q.iter().map(|v| v * v).sum());
    }
    Ok(out)
}

/// Rank-K inner-product signal: `Wp_n = sum_k theta_{n,k} theta_{n,k}^T`,
/// so `lp_n = sum_k | sum_i theta_{n,k,i} f_i |^2`. `theta` is
/// `D1 x (K * N)`; row `n` stores `K` coefficient groups back to back, i.e.
/// index `k * N + i`. Cost `O(K N M)` per node.
pub fn ipnn_lp_korder(theta: &Mat, k_order: usize, f: &Mat) -> Result<Vec<f64>> {
    let n_fields = f.rows();
    if k_order == 0 {
        return Err(Error::InvalidArg("k_order must be at least 1".into()));
    }
    if theta.cols() != k_order * n_fields {
        return Err(Error::ShapeMismatch {
            op: "ipnn_lp_korder",
            left: theta.shape(),
            right: (k_order, n_fields),
        });
    }
    let m = f.cols();
    let mut out = Vec::with_capacity(theta.rows());
    let mut q = vec![0.0; m];
    for n in 0..theta.rows() {
        let row = theta.row(n);
        let mut acc = 0.0;
        for k in 0..k_order {
            let coeffs = &row[k * n_fields..(k + 1) * n_fields];
            q.iter_mut().for_each(|v| *v = 0.0);
            for (i, &c) in coeffs.iter().enumerate() {
                let fi = f.row(i);
                for (qm, fm) in q.iter_mut().zip(fi) {
                    *qm += c * fm;
                }
            }
            acc += q.iter().map(|v| v * v).sum::<f64>();
        }
        out.push(acc);
    }
    Ok(out)
}

/// Naive outer-product signal with fully untied blocks:
/// `lp_n = sum_{i,j} <B_{n,i,j}, f_i f_j^T>` where `blocks[n][i * N + j]` is
/// the `M x M` block for field pair `(i, j)`. Cost `O(N^2 M^2)` per node and
/// `O(D1 N^2 M^2)` memory — test scale only.
pub fn opnn_lp_naive(blocks: &[Vec<Mat>], f: &Mat) -> Result<Vec<f64>> {
    let n_fields = f.rows();
    let m = f.cols();
    let mut out = Vec::with_capacity(blocks.len());
    for per_node in blocks {
        if per_node.len() != n_fields * n_fields {
            return Err(Error::InvalidArg(format!(
                "outer-product node needs {} blocks, got {}",
                n_fields * n_fields,
                per_node.len()
            )));
        }
        let mut acc = 0.0;
        for i in 0..n_fields {
            for j in 0..n_fields {
                let block = &per_node[i * n_fields + j];
                if block.shape() != (m, m) {
                    return Err(Error::ShapeMismatch {
                        op: "opnn_lp_naive",
                        left: block.shape(),
                        right: (m, m),
                    });
                }
                acc += block_outer_contract(block, f.row(i), f.row(j));
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// Naive outer-product signal with one block per node shared by every field
/// pair (weight tying): `lp_n = sum_{i,j} f_i^T W_n f_j`. Identical
/// arithmetic cost to the untied form (`O(N^2 M^2)` per node) with `O(M^2)`
/// memory per node, which is what makes large-`N` scaling runs feasible; the
/// untied form at `N = 256` would need gigabytes of blocks. Equals
/// [`opnn_lp_superposed`] with the same `W_n`.
pub fn opnn_lp_naive_tied(wp_full: &[Mat], f: &Mat) -> Result<Vec<f64>> {
    let n_fields = f.rows();
    let m = f.cols();
    let mut out = Vec::with_capacity(wp_full.len());
    for w in wp_full {
        if w.shape() != (m, m) {
            return Err(Error::ShapeMismatch {
                op: "opnn_lp_naive_tied",
                left: w.shape(),
                right: (m, m),
            });
        }
        check_symmetric(w)?;
        let mut acc = 0.0;
        for i in 0..n_fields {
            for j in 0..n_fields {
                acc += block_outer_contract(w, f.row(i), f.row(j));
            }
        }
        out.push(acc);
    }
    Ok(out)
}

/// `<B, a b^T> = sum_{r,c} B_rc a_r b_c = a^T B b`.
fn block_outer_contract(block: &Mat, a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (r, ar) in a.iter().enumerate() {
        acc += ar * dot_slices(block.row(r), b);
    }
    acc
}

/// Superposed outer-product signal: `lp_n = f_Sigma^T W_n f_Sigma` with
/// `f_Sigma = sum_i f_i`. Cost `O(N M)` once for the field sum plus
/// `O(M^2)` per node, never materializing an `M x M` outer product.
pub fn opnn_lp_superposed(wp: &PackedSym, f: &Mat) -> Result<Vec<f64>> {
    if wp.m() != f.cols() {
        return Err(Error::ShapeMismatch {
            op: "opnn_lp_superposed",
            left: (wp.m(), wp.m()),
            right: f.shape(),
        });
    }
    let fsum = field_sum(f);
    let mut out = Vec::with_capacity(wp.count());
    opnn_lp_superposed_into(wp, &fsum, &mut out);
    Ok(out)
}

/// `f_Sigma = sum_i f_i`, length `M`.
pub fn field_sum(f: &Mat) -> Vec<f64> {
    let mut fsum = vec![0.0; f.cols()];
    for i in 0..f.rows() {
        for (s, v) in fsum.iter_mut().zip(f.row(i)) {
            *s += v;
        }
    }
    fsum
}

/// Allocation-free core of [`opnn_lp_superposed`] given a precomputed field
/// sum.
pub fn opnn_lp_superposed_into(wp: &PackedSym, fsum: &[f64], out: &mut Vec<f64>) {
    out.clear();
    for n in 0..wp.count() {
        out.push(wp.quad_form(n, fsum));
    }
}
