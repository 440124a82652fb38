//! The product networks: parameter structs, forward/backward passes, and the
//! degeneracy constructions that collapse them onto simpler models.
//!
//! All three trainable networks share one first-layer recipe:
//!
//! ```text
//! l1 = act( lz + lp + b1 )        (then dropout, then the MLP head)
//! ```
//!
//! where `lz` is the linear signal and `lp` the product signal. IPNN uses the
//! rank-K inner kernel, OPNN the superposed outer kernel, and PNN* both at
//! once — added into the same `D1` nodes by default, or side by side on
//! `2 * D1` nodes in concatenated mode.

use crate::data::{FieldSchema, SparseSample};
use crate::error::{Error, Result};
use crate::models::linear::FmParams;
use crate::models::fnn::FnnParams;
use crate::models::{
    apply_mask, embed_lookup, xavier, Activation, DenseLayer, DropoutMasks, EmbeddingTable,
    HeadCache, MlpHead,
};
use crate::numkit::{dot_slices, Mat, Rng};
use crate::product::{field_sum, ipnn_lp_naive, lz_forward_into, PackedSym};

// ---------------------------------------------------------------------------
// Shared cache
// ---------------------------------------------------------------------------

/// Cached forward-pass values shared by IPNN, OPNN and PNN*. Vectors that a
/// variant does not use stay empty.
#[derive(Clone, Debug)]
pub struct PnnCache {
    /// `N x M` looked-up embeddings.
    pub f: Mat,
    /// Linear signal, one entry per first-layer node.
    pub lz: Vec<f64>,
    /// Inner-product signal (`D1`; empty for OPNN).
    pub lp_inner: Vec<f64>,
    /// Outer-product signal (`D1`; empty for IPNN).
    pub lp_outer: Vec<f64>,
    /// Inner partial sums `q_{n,k} = sum_i theta_{n,k,i} f_i`, stored as an
    /// `(D1 * K) x M` matrix, row `n * K + k` (empty for OPNN).
    pub q: Mat,
    /// `f_Sigma = sum_i f_i` (empty for IPNN).
    pub fsum: Vec<f64>,
    /// First-layer pre-activation.
    pub pre1: Vec<f64>,
    /// `act(pre1)` before dropout.
    pub unmasked1: Vec<f64>,
    /// First-layer output after dropout.
    pub l1: Vec<f64>,
    pub head: HeadCache,
}

/// Inner-product partial sums and signal: returns `(q, lp)` where row
/// `n * K + k` of `q` is `sum_i theta_{n,k,i} f_i` and
/// `lp_n = sum_k |q_{n,k}|^2`.
fn inner_forward(theta: &Mat, k_order: usize, f: &Mat) -> (Mat, Vec<f64>) {
    let n_fields = f.rows();
    let m = f.cols();
    let d1 = theta.rows();
    let mut q = Mat::zeros(d1 * k_order, m);
    let mut lp = Vec::with_capacity(d1);
    for n in 0..d1 {
        let row = theta.row(n);
        let mut acc = 0.0;
        for k in 0..k_order {
            let coeffs = &row[k * n_fields..(k + 1) * n_fields];
            let qrow = q.row_mut(n * k_order + k);
            for (i, &c) in coeffs.iter().enumerate() {
                let fi = f.row(i);
                for (qm, fm) in qrow.iter_mut().zip(fi) {
                    *qm += c * fm;
                }
            }
            acc += qrow.iter().map(|v| v * v).sum::<f64>();
        }
        lp.push(acc);
    }
    (q, lp)
}

/// Backward through the inner kernel: given `dlp` (gradient at `lp`),
/// accumulates the theta gradient and adds the embedding contribution to
/// `dflat` (layout matching `f.data()`).
fn inner_backward(
    theta: &Mat,
    k_order: usize,
    f: &Mat,
    q: &Mat,
    dlp: &[f64],
    g_theta: &mut Mat,
    dflat: &mut [f64],
) {
    let n_fields = f.rows();
    let m = f.cols();
    for n in 0..theta.rows() {
        let s = 2.0 * dlp[n];
        if s == 0.0 {
            continue;
        }
        let row = theta.row(n);
        let grow = g_theta.row_mut(n);
        for k in 0..k_order {
            let qrow = q.row(n * k_order + k);
            for i in 0..n_fields {
                // d lp / d theta_{n,k,i} = 2 <q_{n,k}, f_i>
                grow[k * n_fields + i] += s * dot_slices(qrow, f.row(i));
                // d lp / d f_i += 2 theta_{n,k,i} q_{n,k}
                let c = s * row[k * n_fields + i];
                let df = &mut dflat[i * m..(i + 1) * m];
                for (d, qv) in df.iter_mut().zip(qrow) {
                    *d += c * qv;
                }
            }
        }
    }
}

/// Backward through the superposed outer kernel: accumulates the packed
/// weight gradient and the gradient at the field sum (`2 W_n f_Sigma` per
/// node, scaled by `dlp_n`).
fn outer_backward(
    wp: &PackedSym,
    fsum: &[f64],
    dlp: &[f64],
    g_wp: &mut PackedSym,
    dfsum: &mut [f64],
) {
    for n in 0..wp.count() {
        if dlp[n] == 0.0 {
            continue;
        }
        g_wp.accum_quad_grad(n, fsum, dlp[n]);
        wp.accum_matvec(n, fsum, 2.0 * dlp[n], dfsum);
    }
}

/// Shared tail of every forward pass: activation, dropout, head.
fn finish_first_layer(
    pre1: Vec<f64>,
    head: &MlpHead,
    masks: Option<&DropoutMasks>,
) -> (Vec<f64>, Vec<f64>, HeadCache) {
    let act = head.activation;
    let unmasked1: Vec<f64> = pre1.iter().map(|&z| act.apply(z)).collect();
    let l1 = apply_mask(&unmasked1, masks.map(|m| m.l1()));
    let cache = head.forward(&l1, masks.map(|m| m.head()));
    (unmasked1, l1, cache)
}

/// Shared head of every backward pass: head backward, then dropout and the
/// first-layer activation; returns `dpre1`.
fn backprop_to_pre1(
    head: &MlpHead,
    cache: &PnnCache,
    masks: Option<&DropoutMasks>,
    y: u8,
    g_head: &mut MlpHead,
) -> Vec<f64> {
    let mut dl1 = vec![0.0; cache.l1.len()];
    head.backward(
        &cache.l1,
        &cache.head,
        masks.map(|m| m.head()),
        cache.head.yhat - y as f64,
        g_head,
        &mut dl1,
    );
    let act = head.activation;
    let mut dpre1 = dl1;
    if let Some(m) = masks {
        for (d, mm) in dpre1.iter_mut().zip(m.l1()) {
            *d *= mm;
        }
    }
    for (n, d) in dpre1.iter_mut().enumerate() {
        *d *= act.deriv(cache.pre1[n], cache.unmasked1[n]);
    }
    dpre1
}

/// `lz` gradient plus its embedding contribution, shared by all variants:
/// `d wz[n] += dpre1[n] * flat` and `dflat += dpre1[n] * wz[n]`.
fn lz_backward(wz: &Mat, flat: &[f64], dpre1: &[f64], g_wz: &mut Mat, dflat: &mut [f64]) {
    for n in 0..wz.rows() {
        let g = dpre1[n];
        if g == 0.0 {
            continue;
        }
        let gw = g_wz.row_mut(n);
        let wr = wz.row(n);
        for j in 0..flat.len() {
            gw[j] += g * flat[j];
            dflat[j] += g * wr[j];
        }
    }
}

/// Scatter `dflat` into per-field embedding columns.
fn embedding_backward(
    s: &SparseSample,
    m: usize,
    dflat: &[f64],
    g_emb: &mut EmbeddingTable,
) {
    for (i, &c) in s.categories.iter().enumerate() {
        g_emb.accum_col(i, c, &dflat[i * m..(i + 1) * m], 1.0);
    }
}

// ---------------------------------------------------------------------------
// IPNN
// ---------------------------------------------------------------------------

/// Inner-product network with rank-K factorized product weights.
#[derive(Clone, Debug, PartialEq)]
pub struct IpnnParams {
    pub embedding: EmbeddingTable,
    /// `D1 x (N * M)`.
    pub wz: Mat,
    /// `D1 x (K * N)`, row layout `k * N + i` (see `ipnn_lp_korder`).
    pub theta: Mat,
    pub k_order: usize,
    /// `D1 x 1`.
    pub b1: Mat,
    pub head: MlpHead,
}

impl IpnnParams {
    /// Draw order: embedding, `wz`, `theta`, head.
    pub fn init(
        embedding: EmbeddingTable,
        d1: usize,
        d2: usize,
        hidden_layers: usize,
        k_order: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<IpnnParams> {
        if k_order == 0 {
            return Err(Error::InvalidArg("k_order must be at least 1".into()));
        }
        let n = embedding.n_fields();
        let nm = n * embedding.order();
        Ok(IpnnParams {
            embedding,
            wz: xavier(d1, nm, rng),
            theta: xavier(d1, k_order * n, rng),
            k_order,
            b1: Mat::zeros(d1, 1),
            head: MlpHead::init(d1, d2, hidden_layers, activation, rng)?,
        })
    }

    pub fn zeros_like(&self) -> IpnnParams {
        IpnnParams {
            embedding: self.embedding.zeros_like(),
            wz: Mat::zeros(self.wz.rows(), self.wz.cols()),
            theta: Mat::zeros(self.theta.rows(), self.theta.cols()),
            k_order: self.k_order,
            b1: Mat::zeros(self.b1.rows(), 1),
            head: self.head.zeros_like(),
        }
    }

    pub fn d1(&self) -> usize {
        self.wz.rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let mut w = vec![self.d1()];
        w.extend(self.head.hidden_widths());
        w
    }

    pub fn forward(&self, s: &SparseSample, masks: Option<&DropoutMasks>) -> PnnCache {
        let f = embed_lookup(&self.embedding, s);
        let mut lz = Vec::new();
        lz_forward_into(&self.wz, f.data(), &mut lz);
        let (q, lp_inner) = inner_forward(&self.theta, self.k_order, &f);
        let pre1: Vec<f64> = (0..self.d1())
            .map(|n| lz[n] + lp_inner[n] + self.b1.data()[n])
            .collect();
        let (unmasked1, l1, head) = finish_first_layer(pre1.clone(), &self.head, masks);
        PnnCache {
            f,
            lz,
            lp_inner,
            lp_outer: Vec::new(),
            q,
            fsum: Vec::new(),
            pre1,
            unmasked1,
            l1,
            head,
        }
    }

    pub fn predict(&self, s: &SparseSample) -> f64 {
        self.forward(s, None).head.yhat
    }

    pub fn backward(
        &self,
        s: &SparseSample,
        y: u8,
        cache: &PnnCache,
        masks: Option<&DropoutMasks>,
        grads: &mut IpnnParams,
    ) {
        let dpre1 = backprop_to_pre1(&self.head, cache, masks, y, &mut grads.head);
        for (g, d) in grads.b1.data_mut().iter_mut().zip(&dpre1) {
            *g += d;
        }
        let flat = cache.f.data();
        let mut dflat = vec![0.0; flat.len()];
        lz_backward(&self.wz, flat, &dpre1, &mut grads.wz, &mut dflat);
        inner_backward(
            &self.theta,
            self.k_order,
            &cache.f,
            &cache.q,
            &dpre1,
            &mut grads.theta,
            &mut dflat,
        );
        embedding_backward(s, self.embedding.order(), &dflat, &mut grads.embedding);
    }
}

// ---------------------------------------------------------------------------
// OPNN
// ---------------------------------------------------------------------------

/// Outer-product network with superposed (field-summed) product weights.
#[derive(Clone, Debug, PartialEq)]
pub struct OpnnParams {
    pub embedding: EmbeddingTable,
    /// `D1 x (N * M)`.
    pub wz: Mat,
    /// `D1` symmetric `M x M` matrices, packed.
    pub wp: PackedSym,
    /// `D1 x 1`.
    pub b1: Mat,
    pub head: MlpHead,
}

impl OpnnParams {
    /// Draw order: embedding, `wz`, `wp`, head.
    pub fn init(
        embedding: EmbeddingTable,
        d1: usize,
        d2: usize,
        hidden_layers: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<OpnnParams> {
        let nm = embedding.n_fields() * embedding.order();
        let m = embedding.order();
        Ok(OpnnParams {
            embedding,
            wz: xavier(d1, nm, rng),
            wp: PackedSym::init_xavier(d1, m, rng),
            b1: Mat::zeros(d1, 1),
            head: MlpHead::init(d1, d2, hidden_layers, activation, rng)?,
        })
    }

    pub fn zeros_like(&self) -> OpnnParams {
        OpnnParams {
            embedding: self.embedding.zeros_like(),
            wz: Mat::zeros(self.wz.rows(), self.wz.cols()),
            wp: self.wp.zeros_like(),
            b1: Mat::zeros(self.b1.rows(), 1),
            head: self.head.zeros_like(),
        }
    }

    pub fn d1(&self) -> usize {
        self.wz.rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let mut w = vec![self.d1()];
        w.extend(self.head.hidden_widths());
        w
    }

    pub fn forward(&self, s: &SparseSample, masks: Option<&DropoutMasks>) -> PnnCache {
        let f = embed_lookup(&self.embedding, s);
        let mut lz = Vec::new();
        lz_forward_into(&self.wz, f.data(), &mut lz);
        let fsum = field_sum(&f);
        let lp_outer: Vec<f64> =
            (0..self.d1()).map(|n| self.wp.quad_form(n, &fsum)).collect();
        let pre1: Vec<f64> = (0..self.d1())
            .map(|n| lz[n] + lp_outer[n] + self.b1.data()[n])
            .collect();
        let (unmasked1, l1, head) = finish_first_layer(pre1.clone(), &self.head, masks);
        PnnCache {
            f,
            lz,
            lp_inner: Vec::new(),
            lp_outer,
            q: Mat::zeros(0, 0),
            fsum,
            pre1,
            unmasked1,
            l1,
            head,
        }
    }

    pub fn predict(&self, s: &SparseSample) -> f64 {
        self.forward(s, None).head.yhat
    }

    pub fn backward(
        &self,
        s: &SparseSample,
        y: u8,
        cache: &PnnCache,
        masks: Option<&DropoutMasks>,
        grads: &mut OpnnParams,
    ) {
        let dpre1 = backprop_to_pre1(&self.head, cache, masks, y, &mut grads.head);
        for (g, d) in grads.b1.data_mut().iter_mut().zip(&dpre1) {
            *g += d;
        }
        let flat = cache.f.data();
        let mut dflat = vec![0.0; flat.len()];
        lz_backward(&self.wz, flat, &dpre1, &mut grads.wz, &mut dflat);
        let m = self.embedding.order();
        let mut dfsum = vec![0.0; m];
        outer_backward(&self.wp, &cache.fsum, &dpre1, &mut grads.wp, &mut dfsum);
        // Every field contributes identically to the field sum.
        for i in 0..cache.f.rows() {
            let df = &mut dflat[i * m..(i + 1) * m];
            for (d, v) in df.iter_mut().zip(&dfsum) {
                *d += v;
            }
        }
        embedding_backward(s, m, &dflat, &mut grads.embedding);
    }
}

// ---------------------------------------------------------------------------
// PNN*
// ---------------------------------------------------------------------------

/// Combined network carrying both product signals. By default the inner and
/// outer signals are added into the same `D1` first-layer nodes; in
/// concatenated mode the first layer doubles to `2 * D1` nodes, the first
/// `D1` receiving the inner signal and the rest the outer signal (each node
/// keeps its own `wz` row and bias).
#[derive(Clone, Debug, PartialEq)]
pub struct PnnStarParams {
    pub embedding: EmbeddingTable,
    /// `width x (N * M)` where `width = D1` (additive) or `2 * D1` (concat).
    pub wz: Mat,
    /// `D1 x (K * N)`.
    pub theta: Mat,
    pub k_order: usize,
    /// `D1` packed symmetric `M x M` matrices.
    pub wp: PackedSym,
    /// `width x 1`.
    pub b1: Mat,
    pub head: MlpHead,
    pub concat: bool,
}

impl PnnStarParams {
    /// Draw order: embedding, `wz`, `theta`, `wp`, head.
    #[allow(clippy::too_many_arguments)]
    pub fn init(
        embedding: EmbeddingTable,
        d1: usize,
        d2: usize,
        hidden_layers: usize,
        k_order: usize,
        activation: Activation,
        concat: bool,
        rng: &mut Rng,
    ) -> Result<PnnStarParams> {
        if k_order == 0 {
            return Err(Error::InvalidArg("k_order must be at least 1".into()));
        }
        let n = embedding.n_fields();
        let m = embedding.order();
        let nm = n * m;
        let width = if concat { 2 * d1 } else { d1 };
        Ok(PnnStarParams {
            embedding,
            wz: xavier(width, nm, rng),
            theta: xavier(d1, k_order * n, rng),
            k_order,
            wp: PackedSym::init_xavier(d1, m, rng),
            b1: Mat::zeros(width, 1),
            head: MlpHead::init(width, d2, hidden_layers, activation, rng)?,
        concat,
        })
    }

    pub fn zeros_like(&self) -> PnnStarParams {
        PnnStarParams {
            embedding: self.embedding.zeros_like(),
            wz: Mat::zeros(self.wz.rows(), self.wz.cols()),
            theta: Mat::zeros(self.theta.rows(), self.theta.cols()),
            k_order: self.k_order,
            wp: self.wp.zeros_like(),
            b1: Mat::zeros(self.b1.rows(), 1),
            head: self.head.zeros_like(),
            concat: self.concat,
        }
    }

    /// Node count of the product signals (not the first-layer width).
    pub fn d1(&self) -> usize {
        self.theta.rows()
    }

    /// First-layer width: `D1`, or `2 * D1` in concatenated mode.
    pub fn width(&self) -> usize {
        self.wz.rows()
    }

    pub fn hidden_widths(&self) -> Vec<usize> {
        let mut w = vec![self.width()];
        w.extend(self.head.hidden_widths());
        w
    }

    pub fn forward(&self, s: &SparseSample, masks: Option<&DropoutMasks>) -> PnnCache {
        let f = embed_lookup(&self.embedding, s);
        let mut lz = Vec::new();
        lz_forward_into(&self.wz, f.data(), &mut lz);
        let (q, lp_inner) = inner_forward(&self.theta, self.k_order, &f);
        let fsum = field_sum(&f);
        let d1 = self.d1();
        let lp_outer: Vec<f64> = (0..d1).map(|n| self.wp.quad_form(n, &fsum)).collect();
        let b1 = self.b1.data();
        let pre1: Vec<f64> = if self.concat {
            (0..2 * d1)
                .map(|n| {
                    let lp = if n < d1 { lp_inner[n] } else { lp_outer[n - d1] };
                    lz[n] + lp + b1[n]
                })
                .collect()
        } else {
            (0..d1).map(|n| lz[n] + lp_inner[n] + lp_outer[n] + b1[n]).collect()
        };
        let (unmasked1, l1, head) = finish_first_layer(pre1.clone(), &self.head, masks);
        PnnCache { f, lz, lp_inner, lp_outer, q, fsum, pre1, unmasked1, l1, head }
    }

    pub fn predict(&self, s: &SparseSample) -> f64 {
        self.forward(s, None).head.yhat
    }

    pub fn backward(
        &self,
        s: &SparseSample,
        y: u8,
        cache: &PnnCache,
        masks: Option<&DropoutMasks>,
        grads: &mut PnnStarParams,
    ) {
        let dpre1 = backprop_to_pre1(&self.head, cache, masks, y, &mut grads.head);
        for (g, d) in grads.b1.data_mut().iter_mut().zip(&dpre1) {
            *g += d;
        }
        let flat = cache.f.data();
        let mut dflat = vec![0.0; flat.len()];
        lz_backward(&self.wz, flat, &dpre1, &mut grads.wz, &mut dflat);
        let d1 = self.d1();
        // Gradient reaching each product signal.
        let (dlp_inner, dlp_outer): (Vec<f64>, Vec<f64>) = if self.concat {
            (dpre1[..d1].to_vec(), dpre1[d1..].to_vec())
        } else {
            (dpre1.clone(), dpre1)
        };
        inner_backward(
            &self.theta,
            self.k_order,
            &cache.f,
            &cache.q,
            &dlp_inner,
            &mut grads.theta,
            &mut dflat,
        );
        let m = self.embedding.order();
        let mut dfsum = vec![0.0; m];
        outer_backward(&self.wp, &cache.fsum, &dlp_outer, &mut grads.wp, &mut dfsum);
        for i in 0..cache.f.rows() {
            let df = &mut dflat[i * m..(i + 1) * m];
            for (d, v) in df.iter_mut().zip(&dfsum) {
                *d += v;
            }
        }
        embedding_backward(s, m, &dflat, &mut grads.embedding);
    }
}

// ---------------------------------------------------------------------------
// Naive reference network
// ---------------------------------------------------------------------------

/// Forward-only inner-product network with explicit `N x N` product weight
/// matrices — the unreduced form. Used as an equivalence oracle (notably the
/// factorization-machine degeneracy) and for scaling comparisons; it has no
/// backward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct NaivePnnParams {
    pub embedding: EmbeddingTable,
    /// `D1 x (N * M)`.
    pub wz: Mat,
    /// `D1` symmetric `N x N` matrices.
    pub wp_full: Vec<Mat>,
    /// `D1 x 1`.
    pub b1: Mat,
    pub head: MlpHead,
}

impl NaivePnnParams {
    pub fn predict(&self, s: &SparseSample) -> Result<f64> {
        let f = embed_lookup(&self.embedding, s);
        let mut lz = Vec::new();
        lz_forward_into(&self.wz, f.data(), &mut lz);
        let lp = ipnn_lp_naive(&self.wp_full, &f)?;
        let pre1: Vec<f64> = (0..self.wz.rows())
            .map(|n| lz[n] + lp[n] + self.b1.data()[n])
            .collect();
        let (_, l1, head) = finish_first_layer(pre1, &self.head, None);
        let _ = l1;
        Ok(head.yhat)
    }
}

// ---------------------------------------------------------------------------
// Degeneracy constructions
// ---------------------------------------------------------------------------

/// Drops the product path of an IPNN: the result is the embedding MLP with
/// `w1 = wz`. If the source network's `theta` is zero, both models compute
/// identical predictions (the product signal contributes exactly `0.0`).
pub fn degeneracy_fnn(p: &IpnnParams) -> FnnParams {
    FnnParams {
        embedding: p.embedding.clone(),
        w1: p.wz.clone(),
        b1: p.b1.clone(),
        head: p.head.clone(),
    }
}

/// Embeds a factorization machine exactly into a naive inner-product network
/// with a single first-layer node, identity activation, and a pass-through
/// head.
///
/// The construction augments each field's embedding from order `M` to
/// `M + total_dim`: the first `M` rows carry the FM latent vector of the
/// active category and the remaining rows carry the category's global
/// one-hot indicator. Because different fields occupy disjoint one-hot
/// dimensions, indicator blocks never meet in a cross-field inner product,
/// so for `i != j` the augmented embeddings satisfy
/// `<f~_i, f~_j> = <v_i, v_j>` exactly. The node's product weight matrix is
/// `1/2` off the diagonal and `0` on it, which under the full double sum
/// reproduces `sum_{i<j} <v_i, v_j>`; the linear weights ride on the
/// indicator rows of `wz`, and `b1` carries the intercept.
pub fn degeneracy_fm(fm: &FmParams, schema: &FieldSchema) -> Result<NaivePnnParams> {
    if fm.w.rows() != schema.total_dim() {
        return Err(Error::SchemaMismatch(format!(
            "factorization machine has {} rows, schema one-hot dimension is {}",
            fm.w.rows(),
            schema.total_dim()
        )));
    }
    let n = schema.n_fields();
    let m = fm.order();
    let d = schema.total_dim();
    let aug = m + d;

    let mut tables = Vec::with_capacity(n);
    for i in 0..n {
        let card = schema.field(i).cardinality();
        let mut t = Mat::zeros(aug, card);
        for c in 0..card {
            let dim = schema.offset(i) + c;
            for (r, v) in fm.v.row(dim).iter().enumerate() {
                t.set(r, c, *v);
            }
            t.set(m + dim, c, 1.0);
        }
        tables.push(t);
    }
    let embedding = EmbeddingTable::from_mats(tables)?;

    // wz row 0: linear weight of category c of field i sits at the
    // position of that category's indicator row in the flattened layout.
    let mut wz = Mat::zeros(1, n * aug);
    for i in 0..n {
        for c in 0..schema.field(i).cardinality() {
            let dim = schema.offset(i) + c;
            wz.set(0, i * aug + m + dim, fm.w.data()[dim]);
        }
    }

    let mut wp = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i != j {
                wp.set(i, j, 0.5);
            }
        }
    }

    let mut b1 = Mat::zeros(1, 1);
    b1.data_mut()[0] = fm.w0.data()[0];

    let head = MlpHead {
        hidden: Vec::new(),
        out: DenseLayer {
            w: Mat::from_vec(1, 1, vec![1.0])?,
            b: Mat::zeros(1, 1),
        },
        activation: Activation::Identity,
    };

    Ok(NaivePnnParams { embedding, wz, wp_full: vec![wp], b1, head })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numkit::finite_diff_grad;

    fn schema() -> FieldSchema {
        FieldSchema::numeric(&[("a", 3), ("b", 4), ("c", 2), ("d", 3)]).unwrap()
    }

    fn log_loss_raw(y: u8, yhat: f64) -> f64 {
        let p = yhat.clamp(1e-12, 1.0 - 1e-12);
        if y == 1 {
            -p.ln()
        } else {
            -(1.0 - p).ln()
        }
    }

    /// Rescales every parameter to U(-0.5, 0.5) so finite differences are
    /// well conditioned (default embedding init is +-0.01).
    fn rescale_ipnn(p: &mut IpnnParams, rng: &mut Rng) {
        for i in 0..p.embedding.n_fields() {
            for v in p.embedding.field_mut(i).data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
        for v in p.b1.data_mut() {
            *v = rng.uniform(-0.5, 0.5);
        }
    }

    #[test]
    fn ipnn_forward_matches_kernel_composition() {
        let schema = schema();
        let mut rng = Rng::new(5);
        let emb = EmbeddingTable::init(&schema, 3, &mut rng);
        let p = IpnnParams::init(emb, 4, 3, 2, 2, Activation::Relu, &mut rng).unwrap();
        let s = SparseSample::new(1, vec![2, 0, 1, 2]);
        let cache = p.forward(&s, None);
        let f = embed_lookup(&p.embedding, &s);
        let lp = crate::product::ipnn_lp_korder(&p.theta, 2, &f).unwrap();
        for n in 0..4 {
            assert!((cache.lp_inner[n] - lp[n]).abs() <= 1e-12);
            let want = cache.lz[n] + lp[n] + p.b1.data()[n];
            assert!((cache.pre1[n] - want).abs() <= 1e-12);
        }
    }

    #[test]
    fn ipnn_gradients_match_finite_differences() {
        let schema = schema();
        let mut rng = Rng::new(105);
        let emb = EmbeddingTable::init(&schema, 3, &mut rng);
        let mut p = IpnnParams::init(emb, 4, 3, 3, 2, Activation::Tanh, &mut rng).unwrap();
        rescale_ipnn(&mut p, &mut rng);
        let s = SparseSample::new(1, vec![0, 3, 1, 2]);
        let cache = p.forward(&s, None);
        let mut g = p.zeros_like();
        p.backward(&s, 1, &cache, None, &mut g);

        let fd_theta = finite_diff_grad(
            |m| {
                let mut q = p.clone();
                q.theta = m.clone();
                Ok(log_loss_raw(1, q.predict(&s)))
            },
            &p.theta,
            1e-6,
        )
        .unwrap();
        for (a, n) in g.theta.data().iter().zip(fd_theta.data()) {
            assert!(
                (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6),
                "theta: analytic {a} vs fd {n}"
            );
        }

        let t0 = p.embedding.field(0).clone();
        let fd_emb = finite_diff_grad(
            |m| {
                let mut q = p.clone();
                *q.embedding.field_mut(0) = m.clone();
                Ok(log_loss_raw(1, q.predict(&s)))
            },
            &t0,
            1e-6,
        )
        .unwrap();
        for (a, n) in g.embedding.field(0).data().iter().zip(fd_emb.data()) {
            assert!(
                (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6),
                "embedding: analytic {a} vs fd {n}"
            );
        }
    }

    #[test]
    fn opnn_gradients_match_finite_differences() {
        let schema = schema();
        let mut rng = Rng::new(203);
        let emb = EmbeddingTable::init(&schema, 3, &mut rng);
        let mut p = OpnnParams::init(emb, 4, 3, 3, Activation::Sigmoid, &mut rng).unwrap();
        for i in 0..p.embedding.n_fields() {
            for v in p.embedding.field_mut(i).data_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
        let s = SparseSample::new(0, vec![1, 2, 0, 0]);
        let cache = p.forward(&s, None);
        let mut g = p.zeros_like();
        p.backward(&s, 0, &cache, None, &mut g);

        let wp_mat = p.wp.mat().clone();
        let fd_wp = finite_diff_grad(
            |m| {
                let mut q = p.clone();
                *q.wp.mat_mut() = m.clone();
                Ok(log_loss_raw(0, q.predict(&s)))
            },
            &wp_mat,
            1e-6,
        )
        .unwrap();
        for (a, n) in g.wp.mat().data().iter().zip(fd_wp.data()) {
            assert!(
                (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6),
                "wp: analytic {a} vs fd {n}"
            );
        }

        let t2 = p.embedding.field(2).clone();
        let fd_emb = finite_diff_grad(
            |m| {
                let mut q = p.clone();
                *q.embedding.field_mut(2) = m.clone();
                Ok(log_loss_raw(0, q.predict(&s)))
            },
            &t2,
            1e-6,
        )
        .unwrap();
        for (a, n) in g.embedding.field(2).data().iter().zip(fd_emb.data()) {
            assert!(
                (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6),
                "embedding: analytic {a} vs fd {n}"
            );
        }
    }

    #[test]
    fn pnn_star_additive_and_concat_widths() {
        let schema = schema();
        let mut rng = Rng::new(301);
        let emb = EmbeddingTable::init(&schema, 3, &mut rng);
        let add = PnnStarParams::init(
            emb.clone(),
            4,
            3,
            3,
            1,
            Activation::Relu,
            false,
            &mut rng,
        )
        .unwrap();
        assert_eq!(add.width(), 4);
        assert_eq!(add.head.input_dim(), 4);
        let cat =
            PnnStarParams::init(emb, 4, 3, 3, 1, Activation::Relu, true, &mut rng).unwrap();
        assert_eq!(cat.width(), 8);
        assert_eq!(cat.head.input_dim(), 8);
        let s = SparseSample::new(1, vec![0, 0, 1, 2]);
        // Additive: pre1 = lz + lp_inner + lp_outer + b1 on D1 nodes.
        let c = add.forward(&s, None);
        for n in 0..4 {
            let want = c.lz[n] + c.lp_inner[n] + c.lp_outer[n] + add.b1.data()[n];
            assert!((c.pre1[n] - want).abs() <= 1e-12);
        }
        // Concat: first D1 nodes inner, next D1 outer.
        let c = cat.forward(&s, None);
        for n in 0..4 {
            let want_in = c.lz[n] + c.lp_inner[n] + cat.b1.data()[n];
            let want_out = c.lz[4 + n] + c.lp_outer[n] + cat.b1.data()[4 + n];
            assert!((c.pre1[n] - want_in).abs() <= 1e-12);
            assert!((c.pre1[4 + n] - want_out).abs() <= 1e-12);
        }
    }

    #[test]
    fn pnn_star_gradients_match_finite_differences_both_modes() {
        let schema = schema();
        for concat in [false, true] {
            let mut rng = Rng::new(407);
            let emb = EmbeddingTable::init(&schema, 3, &mut rng);
            let mut p = PnnStarParams::init(
                emb,
                3,
                3,
                3,
                2,
                Activation::Tanh,
                concat,
                &mut rng,
            )
            .unwrap();
            for i in 0..p.embedding.n_fields() {
                for v in p.embedding.field_mut(i).data_mut() {
                    *v = rng.uniform(-0.5, 0.5);
                }
            }
            let s = SparseSample::new(1, vec![2, 1, 1, 0]);
            let cache = p.forward(&s, None);
            let mut g = p.zeros_like();
            p.backward(&s, 1, &cache, None, &mut g);

            for (name, get, set) in [
                (
                    "theta",
                    Box::new(|q: &PnnStarParams| q.theta.clone()) as Box<dyn Fn(&PnnStarParams) -> Mat>,
                    Box::new(|q: &mut PnnStarParams, m: &Mat| q.theta = m.clone())
                        as Box<dyn Fn(&mut PnnStarParams, &Mat)>,
                ),
                (
                    "wp",
                    Box::new(|q: &PnnStarParams| q.wp.mat().clone()),
                    Box::new(|q: &mut PnnStarParams, m: &Mat| *q.wp.mat_mut() = m.clone()),
                ),
                (
                    "wz",
                    Box::new(|q: &PnnStarParams| q.wz.clone()),
                    Box::new(|q: &mut PnnStarParams, m: &Mat| q.wz = m.clone()),
                ),
            ] {
                let at = get(&p);
                let fd = finite_diff_grad(
                    |m| {
                        let mut q = p.clone();
                        set(&mut q, m);
                        Ok(log_loss_raw(1, q.predict(&s)))
                    },
                    &at,
                    1e-6,
                )
                .unwrap();
                let analytic = match name {
                    "theta" => g.theta.data(),
                    "wp" => g.wp.mat().data(),
                    _ => g.wz.data(),
                };
                for (a, n) in analytic.iter().zip(fd.data()) {
                    assert!(
                        (a - n).abs() <= 1e-4 * a.abs().max(n.abs()).max(1e-6),
                        "concat {concat} {name}: analytic {a} vs fd {n}"
                    );
                }
            }
        }
    }

    /// IPNN with zeroed product weights predicts exactly like the projected
    /// embedding MLP.
    #[test]
    fn fnn_degeneracy_is_exact() {
        let schema = schema();
        let mut rng = Rng::new(501);
        let emb = EmbeddingTable::init(&schema, 4, &mut rng);
        let mut p = IpnnParams::init(emb, 6, 4, 3, 1, Activation::Relu, &mut rng).unwrap();
        for v in p.theta.data_mut() {
            *v = 0.0;
        }
        let fnn = degeneracy_fnn(&p);
        let mut rng = Rng::new(999);
        for _ in 0..50 {
            let s = SparseSample::new(
                0,
                vec![rng.index(3), rng.index(4), rng.index(2), rng.index(3)],
            );
            let a = p.predict(&s);
            let b = fnn.predict(&s);
            assert!((a - b).abs() <= 1e-12, "ipnn {a} vs fnn {b}");
        }
    }

    /// The augmented-embedding construction reproduces FM predictions
    /// exactly through the naive product network.
    #[test]
    fn fm_degeneracy_is_exact() {
        let schema = schema();
        let mut rng = Rng::new(601);
        let mut fm = FmParams::init(&schema, 3, &mut rng);
        // Use full-scale values; degeneracy must hold for any parameters.
        for v in fm.v.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        for v in fm.w.data_mut() {
            *v = rng.uniform(-1.0, 1.0);
        }
        fm.w0.data_mut()[0] = rng.uniform(-1.0, 1.0);
        let net = degeneracy_fm(&fm, &schema).unwrap();
        for _ in 0..100 {
            let s = SparseSample::new(
                1,
                vec![rng.index(3), rng.index(4), rng.index(2), rng.index(3)],
            );
            let a = fm.forward(&s).0;
            let b = net.predict(&s).unwrap();
            assert!((a - b).abs() <= 1e-12, "fm {a} vs naive pnn {b}");
        }
    }

    /// Dropout on l1 silences the corresponding product-weight gradients.
    #[test]
    fn masked_first_layer_node_gets_no_product_gradient() {
        let schema = schema();
        let mut rng = Rng::new(701);
        let emb = EmbeddingTable::init(&schema, 3, &mut rng);
        let p = IpnnParams::init(emb, 4, 3, 2, 1, Activation::Relu, &mut rng).unwrap();
        let s = SparseSample::new(1, vec![1, 1, 1, 1]);
        let mut masks = DropoutMasks { masks: vec![vec![2.0; 4], vec![1.0; 3]] };
        masks.masks[0][1] = 0.0;
        let cache = p.forward(&s, Some(&masks));
        let mut g = p.zeros_like();
        p.backward(&s, 1, &cache, Some(&masks), &mut g);
        assert!(g.theta.row(1).iter().all(|v| *v == 0.0));
        assert!(g.wz.row(1).iter().all(|v| *v == 0.0));
        assert_eq!(g.b1.get(1, 0), 0.0);
    }
}
