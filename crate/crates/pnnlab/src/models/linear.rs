//! Linear baselines over one-hot encoded fields: logistic regression and the
//! second-order factorization machine.
//!
//! Both models address weights through the schema's global one-hot layout:
//! field `i` with active category `c` touches dimension `offset_i + c`. The
//! offsets are captured from the schema at construction so prediction needs
//! only the sample.

use crate::data::{FieldSchema, SparseSample};
use crate::error::{Error, Result};
use crate::models::{embedding_init, xavier, EmbeddingTable};
use crate::numkit::{sigmoid, Mat, Rng};

/// Logistic regression: `yhat = sigmoid(bias + sum_i w[d_i])` over the active
/// one-hot dimensions `d_i`.
#[derive(Clone, Debug, PartialEq)]
pub struct LrParams {
    /// 1 x 1.
    pub bias: Mat,
    /// `total_dim x 1`.
    pub w: Mat,
    offsets: Vec<usize>,
}

impl LrParams {
    pub fn init(schema: &FieldSchema, rng: &mut Rng) -> LrParams {
        LrParams {
            bias: Mat::zeros(1, 1),
            w: xavier(schema.total_dim(), 1, rng),
            offsets: schema.offsets().to_vec(),
        }
    }

    pub fn zeros_like(&self) -> LrParams {
        LrParams {
            bias: Mat::zeros(1, 1),
            w: Mat::zeros(self.w.rows(), 1),
            offsets: self.offsets.clone(),
        }
    }

    /// Rebuilds the offset table (used when loading a checkpoint, whose
    /// blocks carry only genuine parameters).
    pub fn attach_schema(&mut self, schema: &FieldSchema) -> Result<()> {
        if schema.total_dim() != self.w.rows() {
            return Err(Error::SchemaMismatch(format!(
                "linear model has {} weights, schema one-hot dimension is {}",
                self.w.rows(),
                schema.total_dim()
            )));
        }
        self.offsets = schema.offsets().to_vec();
        Ok(())
    }

    pub fn n_fields(&self) -> usize {
        self.offsets.len() - 1
    }

    fn active_dims<'a>(&'a self, s: &'a SparseSample) -> impl Iterator<Item = usize> + 'a {
        s.categories.iter().enumerate().map(|(i, &c)| self.offsets[i] + c)
    }

    pub fn forward(&self, s: &SparseSample) -> f64 {
        let mut z = self.bias.data()[0];
        for d in self.active_dims(s) {
            z += self.w.data()[d];
        }
        sigmoid(z)
    }

    /// Accumulates the log-loss gradient (`delta = yhat - y`) plus the L2
    /// term `2 * lambda * w` on the weights (never the bias) into `grads`.
    pub fn backward(
        &self,
        s: &SparseSample,
        delta: f64,
        lambda: f64,
        grads: &mut LrParams,
    ) {
        grads.bias.data_mut()[0] += delta;
        for d in self.active_dims(s) {
            grads.w.data_mut()[d] += delta;
        }
        if lambda > 0.0 {
            for (g, w) in grads.w.data_mut().iter_mut().zip(self.w.data()) {
                *g += 2.0 * lambda * w;
            }
        }
    }

    /// Sum of squared weights (bias excluded), for the L2 objective term.
    pub fn sq_weight_norm(&self) -> f64 {
        self.w.data().iter().map(|v| v * v).sum()
    }
}

/// Second-order factorization machine:
///
/// `yhat = sigmoid(w0 + sum_i w[d_i] + sum_{i<j} <v[d_i], v[d_j]>)`
///
/// with one latent row `v[d] in R^M` per one-hot dimension. The pairwise sum
/// is computed through the identity
/// `sum_{i<j} <v_i, v_j> = (|sum_i v_i|^2 - sum_i |v_i|^2) / 2`,
/// which costs `O(N * M)` instead of `O(N^2 * M)`.
#[derive(Clone, Debug, PartialEq)]
pub struct FmParams {
    /// 1 x 1.
    pub w0: Mat,
    /// `total_dim x 1`.
    pub w: Mat,
    /// `total_dim x M` latent rows.
    pub v: Mat,
    offsets: Vec<usize>,
}

/// Values cached by the FM forward pass for the backward pass.
#[derive(Clone, Debug)]
pub struct FmCache {
    /// `t = sum_i v[d_i]`, length `M`.
    pub t: Vec<f64>,
}

impl FmParams {
    pub fn init(schema: &FieldSchema, order: usize, rng: &mut Rng) -> FmParams {
        let d = schema.total_dim();
        FmParams {
            w0: Mat::zeros(1, 1),
            w: xavier(d, 1, rng),
            v: embedding_init(d, order, rng),
            offsets: schema.offsets().to_vec(),
        }
    }

    pub fn zeros_like(&self) -> FmParams {
        FmParams {
            w0: Mat::zeros(1, 1),
            w: Mat::zeros(self.w.rows(), 1),
            v: Mat::zeros(self.v.rows(), self.v.cols()),
            offsets: self.offsets.clone(),
        }
    }

    pub fn attach_schema(&mut self, schema: &FieldSchema) -> Result<()> {
        if schema.total_dim() != self.w.rows() {
            return Err(Error::SchemaMismatch(format!(
                "factorization machine has {} weights, schema one-hot dimension is {}",
                self.w.rows(),
                schema.total_dim()
            )));
        }
        self.offsets = schema.offsets().to_vec();
        Ok(())
    }

    pub fn n_fields(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Latent order `M`.
    pub fn order(&self) -> usize {
        self.v.cols()
    }

    fn active_dims<'a>(&'a self, s: &'a SparseSample) -> impl Iterator<Item = usize> + 'a {
        s.categories.iter().enumerate().map(|(i, &c)| self.offsets[i] + c)
    }

    pub fn forward(&self, s: &SparseSample) -> (f64, FmCache) {
        let m = self.order();
        let mut z = self.w0.data()[0];
        let mut t = vec![0.0; m];
        let mut sum_sq = 0.0;
        for d in self.active_dims(s) {
            z += self.w.data()[d];
            let row = self.v.row(d);
            for (tk, vk) in t.iter_mut().zip(row) {
                *tk += vk;
            }
            sum_sq += row.iter().map(|v| v * v).sum::<f64>();
        }
        let t_sq = t.iter().map(|v| v * v).sum::<f64>();
        z += 0.5 * (t_sq - sum_sq);
        (sigmoid(z), FmCache { t })
    }

    /// Pairwise term alone, by brute-force double loop; reference for the
    /// norm identity used in `forward`.
    pub fn pairwise_brute(&self, s: &SparseSample) -> f64 {
        let dims: Vec<usize> = self.active_dims(s).collect();
        let mut acc = 0.0;
        for i in 0..dims.len() {
            for j in (i + 1)..dims.len() {
                let (a, b) = (self.v.row(dims[i]), self.v.row(dims[j]));
                acc += a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
            }
        }
        acc
    }

    /// Accumulates gradients: `d w0 = delta`, `d w[d_i] = delta`,
    /// `d v[d_i] = delta * (t - v[d_i])`, plus `2 * lambda` L2 on `w` and `v`
    /// (never `w0`).
    pub fn backward(
        &self,
        s: &SparseSample,
        delta: f64,
        cache: &FmCache,
        lambda: f64,
        grads: &mut FmParams,
    ) {
        grads.w0.data_mut()[0] += delta;
        for d in self.active_dims(s) {
            grads.w.data_mut()[d] += delta;
            let row = self.v.row(d);
            let m = row.len();
            // Borrow juggling: copy the source row before taking &mut.
            for k in 0..m {
                let vdk = row[k];
                grads.v.row_mut(d)[k] += delta * (cache.t[k] - vdk);
            }
        }
        if lambda > 0.0 {
            for (g, w) in grads.w.data_mut().iter_mut().zip(self.w.data()) {
                *g += 2.0 * lambda * w;
            }
            for (g, v) in grads.v.data_mut().iter_mut().zip(self.v.data()) {
                *g += 2.0 * lambda * v;
            }
        }
    }

    /// Sum of squared weights and latents (`w0` excluded).
    pub fn sq_weight_norm(&self) -> f64 {
        self.w.data().iter().map(|v| v * v).sum::<f64>()
            + self.v.data().iter().map(|v| v * v).sum::<f64>()
    }
}

/// Copies trained FM latent vectors into a network embedding table: latent
/// row `offset_i + c` becomes column `c` of field `i`'s table. This is the
/// warm start used when a network is initialized from a pre-trained FM.
pub fn fm_pretrain_embedding(fm: &FmParams, schema: &FieldSchema) -> Result<EmbeddingTable> {
    if fm.w.rows() != schema.total_dim() {
        return Err(Error::SchemaMismatch(format!(
            "factorization machine has {} rows, schema one-hot dimension is {}",
            fm.w.rows(),
            schema.total_dim()
        )));
    }
    let m = fm.order();
    let mut table = EmbeddingTable::zeros(schema, m);
    for i in 0..schema.n_fields() {
        for c in 0..schema.field(i).cardinality() {
            let row = fm.v.row(schema.offset(i) + c).to_vec();
            for (r, val) in row.iter().enumerate() {
                table.field_mut(i).set(r, c, *val);
            }
        }
    }
    Ok(table)
}
