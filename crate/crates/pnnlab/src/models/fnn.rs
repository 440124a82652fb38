//! Embedding + MLP baseline: the network that shares the product networks'
//! embedding layer and head but connects them with a plain dense layer, i.e.
//! no product interactions.
//!
//! `l1 = act(W1 * flatten(f) + b1)`, then the [`MlpHead`]. A product network
//! whose product weights are zero computes exactly this (within float
//! identity), which the degeneracy tests exploit.

use crate::data::SparseSample;
use crate::error::Result;
use crate::models::{
    apply_mask, embed_lookup, xavier, DropoutMasks, EmbeddingTable, HeadCache, MlpHead,
};
use crate::numkit::{dot_slices, Mat, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct FnnParams {
    pub embedding: EmbeddingTable,
    /// `D1 x (N * M)`: row `n` is the flattened weight tensor of node `n`.
    pub w1: Mat,
    /// `D1 x 1`.
    pub b1: Mat,
    pub head: MlpHead,
}

/// Cache for one FNN forward pass.
#[derive(Clone, Debug)]
pub struct FnnCache {
    /// `N x M` looked-up embeddings.
    pub f: Mat,
    /// First-layer pre-activation, length `D1`.
    pub pre1: Vec<f64>,
    /// `act(pre1)` before dropout.
    pub unmasked1: Vec<f64>,
    /// First-layer output after dropout.
    pub l1: Vec<f64>,
    pub head: HeadCache,
}

impl FnnParams {
    /// Draw order: embedding tables (field by field), then `w1`, then head
    /// layers bottom-up. `b1` and all biases start at zero and consume no
    /// draws.
    pub fn init(
        embedding: EmbeddingTable,
        d1: usize,
        d2: usize,
        hidden_layers: usize,
        activation: super::Activation,
        rng: &mut Rng,
    ) -> Result<FnnParams> {
        let nm = embedding.n_fields() * embedding.order();
        Ok(FnnParams {
            embedding,
            w1: xavier(d1, nm, rng),
            b1: Mat::zeros(d1, 1),
            head: MlpHead::init(d1, d2, hidden_layers, activation, rng)?,
        })
    }

    pub fn zeros_like(&self) -> FnnParams {
        FnnParams {
            embedding: self.embedding.zeros_like(),
            w1: Mat::zeros(self.w1.rows(), self.w1.cols()),
            b1: Mat::zeros(self.b1.rows(), 1),
            head: self.head.zeros_like(),
        }
    }

    pub fn d1(&self) -> usize {
        self.w1.rows()
    }

    /// Widths of all dropout-eligible hidden layers: `l1` first, then the
    /// head's hidden layers.
    pub fn hidden_widths(&self) -> Vec<usize> {
        let mut w = vec![self.d1()];
        w.extend(self.head.hidden_widths());
        w
    }

    pub fn forward(&self, s: &SparseSample, masks: Option<&DropoutMasks>) -> FnnCache {
        let f = embed_lookup(&self.embedding, s);
        let flat = f.data();
        let d1 = self.d1();
        let mut pre1 = Vec::with_capacity(d1);
        for n in 0..d1 {
            pre1.push(dot_slices(self.w1.row(n), flat) + self.b1.data()[n]);
        }
        let act = self.head.activation;
        let unmasked1: Vec<f64> = pre1.iter().map(|&z| act.apply(z)).collect();
        let l1 = apply_mask(&unmasked1, masks.map(|m| m.l1()));
        let head = self.head.forward(&l1, masks.map(|m| m.head()));
        FnnCache { f, pre1, unmasked1, l1, head }
    }

    pub fn predict(&self, s: &SparseSample) -> f64 {
        self.forward(s, None).head.yhat
    }

    /// Accumulates log-loss gradients for one sample into `grads`.
    pub fn backward(
        &self,
        s: &SparseSample,
        y: u8,
        cache: &FnnCache,
        masks: Option<&DropoutMasks>,
        grads: &mut FnnParams,
    ) {
        let d1 = self.d1();
        let mut dl1 = vec![0.0; d1];
        self.head.backward(
            &cache.l1,
            &cache.head,
            masks.map(|m| m.head()),
            cache.head.yhat - y as f64,
            &mut grads.head,
            &mut dl1,
        );
        // Through dropout and the first-layer activation.
        let act = self.head.activation;
        let mut dpre1 = dl1;
        if let Some(m) = masks {
            for (d, mm) in dpre1.iter_mut().zip(m.l1()) {
                *d *= mm;
            }
        }
        for (n, d) in dpre1.iter_mut().enumerate() {
            *d *= act.deriv(cache.pre1[n], cache.unmasked1[n]);
        }
        // First layer weights and the embedding gradient.
        let flat = cache.f.data();
        let nm = flat.len();
        let mut dflat = vec![0.0; nm];
        for n in 0..d1 {
            let g = dpre1[n];
            if g != 0.0 {
                let gw = grads.w1.row_mut(n);
                let wr = self.w1.row(n);
                for j in 0..nm {
                    gw[j] += g * flat[j];
                    dflat[j] += g * wr[j];
                }
            } else {
                // Still correct, just avoids the O(NM) pass for masked nodes.
            }
            grads.b1.data_mut()[n] += g;
        }
        let m = self.embedding.order();
        for (i, &c) in s.categories.iter().enumerate() {
            grads.embedding.accum_col(i, c, &dflat[i * m..(i + 1) * m], 1.0);
        }
    }
}
