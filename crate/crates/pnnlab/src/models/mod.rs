//! Model building blocks shared by the baselines and the product networks:
//! activations, per-field embedding tables, dense layers, and the MLP head
//! that sits on top of every network model.
//!
//! Gradients are hand-derived throughout. Every backward pass in this crate
//! follows the same conventions:
//!
//! * the loss is the log loss, so the gradient seed at the pre-sigmoid output
//!   is `yhat - y`;
//! * `backward` *accumulates* into a zeroed mirror of the parameter struct,
//!   which lets the training loop reuse one accumulator across a minibatch;
//! * dropout masks (inverted scaling, see the training module) are applied to
//!   hidden-layer outputs only, and the cached masked/unmasked values make
//!   the backward pass exact for whatever mask was drawn.

pub mod fnn;
pub mod linear;

use crate::data::{FieldSchema, SparseSample};
use crate::error::{Error, Result};
use crate::numkit::{dot_slices, relu, sigmoid, tanh_act, Mat, Rng};

// ---------------------------------------------------------------------------
// Activations
// ---------------------------------------------------------------------------

/// Hidden-layer activation. `Identity` exists for degeneracy constructions
/// (a product network reduced to a factorization machine needs a pass-through
/// first layer) and is not offered on the training CLI.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Sigmoid,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => relu(x),
            Activation::Tanh => tanh_act(x),
            Activation::Sigmoid => sigmoid(x),
            Activation::Identity => x,
        }
    }

    /// Derivative at a point, given the cached pre-activation `pre` and
    /// post-activation `post` (avoids recomputing exp/tanh).
    pub fn deriv(self, pre: f64, post: f64) -> f64 {
        match self {
            // Subgradient 0 at the kink.
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - post * post,
            Activation::Sigmoid => post * (1.0 - post),
            Activation::Identity => 1.0,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Sigmoid => "sigmoid",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Activation> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "sigmoid" => Ok(Activation::Sigmoid),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::InvalidArg(format!(
                "unknown activation '{other}' (expected relu, tanh or sigmoid)"
            ))),
        }
    }
}

// ---------------------------------------------------------------------------
// Initialization
// ---------------------------------------------------------------------------

/// Xavier-uniform initialization for a stored `rows x cols` weight matrix:
/// entries drawn from `U(-a, a)` with `a = sqrt(6 / (fan_in + fan_out))`,
/// where `fan_in = cols` and `fan_out = rows`.
pub fn xavier(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-bound, bound))
}

/// Bound used by [`xavier`]; exposed so tests can assert every entry obeys it.
pub fn xavier_bound(rows: usize, cols: usize) -> f64 {
    (6.0 / (rows + cols) as f64).sqrt()
}

/// Embedding-style initialization: small uniform entries in
/// `(-EMBED_INIT_BOUND, EMBED_INIT_BOUND)`.
pub fn embedding_init(rows: usize, cols: usize, rng: &mut Rng) -> Mat {
    Mat::from_fn(rows, cols, |_, _| rng.uniform(-EMBED_INIT_BOUND, EMBED_INIT_BOUND))
}

/// Scale of embedding (and factorization-machine latent) initialization.
pub const EMBED_INIT_BOUND: f64 = 0.01;

// ---------------------------------------------------------------------------
// Embedding table
// ---------------------------------------------------------------------------

/// Per-field embedding matrices; table `i` has shape `M x cardinality_i`, so
/// looking up category `c` of field `i` selects column `c` (the one-hot
/// product collapses to column selection).
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    tables: Vec<Mat>,
    order: usize,
}

impl EmbeddingTable {
    pub fn init(schema: &FieldSchema, order: usize, rng: &mut Rng) -> EmbeddingTable {
        let tables = schema
            .fields()
            .iter()
            .map(|f| embedding_init(order, f.cardinality(), rng))
            .collect();
        EmbeddingTable { tables, order }
    }

    pub fn zeros(schema: &FieldSchema, order: usize) -> EmbeddingTable {
        let tables =
            schema.fields().iter().map(|f| Mat::zeros(order, f.cardinality())).collect();
        EmbeddingTable { tables, order }
    }

    /// Builds a table from explicit per-field matrices; all must share row
    /// count (the embedding order).
    pub fn from_mats(tables: Vec<Mat>) -> Result<EmbeddingTable> {
        let order = tables.first().map(|t| t.rows()).ok_or_else(|| {
            Error::InvalidArg("embedding table needs at least one field".into())
        })?;
        for (i, t) in tables.iter().enumerate() {
            if t.rows() != order {
                return Err(Error::InvalidArg(format!(
                    "embedding table field {i} has order {}, expected {order}",
                    t.rows()
                )));
            }
        }
        Ok(EmbeddingTable { tables, order })
    }

    pub fn zeros_like(&self) -> EmbeddingTable {
        EmbeddingTable {
            tables: self.tables.iter().map(|t| Mat::zeros(t.rows(), t.cols())).collect(),
            order: self.order,
        }
    }

    /// Embedding dimensionality `M`.
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn n_fields(&self) -> usize {
        self.tables.len()
    }

    pub fn field(&self, i: usize) -> &Mat {
        &self.tables[i]
    }

    pub fn field_mut(&mut self, i: usize) -> &mut Mat {
        &mut self.tables[i]
    }

    pub fn fields(&self) -> &[Mat] {
        &self.tables
    }

    pub(crate) fn fields_mut(&mut self) -> &mut [Mat] {
        &mut self.tables
    }

    /// Errors unless the table's field count and cardinalities match `schema`.
    pub fn check_schema(&self, schema: &FieldSchema) -> Result<()> {
        if self.tables.len() != schema.n_fields() {
            return Err(Error::SchemaMismatch(format!(
                "model has {} embedding fields, schema has {}",
                self.tables.len(),
                schema.n_fields()
            )));
        }
        for (i, t) in self.tables.iter().enumerate() {
            if t.cols() != schema.field(i).cardinality() {
                return Err(Error::SchemaMismatch(format!(
                    "field '{}': model cardinality {}, schema cardinality {}",
                    schema.field(i).name(),
                    t.cols(),
                    schema.field(i).cardinality()
                )));
            }
        }
        Ok(())
    }

    /// Accumulates `scale * g` into column `cat` of field `i`'s table; the
    /// only way embedding gradients are ever written, which keeps gradients
    /// of unselected columns exactly zero.
    pub fn accum_col(&mut self, i: usize, cat: usize, g: &[f64], scale: f64) {
        let t = &mut self.tables[i];
        debug_assert_eq!(g.len(), t.rows());
        let cols = t.cols();
        for (r, gr) in g.iter().enumerate() {
            t.data_mut()[r * cols + cat] += scale * gr;
        }
    }
}

/// Looks up one row per field: the result is `N x M` with row `i` holding the
/// embedding of the active category of field `i`.
pub fn embed_lookup(table: &EmbeddingTable, s: &SparseSample) -> Mat {
    let n = table.n_fields();
    let m = table.order();
    debug_assert_eq!(s.categories.len(), n);
    let mut f = Mat::zeros(n, m);
    for i in 0..n {
        let t = table.field(i);
        let c = s.categories[i];
        let row = f.row_mut(i);
        for r in 0..m {
            row[r] = t.get(r, c);
        }
    }
    f
}

// ---------------------------------------------------------------------------
// Dense layers and the MLP head
// ---------------------------------------------------------------------------

/// Fully connected layer: `w` is `out x in`, `b` is `out x 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    pub w: Mat,
    pub b: Mat,
}

impl DenseLayer {
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut Rng) -> DenseLayer {
        DenseLayer { w: xavier(out_dim, in_dim, rng), b: Mat::zeros(out_dim, 1) }
    }

    pub fn zeros_like(&self) -> DenseLayer {
        DenseLayer {
            w: Mat::zeros(self.w.rows(), self.w.cols()),
            b: Mat::zeros(self.b.rows(), 1),
        }
    }

    /// `out = w * x + b` written into `out`.
    fn forward_into(&self, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        for r in 0..self.w.rows() {
            out.push(dot_slices(self.w.row(r), x) + self.b.data()[r]);
        }
    }
}

/// The network trunk above the first hidden layer: zero or more extra hidden
/// layers followed by a single sigmoid output unit.
///
/// Layer counting convention: a model with `hidden_layers = H` in its config
/// has the `D1`-wide first layer plus `H - 1` layers here (the first mapping
/// `D1 -> D2`, the rest `D2 -> D2`). `H = 1` means this head is just the
/// output unit reading the first layer directly.
///
/// The first layer's activation is this head's `activation`; one config knob
/// controls both.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpHead {
    pub hidden: Vec<DenseLayer>,
    pub out: DenseLayer,
    pub activation: Activation,
}

/// Cached intermediate values of one head forward pass.
#[derive(Clone, Debug)]
pub struct HeadCache {
    /// Hidden pre-activations, one vector per hidden layer.
    pub pre: Vec<Vec<f64>>,
    /// Hidden post-activations before dropout.
    pub unmasked: Vec<Vec<f64>>,
    /// Hidden outputs after dropout (equal to `unmasked` without masks).
    pub act: Vec<Vec<f64>>,
    /// Pre-sigmoid output.
    pub out_pre: f64,
    pub yhat: f64,
}

impl MlpHead {
    /// Builds a head whose input is `input_dim` wide, with `hidden_layers - 1`
    /// hidden layers of width `d2`.
    pub fn init(
        input_dim: usize,
        d2: usize,
        hidden_layers: usize,
        activation: Activation,
        rng: &mut Rng,
    ) -> Result<MlpHead> {
        if hidden_layers == 0 {
            return Err(Error::InvalidArg("hidden_layers must be at least 1".into()));
        }
        let mut hidden = Vec::new();
        let mut width = input_dim;
        for _ in 1..hidden_layers {
            hidden.push(DenseLayer::init(d2, width, rng));
            width = d2;
        }
        Ok(MlpHead { hidden, out: DenseLayer::init(1, width, rng), activation })
    }

    pub fn zeros_like(&self) -> MlpHead {
        MlpHead {
            hidden: self.hidden.iter().map(DenseLayer::zeros_like).collect(),
            out: self.out.zeros_like(),
            activation: self.activation,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.hidden.first().map(|l| l.w.cols()).unwrap_or_else(|| self.out.w.cols())
    }

    /// Widths of the head's own hidden layers (excludes the model's first
    /// layer), in forward order; used to draw dropout masks.
    pub fn hidden_widths(&self) -> Vec<usize> {
        self.hidden.iter().map(|l| l.w.rows()).collect()
    }

    /// Forward pass from the (already masked) first-layer output. `masks`
    /// holds one dropout mask per head hidden layer or is `None` in
    /// evaluation mode.
    pub fn forward(&self, l1: &[f64], masks: Option<&[Vec<f64>]>) -> HeadCache {
        debug_assert_eq!(l1.len(), self.input_dim());
        if let Some(ms) = masks {
            debug_assert_eq!(ms.len(), self.hidden.len());
        }
        let mut pre = Vec::with_capacity(self.hidden.len());
        let mut unmasked = Vec::with_capacity(self.hidden.len());
        let mut act = Vec::with_capacity(self.hidden.len());
        let mut input = l1;
        for (t, layer) in self.hidden.iter().enumerate() {
            let mut z = Vec::new();
            layer.forward_into(input, &mut z);
            let u: Vec<f64> = z.iter().map(|&v| self.activation.apply(v)).collect();
            let a = match masks {
                Some(ms) => u.iter().zip(&ms[t]).map(|(v, m)| v * m).collect(),
                None => u.clone(),
            };
            pre.push(z);
            unmasked.push(u);
            act.push(a);
            input = act.last().unwrap();
        }
        let out_pre = dot_slices(self.out.w.row(0), input) + self.out.b.data()[0];
        HeadCache { pre, unmasked, act, out_pre, yhat: sigmoid(out_pre) }
    }

    /// Backward pass. `delta_out` is the loss gradient at the pre-sigmoid
    /// output (`yhat - y` for log loss); gradients accumulate into `grads`,
    /// and the gradient with respect to `l1` is written to `dl1`.
    pub fn backward(
        &self,
        l1: &[f64],
        cache: &HeadCache,
        masks: Option<&[Vec<f64>]>,
        delta_out: f64,
        grads: &mut MlpHead,
        dl1: &mut [f64],
    ) {
        let last = if self.hidden.is_empty() { l1 } else { &cache.act[self.hidden.len() - 1] };
        // Output unit.
        {
            let gw = grads.out.w.row_mut(0);
            for (g, a) in gw.iter_mut().zip(last) {
                *g += delta_out * a;
            }
            grads.out.b.data_mut()[0] += delta_out;
        }
        let mut da: Vec<f64> = self.out.w.row(0).iter().map(|w| w * delta_out).collect();
        // Hidden layers, top down.
        for t in (0..self.hidden.len()).rev() {
            let layer = &self.hidden[t];
            let mut dz = da.clone();
            if let Some(ms) = masks {
                for (d, m) in dz.iter_mut().zip(&ms[t]) {
                    *d *= m;
                }
            }
            for (r, d) in dz.iter_mut().enumerate() {
                *d *= self.activation.deriv(cache.pre[t][r], cache.unmasked[t][r]);
            }
            let input = if t == 0 { l1 } else { &cache.act[t - 1] };
            let g = &mut grads.hidden[t];
            for r in 0..layer.w.rows() {
                let gw = g.w.row_mut(r);
                for (c, x) in input.iter().enumerate() {
                    gw[c] += dz[r] * x;
                }
                g.b.data_mut()[r] += dz[r];
            }
            let mut prev = vec![0.0; layer.w.cols()];
            for r in 0..layer.w.rows() {
                let wr = layer.w.row(r);
                for c in 0..wr.len() {
                    prev[c] += wr[c] * dz[r];
                }
            }
            da = prev;
        }
        debug_assert_eq!(da.len(), dl1.len());
        dl1.copy_from_slice(&da);
    }
}

/// Dropout masks for one training-mode forward pass: entry 0 masks the first
/// hidden layer (`l1`), the rest mask the head's hidden layers in order.
#[derive(Clone, Debug)]
pub struct DropoutMasks {
    pub masks: Vec<Vec<f64>>,
}

impl DropoutMasks {
    pub fn l1(&self) -> &[f64] {
        &self.masks[0]
    }

    pub fn head(&self) -> &[Vec<f64>] {
        &self.masks[1..]
    }
}

/// Applies an optional mask to a slice, elementwise.
pub(crate) fn apply_mask(values: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
    match mask {
        Some(m) => values.iter().zip(m).map(|(v, mm)| v * mm).collect(),
        None => values.to_vec(),
    }
}
