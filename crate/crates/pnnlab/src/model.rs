//! Unified model dispatch: one enum over every trainable model so the
//! training loop, checkpoint codec, gradient checker and CLI can treat them
//! uniformly.
//!
//! Parameters are exposed as named blocks (name, shape, flat row-major
//! values). Block order and names are stable — they are the checkpoint
//! format — and gradients mirror parameters exactly: the gradient of a model
//! is another value of the same variant, aligned block by block.

use crate::data::{FieldSchema, SparseSample};
use crate::error::{Error, Result};
use crate::models::fnn::{FnnCache, FnnParams};
use crate::models::linear::{FmCache, FmParams, LrParams};
use crate::models::{DropoutMasks, EmbeddingTable};
use crate::product::nets::{IpnnParams, OpnnParams, PnnCache, PnnStarParams};
use crate::numkit::Rng;
use crate::training::TrainConfig;

/// The trainable model families.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Lr,
    Fm,
    Fnn,
    Ipnn,
    Opnn,
    PnnStar,
}

impl ModelKind {
    pub const ALL: [ModelKind; 6] = [
        ModelKind::Lr,
        ModelKind::Fm,
        ModelKind::Fnn,
        ModelKind::Ipnn,
        ModelKind::Opnn,
        ModelKind::PnnStar,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Lr => "lr",
            ModelKind::Fm => "fm",
            ModelKind::Fnn => "fnn",
            ModelKind::Ipnn => "ipnn",
            ModelKind::Opnn => "opnn",
            ModelKind::PnnStar => "pnn-star",
        }
    }

    pub fn parse(s: &str) -> Result<ModelKind> {
        match s {
            "lr" => Ok(ModelKind::Lr),
            "fm" => Ok(ModelKind::Fm),
            "fnn" => Ok(ModelKind::Fnn),
            "ipnn" => Ok(ModelKind::Ipnn),
            "opnn" => Ok(ModelKind::Opnn),
            "pnn-star" => Ok(ModelKind::PnnStar),
            other => Err(Error::InvalidArg(format!(
                "unknown model '{other}' (expected one of: lr, fm, fnn, ipnn, opnn, pnn-star)"
            ))),
        }
    }

    /// True for models with an embedding layer and MLP trunk.
    pub fn is_network(self) -> bool {
        !matches!(self, ModelKind::Lr | ModelKind::Fm)
    }
}

/// A named view of one parameter block.
pub struct BlockView<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a [f64],
}

/// Mutable counterpart of [`BlockView`].
pub struct BlockViewMut<'a> {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: &'a mut [f64],
}

/// Forward-pass result: the prediction plus whatever the matching backward
/// pass needs.
pub enum ModelCache {
    Lr { yhat: f64 },
    Fm { yhat: f64, cache: FmCache },
    Fnn(Box<FnnCache>),
    Pnn(Box<PnnCache>),
}

impl ModelCache {
    pub fn yhat(&self) -> f64 {
        match self {
            ModelCache::Lr { yhat } => *yhat,
            ModelCache::Fm { yhat, .. } => *yhat,
            ModelCache::Fnn(c) => c.head.yhat,
            ModelCache::Pnn(c) => c.head.yhat,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Model {
    Lr(LrParams),
    Fm(FmParams),
    Fnn(FnnParams),
    Ipnn(IpnnParams),
    Opnn(OpnnParams),
    PnnStar(PnnStarParams),
}

impl Model {
    /// Seed-deterministic initialization from a schema and a training
    /// config; the same `(kind, schema, config, seed)` always produces
    /// bitwise-identical parameters.
    pub fn init(
        kind: ModelKind,
        schema: &FieldSchema,
        cfg: &TrainConfig,
        rng: &mut Rng,
    ) -> Result<Model> {
        cfg.validate()?;
        Ok(match kind {
            ModelKind::Lr => Model::Lr(LrParams::init(schema, rng)),
            ModelKind::Fm => Model::Fm(FmParams::init(schema, cfg.embedding_order, rng)),
            ModelKind::Fnn => {
                let emb = EmbeddingTable::init(schema, cfg.embedding_order, rng);
                Model::Fnn(FnnParams::init(
                    emb,
                    cfg.d1,
                    cfg.d2,
                    cfg.hidden_layers,
                    cfg.activation,
                    rng,
                )?)
            }
            ModelKind::Ipnn => {
                let emb = EmbeddingTable::init(schema, cfg.embedding_order, rng);
                Model::Ipnn(IpnnParams::init(
                    emb,
                    cfg.d1,
                    cfg.d2,
                    cfg.hidden_layers,
                    cfg.k_order,
                    cfg.activation,
                    rng,
                )?)
            }
            ModelKind::Opnn => {
                let emb = EmbeddingTable::init(schema, cfg.embedding_order, rng);
                Model::Opnn(OpnnParams::init(
                    emb,
                    cfg.d1,
                    cfg.d2,
                    cfg.hidden_layers,
                    cfg.activation,
                    rng,
                )?)
            }
            ModelKind::PnnStar => {
                let emb = EmbeddingTable::init(schema, cfg.embedding_order, rng);
                Model::PnnStar(PnnStarParams::init(
                    emb,
                    cfg.d1,
                    cfg.d2,
                    cfg.hidden_layers,
                    cfg.k_order,
                    cfg.activation,
                    cfg.pnn_star_concat,
                    rng,
                )?)
            }
        })
    }

    pub fn kind(&self) -> ModelKind {
        match self {
            Model::Lr(_) => ModelKind::Lr,
            Model::Fm(_) => ModelKind::Fm,
            Model::Fnn(_) => ModelKind::Fnn,
            Model::Ipnn(_) => ModelKind::Ipnn,
            Model::Opnn(_) => ModelKind::Opnn,
            Model::PnnStar(_) => ModelKind::PnnStar,
        }
    }

    /// Checks the model's feature layout against a dataset schema.
    pub fn validate_schema(&self, schema: &FieldSchema) -> Result<()> {
        match self {
            Model::Lr(p) => {
                let mut q = p.clone();
                q.attach_schema(schema)
            }
            Model::Fm(p) => {
                let mut q = p.clone();
                q.attach_schema(schema)
            }
            Model::Fnn(p) => p.embedding.check_schema(schema),
            Model::Ipnn(p) => p.embedding.check_schema(schema),
            Model::Opnn(p) => p.embedding.check_schema(schema),
            Model::PnnStar(p) => p.embedding.check_schema(schema),
        }
    }

    /// Widths of dropout-eligible hidden layers, in mask-draw order; empty
    /// for the linear models.
    pub fn hidden_widths(&self) -> Vec<usize> {
        match self {
            Model::Lr(_) | Model::Fm(_) => Vec::new(),
            Model::Fnn(p) => p.hidden_widths(),
            Model::Ipnn(p) => p.hidden_widths(),
            Model::Opnn(p) => p.hidden_widths(),
            Model::PnnStar(p) => p.hidden_widths(),
        }
    }

    /// Evaluation-mode prediction (no dropout).
    pub fn predict(&self, s: &SparseSample) -> f64 {
        match self {
            Model::Lr(p) => p.forward(s),
            Model::Fm(p) => p.forward(s).0,
            Model::Fnn(p) => p.predict(s),
            Model::Ipnn(p) => p.predict(s),
            Model::Opnn(p) => p.predict(s),
            Model::PnnStar(p) => p.predict(s),
        }
    }

    /// Training-mode forward pass; `masks` applies dropout to hidden-layer
    /// outputs (ignored by the linear models, which have none).
    pub fn forward_train(&self, s: &SparseSample, masks: Option<&DropoutMasks>) -> ModelCache {
        match self {
            Model::Lr(p) => ModelCache::Lr { yhat: p.forward(s) },
            Model::Fm(p) => {
                let (yhat, cache) = p.forward(s);
                ModelCache::Fm { yhat, cache }
            }
            Model::Fnn(p) => ModelCache::Fnn(Box::new(p.forward(s, masks))),
            Model::Ipnn(p) => ModelCache::Pnn(Box::new(p.forward(s, masks))),
            Model::Opnn(p) => ModelCache::Pnn(Box::new(p.forward(s, masks))),
            Model::PnnStar(p) => ModelCache::Pnn(Box::new(p.forward(s, masks))),
        }
    }

    /// Accumulates the gradient of one sample's loss into `grads` (a value of
    /// the same variant, typically built with [`Model::zeros_like`]).
    /// `lambda` adds L2 on the linear models' weights; the networks are
    /// regularized by dropout instead and ignore it.
    pub fn backward(
        &self,
        s: &SparseSample,
        y: u8,
        cache: &ModelCache,
        masks: Option<&DropoutMasks>,
        lambda: f64,
        grads: &mut Model,
    ) -> Result<()> {
        match (self, cache, grads) {
            (Model::Lr(p), ModelCache::Lr { yhat }, Model::Lr(g)) => {
                p.backward(s, yhat - y as f64, lambda, g);
                Ok(())
            }
            (Model::Fm(p), ModelCache::Fm { yhat, cache }, Model::Fm(g)) => {
                p.backward(s, yhat - y as f64, cache, lambda, g);
                Ok(())
            }
            (Model::Fnn(p), ModelCache::Fnn(c), Model::Fnn(g)) => {
                p.backward(s, y, c, masks, g);
                Ok(())
            }
            (Model::Ipnn(p), ModelCache::Pnn(c), Model::Ipnn(g)) => {
                p.backward(s, y, c, masks, g);
                Ok(())
            }
            (Model::Opnn(p), ModelCache::Pnn(c), Model::Opnn(g)) => {
                p.backward(s, y, c, masks, g);
                Ok(())
            }
            (Model::PnnStar(p), ModelCache::Pnn(c), Model::PnnStar(g)) => {
                p.backward(s, y, c, masks, g);
                Ok(())
            }
            _ => Err(Error::InvalidArg(
                "backward called with mismatched cache or gradient variant".into(),
            )),
        }
    }

    pub fn zeros_like(&self) -> Model {
        match self {
            Model::Lr(p) => Model::Lr(p.zeros_like()),
            Model::Fm(p) => Model::Fm(p.zeros_like()),
            Model::Fnn(p) => Model::Fnn(p.zeros_like()),
            Model::Ipnn(p) => Model::Ipnn(p.zeros_like()),
            Model::Opnn(p) => Model::Opnn(p.zeros_like()),
            Model::PnnStar(p) => Model::PnnStar(p.zeros_like()),
        }
    }

    /// Sum of squared L2-regularized parameters (linear models only).
    pub fn sq_weight_norm(&self) -> f64 {
        match self {
            Model::Lr(p) => p.sq_weight_norm(),
            Model::Fm(p) => p.sq_weight_norm(),
            _ => 0.0,
        }
    }

    /// Named parameter blocks in checkpoint order.
    pub fn blocks(&self) -> Vec<BlockView<'_>> {
        fn mat<'a>(name: impl Into<String>, m: &'a crate::numkit::Mat) -> BlockView<'a> {
            BlockView { name: name.into(), rows: m.rows(), cols: m.cols(), data: m.data() }
        }
        fn emb<'a>(out: &mut Vec<BlockView<'a>>, e: &'a EmbeddingTable) {
            for (i, t) in e.fields().iter().enumerate() {
                out.push(mat(format!("embed{i}"), t));
            }
        }
        fn head<'a>(out: &mut Vec<BlockView<'a>>, h: &'a crate::models::MlpHead) {
            for (t, layer) in h.hidden.iter().enumerate() {
                out.push(mat(format!("h{t}_w"), &layer.w));
                out.push(mat(format!("h{t}_b"), &layer.b));
            }
            out.push(mat("out_w", &h.out.w));
            out.push(mat("out_b", &h.out.b));
        }
        let mut v = Vec::new();
        match self {
            Model::Lr(p) => {
                v.push(mat("bias", &p.bias));
                v.push(mat("w", &p.w));
            }
            Model::Fm(p) => {
                v.push(mat("w0", &p.w0));
                v.push(mat("w", &p.w));
                v.push(mat("v", &p.v));
            }
            Model::Fnn(p) => {
                emb(&mut v, &p.embedding);
                v.push(mat("w1", &p.w1));
                v.push(mat("b1", &p.b1));
                head(&mut v, &p.head);
            }
            Model::Ipnn(p) => {
                emb(&mut v, &p.embedding);
                v.push(mat("wz", &p.wz));
                v.push(mat("theta", &p.theta));
                v.push(mat("b1", &p.b1));
                head(&mut v, &p.head);
            }
            Model::Opnn(p) => {
                emb(&mut v, &p.embedding);
                v.push(mat("wz", &p.wz));
                v.push(mat("wp", p.wp.mat()));
                v.push(mat("b1", &p.b1));
                head(&mut v, &p.head);
            }
            Model::PnnStar(p) => {
                emb(&mut v, &p.embedding);
                v.push(mat("wz", &p.wz));
                v.push(mat("theta", &p.theta));
                v.push(mat("wp", p.wp.mat()));
                v.push(mat("b1", &p.b1));
                head(&mut v, &p.head);
            }
        }
        v
    }

    /// Mutable counterpart of [`Model::blocks`], same order.
    pub fn blocks_mut(&mut self) -> Vec<BlockViewMut<'_>> {
        fn mat<'a>(name: impl Into<String>, m: &'a mut crate::numkit::Mat) -> BlockViewMut<'a> {
            let (rows, cols) = m.shape();
            BlockViewMut { name: name.into(), rows, cols, data: m.data_mut() }
        }
        fn emb<'a>(out: &mut Vec<BlockViewMut<'a>>, e: &'a mut EmbeddingTable) {
            for (i, t) in e.fields_mut().iter_mut().enumerate() {
                out.push(mat(format!("embed{i}"), t));
            }
        }
        fn head<'a>(out: &mut Vec<BlockViewMut<'a>>, h: &'a mut crate::models::MlpHead) {
            for (t, layer) in h.hidden.iter_mut().enumerate() {
                out.push(mat(format!("h{t}_w"), &mut layer.w));
                out.push(mat(format!("h{t}_b"), &mut layer.b));
            }
            out.push(mat("out_w", &mut h.out.w));
            out.push(mat("out_b", &mut h.out.b));
        }
        let mut v = Vec::new();
        match self {
            Model::Lr(p) => {
                v.push(mat("bias", &mut p.bias));
                v.push(mat("w", &mut p.w));
            }
            Model::Fm(p) => {
                v.push(mat("w0", &mut p.w0));
                v.push(mat("w", &mut p.w));
                v.push(mat("v", &mut p.v));
            }
            Model::Fnn(p) => {
                emb(&mut v, &mut p.embedding);
                v.push(mat("w1", &mut p.w1));
                v.push(mat("b1", &mut p.b1));
                head(&mut v, &mut p.head);
            }
            Model::Ipnn(p) => {
                emb(&mut v, &mut p.embedding);
                v.push(mat("wz", &mut p.wz));
                v.push(mat("theta", &mut p.theta));
                v.push(mat("b1", &mut p.b1));
                head(&mut v, &mut p.head);
            }
            Model::Opnn(p) => {
                emb(&mut v, &mut p.embedding);
                v.push(mat("wz", &mut p.wz));
                v.push(mat("wp", p.wp.mat_mut()));
                v.push(mat("b1", &mut p.b1));
                head(&mut v, &mut p.head);
            }
            Model::PnnStar(p) => {
                emb(&mut v, &mut p.embedding);
                v.push(mat("wz", &mut p.wz));
                v.push(mat("theta", &mut p.theta));
                v.push(mat("wp", p.wp.mat_mut()));
                v.push(mat("b1", &mut p.b1));
                head(&mut v, &mut p.head);
            }
        }
        v
    }

    /// Multiplies every parameter by `c` (used to turn an accumulated batch
    /// gradient into a mean).
    pub fn scale(&mut self, c: f64) {
        for b in self.blocks_mut() {
            for v in b.data {
                *v *= c;
            }
        }
    }

    /// Resets every parameter to zero (gradient accumulator reuse).
    pub fn set_zero(&mut self) {
        for b in self.blocks_mut() {
            for v in b.data {
                *v = 0.0;
            }
        }
    }

    /// True when any parameter is NaN or infinite.
    pub fn has_non_finite(&self) -> bool {
        self.blocks().iter().any(|b| b.data.iter().any(|v| !v.is_finite()))
    }

    /// Total parameter count.
    pub fn n_params(&self) -> usize {
        self.blocks().iter().map(|b| b.data.len()).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::TrainConfig;

    fn cfg() -> TrainConfig {
        TrainConfig {
            embedding_order: 3,
            d1: 4,
            d2: 3,
            hidden_layers: 3,
            ..TrainConfig::default()
        }
    }

    fn schema() -> FieldSchema {
        FieldSchema::numeric(&[("a", 3), ("b", 4), ("c", 2)]).unwrap()
    }

    #[test]
    fn kind_names_round_trip() {
        for kind in ModelKind::ALL {
            assert_eq!(ModelKind::parse(kind.name()).unwrap(), kind);
        }
        assert!(ModelKind::parse("ccpm").is_err());
    }

    #[test]
    fn init_is_seed_deterministic_per_kind() {
        let schema = schema();
        let cfg = cfg();
        for kind in ModelKind::ALL {
            let a = Model::init(kind, &schema, &cfg, &mut Rng::new(42)).unwrap();
            let b = Model::init(kind, &schema, &cfg, &mut Rng::new(42)).unwrap();
            assert_eq!(a, b, "{} init not deterministic", kind.name());
            let c = Model::init(kind, &schema, &cfg, &mut Rng::new(43)).unwrap();
            assert_ne!(a, c, "{} init ignores the seed", kind.name());
        }
    }

    #[test]
    fn blocks_and_blocks_mut_agree_and_cover_all_params() {
        let schema = schema();
        let cfg = cfg();
        for kind in ModelKind::ALL {
            let mut m = Model::init(kind, &schema, &cfg, &mut Rng::new(7)).unwrap();
            let names: Vec<String> = m.blocks().iter().map(|b| b.name.clone()).collect();
            let shapes: Vec<(usize, usize)> =
                m.blocks().iter().map(|b| (b.rows, b.cols)).collect();
            let mut_names: Vec<String> =
                m.blocks_mut().iter().map(|b| b.name.clone()).collect();
            assert_eq!(names, mut_names, "{}", kind.name());
            for (b, (r, c)) in m.blocks().iter().zip(&shapes) {
                assert_eq!(b.data.len(), r * c);
            }
            // Unique names.
            let mut sorted = names.clone();
            sorted.sort();
            sorted.dedup();
            assert_eq!(sorted.len(), names.len(), "{} block names repeat", kind.name());
        }
    }

    #[test]
    fn scale_and_zero_touch_every_block() {
        let schema = schema();
        let mut m = Model::init(ModelKind::Ipnn, &schema, &cfg(), &mut Rng::new(3)).unwrap();
        let before: Vec<f64> = m.blocks().iter().flat_map(|b| b.data.to_vec()).collect();
        m.scale(2.0);
        let after: Vec<f64> = m.blocks().iter().flat_map(|b| b.data.to_vec()).collect();
        for (a, b) in before.iter().zip(&after) {
            assert_eq!(*b, 2.0 * a);
        }
        m.set_zero();
        assert!(m.blocks().iter().all(|b| b.data.iter().all(|v| *v == 0.0)));
    }

    #[test]
    fn forward_backward_dispatch_works_for_every_kind() {
        let schema = schema();
        let cfg = cfg();
        let s = SparseSample::new(1, vec![1, 2, 0]);
        for kind in ModelKind::ALL {
            let m = Model::init(kind, &schema, &cfg, &mut Rng::new(11)).unwrap();
            let cache = m.forward_train(&s, None);
            assert!(cache.yhat() > 0.0 && cache.yhat() < 1.0, "{}", kind.name());
            assert_eq!(cache.yhat(), m.predict(&s), "{}", kind.name());
            let mut g = m.zeros_like();
            m.backward(&s, 1, &cache, None, 0.0, &mut g).unwrap();
            let total: f64 = g.blocks().iter().flat_map(|b| b.data).map(|v| v.abs()).sum();
            assert!(total > 0.0, "{} produced an all-zero gradient", kind.name());
            // Mismatched gradient variant is rejected.
            let mut wrong = Model::init(ModelKind::Lr, &schema, &cfg, &mut Rng::new(1))
                .unwrap()
                .zeros_like();
            if kind != ModelKind::Lr {
                assert!(m.backward(&s, 1, &cache, None, 0.0, &mut wrong).is_err());
            }
        }
    }

    #[test]
    fn pnn_star_concat_width_flows_from_config() {
        let schema = schema();
        let mut cfg = cfg();
        cfg.pnn_star_concat = true;
        let m = Model::init(ModelKind::PnnStar, &schema, &cfg, &mut Rng::new(5)).unwrap();
        match &m {
            Model::PnnStar(p) => {
                assert!(p.concat);
                assert_eq!(p.width(), 2 * cfg.d1);
            }
            _ => unreachable!(),
        }
        assert_eq!(m.hidden_widths()[0], 2 * cfg.d1);
    }

    #[test]
    fn validate_schema_rejects_wrong_layout() {
        let schema = schema();
        let other = FieldSchema::numeric(&[("a", 3), ("b", 5), ("c", 2)]).unwrap();
        let cfg = cfg();
        for kind in ModelKind::ALL {
            let m = Model::init(kind, &schema, &cfg, &mut Rng::new(2)).unwrap();
            assert!(m.validate_schema(&schema).is_ok());
            assert!(m.validate_schema(&other).is_err(), "{}", kind.name());
        }
    }
}
