//! Finite-difference verification of the hand-derived gradients.
//!
//! For a small randomly parameterized model and a handful of random
//! samples, every parameter's analytic gradient (from the model's
//! backward pass) is compared against a central difference of the
//! training objective. The objective is the clamped log loss, plus the
//! L2 penalty for the models whose backward pass applies one (LR and
//! FM); the networks regularize through dropout only, so their
//! objective is the bare loss.
//!
//! A comparison uses the symmetric relative error
//! `|a - n| / max(|a|, |n|)` and is skipped when both magnitudes are
//! below [`SKIP_THRESHOLD`] (the quantity is then dominated by rounding
//! noise and carries no signal). The check passes when the worst
//! relative error across all draws, blocks, and entries stays below the
//! configured tolerance.

use crate::data::{FieldSchema, SparseSample};
use crate::error::Result;
use crate::model::{Model, ModelKind};
use crate::models::Activation;
use crate::numkit::Rng;
use crate::training::{l2_penalty, log_loss, TrainConfig};

/// Magnitude below which an (analytic, numeric) pair is not compared.
pub const SKIP_THRESHOLD: f64 = 1e-6;

/// Configuration of one gradient check run. The defaults sized via
/// [`GradCheckConfig::for_kind`] keep every model variant under a few
/// hundred parameters so the exhaustive sweep stays instant.
#[derive(Clone, Debug)]
pub struct GradCheckConfig {
    pub kind: ModelKind,
    /// Number of categorical fields of the probe schema.
    pub n_fields: usize,
    /// Cardinality of field `i` is `base_cardinality + (i % 2)`, so the
    /// fields are deliberately not all the same size.
    pub base_cardinality: usize,
    pub embedding_order: usize,
    pub d1: usize,
    pub d2: usize,
    pub hidden_layers: usize,
    pub k_order: usize,
    pub activation: Activation,
    /// Independent (parameters, sample) draws to sweep.
    pub draws: usize,
    pub seed: u64,
    /// L2 strength; only LR and FM include it in objective and gradient.
    pub lambda: f64,
    /// Central-difference step.
    pub epsilon: f64,
    /// Maximum tolerated relative error.
    pub tolerance: f64,
    /// Deliberately offsets every analytic gradient before comparing,
    /// to demonstrate that the checker catches wrong gradients.
    pub corrupt: bool,
}

impl GradCheckConfig {
    pub fn for_kind(kind: ModelKind) -> GradCheckConfig {
        GradCheckConfig {
            kind,
            n_fields: 5,
            base_cardinality: 4,
            embedding_order: 3,
            d1: 4,
            d2: 3,
            hidden_layers: 3,
            k_order: 1,
            activation: Activation::Relu,
            draws: 10,
            seed: 7,
            lambda: 0.0,
            epsilon: 1e-5,
            tolerance: 1e-4,
            corrupt: false,
        }
    }
}

/// Worst-case comparison outcome for one named parameter block.
#[derive(Clone, Debug)]
pub struct BlockReport {
    pub name: String,
    /// Entries actually compared (across all draws).
    pub checked: usize,
    /// Entries skipped because both magnitudes were negligible.
    pub skipped: usize,
    pub max_rel_err: f64,
}

/// Aggregated result of a gradient check run.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub kind: ModelKind,
    pub draws: usize,
    pub tolerance: f64,
    pub blocks: Vec<BlockReport>,
    pub max_rel_err: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_rel_err <= self.tolerance
    }

    /// Plain-text table, one line per block plus a verdict line.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!(
            "gradient check: model={} draws={} tolerance={:e}\n",
            self.kind.name(),
            self.draws,
            self.tolerance
        ));
        for b in &self.blocks {
            out.push_str(&format!(
                "  block {:<10} checked={:<5} skipped={:<5} max_rel_err={:.3e}\n",
                b.name, b.checked, b.skipped, b.max_rel_err
            ));
        }
        out.push_str(&format!(
            "  overall max_rel_err={:.3e} -> {}\n",
            self.max_rel_err,
            if self.passed() { "PASS" } else { "FAIL" }
        ));
        out
    }
}

/// Runs the check described by `cfg` and reports per-block worst errors.
pub fn grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    let fields: Vec<(String, usize)> = (0..cfg.n_fields)
        .map(|i| (format!("f{i}"), cfg.base_cardinality + (i % 2)))
        .collect();
    let field_refs: Vec<(&str, usize)> =
        fields.iter().map(|(n, c)| (n.as_str(), *c)).collect();
    let schema = FieldSchema::numeric(&field_refs)?;

    let train_cfg = TrainConfig {
        embedding_order: cfg.embedding_order,
        d1: cfg.d1,
        d2: cfg.d2,
        hidden_layers: cfg.hidden_layers,
        k_order: cfg.k_order,
        activation: cfg.activation,
        ..TrainConfig::default()
    };

    let mut rng = Rng::new(cfg.seed);
    let mut model = Model::init(cfg.kind, &schema, &train_cfg, &mut rng)?;

    let mut blocks: Vec<BlockReport> = model
        .blocks()
        .iter()
        .map(|b| BlockReport {
            name: b.name.clone(),
            checked: 0,
            skipped: 0,
            max_rel_err: 0.0,
        })
        .collect();

    let include_l2 = !cfg.kind.is_network() && cfg.lambda > 0.0;
    let mut grads = model.zeros_like();

    for _ in 0..cfg.draws {
        // Fresh parameters each draw; biases included, so no block sits
        // at its zero initialization.
        for b in model.blocks_mut() {
            for v in b.data.iter_mut() {
                *v = rng.uniform(-0.5, 0.5);
            }
        }
        let cats: Vec<usize> = schema
            .fields()
            .iter()
            .map(|f| rng.index(f.cardinality()))
            .collect();
        let y = u8::from(rng.bernoulli(0.5));
        let s = SparseSample::new(y, cats);

        grads.set_zero();
        let cache = model.forward_train(&s, None);
        model.backward(&s, y, &cache, None, cfg.lambda, &mut grads)?;
        if cfg.corrupt {
            for b in grads.blocks_mut() {
                b.data[0] += 1.0;
            }
        }

        let analytic: Vec<Vec<f64>> =
            grads.blocks().iter().map(|b| b.data.to_vec()).collect();

        for (bi, block_grads) in analytic.iter().enumerate() {
            for j in 0..block_grads.len() {
                let orig = model.blocks()[bi].data[j];

                model.blocks_mut()[bi].data[j] = orig + cfg.epsilon;
                let plus = objective(&model, &s, y, cfg.lambda, include_l2)?;
                model.blocks_mut()[bi].data[j] = orig - cfg.epsilon;
                let minus = objective(&model, &s, y, cfg.lambda, include_l2)?;
                model.blocks_mut()[bi].data[j] = orig;

                let numeric = (plus - minus) / (2.0 * cfg.epsilon);
                let a = block_grads[j];
                let scale = a.abs().max(numeric.abs());
                if scale < SKIP_THRESHOLD {
                    blocks[bi].skipped += 1;
                    continue;
                }
                let rel = (a - numeric).abs() / scale;
                blocks[bi].checked += 1;
                if rel > blocks[bi].max_rel_err {
                    blocks[bi].max_rel_err = rel;
                }
            }
        }
    }

    let max_rel_err = blocks.iter().map(|b| b.max_rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        kind: cfg.kind,
        draws: cfg.draws,
        tolerance: cfg.tolerance,
        blocks,
        max_rel_err,
    })
}

/// Training objective at the current parameters for one sample.
fn objective(
    model: &Model,
    s: &SparseSample,
    y: u8,
    lambda: f64,
    include_l2: bool,
) -> Result<f64> {
    let yhat = model.predict(s);
    let mut loss = log_loss(y, yhat)?;
    if include_l2 {
        loss += l2_penalty(model, lambda);
    }
    Ok(loss)
}
