//! Minibatch SGD with inverted dropout and early stopping.
//!
//! The loop is deliberately plain — no momentum, no adaptive step sizes — so
//! that runs are bitwise reproducible from `(data, config, seed)`: one RNG
//! drives initialization, per-epoch shuffles and dropout masks in a fixed
//! documented order, and all reductions are sequential f64 sums.

use std::time::Instant;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::{Model, ModelKind};
use crate::models::{Activation, DropoutMasks};
use crate::numkit::Rng;

/// Clamp applied to predictions inside the log loss.
pub const LOG_LOSS_CLAMP: f64 = 1e-12;

/// All training hyperparameters. `Default` gives the settings used by the
/// synthetic-benchmark comparisons.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Dropout rate on hidden-layer outputs; 0 disables dropout entirely
    /// (and draws nothing from the RNG).
    pub dropout: f64,
    /// L2 coefficient for the linear models (LR and FM); networks ignore it.
    pub l2: f64,
    pub seed: u64,
    pub activation: Activation,
    /// Embedding dimensionality `M` (also the FM latent order).
    pub embedding_order: usize,
    /// First hidden layer width.
    pub d1: usize,
    /// Width of the deeper hidden layers.
    pub d2: usize,
    /// Total hidden layer count including the first layer.
    pub hidden_layers: usize,
    /// Rank of the factorized inner-product weights.
    pub k_order: usize,
    /// Early stopping: stop after this many consecutive epochs without a new
    /// best validation log loss.
    pub patience: usize,
    /// PNN*: concatenate the inner and outer signals onto `2 * D1` nodes
    /// instead of adding them on `D1` nodes.
    pub pnn_star_concat: bool,
}

impl Default for TrainConfig {
    fn default() -> TrainConfig {
        TrainConfig {
            learning_rate: 0.01,
            batch_size: 256,
            epochs: 10,
            dropout: 0.5,
            l2: 1e-4,
            seed: 1,
            activation: Activation::Relu,
            embedding_order: 10,
            d1: 64,
            d2: 32,
            hidden_layers: 3,
            k_order: 1,
            patience: 3,
            pnn_star_concat: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::InvalidArg(format!(
                "learning_rate must be positive and finite, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidArg("batch_size must be at least 1".into()));
        }
        if self.epochs == 0 {
            return Err(Error::InvalidArg("epochs must be at least 1".into()));
        }
        if !(self.dropout >= 0.0 && self.dropout < 1.0) {
            return Err(Error::InvalidArg(format!(
                "dropout must be in [0, 1), got {}",
                self.dropout
            )));
        }
        if !(self.l2.is_finite() && self.l2 >= 0.0) {
            return Err(Error::InvalidArg(format!("l2 must be nonnegative, got {}", self.l2)));
        }
        if self.embedding_order == 0
            || self.d1 == 0
            || self.d2 == 0
            || self.hidden_layers == 0
            || self.k_order == 0
            || self.patience == 0
        {
            return Err(Error::InvalidArg(
                "embedding_order, d1, d2, hidden_layers, k_order and patience must all be at least 1"
                    .into(),
            ));
        }
        Ok(())
    }
}

/// Log loss of one prediction, with the prediction clamped to
/// `[1e-12, 1 - 1e-12]`. NaN predictions propagate (the training loop turns
/// them into a divergence error). Labels other than 0/1 are rejected.
pub fn log_loss(y: u8, yhat: f64) -> Result<f64> {
    if y > 1 {
        return Err(Error::InvalidArg(format!("label must be 0 or 1, got {y}")));
    }
    let p = yhat.clamp(LOG_LOSS_CLAMP, 1.0 - LOG_LOSS_CLAMP);
    Ok(if y == 1 { -p.ln() } else { -(1.0 - p).ln() })
}

/// Inverted dropout mask: each entry is `0` with probability `rate` and
/// `1 / (1 - rate)` otherwise, so masked activations keep their expectation
/// and evaluation needs no rescaling. `rate == 0` returns an all-ones mask
/// without consuming randomness.
pub fn dropout_mask(width: usize, rate: f64, rng: &mut Rng) -> Result<Vec<f64>> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::InvalidArg(format!("dropout rate must be in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(vec![1.0; width]);
    }
    let scale = 1.0 / (1.0 - rate);
    Ok((0..width).map(|_| if rng.bernoulli(rate) { 0.0 } else { scale }).collect())
}

/// `lambda * sum(w^2)` over the L2-regularized parameters (zero for the
/// network models, which rely on dropout).
pub fn l2_penalty(model: &Model, lambda: f64) -> f64 {
    lambda * model.sq_weight_norm()
}

/// One SGD step: `params -= learning_rate * grads`, block by block.
pub fn sgd_step(params: &mut Model, grads: &Model, learning_rate: f64) -> Result<()> {
    if params.kind() != grads.kind() {
        return Err(Error::InvalidArg("sgd_step: parameter/gradient model mismatch".into()));
    }
    let gblocks = grads.blocks();
    for (p, g) in params.blocks_mut().iter_mut().zip(&gblocks) {
        debug_assert_eq!(p.name, g.name);
        for (pv, gv) in p.data.iter_mut().zip(g.data) {
            *pv -= learning_rate * gv;
        }
    }
    Ok(())
}

/// Per-epoch training record.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_logloss: f64,
    pub val_logloss: f64,
    pub val_auc: f64,
    /// Wall-clock epoch time; the only non-deterministic column.
    pub seconds: f64,
}

/// Full training record: one row per completed epoch plus the index of the
/// epoch whose parameters were kept.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainLog {
    pub const CSV_HEADER: &'static str = "epoch,train_logloss,val_logloss,val_auc,seconds";

    pub fn to_csv(&self) -> String {
        let mut out = String::from(Self::CSV_HEADER);
        out.push('\n');
        for e in &self.epochs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                e.epoch, e.train_logloss, e.val_logloss, e.val_auc, e.seconds
            ));
        }
        out
    }

    pub fn best(&self) -> &EpochLog {
        &self.epochs[self.best_epoch - 1]
    }
}

/// Trains a freshly initialized model.
///
/// Deterministic procedure (single RNG seeded with `cfg.seed`):
/// 1. initialize parameters;
/// 2. each epoch: shuffle sample indices, then for each minibatch draw
///    dropout masks per sample (hidden layers in forward order), average the
///    per-sample gradients, and take one SGD step;
/// 3. after each epoch, score the validation set in evaluation mode (no
///    dropout) and record log loss and AUC;
/// 4. keep the parameters of the epoch with the lowest validation log loss,
///    stopping early after `cfg.patience` epochs without improvement.
///
/// NaN in the training loss or parameters raises [`Error::Diverged`].
pub fn train(
    kind: ModelKind,
    train_ds: &Dataset,
    val_ds: &Dataset,
    cfg: &TrainConfig,
) -> Result<(Model, TrainLog)> {
    cfg.validate()?;
    if train_ds.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if val_ds.is_empty() {
        return Err(Error::InvalidArg("validation dataset is empty".into()));
    }
    if !train_ds.schema.layout_matches(&val_ds.schema) {
        return Err(Error::SchemaMismatch(
            "training and validation datasets have different field layouts".into(),
        ));
    }

    let mut rng = Rng::new(cfg.seed);
    let mut params = Model::init(kind, &train_ds.schema, cfg, &mut rng)?;
    let mut grads = params.zeros_like();
    let hidden_widths = params.hidden_widths();
    let use_dropout = cfg.dropout > 0.0 && !hidden_widths.is_empty();

    let mut indices: Vec<usize> = (0..train_ds.len()).collect();
    let mut log = TrainLog { epochs: Vec::new(), best_epoch: 0 };
    let mut best_val = f64::INFINITY;
    let mut best_params = params.clone();
    let mut stale_epochs = 0;

    for epoch in 1..=cfg.epochs {
        let started = Instant::now();
        rng.shuffle(&mut indices);
        let mut loss_sum = 0.0;
        for batch in indices.chunks(cfg.batch_size) {
            grads.set_zero();
            for &idx in batch {
                let s = &train_ds.samples[idx];
                let masks = if use_dropout {
                    let drawn = hidden_widths
                        .iter()
                        .map(|&w| dropout_mask(w, cfg.dropout, &mut rng))
                        .collect::<Result<Vec<_>>>()?;
                    Some(DropoutMasks { masks: drawn })
                } else {
                    None
                };
                let cache = params.forward_train(s, masks.as_ref());
                let loss = log_loss(s.label, cache.yhat())?;
                if loss.is_nan() {
                    return Err(Error::Diverged { epoch });
                }
                loss_sum += loss;
                params.backward(s, s.label, &cache, masks.as_ref(), cfg.l2, &mut grads)?;
            }
            grads.scale(1.0 / batch.len() as f64);
            sgd_step(&mut params, &grads, cfg.learning_rate)?;
        }
        if params.has_non_finite() {
            return Err(Error::Diverged { epoch });
        }
        let train_logloss = loss_sum / train_ds.len() as f64;

        // Validation pass, evaluation mode.
        let mut val_loss_sum = 0.0;
        let mut pairs = Vec::with_capacity(val_ds.len());
        for s in &val_ds.samples {
            let yhat = params.predict(s);
            val_loss_sum += log_loss(s.label, yhat)?;
            pairs.push((s.label, yhat));
        }
        let val_logloss = val_loss_sum / val_ds.len() as f64;
        if val_logloss.is_nan() {
            return Err(Error::Diverged { epoch });
        }
        let val_auc = metrics::auc(&pairs)?;

        log.epochs.push(EpochLog {
            epoch,
            train_logloss,
            val_logloss,
            val_auc,
            seconds: started.elapsed().as_secs_f64(),
        });

        if val_logloss < best_val {
            best_val = val_logloss;
            best_params = params.clone();
            log.best_epoch = epoch;
            stale_epochs = 0;
        } else {
            stale_epochs += 1;
            if stale_epochs >= cfg.patience {
                break;
            }
        }
    }

    Ok((best_params, log))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synth_generate, FieldSchema, SparseSample, SynthConfig};

    #[test]
    fn log_loss_clamps_and_validates() {
        assert!((log_loss(1, 0.5).unwrap() - 0.5f64.ln().abs()).abs() < 1e-15);
        // Exactly wrong predictions are clamped, not infinite.
        let worst = log_loss(1, 0.0).unwrap();
        assert!((worst - (-(1e-12f64).ln())).abs() < 1e-3);
        assert!(log_loss(0, 1.0).unwrap().is_finite());
        assert!(log_loss(2, 0.5).is_err());
        assert!(log_loss(1, f64::NAN).unwrap().is_nan());
    }

    #[test]
    fn dropout_mask_semantics() {
        let mut rng = Rng::new(8);
        // rate 0: all ones, and no randomness consumed.
        let before = rng.clone();
        let m = dropout_mask(5, 0.0, &mut rng).unwrap();
        assert_eq!(m, vec![1.0; 5]);
        assert_eq!(rng, before);
        // rate 0.5: entries are exactly 0 or 2, roughly half each.
        let m = dropout_mask(10_000, 0.5, &mut rng).unwrap();
        assert!(m.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = m.iter().filter(|&&v| v != 0.0).count();
        assert!((4e3..6e3).contains(&(kept as f64)), "kept {kept} of 10000");
        // Expectation preserved: mean of mask near 1.
        let mean: f64 = m.iter().sum::<f64>() / m.len() as f64;
        assert!((mean - 1.0).abs() < 0.1);
        assert!(dropout_mask(3, 1.0, &mut rng).is_err());
        assert!(dropout_mask(3, -0.1, &mut rng).is_err());
    }

    #[test]
    fn config_validation_catches_bad_values() {
        assert!(TrainConfig::default().validate().is_ok());
        for mutate in [
            Box::new(|c: &mut TrainConfig| c.learning_rate = 0.0) as Box<dyn Fn(&mut TrainConfig)>,
            Box::new(|c: &mut TrainConfig| c.learning_rate = f64::NAN),
            Box::new(|c: &mut TrainConfig| c.batch_size = 0),
            Box::new(|c: &mut TrainConfig| c.epochs = 0),
            Box::new(|c: &mut TrainConfig| c.dropout = 1.0),
            Box::new(|c: &mut TrainConfig| c.dropout = -0.2),
            Box::new(|c: &mut TrainConfig| c.l2 = -1.0),
            Box::new(|c: &mut TrainConfig| c.k_order = 0),
            Box::new(|c: &mut TrainConfig| c.patience = 0),
        ] {
            let mut c = TrainConfig::default();
            mutate(&mut c);
            assert!(c.validate().is_err());
        }
    }

    fn tiny_config() -> TrainConfig {
        TrainConfig {
            epochs: 3,
            batch_size: 32,
            dropout: 0.0,
            embedding_order: 4,
            d1: 8,
            d2: 4,
            ..TrainConfig::default()
        }
    }

    fn tiny_data() -> (Dataset, Dataset) {
        let ds = synth_generate(&SynthConfig {
            n_fields: 4,
            cardinality: 5,
            n_samples: 600,
            seed: 4,
            ..SynthConfig::default()
        })
        .unwrap()
        .0;
        ds.split_tail(100).unwrap()
    }

    #[test]
    fn training_is_bitwise_deterministic() {
        let (train_ds, val_ds) = tiny_data();
        let cfg = TrainConfig { dropout: 0.5, ..tiny_config() };
        let (m1, log1) = train(ModelKind::Ipnn, &train_ds, &val_ds, &cfg).unwrap();
        let (m2, log2) = train(ModelKind::Ipnn, &train_ds, &val_ds, &cfg).unwrap();
        assert_eq!(m1, m2);
        assert_eq!(log1.epochs.len(), log2.epochs.len());
        for (a, b) in log1.epochs.iter().zip(&log2.epochs) {
            assert_eq!(a.train_logloss, b.train_logloss);
            assert_eq!(a.val_logloss, b.val_logloss);
            assert_eq!(a.val_auc, b.val_auc);
        }
    }

    #[test]
    fn training_reduces_loss_on_learnable_data() {
        let (train_ds, val_ds) = tiny_data();
        let cfg = TrainConfig { epochs: 5, learning_rate: 0.1, ..tiny_config() };
        let (_, log) = train(ModelKind::Lr, &train_ds, &val_ds, &cfg).unwrap();
        let first = log.epochs.first().unwrap().train_logloss;
        let last = log.epochs.last().unwrap().train_logloss;
        assert!(last < first, "loss did not decrease: {first} -> {last}");
    }

    #[test]
    fn early_stopping_respects_patience() {
        let (train_ds, val_ds) = tiny_data();
        // A huge learning rate makes validation loss erratic; with
        // patience 1 the loop must stop at the first non-improvement.
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 25.0,
            patience: 1,
            ..tiny_config()
        };
        match train(ModelKind::Lr, &train_ds, &val_ds, &cfg) {
            Ok((_, log)) => {
                assert!(log.epochs.len() < 50, "never stopped early");
                let best = log.best_epoch;
                assert!(log.epochs.len() <= best + 1);
            }
            // Divergence is also an acceptable outcome at lr = 25.
            Err(Error::Diverged { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn best_parameters_are_kept_not_last() {
        let (train_ds, val_ds) = tiny_data();
        let cfg = TrainConfig { epochs: 6, learning_rate: 5.0, patience: 5, ..tiny_config() };
        if let Ok((model, log)) = train(ModelKind::Fm, &train_ds, &val_ds, &cfg) {
            // Recompute validation loss of the returned parameters: must
            // equal the best epoch's recorded value.
            let mut sum = 0.0;
            for s in &val_ds.samples {
                sum += log_loss(s.label, model.predict(s)).unwrap();
            }
            let val = sum / val_ds.len() as f64;
            assert_eq!(val, log.best().val_logloss);
            let min = log
                .epochs
                .iter()
                .map(|e| e.val_logloss)
                .fold(f64::INFINITY, f64::min);
            assert_eq!(val, min);
        }
    }

    #[test]
    fn empty_and_mismatched_datasets_are_rejected() {
        let (train_ds, val_ds) = tiny_data();
        let schema = train_ds.schema.clone();
        let empty = Dataset::new(schema, Vec::new()).unwrap();
        let cfg = tiny_config();
        assert!(matches!(
            train(ModelKind::Lr, &empty, &val_ds, &cfg),
            Err(Error::EmptyDataset)
        ));
        assert!(train(ModelKind::Lr, &train_ds, &empty, &cfg).is_err());
        let other_schema = FieldSchema::numeric(&[("z", 9)]).unwrap();
        let other = Dataset::new(other_schema, vec![SparseSample::new(0, vec![1])]).unwrap();
        assert!(matches!(
            train(ModelKind::Lr, &train_ds, &other, &cfg),
            Err(Error::SchemaMismatch(_))
        ));
    }

    #[test]
    fn divergence_is_reported_with_epoch() {
        let (train_ds, val_ds) = tiny_data();
        // An absurd learning rate overflows the product terms into NaN. Tanh
        // is used deliberately: relu maps a NaN pre-activation to 0.0
        // (`NaN > 0.0` is false), which hides the overflow from the loss and
        // lets the run saturate finitely instead of diverging; tanh passes
        // NaN through to the prediction, so the NaN-loss check fires.
        let cfg = TrainConfig {
            epochs: 30,
            learning_rate: 1e200,
            dropout: 0.0,
            activation: Activation::Tanh,
            ..tiny_config()
        };
        match train(ModelKind::Ipnn, &train_ds, &val_ds, &cfg) {
            Err(Error::Diverged { epoch }) => assert!(epoch >= 1),
            Ok(_) => panic!("expected divergence at learning rate 1e200"),
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn train_log_csv_format() {
        let log = TrainLog {
            epochs: vec![EpochLog {
                epoch: 1,
                train_logloss: 0.5,
                val_logloss: 0.25,
                val_auc: 0.75,
                seconds: 0.125,
            }],
            best_epoch: 1,
        };
        let csv = log.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "epoch,train_logloss,val_logloss,val_auc,seconds");
        assert_eq!(lines.next().unwrap(), "1,0.5,0.25,0.75,0.125");
    }

    /// The documented objective: sgd moves parameters exactly by
    /// `-lr * mean(batch gradients)`.
    #[test]
    fn sgd_step_applies_scaled_gradient() {
        let schema = FieldSchema::numeric(&[("a", 3), ("b", 2)]).unwrap();
        let cfg = tiny_config();
        let mut m = Model::init(ModelKind::Lr, &schema, &cfg, &mut Rng::new(5)).unwrap();
        let before = m.clone();
        let mut g = m.zeros_like();
        let s = SparseSample::new(1, vec![0, 1]);
        let cache = m.forward_train(&s, None);
        m.backward(&s, 1, &cache, None, 0.0, &mut g).unwrap();
        sgd_step(&mut m, &g, 0.1).unwrap();
        for (pb, (pa, gb)) in before
            .blocks()
            .iter()
            .zip(m.blocks().iter().zip(g.blocks().iter()))
        {
            for i in 0..pb.data.len() {
                assert!((pa.data[i] - (pb.data[i] - 0.1 * gb.data[i])).abs() < 1e-15);
            }
        }
        // Mismatched kinds are rejected.
        let other = Model::init(ModelKind::Fm, &schema, &cfg, &mut Rng::new(5)).unwrap();
        assert!(sgd_step(&mut m, &other, 0.1).is_err());
    }
}
