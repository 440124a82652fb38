//! `pnnlab` — train and evaluate product-based neural networks and their
//! baselines on multi-field categorical data.
//!
//! Five subcommands cover the full workflow:
//!
//! * `synth` — generate a synthetic click-through dataset with planted
//!   additive and pairwise structure.
//! * `train` — fit any of the six model kinds with minibatch SGD and
//!   write a checkpoint plus a per-epoch log.
//! * `eval` — score a checkpoint on a dataset and print the metric row.
//! * `gradcheck` — verify analytic gradients against finite differences.
//! * `bench` — time the product-layer forms across field counts and fit
//!   their empirical growth exponents.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including training
//! divergence and a failed gradient check), 2 on usage errors.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};

use pnnlab::checkpoint::{load_checkpoint, save_checkpoint};
use pnnlab::data::{
    load_dataset, load_schema, save_dataset, save_probs, save_schema, synth_generate, Dataset,
    SynthConfig,
};
use pnnlab::gradcheck::{grad_check, GradCheckConfig};
use pnnlab::metrics::{evaluate, MetricsReport};
use pnnlab::models::Activation;
use pnnlab::product::scaling::{run_scaling, LpForm, ScalingConfig, ScalingRun, DEFAULT_N_VALUES};
use pnnlab::training::{train, TrainConfig};
use pnnlab::ModelKind;

#[derive(Parser)]
#[command(
    name = "pnnlab",
    version,
    about = "Product-based neural networks for multi-field categorical data"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic dataset with planted category structure.
    Synth(SynthArgs),
    /// Train a model and write a checkpoint plus an epoch log.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset and print a metrics CSV row.
    Eval(EvalArgs),
    /// Compare analytic gradients against central finite differences.
    Gradcheck(GradcheckArgs),
    /// Time the product-layer forms and fit their growth exponents.
    Bench(BenchArgs),
}

/// The trainable model kinds. `pnnstar` is accepted as an alias for
/// `pnn-star`.
#[derive(Clone, Copy, Debug, ValueEnum)]
enum ModelArg {
    Lr,
    Fm,
    Fnn,
    Ipnn,
    Opnn,
    #[value(alias = "pnnstar")]
    PnnStar,
}

impl From<ModelArg> for ModelKind {
    fn from(m: ModelArg) -> ModelKind {
        match m {
            ModelArg::Lr => ModelKind::Lr,
            ModelArg::Fm => ModelKind::Fm,
            ModelArg::Fnn => ModelKind::Fnn,
            ModelArg::Ipnn => ModelKind::Ipnn,
            ModelArg::Opnn => ModelKind::Opnn,
            ModelArg::PnnStar => ModelKind::PnnStar,
        }
    }
}

#[derive(Args)]
struct SynthArgs {
    /// Number of categorical fields.
    #[arg(long, default_value_t = 8, value_parser = clap::value_parser!(usize))]
    fields: usize,
    /// Categories per field.
    #[arg(long, default_value_t = 10)]
    cardinality: usize,
    /// Training samples to generate.
    #[arg(long, default_value_t = 50_000, value_parser = parse_positive_usize)]
    samples: usize,
    /// Extra held-out samples drawn from the same planted model, written
    /// to `<out>.test.data` / `<out>.test.probs`.
    #[arg(long, default_value_t = 0)]
    test_samples: usize,
    /// Scale of the planted pairwise-interaction signal.
    #[arg(long, default_value_t = 5.0, value_parser = parse_nonneg_f64)]
    interaction: f64,
    /// Scale of the planted per-category additive signal.
    #[arg(long, default_value_t = 1.0, value_parser = parse_nonneg_f64)]
    additive: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output path prefix; writes `<out>.data`, `<out>.schema`,
    /// `<out>.probs`.
    #[arg(long)]
    out: String,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Training dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Field schema file.
    #[arg(long)]
    schema: PathBuf,
    /// Validation dataset; when omitted, the tail of `--data` is held out.
    #[arg(long)]
    val_data: Option<PathBuf>,
    /// Fraction of `--data` held out as the validation tail when no
    /// `--val-data` is given.
    #[arg(long, default_value_t = 0.1, value_parser = parse_fraction)]
    val_fraction: f64,
    /// Checkpoint output path.
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch training log (CSV).
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long, default_value_t = 0.01, value_parser = parse_positive_f64)]
    learning_rate: f64,
    #[arg(long, default_value_t = 256, value_parser = parse_positive_usize)]
    batch_size: usize,
    #[arg(long, default_value_t = 10, value_parser = parse_positive_usize)]
    epochs: usize,
    /// Dropout rate on hidden activations, in [0, 1).
    #[arg(long, default_value_t = 0.5, value_parser = parse_rate)]
    dropout: f64,
    /// L2 strength (applied by LR and FM only).
    #[arg(long, default_value_t = 1e-4, value_parser = parse_nonneg_f64)]
    l2: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// First-layer / hidden activation: relu, tanh, sigmoid or identity.
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    activation: Activation,
    /// Embedding order M.
    #[arg(long, default_value_t = 10, value_parser = parse_positive_usize)]
    embedding_order: usize,
    /// First-layer width D1.
    #[arg(long, default_value_t = 64, value_parser = parse_positive_usize)]
    d1: usize,
    /// Hidden width D2.
    #[arg(long, default_value_t = 32, value_parser = parse_positive_usize)]
    d2: usize,
    /// Total hidden layers including the first product layer.
    #[arg(long, default_value_t = 3, value_parser = parse_positive_usize)]
    hidden_layers: usize,
    /// Product order K of the inner-product decomposition.
    #[arg(long, default_value_t = 1, value_parser = parse_positive_usize)]
    k: usize,
    /// Consecutive non-improving epochs before early stop.
    #[arg(long, default_value_t = 3, value_parser = parse_positive_usize)]
    patience: usize,
    /// PNN*: concatenate inner and outer signals instead of adding them.
    #[arg(long)]
    concat: bool,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint to evaluate.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    schema: PathBuf,
    /// Negative down-sampling ratio the model was trained under; below 1
    /// the predictions are recalibrated back to the original prior.
    #[arg(long, default_value_t = 1.0, value_parser = parse_ratio)]
    downsampling_ratio: f64,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, value_enum)]
    model: ModelArg,
    /// Product order K (ipnn / pnn-star).
    #[arg(long, default_value_t = 1, value_parser = parse_positive_usize)]
    k: usize,
    #[arg(long, default_value = "relu", value_parser = parse_activation)]
    activation: Activation,
    /// Independent (parameters, sample) draws.
    #[arg(long, default_value_t = 10, value_parser = parse_positive_usize)]
    draws: usize,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// L2 strength included in the objective for LR and FM.
    #[arg(long, default_value_t = 0.0, value_parser = parse_nonneg_f64)]
    lambda: f64,
    /// Deliberately corrupt the analytic gradients; the check must then
    /// fail (harness self-test).
    #[arg(long, hide = true)]
    corrupt: bool,
}

#[derive(Args)]
struct BenchArgs {
    /// Product-layer forms to time (default: all four).
    #[arg(long, value_parser = parse_form, value_delimiter = ',')]
    form: Vec<LpForm>,
    /// Field counts to sweep.
    #[arg(long, value_delimiter = ',', value_parser = parse_positive_usize)]
    n_values: Vec<usize>,
    /// Embedding order M.
    #[arg(long, default_value_t = 10, value_parser = parse_positive_usize)]
    embedding_order: usize,
    /// Product nodes D1.
    #[arg(long, default_value_t = 32, value_parser = parse_positive_usize)]
    d1: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Minimum milliseconds of wall time per measured point.
    #[arg(long, default_value_t = 30.0, value_parser = parse_positive_f64)]
    min_point_ms: f64,
}

fn parse_positive_usize(s: &str) -> Result<usize, String> {
    match s.parse::<usize>() {
        Ok(v) if v >= 1 => Ok(v),
        Ok(v) => Err(format!("must be at least 1, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_positive_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v > 0.0 => Ok(v),
        Ok(v) => Err(format!("must be positive and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_nonneg_f64(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() && v >= 0.0 => Ok(v),
        Ok(v) => Err(format!("must be nonnegative and finite, got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

/// Dropout-style rate in `[0, 1)`.
fn parse_rate(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v >= 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("must be in [0, 1), got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

/// Down-sampling ratio in `(0, 1]`.
fn parse_ratio(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v <= 1.0 => Ok(v),
        Ok(v) => Err(format!("must be in (0, 1], got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

/// Held-out fraction in `(0, 1)`.
fn parse_fraction(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(v) if v > 0.0 && v < 1.0 => Ok(v),
        Ok(v) => Err(format!("must be in (0, 1), got {v}")),
        Err(e) => Err(e.to_string()),
    }
}

fn parse_activation(s: &str) -> Result<Activation, String> {
    Activation::parse(s).map_err(|e| e.to_string())
}

fn parse_form(s: &str) -> Result<LpForm, String> {
    LpForm::parse(s).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Synth(a) => cmd_synth(a),
        Cmd::Train(a) => cmd_train(a),
        Cmd::Eval(a) => cmd_eval(a),
        Cmd::Gradcheck(a) => cmd_gradcheck(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}

fn cmd_synth(a: SynthArgs) -> anyhow::Result<ExitCode> {
    let cfg = SynthConfig {
        n_fields: a.fields,
        cardinality: a.cardinality,
        n_samples: a.samples + a.test_samples,
        interaction_strength: a.interaction,
        additive_strength: a.additive,
        seed: a.seed,
    };
    let (full, probs) = synth_generate(&cfg)?;

    let schema_path = prefixed(&a.out, "schema");
    save_schema(&full.schema, &schema_path)
        .with_context(|| format!("writing {}", schema_path.display()))?;

    let write_split = |ds: &Dataset, p: &[f64], tag: Option<&str>| -> anyhow::Result<()> {
        let (data_ext, probs_ext) = match tag {
            Some(t) => (format!("{t}.data"), format!("{t}.probs")),
            None => ("data".to_string(), "probs".to_string()),
        };
        let data_path = prefixed(&a.out, &data_ext);
        save_dataset(ds, &data_path).with_context(|| format!("writing {}", data_path.display()))?;
        let probs_path = prefixed(&a.out, &probs_ext);
        save_probs(p, &probs_path).with_context(|| format!("writing {}", probs_path.display()))?;
        Ok(())
    };

    if a.test_samples > 0 {
        let (train_ds, test_ds) = full.split_tail(a.test_samples)?;
        write_split(&train_ds, &probs[..a.samples], None)?;
        write_split(&test_ds, &probs[a.samples..], Some("test"))?;
        println!(
            "wrote {} train / {} test samples, positive rate {:.4} / {:.4}",
            train_ds.len(),
            test_ds.len(),
            train_ds.base_rate(),
            test_ds.base_rate()
        );
    } else {
        write_split(&full, &probs, None)?;
        println!(
            "wrote {} samples, positive rate {:.4}",
            full.len(),
            full.base_rate()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_train(a: TrainArgs) -> anyhow::Result<ExitCode> {
    let schema = load_schema(&a.schema)
        .with_context(|| format!("loading schema {}", a.schema.display()))?;
    let ds = load_dataset(&a.data, &schema)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;

    let (train_ds, val_ds) = match &a.val_data {
        Some(p) => {
            let val = load_dataset(p, &schema)
                .with_context(|| format!("loading validation dataset {}", p.display()))?;
            (ds, val)
        }
        None => {
            let n_val = ((ds.len() as f64) * a.val_fraction).round().max(1.0) as usize;
            ds.split_tail(n_val)?
        }
    };

    let cfg = TrainConfig {
        learning_rate: a.learning_rate,
        batch_size: a.batch_size,
        epochs: a.epochs,
        dropout: a.dropout,
        l2: a.l2,
        seed: a.seed,
        activation: a.activation,
        embedding_order: a.embedding_order,
        d1: a.d1,
        d2: a.d2,
        hidden_layers: a.hidden_layers,
        k_order: a.k,
        patience: a.patience,
        pnn_star_concat: a.concat,
    };

    let (model, log) = train(a.model.into(), &train_ds, &val_ds, &cfg)?;

    save_checkpoint(&model, &a.out)
        .with_context(|| format!("writing checkpoint {}", a.out.display()))?;
    if let Some(p) = &a.log {
        std::fs::write(p, log.to_csv()).with_context(|| format!("writing log {}", p.display()))?;
    }
    let best = log.best();
    println!(
        "trained {} for {} epochs; best epoch {}: val_logloss={} val_auc={}",
        ModelKind::from(a.model).name(),
        log.epochs.len(),
        log.best_epoch,
        best.val_logloss,
        best.val_auc
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(a: EvalArgs) -> anyhow::Result<ExitCode> {
    let schema = load_schema(&a.schema)
        .with_context(|| format!("loading schema {}", a.schema.display()))?;
    let ds = load_dataset(&a.data, &schema)
        .with_context(|| format!("loading dataset {}", a.data.display()))?;
    let model = load_checkpoint(&a.checkpoint, &schema)
        .with_context(|| format!("loading checkpoint {}", a.checkpoint.display()))?;
    let report = evaluate(&model, &ds, a.downsampling_ratio)?;
    println!("{}", MetricsReport::CSV_HEADER);
    println!("{}", report.csv_row(model.kind().name()));
    Ok(ExitCode::SUCCESS)
}

fn cmd_gradcheck(a: GradcheckArgs) -> anyhow::Result<ExitCode> {
    let mut cfg = GradCheckConfig::for_kind(a.model.into());
    cfg.k_order = a.k;
    cfg.activation = a.activation;
    cfg.draws = a.draws;
    cfg.seed = a.seed;
    cfg.lambda = a.lambda;
    cfg.corrupt = a.corrupt;
    let report = grad_check(&cfg)?;
    print!("{}", report.to_text());
    Ok(if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_bench(a: BenchArgs) -> anyhow::Result<ExitCode> {
    let forms: Vec<LpForm> = if a.form.is_empty() {
        LpForm::ALL.to_vec()
    } else {
        a.form.clone()
    };
    let cfg = ScalingConfig {
        n_values: if a.n_values.is_empty() {
            DEFAULT_N_VALUES.to_vec()
        } else {
            a.n_values.clone()
        },
        m: a.embedding_order,
        d1: a.d1,
        seed: a.seed,
        min_point_seconds: a.min_point_ms / 1000.0,
    };
    println!("{}", ScalingRun::CSV_HEADER);
    let mut slopes = Vec::new();
    for form in forms {
        let run = run_scaling(form, &cfg)?;
        print!("{}", run.csv_rows());
        slopes.push((form, run.slope));
    }
    for (form, slope) in slopes {
        println!("# slope {} {:.3}", form.name(), slope);
    }
    Ok(ExitCode::SUCCESS)
}

/// `prefix.ext` as a path (the prefix itself may contain directories).
fn prefixed(prefix: &str, ext: &str) -> PathBuf {
    Path::new(&format!("{prefix}.{ext}")).to_path_buf()
}
