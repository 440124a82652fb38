//! Plain-text model checkpoints.
//!
//! A checkpoint is a deterministic, human-inspectable dump of every
//! parameter block of a [`Model`]:
//!
//! ```text
//! pnnlab-v1 <kind> <n_fields> <embedding_order> <d1> <d2> <activation>
//! block <name> <rows> <cols>
//! <cols space-separated values>   (x rows lines)
//! block <name> <rows> <cols>
//! ...
//! ```
//!
//! Values are written with `f64`'s `Display`, which produces the shortest
//! decimal string that parses back to the identical bit pattern, so a
//! save/load round trip is bit-exact. Structure that is not part of the
//! header is recovered from the blocks themselves: the hidden-layer count
//! from the number of `h{t}_w` blocks, the product order `K` from
//! `theta` columns over `n_fields`, and the pnn-star concatenation flag
//! from the first-layer bias height.
//!
//! Loading takes the field schema the model will run against; block
//! shapes are checked against a freshly initialized skeleton for that
//! schema, so a checkpoint saved for one layout cannot be silently
//! applied to another.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::data::FieldSchema;
use crate::error::{Error, Result};
use crate::model::{Model, ModelKind};
use crate::models::Activation;
use crate::numkit::Rng;
use crate::training::TrainConfig;

/// Magic token opening every checkpoint file.
const MAGIC: &str = "pnnlab-v1";

/// Serializes `model` to `w` in the `pnnlab-v1` text format.
///
/// Fails with [`Error::NonFinite`] if any parameter is NaN/Inf — a
/// checkpoint of a diverged model would be useless and the loader
/// rejects such values anyway.
pub fn write_checkpoint<W: Write>(model: &Model, mut w: W) -> Result<()> {
    let (n, m, d1, d2, act) = header_fields(model);
    writeln!(
        w,
        "{MAGIC} {} {} {} {} {} {}",
        model.kind().name(),
        n,
        m,
        d1,
        d2,
        act
    )?;
    for b in model.blocks() {
        writeln!(w, "block {} {} {}", b.name, b.rows, b.cols)?;
        for r in 0..b.rows {
            let row = &b.data[r * b.cols..(r + 1) * b.cols];
            let mut line = String::new();
            for (j, v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return Err(Error::NonFinite(format!(
                        "block '{}' row {} col {} is {v}",
                        b.name, r, j
                    )));
                }
                if j > 0 {
                    line.push(' ');
                }
                line.push_str(&v.to_string());
            }
            writeln!(w, "{line}")?;
        }
    }
    Ok(())
}

/// Saves `model` to `path` (see [`write_checkpoint`] for the format).
pub fn save_checkpoint<P: AsRef<Path>>(model: &Model, path: P) -> Result<()> {
    let f = File::create(path)?;
    let mut w = BufWriter::new(f);
    write_checkpoint(model, &mut w)?;
    w.flush()?;
    Ok(())
}

/// Header fields `(n_fields, embedding_order, d1, d2, activation)`.
///
/// LR has no embeddings or layers, so it writes zeros and `identity`;
/// FM writes its latent order as `m` with zero layer widths.
fn header_fields(model: &Model) -> (usize, usize, usize, usize, &'static str) {
    match model {
        Model::Lr(p) => (p.n_fields(), 0, 0, 0, "identity"),
        Model::Fm(p) => (p.n_fields(), p.order(), 0, 0, "identity"),
        Model::Fnn(p) => (
            p.embedding.n_fields(),
            p.embedding.order(),
            p.d1(),
            p.head.out.w.cols(),
            p.head.activation.name(),
        ),
        Model::Ipnn(p) => (
            p.embedding.n_fields(),
            p.embedding.order(),
            p.d1(),
            p.head.out.w.cols(),
            p.head.activation.name(),
        ),
        Model::Opnn(p) => (
            p.embedding.n_fields(),
            p.embedding.order(),
            p.d1(),
            p.head.out.w.cols(),
            p.head.activation.name(),
        ),
        Model::PnnStar(p) => (
            p.embedding.n_fields(),
            p.embedding.order(),
            p.d1(),
            p.head.out.w.cols(),
            p.head.activation.name(),
        ),
    }
}

/// One parsed `block` section.
struct RawBlock {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
    /// 1-based line of the `block` header, for error messages.
    line: usize,
}

/// Reads a checkpoint from `r` and reconstructs the model against
/// `schema`.
///
/// The schema must describe the same field layout the checkpoint was
/// saved for; every block must appear in the canonical order with the
/// exact shape of a freshly initialized model, and every value must be
/// finite.
pub fn read_checkpoint<R: BufRead>(r: R, schema: &FieldSchema) -> Result<Model> {
    let mut lines = r.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty checkpoint"))?
        .1
        .map(|h| (0usize, h))
        .map_err(Error::Io)?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() != 7 {
        return Err(parse_err(
            1,
            format!("header needs 7 tokens, found {}", toks.len()),
        ));
    }
    if toks[0] != MAGIC {
        return Err(parse_err(
            1,
            format!("bad magic '{}', expected '{MAGIC}'", toks[0]),
        ));
    }
    let kind = ModelKind::parse(toks[1])?;
    let n_fields = parse_usize(toks[2], 1, "n_fields")?;
    let m = parse_usize(toks[3], 1, "embedding_order")?;
    let d1 = parse_usize(toks[4], 1, "d1")?;
    let d2 = parse_usize(toks[5], 1, "d2")?;
    let activation = Activation::parse(toks[6])?;

    if n_fields != schema.n_fields() {
        return Err(Error::InvalidArg(format!(
            "checkpoint was saved for {n_fields} fields but the schema has {}",
            schema.n_fields()
        )));
    }

    let blocks = read_blocks(&mut lines)?;

    // Recover the structural knobs the header does not carry.
    let hidden_layers = 1 + blocks
        .iter()
        .filter(|b| b.name.starts_with('h') && b.name.ends_with("_w"))
        .count();
    let k_order = match blocks.iter().find(|b| b.name == "theta") {
        Some(t) => {
            if n_fields == 0 || t.cols % n_fields != 0 || t.cols == 0 {
                return Err(parse_err(
                    t.line,
                    format!(
                        "theta has {} columns, not a positive multiple of {n_fields} fields",
                        t.cols
                    ),
                ));
            }
            t.cols / n_fields
        }
        None => 1,
    };
    let concat = match kind {
        ModelKind::PnnStar => {
            let b1 = blocks.iter().find(|b| b.name == "b1");
            let theta = blocks.iter().find(|b| b.name == "theta");
            match (b1, theta) {
                (Some(b1), Some(theta)) => b1.rows == 2 * theta.rows,
                _ => false,
            }
        }
        _ => false,
    };

    // A fresh skeleton supplies the canonical block list; the RNG values
    // are immediately overwritten. LR/FM headers carry zero layer sizes,
    // so those knobs are clamped to the smallest legal config.
    let cfg = TrainConfig {
        embedding_order: m.max(1),
        d1: d1.max(1),
        d2: d2.max(1),
        hidden_layers,
        k_order,
        activation,
        pnn_star_concat: concat,
        ..TrainConfig::default()
    };
    let mut model = Model::init(kind, schema, &cfg, &mut Rng::new(0))?;

    let mut views = model.blocks_mut();
    if views.len() != blocks.len() {
        return Err(Error::InvalidArg(format!(
            "checkpoint has {} blocks but a {} model has {}",
            blocks.len(),
            kind.name(),
            views.len()
        )));
    }
    for (view, raw) in views.iter_mut().zip(&blocks) {
        if view.name != raw.name {
            return Err(parse_err(
                raw.line,
                format!("expected block '{}', found '{}'", view.name, raw.name),
            ));
        }
        if view.rows != raw.rows || view.cols != raw.cols {
            return Err(parse_err(
                raw.line,
                format!(
                    "block '{}' is {}x{} but the model expects {}x{}",
                    raw.name, raw.rows, raw.cols, view.rows, view.cols
                ),
            ));
        }
        view.data.copy_from_slice(&raw.data);
    }
    drop(views);

    Ok(model)
}

/// Loads a checkpoint from `path` (see [`read_checkpoint`]).
pub fn load_checkpoint<P: AsRef<Path>>(path: P, schema: &FieldSchema) -> Result<Model> {
    let f = File::open(path)?;
    read_checkpoint(BufReader::new(f), schema)
}

fn parse_err(line: usize, msg: impl Into<String>) -> Error {
    Error::Parse {
        line,
        msg: msg.into(),
    }
}

fn parse_usize(tok: &str, line: usize, what: &str) -> Result<usize> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(line, format!("{what}: '{tok}' is not a non-negative integer")))
}

/// Parses the `block` sections after the header. `lines` yields
/// `(0-based index, io::Result<String>)`; errors report 1-based lines.
fn read_blocks<I>(lines: &mut I) -> Result<Vec<RawBlock>>
where
    I: Iterator<Item = (usize, std::io::Result<String>)>,
{
    let mut blocks: Vec<RawBlock> = Vec::new();
    while let Some((idx, line)) = lines.next() {
        let lineno = idx + 1;
        let line = line.map_err(Error::Io)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 || toks[0] != "block" {
            return Err(parse_err(
                lineno,
                format!("expected 'block <name> <rows> <cols>', found '{line}'"),
            ));
        }
        let name = toks[1].to_string();
        let rows = parse_usize(toks[2], lineno, "rows")?;
        let cols = parse_usize(toks[3], lineno, "cols")?;
        if rows == 0 || cols == 0 {
            return Err(parse_err(lineno, format!("block '{name}' has a zero dimension")));
        }
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let (ridx, row) = lines.next().ok_or_else(|| {
                parse_err(
                    lineno,
                    format!("block '{name}' ends after {r} of {rows} rows"),
                )
            })?;
            let row = row.map_err(Error::Io)?;
            let rlineno = ridx + 1;
            let mut count = 0;
            for tok in row.split_whitespace() {
                let v: f64 = tok.parse().map_err(|_| {
                    parse_err(rlineno, format!("'{tok}' is not a number (block '{name}')"))
                })?;
                if !v.is_finite() {
                    return Err(parse_err(
                        rlineno,
                        format!("non-finite value '{tok}' in block '{name}'"),
                    ));
                }
                data.push(v);
                count += 1;
            }
            if count != cols {
                return Err(parse_err(
                    rlineno,
                    format!("block '{name}' row {r} has {count} values, expected {cols}"),
                ));
            }
        }
        blocks.push(RawBlock {
            name,
            rows,
            cols,
            data,
            line: lineno,
        });
    }
    if blocks.is_empty() {
        return Err(parse_err(2, "checkpoint has no blocks"));
    }
    Ok(blocks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SparseSample;

    fn schema() -> FieldSchema {
        FieldSchema::numeric(&[("a", 3), ("b", 5), ("c", 2), ("d", 4)]).unwrap()
    }

    fn test_config() -> TrainConfig {
        TrainConfig {
            embedding_order: 3,
            d1: 4,
            d2: 3,
            hidden_layers: 3,
            ..TrainConfig::default()
        }
    }

    /// Initializes a model and overwrites every parameter (including the
    /// zero-initialized biases) with random values so the round trip is
    /// exercised on fully populated blocks.
    fn random_model(kind: ModelKind, cfg: &TrainConfig) -> Model {
        let schema = schema();
        let mut rng = Rng::new(99);
        let mut model = Model::init(kind, &schema, cfg, &mut rng).unwrap();
        for b in model.blocks_mut() {
            for v in b.data.iter_mut() {
                *v = rng.uniform(-0.7, 0.7);
            }
        }
        model
    }

    fn save_to_string(model: &Model) -> String {
        let mut buf = Vec::new();
        write_checkpoint(model, &mut buf).unwrap();
        String::from_utf8(buf).unwrap()
    }

    fn load_from_str(text: &str) -> Result<Model> {
        read_checkpoint(text.as_bytes(), &schema())
    }

    fn assert_models_bit_equal(a: &Model, b: &Model) {
        assert_eq!(a.kind(), b.kind());
        let (va, vb) = (a.blocks(), b.blocks());
        assert_eq!(va.len(), vb.len());
        for (x, y) in va.iter().zip(vb.iter()) {
            assert_eq!(x.name, y.name);
            assert_eq!((x.rows, x.cols), (y.rows, y.cols));
            for (p, q) in x.data.iter().zip(y.data.iter()) {
                assert_eq!(p.to_bits(), q.to_bits(), "block {} differs", x.name);
            }
        }
    }

    #[test]
    fn round_trip_is_bit_exact_for_every_kind() {
        for kind in ModelKind::ALL {
            let model = random_model(kind, &test_config());
            let text = save_to_string(&model);
            let loaded = load_from_str(&text).unwrap();
            assert_models_bit_equal(&model, &loaded);
            // Saving the loaded model reproduces the file byte for byte.
            assert_eq!(text, save_to_string(&loaded));
        }
    }

    #[test]
    fn round_trip_preserves_predictions() {
        let s = SparseSample::new(1, vec![2, 4, 0, 3]);
        for kind in ModelKind::ALL {
            let model = random_model(kind, &test_config());
            let loaded = load_from_str(&save_to_string(&model)).unwrap();
            let a = model.predict(&s);
            let b = loaded.predict(&s);
            assert_eq!(a.to_bits(), b.to_bits(), "{} prediction drifted", kind.name());
        }
    }

    #[test]
    fn k_order_is_recovered_from_theta_shape() {
        let cfg = TrainConfig {
            k_order: 3,
            ..test_config()
        };
        let model = random_model(ModelKind::Ipnn, &cfg);
        let loaded = load_from_str(&save_to_string(&model)).unwrap();
        match &loaded {
            Model::Ipnn(p) => assert_eq!(p.k_order, 3),
            _ => panic!("kind changed"),
        }
        assert_models_bit_equal(&model, &loaded);
    }

    #[test]
    fn concat_flag_is_recovered_from_bias_height() {
        let cfg = TrainConfig {
            pnn_star_concat: true,
            ..test_config()
        };
        let model = random_model(ModelKind::PnnStar, &cfg);
        let loaded = load_from_str(&save_to_string(&model)).unwrap();
        match &loaded {
            Model::PnnStar(p) => {
                assert!(p.concat);
                assert_eq!(p.width(), 2 * p.d1());
            }
            _ => panic!("kind changed"),
        }
        assert_models_bit_equal(&model, &loaded);
    }

    #[test]
    fn single_hidden_layer_head_round_trips() {
        let cfg = TrainConfig {
            hidden_layers: 1,
            ..test_config()
        };
        let model = random_model(ModelKind::Opnn, &cfg);
        let loaded = load_from_str(&save_to_string(&model)).unwrap();
        assert_eq!(model.hidden_widths(), loaded.hidden_widths());
        assert_models_bit_equal(&model, &loaded);
    }

    #[test]
    fn file_round_trip_through_disk() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let model = random_model(ModelKind::PnnStar, &test_config());
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path, &schema()).unwrap();
        assert_models_bit_equal(&model, &loaded);
    }

    #[test]
    fn non_finite_parameters_are_rejected_on_save() {
        let mut model = random_model(ModelKind::Fnn, &test_config());
        let poisoned = {
            let mut views = model.blocks_mut();
            views[1].data[0] = f64::NAN;
            views[1].name.clone()
        };
        let mut buf = Vec::new();
        match write_checkpoint(&model, &mut buf) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains(&poisoned)),
            other => panic!("expected NonFinite, got {other:?}"),
        }
    }

    #[test]
    fn corrupt_files_are_rejected() {
        let model = random_model(ModelKind::Ipnn, &test_config());
        let good = save_to_string(&model);

        // Truncation mid-block.
        let truncated: String = good.lines().take(4).map(|l| format!("{l}\n")).collect();
        assert!(load_from_str(&truncated).is_err());

        // A value replaced by garbage.
        let garbled = good.replacen("0.", "zz.", 1);
        assert!(matches!(
            load_from_str(&garbled),
            Err(Error::Parse { .. })
        ));

        // A non-finite value.
        let lines: Vec<&str> = good.lines().collect();
        let mut with_inf: Vec<String> = lines.iter().map(|l| l.to_string()).collect();
        with_inf[2] = {
            let mut toks: Vec<&str> = lines[2].split_whitespace().collect();
            toks[0] = "inf";
            toks.join(" ")
        };
        assert!(matches!(
            load_from_str(&with_inf.join("\n")),
            Err(Error::Parse { .. })
        ));

        // Renamed block breaks the canonical order.
        let renamed = good.replacen("block wz", "block wq", 1);
        assert!(load_from_str(&renamed).is_err());

        // Wrong magic.
        let bad_magic = good.replacen(MAGIC, "pnnlab-v0", 1);
        assert!(matches!(
            load_from_str(&bad_magic),
            Err(Error::Parse { .. })
        ));

        // Unknown model kind.
        let bad_kind = good.replacen("ipnn", "ccpm", 1);
        assert!(load_from_str(&bad_kind).is_err());

        // Trailing garbage.
        let trailing = format!("{good}tail\n");
        assert!(matches!(
            load_from_str(&trailing),
            Err(Error::Parse { .. })
        ));
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let model = random_model(ModelKind::Fm, &test_config());
        let text = save_to_string(&model);

        // Wrong field count.
        let three = FieldSchema::numeric(&[("a", 3), ("b", 5), ("c", 2)]).unwrap();
        assert!(read_checkpoint(text.as_bytes(), &three).is_err());

        // Same field count, different cardinalities: the weight and latent
        // blocks no longer match the skeleton shapes.
        let skewed = FieldSchema::numeric(&[("a", 4), ("b", 5), ("c", 2), ("d", 4)]).unwrap();
        assert!(read_checkpoint(text.as_bytes(), &skewed).is_err());
    }
}
