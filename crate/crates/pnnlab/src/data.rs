//! Multi-field categorical datasets: schema building, text serialization,
//! negative down-sampling with probability recalibration, and a seeded
//! synthetic generator with a planted pairwise-interaction signal.
//!
//! ## File formats
//!
//! **Dataset** files are UTF-8 text, one sample per line, whitespace
//! separated: `<label> <cat_field0> <cat_field1> ...` where the label is `0`
//! or `1`. Lines starting with `#` are comments; a structured comment
//! `# downsampling_ratio <w>` records the negative-sampling ratio so a
//! down-sampled dataset round-trips through serialization.
//!
//! **Schema** files mix two line kinds (plus `#` comments): two-token lines
//! `<field_name> <cardinality>` declare fields in order, and three-token
//! lines `<field_name> <category_string> <index>` populate the per-field
//! category dictionary. A field with no dictionary lines parses its
//! categories as raw decimal indices (the synthetic generator uses this
//! mode). For dictionary-mode fields built by [`build_schema`], the last
//! index (`cardinality - 1`) is a reserved "unknown" slot with no dictionary
//! entry: unseen category strings map there at parse time and serialize as
//! `<unk>`.
//!
//! **Probability** files carry one float per line (`#` comments allowed).

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numkit::{sigmoid, Rng};

/// Serialized stand-in for the reserved unknown category index.
const UNKNOWN_TOKEN: &str = "<unk>";

// ---------------------------------------------------------------------------
// Schema
// ---------------------------------------------------------------------------

/// One categorical field: a name, the number of one-hot slots it occupies,
/// and an optional string-to-index dictionary.
#[derive(Clone, Debug, PartialEq)]
pub struct Field {
    name: String,
    cardinality: usize,
    /// Empty map means "numeric mode": category tokens are decimal indices.
    dict: HashMap<String, usize>,
    /// Reserved index for unseen category strings, when one exists.
    unknown: Option<usize>,
}

impl Field {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn cardinality(&self) -> usize {
        self.cardinality
    }

    pub fn unknown_index(&self) -> Option<usize> {
        self.unknown
    }

    /// Maps a category token to its index within this field.
    fn encode(&self, token: &str) -> Option<usize> {
        if self.dict.is_empty() {
            match token.parse::<usize>() {
                Ok(idx) if idx < self.cardinality => Some(idx),
                _ => None,
            }
        } else {
            self.dict.get(token).copied().or(self.unknown)
        }
    }

    /// Inverse of `encode`, used by dataset serialization.
    fn decode(&self, idx: usize) -> String {
        debug_assert!(idx < self.cardinality);
        if self.dict.is_empty() {
            return idx.to_string();
        }
        if Some(idx) == self.unknown {
            return UNKNOWN_TOKEN.to_string();
        }
        self.dict
            .iter()
            .find(|(_, i)| **i == idx)
            .map(|(s, _)| s.clone())
            .unwrap_or_else(|| UNKNOWN_TOKEN.to_string())
    }
}

/// Ordered collection of fields with prefix-sum offsets into the flattened
/// one-hot space.
///
/// Invariants: cardinalities >= 1, offsets strictly increasing, field names
/// unique.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldSchema {
    fields: Vec<Field>,
    /// `offsets[i]` is the first one-hot slot of field `i`;
    /// `offsets[n_fields]` equals the total one-hot dimension.
    offsets: Vec<usize>,
}

impl FieldSchema {
    fn build(fields: Vec<Field>) -> Result<FieldSchema> {
        if fields.is_empty() {
            return Err(Error::InvalidArg("schema needs at least one field".into()));
        }
        let mut seen = HashMap::new();
        for (i, f) in fields.iter().enumerate() {
            if f.cardinality == 0 {
                return Err(Error::InvalidArg(format!(
                    "field '{}' has cardinality 0; every field needs at least one category",
                    f.name
                )));
            }
            if let Some(prev) = seen.insert(f.name.clone(), i) {
                return Err(Error::InvalidArg(format!(
                    "duplicate field name '{}' (positions {} and {})",
                    f.name, prev, i
                )));
            }
        }
        let mut offsets = Vec::with_capacity(fields.len() + 1);
        let mut acc = 0;
        for f in &fields {
            offsets.push(acc);
            acc += f.cardinality;
        }
        offsets.push(acc);
        Ok(FieldSchema { fields, offsets })
    }

    /// Builds a dictionary-free schema where category tokens are decimal
    /// indices. Handy for synthetic data and tests.
    pub fn numeric(fields: &[(&str, usize)]) -> Result<FieldSchema> {
        FieldSchema::build(
            fields
                .iter()
                .map(|(name, card)| Field {
                    name: (*name).to_string(),
                    cardinality: *card,
                    dict: HashMap::new(),
                    unknown: None,
                })
                .collect(),
        )
    }

    pub fn n_fields(&self) -> usize {
        self.fields.len()
    }

    pub fn field(&self, i: usize) -> &Field {
        &self.fields[i]
    }

    pub fn fields(&self) -> &[Field] {
        &self.fields
    }

    /// First one-hot slot of field `i`.
    pub fn offset(&self, i: usize) -> usize {
        self.offsets[i]
    }

    /// Prefix-sum offset table: `offsets()[i]` is the first one-hot slot of
    /// field `i` and the final entry is the total dimension.
    pub fn offsets(&self) -> &[usize] {
        &self.offsets
    }

    /// Total one-hot dimension (sum of cardinalities).
    pub fn total_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// True when both schemas describe the same field layout (names and
    /// cardinalities); dictionaries may differ.
    pub fn layout_matches(&self, other: &FieldSchema) -> bool {
        self.fields.len() == other.fields.len()
            && self
                .fields
                .iter()
                .zip(&other.fields)
                .all(|(a, b)| a.name == b.name && a.cardinality == b.cardinality)
    }
}

/// Scans raw string rows and builds a dictionary-mode schema: per field, the
/// distinct category strings get indices in first-appearance order, plus one
/// reserved "unknown" slot appended for categories never seen at build time.
///
/// Errors on empty input or when a row's column count differs from
/// `field_names.len()` (the message names the 1-based row).
pub fn build_schema(rows: &[Vec<String>], field_names: &[&str]) -> Result<FieldSchema> {
    if rows.is_empty() {
        return Err(Error::InvalidArg("build_schema: no rows provided".into()));
    }
    if field_names.is_empty() {
        return Err(Error::InvalidArg("build_schema: no field names provided".into()));
    }
    let mut dicts: Vec<HashMap<String, usize>> = vec![HashMap::new(); field_names.len()];
    for (r, row) in rows.iter().enumerate() {
        if row.len() != field_names.len() {
            return Err(Error::InvalidArg(format!(
                "build_schema: row {} has {} columns, expected {}",
                r + 1,
                row.len(),
                field_names.len()
            )));
        }
        for (i, token) in row.iter().enumerate() {
            let next = dicts[i].len();
            dicts[i].entry(token.clone()).or_insert(next);
        }
    }
    let fields = field_names
        .iter()
        .zip(dicts)
        .map(|(name, dict)| {
            let unknown = dict.len(); // appended after all seen categories
            Field {
                name: (*name).to_string(),
                cardinality: dict.len() + 1,
                dict,
                unknown: Some(unknown),
            }
        })
        .collect();
    FieldSchema::build(fields)
}

// ---------------------------------------------------------------------------
// Samples and datasets
// ---------------------------------------------------------------------------

/// One labelled sample: exactly one active category per field.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseSample {
    pub label: u8,
    /// `categories[i]` is the active index within field `i` (not the global
    /// one-hot slot; combine with [`FieldSchema::offset`] for that).
    pub categories: Vec<usize>,
}

impl SparseSample {
    pub fn new(label: u8, categories: Vec<usize>) -> SparseSample {
        SparseSample { label, categories }
    }

    /// Global one-hot slot of field `i` under `schema`.
    pub fn one_hot_index(&self, schema: &FieldSchema, i: usize) -> usize {
        schema.offset(i) + self.categories[i]
    }
}

/// A set of samples tied to a schema, plus the negative down-sampling ratio
/// that produced it (1.0 for unsampled data).
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub schema: FieldSchema,
    pub samples: Vec<SparseSample>,
    pub downsampling_ratio: f64,
}

impl Dataset {
    /// Validates every sample against the schema: label in {0,1}, one
    /// category per field, indices within cardinality.
    pub fn new(schema: FieldSchema, samples: Vec<SparseSample>) -> Result<Dataset> {
        for (i, s) in samples.iter().enumerate() {
            validate_sample(&schema, s).map_err(|e| {
                Error::InvalidArg(format!("sample {}: {}", i + 1, e))
            })?;
        }
        Ok(Dataset { schema, samples, downsampling_ratio: 1.0 })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.samples.iter().filter(|s| s.label == 1).count()
    }

    /// Fraction of positive labels.
    pub fn base_rate(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.positives() as f64 / self.samples.len() as f64
    }

    /// Splits off the last `n` samples into a second dataset (deterministic;
    /// used for carving validation tails).
    pub fn split_tail(&self, n: usize) -> Result<(Dataset, Dataset)> {
        if n > self.samples.len() {
            return Err(Error::InvalidArg(format!(
                "split_tail: cannot take {} samples from a dataset of {}",
                n,
                self.samples.len()
            )));
        }
        let cut = self.samples.len() - n;
        let head = Dataset {
            schema: self.schema.clone(),
            samples: self.samples[..cut].to_vec(),
            downsampling_ratio: self.downsampling_ratio,
        };
        let tail = Dataset {
            schema: self.schema.clone(),
            samples: self.samples[cut..].to_vec(),
            downsampling_ratio: self.downsampling_ratio,
        };
        Ok((head, tail))
    }
}

fn validate_sample(schema: &FieldSchema, s: &SparseSample) -> Result<()> {
    if s.label > 1 {
        return Err(Error::InvalidArg(format!("label must be 0 or 1, got {}", s.label)));
    }
    if s.categories.len() != schema.n_fields() {
        return Err(Error::InvalidArg(format!(
            "sample has {} fields, schema has {}",
            s.categories.len(),
            schema.n_fields()
        )));
    }
    for (i, &c) in s.categories.iter().enumerate() {
        if c >= schema.field(i).cardinality() {
            return Err(Error::InvalidArg(format!(
                "category {} out of range for field '{}' (cardinality {})",
                c,
                schema.field(i).name(),
                schema.field(i).cardinality()
            )));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Text serialization
// ---------------------------------------------------------------------------

/// Serializes a schema: field lines in order, then dictionary lines sorted by
/// (field order, index) so output is deterministic.
pub fn save_schema(schema: &FieldSchema, path: &Path) -> Result<()> {
    let mut out = String::new();
    for f in schema.fields() {
        writeln!(out, "{} {}", f.name, f.cardinality).unwrap();
    }
    for f in schema.fields() {
        let mut entries: Vec<(&String, &usize)> = f.dict.iter().collect();
        entries.sort_by_key(|(_, idx)| **idx);
        for (s, idx) in entries {
            writeln!(out, "{} {} {}", f.name, s, idx).unwrap();
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a schema file (see module docs for the format).
pub fn load_schema(path: &Path) -> Result<FieldSchema> {
    let text = std::fs::read_to_string(path)?;
    let mut order: Vec<String> = Vec::new();
    let mut cards: HashMap<String, usize> = HashMap::new();
    let mut dicts: HashMap<String, HashMap<String, usize>> = HashMap::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        let err = |msg: String| Error::Parse { line: lineno + 1, msg };
        match toks.len() {
            2 => {
                let card: usize = toks[1]
                    .parse()
                    .map_err(|_| err(format!("bad cardinality '{}'", toks[1])))?;
                if cards.insert(toks[0].to_string(), card).is_some() {
                    return Err(err(format!("field '{}' declared twice", toks[0])));
                }
                order.push(toks[0].to_string());
                dicts.insert(toks[0].to_string(), HashMap::new());
            }
            3 => {
                let idx: usize =
                    toks[2].parse().map_err(|_| err(format!("bad index '{}'", toks[2])))?;
                let card = *cards
                    .get(toks[0])
                    .ok_or_else(|| err(format!("dictionary line for undeclared field '{}'", toks[0])))?;
                if idx >= card {
                    return Err(err(format!(
                        "index {} out of range for field '{}' (cardinality {})",
                        idx, toks[0], card
                    )));
                }
                let dict = dicts.get_mut(toks[0]).unwrap();
                if dict.values().any(|v| *v == idx) {
                    return Err(err(format!("index {} assigned twice in field '{}'", idx, toks[0])));
                }
                if dict.insert(toks[1].to_string(), idx).is_some() {
                    return Err(err(format!(
                        "category '{}' assigned twice in field '{}'",
                        toks[1], toks[0]
                    )));
                }
            }
            n => return Err(err(format!("expected 2 or 3 tokens, got {n}"))),
        }
    }
    let fields = order
        .into_iter()
        .map(|name| {
            let cardinality = cards[&name];
            let dict = dicts.remove(&name).unwrap();
            // Convention: a dictionary that leaves exactly the last index
            // unassigned marks it as the reserved unknown slot.
            let unknown = if !dict.is_empty()
                && dict.len() + 1 == cardinality
                && dict.values().all(|v| *v != cardinality - 1)
            {
                Some(cardinality - 1)
            } else {
                None
            };
            Field { name, cardinality, dict, unknown }
        })
        .collect();
    FieldSchema::build(fields)
}

/// Serializes a dataset (see module docs for the format). Output is
/// deterministic: one line per sample in order.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut out = String::new();
    if ds.downsampling_ratio != 1.0 {
        writeln!(out, "# downsampling_ratio {}", ds.downsampling_ratio).unwrap();
    }
    for s in &ds.samples {
        write!(out, "{}", s.label).unwrap();
        for (i, &c) in s.categories.iter().enumerate() {
            write!(out, " {}", ds.schema.field(i).decode(c)).unwrap();
        }
        out.push('\n');
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Parses a dataset file against a schema. Unseen category strings map to the
/// field's unknown index when one exists. Errors name the 1-based line.
pub fn load_dataset(path: &Path, schema: &FieldSchema) -> Result<Dataset> {
    let text = std::fs::read_to_string(path)?;
    parse_dataset_text(&text, schema)
}

/// Text-level parser behind [`load_dataset`], split out for tests.
pub fn parse_dataset_text(text: &str, schema: &FieldSchema) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut ratio = 1.0;
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        let err = |msg: String| Error::Parse { line: lineno + 1, msg };
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix('#') {
            let toks: Vec<&str> = rest.split_whitespace().collect();
            if toks.len() == 2 && toks[0] == "downsampling_ratio" {
                ratio = toks[1]
                    .parse()
                    .map_err(|_| err(format!("bad downsampling_ratio '{}'", toks[1])))?;
                if !(ratio > 0.0 && ratio <= 1.0) {
                    return Err(err(format!("downsampling_ratio {ratio} outside (0, 1]")));
                }
            }
            continue;
        }
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != schema.n_fields() + 1 {
            return Err(err(format!(
                "expected 1 label + {} categories, got {} tokens",
                schema.n_fields(),
                toks.len()
            )));
        }
        let label: u8 = match toks[0] {
            "0" => 0,
            "1" => 1,
            other => return Err(err(format!("label must be 0 or 1, got '{other}'"))),
        };
        let mut categories = Vec::with_capacity(schema.n_fields());
        for (i, token) in toks[1..].iter().enumerate() {
            let idx = schema.field(i).encode(token).ok_or_else(|| {
                err(format!(
                    "unrecognized category '{}' for field '{}'",
                    token,
                    schema.field(i).name()
                ))
            })?;
            categories.push(idx);
        }
        samples.push(SparseSample::new(label, categories));
    }
    let mut ds = Dataset::new(schema.clone(), samples)?;
    ds.downsampling_ratio = ratio;
    Ok(ds)
}

/// Writes one probability per line.
pub fn save_probs(probs: &[f64], path: &Path) -> Result<()> {
    let mut out = String::new();
    for p in probs {
        writeln!(out, "{p}").unwrap();
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a probability-per-line file.
pub fn load_probs(path: &Path) -> Result<Vec<f64>> {
    let text = std::fs::read_to_string(path)?;
    let mut out = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let p: f64 = line.parse().map_err(|_| Error::Parse {
            line: lineno + 1,
            msg: format!("bad probability '{line}'"),
        })?;
        out.push(p);
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Down-sampling and recalibration
// ---------------------------------------------------------------------------

/// Keeps every positive sample and each negative independently with
/// probability `w`, preserving order. The result records `w` as its
/// downsampling ratio. Errors when `w` is outside `(0, 1]`.
pub fn downsample_negatives(ds: &Dataset, w: f64, rng: &mut Rng) -> Result<Dataset> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::InvalidArg(format!("downsampling ratio must be in (0, 1], got {w}")));
    }
    let samples: Vec<SparseSample> = ds
        .samples
        .iter()
        .filter(|s| s.label == 1 || w == 1.0 || rng.bernoulli(w))
        .cloned()
        .collect();
    Ok(Dataset { schema: ds.schema.clone(), samples, downsampling_ratio: w })
}

/// Maps a probability predicted on `w`-down-sampled negatives back to the
/// original distribution: `q = p / (p + (1 - p) / w)`.
///
/// `w == 1` returns `p` unchanged (exact identity, no rounding). Errors when
/// `w` is outside `(0, 1]`.
pub fn recalibrate(p: f64, w: f64) -> Result<f64> {
    if !(w > 0.0 && w <= 1.0) {
        return Err(Error::InvalidArg(format!("downsampling ratio must be in (0, 1], got {w}")));
    }
    if w == 1.0 {
        return Ok(p);
    }
    Ok(p / (p + (1.0 - p) / w))
}

// ---------------------------------------------------------------------------
// Synthetic data
// ---------------------------------------------------------------------------

/// Latent dimensionality of the planted pairwise-interaction model.
pub const SYNTH_LATENT_DIM: usize = 4;

/// Configuration for [`synth_generate`].
#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_fields: usize,
    pub cardinality: usize,
    pub n_samples: usize,
    /// Scale of the planted pairwise-interaction term.
    pub interaction_strength: f64,
    /// Scale of the planted per-category additive term. Zero makes the signal
    /// purely pairwise, which linear models cannot represent.
    pub additive_strength: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_fields: 8,
            cardinality: 10,
            n_samples: 10_000,
            interaction_strength: 5.0,
            additive_strength: 1.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_fields < 2 {
            return Err(Error::InvalidArg(format!(
                "synth: need at least 2 fields for pairwise structure, got {}",
                self.n_fields
            )));
        }
        if self.cardinality < 2 {
            return Err(Error::InvalidArg(format!(
                "synth: cardinality must be at least 2, got {}",
                self.cardinality
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidArg("synth: sample count must be positive".into()));
        }
        if !(self.interaction_strength.is_finite() && self.additive_strength.is_finite()) {
            return Err(Error::InvalidArg("synth: strengths must be finite".into()));
        }
        Ok(())
    }
}

/// Draws a dataset from a planted factorization-machine-style model and
/// returns it together with the true click probability of every sample.
///
/// Ground truth, all parameters drawn from the seeded generator in this
/// documented order:
///
/// 1. global bias `b ~ U(-0.3, 0.3)`;
/// 2. per (field, category) additive effects `u ~ U(-1, 1)`;
/// 3. per (field, category) latent vectors `v` of dimension
///    [`SYNTH_LATENT_DIM`] with entries `U(-0.5, 0.5)`, then centered per
///    field and dimension across categories so the pairwise signal carries no
///    per-category marginal a linear model could pick up;
/// 4. per sample: uniform categories, then
///    `p = sigmoid(b + additive * sum_i u_i + interaction * sum_{i<j} <v_i, v_j>)`
///    and a Bernoulli(`p`) label.
pub fn synth_generate(cfg: &SynthConfig) -> Result<(Dataset, Vec<f64>)> {
    cfg.validate()?;
    let mut rng = Rng::new(cfg.seed);
    let n = cfg.n_fields;
    let card = cfg.cardinality;

    let bias = rng.uniform(-0.3, 0.3);
    let mut additive = vec![vec![0.0; card]; n];
    for field in additive.iter_mut() {
        for cell in field.iter_mut() {
            *cell = rng.uniform(-1.0, 1.0);
        }
    }
    let mut latent = vec![vec![[0.0; SYNTH_LATENT_DIM]; card]; n];
    for field in latent.iter_mut() {
        for vec in field.iter_mut() {
            for cell in vec.iter_mut() {
                *cell = rng.uniform(-0.5, 0.5);
            }
        }
        for d in 0..SYNTH_LATENT_DIM {
            let mean: f64 = field.iter().map(|v| v[d]).sum::<f64>() / card as f64;
            for vec in field.iter_mut() {
                vec[d] -= mean;
            }
        }
    }

    let field_defs: Vec<(String, usize)> =
        (0..n).map(|i| (format!("f{i}"), card)).collect();
    let schema = FieldSchema::numeric(
        &field_defs.iter().map(|(s, c)| (s.as_str(), *c)).collect::<Vec<_>>(),
    )?;

    let mut samples = Vec::with_capacity(cfg.n_samples);
    let mut probs = Vec::with_capacity(cfg.n_samples);
    for _ in 0..cfg.n_samples {
        let cats: Vec<usize> = (0..n).map(|_| rng.index(card)).collect();
        let mut logit = bias;
        for i in 0..n {
            logit += cfg.additive_strength * additive[i][cats[i]];
        }
        for i in 0..n {
            for j in (i + 1)..n {
                let (vi, vj) = (&latent[i][cats[i]], &latent[j][cats[j]]);
                let mut ip = 0.0;
                for d in 0..SYNTH_LATENT_DIM {
                    ip += vi[d] * vj[d];
                }
                logit += cfg.interaction_strength * ip;
            }
        }
        let p = sigmoid(logit);
        let label = u8::from(rng.bernoulli(p));
        samples.push(SparseSample::new(label, cats));
        probs.push(p);
    }
    let ds = Dataset::new(schema, samples)?;
    Ok((ds, probs))
}
