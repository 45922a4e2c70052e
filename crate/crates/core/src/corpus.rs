//! Classification corpora: ingestion from line-delimited files, the
//! unique-label filter, seeded shot sampling and evaluation splits.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::gateway::{CompletionRequest, Gateway, GatewayError, LlmEndpoint, Phase, UsageTag};
use crate::seed::{derive_seed, rng_for};

/// Datasets whose distinct-label count exceeds this fraction of their size are discarded.
pub const MAX_UNIQUE_LABEL_RATIO: f64 = 0.5;

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("reading {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: missing field `{field}`")]
    MissingField { line: usize, field: String },
    #[error("dataset {0} has no examples")]
    Empty(String),
    #[error("invalid dataset: {0}")]
    Invalid(String),
    #[error("requested {requested} examples but only {available} are available")]
    TooFewExamples { requested: usize, available: usize },
    #[error("no examples remain for dataset {0} after excluding the shot set")]
    EmptyRemainder(String),
    #[error("column detection failed: {reason} (response: {raw:?})")]
    ColumnDetection { reason: String, raw: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

pub type Result<T, E = CorpusError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LabeledExample {
    pub id: String,
    pub text: String,
    pub label: String,
}

impl LabeledExample {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationDataset {
    pub name: String,
    pub label_names: Vec<String>,
    pub examples: Vec<LabeledExample>,
}

impl ClassificationDataset {
    /// Build a dataset, checking label and id invariants.
    pub fn new(name: impl Into<String>, label_names: Vec<String>, examples: Vec<LabeledExample>) -> Result<Self> {
        let ds = Self {
            name: name.into(),
            label_names,
            examples,
        };
        ds.validate()?;
        Ok(ds)
    }

    /// Build a dataset whose label set is the distinct labels in first-occurrence order.
    pub fn from_examples(name: impl Into<String>, examples: Vec<LabeledExample>) -> Result<Self> {
        let labels = first_occurrence_labels(&examples);
        Self::new(name, labels, examples)
    }

    pub fn validate(&self) -> Result<()> {
        if self.label_names.is_empty() {
            return Err(CorpusError::Invalid(format!("{}: empty label set", self.name)));
        }
        let mut seen = HashSet::new();
        for label in &self.label_names {
            if !seen.insert(label.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "{}: duplicate label `{label}`",
                    self.name
                )));
            }
        }
        let mut ids = HashSet::new();
        for ex in &self.examples {
            if !seen.contains(ex.label.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "{}: example {} has label `{}` outside the label set",
                    self.name, ex.id, ex.label
                )));
            }
            if !ids.insert(ex.id.as_str()) {
                return Err(CorpusError::Invalid(format!(
                    "{}: duplicate example id `{}`",
                    self.name, ex.id
                )));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn distinct_label_count(&self) -> usize {
        self.examples
            .iter()
            .map(|e| e.label.as_str())
            .collect::<HashSet<_>>()
            .len()
    }

    pub fn unique_label_ratio(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.distinct_label_count() as f64 / self.examples.len() as f64
    }

    /// Look up examples by id, preserving the order of `ids`.
    pub fn select(&self, ids: &[String]) -> Result<Vec<LabeledExample>> {
        ids.iter()
            .map(|id| {
                self.examples
                    .iter()
                    .find(|e| &e.id == id)
                    .cloned()
                    .ok_or_else(|| CorpusError::Invalid(format!("{}: unknown example id `{id}`", self.name)))
            })
            .collect()
    }
}

fn first_occurrence_labels(examples: &[LabeledExample]) -> Vec<String> {
    let mut seen = HashSet::new();
    examples
        .iter()
        .filter(|e| seen.insert(e.label.as_str()))
        .map(|e| e.label.clone())
        .collect()
}

/// Which record fields carry the input text, the gold label and (optionally) a stable id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMapping {
    pub text_field: String,
    pub label_field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_field: Option<String>,
}

impl ColumnMapping {
    pub fn new(text_field: impl Into<String>, label_field: impl Into<String>) -> Self {
        Self {
            text_field: text_field.into(),
            label_field: label_field.into(),
            id_field: None,
        }
    }
}

/// Sidecar manifest stored next to a dataset file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub text_field: String,
    pub label_field: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id_field: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_names: Option<Vec<String>>,
}

impl DatasetManifest {
    pub fn mapping(&self) -> ColumnMapping {
        ColumnMapping {
            text_field: self.text_field.clone(),
            label_field: self.label_field.clone(),
            id_field: self.id_field.clone(),
        }
    }

    pub fn read(path: &Path) -> Result<Self> {
        let raw = fs::read_to_string(path).map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        serde_json::from_str(&raw).map_err(|e| CorpusError::Malformed {
            line: e.line(),
            message: format!("{}: {e}", path.display()),
        })
    }
}

fn scalar_to_string(value: &Value) -> Option<String> {
    match value {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        Value::Bool(b) => Some(b.to_string()),
        _ => None,
    }
}

/// Read every non-blank line of a line-delimited JSON file as an object.
pub fn read_records(path: &Path) -> Result<Vec<(usize, Map<String, Value>)>> {
    let file = fs::File::open(path).map_err(|source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let line_no = idx + 1;
        let line = line.map_err(|source| CorpusError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        if line.trim().is_empty() {
            continue;
        }
        let value: Value = serde_json::from_str(&line).map_err(|e| CorpusError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        match value {
            Value::Object(map) => out.push((line_no, map)),
            _ => {
                return Err(CorpusError::Malformed {
                    line: line_no,
                    message: "record is not an object".into(),
                })
            }
        }
    }
    Ok(out)
}

/// Load a dataset named after the file stem.
pub fn load_dataset(path: &Path, mapping: &ColumnMapping) -> Result<ClassificationDataset> {
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "dataset".into());
    load_named(path, &name, mapping, None)
}

/// Load a dataset using its sidecar manifest (name, fields, optional label order).
pub fn load_with_manifest(path: &Path, manifest: &DatasetManifest) -> Result<ClassificationDataset> {
    load_named(path, &manifest.name, &manifest.mapping(), manifest.label_names.clone())
}

fn load_named(
    path: &Path,
    name: &str,
    mapping: &ColumnMapping,
    label_override: Option<Vec<String>>,
) -> Result<ClassificationDataset> {
    let records = read_records(path)?;
    let mut examples = Vec::with_capacity(records.len());
    for (line, record) in records {
        let field = |key: &str| -> Result<String> {
            let value = record.get(key).ok_or_else(|| CorpusError::MissingField {
                line,
                field: key.to_string(),
            })?;
            scalar_to_string(value).ok_or_else(|| CorpusError::Malformed {
                line,
                message: format!("field `{key}` is not a scalar"),
            })
        };
        let text = field(&mapping.text_field)?;
        let label = field(&mapping.label_field)?;
        let id = match &mapping.id_field {
            Some(key) => field(key)?,
            None => line.to_string(),
        };
        examples.push(LabeledExample { id, text, label });
    }
    if examples.is_empty() {
        return Err(CorpusError::Empty(name.to_string()));
    }
    match label_override {
        Some(labels) => ClassificationDataset::new(name, labels, examples),
        None => ClassificationDataset::from_examples(name, examples),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FilterVerdict {
    pub dataset: String,
    pub keep: bool,
    pub ratio: f64,
    pub distinct_labels: usize,
    pub examples: usize,
    pub reason: String,
}

/// Discard a dataset iff its distinct-label ratio is strictly above 0.5.
pub fn filter_dataset(ds: &ClassificationDataset) -> FilterVerdict {
    let distinct = ds.distinct_label_count();
    let ratio = ds.unique_label_ratio();
    let keep = ratio <= MAX_UNIQUE_LABEL_RATIO;
    let reason = if keep {
        format!("unique-label ratio {ratio:.4} <= {MAX_UNIQUE_LABEL_RATIO}")
    } else {
        format!(
            "unique-label ratio {ratio:.4} > {MAX_UNIQUE_LABEL_RATIO} ({distinct} labels over {} examples)",
            ds.len()
        )
    };
    FilterVerdict {
        dataset: ds.name.clone(),
        keep,
        ratio,
        distinct_labels: distinct,
        examples: ds.len(),
        reason,
    }
}

const DETECT_PROMPT: &str = "You are inspecting a text classification dataset. \
Identify which field holds the input text and which field holds the class label.\n\
Fields: {fields}\n\nSample records:\n{rows}\n\n\
Answer with exactly one line in the form: text=<field> label=<field>";

/// Ask an LLM which fields hold the text and the label of a raw dataset.
pub fn detect_columns(
    sample_rows: &[Map<String, Value>],
    gateway: &Gateway,
    endpoint: &LlmEndpoint,
) -> Result<ColumnMapping> {
    let first = sample_rows.first().ok_or_else(|| CorpusError::ColumnDetection {
        reason: "no sample rows".into(),
        raw: String::new(),
    })?;
    let fields: Vec<&String> = first.keys().collect();
    if fields.len() < 2 {
        return Err(CorpusError::ColumnDetection {
            reason: "rows need at least two fields to hold both text and label".into(),
            raw: String::new(),
        });
    }
    let rows = sample_rows
        .iter()
        .take(5)
        .map(|r| Value::Object(r.clone()).to_string())
        .collect::<Vec<_>>()
        .join("\n");
    let fields_list = fields.iter().map(|f| f.as_str()).collect::<Vec<_>>().join(", ");
    let prompt = DETECT_PROMPT.replace("{fields}", &fields_list).replace("{rows}", &rows);
    let req = CompletionRequest::new(endpoint.clone(), prompt)
        .temperature(0.0)
        .max_tokens(32)
        .tag(UsageTag::new("detect_columns", "", Phase::Ingest));
    let raw = gateway.complete(&req)?.text;
    parse_column_reply(&raw, first)
}

fn parse_column_reply(raw: &str, row: &Map<String, Value>) -> Result<ColumnMapping> {
    let re = regex::Regex::new(r"text\s*=\s*([^\s,;]+)[\s,;]+label\s*=\s*([^\s,;]+)").expect("static regex");
    let caps = re.captures(raw).ok_or_else(|| CorpusError::ColumnDetection {
        reason: "reply does not match `text=<field> label=<field>`".into(),
        raw: raw.to_string(),
    })?;
    let clean = |s: &str| s.trim_matches(|c| c == '"' || c == '\'' || c == '`').to_string();
    let text_field = clean(&caps[1]);
    let label_field = clean(&caps[2]);
    for f in [&text_field, &label_field] {
        if !row.contains_key(f) {
            return Err(CorpusError::ColumnDetection {
                reason: format!("field `{f}` is not present in the rows"),
                raw: raw.to_string(),
            });
        }
    }
    if text_field == label_field {
        return Err(CorpusError::ColumnDetection {
            reason: "text and label fields are the same".into(),
            raw: raw.to_string(),
        });
    }
    Ok(ColumnMapping::new(text_field, label_field))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShotSet {
    pub dataset_name: String,
    /// Requested n.
    pub shot_count: usize,
    pub shots: Vec<LabeledExample>,
    pub seed: u64,
    /// Set when a token budget could not admit even a single shot.
    #[serde(default)]
    pub budget_exceeded: bool,
}

impl ShotSet {
    pub fn effective_count(&self) -> usize {
        self.shots.len()
    }

    pub fn ids(&self) -> Vec<String> {
        self.shots.iter().map(|s| s.id.clone()).collect()
    }

    pub fn truncated(&self, len: usize) -> ShotSet {
        ShotSet {
            shots: self.shots[..len.min(self.shots.len())].to_vec(),
            ..self.clone()
        }
    }
}

/// Draw `n` examples uniformly without replacement.
pub fn sample_shots(ds: &ClassificationDataset, n: usize, seed: u64) -> Result<ShotSet> {
    if n == 0 || n > ds.len() {
        return Err(CorpusError::TooFewExamples {
            requested: n,
            available: ds.len(),
        });
    }
    let mut rng = rng_for(seed, &["shots", &ds.name, &n.to_string()]);
    let shots = index::sample(&mut rng, ds.len(), n)
        .into_iter()
        .map(|i| ds.examples[i].clone())
        .collect();
    Ok(ShotSet {
        dataset_name: ds.name.clone(),
        shot_count: n,
        shots,
        seed,
        budget_exceeded: false,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ShotDirective {
    pub dataset_name: String,
    pub shot_count: usize,
    pub seed: u64,
}

/// Training mix: n=5 for every dataset, plus n=10/20/50 for disjoint seeded
/// subsets holding 30%/20%/10% of the datasets.
pub fn make_train_mix<S: AsRef<str>>(datasets: &[S], seed: u64) -> Vec<ShotDirective> {
    let total = datasets.len();
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut rng_for(seed, &["train-mix"]));

    let extra = [(10usize, total * 3 / 10), (20, total * 2 / 10), (50, total / 10)];
    let mut extra_n: Vec<Vec<usize>> = vec![Vec::new(); total];
    let mut cursor = 0;
    for (n, count) in extra {
        for &ds_idx in &order[cursor..cursor + count] {
            extra_n[ds_idx].push(n);
        }
        cursor += count;
    }

    let mut out = Vec::with_capacity(total + cursor);
    for (idx, name) in datasets.iter().enumerate() {
        let name = name.as_ref();
        for n in std::iter::once(5).chain(extra_n[idx].iter().copied()) {
            out.push(ShotDirective {
                dataset_name: name.to_string(),
                shot_count: n,
                seed: derive_seed(seed, &["train-mix", name, &n.to_string()]),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSplit {
    pub dataset_name: String,
    pub examples: Vec<LabeledExample>,
    pub seed: u64,
    pub requested: usize,
    /// How many fewer examples than requested were available.
    pub shortfall: usize,
}

impl EvalSplit {
    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }
}

/// Draw up to `m` examples from the dataset minus the excluded shot set.
pub fn sample_eval_split(ds: &ClassificationDataset, m: usize, seed: u64, exclude: &ShotSet) -> Result<EvalSplit> {
    let excluded: HashSet<&str> = exclude.shots.iter().map(|s| s.id.as_str()).collect();
    let remainder: Vec<&LabeledExample> = ds
        .examples
        .iter()
        .filter(|e| !excluded.contains(e.id.as_str()))
        .collect();
    if remainder.is_empty() {
        return Err(CorpusError::EmptyRemainder(ds.name.clone()));
    }
    let take = m.min(remainder.len());
    let mut rng = rng_for(seed, &["eval", &ds.name, &m.to_string()]);
    let examples = index::sample(&mut rng, remainder.len(), take)
        .into_iter()
        .map(|i| remainder[i].clone())
        .collect();
    Ok(EvalSplit {
        dataset_name: ds.name.clone(),
        examples,
        seed,
        requested: m,
        shortfall: m - take,
    })
}
