//! Byte-exact rendering of every prompt the harness sends: meta-prompts,
//! the naive and ICL baselines, classification queries and the format line.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{LabeledExample, ShotSet};

pub const LABEL_NAMES_PLACEHOLDER: &str = "{label_names}";
pub const EXAMPLES_PLACEHOLDER: &str = "{examples}";

/// The instruction part of the naive baseline, without its format line.
pub const NAIVE_INSTRUCTION: &str = "Classify the Input.";

const META1: &str = include_str!("../templates/meta1.txt");
const META2: &str = include_str!("../templates/meta2.txt");

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("template {template}: placeholder {placeholder} must appear exactly once (found {found})")]
    Placeholder {
        template: String,
        placeholder: &'static str,
        found: usize,
    },
    #[error("at least one shot is required")]
    NoShots,
    #[error("at least one label is required")]
    NoLabels,
    #[error("token budget must be positive")]
    InvalidBudget,
    #[error("unknown template `{0}`")]
    UnknownTemplate(String),
    #[error("reading template {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = PromptError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaPromptTemplate {
    pub template_id: String,
    pub body: String,
}

impl MetaPromptTemplate {
    pub fn new(template_id: impl Into<String>, body: impl Into<String>) -> Result<Self> {
        let template = Self {
            template_id: template_id.into(),
            body: body.into(),
        };
        for placeholder in [LABEL_NAMES_PLACEHOLDER, EXAMPLES_PLACEHOLDER] {
            let found = template.body.matches(placeholder).count();
            if found != 1 {
                return Err(PromptError::Placeholder {
                    template: template.template_id.clone(),
                    placeholder,
                    found,
                });
            }
        }
        Ok(template)
    }

    /// `meta1` is the general-purpose template, `meta2` the annotator-guideline one.
    pub fn builtin(template_id: &str) -> Option<Self> {
        let body = match template_id {
            "meta1" => META1,
            "meta2" => META2,
            _ => return None,
        };
        Some(Self::new(template_id, body).expect("builtin templates are well-formed"))
    }

    /// Load a plain-text template; a single trailing newline is dropped.
    pub fn from_file(template_id: impl Into<String>, path: &Path) -> Result<Self> {
        let raw = std::fs::read_to_string(path).map_err(|source| PromptError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let body = raw
            .strip_suffix("\r\n")
            .or_else(|| raw.strip_suffix('\n'))
            .unwrap_or(&raw);
        Self::new(template_id, body)
    }
}

/// Maps template ids to templates; starts with the two builtins.
#[derive(Debug, Clone)]
pub struct TemplateRegistry {
    templates: BTreeMap<String, MetaPromptTemplate>,
}

impl Default for TemplateRegistry {
    fn default() -> Self {
        let templates = ["meta1", "meta2"]
            .into_iter()
            .map(|id| (id.to_string(), MetaPromptTemplate::builtin(id).unwrap()))
            .collect();
        Self { templates }
    }
}

impl TemplateRegistry {
    pub fn register(&mut self, template: MetaPromptTemplate) {
        self.templates.insert(template.template_id.clone(), template);
    }

    pub fn register_file(&mut self, template_id: &str, path: &Path) -> Result<()> {
        self.register(MetaPromptTemplate::from_file(template_id, path)?);
        Ok(())
    }

    pub fn get(&self, template_id: &str) -> Result<&MetaPromptTemplate> {
        self.templates
            .get(template_id)
            .ok_or_else(|| PromptError::UnknownTemplate(template_id.to_string()))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

pub fn join_labels<S: AsRef<str>>(labels: &[S]) -> String {
    labels.iter().map(AsRef::as_ref).collect::<Vec<_>>().join(", ")
}

/// `Text: "<text>"\nLabel: <label>` blocks, newline-joined.
pub fn render_examples_block(shots: &[LabeledExample]) -> String {
    shots
        .iter()
        .map(|s| format!("Text: \"{}\"\nLabel: {}", s.text, s.label))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Substitute both placeholders in one pass so placeholder-like text inside
/// examples is never re-expanded.
fn fill(body: &str, label_names: &str, examples: &str) -> String {
    let mut slots = [
        (
            body.find(LABEL_NAMES_PLACEHOLDER).expect("validated"),
            LABEL_NAMES_PLACEHOLDER.len(),
            label_names,
        ),
        (
            body.find(EXAMPLES_PLACEHOLDER).expect("validated"),
            EXAMPLES_PLACEHOLDER.len(),
            examples,
        ),
    ];
    slots.sort_by_key(|slot| slot.0);
    let mut out = String::with_capacity(body.len() + label_names.len() + examples.len());
    let mut cursor = 0;
    for (pos, len, value) in slots {
        out.push_str(&body[cursor..pos]);
        out.push_str(value);
        cursor = pos + len;
    }
    out.push_str(&body[cursor..]);
    out
}

pub fn render_meta_prompt<S: AsRef<str>>(
    template: &MetaPromptTemplate,
    label_names: &[S],
    shots: &[LabeledExample],
) -> Result<String> {
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    // re-validate: the fields are public
    let template = MetaPromptTemplate::new(template.template_id.clone(), template.body.clone())?;
    Ok(fill(
        &template.body,
        &join_labels(label_names),
        &render_examples_block(shots),
    ))
}

/// The format-constraint line appended to induced instructions.
pub fn format_constraint_line<S: AsRef<str>>(label_names: &[S]) -> String {
    format!(
        "Only return one of these options: {}. Do not output \"Label:\" or any extra text.",
        join_labels(label_names)
    )
}

/// Appends the constraint line after a newline. Not idempotent.
pub fn append_format_constraint<S: AsRef<str>>(instruction: &str, label_names: &[S]) -> String {
    format!("{instruction}\n{}", format_constraint_line(label_names))
}

/// Count constraint lines of either quoting style (the naive box quotes
/// `'Label:'`, the appended line quotes `"Label:"`).
pub fn count_constraint_lines<S: AsRef<str>>(text: &str, label_names: &[S]) -> usize {
    let double = format_constraint_line(label_names);
    let single = double.replace("\"Label:\"", "'Label:'");
    text.matches(&double).count() + text.matches(&single).count()
}

pub fn render_naive<S: AsRef<str>>(label_names: &[S]) -> String {
    format!(
        "{NAIVE_INSTRUCTION} Only return one of these options: {}. Do not output 'Label:' or any extra text.",
        join_labels(label_names)
    )
}

pub fn render_icl<S: AsRef<str>>(label_names: &[S], shots: &[LabeledExample], test_input: &str) -> Result<String> {
    if shots.is_empty() {
        return Err(PromptError::NoShots);
    }
    let mut out = render_naive(label_names);
    for shot in shots {
        out.push_str("\n\nInput: ");
        out.push_str(&shot.text);
        out.push_str("\nLabel: ");
        out.push_str(&shot.label);
    }
    out.push_str("\n\nInput: ");
    out.push_str(test_input);
    out.push_str("\nLabel:");
    Ok(out)
}

pub fn render_classification_query(instruction: &str, input_text: &str) -> String {
    format!("{instruction}\nInput: {input_text}\nLabel:")
}

/// Keep the longest shot prefix whose rendering measures within `budget`.
///
/// The scan stops at the first prefix that does not fit. When not even one
/// shot fits, the result is empty with `budget_exceeded` set.
pub fn trim_shots_to_budget<R, M>(shots: &ShotSet, budget: usize, render: R, measure: M) -> Result<ShotSet>
where
    R: Fn(&[LabeledExample]) -> Result<String>,
    M: Fn(&str) -> usize,
{
    if budget == 0 {
        return Err(PromptError::InvalidBudget);
    }
    let mut fit = 0;
    for len in 1..=shots.shots.len() {
        if measure(&render(&shots.shots[..len])?) <= budget {
            fit = len;
        } else {
            break;
        }
    }
    let mut out = shots.truncated(fit);
    if fit == 0 && !shots.shots.is_empty() {
        tracing::warn!(dataset = %shots.dataset_name, budget, "no shot fits the token budget");
        out.budget_exceeded = true;
    }
    Ok(out)
}

/// Trim shots against the ICL prompt (with an empty test input).
pub fn trim_icl_shots<S: AsRef<str>, M: Fn(&str) -> usize>(
    shots: &ShotSet,
    label_names: &[S],
    budget: usize,
    measure: M,
) -> Result<ShotSet> {
    trim_shots_to_budget(shots, budget, |s| render_icl(label_names, s, ""), measure)
}

/// Trim shots against a meta-prompt.
pub fn trim_meta_shots<S: AsRef<str>, M: Fn(&str) -> usize>(
    shots: &ShotSet,
    template: &MetaPromptTemplate,
    label_names: &[S],
    budget: usize,
    measure: M,
) -> Result<ShotSet> {
    trim_shots_to_budget(shots, budget, |s| render_meta_prompt(template, label_names, s), measure)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Naive,
    Icl,
    MiiZero,
    MiiTrained,
    Ape,
    Gepa,
}

impl Method {
    pub const ALL: [Method; 6] = [
        Method::Naive,
        Method::Icl,
        Method::MiiZero,
        Method::MiiTrained,
        Method::Ape,
        Method::Gepa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Naive => "naive",
            Method::Icl => "icl",
            Method::MiiZero => "mii_zero",
            Method::MiiTrained => "mii_trained",
            Method::Ape => "ape",
            Method::Gepa => "gepa",
        }
    }

    /// Whether the method consumes shots (naive is shot-free).
    pub fn uses_shots(self) -> bool {
        !matches!(self, Method::Naive)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| format!("unknown method `{s}`"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenSource {
    Gateway,
    Heuristic,
}

/// An induced or assembled prompt.
///
/// For ICL, `instruction` is the naive header and `shots` carries the
/// demonstrations that are assembled per query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptArtifact {
    pub method: Method,
    pub dataset_name: String,
    pub label_names: Vec<String>,
    pub instruction: String,
    /// Effective number of shots used (after budget trimming).
    pub shot_count: usize,
    pub requested_shot_count: usize,
    pub shot_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub shots: Vec<LabeledExample>,
    pub token_length: u64,
    pub token_source: TokenSource,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub run_id: Option<String>,
}

impl PromptArtifact {
    /// The prompt the follower sees for one input.
    pub fn query(&self, input_text: &str) -> Result<String> {
        match self.method {
            Method::Icl => render_icl(&self.label_names, &self.shots, input_text),
            _ => Ok(render_classification_query(&self.instruction, input_text)),
        }
    }
}
