use std::path::PathBuf;

use induct::corpus::LabeledExample;
use induct::prompting::{append_format_constraint, render_icl, render_meta_prompt, render_naive, MetaPromptTemplate};

use crate::ensure;

fn golden(name: &str) -> Result<String, String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/golden")
        .join(name);
    std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))
}

fn first_difference(a: &str, b: &str) -> usize {
    a.bytes().zip(b.bytes()).take_while(|(x, y)| x == y).count()
}

pub fn check() -> Result<String, String> {
    let labels = ["positive", "negative", "neutral"];
    let shots = vec![
        LabeledExample::new("s1", "The soup arrived hot and tasted wonderful.", "positive"),
        LabeledExample::new("s2", "We waited forty minutes and nobody apologized.", "negative"),
    ];
    let meta = |id: &str| -> Result<String, String> {
        let template = MetaPromptTemplate::builtin(id).ok_or(format!("no builtin template {id}"))?;
        render_meta_prompt(&template, &labels, &shots).map_err(|e| e.to_string())
    };
    let rendered = [
        ("naive.txt", render_naive(&labels)),
        (
            "icl.txt",
            render_icl(&labels, &shots, "The restaurant opens at noon on weekdays.").map_err(|e| e.to_string())?,
        ),
        (
            "constraint.txt",
            append_format_constraint(
                "Decide the sentiment the review expresses about the restaurant.",
                &labels,
            ),
        ),
        ("meta1.txt", meta("meta1")?),
        ("meta2.txt", meta("meta2")?),
    ];
    for (file, text) in &rendered {
        let expected = golden(file)?;
        ensure!(
            *text == expected,
            "{file} differs at byte {}:\n--- rendered\n{text}\n--- golden\n{expected}",
            first_difference(text, &expected)
        );
    }
    Ok(format!("{} golden files", rendered.len()))
}
