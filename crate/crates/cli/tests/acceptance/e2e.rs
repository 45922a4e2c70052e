use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use crate::ensure;
use crate::server::ScriptedServer;

const DATASETS: [(&str, &[&str], usize); 3] = [
    ("topics", &["sports", "politics", "science"], 60),
    ("sentiment", &["positive", "negative"], 50),
    ("tickets", &["billing", "outage", "login", "other"], 64),
];

const COMMANDS: [&[&str]; 6] = [
    &["ingest"],
    &["induce"],
    &["evaluate"],
    &["compare"],
    &["report"],
    &["rollout", "--groups", "1", "--shot-count", "5"],
];

/// Deterministic stand-in for every role. Follower accuracy depends on
/// which kind of instruction it receives.
fn reply(model: &str, prompt: &str, seed: Option<u64>) -> String {
    if prompt.ends_with("\nLabel:") {
        let input = prompt.rsplit("\nInput: ").next().unwrap_or_default();
        let mut words = input.split_whitespace();
        let index: usize = words.nth(1).and_then(|w| w.parse().ok()).unwrap_or(0);
        let label = input
            .split("mentions ")
            .nth(1)
            .and_then(|r| r.split_whitespace().next())
            .unwrap_or("");
        let modulus = if prompt.contains("keyword") {
            5
        } else if prompt.matches("\nInput: ").count() > 1 {
            3
        } else if prompt.starts_with("Classify the Input.") {
            2
        } else {
            4
        };
        return if index.is_multiple_of(modulus) {
            "unsure".into()
        } else {
            label.into()
        };
    }
    if prompt.contains("within ``` blocks") {
        return "```\nFind the keyword that names the label and answer with that keyword.\n```".into();
    }
    if prompt.starts_with("I gave a friend") {
        return match seed.unwrap_or(0) % 3 {
            0 => "Answer with the keyword in the text.".into(),
            1 => "Pick a label.".into(),
            _ => "Choose the most likely label.".into(),
        };
    }
    match model {
        "trained" => "Read the text and answer with the keyword it mentions.".into(),
        _ => "Decide which label fits the text best.".into(),
    }
}

fn write_datasets(dir: &Path) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, labels, count) in DATASETS {
        let mut body = String::new();
        for i in 0..count {
            let label = labels[(i * 7 + i / 3) % labels.len()];
            let row = serde_json::json!({"text": format!("record {i} mentions {label} today"), "label": label});
            body.push_str(&row.to_string());
            body.push('\n');
        }
        std::fs::write(dir.join(format!("{name}.jsonl")), body)?;
    }
    Ok(())
}

fn write_config(path: &Path, input: &Path, work: &Path, cache: &Path, base_url: &str) -> std::io::Result<()> {
    let config = format!(
        r#"seed = 11

[datasets]
input_dir = "{input}"

[induce]
shot_counts = [5, 10]

[evaluate]
m = 20

[endpoints.generator]
base_url = "{base_url}"
model = "generator"

[endpoints.trained]
base_url = "{base_url}"
model = "trained"

[endpoints.follower]
base_url = "{base_url}"
model = "follower"

[execution]
work_dir = "{work}"
cache_dir = "{cache}"
max_in_flight = 32
"#,
        input = input.display(),
        work = work.display(),
        cache = cache.display(),
    );
    std::fs::write(path, config)
}

fn run_pipeline(config: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    for args in COMMANDS {
        let output = Command::new(env!("CARGO_BIN_EXE_induct"))
            .arg("--config")
            .arg(config)
            .args(args)
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(
            output.status.success(),
            "`induct {}` exited with {:?}: {}",
            args.join(" "),
            output.status.code(),
            String::from_utf8_lossy(&output.stderr)
        );
    }
    Ok(start.elapsed())
}

/// Every file under `root` except manifests and the lock, keyed by
/// relative path.
fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            let rel = path.strip_prefix(root).unwrap().to_path_buf();
            if rel.starts_with("manifests") || rel == Path::new(".lock") {
                continue;
            }
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn compare(a: &BTreeMap<PathBuf, Vec<u8>>, b: &BTreeMap<PathBuf, Vec<u8>>, what: &str) -> Result<(), String> {
    let keys_a: Vec<_> = a.keys().collect();
    let keys_b: Vec<_> = b.keys().collect();
    ensure!(keys_a == keys_b, "{what}: file sets differ: {keys_a:?} vs {keys_b:?}");
    for (path, bytes) in a {
        ensure!(bytes == &b[path], "{what}: {} differs", path.display());
    }
    Ok(())
}

pub fn check() -> Result<String, String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path();
    let input = root.join("input");
    write_datasets(&input).map_err(|e| e.to_string())?;
    let server = ScriptedServer::start(reply);

    let mut timings = Vec::new();
    let runs = [("one", "cache-one"), ("two", "cache-two"), ("three", "cache-one")];
    let mut snapshots = Vec::new();
    let mut requests = Vec::new();
    for (work, cache) in runs {
        let config = root.join(format!("{work}.toml"));
        write_config(&config, &input, &root.join(work), &root.join(cache), &server.base_url)
            .map_err(|e| e.to_string())?;
        let before = server.requests();
        let elapsed = run_pipeline(&config)?;
        ensure!(elapsed < Duration::from_secs(60), "run {work} took {elapsed:?}");
        requests.push(server.requests() - before);
        timings.push(elapsed.as_secs_f64());
        snapshots.push(snapshot(&root.join(work)));
    }

    let first = &snapshots[0];
    for method in ["naive", "icl", "mii_zero", "mii_trained", "ape", "gepa"] {
        let needle = format!("\"method\":\"{method}\"");
        let results = String::from_utf8_lossy(&first[Path::new("results.jsonl")]).to_string();
        ensure!(results.contains(&needle), "results.jsonl has no {method} rows");
    }
    ensure!(
        first.contains_key(Path::new("report/table.md")),
        "report/table.md missing"
    );
    compare(first, &snapshots[1], "runs one and two")?;
    compare(first, &snapshots[2], "runs one and three")?;
    ensure!(requests[0] > 0, "the first run made no requests");
    ensure!(
        requests[0] == requests[1],
        "fresh runs made {} and {} requests",
        requests[0],
        requests[1]
    );
    ensure!(requests[2] == 0, "the cached run made {} requests", requests[2]);
    Ok(format!(
        "{} output files identical; runs took {:.1}s/{:.1}s/{:.1}s; requests {}/{}/{}",
        first.len(),
        timings[0],
        timings[1],
        timings[2],
        requests[0],
        requests[1],
        requests[2]
    ))
}
