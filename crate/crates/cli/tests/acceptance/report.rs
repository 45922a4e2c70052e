use std::collections::BTreeMap;
use std::process::Command;

use induct::evaluator::EvalResult;
use induct::prompting::Method;
use induct::stats::{aggregate_table, compression_summary, win_rate_matrix};

use crate::ensure;

const COLUMNS: [usize; 5] = [5, 10, 20, 50, 100];

/// (method, table label, F1 per column, tokens per column).
const CELLS: [(Method, [&str; 5], [u64; 5]); 4] = [
    (Method::Naive, ["0.253"; 5], [531; 5]),
    (
        Method::Icl,
        ["0.347", "0.385", "0.406", "0.424", "0.430"],
        [2451, 3594, 5177, 8206, 11531],
    ),
    (
        Method::MiiZero,
        ["0.316", "0.329", "0.343", "0.354", "0.336"],
        [709, 702, 709, 710, 715],
    ),
    (
        Method::MiiTrained,
        ["0.388", "0.415", "0.433", "0.416", "0.405"],
        [873, 891, 901, 965, 956],
    ),
];

/// Per-dataset spreads that cancel in the mean.
const F1_SPREAD: [f64; 6] = [-0.03, 0.02, -0.01, 0.015, 0.005, 0.0];
const TOKEN_SPREAD: [i64; 6] = [-40, 25, 10, -5, 0, 10];

fn fixture() -> Vec<EvalResult> {
    let mut out = Vec::new();
    for (method, f1s, tokens) in CELLS {
        let columns: &[usize] = if method == Method::Naive { &[0] } else { &COLUMNS };
        for (c, &n) in columns.iter().enumerate() {
            let f1: f64 = f1s[c].parse().unwrap();
            for (d, (df, dt)) in F1_SPREAD.iter().zip(TOKEN_SPREAD).enumerate() {
                out.push(EvalResult {
                    run_id: "fixture".into(),
                    dataset: format!("dataset{d}"),
                    method,
                    n,
                    effective_n: n,
                    macro_f1: f1 + df,
                    prompt_tokens: (tokens[c] as i64 + dt) as u64,
                    tokens_approximate: false,
                    invalid_rate: 0.0,
                    m: 200,
                    seed: 0,
                    failed_queries: 0,
                });
            }
        }
    }
    out
}

fn cells_of(table_md: &str, method: Method) -> Result<(Vec<String>, Vec<String>), String> {
    let lines: Vec<&str> = table_md.lines().collect();
    let split = |line: &str| -> Vec<String> { line.split('|').map(|c| c.trim().to_string()).collect() };
    let at = lines
        .iter()
        .position(|l| split(l).get(1).map(String::as_str) == Some(method.as_str()))
        .ok_or(format!("no {method} row in\n{table_md}"))?;
    let f1 = split(lines[at]);
    let tokens = split(lines[at + 1]);
    Ok((f1[3..8].to_vec(), tokens[3..8].to_vec()))
}

fn rendered_table() -> Result<(String, String), String> {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let work = tmp.path().join("work");
    std::fs::create_dir_all(&work).map_err(|e| e.to_string())?;
    let body: String = fixture()
        .iter()
        .map(|r| serde_json::to_string(r).unwrap() + "\n")
        .collect();
    std::fs::write(work.join("results.jsonl"), body).map_err(|e| e.to_string())?;
    let output = Command::new(env!("CARGO_BIN_EXE_induct"))
        .arg("--work-dir")
        .arg(&work)
        .arg("report")
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        output.status.success(),
        "report failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
    let read = |name: &str| std::fs::read_to_string(work.join("report").join(name)).map_err(|e| e.to_string());
    Ok((read("table.md")?, read("compression.md")?))
}

pub fn check() -> Result<String, String> {
    let (table_md, compression_md) = rendered_table()?;
    for (method, f1s, tokens) in CELLS {
        let (got_f1, got_tokens) = cells_of(&table_md, method)?;
        for c in 0..5 {
            let f1 = got_f1[c].trim_end_matches('*');
            ensure!(f1 == f1s[c], "{method} n={}: F1 {f1}, expected {}", COLUMNS[c], f1s[c]);
            let t: f64 = got_tokens[c]
                .parse()
                .map_err(|_| format!("tokens cell {:?}", got_tokens[c]))?;
            ensure!(
                t.round() as u64 == tokens[c],
                "{method} n={}: tokens {t}, expected {}",
                COLUMNS[c],
                tokens[c]
            );
        }
    }
    let matched = compression_md
        .lines()
        .find(|l| l.contains("mii_trained n=20"))
        .ok_or(format!("no matched row for mii_trained n=20 in\n{compression_md}"))?;
    ensure!(
        matched.contains("icl n=100") && matched.contains("12.8x"),
        "matched row: {matched}"
    );

    let table = aggregate_table(&fixture()).map_err(|e| e.to_string())?;
    let rows =
        compression_summary(&table, &[((Method::MiiTrained, 20), (Method::Icl, 100))]).map_err(|e| e.to_string())?;
    let ratio = rows[0].ratio;
    ensure!(format!("{ratio:.1}") == "12.8", "compression ratio {ratio}");

    let mut mii = BTreeMap::new();
    let mut icl = BTreeMap::new();
    for d in 0..90 {
        let name = format!("d{d:02}");
        let (a, b) = match d {
            0..47 => (0.5, 0.4),
            47..88 => (0.4, 0.5),
            _ => (0.45, 0.45),
        };
        mii.insert(name.clone(), a);
        icl.insert(name, b);
    }
    let matrix = win_rate_matrix(&[("mii".into(), mii), ("icl".into(), icl)]).map_err(|e| e.to_string())?;
    let (win, loss) = (matrix.cell(0, 1).unwrap() * 100.0, matrix.cell(1, 0).unwrap() * 100.0);
    ensure!(
        format!("{win:.1}") == "52.2" && format!("{loss:.1}") == "45.6",
        "win rates {win:.2} / {loss:.2}"
    );
    let rendered = matrix.render_markdown();
    ensure!(
        rendered.contains("52.2%") && rendered.contains("45.6%"),
        "rendered matrix:\n{rendered}"
    );
    Ok(format!(
        "20 cells to 3 decimals, ratio {ratio:.2}x, win rates {win:.1}% / {loss:.1}%"
    ))
}
