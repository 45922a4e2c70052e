//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

mod ape;
mod concurrency;
mod e2e;
mod f1;
mod gepa;
mod golden;
mod grpo;
mod report;
mod wilcoxon;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

type Check = fn() -> Result<String, String>;

const CRITERIA: [(u32, &str, Check); 9] = [
    (1, "macro-F1 matches a brute-force confusion matrix", f1::check),
    (2, "GRPO advantage, clipping and gradient math", grpo::check),
    (3, "rendered templates match golden files byte-for-byte", golden::check),
    (4, "APE call budget and argmax selection", ape::check),
    (5, "GEPA budget, Pareto front and monotone best score", gepa::check),
    (6, "Wilcoxon exact p, statistic and sign-flip symmetry", wilcoxon::check),
    (7, "report arithmetic on the published fixture cells", report::check),
    (8, "end-to-end CLI pipeline is deterministic and cacheable", e2e::check),
    (9, "bounded, index-aligned concurrent batches", concurrency::check),
];

fn main() {
    let filter: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let mut failed = 0;
    for (id, name, check) in CRITERIA {
        if !filter.is_empty() && !filter.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let message = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {message}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS criterion {id}: {name} ({secs:.2}s) {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL criterion {id}: {name} ({secs:.2}s) {detail}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}

/// `Err` with a formatted message unless `cond` holds.
#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}
