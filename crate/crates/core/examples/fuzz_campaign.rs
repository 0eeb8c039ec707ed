//! Generates random three-machine workloads, runs them and checks each run.
//!
//! cargo run --release --example fuzz_campaign -- [runs] [seed]

use std::time::Instant;

use taserial::fuzz::{fuzz, FuzzParams};

fn main() {
    let mut args = std::env::args().skip(1);
    let runs: usize = args.next().and_then(|a| a.parse().ok()).unwrap_or(200);
    let seed: u64 = args.next().and_then(|a| a.parse().ok()).unwrap_or(1);
    let params = FuzzParams::default();
    let start = Instant::now();
    let (report, _) = fuzz(&params, runs, seed, false);
    println!(
        "{}/{} serializable, {} fully committed, {:.2?}",
        report.serializable,
        report.runs,
        report.all_committed,
        start.elapsed()
    );
    println!("{}", serde_json::to_string_pretty(&report.totals).unwrap());
    for f in &report.failures {
        println!("run {} (seed {}): {}", f.index, f.seed, f.error.as_deref().unwrap_or("?"));
    }
}
