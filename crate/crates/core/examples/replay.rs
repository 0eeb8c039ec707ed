//! Traces are self-contained: the header carries the program text and seed,
//! so a trace file can be re-run and must reproduce itself byte for byte.

use taserial::config::RunConfig;
use taserial::engine::run;
use taserial::trace::Trace;

fn main() {
    let config = RunConfig::from_source(include_str!("programs/counter.ta"), 4).unwrap();
    let path = std::env::temp_dir().join("taserial-replay.jsonl");
    std::fs::write(&path, run(&config, 42).unwrap().to_jsonl()).unwrap();

    let text = std::fs::read_to_string(&path).unwrap();
    let recorded = Trace::from_jsonl(&text).unwrap();
    let again = run(recorded.config(), recorded.header.seed).unwrap();
    println!("{} lines, replay identical: {}", text.lines().count(), again.to_jsonl() == text);
    println!("written to {}", path.display());
}
