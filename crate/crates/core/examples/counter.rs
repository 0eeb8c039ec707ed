//! Two machines increment a shared counter under the transaction controller.
//! Each increment reads and writes `count`, so the machines serialize on its
//! write lock and the final value is always 6.

use taserial::config::RunConfig;
use taserial::engine::run;
use taserial::value::Location;

const PROGRAM: &str = include_str!("programs/counter.ta");

fn main() {
    let config = RunConfig::from_source(PROGRAM, 4).expect("program parses");
    for seed in 0..3 {
        let trace = run(&config, seed).expect("run succeeds");
        let order: Vec<&str> = trace.commit_order().iter().map(|m| config.machines[m.0].name.as_str()).collect();
        println!(
            "seed {seed}: count = {} after {} steps, commit order {:?}",
            trace.footer.final_state.get(&Location::nullary("count")),
            trace.steps.len(),
            order
        );
    }
}
