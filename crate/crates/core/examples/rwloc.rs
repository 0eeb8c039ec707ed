//! Read and write locations of a rule, computed in a concrete state. These
//! are what the wrapper turns into lock requests before a step.

use taserial::dsl::parse_program;
use taserial::rng::SeedStream;
use taserial::rwloc::analyze_rule;
use taserial::state::{Interpretation, State};
use taserial::value::{Location, Value};

fn main() {
    let m = parse_program(
        "machine M shared a/1, i/0, total/0
           rule: if a(i) < 2 then total := total + a(i)
                 else forall j with j < i do a(j) := 0
           terminated: true",
    )
    .unwrap();
    for i in [0, 3] {
        let mut s = State::with_int_domain(4).unwrap();
        s.set(Location::nullary("i"), Value::int(i));
        s.set(Location::nullary("total"), Value::int(0));
        for d in 0..4 {
            s.set(Location::new("a", vec![Value::int(d)]), Value::int(d));
        }
        let (updates, rw) = analyze_rule(&m.main, &s, &Interpretation::new(), &m.rules, &mut SeedStream::from_seed(0)).unwrap();
        let list = |set: &std::collections::BTreeSet<Location>| set.iter().map(|l| l.to_string()).collect::<Vec<_>>().join(" ");
        println!("i = {i}");
        println!("  reads:   {}", list(&rw.reads));
        println!("  writes:  {}", list(&rw.writes));
        println!(
            "  updates: {}",
            updates.iter().map(|(l, v)| format!("{l}:={v}")).collect::<Vec<_>>().join(" ")
        );
    }
}
