//! Printing and re-parsing programs.

mod common;

use common::RuleGen;
use proptest::prelude::*;
use taserial::dsl::{parse_program, parse_programs, print_machine, print_programs};
use taserial::fuzz::{generate, FuzzParams};
use taserial::machine::Machine;
use taserial::syntax::{Formula, Rule, Term};
use taserial::txctl::WaitMode;
use taserial::value::{Location, Value};

fn machine(seed: u64) -> Machine {
    let mut g = RuleGen::new(seed, true);
    let main = g.rule(4);
    let mut m = Machine::new("M", main, Formula::Eq(Term::nullary("f"), Term::int(0)))
        .shared("a", 1)
        .monitored("p", 1)
        .init(Location::new("a", vec![Value::int(0)]), Value::int(-2))
        .init(Location::nullary("f"), Value::int(1));
    m.rules = g.rules();
    m
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(256))]

    #[test]
    fn generated_rules_round_trip(seed in any::<u64>()) {
        let m = machine(seed);
        let text = print_machine(&m);
        let back = parse_program(&text).map_err(|e| TestCaseError::fail(format!("{e}\n{text}")))?;
        prop_assert_eq!(back, m);
    }

    #[test]
    fn fuzz_programs_round_trip(seed in any::<u64>()) {
        let cfg = generate(&FuzzParams::default(), seed, WaitMode::Retry).unwrap();
        let text = print_programs(&cfg.machines);
        prop_assert_eq!(parse_programs(&text).unwrap(), cfg.machines);
    }

    // A lone machine has nobody to share with, so it is open by construction.
    #[test]
    fn fuzz_programs_are_closed(seed in any::<u64>(), machines in 2usize..5) {
        let params = FuzzParams { machines, ..FuzzParams::default() };
        let cfg = generate(&params, seed, WaitMode::Suspend).unwrap();
        prop_assert!(cfg.validate().unwrap().is_empty());
    }
}

#[test]
fn counter_program_parses_to_the_expected_tree() {
    let text = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/programs/counter.ta")).unwrap();
    let ms = parse_programs(&text).unwrap();
    assert_eq!(ms.len(), 2);
    let i1 = || Term::nullary("i1");
    let count = || Term::nullary("count");
    let expected = Machine::new(
        "Inc1",
        Rule::if_then_else(
            Formula::Lt(i1(), Term::int(3)),
            Rule::par(
                Rule::assign(count(), Term::plus(count(), Term::int(1))),
                Rule::assign(i1(), Term::plus(i1(), Term::int(1))),
            ),
            Rule::Skip,
        ),
        Formula::Eq(i1(), Term::int(3)),
    )
    .shared("count", 0)
    .init(Location::nullary("count"), Value::int(0))
    .init(Location::nullary("i1"), Value::int(0));
    assert_eq!(ms[0], expected);
}

#[test]
fn errors_carry_positions() {
    let err = parse_program("machine A\n  rule: if then skip\n  terminated: true").unwrap_err();
    let msg = err.to_string();
    assert!(msg.contains("2:"), "{msg}");
}
