//! Read/write analysis against an instrumented interpreter.

mod common;

use std::collections::BTreeSet;

use common::{rwloc_agrees, Probe, RuleGen};
use proptest::prelude::*;
use taserial::rng::SeedStream;
use taserial::rwloc::rw_rule;
use taserial::state::Interpretation;

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn choose_free_rules(seed in any::<u64>()) {
        prop_assert_eq!(rwloc_agrees(seed, false), Ok(()));
    }

    #[test]
    fn rules_with_choose(seed in any::<u64>()) {
        prop_assert_eq!(rwloc_agrees(seed, true), Ok(()));
    }
}

#[test]
fn generator_covers_the_syntax() {
    let mut seen = BTreeSet::new();
    for seed in 0..200 {
        let r = RuleGen::new(seed, true).rule(4);
        let text = taserial::dsl::print_rule(&r);
        for kw in ["if", "let", "forall", "choose", "par", "seq", "call", "exists", "not"] {
            if text.contains(kw) {
                seen.insert(kw);
            }
        }
    }
    assert_eq!(seen.len(), 9, "{seen:?}");
}

// The oracle has teeth: dropping any executed read from the analysis result
// is caught.
#[test]
fn probe_reads_are_not_vacuous() {
    let mut nonempty = 0;
    for seed in 0..100 {
        let mut g = RuleGen::new(seed, false);
        let rule = g.rule(4);
        let s = g.state();
        let rules = g.rules();
        let env = Interpretation::new();
        let mut probe = Probe::default();
        probe.rule(&rule, &s, &env, &rules, &mut SeedStream::from_seed(0));
        let mut rw = rw_rule(&rule, &s, &env, &rules, &mut SeedStream::from_seed(0)).unwrap();
        if let Some(l) = probe.reads.iter().next() {
            nonempty += 1;
            rw.reads.remove(l);
            assert!(!probe.reads.is_subset(&rw.reads));
        }
    }
    assert!(nonempty > 50, "{nonempty}");
}
