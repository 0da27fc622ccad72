//! Generates seeded random machines and verifies each on every ruleset.
//!
//!     cargo run --example random_machines -- 20

use civtm::harness::{lockstep_verify, random_tm};
use civtm::tm::Tape;
use civtm::world::{Ruleset, RulesetParams};

fn main() {
    let count: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(10);
    for ruleset in Ruleset::ALL {
        let symbols = ruleset.alphabet().len();
        let mut tally = std::collections::BTreeMap::new();
        for seed in 0..count {
            let spec = random_tm(seed, 1 + (seed % 7) as usize, symbols).unwrap();
            let report = lockstep_verify(&spec, ruleset, &Tape::new(), 100, &RulesetParams::new(ruleset)).unwrap();
            assert!(report.is_equivalent(), "seed {seed}: {:?}", report.first_divergence);
            *tally.entry(format!("{:?}", report.outcome)).or_insert(0) += 1;
        }
        println!("{ruleset:>2}: {tally:?}");
    }
}
