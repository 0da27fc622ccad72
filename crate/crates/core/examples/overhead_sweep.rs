//! Measures per-instruction turns of the 10-state universal machine while
//! varying build times, and sets them against the closed-form bounds.
//!
//!     cargo run --example overhead_sweep

use civtm::builtin::builtin_program;
use civtm::controller::compile_with;
use civtm::harness::{lockstep_run, overhead_report};
use civtm::tm::Tape;
use civtm::world::{Ruleset, RulesetParams};

fn main() {
    let spec = builtin_program("rogozhin_10_3").unwrap();
    let tape = Tape::from_cells([(0, "1"), (1, "b"), (2, "1"), (-1, "1")], "0");

    let mut configs = Vec::new();
    for t in 1..=4 {
        for m in 1..=4 {
            let mut p = RulesetParams::new(Ruleset::BE);
            p.terrascape_build_turns = t;
            p.road_build_turns = m;
            configs.push((format!("BE T={t} M={m}"), p));
        }
    }
    for b in 2..=4 {
        let mut p = RulesetParams::new(Ruleset::V);
        p.railroad_build_turns = b;
        configs.push((format!("V  B_rr={b}"), p));
    }

    for (label, params) in configs {
        let program = compile_with(&spec, &params).unwrap();
        let run = lockstep_run(&spec, &program, &tape, 200, params.clone(), |_| {}).unwrap();
        let o = overhead_report(&run.world.event_log, &params).unwrap();
        println!(
            "{label:<14} max {:>2} turns (build work {:>2}), derived bound {:>2}, closed-form {:>2}, {} over it",
            o.max_observed,
            o.max_core,
            o.derived_bound,
            o.published_bound.unwrap(),
            o.excess_over_published.len()
        );
    }
}
