//! The three-state busy beaver on all three rulesets, checked instruction by
//! instruction against the reference interpreter.
//!
//!     cargo run --example bb3_lockstep

use civtm::builtin::builtin_program;
use civtm::harness::lockstep_verify;
use civtm::tm::{run, Tape, TmConfig};
use civtm::world::{Ruleset, RulesetParams};

fn main() {
    let spec = builtin_program("bb3").expect("bb3 ships with the crate");
    let oracle = run(&spec, TmConfig::initial(&spec, Tape::new()), 1_000);
    println!(
        "reference: {:?} after {} instructions, {} ones, head {}",
        oracle.outcome,
        oracle.steps,
        oracle.last().tape.count("1"),
        oracle.last().head
    );

    for ruleset in Ruleset::ALL {
        let report = lockstep_verify(&spec, ruleset, &Tape::new(), 1_000, &RulesetParams::new(ruleset))
            .expect("bb3 compiles for every ruleset");
        println!(
            "{ruleset:>2}: {:?}, {} instructions in {} turns, {} tape extensions",
            report.outcome, report.instructions_verified, report.total_turns, report.extensions
        );
    }
}
