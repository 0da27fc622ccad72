//! Compiles the universal machines and compares each program with the
//! bijection table it should reproduce.
//!
//!     cargo run --example compile_tables

use civtm::builtin::{builtin_program, table_fixture};
use civtm::controller::{compile, diff_against_fixture};
use civtm::world::{Ruleset, TapeSymbol};

fn main() {
    for (name, ruleset) in [
        ("rogozhin_10_3", Ruleset::BE),
        ("rogozhin_10_3", Ruleset::V),
        ("rogozhin_24_2", Ruleset::VI),
    ] {
        let spec = builtin_program(name).unwrap();
        let program = compile(&spec, ruleset).unwrap();
        let blank = program.macro_for(0, TapeSymbol::Blank).unwrap();
        println!(
            "{name} on {ruleset}: {} macros; state 0 on blank: {:?}, move {:?}, {}",
            program.macros.len(),
            blank.tape_action,
            blank.head_move,
            blank.state_text(ruleset).unwrap_or_default()
        );
        let fixture = table_fixture(name, &ruleset.to_string()).unwrap();
        print!("{}", diff_against_fixture(&program, &fixture));
    }
}
