//! Loads a machine from JSON, runs it on V from a written tape, and prints
//! the decoded configuration after every instruction.
//!
//!     cargo run --example custom_machine

use civtm::codec::{decode, init_world};
use civtm::controller::{compile, execute_instruction, ExecError};
use civtm::tm::{Tape, TmSpec};
use civtm::world::{Ruleset, RulesetParams};

/// Binary increment: walk right to the end of the number, then carry left.
const INCREMENT: &str = r#"{
  "format_version": 1,
  "states": ["seek", "carry", "done"],
  "alphabet": ["_", "0", "1"],
  "blank": "_",
  "input_alphabet": ["0", "1"],
  "initial": "seek",
  "halting": ["done"],
  "transitions": [
    {"state": "seek",  "read": "0", "write": "0", "move": "R", "next": "seek"},
    {"state": "seek",  "read": "1", "write": "1", "move": "R", "next": "seek"},
    {"state": "seek",  "read": "_", "write": "_", "move": "L", "next": "carry"},
    {"state": "carry", "read": "1", "write": "0", "move": "L", "next": "carry"},
    {"state": "carry", "read": "0", "write": "1", "move": "L", "next": "done"},
    {"state": "carry", "read": "_", "write": "1", "move": "L", "next": "done"}
  ]
}"#;

fn main() {
    let spec = TmSpec::from_json(INCREMENT).unwrap();
    let program = compile(&spec, Ruleset::V).unwrap();
    let tape = Tape::from_cells([(0, "1"), (1, "0"), (2, "1"), (3, "1")], &spec.blank);
    let mut world = init_world(&program, &tape, RulesetParams::new(Ruleset::V)).unwrap();

    loop {
        let c = decode(&world, &program).unwrap().config.unwrap();
        let cells: String = (-1..=4).map(|k| c.tape.read(k, &spec.blank)).collect();
        println!("turn {:>3}  {:<6} head {:>2}  {cells}", world.turn, c.state, c.head);
        match execute_instruction(&mut world, &program) {
            Ok(_) => {}
            Err(ExecError::Halted) => break,
            Err(e) => panic!("{e}"),
        }
    }
}
