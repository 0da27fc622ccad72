//! Walks the VI tape head to the right, founding Cities as it goes, and
//! prints the census and Food stock after every step.
//!
//!     cargo run --example civ6_tape_extension

use civtm::builtin::builtin_program;
use civtm::codec::{head_cell, init_world};
use civtm::controller::{compile, extend_tape, Phase};
use civtm::tm::{Move, Tape};
use civtm::world::{Ruleset, RulesetParams};

fn main() {
    let program = compile(&builtin_program("bb3").unwrap(), Ruleset::VI).unwrap();
    let params = RulesetParams::new(Ruleset::VI);
    let mut world = init_world(&program, &Tape::new(), params).unwrap();

    for _ in 0..6 {
        let start = world.turn;
        let spans = extend_tape(&mut world, &program, Move::R).unwrap();
        let training: u64 = spans
            .iter()
            .filter(|s| s.phase == Phase::SettlerTraining)
            .map(|s| s.turns())
            .sum();
        let census: Vec<String> = world
            .cities
            .values()
            .map(|c| format!("{}:{}/{} food {}", c.index, c.citizens, c.growth_cap, c.food_stock))
            .collect();
        println!(
            "head at cell {:>2} after {:>3} turns (Settler training {training:>2})  [{}]",
            head_cell(&world).unwrap(),
            world.turn - start,
            census.join(", ")
        );
    }
    println!(
        "{} Food checks, lowest stock {:?}",
        world.food_audit.checks, world.food_audit.min_stock
    );
}
