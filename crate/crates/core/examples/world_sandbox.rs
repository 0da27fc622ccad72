//! Drives the world engine directly with primitive orders: Roads, pillage,
//! Terrascapes and the Culture they produce.
//!
//!     cargo run --example world_sandbox

use std::collections::BTreeMap;

use civtm::world::{Actor, Command, Resource, Ruleset, RulesetParams, WorldState, ROVER, STATE_WORKER, TAPE_WORKER};

fn settle(world: &mut WorldState) {
    while world.units.values().any(|u| u.is_busy()) {
        world.advance_turn().unwrap();
    }
}

fn main() {
    let mut world = WorldState::init(RulesetParams::new(Ruleset::BE), &BTreeMap::new()).unwrap();

    world
        .apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad)
        .unwrap();
    world
        .apply_command(Actor::Unit(STATE_WORKER), Command::BuildTerrascape { tile: 0 })
        .unwrap();
    settle(&mut world);
    println!("turn {}: hex 0 holds {}", world.turn, world.symbol_at(0));

    if let Err(e) = world.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad) {
        println!("second Road refused: {e}");
    }
    world.apply_command(Actor::Unit(ROVER), Command::Pillage).unwrap();
    world
        .apply_command(Actor::Unit(STATE_WORKER), Command::BuildTerrascape { tile: 1 })
        .unwrap();
    settle(&mut world);
    println!(
        "turn {}: hex 0 holds {}, Culture {}",
        world.turn,
        world.symbol_at(0),
        world.yields()[&Resource::Culture]
    );

    print!("{}", world.event_log_jsonl());
}
