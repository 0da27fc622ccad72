//! Reading machine configurations out of a world, and writing initial tapes
//! into one.

use std::collections::BTreeMap;

use serde::Serialize;
use thiserror::Error;

use crate::controller::ControllerProgram;
use crate::tm::{Tape, TmConfig};
use crate::world::{Resource, Ruleset, RulesetParams, TapeSymbol, WorldError, WorldState};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("{resource:?} delta {delta} is not a multiple of {per_unit}")]
    NonIntegerYield {
        resource: Resource,
        delta: i64,
        per_unit: i64,
    },
    #[error("yield says state {from_yield}, tile count says {from_count}")]
    YieldMismatch { from_yield: i64, from_count: usize },
    #[error("state index {0} has no machine state")]
    StateOutOfRange(i64),
    #[error("hex {hex} holds {symbol:?}, which the program does not use")]
    SymbolOutsideAlphabet { hex: i64, symbol: TapeSymbol },
    #[error("tape worker stands on hex {0}, which is not a tape cell")]
    HeadOffTape(i64),
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("tape symbol `{0}` is not in the program alphabet")]
    UnknownSymbol(String),
    #[error("program targets {program}, parameters target {params}")]
    RulesetMismatch { program: Ruleset, params: Ruleset },
    #[error(transparent)]
    World(#[from] WorldError),
}

/// The raw observation the state index was read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct StateEvidence {
    /// Culture or Faith over its baseline; `None` under V.
    pub yield_delta: Option<i64>,
    /// Terrascapes, Railroads, or worked Monasteries.
    pub count: usize,
    pub state_index: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodedConfig {
    /// Present only at an instruction boundary.
    pub config: Option<TmConfig>,
    pub evidence: StateEvidence,
    pub boundary: bool,
}

fn evidence(world: &WorldState) -> Result<StateEvidence, DecodeError> {
    let count = world.state_region.count();
    let p = &world.params;
    let from_yield = |resource: Resource, per_unit: i64| -> Result<(i64, i64), DecodeError> {
        let delta = world.yields()[&resource] - world.state_region.base_yield;
        if delta % per_unit != 0 {
            return Err(DecodeError::NonIntegerYield {
                resource,
                delta,
                per_unit,
            });
        }
        Ok((delta, delta / per_unit))
    };
    let (yield_delta, index) = match world.ruleset() {
        Ruleset::BE => {
            let (d, i) = from_yield(Resource::Culture, p.terrascape_culture)?;
            (Some(d), i)
        }
        Ruleset::VI => {
            let (d, i) = from_yield(Resource::Faith, p.monastery_faith)?;
            (Some(d), i)
        }
        Ruleset::V => (None, count as i64),
    };
    if index != count as i64 {
        return Err(DecodeError::YieldMismatch {
            from_yield: index,
            from_count: count,
        });
    }
    Ok(StateEvidence {
        yield_delta,
        count,
        state_index: count,
    })
}

/// Game state index, checked against the program's state count.
pub fn state_index(world: &WorldState, program: &ControllerProgram) -> Result<usize, DecodeError> {
    let e = evidence(world)?;
    if e.state_index >= program.states.len() {
        return Err(DecodeError::StateOutOfRange(e.state_index as i64));
    }
    Ok(e.state_index)
}

/// Tape index under the tape worker.
pub fn head_cell(world: &WorldState) -> Result<i64, DecodeError> {
    let hex = world.tape_worker().position;
    match world.ruleset() {
        Ruleset::VI => world.params.hex_cell(hex).ok_or(DecodeError::HeadOffTape(hex)),
        _ => Ok(hex),
    }
}

/// Non-blank cells as game symbols, keyed by tape index.
pub fn game_tape(world: &WorldState) -> BTreeMap<i64, TapeSymbol> {
    let mut out = BTreeMap::new();
    for hex in world.tape.values() {
        let symbol = hex.symbol();
        if symbol == TapeSymbol::Blank {
            continue;
        }
        let index = match world.ruleset() {
            Ruleset::VI => match world.params.hex_cell(hex.index) {
                Some(k) => k,
                None => continue,
            },
            _ => hex.index,
        };
        out.insert(index, symbol);
    }
    out
}

/// Reads the machine configuration a world encodes. Never modifies it.
pub fn decode(world: &WorldState, program: &ControllerProgram) -> Result<DecodedConfig, DecodeError> {
    let evidence = evidence(world)?;
    let boundary = world.is_quiescent();
    if !boundary {
        return Ok(DecodedConfig {
            config: None,
            evidence,
            boundary,
        });
    }
    let state = state_index(world, program)?;
    let blank = program.blank();
    let mut tape = Tape::new();
    for (k, symbol) in game_tape(world) {
        let tm = program
            .tm_symbol(symbol)
            .ok_or(DecodeError::SymbolOutsideAlphabet { hex: k, symbol })?;
        tape.write(k, tm.to_owned(), blank);
    }
    let config = TmConfig {
        state: program.states[state].clone(),
        tape,
        head: head_cell(world)?,
    };
    Ok(DecodedConfig {
        config: Some(config),
        evidence,
        boundary,
    })
}

/// Maps a machine tape onto game symbols. Blanks are dropped.
pub fn encode_tape(tape: &Tape, program: &ControllerProgram) -> Result<BTreeMap<i64, TapeSymbol>, EncodeError> {
    let mut out = BTreeMap::new();
    for (&k, s) in tape.cells() {
        let g = program
            .game_symbol(s)
            .ok_or_else(|| EncodeError::UnknownSymbol(s.clone()))?;
        if g != TapeSymbol::Blank {
            out.insert(k, g);
        }
    }
    Ok(out)
}

/// A fresh world holding `tape`, in the program's initial state, head at 0.
pub fn init_world(program: &ControllerProgram, tape: &Tape, params: RulesetParams) -> Result<WorldState, EncodeError> {
    if params.ruleset != program.ruleset {
        return Err(EncodeError::RulesetMismatch {
            program: program.ruleset,
            params: params.ruleset,
        });
    }
    Ok(WorldState::init(params, &encode_tape(tape, program)?)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::builtin_program;
    use crate::controller::compile;
    use crate::world::{Actor, Command, STATE_WORKER};

    fn program(name: &str, r: Ruleset) -> ControllerProgram {
        compile(&builtin_program(name).unwrap(), r).unwrap()
    }

    #[test]
    fn fresh_worlds_decode_to_the_input() {
        for (name, r) in [
            ("rogozhin_10_3", Ruleset::BE),
            ("rogozhin_10_3", Ruleset::V),
            ("rogozhin_24_2", Ruleset::VI),
        ] {
            let p = program(name, r);
            let tape = Tape::from_cells([(0, "1"), (3, "1"), (-4, "1")], "0");
            let w = init_world(&p, &tape, RulesetParams::new(r)).unwrap();
            let d = decode(&w, &p).unwrap();
            assert!(d.boundary);
            let c = d.config.unwrap();
            assert_eq!((c.state, c.tape, c.head), (p.states[0].clone(), tape, 0));
            assert_eq!(d.evidence.state_index, 0);
        }
    }

    #[test]
    fn be_culture_seven_is_state_two() {
        let p = program("rogozhin_10_3", Ruleset::BE);
        let mut w = init_world(&p, &Tape::new(), RulesetParams::new(Ruleset::BE)).unwrap();
        for tile in 0..2 {
            w.apply_command(Actor::Unit(STATE_WORKER), Command::BuildTerrascape { tile })
                .unwrap();
            while !w.is_quiescent() {
                w.advance_turn().unwrap();
            }
        }
        let d = decode(&w, &p).unwrap();
        assert_eq!(d.evidence.yield_delta, Some(6));
        assert_eq!(d.config.unwrap().state, "q2");
    }

    #[test]
    fn v_two_railroads_is_state_two() {
        let p = program("rogozhin_10_3", Ruleset::V);
        let mut w = init_world(&p, &Tape::new(), RulesetParams::new(Ruleset::V)).unwrap();
        for tile in [0, 5] {
            w.apply_command(Actor::Unit(STATE_WORKER), Command::BuildStateRailroad { tile })
                .unwrap();
            while !w.is_quiescent() {
                w.advance_turn().unwrap();
            }
        }
        assert_eq!(state_index(&w, &p).unwrap(), 2);
    }

    #[test]
    fn mid_instruction_worlds_carry_no_config() {
        let p = program("rogozhin_10_3", Ruleset::BE);
        let mut w = init_world(&p, &Tape::new(), RulesetParams::new(Ruleset::BE)).unwrap();
        w.apply_command(Actor::Unit(STATE_WORKER), Command::BuildTerrascape { tile: 0 })
            .unwrap();
        let d = decode(&w, &p).unwrap();
        assert!(!d.boundary && d.config.is_none());
    }

    #[test]
    fn be_road_cells() {
        let p = program("rogozhin_10_3", Ruleset::BE);
        let tape = Tape::from_cells([(0, "1"), (2, "1")], "0");
        let w = init_world(&p, &tape, RulesetParams::new(Ruleset::BE)).unwrap();
        assert_eq!(w.symbol_at(0), TapeSymbol::Road);
        assert_eq!(w.symbol_at(1), TapeSymbol::Blank);
        assert_eq!(w.symbol_at(2), TapeSymbol::Road);
    }

    #[test]
    fn vi_first_cell_is_worked() {
        let p = program("rogozhin_24_2", Ruleset::VI);
        let w = init_world(&p, &Tape::from_cells([(0, "1")], "0"), RulesetParams::new(Ruleset::VI)).unwrap();
        let city = &w.cities[&0];
        assert!(w.tape[&city.tape_cells[0]].worked);
        assert!(!w.tape[&city.tape_cells[1]].worked);
    }

    #[test]
    fn foreign_symbols_and_state_overflow() {
        let p = program("bb3", Ruleset::BE);
        assert_eq!(
            encode_tape(&Tape::from_cells([(0, "b")], "0"), &p),
            Err(EncodeError::UnknownSymbol("b".into()))
        );
        let mut w = init_world(&p, &Tape::new(), RulesetParams::new(Ruleset::BE)).unwrap();
        for tile in 0..3 {
            w.apply_command(Actor::Unit(STATE_WORKER), Command::BuildTerrascape { tile })
                .unwrap();
            while !w.is_quiescent() {
                w.advance_turn().unwrap();
            }
        }
        assert_eq!(state_index(&w, &p), Err(DecodeError::StateOutOfRange(3)));
    }
}
