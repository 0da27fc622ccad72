//! Lockstep verification against the reference interpreter, turn accounting,
//! and random machine generation.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{self, EncodeError};
use crate::controller::{
    self, CommandMacro, CompileError, ControllerProgram, ExecError, InstructionRecord, Phase, TapeAction,
    INSTRUCTION_EVENT,
};
use crate::tm::{self, Action, Move, StepOutcome, Tape, TmConfig, TmSpec};
use crate::world::{LogEvent, Ruleset, RulesetParams, TapeSymbol, WorldState};

pub const REPORT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Compile(#[from] CompileError),
    #[error(transparent)]
    Encode(#[from] EncodeError),
    #[error("random machine bounds: {0}")]
    Bounds(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LockstepOutcome {
    /// Both sides halted on the same instruction.
    Equivalent,
    Diverged,
    /// The reference machine had no entry for its configuration, and the
    /// game agreed.
    OracleStuck,
    /// Every boundary matched up to the instruction budget.
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Divergence {
    /// Instruction after which the two sides disagreed; 0 is the input.
    pub instruction: u64,
    pub oracle: Option<TmConfig>,
    pub decoded: Option<TmConfig>,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LockstepReport {
    pub format_version: u32,
    pub ruleset: Ruleset,
    pub instructions_verified: u64,
    pub outcome: LockstepOutcome,
    pub first_divergence: Option<Divergence>,
    pub halted: bool,
    pub total_turns: u64,
    pub extensions: u64,
    pub food_checks: u64,
    pub min_food_stock: Option<i64>,
    pub final_config: Option<TmConfig>,
}

impl LockstepReport {
    /// True unless the game and the reference machine disagreed.
    pub fn is_equivalent(&self) -> bool {
        self.outcome != LockstepOutcome::Diverged
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// A matched instruction boundary, handed to lockstep observers.
pub struct Boundary<'a> {
    pub index: u64,
    pub world: &'a WorldState,
    /// `None` for the input configuration.
    pub record: Option<&'a InstructionRecord>,
    pub config: &'a TmConfig,
}

/// Everything a finished lockstep run leaves behind.
pub struct LockstepRun {
    pub report: LockstepReport,
    pub world: WorldState,
    pub records: Vec<InstructionRecord>,
}

pub fn lockstep_verify(
    spec: &TmSpec,
    ruleset: Ruleset,
    tape: &Tape,
    max_instructions: u64,
    params: &RulesetParams,
) -> Result<LockstepReport, HarnessError> {
    let mut params = params.clone();
    params.ruleset = ruleset;
    let program = controller::compile_with(spec, &params)?;
    Ok(lockstep_run(spec, &program, tape, max_instructions, params, |_| {})?.report)
}

/// Runs `program` on the game beside `spec` on the reference interpreter,
/// comparing decoded and reference configurations at every boundary.
pub fn lockstep_run(
    spec: &TmSpec,
    program: &ControllerProgram,
    tape: &Tape,
    max_instructions: u64,
    params: RulesetParams,
    mut observe: impl FnMut(&Boundary<'_>),
) -> Result<LockstepRun, HarnessError> {
    let mut world = codec::init_world(program, tape, params)?;
    let mut oracle = TmConfig::initial(spec, tape.clone());
    let mut records = Vec::new();
    let mut verified = 0u64;

    let diverge = |instruction: u64, oracle: &TmConfig, decoded: Option<TmConfig>, reason: String| {
        (
            LockstepOutcome::Diverged,
            Some(Divergence {
                instruction,
                oracle: Some(oracle.clone()),
                decoded,
                reason,
            }),
        )
    };

    let decoded = |world: &WorldState| codec::decode(world, program).map(|d| d.config);
    let (outcome, divergence) = 'run: {
        match decoded(&world) {
            Ok(Some(c)) if c == oracle => observe(&Boundary {
                index: 0,
                world: &world,
                record: None,
                config: &c,
            }),
            Ok(c) => break 'run diverge(0, &oracle, c, "input encoding differs".into()),
            Err(e) => break 'run diverge(0, &oracle, None, e.to_string()),
        }
        loop {
            if verified >= max_instructions {
                break 'run (LockstepOutcome::StepLimit, None);
            }
            let expected = tm::step(spec, &oracle);
            let game = controller::execute_instruction(&mut world, program);
            let i = verified + 1;
            let (next, halts) = match (expected, game) {
                (Err(_), Err(ExecError::Stuck { .. })) => break 'run (LockstepOutcome::OracleStuck, None),
                (Ok(StepOutcome::Halted { executed: false, .. }), Err(ExecError::Halted)) => {
                    break 'run (LockstepOutcome::Equivalent, None)
                }
                (Ok(StepOutcome::Moved(next)), Ok(r)) if !r.applied.halt => {
                    records.push(r);
                    (next, false)
                }
                (Ok(StepOutcome::Halted { config, executed: true }), Ok(r)) if r.applied.halt => {
                    records.push(r);
                    (config, true)
                }
                (expected, Ok(r)) => {
                    let reason = format!("reference {} but the game ran {:?}", describe(&expected), r.applied);
                    records.push(r);
                    break 'run diverge(i, &oracle, decoded(&world).ok().flatten(), reason);
                }
                (expected, Err(e)) => {
                    let reason = format!("reference {} but the game failed: {e}", describe(&expected));
                    break 'run diverge(i, &oracle, None, reason);
                }
            };
            oracle = next;
            match decoded(&world) {
                Ok(Some(c)) if c == oracle => {
                    verified = i;
                    observe(&Boundary {
                        index: i,
                        world: &world,
                        record: records.last(),
                        config: &c,
                    });
                }
                Ok(c) => break 'run diverge(i, &oracle, c, "configurations differ".into()),
                Err(e) => break 'run diverge(i, &oracle, None, e.to_string()),
            }
            if halts {
                break 'run (LockstepOutcome::Equivalent, None);
            }
        }
    };

    let report = LockstepReport {
        format_version: REPORT_FORMAT_VERSION,
        ruleset: program.ruleset,
        instructions_verified: verified,
        outcome,
        first_divergence: divergence,
        halted: world.halted,
        total_turns: world.turn,
        extensions: records.iter().filter(|r| r.extension.is_some()).count() as u64,
        food_checks: world.food_audit.checks,
        min_food_stock: world.food_audit.min_stock,
        final_config: Some(oracle),
    };
    Ok(LockstepRun { report, world, records })
}

fn describe(step: &Result<StepOutcome, tm::Stuck>) -> String {
    match step {
        Err(s) => format!("is stuck ({}, {})", s.state, s.symbol),
        Ok(StepOutcome::Halted { executed: false, .. }) => "had already halted".into(),
        Ok(StepOutcome::Halted { .. }) => "halted".into(),
        Ok(StepOutcome::Moved(c)) => format!("moved to {} at {}", c.state, c.head),
    }
}

// ---------------------------------------------------------------------------
// Turn accounting

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OverheadError {
    #[error("event {0} is not a valid instruction record: {1}")]
    BadRecord(usize, String),
    #[error("instruction {0} does not start where the previous one ended")]
    NotAtBoundary(u64),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ExtensionCost {
    pub tape_len: u64,
    pub settler_training: u64,
    pub settler_travel: u64,
    pub founding: u64,
    pub growth: u64,
    /// Training, founding and growth: the part the closed-form bound covers.
    pub core: u64,
    /// `C + S(L) + 3` with `C` the full growth time and `S(L)` in turns.
    pub published_bound: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct InstructionCost {
    pub index: u64,
    pub turns: u64,
    pub tape_work: u64,
    pub pillage: u64,
    pub movement: u64,
    pub state_work: u64,
    /// Longer of the tape and state build work, without pillage or movement.
    pub core: u64,
    pub derived_bound: u64,
    pub extension: Option<ExtensionCost>,
}

/// An instruction that took longer than the closed-form bound, with the
/// turns that bound leaves out.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Excess {
    pub index: u64,
    pub observed: u64,
    pub published_bound: u64,
    pub movement: u64,
    pub pillage: u64,
    pub settler_travel: u64,
    /// Excess not covered by the itemized turns.
    pub unexplained: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct OverheadReport {
    pub format_version: u32,
    pub ruleset: Ruleset,
    pub instructions: Vec<InstructionCost>,
    pub max_observed: u64,
    pub max_core: u64,
    /// `5T + M` (BE) or `4B_rr + 1` (V); VI bounds sit on each extension.
    pub published_bound: Option<u64>,
    pub derived_bound: u64,
    pub published_bound_satisfied: bool,
    pub derived_bound_satisfied: bool,
    pub excess_over_published: Vec<Excess>,
}

impl OverheadReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn extensions(&self) -> impl Iterator<Item = (&InstructionCost, &ExtensionCost)> {
        self.instructions
            .iter()
            .filter_map(|i| i.extension.as_ref().map(|e| (i, e)))
    }
}

/// Closed-form per-instruction bound of the appendix overhead analysis.
pub fn published_bound(params: &RulesetParams) -> Option<u64> {
    match params.ruleset {
        Ruleset::BE => Some(5 * u64::from(params.terrascape_build_turns) + u64::from(params.road_build_turns)),
        Ruleset::V => Some(4 * u64::from(params.railroad_build_turns) + 1),
        Ruleset::VI => None,
    }
}

/// `C + S(L) + 3` for one VI tape extension at tape length `tape_len`.
pub fn extension_published_bound(params: &RulesetParams, tape_len: u64) -> u64 {
    params.full_growth_turns() + params.settler_turns(tape_len) + 3
}

fn tape_cost(params: &RulesetParams, m: &CommandMacro, read: TapeSymbol) -> u64 {
    let m_turns = u64::from(params.road_build_turns);
    let one = u64::from(params.remove_or_repair_turns);
    match m.tape_action {
        TapeAction::Leave | TapeAction::SetWorked | TapeAction::SetUnworked => 0,
        TapeAction::BuildRoad if read == TapeSymbol::Railroad => one + m_turns,
        TapeAction::BuildRoad => m_turns,
        TapeAction::BuildRoadThenPillage => m_turns + one,
        TapeAction::RemoveImprovement | TapeAction::RepairRoad | TapeAction::PillageRoad => one,
        TapeAction::BuildRailroad => u64::from(params.railroad_build_turns),
    }
}

fn state_cost(params: &RulesetParams, delta: i64) -> u64 {
    let k = delta.unsigned_abs();
    match (params.ruleset, delta > 0) {
        (Ruleset::VI, _) => 0,
        (_, false) => k * u64::from(params.remove_or_repair_turns),
        (Ruleset::BE, true) => k * u64::from(params.terrascape_build_turns),
        (Ruleset::V, true) => k * u64::from(params.railroad_build_turns),
    }
}

/// Tight turn bound for one instruction, from its macro and the parameters.
pub fn derived_bound(params: &RulesetParams, m: &CommandMacro, read: TapeSymbol, extension_len: Option<u64>) -> u64 {
    let movement = match (m.head_move, params.ruleset) {
        (None, _) => 0,
        (Some(_), Ruleset::VI) => params.move_turns(2.max(params.city_spacing - 2)),
        (Some(_), _) => params.move_turns(1),
    };
    let mut bound = (tape_cost(params, m, read) + movement).max(state_cost(params, m.state_delta));
    if let Some(len) = extension_len {
        bound = bound.max(
            params.settler_turns(len)
                + params.move_turns(params.city_spacing)
                + u64::from(params.settler_found_turns)
                + params.full_growth_turns(),
        );
    }
    bound
}

fn phase_turns(spans: &[controller::PhaseSpan], phase: Phase) -> u64 {
    spans.iter().filter(|s| s.phase == phase).map(|s| s.turns()).sum()
}

/// Turn accounting over the instruction records mirrored in an event log.
pub fn overhead_report(event_log: &[LogEvent], params: &RulesetParams) -> Result<OverheadReport, OverheadError> {
    let mut instructions = Vec::new();
    let mut excess_over_published = Vec::new();
    let published = published_bound(params);
    let mut previous_end: Option<u64> = None;
    for (i, event) in event_log.iter().enumerate() {
        if event.command != INSTRUCTION_EVENT {
            continue;
        }
        let r: InstructionRecord =
            serde_json::from_str(&event.detail).map_err(|e| OverheadError::BadRecord(i, e.to_string()))?;
        if previous_end.is_some_and(|end| end != r.start_turn) {
            return Err(OverheadError::NotAtBoundary(r.index));
        }
        previous_end = Some(r.end_turn);

        let tape_work = phase_turns(&r.tape_chain, Phase::TapeWork);
        let pillage = phase_turns(&r.tape_chain, Phase::Pillage);
        let movement = phase_turns(&r.tape_chain, Phase::Movement);
        let state_work = phase_turns(&r.state_chain, Phase::StateWork);
        let extension = r.extension.map(|e| {
            let x = &r.extension_chain;
            let settler_training = phase_turns(x, Phase::SettlerTraining);
            let founding = phase_turns(x, Phase::Founding);
            let growth = phase_turns(x, Phase::Growth);
            ExtensionCost {
                tape_len: e.tape_len,
                settler_training,
                settler_travel: phase_turns(x, Phase::SettlerTravel),
                founding,
                growth,
                core: settler_training + founding + growth,
                published_bound: extension_published_bound(params, e.tape_len),
            }
        });
        let cost = InstructionCost {
            index: r.index,
            turns: r.turns(),
            tape_work,
            pillage,
            movement,
            state_work,
            core: tape_work.max(state_work),
            derived_bound: derived_bound(params, &r.applied, r.read, r.extension.map(|e| e.tape_len)),
            extension,
        };
        let bound = match (&cost.extension, published) {
            (Some(e), _) => Some(e.published_bound),
            (None, p) => p,
        };
        if let Some(bound) = bound.filter(|b| cost.turns > *b) {
            let settler_travel = cost.extension.as_ref().map_or(0, |e| e.settler_travel);
            let itemized = movement + pillage + settler_travel;
            excess_over_published.push(Excess {
                index: cost.index,
                observed: cost.turns,
                published_bound: bound,
                movement,
                pillage,
                settler_travel,
                unexplained: (cost.turns - bound).saturating_sub(itemized),
            });
        }
        instructions.push(cost);
    }
    let max_observed = instructions.iter().map(|c| c.turns).max().unwrap_or(0);
    let max_core = instructions.iter().map(|c| c.core).max().unwrap_or(0);
    let derived = instructions.iter().map(|c| c.derived_bound).max().unwrap_or(0);
    let published_ok = instructions.iter().all(|c| match &c.extension {
        Some(e) => e.core <= e.published_bound,
        None => published.is_none_or(|p| c.core <= p),
    });
    Ok(OverheadReport {
        format_version: REPORT_FORMAT_VERSION,
        ruleset: params.ruleset,
        max_observed,
        max_core,
        published_bound: published,
        derived_bound: derived,
        published_bound_satisfied: published_ok,
        derived_bound_satisfied: instructions.iter().all(|c| c.turns <= c.derived_bound),
        excess_over_published,
        instructions,
    })
}

// ---------------------------------------------------------------------------
// Random machines

pub const RANDOM_HALT_STATE: &str = "halt";

/// A reproducible machine with `num_states` working states `s0..`, one
/// extra `halt` state, and symbols `"0"` (blank), `"1"`, `"2"`. Every
/// (working state, symbol) pair has an entry and at least one leads to
/// `halt`.
pub fn random_tm(seed: u64, num_states: usize, num_symbols: usize) -> Result<TmSpec, HarnessError> {
    if num_states == 0 {
        return Err(HarnessError::Bounds("need at least one state".into()));
    }
    if !(1..=3).contains(&num_symbols) {
        return Err(HarnessError::Bounds("between one and three symbols".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let working: Vec<String> = (0..num_states).map(|i| format!("s{i}")).collect();
    let alphabet: Vec<String> = (0..num_symbols).map(|i| i.to_string()).collect();
    let mut states = working.clone();
    states.push(RANDOM_HALT_STATE.into());

    let mut transitions = std::collections::BTreeMap::new();
    for q in &working {
        for s in &alphabet {
            let action = Action::Step {
                write: alphabet[rng.gen_range(0..num_symbols)].clone(),
                mv: if rng.gen_bool(0.5) { Move::L } else { Move::R },
                next: states[rng.gen_range(0..states.len())].clone(),
            };
            transitions.insert((q.clone(), s.clone()), action);
        }
    }
    let reaches_halt = transitions
        .values()
        .any(|a| matches!(a, Action::Step { next, .. } if next == RANDOM_HALT_STATE));
    if !reaches_halt {
        let n = transitions.len();
        let pick = rng.gen_range(0..n);
        if let Some(Action::Step { next, .. }) = transitions.values_mut().nth(pick) {
            *next = RANDOM_HALT_STATE.into();
        }
    }
    TmSpec {
        initial: working[0].clone(),
        input_alphabet: alphabet[1..].iter().cloned().collect(),
        blank: alphabet[0].clone(),
        halting: [RANDOM_HALT_STATE.to_owned()].into(),
        states,
        alphabet,
        transitions,
    }
    .validated()
    .map_err(|e| HarnessError::Compile(e.into()))
}

/// A reproducible input tape over `alphabet` within cells `-span..span`.
pub fn random_tape(seed: u64, alphabet: &[String], blank: &str, span: i64) -> Tape {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a9e_5eed);
    let cells = (-span..span).map(|i| (i, alphabet[rng.gen_range(0..alphabet.len())].clone()));
    Tape::from_cells(cells, blank)
}
