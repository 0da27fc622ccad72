//! Compiler from machine descriptions to in-game command macros, and the
//! turn-by-turn driver that carries one macro out on a world.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builtin::TableFixture;
use crate::codec::{self, DecodeError};
use crate::tm::{Action, Move, SpecError, TmSpec};
use crate::world::{
    Actor, Command, Ruleset, RulesetParams, TapeSymbol, UnitId, UnitKind, WorldError, WorldState, END_CITY_CAP,
    INNER_CITY_CAP, VI_MONASTERIES,
};

pub const PROGRAM_FORMAT_VERSION: u32 = 1;

/// What the tape side of a macro does to the cell under the head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TapeAction {
    Leave,
    BuildRoad,
    RemoveImprovement,
    PillageRoad,
    RepairRoad,
    BuildRailroad,
    BuildRoadThenPillage,
    SetWorked,
    SetUnworked,
}

impl TapeAction {
    pub fn allowed_in(self, ruleset: Ruleset) -> bool {
        use TapeAction::*;
        match ruleset {
            Ruleset::BE => matches!(
                self,
                Leave | BuildRoad | RemoveImprovement | PillageRoad | RepairRoad | BuildRoadThenPillage
            ),
            Ruleset::V => matches!(self, Leave | BuildRoad | RemoveImprovement | BuildRailroad),
            Ruleset::VI => matches!(self, Leave | SetWorked | SetUnworked),
        }
    }

    /// The game-side instruction text as the bijection tables print it.
    fn table_text(self, ruleset: Ruleset, write: TapeSymbol) -> String {
        match self {
            TapeAction::Leave if ruleset == Ruleset::VI => symbol_text(ruleset, write).to_owned(),
            TapeAction::Leave => "No Improvement".into(),
            TapeAction::BuildRoad => "Build a Road".into(),
            TapeAction::RemoveImprovement => "Remove Improvement".into(),
            TapeAction::PillageRoad => "Pillage the Road".into(),
            TapeAction::RepairRoad => "Repair the Road".into(),
            TapeAction::BuildRailroad => "Build a Railroad".into(),
            TapeAction::BuildRoadThenPillage => "Build a Road, Pillage it".into(),
            TapeAction::SetWorked | TapeAction::SetUnworked => symbol_text(ruleset, write).into(),
        }
    }
}

/// Text the tables use for a cell's content.
pub fn symbol_text(ruleset: Ruleset, symbol: TapeSymbol) -> &'static str {
    match (ruleset, symbol) {
        (Ruleset::VI, TapeSymbol::Blank) => "Is Not Being Worked",
        (_, TapeSymbol::Blank) => "No Improvement",
        (_, TapeSymbol::Road) => "Road",
        (_, TapeSymbol::PillagedRoad) => "Pillaged Road",
        (_, TapeSymbol::Railroad) => "Railroad",
        (_, TapeSymbol::Worked) => "Is Being Worked",
    }
}

/// How the tape cell goes from `read` to `write`. Writing what is already
/// there is always `Leave`.
pub fn tape_action(ruleset: Ruleset, read: TapeSymbol, write: TapeSymbol) -> TapeAction {
    use TapeSymbol::*;
    if read == write {
        return TapeAction::Leave;
    }
    match (ruleset, read, write) {
        (Ruleset::VI, _, Worked) => TapeAction::SetWorked,
        (Ruleset::VI, _, _) => TapeAction::SetUnworked,
        (_, _, Blank) => TapeAction::RemoveImprovement,
        (Ruleset::BE, Blank, Road) => TapeAction::BuildRoad,
        (Ruleset::BE, Blank, PillagedRoad) => TapeAction::BuildRoadThenPillage,
        (Ruleset::BE, Road, PillagedRoad) => TapeAction::PillageRoad,
        (Ruleset::BE, PillagedRoad, Road) => TapeAction::RepairRoad,
        (Ruleset::V, _, Railroad) => TapeAction::BuildRailroad,
        (Ruleset::V, _, Road) => TapeAction::BuildRoad,
        _ => unreachable!("{read:?} -> {write:?} outside the {ruleset} alphabet"),
    }
}

/// One compiled transition entry.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CommandMacro {
    pub tape_action: TapeAction,
    /// Symbol the cell holds afterwards.
    pub write: TapeSymbol,
    /// `None` for a HALT entry.
    pub head_move: Option<Move>,
    /// Change in state index: Terrascapes, Railroads, or worked Monasteries.
    pub state_delta: i64,
    pub halt: bool,
}

impl CommandMacro {
    /// The state column as the tables print it.
    pub fn state_text(&self, ruleset: Ruleset) -> Option<String> {
        if self.halt {
            return None;
        }
        let k = self.state_delta;
        Some(match ruleset {
            Ruleset::VI if k >= 0 => format!("Work {k} more Monasteries"),
            Ruleset::VI => format!("Work {} more Farms", -k),
            _ => {
                let (one, many) = if ruleset == Ruleset::BE {
                    ("Terrascape", "Terrascapes")
                } else {
                    ("Railroad", "Railroads")
                };
                match k {
                    0 => "No build".into(),
                    1 => format!("Build a {one}"),
                    -1 => format!("Remove a {one}"),
                    k if k > 0 => format!("Build {k} {many}"),
                    k => format!("Remove {} {many}", -k),
                }
            }
        })
    }
}

/// How a VI program grows the tape when the head walks off its last City.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExtensionPolicy {
    /// Population that marks a City as an end of the tape.
    pub end_city_cap: u8,
    pub inner_city_cap: u8,
    /// Citizens a freshly founded City starts with.
    pub founding_citizens: u8,
}

impl Default for ExtensionPolicy {
    fn default() -> Self {
        ExtensionPolicy {
            end_city_cap: END_CITY_CAP,
            inner_city_cap: INNER_CITY_CAP,
            founding_citizens: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ControllerProgram {
    pub ruleset: Ruleset,
    /// TM state names by game state index.
    pub states: Vec<String>,
    /// TM symbol for each game tape symbol, blank first.
    pub symbols: Vec<(String, TapeSymbol)>,
    pub halting: BTreeSet<usize>,
    pub macros: BTreeMap<(usize, TapeSymbol), CommandMacro>,
    pub extension_policy: Option<ExtensionPolicy>,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CompileError {
    #[error(transparent)]
    Spec(#[from] SpecError),
    #[error("ruleset {ruleset} encodes at most {max} tape symbols, machine has {found}")]
    AlphabetTooLarge { ruleset: Ruleset, max: usize, found: usize },
    #[error("{states} states need {needed} state tiles, the region has {available}")]
    StateRegionTooSmall {
        states: usize,
        needed: usize,
        available: usize,
    },
    #[error(transparent)]
    Params(#[from] WorldError),
    #[error("malformed program: {0}")]
    Malformed(String),
}

/// Compiles `spec` for `ruleset` under default parameters.
pub fn compile(spec: &TmSpec, ruleset: Ruleset) -> Result<ControllerProgram, CompileError> {
    compile_with(spec, &RulesetParams::new(ruleset))
}

pub fn compile_with(spec: &TmSpec, params: &RulesetParams) -> Result<ControllerProgram, CompileError> {
    spec.validate()?;
    params.validate()?;
    let ruleset = params.ruleset;
    let game_alphabet = ruleset.alphabet();
    if spec.num_symbols() > game_alphabet.len() {
        return Err(CompileError::AlphabetTooLarge {
            ruleset,
            max: game_alphabet.len(),
            found: spec.num_symbols(),
        });
    }
    let capacity = match ruleset {
        Ruleset::VI => VI_MONASTERIES,
        _ => params.state_region_tiles,
    };
    if spec.num_states() - 1 > capacity {
        return Err(CompileError::StateRegionTooSmall {
            states: spec.num_states(),
            needed: spec.num_states() - 1,
            available: capacity,
        });
    }

    let mut states = vec![spec.initial.clone()];
    states.extend(spec.states.iter().filter(|q| **q != spec.initial).cloned());
    let mut tm_symbols = vec![spec.blank.clone()];
    tm_symbols.extend(spec.alphabet.iter().filter(|s| **s != spec.blank).cloned());
    let symbols: Vec<(String, TapeSymbol)> = tm_symbols.into_iter().zip(game_alphabet.iter().copied()).collect();

    let state_index: BTreeMap<&str, usize> = states.iter().enumerate().map(|(i, q)| (q.as_str(), i)).collect();
    let game_symbol: BTreeMap<&str, TapeSymbol> = symbols.iter().map(|(s, g)| (s.as_str(), *g)).collect();

    let mut macros = BTreeMap::new();
    for ((q, s), action) in &spec.transitions {
        let read = game_symbol[s.as_str()];
        let write = game_symbol[action.write()];
        let tape = tape_action(ruleset, read, write);
        let m = match action {
            Action::Step { mv, next, .. } => CommandMacro {
                tape_action: tape,
                write,
                head_move: Some(*mv),
                state_delta: state_index[next.as_str()] as i64 - state_index[q.as_str()] as i64,
                halt: false,
            },
            Action::Halt { .. } => CommandMacro {
                tape_action: tape,
                write,
                head_move: None,
                state_delta: 0,
                halt: true,
            },
        };
        macros.insert((state_index[q.as_str()], read), m);
    }
    let halting = spec.halting.iter().map(|q| state_index[q.as_str()]).collect();
    let program = ControllerProgram {
        ruleset,
        states,
        symbols,
        halting,
        macros,
        extension_policy: (ruleset == Ruleset::VI).then(ExtensionPolicy::default),
    };
    program.validate()?;
    Ok(program)
}

impl ControllerProgram {
    pub fn state_index(&self, name: &str) -> Option<usize> {
        self.states.iter().position(|q| q == name)
    }

    pub fn game_symbol(&self, tm_symbol: &str) -> Option<TapeSymbol> {
        self.symbols.iter().find(|(s, _)| s == tm_symbol).map(|(_, g)| *g)
    }

    pub fn tm_symbol(&self, symbol: TapeSymbol) -> Option<&str> {
        self.symbols.iter().find(|(_, g)| *g == symbol).map(|(s, _)| s.as_str())
    }

    pub fn blank(&self) -> &str {
        &self.symbols[0].0
    }

    pub fn macro_for(&self, state: usize, read: TapeSymbol) -> Option<&CommandMacro> {
        self.macros.get(&(state, read))
    }

    pub fn validate(&self) -> Result<(), CompileError> {
        let bad = |m: String| Err(CompileError::Malformed(m));
        let n = self.states.len();
        if n == 0 {
            return bad("no states".into());
        }
        let alphabet = self.ruleset.alphabet();
        for (i, (_, g)) in self.symbols.iter().enumerate() {
            if alphabet.get(i) != Some(g) {
                return bad(format!("symbol {i} must map to {:?}", alphabet.get(i)));
            }
        }
        if self.halting.iter().any(|h| *h >= n) {
            return bad("halting index out of range".into());
        }
        if self.extension_policy.is_some() != (self.ruleset == Ruleset::VI) {
            return bad("extension policy belongs to VI programs only".into());
        }
        for (&(q, read), m) in &self.macros {
            let at = format!("({q}, {read:?})");
            if q >= n || self.halting.contains(&q) {
                return bad(format!("macro {at} has no running source state"));
            }
            if !self.symbols.iter().any(|(_, g)| *g == read) || !self.symbols.iter().any(|(_, g)| *g == m.write) {
                return bad(format!("macro {at} uses a symbol outside the program alphabet"));
            }
            if !m.tape_action.allowed_in(self.ruleset) {
                return bad(format!(
                    "macro {at}: {:?} is not a {} action",
                    m.tape_action, self.ruleset
                ));
            }
            if m.state_delta.unsigned_abs() as usize > n - 1 {
                return bad(format!("macro {at}: |state change| exceeds {}", n - 1));
            }
            let target = q as i64 + m.state_delta;
            if target < 0 || target >= n as i64 {
                return bad(format!("macro {at} leads outside the state range"));
            }
            if m.halt != m.head_move.is_none() || (m.halt && m.state_delta != 0) {
                return bad(format!("macro {at}: a HALT entry neither moves nor changes state"));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&ProgramFile::from(self)).expect("program serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, CompileError> {
        let file: ProgramFile = serde_json::from_str(text).map_err(|e| CompileError::Malformed(e.to_string()))?;
        if file.format_version != PROGRAM_FORMAT_VERSION {
            return Err(CompileError::Spec(SpecError::FormatVersion(file.format_version)));
        }
        let states = file.states;
        let mut macros = BTreeMap::new();
        for e in file.macros {
            let q = states
                .iter()
                .position(|s| *s == e.state)
                .ok_or_else(|| CompileError::Malformed(format!("unknown state {}", e.state)))?;
            if e.state_index != q {
                return Err(CompileError::Malformed(format!(
                    "state {} is index {q}, not {}",
                    e.state, e.state_index
                )));
            }
            if macros.insert((q, e.read), e.command).is_some() {
                return Err(CompileError::Malformed(format!(
                    "duplicate macro for ({}, {:?})",
                    e.state, e.read
                )));
            }
        }
        let program = ControllerProgram {
            ruleset: file.ruleset,
            halting: file
                .halting
                .iter()
                .map(|h| {
                    states
                        .iter()
                        .position(|s| s == h)
                        .ok_or_else(|| CompileError::Malformed(format!("unknown halting state {h}")))
                })
                .collect::<Result<_, _>>()?,
            states,
            symbols: file.symbols.into_iter().map(|s| (s.tm, s.game)).collect(),
            macros,
            extension_policy: file.extension_policy,
        };
        program.validate()?;
        Ok(program)
    }
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ProgramFile {
    format_version: u32,
    ruleset: Ruleset,
    states: Vec<String>,
    symbols: Vec<SymbolEntry>,
    halting: Vec<String>,
    macros: Vec<MacroEntry>,
    extension_policy: Option<ExtensionPolicy>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SymbolEntry {
    tm: String,
    game: TapeSymbol,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MacroEntry {
    state: String,
    state_index: usize,
    read: TapeSymbol,
    #[serde(flatten)]
    command: CommandMacro,
}

impl From<&ControllerProgram> for ProgramFile {
    fn from(p: &ControllerProgram) -> Self {
        ProgramFile {
            format_version: PROGRAM_FORMAT_VERSION,
            ruleset: p.ruleset,
            states: p.states.clone(),
            symbols: p
                .symbols
                .iter()
                .map(|(tm, game)| SymbolEntry {
                    tm: tm.clone(),
                    game: *game,
                })
                .collect(),
            halting: p.halting.iter().map(|h| p.states[*h].clone()).collect(),
            macros: p
                .macros
                .iter()
                .map(|(&(q, read), m)| MacroEntry {
                    state: p.states[q].clone(),
                    state_index: q,
                    read,
                    command: m.clone(),
                })
                .collect(),
            extension_policy: p.extension_policy,
        }
    }
}

// ---------------------------------------------------------------------------
// Fixture comparison

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct RowDiff {
    pub row: usize,
    pub state: String,
    pub read: String,
    pub field: &'static str,
    pub expected: String,
    pub actual: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct FixtureDiff {
    pub table: String,
    pub rows_compared: usize,
    pub differences: Vec<RowDiff>,
    /// Normalizations applied to the printed table before comparing.
    pub annotations: Vec<String>,
}

impl FixtureDiff {
    pub fn is_clean(&self) -> bool {
        self.differences.is_empty()
    }
}

impl fmt::Display for FixtureDiff {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{}: {} rows compared, {} differences",
            self.table,
            self.rows_compared,
            self.differences.len()
        )?;
        for a in &self.annotations {
            writeln!(f, "  note: {a}")?;
        }
        for d in &self.differences {
            writeln!(
                f,
                "  row {:>2} ({}, {}) {}: table `{}` compiled `{}`",
                d.row, d.state, d.read, d.field, d.expected, d.actual
            )?;
        }
        Ok(())
    }
}

/// Compares a compiled program row by row with a shipped bijection table.
pub fn diff_against_fixture(program: &ControllerProgram, fixture: &TableFixture) -> FixtureDiff {
    let ruleset = program.ruleset;
    let mut differences = Vec::new();
    let mut annotations = Vec::new();
    let mut seen = BTreeSet::new();
    for (i, row) in fixture.rows.iter().enumerate() {
        let mut diff = |field: &'static str, expected: String, actual: String| {
            if expected != actual {
                differences.push(RowDiff {
                    row: i,
                    state: row.rule.state.clone(),
                    read: row.rule.read.clone(),
                    field,
                    expected,
                    actual,
                });
            }
        };
        let Some(q) = program.state_index(&row.rule.state) else {
            diff("state", row.rule.state.clone(), "<missing>".into());
            continue;
        };
        let Some(read) = program.game_symbol(&row.rule.read) else {
            diff("read", row.rule.read.clone(), "<missing>".into());
            continue;
        };
        seen.insert((q, read));
        diff("index", row.delta.to_string(), q.to_string());

        let mut printed_read = row.read.clone();
        if printed_read == "Magrail" && ruleset == Ruleset::V {
            annotations.push(format!("row {i}: `Magrail` read as `Railroad`"));
            printed_read = "Railroad".into();
        }
        diff("read", printed_read, symbol_text(ruleset, read).to_owned());

        let Some(m) = program.macro_for(q, read) else {
            diff("macro", row.tape.clone(), "<missing>".into());
            continue;
        };
        let mut printed_tape = row.tape.clone();
        if printed_tape == "Build a Road" && read == TapeSymbol::Road {
            annotations.push(format!("row {i}: `Build a Road` over a Road is a no-op write"));
            printed_tape = "No Improvement".into();
        }
        let actual_tape = if m.halt && m.tape_action == TapeAction::Leave {
            "HALT".to_owned()
        } else {
            m.tape_action.table_text(ruleset, m.write)
        };
        diff("tape", printed_tape, actual_tape);
        // The move printed beside a HALT is never carried out.
        if !m.halt {
            diff(
                "move",
                row.mv.map_or("-".into(), |m| m.to_string()),
                m.head_move.map_or("-".into(), |m| m.to_string()),
            );
        }
        diff(
            "state",
            row.state.clone().unwrap_or_else(|| "-".into()),
            m.state_text(ruleset).unwrap_or_else(|| "-".into()),
        );
    }
    for &(q, read) in program.macros.keys() {
        if !seen.contains(&(q, read)) {
            differences.push(RowDiff {
                row: fixture.rows.len(),
                state: program.states[q].clone(),
                read: program.tm_symbol(read).unwrap_or("?").to_owned(),
                field: "extra",
                expected: "<absent>".into(),
                actual: "macro".into(),
            });
        }
    }
    FixtureDiff {
        table: fixture.table.clone(),
        rows_compared: fixture.rows.len(),
        differences,
        annotations,
    }
}

// ---------------------------------------------------------------------------
// Execution

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExecError {
    #[error("machine stuck: no macro for state {state} reading {symbol:?}")]
    Stuck { state: usize, symbol: TapeSymbol },
    #[error("world is not at an instruction boundary")]
    NotAtBoundary,
    #[error("machine already halted")]
    Halted,
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    World(#[from] WorldError),
    #[error("controller invariant violated: {0}")]
    Invariant(String),
}

/// What a span of turns was spent on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    TapeWork,
    Pillage,
    Movement,
    StateWork,
    SettlerTraining,
    SettlerTravel,
    Founding,
    Growth,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub start: u64,
    pub end: u64,
}

impl PhaseSpan {
    pub fn turns(&self) -> u64 {
        self.end - self.start
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExtensionRecord {
    pub direction: Move,
    /// Tape length in cells when the Settler was ordered.
    pub tape_len: u64,
    pub new_city: i64,
}

/// Everything one instruction did, boundary to boundary.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    /// 1-based.
    pub index: u64,
    pub ruleset: Ruleset,
    pub start_turn: u64,
    pub end_turn: u64,
    pub state: usize,
    pub read: TapeSymbol,
    #[serde(rename = "macro")]
    pub applied: CommandMacro,
    pub tape_chain: Vec<PhaseSpan>,
    pub state_chain: Vec<PhaseSpan>,
    pub extension_chain: Vec<PhaseSpan>,
    pub extension: Option<ExtensionRecord>,
}

impl InstructionRecord {
    pub fn turns(&self) -> u64 {
        self.end_turn - self.start_turn
    }
}

/// Name of the event-log entry each executed instruction is mirrored into.
pub const INSTRUCTION_EVENT: &str = "instruction";
pub const CONTROLLER_ACTOR: &str = "controller";

#[derive(Debug, Clone)]
enum Step {
    Unit(UnitId, Command, Phase),
    /// Several units act together; the step ends when all are idle.
    Units(Vec<(UnitId, Command)>, Phase),
    City(i64, Command, Phase),
    StateDelta(i64),
    /// Wait for the Settler from City `from`, bind it, and apply a command.
    Settler(Command, Phase),
    TrainSettler(i64),
    CapAfterSpawn(i64, u8),
    AwaitGrowth,
}

enum Wait {
    Units(Vec<UnitId>),
    Settler,
    Spawn(i64),
    Growth,
}

struct Chain {
    steps: std::collections::VecDeque<Step>,
    waiting: Option<(Wait, Phase, u64)>,
    spans: Vec<PhaseSpan>,
}

impl Chain {
    fn new(steps: Vec<Step>) -> Self {
        Chain {
            steps: steps.into(),
            waiting: None,
            spans: Vec::new(),
        }
    }

    fn done(&self) -> bool {
        self.steps.is_empty() && self.waiting.is_none()
    }
}

struct Scheduler {
    chains: Vec<Chain>,
    settler: Option<UnitId>,
}

impl Scheduler {
    fn wait_over(&self, world: &WorldState, wait: &Wait) -> bool {
        match wait {
            Wait::Units(ids) => ids.iter().all(|id| world.unit(*id).is_none_or(|u| !u.is_busy())),
            Wait::Settler => self
                .settler
                .is_none_or(|id| world.unit(id).is_none_or(|u| !u.is_busy())),
            Wait::Spawn(city) => world.cities.get(city).is_some_and(|c| c.training.is_none()),
            Wait::Growth => world.cities.values().all(|c| c.at_cap()),
        }
    }

    /// Issues everything that can start this turn.
    fn pump(&mut self, world: &mut WorldState) -> Result<(), ExecError> {
        loop {
            let mut progressed = false;
            for c in 0..self.chains.len() {
                if let Some((wait, phase, start)) = &self.chains[c].waiting {
                    if !self.wait_over(world, wait) {
                        continue;
                    }
                    let span = PhaseSpan {
                        phase: *phase,
                        start: *start,
                        end: world.turn,
                    };
                    let chain = &mut self.chains[c];
                    chain.spans.push(span);
                    chain.waiting = None;
                    progressed = true;
                }
                let Some(step) = self.chains[c].steps.pop_front() else {
                    continue;
                };
                progressed = true;
                let turn = world.turn;
                let wait = match step {
                    Step::Unit(id, cmd, phase) => {
                        world.apply_command(Actor::Unit(id), cmd)?;
                        (Wait::Units(vec![id]), phase)
                    }
                    Step::Units(cmds, phase) => {
                        let ids = cmds.iter().map(|(id, _)| *id).collect();
                        for (id, cmd) in cmds {
                            world.apply_command(Actor::Unit(id), cmd)?;
                        }
                        (Wait::Units(ids), phase)
                    }
                    Step::City(j, cmd, phase) => {
                        world.apply_command(Actor::City(j), cmd)?;
                        (Wait::Units(vec![]), phase)
                    }
                    Step::StateDelta(k) => {
                        issue_state_work(world, k, &mut self.chains[c])?;
                        continue;
                    }
                    Step::TrainSettler(j) => {
                        world.apply_command(Actor::City(j), Command::TrainSettler)?;
                        (Wait::Spawn(j), Phase::SettlerTraining)
                    }
                    Step::CapAfterSpawn(j, cap) => {
                        let settler = world
                            .units_of(UnitKind::Settler)
                            .map(|u| u.id)
                            .next()
                            .ok_or_else(|| ExecError::Invariant("Settler missing after training".into()))?;
                        self.settler = Some(settler);
                        if world.cities[&j].growth_cap != cap {
                            world.apply_command(Actor::City(j), Command::CapGrowth { cap })?;
                        }
                        continue;
                    }
                    Step::Settler(cmd, phase) => {
                        let id = self
                            .settler
                            .ok_or_else(|| ExecError::Invariant("no Settler bound".into()))?;
                        world.apply_command(Actor::Unit(id), cmd)?;
                        (Wait::Settler, phase)
                    }
                    Step::AwaitGrowth => (Wait::Growth, Phase::Growth),
                };
                self.chains[c].waiting = Some((wait.0, wait.1, turn));
            }
            if !progressed {
                return Ok(());
            }
        }
    }

    fn run(&mut self, world: &mut WorldState) -> Result<(), ExecError> {
        loop {
            self.pump(world)?;
            if self.chains.iter().all(Chain::done) {
                return Ok(());
            }
            world.advance_turn()?;
        }
    }
}

/// Expands a state-index change into Terrascape, Railroad or Citizen
/// commands, pushing them onto the front of `chain`. Tiles are picked when
/// the command is issued.
fn issue_state_work(world: &mut WorldState, k: i64, chain: &mut Chain) -> Result<(), ExecError> {
    if k == 0 {
        return Ok(());
    }
    match world.ruleset() {
        Ruleset::VI => {
            let start = world.turn;
            for _ in 0..k.unsigned_abs() {
                let region = &world.state_region;
                let (from, to) = if k > 0 {
                    (region.last_worked_farm(), region.next_free())
                } else {
                    (region.last_used(), region.next_free_farm())
                };
                let (Some(from), Some(to)) = (from, to) else {
                    return Err(ExecError::Invariant("state Citizens exhausted".into()));
                };
                world.apply_command(Actor::StateCities, Command::ReassignStateCitizen { from, to })?;
            }
            chain.spans.push(PhaseSpan {
                phase: Phase::StateWork,
                start,
                end: start,
            });
        }
        ruleset => {
            let worker = world
                .units_of(UnitKind::StateWorker)
                .next()
                .map(|u| u.id)
                .ok_or_else(|| ExecError::Invariant("no state worker".into()))?;
            let region = &world.state_region;
            let tile = if k > 0 { region.next_free() } else { region.last_used() }
                .ok_or_else(|| ExecError::Invariant("state region exhausted".into()))?;
            let cmd = match (ruleset, k > 0) {
                (Ruleset::BE, true) => Command::BuildTerrascape { tile },
                (Ruleset::BE, false) => Command::RemoveTerrascape { tile },
                (_, true) => Command::BuildStateRailroad { tile },
                (_, false) => Command::RemoveStateRailroad { tile },
            };
            chain.steps.push_front(Step::StateDelta(k - k.signum()));
            chain.steps.push_front(Step::Unit(worker, cmd, Phase::StateWork));
        }
    }
    Ok(())
}

fn unit_of(world: &WorldState, kind: UnitKind) -> Result<UnitId, ExecError> {
    world
        .units_of(kind)
        .next()
        .map(|u| u.id)
        .ok_or_else(|| ExecError::Invariant(format!("no {kind:?}")))
}

fn tape_steps(world: &WorldState, m: &CommandMacro, read: TapeSymbol) -> Result<Vec<Step>, ExecError> {
    let worker = world.tape_worker();
    let (wid, hex) = (worker.id, worker.position);
    let ruleset = world.ruleset();
    let mut steps = Vec::new();
    let rover = || unit_of(world, UnitKind::Rover);
    match m.tape_action {
        TapeAction::Leave => {}
        TapeAction::BuildRoad => {
            if ruleset == Ruleset::V && read == TapeSymbol::Railroad {
                steps.push(Step::Unit(wid, Command::RemoveImprovement, Phase::TapeWork));
            }
            steps.push(Step::Unit(wid, Command::BuildRoad, Phase::TapeWork));
        }
        TapeAction::RemoveImprovement => steps.push(Step::Unit(wid, Command::RemoveImprovement, Phase::TapeWork)),
        TapeAction::RepairRoad => steps.push(Step::Unit(wid, Command::Repair, Phase::TapeWork)),
        TapeAction::BuildRailroad => steps.push(Step::Unit(wid, Command::BuildRailroad, Phase::TapeWork)),
        TapeAction::PillageRoad => steps.push(Step::Unit(rover()?, Command::Pillage, Phase::Pillage)),
        TapeAction::BuildRoadThenPillage => {
            steps.push(Step::Unit(wid, Command::BuildRoad, Phase::TapeWork));
            steps.push(Step::Unit(rover()?, Command::Pillage, Phase::Pillage));
        }
        TapeAction::SetWorked | TapeAction::SetUnworked => {
            let city = world
                .city_owning(hex)
                .ok_or_else(|| ExecError::Invariant(format!("tape worker at hex {hex} is off the tape")))?;
            steps.push(Step::City(
                city.index,
                Command::SetCellWorked {
                    cell: hex,
                    worked: m.tape_action == TapeAction::SetWorked,
                },
                Phase::TapeWork,
            ));
        }
    }
    if let Some(mv) = m.head_move {
        steps.push(move_steps(world, mv)?);
    }
    Ok(steps)
}

fn move_steps(world: &WorldState, mv: Move) -> Result<Step, ExecError> {
    let worker = world.tape_worker();
    let p = &world.params;
    let to = match world.ruleset() {
        Ruleset::VI => {
            let cell = p
                .hex_cell(worker.position)
                .ok_or_else(|| ExecError::Invariant("tape worker is off the tape".into()))?;
            p.cell_hex(cell + mv.offset())
        }
        _ => worker.position + mv.offset(),
    };
    let mut cmds = vec![(worker.id, Command::Move { to })];
    if let Some(rover) = world.units_of(UnitKind::Rover).next() {
        cmds.push((rover.id, Command::Move { to }));
    }
    Ok(Step::Units(cmds, Phase::Movement))
}

/// Whether moving `mv` from the current head cell walks off the tape (VI).
pub fn needs_settler(world: &WorldState, mv: Move) -> Result<bool, ExecError> {
    if world.ruleset() != Ruleset::VI {
        return Ok(false);
    }
    let cell = world
        .params
        .hex_cell(world.tape_worker().position)
        .ok_or_else(|| ExecError::Invariant("tape worker is off the tape".into()))?;
    Ok(!world.cities.contains_key(&(cell + mv.offset()).div_euclid(2)))
}

/// Settler branch of a tape extension from the end City toward `direction`.
fn extension_steps(
    world: &WorldState,
    policy: &ExtensionPolicy,
    direction: Move,
) -> Result<(Vec<Step>, ExtensionRecord), ExecError> {
    let cell = world
        .params
        .hex_cell(world.tape_worker().position)
        .ok_or_else(|| ExecError::Invariant("tape worker is off the tape".into()))?;
    let parent = cell.div_euclid(2);
    let city = &world.cities[&parent];
    if city.citizens != policy.end_city_cap {
        return Err(ExecError::Invariant(format!(
            "end City {parent} holds {} Citizens, expected {}",
            city.citizens, policy.end_city_cap
        )));
    }
    let new_city = parent + direction.offset();
    let other_side = parent - direction.offset();
    let keeps_end = !world.cities.contains_key(&other_side);
    let cap = if keeps_end {
        policy.end_city_cap
    } else {
        policy.inner_city_cap
    };
    let steps = vec![
        Step::TrainSettler(parent),
        Step::CapAfterSpawn(parent, cap),
        Step::Settler(
            Command::Move {
                to: world.params.city_center(new_city),
            },
            Phase::SettlerTravel,
        ),
        Step::Settler(Command::FoundCity, Phase::Founding),
        Step::AwaitGrowth,
    ];
    let record = ExtensionRecord {
        direction,
        tape_len: world.tape_len(),
        new_city,
    };
    Ok((steps, record))
}

fn log_record(world: &mut WorldState, record: &InstructionRecord) {
    let detail = serde_json::to_string(record).expect("record serializes");
    world.log(CONTROLLER_ACTOR, INSTRUCTION_EVENT, detail);
}

/// Carries out one instruction: decodes the head cell and state, looks up
/// the macro, issues its commands and advances turns until every job (and,
/// under VI, any tape extension) has finished.
pub fn execute_instruction(
    world: &mut WorldState,
    program: &ControllerProgram,
) -> Result<InstructionRecord, ExecError> {
    if world.halted {
        return Err(ExecError::Halted);
    }
    if !world.units.values().all(|u| !u.is_busy()) || !world.is_quiescent() {
        return Err(ExecError::NotAtBoundary);
    }
    let state = codec::state_index(world, program)?;
    if program.halting.contains(&state) {
        world.halted = true;
        return Err(ExecError::Halted);
    }
    let head_hex = world.tape_worker().position;
    let read = world.symbol_at(head_hex);
    let m = program
        .macro_for(state, read)
        .ok_or(ExecError::Stuck { state, symbol: read })?
        .clone();
    let start_turn = world.turn;

    let mut chains = vec![
        Chain::new(tape_steps(world, &m, read)?),
        Chain::new(vec![Step::StateDelta(m.state_delta)]),
    ];
    let mut extension = None;
    if let Some(mv) = m.head_move {
        if needs_settler(world, mv)? {
            let policy = program
                .extension_policy
                .ok_or_else(|| ExecError::Invariant("VI program without extension policy".into()))?;
            let (steps, record) = extension_steps(world, &policy, mv)?;
            world.log(
                CONTROLLER_ACTOR,
                "extension",
                format!(
                    "direction={mv} tape_len={} new_city={}",
                    record.tape_len, record.new_city
                ),
            );
            chains.push(Chain::new(steps));
            extension = Some(record);
        }
    }
    let mut scheduler = Scheduler { chains, settler: None };
    scheduler.run(world)?;

    if m.halt {
        world.halted = true;
    }
    world.instruction_count += 1;
    let mut chains = scheduler.chains.into_iter().map(|c| c.spans);
    let record = InstructionRecord {
        index: world.instruction_count,
        ruleset: world.ruleset(),
        start_turn,
        end_turn: world.turn,
        state,
        read,
        applied: m,
        tape_chain: chains.next().unwrap_or_default(),
        state_chain: chains.next().unwrap_or_default(),
        extension_chain: chains.next().unwrap_or_default(),
        extension,
    };
    world.check_invariants()?;
    log_record(world, &record);
    Ok(record)
}

/// Moves the tape worker one cell toward `direction`, founding a City first
/// if the tape ends there. Returns the spans spent (VI only).
pub fn extend_tape(
    world: &mut WorldState,
    program: &ControllerProgram,
    direction: Move,
) -> Result<Vec<PhaseSpan>, ExecError> {
    if world.ruleset() != Ruleset::VI {
        return Err(ExecError::Invariant("tape extension is a VI procedure".into()));
    }
    let mut chains = vec![Chain::new(vec![move_steps(world, direction)?])];
    if needs_settler(world, direction)? {
        let policy = program.extension_policy.unwrap_or_default();
        let (steps, record) = extension_steps(world, &policy, direction)?;
        world.log(
            CONTROLLER_ACTOR,
            "extension",
            format!(
                "direction={direction} tape_len={} new_city={}",
                record.tape_len, record.new_city
            ),
        );
        chains.push(Chain::new(steps));
    }
    let mut scheduler = Scheduler { chains, settler: None };
    scheduler.run(world)?;
    world.check_invariants()?;
    Ok(scheduler.chains.into_iter().flat_map(|c| c.spans).collect())
}

/// One element of the effective macro sequence under the doubled VI states.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub enum MacroStep {
    Base(CommandMacro),
    TrainSettler,
    MoveSettler,
    FoundCity,
    GrowCity,
}

/// What state `state` reading `read` actually runs: the base macro, plus the
/// Settler sequence for the `n` variant.
pub fn nb_state_semantics(
    program: &ControllerProgram,
    state: usize,
    read: TapeSymbol,
    needs_settler: bool,
) -> Option<Vec<MacroStep>> {
    let base = program.macro_for(state, read)?.clone();
    let mut out = vec![MacroStep::Base(base.clone())];
    if needs_settler && !base.halt && program.ruleset == Ruleset::VI {
        out.extend([
            MacroStep::TrainSettler,
            MacroStep::MoveSettler,
            MacroStep::FoundCity,
            MacroStep::GrowCity,
        ]);
    }
    Some(out)
}

/// The doubled state set `(index, needs_settler)` of a VI program.
pub fn doubled_states(program: &ControllerProgram) -> Vec<(usize, bool)> {
    (0..program.states.len())
        .flat_map(|q| [(q, false), (q, true)])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::builtin::{builtin_program, table_fixture};
    use crate::codec;
    use crate::tm::Tape;

    fn program(name: &str, ruleset: Ruleset) -> ControllerProgram {
        compile(&builtin_program(name).unwrap(), ruleset).unwrap()
    }

    #[test]
    fn be_examples() {
        let p = program("rogozhin_10_3", Ruleset::BE);
        let m = p.macro_for(0, TapeSymbol::Road).unwrap();
        assert_eq!(
            (m.tape_action, m.head_move, m.state_delta),
            (TapeAction::RemoveImprovement, Some(Move::L), 1)
        );
        let m = p.macro_for(4, TapeSymbol::Blank).unwrap();
        assert_eq!(
            (m.tape_action, m.head_move, m.state_delta),
            (TapeAction::BuildRoadThenPillage, Some(Move::L), -2)
        );
    }

    #[test]
    fn vi_first_row_is_a_true_delta() {
        let p = program("rogozhin_24_2", Ruleset::VI);
        let m = p.macro_for(0, TapeSymbol::Blank).unwrap();
        assert_eq!((m.tape_action, m.head_move), (TapeAction::Leave, Some(Move::R)));
        // q1 -> q5 is four states up; the printed table says five.
        assert_eq!(m.state_delta, 4);
    }

    #[test]
    fn identity_writes_leave() {
        let p = program("bb3", Ruleset::BE);
        for (&(_, read), m) in &p.macros {
            if m.write == read {
                assert_eq!(m.tape_action, TapeAction::Leave, "{m:?}");
            }
        }
        assert_eq!(p.macros.len(), 6);
        assert_eq!(program("bb3", Ruleset::V).macros.len(), 6);
    }

    #[test]
    fn bounds_are_checked() {
        let spec = builtin_program("rogozhin_24_2").unwrap();
        assert!(matches!(
            compile(&spec, Ruleset::V),
            Err(CompileError::StateRegionTooSmall {
                needed: 23,
                available: 9,
                ..
            })
        ));
        let mut params = RulesetParams::new(Ruleset::V);
        params.state_region_tiles = 23;
        assert!(compile_with(&spec, &params).is_ok());
        let spec = builtin_program("rogozhin_10_3").unwrap();
        assert!(matches!(
            compile(&spec, Ruleset::VI),
            Err(CompileError::AlphabetTooLarge { .. })
        ));
    }

    #[test]
    fn be_and_v_tables_match() {
        for r in [Ruleset::BE, Ruleset::V] {
            let d = diff_against_fixture(
                &program("rogozhin_10_3", r),
                &table_fixture("rogozhin_10_3", &r.to_string()).unwrap(),
            );
            assert!(d.is_clean(), "{d}");
            assert_eq!(d.rows_compared, 30);
        }
        let d = diff_against_fixture(&program("bb3", Ruleset::BE), &table_fixture("bb3", "BE").unwrap());
        assert!(d.is_clean(), "{d}");
        assert_eq!(d.annotations.len(), 2);
    }

    #[test]
    fn vi_table_state_column_is_shifted() {
        let d = diff_against_fixture(
            &program("rogozhin_24_2", Ruleset::VI),
            &table_fixture("rogozhin_24_2", "VI").unwrap(),
        );
        assert_eq!(d.rows_compared, 48);
        assert!(d.differences.iter().all(|x| x.field == "state"), "{d}");
        assert_eq!(d.differences.len(), 47);
    }

    #[test]
    fn program_json_round_trip() {
        for (name, r) in [
            ("rogozhin_10_3", Ruleset::BE),
            ("rogozhin_24_2", Ruleset::VI),
            ("bb3", Ruleset::V),
        ] {
            let p = program(name, r);
            assert_eq!(ControllerProgram::from_json(&p.to_json()).unwrap(), p);
        }
        let text = program("bb3", Ruleset::BE)
            .to_json()
            .replace("\"state_delta\": 1", "\"state_delta\": 9");
        assert!(ControllerProgram::from_json(&text).is_err());
    }

    fn world_for(p: &ControllerProgram, cells: &[(i64, &str)]) -> WorldState {
        let tape = Tape::from_cells(cells.iter().map(|(i, s)| (*i, *s)), p.blank());
        codec::init_world(p, &tape, RulesetParams::new(p.ruleset)).unwrap()
    }

    #[test]
    fn be_remove_and_terrascape() {
        let p = program("rogozhin_10_3", Ruleset::BE);
        let mut w = world_for(&p, &[(0, "1")]);
        let r = execute_instruction(&mut w, &p).unwrap();
        let d = codec::decode(&w, &p).unwrap();
        let c = d.config.unwrap();
        assert_eq!((c.state.as_str(), c.head, c.tape.len()), ("q1", -1, 0));
        // tape: remove 1 + move 1; state: one Terrascape, 3 turns
        assert_eq!(r.turns(), 3);
    }

    #[test]
    fn be_halt_changes_nothing_but_the_log() {
        let p = program("rogozhin_10_3", Ruleset::BE);
        let mut w = world_for(&p, &[(0, "1")]);
        set_state(&mut w, 6);
        let before = (w.tape.clone(), w.state_region.clone(), w.turn);
        let r = execute_instruction(&mut w, &p).unwrap();
        assert!(r.applied.halt && w.halted);
        assert_eq!(before, (w.tape.clone(), w.state_region.clone(), w.turn));
        assert_eq!(execute_instruction(&mut w, &p), Err(ExecError::Halted));
    }

    fn set_state(w: &mut WorldState, k: usize) {
        for _ in 0..k {
            let tile = w.state_region.next_free().unwrap();
            w.apply_command(
                Actor::Unit(crate::world::STATE_WORKER),
                Command::BuildTerrascape { tile },
            )
            .unwrap();
            while w.units.values().any(|u| u.is_busy()) {
                w.advance_turn().unwrap();
            }
        }
    }

    #[test]
    fn build_then_pillage_runs_beside_the_removals() {
        let mut params = RulesetParams::new(Ruleset::BE);
        params.road_build_turns = 3;
        let spec = builtin_program("rogozhin_10_3").unwrap();
        let p = compile_with(&spec, &params).unwrap();
        let mut w = codec::init_world(&p, &Tape::new(), params).unwrap();
        set_state(&mut w, 4);
        let r = execute_instruction(&mut w, &p).unwrap();
        assert_eq!(r.applied.tape_action, TapeAction::BuildRoadThenPillage);
        // M + pillage + move on the tape side, two 1-turn removals beside it
        assert_eq!(r.turns(), 5);
        let c = codec::decode(&w, &p).unwrap().config.unwrap();
        assert_eq!((c.state.as_str(), c.head, c.tape.read(0, "0")), ("q2", -1, "b"));
    }

    #[test]
    fn vi_extension_and_relocation() {
        let p = program("bb3", Ruleset::VI);
        let mut w = world_for(&p, &[]);
        // q0 reading blank: write 1, move R; cell 1 is still City 0.
        let r = execute_instruction(&mut w, &p).unwrap();
        assert!(r.extension.is_none());
        assert_eq!(r.turns(), 2);
        // q1 reading blank at cell 1: write 1, move L back to cell 0.
        let r = execute_instruction(&mut w, &p).unwrap();
        assert!(r.extension.is_none());
        // q0 reading 1 at cell 0: move L off the tape.
        let r = execute_instruction(&mut w, &p).unwrap();
        let ext = r.extension.unwrap();
        assert_eq!((ext.direction, ext.tape_len, ext.new_city), (Move::L, 2, -1));
        let params = &w.params;
        let expected = params.settler_turns(2)
            + params.move_turns(params.city_spacing)
            + u64::from(params.settler_found_turns)
            + params.full_growth_turns();
        assert_eq!(r.turns(), expected);
        assert_eq!(w.cities.len(), 2);
        assert!(w.cities.values().all(|c| c.citizens == END_CITY_CAP));
        let d = codec::decode(&w, &p).unwrap().config.unwrap();
        assert_eq!(d.head, -1);
    }

    #[test]
    fn inner_city_drops_to_three() {
        let p = program("bb3", Ruleset::VI);
        let mut w = world_for(&p, &[]);
        extend_tape(&mut w, &p, Move::R).unwrap();
        extend_tape(&mut w, &p, Move::R).unwrap();
        assert_eq!(codec::head_cell(&w).unwrap(), 2);
        extend_tape(&mut w, &p, Move::R).unwrap();
        extend_tape(&mut w, &p, Move::R).unwrap();
        assert_eq!(codec::head_cell(&w).unwrap(), 4);
        let pops: Vec<_> = w.cities.values().map(|c| (c.citizens, c.growth_cap)).collect();
        assert_eq!(pops, vec![(4, 4), (3, 3), (4, 4)]);
        w.check_invariants().unwrap();
    }

    #[test]
    fn nb_doubling() {
        let p = program("rogozhin_24_2", Ruleset::VI);
        assert_eq!(doubled_states(&p).len(), 48);
        assert_eq!(nb_state_semantics(&p, 3, TapeSymbol::Blank, false).unwrap().len(), 1);
        let n = nb_state_semantics(&p, 3, TapeSymbol::Blank, true).unwrap();
        assert_eq!(n.len(), 5);
        assert_eq!(n[1], MacroStep::TrainSettler);
    }

    #[test]
    fn stuck_is_reported() {
        let spec = TmSpec::from_json(
            r#"{"format_version":1,"states":["a","h"],"alphabet":["0","1"],"blank":"0","input_alphabet":["1"],
                "initial":"a","halting":["h"],"transitions":[{"state":"a","read":"1","write":"1","move":"R","next":"a"}]}"#,
        )
        .unwrap();
        let p = compile(&spec, Ruleset::V).unwrap();
        let mut w = world_for(&p, &[]);
        assert_eq!(
            execute_instruction(&mut w, &p),
            Err(ExecError::Stuck {
                state: 0,
                symbol: TapeSymbol::Blank
            })
        );
    }
}
