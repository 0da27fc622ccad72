//! Reference Turing machine: machine descriptions, validation and interpreter.
//!
//! This is the ground truth every game-level execution is compared against,
//! so it is kept deliberately small and free of any game concepts.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const SPEC_FORMAT_VERSION: u32 = 1;

/// Head movement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Move {
    L,
    R,
}

impl Move {
    pub fn offset(self) -> i64 {
        match self {
            Move::L => -1,
            Move::R => 1,
        }
    }
}

impl fmt::Display for Move {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Move::L => "L",
            Move::R => "R",
        })
    }
}

/// Right-hand side of a transition entry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    Step {
        write: String,
        mv: Move,
        next: String,
    },
    /// Write the symbol and stop. The move some tables list next to a HALT is
    /// not applied.
    Halt {
        write: String,
    },
}

impl Action {
    pub fn write(&self) -> &str {
        match self {
            Action::Step { write, .. } | Action::Halt { write } => write,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SpecError {
    #[error("duplicate state `{0}`")]
    DuplicateState(String),
    #[error("duplicate symbol `{0}`")]
    DuplicateSymbol(String),
    #[error("blank symbol `{0}` is not in the alphabet")]
    BlankNotInAlphabet(String),
    #[error("input symbol `{0}` is not in the alphabet")]
    InputNotInAlphabet(String),
    #[error("blank symbol `{0}` must not be an input symbol")]
    BlankIsInput(String),
    #[error("unknown state `{0}`")]
    UnknownState(String),
    #[error("symbol `{0}` outside alphabet")]
    UnknownSymbol(String),
    #[error("transition from halting state `{0}`")]
    TransitionFromHalting(String),
    #[error("duplicate transition for ({0}, {1})")]
    DuplicateTransition(String, String),
    #[error("transition record for ({0}, {1}) must give either `move`+`next` or `halt: true`")]
    MalformedTransition(String, String),
    #[error("unknown built-in program `{0}`")]
    UnknownBuiltin(String),
    #[error("unsupported format_version {0}")]
    FormatVersion(u32),
    #[error("parse error: {0}")]
    Parse(String),
}

/// A deterministic single-tape machine with a partial transition function.
///
/// `states` and `alphabet` are ordered; the order is significant to the game
/// compiler, which numbers states and symbols by position.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TmSpec {
    pub states: Vec<String>,
    pub alphabet: Vec<String>,
    pub blank: String,
    pub input_alphabet: BTreeSet<String>,
    pub initial: String,
    pub halting: BTreeSet<String>,
    pub transitions: BTreeMap<(String, String), Action>,
}

impl TmSpec {
    pub fn num_states(&self) -> usize {
        self.states.len()
    }

    pub fn num_symbols(&self) -> usize {
        self.alphabet.len()
    }

    pub fn action(&self, state: &str, symbol: &str) -> Option<&Action> {
        // BTreeMap<(String, String), _> cannot be queried with borrowed pairs.
        self.transitions.get(&(state.to_owned(), symbol.to_owned()))
    }

    pub fn is_halting(&self, state: &str) -> bool {
        self.halting.contains(state)
    }

    /// Checks every well-formedness condition and reports the first failure.
    pub fn validate(&self) -> Result<(), SpecError> {
        let mut seen = BTreeSet::new();
        for s in &self.states {
            if !seen.insert(s) {
                return Err(SpecError::DuplicateState(s.clone()));
            }
        }
        let mut seen = BTreeSet::new();
        for s in &self.alphabet {
            if !seen.insert(s) {
                return Err(SpecError::DuplicateSymbol(s.clone()));
            }
        }
        let has_symbol = |s: &str| self.alphabet.iter().any(|a| a == s);
        let has_state = |s: &str| self.states.iter().any(|a| a == s);

        if !has_symbol(&self.blank) {
            return Err(SpecError::BlankNotInAlphabet(self.blank.clone()));
        }
        for s in &self.input_alphabet {
            if !has_symbol(s) {
                return Err(SpecError::InputNotInAlphabet(s.clone()));
            }
        }
        if self.input_alphabet.contains(&self.blank) {
            return Err(SpecError::BlankIsInput(self.blank.clone()));
        }
        if !has_state(&self.initial) {
            return Err(SpecError::UnknownState(self.initial.clone()));
        }
        for s in &self.halting {
            if !has_state(s) {
                return Err(SpecError::UnknownState(s.clone()));
            }
        }
        for ((state, read), action) in &self.transitions {
            if !has_state(state) {
                return Err(SpecError::UnknownState(state.clone()));
            }
            if !has_symbol(read) {
                return Err(SpecError::UnknownSymbol(read.clone()));
            }
            if self.halting.contains(state) {
                return Err(SpecError::TransitionFromHalting(state.clone()));
            }
            if !has_symbol(action.write()) {
                return Err(SpecError::UnknownSymbol(action.write().to_owned()));
            }
            if let Action::Step { next, .. } = action {
                if !has_state(next) {
                    return Err(SpecError::UnknownState(next.clone()));
                }
            }
        }
        Ok(())
    }

    pub fn validated(self) -> Result<Self, SpecError> {
        self.validate()?;
        Ok(self)
    }

    pub fn from_json(text: &str) -> Result<Self, SpecError> {
        let file: SpecFile = serde_json::from_str(text).map_err(|e| SpecError::Parse(e.to_string()))?;
        file.into_spec()?.validated()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&SpecFile::from_spec(self)).expect("spec serializes")
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    #[serde(default = "spec_format_version")]
    format_version: u32,
    states: Vec<String>,
    alphabet: Vec<String>,
    blank: String,
    input_alphabet: Vec<String>,
    initial: String,
    halting: Vec<String>,
    transitions: Vec<TransitionRecord>,
}

fn spec_format_version() -> u32 {
    SPEC_FORMAT_VERSION
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TransitionRecord {
    state: String,
    read: String,
    write: String,
    #[serde(rename = "move", default, skip_serializing_if = "Option::is_none")]
    mv: Option<Move>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    next: Option<String>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    halt: bool,
}

impl SpecFile {
    fn into_spec(self) -> Result<TmSpec, SpecError> {
        if self.format_version != SPEC_FORMAT_VERSION {
            return Err(SpecError::FormatVersion(self.format_version));
        }
        let mut transitions = BTreeMap::new();
        for t in self.transitions {
            let action = match (t.halt, t.mv, t.next) {
                (true, None, None) => Action::Halt { write: t.write },
                (false, Some(mv), Some(next)) => Action::Step {
                    write: t.write,
                    mv,
                    next,
                },
                _ => return Err(SpecError::MalformedTransition(t.state, t.read)),
            };
            let key = (t.state, t.read);
            if transitions.contains_key(&key) {
                return Err(SpecError::DuplicateTransition(key.0, key.1));
            }
            transitions.insert(key, action);
        }
        Ok(TmSpec {
            states: self.states,
            alphabet: self.alphabet,
            blank: self.blank,
            input_alphabet: self.input_alphabet.into_iter().collect(),
            initial: self.initial,
            halting: self.halting.into_iter().collect(),
            transitions,
        })
    }

    fn from_spec(spec: &TmSpec) -> Self {
        SpecFile {
            format_version: SPEC_FORMAT_VERSION,
            states: spec.states.clone(),
            alphabet: spec.alphabet.clone(),
            blank: spec.blank.clone(),
            input_alphabet: spec.input_alphabet.iter().cloned().collect(),
            initial: spec.initial.clone(),
            halting: spec.halting.iter().cloned().collect(),
            transitions: spec
                .transitions
                .iter()
                .map(|((state, read), action)| match action {
                    Action::Step { write, mv, next } => TransitionRecord {
                        state: state.clone(),
                        read: read.clone(),
                        write: write.clone(),
                        mv: Some(*mv),
                        next: Some(next.clone()),
                        halt: false,
                    },
                    Action::Halt { write } => TransitionRecord {
                        state: state.clone(),
                        read: read.clone(),
                        write: write.clone(),
                        mv: None,
                        next: None,
                        halt: true,
                    },
                })
                .collect(),
        }
    }
}

/// Sparse tape in canonical form: blank cells are never stored.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Tape(BTreeMap<i64, String>);

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a canonical tape, dropping explicit blanks.
    pub fn from_cells<I, S>(cells: I, blank: &str) -> Self
    where
        I: IntoIterator<Item = (i64, S)>,
        S: Into<String>,
    {
        let mut tape = Tape::new();
        for (i, s) in cells {
            tape.write(i, s.into(), blank);
        }
        tape
    }

    pub fn read<'a>(&'a self, index: i64, blank: &'a str) -> &'a str {
        self.0.get(&index).map(String::as_str).unwrap_or(blank)
    }

    pub fn write(&mut self, index: i64, symbol: String, blank: &str) {
        if symbol == blank {
            self.0.remove(&index);
        } else {
            self.0.insert(index, symbol);
        }
    }

    pub fn cells(&self) -> &BTreeMap<i64, String> {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn count(&self, symbol: &str) -> usize {
        self.0.values().filter(|s| *s == symbol).count()
    }

    /// Inclusive index range of the non-blank cells.
    pub fn span(&self) -> Option<(i64, i64)> {
        Some((*self.0.keys().next()?, *self.0.keys().next_back()?))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TmConfig {
    pub state: String,
    pub tape: Tape,
    pub head: i64,
}

impl TmConfig {
    pub fn initial(spec: &TmSpec, tape: Tape) -> Self {
        TmConfig {
            state: spec.initial.clone(),
            tape,
            head: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("machine stuck: no transition for ({state}, {symbol})")]
pub struct Stuck {
    pub state: String,
    pub symbol: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepOutcome {
    Moved(TmConfig),
    /// `executed` is true when an explicit HALT entry ran (and counts as an
    /// instruction); false when the machine already sat in a halting state.
    Halted {
        config: TmConfig,
        executed: bool,
    },
}

pub fn step(spec: &TmSpec, config: &TmConfig) -> Result<StepOutcome, Stuck> {
    if spec.is_halting(&config.state) {
        return Ok(StepOutcome::Halted {
            config: config.clone(),
            executed: false,
        });
    }
    let symbol = config.tape.read(config.head, &spec.blank);
    let action = spec.action(&config.state, symbol).ok_or_else(|| Stuck {
        state: config.state.clone(),
        symbol: symbol.to_owned(),
    })?;
    let mut next = config.clone();
    next.tape.write(config.head, action.write().to_owned(), &spec.blank);
    match action {
        Action::Step { mv, next: q, .. } => {
            next.head += mv.offset();
            next.state = q.clone();
            Ok(StepOutcome::Moved(next))
        }
        Action::Halt { .. } => Ok(StepOutcome::Halted {
            config: next,
            executed: true,
        }),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunOutcome {
    Halted,
    Stuck,
    StepLimit,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RunResult {
    /// `trace[0]` is the input configuration.
    pub trace: Vec<TmConfig>,
    pub outcome: RunOutcome,
    /// Instructions executed, counting an explicit HALT entry.
    pub steps: u64,
}

impl RunResult {
    pub fn last(&self) -> &TmConfig {
        self.trace.last().expect("trace is never empty")
    }
}

pub fn run(spec: &TmSpec, config: TmConfig, max_steps: u64) -> RunResult {
    let mut trace = vec![config];
    let mut steps = 0;
    let outcome = loop {
        if steps >= max_steps {
            break RunOutcome::StepLimit;
        }
        match step(spec, trace.last().expect("non-empty")) {
            Ok(StepOutcome::Moved(next)) => {
                trace.push(next);
                steps += 1;
            }
            Ok(StepOutcome::Halted { config, executed }) => {
                if executed {
                    trace.push(config);
                    steps += 1;
                }
                break RunOutcome::Halted;
            }
            Err(_) => break RunOutcome::Stuck,
        }
    };
    RunResult { trace, outcome, steps }
}
