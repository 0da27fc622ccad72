//! Shipped transition tables and the built-in programs read from them.
//!
//! Each fixture carries two views of the same table: the machine side
//! (`rule`) and the game side (`read`, `tape`, `move`, `state`) as plain text.
//! Built-in programs are assembled from the machine side only; the game side
//! is what compiled programs are diffed against.

use std::collections::{BTreeMap, BTreeSet};

use serde::Deserialize;

use crate::tm::{Action, Move, SpecError, TmSpec};

const APPENDIX_BE: &str = include_str!("../fixtures/appendix_be.json");
const APPENDIX_V: &str = include_str!("../fixtures/appendix_v.json");
const APPENDIX_VI: &str = include_str!("../fixtures/appendix_vi.json");
const BB3: &str = include_str!("../fixtures/bb3.json");

pub const BUILTIN_NAMES: [&str; 3] = ["bb3", "rogozhin_10_3", "rogozhin_24_2"];

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TableFixture {
    pub table: String,
    pub program: String,
    pub ruleset: String,
    /// Game state index = TM state position + offset.
    pub state_index_offset: i64,
    pub tm: FixtureMachine,
    pub notes: Vec<String>,
    pub rows: Vec<FixtureRow>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureMachine {
    pub states: Vec<String>,
    pub alphabet: Vec<String>,
    pub blank: String,
    pub initial: String,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRow {
    /// Game-side state number as printed in the table.
    pub delta: i64,
    pub read: String,
    pub tape: String,
    #[serde(rename = "move")]
    pub mv: Option<Move>,
    pub state: Option<String>,
    /// Machine column, as printed.
    pub tm: String,
    pub rule: FixtureRule,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FixtureRule {
    pub state: String,
    pub read: String,
    pub write: Option<String>,
    #[serde(rename = "move")]
    pub mv: Option<Move>,
    pub next: Option<String>,
    #[serde(default)]
    pub halt: bool,
}

impl FixtureRule {
    pub fn action(&self) -> Result<Action, SpecError> {
        let write = self.write.clone().unwrap_or_else(|| self.read.clone());
        match (self.halt, self.mv, &self.next) {
            (true, _, None) => Ok(Action::Halt { write }),
            (false, Some(mv), Some(next)) => Ok(Action::Step {
                write,
                mv,
                next: next.clone(),
            }),
            _ => Err(SpecError::MalformedTransition(self.state.clone(), self.read.clone())),
        }
    }
}

impl TableFixture {
    fn parse(text: &str) -> Self {
        serde_json::from_str(text).expect("shipped fixture parses")
    }

    pub fn to_spec(&self) -> Result<TmSpec, SpecError> {
        let mut transitions = BTreeMap::new();
        for row in &self.rows {
            let key = (row.rule.state.clone(), row.rule.read.clone());
            if transitions.insert(key, row.rule.action()?).is_some() {
                return Err(SpecError::DuplicateTransition(
                    row.rule.state.clone(),
                    row.rule.read.clone(),
                ));
            }
        }
        let input_alphabet: BTreeSet<String> = self
            .tm
            .alphabet
            .iter()
            .filter(|s| **s != self.tm.blank)
            .cloned()
            .collect();
        TmSpec {
            states: self.tm.states.clone(),
            alphabet: self.tm.alphabet.clone(),
            blank: self.tm.blank.clone(),
            input_alphabet,
            initial: self.tm.initial.clone(),
            halting: BTreeSet::new(),
            transitions,
        }
        .validated()
    }
}

/// The appendix table for `(program, ruleset)`, if one ships.
pub fn table_fixture(program: &str, ruleset: &str) -> Option<TableFixture> {
    let text = match (program, ruleset) {
        ("rogozhin_10_3", "BE") => APPENDIX_BE,
        ("rogozhin_10_3", "V") => APPENDIX_V,
        ("rogozhin_24_2", "VI") => APPENDIX_VI,
        ("bb3", "BE") => BB3,
        _ => return None,
    };
    Some(TableFixture::parse(text))
}

pub fn builtin_program(name: &str) -> Result<TmSpec, SpecError> {
    let text = match name {
        "bb3" => BB3,
        "rogozhin_10_3" => APPENDIX_BE,
        "rogozhin_24_2" => APPENDIX_VI,
        other => return Err(SpecError::UnknownBuiltin(other.to_owned())),
    };
    TableFixture::parse(text).to_spec()
}
