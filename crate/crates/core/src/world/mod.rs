//! Deterministic model of the game mechanics the machines are built from.
//!
//! The map is reduced to a one-dimensional strip of hexes (the tape) plus a
//! separate, finite state region. Tape hexes are addressed by signed
//! integer position; state tiles by their index in the region, so the two
//! can never overlap. Everything advances in whole turns: a command issued
//! at turn `t` with duration `d` takes effect when the world reaches turn
//! `t + d`.

mod params;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use params::{Ruleset, RulesetParams, TapeSymbol, END_CITY_CAP, INNER_CITY_CAP, VI_FARMS, VI_MONASTERIES};

pub const SNAPSHOT_FORMAT_VERSION: u32 = 1;
pub const EVENT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum WorldError {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("symbol {symbol} is not legal under ruleset {ruleset}")]
    IllegalSymbol { symbol: TapeSymbol, ruleset: Ruleset },
    #[error("illegal command {command} for {actor}: {reason}")]
    IllegalCommand {
        actor: String,
        command: String,
        reason: String,
    },
    #[error("no such actor: {0}")]
    UnknownActor(String),
    #[error("{0} is busy")]
    Busy(String),
    #[error("city {city} starves on turn {turn} (food stock {stock})")]
    Starvation { city: i64, turn: u64, stock: i64 },
    #[error("job of {actor} can no longer complete: {reason}")]
    JobConflict { actor: String, reason: String },
    #[error("world invariant violated: {0}")]
    Invariant(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Improvement {
    None,
    Road,
    PillagedRoad,
    Railroad,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Terrain {
    Flat,
    Desert,
    Grassland,
    Floodplains,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Hex {
    pub index: i64,
    pub improvement: Improvement,
    pub worked: bool,
    pub terrain: Terrain,
}

impl Hex {
    fn flat(index: i64) -> Self {
        Hex {
            index,
            improvement: Improvement::None,
            worked: false,
            terrain: Terrain::Flat,
        }
    }

    fn grassland(index: i64) -> Self {
        Hex {
            terrain: Terrain::Grassland,
            ..Hex::flat(index)
        }
    }

    pub fn symbol(&self) -> TapeSymbol {
        match (self.improvement, self.worked) {
            (_, true) => TapeSymbol::Worked,
            (Improvement::None, false) => TapeSymbol::Blank,
            (Improvement::Road, false) => TapeSymbol::Road,
            (Improvement::PillagedRoad, false) => TapeSymbol::PillagedRoad,
            (Improvement::Railroad, false) => TapeSymbol::Railroad,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StateTile {
    /// BE: flat desert, optionally carrying a Terrascape.
    Desert { terrascape: bool },
    /// V: an owned tile, optionally carrying a Railroad.
    Plot { railroad: bool },
    /// VI: a Monastery, optionally worked by a Citizen.
    Monastery { worked: bool },
    /// VI: a Farm, optionally worked by a Citizen.
    Farm { worked: bool },
}

impl StateTile {
    /// Whether the tile currently contributes to the state count (Terrascape,
    /// Railroad or worked Monastery).
    pub fn counts(self) -> bool {
        matches!(
            self,
            StateTile::Desert { terrascape: true }
                | StateTile::Plot { railroad: true }
                | StateTile::Monastery { worked: true }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateRegion {
    pub tiles: Vec<StateTile>,
    /// Constant per-turn baseline of the state-encoding yield (Culture in
    /// BE, Faith in VI).
    pub base_yield: i64,
}

impl StateRegion {
    /// Terrascapes, Railroads, or worked Monasteries.
    pub fn count(&self) -> usize {
        self.tiles.iter().filter(|t| t.counts()).count()
    }

    pub fn worked_farms(&self) -> usize {
        self.tiles
            .iter()
            .filter(|t| matches!(t, StateTile::Farm { worked: true }))
            .count()
    }

    fn lowest(&self, pred: impl Fn(StateTile) -> bool) -> Option<usize> {
        self.tiles.iter().position(|t| pred(*t))
    }

    fn highest(&self, pred: impl Fn(StateTile) -> bool) -> Option<usize> {
        self.tiles.iter().rposition(|t| pred(*t))
    }

    /// Lowest-index tile that can take one more unit of state.
    pub fn next_free(&self) -> Option<usize> {
        self.lowest(|t| {
            matches!(
                t,
                StateTile::Desert { terrascape: false }
                    | StateTile::Plot { railroad: false }
                    | StateTile::Monastery { worked: false }
            )
        })
    }

    /// Highest-index tile currently holding one unit of state.
    pub fn last_used(&self) -> Option<usize> {
        self.highest(StateTile::counts)
    }

    pub fn next_free_farm(&self) -> Option<usize> {
        self.lowest(|t| matches!(t, StateTile::Farm { worked: false }))
    }

    pub fn last_worked_farm(&self) -> Option<usize> {
        self.highest(|t| matches!(t, StateTile::Farm { worked: true }))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum UnitKind {
    TapeWorker,
    StateWorker,
    Rover,
    Settler,
}

pub type UnitId = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Unit {
    pub id: UnitId,
    pub kind: UnitKind,
    pub position: i64,
    pub busy_until: Option<u64>,
    pub job: Option<Command>,
}

impl Unit {
    pub fn is_busy(&self) -> bool {
        self.job.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct City {
    pub index: i64,
    pub center: i64,
    pub citizens: u8,
    pub growth_cap: u8,
    pub food_stock: i64,
    pub production_stock: u64,
    pub growth_progress: u32,
    /// Production cost of the Settler in training, if any.
    pub training: Option<u64>,
    /// Hex positions of the two tape cells the City owns.
    pub tape_cells: [i64; 2],
}

impl City {
    /// Citizens available for tape cells (everyone but the center worker,
    /// at most two).
    pub fn slot_citizens(&self) -> u8 {
        (self.citizens.saturating_sub(1)).min(2)
    }

    pub fn at_cap(&self) -> bool {
        self.citizens == self.growth_cap
    }
}

/// A primitive in-game order.
///
/// Tape commands act on the hex the unit stands on.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Command {
    BuildRoad,
    BuildRailroad,
    RemoveImprovement,
    Pillage,
    Repair,
    BuildTerrascape { tile: usize },
    RemoveTerrascape { tile: usize },
    BuildStateRailroad { tile: usize },
    RemoveStateRailroad { tile: usize },
    Move { to: i64 },
    FoundCity,
    SetCellWorked { cell: i64, worked: bool },
    TrainSettler,
    CapGrowth { cap: u8 },
    ReassignStateCitizen { from: usize, to: usize },
}

impl fmt::Display for Command {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Command::BuildRoad => write!(f, "build_road"),
            Command::BuildRailroad => write!(f, "build_railroad"),
            Command::RemoveImprovement => write!(f, "remove_improvement"),
            Command::Pillage => write!(f, "pillage"),
            Command::Repair => write!(f, "repair"),
            Command::BuildTerrascape { tile } => write!(f, "build_terrascape tile={tile}"),
            Command::RemoveTerrascape { tile } => write!(f, "remove_terrascape tile={tile}"),
            Command::BuildStateRailroad { tile } => write!(f, "build_state_railroad tile={tile}"),
            Command::RemoveStateRailroad { tile } => write!(f, "remove_state_railroad tile={tile}"),
            Command::Move { to } => write!(f, "move to={to}"),
            Command::FoundCity => write!(f, "found_city"),
            Command::SetCellWorked { cell, worked } => {
                write!(f, "set_cell cell={cell} worked={worked}")
            }
            Command::TrainSettler => write!(f, "train_settler"),
            Command::CapGrowth { cap } => write!(f, "cap_growth cap={cap}"),
            Command::ReassignStateCitizen { from, to } => {
                write!(f, "reassign_state_citizen from={from} to={to}")
            }
        }
    }
}

/// Who a command is addressed to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Actor {
    Unit(UnitId),
    City(i64),
    /// The Cities that own the VI Monasteries and Farms.
    StateCities,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Unit(id) => write!(f, "unit:{id}"),
            Actor::City(i) => write!(f, "city:{i}"),
            Actor::StateCities => write!(f, "state-cities"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogEvent {
    pub turn: u64,
    pub unit: String,
    pub command: String,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Resource {
    Culture,
    Faith,
    Food,
}

/// Running record of the per-turn Food check.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct FoodAudit {
    /// City-turns checked.
    pub checks: u64,
    pub min_stock: Option<i64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorldState {
    pub params: RulesetParams,
    pub tape: BTreeMap<i64, Hex>,
    pub state_region: StateRegion,
    pub units: BTreeMap<UnitId, Unit>,
    pub cities: BTreeMap<i64, City>,
    pub turn: u64,
    /// Set once the controller has carried out a HALT entry.
    pub halted: bool,
    pub instruction_count: u64,
    pub event_log: Vec<LogEvent>,
    pub food_audit: FoodAudit,
    next_unit: UnitId,
}

pub const TAPE_WORKER: UnitId = 0;
pub const STATE_WORKER: UnitId = 1;
pub const ROVER: UnitId = 2;

impl WorldState {
    /// Lays out a fresh world holding `initial_tape` with state 0 encoded.
    ///
    /// Under VI the Cities covering cells `0`, `1` and every non-blank
    /// initial cell are founded up front; the two end Cities carry the
    /// fourth (end-of-tape) Citizen.
    pub fn init(params: RulesetParams, initial_tape: &BTreeMap<i64, TapeSymbol>) -> Result<Self, WorldError> {
        params.validate()?;
        let ruleset = params.ruleset;
        for symbol in initial_tape.values() {
            if !ruleset.allows(*symbol) {
                return Err(WorldError::IllegalSymbol {
                    symbol: *symbol,
                    ruleset,
                });
            }
        }
        let mut world = WorldState {
            tape: BTreeMap::new(),
            state_region: StateRegion {
                tiles: Vec::new(),
                base_yield: 0,
            },
            units: BTreeMap::new(),
            cities: BTreeMap::new(),
            turn: 0,
            halted: false,
            instruction_count: 0,
            event_log: Vec::new(),
            food_audit: FoodAudit::default(),
            next_unit: 0,
            params,
        };

        match ruleset {
            Ruleset::BE | Ruleset::V => {
                for (&i, &symbol) in initial_tape {
                    let improvement = match symbol {
                        TapeSymbol::Blank => continue,
                        TapeSymbol::Road => Improvement::Road,
                        TapeSymbol::PillagedRoad => Improvement::PillagedRoad,
                        TapeSymbol::Railroad => Improvement::Railroad,
                        TapeSymbol::Worked => unreachable!("rejected above"),
                    };
                    world.tape.insert(
                        i,
                        Hex {
                            improvement,
                            ..Hex::flat(i)
                        },
                    );
                }
                let tile = if ruleset == Ruleset::BE {
                    StateTile::Desert { terrascape: false }
                } else {
                    StateTile::Plot { railroad: false }
                };
                world.state_region = StateRegion {
                    tiles: vec![tile; world.params.state_region_tiles],
                    base_yield: if ruleset == Ruleset::BE {
                        world.params.base_culture
                    } else {
                        0
                    },
                };
                world.spawn(UnitKind::TapeWorker, 0);
                world.spawn(UnitKind::StateWorker, 0);
                if ruleset == Ruleset::BE {
                    world.spawn(UnitKind::Rover, 0);
                }
            }
            Ruleset::VI => {
                let cells = initial_tape
                    .iter()
                    .filter(|(_, s)| **s != TapeSymbol::Blank)
                    .map(|(k, _)| *k);
                let lo = cells.clone().min().map_or(0, |k| k.div_euclid(2).min(0));
                let hi = cells.max().map_or(0, |k| k.div_euclid(2).max(0));
                for j in lo..=hi {
                    let cap = if j == lo || j == hi {
                        END_CITY_CAP
                    } else {
                        INNER_CITY_CAP
                    };
                    world.found_city(j, cap);
                }
                for (&k, &symbol) in initial_tape {
                    if symbol == TapeSymbol::Worked {
                        let hex = world.params.cell_hex(k);
                        world.tape.get_mut(&hex).expect("cell owned").worked = true;
                    }
                }
                let mut tiles = vec![StateTile::Monastery { worked: false }; VI_MONASTERIES];
                tiles.extend(vec![StateTile::Farm { worked: true }; VI_FARMS]);
                world.state_region = StateRegion {
                    tiles,
                    base_yield: world.params.base_faith,
                };
                let start = world.params.cell_hex(0);
                world.spawn(UnitKind::TapeWorker, start);
            }
        }
        world.check_invariants()?;
        Ok(world)
    }

    fn spawn(&mut self, kind: UnitKind, position: i64) -> UnitId {
        let id = self.next_unit;
        self.next_unit += 1;
        self.units.insert(
            id,
            Unit {
                id,
                kind,
                position,
                busy_until: None,
                job: None,
            },
        );
        id
    }

    fn found_city(&mut self, index: i64, citizens: u8) {
        let center = self.params.city_center(index);
        let tape_cells = [self.params.cell_hex(2 * index), self.params.cell_hex(2 * index + 1)];
        for hex in tape_cells {
            self.tape.insert(hex, Hex::grassland(hex));
        }
        self.cities.insert(
            index,
            City {
                index,
                center,
                citizens,
                growth_cap: END_CITY_CAP.max(citizens),
                food_stock: 0,
                production_stock: 0,
                growth_progress: 0,
                training: None,
                tape_cells,
            },
        );
        if citizens == INNER_CITY_CAP {
            self.cities.get_mut(&index).expect("inserted").growth_cap = INNER_CITY_CAP;
        }
    }

    pub fn ruleset(&self) -> Ruleset {
        self.params.ruleset
    }

    pub fn unit(&self, id: UnitId) -> Option<&Unit> {
        self.units.get(&id)
    }

    pub fn units_of(&self, kind: UnitKind) -> impl Iterator<Item = &Unit> {
        self.units.values().filter(move |u| u.kind == kind)
    }

    pub fn tape_worker(&self) -> &Unit {
        self.units_of(UnitKind::TapeWorker)
            .next()
            .expect("world always has a tape worker")
    }

    pub fn symbol_at(&self, hex: i64) -> TapeSymbol {
        self.tape.get(&hex).map_or(TapeSymbol::Blank, Hex::symbol)
    }

    /// City owning tape hex `hex` (VI).
    pub fn city_owning(&self, hex: i64) -> Option<&City> {
        let cell = self.params.hex_cell(hex)?;
        self.cities.get(&cell.div_euclid(2))
    }

    /// Tape length in cells (VI): two per City.
    pub fn tape_len(&self) -> u64 {
        2 * self.cities.len() as u64
    }

    /// No unit has a pending job and no City is training (and, under VI,
    /// every City sits at its growth cap).
    pub fn is_quiescent(&self) -> bool {
        self.units.values().all(|u| !u.is_busy())
            && self.units_of(UnitKind::Settler).next().is_none()
            && self.cities.values().all(|c| c.training.is_none() && c.at_cap())
    }

    pub fn log(&mut self, unit: impl Into<String>, command: impl Into<String>, detail: impl Into<String>) {
        self.event_log.push(LogEvent {
            turn: self.turn,
            unit: unit.into(),
            command: command.into(),
            detail: detail.into(),
        });
    }

    fn illegal(actor: Actor, command: &Command, reason: impl Into<String>) -> WorldError {
        WorldError::IllegalCommand {
            actor: actor.to_string(),
            command: command.to_string(),
            reason: reason.into(),
        }
    }

    /// Issues `command` to `actor`. Zero-turn commands take effect at once;
    /// everything else is scheduled and lands in [`advance_turn`].
    ///
    /// [`advance_turn`]: Self::advance_turn
    pub fn apply_command(&mut self, actor: Actor, command: Command) -> Result<(), WorldError> {
        match actor {
            Actor::Unit(id) => self.command_unit(id, command),
            Actor::City(index) => self.command_city(index, command),
            Actor::StateCities => self.command_state_cities(command),
        }
    }

    fn command_unit(&mut self, id: UnitId, command: Command) -> Result<(), WorldError> {
        let actor = Actor::Unit(id);
        let unit = self
            .units
            .get(&id)
            .ok_or_else(|| WorldError::UnknownActor(actor.to_string()))?
            .clone();
        if unit.is_busy() {
            return Err(WorldError::Busy(actor.to_string()));
        }
        let ruleset = self.ruleset();
        let p = &self.params;
        let here = self
            .tape
            .get(&unit.position)
            .map_or(Improvement::None, |h| h.improvement);
        use UnitKind::*;
        let duration: u64 = match (&command, unit.kind) {
            (Command::Move { to }, TapeWorker | Rover | Settler) => p.move_turns(to - unit.position),
            (Command::BuildRoad, TapeWorker) if ruleset != Ruleset::VI => {
                match here {
                    Improvement::None => {}
                    Improvement::Road => return Err(Self::illegal(actor, &command, "a Road already exists here")),
                    Improvement::PillagedRoad => {
                        return Err(Self::illegal(
                            actor,
                            &command,
                            "the pillaged Road must be repaired, not rebuilt",
                        ))
                    }
                    Improvement::Railroad => {
                        return Err(Self::illegal(actor, &command, "the Railroad must be removed first"))
                    }
                }
                u64::from(p.road_build_turns)
            }
            (Command::BuildRailroad, TapeWorker) if ruleset == Ruleset::V => {
                if !matches!(here, Improvement::None | Improvement::Road) {
                    return Err(Self::illegal(actor, &command, "a Railroad already exists here"));
                }
                u64::from(p.railroad_build_turns)
            }
            (Command::RemoveImprovement, TapeWorker) if ruleset != Ruleset::VI => {
                if here == Improvement::None {
                    return Err(Self::illegal(actor, &command, "nothing to remove"));
                }
                u64::from(p.remove_or_repair_turns)
            }
            (Command::Repair, TapeWorker) if ruleset == Ruleset::BE => {
                if here != Improvement::PillagedRoad {
                    return Err(Self::illegal(actor, &command, "no pillaged Road here"));
                }
                u64::from(p.remove_or_repair_turns)
            }
            (Command::Pillage, Rover) => {
                if here != Improvement::Road {
                    return Err(Self::illegal(actor, &command, "no Road to pillage"));
                }
                u64::from(p.remove_or_repair_turns)
            }
            (Command::BuildTerrascape { tile }, StateWorker) if ruleset == Ruleset::BE => {
                match self.state_region.tiles.get(*tile) {
                    Some(StateTile::Desert { terrascape: false }) => u64::from(p.terrascape_build_turns),
                    _ => return Err(Self::illegal(actor, &command, "tile is not bare desert")),
                }
            }
            (Command::RemoveTerrascape { tile }, StateWorker) if ruleset == Ruleset::BE => {
                match self.state_region.tiles.get(*tile) {
                    Some(StateTile::Desert { terrascape: true }) => u64::from(p.remove_or_repair_turns),
                    _ => return Err(Self::illegal(actor, &command, "no Terrascape on tile")),
                }
            }
            (Command::BuildStateRailroad { tile }, StateWorker) if ruleset == Ruleset::V => {
                match self.state_region.tiles.get(*tile) {
                    Some(StateTile::Plot { railroad: false }) => u64::from(p.railroad_build_turns),
                    _ => return Err(Self::illegal(actor, &command, "tile already has a Railroad")),
                }
            }
            (Command::RemoveStateRailroad { tile }, StateWorker) if ruleset == Ruleset::V => {
                match self.state_region.tiles.get(*tile) {
                    Some(StateTile::Plot { railroad: true }) => u64::from(p.remove_or_repair_turns),
                    _ => return Err(Self::illegal(actor, &command, "no Railroad on tile")),
                }
            }
            (Command::FoundCity, Settler) => {
                self.check_city_site(unit.position)
                    .map_err(|reason| Self::illegal(actor, &command, reason))?;
                u64::from(p.settler_found_turns)
            }
            _ => {
                return Err(Self::illegal(
                    actor,
                    &command,
                    format!("{:?} cannot do this under {ruleset}", unit.kind),
                ))
            }
        };

        self.log(actor.to_string(), command.to_string(), format!("duration={duration}"));
        if duration == 0 {
            return self.complete_unit_job(id, command);
        }
        let unit = self.units.get_mut(&id).expect("checked");
        unit.busy_until = Some(self.turn + duration);
        unit.job = Some(command);
        Ok(())
    }

    fn check_city_site(&self, position: i64) -> Result<(), String> {
        let spacing = self.params.city_spacing;
        if let Some(c) = self.cities.values().find(|c| (c.center - position).abs() < spacing) {
            return Err(format!("city {} is closer than {spacing} hexes", c.index));
        }
        if position.rem_euclid(spacing) != 0 {
            return Err("site is off the tape city lattice".into());
        }
        let j = position.div_euclid(spacing);
        if !self.cities.contains_key(&(j - 1)) && !self.cities.contains_key(&(j + 1)) {
            return Err("site is not adjacent to an existing tape city".into());
        }
        Ok(())
    }

    fn command_city(&mut self, index: i64, command: Command) -> Result<(), WorldError> {
        let actor = Actor::City(index);
        let tape_len = self.tape_len();
        let city = self
            .cities
            .get(&index)
            .ok_or_else(|| WorldError::UnknownActor(actor.to_string()))?
            .clone();
        match command {
            Command::SetCellWorked { cell, worked } => {
                if !city.tape_cells.contains(&cell) {
                    return Err(Self::illegal(actor, &command, "cell is not owned by this city"));
                }
                let hex = self.tape.get(&cell).expect("owned cells exist");
                if hex.worked == worked {
                    return Err(Self::illegal(actor, &command, "cell already in that state"));
                }
                if worked {
                    let in_use = city.tape_cells.iter().filter(|c| self.tape[c].worked).count() as u8;
                    if in_use >= city.slot_citizens() {
                        return Err(Self::illegal(actor, &command, "no free Citizen"));
                    }
                }
                self.log(actor.to_string(), command.to_string(), "duration=0");
                self.tape.get_mut(&cell).expect("owned").worked = worked;
                Ok(())
            }
            Command::TrainSettler => {
                if city.training.is_some() {
                    return Err(WorldError::Busy(actor.to_string()));
                }
                if city.citizens <= 1 {
                    return Err(Self::illegal(
                        actor,
                        &command,
                        "a city with one Citizen cannot train a Settler",
                    ));
                }
                let cost = self.params.settler_cost(tape_len);
                self.log(
                    actor.to_string(),
                    command.to_string(),
                    format!("cost={cost} tape_len={tape_len}"),
                );
                self.cities.get_mut(&index).expect("checked").training = Some(cost);
                Ok(())
            }
            Command::CapGrowth { cap } => {
                if !(INNER_CITY_CAP..=END_CITY_CAP).contains(&cap) || cap < city.citizens {
                    return Err(Self::illegal(
                        actor,
                        &command,
                        "cap must be 3 or 4 and not below the population",
                    ));
                }
                self.log(actor.to_string(), command.to_string(), "duration=0");
                self.cities.get_mut(&index).expect("checked").growth_cap = cap;
                Ok(())
            }
            other => Err(Self::illegal(actor, &other, "not a city order")),
        }
    }

    fn command_state_cities(&mut self, command: Command) -> Result<(), WorldError> {
        let actor = Actor::StateCities;
        let Command::ReassignStateCitizen { from, to } = command else {
            return Err(Self::illegal(actor, &command, "not a state-city order"));
        };
        if self.ruleset() != Ruleset::VI {
            return Err(Self::illegal(actor, &command, "no state cities in this ruleset"));
        }
        let tiles = &self.state_region.tiles;
        let from_ok = matches!(
            tiles.get(from),
            Some(StateTile::Monastery { worked: true } | StateTile::Farm { worked: true })
        );
        let to_ok = matches!(
            tiles.get(to),
            Some(StateTile::Monastery { worked: false } | StateTile::Farm { worked: false })
        );
        if !from_ok || !to_ok {
            return Err(Self::illegal(
                actor,
                &command,
                "must move a Citizen from a worked tile to an idle one",
            ));
        }
        self.log(actor.to_string(), command.to_string(), "duration=0");
        for (i, worked) in [(from, false), (to, true)] {
            match &mut self.state_region.tiles[i] {
                StateTile::Monastery { worked: w } | StateTile::Farm { worked: w } => *w = worked,
                _ => unreachable!(),
            }
        }
        Ok(())
    }

    fn complete_unit_job(&mut self, id: UnitId, command: Command) -> Result<(), WorldError> {
        let actor = Actor::Unit(id);
        let conflict = |reason: &str| WorldError::JobConflict {
            actor: actor.to_string(),
            reason: reason.to_owned(),
        };
        let position = self.units[&id].position;
        let current = self.tape.get(&position).map_or(Improvement::None, |h| h.improvement);
        let set_improvement = |world: &mut WorldState, imp: Improvement| {
            if imp == Improvement::None {
                world.tape.remove(&position);
            } else {
                world
                    .tape
                    .entry(position)
                    .or_insert_with(|| Hex::flat(position))
                    .improvement = imp;
            }
        };
        match &command {
            Command::Move { to } => {
                self.units.get_mut(&id).expect("exists").position = *to;
            }
            Command::BuildRoad => {
                if current != Improvement::None {
                    return Err(conflict("hex no longer bare"));
                }
                set_improvement(self, Improvement::Road);
            }
            Command::BuildRailroad => {
                if !matches!(current, Improvement::None | Improvement::Road) {
                    return Err(conflict("hex already has a Railroad"));
                }
                set_improvement(self, Improvement::Railroad);
            }
            Command::RemoveImprovement => {
                if current == Improvement::None {
                    return Err(conflict("nothing left to remove"));
                }
                set_improvement(self, Improvement::None);
            }
            Command::Pillage => {
                if current != Improvement::Road {
                    return Err(conflict("Road vanished before pillage"));
                }
                set_improvement(self, Improvement::PillagedRoad);
            }
            Command::Repair => {
                if current != Improvement::PillagedRoad {
                    return Err(conflict("nothing to repair"));
                }
                set_improvement(self, Improvement::Road);
            }
            Command::BuildTerrascape { tile } => {
                self.state_region.tiles[*tile] = StateTile::Desert { terrascape: true }
            }
            Command::RemoveTerrascape { tile } => {
                self.state_region.tiles[*tile] = StateTile::Desert { terrascape: false }
            }
            Command::BuildStateRailroad { tile } => self.state_region.tiles[*tile] = StateTile::Plot { railroad: true },
            Command::RemoveStateRailroad { tile } => {
                self.state_region.tiles[*tile] = StateTile::Plot { railroad: false }
            }
            Command::FoundCity => {
                self.check_city_site(position).map_err(|r| conflict(&r))?;
                let j = position.div_euclid(self.params.city_spacing);
                self.units.remove(&id);
                self.found_city(j, 2);
                self.log(actor.to_string(), "city_founded", format!("city={j} center={position}"));
                return Ok(());
            }
            _ => unreachable!("only unit jobs are scheduled"),
        }
        if let Some(unit) = self.units.get_mut(&id) {
            unit.job = None;
            unit.busy_until = None;
        }
        self.log(actor.to_string(), "complete", command.to_string());
        Ok(())
    }

    /// Food a City produces per turn: the center tile, plus each slot
    /// Citizen on its grassland cell or, if that cell is idle, on
    /// floodplains. A fourth Citizen is the Settler reserve and works no
    /// tile.
    pub fn city_food(&self, city: &City) -> i64 {
        let p = &self.params;
        let worked = city.tape_cells.iter().filter(|c| self.tape[c].worked).count() as i64;
        let slots = i64::from(city.slot_citizens());
        p.city_base_food + worked * p.grassland_food + (slots - worked) * p.floodplains_food
    }

    pub fn city_upkeep(&self, city: &City) -> i64 {
        self.params.citizen_food_upkeep * i64::from(city.citizens)
    }

    pub fn yields(&self) -> BTreeMap<Resource, i64> {
        let mut out = BTreeMap::new();
        let count = self.state_region.count() as i64;
        match self.ruleset() {
            Ruleset::BE => {
                out.insert(
                    Resource::Culture,
                    self.state_region.base_yield + self.params.terrascape_culture * count,
                );
            }
            Ruleset::V => {}
            Ruleset::VI => {
                out.insert(
                    Resource::Faith,
                    self.state_region.base_yield + self.params.monastery_faith * count,
                );
                let food = self.cities.values().map(|c| self.city_food(c)).sum();
                out.insert(Resource::Food, food);
            }
        }
        out
    }

    /// Moves the world one turn forward: City economies first, then unit
    /// jobs due this turn.
    pub fn advance_turn(&mut self) -> Result<(), WorldError> {
        self.turn += 1;
        let turn = self.turn;

        let indices: Vec<i64> = self.cities.keys().copied().collect();
        for index in indices {
            let city = self.cities[&index].clone();
            let net = self.city_food(&city) - self.city_upkeep(&city);
            let mut city = city;
            city.food_stock += net;
            self.food_audit.checks += 1;
            self.food_audit.min_stock = Some(
                self.food_audit
                    .min_stock
                    .map_or(city.food_stock, |m| m.min(city.food_stock)),
            );
            if city.food_stock < 0 {
                return Err(WorldError::Starvation {
                    city: index,
                    turn,
                    stock: city.food_stock,
                });
            }
            let mut spawned = false;
            if let Some(cost) = city.training {
                city.production_stock += self.params.production_per_turn;
                if city.production_stock >= cost {
                    city.production_stock -= cost;
                    city.training = None;
                    city.citizens -= 1;
                    city.growth_progress = 0;
                    spawned = true;
                }
            }
            if city.citizens < city.growth_cap && !spawned {
                city.growth_progress += 1;
                if city.growth_progress >= self.params.city_growth_turns {
                    city.citizens += 1;
                    city.growth_progress = 0;
                    self.log(format!("city:{index}"), "grew", format!("citizens={}", city.citizens));
                }
            } else if city.citizens >= city.growth_cap {
                city.growth_progress = 0;
            }
            let center = city.center;
            self.cities.insert(index, city);
            if spawned {
                let id = self.spawn(UnitKind::Settler, center);
                self.log(format!("city:{index}"), "settler_trained", format!("unit={id}"));
            }
        }

        let due: Vec<(UnitId, Command)> = self
            .units
            .values()
            .filter(|u| u.busy_until == Some(turn))
            .map(|u| (u.id, u.job.clone().expect("busy units hold a job")))
            .collect();
        for (id, command) in due {
            self.complete_unit_job(id, command)?;
        }
        Ok(())
    }

    pub fn check_invariants(&self) -> Result<(), WorldError> {
        let bad = |m: String| Err(WorldError::Invariant(m));
        let ruleset = self.ruleset();
        let count = |k| self.units_of(k).count();
        if count(UnitKind::TapeWorker) != 1 {
            return bad("exactly one tape worker".into());
        }
        let (state_workers, rovers) = match ruleset {
            Ruleset::BE => (1, 1),
            Ruleset::V => (1, 0),
            Ruleset::VI => (0, 0),
        };
        if count(UnitKind::StateWorker) != state_workers || count(UnitKind::Rover) != rovers {
            return bad(format!("unit roster does not match {ruleset}"));
        }
        for hex in self.tape.values() {
            let ok = match ruleset {
                Ruleset::BE => hex.improvement != Improvement::Railroad && !hex.worked,
                Ruleset::V => hex.improvement != Improvement::PillagedRoad && !hex.worked,
                Ruleset::VI => hex.improvement == Improvement::None,
            };
            if !ok {
                return bad(format!("hex {} holds {:?} under {ruleset}", hex.index, hex.symbol()));
            }
        }
        if ruleset == Ruleset::VI {
            let monasteries = self
                .state_region
                .tiles
                .iter()
                .filter(|t| matches!(t, StateTile::Monastery { .. }))
                .count();
            if monasteries != VI_MONASTERIES || self.state_region.tiles.len() != VI_MONASTERIES + VI_FARMS {
                return bad("VI state region must hold 23 Monasteries and 23 Farms".into());
            }
            if self.state_region.count() + self.state_region.worked_farms() != VI_FARMS {
                return bad("state Citizens were lost or duplicated".into());
            }
            let mut prev: Option<&City> = None;
            for city in self.cities.values() {
                if !(1..=city.growth_cap).contains(&city.citizens) || city.growth_cap > END_CITY_CAP {
                    return bad(format!("city {} population out of bounds", city.index));
                }
                let worked = city.tape_cells.iter().filter(|c| self.tape[c].worked).count() as u8;
                if worked > city.slot_citizens() {
                    return bad(format!("city {} works more cells than it has Citizens", city.index));
                }
                if let Some(p) = prev {
                    if city.index != p.index + 1 || city.center - p.center != self.params.city_spacing {
                        return bad("tape cities must be contiguous and evenly spaced".into());
                    }
                }
                prev = Some(city);
            }
        } else if self.state_region.tiles.len() < 9 {
            return bad("state region needs at least nine tiles".into());
        }
        Ok(())
    }

    pub fn snapshot(&self) -> WorldSnapshot<'_> {
        WorldSnapshot {
            format_version: SNAPSHOT_FORMAT_VERSION,
            params: &self.params,
            tape: self.tape.values().collect(),
            state_region: &self.state_region,
            units: self.units.values().collect(),
            cities: self.cities.values().collect(),
            turn: self.turn,
        }
    }

    pub fn snapshot_json(&self) -> String {
        serde_json::to_string_pretty(&self.snapshot()).expect("snapshot serializes")
    }

    /// Event log as line-delimited JSON.
    pub fn event_log_jsonl(&self) -> String {
        #[derive(Serialize)]
        struct Line<'a> {
            format_version: u32,
            #[serde(flatten)]
            event: &'a LogEvent,
        }
        let mut out = String::new();
        for event in &self.event_log {
            out.push_str(
                &serde_json::to_string(&Line {
                    format_version: EVENT_FORMAT_VERSION,
                    event,
                })
                .expect("event serializes"),
            );
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Serialize)]
pub struct WorldSnapshot<'a> {
    pub format_version: u32,
    pub params: &'a RulesetParams,
    pub tape: Vec<&'a Hex>,
    pub state_region: &'a StateRegion,
    pub units: Vec<&'a Unit>,
    pub cities: Vec<&'a City>,
    pub turn: u64,
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world(ruleset: Ruleset, tape: &[(i64, TapeSymbol)]) -> WorldState {
        WorldState::init(RulesetParams::new(ruleset), &tape.iter().copied().collect()).unwrap()
    }

    fn run_until_idle(w: &mut WorldState) {
        while !w.units.values().all(|u| !u.is_busy()) {
            w.advance_turn().unwrap();
        }
    }

    #[test]
    fn be_empty_world() {
        let w = world(Ruleset::BE, &[]);
        assert!(w.tape.is_empty());
        assert_eq!(w.state_region.count(), 0);
        assert_eq!(w.yields()[&Resource::Culture], w.params.base_culture);
        assert_eq!(w.units.len(), 3);
    }

    #[test]
    fn v_direct_encoding() {
        let w = world(Ruleset::V, &[(0, TapeSymbol::Road), (1, TapeSymbol::Railroad)]);
        assert_eq!(w.symbol_at(0), TapeSymbol::Road);
        assert_eq!(w.symbol_at(1), TapeSymbol::Railroad);
        assert_eq!(w.state_region.count(), 0);
    }

    #[test]
    fn vi_empty_world() {
        let w = world(Ruleset::VI, &[]);
        assert_eq!(w.cities.len(), 1);
        let c = &w.cities[&0];
        assert_eq!((c.citizens, c.growth_cap), (4, 4));
        assert!(c.tape_cells.iter().all(|h| !w.tape[h].worked));
        assert_eq!(w.yields()[&Resource::Faith], w.params.base_faith);
    }

    #[test]
    fn railroad_is_illegal_in_be() {
        let err = WorldState::init(
            RulesetParams::new(Ruleset::BE),
            &[(0, TapeSymbol::Railroad)].into_iter().collect(),
        )
        .unwrap_err();
        assert!(matches!(err, WorldError::IllegalSymbol { .. }));
    }

    #[test]
    fn road_takes_m_turns() {
        let mut w = world(Ruleset::BE, &[]);
        for _ in 0..5 {
            w.advance_turn().unwrap();
        }
        w.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad).unwrap();
        assert_eq!(w.symbol_at(0), TapeSymbol::Blank);
        w.advance_turn().unwrap();
        assert_eq!(w.turn, 6);
        assert_eq!(w.symbol_at(0), TapeSymbol::Road);
    }

    #[test]
    fn road_on_road_is_illegal() {
        let mut w = world(Ruleset::BE, &[(0, TapeSymbol::Road)]);
        let err = w
            .apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad)
            .unwrap_err();
        assert!(matches!(err, WorldError::IllegalCommand { .. }));
    }

    #[test]
    fn v_road_over_railroad_needs_removal() {
        let mut w = world(Ruleset::V, &[(0, TapeSymbol::Railroad)]);
        assert!(w.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad).is_err());
        w.apply_command(Actor::Unit(TAPE_WORKER), Command::RemoveImprovement)
            .unwrap();
        run_until_idle(&mut w);
        w.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad).unwrap();
        run_until_idle(&mut w);
        assert_eq!(w.symbol_at(0), TapeSymbol::Road);
        assert_eq!(w.turn, 2);
    }

    #[test]
    fn busy_units_refuse_orders() {
        let mut w = world(Ruleset::BE, &[]);
        w.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad).unwrap();
        assert!(matches!(
            w.apply_command(Actor::Unit(TAPE_WORKER), Command::Move { to: 1 }),
            Err(WorldError::Busy(_))
        ));
    }

    #[test]
    fn pillage_and_repair_cycle() {
        let mut w = world(Ruleset::BE, &[(0, TapeSymbol::Road)]);
        assert!(w.apply_command(Actor::Unit(TAPE_WORKER), Command::Pillage).is_err());
        w.apply_command(Actor::Unit(ROVER), Command::Pillage).unwrap();
        run_until_idle(&mut w);
        assert_eq!(w.symbol_at(0), TapeSymbol::PillagedRoad);
        assert!(w.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad).is_err());
        w.apply_command(Actor::Unit(TAPE_WORKER), Command::Repair).unwrap();
        run_until_idle(&mut w);
        assert_eq!(w.symbol_at(0), TapeSymbol::Road);
    }

    #[test]
    fn terrascapes_drive_culture() {
        let mut w = world(Ruleset::BE, &[]);
        for tile in 0..2 {
            w.apply_command(Actor::Unit(STATE_WORKER), Command::BuildTerrascape { tile })
                .unwrap();
            run_until_idle(&mut w);
        }
        assert_eq!(w.yields()[&Resource::Culture], 7);
        assert_eq!(w.turn, 6);
    }

    #[test]
    fn monastery_reassignment_is_immediate() {
        let mut w = world(Ruleset::VI, &[]);
        let from = w.state_region.last_worked_farm().unwrap();
        let to = w.state_region.next_free().unwrap();
        w.apply_command(Actor::StateCities, Command::ReassignStateCitizen { from, to })
            .unwrap();
        assert_eq!(w.turn, 0);
        assert_eq!(w.yields()[&Resource::Faith] - w.params.base_faith, 2);
    }

    #[test]
    fn all_monasteries_worked() {
        let mut w = world(Ruleset::VI, &[]);
        for _ in 0..VI_MONASTERIES {
            let from = w.state_region.last_worked_farm().unwrap();
            let to = w.state_region.next_free().unwrap();
            w.apply_command(Actor::StateCities, Command::ReassignStateCitizen { from, to })
                .unwrap();
        }
        assert_eq!(w.yields()[&Resource::Faith] - w.params.base_faith, 46);
        w.check_invariants().unwrap();
    }

    #[test]
    fn full_city_with_both_cells_worked_breaks_even() {
        let mut w = world(Ruleset::VI, &[(0, TapeSymbol::Worked), (1, TapeSymbol::Worked)]);
        let c = w.cities[&0].clone();
        assert_eq!(w.city_food(&c), 8);
        assert_eq!(w.city_upkeep(&c), 8);
        w.advance_turn().unwrap();
        assert_eq!(w.cities[&0].food_stock, 0);
    }

    #[test]
    fn settler_needs_two_citizens() {
        let mut w = world(Ruleset::VI, &[]);
        w.cities.get_mut(&0).unwrap().citizens = 1;
        assert!(w.apply_command(Actor::City(0), Command::TrainSettler).is_err());
    }

    #[test]
    fn settler_founds_a_growing_city() {
        let mut w = world(Ruleset::VI, &[]);
        w.apply_command(Actor::City(0), Command::TrainSettler).unwrap();
        while w.units_of(UnitKind::Settler).next().is_none() {
            w.advance_turn().unwrap();
        }
        assert_eq!(w.turn, w.params.settler_turns(2));
        assert_eq!(w.cities[&0].citizens, 3);
        let settler = w.units_of(UnitKind::Settler).next().unwrap().id;
        // too close to the parent city
        assert!(w.apply_command(Actor::Unit(settler), Command::FoundCity).is_err());
        w.apply_command(Actor::Unit(settler), Command::Move { to: 4 }).unwrap();
        run_until_idle(&mut w);
        w.apply_command(Actor::Unit(settler), Command::FoundCity).unwrap();
        run_until_idle(&mut w);
        let c = &w.cities[&1];
        assert_eq!((c.citizens, c.growth_cap, c.center), (2, 4, 4));
        for _ in 0..2 * w.params.city_growth_turns {
            w.advance_turn().unwrap();
        }
        assert_eq!(w.cities[&1].citizens, 4);
        w.check_invariants().unwrap();
    }

    #[test]
    fn cell_writes_need_a_free_citizen() {
        let mut w = world(Ruleset::VI, &[]);
        let [a, b] = w.cities[&0].tape_cells;
        w.cities.get_mut(&0).unwrap().citizens = 2;
        w.apply_command(Actor::City(0), Command::SetCellWorked { cell: a, worked: true })
            .unwrap();
        assert!(w
            .apply_command(Actor::City(0), Command::SetCellWorked { cell: b, worked: true })
            .is_err());
    }

    #[test]
    fn snapshot_and_log_are_versioned() {
        let mut w = world(Ruleset::BE, &[]);
        w.apply_command(Actor::Unit(TAPE_WORKER), Command::BuildRoad).unwrap();
        w.advance_turn().unwrap();
        let snap: serde_json::Value = serde_json::from_str(&w.snapshot_json()).unwrap();
        assert_eq!(snap["format_version"], 1);
        let log = w.event_log_jsonl();
        assert_eq!(log.lines().count(), 2);
        for line in log.lines() {
            assert!(line.starts_with("{\"format_version\":1,"));
        }
    }
}
