use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::WorldError;

/// Which game's mechanics a world follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ruleset {
    /// Roads, pillaged Roads and Terrascapes.
    BE,
    /// Roads and Railroads.
    V,
    /// Cities, Citizens and Monastery Faith.
    VI,
}

impl Ruleset {
    pub const ALL: [Ruleset; 3] = [Ruleset::BE, Ruleset::V, Ruleset::VI];

    /// Tape symbols in encoding order; position 0 is the blank.
    pub fn alphabet(self) -> &'static [TapeSymbol] {
        match self {
            Ruleset::BE => &[TapeSymbol::Blank, TapeSymbol::Road, TapeSymbol::PillagedRoad],
            Ruleset::V => &[TapeSymbol::Blank, TapeSymbol::Road, TapeSymbol::Railroad],
            Ruleset::VI => &[TapeSymbol::Blank, TapeSymbol::Worked],
        }
    }

    pub fn allows(self, symbol: TapeSymbol) -> bool {
        self.alphabet().contains(&symbol)
    }
}

impl fmt::Display for Ruleset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ruleset::BE => "BE",
            Ruleset::V => "V",
            Ruleset::VI => "VI",
        })
    }
}

impl FromStr for Ruleset {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "BE" | "be" => Ok(Ruleset::BE),
            "V" | "v" => Ok(Ruleset::V),
            "VI" | "vi" => Ok(Ruleset::VI),
            other => Err(format!("unknown ruleset `{other}` (expected BE, V or VI)")),
        }
    }
}

/// What a tape cell holds, in game terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum TapeSymbol {
    /// No Improvement (BE/V) or a grassland cell nobody works (VI).
    Blank,
    Road,
    PillagedRoad,
    Railroad,
    /// A Citizen works the cell (VI).
    Worked,
}

impl fmt::Display for TapeSymbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TapeSymbol::Blank => "blank",
            TapeSymbol::Road => "Road",
            TapeSymbol::PillagedRoad => "Pillaged Road",
            TapeSymbol::Railroad => "Railroad",
            TapeSymbol::Worked => "worked",
        })
    }
}

pub const VI_MONASTERIES: usize = 23;
pub const VI_FARMS: usize = 23;
/// Growth cap of a City that marks an end of the tape.
pub const END_CITY_CAP: u8 = 4;
/// Growth cap of a City with neighbours on both sides.
pub const INNER_CITY_CAP: u8 = 3;

/// Build durations, yields and economy knobs for one ruleset.
///
/// Durations are in turns. Defaults: M=1, T=3, B_rr=2, per-citizen growth
/// of 10 turns; yields follow the games (3 Culture per Terrascape, 2 Faith
/// per worked Monastery, 2 Food upkeep per Citizen).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RulesetParams {
    pub ruleset: Ruleset,
    pub road_build_turns: u32,
    pub terrascape_build_turns: u32,
    pub railroad_build_turns: u32,
    pub remove_or_repair_turns: u32,
    pub terrascape_culture: i64,
    pub base_culture: i64,
    pub monastery_faith: i64,
    pub base_faith: i64,
    pub citizen_food_upkeep: i64,
    pub city_base_food: i64,
    pub grassland_food: i64,
    pub floodplains_food: i64,
    pub settler_cost_per_cell: u64,
    pub settler_cost_base: u64,
    /// Production a City puts into a Settler each turn.
    pub production_per_turn: u64,
    /// Turns for a City below its cap to gain one Citizen.
    pub city_growth_turns: u32,
    pub settler_found_turns: u32,
    pub city_spacing: i64,
    pub worker_move_turns_per_hex: u32,
    /// Size of the BE/V state region.
    pub state_region_tiles: usize,
}

impl Default for RulesetParams {
    fn default() -> Self {
        RulesetParams {
            ruleset: Ruleset::BE,
            road_build_turns: 1,
            terrascape_build_turns: 3,
            railroad_build_turns: 2,
            remove_or_repair_turns: 1,
            terrascape_culture: 3,
            base_culture: 1,
            monastery_faith: 2,
            base_faith: 0,
            citizen_food_upkeep: 2,
            city_base_food: 4,
            grassland_food: 2,
            floodplains_food: 3,
            settler_cost_per_cell: 15,
            settler_cost_base: 50,
            production_per_turn: 5,
            city_growth_turns: 10,
            settler_found_turns: 3,
            city_spacing: 4,
            worker_move_turns_per_hex: 1,
            state_region_tiles: 9,
        }
    }
}

impl RulesetParams {
    pub fn new(ruleset: Ruleset) -> Self {
        RulesetParams {
            ruleset,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<(), WorldError> {
        let bad = |msg: &str| Err(WorldError::InvalidParams(msg.to_owned()));
        let durations = [
            ("road_build_turns", self.road_build_turns),
            ("terrascape_build_turns", self.terrascape_build_turns),
            ("railroad_build_turns", self.railroad_build_turns),
            ("remove_or_repair_turns", self.remove_or_repair_turns),
            ("city_growth_turns", self.city_growth_turns),
            ("settler_found_turns", self.settler_found_turns),
            ("worker_move_turns_per_hex", self.worker_move_turns_per_hex),
        ];
        for (name, d) in durations {
            if d == 0 {
                return Err(WorldError::InvalidParams(format!("{name} must be at least 1")));
            }
        }
        if self.railroad_build_turns <= 1 {
            return bad("railroad_build_turns must exceed 1");
        }
        if self.remove_or_repair_turns != 1 {
            return bad("remove_or_repair_turns is fixed at 1");
        }
        let yields = [
            self.terrascape_culture,
            self.monastery_faith,
            self.citizen_food_upkeep,
            self.city_base_food,
            self.grassland_food,
            self.floodplains_food,
        ];
        if yields.iter().any(|y| *y < 0) {
            return bad("yields must be non-negative");
        }
        if self.terrascape_culture == 0 || self.monastery_faith == 0 {
            return bad("state-encoding yields must be positive");
        }
        if self.production_per_turn == 0 {
            return bad("production_per_turn must be at least 1");
        }
        if self.city_spacing < 4 {
            return bad("city_spacing must be at least 4");
        }
        if self.ruleset != Ruleset::VI && self.state_region_tiles < 9 {
            return bad("state region needs at least nine tiles");
        }
        Ok(())
    }

    /// Production needed for a Settler when the tape holds `tape_len` cells.
    pub fn settler_cost(&self, tape_len: u64) -> u64 {
        self.settler_cost_per_cell * tape_len + self.settler_cost_base
    }

    /// Turns of Production to train a Settler at tape length `tape_len`.
    pub fn settler_turns(&self, tape_len: u64) -> u64 {
        self.settler_cost(tape_len).div_ceil(self.production_per_turn)
    }

    /// Turns a freshly founded City needs to reach the end-of-tape cap.
    pub fn full_growth_turns(&self) -> u64 {
        u64::from(END_CITY_CAP - 2) * u64::from(self.city_growth_turns)
    }

    pub fn move_turns(&self, hexes: i64) -> u64 {
        hexes.unsigned_abs() * u64::from(self.worker_move_turns_per_hex)
    }

    /// Hex holding global tape cell `k` (VI): cell `2j` sits left of City
    /// `j`'s center, cell `2j + 1` right of it.
    pub fn cell_hex(&self, k: i64) -> i64 {
        let city = k.div_euclid(2);
        let side = if k.rem_euclid(2) == 0 { -1 } else { 1 };
        city * self.city_spacing + side
    }

    /// Inverse of [`cell_hex`](Self::cell_hex).
    pub fn hex_cell(&self, hex: i64) -> Option<i64> {
        let city = (hex + 1).div_euclid(self.city_spacing);
        match hex - city * self.city_spacing {
            -1 => Some(2 * city),
            1 => Some(2 * city + 1),
            _ => None,
        }
    }

    pub fn city_center(&self, city: i64) -> i64 {
        city * self.city_spacing
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settler_cost_formula() {
        let p = RulesetParams::new(Ruleset::VI);
        assert_eq!(p.settler_cost(2), 80);
        assert_eq!(p.settler_cost(10), 200);
        assert_eq!(p.settler_turns(2), 16);
        assert_eq!(p.settler_turns(3), 19);
    }

    #[test]
    fn cell_geometry_round_trips() {
        let p = RulesetParams::new(Ruleset::VI);
        for k in -20..20 {
            assert_eq!(p.hex_cell(p.cell_hex(k)), Some(k));
        }
        assert_eq!(p.cell_hex(0), -1);
        assert_eq!(p.cell_hex(1), 1);
        assert_eq!(p.cell_hex(2), 3);
        assert_eq!(p.cell_hex(-1), -3);
        assert_eq!(p.hex_cell(0), None);
        assert_eq!(p.hex_cell(4), None);
    }

    #[test]
    fn rejects_bad_params() {
        let mut p = RulesetParams::new(Ruleset::V);
        p.railroad_build_turns = 1;
        assert!(p.validate().is_err());
        let mut p = RulesetParams::new(Ruleset::BE);
        p.road_build_turns = 0;
        assert!(p.validate().is_err());
        let mut p = RulesetParams::new(Ruleset::BE);
        p.state_region_tiles = 8;
        assert!(p.validate().is_err());
        assert!(RulesetParams::new(Ruleset::VI).validate().is_ok());
    }

    #[test]
    fn params_json_defaults_and_unknown_fields() {
        let p: RulesetParams = serde_json::from_str(r#"{"ruleset":"V","railroad_build_turns":3}"#).unwrap();
        assert_eq!(p.railroad_build_turns, 3);
        assert_eq!(p.road_build_turns, 1);
        assert!(serde_json::from_str::<RulesetParams>(r#"{"speed":1}"#).is_err());
    }
}
