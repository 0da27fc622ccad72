//! Acceptance criteria 1 to 7, one PASS/FAIL line each.
//!
//! Runs without the libtest harness so the lines always print:
//!
//!     cargo test --test acceptance

use std::process::{Command, ExitCode, Stdio};
use std::time::{Duration, Instant};

use civtm::builtin::{builtin_program, table_fixture};
use civtm::codec::{decode, encode_tape, game_tape, init_world};
use civtm::controller::{compile, compile_with, diff_against_fixture, FixtureDiff};
use civtm::harness::{
    lockstep_run, lockstep_verify, overhead_report, random_tape, random_tm, LockstepOutcome, OverheadReport,
};
use civtm::tm::{run, RunOutcome, Tape, TmConfig, TmSpec};
use civtm::world::{Ruleset, RulesetParams};

const LIMIT_TABLES: Duration = Duration::from_secs(1);
const LIMIT_BB3_BE: Duration = Duration::from_secs(1);
const LIMIT_BB3_CROSS: Duration = Duration::from_secs(5);
const LIMIT_ROGOZHIN: Duration = Duration::from_secs(60);
const LIMIT_RANDOM: Duration = Duration::from_secs(300);

/// Frozen from the reference interpreter.
const BB3_ONES: usize = 6;
const BB3_STEPS: u64 = 13;
/// Instruction count printed beside the busy beaver table.
const BB3_PUBLISHED_STEPS: u64 = 11;

/// Rows of the printed VI table whose state count is one above what the
/// state bijection gives.
const VI_TABLE_OFF_BY_ONE: usize = 46;
/// The (q22, 0) row, which goes to q10 yet prints `Work 1 more Monasteries`.
const VI_TABLE_STRAY_ROW: usize = 42;

const ROGOZHIN_BE_V_BUDGET: u64 = 200;
const ROGOZHIN_VI_BUDGET: u64 = 100;
const RANDOM_PER_RULESET: u64 = 50;
const RANDOM_MAX_WORKING_STATES: usize = 7;
const RANDOM_BUDGET: u64 = 100;
const ROUND_TRIPS: u64 = 100;
const ROUND_TRIP_SPAN: i64 = 12;

type Criterion = (&'static str, fn() -> Verdict);

enum Verdict {
    Pass(String),
    Fail(String),
    /// Fails for a reason recorded with the project decisions.
    KnownFail(String),
}

fn within(limit: Duration, start: Instant) -> Result<(), String> {
    let took = start.elapsed();
    if took <= limit {
        Ok(())
    } else {
        Err(format!("took {took:?}, limit {limit:?}"))
    }
}

fn fixed_tapes(spec: &TmSpec) -> Vec<Tape> {
    let rows = ["", "1", "b", "1b1", "11bb", "b0b", "1111", "1b0b1", "bbb1", "10101"];
    let one_or_b = spec.alphabet.iter().any(|s| s == "b");
    rows.iter()
        .enumerate()
        .map(|(i, row)| {
            let origin = if i % 3 == 2 { -2 } else { 0 };
            let cells = row.chars().enumerate().map(|(k, c)| {
                let s = if c == 'b' && !one_or_b { '1' } else { c };
                (origin + k as i64, s.to_string())
            });
            Tape::from_cells(cells, &spec.blank)
        })
        .collect()
}

fn table_diff(name: &str, ruleset: Ruleset) -> FixtureDiff {
    let program = compile(&builtin_program(name).unwrap(), ruleset).unwrap();
    diff_against_fixture(&program, &table_fixture(name, &ruleset.to_string()).unwrap())
}

fn criterion_1() -> Verdict {
    let start = Instant::now();
    let be = table_diff("rogozhin_10_3", Ruleset::BE);
    let v = table_diff("rogozhin_10_3", Ruleset::V);
    let vi = table_diff("rogozhin_24_2", Ruleset::VI);
    if let Err(e) = within(LIMIT_TABLES, start) {
        return Verdict::Fail(e);
    }
    let rows = (be.rows_compared, v.rows_compared, vi.rows_compared);
    let summary = format!(
        "rows {rows:?}, differences BE {} V {} VI {}",
        be.differences.len(),
        v.differences.len(),
        vi.differences.len()
    );
    if rows != (30, 30, 48) || !be.is_clean() || !v.is_clean() {
        return Verdict::Fail(summary);
    }
    if vi.is_clean() {
        return Verdict::Pass(summary);
    }
    let count = |text: &str| -> Option<i64> {
        let n: i64 = text.split_whitespace().nth(1)?.parse().ok()?;
        Some(if text.contains("Farms") { -n } else { n })
    };
    let (off_by_one, other): (Vec<_>, Vec<_>) = vi.differences.iter().partition(|d| {
        d.field == "state" && matches!((count(&d.expected), count(&d.actual)), (Some(e), Some(a)) if e == a + 1)
    });
    let stray: Vec<usize> = other.iter().map(|d| d.row).collect();
    if off_by_one.len() == VI_TABLE_OFF_BY_ONE && stray == [VI_TABLE_STRAY_ROW] {
        Verdict::KnownFail(format!(
            "{summary}; {} VI state counts one above the bijection, row {VI_TABLE_STRAY_ROW} (q22, 0) to q10 printed as +1",
            off_by_one.len()
        ))
    } else {
        Verdict::Fail(summary)
    }
}

fn criterion_2() -> Verdict {
    let start = Instant::now();
    let spec = builtin_program("bb3").unwrap();
    let oracle = run(&spec, TmConfig::initial(&spec, Tape::new()), 1_000);
    let report = lockstep_verify(
        &spec,
        Ruleset::BE,
        &Tape::new(),
        1_000,
        &RulesetParams::new(Ruleset::BE),
    )
    .unwrap();
    if let Err(e) = within(LIMIT_BB3_BE, start) {
        return Verdict::Fail(e);
    }
    let ones = report.final_config.as_ref().map(|c| c.tape.count("1"));
    let detail = format!(
        "{:?}, {ones:?} ones (oracle {}), {} instructions (oracle {}, published {BB3_PUBLISHED_STEPS})",
        report.outcome,
        oracle.last().tape.count("1"),
        report.instructions_verified,
        oracle.steps
    );
    let ok = report.outcome == LockstepOutcome::Equivalent
        && matches!(oracle.outcome, RunOutcome::Halted)
        && oracle.steps == BB3_STEPS
        && report.instructions_verified == oracle.steps
        && oracle.last().tape.count("1") == BB3_ONES
        && ones == Some(BB3_ONES);
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn criterion_3() -> Verdict {
    let start = Instant::now();
    let spec = builtin_program("bb3").unwrap();
    let v = lockstep_verify(&spec, Ruleset::V, &Tape::new(), 1_000, &RulesetParams::new(Ruleset::V)).unwrap();
    let vi = lockstep_verify(
        &spec,
        Ruleset::VI,
        &Tape::new(),
        1_000,
        &RulesetParams::new(Ruleset::VI),
    )
    .unwrap();
    if let Err(e) = within(LIMIT_BB3_CROSS, start) {
        return Verdict::Fail(e);
    }
    let detail = format!(
        "V {:?}, VI {:?} with {} extensions, {} Food checks, lowest stock {:?}",
        v.outcome, vi.outcome, vi.extensions, vi.food_checks, vi.min_food_stock
    );
    let ok = v.outcome == LockstepOutcome::Equivalent
        && vi.outcome == LockstepOutcome::Equivalent
        && vi.extensions >= 1
        && vi.food_checks >= vi.total_turns
        && vi.min_food_stock.is_some_and(|m| m >= 0);
    if ok {
        Verdict::Pass(detail)
    } else {
        Verdict::Fail(detail)
    }
}

fn criterion_4() -> Verdict {
    let start = Instant::now();
    let mut runs = 0;
    let mut failures = Vec::new();
    for (name, ruleset, budget) in [
        ("rogozhin_10_3", Ruleset::BE, ROGOZHIN_BE_V_BUDGET),
        ("rogozhin_10_3", Ruleset::V, ROGOZHIN_BE_V_BUDGET),
        ("rogozhin_24_2", Ruleset::VI, ROGOZHIN_VI_BUDGET),
    ] {
        let spec = builtin_program(name).unwrap();
        for (i, tape) in fixed_tapes(&spec).iter().enumerate() {
            let r = lockstep_verify(&spec, ruleset, tape, budget, &RulesetParams::new(ruleset)).unwrap();
            runs += 1;
            let finished = r.instructions_verified == budget || r.outcome != LockstepOutcome::StepLimit;
            if !r.is_equivalent() || !finished {
                failures.push(format!("{name}/{ruleset} tape {i}: {:?}", r.first_divergence));
            }
        }
    }
    if let Err(e) = within(LIMIT_ROGOZHIN, start) {
        return Verdict::Fail(e);
    }
    if failures.is_empty() {
        Verdict::Pass(format!("{runs} runs equivalent in {:?}", start.elapsed()))
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

fn criterion_5() -> Verdict {
    let start = Instant::now();
    let mut failures = Vec::new();
    let mut runs = 0;
    for ruleset in Ruleset::ALL {
        let symbols = ruleset.alphabet().len();
        for seed in 0..RANDOM_PER_RULESET {
            let states = 1 + (seed as usize % RANDOM_MAX_WORKING_STATES);
            let spec = random_tm(seed, states, symbols).unwrap();
            assert!(spec.num_states() <= 8 && spec.num_symbols() == symbols);
            let tape = random_tape(seed, &spec.alphabet, &spec.blank, (seed % 4) as i64);
            let r = lockstep_verify(&spec, ruleset, &tape, RANDOM_BUDGET, &RulesetParams::new(ruleset)).unwrap();
            runs += 1;
            if !r.is_equivalent() {
                failures.push(format!("{ruleset} seed {seed}: {:?}", r.first_divergence));
            }
        }
    }
    if let Err(e) = within(LIMIT_RANDOM, start) {
        return Verdict::Fail(e);
    }
    if failures.is_empty() {
        Verdict::Pass(format!("{runs} random machines, 0 divergences"))
    } else {
        Verdict::Fail(failures.join("; "))
    }
}

fn sweep(name: &str, params: &RulesetParams, tapes: &[Tape], budget: u64) -> Vec<OverheadReport> {
    let spec = builtin_program(name).unwrap();
    let program = compile_with(&spec, params).unwrap();
    tapes
        .iter()
        .map(|tape| {
            let run = lockstep_run(&spec, &program, tape, budget, params.clone(), |_| {}).unwrap();
            assert!(run.report.is_equivalent());
            overhead_report(&run.world.event_log, params).unwrap()
        })
        .collect()
}

fn criterion_6() -> Verdict {
    let spec = builtin_program("rogozhin_10_3").unwrap();
    let tapes = fixed_tapes(&spec);
    let mut configs = Vec::new();
    for t in 1..=4 {
        for m in 1..=4 {
            let mut p = RulesetParams::new(Ruleset::BE);
            p.terrascape_build_turns = t;
            p.road_build_turns = m;
            configs.push(("rogozhin_10_3", p));
        }
    }
    for b in 2..=4 {
        let mut p = RulesetParams::new(Ruleset::V);
        p.railroad_build_turns = b;
        configs.push(("rogozhin_10_3", p));
    }

    let mut problems = Vec::new();
    let mut excess = 0;
    let mut worst = (0, 0);
    for (name, params) in &configs {
        for r in sweep(name, params, &tapes, ROGOZHIN_BE_V_BUDGET) {
            let published = r.published_bound.unwrap();
            worst = worst.max((r.max_observed, published));
            if !r.derived_bound_satisfied || !r.published_bound_satisfied {
                problems.push(format!(
                    "{:?}: {} over derived {}",
                    params.ruleset, r.max_observed, r.derived_bound
                ));
            }
            for e in &r.excess_over_published {
                excess += 1;
                if e.unexplained > 0 {
                    problems.push(format!(
                        "instruction {} exceeds {} by {} unitemized",
                        e.index, e.published_bound, e.unexplained
                    ));
                }
            }
        }
    }

    let vi = RulesetParams::new(Ruleset::VI);
    let vi_spec = builtin_program("rogozhin_24_2").unwrap();
    let mut vi_reports = sweep("rogozhin_24_2", &vi, &fixed_tapes(&vi_spec)[..3], ROGOZHIN_VI_BUDGET);
    vi_reports.extend(sweep("bb3", &vi, &[Tape::new()], 1_000));
    let mut extensions = 0;
    let mut vi_excess = 0;
    for r in &vi_reports {
        if !r.derived_bound_satisfied {
            problems.push(format!("VI: {} over derived {}", r.max_observed, r.derived_bound));
        }
        for (i, e) in r.extensions() {
            extensions += 1;
            if e.core > e.published_bound || e.published_bound != vi.full_growth_turns() + vi.settler_turns(e.tape_len) + 3 {
                problems.push(format!("VI extension at {}: {} vs {}", i.index, e.core, e.published_bound));
            }
        }
        for e in &r.excess_over_published {
            vi_excess += 1;
            if e.unexplained > 0 {
                problems.push(format!(
                    "VI instruction {} exceeds {} unitemized",
                    e.index, e.unexplained
                ));
            }
        }
    }

    let detail = format!(
        "{} BE/V configurations, worst {} turns against closed form {}, {excess} itemized excesses; \
         {extensions} VI extensions within C + S(L) + 3, {vi_excess} itemized",
        configs.len(),
        worst.0,
        worst.1
    );
    if problems.is_empty() && extensions > 0 {
        Verdict::Pass(detail)
    } else {
        problems.truncate(5);
        Verdict::Fail(format!("{detail}; {}", problems.join("; ")))
    }
}

fn trace(dir: &std::path::Path, tag: &str, args: &[&str]) -> Vec<u8> {
    let out = dir.join(format!("{tag}.jsonl"));
    let status = Command::new(env!("CARGO_BIN_EXE_civtm"))
        .args(args)
        .arg("--out")
        .arg(&out)
        .stdout(Stdio::null())
        .status()
        .expect("civtm binary runs");
    assert!(matches!(status.code(), Some(0) | Some(4)), "{args:?}: {status}");
    std::fs::read(out).unwrap()
}

fn criterion_7() -> Verdict {
    let mut failures = Vec::new();
    for (name, ruleset) in [
        ("rogozhin_10_3", Ruleset::BE),
        ("rogozhin_10_3", Ruleset::V),
        ("rogozhin_24_2", Ruleset::VI),
    ] {
        let spec = builtin_program(name).unwrap();
        let program = compile(&spec, ruleset).unwrap();
        for seed in 0..ROUND_TRIPS {
            let tape = random_tape(seed, &spec.alphabet, &spec.blank, ROUND_TRIP_SPAN);
            let world = init_world(&program, &tape, RulesetParams::new(ruleset)).unwrap();
            let back = decode(&world, &program).unwrap().config;
            let expected = TmConfig::initial(&spec, tape.clone());
            let reencoded = back.as_ref().map(|c| encode_tape(&c.tape, &program).unwrap());
            if back.as_ref() != Some(&expected) || reencoded != Some(game_tape(&world)) {
                failures.push(format!("{ruleset} seed {seed}"));
            }
        }
    }

    let dir = tempfile::tempdir().unwrap();
    let tape_file = dir.path().join("tape.json");
    std::fs::write(&tape_file, r#"{"format_version":1,"cells":{"0":"1","1":"b","-1":"1"}}"#).unwrap();
    let tape_arg = tape_file.to_str().unwrap();
    let runs: [&[&str]; 3] = [
        &["run", "bb3", "--ruleset", "VI"],
        &[
            "run",
            "rogozhin_10_3",
            "--ruleset",
            "V",
            "--tape",
            tape_arg,
            "--max-instructions",
            "150",
        ],
        &["run", "rogozhin_24_2", "--ruleset", "VI", "--max-instructions", "40"],
    ];
    for (i, args) in runs.iter().enumerate() {
        let a = trace(dir.path(), &format!("{i}a"), args);
        let b = trace(dir.path(), &format!("{i}b"), args);
        if a.is_empty() || a != b {
            failures.push(format!("trace {args:?} differs between runs"));
        }
    }

    if failures.is_empty() {
        Verdict::Pass(format!(
            "{} round trips, {} trace pairs byte-identical",
            3 * ROUND_TRIPS,
            runs.len()
        ))
    } else {
        failures.truncate(5);
        Verdict::Fail(failures.join("; "))
    }
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let criteria: [Criterion; 7] = [
        ("table fidelity", criterion_1),
        ("bb3 equivalence on BE", criterion_2),
        ("bb3 on V and VI", criterion_3),
        ("universal machine equivalence", criterion_4),
        ("random machines", criterion_5),
        ("overhead bounds", criterion_6),
        ("round trip and determinism", criterion_7),
    ];
    let mut ok = true;
    for (i, (name, check)) in criteria.iter().enumerate() {
        match check() {
            Verdict::Pass(d) => println!("criterion {}: PASS {name}: {d}", i + 1),
            Verdict::KnownFail(d) => println!("criterion {}: FAIL {name} (documented): {d}", i + 1),
            Verdict::Fail(d) => {
                ok = false;
                println!("criterion {}: FAIL {name}: {d}", i + 1);
            }
        }
    }
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
