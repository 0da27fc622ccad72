//! The `civtm` command line: run, verify, compile, demo-bb3 and cost.
//!
//! Exit status: 0 success, 1 divergence / table difference / bound
//! violation, 2 unreadable input or compile error, 3 stuck machine,
//! 4 instruction budget exhausted.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::builtin::{builtin_program, table_fixture, BUILTIN_NAMES};
use crate::controller::{self, ControllerProgram};
use crate::harness::{self, Boundary, LockstepOutcome, LockstepRun};
use crate::tm::{Action, Tape, TmConfig, TmSpec};
use crate::world::{Resource, Ruleset, RulesetParams, WorldState};

pub const TRACE_FORMAT_VERSION: u32 = 1;
pub const TAPE_FORMAT_VERSION: u32 = 1;

pub const EXIT_OK: u8 = 0;
pub const EXIT_FAILED: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_STUCK: u8 = 3;
pub const EXIT_STEP_LIMIT: u8 = 4;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("cannot read {path}: {source}")]
    Read { path: PathBuf, source: std::io::Error },
    #[error("cannot write {path}: {source}")]
    Write { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error(transparent)]
    Spec(#[from] crate::tm::SpecError),
    #[error(transparent)]
    Compile(#[from] controller::CompileError),
    #[error(transparent)]
    Harness(#[from] harness::HarnessError),
    #[error(transparent)]
    Overhead(#[from] harness::OverheadError),
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        EXIT_INPUT
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "civtm",
    version,
    about = "Turing machines on abstracted strategy-game mechanics"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalOpts,
    #[command(subcommand)]
    pub command: CliCommand,
}

#[derive(Debug, Args)]
pub struct GlobalOpts {
    /// BE, V or VI (default: the params file's ruleset, else BE).
    #[arg(long, global = true)]
    pub ruleset: Option<Ruleset>,
    /// Ruleset parameters as JSON.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 10_000)]
    pub max_instructions: u64,
    /// Trace (run, demo-bb3) or program (compile) output file.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// First seed of a random-machine sweep.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct ProgramArg {
    /// A built-in name (bb3, rogozhin_10_3, rogozhin_24_2) or a machine JSON file.
    pub program: Option<String>,
    #[arg(long, conflicts_with = "program")]
    pub builtin: Option<String>,
}

#[derive(Debug, Subcommand)]
pub enum CliCommand {
    /// Run a machine on the game and write a trace.
    Run {
        #[command(flatten)]
        program: ProgramArg,
        /// Initial tape as JSON `{"format_version":1,"cells":{"0":"1"}}`.
        #[arg(long)]
        tape: Option<PathBuf>,
    },
    /// Check a machine against the reference interpreter.
    Verify {
        #[command(flatten)]
        program: ProgramArg,
        #[arg(long)]
        tape: Option<PathBuf>,
        /// Run this compiled program instead of compiling the machine.
        #[arg(long = "program")]
        compiled: Option<PathBuf>,
        /// Also verify this many random machines, from `--seed` up.
        #[arg(long, default_value_t = 0)]
        seeds: u64,
        /// Working states of the random machines.
        #[arg(long, default_value_t = 4)]
        states: usize,
    },
    /// Compile a machine and print the program.
    Compile {
        #[command(flatten)]
        program: ProgramArg,
        /// Compare against the shipped bijection table.
        #[arg(long)]
        diff_fixture: bool,
    },
    /// Run the three-state busy beaver and render each instruction.
    #[command(name = "demo-bb3")]
    DemoBb3,
    /// Turn accounting of a run against the closed-form bounds.
    Cost {
        #[command(flatten)]
        program: ProgramArg,
        #[arg(long)]
        tape: Option<PathBuf>,
    },
}

/// One instruction boundary of a run, as written to trace files.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub format_version: u32,
    pub instruction: u64,
    pub turn: u64,
    pub state: String,
    pub head: i64,
    /// Cells whose symbol changed since the previous boundary.
    pub changed: BTreeMap<i64, String>,
    pub yields: BTreeMap<Resource, i64>,
    /// VI only: `(city, citizens, growth cap)`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cities: Option<Vec<(i64, u8, u8)>>,
}

impl TraceRecord {
    fn at(boundary: &Boundary<'_>, previous: Option<&TmConfig>, blank: &str) -> Self {
        let c = boundary.config;
        let mut changed = BTreeMap::new();
        let cells = c
            .tape
            .cells()
            .keys()
            .chain(previous.into_iter().flat_map(|p| p.tape.cells().keys()));
        for &k in cells {
            let now = c.tape.read(k, blank);
            if previous.is_none_or(|p| p.tape.read(k, blank) != now) {
                changed.insert(k, now.to_owned());
            }
        }
        let w = boundary.world;
        TraceRecord {
            format_version: TRACE_FORMAT_VERSION,
            instruction: boundary.index,
            turn: w.turn,
            state: c.state.clone(),
            head: c.head,
            changed,
            yields: w.yields(),
            cities: (w.ruleset() == Ruleset::VI)
                .then(|| w.cities.values().map(|c| (c.index, c.citizens, c.growth_cap)).collect()),
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TapeFile {
    format_version: u32,
    cells: BTreeMap<i64, String>,
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|source| CliError::Read {
        path: path.to_owned(),
        source,
    })
}

fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    std::fs::write(path, text).map_err(|source| CliError::Write {
        path: path.to_owned(),
        source,
    })
}

fn parse_error(path: &Path, message: impl ToString) -> CliError {
    CliError::Parse {
        path: path.to_owned(),
        message: message.to_string(),
    }
}

fn load_spec(arg: &ProgramArg) -> Result<(String, TmSpec), CliError> {
    let name = arg.builtin.as_ref().or(arg.program.as_ref()).ok_or_else(|| {
        CliError::Usage(format!(
            "name a machine: one of {} or a JSON file",
            BUILTIN_NAMES.join(", ")
        ))
    })?;
    if arg.builtin.is_some() || BUILTIN_NAMES.contains(&name.as_str()) {
        return Ok((name.clone(), builtin_program(name)?));
    }
    let path = Path::new(name);
    let spec = TmSpec::from_json(&read_text(path)?).map_err(|e| parse_error(path, e))?;
    Ok((name.clone(), spec))
}

fn load_tape(path: Option<&Path>, blank: &str) -> Result<Tape, CliError> {
    let Some(path) = path else { return Ok(Tape::new()) };
    let file: TapeFile = serde_json::from_str(&read_text(path)?).map_err(|e| parse_error(path, e))?;
    if file.format_version != TAPE_FORMAT_VERSION {
        return Err(parse_error(
            path,
            format!("unsupported format_version {}", file.format_version),
        ));
    }
    Ok(Tape::from_cells(file.cells, blank))
}

fn load_params(g: &GlobalOpts) -> Result<RulesetParams, CliError> {
    let mut params = match &g.params {
        Some(path) => serde_json::from_str(&read_text(path)?).map_err(|e| parse_error(path, e))?,
        None => RulesetParams::default(),
    };
    if let Some(r) = g.ruleset {
        params.ruleset = r;
    }
    params.validate().map_err(controller::CompileError::from)?;
    Ok(params)
}

fn exit_for(outcome: LockstepOutcome) -> u8 {
    match outcome {
        LockstepOutcome::Equivalent => EXIT_OK,
        LockstepOutcome::Diverged => EXIT_FAILED,
        LockstepOutcome::OracleStuck => EXIT_STUCK,
        LockstepOutcome::StepLimit => EXIT_STEP_LIMIT,
    }
}

/// Runs with trace collection. Trace lines are JSON, one per boundary.
fn traced_run(
    spec: &TmSpec,
    program: &ControllerProgram,
    tape: &Tape,
    max: u64,
    params: RulesetParams,
    mut each: impl FnMut(&Boundary<'_>),
) -> Result<(LockstepRun, String), CliError> {
    let mut trace = String::new();
    let mut previous: Option<TmConfig> = None;
    let blank = program.blank().to_owned();
    let run = harness::lockstep_run(spec, program, tape, max, params, |b| {
        let record = TraceRecord::at(b, previous.as_ref(), &blank);
        trace.push_str(&serde_json::to_string(&record).expect("trace serializes"));
        trace.push('\n');
        previous = Some(b.config.clone());
        each(b);
    })?;
    Ok((run, trace))
}

#[derive(Serialize)]
struct RunSummary<'a> {
    format_version: u32,
    program: &'a str,
    ruleset: Ruleset,
    outcome: LockstepOutcome,
    halted: bool,
    instructions: u64,
    total_turns: u64,
    tape_extensions: u64,
    final_tape: &'a BTreeMap<i64, String>,
}

/// Executes a parsed command line, writing human output to `out`.
pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> Result<u8, CliError> {
    let g = &cli.global;
    match &cli.command {
        CliCommand::Run { program, tape } => cmd_run(g, program, tape.as_deref(), out),
        CliCommand::Verify {
            program,
            tape,
            compiled,
            seeds,
            states,
        } => cmd_verify(g, program, tape.as_deref(), compiled.as_deref(), *seeds, *states, out),
        CliCommand::Compile { program, diff_fixture } => cmd_compile(g, program, *diff_fixture, out),
        CliCommand::DemoBb3 => cmd_demo_bb3(g, out),
        CliCommand::Cost { program, tape } => cmd_cost(g, program, tape.as_deref(), out),
    }
}

fn cmd_run(g: &GlobalOpts, arg: &ProgramArg, tape: Option<&Path>, out: &mut dyn Write) -> Result<u8, CliError> {
    let (name, spec) = load_spec(arg)?;
    let params = load_params(g)?;
    let program = controller::compile_with(&spec, &params)?;
    let tape = load_tape(tape, &spec.blank)?;
    let (run, trace) = traced_run(&spec, &program, &tape, g.max_instructions, params, |_| {})?;
    if let Some(path) = &g.out {
        write_text(path, &trace)?;
    }
    let r = &run.report;
    let empty = BTreeMap::new();
    let summary = RunSummary {
        format_version: harness::REPORT_FORMAT_VERSION,
        program: &name,
        ruleset: program.ruleset,
        outcome: r.outcome,
        halted: r.halted,
        instructions: r.instructions_verified,
        total_turns: r.total_turns,
        tape_extensions: r.extensions,
        final_tape: r.final_config.as_ref().map_or(&empty, |c| c.tape.cells()),
    };
    writeln!(
        out,
        "{}",
        serde_json::to_string_pretty(&summary).expect("summary serializes")
    )?;
    if let Some(d) = &r.first_divergence {
        writeln!(out, "divergence: {}", serde_json::to_string(d).expect("serializes"))?;
    }
    Ok(exit_for(r.outcome))
}

fn cmd_verify(
    g: &GlobalOpts,
    arg: &ProgramArg,
    tape: Option<&Path>,
    compiled: Option<&Path>,
    seeds: u64,
    states: usize,
    out: &mut dyn Write,
) -> Result<u8, CliError> {
    let params = load_params(g)?;
    let mut status = EXIT_OK;
    if arg.program.is_some() || arg.builtin.is_some() {
        let (_, spec) = load_spec(arg)?;
        let program = match compiled {
            Some(path) => ControllerProgram::from_json(&read_text(path)?).map_err(|e| parse_error(path, e))?,
            None => controller::compile_with(&spec, &params)?,
        };
        let mut params = params.clone();
        params.ruleset = program.ruleset;
        let tape = load_tape(tape, &spec.blank)?;
        let run = harness::lockstep_run(&spec, &program, &tape, g.max_instructions, params.clone(), |_| {})?;
        let overhead = harness::overhead_report(&run.world.event_log, &params)?;
        writeln!(out, "{}", run.report.to_json())?;
        writeln!(out, "{}", overhead.to_json())?;
        if !run.report.is_equivalent() || !overhead.derived_bound_satisfied {
            status = EXIT_FAILED;
        }
    } else if seeds == 0 {
        return Err(CliError::Usage("name a machine or pass --seeds".into()));
    }
    if seeds > 0 {
        let symbols = params.ruleset.alphabet().len();
        let mut diverged = 0;
        for seed in g.seed..g.seed + seeds {
            let spec = harness::random_tm(seed, states, symbols)?;
            let program = controller::compile_with(&spec, &params)?;
            let run = harness::lockstep_run(
                &spec,
                &program,
                &Tape::new(),
                g.max_instructions,
                params.clone(),
                |_| {},
            )?;
            let overhead = harness::overhead_report(&run.world.event_log, &params)?;
            let ok = run.report.is_equivalent() && overhead.derived_bound_satisfied;
            writeln!(
                out,
                "seed {seed}: {:?} after {} instructions{}",
                run.report.outcome,
                run.report.instructions_verified,
                if ok { "" } else { " FAILED" }
            )?;
            diverged += u64::from(!ok);
        }
        writeln!(out, "{seeds} random machines, {diverged} failures")?;
        if diverged > 0 {
            status = EXIT_FAILED;
        }
    }
    Ok(status)
}

fn cmd_compile(g: &GlobalOpts, arg: &ProgramArg, diff: bool, out: &mut dyn Write) -> Result<u8, CliError> {
    let (name, spec) = load_spec(arg)?;
    let params = load_params(g)?;
    let program = controller::compile_with(&spec, &params)?;
    match &g.out {
        Some(path) => write_text(path, &program.to_json())?,
        None if !diff => writeln!(out, "{}", program.to_json())?,
        None => {}
    }
    writeln!(out, "{} macros", program.macros.len())?;
    if !diff {
        return Ok(EXIT_OK);
    }
    let fixture = table_fixture(&name, &program.ruleset.to_string())
        .ok_or_else(|| CliError::Usage(format!("no shipped table for {name} under {}", program.ruleset)))?;
    let d = controller::diff_against_fixture(&program, &fixture);
    write!(out, "{d}")?;
    Ok(if d.is_clean() { EXIT_OK } else { EXIT_FAILED })
}

/// One line per instruction: the transition, the tape with the head in
/// brackets, and the state yield.
pub fn render_instruction(
    spec: &TmSpec,
    before: &TmConfig,
    after: &TmConfig,
    world: &WorldState,
    index: u64,
) -> String {
    let blank = &spec.blank;
    let read = before.tape.read(before.head, blank);
    let rule = match spec.action(&before.state, read) {
        Some(Action::Step { write, mv, next }) => format!("{}{read};{write}{mv}{next}", before.state),
        Some(Action::Halt { .. }) => format!("{}{read};HALT", before.state),
        None => format!("{}{read};-", before.state),
    };
    let (lo, hi) = after.tape.span().map_or((after.head, after.head), |(a, b)| {
        (a.min(after.head), b.max(after.head))
    });
    let mut tape = String::new();
    for k in lo..=hi {
        let s = after.tape.read(k, blank);
        if k == after.head {
            write!(tape, "[{s}]").expect("string write");
        } else {
            write!(tape, " {s} ").expect("string write");
        }
    }
    let y = world.yields();
    let region = &world.state_region;
    let state_yield = match world.ruleset() {
        Ruleset::BE => format!("Culture {:+}", y[&Resource::Culture] - region.base_yield),
        Ruleset::V => format!("Railroads {}", region.count()),
        Ruleset::VI => format!("Faith {:+}", y[&Resource::Faith] - region.base_yield),
    };
    format!(
        "t{index:<3} {rule:<12} turn {:>5}  {tape}  state {} ({state_yield})",
        world.turn, after.state
    )
}

fn cmd_demo_bb3(g: &GlobalOpts, out: &mut dyn Write) -> Result<u8, CliError> {
    let spec = builtin_program("bb3")?;
    let params = load_params(g)?;
    let program = controller::compile_with(&spec, &params)?;
    let mut lines = Vec::new();
    let mut before: Option<TmConfig> = None;
    let (run, trace) = traced_run(&spec, &program, &Tape::new(), g.max_instructions, params, |b| {
        if let Some(prev) = &before {
            lines.push(render_instruction(&spec, prev, b.config, b.world, b.index));
        }
        before = Some(b.config.clone());
    })?;
    for line in &lines {
        writeln!(out, "{line}")?;
    }
    if let Some(path) = &g.out {
        write_text(path, &trace)?;
    }
    let r = &run.report;
    let ones = r.final_config.as_ref().map_or(0, |c| c.tape.count("1"));
    writeln!(
        out,
        "{:?} after {} instructions ({} turns, {} tape extensions); {ones} cells hold 1",
        r.outcome, r.instructions_verified, r.total_turns, r.extensions
    )?;
    writeln!(
        out,
        "the published figure counts 11 instructions; this run executed {}",
        r.instructions_verified
    )?;
    Ok(exit_for(r.outcome))
}

fn cmd_cost(g: &GlobalOpts, arg: &ProgramArg, tape: Option<&Path>, out: &mut dyn Write) -> Result<u8, CliError> {
    let (_, spec) = load_spec(arg)?;
    let params = load_params(g)?;
    let program = controller::compile_with(&spec, &params)?;
    let tape = load_tape(tape, &spec.blank)?;
    let run = harness::lockstep_run(&spec, &program, &tape, g.max_instructions, params.clone(), |_| {})?;
    let o = harness::overhead_report(&run.world.event_log, &params)?;
    writeln!(out, "{}", o.to_json())?;
    writeln!(
        out,
        "max observed {} turns, derived bound {}, closed-form bound {}; {} instructions over the closed-form bound",
        o.max_observed,
        o.derived_bound,
        o.published_bound.map_or("per extension".into(), |b| b.to_string()),
        o.excess_over_published.len()
    )?;
    Ok(if o.derived_bound_satisfied && run.report.is_equivalent() {
        EXIT_OK
    } else {
        EXIT_FAILED
    })
}

/// Parses `args` and runs them; returns the exit status.
pub fn run_args<I, T>(args: I, out: &mut dyn Write) -> Result<u8, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).map_err(|e| CliError::Usage(e.to_string()))?;
    dispatch(&cli, out)
}
