//! Command implementations behind the `strandchain` binary.
//!
//! Exit codes: 0 success, 1 validation verdict was a rejection,
//! 2 bad config or arguments, 3 I/O failure, 4 malformed trace or failed
//! analysis, 5 undecodable block or ledger file.

use std::fmt::Write as _;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use strandchain::analysis::{self, RaceSetup};
use strandchain::ledger::{Check, CheckedBlock, Ledger};
use strandchain::miner::{honest_block, SeededPayloads, TicketSearch};
use strandchain::netsim::{self, Mode, SimConfig, SimTrace};
use strandchain::pow::CancelToken;
use strandchain::{Block, Error, Hash256, Params};

/// Largest difficulty `mine-demo` accepts.
pub const DEMO_MAX_DIFFICULTY: u32 = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok = 0,
    Rejected = 1,
    Config = 2,
    Io = 3,
    Trace = 4,
    Decode = 5,
}

impl Status {
    pub fn code(self) -> i32 {
        self as i32
    }
}

#[derive(Debug)]
pub struct CliError {
    pub status: Status,
    pub message: String,
}

impl CliError {
    fn new(status: Status, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.message)
    }
}

impl std::error::Error for CliError {}

fn status_of(e: &Error) -> Status {
    match e {
        Error::UnsupportedHash(_)
        | Error::UnsupportedSignature(_)
        | Error::InvalidParams(_)
        | Error::Config(_)
        | Error::IndexOutOfRange { .. } => Status::Config,
        Error::Trace(_) | Error::Integrity(_) | Error::Analysis(_) => Status::Trace,
        Error::TipCount { .. } | Error::SeedLength { .. } | Error::Decode(_) => Status::Decode,
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::new(status_of(&e), e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn read_text(path: &Path) -> CliResult<String> {
    fs::read_to_string(path)
        .map_err(|e| CliError::new(Status::Io, format!("{}: {e}", path.display())))
}

fn read_bytes(path: &Path) -> CliResult<Vec<u8>> {
    fs::read(path).map_err(|e| CliError::new(Status::Io, format!("{}: {e}", path.display())))
}

fn write_output(path: Option<&Path>, bytes: &[u8]) -> CliResult<()> {
    match path {
        Some(p) => fs::write(p, bytes)
            .map_err(|e| CliError::new(Status::Io, format!("{}: {e}", p.display()))),
        None => std::io::stdout()
            .write_all(bytes)
            .map_err(|e| CliError::new(Status::Io, format!("stdout: {e}"))),
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "strandchain",
    version,
    about = "Multi-strand proof-of-work ledger, simulator and analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Mine tickets against a fresh ledger and print each resulting block.
    MineDemo(MineDemoArgs),
    /// Run a simulation and write its trace.
    Simulate(SimulateArgs),
    /// Compute a report from traces or catch-up races.
    Analyze(AnalyzeArgs),
    /// Check a block against a ledger export, printing each check.
    Validate(ValidateArgs),
    /// Write the final ledger of a trace, or one of its blocks, in canonical bytes.
    Export(ExportArgs),
    /// Replay a trace and check its recorded final state.
    Replay(ReplayArgs),
}

#[derive(Debug, Args)]
pub struct MineDemoArgs {
    /// TOML file with a [params] table. Overrides --p and --difficulty.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, default_value_t = 1)]
    pub p: u32,
    #[arg(long, default_value_t = 8)]
    pub difficulty: u32,
    #[arg(long, default_value_t = 10)]
    pub count: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    #[value(name = "real_hash")]
    RealHash,
    #[value(name = "analytic")]
    Analytic,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::RealHash => Mode::RealHash,
            ModeArg::Analytic => Mode::Analytic,
        }
    }
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub config: PathBuf,
    /// Trace destination; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum ReportKind {
    Throughput,
    Uniformity,
    Orphans,
    Catchup,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Csv,
    Jsonl,
}

#[derive(Debug, Args)]
pub struct AnalyzeArgs {
    #[arg(long, value_enum)]
    pub report: ReportKind,
    /// Trace to analyze. Not used by the catchup report.
    pub trace: Option<PathBuf>,
    /// Single-strand trace for the throughput scaling factor.
    #[arg(long)]
    pub baseline: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    pub format: Format,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = analysis::DEFAULT_SIGNIFICANCE)]
    pub significance: f64,
    /// Attacker share of the hash rate (catchup).
    #[arg(long, default_value_t = 0.3)]
    pub q: f64,
    /// Starting deficits (catchup).
    #[arg(long, value_delimiter = ',', default_value = "1,2,4,6")]
    pub z: Vec<u64>,
    #[arg(long, default_value_t = 1000)]
    pub trials: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Strand exponent of the race ledger (catchup).
    #[arg(long, default_value_t = 0)]
    pub p: u32,
}

#[derive(Debug, Args)]
pub struct ValidateArgs {
    /// Canonical block bytes.
    #[arg(long)]
    pub block: PathBuf,
    /// Ledger export to validate against.
    #[arg(long)]
    pub ledger: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub trace: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Hex id of a published block to write instead of the ledger.
    #[arg(long)]
    pub block: Option<String>,
}

#[derive(Debug, Args)]
pub struct ReplayArgs {
    #[arg(long)]
    pub trace: PathBuf,
}

/// Runs a parsed command. Text meant for the user is written to stdout;
/// the returned status is the process exit code.
pub fn run(cli: Cli) -> CliResult<Status> {
    match cli.command {
        Command::MineDemo(a) => {
            let params = match &a.config {
                Some(path) => demo_params(&read_text(path)?)?,
                None => Params::new(a.p, a.difficulty)?,
            };
            let text = mine_demo(params, a.count, a.seed)?;
            write_output(a.out.as_deref(), text.as_bytes())?;
            Ok(Status::Ok)
        }
        Command::Simulate(a) => {
            let config = load_sim_config(&read_text(&a.config)?, a.seed, a.mode.map(Mode::from))?;
            let trace = netsim::run(&config)?;
            match &a.out {
                Some(path) => {
                    let file = fs::File::create(path).map_err(|e| {
                        CliError::new(Status::Io, format!("{}: {e}", path.display()))
                    })?;
                    netsim::write_trace(&trace, BufWriter::new(file)).map_err(|e| {
                        CliError::new(Status::Io, format!("{}: {e}", path.display()))
                    })?;
                }
                None => netsim::write_trace(&trace, BufWriter::new(std::io::stdout().lock()))
                    .map_err(|e| CliError::new(Status::Io, format!("stdout: {e}")))?,
            }
            Ok(Status::Ok)
        }
        Command::Analyze(a) => {
            let text = analyze(&a)?;
            write_output(a.out.as_deref(), text.as_bytes())?;
            Ok(Status::Ok)
        }
        Command::Validate(a) => {
            let ledger = Ledger::import(&read_bytes(&a.ledger)?)?;
            let block = Block::from_bytes(&read_bytes(&a.block)?, ledger.params())?;
            let (text, ok) = validate(&ledger, block)?;
            print!("{text}");
            Ok(if ok { Status::Ok } else { Status::Rejected })
        }
        Command::Export(a) => {
            let trace = load_trace(&a.trace)?;
            let bytes = match &a.block {
                None => export_ledger(&trace)?,
                Some(id) => export_block(
                    &trace,
                    &Hash256::from_hex(id)
                        .map_err(|e| CliError::new(Status::Config, format!("--block: {e}")))?,
                )?,
            };
            write_output(Some(&a.out), &bytes)?;
            Ok(Status::Ok)
        }
        Command::Replay(a) => {
            let trace = load_trace(&a.trace)?;
            let ledger = netsim::replay(&trace)?;
            println!("replay ok: heights {:?}", ledger.heights());
            Ok(Status::Ok)
        }
    }
}

#[derive(Deserialize)]
struct DemoFile {
    params: Params,
}

/// Reads the [params] table of a TOML file; other keys are ignored so a
/// simulation config works too.
pub fn demo_params(text: &str) -> CliResult<Params> {
    let file: DemoFile =
        toml::from_str(text).map_err(|e| CliError::new(Status::Config, e.to_string()))?;
    Ok(file.params)
}

/// Mines `count` blocks one after another on a fresh ledger.
pub fn mine_demo(params: Params, count: u64, seed: u64) -> CliResult<String> {
    if params.difficulty_bits() > DEMO_MAX_DIFFICULTY {
        return Err(CliError::new(
            Status::Config,
            format!(
                "difficulty {} is above the demo limit of {DEMO_MAX_DIFFICULTY} bits",
                params.difficulty_bits()
            ),
        ));
    }
    let mut ledger = Ledger::genesis(params);
    let mut search = TicketSearch::new(seed);
    let mut payloads = SeededPayloads::new(seed, netsim::PAYLOAD_LEN);
    let cancel = CancelToken::new();
    let mut out = String::new();
    for i in 0..count {
        let view = ledger.view();
        let found = loop {
            if let Some(f) = search.search(&view.tips, &params, 1 << 20, &cancel).found {
                break f;
            }
        };
        let block = honest_block(&found, &view, &params, &mut payloads, 0);
        let id = strandchain::types::block_id(&block, &params)?;
        let outcome = ledger.apply_block(block);
        debug_assert!(outcome.is_accepted());
        let j = &found.judgement;
        let _ = writeln!(
            out,
            "ticket {i}: nonce={} ticket_hash={} zero_bits={} chain_index={} block_id={}",
            found.ticket.nonce,
            j.ticket_hash,
            j.zero_bits,
            j.chain_index.get(),
            id
        );
    }
    let _ = writeln!(out, "heights: {:?}", ledger.heights());
    Ok(out)
}

pub fn load_sim_config(text: &str, seed: Option<u64>, mode: Option<Mode>) -> CliResult<SimConfig> {
    let mut config =
        SimConfig::from_toml_str(text).map_err(|e| CliError::new(Status::Config, e.to_string()))?;
    if let Some(s) = seed {
        config.seed = s;
    }
    if let Some(m) = mode {
        config.mode = m;
        config
            .validate()
            .map_err(|e| CliError::new(Status::Config, e.to_string()))?;
    }
    Ok(config)
}

pub fn load_trace(path: &Path) -> CliResult<SimTrace> {
    let text = read_text(path)?;
    netsim::read_trace(&text)
        .map_err(|e| CliError::new(Status::Trace, format!("{}: {e}", path.display())))
}

pub fn analyze(a: &AnalyzeArgs) -> CliResult<String> {
    let trace = || -> CliResult<SimTrace> {
        let path = a
            .trace
            .as_deref()
            .ok_or_else(|| CliError::new(Status::Config, "this report needs a trace file"))?;
        load_trace(path)
    };
    let text = match a.report {
        ReportKind::Throughput => {
            let t = trace()?;
            let base = a.baseline.as_deref().map(load_trace).transpose()?;
            let r = analysis::throughput(&t, base.as_ref())?;
            pick(a.format, r.to_csv(), r.to_jsonl())
        }
        ReportKind::Uniformity => {
            let r = analysis::uniformity(&trace()?, a.significance)?;
            pick(a.format, r.to_csv(), r.to_jsonl())
        }
        ReportKind::Orphans => {
            let r = analysis::orphan_report(&trace()?);
            pick(a.format, r.to_csv(), r.to_jsonl())
        }
        ReportKind::Catchup => {
            let params = Params::new(a.p, 0)?;
            let curve = analysis::catchup(&RaceSetup::new(params, a.seed), a.q, &a.z, a.trials)
                .map_err(|e| CliError::new(Status::Config, e.to_string()))?;
            pick(a.format, curve.to_csv(), curve.to_jsonl())
        }
    };
    Ok(text)
}

fn pick(format: Format, csv: String, jsonl: String) -> String {
    match format {
        Format::Csv => csv,
        Format::Jsonl => jsonl,
    }
}

/// Per-check report. Returns the text and whether every check passed.
pub fn validate(ledger: &Ledger, block: Block) -> CliResult<(String, bool)> {
    let checked = CheckedBlock::new(block, ledger.params())?;
    let report = ledger.check_block(&checked);
    let mut out = String::new();
    for check in Check::ALL {
        match report.get(check) {
            Ok(()) => {
                let _ = writeln!(out, "{check} pass  {}", check.description());
            }
            Err(reason) => {
                let _ = writeln!(out, "{check} FAIL  {}: {reason}", check.description());
            }
        }
    }
    let ok = report.all_pass();
    let _ = writeln!(
        out,
        "block {}: {}",
        checked.id(),
        if ok { "accept" } else { "reject" }
    );
    Ok((out, ok))
}

pub fn export_ledger(trace: &SimTrace) -> CliResult<Vec<u8>> {
    Ok(netsim::replay(trace)?.export()?)
}

pub fn export_block(trace: &SimTrace, id: &Hash256) -> CliResult<Vec<u8>> {
    let params = trace.config.ledger_params();
    let (_, _, block) = trace
        .published()
        .find(|(_, _, b)| b.id() == *id)
        .ok_or_else(|| CliError::new(Status::Trace, format!("block {id} is not in the trace")))?;
    Ok(block.block().to_bytes(&params)?)
}
