//! The `latprof` command line: parse, analyze, report, export and simulate.

mod commands;
mod input;

use std::ffi::OsString;
use std::fs;
use std::io::{self, Read, Write};
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use latprof::export::valid_index_name;
use latprof::locks::DEFAULT_MAX_CYCLE_LEN;
use latprof::{GroupBy, InputFormat, Timestamp};

pub use input::InputSpec;

#[derive(Debug, Parser)]
#[command(name = "latprof", version, about = "Off-CPU, profile and lock analysis for perf-style traces")]
pub struct Cli {
    /// Write data here instead of standard output.
    #[arg(long, short = 'o', global = true, value_name = "PATH")]
    pub out: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Perf,
    Gprof,
    Oprofile,
    Mutrace,
    Strace,
    /// `tid,lock_id,request_ts,grant_ts,release_ts` CSV
    Acquisitions,
}

impl From<FormatArg> for InputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Perf => InputFormat::Perf,
            FormatArg::Gprof => InputFormat::Gprof,
            FormatArg::Oprofile => InputFormat::Oprofile,
            FormatArg::Mutrace => InputFormat::Mutrace,
            FormatArg::Strace => InputFormat::Strace,
            FormatArg::Acquisitions => InputFormat::Acquisitions,
        }
    }
}

#[derive(Debug, Args)]
pub struct InputArgs {
    /// Input file, repeatable. Without it (or with `-`) standard input is read.
    #[arg(long = "input", short = 'i', value_name = "PATH")]
    pub inputs: Vec<PathBuf>,

    /// Input grammar; detected from the first non-blank line when omitted.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,

    /// Fail on the first malformed line instead of skipping it.
    #[arg(long)]
    pub strict: bool,
}

impl InputArgs {
    fn spec(&self) -> InputSpec {
        InputSpec { paths: self.inputs.clone(), format: self.format.map(Into::into), strict: self.strict }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum TimeBasisArg {
    /// grant - request
    Wait,
    /// release - grant
    Hold,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExportFormat {
    Csv,
    Bulk,
    Json,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PieModeArg {
    Comm,
    CommDso,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Dump normalized records as NDJSON.
    Parse {
        #[command(flatten)]
        input: InputArgs,
    },
    /// Flat profile, off-CPU totals and lock table.
    Report {
        #[command(flatten)]
        input: InputArgs,
        /// Profile rows to print.
        #[arg(long, default_value_t = 20)]
        top: usize,
        /// Profile key fields, comma separated.
        #[arg(long, default_value = "comm,dso,symbol", value_parser = parse_group_by)]
        group_by: GroupBy,
        /// Sample event (`cpu-clock`, any qualified event name, or `all`).
        #[arg(long, default_value = "cpu-clock")]
        event: String,
    },
    /// Off-CPU wait attribution from scheduler events.
    Offcpu {
        #[command(flatten)]
        input: InputArgs,
        /// Symbols marking a lock wait, comma separated; replaces the defaults.
        #[arg(long, value_delimiter = ',')]
        lock_symbols: Option<Vec<String>>,
        /// Window for block-I/O and network hints, in microseconds.
        #[arg(long, default_value_t = 1000)]
        lookback_us: u64,
        /// Leave out runnable (scheduler delay) intervals.
        #[arg(long)]
        blocked_only: bool,
        /// Stacks listed in the details.
        #[arg(long, default_value_t = 20)]
        top_stacks: usize,
        /// Print `stack total_ns` lines for flame graph tools instead.
        #[arg(long)]
        collapsed: bool,
    },
    /// Lock contention table, lock-order graph and deadlock-risk cycles.
    Locks {
        #[command(flatten)]
        input: InputArgs,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLE_LEN)]
        max_cycle_len: usize,
        /// Span feeding the time columns.
        #[arg(long, value_enum, default_value_t = TimeBasisArg::Wait)]
        time_basis: TimeBasisArg,
    },
    /// Algorithms over a `src dst [weight]` edge list.
    #[command(group = clap::ArgGroup::new("op").multiple(true).required(true))]
    Graph {
        /// Edge-list file; standard input when omitted.
        #[arg(long, short = 'i', value_name = "PATH")]
        input: Option<PathBuf>,
        #[arg(long)]
        undirected: bool,
        #[arg(long, group = "op")]
        topo: bool,
        /// Heaviest path from SOURCE.
        #[arg(long, group = "op", value_name = "SOURCE")]
        critical_path: Option<String>,
        #[arg(long, group = "op", num_args = 2, value_names = ["FROM", "TO"])]
        shortest: Option<Vec<String>>,
        #[arg(long, group = "op")]
        mst: bool,
        #[arg(long, group = "op")]
        cycles: bool,
        #[arg(long, default_value_t = DEFAULT_MAX_CYCLE_LEN)]
        max_cycle_len: usize,
    },
    /// Producer-consumer simulation writing a perf-script trace.
    Simulate(SimulateArgs),
    /// Dashboard ingestion files.
    Export {
        /// Input file, repeatable. Without it (or with `-`) standard input is read.
        #[arg(long = "input", short = 'i', value_name = "PATH")]
        inputs: Vec<PathBuf>,
        /// Input grammar; only perf-script traces can be exported.
        #[arg(long, value_enum)]
        input_format: Option<FormatArg>,
        #[arg(long)]
        strict: bool,
        /// Output format.
        #[arg(long, value_enum, default_value_t = ExportFormat::Csv)]
        format: ExportFormat,
        /// Bulk index name.
        #[arg(long, default_value = latprof::export::DEFAULT_INDEX, value_parser = parse_index)]
        index: String,
        /// Histogram bin width in seconds.
        #[arg(long, default_value = "1", value_parser = parse_positive_seconds)]
        bin_width: u64,
        #[arg(long, value_enum, default_value_t = PieModeArg::Comm)]
        pie_mode: PieModeArg,
        #[arg(long, default_value = "comm,dso,symbol", value_parser = parse_group_by)]
        group_by: GroupBy,
        #[arg(long, default_value = "cpu-clock")]
        event: String,
    },
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long, default_value_t = 2)]
    pub producers: u32,
    #[arg(long, default_value_t = 2)]
    pub consumers: u32,
    #[arg(long, default_value_t = 1)]
    pub queues: u32,
    #[arg(long, default_value_t = 4)]
    pub capacity: u32,
    /// Items each producer makes.
    #[arg(long, default_value_t = 10)]
    pub items: u32,
    /// Seconds per produced item.
    #[arg(long, default_value = "0.001", value_parser = parse_positive_seconds)]
    pub produce_time: u64,
    /// Seconds per consumed item.
    #[arg(long, default_value = "0.001", value_parser = parse_positive_seconds)]
    pub consume_time: u64,
    /// Seconds inside the queue lock.
    #[arg(long, default_value = "0.0001", value_parser = parse_positive_seconds)]
    pub critical_section: u64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Relative duration spread in [0, 1].
    #[arg(long, default_value_t = 0.0)]
    pub jitter: f64,
    /// Take the queue lock before the counting semaphore (deadlock prone).
    #[arg(long)]
    pub inverted_wait_order: bool,
    /// Simulated seconds before the run is cut off.
    #[arg(long, default_value = "3600", value_parser = parse_positive_seconds)]
    pub time_limit: u64,
    /// Ground-truth JSON destination.
    #[arg(long, value_name = "PATH")]
    pub truth_out: Option<PathBuf>,
    /// Lock acquisition CSV destination.
    #[arg(long, value_name = "PATH")]
    pub acquisitions_out: Option<PathBuf>,
    /// Re-parse the trace and compare the analyzer with the ground truth.
    #[arg(long)]
    pub check: bool,
}

fn parse_group_by(s: &str) -> Result<GroupBy, String> {
    let g: GroupBy = s.parse()?;
    if !(g.comm || g.dso || g.symbol) {
        return Err("at least one of comm, dso, symbol".into());
    }
    Ok(g)
}

fn parse_index(s: &str) -> Result<String, String> {
    if valid_index_name(s) {
        Ok(s.to_string())
    } else {
        Err("index names use [a-z0-9_-] only".into())
    }
}

fn parse_positive_seconds(s: &str) -> Result<u64, String> {
    match Timestamp::parse(s) {
        Some(t) if t.as_nanos() > 0 => Ok(t.as_nanos()),
        Some(_) => Err("must be positive".into()),
        None => Err("expected seconds such as 0.25".into()),
    }
}

/// What a subcommand produced: data for the output sink and an exit status.
pub struct Outcome {
    pub data: String,
    pub status: i32,
}

impl Outcome {
    fn ok(data: String) -> Self {
        Outcome { data, status: 0 }
    }
}

/// Runs the tool with process stdio. `argv[0]` is the program name.
pub fn run(argv: Vec<String>) -> i32 {
    let stdin = io::stdin();
    let stdout = io::stdout();
    let stderr = io::stderr();
    run_with(argv, &mut stdin.lock(), &mut stdout.lock(), &mut stderr.lock())
}

/// Same as [`run`] with explicit streams.
pub fn run_with<I, T>(argv: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => {
                    let _ = stdout.write_all(text.as_bytes());
                    0
                }
                _ => {
                    let _ = stderr.write_all(text.as_bytes());
                    2
                }
            };
        }
    };
    let result = commands::execute(&cli.command, stdin, stderr).and_then(|outcome| {
        match &cli.out {
            Some(path) => {
                fs::write(path, &outcome.data).map_err(|e| anyhow::anyhow!("cannot write {}: {e}", path.display()))?
            }
            None => stdout.write_all(outcome.data.as_bytes())?,
        }
        Ok(outcome.status)
    });
    match result {
        Ok(status) => status,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e:#}");
            1
        }
    }
}
