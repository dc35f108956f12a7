//! Parsers for the textual profiler formats.
//!
//! Every parser is a pure function over the input text. In
//! [`ParseMode::Lenient`] malformed lines are collected and parsing goes on;
//! in [`ParseMode::Strict`] the first one aborts the parse.

mod gprof;
mod mutrace;
mod oprofile;
mod perf_script;
mod strace;

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

pub use gprof::{parse_gprof_flat, GprofRow};
pub use mutrace::{parse_mutrace, MutexStats, HEADER as MUTRACE_HEADER};
pub use oprofile::{parse_oprofile_flat, ImageProfileRow};
pub use perf_script::{parse_perf_script, parse_perf_script_header};
pub use strace::{parse_strace, SyscallRecord};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("line {line}: malformed line: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("line {line}: malformed row: {reason}")]
    MalformedRow { line: usize, reason: String },
    #[error("missing column header")]
    MissingHeader,
}

impl ParseError {
    pub fn line(&self) -> Option<usize> {
        match self {
            ParseError::MalformedLine { line, .. } | ParseError::MalformedRow { line, .. } => Some(*line),
            ParseError::MissingHeader => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ParseMode {
    #[default]
    Lenient,
    Strict,
}

/// Parsed items plus the errors skipped over in lenient mode.
#[derive(Debug, Clone, PartialEq)]
pub struct Parsed<T> {
    pub items: Vec<T>,
    pub errors: Vec<ParseError>,
}

impl<T> Parsed<T> {
    pub fn is_clean(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Error sink honoring the parse mode.
struct Errors {
    mode: ParseMode,
    collected: Vec<ParseError>,
}

impl Errors {
    fn new(mode: ParseMode) -> Self {
        Errors { mode, collected: Vec::new() }
    }

    fn push(&mut self, err: ParseError) -> Result<(), ParseError> {
        match self.mode {
            ParseMode::Strict => Err(err),
            ParseMode::Lenient => {
                self.collected.push(err);
                Ok(())
            }
        }
    }

    fn finish<T>(self, items: Vec<T>) -> Parsed<T> {
        Parsed { items, errors: self.collected }
    }
}

/// Input grammars understood by the toolkit.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Perf,
    Gprof,
    Oprofile,
    Mutrace,
    Strace,
    /// `tid,lock_id,request_ts,grant_ts,release_ts` lock acquisition CSV.
    Acquisitions,
}

impl InputFormat {
    pub fn as_str(self) -> &'static str {
        match self {
            InputFormat::Perf => "perf",
            InputFormat::Gprof => "gprof",
            InputFormat::Oprofile => "oprofile",
            InputFormat::Mutrace => "mutrace",
            InputFormat::Strace => "strace",
            InputFormat::Acquisitions => "acquisitions",
        }
    }

    /// Guesses the grammar from the first non-blank line.
    pub fn sniff(text: &str) -> Option<InputFormat> {
        let line = text.lines().map(str::trim).find(|l| !l.is_empty())?;
        if line.starts_with("mutrace:") || line.starts_with("Mutex #") {
            return Some(InputFormat::Mutrace);
        }
        if line.starts_with("Flat profile")
            || line.starts_with("Each sample counts")
            || line.starts_with('%')
            || gprof::is_header(line)
        {
            return Some(InputFormat::Gprof);
        }
        if line.starts_with("tid,lock_id") {
            return Some(InputFormat::Acquisitions);
        }
        if strace::looks_like_strace(line) {
            return Some(InputFormat::Strace);
        }
        if parse_perf_script_header(line).is_some() {
            return Some(InputFormat::Perf);
        }
        if line.starts_with("Function") || oprofile::parse_row(line).is_ok() {
            return Some(InputFormat::Oprofile);
        }
        None
    }
}

impl fmt::Display for InputFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for InputFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "perf" => Ok(InputFormat::Perf),
            "gprof" => Ok(InputFormat::Gprof),
            "oprofile" | "xenoprof" => Ok(InputFormat::Oprofile),
            "mutrace" => Ok(InputFormat::Mutrace),
            "strace" => Ok(InputFormat::Strace),
            "acquisitions" => Ok(InputFormat::Acquisitions),
            other => Err(format!("unknown input format `{other}`")),
        }
    }
}
