//! mutrace contended-mutex table.
//!
//! ```text
//!  Mutex #   Locked  Changed    Cont. tot.Time[ms] avg.Time[ms] max.Time[ms]  Flags
//!        0        8        4        4    45381.448     5672.681     6303.132 M-.?-.
//! ```
//!
//! Rows follow the `Mutex #` header; the table ends at the first blank line or
//! at the flag legend. Rows that break the column invariants are rejected.

use num_traits::Signed;

use super::{Errors, ParseError, ParseMode, Parsed};
use crate::num::{parse_decimal, Rational};

/// Per-mutex contention statistics, in the units mutrace prints.
///
/// `changed` counts owner changes: grants whose thread differs from the
/// previous grant's thread on the same lock.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MutexStats {
    pub mutex_id: u64,
    pub locked: u64,
    pub changed: u64,
    pub contended: u64,
    pub total_ms: Rational,
    pub avg_ms: Rational,
    pub max_ms: Rational,
    pub flags: String,
}

impl MutexStats {
    /// Column invariants; `avg` may differ from `total / locked` by display
    /// rounding only.
    pub fn check(&self) -> Result<(), String> {
        let zero = Rational::from_integer(0);
        if self.changed > self.locked || self.contended > self.locked {
            return Err("changed/contended exceed locked".into());
        }
        if self.total_ms < zero || self.avg_ms < zero || self.max_ms < zero {
            return Err("negative time".into());
        }
        if self.locked > 0 {
            if self.max_ms < self.avg_ms {
                return Err("max below average".into());
            }
            let locked = Rational::from_integer(i128::from(self.locked));
            let diff = self.avg_ms - self.total_ms / locked;
            let bound = Rational::new(5, 10_000) * locked;
            if diff.abs() > bound {
                return Err("average inconsistent with total / locked".into());
            }
        }
        Ok(())
    }
}

pub const HEADER: &str = " Mutex #   Locked  Changed    Cont. tot.Time[ms] avg.Time[ms] max.Time[ms]  Flags";

pub fn parse_mutrace(text: &str, mode: ParseMode) -> Result<Parsed<MutexStats>, ParseError> {
    let mut lines = text.lines().enumerate();
    if !lines.by_ref().any(|(_, line)| line.trim_start().starts_with("Mutex #")) {
        return Err(ParseError::MissingHeader);
    }
    let mut errors = Errors::new(mode);
    let mut rows = Vec::new();
    for (idx, line) in lines {
        let Some(first) = line.split_whitespace().next() else { break };
        if !first.bytes().all(|b| b.is_ascii_digit()) {
            break;
        }
        match parse_row(line) {
            Ok(row) => rows.push(row),
            Err(reason) => errors.push(ParseError::MalformedRow { line: idx + 1, reason })?,
        }
    }
    Ok(errors.finish(rows))
}

fn parse_row(line: &str) -> Result<MutexStats, String> {
    let tokens: Vec<&str> = line.split_whitespace().collect();
    if !(7..=8).contains(&tokens.len()) {
        return Err(format!("expected 8 columns, found {}", tokens.len()));
    }
    let int = |i: usize| tokens[i].parse::<u64>().map_err(|_| format!("bad integer `{}`", tokens[i]));
    let dec = |i: usize| parse_decimal(tokens[i]).ok_or_else(|| format!("bad decimal `{}`", tokens[i]));
    let row = MutexStats {
        mutex_id: int(0)?,
        locked: int(1)?,
        changed: int(2)?,
        contended: int(3)?,
        total_ms: dec(4)?,
        avg_ms: dec(5)?,
        max_ms: dec(6)?,
        flags: tokens.get(7).map_or_else(String::new, |f| f.to_string()),
    };
    row.check()?;
    Ok(row)
}
