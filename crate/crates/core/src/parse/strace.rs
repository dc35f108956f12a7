//! `strace -rT` output.
//!
//! ```text
//! [pid] <rel_ts> name(args) = ret [<duration>]
//! [pid] <rel_ts> name(args <unfinished ...>
//! [pid] <rel_ts> <... name resumed> rest) = ret [<duration>]
//! ```
//!
//! `pid` is either a bare number (`strace -f` to a file) or `[pid N]`.
//! Signal (`---`) and exit (`+++`) lines are skipped. An unfinished call is
//! merged with its resumption into one record placed at the unfinished
//! line's position.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;

use super::{Errors, ParseError, ParseMode, Parsed};
use crate::num::{parse_decimal, Rational};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SyscallRecord {
    pub pid: Option<u32>,
    /// Seconds since the previous syscall line (`-r`).
    pub rel_ts: Rational,
    pub name: String,
    pub args_text: String,
    pub retval: String,
    /// Time spent in the call (`-T`), absent when not recorded.
    pub wall_duration_s: Option<Rational>,
}

static COMPLETE: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*)\((.*)\)\s+=\s+(.*?)(?:\s+<(\d+\.\d+)>)?\s*$").expect("regex")
});
static UNFINISHED: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^([A-Za-z_][A-Za-z0-9_]*)\((.*?)<unfinished \.\.\.>\s*$").expect("regex"));
static RESUMED: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^<\.\.\.\s+([A-Za-z_][A-Za-z0-9_]*)\s+resumed>(.*)\)\s+=\s+(.*?)(?:\s+<(\d+\.\d+)>)?\s*$")
        .expect("regex")
});
static PREFIX: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^(?:\[pid\s+(\d+)\]\s+|(\d+)\s+)?(\d+\.\d+)\s+(.*)$").expect("regex"));

pub(super) fn looks_like_strace(line: &str) -> bool {
    let Some(caps) = PREFIX.captures(line.trim()) else { return false };
    let body = &caps[4];
    body.starts_with("---")
        || body.starts_with("+++")
        || COMPLETE.is_match(body)
        || UNFINISHED.is_match(body)
        || RESUMED.is_match(body)
}

pub fn parse_strace(text: &str, mode: ParseMode) -> Result<Parsed<SyscallRecord>, ParseError> {
    let mut errors = Errors::new(mode);
    let mut records: Vec<SyscallRecord> = Vec::new();
    let mut pending: HashMap<(Option<u32>, String), usize> = HashMap::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let malformed = |reason: &str| ParseError::MalformedRow { line: idx + 1, reason: reason.to_string() };
        let Some(caps) = PREFIX.captures(line) else {
            errors.push(malformed("expected `<rel_ts> <syscall>`"))?;
            continue;
        };
        let pid = match caps.get(1).or(caps.get(2)) {
            Some(m) => match m.as_str().parse::<u32>() {
                Ok(pid) => Some(pid),
                Err(_) => {
                    errors.push(malformed("pid out of range"))?;
                    continue;
                }
            },
            None => None,
        };
        let Some(rel_ts) = parse_decimal(&caps[3]) else {
            errors.push(malformed("bad relative timestamp"))?;
            continue;
        };
        let body = &caps[4];
        if body.starts_with("---") || body.starts_with("+++") {
            continue;
        }
        if let Some(c) = RESUMED.captures(body) {
            let name = c[1].to_string();
            match pending.remove(&(pid, name)) {
                Some(at) => {
                    let rec = &mut records[at];
                    rec.args_text.push_str(&c[2]);
                    rec.args_text = rec.args_text.trim().to_string();
                    rec.retval = c[3].to_string();
                    rec.wall_duration_s = c.get(4).and_then(|m| parse_decimal(m.as_str()));
                }
                None => errors.push(malformed("resumed call without a matching unfinished line"))?,
            }
            continue;
        }
        if let Some(c) = UNFINISHED.captures(body) {
            let name = c[1].to_string();
            pending.insert((pid, name.clone()), records.len());
            records.push(SyscallRecord {
                pid,
                rel_ts,
                name,
                args_text: c[2].to_string(),
                retval: String::new(),
                wall_duration_s: None,
            });
            continue;
        }
        if let Some(c) = COMPLETE.captures(body) {
            records.push(SyscallRecord {
                pid,
                rel_ts,
                name: c[1].to_string(),
                args_text: c[2].to_string(),
                retval: c[3].to_string(),
                wall_duration_s: c.get(4).and_then(|m| parse_decimal(m.as_str())),
            });
            continue;
        }
        errors.push(malformed("unrecognized syscall line"))?;
    }
    // Calls still unfinished at end of input keep their partial arguments.
    for at in pending.into_values() {
        let rec = &mut records[at];
        rec.args_text = rec.args_text.trim().to_string();
    }
    Ok(errors.finish(records))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn d(s: &str) -> Rational {
        parse_decimal(s).unwrap()
    }

    #[test]
    fn complete_call_with_duration() {
        let text = "0.000045 read(3, \"\"..., 512) = 512 <0.000011>\n";
        let rec = &parse_strace(text, ParseMode::Strict).unwrap().items[0];
        assert_eq!(rec.rel_ts, d("0.000045"));
        assert_eq!(rec.name, "read");
        assert_eq!(rec.args_text, "3, \"\"..., 512");
        assert_eq!(rec.retval, "512");
        assert_eq!(rec.wall_duration_s, Some(d("0.000011")));
        assert_eq!(rec.pid, None);
    }

    #[test]
    fn first_line_and_missing_duration() {
        let text = "     0.000000 execve(\"/bin/ls\", [\"ls\"], 0x7ffd /* 20 vars */) = 0 <0.000200>\n     0.000310 brk(NULL) = 0x55d\n";
        let recs = parse_strace(text, ParseMode::Strict).unwrap().items;
        assert_eq!(recs[0].rel_ts, d("0"));
        assert_eq!(recs[0].name, "execve");
        assert_eq!(recs[1].wall_duration_s, None);
        assert_eq!(recs[1].retval, "0x55d");
    }

    #[test]
    fn errno_and_question_mark_returns() {
        let text = "0.000010 openat(AT_FDCWD, \"/x\", O_RDONLY) = -1 ENOENT (No such file or directory) <0.000004>\n0.000020 exit_group(0) = ?\n0.000001 +++ exited with 0 +++\n";
        let recs = parse_strace(text, ParseMode::Strict).unwrap().items;
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].retval, "-1 ENOENT (No such file or directory)");
        assert_eq!(recs[1].retval, "?");
    }

    #[test]
    fn unfinished_and_resumed_merge() {
        let text = "\
[pid  101]      0.000100 futex(0x7f00, FUTEX_WAIT, 2, NULL <unfinished ...>
[pid  102]      0.000020 write(1, \"x\", 1) = 1 <0.000005>
[pid  101]      0.000300 <... futex resumed> ) = 0 <0.000420>
";
        let recs = parse_strace(text, ParseMode::Strict).unwrap().items;
        assert_eq!(recs.len(), 2);
        assert_eq!(recs[0].pid, Some(101));
        assert_eq!(recs[0].name, "futex");
        assert_eq!(recs[0].args_text, "0x7f00, FUTEX_WAIT, 2, NULL");
        assert_eq!(recs[0].retval, "0");
        assert_eq!(recs[0].rel_ts, d("0.000100"));
        assert_eq!(recs[0].wall_duration_s, Some(d("0.000420")));
        assert_eq!(recs[1].pid, Some(102));
    }

    #[test]
    fn bare_pid_prefix_and_split_arguments() {
        let text = "7 0.1 read(3, <unfinished ...>\n7 0.2 <... read resumed>\"abc\", 512) = 3 <0.1>\n";
        let recs = parse_strace(text, ParseMode::Strict).unwrap().items;
        assert_eq!(recs[0].args_text, "3, \"abc\", 512");
    }

    #[test]
    fn malformed_lines() {
        let parsed = parse_strace("garbage\n0.1 read(3\n0.2 <... x resumed>) = 0\n", ParseMode::Lenient).unwrap();
        assert!(parsed.items.is_empty());
        assert_eq!(parsed.errors.len(), 3);
    }
}
