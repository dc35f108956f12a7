//! `perf script` text.
//!
//! Accepted grammar, one sample block per event:
//!
//! ```text
//! comm  pid/tid [cpu] sec.frac: [period] class:name: payload
//! comm  tid [cpu] sec.frac: [period] class:name: payload      (pid = tid)
//!         addr symbol+0xoff (dso)                              (zero or more frames, leaf first)
//! <blank line or next header ends the block>
//! ```
//!
//! The payload becomes the argument map when every token is `key=value`
//! (the `==>` separator of `sched_switch` is skipped); otherwise it is kept
//! verbatim under `raw`.

use std::sync::LazyLock;

use indexmap::IndexMap;
use regex::Regex;

use super::{Errors, ParseError, ParseMode, Parsed};
use crate::model::{Frame, Timestamp, TraceEvent, UNKNOWN_SYMBOL};

static HEADER: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"^(\S+)\s+(?:(\d+)/)?(\d+)\s+\[(\d+)\]\s+(\d+\.\d+):\s+(?:(\d+)\s+)?(\S+?):(?:\s+(.*?))?\s*$")
        .expect("header regex")
});

static FRAME: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^\s+([0-9a-fA-F]+)\s+(.*?)(?:\s+\(([^()]*)\))?\s*$").expect("frame regex"));

pub fn parse_perf_script(text: &str, mode: ParseMode) -> Result<Parsed<TraceEvent>, ParseError> {
    let mut errors = Errors::new(mode);
    let mut events = Vec::new();
    // The open block accepts frames until a blank line or the next header.
    let mut open: Option<TraceEvent> = None;

    for (idx, line) in text.lines().enumerate() {
        let lineno = idx + 1;
        if line.trim().is_empty() {
            events.extend(open.take());
            continue;
        }
        match parse_perf_script_header(line.trim_start()) {
            Some(Ok(event)) => {
                events.extend(open.replace(event));
                continue;
            }
            Some(Err(reason)) => {
                events.extend(open.take());
                errors.push(ParseError::MalformedLine { line: lineno, reason })?;
                continue;
            }
            None => {}
        }
        let starts_indented = line.starts_with([' ', '\t']);
        match (starts_indented, open.as_mut(), parse_frame(line)) {
            (true, Some(event), Some(frame)) => event.stack.push(frame),
            (true, None, Some(_)) => {
                errors.push(ParseError::MalformedLine {
                    line: lineno,
                    reason: "stack frame outside a sample block".into(),
                })?;
            }
            _ => {
                events.extend(open.take());
                errors.push(ParseError::MalformedLine {
                    line: lineno,
                    reason: "line matches neither the sample header nor the frame grammar".into(),
                })?;
            }
        }
    }
    events.extend(open);
    Ok(errors.finish(events))
}

/// Parses one header line. `None` means the line is not a header at all;
/// `Some(Err(_))` means it has the header shape but carries a bad value.
pub fn parse_perf_script_header(line: &str) -> Option<Result<TraceEvent, String>> {
    let caps = HEADER.captures(line)?;
    Some(build_event(&caps))
}

fn build_event(caps: &regex::Captures<'_>) -> Result<TraceEvent, String> {
    let comm = &caps[1];
    let tid: u32 = caps[3].parse().map_err(|_| format!("tid `{}` out of range", &caps[3]))?;
    let pid: u32 = match caps.get(2) {
        Some(m) => m.as_str().parse().map_err(|_| format!("pid `{}` out of range", m.as_str()))?,
        None => tid,
    };
    let cpu: u32 = caps[4].parse().map_err(|_| format!("cpu `{}` out of range", &caps[4]))?;
    let ts = Timestamp::parse(&caps[5]).ok_or_else(|| format!("bad timestamp `{}`", &caps[5]))?;
    let period = match caps.get(6) {
        Some(m) => m.as_str().parse().map_err(|_| format!("bad period `{}`", m.as_str()))?,
        None => 1,
    };
    let mut event = TraceEvent::new(comm, pid, tid, cpu, ts, &caps[7]).with_period(period);
    event.args = parse_args(caps.get(8).map_or("", |m| m.as_str()));
    Ok(event)
}

fn parse_args(payload: &str) -> IndexMap<String, String> {
    let mut args = IndexMap::new();
    if payload.is_empty() {
        return args;
    }
    for token in payload.split_whitespace() {
        if token == "==>" {
            continue;
        }
        match token.split_once('=') {
            Some((key, value)) if !key.is_empty() && !args.contains_key(key) => {
                args.insert(key.to_string(), value.to_string());
            }
            _ => {
                args.clear();
                args.insert("raw".to_string(), payload.to_string());
                return args;
            }
        }
    }
    args
}

fn parse_frame(line: &str) -> Option<Frame> {
    let caps = FRAME.captures(line)?;
    let address = u64::from_str_radix(&caps[1], 16).ok()?;
    let body = caps[2].trim();
    let (symbol, offset) = match body.rfind("+0x") {
        Some(pos) => match u64::from_str_radix(&body[pos + 3..], 16) {
            Ok(off) => (&body[..pos], Some(off)),
            Err(_) => (body, None),
        },
        None => (body, None),
    };
    let symbol = (!symbol.is_empty() && symbol != UNKNOWN_SYMBOL).then(|| symbol.to_string());
    Some(Frame { address, symbol, offset, dso: caps.get(3).map(|m| m.as_str().to_string()) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::EventClass;

    const SWITCH: &str = "gzip  1234/1234 [002] 12345.678901: sched:sched_switch: prev_comm=gzip prev_pid=1234 prev_prio=120 prev_state=S ==> next_comm=swapper next_pid=0 next_prio=120";

    #[test]
    fn parses_sched_switch_header() {
        let parsed = parse_perf_script(SWITCH, ParseMode::Strict).unwrap();
        assert_eq!(parsed.items.len(), 1);
        let ev = &parsed.items[0];
        assert_eq!(ev.comm, "gzip");
        assert_eq!((ev.pid, ev.tid, ev.cpu), (1234, 1234, 2));
        assert_eq!(ev.ts, Timestamp::from_nanos(12_345_678_901_000));
        assert_eq!(ev.class, EventClass::Sched);
        assert_eq!(ev.name(), "sched_switch");
        assert_eq!(ev.arg("prev_state"), Some("S"));
        assert_eq!(ev.arg("next_pid"), Some("0"));
        assert_eq!(ev.args.len(), 7);
        assert_eq!(ev.period, 1);
        assert!(ev.stack.is_empty());
    }

    #[test]
    fn empty_input_yields_nothing() {
        let parsed = parse_perf_script("", ParseMode::Strict).unwrap();
        assert!(parsed.items.is_empty() && parsed.errors.is_empty());
    }

    #[test]
    fn attaches_frames_leaf_first() {
        let text = format!("{SWITCH}\n            ffffffff8105e123 schedule+0x25 ([kernel.kallsyms])\n\n");
        let parsed = parse_perf_script(&text, ParseMode::Strict).unwrap();
        assert_eq!(
            parsed.items[0].stack,
            vec![Frame {
                address: 0xffffffff8105e123,
                symbol: Some("schedule".into()),
                offset: Some(0x25),
                dso: Some("[kernel.kallsyms]".into()),
            }]
        );
    }

    #[test]
    fn tid_only_form_and_period() {
        let text = "swapper     0 [000]     1.500000:     250000 cpu-clock:  ffffffff81 native_safe_halt+0x6 ([kernel.kallsyms])\n";
        let ev = &parse_perf_script(text, ParseMode::Strict).unwrap().items[0];
        assert_eq!((ev.pid, ev.tid), (0, 0));
        assert_eq!(ev.period, 250_000);
        assert_eq!(ev.event, "cpu-clock");
        assert_eq!(ev.class, EventClass::CpuClock);
        assert!(ev.args.contains_key("raw"));
    }

    #[test]
    fn multi_frame_block_and_unknown_symbols() {
        let text = "\
app 10/11 [001] 2.000000: cpu-clock:
\t7f00000010 std::foo(int, int)+0x1f (/usr/lib/libfoo.so)
\t7f00000020 [unknown] ([unknown])
\t400123 main (/usr/bin/app)
app 10/11 [001] 2.000001: cpu-clock:
\t400123 main+0x3 (/usr/bin/app)
";
        let parsed = parse_perf_script(text, ParseMode::Strict).unwrap();
        assert_eq!(parsed.items.len(), 2);
        let stack = &parsed.items[0].stack;
        assert_eq!(stack.len(), 3);
        assert_eq!(stack[0].symbol.as_deref(), Some("std::foo(int, int)"));
        assert_eq!(stack[0].offset, Some(0x1f));
        assert_eq!(stack[1].symbol, None);
        assert_eq!(stack[1].dso.as_deref(), Some("[unknown]"));
        assert_eq!(stack[2].offset, None);
        assert_eq!(parsed.items[1].stack.len(), 1);
    }

    #[test]
    fn non_kv_payload_is_raw() {
        let text = "cat 5/5 [0] 1.0: syscalls:sys_enter_read: fd: 0x00000003, count: 0x00000200\n";
        let ev = &parse_perf_script(text, ParseMode::Strict).unwrap().items[0];
        assert_eq!(ev.arg("raw"), Some("fd: 0x00000003, count: 0x00000200"));
        assert_eq!(ev.args.len(), 1);
    }

    #[test]
    fn malformed_lines_are_reported() {
        let text = "\
web content 1/1 [000] 1.0: cpu-clock:
ok 1/1 [000] 1.0000000001: cpu-clock:
    deadbeef sym (dso)
ok 2/2 [000] 2.0: cpu-clock:
";
        let parsed = parse_perf_script(text, ParseMode::Lenient).unwrap();
        let lines: Vec<_> = parsed.errors.iter().map(|e| e.line().unwrap()).collect();
        assert_eq!(lines, vec![1, 2, 3]);
        assert_eq!(parsed.items.len(), 1);
        assert_eq!(parsed.items[0].tid, 2);
    }

    #[test]
    fn blank_line_ends_stack() {
        let text = "a 1/1 [000] 1.0: cpu-clock:\n\n    400000 main (app)\n";
        let parsed = parse_perf_script(text, ParseMode::Lenient).unwrap();
        assert_eq!(parsed.items.len(), 1);
        assert!(parsed.items[0].stack.is_empty());
        assert_eq!(parsed.errors.len(), 1);
    }
}
