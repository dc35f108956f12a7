//! Dashboard-ingestion renderers: CSV, bulk NDJSON, histogram and pie views,
//! a fixed-width text report, a combined JSON document, and perf-script text.

use std::collections::BTreeMap;
use std::io;

use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::model::{EventClass, Timestamp, TraceEvent, WaitReason, UNKNOWN_SYMBOL};
use crate::num::{format_fixed, ns_to_ms, Rational};
use crate::parse::{MutexStats, SyscallRecord, MUTRACE_HEADER};
use crate::profile::{FlatProfile, FlatProfileRow};
use crate::sched::WaitSummary;

pub const DEFAULT_INDEX: &str = "linuxperf";
pub const CSV_HEADER: [&str; 8] = ["timestamp", "comm", "pid", "tid", "cpu", "event", "dso", "symbol"];
const NO_DATA: &str = "(no data)";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ExportError {
    #[error("index name `{0}` must match [a-z0-9_-]+")]
    BadIndexName(String),
    #[error("no events to export")]
    EmptyInput,
    #[error("bin width must be positive")]
    BadBinWidth,
    #[error("csv: {0}")]
    Csv(String),
    #[error("line {line}: {reason}")]
    Json { line: usize, reason: String },
}

/// Flat projection of a [`TraceEvent`] with the time relative to the first
/// event, truncated to milliseconds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventRecord {
    pub timestamp_rel: String,
    pub comm: String,
    pub pid: u32,
    pub tid: u32,
    pub cpu: u32,
    pub event: String,
    pub dso: String,
    pub symbol: String,
}

impl EventRecord {
    pub fn project(ev: &TraceEvent, origin: Timestamp) -> Self {
        let leaf = ev.leaf();
        EventRecord {
            timestamp_rel: ev.ts.saturating_sub(origin).format_millis(),
            comm: ev.comm.clone(),
            pid: ev.pid,
            tid: ev.tid,
            cpu: ev.cpu,
            event: ev.event.clone(),
            dso: leaf.and_then(|f| f.dso.clone()).unwrap_or_default(),
            symbol: leaf.map(|f| f.symbol_or_unknown().to_string()).unwrap_or_default(),
        }
    }
}

pub fn origin_of(events: &[TraceEvent]) -> Timestamp {
    events.iter().map(|e| e.ts).min().unwrap_or(Timestamp::ZERO)
}

pub fn event_records(events: &[TraceEvent]) -> Vec<EventRecord> {
    let origin = origin_of(events);
    events.iter().map(|e| EventRecord::project(e, origin)).collect()
}

fn csv_writer() -> csv::Writer<Vec<u8>> {
    csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new())
}

fn finish_csv(writer: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("utf-8 input stays utf-8")
}

/// RFC 4180 CSV with LF line endings.
pub fn to_csv(events: &[TraceEvent]) -> String {
    let mut w = csv_writer();
    w.write_record(CSV_HEADER).expect("in-memory write");
    for r in event_records(events) {
        w.write_record([
            r.timestamp_rel,
            r.comm,
            r.pid.to_string(),
            r.tid.to_string(),
            r.cpu.to_string(),
            r.event,
            r.dso,
            r.symbol,
        ])
        .expect("in-memory write");
    }
    finish_csv(w)
}

pub fn parse_csv(text: &str) -> Result<Vec<EventRecord>, ExportError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| ExportError::Csv(e.to_string()))?;
    if !headers.iter().eq(CSV_HEADER.iter().copied()) {
        return Err(ExportError::Csv("unexpected header".into()));
    }
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| ExportError::Csv(e.to_string()))?;
        let num = |i: usize| rec[i].parse::<u32>().map_err(|_| ExportError::Csv(format!("bad number `{}`", &rec[i])));
        out.push(EventRecord {
            timestamp_rel: rec[0].to_string(),
            comm: rec[1].to_string(),
            pid: num(2)?,
            tid: num(3)?,
            cpu: num(4)?,
            event: rec[5].to_string(),
            dso: rec[6].to_string(),
            symbol: rec[7].to_string(),
        });
    }
    Ok(out)
}

/// serde_json formatter that escapes every non-ASCII character, so output
/// bytes do not depend on the terminal or locale reading them.
struct AsciiFormatter;

impl serde_json::ser::Formatter for AsciiFormatter {
    fn write_string_fragment<W: ?Sized + io::Write>(&mut self, writer: &mut W, fragment: &str) -> io::Result<()> {
        for ch in fragment.chars() {
            if ch.is_ascii() {
                writer.write_all(&[ch as u8])?;
            } else {
                let mut units = [0u16; 2];
                for unit in ch.encode_utf16(&mut units) {
                    write!(writer, "\\u{unit:04x}")?;
                }
            }
        }
        Ok(())
    }
}

pub fn to_ascii_json<T: Serialize + ?Sized>(value: &T) -> String {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, AsciiFormatter);
    value.serialize(&mut ser).expect("serializable value");
    String::from_utf8(out).expect("ascii output")
}

pub fn valid_index_name(name: &str) -> bool {
    !name.is_empty() && name.bytes().all(|b| b.is_ascii_lowercase() || b.is_ascii_digit() || b == b'_' || b == b'-')
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BulkDocument {
    #[serde(flatten)]
    pub record: EventRecord,
    pub ts_ns: u64,
}

/// Alternating action and document lines for a bulk indexing request.
pub fn to_bulk_ndjson(events: &[TraceEvent], index: &str) -> Result<String, ExportError> {
    if !valid_index_name(index) {
        return Err(ExportError::BadIndexName(index.to_string()));
    }
    let action = to_ascii_json(&json!({"index": {"_index": index}}));
    let origin = origin_of(events);
    let mut out = String::new();
    for ev in events {
        let doc = BulkDocument { record: EventRecord::project(ev, origin), ts_ns: ev.ts.as_nanos() };
        out.push_str(&action);
        out.push('\n');
        out.push_str(&to_ascii_json(&doc));
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_bulk_ndjson(text: &str) -> Result<Vec<BulkDocument>, ExportError> {
    let lines: Vec<&str> = text.lines().collect();
    if !lines.len().is_multiple_of(2) {
        return Err(ExportError::Json { line: lines.len(), reason: "action line without a document".into() });
    }
    let mut docs = Vec::new();
    for (i, pair) in lines.chunks(2).enumerate() {
        let action: serde_json::Value =
            serde_json::from_str(pair[0]).map_err(|e| ExportError::Json { line: 2 * i + 1, reason: e.to_string() })?;
        if action.pointer("/index/_index").and_then(|v| v.as_str()).is_none() {
            return Err(ExportError::Json { line: 2 * i + 1, reason: "not an index action".into() });
        }
        let doc =
            serde_json::from_str(pair[1]).map_err(|e| ExportError::Json { line: 2 * i + 2, reason: e.to_string() })?;
        docs.push(doc);
    }
    Ok(docs)
}

/// Event counts per time bin and command.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct HistogramView {
    pub bin_width_ns: u64,
    /// Bin index (`floor(rel_ts / width)`) to per-comm counts.
    pub bins: BTreeMap<u64, BTreeMap<String, u64>>,
}

impl HistogramView {
    pub fn total(&self) -> u64 {
        self.bins.values().flat_map(|b| b.values()).sum()
    }

    pub fn bin_start(&self, bin: u64) -> Timestamp {
        Timestamp::from_nanos(bin * self.bin_width_ns)
    }
}

pub fn events_per_second(events: &[TraceEvent], bin_width_ns: u64) -> Result<HistogramView, ExportError> {
    if bin_width_ns == 0 {
        return Err(ExportError::BadBinWidth);
    }
    let origin = origin_of(events);
    let mut view = HistogramView { bin_width_ns, bins: BTreeMap::new() };
    for ev in events {
        let bin = ev.ts.saturating_sub(origin).as_nanos() / bin_width_ns;
        *view.bins.entry(bin).or_default().entry(ev.comm.clone()).or_insert(0) += 1;
    }
    Ok(view)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PieKeyMode {
    #[default]
    Comm,
    CommDso,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PieSlice {
    pub comm: String,
    pub dso: Option<String>,
    pub weight: u64,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct PieView {
    pub slices: Vec<PieSlice>,
}

impl PieView {
    pub fn fraction(&self, comm: &str, dso: Option<&str>) -> Option<f64> {
        self.slices.iter().find(|s| s.comm == comm && s.dso.as_deref() == dso).map(|s| s.fraction)
    }
}

/// Share per key; sample events weigh their period, others count once.
pub fn utilization_pie(events: &[TraceEvent], mode: PieKeyMode) -> Result<PieView, ExportError> {
    if events.is_empty() {
        return Err(ExportError::EmptyInput);
    }
    let mut weights: BTreeMap<(String, Option<String>), u64> = BTreeMap::new();
    for ev in events {
        let dso = match mode {
            PieKeyMode::Comm => None,
            PieKeyMode::CommDso => Some(ev.leaf().and_then(|f| f.dso.clone()).unwrap_or_default()),
        };
        let w = if ev.class == EventClass::CpuClock { ev.period.max(1) } else { 1 };
        *weights.entry((ev.comm.clone(), dso)).or_insert(0) += w;
    }
    let total: u64 = weights.values().sum();
    let slices = weights
        .into_iter()
        .map(|((comm, dso), weight)| PieSlice { comm, dso, weight, fraction: weight as f64 / total as f64 })
        .collect();
    Ok(PieView { slices })
}

fn section(out: &mut String, title: &str) {
    if !out.is_empty() {
        out.push('\n');
    }
    out.push_str("# ");
    out.push_str(title);
    out.push('\n');
}

fn percent_text(p: &Rational) -> String {
    format!("{:>8}%", format_fixed(p, 2))
}

fn render_profile_rows(out: &mut String, rows: &[FlatProfileRow]) {
    out.push_str(&format!("{:>9}  {:<16} {:<24} {}\n", "Overhead", "Command", "Shared Object", "Symbol"));
    for r in rows {
        let line = format!(
            "{}  {:<16} {:<24} {}",
            percent_text(&r.percent),
            r.key.comm.as_deref().unwrap_or(""),
            r.key.dso.as_deref().unwrap_or(""),
            r.key.symbol.as_deref().unwrap_or("")
        );
        out.push_str(line.trim_end());
        out.push('\n');
    }
}

/// One mutrace-style table line.
pub fn format_mutex_row(s: &MutexStats) -> String {
    let line = format!(
        "{:>8} {:>8} {:>8} {:>8} {:>12} {:>12} {:>12} {}",
        s.mutex_id,
        s.locked,
        s.changed,
        s.contended,
        format_fixed(&s.total_ms, 3),
        format_fixed(&s.avg_ms, 3),
        format_fixed(&s.max_ms, 3),
        s.flags
    );
    line.trim_end().to_string()
}

/// Fixed-width report: flat profile, off-CPU time per reason, lock table.
pub fn render_text_report(
    profile: Option<&FlatProfile>,
    waits: Option<&WaitSummary>,
    mutexes: &[MutexStats],
    top_n: usize,
) -> String {
    let mut out = String::new();
    section(&mut out, "Flat profile");
    match profile {
        Some(p) if !p.rows.is_empty() => render_profile_rows(&mut out, &p.rows[..top_n.min(p.rows.len())]),
        _ => out.push_str(&format!("{NO_DATA}\n")),
    }

    out.push('\n');
    out.push_str(&render_wait_reasons(waits));

    section(&mut out, "Lock contention");
    if mutexes.is_empty() {
        out.push_str(&format!("{NO_DATA}\n"));
    } else {
        out.push_str(MUTRACE_HEADER);
        out.push('\n');
        for m in mutexes {
            out.push_str(&format_mutex_row(m));
            out.push('\n');
        }
    }
    out
}

/// Off-CPU totals per wait reason, every reason listed.
pub fn render_wait_reasons(waits: Option<&WaitSummary>) -> String {
    let mut out = String::new();
    section(&mut out, "Off-CPU time by reason");
    match waits {
        Some(w) if !w.is_empty() => {
            let by_reason = w.by_reason();
            out.push_str(&format!("{:<16} {:>16}\n", "Reason", "Total[ms]"));
            for reason in WaitReason::ALL {
                let ns = by_reason.get(&reason).copied().unwrap_or(0);
                out.push_str(&format!("{:<16} {:>16}\n", reason.as_str(), format_fixed(&ns_to_ms(ns), 3)));
            }
        }
        _ => out.push_str(&format!("{NO_DATA}\n")),
    }
    out
}

/// Per-thread off-CPU totals and the heaviest stacks.
pub fn render_wait_details(summary: &WaitSummary, top_stacks: usize) -> String {
    let mut out = String::new();
    if summary.is_empty() {
        for title in ["Off-CPU time by thread", "Off-CPU stacks", "Off-CPU duration histogram"] {
            section(&mut out, title);
            out.push_str(&format!("{NO_DATA}\n"));
        }
        return out;
    }
    section(&mut out, "Off-CPU time by thread");
    out.push_str(&format!("{:>8} {:<16} {:>16}\n", "TID", "Reason", "Total[ms]"));
    for (&(tid, reason), &ns) in &summary.by_thread {
        out.push_str(&format!("{:>8} {:<16} {:>16}\n", tid, reason.as_str(), format_fixed(&ns_to_ms(ns), 3)));
    }
    section(&mut out, "Off-CPU stacks");
    let mut stacks: Vec<(&String, &crate::sched::StackTotal)> = summary.by_stack.iter().collect();
    stacks.sort_by(|a, b| b.1.total_ns.cmp(&a.1.total_ns).then_with(|| a.0.cmp(b.0)));
    for (sig, t) in stacks.into_iter().take(top_stacks) {
        out.push_str(&format!("{:>16} {:>8} {}\n", format_fixed(&ns_to_ms(t.total_ns), 3), t.count, sig));
    }
    section(&mut out, "Off-CPU duration histogram");
    for (bucket, count) in &summary.histogram {
        out.push_str(&format!("{:<24} {:>8}\n", bucket.label(), count));
    }
    out
}

/// Per-syscall call counts, errors and time spent, by descending time.
pub fn render_syscall_summary(records: &[SyscallRecord]) -> String {
    let mut out = String::new();
    section(&mut out, "Syscalls");
    if records.is_empty() {
        out.push_str(&format!("{NO_DATA}\n"));
        return out;
    }
    let mut per: BTreeMap<&str, (u64, u64, Rational)> = BTreeMap::new();
    for r in records {
        let e = per.entry(&r.name).or_insert((0, 0, Rational::from_integer(0)));
        e.0 += 1;
        if r.retval.starts_with('-') {
            e.1 += 1;
        }
        if let Some(d) = r.wall_duration_s {
            e.2 += d;
        }
    }
    let mut rows: Vec<_> = per.into_iter().collect();
    rows.sort_by(|a, b| b.1 .2.cmp(&a.1 .2).then_with(|| a.0.cmp(b.0)));
    out.push_str(&format!("{:>12} {:>8} {:>8}  {}\n", "seconds", "calls", "errors", "syscall"));
    for (name, (calls, errors, secs)) in rows {
        out.push_str(&format!("{:>12} {:>8} {:>8}  {}\n", format_fixed(&secs, 6), calls, errors, name));
    }
    out
}

/// Everything the combined JSON document may carry.
#[derive(Debug, Default)]
pub struct JsonReport<'a> {
    pub profile: Option<&'a FlatProfile>,
    pub waits: Option<&'a WaitSummary>,
    pub mutexes: &'a [MutexStats],
    pub histogram: Option<&'a HistogramView>,
    pub pie: Option<&'a PieView>,
}

pub fn render_json_report(report: &JsonReport<'_>) -> String {
    let profile = report.profile.map(|p| {
        p.rows
            .iter()
            .map(|r| {
                json!({
                    "comm": r.key.comm,
                    "dso": r.key.dso,
                    "symbol": r.key.symbol,
                    "samples": r.samples,
                    "weight": r.weight,
                    "percent": format_fixed(&r.percent, 2),
                })
            })
            .collect::<Vec<_>>()
    });
    let waits = report.waits.map(|w| {
        json!({
            "by_thread": w.by_thread.iter().map(|(&(tid, reason), &ns)| json!({"tid": tid, "reason": reason.as_str(), "total_ns": ns})).collect::<Vec<_>>(),
            "by_stack": w.by_stack.iter().map(|(sig, t)| json!({"stack": sig, "total_ns": t.total_ns, "count": t.count})).collect::<Vec<_>>(),
            "histogram": w.histogram.iter().map(|(b, c)| json!({"bucket": b.label(), "count": c})).collect::<Vec<_>>(),
        })
    });
    let locks: Vec<_> = report
        .mutexes
        .iter()
        .map(|m| {
            json!({
                "mutex_id": m.mutex_id,
                "locked": m.locked,
                "changed": m.changed,
                "contended": m.contended,
                "total_ms": format_fixed(&m.total_ms, 3),
                "avg_ms": format_fixed(&m.avg_ms, 3),
                "max_ms": format_fixed(&m.max_ms, 3),
                "flags": m.flags,
            })
        })
        .collect();
    let histogram = report.histogram.map(|h| {
        json!({
            "bin_width_ns": h.bin_width_ns,
            "bins": h.bins.iter().map(|(bin, counts)| json!({"bin_start_ns": bin * h.bin_width_ns, "counts": counts})).collect::<Vec<_>>(),
        })
    });
    let pie = report.pie.map(|p| p.slices.clone());
    let mut text = to_ascii_json(&json!({
        "profile": profile,
        "waits": waits,
        "locks": locks,
        "histogram": histogram,
        "pie": pie,
    }));
    text.push('\n');
    text
}

/// perf-script text the parser reads back event for event (given commands
/// without whitespace).
pub fn render_perf_script(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&format!("{} {}/{} [{:03}] {}: ", ev.comm, ev.pid, ev.tid, ev.cpu, ev.ts.format_perf()));
        if ev.period != 1 {
            out.push_str(&format!("{} ", ev.period));
        }
        out.push_str(&ev.event);
        out.push(':');
        if let Some(raw) = ev.arg("raw").filter(|_| ev.args.len() == 1) {
            out.push(' ');
            out.push_str(raw);
        } else {
            for (k, v) in &ev.args {
                if k == "next_comm" {
                    out.push_str(" ==>");
                }
                out.push_str(&format!(" {k}={v}"));
            }
        }
        out.push('\n');
        for f in &ev.stack {
            out.push_str(&format!("\t{:x} {}", f.address, f.symbol.as_deref().unwrap_or(UNKNOWN_SYMBOL)));
            if let Some(off) = f.offset {
                out.push_str(&format!("+0x{off:x}"));
            }
            if let Some(dso) = &f.dso {
                out.push_str(&format!(" ({dso})"));
            }
            out.push('\n');
        }
        out.push('\n');
    }
    out
}

/// One JSON object per line, for the `parse` subcommand.
pub fn to_event_ndjson(events: &[TraceEvent]) -> String {
    let mut out = String::new();
    for ev in events {
        out.push_str(&to_ascii_json(ev));
        out.push('\n');
    }
    out
}
