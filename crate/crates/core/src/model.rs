//! Domain types shared by the parsers, analyzers and exporters.

use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::num::{ns_to_secs, Rational};

const NANOS_PER_SEC: u64 = 1_000_000_000;

/// Integer nanoseconds on the trace clock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const ZERO: Timestamp = Timestamp(0);

    pub const fn from_nanos(ns: u64) -> Self {
        Timestamp(ns)
    }

    pub const fn from_secs(secs: u64) -> Self {
        Timestamp(secs * NANOS_PER_SEC)
    }

    pub const fn as_nanos(self) -> u64 {
        self.0
    }

    /// Parses `sec[.frac]` with up to nine fractional digits. The conversion
    /// is exact; more than nine digits, signs and exponents are rejected.
    pub fn parse(text: &str) -> Option<Self> {
        let (sec, frac) = match text.split_once('.') {
            Some((s, f)) => (s, f),
            None => (text, ""),
        };
        if sec.is_empty() || frac.len() > 9 {
            return None;
        }
        if !sec.bytes().all(|b| b.is_ascii_digit()) || !frac.bytes().all(|b| b.is_ascii_digit()) {
            return None;
        }
        let sec: u64 = sec.parse().ok()?;
        let mut frac_ns: u64 = 0;
        for (i, b) in frac.bytes().enumerate() {
            frac_ns += u64::from(b - b'0') * 10u64.pow(8 - i as u32);
        }
        sec.checked_mul(NANOS_PER_SEC)?.checked_add(frac_ns).map(Timestamp)
    }

    /// `sec.nnnnnnnnn`, lossless.
    pub fn format_full(self) -> String {
        format!("{}.{:09}", self.0 / NANOS_PER_SEC, self.0 % NANOS_PER_SEC)
    }

    /// `sec.uuuuuu` when the value has microsecond resolution (the usual perf
    /// script form), otherwise the full nine digits.
    pub fn format_perf(self) -> String {
        if self.0.is_multiple_of(1000) {
            format!("{}.{:06}", self.0 / NANOS_PER_SEC, (self.0 % NANOS_PER_SEC) / 1000)
        } else {
            self.format_full()
        }
    }

    /// `ss.SSS`: three fractional digits, truncated.
    pub fn format_millis(self) -> String {
        format!("{}.{:03}", self.0 / NANOS_PER_SEC, (self.0 % NANOS_PER_SEC) / 1_000_000)
    }

    pub fn saturating_sub(self, other: Timestamp) -> Timestamp {
        Timestamp(self.0.saturating_sub(other.0))
    }

    pub fn saturating_add_nanos(self, ns: u64) -> Timestamp {
        Timestamp(self.0.saturating_add(ns))
    }
}

impl fmt::Display for Timestamp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.format_full())
    }
}

/// One resolved (or unresolved) stack frame.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Frame {
    pub address: u64,
    pub symbol: Option<String>,
    pub offset: Option<u64>,
    pub dso: Option<String>,
}

impl Frame {
    pub fn new(address: u64, symbol: impl Into<String>, dso: impl Into<String>) -> Self {
        Frame { address, symbol: Some(symbol.into()), offset: None, dso: Some(dso.into()) }
    }

    /// Symbol name, or `[unknown]` for unresolved frames.
    pub fn symbol_or_unknown(&self) -> &str {
        self.symbol.as_deref().unwrap_or(UNKNOWN_SYMBOL)
    }
}

pub const UNKNOWN_SYMBOL: &str = "[unknown]";

/// Coarse event family, taken from the `class:` prefix of the event name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EventClass {
    Sched,
    Syscalls,
    Block,
    Ext4,
    Net,
    Sock,
    Skb,
    Scsi,
    CpuClock,
    Other,
}

impl EventClass {
    pub fn as_str(self) -> &'static str {
        match self {
            EventClass::Sched => "sched",
            EventClass::Syscalls => "syscalls",
            EventClass::Block => "block",
            EventClass::Ext4 => "ext4",
            EventClass::Net => "net",
            EventClass::Sock => "sock",
            EventClass::Skb => "skb",
            EventClass::Scsi => "scsi",
            EventClass::CpuClock => "cpu-clock",
            EventClass::Other => "other",
        }
    }

    pub fn is_network(self) -> bool {
        matches!(self, EventClass::Net | EventClass::Sock | EventClass::Skb)
    }
}

/// Maps a qualified event name (`class:name`, or a bare sample event such as
/// `cpu-clock`) to its class. Unknown prefixes map to [`EventClass::Other`].
pub fn classify_event(event: &str) -> EventClass {
    let prefix = match event.split_once(':') {
        Some((prefix, _)) => prefix,
        None => event,
    };
    match prefix {
        "sched" => EventClass::Sched,
        "syscalls" | "raw_syscalls" => EventClass::Syscalls,
        "block" => EventClass::Block,
        "ext4" => EventClass::Ext4,
        "net" => EventClass::Net,
        "sock" => EventClass::Sock,
        "skb" => EventClass::Skb,
        "scsi" => EventClass::Scsi,
        "cpu-clock" => EventClass::CpuClock,
        _ => EventClass::Other,
    }
}

/// One timestamped profiler event.
///
/// `stack` is leaf first, the order perf script prints it in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceEvent {
    pub comm: String,
    pub pid: u32,
    pub tid: u32,
    pub cpu: u32,
    pub ts: Timestamp,
    pub class: EventClass,
    /// Qualified name as recorded, e.g. `sched:sched_switch`.
    pub event: String,
    pub args: IndexMap<String, String>,
    pub period: u64,
    pub stack: Vec<Frame>,
}

impl TraceEvent {
    pub fn new(comm: impl Into<String>, pid: u32, tid: u32, cpu: u32, ts: Timestamp, event: impl Into<String>) -> Self {
        let event = event.into();
        TraceEvent {
            comm: comm.into(),
            pid,
            tid,
            cpu,
            ts,
            class: classify_event(&event),
            event,
            args: IndexMap::new(),
            period: 1,
            stack: Vec::new(),
        }
    }

    pub fn with_arg(mut self, key: impl Into<String>, value: impl Into<String>) -> Self {
        self.args.insert(key.into(), value.into());
        self
    }

    pub fn with_stack(mut self, stack: Vec<Frame>) -> Self {
        self.stack = stack;
        self
    }

    pub fn with_period(mut self, period: u64) -> Self {
        self.period = period;
        self
    }

    /// Event name without the class prefix (`sched_switch`).
    pub fn name(&self) -> &str {
        match self.event.split_once(':') {
            Some((_, name)) => name,
            None => &self.event,
        }
    }

    pub fn arg(&self, key: &str) -> Option<&str> {
        self.args.get(key).map(String::as_str)
    }

    pub fn leaf(&self) -> Option<&Frame> {
        self.stack.first()
    }
}

/// Why a thread was off CPU.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaitReason {
    SchedulerDelay,
    BlockIO,
    Lock,
    Network,
    Timer,
    Unknown,
}

impl WaitReason {
    pub const ALL: [WaitReason; 6] = [
        WaitReason::SchedulerDelay,
        WaitReason::BlockIO,
        WaitReason::Lock,
        WaitReason::Network,
        WaitReason::Timer,
        WaitReason::Unknown,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            WaitReason::SchedulerDelay => "SchedulerDelay",
            WaitReason::BlockIO => "BlockIO",
            WaitReason::Lock => "Lock",
            WaitReason::Network => "Network",
            WaitReason::Timer => "Timer",
            WaitReason::Unknown => "Unknown",
        }
    }
}

impl fmt::Display for WaitReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum WaitKind {
    Blocked,
    Runnable,
}

/// A span during which a thread was blocked or waiting for a CPU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WaitInterval {
    pub tid: u32,
    pub start: Timestamp,
    pub end: Timestamp,
    pub kind: WaitKind,
    pub reason: WaitReason,
    pub stack: Vec<Frame>,
    /// Still open when the trace ended; closed at the last event.
    pub truncated: bool,
}

impl WaitInterval {
    pub fn duration_ns(&self) -> u64 {
        self.end.as_nanos() - self.start.as_nanos()
    }

    /// Exact duration in seconds.
    pub fn duration(&self) -> Rational {
        ns_to_secs(self.duration_ns())
    }
}
