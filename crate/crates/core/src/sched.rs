//! Scheduler timeline reconstruction and off-CPU attribution.
//!
//! Each thread runs through a small state machine driven by `sched_switch`
//! and `sched_wakeup` events:
//!
//! | event                         | from              | to                      |
//! |-------------------------------|-------------------|-------------------------|
//! | `sched_switch` prev = T       | Running / Unknown | Runnable if prev_state has `R`, else Sleeping |
//! | `sched_wakeup` pid = T        | Sleeping / Unknown| Runnable                |
//! | `sched_switch` next = T       | Runnable / Unknown| Running                 |
//!
//! Every thread starts in `Unknown` at the trace origin and every open
//! interval is closed (and flagged truncated) at the last event, so per
//! thread the interval durations always add up to `end - origin`.
//! Transitions that contradict the current state are tallied as anomalies
//! and ignored, except a switch-in of a sleeping thread (a lost wakeup),
//! which is applied and tallied.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::Serialize;

use crate::locks::LockAcquisition;
use crate::model::{EventClass, Frame, Timestamp, TraceEvent, WaitInterval, WaitKind, WaitReason};

pub const DEFAULT_LOCK_SYMBOLS: [&str; 6] =
    ["futex_wait", "futex_wait_queue_me", "pthread_mutex_lock", "pthread_cond_wait", "pthread_join", "sem_wait"];

/// Default block/network correlation window: 1 ms.
pub const DEFAULT_LOOKBACK_NS: u64 = 1_000_000;

const LOCK_SYSCALLS: [&str; 1] = ["futex"];
const IO_SYSCALLS: [&str; 4] = ["read", "write", "fsync", "fdatasync"];
const NET_SYSCALLS: [&str; 7] = ["poll", "select", "epoll_wait", "recvfrom", "recvmsg", "accept", "connect"];
const TIMER_SYSCALLS: [&str; 2] = ["nanosleep", "clock_nanosleep"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SchedConfig {
    pub lock_symbols: BTreeSet<String>,
    pub lookback_ns: u64,
}

impl Default for SchedConfig {
    fn default() -> Self {
        SchedConfig {
            lock_symbols: DEFAULT_LOCK_SYMBOLS.iter().map(|s| s.to_string()).collect(),
            lookback_ns: DEFAULT_LOOKBACK_NS,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub enum ThreadState {
    Running,
    Runnable,
    Sleeping,
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TimelineInterval {
    pub start: Timestamp,
    pub end: Timestamp,
    pub state: ThreadState,
    /// Stack of the `sched_switch` that opened the interval.
    pub stack: Vec<Frame>,
    pub prev_state: Option<String>,
    /// Syscall entered but not exited when the interval opened.
    pub pending_syscall: Option<String>,
    pub truncated: bool,
}

impl TimelineInterval {
    pub fn duration_ns(&self) -> u64 {
        self.end.as_nanos() - self.start.as_nanos()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThreadTimeline {
    pub tid: u32,
    pub comm: String,
    pub intervals: Vec<TimelineInterval>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct Anomalies {
    pub wakeup_not_sleeping: u64,
    pub switch_in_not_runnable: u64,
    pub switch_out_not_running: u64,
    pub missing_wakeup: u64,
    pub unknown_prev_state: u64,
    pub malformed_sched_event: u64,
}

impl Anomalies {
    pub fn total(&self) -> u64 {
        self.wakeup_not_sleeping
            + self.switch_in_not_runnable
            + self.switch_out_not_running
            + self.missing_wakeup
            + self.unknown_prev_state
            + self.malformed_sched_event
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Timelines {
    pub threads: BTreeMap<u32, ThreadTimeline>,
    pub anomalies: Anomalies,
    pub origin: Timestamp,
    pub end: Timestamp,
}

struct OpenInterval {
    start: Timestamp,
    state: ThreadState,
    stack: Vec<Frame>,
    prev_state: Option<String>,
    pending_syscall: Option<String>,
}

struct ThreadBuilder {
    comm: String,
    closed: Vec<TimelineInterval>,
    open: OpenInterval,
}

impl ThreadBuilder {
    fn transition(&mut self, at: Timestamp, next: OpenInterval) {
        let prev = std::mem::replace(&mut self.open, next);
        if prev.state == ThreadState::Unknown && prev.start == at {
            return;
        }
        self.closed.push(TimelineInterval {
            start: prev.start,
            end: at,
            state: prev.state,
            stack: prev.stack,
            prev_state: prev.prev_state,
            pending_syscall: prev.pending_syscall,
            truncated: false,
        });
    }
}

fn bare(start: Timestamp, state: ThreadState) -> OpenInterval {
    OpenInterval { start, state, stack: Vec::new(), prev_state: None, pending_syscall: None }
}

/// Stable ordering by timestamp; equal timestamps keep input order.
pub fn sorted_order(events: &[TraceEvent]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| events[i].ts);
    order
}

enum PrevState {
    Runnable,
    Sleeping,
    Unrecognized,
}

fn decode_prev_state(state: &str) -> PrevState {
    let state = state.trim_end_matches('+');
    let mut runnable = false;
    for part in state.split('|') {
        match part {
            "R" => runnable = true,
            "S" | "D" | "T" | "t" | "X" | "Z" | "I" => {}
            _ => return PrevState::Unrecognized,
        }
    }
    if runnable {
        PrevState::Runnable
    } else {
        PrevState::Sleeping
    }
}

fn parse_pid(event: &TraceEvent, key: &str) -> Option<u32> {
    event.arg(key)?.parse().ok()
}

/// Rebuilds per-thread state timelines from scheduler events.
pub fn build_timelines(events: &[TraceEvent]) -> Timelines {
    let order = sorted_order(events);
    let (Some(&first), Some(&last)) = (order.first(), order.last()) else {
        return Timelines::default();
    };
    let origin = events[first].ts;
    let end = events[last].ts;

    let mut threads: BTreeMap<u32, ThreadBuilder> = BTreeMap::new();
    let mut pending: HashMap<u32, String> = HashMap::new();
    let mut anomalies = Anomalies::default();

    let sight = |threads: &mut BTreeMap<u32, ThreadBuilder>, tid: u32, comm: Option<&str>| {
        if tid == 0 {
            return;
        }
        let t = threads.entry(tid).or_insert_with(|| ThreadBuilder {
            comm: String::new(),
            closed: Vec::new(),
            open: bare(origin, ThreadState::Unknown),
        });
        if let Some(comm) = comm {
            t.comm = comm.to_string();
        }
    };

    for &idx in &order {
        let ev = &events[idx];
        let ts = ev.ts;
        sight(&mut threads, ev.tid, Some(&ev.comm));
        match ev.class {
            EventClass::Syscalls => {
                let name = ev.name();
                if let Some(sys) = name.strip_prefix("sys_enter_") {
                    pending.insert(ev.tid, sys.to_string());
                } else if name.starts_with("sys_exit_") {
                    pending.remove(&ev.tid);
                }
            }
            EventClass::Sched => match ev.name() {
                "sched_switch" => {
                    let (Some(prev), Some(next)) = (parse_pid(ev, "prev_pid"), parse_pid(ev, "next_pid")) else {
                        anomalies.malformed_sched_event += 1;
                        continue;
                    };
                    if prev == next {
                        continue;
                    }
                    if prev != 0 {
                        sight(&mut threads, prev, ev.arg("prev_comm"));
                        let thread = threads.get_mut(&prev).expect("sighted");
                        match thread.open.state {
                            ThreadState::Running | ThreadState::Unknown => {
                                let prev_state = ev.arg("prev_state").map(str::to_string);
                                let state = match prev_state.as_deref().map(decode_prev_state) {
                                    Some(PrevState::Runnable) => ThreadState::Runnable,
                                    Some(PrevState::Sleeping) => ThreadState::Sleeping,
                                    Some(PrevState::Unrecognized) | None => {
                                        anomalies.unknown_prev_state += 1;
                                        ThreadState::Sleeping
                                    }
                                };
                                thread.transition(
                                    ts,
                                    OpenInterval {
                                        start: ts,
                                        state,
                                        stack: ev.stack.clone(),
                                        prev_state,
                                        pending_syscall: pending.get(&prev).cloned(),
                                    },
                                );
                            }
                            ThreadState::Runnable | ThreadState::Sleeping => anomalies.switch_out_not_running += 1,
                        }
                    }
                    if next != 0 {
                        sight(&mut threads, next, ev.arg("next_comm"));
                        let thread = threads.get_mut(&next).expect("sighted");
                        match thread.open.state {
                            ThreadState::Runnable | ThreadState::Unknown => {
                                thread.transition(ts, bare(ts, ThreadState::Running));
                            }
                            ThreadState::Sleeping => {
                                anomalies.missing_wakeup += 1;
                                thread.transition(ts, bare(ts, ThreadState::Running));
                            }
                            ThreadState::Running => anomalies.switch_in_not_runnable += 1,
                        }
                    }
                }
                "sched_wakeup" | "sched_wakeup_new" => {
                    let Some(pid) = parse_pid(ev, "pid") else {
                        anomalies.malformed_sched_event += 1;
                        continue;
                    };
                    if pid == 0 {
                        continue;
                    }
                    sight(&mut threads, pid, ev.arg("comm"));
                    let thread = threads.get_mut(&pid).expect("sighted");
                    match thread.open.state {
                        ThreadState::Sleeping | ThreadState::Unknown => {
                            thread.transition(ts, bare(ts, ThreadState::Runnable));
                        }
                        ThreadState::Running | ThreadState::Runnable => anomalies.wakeup_not_sleeping += 1,
                    }
                }
                _ => {}
            },
            _ => {}
        }
    }

    let threads = threads
        .into_iter()
        .map(|(tid, mut b)| {
            let open = b.open;
            b.closed.push(TimelineInterval {
                start: open.start,
                end,
                state: open.state,
                stack: open.stack,
                prev_state: open.prev_state,
                pending_syscall: open.pending_syscall,
                truncated: true,
            });
            (tid, ThreadTimeline { tid, comm: b.comm, intervals: b.closed })
        })
        .collect();

    Timelines { threads, anomalies, origin, end }
}

/// Everything [`classify_wait`] looks at.
#[derive(Debug, Clone, Copy, Default)]
pub struct WaitContext<'a> {
    pub prev_state: Option<&'a str>,
    pub stack: &'a [Frame],
    pub pending_syscall: Option<&'a str>,
    /// A `block:*` event for the thread inside the lookback window.
    pub recent_block_io: bool,
    /// A `net:*`, `sock:*` or `skb:*` event for the thread inside the window.
    pub recent_network: bool,
}

/// First matching rule wins: lock, block I/O, network, timer, unknown.
pub fn classify_wait(ctx: &WaitContext<'_>, cfg: &SchedConfig) -> WaitReason {
    let pending_in = |set: &[&str]| ctx.pending_syscall.is_some_and(|s| set.contains(&s));
    let lock_frame = ctx.stack.iter().any(|f| f.symbol.as_deref().is_some_and(|s| cfg.lock_symbols.contains(s)));
    if pending_in(&LOCK_SYSCALLS) || lock_frame {
        return WaitReason::Lock;
    }
    if ctx.prev_state.is_some_and(|s| s.contains('D')) || pending_in(&IO_SYSCALLS) || ctx.recent_block_io {
        return WaitReason::BlockIO;
    }
    if pending_in(&NET_SYSCALLS) || ctx.recent_network {
        return WaitReason::Network;
    }
    if pending_in(&TIMER_SYSCALLS) {
        return WaitReason::Timer;
    }
    WaitReason::Unknown
}

/// Sorted timestamps of one event family per thread.
struct TsIndex(HashMap<u32, Vec<Timestamp>>);

impl TsIndex {
    fn build(events: &[TraceEvent], pred: impl Fn(EventClass) -> bool) -> Self {
        let mut map: HashMap<u32, Vec<Timestamp>> = HashMap::new();
        for ev in events.iter().filter(|e| pred(e.class)) {
            map.entry(ev.tid).or_default().push(ev.ts);
        }
        for list in map.values_mut() {
            list.sort_unstable();
        }
        TsIndex(map)
    }

    /// Any timestamp in `[at - window, at]`.
    fn any_within(&self, tid: u32, at: Timestamp, window: u64) -> bool {
        let Some(list) = self.0.get(&tid) else { return false };
        let lo = Timestamp::from_nanos(at.as_nanos().saturating_sub(window));
        let first = list.partition_point(|&t| t < lo);
        list.get(first).is_some_and(|&t| t <= at)
    }
}

/// One [`WaitInterval`] per Sleeping or Runnable timeline interval.
pub fn attribute_offcpu(timelines: &Timelines, events: &[TraceEvent], cfg: &SchedConfig) -> Vec<WaitInterval> {
    let block = TsIndex::build(events, |c| c == EventClass::Block);
    let net = TsIndex::build(events, EventClass::is_network);
    let mut out = Vec::new();
    for (&tid, timeline) in &timelines.threads {
        for iv in &timeline.intervals {
            let (kind, reason) = match iv.state {
                ThreadState::Runnable => (WaitKind::Runnable, WaitReason::SchedulerDelay),
                ThreadState::Sleeping => {
                    let ctx = WaitContext {
                        prev_state: iv.prev_state.as_deref(),
                        stack: &iv.stack,
                        pending_syscall: iv.pending_syscall.as_deref(),
                        recent_block_io: block.any_within(tid, iv.start, cfg.lookback_ns),
                        recent_network: net.any_within(tid, iv.start, cfg.lookback_ns),
                    };
                    (WaitKind::Blocked, classify_wait(&ctx, cfg))
                }
                ThreadState::Running | ThreadState::Unknown => continue,
            };
            out.push(WaitInterval {
                tid,
                start: iv.start,
                end: iv.end,
                kind,
                reason,
                stack: iv.stack.clone(),
                truncated: iv.truncated,
            });
        }
    }
    out
}

/// Log2 duration bucket: `Pow2(k)` covers `[2^k, 2^(k+1))` microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DurationBucket {
    Zero,
    Pow2(i32),
}

impl DurationBucket {
    pub fn of_nanos(ns: u64) -> Self {
        if ns == 0 {
            return DurationBucket::Zero;
        }
        let micros = ns / 1000;
        if micros >= 1 {
            return DurationBucket::Pow2(63 - micros.leading_zeros() as i32);
        }
        // Sub-microsecond: smallest m with ns * 2^m >= 1000.
        let mut m = 0;
        while (ns << m) < 1000 {
            m += 1;
        }
        DurationBucket::Pow2(-m)
    }

    pub fn label(&self) -> String {
        match self {
            DurationBucket::Zero => "0us".to_string(),
            DurationBucket::Pow2(k) if *k >= 0 => format!("[{}us, {}us)", 1u64 << k, 1u64 << (k + 1)),
            DurationBucket::Pow2(k) => format!("[2^{}us, 2^{}us)", k, k + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct StackTotal {
    pub total_ns: u64,
    pub count: u64,
}

/// Aggregated off-CPU time. `merge` is associative and commutative.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct WaitSummary {
    pub by_thread: BTreeMap<(u32, WaitReason), u64>,
    /// Root-first `;`-joined symbol names (collapsed-stack form).
    pub by_stack: BTreeMap<String, StackTotal>,
    pub histogram: BTreeMap<DurationBucket, u64>,
}

impl WaitSummary {
    pub fn is_empty(&self) -> bool {
        self.by_thread.is_empty()
    }

    pub fn total_ns(&self) -> u64 {
        self.by_thread.values().sum()
    }

    pub fn by_reason(&self) -> BTreeMap<WaitReason, u64> {
        let mut out = BTreeMap::new();
        for (&(_, reason), &ns) in &self.by_thread {
            *out.entry(reason).or_insert(0) += ns;
        }
        out
    }

    pub fn thread_total(&self, tid: u32) -> u64 {
        self.by_thread.range((tid, WaitReason::SchedulerDelay)..=(tid, WaitReason::Unknown)).map(|(_, v)| v).sum()
    }

    pub fn merge(&mut self, other: &WaitSummary) {
        for (&k, &v) in &other.by_thread {
            *self.by_thread.entry(k).or_insert(0) += v;
        }
        for (k, v) in &other.by_stack {
            let e = self.by_stack.entry(k.clone()).or_default();
            e.total_ns += v.total_ns;
            e.count += v.count;
        }
        for (&k, &v) in &other.histogram {
            *self.histogram.entry(k).or_insert(0) += v;
        }
    }
}

pub fn stack_signature(stack: &[Frame]) -> String {
    if stack.is_empty() {
        return "[no stack]".to_string();
    }
    let names: Vec<&str> = stack.iter().rev().map(Frame::symbol_or_unknown).collect();
    names.join(";")
}

pub fn summarize_waits(intervals: &[WaitInterval]) -> WaitSummary {
    let mut summary = WaitSummary::default();
    for w in intervals {
        let ns = w.duration_ns();
        *summary.by_thread.entry((w.tid, w.reason)).or_insert(0) += ns;
        let entry = summary.by_stack.entry(stack_signature(&w.stack)).or_default();
        entry.total_ns += ns;
        entry.count += 1;
        *summary.histogram.entry(DurationBucket::of_nanos(ns)).or_insert(0) += 1;
    }
    summary
}

/// Contended futex waits as lock acquisitions.
///
/// A `FUTEX_WAIT` enter/exit pair is a request and grant on the futex word;
/// the same thread's next `FUTEX_WAKE` on that word releases it. Without a
/// matching wake the release is the grant. Uncontended acquisitions never
/// reach the kernel and are not visible here.
pub fn futex_acquisitions(events: &[TraceEvent]) -> Vec<LockAcquisition> {
    const FUTEX_WAIT: u64 = 0;
    const FUTEX_WAKE: u64 = 1;
    const FUTEX_CMD_MASK: u64 = 0x7f;

    let field = |ev: &TraceEvent, key: &str| -> Option<u64> {
        let raw = ev.arg("raw")?;
        raw.split(',').find_map(|part| {
            let (k, v) = part.trim().split_once(':')?;
            (k.trim() == key).then(|| {
                let v = v.trim();
                v.strip_prefix("0x").map_or_else(|| v.parse().ok(), |h| u64::from_str_radix(h, 16).ok())
            })?
        })
    };

    let mut out: Vec<LockAcquisition> = Vec::new();
    let mut waiting: HashMap<u32, (u64, Timestamp)> = HashMap::new();
    // Acquisitions waiting for their wake, by (tid, futex word).
    let mut held: HashMap<(u32, u64), Vec<usize>> = HashMap::new();
    for idx in sorted_order(events) {
        let ev = &events[idx];
        match ev.event.as_str() {
            "syscalls:sys_enter_futex" => {
                let (Some(uaddr), Some(op)) = (field(ev, "uaddr"), field(ev, "op")) else { continue };
                match op & FUTEX_CMD_MASK {
                    FUTEX_WAIT => {
                        waiting.insert(ev.tid, (uaddr, ev.ts));
                    }
                    FUTEX_WAKE => {
                        if let Some(list) = held.remove(&(ev.tid, uaddr)) {
                            for at in list {
                                out[at].release_ts = ev.ts;
                            }
                        }
                    }
                    _ => {}
                }
            }
            "syscalls:sys_exit_futex" => {
                if let Some((uaddr, request)) = waiting.remove(&ev.tid) {
                    held.entry((ev.tid, uaddr)).or_default().push(out.len());
                    out.push(LockAcquisition {
                        tid: ev.tid,
                        lock_id: uaddr,
                        request_ts: request,
                        grant_ts: ev.ts,
                        release_ts: ev.ts,
                    });
                }
            }
            _ => {}
        }
    }
    out
}
