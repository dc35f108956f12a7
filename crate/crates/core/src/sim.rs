//! Discrete-event simulation of a bounded-buffer producer/consumer system.
//!
//! Each queue `q` is guarded by three semaphores: `empty_q` (free slots,
//! starts at the capacity), `full_q` (filled slots, starts at 0) and
//! `mutex_q` (starts at 1). Threads loop over:
//!
//! ```text
//! producer: compute(produce_time); WAIT(empty); WAIT(mutex); add; SIGNAL(mutex); SIGNAL(full)
//! consumer: claim; WAIT(full); WAIT(mutex); remove; SIGNAL(mutex); compute(consume_time); SIGNAL(empty)
//! ```
//!
//! `add` and `remove` take `critical_section_time`. A consumer claims one of
//! its queue's outstanding items before waiting and exits once none are
//! left. With `inverted_wait_order` the mutex is taken before the counting
//! semaphore, which can deadlock.
//!
//! The clock is virtual integer nanoseconds. Pending steps are ordered by
//! `(time, tid, kind)` with a hand-off wakeup before a timer expiry. Blocking
//! emits `sched_switch` (prev_state `S`) with a synthetic stack naming the
//! semaphore; a hand-off emits `sched_wakeup` from the signaler followed by a
//! switch-in from the idle task at the same instant, so the sleeping interval
//! seen by the scheduler analysis is exactly the blocked interval.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, VecDeque};
use std::fmt;

use serde::Serialize;
use thiserror::Error;

use crate::locks::LockAcquisition;
use crate::model::{Frame, Timestamp, TraceEvent, WaitKind, WaitReason};
use crate::sched::{attribute_offcpu, build_timelines, summarize_waits, SchedConfig};

pub const SIM_PID: u32 = 1000;
pub const FIRST_TID: u32 = 1001;
pub const SIM_DSO: &str = "simgen";

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimConfig {
    pub producers: u32,
    pub consumers: u32,
    pub queues: u32,
    pub capacity: u32,
    pub items_per_producer: u32,
    pub produce_time_ns: u64,
    pub consume_time_ns: u64,
    pub critical_section_ns: u64,
    pub seed: u64,
    /// Relative spread in `[0, 1]` applied to every duration.
    pub jitter: f64,
    pub inverted_wait_order: bool,
    /// The run stops once the clock would pass this point.
    pub time_limit_ns: u64,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            producers: 2,
            consumers: 2,
            queues: 1,
            capacity: 4,
            items_per_producer: 10,
            produce_time_ns: 1_000_000,
            consume_time_ns: 1_000_000,
            critical_section_ns: 100_000,
            seed: 0,
            jitter: 0.0,
            inverted_wait_order: false,
            time_limit_ns: 3_600_000_000_000,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: &str| Err(SimError::Config(msg.to_string()));
        if self.producers == 0 || self.consumers == 0 {
            return bad("producers and consumers must be at least 1");
        }
        if self.queues == 0 || self.capacity == 0 || self.items_per_producer == 0 {
            return bad("queues, capacity and items per producer must be at least 1");
        }
        if self.queues > self.producers.min(self.consumers) {
            return bad("every queue needs at least one producer and one consumer");
        }
        if self.produce_time_ns == 0 || self.consume_time_ns == 0 || self.critical_section_ns == 0 {
            return bad("durations must be positive");
        }
        if !(0.0..=1.0).contains(&self.jitter) {
            return bad("jitter must lie in [0, 1]");
        }
        Ok(())
    }

    pub fn threads(&self) -> u32 {
        self.producers + self.consumers
    }
}

/// SplitMix64; the increment is the 64-bit golden-ratio constant.
#[derive(Debug, Clone)]
pub struct SplitMix64(u64);

impl SplitMix64 {
    pub const GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

    pub fn new(seed: u64) -> Self {
        SplitMix64(seed)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.0 = self.0.wrapping_add(Self::GAMMA);
        let mut z = self.0;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }

    /// Uniform in `[-1, 1)` from the top 53 bits.
    pub fn next_signed_unit(&mut self) -> f64 {
        let unit = (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        2.0 * unit - 1.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SemKind {
    Empty,
    Full,
    Mutex,
}

impl SemKind {
    fn as_str(self) -> &'static str {
        match self {
            SemKind::Empty => "empty",
            SemKind::Full => "full",
            SemKind::Mutex => "mutex",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct SemId {
    pub queue: u32,
    pub kind: SemKind,
}

impl SemId {
    /// Lock id used in acquisition streams: `3q`, `3q+1`, `3q+2`.
    pub fn lock_id(self) -> u64 {
        3 * u64::from(self.queue) + self.kind as u64
    }

    /// Symbol of the wait-site frame, e.g. `wait_empty_0`.
    pub fn wait_site(self) -> String {
        format!("wait_{}_{}", self.kind.as_str(), self.queue)
    }

    pub fn from_wait_site(symbol: &str) -> Option<SemId> {
        let rest = symbol.strip_prefix("wait_")?;
        let (kind, queue) = rest.split_once('_')?;
        let kind = match kind {
            "empty" => SemKind::Empty,
            "full" => SemKind::Full,
            "mutex" => SemKind::Mutex,
            _ => return None,
        };
        Some(SemId { queue: queue.parse().ok()?, kind })
    }
}

impl fmt::Display for SemId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}_{}", self.kind.as_str(), self.queue)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct BlockTotal {
    pub ns: u64,
    pub count: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct OpenBlock {
    pub tid: u32,
    pub sem: SemId,
    pub since_ns: u64,
}

/// What actually happened during a run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct GroundTruth {
    pub blocked: BTreeMap<(u32, SemId), BlockTotal>,
    /// Blocks still in progress when the run stopped.
    pub open_blocks: Vec<OpenBlock>,
    pub max_occupancy: Vec<u32>,
    pub min_occupancy: Vec<u32>,
    pub completion_ns: Option<u64>,
    pub deadlocked: bool,
    pub timed_out: bool,
    pub produced: u64,
    pub consumed: u64,
    pub event_count: usize,
    pub last_event_ns: u64,
}

impl GroundTruth {
    pub fn total_blocked_ns(&self) -> u64 {
        self.blocked.values().map(|b| b.ns).sum()
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Entry {
            tid: u32,
            semaphore: String,
            blocked_ns: u64,
            blocks: u64,
        }
        #[derive(Serialize)]
        struct Ledger<'a> {
            blocked: Vec<Entry>,
            open_blocks: Vec<serde_json::Value>,
            max_occupancy: &'a [u32],
            min_occupancy: &'a [u32],
            completion_ns: Option<u64>,
            deadlocked: bool,
            timed_out: bool,
            produced: u64,
            consumed: u64,
            event_count: usize,
            last_event_ns: u64,
        }
        let ledger = Ledger {
            blocked: self
                .blocked
                .iter()
                .map(|(&(tid, sem), b)| Entry { tid, semaphore: sem.to_string(), blocked_ns: b.ns, blocks: b.count })
                .collect(),
            open_blocks: self
                .open_blocks
                .iter()
                .map(|o| serde_json::json!({"tid": o.tid, "semaphore": o.sem.to_string(), "since_ns": o.since_ns}))
                .collect(),
            max_occupancy: &self.max_occupancy,
            min_occupancy: &self.min_occupancy,
            completion_ns: self.completion_ns,
            deadlocked: self.deadlocked,
            timed_out: self.timed_out,
            produced: self.produced,
            consumed: self.consumed,
            event_count: self.event_count,
            last_event_ns: self.last_event_ns,
        };
        let mut text = serde_json::to_string_pretty(&ledger).expect("ledger serializes");
        text.push('\n');
        text
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct CriticalSection {
    pub queue: u32,
    pub tid: u32,
    pub start_ns: u64,
    pub end_ns: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimOutput {
    pub events: Vec<TraceEvent>,
    pub truth: GroundTruth,
    pub acquisitions: Vec<LockAcquisition>,
    pub critical_sections: Vec<CriticalSection>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Role {
    Producer,
    Consumer,
}

impl Role {
    fn loop_symbol(self) -> &'static str {
        match self {
            Role::Producer => "producer_loop",
            Role::Consumer => "consumer_loop",
        }
    }

    /// The semaphore this role posts after leaving the critical section.
    fn posts(self) -> SemKind {
        match self {
            Role::Producer => SemKind::Full,
            Role::Consumer => SemKind::Empty,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Step {
    Claim,
    Compute,
    Wait(SemKind),
    Critical,
    Signal(SemKind),
}

fn program(role: Role, inverted: bool) -> &'static [Step] {
    use SemKind::*;
    use Step::*;
    match (role, inverted) {
        (Role::Producer, false) => &[Compute, Wait(Empty), Wait(Mutex), Critical, Signal(Mutex), Signal(Full)],
        (Role::Producer, true) => &[Compute, Wait(Mutex), Wait(Empty), Critical, Signal(Mutex), Signal(Full)],
        (Role::Consumer, false) => &[Claim, Wait(Full), Wait(Mutex), Critical, Signal(Mutex), Compute, Signal(Empty)],
        (Role::Consumer, true) => &[Claim, Wait(Mutex), Wait(Full), Critical, Signal(Mutex), Compute, Signal(Empty)],
    }
}

struct Thread {
    tid: u32,
    cpu: u32,
    comm: String,
    role: Role,
    queue: u32,
    steps: &'static [Step],
    pc: usize,
    items_done: u32,
    done: bool,
    /// Semaphore and time of the block in progress.
    blocked: Option<(SemKind, u64)>,
    /// Critical section in progress, started at.
    in_critical: Option<u64>,
    /// Acquisition records whose release is still pending.
    mutex_hold: Option<usize>,
    duty_hold: Option<usize>,
    mutex_request: u64,
}

struct Semaphore {
    count: u32,
    waiters: VecDeque<usize>,
}

/// `(time, tid, kind)`: kind 0 resumes a thread, kind 1 ends its timed step.
type Pending = Reverse<(u64, u32, u8, usize)>;

struct Sim<'a> {
    cfg: &'a SimConfig,
    rng: SplitMix64,
    threads: Vec<Thread>,
    sems: BTreeMap<SemId, Semaphore>,
    remaining: Vec<u64>,
    occupancy: Vec<u32>,
    heap: BinaryHeap<Pending>,
    events: Vec<TraceEvent>,
    truth: GroundTruth,
    acquisitions: Vec<LockAcquisition>,
    open_release: Vec<usize>,
    critical_sections: Vec<CriticalSection>,
}

fn ts(ns: u64) -> Timestamp {
    Timestamp::from_nanos(ns)
}

fn frame(symbol: &str) -> Frame {
    // Stable fake addresses so rendered traces are byte-identical.
    let address = 0x40_1000 + symbol.bytes().fold(0u64, |h, b| (h * 31 + u64::from(b)) & 0xffff) * 0x10;
    Frame::new(address, symbol, SIM_DSO)
}

impl<'a> Sim<'a> {
    fn new(cfg: &'a SimConfig) -> Self {
        let mut threads = Vec::new();
        for i in 0..cfg.threads() {
            let (role, local) =
                if i < cfg.producers { (Role::Producer, i) } else { (Role::Consumer, i - cfg.producers) };
            let comm = match role {
                Role::Producer => format!("prod{local}"),
                Role::Consumer => format!("cons{local}"),
            };
            threads.push(Thread {
                tid: FIRST_TID + i,
                cpu: i,
                comm,
                role,
                queue: local % cfg.queues,
                steps: program(role, cfg.inverted_wait_order),
                pc: 0,
                items_done: 0,
                done: false,
                blocked: None,
                in_critical: None,
                mutex_hold: None,
                duty_hold: None,
                mutex_request: 0,
            });
        }
        let mut sems = BTreeMap::new();
        let mut remaining = vec![0u64; cfg.queues as usize];
        for q in 0..cfg.queues {
            for (kind, count) in [(SemKind::Empty, cfg.capacity), (SemKind::Full, 0), (SemKind::Mutex, 1)] {
                sems.insert(SemId { queue: q, kind }, Semaphore { count, waiters: VecDeque::new() });
            }
        }
        for t in threads.iter().filter(|t| t.role == Role::Producer) {
            remaining[t.queue as usize] += u64::from(cfg.items_per_producer);
        }
        Sim {
            cfg,
            rng: SplitMix64::new(cfg.seed),
            threads,
            sems,
            remaining,
            occupancy: vec![0; cfg.queues as usize],
            heap: BinaryHeap::new(),
            events: Vec::new(),
            truth: GroundTruth {
                max_occupancy: vec![0; cfg.queues as usize],
                min_occupancy: vec![0; cfg.queues as usize],
                ..GroundTruth::default()
            },
            acquisitions: Vec::new(),
            open_release: Vec::new(),
            critical_sections: Vec::new(),
        }
    }

    fn duration(&mut self, base: u64) -> u64 {
        if self.cfg.jitter == 0.0 {
            return base;
        }
        let u = self.rng.next_signed_unit();
        ((base as f64) * (1.0 + self.cfg.jitter * u)).round().max(1.0) as u64
    }

    fn schedule(&mut self, at: u64, idx: usize, kind: u8) {
        let tid = self.threads[idx].tid;
        self.heap.push(Reverse((at, tid, kind, idx)));
    }

    fn switch_event(
        &self,
        at: u64,
        prev: Option<usize>,
        prev_state: &str,
        next: Option<usize>,
        cpu: u32,
    ) -> TraceEvent {
        let name = |i: Option<usize>| {
            i.map_or(("swapper".to_string(), 0), |i| (self.threads[i].comm.clone(), self.threads[i].tid))
        };
        let (prev_comm, prev_pid) = name(prev);
        let (next_comm, next_pid) = name(next);
        let (comm, pid, tid) = match prev {
            Some(i) => (prev_comm.clone(), SIM_PID, self.threads[i].tid),
            None => ("swapper".to_string(), 0, 0),
        };
        TraceEvent::new(comm, pid, tid, cpu, ts(at), "sched:sched_switch")
            .with_arg("prev_comm", prev_comm)
            .with_arg("prev_pid", prev_pid.to_string())
            .with_arg("prev_prio", "120")
            .with_arg("prev_state", prev_state)
            .with_arg("next_comm", next_comm)
            .with_arg("next_pid", next_pid.to_string())
            .with_arg("next_prio", "120")
    }

    fn sample(&mut self, at: u64, idx: usize, work: &str, period: u64) {
        let t = &self.threads[idx];
        let stack = vec![frame(work), frame(t.role.loop_symbol()), frame("main")];
        let ev = TraceEvent::new(t.comm.clone(), SIM_PID, t.tid, t.cpu, ts(at), "cpu-clock")
            .with_period(period)
            .with_stack(stack);
        self.events.push(ev);
    }

    fn record(&mut self, tid: u32, sem: SemId, request: u64, grant: u64, release: Option<u64>) -> usize {
        let at = self.acquisitions.len();
        self.acquisitions.push(LockAcquisition {
            tid,
            lock_id: sem.lock_id(),
            request_ts: ts(request),
            grant_ts: ts(grant),
            release_ts: ts(release.unwrap_or(grant)),
        });
        if release.is_none() {
            self.open_release.push(at);
        }
        at
    }

    fn release(&mut self, at: usize, now: u64) {
        self.acquisitions[at].release_ts = ts(now);
        self.open_release.retain(|&i| i != at);
    }

    fn run(mut self) -> SimOutput {
        for idx in 0..self.threads.len() {
            self.schedule(0, idx, 0);
        }
        let mut started = vec![false; self.threads.len()];
        let mut now = 0;
        while let Some(Reverse((at, _, kind, idx))) = self.heap.pop() {
            if at > self.cfg.time_limit_ns {
                self.truth.timed_out = true;
                break;
            }
            now = at;
            if !started[idx] {
                started[idx] = true;
                let cpu = self.threads[idx].cpu;
                let ev = self.switch_event(now, None, "R", Some(idx), cpu);
                self.events.push(ev);
            } else if kind == 0 {
                let cpu = self.threads[idx].cpu;
                let ev = self.switch_event(now, None, "R", Some(idx), cpu);
                self.events.push(ev);
            } else {
                self.finish_timed(idx, now);
            }
            self.advance(idx, now);
        }
        if self.threads.iter().all(|t| t.done) {
            self.truth.completion_ns = Some(now);
        } else if !self.truth.timed_out {
            self.truth.deadlocked = true;
        }
        self.close(now)
    }

    fn finish_timed(&mut self, idx: usize, now: u64) {
        let Some(start) = self.threads[idx].in_critical.take() else { return };
        let (q, role, tid) = (self.threads[idx].queue, self.threads[idx].role, self.threads[idx].tid);
        let qi = q as usize;
        match role {
            Role::Producer => {
                self.occupancy[qi] += 1;
                self.truth.produced += 1;
            }
            Role::Consumer => {
                self.occupancy[qi] -= 1;
                self.truth.consumed += 1;
            }
        }
        self.truth.max_occupancy[qi] = self.truth.max_occupancy[qi].max(self.occupancy[qi]);
        self.truth.min_occupancy[qi] = self.truth.min_occupancy[qi].min(self.occupancy[qi]);
        self.critical_sections.push(CriticalSection { queue: q, tid, start_ns: start, end_ns: now });
    }

    /// Runs instantaneous steps until the thread blocks, starts a timed
    /// step, or finishes.
    fn advance(&mut self, idx: usize, now: u64) {
        loop {
            let t = &self.threads[idx];
            if t.done || t.blocked.is_some() {
                return;
            }
            let step = t.steps[t.pc];
            let (q, role, tid) = (t.queue, t.role, t.tid);
            match step {
                Step::Claim => {
                    let left = &mut self.remaining[q as usize];
                    if *left == 0 {
                        self.threads[idx].done = true;
                        return;
                    }
                    *left -= 1;
                }
                Step::Compute => {
                    if role == Role::Producer && t.items_done == self.cfg.items_per_producer {
                        self.threads[idx].done = true;
                        return;
                    }
                    let (base, work) = match role {
                        Role::Producer => (self.cfg.produce_time_ns, "produce_item"),
                        Role::Consumer => (self.cfg.consume_time_ns, "consume_item"),
                    };
                    let d = self.duration(base);
                    self.sample(now, idx, work, d);
                    self.threads[idx].pc += 1;
                    self.schedule(now + d, idx, 1);
                    return;
                }
                Step::Critical => {
                    let d = self.duration(self.cfg.critical_section_ns);
                    self.sample(now, idx, "critical_section", d);
                    self.threads[idx].in_critical = Some(now);
                    self.threads[idx].pc += 1;
                    self.schedule(now + d, idx, 1);
                    return;
                }
                Step::Wait(kind) => {
                    let sem = SemId { queue: q, kind };
                    if kind == SemKind::Mutex {
                        // Obligation to post the role's semaphore, owed from
                        // the moment the thread goes for the mutex.
                        let duty = SemId { queue: q, kind: role.posts() };
                        self.threads[idx].duty_hold = Some(self.record(tid, duty, now, now, None));
                        self.threads[idx].mutex_request = now;
                    }
                    let s = self.sems.get_mut(&sem).expect("semaphore");
                    if s.count > 0 {
                        s.count -= 1;
                        self.granted(idx, sem, now, now);
                    } else {
                        s.waiters.push_back(idx);
                        self.threads[idx].blocked = Some((kind, now));
                        let t = &self.threads[idx];
                        let stack =
                            vec![frame("sem_wait"), frame(&sem.wait_site()), frame(role.loop_symbol()), frame("main")];
                        let cpu = t.cpu;
                        let ev = self.switch_event(now, Some(idx), "S", None, cpu).with_stack(stack);
                        self.events.push(ev);
                        return;
                    }
                }
                Step::Signal(kind) => {
                    let sem = SemId { queue: q, kind };
                    if kind == SemKind::Mutex {
                        if let Some(at) = self.threads[idx].mutex_hold.take() {
                            self.release(at, now);
                        }
                    }
                    if kind == role.posts() {
                        if let Some(at) = self.threads[idx].duty_hold.take() {
                            self.release(at, now);
                        }
                        if role == Role::Producer {
                            self.threads[idx].items_done += 1;
                        }
                    }
                    let s = self.sems.get_mut(&sem).expect("semaphore");
                    match s.waiters.pop_front() {
                        Some(w) => self.hand_off(idx, w, sem, now),
                        None => s.count += 1,
                    }
                }
            }
            let t = &mut self.threads[idx];
            t.pc = (t.pc + 1) % t.steps.len();
        }
    }

    /// Records a grant for the wait at the thread's current step. The caller
    /// (or the hand-off) moves the program counter on.
    fn granted(&mut self, idx: usize, sem: SemId, request: u64, now: u64) {
        let tid = self.threads[idx].tid;
        if sem.kind == SemKind::Mutex {
            let request = self.threads[idx].mutex_request;
            self.threads[idx].mutex_hold = Some(self.record(tid, sem, request, now, None));
        } else {
            self.record(tid, sem, request, now, Some(now));
        }
    }

    fn hand_off(&mut self, signaler: usize, waiter: usize, sem: SemId, now: u64) {
        let (kind, since) = self.threads[waiter].blocked.take().expect("waiter is blocked");
        debug_assert_eq!(kind, sem.kind);
        let tid = self.threads[waiter].tid;
        let total = self.truth.blocked.entry((tid, sem)).or_default();
        total.ns += now - since;
        total.count += 1;
        self.granted(waiter, sem, since, now);
        let w = &mut self.threads[waiter];
        w.pc = (w.pc + 1) % w.steps.len();
        let (s, w) = (&self.threads[signaler], &self.threads[waiter]);
        let wakeup = TraceEvent::new(s.comm.clone(), SIM_PID, s.tid, s.cpu, ts(now), "sched:sched_wakeup")
            .with_arg("comm", w.comm.clone())
            .with_arg("pid", w.tid.to_string())
            .with_arg("prio", "120")
            .with_arg("target_cpu", format!("{:03}", w.cpu));
        self.events.push(wakeup);
        self.schedule(now, waiter, 0);
    }

    fn close(mut self, end: u64) -> SimOutput {
        for t in &self.threads {
            if let Some((kind, since)) = t.blocked {
                self.truth.open_blocks.push(OpenBlock {
                    tid: t.tid,
                    sem: SemId { queue: t.queue, kind },
                    since_ns: since,
                });
            }
        }
        // Requests that never got through are granted at the end so the
        // lock-order graph sees them; anything still held outlives them.
        let blocked: Vec<(u32, SemId, u64)> =
            self.truth.open_blocks.iter().map(|o| (o.tid, o.sem, o.since_ns)).collect();
        for (tid, sem, since) in blocked {
            let request = if sem.kind == SemKind::Mutex {
                self.threads.iter().find(|t| t.tid == tid).map_or(since, |t| t.mutex_request)
            } else {
                since
            };
            self.record(tid, sem, request, end, Some(end));
        }
        for at in std::mem::take(&mut self.open_release) {
            self.acquisitions[at].release_ts = ts(end + 1);
        }
        self.truth.event_count = self.events.len();
        self.truth.last_event_ns = self.events.last().map_or(0, |e| e.ts.as_nanos());
        SimOutput {
            events: self.events,
            truth: self.truth,
            acquisitions: self.acquisitions,
            critical_sections: self.critical_sections,
        }
    }
}

pub fn simulate(cfg: &SimConfig) -> Result<SimOutput, SimError> {
    cfg.validate()?;
    Ok(Sim::new(cfg).run())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum DiscrepancyKind {
    Mismatch,
    /// Explained by the event list being shorter than the simulated run.
    Truncation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Discrepancy {
    pub kind: DiscrepancyKind,
    pub tid: u32,
    /// `None` for blocked time the analyzer could not tie to a semaphore.
    pub semaphore: Option<String>,
    pub expected_ns: u64,
    pub observed_ns: u64,
    pub expected_count: u64,
    pub observed_count: u64,
    pub note: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ReplayReport {
    pub compared: usize,
    pub truncated_input: bool,
    pub discrepancies: Vec<Discrepancy>,
}

impl ReplayReport {
    pub fn is_clean(&self) -> bool {
        self.discrepancies.is_empty()
    }

    pub fn render(&self) -> String {
        let mut out = format!(
            "compared {} (tid, semaphore) totals; {} discrepancies{}\n",
            self.compared,
            self.discrepancies.len(),
            if self.truncated_input { " (input truncated)" } else { "" }
        );
        for d in &self.discrepancies {
            out.push_str(&format!(
                "{:?} tid={} sem={} expected={}ns/{} observed={}ns/{} {}\n",
                d.kind,
                d.tid,
                d.semaphore.as_deref().unwrap_or("-"),
                d.expected_ns,
                d.expected_count,
                d.observed_ns,
                d.observed_count,
                d.note
            ));
        }
        out
    }
}

/// Re-derives blocked time per `(tid, semaphore)` through the scheduler
/// analysis and compares it with the ledger.
pub fn replay_check(events: &[TraceEvent], truth: &GroundTruth) -> ReplayReport {
    let timelines = build_timelines(events);
    let waits = attribute_offcpu(&timelines, events, &SchedConfig::default());
    let truncated_input =
        events.len() < truth.event_count || events.last().map_or(0, |e| e.ts.as_nanos()) < truth.last_event_ns;
    let kind = if truncated_input { DiscrepancyKind::Truncation } else { DiscrepancyKind::Mismatch };
    let mut report = ReplayReport { truncated_input, ..ReplayReport::default() };

    let mut observed: BTreeMap<(u32, SemId), BlockTotal> = BTreeMap::new();
    let mut lock_ns: BTreeMap<u32, u64> = BTreeMap::new();
    for w in waits.iter().filter(|w| w.kind == WaitKind::Blocked) {
        let sem = w.stack.iter().find_map(|f| f.symbol.as_deref().and_then(SemId::from_wait_site));
        let issue = |note: &str, sem: Option<SemId>| Discrepancy {
            kind,
            tid: w.tid,
            semaphore: sem.map(|s| s.to_string()),
            expected_ns: 0,
            observed_ns: w.duration_ns(),
            expected_count: 0,
            observed_count: 1,
            note: note.to_string(),
        };
        let Some(sem) = sem else {
            report.discrepancies.push(issue("blocked interval without a semaphore wait site", None));
            continue;
        };
        if w.reason != WaitReason::Lock {
            report.discrepancies.push(Discrepancy {
                kind: DiscrepancyKind::Mismatch,
                ..issue(&format!("classified as {}", w.reason), Some(sem))
            });
        }
        if w.truncated {
            let open =
                truth.open_blocks.iter().any(|o| o.tid == w.tid && o.sem == sem && o.since_ns == w.start.as_nanos());
            if !open {
                report.discrepancies.push(issue("block still open at end of trace", Some(sem)));
            }
            continue;
        }
        *lock_ns.entry(w.tid).or_insert(0) += w.duration_ns();
        let e = observed.entry((w.tid, sem)).or_default();
        e.ns += w.duration_ns();
        e.count += 1;
    }

    let mut keys: Vec<(u32, SemId)> = truth.blocked.keys().chain(observed.keys()).copied().collect();
    keys.sort();
    keys.dedup();
    report.compared = keys.len();
    for key in keys {
        let want = truth.blocked.get(&key).copied().unwrap_or_default();
        let got = observed.get(&key).copied().unwrap_or_default();
        if want != got {
            report.discrepancies.push(Discrepancy {
                kind,
                tid: key.0,
                semaphore: Some(key.1.to_string()),
                expected_ns: want.ns,
                observed_ns: got.ns,
                expected_count: want.count,
                observed_count: got.count,
                note: "blocked time differs".into(),
            });
        }
    }

    // The summary path must agree with the per-interval totals.
    let summary = summarize_waits(
        &waits.iter().filter(|w| w.kind == WaitKind::Blocked && !w.truncated).cloned().collect::<Vec<_>>(),
    );
    for (&tid, &ns) in &lock_ns {
        let summed = summary.by_thread.get(&(tid, WaitReason::Lock)).copied().unwrap_or(0);
        if summed != ns {
            report.discrepancies.push(Discrepancy {
                kind: DiscrepancyKind::Mismatch,
                tid,
                semaphore: None,
                expected_ns: ns,
                observed_ns: summed,
                expected_count: 0,
                observed_count: 0,
                note: "wait summary disagrees with intervals".into(),
            });
        }
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::locks::{build_lock_order_graph, detect_deadlock_risk, DEFAULT_MAX_CYCLE_LEN};

    const SEC: u64 = 1_000_000_000;

    fn golden_cfg() -> SimConfig {
        SimConfig {
            producers: 1,
            consumers: 1,
            queues: 1,
            capacity: 1,
            items_per_producer: 2,
            produce_time_ns: SEC,
            consume_time_ns: 3 * SEC,
            critical_section_ns: SEC / 10,
            ..SimConfig::default()
        }
    }

    fn sem(kind: SemKind) -> SemId {
        SemId { queue: 0, kind }
    }

    #[test]
    fn golden_two_items() {
        // Hand-enumerated:
        //   0.0  consumer blocks on full; producer computes until 1.0
        //   1.0  producer takes empty and mutex, adds until 1.1, posts full
        //   1.1  consumer wakes, removes until 1.2; producer computes until 2.1
        //   2.1  producer finds empty at 0 and blocks
        //   1.2  consumer consumes until 4.2, then posts empty
        //   4.2  producer wakes and adds until 4.3; consumer claims the last
        //        item and blocks on full again
        //   4.3  producer posts full; consumer removes until 4.4, consumes
        //        until 7.4
        let out = simulate(&golden_cfg()).unwrap();
        let t = &out.truth;
        let producer = FIRST_TID;
        let consumer = FIRST_TID + 1;
        assert_eq!(t.blocked[&(producer, sem(SemKind::Empty))], BlockTotal { ns: 2_100_000_000, count: 1 });
        assert_eq!(t.blocked[&(consumer, sem(SemKind::Full))], BlockTotal { ns: 1_200_000_000, count: 2 });
        assert_eq!(t.blocked.len(), 2);
        assert_eq!(t.completion_ns, Some(7_400_000_000));
        assert_eq!((t.produced, t.consumed), (2, 2));
        assert!(!t.deadlocked);
        assert!(replay_check(&out.events, t).is_clean());
    }

    #[test]
    fn roomy_buffer_never_blocks_producer() {
        let cfg = SimConfig { capacity: 5, items_per_producer: 5, ..golden_cfg() };
        let out = simulate(&cfg).unwrap();
        assert!(!out.truth.blocked.contains_key(&(FIRST_TID, sem(SemKind::Empty))));
        // the consumer starts out blocked on an empty buffer
        assert!(out.truth.blocked[&(FIRST_TID + 1, sem(SemKind::Full))].count >= 1);
    }

    #[test]
    fn config_errors() {
        for cfg in [
            SimConfig { consumers: 0, ..SimConfig::default() },
            SimConfig { produce_time_ns: 0, ..SimConfig::default() },
            SimConfig { critical_section_ns: 0, ..SimConfig::default() },
            SimConfig { queues: 3, ..SimConfig::default() },
            SimConfig { jitter: 1.5, ..SimConfig::default() },
        ] {
            assert!(matches!(simulate(&cfg), Err(SimError::Config(_))), "{cfg:?}");
        }
    }

    #[test]
    fn splitmix_reference_values() {
        // First outputs for seed 0 of the reference SplitMix64.
        let mut rng = SplitMix64::new(0);
        assert_eq!(rng.next_u64(), 0xE220_A839_7B1D_CDAF);
        assert_eq!(rng.next_u64(), 0x6E78_9E6A_A1B9_65F4);
        let mut rng = SplitMix64::new(7);
        for _ in 0..1000 {
            let u = rng.next_signed_unit();
            assert!((-1.0..1.0).contains(&u));
        }
    }

    #[test]
    fn wait_site_round_trip() {
        for kind in [SemKind::Empty, SemKind::Full, SemKind::Mutex] {
            let s = SemId { queue: 12, kind };
            assert_eq!(SemId::from_wait_site(&s.wait_site()), Some(s));
        }
        assert_eq!(SemId::from_wait_site("wait_lock_0"), None);
    }

    #[test]
    fn replay_of_nothing_is_empty() {
        let report = replay_check(&[], &GroundTruth::default());
        assert!(report.is_clean());
        assert_eq!(report.compared, 0);
    }

    #[test]
    fn truncated_trace_is_flagged_as_truncation() {
        let cfg = SimConfig { producers: 2, consumers: 2, capacity: 1, items_per_producer: 20, ..SimConfig::default() };
        let out = simulate(&cfg).unwrap();
        let keep = out.events.len() * 9 / 10;
        let report = replay_check(&out.events[..keep], &out.truth);
        assert!(report.truncated_input);
        assert!(!report.is_clean());
        assert!(report.discrepancies.iter().all(|d| d.kind == DiscrepancyKind::Truncation));
    }

    #[test]
    fn determinism_and_ledger_json() {
        let cfg = SimConfig { jitter: 0.2, seed: 42, producers: 3, consumers: 2, queues: 2, ..SimConfig::default() };
        let a = simulate(&cfg).unwrap();
        let b = simulate(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.truth.to_json(), b.truth.to_json());
        let other = simulate(&SimConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.events, other.events);
    }

    #[test]
    fn inverted_order_can_deadlock_and_shows_a_cycle() {
        let cfg =
            SimConfig { producers: 2, consumers: 2, capacity: 1, inverted_wait_order: true, ..SimConfig::default() };
        let out = simulate(&cfg).unwrap();
        assert!(out.truth.deadlocked);
        let cycles = detect_deadlock_risk(&build_lock_order_graph(&out.acquisitions), DEFAULT_MAX_CYCLE_LEN);
        assert!(!cycles.is_empty());
        // blocked threads are open in the ledger and in the replay alike
        assert!(!out.truth.open_blocks.is_empty());
        assert!(replay_check(&out.events, &out.truth).is_clean());
    }

    #[test]
    fn documented_order_has_no_lock_cycles() {
        for seed in 0..20 {
            let cfg = SimConfig { producers: 3, consumers: 2, capacity: 1, seed, jitter: 0.2, ..SimConfig::default() };
            let out = simulate(&cfg).unwrap();
            assert!(out.truth.completion_ns.is_some());
            let g = build_lock_order_graph(&out.acquisitions);
            assert!(detect_deadlock_risk(&g, DEFAULT_MAX_CYCLE_LEN).is_empty(), "seed {seed}: {:?}", g.edges);
        }
    }
}
