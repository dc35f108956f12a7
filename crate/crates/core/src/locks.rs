//! Lock contention statistics and lock-order cycle detection.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::graph::elementary_cycles;
use crate::model::Timestamp;
use crate::num::{ns_to_ms, Rational};
use crate::parse::{MutexStats, ParseError, ParseMode, Parsed};

pub const DEFAULT_MAX_CYCLE_LEN: usize = 8;

pub const ACQUISITIONS_HEADER: [&str; 5] = ["tid", "lock_id", "request_ts", "grant_ts", "release_ts"];

/// One lock acquisition: asked for at `request_ts`, obtained at `grant_ts`,
/// let go at `release_ts`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LockAcquisition {
    pub tid: u32,
    pub lock_id: u64,
    pub request_ts: Timestamp,
    pub grant_ts: Timestamp,
    pub release_ts: Timestamp,
}

impl LockAcquisition {
    pub fn wait_ns(&self) -> u64 {
        self.grant_ts.as_nanos() - self.request_ts.as_nanos()
    }

    pub fn hold_ns(&self) -> u64 {
        self.release_ts.as_nanos() - self.grant_ts.as_nanos()
    }

    fn is_ordered(&self) -> bool {
        self.request_ts <= self.grant_ts && self.grant_ts <= self.release_ts
    }
}

/// Which span feeds the time columns of [`contention_stats`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TimeBasis {
    /// `grant - request`: time spent waiting for the lock.
    #[default]
    Wait,
    /// `release - grant`: time the lock was held, as mutrace itself reports.
    Hold,
}

/// Per-lock statistics in mutrace's columns, ordered by lock id.
///
/// `changed` counts grants whose thread differs from the previous grant's
/// thread on the same lock, taking grants in time order.
pub fn contention_stats(acquisitions: &[LockAcquisition], basis: TimeBasis) -> Vec<MutexStats> {
    let mut per_lock: BTreeMap<u64, Vec<(usize, &LockAcquisition)>> = BTreeMap::new();
    for (i, a) in acquisitions.iter().enumerate() {
        per_lock.entry(a.lock_id).or_default().push((i, a));
    }
    per_lock
        .into_iter()
        .map(|(lock_id, mut grants)| {
            grants.sort_by_key(|&(i, a)| (a.grant_ts, i));
            let changed = grants.windows(2).filter(|w| w[0].1.tid != w[1].1.tid).count() as u64;
            let contended = grants.iter().filter(|(_, a)| a.grant_ts > a.request_ts).count() as u64;
            let spans = grants.iter().map(|(_, a)| match basis {
                TimeBasis::Wait => a.wait_ns(),
                TimeBasis::Hold => a.hold_ns(),
            });
            let total_ns: u64 = spans.clone().sum();
            let max_ns = spans.max().unwrap_or(0);
            let locked = grants.len() as u64;
            let total_ms = ns_to_ms(total_ns);
            MutexStats {
                mutex_id: lock_id,
                locked,
                changed,
                contended,
                total_ms,
                avg_ms: total_ms / Rational::from_integer(i128::from(locked)),
                max_ms: ns_to_ms(max_ns),
                flags: String::new(),
            }
        })
        .collect()
}

/// Edges `held -> acquired` with occurrence counts.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LockOrderGraph {
    pub nodes: BTreeSet<u64>,
    pub edges: BTreeMap<(u64, u64), u64>,
    /// Grants of a lock the thread already held.
    pub reentrant: u64,
}

impl LockOrderGraph {
    pub fn successors(&self) -> BTreeMap<u64, BTreeSet<u64>> {
        let mut succ: BTreeMap<u64, BTreeSet<u64>> = self.nodes.iter().map(|&n| (n, BTreeSet::new())).collect();
        for &(a, b) in self.edges.keys() {
            succ.entry(a).or_default().insert(b);
        }
        succ
    }
}

/// A lock counts as held by its thread from its grant until strictly before
/// its release, so zero-length holds never nest anything.
pub fn build_lock_order_graph(acquisitions: &[LockAcquisition]) -> LockOrderGraph {
    let mut graph = LockOrderGraph::default();
    let mut per_tid: BTreeMap<u32, Vec<(usize, &LockAcquisition)>> = BTreeMap::new();
    for (i, a) in acquisitions.iter().enumerate() {
        graph.nodes.insert(a.lock_id);
        per_tid.entry(a.tid).or_default().push((i, a));
    }
    for list in per_tid.values_mut() {
        list.sort_by_key(|&(i, a)| (a.grant_ts, i));
        let mut held: Vec<&LockAcquisition> = Vec::new();
        for &(_, b) in list.iter() {
            held.retain(|a| a.release_ts > b.grant_ts);
            for a in &held {
                if a.lock_id == b.lock_id {
                    graph.reentrant += 1;
                } else {
                    *graph.edges.entry((a.lock_id, b.lock_id)).or_insert(0) += 1;
                }
            }
            held.push(b);
        }
    }
    graph
}

/// Elementary lock-order cycles of at most `max_len` locks.
pub fn detect_deadlock_risk(graph: &LockOrderGraph, max_len: usize) -> Vec<Vec<u64>> {
    elementary_cycles(&graph.successors(), max_len)
}

/// `tid,lock_id,request_ts,grant_ts,release_ts` with timestamps in seconds.
pub fn parse_acquisitions(text: &str, mode: ParseMode) -> Result<Parsed<LockAcquisition>, ParseError> {
    let mut reader = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(text.as_bytes());
    let header_ok = reader.headers().map(|h| h.iter().eq(ACQUISITIONS_HEADER.iter().copied())).unwrap_or(false);
    if !header_ok {
        return Err(ParseError::MissingHeader);
    }
    let mut items = Vec::new();
    let mut errors = Vec::new();
    for record in reader.records() {
        let (line, result) = match record {
            Ok(rec) => (rec.position().map_or(0, |p| p.line() as usize), acquisition_from_record(&rec)),
            Err(e) => (e.position().map_or(0, |p| p.line() as usize), Err(e.to_string())),
        };
        match result {
            Ok(a) => items.push(a),
            Err(reason) => {
                let err = ParseError::MalformedRow { line, reason };
                if mode == ParseMode::Strict {
                    return Err(err);
                }
                errors.push(err);
            }
        }
    }
    Ok(Parsed { items, errors })
}

fn acquisition_from_record(rec: &csv::StringRecord) -> Result<LockAcquisition, String> {
    if rec.len() != 5 {
        return Err(format!("expected 5 fields, found {}", rec.len()));
    }
    let ts = |i: usize| Timestamp::parse(&rec[i]).ok_or_else(|| format!("bad timestamp `{}`", &rec[i]));
    let a = LockAcquisition {
        tid: rec[0].parse().map_err(|_| format!("bad tid `{}`", &rec[0]))?,
        lock_id: rec[1].parse().map_err(|_| format!("bad lock id `{}`", &rec[1]))?,
        request_ts: ts(2)?,
        grant_ts: ts(3)?,
        release_ts: ts(4)?,
    };
    if !a.is_ordered() {
        return Err("expected request <= grant <= release".into());
    }
    Ok(a)
}

pub fn acquisitions_to_csv(acquisitions: &[LockAcquisition]) -> String {
    let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
    writer.write_record(ACQUISITIONS_HEADER).expect("in-memory write");
    for a in acquisitions {
        writer
            .write_record([
                a.tid.to_string(),
                a.lock_id.to_string(),
                a.request_ts.format_full(),
                a.grant_ts.format_full(),
                a.release_ts.format_full(),
            ])
            .expect("in-memory write");
    }
    String::from_utf8(writer.into_inner().expect("in-memory flush")).expect("ascii")
}

/// Total wait per lock, for quick summaries.
pub fn total_wait_ns(acquisitions: &[LockAcquisition]) -> BTreeMap<u64, u64> {
    let mut out = BTreeMap::new();
    for a in acquisitions {
        *out.entry(a.lock_id).or_insert(0) += a.wait_ns();
    }
    out
}
