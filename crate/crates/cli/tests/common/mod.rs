//! Random inputs and brute-force oracles shared by the integration tests.
#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use latprof::{Frame, Rational, Timestamp, TraceEvent};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

const COMMS: [&str; 5] = ["gzip", "scp", "sshd", "nginx", "kworker/0:1"];
const FRAMES: [(&str, &str); 7] = [
    ("main", "app"),
    ("foo", "app"),
    ("bar", "app"),
    ("memcpy", "libc.so.6"),
    ("deflate", "libz.so.1"),
    ("pthread_mutex_lock", "libpthread.so.0"),
    ("schedule", "[kernel.kallsyms]"),
];

fn comm_of(tid: u32) -> &'static str {
    COMMS[(tid as usize - 1) % COMMS.len()]
}

fn random_stack(rng: &mut ChaCha8Rng) -> Vec<Frame> {
    let depth = rng.gen_range(0..=4);
    (0..depth)
        .map(|_| {
            let (sym, dso) = FRAMES[rng.gen_range(0..FRAMES.len())];
            Frame::new(rng.gen_range(0x1000..0x00ff_ffff_u64), sym, dso)
        })
        .collect()
}

/// A perf-like trace: samples, scheduler switches and wakeups, syscalls,
/// block and network events, in non-decreasing time order.
pub fn random_trace(rng: &mut ChaCha8Rng, max_events: usize) -> Vec<TraceEvent> {
    let threads = rng.gen_range(1..=4u32);
    let n = rng.gen_range(0..=max_events);
    let mut ts = 1_000 * 1_000_000_000 + rng.gen_range(0..1_000_000_000u64);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        ts += match rng.gen_range(0..4) {
            0 => 0,
            1 => rng.gen_range(1..1_000),
            2 => rng.gen_range(1_000..5_000_000),
            _ => rng.gen_range(5_000_000..700_000_000),
        };
        let tid = rng.gen_range(1..=threads);
        let cpu = rng.gen_range(0..4);
        let at = Timestamp::from_nanos(ts);
        let base = |event: &str| TraceEvent::new(comm_of(tid), 100 + tid % 2, tid, cpu, at, event);
        let ev = match rng.gen_range(0..100) {
            0..=39 => {
                let period = if rng.gen_bool(0.2) { 1 } else { rng.gen_range(1..2_000_000) };
                let name = if rng.gen_bool(0.9) { "cpu-clock" } else { "cycles" };
                base(name).with_period(period).with_stack(random_stack(rng))
            }
            40..=64 => {
                let next = if threads > 1 && rng.gen_bool(0.8) {
                    let mut n = rng.gen_range(1..=threads);
                    while n == tid {
                        n = rng.gen_range(1..=threads);
                    }
                    n
                } else {
                    0
                };
                let state = ["R", "S", "D", "R+"][rng.gen_range(0..4)];
                let next_comm = if next == 0 { "swapper/0" } else { comm_of(next) };
                base("sched:sched_switch")
                    .with_arg("prev_comm", comm_of(tid))
                    .with_arg("prev_pid", tid.to_string())
                    .with_arg("prev_prio", "120")
                    .with_arg("prev_state", state)
                    .with_arg("next_comm", next_comm)
                    .with_arg("next_pid", next.to_string())
                    .with_arg("next_prio", "120")
                    .with_stack(random_stack(rng))
            }
            65..=79 => {
                let target = rng.gen_range(1..=threads);
                base("sched:sched_wakeup")
                    .with_arg("comm", comm_of(target))
                    .with_arg("pid", target.to_string())
                    .with_arg("prio", "120")
                    .with_arg("target_cpu", "000")
            }
            80..=89 => {
                let call = ["read", "futex", "nanosleep", "recvfrom"][rng.gen_range(0..4)];
                if rng.gen_bool(0.5) {
                    base(&format!("syscalls:sys_enter_{call}")).with_arg("raw", "fd: 0x00000003")
                } else {
                    base(&format!("syscalls:sys_exit_{call}")).with_arg("raw", "0x0")
                }
            }
            _ => {
                if rng.gen_bool(0.5) {
                    base("block:block_rq_issue").with_arg("raw", "8,0 W 4096 () 1234 + 8 [gzip]")
                } else {
                    base("net:net_dev_xmit").with_arg("raw", "dev=eth0 skbaddr=0xffff len=1514 rc=0")
                }
            }
        };
        out.push(ev);
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Dag,
    /// Any directed edges, self-loops included.
    Directed,
    /// One edge per unordered pair at most, no self-loops.
    Undirected,
}

pub fn r(n: i128) -> Rational {
    Rational::from_integer(n)
}

pub fn node(i: usize) -> String {
    ((b'a' + i as u8) as char).to_string()
}

/// Random edge list over `a..`; weights are small integers, zero included.
pub fn random_edges(rng: &mut ChaCha8Rng, n: usize, density: f64, shape: Shape) -> Vec<(String, String, Rational)> {
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            let keep = match shape {
                // Only edges forward in the shuffled order.
                Shape::Dag => order.iter().position(|&x| x == i) < order.iter().position(|&x| x == j),
                Shape::Directed => true,
                Shape::Undirected => i < j,
            };
            if !keep {
                continue;
            }
            if rng.gen_bool(density) {
                edges.push((node(i), node(j), r(rng.gen_range(0..10))));
            }
        }
    }
    edges
}

fn adjacency(edges: &[(String, String, Rational)], directed: bool) -> BTreeMap<String, Vec<(String, Rational)>> {
    let mut adj: BTreeMap<String, Vec<(String, Rational)>> = BTreeMap::new();
    for (a, b, w) in edges {
        adj.entry(a.clone()).or_default().push((b.clone(), *w));
        adj.entry(b.clone()).or_default();
        if !directed && a != b {
            adj.entry(b.clone()).or_default().push((a.clone(), *w));
        }
    }
    adj
}

/// Every simple path from `from`, with its weight. Parallel edges give
/// one entry per edge choice.
pub fn all_simple_paths(
    edges: &[(String, String, Rational)],
    directed: bool,
    from: &str,
) -> Vec<(Vec<String>, Rational)> {
    let adj = adjacency(edges, directed);
    let mut out = Vec::new();
    let mut stack = vec![(vec![from.to_string()], r(0))];
    while let Some((path, w)) = stack.pop() {
        let last = path.last().unwrap().clone();
        out.push((path.clone(), w));
        for (next, ew) in adj.get(&last).into_iter().flatten() {
            if !path.contains(next) {
                let mut p = path.clone();
                p.push(next.clone());
                stack.push((p, w + ew));
            }
        }
    }
    out
}

/// Minimum over simple paths of (distance, node sequence).
pub fn brute_shortest(
    edges: &[(String, String, Rational)],
    directed: bool,
    s: &str,
    t: &str,
) -> Option<(Vec<String>, Rational)> {
    all_simple_paths(edges, directed, s)
        .into_iter()
        .filter(|(p, _)| p.last().unwrap() == t)
        .min_by(|a, b| a.1.cmp(&b.1).then_with(|| a.0.cmp(&b.0)))
}

/// Maximum over paths from `s` of weight, ties to the smaller sequence.
pub fn brute_longest(edges: &[(String, String, Rational)], s: &str) -> (Vec<String>, Rational) {
    all_simple_paths(edges, true, s).into_iter().min_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0))).unwrap()
}

/// Minimum spanning tree weight by trying every (n-1)-subset of edges.
pub fn brute_mst_weight(nodes: &BTreeSet<String>, edges: &[(String, String, Rational)]) -> Option<Rational> {
    let n = nodes.len();
    if n <= 1 {
        return Some(r(0));
    }
    let idx: BTreeMap<&String, usize> = nodes.iter().enumerate().map(|(i, s)| (s, i)).collect();
    let mut best: Option<Rational> = None;
    let mut pick = Vec::with_capacity(n - 1);
    combinations(edges.len(), n - 1, 0, &mut pick, &mut |chosen| {
        let mut comp: Vec<usize> = (0..n).collect();
        let mut total = r(0);
        for &k in chosen {
            let (a, b, w) = &edges[k];
            let (x, y) = (comp[idx[a]], comp[idx[b]]);
            if x == y {
                return;
            }
            for c in comp.iter_mut() {
                if *c == x {
                    *c = y;
                }
            }
            total += w;
        }
        if best.is_none_or(|b| total < b) {
            best = Some(total);
        }
    });
    best
}

fn combinations(m: usize, k: usize, from: usize, pick: &mut Vec<usize>, visit: &mut dyn FnMut(&[usize])) {
    if pick.len() == k {
        visit(pick);
        return;
    }
    for i in from..m {
        if m - i < k - pick.len() {
            break;
        }
        pick.push(i);
        combinations(m, k, i + 1, pick, visit);
        pick.pop();
    }
}

/// Elementary directed cycles up to `max_len` nodes, smallest node first,
/// found by trying every sequence of distinct nodes.
pub fn brute_cycles(
    nodes: &BTreeSet<String>,
    edges: &[(String, String, Rational)],
    max_len: usize,
) -> Vec<Vec<String>> {
    let has: BTreeSet<(&str, &str)> = edges.iter().map(|(a, b, _)| (a.as_str(), b.as_str())).collect();
    let nodes: Vec<&str> = nodes.iter().map(String::as_str).collect();
    let mut found = BTreeSet::new();
    fn extend<'a>(
        seq: &mut Vec<&'a str>,
        nodes: &[&'a str],
        has: &BTreeSet<(&str, &str)>,
        max_len: usize,
        found: &mut BTreeSet<Vec<String>>,
    ) {
        let first = seq[0];
        let last = *seq.last().unwrap();
        // Only sequences starting at their smallest node, so each cycle is
        // seen once per rotation class.
        if has.contains(&(last, first)) {
            found.insert(seq.iter().map(|s| s.to_string()).collect());
        }
        if seq.len() == max_len {
            return;
        }
        for &n in nodes {
            if n > first && !seq.contains(&n) && has.contains(&(last, n)) {
                seq.push(n);
                extend(seq, nodes, has, max_len, found);
                seq.pop();
            }
        }
    }
    for &start in &nodes {
        extend(&mut vec![start], &nodes, &has, max_len, &mut found);
    }
    found.into_iter().collect()
}
