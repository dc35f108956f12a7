//! Flat profiles, weighted call graphs and per-thread dynamic call trees.
//!
//! Stacks are stored leaf first, as perf prints them. Sample weight is the
//! event period (1 when the trace carries none; a zero period also counts
//! as 1 so that every sample is visible).

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::Serialize;
use thiserror::Error;

use crate::model::{EventClass, Frame, TraceEvent, UNKNOWN_SYMBOL};
use crate::num::Rational;
use crate::parse::{GprofRow, ImageProfileRow};
use crate::sched::stack_signature;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ProfileError {
    #[error("no sample events matched")]
    NoSamples,
    #[error("profiles with different groupings cannot be merged")]
    GroupingMismatch,
}

/// Which events count as samples.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum SampleFilter {
    #[default]
    CpuClock,
    /// Qualified event name, e.g. `cycles` or `sched:sched_switch`.
    Event(String),
    All,
}

impl SampleFilter {
    pub fn matches(&self, ev: &TraceEvent) -> bool {
        match self {
            SampleFilter::CpuClock => ev.class == EventClass::CpuClock,
            SampleFilter::Event(name) => ev.event == *name,
            SampleFilter::All => true,
        }
    }
}

fn weight_of(ev: &TraceEvent) -> u64 {
    ev.period.max(1)
}

/// Subset of `{comm, dso, symbol}` a flat profile is keyed by.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GroupBy {
    pub comm: bool,
    pub dso: bool,
    pub symbol: bool,
}

impl GroupBy {
    pub const COMM: GroupBy = GroupBy { comm: true, dso: false, symbol: false };
    pub const COMM_DSO: GroupBy = GroupBy { comm: true, dso: true, symbol: false };
    pub const ALL: GroupBy = GroupBy { comm: true, dso: true, symbol: true };
}

impl Default for GroupBy {
    fn default() -> Self {
        GroupBy::ALL
    }
}

impl FromStr for GroupBy {
    type Err = String;

    /// Comma-separated field names, e.g. `comm,dso`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut g = GroupBy { comm: false, dso: false, symbol: false };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            match part {
                "comm" => g.comm = true,
                "dso" => g.dso = true,
                "symbol" | "sym" => g.symbol = true,
                other => return Err(format!("unknown grouping field `{other}`")),
            }
        }
        Ok(g)
    }
}

impl fmt::Display for GroupBy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = [(self.comm, "comm"), (self.dso, "dso"), (self.symbol, "symbol")]
            .into_iter()
            .filter_map(|(on, name)| on.then_some(name))
            .collect();
        f.write_str(&parts.join(","))
    }
}

/// Profile key; components not grouped on are `None`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct ProfileKey {
    pub comm: Option<String>,
    pub dso: Option<String>,
    pub symbol: Option<String>,
}

impl ProfileKey {
    fn of(ev: &TraceEvent, group: GroupBy) -> Self {
        let leaf = ev.leaf();
        ProfileKey {
            comm: group.comm.then(|| ev.comm.clone()),
            dso: if group.dso { leaf.and_then(|f| f.dso.clone()) } else { None },
            symbol: group.symbol.then(|| leaf.map_or(UNKNOWN_SYMBOL, Frame::symbol_or_unknown).to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatProfileRow {
    pub key: ProfileKey,
    pub samples: u64,
    pub weight: u64,
    /// Exact share of the total weight, 0..=100.
    pub percent: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlatProfile {
    pub group_by: GroupBy,
    pub rows: Vec<FlatProfileRow>,
    pub total_samples: u64,
    pub total_weight: u64,
}

impl FlatProfile {
    fn from_weights(group_by: GroupBy, weights: BTreeMap<ProfileKey, (u64, u64)>) -> Self {
        let total_samples = weights.values().map(|w| w.0).sum();
        let total_weight: u64 = weights.values().map(|w| w.1).sum();
        let mut rows: Vec<FlatProfileRow> = weights
            .into_iter()
            .map(|(key, (samples, weight))| FlatProfileRow {
                key,
                samples,
                weight,
                percent: Rational::new(i128::from(weight) * 100, i128::from(total_weight.max(1))),
            })
            .collect();
        sort_rows(&mut rows);
        FlatProfile { group_by, rows, total_samples, total_weight }
    }

    /// Rows taken as printed by another profiler (gprof, oprofile, a saved
    /// report). Weights are unknown and left at zero.
    pub fn prebuilt(group_by: GroupBy, mut rows: Vec<FlatProfileRow>) -> Self {
        sort_rows(&mut rows);
        FlatProfile { group_by, rows, total_samples: 0, total_weight: 0 }
    }

    pub fn from_gprof(rows: &[GprofRow]) -> Self {
        let rows = rows
            .iter()
            .map(|r| FlatProfileRow {
                key: ProfileKey { comm: None, dso: None, symbol: Some(r.name.clone()) },
                samples: 0,
                weight: 0,
                percent: r.percent_time,
            })
            .collect();
        FlatProfile::prebuilt(GroupBy { comm: false, dso: false, symbol: true }, rows)
    }

    pub fn from_image_rows(rows: &[ImageProfileRow]) -> Self {
        let rows = rows
            .iter()
            .map(|r| FlatProfileRow {
                key: ProfileKey { comm: None, dso: Some(r.image.clone()), symbol: Some(r.symbol.clone()) },
                samples: 0,
                weight: 0,
                percent: r.percent,
            })
            .collect();
        FlatProfile::prebuilt(GroupBy { comm: false, dso: true, symbol: true }, rows)
    }

    /// Combines weights and recomputes percentages.
    pub fn merge(&self, other: &FlatProfile) -> Result<FlatProfile, ProfileError> {
        if self.group_by != other.group_by {
            return Err(ProfileError::GroupingMismatch);
        }
        let mut weights: BTreeMap<ProfileKey, (u64, u64)> = BTreeMap::new();
        for row in self.rows.iter().chain(&other.rows) {
            let e = weights.entry(row.key.clone()).or_insert((0, 0));
            e.0 += row.samples;
            e.1 += row.weight;
        }
        Ok(FlatProfile::from_weights(self.group_by, weights))
    }
}

fn sort_rows(rows: &mut [FlatProfileRow]) {
    rows.sort_by(|a, b| b.percent.cmp(&a.percent).then_with(|| a.key.cmp(&b.key)));
}

pub fn flat_profile(
    events: &[TraceEvent],
    group_by: GroupBy,
    filter: &SampleFilter,
) -> Result<FlatProfile, ProfileError> {
    let mut weights: BTreeMap<ProfileKey, (u64, u64)> = BTreeMap::new();
    for ev in events.iter().filter(|e| filter.matches(e)) {
        let e = weights.entry(ProfileKey::of(ev, group_by)).or_insert((0, 0));
        e.0 += 1;
        e.1 += weight_of(ev);
    }
    if weights.is_empty() {
        return Err(ProfileError::NoSamples);
    }
    Ok(FlatProfile::from_weights(group_by, weights))
}

pub fn top_n(rows: &[FlatProfileRow], n: usize) -> &[FlatProfileRow] {
    &rows[..n.min(rows.len())]
}

/// Call-graph node identity.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct NodeKey {
    pub symbol: String,
    pub dso: Option<String>,
}

impl NodeKey {
    fn of(frame: &Frame) -> Self {
        NodeKey { symbol: frame.symbol_or_unknown().to_string(), dso: frame.dso.clone() }
    }
}

impl fmt::Display for NodeKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.dso {
            Some(dso) => write!(f, "{} ({})", self.symbol, dso),
            None => f.write_str(&self.symbol),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct NodeWeight {
    pub inclusive: u64,
    pub exclusive: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct CallGraph {
    pub nodes: BTreeMap<NodeKey, NodeWeight>,
    /// `(caller, callee)` edge weights.
    pub edges: BTreeMap<(NodeKey, NodeKey), u64>,
    /// Weight of the samples that carried a stack.
    pub total_weight: u64,
}

impl CallGraph {
    pub fn merge(&mut self, other: &CallGraph) {
        for (k, w) in &other.nodes {
            let e = self.nodes.entry(k.clone()).or_default();
            e.inclusive += w.inclusive;
            e.exclusive += w.exclusive;
        }
        for (k, w) in &other.edges {
            *self.edges.entry(k.clone()).or_insert(0) += w;
        }
        self.total_weight += other.total_weight;
    }
}

/// Adjacent frames add the sample weight to their edge, the leaf to its
/// exclusive weight, and every distinct frame once to its inclusive weight.
pub fn build_call_graph(events: &[TraceEvent], filter: &SampleFilter) -> CallGraph {
    let mut graph = CallGraph::default();
    for ev in events.iter().filter(|e| filter.matches(e) && !e.stack.is_empty()) {
        let w = weight_of(ev);
        graph.total_weight += w;
        let keys: Vec<NodeKey> = ev.stack.iter().map(NodeKey::of).collect();
        graph.nodes.entry(keys[0].clone()).or_default().exclusive += w;
        let mut seen: Vec<&NodeKey> = Vec::with_capacity(keys.len());
        for k in &keys {
            if !seen.contains(&k) {
                seen.push(k);
                graph.nodes.entry(k.clone()).or_default().inclusive += w;
            }
        }
        for pair in keys.windows(2) {
            *graph.edges.entry((pair[1].clone(), pair[0].clone())).or_insert(0) += w;
        }
    }
    graph
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TreeNode {
    pub key: NodeKey,
    /// Samples whose root-first path passes through this node.
    pub samples: u64,
    pub weight: u64,
    /// Indices into [`DynamicCallTree::nodes`], in order of first appearance.
    pub children: Vec<usize>,
}

/// Per-thread prefix tree of root-first call paths. Node 0 is a synthetic
/// root counting every sample of the thread.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DynamicCallTree {
    pub tid: u32,
    pub nodes: Vec<TreeNode>,
}

impl DynamicCallTree {
    pub const ROOT: usize = 0;

    pub fn root(&self) -> &TreeNode {
        &self.nodes[Self::ROOT]
    }

    fn child(&mut self, parent: usize, key: &NodeKey) -> usize {
        if let Some(&c) = self.nodes[parent].children.iter().find(|&&c| self.nodes[c].key == *key) {
            return c;
        }
        let idx = self.nodes.len();
        self.nodes.push(TreeNode { key: key.clone(), samples: 0, weight: 0, children: Vec::new() });
        self.nodes[parent].children.push(idx);
        idx
    }

    /// Indented `symbol samples` lines, depth first.
    pub fn render(&self) -> String {
        fn walk(tree: &DynamicCallTree, at: usize, depth: usize, out: &mut String) {
            for &c in &tree.nodes[at].children {
                let n = &tree.nodes[c];
                out.push_str(&format!("{}{} {}\n", "  ".repeat(depth), n.key, n.samples));
                walk(tree, c, depth + 1, out);
            }
        }
        let mut out = format!("tid {} {}\n", self.tid, self.root().samples);
        walk(self, Self::ROOT, 1, &mut out);
        out
    }
}

pub fn build_dynamic_call_tree(
    events: &[TraceEvent],
    tid: u32,
    filter: &SampleFilter,
) -> Result<DynamicCallTree, ProfileError> {
    let mut tree = DynamicCallTree {
        tid,
        nodes: vec![TreeNode {
            key: NodeKey { symbol: "[root]".into(), dso: None },
            samples: 0,
            weight: 0,
            children: Vec::new(),
        }],
    };
    for ev in events.iter().filter(|e| e.tid == tid && filter.matches(e)) {
        let w = weight_of(ev);
        let mut at = DynamicCallTree::ROOT;
        tree.nodes[at].samples += 1;
        tree.nodes[at].weight += w;
        for frame in ev.stack.iter().rev() {
            at = tree.child(at, &NodeKey::of(frame));
            tree.nodes[at].samples += 1;
            tree.nodes[at].weight += w;
        }
    }
    if tree.root().samples == 0 {
        return Err(ProfileError::NoSamples);
    }
    Ok(tree)
}

/// Collapsed stacks (`root;...;leaf` → weight), the flame-graph input form.
pub fn collapse_stacks(events: &[TraceEvent], filter: &SampleFilter) -> BTreeMap<String, u64> {
    let mut out = BTreeMap::new();
    for ev in events.iter().filter(|e| filter.matches(e)) {
        *out.entry(stack_signature(&ev.stack)).or_insert(0) += weight_of(ev);
    }
    out
}
