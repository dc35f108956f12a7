//! Weighted graph algorithms over opaque text node ids.
//!
//! Weights are exact rationals and must be non-negative. Every algorithm
//! breaks ties by the lexicographically smallest node sequence, so results
//! are stable across runs and platforms.

use std::cmp::{Ordering, Reverse};
use std::collections::{BTreeMap, BTreeSet, BinaryHeap};

use num_traits::Zero;
use thiserror::Error;

use crate::num::{parse_decimal, Rational};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GraphError {
    #[error("negative weight on edge {from} -> {to}")]
    NegativeWeight { from: String, to: String },
    #[error("graph has a cycle: {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("{to} is unreachable from {from}")]
    Unreachable { from: String, to: String },
    #[error("graph is disconnected")]
    Disconnected,
    #[error("unknown node `{0}`")]
    UnknownNode(String),
    #[error("operation needs the graph to be {0}")]
    WrongKind(&'static str),
    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Edge {
    pub from: String,
    pub to: String,
    pub weight: Rational,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Graph {
    directed: bool,
    nodes: BTreeSet<String>,
    edges: Vec<Edge>,
}

impl Graph {
    pub fn new(directed: bool) -> Self {
        Graph { directed, nodes: BTreeSet::new(), edges: Vec::new() }
    }

    pub fn from_edges<'a>(
        directed: bool,
        edges: impl IntoIterator<Item = (&'a str, &'a str, Rational)>,
    ) -> Result<Self, GraphError> {
        let mut g = Graph::new(directed);
        for (from, to, w) in edges {
            g.add_edge(from, to, w)?;
        }
        Ok(g)
    }

    pub fn is_directed(&self) -> bool {
        self.directed
    }

    pub fn nodes(&self) -> &BTreeSet<String> {
        &self.nodes
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn add_node(&mut self, id: impl Into<String>) {
        self.nodes.insert(id.into());
    }

    pub fn add_edge(
        &mut self,
        from: impl Into<String>,
        to: impl Into<String>,
        weight: Rational,
    ) -> Result<(), GraphError> {
        let (from, to) = (from.into(), to.into());
        if weight < Rational::zero() {
            return Err(GraphError::NegativeWeight { from, to });
        }
        self.nodes.insert(from.clone());
        self.nodes.insert(to.clone());
        self.edges.push(Edge { from, to, weight });
        Ok(())
    }

    /// Outgoing `(neighbor, weight)` lists; undirected edges appear both ways.
    fn adjacency(&self) -> BTreeMap<&str, Vec<(&str, Rational)>> {
        let mut adj: BTreeMap<&str, Vec<(&str, Rational)>> =
            self.nodes.iter().map(|n| (n.as_str(), Vec::new())).collect();
        for e in &self.edges {
            adj.get_mut(e.from.as_str()).expect("endpoint").push((&e.to, e.weight));
            if !self.directed && e.from != e.to {
                adj.get_mut(e.to.as_str()).expect("endpoint").push((&e.from, e.weight));
            }
        }
        for list in adj.values_mut() {
            list.sort();
        }
        adj
    }

    fn require(&self, node: &str) -> Result<(), GraphError> {
        if self.nodes.contains(node) {
            Ok(())
        } else {
            Err(GraphError::UnknownNode(node.to_string()))
        }
    }

    /// Kahn's algorithm, always taking the smallest ready node.
    pub fn topo_sort(&self) -> Result<Vec<String>, GraphError> {
        if !self.directed {
            return Err(GraphError::WrongKind("directed"));
        }
        let adj = self.adjacency();
        let mut indegree: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.as_str(), 0)).collect();
        for e in &self.edges {
            *indegree.get_mut(e.to.as_str()).expect("endpoint") += 1;
        }
        let mut ready: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d == 0).map(|(&n, _)| n).collect();
        let mut order = Vec::with_capacity(self.nodes.len());
        while let Some(n) = ready.pop_first() {
            order.push(n.to_string());
            for &(m, _) in &adj[n] {
                let d = indegree.get_mut(m).expect("endpoint");
                *d -= 1;
                if *d == 0 {
                    ready.insert(m);
                }
            }
        }
        if order.len() == self.nodes.len() {
            return Ok(order);
        }
        let remaining: BTreeSet<&str> = indegree.iter().filter(|(_, &d)| d > 0).map(|(&n, _)| n).collect();
        Err(GraphError::Cycle(self.witness_cycle(&remaining)))
    }

    /// Every node left over by Kahn has a predecessor that is also left over,
    /// so walking predecessors from any of them must close a cycle.
    fn witness_cycle(&self, remaining: &BTreeSet<&str>) -> Vec<String> {
        let pred = |n: &str| -> &str {
            self.edges
                .iter()
                .filter(|e| e.to == n && remaining.contains(e.from.as_str()))
                .map(|e| e.from.as_str())
                .min()
                .expect("leftover node has a leftover predecessor")
        };
        let mut walk: Vec<&str> = vec![remaining.first().expect("non-empty")];
        loop {
            let p = pred(walk.last().expect("non-empty"));
            if let Some(at) = walk.iter().position(|&w| w == p) {
                let mut cycle: Vec<String> = walk[at..].iter().rev().map(|s| s.to_string()).collect();
                rotate_smallest_first(&mut cycle);
                return cycle;
            }
            walk.push(p);
        }
    }

    /// Heaviest path starting at `source` (any end node). Ties go to the
    /// lexicographically smallest node sequence, so a zero-weight extension
    /// never beats the shorter path.
    pub fn critical_path(&self, source: &str) -> Result<(Vec<String>, Rational), GraphError> {
        self.require(source)?;
        let order = self.topo_sort()?;
        let adj = self.adjacency();
        let mut best: BTreeMap<&str, (Rational, Vec<&str>)> = BTreeMap::new();
        best.insert(source, (Rational::zero(), vec![source]));
        for n in &order {
            let Some((w, path)) = best.get(n.as_str()).cloned() else { continue };
            for &(m, ew) in &adj[n.as_str()] {
                let mut cand_path = path.clone();
                cand_path.push(m);
                let cand = (w + ew, cand_path);
                match best.get(m) {
                    Some(cur) if !better_longest(&cand, cur) => {}
                    _ => {
                        best.insert(m, cand);
                    }
                }
            }
        }
        let winner =
            best.into_values().reduce(|a, b| if better_longest(&b, &a) { b } else { a }).expect("source present");
        Ok((winner.1.into_iter().map(str::to_string).collect(), winner.0))
    }

    /// Dijkstra over `(distance, path)` pairs.
    pub fn shortest_path(&self, source: &str, target: &str) -> Result<(Vec<String>, Rational), GraphError> {
        self.require(source)?;
        self.require(target)?;
        let adj = self.adjacency();
        let mut settled: BTreeSet<&str> = BTreeSet::new();
        let mut heap = BinaryHeap::new();
        heap.push(Reverse((Rational::zero(), vec![source])));
        while let Some(Reverse((dist, path))) = heap.pop() {
            let here = *path.last().expect("non-empty path");
            if !settled.insert(here) {
                continue;
            }
            if here == target {
                return Ok((path.into_iter().map(str::to_string).collect(), dist));
            }
            for &(m, w) in &adj[here] {
                if !settled.contains(m) {
                    let mut next = path.clone();
                    next.push(m);
                    heap.push(Reverse((dist + w, next)));
                }
            }
        }
        Err(GraphError::Unreachable { from: source.to_string(), to: target.to_string() })
    }

    /// Kruskal over edges sorted by `(weight, endpoints)`.
    pub fn minimum_spanning_tree(&self) -> Result<(Vec<Edge>, Rational), GraphError> {
        if self.directed {
            return Err(GraphError::WrongKind("undirected"));
        }
        let index: BTreeMap<&str, usize> = self.nodes.iter().enumerate().map(|(i, n)| (n.as_str(), i)).collect();
        let mut candidates: Vec<Edge> = self
            .edges
            .iter()
            .filter(|e| e.from != e.to)
            .map(|e| {
                let (a, b) = if e.from <= e.to { (&e.from, &e.to) } else { (&e.to, &e.from) };
                Edge { from: a.clone(), to: b.clone(), weight: e.weight }
            })
            .collect();
        candidates.sort_by(|x, y| (x.weight, &x.from, &x.to).cmp(&(y.weight, &y.from, &y.to)));

        let mut parent: Vec<usize> = (0..self.nodes.len()).collect();
        fn find(parent: &mut [usize], mut x: usize) -> usize {
            while parent[x] != x {
                parent[x] = parent[parent[x]];
                x = parent[x];
            }
            x
        }
        let mut tree = Vec::new();
        let mut total = Rational::zero();
        for e in candidates {
            let (a, b) = (find(&mut parent, index[e.from.as_str()]), find(&mut parent, index[e.to.as_str()]));
            if a != b {
                parent[a] = b;
                total += e.weight;
                tree.push(e);
            }
        }
        if tree.len() + 1 < self.nodes.len() {
            return Err(GraphError::Disconnected);
        }
        Ok((tree, total))
    }

    /// Elementary cycles of at most `max_len` nodes, smallest node first.
    pub fn detect_cycles(&self, max_len: usize) -> Result<Vec<Vec<String>>, GraphError> {
        if !self.directed {
            return Err(GraphError::WrongKind("directed"));
        }
        let mut succ: BTreeMap<String, BTreeSet<String>> =
            self.nodes.iter().map(|n| (n.clone(), BTreeSet::new())).collect();
        for e in &self.edges {
            succ.get_mut(&e.from).expect("endpoint").insert(e.to.clone());
        }
        Ok(elementary_cycles(&succ, max_len))
    }

    /// Reads `src dst [weight]` lines; `#` starts a comment, weight
    /// defaults to 1.
    pub fn parse_edge_list(text: &str, directed: bool) -> Result<Graph, GraphError> {
        let mut g = Graph::new(directed);
        for (idx, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |reason: String| GraphError::Parse { line: idx + 1, reason };
            let tokens: Vec<&str> = line.split_whitespace().collect();
            let (from, to, weight) = match tokens.as_slice() {
                [a] => {
                    g.add_node(*a);
                    continue;
                }
                [a, b] => (*a, *b, Rational::from_integer(1)),
                [a, b, w] => (*a, *b, parse_decimal(w).ok_or_else(|| err(format!("bad weight `{w}`")))?),
                _ => return Err(err("expected `src dst weight`".into())),
            };
            g.add_edge(from, to, weight).map_err(|e| err(e.to_string()))?;
        }
        Ok(g)
    }
}

fn better_longest(a: &(Rational, Vec<&str>), b: &(Rational, Vec<&str>)) -> bool {
    match a.0.cmp(&b.0) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => a.1 < b.1,
    }
}

pub(crate) fn rotate_smallest_first<N: Ord>(cycle: &mut [N]) {
    if let Some(pos) = cycle.iter().enumerate().min_by(|a, b| a.1.cmp(b.1)).map(|(i, _)| i) {
        cycle.rotate_left(pos);
    }
}

/// Bounded elementary-cycle enumeration.
///
/// Each cycle is found exactly once from its smallest node by extending
/// only through larger nodes. Self-loops are cycles of length one. Output is
/// sorted.
pub fn elementary_cycles<N: Ord + Clone>(succ: &BTreeMap<N, BTreeSet<N>>, max_len: usize) -> Vec<Vec<N>> {
    fn extend<N: Ord + Clone>(
        succ: &BTreeMap<N, BTreeSet<N>>,
        start: &N,
        path: &mut Vec<N>,
        max_len: usize,
        out: &mut Vec<Vec<N>>,
    ) {
        let last = path.last().expect("non-empty").clone();
        let Some(next) = succ.get(&last) else { return };
        for m in next {
            if m == start {
                out.push(path.clone());
            } else if m > start && path.len() < max_len && !path.contains(m) {
                path.push(m.clone());
                extend(succ, start, path, max_len, out);
                path.pop();
            }
        }
    }

    let mut out = Vec::new();
    if max_len == 0 {
        return out;
    }
    for start in succ.keys() {
        let mut path = vec![start.clone()];
        extend(succ, start, &mut path, max_len, &mut out);
    }
    out.sort();
    out
}
