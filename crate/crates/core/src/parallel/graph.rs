//! Conflict graph over a block's transactions and its topological stages.

use std::collections::{BTreeSet, HashMap};
use std::fmt::Write as _;

use super::analysis::{AccessMode, AccessRegion, TxnAccessSet};
use crate::sql::value::Value;

/// Edges run from lower to higher block position, so the graph is acyclic.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct DependencyGraph {
    nodes: usize,
    /// Positions that take part in the graph; the others failed to parse.
    included: Vec<bool>,
    preds: Vec<Vec<usize>>,
    stage: Vec<usize>,
}

#[derive(Default)]
struct TableIndex {
    /// Regions pinned to a single value of their first key-like column.
    points: HashMap<(String, Value), Vec<usize>>,
    point_columns: BTreeSet<String>,
    wide: Vec<usize>,
    all: Vec<usize>,
}

impl DependencyGraph {
    pub fn len(&self) -> usize {
        self.nodes
    }

    pub fn is_empty(&self) -> bool {
        self.nodes == 0
    }

    pub fn is_included(&self, node: usize) -> bool {
        self.included[node]
    }

    pub fn predecessors(&self, node: usize) -> &[usize] {
        &self.preds[node]
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.preds.iter().enumerate().flat_map(|(j, ps)| ps.iter().map(move |&i| (i, j)))
    }

    pub fn edge_count(&self) -> usize {
        self.preds.iter().map(Vec::len).sum()
    }

    pub fn stage_of(&self, node: usize) -> Option<usize> {
        self.included[node].then(|| self.stage[node])
    }

    /// Included nodes grouped by stage, each group in block order.
    pub fn stages(&self) -> Vec<Vec<usize>> {
        let mut stages: Vec<Vec<usize>> = Vec::new();
        for node in (0..self.nodes).filter(|&n| self.included[n]) {
            let s = self.stage[node];
            if stages.len() <= s {
                stages.resize_with(s + 1, Vec::new);
            }
            stages[s].push(node);
        }
        stages
    }

    /// Graphviz rendering, one cluster-free rank per stage.
    pub fn to_dot(&self, labels: Option<&[String]>) -> String {
        let mut out = String::from("digraph dependencies {\n  rankdir=LR;\n  node [shape=box];\n");
        for (s, members) in self.stages().iter().enumerate() {
            let _ = writeln!(out, "  subgraph stage{s} {{\n    rank=same;");
            for &n in members {
                let label = labels.and_then(|l| l.get(n)).map(|l| l.replace('"', "\\\"")).unwrap_or_default();
                let _ = writeln!(out, "    T{} [label=\"T{}\\nstage {}\\n{}\"];", n + 1, n + 1, s, label);
            }
            out.push_str("  }\n");
        }
        for (i, j) in self.edges() {
            let _ = writeln!(out, "  T{} -> T{};", i + 1, j + 1);
        }
        out.push_str("}\n");
        out
    }
}

fn point_key(region: &AccessRegion) -> Option<(String, Value)> {
    region.columns.iter().find_map(|(c, iv)| iv.as_point().map(|v| (c.clone(), v.clone())))
}

/// Adds an edge `i -> j` for every pair `i < j` whose access sets conflict.
///
/// `sets[j]` is `None` for a transaction that is left out of the graph.
pub fn build_graph(sets: &[Option<TxnAccessSet>]) -> DependencyGraph {
    let n = sets.len();
    let mut graph = DependencyGraph {
        nodes: n,
        included: sets.iter().map(Option::is_some).collect(),
        preds: vec![Vec::new(); n],
        stage: vec![0; n],
    };
    let mut regions: Vec<(usize, &AccessRegion)> = Vec::new();
    let mut tables: HashMap<&str, TableIndex> = HashMap::new();
    let mut seen = vec![usize::MAX; n];
    for (j, set) in sets.iter().enumerate() {
        let Some(set) = set else { continue };
        let mine: Vec<&AccessRegion> = set.regions().filter(|r| !r.is_empty()).collect();
        for region in &mine {
            let Some(index) = tables.get(region.table.as_str()) else { continue };
            let key = point_key(region);
            let candidates: Box<dyn Iterator<Item = &usize>> = match &key {
                // A region pinned on column c can only meet regions pinned to the
                // same value of c, or regions not pinned on their first column.
                Some(k) if index.point_columns.iter().all(|c| *c == k.0) => {
                    Box::new(index.points.get(k).into_iter().flatten().chain(&index.wide))
                }
                _ => Box::new(index.all.iter()),
            };
            for &r in candidates {
                let (i, other) = regions[r];
                if seen[i] != j && region.conflicts(other) {
                    seen[i] = j;
                    graph.preds[j].push(i);
                }
            }
        }
        for region in mine {
            let id = regions.len();
            regions.push((j, region));
            let index = tables.entry(region.table.as_str()).or_default();
            index.all.push(id);
            match point_key(region) {
                Some(k) => {
                    index.point_columns.insert(k.0.clone());
                    index.points.entry(k).or_default().push(id);
                }
                None => index.wide.push(id),
            }
        }
        graph.preds[j].sort_unstable();
        graph.stage[j] = graph.preds[j].iter().map(|&i| graph.stage[i] + 1).max().unwrap_or(0);
    }
    graph
}

/// Reference construction: checks every pair.
pub fn build_graph_naive(sets: &[Option<TxnAccessSet>]) -> DependencyGraph {
    let n = sets.len();
    let mut graph = DependencyGraph {
        nodes: n,
        included: sets.iter().map(Option::is_some).collect(),
        preds: vec![Vec::new(); n],
        stage: vec![0; n],
    };
    for j in 0..n {
        let Some(b) = &sets[j] else { continue };
        for i in 0..j {
            if let Some(a) = &sets[i] {
                if a.conflicts(b) {
                    graph.preds[j].push(i);
                }
            }
        }
        graph.stage[j] = graph.preds[j].iter().map(|&i| graph.stage[i] + 1).max().unwrap_or(0);
    }
    graph
}

/// Whether any pair within one stage conflicts.
pub fn stages_conflict_free(graph: &DependencyGraph, sets: &[Option<TxnAccessSet>]) -> bool {
    graph.stages().iter().all(|members| {
        members.iter().enumerate().all(|(x, &a)| {
            members[x + 1..].iter().all(|&b| !sets[a].as_ref().unwrap().conflicts(sets[b].as_ref().unwrap()))
        })
    })
}

/// Whether a set writes anything; read-only transactions never conflict with each other.
pub fn is_read_only(set: &TxnAccessSet) -> bool {
    set.regions().all(|r| r.mode == AccessMode::Read)
}
