//! Per-procedure transaction Markov models.
//!
//! A model is an acyclic digraph over [`ExecutionState`]s plus the `begin`,
//! `commit` and `abort` terminals. Building has two phases: [`MarkovModel::construct`]
//! replays trace records and counts vertex hits and edge visits, then
//! [`MarkovModel::process`] turns counts into edge probabilities and fills
//! every vertex's [`ProbabilityTable`] children-first.

pub mod sampling;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, PartitionSet, QueryKind};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::trace::{Outcome, TraceRecord};

pub type VertexId = usize;

pub const BEGIN: VertexId = 0;
pub const COMMIT: VertexId = 1;
pub const ABORT: VertexId = 2;

/// Vertex identity. Field order is the canonical ordering used for ties.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ExecutionState {
    pub query_name: String,
    /// Prior executions of this query in the same transaction.
    pub counter: u32,
    pub partitions: PartitionSet,
    /// Partitions the transaction touched before this query.
    pub previous: PartitionSet,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VertexKind {
    Begin,
    Commit,
    Abort,
    State(ExecutionState),
}

impl VertexKind {
    pub fn state(&self) -> Option<&ExecutionState> {
        match self {
            VertexKind::State(s) => Some(s),
            _ => None,
        }
    }

    pub fn is_terminal(&self) -> bool {
        matches!(self, VertexKind::Commit | VertexKind::Abort)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct PartitionProbs {
    pub read: f64,
    pub write: f64,
    pub finish: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTable {
    pub single_partitioned: f64,
    pub abort: f64,
    pub partitions: Vec<PartitionProbs>,
}

impl ProbabilityTable {
    fn zeroed(p: u32) -> Self {
        ProbabilityTable {
            single_partitioned: 0.0,
            abort: 0.0,
            partitions: vec![PartitionProbs::default(); p as usize],
        }
    }

    fn terminal(p: u32, abort: bool) -> Self {
        ProbabilityTable {
            single_partitioned: 1.0,
            abort: if abort { 1.0 } else { 0.0 },
            partitions: vec![
                PartitionProbs {
                    read: 0.0,
                    write: 0.0,
                    finish: 1.0
                };
                p as usize
            ],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vertex {
    pub kind: VertexKind,
    /// Read/write kind of the vertex's query; `None` on terminals.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub access: Option<QueryKind>,
    pub hit_count: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub table: Option<ProbabilityTable>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: VertexId,
    pub dst: VertexId,
    pub visit_count: u64,
    pub probability: f64,
}

#[derive(Serialize, Deserialize)]
struct ModelRepr {
    procedure: String,
    num_partitions: u32,
    frozen: bool,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(from = "ModelRepr", into = "ModelRepr")]
pub struct MarkovModel {
    procedure: String,
    num_partitions: u32,
    frozen: bool,
    vertices: Vec<Vertex>,
    edges: Vec<Edge>,
    out: Vec<Vec<usize>>,
    index: HashMap<VertexKind, VertexId>,
    edge_index: HashMap<(VertexId, VertexId), usize>,
}

impl PartialEq for MarkovModel {
    fn eq(&self, other: &Self) -> bool {
        self.procedure == other.procedure
            && self.num_partitions == other.num_partitions
            && self.frozen == other.frozen
            && self.vertices == other.vertices
            && self.edges == other.edges
    }
}

impl From<ModelRepr> for MarkovModel {
    fn from(r: ModelRepr) -> Self {
        let mut m = MarkovModel {
            procedure: r.procedure,
            num_partitions: r.num_partitions,
            frozen: r.frozen,
            vertices: r.vertices,
            edges: r.edges,
            out: Vec::new(),
            index: HashMap::new(),
            edge_index: HashMap::new(),
        };
        m.reindex();
        m
    }
}

impl From<MarkovModel> for ModelRepr {
    fn from(m: MarkovModel) -> Self {
        ModelRepr {
            procedure: m.procedure,
            num_partitions: m.num_partitions,
            frozen: m.frozen,
            vertices: m.vertices,
            edges: m.edges,
        }
    }
}

/// The execution states a record passes through, in order, with each query's
/// read/write kind. The record's outcome picks the terminal.
pub fn record_states(record: &TraceRecord, catalog: &Catalog) -> Result<Vec<(ExecutionState, QueryKind)>> {
    let proc = catalog.procedure(&record.proc_name)?;
    let mut counters: HashMap<&str, u32> = HashMap::new();
    let mut previous = PartitionSet::EMPTY;
    let mut out = Vec::with_capacity(record.queries.len());
    for inv in &record.queries {
        let q = proc.query(&inv.query_name).ok_or_else(|| Error::UnknownQuery {
            procedure: record.proc_name.clone(),
            query: inv.query_name.clone(),
        })?;
        let partitions = catalog.resolve_partitions(q, &inv.params)?;
        let c = counters.entry(q.name.as_str()).or_insert(0);
        out.push((
            ExecutionState {
                query_name: q.name.clone(),
                counter: *c,
                partitions,
                previous,
            },
            q.kind,
        ));
        *c += 1;
        previous = previous.union(partitions);
    }
    Ok(out)
}

pub fn terminal_for(outcome: Outcome) -> VertexId {
    match outcome {
        Outcome::Committed => COMMIT,
        Outcome::Aborted => ABORT,
    }
}

impl MarkovModel {
    pub fn new(procedure: impl Into<String>, num_partitions: u32) -> Self {
        let mut m = MarkovModel {
            procedure: procedure.into(),
            num_partitions,
            frozen: false,
            vertices: Vec::new(),
            edges: Vec::new(),
            out: Vec::new(),
            index: HashMap::new(),
            edge_index: HashMap::new(),
        };
        for kind in [VertexKind::Begin, VertexKind::Commit, VertexKind::Abort] {
            m.push_vertex(kind, None);
        }
        m
    }

    fn push_vertex(&mut self, kind: VertexKind, access: Option<QueryKind>) -> VertexId {
        let id = self.vertices.len();
        self.index.insert(kind.clone(), id);
        self.vertices.push(Vertex {
            kind,
            access,
            hit_count: 0,
            table: None,
        });
        self.out.push(Vec::new());
        id
    }

    fn reindex(&mut self) {
        self.index = self
            .vertices
            .iter()
            .enumerate()
            .map(|(i, v)| (v.kind.clone(), i))
            .collect();
        self.out = vec![Vec::new(); self.vertices.len()];
        self.edge_index.clear();
        for (i, e) in self.edges.iter().enumerate() {
            self.out[e.src].push(i);
            self.edge_index.insert((e.src, e.dst), i);
        }
    }

    pub fn procedure(&self) -> &str {
        &self.procedure
    }

    pub fn num_partitions(&self) -> u32 {
        self.num_partitions
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn num_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn num_edges(&self) -> usize {
        self.edges.len()
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn vertex(&self, id: VertexId) -> &Vertex {
        &self.vertices[id]
    }

    pub fn table(&self, id: VertexId) -> Option<&ProbabilityTable> {
        self.vertices[id].table.as_ref()
    }

    pub fn lookup_vertex(&self, state: &ExecutionState) -> Option<VertexId> {
        self.index.get(&VertexKind::State(state.clone())).copied()
    }

    pub fn lookup_kind(&self, kind: &VertexKind) -> Option<VertexId> {
        self.index.get(kind).copied()
    }

    pub fn edge_between(&self, src: VertexId, dst: VertexId) -> Option<&Edge> {
        self.edge_index.get(&(src, dst)).map(|&i| &self.edges[i])
    }

    /// Outgoing edges with their destination, in insertion order.
    pub fn successors(&self, id: VertexId) -> Vec<(&Edge, VertexId)> {
        self.out[id]
            .iter()
            .map(|&e| (&self.edges[e], self.edges[e].dst))
            .collect()
    }

    /// Unfrozen copy that keeps all counts, ready for more construction.
    pub fn thaw(&self) -> MarkovModel {
        let mut m = self.clone();
        m.frozen = false;
        m
    }

    /// Returns the vertex for `state`, creating it if needed.
    pub fn ensure_vertex(&mut self, state: ExecutionState, access: QueryKind) -> Result<VertexId> {
        if self.frozen {
            return Err(Error::Frozen(self.procedure.clone()));
        }
        let kind = VertexKind::State(state);
        Ok(match self.index.get(&kind) {
            Some(&id) => id,
            None => self.push_vertex(kind, Some(access)),
        })
    }

    /// Adds `count` traversals of `src -> dst`, bumping `dst`'s hit count
    /// (and `begin`'s when `src` is `begin`).
    pub fn add_transition(&mut self, src: VertexId, dst: VertexId, count: u64) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(self.procedure.clone()));
        }
        let e = match self.edge_index.get(&(src, dst)) {
            Some(&e) => e,
            None => {
                let e = self.edges.len();
                self.edges.push(Edge {
                    src,
                    dst,
                    visit_count: 0,
                    probability: 0.0,
                });
                self.out[src].push(e);
                self.edge_index.insert((src, dst), e);
                e
            }
        };
        self.edges[e].visit_count += count;
        self.vertices[dst].hit_count += count;
        if src == BEGIN {
            self.vertices[BEGIN].hit_count += count;
        }
        Ok(())
    }

    pub fn add_record(&mut self, record: &TraceRecord, catalog: &Catalog) -> Result<()> {
        if record.proc_name != self.procedure {
            return Err(Error::WrongProcedure {
                expected: self.procedure.clone(),
                found: record.proc_name.clone(),
            });
        }
        if self.frozen {
            return Err(Error::Frozen(self.procedure.clone()));
        }
        let states = record_states(record, catalog)?;
        let mut cur = BEGIN;
        for (state, access) in states {
            let next = self.ensure_vertex(state, access)?;
            self.add_transition(cur, next, 1)?;
            cur = next;
        }
        self.add_transition(cur, terminal_for(record.outcome), 1)
    }

    /// Construction phase over a batch of records.
    pub fn construct<'a>(
        &mut self,
        records: impl IntoIterator<Item = &'a TraceRecord>,
        catalog: &Catalog,
    ) -> Result<()> {
        for r in records {
            self.add_record(r, catalog)?;
        }
        Ok(())
    }

    /// Vertices ordered by ascending longest path to a sink, ties by
    /// canonical key. Errors if the graph has a cycle.
    pub fn longest_path_order(&self) -> Result<Vec<VertexId>> {
        let n = self.vertices.len();
        // Kahn's algorithm on the reversed graph: a vertex is ready once all
        // its children have a height.
        let mut pending: Vec<usize> = self.out.iter().map(|o| o.len()).collect();
        let mut parents: Vec<Vec<VertexId>> = vec![Vec::new(); n];
        for e in &self.edges {
            parents[e.dst].push(e.src);
        }
        let mut height = vec![0usize; n];
        let mut ready: Vec<VertexId> = (0..n).filter(|&v| pending[v] == 0).collect();
        let mut done = 0;
        while let Some(v) = ready.pop() {
            done += 1;
            for &p in &parents[v] {
                height[p] = height[p].max(height[v] + 1);
                pending[p] -= 1;
                if pending[p] == 0 {
                    ready.push(p);
                }
            }
        }
        if done != n {
            return Err(Error::Cycle(self.procedure.clone()));
        }
        let mut order: Vec<VertexId> = (0..n).collect();
        order.sort_by(|&a, &b| {
            height[a]
                .cmp(&height[b])
                .then_with(|| self.vertices[a].kind.cmp(&self.vertices[b].kind))
        });
        Ok(order)
    }

    /// Processing phase: edge probabilities, then every table children-first.
    pub fn process(&mut self) -> Result<()> {
        if self.frozen {
            return Err(Error::Frozen(self.procedure.clone()));
        }
        self.recompute()
    }

    /// Recomputes probabilities and tables from the current counts,
    /// whether or not the model is frozen.
    pub(crate) fn recompute(&mut self) -> Result<()> {
        let order = self.longest_path_order()?;
        for v in 0..self.vertices.len() {
            // Total outgoing visits equals the hit count for complete paths;
            // using it keeps each row summing to one.
            let total: u64 = self.out[v].iter().map(|&e| self.edges[e].visit_count).sum();
            for &e in &self.out[v] {
                self.edges[e].probability = if total == 0 {
                    0.0
                } else {
                    self.edges[e].visit_count as f64 / total as f64
                };
            }
        }
        let p = self.num_partitions;
        for &v in &order {
            let table = match &self.vertices[v].kind {
                VertexKind::Begin => None,
                VertexKind::Commit => Some(ProbabilityTable::terminal(p, false)),
                VertexKind::Abort => Some(ProbabilityTable::terminal(p, true)),
                VertexKind::State(state) => {
                    let mut t = ProbabilityTable::zeroed(p);
                    let multi = state.previous.union(state.partitions).len() >= 2;
                    for &e in &self.out[v] {
                        let edge = &self.edges[e];
                        let child = self.vertices[edge.dst]
                            .table
                            .as_ref()
                            .expect("children are processed first");
                        let w = edge.probability;
                        t.abort += w * child.abort;
                        t.single_partitioned += w * child.single_partitioned;
                        for (row, c) in t.partitions.iter_mut().zip(&child.partitions) {
                            row.read += w * c.read;
                            row.write += w * c.write;
                            row.finish += w * c.finish;
                        }
                    }
                    if multi {
                        t.single_partitioned = 0.0;
                    }
                    for x in state.partitions.iter() {
                        let row = &mut t.partitions[x as usize];
                        match self.vertices[v].access {
                            Some(QueryKind::Write) => row.write = 1.0,
                            _ => row.read = 1.0,
                        }
                        row.finish = 0.0;
                    }
                    Some(t)
                }
            };
            self.vertices[v].table = table;
        }
        self.frozen = true;
        Ok(())
    }

    /// Checks the structural invariants of a processed model.
    pub fn check_invariants(&self) -> Result<()> {
        self.longest_path_order()?;
        for (v, vertex) in self.vertices.iter().enumerate() {
            if vertex.kind.is_terminal() && !self.out[v].is_empty() {
                return Err(Error::Catalog(format!("terminal {v} has outgoing edges")));
            }
            if self.frozen && !self.out[v].is_empty() {
                let s: f64 = self.out[v].iter().map(|&e| self.edges[e].probability).sum();
                if (s - 1.0).abs() > 1e-9 {
                    return Err(Error::Catalog(format!("vertex {v} probabilities sum to {s}")));
                }
            }
        }
        Ok(())
    }
}

/// Builds and processes one model from the records of `procedure`.
pub fn build_model<'a>(
    procedure: &str,
    records: impl IntoIterator<Item = &'a TraceRecord>,
    catalog: &Catalog,
) -> Result<MarkovModel> {
    catalog.procedure(procedure)?;
    let mut m = MarkovModel::new(procedure, catalog.num_partitions);
    m.construct(records, catalog)?;
    m.process()?;
    Ok(m)
}

/// One processed model per catalog procedure, built concurrently.
pub fn build_models(
    records: &[TraceRecord],
    catalog: &Catalog,
    mode: Parallelism,
) -> Result<BTreeMap<String, MarkovModel>> {
    let built = par::map(mode, &catalog.procedures, |p| {
        let recs = records.iter().filter(|r| r.proc_name == p.name);
        build_model(&p.name, recs, catalog).map(|m| (p.name.clone(), m))
    });
    built.into_iter().collect()
}
