//! Runtime tracking of one in-flight transaction against its model.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{PartitionId, PartitionSet, QueryDef, QueryKind};
use crate::error::{Error, Result};
use crate::markov::{ExecutionState, MarkovModel, VertexId, VertexKind, BEGIN};
use crate::trace::Outcome;

use super::PathEstimate;

/// A position on the actual path. States the model has never seen become
/// placeholders.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathNode {
    Known(VertexId),
    Unknown(ExecutionState, QueryKind),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "update")]
pub enum RuntimeUpdate {
    /// No reachable path from here aborts; undo logging can stop.
    DisableUndo { step: usize },
    /// The partition will not be needed again.
    PartitionFinished {
        step: usize,
        partition: PartitionId,
        probability: f64,
    },
    /// The actual path left the initial estimate.
    Deviation { step: usize },
}

#[derive(Debug, Clone)]
pub struct TxnSession {
    model: Arc<MarkovModel>,
    threshold: f64,
    estimate: Option<PathEstimate>,
    path: Vec<PathNode>,
    accessed: PartitionSet,
    counters: HashMap<String, u32>,
    /// Partitions to report finish updates for.
    watch: PartitionSet,
    finished: PartitionSet,
    undo_disabled: bool,
    allow_disable_undo: bool,
    deviated: bool,
    closed: bool,
    updates: Vec<RuntimeUpdate>,
}

impl TxnSession {
    /// Starts tracking. `watch` is the set of partitions whose finish
    /// updates matter (usually the lock set). Runtime undo elision is only
    /// offered when `allow_disable_undo` is set (single-partition plans that
    /// did not already disable it).
    pub fn new(
        model: Arc<MarkovModel>,
        threshold: f64,
        estimate: Option<PathEstimate>,
        watch: PartitionSet,
        allow_disable_undo: bool,
    ) -> Self {
        TxnSession {
            model,
            threshold,
            estimate,
            path: vec![PathNode::Known(BEGIN)],
            accessed: PartitionSet::EMPTY,
            counters: HashMap::new(),
            watch,
            finished: PartitionSet::EMPTY,
            undo_disabled: false,
            allow_disable_undo,
            deviated: false,
            closed: false,
            updates: Vec::new(),
        }
    }

    pub fn model(&self) -> &Arc<MarkovModel> {
        &self.model
    }

    pub fn path(&self) -> &[PathNode] {
        &self.path
    }

    pub fn deviated(&self) -> bool {
        self.deviated
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn updates(&self) -> &[RuntimeUpdate] {
        &self.updates
    }

    pub fn accessed(&self) -> PartitionSet {
        self.accessed
    }

    fn check_deviation(&mut self, out: &mut Vec<RuntimeUpdate>) {
        if self.deviated {
            return;
        }
        let step = self.path.len() - 1;
        let expected = self.estimate.as_ref().and_then(|e| e.vertices.get(step).copied());
        let on_track = match (&self.path[step], expected) {
            (PathNode::Known(v), Some(e)) => *v == e,
            (_, None) if self.estimate.is_none() => true,
            _ => false,
        };
        if !on_track {
            self.deviated = true;
            out.push(RuntimeUpdate::Deviation { step });
        }
    }

    /// Partitions the estimate still expects to touch after `step`, while
    /// the actual path agrees with it. Tables alone cannot tell that a
    /// parameter-determined partition is coming back.
    fn predicted_after(&self, step: usize) -> PartitionSet {
        match &self.estimate {
            Some(e) if !self.deviated => e
                .predicted_partitions
                .iter()
                .skip(step + 1)
                .fold(PartitionSet::EMPTY, |acc, p| acc.union(*p)),
            _ => PartitionSet::EMPTY,
        }
    }

    /// Records an executed query and returns the updates it triggers.
    pub fn track_execution(&mut self, query: &QueryDef, partitions: PartitionSet) -> Result<Vec<RuntimeUpdate>> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        let counter = self.counters.entry(query.name.clone()).or_insert(0);
        let state = ExecutionState {
            query_name: query.name.clone(),
            counter: *counter,
            partitions,
            previous: self.accessed,
        };
        *counter += 1;
        self.accessed = self.accessed.union(partitions);
        let node = match self.model.lookup_vertex(&state) {
            Some(v) => PathNode::Known(v),
            None => PathNode::Unknown(state, query.kind),
        };
        self.path.push(node);
        let mut out = Vec::new();
        self.check_deviation(&mut out);
        let step = self.path.len() - 1;
        if let PathNode::Known(v) = self.path[step] {
            if let Some(t) = self.model.table(v) {
                if self.allow_disable_undo && !self.undo_disabled && self.threshold < 1.0 && t.abort == 0.0 {
                    self.undo_disabled = true;
                    out.push(RuntimeUpdate::DisableUndo { step });
                }
                let still_needed = self.predicted_after(step);
                for x in self.watch.difference(self.finished).difference(still_needed).iter() {
                    let f = t.partitions[x as usize].finish;
                    if f >= self.threshold && f > 0.0 {
                        self.finished.insert(x);
                        out.push(RuntimeUpdate::PartitionFinished {
                            step,
                            partition: x,
                            probability: f,
                        });
                    }
                }
            }
        }
        self.updates.extend_from_slice(&out);
        Ok(out)
    }

    /// Closes the session at its terminal.
    pub fn finish(&mut self, outcome: Outcome) -> Result<()> {
        if self.closed {
            return Err(Error::SessionClosed);
        }
        self.path.push(PathNode::Known(crate::markov::terminal_for(outcome)));
        let mut out = Vec::new();
        self.check_deviation(&mut out);
        self.updates.extend(out);
        self.closed = true;
        Ok(())
    }

    /// The actual path as vertex kinds with their query kinds, for counters.
    pub fn kinds(&self) -> Vec<(VertexKind, Option<QueryKind>)> {
        self.path
            .iter()
            .map(|n| match n {
                PathNode::Known(v) => {
                    let vertex = self.model.vertex(*v);
                    (vertex.kind.clone(), vertex.access)
                }
                PathNode::Unknown(s, k) => (VertexKind::State(s.clone()), Some(*k)),
            })
            .collect()
    }

    /// Whether the actual path so far equals the estimate exactly.
    pub fn matches_estimate(&self) -> bool {
        let Some(e) = &self.estimate else { return false };
        self.path.len() == e.vertices.len()
            && self
                .path
                .iter()
                .zip(&e.vertices)
                .all(|(n, v)| *n == PathNode::Known(*v))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::estimator::{estimate_initial_path, select_optimizations, EstimatorConfig};
    use crate::mapping::infer_mapping;
    use crate::markov::build_model;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, ItemCounts, NewOrderConfig};

    #[test]
    fn following_the_estimate_never_deviates() {
        let catalog = neworder_catalog(2);
        let cfg = NewOrderConfig {
            num_txns: 300,
            item_counts: ItemCounts::Uniform { min: 2, max: 2 },
            remote_warehouse_probability: 0.0,
            abort_probability: 0.0,
            ..NewOrderConfig::new(2)
        };
        let w = generate_neworder_like(&cfg, 5).unwrap();
        let model = Arc::new(build_model("NewOrder", &w.records, &catalog).unwrap());
        let map = infer_mapping("NewOrder", &w.records, 0.9);
        let proc = catalog.procedure("NewOrder").unwrap();
        let config = EstimatorConfig::default();
        let r = &w.records[0];
        let est = estimate_initial_path(&model, &map, &r.proc_params, proc, &config).unwrap();
        let plan = select_optimizations(&est, &model, &config);
        let mut s = TxnSession::new(model.clone(), 0.9, Some(est), PartitionSet::all(2), true);
        let parts = r.partitions(&catalog).unwrap();
        let mut disables = 0;
        for (inv, p) in r.queries.iter().zip(parts) {
            let q = proc.query(&inv.query_name).unwrap();
            for u in s.track_execution(q, p).unwrap() {
                assert!(!matches!(u, RuntimeUpdate::Deviation { .. }));
                disables += matches!(u, RuntimeUpdate::DisableUndo { .. }) as usize;
            }
        }
        // Nothing in this model ever aborts.
        assert_eq!(disables, 1);
        s.finish(Outcome::Committed).unwrap();
        assert!(s.matches_estimate() && !s.deviated());
        assert!(plan.disable_undo);
        let q = proc.query("GetWarehouse").unwrap();
        assert!(matches!(
            s.track_execution(q, PartitionSet::singleton(0)),
            Err(Error::SessionClosed)
        ));
        assert!(s.finish(Outcome::Committed).is_err());
    }

    #[test]
    fn unknown_states_become_placeholders() {
        let catalog = neworder_catalog(2);
        let w = generate_neworder_like(
            &NewOrderConfig {
                num_txns: 50,
                ..NewOrderConfig::new(2)
            },
            5,
        )
        .unwrap();
        let model = Arc::new(build_model("NewOrder", &w.records, &catalog).unwrap());
        let proc = catalog.procedure("NewOrder").unwrap();
        let mut s = TxnSession::new(model, 0.9, None, PartitionSet::all(2), false);
        let q = proc.query("InsertOrder").unwrap();
        s.track_execution(q, PartitionSet::singleton(1)).unwrap();
        assert!(matches!(s.path()[1], PathNode::Unknown(..)));
        assert!(!s.matches_estimate());
    }
}
