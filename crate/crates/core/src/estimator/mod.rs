//! Initial path estimation and optimization selection.
//!
//! [`estimate_initial_path`] walks a frozen model from `begin`, at each step
//! keeping only successors whose partitions agree with what the parameter
//! mapping predicts. [`select_optimizations`] turns the path into an
//! [`OptimizationPlan`]. Runtime tracking lives in [`session`], model
//! maintenance in [`drift`].

pub mod drift;
pub mod session;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{PartitionId, PartitionSet, ProcedureDef};
use crate::error::{Error, Result};
use crate::mapping::{ParameterMapping, Prediction};
use crate::markov::{MarkovModel, VertexId, VertexKind, BEGIN};
use crate::trace::ParamValue;

pub const DEFAULT_THRESHOLD: f64 = 0.9;
pub const MAX_PATH_STATES: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConfidenceAggregation {
    /// Running product of per-step confidences.
    #[default]
    Product,
    /// Smallest per-step confidence so far.
    Min,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorConfig {
    pub threshold: f64,
    pub aggregation: ConfidenceAggregation,
    /// When false, OP3 ignores abort probabilities and disables undo for
    /// every single-partition plan. Only useful for testing the detector.
    pub abort_cutoff: bool,
    pub max_path_states: usize,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            threshold: DEFAULT_THRESHOLD,
            aggregation: ConfidenceAggregation::Product,
            abort_cutoff: true,
            max_path_states: MAX_PATH_STATES,
        }
    }
}

impl EstimatorConfig {
    pub fn with_threshold(threshold: f64) -> Self {
        EstimatorConfig {
            threshold,
            ..Default::default()
        }
    }
}

/// How one step of the estimate was chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepDecision {
    pub successors: usize,
    pub valid_candidates: usize,
    /// No successor passed the validity checks.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathEstimate {
    /// From `begin` to a terminal.
    pub vertices: Vec<VertexId>,
    /// Probability of the edge into each vertex (1 for `begin`).
    pub edge_probabilities: Vec<f64>,
    /// Aggregated confidence up to and including each vertex.
    pub confidence_prefix: Vec<f64>,
    /// Partitions each step is expected to touch (empty for terminals).
    pub predicted_partitions: Vec<PartitionSet>,
    /// Per-step choice details; `decisions[i]` chose `vertices[i + 1]`.
    pub decisions: Vec<StepDecision>,
}

impl PathEstimate {
    pub fn terminal(&self) -> VertexId {
        *self.vertices.last().expect("estimates are never empty")
    }

    pub fn confidence(&self) -> f64 {
        *self.confidence_prefix.last().unwrap_or(&1.0)
    }

    /// Union of predicted partitions.
    pub fn partitions(&self) -> PartitionSet {
        self.predicted_partitions
            .iter()
            .fold(PartitionSet::EMPTY, |a, &b| a.union(b))
    }
}

/// Greedy walk from `begin` to a terminal.
///
/// A state successor is valid when the mapping predicts exactly its
/// `partitions` and its `previous` equals what the path has touched so far.
/// Terminals are always valid. The most probable valid successor is taken;
/// its step confidence is its probability among the valid ones. With no
/// valid successor the most probable one is taken outright and its raw edge
/// probability is the step confidence.
pub fn estimate_initial_path(
    model: &MarkovModel,
    mapping: &ParameterMapping,
    proc_params: &[ParamValue],
    procedure: &ProcedureDef,
    config: &EstimatorConfig,
) -> Result<PathEstimate> {
    if !model.is_frozen() {
        return Err(Error::NotFrozen(model.procedure().to_string()));
    }
    if model.successors(BEGIN).is_empty() {
        return Err(Error::EmptyModel(model.procedure().to_string()));
    }
    let p = model.num_partitions();
    let mut est = PathEstimate {
        vertices: vec![BEGIN],
        edge_probabilities: vec![1.0],
        confidence_prefix: vec![1.0],
        predicted_partitions: vec![PartitionSet::EMPTY],
        decisions: Vec::new(),
    };
    let mut cur = BEGIN;
    let mut accessed = PartitionSet::EMPTY;
    let mut confidence = 1.0f64;
    let mut predictions: HashMap<(&str, u32), Prediction> = HashMap::new();
    while !model.vertex(cur).kind.is_terminal() {
        let succ = model.successors(cur);
        if succ.is_empty() {
            // Only placeholders added by runtime tracking can dead-end.
            break;
        }
        // (edge probability, vertex, partitions the step is expected to touch)
        let mut valid: Vec<(f64, VertexId, PartitionSet)> = Vec::new();
        let mut all: Vec<(f64, VertexId, PartitionSet)> = Vec::new();
        let mut valid_states = 0;
        let mut uncertain = false;
        for (edge, v) in &succ {
            match &model.vertex(*v).kind {
                VertexKind::State(s) => {
                    let prediction = *predictions
                        .entry((s.query_name.as_str(), s.counter))
                        .or_insert_with(|| match procedure.query(&s.query_name) {
                            Some(q) => mapping.predict(proc_params, q, s.counter, p),
                            None => Prediction::Unknown,
                        });
                    let expected = match prediction {
                        Prediction::Partitions(parts) => parts,
                        _ => s.partitions,
                    };
                    all.push((edge.probability, *v, expected));
                    match prediction {
                        Prediction::Partitions(parts) if parts == s.partitions && s.previous == accessed => {
                            valid.push((edge.probability, *v, parts));
                            valid_states += 1;
                        }
                        Prediction::Unknown if s.previous == accessed => uncertain = true,
                        _ => {}
                    }
                }
                _ => {
                    valid.push((edge.probability, *v, PartitionSet::EMPTY));
                    all.push((edge.probability, *v, PartitionSet::EMPTY));
                }
            }
        }
        let better = |a: &(f64, VertexId, PartitionSet), b: &(f64, VertexId, PartitionSet)| {
            a.0 > b.0 || (a.0 == b.0 && model.vertex(a.1).kind < model.vertex(b.1).kind)
        };
        let pick = |cands: &[(f64, VertexId, PartitionSet)]| {
            cands.iter().copied().reduce(|a, b| if better(&b, &a) { b } else { a })
        };
        // A lone terminal is not a real choice when some successor's
        // partitions are simply unknown.
        let fallback = valid.is_empty() || (valid_states == 0 && uncertain);
        let (prob, next, step_conf, predicted) = if fallback {
            let best = pick(&all).expect("successors are non-empty");
            (best.0, best.1, best.0, best.2)
        } else {
            let best = pick(&valid).expect("checked non-empty");
            let total: f64 = valid.iter().map(|c| c.0).sum();
            let conf = if total > 0.0 { best.0 / total } else { 0.0 };
            (best.0, best.1, conf, best.2)
        };
        est.decisions.push(StepDecision {
            successors: succ.len(),
            valid_candidates: valid.len(),
            fallback,
        });
        confidence = match config.aggregation {
            ConfidenceAggregation::Product => confidence * step_conf,
            ConfidenceAggregation::Min => confidence.min(step_conf),
        };
        est.vertices.push(next);
        est.edge_probabilities.push(prob);
        est.confidence_prefix.push(confidence);
        est.predicted_partitions.push(predicted);
        if let Some(s) = model.vertex(next).kind.state() {
            accessed = s.previous.union(s.partitions);
        }
        cur = next;
        if est.vertices.len() > config.max_path_states {
            return Err(Error::PathTooLong(config.max_path_states));
        }
    }
    Ok(est)
}

/// Selected optimizations for one transaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationPlan {
    /// OP1.
    pub base_partition: PartitionId,
    /// OP2: partitions to lock, with the confidence that they are needed.
    pub lock_set: BTreeMap<PartitionId, f64>,
    /// OP3.
    pub disable_undo: bool,
    /// Largest abort probability among the path's tables.
    pub abort_probability: f64,
    /// OP4: partition -> (number of executed queries after which it is
    /// predicted finished, finish probability there).
    pub finish_points: BTreeMap<PartitionId, (usize, f64)>,
    pub threshold_used: f64,
}

impl OptimizationPlan {
    pub fn locked(&self) -> PartitionSet {
        self.lock_set.keys().copied().collect()
    }

    pub fn is_single_partition(&self) -> bool {
        self.lock_set.len() == 1
    }

    /// Lock-everything plan with no optimizations, used after restarts and
    /// when estimation is not possible.
    pub fn conservative(base_partition: PartitionId, num_partitions: u32) -> Self {
        OptimizationPlan {
            base_partition,
            lock_set: (0..num_partitions).map(|p| (p, 1.0)).collect(),
            disable_undo: false,
            abort_probability: 1.0,
            finish_points: BTreeMap::new(),
            threshold_used: 1.0,
        }
    }
}

/// Most-accessed partition, ties to the lowest id.
pub fn argmax_partition(counts: &[u64]) -> PartitionId {
    let mut best = 0;
    for (p, &c) in counts.iter().enumerate() {
        if c > counts[best] {
            best = p;
        }
    }
    best as PartitionId
}

pub fn select_optimizations(
    estimate: &PathEstimate,
    model: &MarkovModel,
    config: &EstimatorConfig,
) -> OptimizationPlan {
    let p = model.num_partitions();
    let threshold = config.threshold;
    let mut counts = vec![0u64; p as usize];
    let mut first_access: BTreeMap<PartitionId, usize> = BTreeMap::new();
    let mut last_access: BTreeMap<PartitionId, usize> = BTreeMap::new();
    for (i, parts) in estimate.predicted_partitions.iter().enumerate() {
        for x in parts.iter() {
            counts[x as usize] += 1;
            first_access.entry(x).or_insert(i);
            last_access.insert(x, i);
        }
    }
    let base_partition = argmax_partition(&counts);

    let tables: Vec<_> = estimate.vertices.iter().filter_map(|&v| model.table(v)).collect();
    let mut lock_set = BTreeMap::new();
    for x in 0..p {
        let confidence = match first_access.get(&x) {
            Some(&i) => estimate.confidence_prefix[i],
            None => tables
                .iter()
                .map(|t| t.partitions[x as usize].read.max(t.partitions[x as usize].write))
                .fold(0.0, f64::max),
        };
        if confidence >= threshold || x == base_partition {
            lock_set.insert(x, confidence);
        }
    }

    let abort_probability = tables.iter().map(|t| t.abort).fold(0.0, f64::max);
    let disable_undo = lock_set.len() == 1 && (!config.abort_cutoff || abort_probability < 1.0 - threshold);

    // A partition is finished after the first step past its last predicted
    // access whose table says it will not be needed again.
    let mut finish_points = BTreeMap::new();
    for &x in lock_set.keys() {
        let from = last_access.get(&x).map_or(1, |&i| i + 1);
        for (i, &v) in estimate.vertices.iter().enumerate().skip(from) {
            if model.vertex(v).kind.is_terminal() {
                break;
            }
            let Some(t) = model.table(v) else { continue };
            let f = t.partitions[x as usize].finish;
            if f >= threshold && f > 0.0 {
                finish_points.insert(x, (i, f));
                break;
            }
        }
    }

    OptimizationPlan {
        base_partition,
        lock_set,
        disable_undo,
        abort_probability,
        finish_points,
        threshold_used: threshold,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Catalog;
    use crate::mapping::infer_mapping;
    use crate::markov::{build_model, record_states};
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, ItemCounts, NewOrderConfig};
    use crate::trace::{TraceRecord, Workload};

    fn fixture(cfg: NewOrderConfig, seed: u64) -> (Catalog, Workload, MarkovModel, ParameterMapping) {
        let catalog = neworder_catalog(cfg.partitions);
        let w = generate_neworder_like(&cfg, seed).unwrap();
        let m = build_model("NewOrder", &w.records, &catalog).unwrap();
        let map = infer_mapping("NewOrder", &w.records, 0.9);
        (catalog, w, m, map)
    }

    fn true_path(m: &MarkovModel, r: &TraceRecord, c: &Catalog) -> Vec<VertexId> {
        let mut path = vec![BEGIN];
        for (s, _) in record_states(r, c).unwrap() {
            path.push(m.lookup_vertex(&s).unwrap());
        }
        path.push(crate::markov::terminal_for(r.outcome));
        path
    }

    #[test]
    fn deterministic_workload_is_predicted_exactly() {
        let cfg = NewOrderConfig {
            num_txns: 400,
            item_counts: ItemCounts::Uniform { min: 2, max: 2 },
            remote_warehouse_probability: 0.0,
            abort_probability: 0.0,
            ..NewOrderConfig::new(4)
        };
        let (catalog, w, m, map) = fixture(cfg, 1);
        let proc = catalog.procedure("NewOrder").unwrap();
        let config = EstimatorConfig::default();
        for r in &w.records {
            let est = estimate_initial_path(&m, &map, &r.proc_params, proc, &config).unwrap();
            assert_eq!(est.vertices, true_path(&m, r, &catalog));
            assert!(est.confidence_prefix.iter().all(|&c| c == 1.0));
            let plan = select_optimizations(&est, &m, &config);
            let w_id = r.proc_params[0].as_int().unwrap() as u32;
            assert_eq!(plan.base_partition, w_id % 4);
            assert_eq!(plan.locked(), PartitionSet::singleton(w_id % 4));
            assert!(plan.disable_undo);
        }
    }

    #[test]
    fn confidence_is_non_increasing_and_threshold_zero_locks_all() {
        let cfg = NewOrderConfig {
            num_txns: 500,
            ..NewOrderConfig::new(4)
        };
        let (catalog, w, m, map) = fixture(cfg, 2);
        let proc = catalog.procedure("NewOrder").unwrap();
        for r in w.records.iter().take(50) {
            let est = estimate_initial_path(&m, &map, &r.proc_params, proc, &EstimatorConfig::default()).unwrap();
            assert!(est.confidence_prefix.windows(2).all(|w| w[1] <= w[0]));
            assert_eq!(est.vertices.len(), est.edge_probabilities.len());
            for pair in est.vertices.windows(2) {
                assert!(m.edge_between(pair[0], pair[1]).is_some());
            }
            let plan = select_optimizations(&est, &m, &EstimatorConfig::with_threshold(0.0));
            assert_eq!(plan.locked(), PartitionSet::all(4));
            assert!(!plan.disable_undo);
            let strict = select_optimizations(&est, &m, &EstimatorConfig::with_threshold(1.0));
            assert!(!strict.disable_undo);
            assert!(strict.lock_set.contains_key(&strict.base_partition));
        }
    }

    #[test]
    fn abort_cutoff_rule() {
        // Only abort edges at 1% make max abort 0.01.
        let cfg = NewOrderConfig {
            num_txns: 2000,
            item_counts: ItemCounts::Uniform { min: 1, max: 1 },
            remote_warehouse_probability: 0.0,
            abort_probability: 0.01,
            ..NewOrderConfig::new(1)
        };
        let (catalog, w, m, map) = fixture(cfg, 3);
        let proc = catalog.procedure("NewOrder").unwrap();
        let r = w
            .records
            .iter()
            .find(|r| r.outcome == crate::trace::Outcome::Committed)
            .unwrap();
        let est = estimate_initial_path(&m, &map, &r.proc_params, proc, &EstimatorConfig::default()).unwrap();
        let plan = select_optimizations(&est, &m, &EstimatorConfig::with_threshold(0.95));
        assert!(plan.abort_probability > 0.0 && plan.abort_probability < 0.05);
        assert!(plan.disable_undo);
        let plan = select_optimizations(&est, &m, &EstimatorConfig::with_threshold(0.999));
        assert!(!plan.disable_undo);
    }

    #[test]
    fn empty_and_unprocessed_models_error() {
        let catalog = neworder_catalog(2);
        let proc = catalog.procedure("NewOrder").unwrap();
        let map = ParameterMapping::empty("NewOrder");
        let raw = MarkovModel::new("NewOrder", 2);
        assert!(matches!(
            estimate_initial_path(&raw, &map, &[], proc, &EstimatorConfig::default()),
            Err(Error::NotFrozen(_))
        ));
        let empty = build_model("NewOrder", &[], &catalog).unwrap();
        assert!(matches!(
            estimate_initial_path(&empty, &map, &[], proc, &EstimatorConfig::default()),
            Err(Error::EmptyModel(_))
        ));
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax_partition(&[1, 3, 3]), 1);
        assert_eq!(argmax_partition(&[0, 0]), 0);
        assert_eq!(argmax_partition(&[2, 6, 6].map(|c| c * 7)), 1);
    }
}
