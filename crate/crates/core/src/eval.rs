//! Offline scoring of predictions against recorded transactions.
//!
//! Each record is estimated as if it were a new request, then its real
//! query sequence is replayed through a [`TxnSession`] to collect runtime
//! updates. The outcome says which of the four optimizations were right.

use std::collections::BTreeMap;
use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, PartitionId, PartitionSet, QueryKind};
use crate::error::Result;
use crate::estimator::session::{PathNode, RuntimeUpdate, TxnSession};
use crate::estimator::{
    argmax_partition, estimate_initial_path, select_optimizations, EstimatorConfig, OptimizationPlan, PathEstimate,
};
use crate::mapping::ParameterMapping;
use crate::markov::{record_states, MarkovModel, VertexId};
use crate::par::{self, Parallelism};
use crate::trace::{Outcome, TraceRecord};

/// Where the estimate first left the actual path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Divergence {
    pub step: usize,
    pub predicted: Option<VertexId>,
    pub actual: Option<VertexId>,
    /// Valid candidates when the estimator made that choice.
    pub valid_candidates: usize,
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordOutcome {
    pub txn_id: u64,
    pub path_exact: bool,
    pub op1: bool,
    pub op2: bool,
    pub op3: bool,
    pub op4: bool,
    pub locked_unused: usize,
    pub used_unlocked: usize,
    pub premature_finishes: usize,
    pub missed_finishes: usize,
    /// Undo was off when a transaction that had written aborted.
    pub false_disable: bool,
    pub undo_disabled: bool,
    pub divergence: Option<Divergence>,
}

impl RecordOutcome {
    pub fn all_correct(&self) -> bool {
        self.op1 && self.op2 && self.op3 && self.op4
    }
}

/// Ground truth about one record, independent of any model.
#[derive(Debug, Clone, PartialEq)]
pub struct TrueExecution {
    /// Partitions per query, in order.
    pub steps: Vec<PartitionSet>,
    pub kinds: Vec<QueryKind>,
    pub touched: PartitionSet,
    pub base_partition: PartitionId,
    pub outcome: Outcome,
}

impl TrueExecution {
    pub fn of(record: &TraceRecord, catalog: &Catalog) -> Result<Self> {
        let states = record_states(record, catalog)?;
        let mut counts = vec![0u64; catalog.num_partitions as usize];
        let mut touched = PartitionSet::EMPTY;
        for (s, _) in &states {
            for x in s.partitions.iter() {
                counts[x as usize] += 1;
            }
            touched = touched.union(s.partitions);
        }
        Ok(TrueExecution {
            steps: states.iter().map(|(s, _)| s.partitions).collect(),
            kinds: states.iter().map(|(_, k)| *k).collect(),
            touched,
            base_partition: argmax_partition(&counts),
            outcome: record.outcome,
        })
    }

    /// Step (1-based, as in path indices) of the last access to `x`.
    pub fn last_access(&self, x: PartitionId) -> Option<usize> {
        self.steps.iter().rposition(|s| s.contains(x)).map(|i| i + 1)
    }
}

/// Step after which each non-base partition is treated as finished: the
/// earlier of the plan's finish point and the first runtime update. Plan
/// points the actual path never reached on the estimate are dropped.
pub fn finish_steps(plan: &OptimizationPlan, updates: &[RuntimeUpdate]) -> BTreeMap<PartitionId, usize> {
    let deviation = updates.iter().find_map(|u| match *u {
        RuntimeUpdate::Deviation { step } => Some(step),
        _ => None,
    });
    let mut out: BTreeMap<PartitionId, usize> = plan
        .finish_points
        .iter()
        .filter(|(p, (i, _))| **p != plan.base_partition && deviation.is_none_or(|d| *i < d))
        .map(|(p, (i, _))| (*p, *i))
        .collect();
    for u in updates {
        if let RuntimeUpdate::PartitionFinished { step, partition, .. } = *u {
            if partition != plan.base_partition {
                let e = out.entry(partition).or_insert(step);
                *e = (*e).min(step);
            }
        }
    }
    out
}

/// What the predictor decided for one record, replayed along its true path.
#[derive(Debug, Clone, PartialEq)]
pub struct Replay {
    pub estimate: Option<PathEstimate>,
    pub plan: OptimizationPlan,
    /// Writes after this many executed queries skip undo logging.
    pub undo_off_from: Option<usize>,
    /// Non-base partition -> queries executed when it was declared finished.
    pub finished: BTreeMap<PartitionId, usize>,
    pub path: Vec<PathNode>,
    pub path_exact: bool,
}

/// Estimates and plans `record` as a new request, then feeds its actual
/// queries through a session to collect runtime updates. The model is not
/// modified.
pub fn replay_record(
    model: &Arc<MarkovModel>,
    mapping: &ParameterMapping,
    record: &TraceRecord,
    catalog: &Catalog,
    config: &EstimatorConfig,
) -> Result<(TrueExecution, Replay)> {
    let proc = catalog.procedure(&record.proc_name)?;
    let truth = TrueExecution::of(record, catalog)?;
    let estimate = estimate_initial_path(model, mapping, &record.proc_params, proc, config).ok();
    let plan = match &estimate {
        Some(e) => select_optimizations(e, model, config),
        None => OptimizationPlan::conservative(truth.base_partition, catalog.num_partitions),
    };
    let watch = plan.locked().difference(PartitionSet::singleton(plan.base_partition));
    let mut session = TxnSession::new(
        model.clone(),
        config.threshold,
        estimate.clone(),
        watch,
        plan.is_single_partition() && !plan.disable_undo,
    );
    let mut undo_off_from = plan.disable_undo.then_some(0);
    for (inv, parts) in record.queries.iter().zip(&truth.steps) {
        let q = proc.query(&inv.query_name).expect("validated by record_states");
        for u in session.track_execution(q, *parts)? {
            if let RuntimeUpdate::DisableUndo { step } = u {
                undo_off_from.get_or_insert(step);
            }
        }
    }
    session.finish(record.outcome)?;
    let finished = finish_steps(&plan, session.updates());
    let replay = Replay {
        estimate,
        plan,
        undo_off_from,
        finished,
        path_exact: session.matches_estimate(),
        path: session.path().to_vec(),
    };
    Ok((truth, replay))
}

/// Estimates, plans and replays one record, then scores it.
pub fn evaluate_record(
    model: &Arc<MarkovModel>,
    mapping: &ParameterMapping,
    record: &TraceRecord,
    catalog: &Catalog,
    config: &EstimatorConfig,
) -> Result<(RecordOutcome, Replay)> {
    let (truth, replay) = replay_record(model, mapping, record, catalog, config)?;
    let Replay {
        estimate,
        plan,
        undo_off_from: disabled_at,
        finished,
        path_exact,
        ..
    } = &replay;
    let locked = plan.locked();
    let path_exact = *path_exact;
    // Writes at steps after undo went off (a plan-level disable counts from 0).
    let wrote_unlogged = disabled_at.is_some_and(|d| {
        truth
            .kinds
            .iter()
            .enumerate()
            .any(|(i, k)| *k == QueryKind::Write && i + 1 > d)
    });
    let false_disable = truth.outcome == Outcome::Aborted && wrote_unlogged;
    let safe_to_disable = truth.touched.len() <= 1 && truth.outcome == Outcome::Committed;
    let undo_disabled = disabled_at.is_some();

    let last_step = truth.steps.len();
    let mut premature = 0;
    let mut missed = 0;
    for x in truth.touched.iter() {
        if x == plan.base_partition {
            continue;
        }
        let last = truth.last_access(x).unwrap_or(0);
        match finished.get(&x) {
            Some(&s) if s < last => premature += 1,
            Some(_) => {}
            None if truth.touched.len() >= 2 && last < last_step => missed += 1,
            None => {}
        }
    }

    let divergence = (!path_exact).then(|| {
        let est = estimate.as_ref();
        let actual: Vec<Option<VertexId>> = replay
            .path
            .iter()
            .map(|n| match n {
                PathNode::Known(v) => Some(*v),
                _ => None,
            })
            .collect();
        let predicted: Vec<VertexId> = est.map(|e| e.vertices.clone()).unwrap_or_default();
        let step = (0..actual.len().max(predicted.len()))
            .find(|&i| actual.get(i).copied().flatten() != predicted.get(i).copied() || actual.get(i).is_none())
            .unwrap_or(0);
        let decision = est.and_then(|e| step.checked_sub(1).and_then(|i| e.decisions.get(i)));
        Divergence {
            step,
            predicted: predicted.get(step).copied(),
            actual: actual.get(step).copied().flatten(),
            valid_candidates: decision.map_or(0, |d| d.valid_candidates),
            fallback: decision.is_some_and(|d| d.fallback),
        }
    });

    let outcome = RecordOutcome {
        txn_id: record.txn_id,
        path_exact,
        op1: plan.base_partition == truth.base_partition,
        op2: locked == truth.touched,
        op3: undo_disabled == safe_to_disable,
        op4: premature == 0 && missed == 0,
        locked_unused: locked.difference(truth.touched).len(),
        used_unlocked: truth.touched.difference(locked).len(),
        premature_finishes: premature,
        missed_finishes: missed,
        false_disable,
        undo_disabled,
        divergence,
    };
    Ok((outcome, replay))
}

/// Per-procedure success counts.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OpCounts {
    pub records: usize,
    pub op1: usize,
    pub op2: usize,
    pub op3: usize,
    pub op4: usize,
    pub all: usize,
    pub path_exact: usize,
    pub false_disables: usize,
}

impl OpCounts {
    pub fn add(&mut self, o: &RecordOutcome) {
        self.records += 1;
        self.op1 += o.op1 as usize;
        self.op2 += o.op2 as usize;
        self.op3 += o.op3 as usize;
        self.op4 += o.op4 as usize;
        self.all += o.all_correct() as usize;
        self.path_exact += o.path_exact as usize;
        self.false_disables += o.false_disable as usize;
    }

    pub fn merge(&mut self, other: &OpCounts) {
        self.records += other.records;
        self.op1 += other.op1;
        self.op2 += other.op2;
        self.op3 += other.op3;
        self.op4 += other.op4;
        self.all += other.all;
        self.path_exact += other.path_exact;
        self.false_disables += other.false_disables;
    }

    fn pct(&self, n: usize) -> f64 {
        if self.records == 0 {
            0.0
        } else {
            100.0 * n as f64 / self.records as f64
        }
    }

    pub fn op_pct(&self) -> [f64; 4] {
        [
            self.pct(self.op1),
            self.pct(self.op2),
            self.pct(self.op3),
            self.pct(self.op4),
        ]
    }

    /// Share of records with all four optimizations right.
    pub fn total_pct(&self) -> f64 {
        self.pct(self.all)
    }

    pub fn path_exact_pct(&self) -> f64 {
        self.pct(self.path_exact)
    }
}

/// Success rates per model variant and procedure.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    /// variant -> procedure -> counts.
    pub rows: BTreeMap<String, BTreeMap<String, OpCounts>>,
}

impl EvaluationReport {
    pub fn add(&mut self, variant: &str, procedure: &str, outcome: &RecordOutcome) {
        self.rows
            .entry(variant.to_string())
            .or_default()
            .entry(procedure.to_string())
            .or_default()
            .add(outcome);
    }

    /// Record-weighted totals for one variant.
    pub fn total(&self, variant: &str) -> OpCounts {
        let mut t = OpCounts::default();
        for c in self.rows.get(variant).into_iter().flat_map(|m| m.values()) {
            t.merge(c);
        }
        t
    }

    pub fn is_empty(&self) -> bool {
        self.rows.values().all(|m| m.is_empty())
    }

    pub fn merge(&mut self, other: &EvaluationReport) {
        for (variant, procs) in &other.rows {
            for (proc, c) in procs {
                self.rows
                    .entry(variant.clone())
                    .or_default()
                    .entry(proc.clone())
                    .or_default()
                    .merge(c);
            }
        }
    }

    pub fn write_csv(&self, out: &mut impl Write) -> Result<()> {
        writeln!(out, "#schema=evaluation.v1")?;
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "variant",
            "procedure",
            "records",
            "op1_pct",
            "op2_pct",
            "op3_pct",
            "op4_pct",
            "total_pct",
            "path_exact_pct",
            "false_disables",
        ])?;
        let mut row = |variant: &str, proc: &str, c: &OpCounts| -> Result<()> {
            let [a, b, d, e] = c.op_pct();
            w.write_record([
                variant.to_string(),
                proc.to_string(),
                c.records.to_string(),
                format!("{a:.2}"),
                format!("{b:.2}"),
                format!("{d:.2}"),
                format!("{e:.2}"),
                format!("{:.2}", c.total_pct()),
                format!("{:.2}", c.path_exact_pct()),
                c.false_disables.to_string(),
            ])?;
            Ok(())
        };
        for (variant, procs) in &self.rows {
            for (proc, c) in procs {
                row(variant, proc, c)?;
            }
            row(variant, "*total*", &self.total(variant))?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Evaluates many records against one model, in parallel, in input order.
pub fn evaluate_records(
    model: &Arc<MarkovModel>,
    mapping: &ParameterMapping,
    records: &[&TraceRecord],
    catalog: &Catalog,
    config: &EstimatorConfig,
    mode: Parallelism,
) -> Result<Vec<RecordOutcome>> {
    par::map(mode, records, |r| {
        evaluate_record(model, mapping, r, catalog, config).map(|(o, _)| o)
    })
    .into_iter()
    .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mapping::infer_mapping;
    use crate::markov::build_model;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, ItemCounts, NewOrderConfig};

    #[test]
    fn deterministic_workload_scores_perfectly() {
        let catalog = neworder_catalog(4);
        let cfg = NewOrderConfig {
            num_txns: 400,
            item_counts: ItemCounts::Uniform { min: 3, max: 3 },
            remote_warehouse_probability: 0.0,
            abort_probability: 0.0,
            ..NewOrderConfig::new(4)
        };
        let w = generate_neworder_like(&cfg, 8).unwrap();
        let (train, test) = w.split_at_fraction(0.5);
        let model = Arc::new(build_model("NewOrder", &train.records, &catalog).unwrap());
        let map = infer_mapping("NewOrder", &train.records, 0.9);
        let refs: Vec<&TraceRecord> = test.records.iter().collect();
        let outs = evaluate_records(
            &model,
            &map,
            &refs,
            &catalog,
            &EstimatorConfig::default(),
            Parallelism::default(),
        )
        .unwrap();
        let mut report = EvaluationReport::default();
        for o in &outs {
            assert!(o.path_exact && o.all_correct(), "{o:?}");
            report.add("global", "NewOrder", o);
        }
        assert_eq!(report.total("global").total_pct(), 100.0);
        let mut buf = Vec::new();
        report.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("#schema=evaluation.v1\n"));
        assert!(text.contains("global,NewOrder,200,100.00,100.00,100.00,100.00,100.00,100.00,0"));
    }

    #[test]
    fn remote_items_are_distributed_truths() {
        let catalog = neworder_catalog(4);
        let cfg = NewOrderConfig {
            num_txns: 2000,
            abort_probability: 0.0,
            remote_warehouse_probability: 0.5,
            ..NewOrderConfig::new(4)
        };
        let w = generate_neworder_like(&cfg, 8).unwrap();
        let model = Arc::new(build_model("NewOrder", &w.records, &catalog).unwrap());
        let map = infer_mapping("NewOrder", &w.records, 0.9);
        for r in w.records.iter().take(200) {
            let (o, Replay { plan, .. }) =
                evaluate_record(&model, &map, r, &catalog, &EstimatorConfig::default()).unwrap();
            let truth = TrueExecution::of(r, &catalog).unwrap();
            assert!(!o.false_disable);
            if plan.locked().len() > 1 {
                assert!(!o.undo_disabled);
            }
            // Local transactions never branch on partitions, so their lock
            // set is exact. Remote ones can lose to a more frequent branch.
            if truth.touched.len() == 1 {
                assert!(o.op2, "{:?} vs {:?}", plan.locked(), truth.touched);
            }
        }
    }
}
