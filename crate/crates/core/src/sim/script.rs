//! Per-transaction execution scripts: the true query sequence plus what a
//! strategy decides for each attempt.

use serde::{Deserialize, Serialize};

use crate::bundle::{Bundle, ModelVariant};
use crate::catalog::{Catalog, PartitionId, PartitionSet, QueryKind};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::eval::{replay_record, TrueExecution};
use crate::trace::{Outcome, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Oracle,
    HoudiniPartitioned,
    HoudiniGlobal,
    Db2Redirect,
    AssumeSingle,
    AssumeDistributed,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Oracle,
        Strategy::HoudiniPartitioned,
        Strategy::HoudiniGlobal,
        Strategy::Db2Redirect,
        Strategy::AssumeSingle,
        Strategy::AssumeDistributed,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Strategy::Oracle => "oracle",
            Strategy::HoudiniPartitioned => "houdini_partitioned",
            Strategy::HoudiniGlobal => "houdini_global",
            Strategy::Db2Redirect => "db2_redirect",
            Strategy::AssumeSingle => "assume_single",
            Strategy::AssumeDistributed => "assume_distributed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|x| x.name() == s)
    }

    pub fn variant(self) -> Option<ModelVariant> {
        match self {
            Strategy::HoudiniPartitioned => Some(ModelVariant::Partitioned),
            Strategy::HoudiniGlobal => Some(ModelVariant::Global),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Step {
    pub partitions: PartitionSet,
    pub write: bool,
}

/// How one attempt of a transaction runs.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttemptPlan {
    pub base: PartitionId,
    pub lock: PartitionSet,
    /// Writes after this many executed queries skip undo logging.
    pub undo_off_from: Option<usize>,
    /// (queries executed, partition): early prepare points, sorted.
    pub finish: Vec<(usize, PartitionId)>,
}

impl AttemptPlan {
    pub fn single(p: PartitionId) -> Self {
        AttemptPlan {
            base: p,
            lock: PartitionSet::singleton(p),
            undo_off_from: None,
            finish: Vec::new(),
        }
    }

    pub fn lock_all(base: PartitionId, num_partitions: u32) -> Self {
        AttemptPlan {
            base,
            lock: PartitionSet::all(num_partitions),
            undo_off_from: None,
            finish: Vec::new(),
        }
    }

    pub fn is_single(&self) -> bool {
        self.lock.len() <= 1
    }

    fn finished_before(&self, step: usize) -> PartitionSet {
        self.finish
            .iter()
            .filter(|(s, _)| *s <= step)
            .map(|(_, p)| *p)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Violation {
    /// Query touched a partition outside the lock set.
    Unlocked { partitions: PartitionSet },
    /// Query touched a partition already declared finished.
    Finished { partition: PartitionId },
}

/// First query (0-based) that the plan does not allow.
pub fn first_violation(plan: &AttemptPlan, steps: &[Step]) -> Option<(usize, Violation)> {
    for (i, s) in steps.iter().enumerate() {
        if !s.partitions.is_subset(plan.lock) {
            return Some((
                i,
                Violation::Unlocked {
                    partitions: s.partitions,
                },
            ));
        }
        if let Some(p) = s.partitions.iter().find(|p| plan.finished_before(i).contains(*p)) {
            return Some((i, Violation::Finished { partition: p }));
        }
    }
    None
}

/// A record prepared for simulation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TxnScript {
    pub record_index: usize,
    pub steps: Vec<Step>,
    pub aborts: bool,
    pub true_base: PartitionId,
    pub touched: PartitionSet,
    /// Fixed first-attempt plan for strategies that know it up front.
    pub plan: Option<AttemptPlan>,
}

impl TxnScript {
    pub fn read_only(&self, upto: usize) -> bool {
        self.steps[..upto.min(self.steps.len())].iter().all(|s| !s.write)
    }

    /// The plan a perfectly informed client would give.
    pub fn oracle_plan(&self) -> AttemptPlan {
        let single = self.touched.len() <= 1;
        let mut finish = Vec::new();
        if !single {
            for x in self.touched.iter().filter(|&x| x != self.true_base) {
                let last = self
                    .steps
                    .iter()
                    .rposition(|s| s.partitions.contains(x))
                    .expect("touched");
                if last + 1 < self.steps.len() {
                    finish.push((last + 1, x));
                }
            }
            finish.sort();
        }
        AttemptPlan {
            base: self.true_base,
            lock: if self.touched.is_empty() {
                PartitionSet::singleton(self.true_base)
            } else {
                self.touched
            },
            undo_off_from: (single && !self.aborts).then_some(0),
            finish,
        }
    }
}

/// Builds scripts for `records`; Houdini strategies also get their plans
/// from the bundle.
pub fn build_script(
    index: usize,
    record: &TraceRecord,
    catalog: &Catalog,
    strategy: Strategy,
    bundle: Option<&Bundle>,
    estimator: &EstimatorConfig,
) -> Result<TxnScript> {
    let proc = catalog.procedure(&record.proc_name)?;
    let truth = TrueExecution::of(record, catalog)?;
    let steps: Vec<Step> = truth
        .steps
        .iter()
        .zip(&record.queries)
        .map(|(p, inv)| Step {
            partitions: *p,
            write: proc.query(&inv.query_name).is_some_and(|q| q.kind == QueryKind::Write),
        })
        .collect();
    let mut script = TxnScript {
        record_index: index,
        steps,
        aborts: record.outcome == Outcome::Aborted,
        true_base: truth.base_partition,
        touched: truth.touched,
        plan: None,
    };
    script.plan = match strategy {
        Strategy::Oracle => Some(script.oracle_plan()),
        Strategy::HoudiniGlobal | Strategy::HoudiniPartitioned => {
            let variant = strategy.variant().expect("houdini strategies have a variant");
            let bundle = bundle.ok_or_else(|| Error::Config(format!("{} needs a model bundle", strategy.name())))?;
            let model = bundle
                .model_for(variant, &record.proc_name, &record.proc_params)
                .ok_or_else(|| Error::UnknownProcedure(record.proc_name.clone()))?;
            let mapping = bundle
                .mapping(&record.proc_name)
                .ok_or_else(|| Error::UnknownProcedure(record.proc_name.clone()))?;
            let (_, replay) = replay_record(model, mapping, record, catalog, estimator)?;
            let mut finish: Vec<(usize, PartitionId)> = replay.finished.iter().map(|(p, s)| (*s, *p)).collect();
            finish.sort();
            Some(AttemptPlan {
                base: replay.plan.base_partition,
                lock: replay.plan.locked(),
                undo_off_from: replay.undo_off_from,
                finish,
            })
        }
        _ => None,
    };
    Ok(script)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn steps(parts: &[&[u32]]) -> Vec<Step> {
        parts
            .iter()
            .map(|p| Step {
                partitions: p.iter().copied().collect(),
                write: true,
            })
            .collect()
    }

    #[test]
    fn violations() {
        let s = steps(&[&[0], &[1], &[0]]);
        let mut plan = AttemptPlan::single(0);
        assert_eq!(
            first_violation(&plan, &s),
            Some((
                1,
                Violation::Unlocked {
                    partitions: PartitionSet::singleton(1)
                }
            ))
        );
        plan.lock = [0, 1].into_iter().collect();
        assert_eq!(first_violation(&plan, &s), None);
        plan.finish = vec![(1, 0)];
        assert_eq!(
            first_violation(&plan, &s),
            Some((2, Violation::Finished { partition: 0 }))
        );
        plan.finish = vec![(2, 1)];
        assert_eq!(first_violation(&plan, &s), None);
    }

    #[test]
    fn oracle_never_violates() {
        let script = TxnScript {
            record_index: 0,
            steps: steps(&[&[2], &[3], &[2], &[2]]),
            aborts: false,
            true_base: 2,
            touched: [2, 3].into_iter().collect(),
            plan: None,
        };
        let plan = script.oracle_plan();
        assert_eq!(plan.finish, vec![(2, 3)]);
        assert_eq!(plan.undo_off_from, None);
        assert_eq!(first_violation(&plan, &script.steps), None);
    }
}
