//! Penalty-based scoring of a set of models against held-out records.

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::Result;
use crate::estimator::EstimatorConfig;
use crate::eval::{evaluate_record, RecordOutcome};
use crate::mapping::ParameterMapping;
use crate::par::{self, Parallelism};
use crate::trace::TraceRecord;

use super::ClusteredModels;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostWeights {
    /// Wrong base partition.
    pub op1: u64,
    /// Each partition locked but unused, or used but not locked.
    pub op2_per_partition: u64,
    /// Each partition finished too early or never finished.
    pub op4_per_partition: u64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights {
            op1: 10,
            op2_per_partition: 5,
            op4_per_partition: 1,
        }
    }
}

/// Penalty for one record; `u64::MAX` if a transaction that wrote aborted
/// with undo logging off.
pub fn record_cost(outcome: &RecordOutcome, weights: &CostWeights) -> u64 {
    if outcome.false_disable {
        return u64::MAX;
    }
    let op1 = if outcome.op1 { 0 } else { weights.op1 };
    let op2 = weights
        .op2_per_partition
        .saturating_mul((outcome.locked_unused + outcome.used_unlocked) as u64);
    let op4 = weights
        .op4_per_partition
        .saturating_mul((outcome.premature_finishes + outcome.missed_finishes) as u64);
    op1.saturating_add(op2).saturating_add(op4)
}

/// Saturating sum of [`record_cost`] over `records`.
pub fn estimate_cost(
    models: &ClusteredModels,
    mapping: &ParameterMapping,
    records: &[&TraceRecord],
    catalog: &Catalog,
    config: &EstimatorConfig,
    weights: &CostWeights,
    mode: Parallelism,
) -> Result<u64> {
    let costs = par::map(mode, records, |r| {
        evaluate_record(models.select_for(r), mapping, r, catalog, config).map(|(o, _)| record_cost(&o, weights))
    });
    let mut total = 0u64;
    for c in costs {
        total = total.saturating_add(c?);
    }
    Ok(total)
}
