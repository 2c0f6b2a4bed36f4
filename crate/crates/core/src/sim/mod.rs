//! Discrete-event simulation of a partitioned main-memory cluster running a
//! workload under different execution strategies.
//!
//! Time is in abstract integer units. Clients are closed-loop: each one
//! submits its next transaction as soon as the previous one finishes, so
//! partition queues stay full.

mod engine;
pub mod script;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::bundle::Bundle;
use crate::catalog::{Catalog, PartitionId};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::par::{self, Parallelism};
use crate::trace::TraceRecord;

pub use script::{build_script, first_violation, AttemptPlan, Step, Strategy, TxnScript, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CostModel {
    pub local_query: u64,
    pub remote_round_trip: u64,
    pub two_pc_round: u64,
    pub undo_log_per_write: u64,
    pub restart_penalty: u64,
    pub base_dispatch: u64,
}

impl Default for CostModel {
    fn default() -> Self {
        CostModel {
            local_query: 1,
            remote_round_trip: 10,
            two_pc_round: 10,
            undo_log_per_write: 1,
            restart_penalty: 5,
            base_dispatch: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub num_partitions: u32,
    pub partitions_per_node: u32,
    pub costs: CostModel,
    pub clients_per_partition: usize,
    pub duration: u64,
    pub warmup_fraction: f64,
    pub seed: u64,
    pub estimator: EstimatorConfig,
    pub mode: Parallelism,
}

impl SimConfig {
    pub fn new(num_partitions: u32, seed: u64) -> Self {
        SimConfig {
            num_partitions,
            partitions_per_node: 2,
            costs: CostModel::default(),
            clients_per_partition: 4,
            duration: 100_000,
            warmup_fraction: 0.1,
            seed,
            estimator: EstimatorConfig::default(),
            mode: Parallelism::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let c = &self.costs;
        let costs = [
            c.local_query,
            c.remote_round_trip,
            c.two_pc_round,
            c.undo_log_per_write,
            c.restart_penalty,
            c.base_dispatch,
        ];
        if costs.contains(&0) {
            return Err(Error::Config("all simulation costs must be positive".into()));
        }
        if self.num_partitions == 0
            || self.partitions_per_node == 0
            || !self.num_partitions.is_multiple_of(self.partitions_per_node)
        {
            return Err(Error::Config(format!(
                "{} partitions is not a multiple of {} partitions per node",
                self.num_partitions, self.partitions_per_node
            )));
        }
        if self.clients_per_partition == 0 || self.duration == 0 {
            return Err(Error::Config("clients and duration must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.warmup_fraction) {
            return Err(Error::Config("warm-up fraction must be in [0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimResult {
    pub strategy: Strategy,
    pub num_partitions: u32,
    pub threshold: f64,
    pub submitted: u64,
    pub committed: u64,
    pub user_aborts: u64,
    /// Finished (committed or aborted by the procedure) after warm-up.
    pub measured: u64,
    /// Measured transactions per 1000 time units.
    pub throughput: f64,
    /// Restarts after a plan violation.
    pub restarts: u64,
    /// Speculative runs thrown away because their owner aborted or touched
    /// their partition again.
    pub speculative_restarts: u64,
    pub speculative_commits: u64,
    pub undo_disabled: u64,
    pub in_flight: u64,
    /// Percent of measured transactions with the right base partition, an
    /// exact lock set, undo logging off, and a clean early prepare.
    pub op_rates: [f64; 4],
    /// A transaction with undo logging off aborted after writing.
    pub failed: bool,
}

impl SimResult {
    fn empty(strategy: Strategy, cfg: &SimConfig) -> Self {
        SimResult {
            strategy,
            num_partitions: cfg.num_partitions,
            threshold: cfg.estimator.threshold,
            submitted: 0,
            committed: 0,
            user_aborts: 0,
            measured: 0,
            throughput: 0.0,
            restarts: 0,
            speculative_restarts: 0,
            speculative_commits: 0,
            undo_disabled: 0,
            in_flight: 0,
            op_rates: [0.0; 4],
            failed: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventKind {
    Arrive,
    Start,
    SpecStart,
    Prepare,
    Violation,
    Restart,
    Commit,
    Abort,
    /// Abort after a write with undo logging off; the run stops here.
    Failed,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimEvent {
    pub time: u64,
    pub txn: usize,
    pub record: usize,
    pub attempt: u32,
    pub kind: EventKind,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub partition: Option<PartitionId>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimRun {
    pub result: SimResult,
    pub events: Option<Vec<SimEvent>>,
}

/// Prepares every record and runs one simulation.
pub fn run_simulation(
    config: &SimConfig,
    records: &[TraceRecord],
    catalog: &Catalog,
    strategy: Strategy,
    bundle: Option<&Bundle>,
    record_events: bool,
) -> Result<SimRun> {
    config.validate()?;
    if catalog.num_partitions != config.num_partitions {
        return Err(Error::Config(format!(
            "catalog has {} partitions, simulation {}",
            catalog.num_partitions, config.num_partitions
        )));
    }
    if let Some(b) = bundle {
        b.check_catalog(catalog)?;
    }
    let scripts = par::map_range(config.mode, records.len(), |i| {
        build_script(i, &records[i], catalog, strategy, bundle, &config.estimator)
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let (result, events) = engine::Engine::new(config, strategy, &scripts, record_events).run();
    Ok(SimRun { result, events })
}

/// One run per threshold with the same seed; results in input order.
pub fn sweep_confidence(
    config: &SimConfig,
    records: &[TraceRecord],
    catalog: &Catalog,
    bundle: &Bundle,
    strategy: Strategy,
    thresholds: &[f64],
) -> Result<Vec<SimResult>> {
    par::map(config.mode, thresholds, |&t| {
        let cfg = SimConfig {
            estimator: EstimatorConfig {
                threshold: t,
                ..config.estimator
            },
            mode: Parallelism::Sequential,
            ..config.clone()
        };
        run_simulation(&cfg, records, catalog, strategy, Some(bundle), false).map(|r| r.result)
    })
    .into_iter()
    .collect()
}

pub const SIM_CSV_HEADER: [&str; 16] = [
    "strategy",
    "partitions",
    "threshold",
    "throughput",
    "submitted",
    "committed",
    "user_aborts",
    "restarts",
    "speculative_restarts",
    "speculative_commits",
    "undo_disabled",
    "op1_pct",
    "op2_pct",
    "op3_pct",
    "op4_pct",
    "failed",
];

pub fn write_results_csv(out: &mut impl Write, results: &[SimResult]) -> Result<()> {
    writeln!(out, "#schema=simulation.v1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SIM_CSV_HEADER)?;
    for r in results {
        w.write_record([
            r.strategy.name().to_string(),
            r.num_partitions.to_string(),
            format!("{:.4}", r.threshold),
            format!("{:.3}", r.throughput),
            r.submitted.to_string(),
            r.committed.to_string(),
            r.user_aborts.to_string(),
            r.restarts.to_string(),
            r.speculative_restarts.to_string(),
            r.speculative_commits.to_string(),
            r.undo_disabled.to_string(),
            format!("{:.2}", r.op_rates[0]),
            format!("{:.2}", r.op_rates[1]),
            format!("{:.2}", r.op_rates[2]),
            format!("{:.2}", r.op_rates[3]),
            r.failed.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, ItemCounts, NewOrderConfig};

    fn workload(p: u32, remote: f64, n: usize) -> (Catalog, Vec<TraceRecord>) {
        let cfg = NewOrderConfig {
            num_txns: n,
            remote_warehouse_probability: remote,
            item_counts: ItemCounts::Uniform { min: 2, max: 2 },
            abort_probability: 0.0,
            ..NewOrderConfig::new(p)
        };
        (neworder_catalog(p), generate_neworder_like(&cfg, 1).unwrap().records)
    }

    fn sim(p: u32, strategy: Strategy, records: &[TraceRecord], catalog: &Catalog, bundle: Option<&Bundle>) -> SimRun {
        let cfg = SimConfig {
            duration: 20_000,
            ..SimConfig::new(p, 3)
        };
        run_simulation(&cfg, records, catalog, strategy, bundle, true).unwrap()
    }

    #[test]
    fn deterministic_and_conserving() {
        let (catalog, records) = workload(4, 0.1, 400);
        let a = sim(4, Strategy::Db2Redirect, &records, &catalog, None);
        let b = sim(4, Strategy::Db2Redirect, &records, &catalog, None);
        assert_eq!(a, b);
        let r = &a.result;
        assert_eq!(r.submitted, r.committed + r.user_aborts + r.in_flight);
        assert!(r.restarts > 0 && !r.failed);
        let events = a.events.unwrap();
        let commits = events.iter().filter(|e| e.kind == EventKind::Commit).count() as u64;
        assert_eq!(commits, r.committed);
    }

    #[test]
    fn oracle_never_restarts_and_beats_assume_single() {
        let (catalog, records) = workload(8, 0.1, 400);
        let oracle = sim(8, Strategy::Oracle, &records, &catalog, None).result;
        let single = sim(8, Strategy::AssumeSingle, &records, &catalog, None).result;
        assert_eq!(oracle.restarts, 0);
        assert!(oracle.throughput > single.throughput, "{oracle:?} {single:?}");
        assert_eq!(oracle.op_rates[0], 100.0);
        assert_eq!(oracle.op_rates[1], 100.0);
    }

    #[test]
    fn houdini_matches_oracle_on_learnable_workload() {
        let (catalog, records) = workload(4, 0.0, 600);
        let bundle = Bundle::build(&records, &catalog, 0.9, Parallelism::default()).unwrap();
        let h = sim(4, Strategy::HoudiniGlobal, &records, &catalog, Some(&bundle)).result;
        let o = sim(4, Strategy::Oracle, &records, &catalog, None).result;
        assert_eq!(h.op_rates[..3], [100.0; 3]);
        assert!(
            (h.throughput - o.throughput).abs() <= 0.02 * o.throughput,
            "{h:?} {o:?}"
        );
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(SimConfig::new(3, 1).validate().is_err());
        let zero = SimConfig {
            costs: CostModel {
                local_query: 0,
                ..CostModel::default()
            },
            ..SimConfig::new(2, 1)
        };
        assert!(zero.validate().is_err());
        let (catalog, records) = workload(2, 0.0, 10);
        assert!(run_simulation(&SimConfig::new(4, 1), &records, &catalog, Strategy::Oracle, None, false).is_err());
        assert!(run_simulation(
            &SimConfig::new(2, 1),
            &records,
            &catalog,
            Strategy::HoudiniGlobal,
            None,
            false
        )
        .is_err());
    }

    #[test]
    fn assume_distributed_ignores_partition_count() {
        let rates: Vec<f64> = [2, 4, 8]
            .into_iter()
            .map(|p| {
                let (catalog, records) = workload(p, 0.1, 300);
                sim(p, Strategy::AssumeDistributed, &records, &catalog, None)
                    .result
                    .throughput
            })
            .collect();
        let (lo, hi) = rates.iter().fold((f64::MAX, 0.0f64), |(l, h), &r| (l.min(r), h.max(r)));
        assert!(hi <= 1.1 * lo, "{rates:?}");
    }

    #[test]
    fn unsafe_undo_disable_is_detected() {
        use crate::trace::generate::{branchy_catalog, generate_branchy_like, BranchyConfig};
        let catalog = branchy_catalog(2);
        let cfg = BranchyConfig {
            num_txns: 500,
            abort_probability: 0.2,
            ..BranchyConfig::new(2)
        };
        let records = generate_branchy_like(&cfg, 5).unwrap().records;
        let bundle = Bundle::build(&records, &catalog, 0.9, Parallelism::default()).unwrap();
        let mut sc = SimConfig {
            duration: 20_000,
            ..SimConfig::new(2, 3)
        };
        let safe = run_simulation(&sc, &records, &catalog, Strategy::HoudiniGlobal, Some(&bundle), true).unwrap();
        assert!(!safe.result.failed);
        sc.estimator = EstimatorConfig {
            abort_cutoff: false,
            ..EstimatorConfig::default()
        };
        let bad = run_simulation(&sc, &records, &catalog, Strategy::HoudiniGlobal, Some(&bundle), true).unwrap();
        assert!(bad.result.failed, "{:?}", bad.result);
        let events = bad.events.unwrap();
        assert_eq!(events.iter().filter(|e| e.kind == EventKind::Failed).count(), 1);
        assert_eq!(events.last().unwrap().kind, EventKind::Failed);
    }
}
