//! The event loop. Each partition is a single-threaded engine with a FIFO
//! lock queue; distributed transactions take their locks in ascending
//! partition order, so the loop cannot deadlock.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::catalog::{PartitionId, PartitionSet};
use crate::estimator::argmax_partition;

use super::script::{first_violation, AttemptPlan, Strategy, TxnScript, Violation};
use super::{EventKind, SimConfig, SimEvent, SimResult};

type TxnId = usize;

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrive(TxnId),
    Prepare(TxnId, u32, PartitionId),
    Violate(TxnId, u32, usize, Violation),
    Complete(TxnId, u32),
    /// A speculative run finished at a partition.
    SpecDone(TxnId, u32),
}

#[derive(Debug)]
struct Txn {
    client: usize,
    script: usize,
    attempt: u32,
    plan: AttemptPlan,
    first_plan: AttemptPlan,
    held: PartitionSet,
    prepared: PartitionSet,
    /// Partition (and owner) this txn is speculating on.
    spec: Option<(PartitionId, TxnId)>,
    restarts: u32,
    finish_violated: bool,
    done: bool,
}

#[derive(Debug, Default)]
struct Partition {
    holder: Option<TxnId>,
    spec_running: Option<TxnId>,
    /// Speculative writers waiting for the holder to commit.
    deferred: Vec<TxnId>,
    queue: VecDeque<TxnId>,
}

pub(super) struct Engine<'a> {
    cfg: &'a SimConfig,
    strategy: Strategy,
    scripts: &'a [TxnScript],
    order: Vec<usize>,
    cursor: usize,
    rng: ChaCha8Rng,
    now: u64,
    seq: u64,
    heap: BinaryHeap<Reverse<(u64, u64)>>,
    pending: Vec<Option<Ev>>,
    txns: Vec<Txn>,
    parts: Vec<Partition>,
    result: SimResult,
    op_hits: [u64; 4],
    log: Option<Vec<SimEvent>>,
    warmup: u64,
    stopped: bool,
}

impl<'a> Engine<'a> {
    pub(super) fn new(cfg: &'a SimConfig, strategy: Strategy, scripts: &'a [TxnScript], record_events: bool) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let mut order: Vec<usize> = (0..scripts.len()).collect();
        order.shuffle(&mut rng);
        Engine {
            cfg,
            strategy,
            scripts,
            order,
            cursor: 0,
            rng,
            now: 0,
            seq: 0,
            heap: BinaryHeap::new(),
            pending: Vec::new(),
            txns: Vec::new(),
            parts: (0..cfg.num_partitions).map(|_| Partition::default()).collect(),
            result: SimResult::empty(strategy, cfg),
            op_hits: [0; 4],
            log: record_events.then(Vec::new),
            warmup: (cfg.duration as f64 * cfg.warmup_fraction) as u64,
            stopped: false,
        }
    }

    fn node(&self, p: PartitionId) -> u32 {
        p / self.cfg.partitions_per_node
    }

    fn home(&self, client: usize) -> PartitionId {
        (client % self.cfg.num_partitions as usize) as PartitionId
    }

    fn push(&mut self, at: u64, ev: Ev) {
        self.heap.push(Reverse((at, self.seq)));
        self.pending.push(Some(ev));
        self.seq += 1;
    }

    fn note(&mut self, txn: TxnId, kind: EventKind, partition: Option<PartitionId>) {
        if let Some(log) = &mut self.log {
            let t = &self.txns[txn];
            log.push(SimEvent {
                time: self.now,
                txn,
                record: self.scripts[t.script].record_index,
                attempt: t.attempt,
                kind,
                partition,
            });
        }
    }

    pub(super) fn run(mut self) -> (SimResult, Option<Vec<SimEvent>>) {
        if !self.scripts.is_empty() {
            let clients = self.cfg.clients_per_partition * self.cfg.num_partitions as usize;
            for c in 0..clients {
                self.submit(c);
            }
        }
        while let Some(Reverse((at, seq))) = self.heap.pop() {
            if at > self.cfg.duration || self.stopped {
                break;
            }
            self.now = at;
            let ev = self.pending[seq as usize].take().expect("each event fires once");
            match ev {
                Ev::Arrive(t) => self.arrive(t),
                Ev::Prepare(t, a, p) if self.txns[t].attempt == a => self.prepare(t, p),
                Ev::Violate(t, a, step, v) if self.txns[t].attempt == a => self.violate(t, step, v),
                Ev::Complete(t, a) if self.txns[t].attempt == a => self.complete(t),
                Ev::SpecDone(t, a) if self.txns[t].attempt == a => self.spec_done(t),
                _ => {}
            }
        }
        let mut r = self.result;
        r.in_flight = self.txns.iter().filter(|t| !t.done).count() as u64;
        let window = self.cfg.duration.saturating_sub(self.warmup).max(1);
        r.throughput = r.measured as f64 * 1000.0 / window as f64;
        for i in 0..4 {
            r.op_rates[i] = if r.measured == 0 {
                0.0
            } else {
                100.0 * self.op_hits[i] as f64 / r.measured as f64
            };
        }
        (r, self.log)
    }

    fn submit(&mut self, client: usize) {
        let script = self.order[self.cursor % self.order.len()];
        self.cursor += 1;
        let s = &self.scripts[script];
        let p = self.cfg.num_partitions;
        let home = self.home(client);
        let plan = match self.strategy {
            Strategy::Oracle | Strategy::HoudiniGlobal | Strategy::HoudiniPartitioned => {
                s.plan.clone().expect("plans are prepared for informed strategies")
            }
            Strategy::AssumeSingle => AttemptPlan::single(self.rng.gen_range(0..p)),
            Strategy::AssumeDistributed => AttemptPlan::lock_all(self.rng.gen_range(0..p), p),
            Strategy::Db2Redirect => {
                let ppn = self.cfg.partitions_per_node;
                let node = self.node(home);
                AttemptPlan::single((node * ppn + self.rng.gen_range(0..ppn)).min(p - 1))
            }
        };
        let latency = if self.node(plan.base) != self.node(home) {
            self.cfg.costs.remote_round_trip
        } else {
            0
        };
        let id = self.txns.len();
        self.txns.push(Txn {
            client,
            script,
            attempt: 0,
            first_plan: plan.clone(),
            plan,
            held: PartitionSet::EMPTY,
            prepared: PartitionSet::EMPTY,
            spec: None,
            restarts: 0,
            finish_violated: false,
            done: false,
        });
        self.result.submitted += 1;
        self.push(self.now + latency, Ev::Arrive(id));
    }

    fn arrive(&mut self, t: TxnId) {
        self.note(t, EventKind::Arrive, None);
        self.request_next_lock(t);
    }

    fn request_next_lock(&mut self, t: TxnId) {
        let txn = &self.txns[t];
        match txn.plan.lock.difference(txn.held).first() {
            Some(x) => {
                self.parts[x as usize].queue.push_back(t);
                self.dispatch(x);
            }
            None => self.start(t, None),
        }
    }

    fn dispatch(&mut self, x: PartitionId) {
        let xi = x as usize;
        if self.parts[xi].spec_running.is_some() {
            return;
        }
        match self.parts[xi].holder {
            None => {
                let Some(t) = self.parts[xi].queue.pop_front() else {
                    return;
                };
                self.parts[xi].holder = Some(t);
                self.txns[t].held.insert(x);
                self.request_next_lock(t);
            }
            Some(owner) if self.txns[owner].prepared.contains(x) => {
                let single = PartitionSet::singleton(x);
                let pos = self.parts[xi]
                    .queue
                    .iter()
                    .position(|&t| self.txns[t].plan.lock == single);
                if let Some(pos) = pos {
                    let t = self.parts[xi].queue.remove(pos).expect("position is valid");
                    self.parts[xi].spec_running = Some(t);
                    self.txns[t].spec = Some((x, owner));
                    self.start(t, Some(x));
                }
            }
            Some(_) => {}
        }
    }

    /// Cost of query `i` under `plan`.
    fn step_cost(&self, t: TxnId, i: usize, speculative: bool) -> u64 {
        let txn = &self.txns[t];
        let step = &self.scripts[txn.script].steps[i];
        let c = &self.cfg.costs;
        let mut cost = if txn.plan.is_single() {
            c.local_query
        } else {
            c.remote_round_trip
        };
        let undo_off = !speculative && txn.plan.undo_off_from.is_some_and(|d| i + 1 > d);
        if step.write && !undo_off {
            cost += c.undo_log_per_write;
        }
        cost
    }

    fn start(&mut self, t: TxnId, speculative: Option<PartitionId>) {
        self.note(
            t,
            if speculative.is_some() {
                EventKind::SpecStart
            } else {
                EventKind::Start
            },
            speculative,
        );
        let txn = &self.txns[t];
        let attempt = txn.attempt;
        let steps = &self.scripts[txn.script].steps;
        let violation = first_violation(&txn.plan, steps);
        let upto = violation.map_or(steps.len(), |(v, _)| v);
        let mut elapsed = self.cfg.costs.base_dispatch;
        let mut at_step = Vec::with_capacity(upto + 1);
        for i in 0..upto {
            at_step.push(elapsed);
            elapsed += self.step_cost(t, i, speculative.is_some());
        }
        at_step.push(elapsed);
        let finish = self.txns[t].plan.finish.clone();
        for (s, p) in finish {
            if s <= upto && speculative.is_none() {
                self.push(self.now + at_step[s], Ev::Prepare(t, attempt, p));
            }
        }
        match violation {
            Some((v, kind)) => self.push(self.now + elapsed, Ev::Violate(t, attempt, v, kind)),
            None => {
                let commit = if self.txns[t].plan.is_single() {
                    0
                } else {
                    self.cfg.costs.two_pc_round
                };
                let ev = if speculative.is_some() {
                    Ev::SpecDone(t, attempt)
                } else {
                    Ev::Complete(t, attempt)
                };
                self.push(self.now + elapsed + commit, ev);
            }
        }
    }

    fn prepare(&mut self, t: TxnId, p: PartitionId) {
        if !self.txns[t].held.contains(p) {
            return;
        }
        self.txns[t].prepared.insert(p);
        self.note(t, EventKind::Prepare, Some(p));
        self.dispatch(p);
    }

    /// Drops `t`'s locks. Speculative writers behind it commit if `t`
    /// committed and restart otherwise.
    fn release(&mut self, t: TxnId, committed: bool) {
        let held = self.txns[t].held;
        self.txns[t].held = PartitionSet::EMPTY;
        self.txns[t].prepared = PartitionSet::EMPTY;
        for x in held.iter() {
            let xi = x as usize;
            if self.parts[xi].holder == Some(t) {
                self.parts[xi].holder = None;
            }
            for w in std::mem::take(&mut self.parts[xi].deferred) {
                if committed {
                    self.result.speculative_commits += 1;
                    self.finish_txn(w, true);
                } else {
                    self.restart_same(w);
                }
            }
        }
        for x in held.iter() {
            self.dispatch(x);
        }
    }

    /// Reruns a speculative transaction with the same plan. Not counted as
    /// a misprediction.
    fn restart_same(&mut self, t: TxnId) {
        let txn = &mut self.txns[t];
        txn.attempt += 1;
        txn.spec = None;
        self.result.speculative_restarts += 1;
        self.note(t, EventKind::Restart, None);
        self.push(self.now + self.cfg.costs.restart_penalty, Ev::Arrive(t));
    }

    fn complete(&mut self, t: TxnId) {
        let s = &self.scripts[self.txns[t].script];
        let aborts = s.aborts;
        if aborts && self.txns[t].plan.is_single() {
            let off = self.txns[t].plan.undo_off_from;
            let unlogged = s
                .steps
                .iter()
                .enumerate()
                .any(|(i, st)| st.write && off.is_some_and(|d| i + 1 > d));
            if unlogged {
                self.note(t, EventKind::Failed, Some(self.txns[t].plan.base));
                self.result.failed = true;
                self.stopped = true;
                return;
            }
        }
        self.release(t, !aborts);
        self.finish_txn(t, !aborts);
    }

    fn spec_done(&mut self, t: TxnId) {
        let (x, owner) = self.txns[t].spec.expect("speculative run has a partition");
        let xi = x as usize;
        self.parts[xi].spec_running = None;
        let s = &self.scripts[self.txns[t].script];
        let owner_still_holds = self.parts[xi].holder == Some(owner);
        if s.read_only(s.steps.len()) || !owner_still_holds {
            self.result.speculative_commits += 1;
            self.finish_txn(t, !s.aborts);
        } else {
            self.parts[xi].deferred.push(t);
        }
        self.dispatch(x);
    }

    /// Final bookkeeping for a transaction; its client submits the next one.
    fn finish_txn(&mut self, t: TxnId, committed: bool) {
        let txn = &mut self.txns[t];
        txn.done = true;
        let speculative = txn.spec.take().is_some();
        let s = &self.scripts[txn.script];
        let client = txn.client;
        self.note(t, if committed { EventKind::Commit } else { EventKind::Abort }, None);
        let txn = &self.txns[t];
        if committed {
            self.result.committed += 1;
        } else {
            self.result.user_aborts += 1;
        }
        let undo_disabled = !speculative && txn.plan.undo_off_from.is_some();
        if undo_disabled {
            self.result.undo_disabled += 1;
        }
        if self.now >= self.warmup {
            self.result.measured += 1;
            let hits = [
                txn.first_plan.base == s.true_base,
                txn.restarts == 0 && txn.first_plan.lock == s.touched,
                undo_disabled,
                !txn.first_plan.finish.is_empty() && !txn.finish_violated && txn.restarts == 0,
            ];
            for (h, c) in hits.iter().zip(self.op_hits.iter_mut()) {
                *c += *h as u64;
            }
        }
        self.submit(client);
    }

    fn violate(&mut self, t: TxnId, step: usize, v: Violation) {
        self.note(
            t,
            EventKind::Violation,
            match v {
                Violation::Finished { partition } => Some(partition),
                Violation::Unlocked { partitions } => partitions.first(),
            },
        );
        if let Some((x, _)) = self.txns[t].spec {
            self.parts[x as usize].spec_running = None;
            self.txns[t].spec = None;
            self.dispatch(x);
        }
        if let Violation::Finished { partition } = v {
            self.txns[t].finish_violated = true;
            let pi = partition as usize;
            if let Some(r) = self.parts[pi].spec_running.take() {
                self.restart_same(r);
            }
        }
        self.release(t, false);
        let next = self.restart_plan(t, step, v);
        let old_base = self.txns[t].plan.base;
        let latency = self.cfg.costs.restart_penalty
            + if self.node(next.base) != self.node(old_base) {
                self.cfg.costs.remote_round_trip
            } else {
                0
            };
        let txn = &mut self.txns[t];
        txn.plan = next;
        txn.attempt += 1;
        txn.restarts += 1;
        self.result.restarts += 1;
        self.note(t, EventKind::Restart, None);
        self.push(self.now + latency, Ev::Arrive(t));
    }

    fn most_requested(&mut self, t: TxnId, upto: usize) -> PartitionId {
        let s = &self.scripts[self.txns[t].script];
        let mut counts = vec![0u64; self.cfg.num_partitions as usize];
        for st in &s.steps[..=upto.min(s.steps.len() - 1)] {
            for x in st.partitions.iter() {
                counts[x as usize] += 1;
            }
        }
        let best = *counts.iter().max().unwrap_or(&0);
        let ties: Vec<PartitionId> = (0..counts.len())
            .filter(|&i| counts[i] == best)
            .map(|i| i as PartitionId)
            .collect();
        if ties.len() == 1 {
            ties[0]
        } else {
            ties[self.rng.gen_range(0..ties.len())]
        }
    }

    fn restart_plan(&mut self, t: TxnId, step: usize, v: Violation) -> AttemptPlan {
        let p = self.cfg.num_partitions;
        let restarts = self.txns[t].restarts;
        let base = self.txns[t].plan.base;
        match self.strategy {
            Strategy::AssumeSingle if restarts == 0 => {
                let s = &self.scripts[self.txns[t].script];
                let mut counts = vec![0u64; p as usize];
                let mut tried = PartitionSet::EMPTY;
                for st in &s.steps[..=step] {
                    tried = tried.union(st.partitions);
                    for x in st.partitions.iter() {
                        counts[x as usize] += 1;
                    }
                }
                let b = argmax_partition(&counts);
                AttemptPlan {
                    base: b,
                    lock: tried,
                    undo_off_from: None,
                    finish: Vec::new(),
                }
            }
            Strategy::Db2Redirect if restarts == 0 => match v {
                Violation::Unlocked { partitions } if partitions.len() == 1 => {
                    AttemptPlan::single(partitions.first().expect("non-empty"))
                }
                _ => AttemptPlan::lock_all(self.most_requested(t, step), p),
            },
            Strategy::Db2Redirect => AttemptPlan::lock_all(self.most_requested(t, step), p),
            _ => AttemptPlan::lock_all(base, p),
        }
    }
}
