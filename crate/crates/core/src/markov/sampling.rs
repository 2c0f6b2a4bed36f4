//! Monte-Carlo random-walk estimates of probability tables.
//!
//! Walks follow edge probabilities from a vertex to a terminal and count
//! what happened along the way. This is independent of the children-first
//! recursion in [`MarkovModel::process`](super::MarkovModel::process) and
//! is used to check it.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{MarkovModel, PartitionProbs, ProbabilityTable, VertexId, VertexKind};
use crate::catalog::{PartitionSet, QueryKind};
use crate::par::{self, Parallelism};

/// One random walk from `start`, returning the vertices after `start`.
pub fn random_walk(model: &MarkovModel, start: VertexId, rng: &mut impl Rng) -> Vec<VertexId> {
    let mut path = Vec::new();
    let mut cur = start;
    loop {
        let succ = model.successors(cur);
        if succ.is_empty() {
            return path;
        }
        let mut x: f64 = rng.gen();
        let mut next = succ[succ.len() - 1].1;
        for (e, v) in &succ {
            if x < e.probability {
                next = *v;
                break;
            }
            x -= e.probability;
        }
        path.push(next);
        cur = next;
    }
}

/// Table estimated from `samples` walks starting at `v`.
pub fn sample_table(model: &MarkovModel, v: VertexId, samples: usize, seed: u64) -> ProbabilityTable {
    let p = model.num_partitions() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (own, previous) = match &model.vertex(v).kind {
        VertexKind::State(s) => (s.partitions, s.previous),
        _ => (PartitionSet::EMPTY, PartitionSet::EMPTY),
    };
    let mut reads = vec![0u64; p];
    let mut writes = vec![0u64; p];
    let mut finishes = vec![0u64; p];
    let mut aborts = 0u64;
    let mut singles = 0u64;
    for _ in 0..samples {
        let mut read = PartitionSet::EMPTY;
        let mut write = PartitionSet::EMPTY;
        match model.vertex(v).access {
            Some(QueryKind::Write) => write = own,
            Some(QueryKind::Read) => read = own,
            None => {}
        }
        let mut later = PartitionSet::EMPTY;
        let mut ended = model.vertex(v).kind.clone();
        for id in random_walk(model, v, &mut rng) {
            let vertex = model.vertex(id);
            if let VertexKind::State(s) = &vertex.kind {
                later = later.union(s.partitions);
                match vertex.access {
                    Some(QueryKind::Write) => write = write.union(s.partitions),
                    _ => read = read.union(s.partitions),
                }
            }
            ended = vertex.kind.clone();
        }
        aborts += (ended == VertexKind::Abort) as u64;
        singles += (previous.union(own).union(later).len() <= 1) as u64;
        for x in 0..p as u32 {
            reads[x as usize] += read.contains(x) as u64;
            writes[x as usize] += write.contains(x) as u64;
            finishes[x as usize] += (!own.contains(x) && !later.contains(x)) as u64;
        }
    }
    let n = samples.max(1) as f64;
    ProbabilityTable {
        single_partitioned: singles as f64 / n,
        abort: aborts as f64 / n,
        partitions: (0..p)
            .map(|x| PartitionProbs {
                read: reads[x] as f64 / n,
                write: writes[x] as f64 / n,
                finish: finishes[x] as f64 / n,
            })
            .collect(),
    }
}

/// Estimates for every non-begin vertex, one seeded stream per vertex.
pub fn sample_tables(
    model: &MarkovModel,
    samples: usize,
    seed: u64,
    mode: Parallelism,
) -> Vec<Option<ProbabilityTable>> {
    par::map_range(mode, model.num_vertices(), |v| {
        (v != super::BEGIN)
            .then(|| sample_table(model, v, samples, seed ^ (v as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
    })
}

/// Standard error of a Bernoulli mean.
pub fn bernoulli_sigma(p: f64, samples: usize) -> f64 {
    (p * (1.0 - p) / samples as f64).sqrt()
}

/// Flattened `(name, value)` pairs of a table, for entrywise comparison.
pub fn table_entries(t: &ProbabilityTable) -> Vec<(String, f64)> {
    let mut out = vec![
        ("single_partitioned".to_string(), t.single_partitioned),
        ("abort".to_string(), t.abort),
    ];
    for (x, row) in t.partitions.iter().enumerate() {
        out.push((format!("p{x}.read"), row.read));
        out.push((format!("p{x}.write"), row.write));
        out.push((format!("p{x}.finish"), row.finish));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::markov::build_model;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, ItemCounts, NewOrderConfig};

    #[test]
    fn sampled_tables_match_recursion() {
        let catalog = neworder_catalog(2);
        let cfg = NewOrderConfig {
            num_txns: 300,
            item_counts: ItemCounts::Uniform { min: 1, max: 2 },
            abort_probability: 0.1,
            ..NewOrderConfig::new(2)
        };
        let w = generate_neworder_like(&cfg, 2).unwrap();
        let m = build_model("NewOrder", &w.records, &catalog).unwrap();
        let n = 20_000;
        let est = sample_tables(&m, n, 1, Parallelism::default());
        for (v, e) in est.iter().enumerate() {
            let Some(e) = e else { continue };
            for ((name, want), (_, got)) in table_entries(m.table(v).unwrap()).into_iter().zip(table_entries(e)) {
                let tol = 5.0 * bernoulli_sigma(want, n) + 1e-12;
                assert!((want - got).abs() <= tol, "vertex {v} {name}: {want} vs {got}");
            }
        }
        assert_eq!(est, sample_tables(&m, n, 1, Parallelism::Sequential));
    }
}
