//! Greedy feed-forward search for the feature set whose clustered models
//! predict best.

use std::collections::BTreeSet;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::mapping::ParameterMapping;
use crate::markov::{build_model, MarkovModel};
use crate::par::{self, Parallelism};
use crate::trace::{split_workload, TraceRecord, Workload, DEFAULT_SPLIT};

use super::cost::{estimate_cost, CostWeights};
use super::em::{cluster_em, EmConfig, Encoder};
use super::features::{Feature, FeatureExtractor, FeatureSet, FeatureVector};
use super::tree::DecisionTree;
use super::ClusteredModels;

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionConfig {
    pub estimator: EstimatorConfig,
    pub weights: CostWeights,
    pub em: EmConfig,
    pub split: (f64, f64, f64),
    /// Fraction of each round's sets whose features survive.
    pub keep_fraction: f64,
    pub mode: Parallelism,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        SelectionConfig {
            estimator: EstimatorConfig::default(),
            weights: CostWeights::default(),
            em: EmConfig::default(),
            split: DEFAULT_SPLIT,
            keep_fraction: 0.10,
            mode: Parallelism::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RoundEntry {
    /// 0 is the unclustered baseline.
    pub round: usize,
    pub features: FeatureSet,
    pub clusters: usize,
    pub cost: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    pub procedure: String,
    /// Empty when the baseline won.
    pub best: FeatureSet,
    pub best_cost: u64,
    pub baseline_cost: u64,
    pub rounds: Vec<RoundEntry>,
    /// Final models, rebuilt from every input record.
    pub models: ClusteredModels,
}

struct Worksets<'a> {
    procedure: &'a str,
    catalog: &'a Catalog,
    extractor: FeatureExtractor,
    train: Vec<FeatureVector>,
    valid_records: Vec<TraceRecord>,
    valid: Vec<FeatureVector>,
    test_records: Vec<TraceRecord>,
    fallback: Arc<MarkovModel>,
}

/// Per-cluster models from `records` labeled by `labels`; clusters without
/// records get `fallback`.
fn cluster_models(
    procedure: &str,
    records: &[&TraceRecord],
    labels: &[usize],
    k: usize,
    catalog: &Catalog,
    fallback: &Arc<MarkovModel>,
) -> Result<Vec<Arc<MarkovModel>>> {
    (0..k)
        .map(|c| {
            let members: Vec<&TraceRecord> = records
                .iter()
                .zip(labels)
                .filter(|(_, l)| **l == c)
                .map(|(r, _)| *r)
                .collect();
            if members.is_empty() {
                Ok(fallback.clone())
            } else {
                build_model(procedure, members, catalog).map(Arc::new)
            }
        })
        .collect()
}

impl Worksets<'_> {
    /// Seeds EM on training, divides validation with it, builds a model per
    /// cluster from validation, and fits the routing tree on training.
    fn candidate(&self, features: &[Feature], em: &EmConfig, seed: u64) -> Result<ClusteredModels> {
        let encoder = Encoder::fit(features, &self.train);
        let data: Vec<Vec<f64>> = self.train.iter().map(|v| encoder.encode(v)).collect();
        let (gm, train_labels) = cluster_em(&data, em, seed);
        let valid_labels: Vec<usize> = self.valid.iter().map(|v| gm.assign(&encoder.encode(v))).collect();
        let refs: Vec<&TraceRecord> = self.valid_records.iter().collect();
        let clusters = cluster_models(
            self.procedure,
            &refs,
            &valid_labels,
            gm.k(),
            self.catalog,
            &self.fallback,
        )?;
        Ok(ClusteredModels {
            procedure: self.procedure.to_string(),
            feature_set: features.to_vec(),
            extractor: self.extractor.clone(),
            tree: DecisionTree::fit(&self.train, &train_labels, features),
            clusters,
        })
    }
}

/// Runs feed-forward selection for one procedure over `records` (other
/// procedures' records are ignored).
///
/// Round 0 scores the single unclustered model; clustering is adopted only
/// if some set beats it. A round keeps the features of its best
/// `keep_fraction` sets (at least one set, plus any tied with the last kept)
/// and the next round enumerates sets one larger over those features.
pub fn feed_forward_select(
    procedure: &str,
    records: &[TraceRecord],
    catalog: &Catalog,
    mapping: &ParameterMapping,
    config: &SelectionConfig,
    seed: u64,
) -> Result<Selection> {
    let proc = catalog.procedure(procedure)?;
    let mine: Vec<TraceRecord> = records.iter().filter(|r| r.proc_name == procedure).cloned().collect();
    if mine.is_empty() {
        return Err(Error::EmptyWorkload);
    }
    let all = Workload::new(String::new(), mine);
    let (train, valid, test) = split_workload(&all, config.split, seed)?;
    let extractor = FeatureExtractor::fit(proc, &train.records, catalog.num_partitions);
    let model_source = if valid.records.is_empty() {
        &train.records
    } else {
        &valid.records
    };
    let fallback = Arc::new(build_model(procedure, model_source, catalog)?);
    let sets = Worksets {
        procedure,
        catalog,
        train: train.records.iter().map(|r| extractor.extract(r)).collect(),
        valid: valid.records.iter().map(|r| extractor.extract(r)).collect(),
        extractor,
        valid_records: valid.records,
        test_records: test.records,
        fallback,
    };
    let testing: Vec<&TraceRecord> = sets.test_records.iter().collect();
    let score = |m: &ClusteredModels, mode| {
        estimate_cost(m, mapping, &testing, catalog, &config.estimator, &config.weights, mode)
    };

    let baseline = ClusteredModels::single(sets.fallback.clone(), sets.extractor.clone());
    let baseline_cost = score(&baseline, config.mode)?;
    let mut rounds = vec![RoundEntry {
        round: 0,
        features: Vec::new(),
        clusters: 1,
        cost: baseline_cost,
    }];
    let mut best: (FeatureSet, u64) = (Vec::new(), baseline_cost);
    let mut best_models = baseline;

    let mut survivors = sets.extractor.candidate_features(&sets.train);
    let mut round = 1;
    loop {
        let candidates = combinations(&survivors, round);
        if candidates.is_empty() {
            break;
        }
        let scored: Vec<Result<(FeatureSet, ClusteredModels, u64)>> = par::map(config.mode, &candidates, |fs| {
            let m = sets.candidate(fs, &config.em, seed)?;
            let c = score(&m, Parallelism::Sequential)?;
            Ok((fs.clone(), m, c))
        });
        let mut scored = scored.into_iter().collect::<Result<Vec<_>>>()?;
        scored.sort_by(|a, b| a.2.cmp(&b.2).then_with(|| a.0.cmp(&b.0)));
        for (fs, m, c) in &scored {
            rounds.push(RoundEntry {
                round,
                features: fs.clone(),
                clusters: m.clusters.len(),
                cost: *c,
            });
        }
        let keep = ((scored.len() as f64 * config.keep_fraction).ceil() as usize).max(1);
        let cutoff = scored[keep - 1].2;
        let kept: BTreeSet<Feature> = scored
            .iter()
            .take_while(|s| s.2 <= cutoff)
            .flat_map(|s| s.0.iter().copied())
            .collect();
        let (fs, m, c) = scored.swap_remove(0);
        log::debug!(
            "{procedure}: round {round} best {c} ({} sets), prior best {}",
            candidates.len(),
            best.1
        );
        if c >= best.1 {
            break;
        }
        best = (fs, c);
        best_models = m;
        survivors = kept.into_iter().collect();
        round += 1;
    }

    let models = if best.0.is_empty() {
        let model = Arc::new(build_model(procedure, &all.records, catalog)?);
        ClusteredModels::single(model, sets.extractor.clone())
    } else {
        let refs: Vec<&TraceRecord> = all.records.iter().collect();
        let labels: Vec<usize> = refs
            .iter()
            .map(|r| best_models.tree.classify(&sets.extractor.extract(r)))
            .collect();
        let global = Arc::new(build_model(procedure, refs.iter().copied(), catalog)?);
        let k = best_models.clusters.len();
        ClusteredModels {
            clusters: cluster_models(procedure, &refs, &labels, k, catalog, &global)?,
            ..best_models
        }
    };
    Ok(Selection {
        procedure: procedure.to_string(),
        best: best.0,
        best_cost: best.1,
        baseline_cost,
        rounds,
        models,
    })
}

/// All size-`r` subsets of `items`, in lexicographic order.
fn combinations(items: &[Feature], r: usize) -> Vec<FeatureSet> {
    let n = items.len();
    if r == 0 || r > n {
        return Vec::new();
    }
    let mut out = Vec::new();
    let mut idx: Vec<usize> = (0..r).collect();
    loop {
        out.push(idx.iter().map(|&i| items[i]).collect());
        let mut i = r;
        while i > 0 && idx[i - 1] == n - r + i - 1 {
            i -= 1;
        }
        if i == 0 {
            return out;
        }
        idx[i - 1] += 1;
        for j in i..r {
            idx[j] = idx[j - 1] + 1;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::FeatureCategory;
    use crate::mapping::infer_mapping;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, ItemCounts, NewOrderConfig};

    #[test]
    fn combinations_count() {
        let fs: Vec<Feature> = (0..5).map(|p| Feature::new(p, FeatureCategory::HashValue)).collect();
        assert_eq!(combinations(&fs, 1).len(), 5);
        assert_eq!(combinations(&fs, 2).len(), 10);
        assert_eq!(combinations(&fs, 5).len(), 1);
        assert!(combinations(&fs, 6).is_empty());
    }

    #[test]
    fn mixed_lengths_select_array_length() {
        let catalog = neworder_catalog(2);
        let cfg = NewOrderConfig {
            num_txns: 1500,
            item_counts: ItemCounts::Weighted(vec![(1, 0.6), (2, 0.4)]),
            remote_warehouse_probability: 0.5,
            abort_probability: 0.0,
            ..NewOrderConfig::new(2)
        };
        let w = generate_neworder_like(&cfg, 11).unwrap();
        let map = infer_mapping("NewOrder", &w.records, 0.9);
        let sel = feed_forward_select("NewOrder", &w.records, &catalog, &map, &SelectionConfig::default(), 5).unwrap();
        assert!(sel.best_cost < sel.baseline_cost, "{:?}", sel.rounds);
        assert!(sel
            .best
            .iter()
            .any(|f| f.category == FeatureCategory::ArrayLength && f.param >= 1));
        assert!(sel.models.is_clustered());
        let again =
            feed_forward_select("NewOrder", &w.records, &catalog, &map, &SelectionConfig::default(), 5).unwrap();
        assert_eq!(sel.rounds, again.rounds);
        assert_eq!(sel.models, again.models);
    }

    #[test]
    fn uninformative_parameters_keep_the_baseline() {
        let catalog = neworder_catalog(2);
        let cfg = NewOrderConfig {
            num_txns: 600,
            item_counts: ItemCounts::Uniform { min: 2, max: 2 },
            remote_warehouse_probability: 0.0,
            abort_probability: 0.0,
            ..NewOrderConfig::new(2)
        };
        let w = generate_neworder_like(&cfg, 2).unwrap();
        let map = infer_mapping("NewOrder", &w.records, 0.9);
        let sel = feed_forward_select("NewOrder", &w.records, &catalog, &map, &SelectionConfig::default(), 5).unwrap();
        assert_eq!(sel.baseline_cost, 0);
        assert!(sel.best.is_empty() && !sel.models.is_clustered());
        assert!(matches!(
            feed_forward_select("NewOrder", &[], &catalog, &map, &SelectionConfig::default(), 5),
            Err(Error::EmptyWorkload)
        ));
    }
}
