//! Splitting one procedure's model into several, chosen per request by a
//! decision tree over input-parameter features.

pub mod cost;
pub mod em;
pub mod features;
pub mod select;
pub mod tree;

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::markov::MarkovModel;
use crate::trace::{ParamValue, TraceRecord};

pub use cost::{estimate_cost, record_cost, CostWeights};
pub use em::{cluster_em, EmConfig, Encoder, GaussianMixture};
pub use features::{Feature, FeatureCategory, FeatureExtractor, FeatureSet, FeatureVector};
pub use select::{feed_forward_select, RoundEntry, Selection, SelectionConfig};
pub use tree::DecisionTree;

/// Per-cluster models for one procedure. The tree maps a request's
/// features to an index into `clusters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusteredModels {
    pub procedure: String,
    pub feature_set: FeatureSet,
    pub extractor: FeatureExtractor,
    pub tree: DecisionTree,
    pub clusters: Vec<Arc<MarkovModel>>,
}

impl ClusteredModels {
    /// One cluster holding `model`; what the unclustered baseline looks like.
    pub fn single(model: Arc<MarkovModel>, extractor: FeatureExtractor) -> Self {
        ClusteredModels {
            procedure: model.procedure().to_string(),
            feature_set: Vec::new(),
            extractor,
            tree: DecisionTree::Leaf { cluster: 0 },
            clusters: vec![model],
        }
    }

    pub fn is_clustered(&self) -> bool {
        self.clusters.len() > 1
    }

    pub fn cluster_of(&self, params: &[ParamValue]) -> usize {
        let c = self.tree.classify(&self.extractor.extract_params(params));
        c.min(self.clusters.len() - 1)
    }

    pub fn select(&self, params: &[ParamValue]) -> &Arc<MarkovModel> {
        &self.clusters[self.cluster_of(params)]
    }

    pub fn select_for(&self, record: &TraceRecord) -> &Arc<MarkovModel> {
        self.select(&record.proc_params)
    }
}
