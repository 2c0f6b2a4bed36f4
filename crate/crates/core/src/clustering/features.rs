//! Features extracted from procedure input parameters.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::catalog::{hash_partition, ProcedureDef};
use crate::trace::{ParamValue, TraceRecord};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum FeatureCategory {
    NormalizedValue,
    HashValue,
    IsNull,
    ArrayLength,
    ArrayAllSameHash,
}

impl FeatureCategory {
    pub const ALL: [FeatureCategory; 5] = [
        FeatureCategory::NormalizedValue,
        FeatureCategory::HashValue,
        FeatureCategory::IsNull,
        FeatureCategory::ArrayLength,
        FeatureCategory::ArrayAllSameHash,
    ];

    /// Categorical features are split by value in the tree; the others by
    /// threshold.
    pub fn is_categorical(self) -> bool {
        matches!(
            self,
            FeatureCategory::HashValue | FeatureCategory::IsNull | FeatureCategory::ArrayAllSameHash
        )
    }

    fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            FeatureCategory::NormalizedValue => "NORMALIZEDVALUE",
            FeatureCategory::HashValue => "HASHVALUE",
            FeatureCategory::IsNull => "ISNULL",
            FeatureCategory::ArrayLength => "ARRAYLENGTH",
            FeatureCategory::ArrayAllSameHash => "ARRAYALLSAMEHASH",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name().eq_ignore_ascii_case(s))
    }
}

/// One feature instance: a category applied to one procedure parameter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Feature {
    pub param: usize,
    pub category: FeatureCategory,
}

impl Feature {
    pub fn new(param: usize, category: FeatureCategory) -> Self {
        Feature { param, category }
    }

    /// `ARRAYLENGTH(i_w_ids)` style label.
    pub fn label(&self, procedure: &ProcedureDef) -> String {
        let name = procedure
            .parameters
            .get(self.param)
            .map_or_else(|| format!("#{}", self.param), |p| p.name.clone());
        format!("{}({name})", self.category.name())
    }
}

impl fmt::Display for Feature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}(#{})", self.category.name(), self.param)
    }
}

/// Sorted, duplicate-free set of features.
pub type FeatureSet = Vec<Feature>;

/// Per parameter, one value per category; `None` where not applicable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<[Option<f64>; 5]>,
}

impl FeatureVector {
    pub fn get(&self, feature: Feature) -> Option<f64> {
        self.values.get(feature.param).and_then(|v| v[feature.category.index()])
    }
}

/// Extraction settings fitted on a training workset: the partition count
/// for hashing and each scalar parameter's observed range.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureExtractor {
    pub num_partitions: u32,
    pub is_array: Vec<bool>,
    pub ranges: Vec<Option<(i64, i64)>>,
}

impl FeatureExtractor {
    pub fn fit<'a>(
        procedure: &ProcedureDef,
        records: impl IntoIterator<Item = &'a TraceRecord>,
        num_partitions: u32,
    ) -> Self {
        let n = procedure.parameters.len();
        let mut ranges: Vec<Option<(i64, i64)>> = vec![None; n];
        for r in records {
            for (i, v) in r.proc_params.iter().enumerate().take(n) {
                if let ParamValue::Int(x) = v {
                    ranges[i] = Some(match ranges[i] {
                        Some((lo, hi)) => (lo.min(*x), hi.max(*x)),
                        None => (*x, *x),
                    });
                }
            }
        }
        FeatureExtractor {
            num_partitions,
            is_array: procedure.parameters.iter().map(|p| p.is_array).collect(),
            ranges,
        }
    }

    pub fn extract(&self, record: &TraceRecord) -> FeatureVector {
        self.extract_params(&record.proc_params)
    }

    /// Empty arrays have length 0 and count as all-same-hash.
    pub fn extract_params(&self, params: &[ParamValue]) -> FeatureVector {
        let values = self
            .is_array
            .iter()
            .enumerate()
            .map(|(i, &is_array)| {
                let v = params.get(i).unwrap_or(&ParamValue::Null);
                let mut out = [None; 5];
                out[FeatureCategory::IsNull.index()] = Some(matches!(v, ParamValue::Null) as u8 as f64);
                match v {
                    ParamValue::Int(x) if !is_array => {
                        out[FeatureCategory::HashValue.index()] =
                            hash_partition(*x, self.num_partitions).ok().map(f64::from);
                        out[FeatureCategory::NormalizedValue.index()] = Some(match self.ranges[i] {
                            Some((lo, hi)) if hi > lo => ((*x).clamp(lo, hi) - lo) as f64 / (hi - lo) as f64,
                            _ => 0.0,
                        });
                    }
                    ParamValue::Array(a) if is_array => {
                        out[FeatureCategory::ArrayLength.index()] = Some(a.len() as f64);
                        let mut hashes = a.iter().map(|&x| hash_partition(x, self.num_partitions).ok());
                        let same = match hashes.next() {
                            None => true,
                            Some(first) => first.is_some() && hashes.all(|h| h == first),
                        };
                        out[FeatureCategory::ArrayAllSameHash.index()] = Some(same as u8 as f64);
                    }
                    _ => {}
                }
                out
            })
            .collect();
        FeatureVector { values }
    }

    /// Features that are applicable and not constant over `vectors`.
    pub fn candidate_features(&self, vectors: &[FeatureVector]) -> FeatureSet {
        let mut out = Vec::new();
        for param in 0..self.is_array.len() {
            for category in FeatureCategory::ALL {
                let f = Feature::new(param, category);
                let mut seen = vectors.iter().map(|v| v.get(f).map(f64::to_bits));
                let Some(first) = seen.next() else { continue };
                if seen.any(|x| x != first) {
                    out.push(f);
                }
            }
        }
        out
    }
}
