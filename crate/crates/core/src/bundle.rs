//! Everything the predictor needs at runtime, serialized as one JSON file.

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::catalog::Catalog;
use crate::clustering::{feed_forward_select, ClusteredModels, RoundEntry, SelectionConfig};
use crate::error::{Error, Result};
use crate::estimator::EstimatorConfig;
use crate::eval::{evaluate_record, EvaluationReport, RecordOutcome};
use crate::mapping::{infer_mappings, ParameterMapping};
use crate::markov::{build_models, MarkovModel};
use crate::par::{self, Parallelism};
use crate::trace::{ParamValue, TraceRecord};

pub const BUNDLE_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelVariant {
    Global,
    Partitioned,
}

impl ModelVariant {
    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Global => "global",
            ModelVariant::Partitioned => "partitioned",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bundle {
    pub version: u32,
    pub catalog_ref: String,
    pub num_partitions: u32,
    pub mappings: BTreeMap<String, ParameterMapping>,
    pub global: BTreeMap<String, Arc<MarkovModel>>,
    /// Absent until `partition-models` has run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partitioned: Option<BTreeMap<String, ClusteredModels>>,
}

impl Bundle {
    /// Mappings and one global model per procedure.
    pub fn build(records: &[TraceRecord], catalog: &Catalog, accept_threshold: f64, mode: Parallelism) -> Result<Self> {
        let global = build_models(records, catalog, mode)?
            .into_iter()
            .map(|(k, m)| (k, Arc::new(m)))
            .collect();
        Ok(Bundle {
            version: BUNDLE_VERSION,
            catalog_ref: catalog.name.clone(),
            num_partitions: catalog.num_partitions,
            mappings: infer_mappings(records, catalog, accept_threshold, mode),
            global,
            partitioned: None,
        })
    }

    /// Runs feature selection for every procedure with records and stores
    /// the resulting models. Returns each procedure's round table.
    pub fn partition(
        &mut self,
        records: &[TraceRecord],
        catalog: &Catalog,
        config: &SelectionConfig,
        seed: u64,
    ) -> Result<BTreeMap<String, Vec<RoundEntry>>> {
        let mut models = BTreeMap::new();
        let mut rounds = BTreeMap::new();
        for proc in &catalog.procedures {
            let Some(mapping) = self.mappings.get(&proc.name) else {
                continue;
            };
            match feed_forward_select(&proc.name, records, catalog, mapping, config, seed) {
                Ok(sel) => {
                    rounds.insert(proc.name.clone(), sel.rounds);
                    models.insert(proc.name.clone(), sel.models);
                }
                Err(Error::EmptyWorkload) => {}
                Err(e) => return Err(e),
            }
        }
        self.partitioned = Some(models);
        Ok(rounds)
    }

    pub fn mapping(&self, procedure: &str) -> Option<&ParameterMapping> {
        self.mappings.get(procedure)
    }

    /// The model a request would be estimated with. Partitioned falls back
    /// to global for procedures without clustered models.
    pub fn model_for(
        &self,
        variant: ModelVariant,
        procedure: &str,
        params: &[ParamValue],
    ) -> Option<&Arc<MarkovModel>> {
        if variant == ModelVariant::Partitioned {
            if let Some(c) = self.partitioned.as_ref().and_then(|p| p.get(procedure)) {
                return Some(c.select(params));
            }
        }
        self.global.get(procedure)
    }

    /// Scores every record that has a model under `variant`, in input order.
    pub fn evaluate(
        &self,
        variant: ModelVariant,
        records: &[TraceRecord],
        catalog: &Catalog,
        config: &EstimatorConfig,
        mode: Parallelism,
    ) -> Result<Vec<(usize, RecordOutcome)>> {
        let scored = par::map_range(mode, records.len(), |i| {
            let r = &records[i];
            let (Some(model), Some(mapping)) = (
                self.model_for(variant, &r.proc_name, &r.proc_params),
                self.mapping(&r.proc_name),
            ) else {
                return Ok(None);
            };
            evaluate_record(model, mapping, r, catalog, config).map(|(o, _)| Some((i, o)))
        });
        let mut out = Vec::with_capacity(records.len());
        for s in scored {
            out.extend(s?);
        }
        Ok(out)
    }

    /// [`Bundle::evaluate`] aggregated per variant and procedure.
    pub fn report(
        &self,
        variants: &[ModelVariant],
        records: &[TraceRecord],
        catalog: &Catalog,
        config: &EstimatorConfig,
        mode: Parallelism,
    ) -> Result<EvaluationReport> {
        let mut report = EvaluationReport::default();
        for &v in variants {
            for (i, o) in self.evaluate(v, records, catalog, config, mode)? {
                report.add(v.name(), &records[i].proc_name, &o);
            }
        }
        Ok(report)
    }

    pub fn check_catalog(&self, catalog: &Catalog) -> Result<()> {
        if self.catalog_ref != catalog.name || self.num_partitions != catalog.num_partitions {
            return Err(Error::Config(format!(
                "bundle was built for catalog {} with {} partitions, not {} with {}",
                self.catalog_ref, self.num_partitions, catalog.name, catalog.num_partitions
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer(f, self)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        let b: Bundle = serde_json::from_reader(f)?;
        if b.version != BUNDLE_VERSION {
            return Err(Error::Config(format!("unsupported bundle version {}", b.version)));
        }
        Ok(b)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, NewOrderConfig};

    #[test]
    fn round_trip_and_fallback() {
        let catalog = neworder_catalog(2);
        let w = generate_neworder_like(
            &NewOrderConfig {
                num_txns: 300,
                ..NewOrderConfig::new(2)
            },
            3,
        )
        .unwrap();
        let b = Bundle::build(&w.records, &catalog, 0.9, Parallelism::Sequential).unwrap();
        assert!(b.global.contains_key("NewOrder") && b.global.contains_key("Payment"));
        let r = &w.records[0];
        let g = b.model_for(ModelVariant::Global, &r.proc_name, &r.proc_params).unwrap();
        let p = b
            .model_for(ModelVariant::Partitioned, &r.proc_name, &r.proc_params)
            .unwrap();
        assert!(Arc::ptr_eq(g, p));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.json");
        b.save(&path).unwrap();
        assert_eq!(Bundle::load(&path).unwrap(), b);
        b.check_catalog(&catalog).unwrap();
        assert!(b.check_catalog(&neworder_catalog(4)).is_err());
    }
}
