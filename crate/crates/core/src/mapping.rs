//! Procedure-parameter to query-parameter mappings.
//!
//! For every record, each procedure parameter (or array element) is compared
//! with each parameter of each query invocation. Repeated comparisons inside
//! one record are combined with a geometric mean; records are combined with
//! an arithmetic mean. Entries above the acceptance threshold let the
//! estimator compute a query's parameters, and so its partitions, from the
//! procedure input alone.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::catalog::{hash_partition, Catalog, PartitionSet, QueryDef};
use crate::error::Result;
use crate::par::{self, Parallelism};
use crate::trace::{ParamValue, TraceRecord};

pub const DEFAULT_ACCEPT_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ElementRole {
    Scalar,
    /// Element `n` of an array feeds invocation `n` of the query.
    NthElement,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MappingKey {
    pub proc_param_index: usize,
    pub role: ElementRole,
    pub query_name: String,
    /// The invocation counter a scalar key applies to. `None` means every
    /// invocation: for scalar keys the record's instances are pooled, for
    /// `NthElement` the counter is the element index.
    pub query_invocation_counter: Option<u32>,
    pub query_param_index: usize,
}

/// What the mapping says about one query invocation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Prediction {
    Partitions(PartitionSet),
    /// The feeding array is too short, so this invocation cannot happen.
    OutOfRange,
    /// Nothing in the input determines the partitions.
    Unknown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub key: MappingKey,
    pub coefficient: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterMapping {
    pub procedure: String,
    pub accept_threshold: f64,
    /// Retained entries, sorted by key.
    pub entries: Vec<MappingEntry>,
}

/// `(prod x)^(1/n)`; zero if any value is zero, one for no values.
pub fn geometric_mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        return 1.0;
    }
    if values.iter().any(|&v| v <= 0.0) {
        return 0.0;
    }
    if values.iter().all(|&v| v == 1.0) {
        return 1.0;
    }
    (values.iter().map(|v| v.ln()).sum::<f64>() / values.len() as f64).exp()
}

/// Queries of a record with their per-query invocation counters.
fn invocations(record: &TraceRecord) -> Vec<(&str, u32, &[i64])> {
    let mut counters: HashMap<&str, u32> = HashMap::new();
    record
        .queries
        .iter()
        .map(|q| {
            let c = counters.entry(q.query_name.as_str()).or_insert(0);
            let out = (q.query_name.as_str(), *c, q.params.as_slice());
            *c += 1;
            out
        })
        .collect()
}

/// Every observed key with its coefficient, before thresholding.
pub fn coefficient_matrix<'a>(records: impl IntoIterator<Item = &'a TraceRecord>) -> BTreeMap<MappingKey, f64> {
    let mut acc: BTreeMap<MappingKey, (f64, u64)> = BTreeMap::new();
    let mut local: BTreeMap<MappingKey, Vec<f64>> = BTreeMap::new();
    for record in records {
        local.clear();
        let invs = invocations(record);
        for (i, value) in record.proc_params.iter().enumerate() {
            for &(q, c, qparams) in &invs {
                let (role, v) = match value {
                    ParamValue::Int(v) => (ElementRole::Scalar, *v),
                    ParamValue::Array(a) => match a.get(c as usize) {
                        Some(&v) => (ElementRole::NthElement, v),
                        None => continue,
                    },
                    ParamValue::Null => continue,
                };
                let scalar_keys = [Some(c), None];
                let counters = match role {
                    ElementRole::Scalar => &scalar_keys[..],
                    ElementRole::NthElement => &scalar_keys[1..],
                };
                for &counter in counters {
                    for (j, &p) in qparams.iter().enumerate() {
                        let key = MappingKey {
                            proc_param_index: i,
                            role,
                            query_name: q.to_string(),
                            query_invocation_counter: counter,
                            query_param_index: j,
                        };
                        local.entry(key).or_default().push((v == p) as u8 as f64);
                    }
                }
            }
        }
        for (key, values) in std::mem::take(&mut local) {
            let e = acc.entry(key).or_insert((0.0, 0));
            e.0 += geometric_mean(&values);
            e.1 += 1;
        }
    }
    acc.into_iter().map(|(k, (sum, n))| (k, sum / n as f64)).collect()
}

/// Mapping for one procedure from its records.
pub fn infer_mapping<'a>(
    procedure: &str,
    records: impl IntoIterator<Item = &'a TraceRecord>,
    accept_threshold: f64,
) -> ParameterMapping {
    let matrix = coefficient_matrix(records.into_iter().filter(|r| r.proc_name == procedure));
    ParameterMapping {
        procedure: procedure.to_string(),
        accept_threshold,
        entries: matrix
            .into_iter()
            .filter(|(_, c)| *c > accept_threshold)
            .map(|(key, coefficient)| MappingEntry { key, coefficient })
            .collect(),
    }
}

/// One mapping per catalog procedure.
pub fn infer_mappings(
    records: &[TraceRecord],
    catalog: &Catalog,
    accept_threshold: f64,
    mode: Parallelism,
) -> BTreeMap<String, ParameterMapping> {
    par::map(mode, &catalog.procedures, |p| {
        (p.name.clone(), infer_mapping(&p.name, records, accept_threshold))
    })
    .into_iter()
    .collect()
}

impl ParameterMapping {
    pub fn empty(procedure: &str) -> Self {
        ParameterMapping {
            procedure: procedure.to_string(),
            accept_threshold: DEFAULT_ACCEPT_THRESHOLD,
            entries: Vec::new(),
        }
    }

    /// The value for one query parameter position, from the best entry.
    ///
    /// Highest coefficient wins; ties go to the smallest procedure parameter
    /// index (entries are sorted by key, and the first maximum is kept).
    pub fn map_param(
        &self,
        proc_params: &[ParamValue],
        query_name: &str,
        counter: u32,
        position: usize,
    ) -> Option<i64> {
        self.lookup(proc_params, query_name, counter, position).ok()
    }

    fn lookup(
        &self,
        proc_params: &[ParamValue],
        query_name: &str,
        counter: u32,
        position: usize,
    ) -> std::result::Result<i64, Prediction> {
        let mut best: Option<&MappingEntry> = None;
        for e in &self.entries {
            let k = &e.key;
            if k.query_name != query_name || k.query_param_index != position {
                continue;
            }
            if k.query_invocation_counter.is_some_and(|c| c != counter) {
                continue;
            }
            if best.is_none_or(|b| e.coefficient > b.coefficient) {
                best = Some(e);
            }
        }
        let k = &best.ok_or(Prediction::Unknown)?.key;
        match (proc_params.get(k.proc_param_index), k.role) {
            (Some(ParamValue::Int(v)), ElementRole::Scalar) => Ok(*v),
            (Some(ParamValue::Array(a)), ElementRole::NthElement) => {
                a.get(counter as usize).copied().ok_or(Prediction::OutOfRange)
            }
            _ => Err(Prediction::Unknown),
        }
    }

    /// All parameters of an invocation, or `None` if any position is unmapped.
    pub fn map_query_params(&self, proc_params: &[ParamValue], query: &QueryDef, counter: u32) -> Option<Vec<i64>> {
        (0..query.num_params)
            .map(|j| self.map_param(proc_params, &query.name, counter, j))
            .collect()
    }

    /// Partitions an invocation will touch, as far as the input tells.
    ///
    /// Only the partitioning parameter has to be mapped; broadcast queries
    /// need nothing.
    pub fn predict(
        &self,
        proc_params: &[ParamValue],
        query: &QueryDef,
        counter: u32,
        num_partitions: u32,
    ) -> Prediction {
        if query.is_broadcast {
            return Prediction::Partitions(PartitionSet::all(num_partitions));
        }
        let Some(idx) = query.partition_param_index else {
            return Prediction::Unknown;
        };
        match self.lookup(proc_params, &query.name, counter, idx) {
            Ok(v) => hash_partition(v, num_partitions)
                .map(|p| Prediction::Partitions(PartitionSet::singleton(p)))
                .unwrap_or(Prediction::Unknown),
            Err(miss) => miss,
        }
    }

    pub fn predict_partitions(
        &self,
        proc_params: &[ParamValue],
        query: &QueryDef,
        counter: u32,
        num_partitions: u32,
    ) -> Option<PartitionSet> {
        match self.predict(proc_params, query, counter, num_partitions) {
            Prediction::Partitions(p) => Some(p),
            _ => None,
        }
    }

    pub fn coefficient(&self, key: &MappingKey) -> Option<f64> {
        self.entries.iter().find(|e| &e.key == key).map(|e| e.coefficient)
    }
}

/// Writes the full coefficient matrix for each procedure as CSV.
pub fn write_matrix_csv(
    out: &mut impl std::io::Write,
    matrices: &BTreeMap<String, BTreeMap<MappingKey, f64>>,
    catalog: &Catalog,
    accept_threshold: f64,
) -> Result<()> {
    writeln!(out, "#schema=mappings.v1")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "procedure",
        "proc_param",
        "role",
        "query",
        "counter",
        "query_param",
        "coefficient",
        "retained",
    ])?;
    for (proc, matrix) in matrices {
        let def = catalog.procedure(proc)?;
        for (k, c) in matrix {
            w.write_record([
                proc.clone(),
                def.parameters[k.proc_param_index].name.clone(),
                match k.role {
                    ElementRole::Scalar => "scalar".into(),
                    ElementRole::NthElement => "nth_element".into(),
                },
                k.query_name.clone(),
                k.query_invocation_counter
                    .map(|c| c.to_string())
                    .unwrap_or_else(|| "n".into()),
                k.query_param_index.to_string(),
                format!("{c:.6}"),
                (*c > accept_threshold).to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::generate::{generate_neworder_like, neworder_catalog, NewOrderConfig};
    use crate::trace::{Outcome, QueryInvocation};

    fn sample_order_params() -> Vec<ParamValue> {
        vec![
            ParamValue::Int(0),
            ParamValue::Array(vec![1001, 1002]),
            ParamValue::Array(vec![0, 1]),
            ParamValue::Array(vec![2, 7]),
        ]
    }

    fn neworder_mapping() -> ParameterMapping {
        let cfg = NewOrderConfig {
            num_txns: 2000,
            ..NewOrderConfig::new(4)
        };
        let w = generate_neworder_like(&cfg, 1).unwrap();
        infer_mapping("NewOrder", &w.records, DEFAULT_ACCEPT_THRESHOLD)
    }

    #[test]
    fn geometric_mean_examples() {
        assert!((geometric_mean(&[1.0, 0.25]) - 0.5).abs() < 1e-12);
        assert_eq!(geometric_mean(&[1.0, 1.0]), 1.0);
        assert_eq!(geometric_mean(&[1.0, 0.0]), 0.0);
    }

    #[test]
    fn planted_identities_are_exact() {
        let m = neworder_mapping();
        let key = |i, role, q: &str, c, j| MappingKey {
            proc_param_index: i,
            role,
            query_name: q.into(),
            query_invocation_counter: c,
            query_param_index: j,
        };
        assert_eq!(
            m.coefficient(&key(0, ElementRole::Scalar, "GetWarehouse", Some(0), 0)),
            Some(1.0)
        );
        assert_eq!(
            m.coefficient(&key(0, ElementRole::Scalar, "InsertOrder", Some(0), 0)),
            Some(1.0)
        );
        assert_eq!(
            m.coefficient(&key(1, ElementRole::NthElement, "CheckStock", None, 1)),
            Some(1.0)
        );
        assert_eq!(
            m.coefficient(&key(2, ElementRole::NthElement, "UpdateStock", None, 1)),
            Some(1.0)
        );
        assert_eq!(
            m.coefficient(&key(3, ElementRole::NthElement, "InsertOrdLine", None, 3)),
            Some(1.0)
        );
        // The order id is generated inside the procedure.
        assert!(m
            .entries
            .iter()
            .all(|e| !(e.key.query_name == "InsertOrder" && e.key.query_param_index == 1)));
        assert!(m.entries.iter().all(|e| e.coefficient > 0.9 && e.coefficient <= 1.0));
    }

    #[test]
    fn sample_order_parameters_resolve() {
        let m = neworder_mapping();
        let catalog = neworder_catalog(4);
        let gw = catalog.query("NewOrder", "GetWarehouse").unwrap();
        let cs = catalog.query("NewOrder", "CheckStock").unwrap();
        let io = catalog.query("NewOrder", "InsertOrder").unwrap();
        assert_eq!(m.map_query_params(&sample_order_params(), gw, 0), Some(vec![0]));
        assert_eq!(m.map_query_params(&sample_order_params(), cs, 1), Some(vec![1, 1002]));
        // InsertOrdLine #5 never appears in training; the pooled w_id key covers it.
        let ol = catalog.query("NewOrder", "InsertOrdLine").unwrap();
        assert_eq!(
            m.predict_partitions(&sample_order_params(), ol, 5, 4),
            Some(PartitionSet::singleton(0))
        );
        // Past the end of the array.
        assert_eq!(m.map_query_params(&sample_order_params(), cs, 2), None);
        assert_eq!(m.map_query_params(&sample_order_params(), io, 0), None);
        assert_eq!(
            m.predict_partitions(&sample_order_params(), io, 0, 4),
            Some(PartitionSet::singleton(0))
        );
    }

    #[test]
    fn random_decoys_are_discarded() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let records: Vec<TraceRecord> = (0..1000)
            .map(|i| TraceRecord {
                txn_id: i,
                proc_name: "P".into(),
                proc_params: vec![ParamValue::Int(rng.gen_range(0..100))],
                queries: vec![QueryInvocation::new("Q", vec![rng.gen_range(0..100)])],
                outcome: Outcome::Committed,
            })
            .collect();
        let matrix = coefficient_matrix(&records);
        let c = matrix.values().next().copied().unwrap();
        assert!(c < 0.05, "{c}");
        assert!(infer_mapping("P", &records, 0.9).entries.is_empty());
        assert!(infer_mapping("P", &[], 0.9).entries.is_empty());
    }
}
