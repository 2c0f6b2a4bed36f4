//! Workload traces: data model, `.trace.jsonl` encoding, workset splitting,
//! and synthetic benchmark generators.
//!
//! A trace file starts with one header object naming the catalog,
//! followed by one [`TraceRecord`] per line:
//!
//! ```text
//! {"catalog_ref":"tpcc-like"}
//! {"txn_id":0,"proc_name":"NewOrder","proc_params":[0,[1001,1002],[0,1],[2,7]],"queries":[...],"outcome":"committed"}
//! ```

pub mod generate;

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, PartitionSet};
use crate::error::{Error, Result};

/// A procedure input parameter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ParamValue {
    Null,
    Int(i64),
    Array(Vec<i64>),
}

impl ParamValue {
    pub fn as_int(&self) -> Option<i64> {
        match self {
            ParamValue::Int(v) => Some(*v),
            _ => None,
        }
    }

    pub fn as_array(&self) -> Option<&[i64]> {
        match self {
            ParamValue::Array(v) => Some(v),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryInvocation {
    pub query_name: String,
    pub params: Vec<i64>,
}

impl QueryInvocation {
    pub fn new(query_name: &str, params: Vec<i64>) -> Self {
        QueryInvocation {
            query_name: query_name.to_string(),
            params,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    Committed,
    Aborted,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub txn_id: u64,
    pub proc_name: String,
    pub proc_params: Vec<ParamValue>,
    pub queries: Vec<QueryInvocation>,
    pub outcome: Outcome,
}

impl TraceRecord {
    /// Partitions each invocation touches, in execution order.
    pub fn partitions(&self, catalog: &Catalog) -> Result<Vec<PartitionSet>> {
        let proc = catalog.procedure(&self.proc_name)?;
        self.queries
            .iter()
            .map(|inv| {
                let q = proc.query(&inv.query_name).ok_or_else(|| Error::UnknownQuery {
                    procedure: self.proc_name.clone(),
                    query: inv.query_name.clone(),
                })?;
                catalog.resolve_partitions(q, &inv.params)
            })
            .collect()
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        let proc = catalog.procedure(&self.proc_name)?;
        if proc.parameters.len() != self.proc_params.len() {
            return Err(Error::Arity {
                query: self.proc_name.clone(),
                expected: proc.parameters.len(),
                got: self.proc_params.len(),
            });
        }
        for inv in &self.queries {
            let q = proc.query(&inv.query_name).ok_or_else(|| Error::UnknownQuery {
                procedure: self.proc_name.clone(),
                query: inv.query_name.clone(),
            })?;
            if q.num_params != inv.params.len() {
                return Err(Error::Arity {
                    query: inv.query_name.clone(),
                    expected: q.num_params,
                    got: inv.params.len(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub catalog_ref: String,
    pub records: Vec<TraceRecord>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    catalog_ref: String,
}

impl Workload {
    pub fn new(catalog_ref: impl Into<String>, records: Vec<TraceRecord>) -> Self {
        Workload {
            catalog_ref: catalog_ref.into(),
            records,
        }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Records of one procedure, in trace order.
    pub fn for_procedure(&self, proc_name: &str) -> Vec<&TraceRecord> {
        self.records.iter().filter(|r| r.proc_name == proc_name).collect()
    }

    pub fn validate(&self, catalog: &Catalog) -> Result<()> {
        for r in &self.records {
            r.validate(catalog)?;
        }
        Ok(())
    }

    /// First `fraction` of the records and the rest, in trace order.
    pub fn split_at_fraction(&self, fraction: f64) -> (Workload, Workload) {
        let cut = ((self.records.len() as f64) * fraction).floor() as usize;
        let cut = cut.min(self.records.len());
        (
            Workload::new(self.catalog_ref.clone(), self.records[..cut].to_vec()),
            Workload::new(self.catalog_ref.clone(), self.records[cut..].to_vec()),
        )
    }
}

pub fn save_trace(workload: &Workload, path: impl AsRef<Path>) -> Result<()> {
    let mut out = BufWriter::new(std::fs::File::create(path)?);
    write_trace(workload, &mut out)?;
    out.flush()?;
    Ok(())
}

pub fn write_trace(workload: &Workload, out: &mut impl Write) -> Result<()> {
    serde_json::to_writer(
        &mut *out,
        &Header {
            catalog_ref: workload.catalog_ref.clone(),
        },
    )?;
    out.write_all(b"\n")?;
    for r in &workload.records {
        serde_json::to_writer(&mut *out, r)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Reads a trace and checks every record against `catalog`.
pub fn load_trace(path: impl AsRef<Path>, catalog: &Catalog) -> Result<Workload> {
    let file = std::fs::File::open(path)?;
    read_trace(BufReader::new(file), catalog)
}

pub fn read_trace(input: impl BufRead, catalog: &Catalog) -> Result<Workload> {
    let mut lines = input.lines().enumerate();
    let header = loop {
        match lines.next() {
            None => return Ok(Workload::default()),
            Some((i, line)) => {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let h: Header = serde_json::from_str(&line).map_err(|e| Error::TraceLine {
                    line: i + 1,
                    message: format!("bad header: {e}"),
                })?;
                break h;
            }
        }
    };
    let mut records = Vec::new();
    for (i, line) in lines {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TraceRecord = serde_json::from_str(&line).map_err(|e| Error::TraceLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        rec.validate(catalog).map_err(|e| Error::TraceLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(rec);
    }
    Ok(Workload::new(header.catalog_ref, records))
}

/// Default training/validation/testing fractions.
pub const DEFAULT_SPLIT: (f64, f64, f64) = (0.30, 0.30, 0.40);

/// Seeded shuffle into training, validation and testing worksets.
///
/// Sizes are `floor(n * fraction)` for the first two; testing takes the rest.
pub fn split_workload(
    workload: &Workload,
    fractions: (f64, f64, f64),
    seed: u64,
) -> Result<(Workload, Workload, Workload)> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !(0.0..=1.0).contains(f)) || (a + b + c - 1.0).abs() > 1e-9 {
        return Err(Error::Config(format!(
            "split fractions must be in [0,1] and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let n = workload.records.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = ((n as f64) * a).floor() as usize;
    let n_valid = (((n as f64) * b).floor() as usize).min(n - n_train);
    let pick = |idx: &[usize]| {
        Workload::new(
            workload.catalog_ref.clone(),
            idx.iter().map(|&i| workload.records[i].clone()).collect(),
        )
    };
    Ok((
        pick(&order[..n_train]),
        pick(&order[n_train..n_train + n_valid]),
        pick(&order[n_train + n_valid..]),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trace::generate::{neworder_catalog, NewOrderConfig};

    fn sample(n: usize) -> (Catalog, Workload) {
        let cfg = NewOrderConfig {
            num_txns: n,
            ..NewOrderConfig::new(2)
        };
        (neworder_catalog(2), generate::generate_neworder_like(&cfg, 7).unwrap())
    }

    #[test]
    fn empty_and_round_trip() {
        let (catalog, _) = sample(0);
        let empty = Workload::new("x", vec![]);
        let mut buf = Vec::new();
        write_trace(&empty, &mut buf).unwrap();
        assert_eq!(read_trace(&buf[..], &catalog).unwrap(), empty);
        assert_eq!(read_trace(&b""[..], &catalog).unwrap(), Workload::default());

        let (catalog, w) = sample(3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.trace.jsonl");
        save_trace(&w, &path).unwrap();
        assert_eq!(load_trace(&path, &catalog).unwrap(), w);
    }

    #[test]
    fn unknown_procedure_names_line() {
        let (catalog, mut w) = sample(2);
        w.records[1].proc_name = "Bogus".into();
        let mut buf = Vec::new();
        write_trace(&w, &mut buf).unwrap();
        match read_trace(&buf[..], &catalog) {
            Err(Error::TraceLine { line, message }) => {
                assert_eq!(line, 3);
                assert!(message.contains("Bogus"));
            }
            other => panic!("expected line error, got {other:?}"),
        }
        let bad = b"{\"catalog_ref\":\"x\"}\nnot json\n";
        assert!(matches!(
            read_trace(&bad[..], &catalog),
            Err(Error::TraceLine { line: 2, .. })
        ));
    }

    #[test]
    fn split_sizes() {
        let (_, w) = sample(10);
        let (a, b, c) = split_workload(&w, DEFAULT_SPLIT, 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (3, 3, 4));

        let (a, b, c) = split_workload(&w, (1.0, 0.0, 0.0), 1).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10, 0, 0));

        let again = split_workload(&w, DEFAULT_SPLIT, 1).unwrap();
        assert_eq!(again.0, split_workload(&w, DEFAULT_SPLIT, 1).unwrap().0);

        let empty = Workload::default();
        let (a, b, c) = split_workload(&empty, DEFAULT_SPLIT, 1).unwrap();
        assert!(a.is_empty() && b.is_empty() && c.is_empty());

        assert!(split_workload(&w, (0.5, 0.5, 0.5), 1).is_err());
    }

    #[test]
    fn split_is_a_partition() {
        let (_, w) = sample(97);
        let (a, b, c) = split_workload(&w, DEFAULT_SPLIT, 99).unwrap();
        let mut ids: Vec<u64> = a
            .records
            .iter()
            .chain(&b.records)
            .chain(&c.records)
            .map(|r| r.txn_id)
            .collect();
        ids.sort_unstable();
        let mut expected: Vec<u64> = w.records.iter().map(|r| r.txn_id).collect();
        expected.sort_unstable();
        assert_eq!(ids, expected);
    }
}
