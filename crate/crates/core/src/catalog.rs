//! Schema, stored-procedure catalog and partition resolution.
//!
//! Partitioning is plain modulo over non-negative integer keys:
//! `partition = key mod num_partitions`. Keys must be `>= 0`.

use std::collections::HashSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest cluster the [`PartitionSet`] bitmask can describe.
pub const MAX_PARTITIONS: u32 = 64;

pub type PartitionId = u32;

/// Sorted set of partition ids, stored as a bitmask.
#[derive(Clone, Copy, Default, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PartitionSet(u64);

impl PartitionSet {
    pub const EMPTY: PartitionSet = PartitionSet(0);

    pub fn singleton(p: PartitionId) -> Self {
        debug_assert!(p < MAX_PARTITIONS);
        PartitionSet(1u64 << p)
    }

    /// `{0, .., n-1}`.
    pub fn all(n: u32) -> Self {
        if n >= 64 {
            PartitionSet(u64::MAX)
        } else {
            PartitionSet((1u64 << n) - 1)
        }
    }

    pub fn from_bits(bits: u64) -> Self {
        PartitionSet(bits)
    }

    pub fn bits(self) -> u64 {
        self.0
    }

    pub fn contains(self, p: PartitionId) -> bool {
        p < 64 && self.0 & (1u64 << p) != 0
    }

    pub fn insert(&mut self, p: PartitionId) {
        self.0 |= 1u64 << p;
    }

    pub fn union(self, other: PartitionSet) -> Self {
        PartitionSet(self.0 | other.0)
    }

    pub fn difference(self, other: PartitionSet) -> Self {
        PartitionSet(self.0 & !other.0)
    }

    pub fn is_subset(self, other: PartitionSet) -> bool {
        self.0 & !other.0 == 0
    }

    pub fn len(self) -> usize {
        self.0.count_ones() as usize
    }

    pub fn is_empty(self) -> bool {
        self.0 == 0
    }

    /// Smallest member, if any.
    pub fn first(self) -> Option<PartitionId> {
        (self.0 != 0).then(|| self.0.trailing_zeros())
    }

    /// Members in ascending order.
    pub fn iter(self) -> impl Iterator<Item = PartitionId> {
        let mut bits = self.0;
        std::iter::from_fn(move || {
            if bits == 0 {
                None
            } else {
                let p = bits.trailing_zeros();
                bits &= bits - 1;
                Some(p)
            }
        })
    }
}

impl FromIterator<PartitionId> for PartitionSet {
    fn from_iter<I: IntoIterator<Item = PartitionId>>(iter: I) -> Self {
        let mut s = PartitionSet::EMPTY;
        for p in iter {
            s.insert(p);
        }
        s
    }
}

impl fmt::Debug for PartitionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_set().entries(self.iter()).finish()
    }
}

impl fmt::Display for PartitionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (i, p) in self.iter().enumerate() {
            if i > 0 {
                write!(f, ",")?;
            }
            write!(f, "{p}")?;
        }
        write!(f, "}}")
    }
}

impl Serialize for PartitionSet {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_seq(self.iter())
    }
}

impl<'de> Deserialize<'de> for PartitionSet {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let members = Vec::<u32>::deserialize(d)?;
        if let Some(bad) = members.iter().find(|&&p| p >= MAX_PARTITIONS) {
            return Err(serde::de::Error::custom(format!("partition {bad} out of range")));
        }
        Ok(members.into_iter().collect())
    }
}

/// `value mod num_partitions`.
pub fn hash_partition(value: i64, num_partitions: u32) -> Result<PartitionId> {
    if num_partitions == 0 {
        return Err(Error::Catalog("num_partitions must be positive".into()));
    }
    if value < 0 {
        return Err(Error::NegativeKey(value));
    }
    Ok((value as u64 % num_partitions as u64) as PartitionId)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TableDef {
    pub name: String,
    pub partition_column: String,
    pub columns: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QueryKind {
    Read,
    Write,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueryDef {
    pub name: String,
    pub target_table: String,
    pub kind: QueryKind,
    /// Number of `?` placeholders.
    pub num_params: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub partition_param_index: Option<usize>,
    #[serde(default)]
    pub is_broadcast: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamDef {
    pub name: String,
    #[serde(default)]
    pub is_array: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProcedureDef {
    pub name: String,
    pub parameters: Vec<ParamDef>,
    pub queries: Vec<QueryDef>,
}

impl ProcedureDef {
    pub fn query(&self, name: &str) -> Option<&QueryDef> {
        self.queries.iter().find(|q| q.name == name)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Catalog {
    #[serde(default)]
    pub name: String,
    pub tables: Vec<TableDef>,
    pub procedures: Vec<ProcedureDef>,
    pub num_partitions: u32,
}

impl Catalog {
    pub fn validate(&self) -> Result<()> {
        if self.num_partitions == 0 || self.num_partitions > MAX_PARTITIONS {
            return Err(Error::Catalog(format!(
                "num_partitions must be in 1..={MAX_PARTITIONS}, got {}",
                self.num_partitions
            )));
        }
        let mut tables = HashSet::new();
        for t in &self.tables {
            if !tables.insert(t.name.as_str()) {
                return Err(Error::Catalog(format!("duplicate table `{}`", t.name)));
            }
            if !t.columns.contains(&t.partition_column) {
                return Err(Error::Catalog(format!(
                    "table `{}`: partition column `{}` is not a column",
                    t.name, t.partition_column
                )));
            }
        }
        let mut procs = HashSet::new();
        for p in &self.procedures {
            if !procs.insert(p.name.as_str()) {
                return Err(Error::Catalog(format!("duplicate procedure `{}`", p.name)));
            }
            if p.queries.is_empty() {
                return Err(Error::Catalog(format!("procedure `{}` has no queries", p.name)));
            }
            let mut params = HashSet::new();
            for param in &p.parameters {
                if !params.insert(param.name.as_str()) {
                    return Err(Error::Catalog(format!(
                        "procedure `{}`: duplicate parameter `{}`",
                        p.name, param.name
                    )));
                }
            }
            let mut queries = HashSet::new();
            for q in &p.queries {
                if !queries.insert(q.name.as_str()) {
                    return Err(Error::Catalog(format!(
                        "procedure `{}`: duplicate query `{}`",
                        p.name, q.name
                    )));
                }
                if !tables.contains(q.target_table.as_str()) {
                    return Err(Error::Catalog(format!(
                        "query `{}.{}` targets unknown table `{}`",
                        p.name, q.name, q.target_table
                    )));
                }
                match (q.partition_param_index, q.is_broadcast) {
                    (Some(i), false) if i < q.num_params => {}
                    (None, true) => {}
                    _ => {
                        return Err(Error::Catalog(format!(
                            "query `{}.{}` needs exactly one of an in-range partition_param_index or is_broadcast",
                            p.name, q.name
                        )))
                    }
                }
            }
        }
        Ok(())
    }

    pub fn procedure(&self, name: &str) -> Result<&ProcedureDef> {
        self.procedures
            .iter()
            .find(|p| p.name == name)
            .ok_or_else(|| Error::UnknownProcedure(name.to_string()))
    }

    pub fn query(&self, procedure: &str, query: &str) -> Result<&QueryDef> {
        self.procedure(procedure)?
            .query(query)
            .ok_or_else(|| Error::UnknownQuery {
                procedure: procedure.to_string(),
                query: query.to_string(),
            })
    }

    pub fn with_partitions(&self, num_partitions: u32) -> Catalog {
        Catalog {
            num_partitions,
            ..self.clone()
        }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Catalog> {
        let text = std::fs::read_to_string(path)?;
        let catalog: Catalog = serde_json::from_str(&text)?;
        catalog.validate()?;
        Ok(catalog)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    /// Partitions touched by one invocation of `query` with `params`.
    pub fn resolve_partitions(&self, query: &QueryDef, params: &[i64]) -> Result<PartitionSet> {
        resolve_partitions(self.num_partitions, query, params)
    }
}

pub fn resolve_partitions(num_partitions: u32, query: &QueryDef, params: &[i64]) -> Result<PartitionSet> {
    if params.len() != query.num_params {
        return Err(Error::Arity {
            query: query.name.clone(),
            expected: query.num_params,
            got: params.len(),
        });
    }
    if query.is_broadcast {
        return Ok(PartitionSet::all(num_partitions));
    }
    let idx = query
        .partition_param_index
        .ok_or_else(|| Error::Catalog(format!("query `{}` has no partition parameter", query.name)))?;
    Ok(PartitionSet::singleton(hash_partition(params[idx], num_partitions)?))
}
