//! Seeded synthetic workloads shaped after TPC-C NewOrder/Payment, TATP and a
//! buyer/seller auction procedure with a parameter-selected branch.
//!
//! Every generator is a pure function of `(config, seed)`.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::catalog::{Catalog, ParamDef, ProcedureDef, QueryDef, QueryKind, TableDef};
use crate::error::{Error, Result};
use crate::trace::{Outcome, ParamValue, QueryInvocation, TraceRecord, Workload};

fn table(name: &str, partition_column: &str, columns: &[&str]) -> TableDef {
    TableDef {
        name: name.into(),
        partition_column: partition_column.into(),
        columns: columns.iter().map(|c| c.to_string()).collect(),
    }
}

fn query(name: &str, table: &str, kind: QueryKind, num_params: usize, part: Option<usize>) -> QueryDef {
    QueryDef {
        name: name.into(),
        target_table: table.into(),
        kind,
        num_params,
        partition_param_index: part,
        is_broadcast: part.is_none(),
    }
}

fn params(names: &[(&str, bool)]) -> Vec<ParamDef> {
    names
        .iter()
        .map(|(n, a)| ParamDef {
            name: n.to_string(),
            is_array: *a,
        })
        .collect()
}

fn check_prob(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("{name} must be in [0,1], got {p}")))
    }
}

fn check_partitions(p: u32) -> Result<()> {
    if (1..=crate::catalog::MAX_PARTITIONS).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("partitions must be in 1..=64, got {p}")))
    }
}

use QueryKind::{Read, Write};

// ---------------------------------------------------------------------------
// TPC-C-like

pub fn neworder_catalog(num_partitions: u32) -> Catalog {
    Catalog {
        name: "tpcc-like".into(),
        tables: vec![
            table("WAREHOUSE", "W_ID", &["W_ID", "W_NEXT_O_ID", "W_YTD"]),
            table("STOCK", "S_W_ID", &["S_W_ID", "S_I_ID", "S_QTY"]),
            table("ORDERS", "O_W_ID", &["O_W_ID", "O_ID"]),
            table("ORDER_LINE", "OL_W_ID", &["OL_W_ID", "OL_O_ID", "OL_I_ID", "OL_QTY"]),
            table("CUSTOMER", "C_W_ID", &["C_W_ID", "C_ID", "C_BALANCE"]),
            table("HISTORY", "H_W_ID", &["H_W_ID", "H_C_ID", "H_AMOUNT"]),
        ],
        procedures: vec![
            ProcedureDef {
                name: "NewOrder".into(),
                parameters: params(&[("w_id", false), ("i_ids", true), ("i_w_ids", true), ("i_qtys", true)]),
                queries: vec![
                    query("GetWarehouse", "WAREHOUSE", Read, 1, Some(0)),
                    query("CheckStock", "STOCK", Read, 2, Some(0)),
                    query("InsertOrder", "ORDERS", Write, 2, Some(0)),
                    query("InsertOrdLine", "ORDER_LINE", Write, 4, Some(0)),
                    query("UpdateStock", "STOCK", Write, 3, Some(1)),
                ],
            },
            ProcedureDef {
                name: "Payment".into(),
                parameters: params(&[("w_id", false), ("c_w_id", false), ("c_id", false), ("amount", false)]),
                queries: vec![
                    query("UpdateWarehouse", "WAREHOUSE", Write, 2, Some(0)),
                    query("GetCustomer", "CUSTOMER", Read, 2, Some(0)),
                    query("UpdateCustomer", "CUSTOMER", Write, 3, Some(0)),
                    query("InsertHistory", "HISTORY", Write, 3, Some(0)),
                ],
            },
        ],
        num_partitions,
    }
}

/// How many items a NewOrder request carries.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ItemCounts {
    /// Uniform over `min..=max`.
    Uniform { min: usize, max: usize },
    /// `(count, weight)` pairs; weights need not sum to one.
    Weighted(Vec<(usize, f64)>),
}

impl ItemCounts {
    fn validate(&self) -> Result<()> {
        match self {
            ItemCounts::Uniform { min, max } if *min >= 1 && min <= max => Ok(()),
            ItemCounts::Weighted(w)
                if !w.is_empty()
                    && w.iter().all(|(n, p)| *n >= 1 && *p >= 0.0)
                    && w.iter().map(|(_, p)| p).sum::<f64>() > 0.0 =>
            {
                Ok(())
            }
            other => Err(Error::Config(format!("bad item count distribution {other:?}"))),
        }
    }

    fn sample(&self, rng: &mut impl Rng) -> usize {
        match self {
            ItemCounts::Uniform { min, max } => rng.gen_range(*min..=*max),
            ItemCounts::Weighted(w) => {
                let total: f64 = w.iter().map(|(_, p)| p).sum();
                let mut x = rng.gen::<f64>() * total;
                for (n, p) in w {
                    if x < *p {
                        return *n;
                    }
                    x -= p;
                }
                w.last().map(|(n, _)| *n).unwrap_or(1)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NewOrderConfig {
    pub partitions: u32,
    /// Warehouse id domain; `0` means one warehouse per partition.
    pub warehouses: u32,
    pub num_txns: usize,
    pub item_counts: ItemCounts,
    /// Probability that a request uses stock from another warehouse.
    pub remote_warehouse_probability: f64,
    pub abort_probability: f64,
    pub num_items: i64,
    /// Share of Payment requests mixed into the trace.
    pub payment_fraction: f64,
    pub payment_remote_probability: f64,
}

impl NewOrderConfig {
    pub fn new(partitions: u32) -> Self {
        NewOrderConfig {
            partitions,
            ..Default::default()
        }
    }

    fn validate(&self) -> Result<()> {
        check_partitions(self.partitions)?;
        check_prob("remote_warehouse_probability", self.remote_warehouse_probability)?;
        check_prob("abort_probability", self.abort_probability)?;
        check_prob("payment_fraction", self.payment_fraction)?;
        check_prob("payment_remote_probability", self.payment_remote_probability)?;
        if self.num_items < 1 {
            return Err(Error::Config("num_items must be positive".into()));
        }
        self.item_counts.validate()
    }
}

impl Default for NewOrderConfig {
    fn default() -> Self {
        NewOrderConfig {
            partitions: 2,
            warehouses: 0,
            num_txns: 1000,
            item_counts: ItemCounts::Uniform { min: 1, max: 4 },
            remote_warehouse_probability: 0.1,
            abort_probability: 0.01,
            num_items: 100_000,
            payment_fraction: 0.0,
            payment_remote_probability: 0.15,
        }
    }
}

fn other_value(rng: &mut impl Rng, domain: i64, not: i64) -> i64 {
    if domain <= 1 {
        return not;
    }
    let v = rng.gen_range(0..domain - 1);
    if v >= not {
        v + 1
    } else {
        v
    }
}

/// Builds one NewOrder record with the query sequence of the stored procedure:
/// `GetWarehouse`, `n x CheckStock`, then either an abort or `InsertOrder`
/// followed by `n x (InsertOrdLine, UpdateStock)`.
pub fn neworder_record(
    txn_id: u64,
    w_id: i64,
    i_ids: Vec<i64>,
    i_w_ids: Vec<i64>,
    i_qtys: Vec<i64>,
    o_id: i64,
    abort: bool,
) -> TraceRecord {
    let mut queries = vec![QueryInvocation::new("GetWarehouse", vec![w_id])];
    for k in 0..i_ids.len() {
        queries.push(QueryInvocation::new("CheckStock", vec![i_w_ids[k], i_ids[k]]));
    }
    if !abort {
        queries.push(QueryInvocation::new("InsertOrder", vec![w_id, o_id]));
        for k in 0..i_ids.len() {
            queries.push(QueryInvocation::new(
                "InsertOrdLine",
                vec![w_id, o_id, i_ids[k], i_qtys[k]],
            ));
            queries.push(QueryInvocation::new(
                "UpdateStock",
                vec![i_qtys[k], i_w_ids[k], i_ids[k]],
            ));
        }
    }
    TraceRecord {
        txn_id,
        proc_name: "NewOrder".into(),
        proc_params: vec![
            ParamValue::Int(w_id),
            ParamValue::Array(i_ids),
            ParamValue::Array(i_w_ids),
            ParamValue::Array(i_qtys),
        ],
        queries,
        outcome: if abort { Outcome::Aborted } else { Outcome::Committed },
    }
}

pub fn generate_neworder_like(config: &NewOrderConfig, seed: u64) -> Result<Workload> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let warehouses = if config.warehouses == 0 {
        config.partitions as i64
    } else {
        config.warehouses as i64
    };
    let mut records = Vec::with_capacity(config.num_txns);
    for txn_id in 0..config.num_txns as u64 {
        let w_id = rng.gen_range(0..warehouses);
        if config.payment_fraction > 0.0 && rng.gen_bool(config.payment_fraction) {
            let c_w_id = if rng.gen_bool(config.payment_remote_probability) {
                other_value(&mut rng, warehouses, w_id)
            } else {
                w_id
            };
            let c_id = rng.gen_range(1..=3000);
            let amount = rng.gen_range(1..=5000);
            records.push(TraceRecord {
                txn_id,
                proc_name: "Payment".into(),
                proc_params: vec![
                    ParamValue::Int(w_id),
                    ParamValue::Int(c_w_id),
                    ParamValue::Int(c_id),
                    ParamValue::Int(amount),
                ],
                queries: vec![
                    QueryInvocation::new("UpdateWarehouse", vec![w_id, amount]),
                    QueryInvocation::new("GetCustomer", vec![c_w_id, c_id]),
                    QueryInvocation::new("UpdateCustomer", vec![c_w_id, c_id, amount]),
                    QueryInvocation::new("InsertHistory", vec![w_id, c_id, amount]),
                ],
                outcome: Outcome::Committed,
            });
            continue;
        }
        let n = config.item_counts.sample(&mut rng);
        let i_ids: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=config.num_items)).collect();
        let mut i_w_ids = vec![w_id; n];
        if warehouses > 1 && rng.gen_bool(config.remote_warehouse_probability) {
            let k = rng.gen_range(0..n);
            i_w_ids[k] = other_value(&mut rng, warehouses, w_id);
        }
        let i_qtys: Vec<i64> = (0..n).map(|_| rng.gen_range(1..=10)).collect();
        let o_id = rng.gen_range(1..=3000);
        let abort = config.abort_probability > 0.0 && rng.gen_bool(config.abort_probability);
        records.push(neworder_record(txn_id, w_id, i_ids, i_w_ids, i_qtys, o_id, abort));
    }
    Ok(Workload::new("tpcc-like", records))
}

// ---------------------------------------------------------------------------
// TATP-like

pub fn tatp_catalog(num_partitions: u32) -> Catalog {
    Catalog {
        name: "tatp-like".into(),
        tables: vec![
            table("SUBSCRIBER", "S_ID", &["S_ID", "SUB_NBR", "BIT", "VLR"]),
            table("ACCESS_INFO", "S_ID", &["S_ID", "AI_TYPE", "DATA"]),
            table("SPECIAL_FACILITY", "S_ID", &["S_ID", "SF_TYPE", "DATA"]),
            table(
                "CALL_FORWARDING",
                "S_ID",
                &["S_ID", "SF_TYPE", "START_TIME", "END_TIME", "NUMBERX"],
            ),
        ],
        procedures: vec![
            ProcedureDef {
                name: "GetSubscriberData".into(),
                parameters: params(&[("s_id", false)]),
                queries: vec![query("GetSubscriber", "SUBSCRIBER", Read, 1, Some(0))],
            },
            ProcedureDef {
                name: "GetNewDestination".into(),
                parameters: params(&[("s_id", false), ("sf_type", false), ("start_time", false)]),
                queries: vec![
                    query("GetSpecialFacility", "SPECIAL_FACILITY", Read, 2, Some(0)),
                    query("GetCallForwarding", "CALL_FORWARDING", Read, 3, Some(0)),
                ],
            },
            ProcedureDef {
                name: "GetAccessData".into(),
                parameters: params(&[("s_id", false), ("ai_type", false)]),
                queries: vec![query("GetAccessInfo", "ACCESS_INFO", Read, 2, Some(0))],
            },
            ProcedureDef {
                name: "UpdateSubscriberData".into(),
                parameters: params(&[("s_id", false), ("bit", false), ("sf_type", false), ("data", false)]),
                queries: vec![
                    query("UpdateSubscriber", "SUBSCRIBER", Write, 2, Some(0)),
                    query("UpdateSpecialFacility", "SPECIAL_FACILITY", Write, 3, Some(0)),
                ],
            },
            ProcedureDef {
                name: "UpdateLocation".into(),
                parameters: params(&[("sub_nbr", false), ("vlr", false)]),
                queries: vec![
                    query("GetSubscriberBySubNbr", "SUBSCRIBER", Read, 1, None),
                    query("UpdateSubscriberLocation", "SUBSCRIBER", Write, 2, Some(1)),
                ],
            },
            ProcedureDef {
                name: "InsertCallForwarding".into(),
                parameters: params(&[
                    ("sub_nbr", false),
                    ("sf_type", false),
                    ("start_time", false),
                    ("numberx", false),
                ]),
                queries: vec![
                    query("GetSubscriberBySubNbr", "SUBSCRIBER", Read, 1, None),
                    query("GetSpecialFacilityTypes", "SPECIAL_FACILITY", Read, 1, Some(0)),
                    query("InsertCallFwd", "CALL_FORWARDING", Write, 4, Some(0)),
                ],
            },
            ProcedureDef {
                name: "DeleteCallForwarding".into(),
                parameters: params(&[("sub_nbr", false), ("sf_type", false), ("start_time", false)]),
                queries: vec![
                    query("GetSubscriberBySubNbr", "SUBSCRIBER", Read, 1, None),
                    query("DeleteCallFwd", "CALL_FORWARDING", Write, 3, Some(0)),
                ],
            },
        ],
        num_partitions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TatpConfig {
    pub partitions: u32,
    pub num_txns: usize,
    pub subscribers: i64,
    /// Share of requests that go to the always-single-partition procedures.
    pub single_fraction: f64,
    /// Chance that `InsertCallForwarding` aborts after its insert.
    pub insert_abort_probability: f64,
}

impl TatpConfig {
    pub fn new(partitions: u32) -> Self {
        TatpConfig {
            partitions,
            ..Default::default()
        }
    }
}

impl Default for TatpConfig {
    fn default() -> Self {
        TatpConfig {
            partitions: 2,
            num_txns: 1000,
            subscribers: 10_000,
            single_fraction: 0.82,
            insert_abort_probability: 0.3,
        }
    }
}

/// Subscriber number for a subscriber id: a bijection onto `[n, 2n)`, so it
/// never equals any subscriber id.
pub fn tatp_sub_nbr(s_id: i64, subscribers: i64) -> i64 {
    subscribers + (s_id * 7919) % subscribers
}

pub fn generate_tatp_like(config: &TatpConfig, seed: u64) -> Result<Workload> {
    check_partitions(config.partitions)?;
    check_prob("single_fraction", config.single_fraction)?;
    check_prob("insert_abort_probability", config.insert_abort_probability)?;
    if config.subscribers < 1 || config.subscribers % 7919 == 0 {
        return Err(Error::Config("subscribers must be positive and coprime to 7919".into()));
    }
    // Standard TATP mix, split into its single-partition and broadcast halves.
    const SINGLE: [(&str, f64); 4] = [
        ("GetSubscriberData", 35.0),
        ("GetNewDestination", 10.0),
        ("GetAccessData", 35.0),
        ("UpdateSubscriberData", 2.0),
    ];
    const BROADCAST: [(&str, f64); 3] = [
        ("UpdateLocation", 14.0),
        ("InsertCallForwarding", 2.0),
        ("DeleteCallForwarding", 2.0),
    ];
    fn pick<'a>(rng: &mut impl Rng, mix: &[(&'a str, f64)]) -> &'a str {
        let total: f64 = mix.iter().map(|(_, w)| w).sum();
        let mut x = rng.gen::<f64>() * total;
        for (name, w) in mix {
            if x < *w {
                return name;
            }
            x -= w;
        }
        mix[mix.len() - 1].0
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_sub = config.subscribers;
    let mut records = Vec::with_capacity(config.num_txns);
    for txn_id in 0..config.num_txns as u64 {
        let single = rng.gen_bool(config.single_fraction);
        let name = if single {
            pick(&mut rng, &SINGLE)
        } else {
            pick(&mut rng, &BROADCAST)
        };
        let s_id = rng.gen_range(0..n_sub);
        let sub_nbr = tatp_sub_nbr(s_id, n_sub);
        let sf_type = rng.gen_range(1..=4);
        let start_time = [0, 8, 16][rng.gen_range(0..3)];
        let mut outcome = Outcome::Committed;
        let (proc_params, queries) = match name {
            "GetSubscriberData" => (vec![s_id], vec![QueryInvocation::new("GetSubscriber", vec![s_id])]),
            "GetNewDestination" => (
                vec![s_id, sf_type, start_time],
                vec![
                    QueryInvocation::new("GetSpecialFacility", vec![s_id, sf_type]),
                    QueryInvocation::new("GetCallForwarding", vec![s_id, sf_type, start_time]),
                ],
            ),
            "GetAccessData" => {
                let ai_type = rng.gen_range(1..=4);
                (
                    vec![s_id, ai_type],
                    vec![QueryInvocation::new("GetAccessInfo", vec![s_id, ai_type])],
                )
            }
            "UpdateSubscriberData" => {
                let bit = rng.gen_range(0..=1);
                let data = rng.gen_range(0..=255);
                (
                    vec![s_id, bit, sf_type, data],
                    vec![
                        QueryInvocation::new("UpdateSubscriber", vec![s_id, bit]),
                        QueryInvocation::new("UpdateSpecialFacility", vec![s_id, sf_type, data]),
                    ],
                )
            }
            "UpdateLocation" => {
                let vlr = rng.gen_range(0..i32::MAX as i64);
                (
                    vec![sub_nbr, vlr],
                    vec![
                        QueryInvocation::new("GetSubscriberBySubNbr", vec![sub_nbr]),
                        QueryInvocation::new("UpdateSubscriberLocation", vec![vlr, s_id]),
                    ],
                )
            }
            "InsertCallForwarding" => {
                let numberx = rng.gen_range(0..i32::MAX as i64);
                if rng.gen_bool(config.insert_abort_probability) {
                    outcome = Outcome::Aborted;
                }
                (
                    vec![sub_nbr, sf_type, start_time, numberx],
                    vec![
                        QueryInvocation::new("GetSubscriberBySubNbr", vec![sub_nbr]),
                        QueryInvocation::new("GetSpecialFacilityTypes", vec![s_id]),
                        QueryInvocation::new("InsertCallFwd", vec![s_id, sf_type, start_time, numberx]),
                    ],
                )
            }
            "DeleteCallForwarding" => (
                vec![sub_nbr, sf_type, start_time],
                vec![
                    QueryInvocation::new("GetSubscriberBySubNbr", vec![sub_nbr]),
                    QueryInvocation::new("DeleteCallFwd", vec![s_id, sf_type, start_time]),
                ],
            ),
            _ => unreachable!(),
        };
        records.push(TraceRecord {
            txn_id,
            proc_name: name.to_string(),
            proc_params: proc_params.into_iter().map(ParamValue::Int).collect(),
            queries,
            outcome,
        });
    }
    Ok(Workload::new("tatp-like", records))
}

// ---------------------------------------------------------------------------
// Branchy buyer/seller

pub fn branchy_catalog(num_partitions: u32) -> Catalog {
    Catalog {
        name: "branchy-like".into(),
        tables: vec![
            table("USERS", "U_ID", &["U_ID", "BALANCE"]),
            table("WATCH", "W_U_ID", &["W_U_ID", "W_I_ID"]),
            table("ITEMS", "I_SELLER_ID", &["I_SELLER_ID", "I_ID"]),
            table("BIDS", "B_SELLER_ID", &["B_SELLER_ID", "B_I_ID", "B_BUYER_ID"]),
        ],
        procedures: vec![ProcedureDef {
            name: "UserAction".into(),
            parameters: params(&[
                ("mode", false),
                ("buyer_id", false),
                ("seller_id", false),
                ("item_id", false),
            ]),
            queries: vec![
                query("GetBuyer", "USERS", Read, 1, Some(0)),
                query("AddWatch", "WATCH", Write, 2, Some(0)),
                query("GetBuyerForBid", "USERS", Read, 1, Some(0)),
                query("GetSellerItem", "ITEMS", Read, 2, Some(0)),
                query("InsertBid", "BIDS", Write, 3, Some(0)),
                query("UpdateBuyer", "USERS", Write, 1, Some(0)),
            ],
        }],
        num_partitions,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BranchyConfig {
    pub partitions: u32,
    pub num_txns: usize,
    pub users: i64,
    /// Probability of the two-partition bid branch (`mode = 1`).
    pub bid_probability: f64,
    /// Chance that the single-partition watch branch aborts after its write.
    pub abort_probability: f64,
}

impl BranchyConfig {
    pub fn new(partitions: u32) -> Self {
        BranchyConfig {
            partitions,
            ..Default::default()
        }
    }
}

impl Default for BranchyConfig {
    fn default() -> Self {
        BranchyConfig {
            partitions: 2,
            num_txns: 1000,
            users: 10_000,
            bid_probability: 0.4,
            abort_probability: 0.0,
        }
    }
}

pub fn generate_branchy_like(config: &BranchyConfig, seed: u64) -> Result<Workload> {
    check_partitions(config.partitions)?;
    check_prob("bid_probability", config.bid_probability)?;
    check_prob("abort_probability", config.abort_probability)?;
    let p = config.partitions as i64;
    if config.users < p {
        return Err(Error::Config("users must be at least the partition count".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let per_partition = config.users / p;
    let mut records = Vec::with_capacity(config.num_txns);
    for txn_id in 0..config.num_txns as u64 {
        let buyer = rng.gen_range(0..per_partition * p);
        let buyer_part = buyer % p;
        let seller_part = if p > 1 {
            (buyer_part + 1 + rng.gen_range(0..p - 1)) % p
        } else {
            0
        };
        let seller = seller_part + p * rng.gen_range(0..per_partition);
        let item = rng.gen_range(1..=1_000_000);
        let bid = rng.gen_bool(config.bid_probability);
        let mut outcome = Outcome::Committed;
        let queries = if bid {
            vec![
                QueryInvocation::new("GetBuyerForBid", vec![buyer]),
                QueryInvocation::new("GetSellerItem", vec![seller, item]),
                QueryInvocation::new("InsertBid", vec![seller, item, buyer]),
                QueryInvocation::new("UpdateBuyer", vec![buyer]),
            ]
        } else {
            if config.abort_probability > 0.0 && rng.gen_bool(config.abort_probability) {
                outcome = Outcome::Aborted;
            }
            vec![
                QueryInvocation::new("GetBuyer", vec![buyer]),
                QueryInvocation::new("AddWatch", vec![buyer, item]),
            ]
        };
        records.push(TraceRecord {
            txn_id,
            proc_name: "UserAction".into(),
            proc_params: vec![
                ParamValue::Int(bid as i64),
                ParamValue::Int(buyer),
                ParamValue::Int(seller),
                ParamValue::Int(item),
            ],
            queries,
            outcome,
        });
    }
    Ok(Workload::new("branchy-like", records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::PartitionSet;

    /// Brute-force replay: union of partitions a record touches.
    fn touched(catalog: &Catalog, r: &TraceRecord) -> PartitionSet {
        r.partitions(catalog)
            .unwrap()
            .into_iter()
            .fold(PartitionSet::EMPTY, PartitionSet::union)
    }

    #[test]
    fn neworder_shape_and_validity() {
        let cfg = NewOrderConfig {
            num_txns: 500,
            payment_fraction: 0.3,
            ..NewOrderConfig::new(4)
        };
        let catalog = neworder_catalog(4);
        catalog.validate().unwrap();
        let w = generate_neworder_like(&cfg, 3).unwrap();
        w.validate(&catalog).unwrap();
        for r in w.records.iter().filter(|r| r.proc_name == "NewOrder") {
            let n = r.proc_params[1].as_array().unwrap().len();
            let names: Vec<&str> = r.queries.iter().map(|q| q.query_name.as_str()).collect();
            assert_eq!(names[0], "GetWarehouse");
            assert!(names[1..=n].iter().all(|&q| q == "CheckStock"));
            match r.outcome {
                Outcome::Aborted => assert_eq!(names.len(), 1 + n),
                Outcome::Committed => {
                    assert_eq!(names.len(), 2 + 3 * n);
                    assert_eq!(names[n + 1], "InsertOrder");
                }
            }
        }
    }

    #[test]
    fn neworder_local_only_when_no_remote() {
        let cfg = NewOrderConfig {
            num_txns: 300,
            remote_warehouse_probability: 0.0,
            abort_probability: 0.0,
            ..NewOrderConfig::new(8)
        };
        let catalog = neworder_catalog(8);
        let w = generate_neworder_like(&cfg, 1).unwrap();
        assert!(w.records.iter().all(|r| touched(&catalog, r).len() == 1));
        assert!(w.records.iter().all(|r| r.outcome == Outcome::Committed));
    }

    #[test]
    fn neworder_remote_rate() {
        let cfg = NewOrderConfig {
            num_txns: 20_000,
            remote_warehouse_probability: 0.1,
            ..NewOrderConfig::new(16)
        };
        let catalog = neworder_catalog(16);
        let w = generate_neworder_like(&cfg, 5).unwrap();
        let single = w.records.iter().filter(|r| touched(&catalog, r).len() == 1).count();
        let frac = single as f64 / w.len() as f64;
        assert!((frac - 0.9).abs() < 0.01, "single-partition share {frac}");
    }

    #[test]
    fn tatp_broadcast_and_mix() {
        let catalog = tatp_catalog(4);
        catalog.validate().unwrap();
        let w = generate_tatp_like(
            &TatpConfig {
                num_txns: 10_000,
                ..TatpConfig::new(4)
            },
            11,
        )
        .unwrap();
        w.validate(&catalog).unwrap();
        let broadcast: Vec<_> = w
            .records
            .iter()
            .filter(|r| r.queries[0].query_name == "GetSubscriberBySubNbr")
            .collect();
        for r in &broadcast {
            assert_eq!(r.partitions(&catalog).unwrap()[0], PartitionSet::all(4));
            assert_eq!(r.partitions(&catalog).unwrap()[1].len(), 1);
        }
        let frac = 1.0 - broadcast.len() as f64 / w.len() as f64;
        assert!((frac - 0.82).abs() < 0.02, "single share {frac}");
        let again = generate_tatp_like(
            &TatpConfig {
                num_txns: 10_000,
                ..TatpConfig::new(4)
            },
            11,
        )
        .unwrap();
        let (mut a, mut b) = (Vec::new(), Vec::new());
        crate::trace::write_trace(&w, &mut a).unwrap();
        crate::trace::write_trace(&again, &mut b).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn branchy_branches() {
        let catalog = branchy_catalog(8);
        catalog.validate().unwrap();
        let cfg = BranchyConfig {
            num_txns: 5000,
            ..BranchyConfig::new(8)
        };
        let w = generate_branchy_like(&cfg, 2).unwrap();
        w.validate(&catalog).unwrap();
        let mut bids = 0;
        for r in &w.records {
            let bid = r.proc_params[0].as_int().unwrap() == 1;
            assert_eq!(touched(&catalog, r).len(), if bid { 2 } else { 1 });
            bids += bid as usize;
        }
        let frac = bids as f64 / w.len() as f64;
        assert!((frac - 0.4).abs() < 0.03);

        let all_watch = generate_branchy_like(
            &BranchyConfig {
                bid_probability: 0.0,
                ..cfg.clone()
            },
            2,
        )
        .unwrap();
        assert!(all_watch.records.iter().all(|r| r.queries[0].query_name == "GetBuyer"));
        assert_eq!(generate_branchy_like(&cfg, 2).unwrap(), w);
    }

    #[test]
    fn config_validation() {
        let bad = NewOrderConfig {
            abort_probability: 1.5,
            ..NewOrderConfig::new(2)
        };
        assert!(generate_neworder_like(&bad, 0).is_err());
        let bad = NewOrderConfig {
            item_counts: ItemCounts::Uniform { min: 3, max: 2 },
            ..NewOrderConfig::new(2)
        };
        assert!(generate_neworder_like(&bad, 0).is_err());
        assert!(generate_tatp_like(
            &TatpConfig {
                single_fraction: -0.1,
                ..Default::default()
            },
            0
        )
        .is_err());
    }
}
