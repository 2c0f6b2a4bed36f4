//! C4.5-style decision tree that routes a request to a cluster.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::features::{Feature, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "node")]
pub enum DecisionTree {
    Leaf {
        cluster: usize,
    },
    /// `value <= threshold` goes to `below`. Nulls follow `nulls_below`.
    Numeric {
        feature: Feature,
        threshold: f64,
        below: Box<DecisionTree>,
        above: Box<DecisionTree>,
        nulls_below: bool,
    },
    /// Branch per observed value. Nulls and unseen values take
    /// `branches[default]`.
    Categorical {
        feature: Feature,
        branches: Vec<(i64, DecisionTree)>,
        default: usize,
    },
}

fn entropy(counts: &BTreeMap<usize, usize>) -> f64 {
    let n: usize = counts.values().sum();
    if n == 0 {
        return 0.0;
    }
    counts
        .values()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum()
}

fn label_counts(rows: &[(&FeatureVector, usize)]) -> BTreeMap<usize, usize> {
    let mut m = BTreeMap::new();
    for (_, l) in rows {
        *m.entry(*l).or_insert(0) += 1;
    }
    m
}

/// Most frequent label, ties to the lowest.
fn majority(rows: &[(&FeatureVector, usize)]) -> usize {
    let counts = label_counts(rows);
    let mut best = (0, 0);
    for (&l, &c) in &counts {
        if c > best.1 {
            best = (l, c);
        }
    }
    best.0
}

enum Candidate {
    Numeric(f64),
    Categorical(Vec<i64>),
}

struct Scored {
    feature: Feature,
    gain: f64,
    ratio: f64,
    split: Candidate,
}

/// Gain and gain ratio of partitioning the non-null rows into `groups`.
fn score(groups: &[BTreeMap<usize, usize>], base: f64, n: usize) -> (f64, f64) {
    let mut remainder = 0.0;
    let mut split_info = 0.0;
    for g in groups {
        let size: usize = g.values().sum();
        if size == 0 {
            continue;
        }
        let w = size as f64 / n as f64;
        remainder += w * entropy(g);
        split_info -= w * w.log2();
    }
    let gain = base - remainder;
    let ratio = if split_info > 0.0 { gain / split_info } else { 0.0 };
    (gain, ratio)
}

fn best_split(rows: &[(&FeatureVector, usize)], features: &[Feature]) -> Option<Scored> {
    let mut scored = Vec::new();
    for &feature in features {
        let known: Vec<(f64, usize)> = rows
            .iter()
            .filter_map(|(v, l)| v.get(feature).map(|x| (x, *l)))
            .collect();
        if known.is_empty() {
            continue;
        }
        let n = known.len();
        let mut all = BTreeMap::new();
        for (_, l) in &known {
            *all.entry(*l).or_insert(0) += 1;
        }
        let base = entropy(&all);
        if feature.category.is_categorical() {
            let mut groups: BTreeMap<i64, BTreeMap<usize, usize>> = BTreeMap::new();
            for (x, l) in &known {
                *groups.entry(*x as i64).or_default().entry(*l).or_insert(0) += 1;
            }
            if groups.len() < 2 {
                continue;
            }
            let values: Vec<i64> = groups.keys().copied().collect();
            let gs: Vec<_> = groups.into_values().collect();
            let (gain, ratio) = score(&gs, base, n);
            scored.push(Scored {
                feature,
                gain,
                ratio,
                split: Candidate::Categorical(values),
            });
        } else {
            let mut sorted = known.clone();
            sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut below: BTreeMap<usize, usize> = BTreeMap::new();
            let mut best: Option<(f64, f64, f64)> = None;
            for i in 0..n - 1 {
                *below.entry(sorted[i].1).or_insert(0) += 1;
                if sorted[i].0 == sorted[i + 1].0 {
                    continue;
                }
                let mut above = all.clone();
                for (l, c) in &below {
                    *above.get_mut(l).expect("subset") -= c;
                }
                let (gain, ratio) = score(&[below.clone(), above], base, n);
                let threshold = (sorted[i].0 + sorted[i + 1].0) / 2.0;
                if best.is_none_or(|b| gain > b.0) {
                    best = Some((gain, ratio, threshold));
                }
            }
            if let Some((gain, ratio, threshold)) = best {
                scored.push(Scored {
                    feature,
                    gain,
                    ratio,
                    split: Candidate::Numeric(threshold),
                });
            }
        }
    }
    scored.retain(|s| s.gain > 1e-12);
    if scored.is_empty() {
        return None;
    }
    // C4.5: among splits with at least average gain, take the best ratio.
    let avg = scored.iter().map(|s| s.gain).sum::<f64>() / scored.len() as f64;
    let mut best: Option<Scored> = None;
    for s in scored {
        if s.gain + 1e-12 < avg {
            continue;
        }
        if best.as_ref().is_none_or(|b| s.ratio > b.ratio + 1e-12) {
            best = Some(s);
        }
    }
    best
}

fn build(rows: &[(&FeatureVector, usize)], features: &[Feature]) -> DecisionTree {
    let counts = label_counts(rows);
    if counts.len() <= 1 {
        return DecisionTree::Leaf {
            cluster: majority(rows),
        };
    }
    let Some(s) = best_split(rows, features) else {
        return DecisionTree::Leaf {
            cluster: majority(rows),
        };
    };
    match s.split {
        Candidate::Numeric(threshold) => {
            let (mut lo, mut hi, mut nulls) = (Vec::new(), Vec::new(), Vec::new());
            for r in rows {
                match r.0.get(s.feature) {
                    Some(x) if x <= threshold => lo.push(*r),
                    Some(_) => hi.push(*r),
                    None => nulls.push(*r),
                }
            }
            let nulls_below = lo.len() >= hi.len();
            if nulls_below {
                lo.extend(nulls);
            } else {
                hi.extend(nulls);
            }
            DecisionTree::Numeric {
                feature: s.feature,
                threshold,
                below: Box::new(build(&lo, features)),
                above: Box::new(build(&hi, features)),
                nulls_below,
            }
        }
        Candidate::Categorical(values) => {
            let mut parts: Vec<Vec<(&FeatureVector, usize)>> = vec![Vec::new(); values.len()];
            let mut nulls = Vec::new();
            for r in rows {
                match r.0.get(s.feature) {
                    Some(x) => {
                        let i = values.binary_search(&(x as i64)).expect("value seen above");
                        parts[i].push(*r);
                    }
                    None => nulls.push(*r),
                }
            }
            let mut default = 0;
            for (i, p) in parts.iter().enumerate() {
                if p.len() > parts[default].len() {
                    default = i;
                }
            }
            parts[default].extend(nulls);
            DecisionTree::Categorical {
                feature: s.feature,
                branches: values
                    .into_iter()
                    .zip(parts.iter().map(|p| build(p, features)))
                    .collect(),
                default,
            }
        }
    }
}

impl DecisionTree {
    /// Learns a tree over `features` from labeled vectors. Empty input
    /// yields a single leaf for cluster 0.
    pub fn fit(vectors: &[FeatureVector], labels: &[usize], features: &[Feature]) -> Self {
        let rows: Vec<(&FeatureVector, usize)> = vectors.iter().zip(labels.iter().copied()).collect();
        if rows.is_empty() {
            return DecisionTree::Leaf { cluster: 0 };
        }
        build(&rows, features)
    }

    pub fn classify(&self, v: &FeatureVector) -> usize {
        match self {
            DecisionTree::Leaf { cluster } => *cluster,
            DecisionTree::Numeric {
                feature,
                threshold,
                below,
                above,
                nulls_below,
            } => {
                let go_below = v.get(*feature).map_or(*nulls_below, |x| x <= *threshold);
                if go_below { below } else { above }.classify(v)
            }
            DecisionTree::Categorical {
                feature,
                branches,
                default,
            } => {
                let i = v
                    .get(*feature)
                    .and_then(|x| branches.iter().position(|(k, _)| *k == x as i64))
                    .unwrap_or(*default);
                branches[i].1.classify(v)
            }
        }
    }

    /// Features tested anywhere in the tree.
    pub fn features(&self) -> Vec<Feature> {
        let mut out = Vec::new();
        self.collect(&mut out);
        out.sort();
        out.dedup();
        out
    }

    fn collect(&self, out: &mut Vec<Feature>) {
        match self {
            DecisionTree::Leaf { .. } => {}
            DecisionTree::Numeric {
                feature, below, above, ..
            } => {
                out.push(*feature);
                below.collect(out);
                above.collect(out);
            }
            DecisionTree::Categorical { feature, branches, .. } => {
                out.push(*feature);
                for (_, b) in branches {
                    b.collect(out);
                }
            }
        }
    }

    pub fn root_feature(&self) -> Option<Feature> {
        match self {
            DecisionTree::Leaf { .. } => None,
            DecisionTree::Numeric { feature, .. } | DecisionTree::Categorical { feature, .. } => Some(*feature),
        }
    }

    pub fn leaves(&self) -> usize {
        match self {
            DecisionTree::Leaf { .. } => 1,
            DecisionTree::Numeric { below, above, .. } => below.leaves() + above.leaves(),
            DecisionTree::Categorical { branches, .. } => branches.iter().map(|(_, b)| b.leaves()).sum(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clustering::features::FeatureCategory;

    fn vector(hash: f64, len: Option<f64>) -> FeatureVector {
        let mut a = [None; 5];
        a[FeatureCategory::HashValue as usize] = Some(hash);
        let mut b = [None; 5];
        b[FeatureCategory::ArrayLength as usize] = len;
        FeatureVector { values: vec![a, b] }
    }

    const HASH: Feature = Feature {
        param: 0,
        category: FeatureCategory::HashValue,
    };
    const LEN: Feature = Feature {
        param: 1,
        category: FeatureCategory::ArrayLength,
    };

    #[test]
    fn single_cluster_is_one_leaf() {
        let vs = vec![vector(0.0, Some(2.0)), vector(1.0, Some(8.0))];
        let t = DecisionTree::fit(&vs, &[3, 3], &[HASH, LEN]);
        assert_eq!(t, DecisionTree::Leaf { cluster: 3 });
        assert_eq!(t.classify(&vector(5.0, None)), 3);
    }

    #[test]
    fn planted_length_split() {
        let mut vs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..100 {
            let long = i % 4 == 0;
            vs.push(vector((i % 2) as f64, Some(if long { 8.0 } else { 2.0 })));
            labels.push(long as usize);
        }
        let t = DecisionTree::fit(&vs, &labels, &[HASH, LEN]);
        assert_eq!(t.root_feature(), Some(LEN));
        for (v, l) in vs.iter().zip(&labels) {
            assert_eq!(t.classify(v), *l);
        }
        match &t {
            DecisionTree::Numeric { threshold, .. } => assert_eq!(*threshold, 5.0),
            other => panic!("{other:?}"),
        }
        // Nulls go to the majority (short) side.
        assert_eq!(t.classify(&vector(0.0, None)), 0);
    }

    #[test]
    fn hash_and_length_route_to_four_models() {
        let mut vs = Vec::new();
        let mut labels = Vec::new();
        for i in 0..200 {
            let h = (i % 2) as f64;
            let long = (i / 2) % 3 == 0;
            vs.push(vector(h, Some(if long { 3.0 } else { 1.0 })));
            labels.push(2 * (h as usize) + long as usize);
        }
        let t = DecisionTree::fit(&vs, &labels, &[HASH, LEN]);
        assert_eq!(t.features(), vec![HASH, LEN]);
        assert_eq!(t.leaves(), 4);
        for (v, l) in vs.iter().zip(&labels) {
            assert_eq!(t.classify(v), *l);
        }
        // Unseen hash value takes the default branch instead of failing.
        let _ = t.classify(&vector(7.0, Some(1.0)));
    }
}
