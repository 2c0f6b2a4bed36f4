//! Diagonal-covariance Gaussian mixtures fitted by EM, with the number of
//! components chosen by cross-validated log-likelihood.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::features::{Feature, FeatureVector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub max_k: usize,
    pub folds: usize,
    pub max_iterations: usize,
    pub tolerance: f64,
    /// Floor on every component variance, in encoded (unit-range) space.
    pub min_variance: f64,
    /// Cross-validated likelihood must improve by more than this per point
    /// for k to increase.
    pub min_improvement: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            max_k: 10,
            folds: 10,
            max_iterations: 100,
            tolerance: 1e-6,
            min_variance: 1e-4,
            min_improvement: 1e-3,
        }
    }
}

/// Turns feature vectors into dense points. A feature that is null for some
/// vector becomes a (presence, value) pair with value 0 when absent. Values
/// are scaled to unit range over the data the encoder was fitted on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encoder {
    features: Vec<Feature>,
    with_presence: Vec<bool>,
    offset: Vec<f64>,
    scale: Vec<f64>,
}

impl Encoder {
    pub fn fit(features: &[Feature], vectors: &[FeatureVector]) -> Self {
        let mut with_presence = Vec::new();
        let mut offset = Vec::new();
        let mut scale = Vec::new();
        for &f in features {
            with_presence.push(vectors.iter().any(|v| v.get(f).is_none()));
            let vals = vectors.iter().filter_map(|v| v.get(f));
            let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
            if lo.is_finite() && hi > lo {
                offset.push(lo);
                scale.push(hi - lo);
            } else {
                offset.push(if lo.is_finite() { lo } else { 0.0 });
                scale.push(1.0);
            }
        }
        Encoder {
            features: features.to_vec(),
            with_presence,
            offset,
            scale,
        }
    }

    pub fn encode(&self, v: &FeatureVector) -> Vec<f64> {
        let mut out = Vec::new();
        for (i, &f) in self.features.iter().enumerate() {
            let x = v.get(f);
            if self.with_presence[i] {
                out.push(x.is_some() as u8 as f64);
            }
            out.push(x.map_or(0.0, |x| (x - self.offset[i]) / self.scale[i]));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GaussianMixture {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub variances: Vec<Vec<f64>>,
}

const LN_2PI: f64 = 1.8378770664093453;

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

impl GaussianMixture {
    pub fn k(&self) -> usize {
        self.weights.len()
    }

    /// Per-component `ln w - 0.5 * sum(ln 2pi + ln v)` and `1 / v`.
    fn prepare(&self) -> (Vec<f64>, Vec<Vec<f64>>) {
        let consts = (0..self.k())
            .map(|c| self.weights[c].ln() - 0.5 * self.variances[c].iter().map(|v| LN_2PI + v.ln()).sum::<f64>())
            .collect();
        let inv = self
            .variances
            .iter()
            .map(|vs| vs.iter().map(|v| 1.0 / v).collect())
            .collect();
        (consts, inv)
    }

    fn log_joint_into(&self, prep: &(Vec<f64>, Vec<Vec<f64>>), x: &[f64], out: &mut [f64]) {
        for (c, o) in out.iter_mut().enumerate() {
            let mut q = 0.0;
            for ((xi, m), iv) in x.iter().zip(&self.means[c]).zip(&prep.1[c]) {
                q += (xi - m) * (xi - m) * iv;
            }
            *o = prep.0[c] - 0.5 * q;
        }
    }

    fn log_joint(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.k()];
        self.log_joint_into(&self.prepare(), x, &mut out);
        out
    }

    pub fn log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        let prep = self.prepare();
        let mut lj = vec![0.0; self.k()];
        data.iter()
            .map(|x| {
                self.log_joint_into(&prep, x, &mut lj);
                log_sum_exp(&lj)
            })
            .sum()
    }

    /// Most probable component, ties to the lowest index.
    pub fn assign(&self, x: &[f64]) -> usize {
        let lj = self.log_joint(x);
        let mut best = 0;
        for c in 1..lj.len() {
            if lj[c] > lj[best] {
                best = c;
            }
        }
        best
    }

    /// Fits `k` components starting from k-means++ seeds.
    pub fn fit(data: &[Vec<f64>], k: usize, config: &EmConfig, rng: &mut impl Rng) -> Self {
        let n = data.len();
        let d = data.first().map_or(0, Vec::len);
        let k = k.clamp(1, n.max(1));
        let global_var: Vec<f64> = (0..d)
            .map(|j| {
                let mean = data.iter().map(|x| x[j]).sum::<f64>() / n as f64;
                let var = data.iter().map(|x| (x[j] - mean).powi(2)).sum::<f64>() / n as f64;
                var.max(config.min_variance)
            })
            .collect();

        let mut means: Vec<Vec<f64>> = vec![data[rng.gen_range(0..n)].clone()];
        while means.len() < k {
            let d2: Vec<f64> = data
                .iter()
                .map(|x| {
                    means
                        .iter()
                        .map(|m| x.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            let total: f64 = d2.iter().sum();
            let idx = if total > 0.0 {
                let mut t = rng.gen::<f64>() * total;
                let mut pick = n - 1;
                for (i, w) in d2.iter().enumerate() {
                    if t < *w {
                        pick = i;
                        break;
                    }
                    t -= w;
                }
                pick
            } else {
                rng.gen_range(0..n)
            };
            means.push(data[idx].clone());
        }
        let mut gm = GaussianMixture {
            weights: vec![1.0 / k as f64; k],
            means,
            variances: vec![global_var; k],
        };

        let mut prev = f64::NEG_INFINITY;
        let mut lj = vec![0.0; k];
        let mut nk = vec![0.0; k];
        let mut sx = vec![vec![0.0; d]; k];
        let mut sxx = vec![vec![0.0; d]; k];
        for _ in 0..config.max_iterations {
            let mut ll = 0.0;
            nk.fill(0.0);
            sx.iter_mut().chain(sxx.iter_mut()).for_each(|v| v.fill(0.0));
            let prep = gm.prepare();
            for x in data {
                gm.log_joint_into(&prep, x, &mut lj);
                let z = log_sum_exp(&lj);
                ll += z;
                for c in 0..k {
                    let r = (lj[c] - z).exp();
                    nk[c] += r;
                    for j in 0..d {
                        sx[c][j] += r * x[j];
                        sxx[c][j] += r * x[j] * x[j];
                    }
                }
            }
            for c in 0..k {
                if nk[c] < 1e-12 {
                    // Dead component: keep it but make it irrelevant.
                    gm.weights[c] = 1e-300;
                    continue;
                }
                gm.weights[c] = nk[c] / n as f64;
                for j in 0..d {
                    let m = sx[c][j] / nk[c];
                    let v = sxx[c][j] / nk[c] - m * m;
                    gm.means[c][j] = m;
                    gm.variances[c][j] = v.max(config.min_variance);
                }
            }
            if (ll - prev).abs() <= config.tolerance * ll.abs().max(1.0) {
                break;
            }
            prev = ll;
        }
        gm
    }
}

/// Mean held-out log-likelihood per point for `k` components.
fn cross_validated(data: &[Vec<f64>], k: usize, config: &EmConfig, seed: u64) -> f64 {
    let n = data.len();
    let folds = config.folds.clamp(2, n);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut total = 0.0;
    for f in 0..folds {
        let (mut train, mut test) = (Vec::new(), Vec::new());
        for (pos, &i) in order.iter().enumerate() {
            if pos % folds == f {
                test.push(data[i].clone());
            } else {
                train.push(data[i].clone());
            }
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((k as u64) << 32) ^ f as u64);
        let gm = GaussianMixture::fit(&train, k, config, &mut rng);
        total += gm.log_likelihood(&test);
    }
    total / n as f64
}

/// Clusters `data`, returning the mixture and each point's component.
/// Component ids are compacted so every id in `0..k` has at least one point.
pub fn cluster_em(data: &[Vec<f64>], config: &EmConfig, seed: u64) -> (GaussianMixture, Vec<usize>) {
    if data.len() < 2 || data[0].is_empty() {
        let gm = GaussianMixture {
            weights: vec![1.0],
            means: vec![vec![0.0; data.first().map_or(0, Vec::len)]],
            variances: vec![vec![1.0; data.first().map_or(0, Vec::len)]],
        };
        return (gm, vec![0; data.len()]);
    }
    let mut best_k = 1;
    let mut best = cross_validated(data, 1, config, seed);
    for k in 2..=config.max_k.min(data.len() / config.folds.max(1)).max(1) {
        let score = cross_validated(data, k, config, seed);
        if score > best + config.min_improvement {
            best = score;
            best_k = k;
        } else {
            break;
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xA5A5_A5A5);
    let gm = GaussianMixture::fit(data, best_k, config, &mut rng);
    let raw: Vec<usize> = data.iter().map(|x| gm.assign(x)).collect();
    compact(gm, raw)
}

fn compact(gm: GaussianMixture, raw: Vec<usize>) -> (GaussianMixture, Vec<usize>) {
    let mut remap = vec![usize::MAX; gm.k()];
    let mut next = 0;
    for &c in &raw {
        if remap[c] == usize::MAX {
            remap[c] = next;
            next += 1;
        }
    }
    let mut keep: Vec<usize> = (0..gm.k()).filter(|&c| remap[c] != usize::MAX).collect();
    keep.sort_by_key(|&c| remap[c]);
    let total: f64 = keep.iter().map(|&c| gm.weights[c]).sum();
    let out = GaussianMixture {
        weights: keep.iter().map(|&c| gm.weights[c] / total).collect(),
        means: keep.iter().map(|&c| gm.means[c].clone()).collect(),
        variances: keep.iter().map(|&c| gm.variances[c].clone()).collect(),
    };
    let labels = raw.into_iter().map(|c| remap[c]).collect();
    (out, labels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_points_form_one_cluster() {
        let data = vec![vec![0.5, 1.0]; 50];
        let (gm, labels) = cluster_em(&data, &EmConfig::default(), 1);
        assert_eq!(gm.k(), 1);
        assert!(labels.iter().all(|&l| l == 0));
        let (_, one) = cluster_em(&data[..1], &EmConfig::default(), 1);
        assert_eq!(one, vec![0]);
    }

    #[test]
    fn planted_groups_are_recovered() {
        // ARRAYLENGTH 2 versus 8, encoded in unit range, plus a noise column.
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut data = Vec::new();
        let mut truth = Vec::new();
        for i in 0..300 {
            let g = (i % 3 == 0) as usize;
            data.push(vec![g as f64, rng.gen::<f64>()]);
            truth.push(g);
        }
        let (gm, labels) = cluster_em(&data, &EmConfig::default(), 9);
        assert_eq!(gm.k(), 2);
        let first = labels[0];
        for (l, t) in labels.iter().zip(&truth) {
            assert_eq!(*l == first, *t == truth[0]);
        }
        let (_, again) = cluster_em(&data, &EmConfig::default(), 9);
        assert_eq!(labels, again);
    }
}
