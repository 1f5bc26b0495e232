//! Honest causal forest over residualised data.
//!
//! Each leaf estimates the local residual-on-residual slope
//! `tau = Σ(ry·ra) / Σ(ra²)`. Trees are grouped into little bags that share a
//! half-sample, which gives the between-bag variance used for confidence
//! intervals.
//!
//! Row selection (half-samples, tree subsamples, honest splits) ranks rows by
//! a seeded hash of their key rather than by position, and every per-node sum
//! runs over rows in key order. Reordering the training rows therefore leaves
//! the forest bit-for-bit unchanged.

use rand::seq::index::sample;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::domain::{FeatureMatrix, IteEstimate};
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for, splitmix64};

const HALF_SAMPLE_TAG: u64 = 0xBA6;
const SUBSAMPLE_TAG: u64 = 0x5AB;
const HONEST_TAG: u64 = 0x407;
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Residualised training data for the final stage.
#[derive(Debug, Clone, PartialEq)]
pub struct ResidualData {
    /// Outcome residuals `Y - Ỹ`.
    pub ry: Vec<f64>,
    /// Treatment residuals `A - Ã`.
    pub ra: Vec<f64>,
    pub features: FeatureMatrix,
    /// Stable row identities; defaults to the row position.
    pub keys: Vec<u64>,
}

impl ResidualData {
    pub fn new(ry: Vec<f64>, ra: Vec<f64>, features: FeatureMatrix) -> Result<Self> {
        let keys = (0..ry.len() as u64).collect();
        Self::with_keys(ry, ra, features, keys)
    }

    pub fn with_keys(ry: Vec<f64>, ra: Vec<f64>, features: FeatureMatrix, keys: Vec<u64>) -> Result<Self> {
        let n = ry.len();
        if ra.len() != n || features.n_rows() != n || keys.len() != n {
            return Err(Error::InvalidArgument(format!(
                "residual lengths differ: ry {n}, ra {}, features {}, keys {}",
                ra.len(),
                features.n_rows(),
                keys.len()
            )));
        }
        if ry.iter().chain(&ra).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("residuals must be finite".into()));
        }
        Ok(ResidualData {
            ry,
            ra,
            features,
            keys,
        })
    }

    pub fn len(&self) -> usize {
        self.ry.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ry.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestParams {
    pub n_bags: usize,
    pub trees_per_bag: usize,
    /// Share of each tree's subsample used to choose splits.
    pub honest_fraction: f64,
    /// Share of the bag's half-sample given to each tree.
    pub subsample_fraction: f64,
    pub max_depth: usize,
    pub min_split: usize,
    pub min_leaf_estimate: usize,
    /// Candidate features per split; `None` means `ceil(sqrt(d))`.
    pub features_per_split: Option<usize>,
    pub confidence_level: f64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_bags: 25,
            trees_per_bag: 8,
            honest_fraction: 0.5,
            subsample_fraction: 0.5,
            max_depth: 8,
            min_split: 20,
            min_leaf_estimate: 10,
            features_per_split: None,
            confidence_level: 0.9,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_bags == 0 || self.trees_per_bag == 0 {
            return Err(Error::Config("forest needs at least one bag and one tree per bag".into()));
        }
        if !(self.honest_fraction > 0.0 && self.honest_fraction < 1.0) {
            return Err(Error::Config("honest_fraction must lie in (0,1)".into()));
        }
        if !(self.subsample_fraction > 0.0 && self.subsample_fraction <= 1.0) {
            return Err(Error::Config("subsample_fraction must lie in (0,1]".into()));
        }
        if !(self.confidence_level > 0.0 && self.confidence_level < 1.0) {
            return Err(Error::Config("confidence_level must lie in (0,1)".into()));
        }
        if self.features_per_split == Some(0) {
            return Err(Error::Config("features_per_split must be positive".into()));
        }
        Ok(())
    }

    fn mtry(&self, d: usize) -> usize {
        self.features_per_split
            .unwrap_or_else(|| (d as f64).sqrt().ceil() as usize)
            .clamp(1, d.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum CausalNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        tau: f64,
        n_estimate: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalTree {
    /// Flat node array; node 0 is the root.
    pub nodes: Vec<CausalNode>,
    /// Keys of the rows that chose the splits.
    pub structure_rows: Vec<u64>,
    /// Keys of the rows that produced the leaf values.
    pub estimation_rows: Vec<u64>,
}

impl CausalTree {
    pub fn predict(&self, x: &[f64]) -> f64 {
        self.leaf(x).0
    }

    /// Leaf value and estimation count reached by `x`.
    pub fn leaf(&self, x: &[f64]) -> (f64, usize) {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                CausalNode::Leaf { tau, n_estimate } => return (*tau, *n_estimate),
                CausalNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[CausalNode], i: usize) -> usize {
            match &nodes[i] {
                CausalNode::Leaf { .. } => 0,
                CausalNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn leaves(&self) -> impl Iterator<Item = (f64, usize)> + '_ {
        self.nodes.iter().filter_map(|n| match n {
            CausalNode::Leaf { tau, n_estimate } => Some((*tau, *n_estimate)),
            CausalNode::Split { .. } => None,
        })
    }

    /// Number of rows used both to choose splits and to estimate leaves.
    pub fn honesty_violations(&self) -> usize {
        let est: std::collections::HashSet<u64> = self.estimation_rows.iter().copied().collect();
        self.structure_rows.iter().filter(|k| est.contains(k)).count()
    }
}

fn rank(path_seed: u64, key: u64) -> u64 {
    splitmix64(path_seed ^ splitmix64(key))
}

/// The `take` rows of `rows` with the smallest seeded rank, in key order.
fn select_by_rank(data: &ResidualData, rows: &[usize], path_seed: u64, take: usize) -> Vec<usize> {
    let mut ranked: Vec<(u64, u64, usize)> = rows
        .iter()
        .map(|&i| (rank(path_seed, data.keys[i]), data.keys[i], i))
        .collect();
    ranked.sort_unstable();
    let mut chosen: Vec<usize> = ranked.into_iter().take(take).map(|(_, _, i)| i).collect();
    chosen.sort_unstable_by_key(|&i| data.keys[i]);
    chosen
}

#[derive(Default, Clone, Copy)]
struct Moments {
    sy: f64,
    saa: f64,
    count: usize,
    active: usize,
}

impl Moments {
    fn add(&mut self, ry: f64, ra: f64) {
        self.sy += ry * ra;
        self.saa += ra * ra;
        self.count += 1;
        if ra != 0.0 {
            self.active += 1;
        }
    }

    fn tau(&self) -> Option<f64> {
        (self.saa > 0.0).then(|| self.sy / self.saa)
    }
}

fn moments(data: &ResidualData, rows: &[usize]) -> Moments {
    let mut m = Moments::default();
    for &i in rows {
        m.add(data.ry[i], data.ra[i]);
    }
    m
}

struct BestSplit {
    score: f64,
    feature: usize,
    threshold: f64,
}

fn best_split(
    data: &ResidualData,
    structure: &[usize],
    estimation: &[usize],
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
) -> Option<BestSplit> {
    let x = &data.features;
    let d = x.n_cols();
    let parent = moments(data, structure);
    let parent_score = parent.count as f64 * parent.tau().unwrap_or(0.0).powi(2);
    let min_leaf = params.min_leaf_estimate.max(1);
    let mut best: Option<BestSplit> = None;
    let mut features: Vec<usize> = sample(rng, d, params.mtry(d)).into_vec();
    features.sort_unstable();
    let mut s_sorted = structure.to_vec();
    let mut e_sorted: Vec<usize> = estimation.iter().copied().filter(|&i| data.ra[i] != 0.0).collect();
    let e_active_total = e_sorted.len();
    for feature in features {
        let key = |&i: &usize| (x.get(i, feature), data.keys[i]);
        s_sorted.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite features"));
        e_sorted.sort_by(|a, b| key(a).partial_cmp(&key(b)).expect("finite features"));
        let mut left = Moments::default();
        let mut e_left = 0usize;
        for w in 0..s_sorted.len() {
            let i = s_sorted[w];
            left.add(data.ry[i], data.ra[i]);
            let Some(&next) = s_sorted.get(w + 1) else { break };
            let (v, nv) = (x.get(i, feature), x.get(next, feature));
            if nv <= v {
                continue;
            }
            let threshold = 0.5 * (v + nv);
            while e_left < e_sorted.len() && x.get(e_sorted[e_left], feature) <= threshold {
                e_left += 1;
            }
            let right_count = parent.count - left.count;
            if left.count < min_leaf || right_count < min_leaf {
                continue;
            }
            if e_left < min_leaf || e_active_total - e_left < min_leaf {
                continue;
            }
            let right = Moments {
                sy: parent.sy - left.sy,
                saa: parent.saa - left.saa,
                count: right_count,
                active: parent.active - left.active,
            };
            let (Some(tl), Some(tr)) = (left.tau(), right.tau()) else {
                continue;
            };
            if left.saa <= 1e-12 * parent.saa || right.saa <= 1e-12 * parent.saa {
                continue;
            }
            let score = left.count as f64 * tl * tl + right.count as f64 * tr * tr;
            if score > parent_score * (1.0 + 1e-12) + 1e-12 && best.as_ref().is_none_or(|b| score > b.score) {
                best = Some(BestSplit {
                    score,
                    feature,
                    threshold,
                });
            }
        }
    }
    best
}

/// Grows one honest tree on `subsample` (row positions into `data`).
pub fn grow_tree(data: &ResidualData, subsample: &[usize], params: &ForestParams, seed: u64) -> CausalTree {
    let mut rows = subsample.to_vec();
    rows.sort_unstable_by_key(|&i| data.keys[i]);
    rows.dedup();
    let n_structure = ((rows.len() as f64) * params.honest_fraction).floor() as usize;
    let structure = select_by_rank(data, &rows, derive_seed(seed, &[HONEST_TAG]), n_structure);
    let mut is_structure = std::collections::HashSet::with_capacity(structure.len());
    is_structure.extend(structure.iter().copied());
    let estimation: Vec<usize> = rows.iter().copied().filter(|i| !is_structure.contains(i)).collect();

    let mut rng = rng_for(seed, &[0x7EE]);
    let root_tau = moments(data, &estimation).tau().unwrap_or(0.0);
    let mut nodes = vec![CausalNode::Leaf {
        tau: root_tau,
        n_estimate: 0,
    }];
    // (node, depth, structure rows, estimation rows, parent estimate)
    let mut stack = vec![(0usize, 0usize, structure.clone(), estimation.clone(), root_tau)];
    while let Some((node, depth, s_rows, e_rows, parent_tau)) = stack.pop() {
        let est = moments(data, &e_rows);
        let own_tau = est.tau().unwrap_or(parent_tau);
        let split = if depth < params.max_depth && s_rows.len() >= params.min_split {
            best_split(data, &s_rows, &e_rows, params, &mut rng)
        } else {
            None
        };
        match split {
            None => {
                nodes[node] = CausalNode::Leaf {
                    tau: own_tau,
                    n_estimate: est.active,
                };
            }
            Some(BestSplit { feature, threshold, .. }) => {
                let left = nodes.len();
                let right = left + 1;
                nodes.push(CausalNode::Leaf { tau: 0.0, n_estimate: 0 });
                nodes.push(CausalNode::Leaf { tau: 0.0, n_estimate: 0 });
                nodes[node] = CausalNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
                let goes_left = |i: &usize| data.features.get(*i, feature) <= threshold;
                let (sl, sr): (Vec<usize>, Vec<usize>) = s_rows.iter().partition(|i| goes_left(i));
                let (el, er): (Vec<usize>, Vec<usize>) = e_rows.iter().partition(|i| goes_left(i));
                // Right pushed first so the left subtree is expanded first.
                stack.push((right, depth + 1, sr, er, own_tau));
                stack.push((left, depth + 1, sl, el, own_tau));
            }
        }
    }
    CausalTree {
        nodes,
        structure_rows: structure.iter().map(|&i| data.keys[i]).collect(),
        estimation_rows: estimation.iter().map(|&i| data.keys[i]).collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalForest {
    pub params: ForestParams,
    pub seed: u64,
    pub n_features: usize,
    /// Trees in bag-major order: tree `t` belongs to bag `t / trees_per_bag`.
    pub trees: Vec<CausalTree>,
    /// Keys of each bag's half-sample.
    pub bag_members: Vec<Vec<u64>>,
}

/// Fits `n_bags × trees_per_bag` honest trees. Each bag draws half of the rows
/// without replacement; each tree in it takes a `subsample_fraction` share of
/// that half.
pub fn fit_forest(data: &ResidualData, params: &ForestParams, seed: u64) -> Result<CausalForest> {
    params.validate()?;
    let n = data.len();
    if n < 2 * params.min_split.max(1) {
        return Err(Error::InsufficientData(format!(
            "forest needs at least {} rows, got {n}",
            2 * params.min_split.max(1)
        )));
    }
    let all: Vec<usize> = (0..n).collect();
    let halves: Vec<Vec<usize>> = (0..params.n_bags)
        .map(|b| select_by_rank(data, &all, derive_seed(seed, &[HALF_SAMPLE_TAG, b as u64]), n / 2))
        .collect();
    let per_tree = |half: &[usize]| ((half.len() as f64) * params.subsample_fraction).ceil() as usize;
    let jobs: Vec<(usize, usize)> = (0..params.n_bags)
        .flat_map(|b| (0..params.trees_per_bag).map(move |t| (b, t)))
        .collect();
    let trees: Vec<CausalTree> = jobs
        .par_iter()
        .map(|&(b, t)| {
            let half = &halves[b];
            let path = [SUBSAMPLE_TAG, b as u64, t as u64];
            let sub = select_by_rank(data, half, derive_seed(seed, &path), per_tree(half));
            grow_tree(data, &sub, params, derive_seed(seed, &[b as u64, t as u64]))
        })
        .collect();
    Ok(CausalForest {
        params: params.clone(),
        seed,
        n_features: data.features.n_cols(),
        trees,
        bag_members: halves
            .iter()
            .map(|h| h.iter().map(|&i| data.keys[i]).collect())
            .collect(),
    })
}

fn normal_quantile(level: f64) -> f64 {
    Normal::standard().inverse_cdf(0.5 + 0.5 * level)
}

impl CausalForest {
    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n_features {
            return Err(Error::SchemaViolation(format!(
                "forest expects {} features, got {}",
                self.n_features,
                x.len()
            )));
        }
        Ok(())
    }

    pub fn n_bags(&self) -> usize {
        self.trees.len() / self.params.trees_per_bag
    }

    /// Mean leaf value over all trees.
    pub fn predict_tau(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.trees.iter().map(|t| t.predict(x)).sum::<f64>() / self.trees.len() as f64)
    }

    /// Point estimate with a little-bags interval at `level`.
    pub fn predict_tau_ci(&self, x: &[f64], level: f64) -> Result<IteEstimate> {
        self.check(x)?;
        let s = self.params.trees_per_bag;
        let bags = self.n_bags();
        if bags < 2 {
            return Err(Error::NoInterval(format!(
                "little-bags variance needs at least 2 bags, forest has {bags}"
            )));
        }
        if !(level > 0.0 && level < 1.0) {
            return Err(Error::InvalidArgument(format!("confidence level {level} outside (0,1)")));
        }
        let preds: Vec<f64> = self.trees.iter().map(|t| t.predict(x)).collect();
        let mean = preds.iter().sum::<f64>() / preds.len() as f64;
        let bag_means: Vec<f64> = preds
            .chunks_exact(s)
            .map(|c| c.iter().sum::<f64>() / s as f64)
            .collect();
        let b = bags as f64;
        let between = bag_means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / b;
        let within = preds
            .chunks_exact(s)
            .zip(&bag_means)
            .map(|(c, m)| c.iter().map(|p| (p - m).powi(2)).sum::<f64>())
            .sum::<f64>()
            / (b * s as f64);
        let variance = (between - within / s as f64).max(VARIANCE_FLOOR);
        let half_width = normal_quantile(level) * variance.sqrt();
        Ok(IteEstimate {
            tau: mean,
            tau_lower: mean - half_width,
            tau_upper: mean + half_width,
            confidence_level: level,
        })
    }
}
