//! First-stage nuisance models and cross-fitting.
//!
//! Two learners are provided: gradient-boosted shallow regression trees (the
//! default) and ridge regression. Either can run in probability mode, which
//! clamps predictions to `[floor, 1 - floor]`.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::FeatureMatrix;
use crate::error::{Error, Result};
use crate::seeding::{derive_seed, rng_for};

/// Row-to-fold mapping for cross-fitting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub membership: Vec<usize>,
}

impl FoldAssignment {
    pub fn fold_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.membership.len())
            .filter(|&i| self.membership[i] == fold)
            .collect()
    }

    pub fn complement_rows(&self, fold: usize) -> Vec<usize> {
        (0..self.membership.len())
            .filter(|&i| self.membership[i] != fold)
            .collect()
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.membership {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded shuffle of `0..n` cut into `k` contiguous blocks whose sizes differ
/// by at most one.
pub fn make_folds(n: usize, k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 folds, got {k}")));
    }
    if n < k {
        return Err(Error::InvalidArgument(format!(
            "cannot split {n} rows into {k} folds"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng_for(seed, &[0xF01D]));
    let mut membership = vec![0; n];
    let (base, extra) = (n / k, n % k);
    let mut pos = 0;
    for fold in 0..k {
        let size = base + usize::from(fold < extra);
        for &row in &order[pos..pos + size] {
            membership[row] = fold;
        }
        pos += size;
    }
    Ok(FoldAssignment { k, membership })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoostingParams {
    pub rounds: usize,
    pub learning_rate: f64,
    pub max_depth: usize,
    /// Fraction of rows drawn (without replacement) for each round.
    pub subsample: f64,
    pub min_leaf: usize,
}

impl Default for BoostingParams {
    fn default() -> Self {
        BoostingParams {
            rounds: 200,
            learning_rate: 0.1,
            max_depth: 2,
            subsample: 0.8,
            min_leaf: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum LearnerConfig {
    Boosted(BoostingParams),
    Ridge { alpha: f64 },
}

impl Default for LearnerConfig {
    fn default() -> Self {
        LearnerConfig::Boosted(BoostingParams::default())
    }
}

impl LearnerConfig {
    pub fn validate(&self) -> Result<()> {
        match self {
            LearnerConfig::Boosted(p) => {
                if p.rounds == 0 || !(p.learning_rate > 0.0) || !(p.subsample > 0.0 && p.subsample <= 1.0) {
                    return Err(Error::Config(
                        "boosting needs rounds > 0, learning_rate > 0, subsample in (0,1]".into(),
                    ));
                }
                if p.max_depth == 0 {
                    return Err(Error::Config("boosting max_depth must be >= 1".into()));
                }
            }
            LearnerConfig::Ridge { alpha } => {
                if !(*alpha >= 0.0) {
                    return Err(Error::Config("ridge alpha must be >= 0".into()));
                }
            }
        }
        Ok(())
    }

    /// Fits on the given rows. `floor` switches on probability mode.
    pub fn fit(
        &self,
        x: &FeatureMatrix,
        y: &[f64],
        floor: Option<f64>,
        seed: u64,
    ) -> Result<FittedLearner> {
        if x.n_rows() != y.len() {
            return Err(Error::InvalidArgument(format!(
                "{} feature rows but {} targets",
                x.n_rows(),
                y.len()
            )));
        }
        if y.is_empty() {
            return Err(Error::InsufficientData("cannot fit a learner on zero rows".into()));
        }
        let model = match self {
            LearnerConfig::Boosted(p) => LearnerModel::Boosted(BoostedTrees::fit(x, y, p, seed)),
            LearnerConfig::Ridge { alpha } => LearnerModel::Ridge(RidgeModel::fit(x, y, *alpha)),
        };
        Ok(FittedLearner {
            model,
            probability_floor: floor,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LearnerModel {
    Boosted(BoostedTrees),
    Ridge(RidgeModel),
}

/// A trained nuisance model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedLearner {
    pub model: LearnerModel,
    pub probability_floor: Option<f64>,
}

impl FittedLearner {
    /// A model that predicts `value` everywhere.
    pub fn constant(value: f64, n_features: usize) -> Self {
        FittedLearner {
            model: LearnerModel::Ridge(RidgeModel {
                intercept: value,
                coefficients: vec![0.0; n_features],
            }),
            probability_floor: None,
        }
    }

    pub fn predict_row(&self, x: &[f64]) -> f64 {
        let raw = match &self.model {
            LearnerModel::Boosted(b) => b.predict_row(x),
            LearnerModel::Ridge(r) => r.predict_row(x),
        };
        match self.probability_floor {
            Some(floor) => raw.clamp(floor, 1.0 - floor),
            None => raw,
        }
    }

    pub fn predict(&self, x: &FeatureMatrix) -> Vec<f64> {
        x.rows().map(|r| self.predict_row(r)).collect()
    }
}

fn exact_constant(y: &[f64]) -> Option<f64> {
    let first = y[0];
    y.iter().all(|&v| v == first).then_some(first)
}

fn mean(y: &[f64]) -> f64 {
    y.iter().sum::<f64>() / y.len() as f64
}

// ── Ridge ────────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RidgeModel {
    pub intercept: f64,
    pub coefficients: Vec<f64>,
}

impl RidgeModel {
    /// Least squares with an unpenalised intercept. `alpha = 0` gives the
    /// minimum-norm ordinary least-squares solution.
    fn fit(x: &FeatureMatrix, y: &[f64], alpha: f64) -> Self {
        let d = x.n_cols();
        if let Some(c) = exact_constant(y) {
            return RidgeModel {
                intercept: c,
                coefficients: vec![0.0; d],
            };
        }
        let n = y.len();
        let x_mean: Vec<f64> = (0..d)
            .map(|j| (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64)
            .collect();
        let y_mean = mean(y);
        let xc = DMatrix::from_fn(n, d, |i, j| x.get(i, j) - x_mean[j]);
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - y_mean));
        let mut gram = xc.transpose() * &xc;
        for j in 0..d {
            gram[(j, j)] += alpha;
        }
        let rhs = xc.transpose() * yc;
        let beta = gram
            .svd(true, true)
            .solve(&rhs, 1e-10)
            .unwrap_or_else(|_| DVector::zeros(d));
        let intercept = y_mean - beta.iter().zip(&x_mean).map(|(b, m)| b * m).sum::<f64>();
        RidgeModel {
            intercept,
            coefficients: beta.iter().copied().collect(),
        }
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .coefficients
                .iter()
                .zip(x)
                .map(|(b, v)| b * v)
                .sum::<f64>()
    }
}

// ── Boosted regression trees ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum RegNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

/// Regression tree stored as a flat node array; node 0 is the root.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegTree {
    pub nodes: Vec<RegNode>,
}

impl RegTree {
    fn predict_row(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                RegNode::Leaf { value } => return *value,
                RegNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedTrees {
    pub base: f64,
    pub learning_rate: f64,
    pub trees: Vec<RegTree>,
}

impl BoostedTrees {
    fn fit(x: &FeatureMatrix, y: &[f64], params: &BoostingParams, seed: u64) -> Self {
        if let Some(c) = exact_constant(y) {
            return BoostedTrees {
                base: c,
                learning_rate: params.learning_rate,
                trees: Vec::new(),
            };
        }
        let n = y.len();
        let d = x.n_cols();
        // Row orders per feature, computed once and filtered per node.
        let sorted: Vec<Vec<u32>> = (0..d)
            .map(|j| {
                let mut idx: Vec<u32> = (0..n as u32).collect();
                idx.sort_by(|&a, &b| {
                    x.get(a as usize, j)
                        .total_cmp(&x.get(b as usize, j))
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect();
        let base = mean(y);
        let mut pred = vec![base; n];
        let mut resid = vec![0.0; n];
        let mut trees = Vec::with_capacity(params.rounds);
        let mut rng = rng_for(seed, &[0xB005]);
        let take = ((params.subsample * n as f64).round() as usize).clamp(1, n);
        // Node id per row for the current tree; u32::MAX = not sampled.
        let mut node_of = vec![u32::MAX; n];
        for _ in 0..params.rounds {
            for i in 0..n {
                resid[i] = y[i] - pred[i];
            }
            node_of.fill(u32::MAX);
            if take == n {
                node_of.fill(0);
            } else {
                for i in rand::seq::index::sample(&mut rng, n, take) {
                    node_of[i] = 0;
                }
            }
            let tree = grow_regression_tree(x, &resid, &sorted, &mut node_of, params);
            for (i, p) in pred.iter_mut().enumerate() {
                *p += params.learning_rate * tree.predict_row(x.row(i));
            }
            trees.push(tree);
        }
        BoostedTrees {
            base,
            learning_rate: params.learning_rate,
            trees,
        }
    }

    fn predict_row(&self, x: &[f64]) -> f64 {
        self.base
            + self.learning_rate * self.trees.iter().map(|t| t.predict_row(x)).sum::<f64>()
    }
}

struct Frontier {
    node: usize,
    depth: usize,
    sum: f64,
    count: usize,
}

/// Level-wise greedy growth minimising squared error. `node_of` marks the
/// sampled rows (all initially at node 0) and is updated as nodes split.
fn grow_regression_tree(
    x: &FeatureMatrix,
    resid: &[f64],
    sorted: &[Vec<u32>],
    node_of: &mut [u32],
    params: &BoostingParams,
) -> RegTree {
    let (sum, count) = node_of
        .iter()
        .zip(resid)
        .filter(|(&n, _)| n == 0)
        .fold((0.0, 0usize), |(s, c), (_, r)| (s + r, c + 1));
    let mut nodes = vec![RegNode::Leaf {
        value: sum / count.max(1) as f64,
    }];
    let mut frontier = vec![Frontier {
        node: 0,
        depth: 0,
        sum,
        count,
    }];
    let min_leaf = params.min_leaf.max(1);
    while let Some(f) = frontier.pop() {
        if f.depth >= params.max_depth || f.count < 2 * min_leaf {
            continue;
        }
        let parent_score = f.sum * f.sum / f.count as f64;
        let mut best: Option<(f64, usize, f64, f64, usize)> = None;
        for (j, order) in sorted.iter().enumerate() {
            let mut ls = 0.0;
            let mut lc = 0usize;
            let mut prev: Option<f64> = None;
            for &row in order {
                let row = row as usize;
                if node_of[row] != f.node as u32 {
                    continue;
                }
                let v = x.get(row, j);
                if let Some(pv) = prev {
                    if v > pv && lc >= min_leaf && f.count - lc >= min_leaf {
                        let rs = f.sum - ls;
                        let rc = f.count - lc;
                        let score = ls * ls / lc as f64 + rs * rs / rc as f64;
                        if score > parent_score + 1e-12
                            && best.is_none_or(|b| score > b.0)
                        {
                            best = Some((score, j, 0.5 * (pv + v), ls, lc));
                        }
                    }
                }
                ls += resid[row];
                lc += 1;
                prev = Some(v);
            }
        }
        let Some((_, feature, threshold, ls, lc)) = best else {
            continue;
        };
        let left = nodes.len();
        let right = left + 1;
        let (rs, rc) = (f.sum - ls, f.count - lc);
        nodes.push(RegNode::Leaf {
            value: ls / lc as f64,
        });
        nodes.push(RegNode::Leaf {
            value: rs / rc as f64,
        });
        nodes[f.node] = RegNode::Split {
            feature,
            threshold,
            left,
            right,
        };
        for (row, n) in node_of.iter_mut().enumerate() {
            if *n == f.node as u32 {
                *n = if x.get(row, feature) <= threshold {
                    left as u32
                } else {
                    right as u32
                };
            }
        }
        frontier.push(Frontier {
            node: left,
            depth: f.depth + 1,
            sum: ls,
            count: lc,
        });
        frontier.push(Frontier {
            node: right,
            depth: f.depth + 1,
            sum: rs,
            count: rc,
        });
    }
    RegTree { nodes }
}

// ── Cross-fitting ────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub struct CrossFit {
    /// Prediction for each row from the model that did not see it.
    pub out_of_fold: Vec<f64>,
    /// Model `j` was fit on every row outside fold `j`.
    pub learners: Vec<FittedLearner>,
}

/// Fits one learner per fold on the complement rows and predicts the fold's
/// own rows. Fold `j` uses a seed derived from `(seed, j)`.
pub fn crossfit_predict(
    x: &FeatureMatrix,
    targets: &[f64],
    folds: &FoldAssignment,
    learner: &LearnerConfig,
    floor: Option<f64>,
    seed: u64,
) -> Result<CrossFit> {
    if targets.len() != x.n_rows() || folds.membership.len() != x.n_rows() {
        return Err(Error::InvalidArgument(format!(
            "crossfit inputs disagree: {} rows, {} targets, {} fold entries",
            x.n_rows(),
            targets.len(),
            folds.membership.len()
        )));
    }
    let fits: Vec<(Vec<usize>, FittedLearner)> = (0..folds.k)
        .into_par_iter()
        .map(|fold| {
            let train = folds.complement_rows(fold);
            let xt = x.select_rows(&train);
            let yt: Vec<f64> = train.iter().map(|&i| targets[i]).collect();
            let model = learner.fit(&xt, &yt, floor, derive_seed(seed, &[fold as u64]))?;
            Ok((folds.fold_rows(fold), model))
        })
        .collect::<Result<_>>()?;
    let mut out_of_fold = vec![0.0; targets.len()];
    let mut learners = Vec::with_capacity(folds.k);
    for (rows, model) in fits {
        for i in rows {
            out_of_fold[i] = model.predict_row(x.row(i));
        }
        learners.push(model);
    }
    Ok(CrossFit {
        out_of_fold,
        learners,
    })
}

/// Mean prediction of several fitted learners.
pub fn ensemble_predict_row(learners: &[FittedLearner], x: &[f64]) -> f64 {
    learners.iter().map(|l| l.predict_row(x)).sum::<f64>() / learners.len() as f64
}

/// Draws a uniform `[0,1)` value; used by tests that need seeded noise.
#[doc(hidden)]
pub fn seeded_uniforms(seed: u64, n: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, &[0x7E57]);
    (0..n).map(|_| rng.random::<f64>()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn matrix(rows: &[Vec<f64>]) -> FeatureMatrix {
        FeatureMatrix::from_rows(rows).unwrap()
    }

    #[test]
    fn folds_exact_division() {
        let f = make_folds(10, 5, 1).unwrap();
        assert_eq!(f.fold_sizes(), vec![2; 5]);
    }

    #[test]
    fn folds_with_remainder() {
        let f = make_folds(7, 5, 1).unwrap();
        let mut sizes = f.fold_sizes();
        sizes.sort_unstable();
        assert_eq!(sizes, vec![1, 1, 1, 2, 2]);
    }

    #[test]
    fn folds_deterministic_and_validated() {
        assert_eq!(make_folds(50, 5, 9).unwrap(), make_folds(50, 5, 9).unwrap());
        assert_ne!(make_folds(50, 5, 9).unwrap(), make_folds(50, 5, 10).unwrap());
        assert!(matches!(make_folds(3, 5, 0), Err(Error::InvalidArgument(_))));
        assert!(make_folds(3, 1, 0).is_err());
    }

    proptest! {
        #[test]
        fn fold_sizes_balanced(n in 2usize..300, k in 2usize..10, seed in any::<u64>()) {
            prop_assume!(n >= k);
            let f = make_folds(n, k, seed).unwrap();
            let sizes = f.fold_sizes();
            prop_assert_eq!(sizes.iter().sum::<usize>(), n);
            prop_assert!(sizes.iter().max().unwrap() - sizes.iter().min().unwrap() <= 1);
            prop_assert!(sizes.iter().all(|&s| s > 0));
        }
    }

    #[test]
    fn constant_targets_give_constant_predictions() {
        let u = seeded_uniforms(1, 200);
        let x = matrix(&u.chunks(2).map(|c| c.to_vec()).collect::<Vec<_>>());
        let y = vec![0.7; 100];
        let folds = make_folds(100, 5, 3).unwrap();
        for cfg in [LearnerConfig::default(), LearnerConfig::Ridge { alpha: 1.0 }] {
            let cf = crossfit_predict(&x, &y, &folds, &cfg, None, 4).unwrap();
            assert!(cf.out_of_fold.iter().all(|&p| p == 0.7));
        }
    }

    #[test]
    fn linear_learner_recovers_exact_line() {
        // Closed form: y = 3 x1 is in the model class, so every fold's
        // least-squares fit reproduces it exactly.
        let u = seeded_uniforms(2, 120);
        let rows: Vec<Vec<f64>> = u.chunks(2).map(|c| vec![c[0] * 10.0 - 5.0, c[1]]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0]).collect();
        let x = matrix(&rows);
        let folds = make_folds(60, 5, 1).unwrap();
        let cf = crossfit_predict(&x, &y, &folds, &LearnerConfig::Ridge { alpha: 0.0 }, None, 0).unwrap();
        for (p, t) in cf.out_of_fold.iter().zip(&y) {
            assert_abs_diff_eq!(p, t, epsilon = 1e-8);
        }
    }

    #[test]
    fn probability_mode_clamps() {
        let x = matrix(&(0..40).map(|i| vec![f64::from(i % 2)]).collect::<Vec<_>>());
        let y = vec![1.0; 40];
        let folds = make_folds(40, 5, 1).unwrap();
        let cf = crossfit_predict(&x, &y, &folds, &LearnerConfig::default(), Some(0.01), 2).unwrap();
        assert!(cf.out_of_fold.iter().all(|&p| p == 0.99));
    }

    #[test]
    fn own_prediction_ignores_own_target() {
        let u = seeded_uniforms(5, 300);
        let rows: Vec<Vec<f64>> = u.chunks(3).map(|c| c.to_vec()).collect();
        let mut y: Vec<f64> = rows.iter().map(|r| (4.0 * r[0]).sin() + r[1]).collect();
        let x = matrix(&rows);
        let folds = make_folds(100, 5, 8).unwrap();
        let cfg = LearnerConfig::default();
        let before = crossfit_predict(&x, &y, &folds, &cfg, None, 1).unwrap();
        y[17] = 0.0;
        let after = crossfit_predict(&x, &y, &folds, &cfg, None, 1).unwrap();
        assert_eq!(before.out_of_fold[17].to_bits(), after.out_of_fold[17].to_bits());
        let fold17 = folds.membership[17];
        for i in folds.fold_rows(fold17) {
            assert_eq!(before.out_of_fold[i].to_bits(), after.out_of_fold[i].to_bits());
        }
    }

    #[test]
    fn boosting_learns_a_step() {
        let u = seeded_uniforms(6, 400);
        let rows: Vec<Vec<f64>> = u.chunks(2).map(|c| c.to_vec()).collect();
        let y: Vec<f64> = rows.iter().map(|r| if r[0] > 0.5 { 3.0 } else { -1.0 }).collect();
        let x = matrix(&rows);
        let m = LearnerConfig::default().fit(&x, &y, None, 0).unwrap();
        assert_abs_diff_eq!(m.predict_row(&[0.9, 0.1]), 3.0, epsilon = 0.05);
        assert_abs_diff_eq!(m.predict_row(&[0.1, 0.9]), -1.0, epsilon = 0.05);
        assert_eq!(m, LearnerConfig::default().fit(&x, &y, None, 0).unwrap());
    }
}
