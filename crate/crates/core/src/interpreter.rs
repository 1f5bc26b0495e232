//! Shallow policy trees distilled from effect estimates, and effect curves
//! over one feature.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::dml::{encode_events, DmlModel};
use crate::domain::{FeatureMatrix, LabeledEvent, MitigationAction};
use crate::error::{Error, Result};

pub const MIN_POLICY_ROWS: usize = 20;
pub const MIN_POLICY_LEAF: usize = 10;
pub const DEFAULT_POLICY_DEPTH: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyNode {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        action: MitigationAction,
        mean_tau: f64,
        n: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTree {
    pub nodes: Vec<PolicyNode>,
}

impl PolicyTree {
    pub fn leaf_for(&self, x: &[f64]) -> &PolicyNode {
        let mut i = 0;
        loop {
            match &self.nodes[i] {
                leaf @ PolicyNode::Leaf { .. } => return leaf,
                PolicyNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn recommend(&self, x: &[f64]) -> MitigationAction {
        match self.leaf_for(x) {
            PolicyNode::Leaf { action, .. } => *action,
            PolicyNode::Split { .. } => unreachable!("leaf_for returns leaves"),
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[PolicyNode], i: usize) -> usize {
            match &nodes[i] {
                PolicyNode::Leaf { .. } => 0,
                PolicyNode::Split { left, right, .. } => 1 + walk(nodes, *left).max(walk(nodes, *right)),
            }
        }
        walk(&self.nodes, 0)
    }
}

fn leaf(tau: &[f64], rows: &[usize]) -> PolicyNode {
    let mean_tau = rows.iter().map(|&i| tau[i]).sum::<f64>() / rows.len() as f64;
    PolicyNode::Leaf {
        action: MitigationAction::preferred_by(mean_tau),
        mean_tau,
        n: rows.len(),
    }
}

/// Best `(feature, threshold)` by `n_L·n_R/(n_L+n_R)·(mean_L − mean_R)²`.
fn best_split(x: &FeatureMatrix, tau: &[f64], rows: &[usize]) -> Option<(usize, f64)> {
    let n = rows.len();
    let total: f64 = rows.iter().map(|&i| tau[i]).sum();
    let mean = total / n as f64;
    if rows.iter().all(|&i| tau[i] == mean) {
        return None;
    }
    // Round-off on a constant input leaves gains of order ulp² · Σ τ².
    let min_gain = 1e-10 * rows.iter().map(|&i| tau[i] * tau[i]).sum::<f64>();
    let mut best: Option<(f64, usize, f64)> = None;
    let mut sorted = rows.to_vec();
    for feature in 0..x.n_cols() {
        sorted.sort_by(|&a, &b| x.get(a, feature).total_cmp(&x.get(b, feature)).then(a.cmp(&b)));
        let mut left_sum = 0.0;
        for k in 0..n - 1 {
            left_sum += tau[sorted[k]];
            let (v, next) = (x.get(sorted[k], feature), x.get(sorted[k + 1], feature));
            let nl = k + 1;
            let nr = n - nl;
            if next <= v || nl < MIN_POLICY_LEAF || nr < MIN_POLICY_LEAF {
                continue;
            }
            let diff = left_sum / nl as f64 - (total - left_sum) / nr as f64;
            let gain = (nl * nr) as f64 / n as f64 * diff * diff;
            if gain > min_gain && best.is_none_or(|b| gain > b.0) {
                best = Some((gain, feature, 0.5 * (v + next)));
            }
        }
    }
    best.map(|(_, f, t)| (f, t))
}

/// Greedy depth-limited tree over `tau_hat`; leaves recommend the sign rule
/// applied to their mean.
pub fn fit_policy_tree(features: &FeatureMatrix, tau_hat: &[f64], max_depth: usize) -> Result<PolicyTree> {
    if features.n_rows() != tau_hat.len() {
        return Err(Error::InvalidArgument("features and tau_hat lengths differ".into()));
    }
    if tau_hat.len() < MIN_POLICY_ROWS {
        return Err(Error::InsufficientData(format!(
            "policy tree needs at least {MIN_POLICY_ROWS} rows, got {}",
            tau_hat.len()
        )));
    }
    let mut nodes = vec![leaf(tau_hat, &[0])];
    let mut stack = vec![(0usize, 0usize, (0..tau_hat.len()).collect::<Vec<_>>())];
    while let Some((node, depth, rows)) = stack.pop() {
        let split = if depth < max_depth && rows.len() >= 2 * MIN_POLICY_LEAF {
            best_split(features, tau_hat, &rows)
        } else {
            None
        };
        match split {
            None => nodes[node] = leaf(tau_hat, &rows),
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) =
                    rows.iter().partition(|&&i| features.get(i, feature) <= threshold);
                let left = nodes.len();
                nodes.push(leaf(tau_hat, &l));
                nodes.push(leaf(tau_hat, &r));
                nodes[node] = PolicyNode::Split {
                    feature,
                    threshold,
                    left,
                    right: left + 1,
                };
                stack.push((left + 1, depth + 1, r));
                stack.push((left, depth + 1, l));
            }
        }
    }
    Ok(PolicyTree { nodes })
}

/// `x` rounded to four significant digits, printed without trailing zeros.
fn four_significant(x: f64) -> String {
    let rounded: f64 = format!("{x:.3e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

/// Indented if/else rendering.
pub fn render_policy(tree: &PolicyTree, feature_names: &[String]) -> String {
    fn walk(tree: &PolicyTree, names: &[String], i: usize, indent: usize, out: &mut String) {
        let pad = "    ".repeat(indent);
        match &tree.nodes[i] {
            PolicyNode::Leaf { action, mean_tau, n } => {
                let _ = writeln!(out, "{pad}→ {action} (mean τ̂={mean_tau:.3}, n={n})");
            }
            PolicyNode::Split {
                feature,
                threshold,
                left,
                right,
            } => {
                let name = names.get(*feature).cloned().unwrap_or_else(|| format!("x{feature}"));
                let _ = writeln!(out, "{pad}if {name} <= {}:", four_significant(*threshold));
                walk(tree, names, *left, indent + 1, out);
                let _ = writeln!(out, "{pad}else:");
                walk(tree, names, *right, indent + 1, out);
            }
        }
    }
    let mut out = String::new();
    walk(tree, feature_names, 0, 0, &mut out);
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CateBin {
    pub bin_center: f64,
    pub mean_tau: f64,
    pub count: usize,
}

/// Mean effect per equal-width bin of one encoded column. Empty bins are
/// left out.
pub fn cate_by_feature(model: &DmlModel, events: &[LabeledEvent], feature: &str, bins: usize) -> Result<Vec<CateBin>> {
    if bins == 0 {
        return Err(Error::InvalidArgument("bins must be at least 1".into()));
    }
    let column = model
        .schema
        .column_index(feature)
        .ok_or_else(|| Error::InvalidArgument(format!("unknown feature {feature:?}")))?;
    if events.is_empty() {
        return Ok(Vec::new());
    }
    let x = encode_events(model, events)?;
    let values: Vec<f64> = (0..x.n_rows()).map(|i| x.get(i, column)).collect();
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 0.0 };
    let mut sums = vec![(0.0, 0usize); bins];
    for (i, v) in values.iter().enumerate() {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        sums[b].0 += model.theta(x.row(i))?;
        sums[b].1 += 1;
    }
    Ok(sums
        .iter()
        .enumerate()
        .filter(|(_, s)| s.1 > 0)
        .map(|(b, &(sum, count))| CateBin {
            bin_center: if width > 0.0 { lo + width * (b as f64 + 0.5) } else { lo },
            mean_tau: sum / count as f64,
            count,
        })
        .collect())
}

pub fn cate_csv(curve: &[CateBin]) -> String {
    let mut out = String::from("bin_center,mean_tau,count\n");
    for b in curve {
        let _ = writeln!(out, "{},{},{}", b.bin_center, b.mean_tau, b.count);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::{DiagnosticSignals, ErrorCode, FeatureSchema};
    use crate::learners::seeded_uniforms;
    use proptest::prelude::*;

    fn hw_clusters(n: usize) -> (FeatureMatrix, Vec<f64>, Vec<String>) {
        let schema = FeatureSchema::default();
        let u = seeded_uniforms(3, 2 * n);
        let mut x = FeatureMatrix::new(schema.width());
        let mut tau = Vec::new();
        for c in u.chunks(2) {
            let hw = c[0] < 0.4;
            let s = DiagnosticSignals {
                vm_count: 1 + (c[1] * 8.0) as u32,
                error_code: Some(if hw { ErrorCode::HwFailure } else { ErrorCode::SwFault }),
                ..DiagnosticSignals::default()
            };
            x.push_row(&schema.encode(&s).unwrap().values).unwrap();
            tau.push(if hw { -5.0 } else { 5.0 });
        }
        (x, tau, schema.column_names())
    }

    #[test]
    fn root_splits_on_hardware_code() {
        let (x, tau, names) = hw_clusters(200);
        let tree = fit_policy_tree(&x, &tau, 3).unwrap();
        let PolicyNode::Split { feature, left, right, .. } = &tree.nodes[0] else {
            panic!("expected a split")
        };
        assert_eq!(names[*feature], "error_code=hw_failure");
        assert!(matches!(tree.nodes[*left], PolicyNode::Leaf { action: MitigationAction::Reboot, .. }));
        assert!(matches!(tree.nodes[*right], PolicyNode::Leaf { action: MitigationAction::Redeploy, .. }));
        let text = render_policy(&tree, &names);
        assert_eq!(text, render_policy(&tree, &names));
        assert_eq!(text.matches("if ").count(), 1);
        assert_eq!(text.matches("else:").count(), 1);
        assert!(text.starts_with("if error_code=hw_failure <= 0.5:\n"));
    }

    #[test]
    fn constant_effect_gives_single_leaf() {
        let (x, _, names) = hw_clusters(50);
        let tree = fit_policy_tree(&x, &[0.3; 50], 3).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        let text = render_policy(&tree, &names);
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("→ Reboot"));
    }

    #[test]
    fn depth_one_has_at_most_three_nodes() {
        let u = seeded_uniforms(8, 300);
        let x = FeatureMatrix::from_rows(&u.chunks(3).map(|c| c.to_vec()).collect::<Vec<_>>()).unwrap();
        let tau: Vec<f64> = u.chunks(3).map(|c| c[0] * 4.0 - c[1] * 3.0 + c[2]).collect();
        let tree = fit_policy_tree(&x, &tau, 1).unwrap();
        assert!(tree.nodes.len() <= 3);
        assert!(tree.nodes.iter().all(|n| !matches!(n, PolicyNode::Leaf { n, .. } if *n < MIN_POLICY_LEAF)));
    }

    #[test]
    fn too_few_rows() {
        let x = FeatureMatrix::from_rows(&vec![vec![0.0]; 19]).unwrap();
        assert!(matches!(fit_policy_tree(&x, &[1.0; 19], 3), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn significant_digits() {
        assert_eq!(four_significant(0.5), "0.5");
        assert_eq!(four_significant(4.5), "4.5");
        assert_eq!(four_significant(1234.567), "1235");
        assert_eq!(four_significant(0.000123456), "0.0001235");
    }

    proptest! {
        #[test]
        fn leaf_actions_invariant_to_positive_scaling(k in 0.01f64..100.0, seed in 0u64..50) {
            let u = seeded_uniforms(seed, 120);
            let x = FeatureMatrix::from_rows(&u.chunks(2).map(|c| vec![(c[0] * 5.0).floor(), (c[1] * 3.0).floor()]).collect::<Vec<_>>()).unwrap();
            let tau: Vec<f64> = u.chunks(2).map(|c| c[0] * 5.0 - 2.4 + c[1] * c[1]).collect();
            let scaled: Vec<f64> = tau.iter().map(|t| t * k).collect();
            let a = fit_policy_tree(&x, &tau, 3).unwrap();
            let b = fit_policy_tree(&x, &scaled, 3).unwrap();
            for i in 0..x.n_rows() {
                prop_assert_eq!(a.recommend(x.row(i)), b.recommend(x.row(i)));
            }
        }
    }
}
