//! Final action selection, the legacy rule and sticky experiment groups.

use serde::{Deserialize, Serialize};

use crate::domain::{DiagnosticSignals, ErrorCode, IteEstimate, MitigationAction};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecisionConfig {
    /// Fallback fires only when `|τ| <= xi` ...
    pub xi: f64,
    /// ... and the interval width is at least `epsilon`.
    pub epsilon: f64,
    /// Model Redeploys with `|τ| < varpi` become Reboots.
    pub varpi: f64,
    /// Repeat counts above this force Redeploy.
    pub repeat_threshold: u32,
    pub repeat_window_days: u32,
    pub repeat_override: bool,
    pub capacity_override: bool,
    pub fallback: bool,
}

impl Default for DecisionConfig {
    fn default() -> Self {
        DecisionConfig {
            xi: 1.0,
            epsilon: 15.0,
            varpi: 1.0,
            repeat_threshold: 10,
            repeat_window_days: 10,
            repeat_override: true,
            capacity_override: true,
            fallback: true,
        }
    }
}

impl DecisionConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !ok(self.xi) || !ok(self.varpi) || !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::Config("xi, varpi must be >= 0 and epsilon > 0".into()));
        }
        if self.repeat_window_days == 0 {
            return Err(Error::Config("repeat_window_days must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DecisionSource {
    Model,
    Fallback,
    CapacityOverride,
    RepeatOverride,
}

impl DecisionSource {
    pub fn name(self) -> &'static str {
        match self {
            DecisionSource::Model => "Model",
            DecisionSource::Fallback => "Fallback",
            DecisionSource::CapacityOverride => "CapacityOverride",
            DecisionSource::RepeatOverride => "RepeatOverride",
        }
    }
}

impl std::fmt::Display for DecisionSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyDecision {
    pub action: MitigationAction,
    pub source: DecisionSource,
    pub ite: Option<IteEstimate>,
    pub unallocatable_flag: bool,
    pub reason: String,
}

/// Deterministic legacy heuristic.
pub fn legacy_policy(signals: &DiagnosticSignals) -> MitigationAction {
    if signals.uncorrectable_tag || signals.error_code == Some(ErrorCode::HwFailure) {
        MitigationAction::Redeploy
    } else {
        MitigationAction::Reboot
    }
}

/// Applies, in order: repeat override, low-confidence fallback, sign rule,
/// capacity override.
pub fn decide(ite: &IteEstimate, signals: &DiagnosticSignals, cfg: &DecisionConfig) -> PolicyDecision {
    let make = |action, source, unallocatable_flag, reason: String| PolicyDecision {
        action,
        source,
        ite: Some(*ite),
        unallocatable_flag,
        reason,
    };
    if cfg.repeat_override && signals.repeat_count > cfg.repeat_threshold {
        return make(
            MitigationAction::Redeploy,
            DecisionSource::RepeatOverride,
            true,
            format!("repeat_count {} > {}", signals.repeat_count, cfg.repeat_threshold),
        );
    }
    let width = ite.width();
    if cfg.fallback && ite.tau.abs() <= cfg.xi && width >= cfg.epsilon {
        return make(
            legacy_policy(signals),
            DecisionSource::Fallback,
            false,
            format!("|tau| {:.4} <= {} and width {:.4} >= {}", ite.tau.abs(), cfg.xi, width, cfg.epsilon),
        );
    }
    let action = MitigationAction::preferred_by(ite.tau);
    if cfg.capacity_override && action == MitigationAction::Redeploy && ite.tau.abs() < cfg.varpi {
        return make(
            MitigationAction::Reboot,
            DecisionSource::CapacityOverride,
            false,
            format!("redeploy gain {:.4} < {}", ite.tau.abs(), cfg.varpi),
        );
    }
    make(action, DecisionSource::Model, false, format!("tau {:.4}", ite.tau))
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;
pub const ASSIGNMENT_BUCKETS: u64 = 10_000;

pub fn fnv1a64(bytes: &[u8]) -> u64 {
    bytes
        .iter()
        .fold(FNV_OFFSET, |h, &b| (h ^ u64::from(b)).wrapping_mul(FNV_PRIME))
}

/// Bucket in `[0, 10000)` for a node within an experiment.
pub fn assignment_bucket(node_id: &str, experiment: &str) -> u64 {
    let key = format!("{node_id}|{experiment}");
    fnv1a64(key.as_bytes()) % ASSIGNMENT_BUCKETS
}

/// Sticky weighted group choice. Weights are normalised; the node goes to the
/// first group whose cumulative share exceeds its bucket position.
pub fn assign_policy_group<'a>(node_id: &str, experiment: &str, weights: &'a [(String, f64)]) -> Result<&'a str> {
    if weights.is_empty() {
        return Err(Error::InvalidArgument("no policy groups given".into()));
    }
    if weights.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
        return Err(Error::InvalidArgument("group weights must be positive".into()));
    }
    let total: f64 = weights.iter().map(|(_, w)| w).sum();
    let u = assignment_bucket(node_id, experiment) as f64 / ASSIGNMENT_BUCKETS as f64;
    let mut cumulative = 0.0;
    for (name, w) in weights {
        cumulative += w / total;
        if u < cumulative {
            return Ok(name);
        }
    }
    Ok(&weights[weights.len() - 1].0)
}
