//! Synthetic cloud: unhealthy-event generator with a latent node state, both
//! potential outcomes per event, a confounded logging policy, and
//! repeated-failure node dynamics.
//!
//! Timestamps are integer ticks; one day is [`TICKS_PER_DAY`] ticks.
//! Downtimes are abstract time units.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Geometric, LogNormal};
use serde::{Deserialize, Serialize};

use crate::domain::{DiagnosticSignals, ErrorCode, FeatureSchema, LabeledEvent, MitigationAction};
use crate::error::{Error, Result};
use crate::seeding::rng_for;

pub const TICKS_PER_DAY: i64 = 1440;

// Stream tags for per-event derived generators.
const OUTCOME_STREAM: u64 = 1;
const ASSIGN_STREAM: u64 = 2;

/// Hidden root cause of an unhealthy event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Cause {
    TransientFalseAlarm,
    SoftwareFault,
    HardwareFault,
}

impl Cause {
    pub const ALL: [Cause; 3] = [
        Cause::TransientFalseAlarm,
        Cause::SoftwareFault,
        Cause::HardwareFault,
    ];
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatentNodeState {
    pub cause: Cause,
    pub severity: f64,
}

/// A value per latent cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerCause<T> {
    pub transient_false_alarm: T,
    pub software_fault: T,
    pub hardware_fault: T,
}

impl<T> PerCause<T> {
    pub fn get(&self, cause: Cause) -> &T {
        match cause {
            Cause::TransientFalseAlarm => &self.transient_false_alarm,
            Cause::SoftwareFault => &self.software_fault,
            Cause::HardwareFault => &self.hardware_fault,
        }
    }

    pub fn uniform(value: T) -> Self
    where
        T: Clone,
    {
        PerCause {
            transient_false_alarm: value.clone(),
            software_fault: value.clone(),
            hardware_fault: value,
        }
    }
}

/// A value per mitigation action.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerAction<T> {
    pub reboot: T,
    pub redeploy: T,
}

impl<T> PerAction<T> {
    pub fn get(&self, action: MitigationAction) -> &T {
        match action {
            MitigationAction::Reboot => &self.reboot,
            MitigationAction::Redeploy => &self.redeploy,
        }
    }
}

/// Log-normal law: `ln X ~ Normal(location, scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LogNormalParams {
    pub location: f64,
    pub scale: f64,
}

impl LogNormalParams {
    pub fn with_median(median: f64, scale: f64) -> Self {
        LogNormalParams {
            location: median.ln(),
            scale,
        }
    }

    pub fn mean(&self) -> f64 {
        (self.location + 0.5 * self.scale * self.scale).exp()
    }

    fn sample(&self, shift: f64, rng: &mut ChaCha8Rng) -> f64 {
        LogNormal::new(self.location + shift, self.scale)
            .expect("validated log-normal parameters")
            .sample(rng)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CauseOutcomes {
    /// Downtime when the reboot fixes the node (short mode).
    pub reboot_success: LogNormalParams,
    /// Downtime when the reboot fails and further mitigation follows (long mode).
    pub reboot_failure: LogNormalParams,
    /// Redeploy downtime before the per-VM migration shift.
    pub redeploy: LogNormalParams,
}

/// How potential outcomes are produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum OutcomeModel {
    /// Reboot is a success/failure mixture; redeploy pays a per-VM migration cost.
    #[default]
    Mechanistic,
    /// Both outcomes share one baseline draw and differ by a known effect, so
    /// the true individual effect is exact. Used to validate the estimators.
    Additive {
        baseline: PerCause<LogNormalParams>,
        effect: EffectShape,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case", deny_unknown_fields)]
pub enum EffectShape {
    Constant { value: f64 },
    /// `above` when `vm_count > threshold`, otherwise `below`.
    VmThreshold { threshold: u32, above: f64, below: f64 },
}

impl EffectShape {
    pub fn tau(&self, signals: &DiagnosticSignals) -> f64 {
        match *self {
            EffectShape::Constant { value } => value,
            EffectShape::VmThreshold {
                threshold,
                above,
                below,
            } => {
                if signals.vm_count > threshold {
                    above
                } else {
                    below
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RepeatParams {
    /// Mean of the geometric prior repeat count drawn per event.
    pub base_mean: PerCause<f64>,
    /// Recurrence probability after rebooting a hardware fault.
    pub recurrence_probability: f64,
    /// Recurrence probability otherwise.
    pub background_rate: f64,
    pub recurrence_delay_ticks: i64,
    pub window_days: f64,
    /// Hard cap on recurrences spawned by one event.
    pub max_chain: u32,
}

impl Default for RepeatParams {
    fn default() -> Self {
        RepeatParams {
            base_mean: PerCause {
                transient_false_alarm: 0.3,
                software_fault: 0.6,
                hardware_fault: 3.0,
            },
            recurrence_probability: 0.9,
            background_rate: 0.02,
            recurrence_delay_ticks: 60,
            window_days: 10.0,
            max_chain: 64,
        }
    }
}

impl RepeatParams {
    pub fn window_ticks(&self) -> i64 {
        (self.window_days * TICKS_PER_DAY as f64).round() as i64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimConfig {
    pub seed: u64,
    pub cause_probabilities: PerCause<f64>,
    pub hardware_types: u16,
    pub session_types: u16,
    pub hardware_type_weights: PerCause<Vec<f64>>,
    /// Weight of `vm_count = i` at index `i`.
    pub vm_count_weights: Vec<f64>,
    pub important_workload_rate: f64,
    pub error_code_missing_rate: f64,
    /// Software faults report `other` instead of `sw_fault` at this rate.
    pub software_other_code_rate: f64,
    /// Transient false alarms show a failed network probe at this rate.
    pub transient_network_down_rate: f64,
    /// Real faults show a spurious failed network probe at this rate.
    pub false_network_flag_rate: f64,
    pub uncorrectable_base: f64,
    pub uncorrectable_slope: f64,
    pub software_reboot_success: f64,
    pub hardware_reboot_failure: f64,
    pub outcomes: PerCause<CauseOutcomes>,
    /// Added to the redeploy log-location per VM on the node.
    pub migration_cost_per_vm: f64,
    pub outcome_model: OutcomeModel,
    pub blackout: PerAction<LogNormalParams>,
    pub unallocatable: PerAction<LogNormalParams>,
    pub repeat: RepeatParams,
    pub legacy_flip_probability: f64,
    pub node_pool_size: u32,
    pub mean_interarrival_ticks: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        let uniform4 = vec![1.0; 4];
        let outcomes = CauseOutcomes {
            reboot_success: LogNormalParams::with_median(2.0, 0.4),
            reboot_failure: LogNormalParams::with_median(20.0, 0.4),
            redeploy: LogNormalParams::with_median(4.0, 0.3),
        };
        SimConfig {
            seed: 20_230_225,
            cause_probabilities: PerCause {
                transient_false_alarm: 0.45,
                software_fault: 0.35,
                hardware_fault: 0.20,
            },
            hardware_types: 4,
            session_types: 3,
            hardware_type_weights: PerCause {
                transient_false_alarm: uniform4.clone(),
                software_fault: uniform4,
                hardware_fault: vec![0.1, 0.2, 0.3, 0.4],
            },
            vm_count_weights: vec![0.0, 0.2, 0.2, 0.15, 0.15, 0.1, 0.08, 0.07, 0.05],
            important_workload_rate: 0.3,
            error_code_missing_rate: 0.3,
            software_other_code_rate: 0.15,
            transient_network_down_rate: 0.6,
            false_network_flag_rate: 0.1,
            uncorrectable_base: 0.1,
            uncorrectable_slope: 0.5,
            software_reboot_success: 0.9,
            hardware_reboot_failure: 0.9,
            outcomes: PerCause::uniform(outcomes),
            migration_cost_per_vm: 0.1,
            outcome_model: OutcomeModel::Mechanistic,
            blackout: PerAction {
                reboot: LogNormalParams::with_median(0.5, 0.5),
                redeploy: LogNormalParams::with_median(0.3, 0.5),
            },
            unallocatable: PerAction {
                reboot: LogNormalParams::with_median(1.0, 0.4),
                redeploy: LogNormalParams::with_median(3.0, 0.4),
            },
            repeat: RepeatParams::default(),
            legacy_flip_probability: 0.1,
            node_pool_size: 5000,
            mean_interarrival_ticks: 15.0,
        }
    }
}

fn additive_baseline() -> PerCause<LogNormalParams> {
    PerCause {
        transient_false_alarm: LogNormalParams::with_median(1.0, 0.25),
        software_fault: LogNormalParams::with_median(2.0, 0.25),
        hardware_fault: LogNormalParams::with_median(3.5, 0.25),
    }
}

impl SimConfig {
    /// Confounded data whose true individual effect is zero everywhere.
    pub fn zero_effect() -> Self {
        Self::constant_effect(0.0)
    }

    /// Confounded data with `Y(Redeploy) - Y(Reboot) = value` for every event.
    pub fn constant_effect(value: f64) -> Self {
        SimConfig {
            outcome_model: OutcomeModel::Additive {
                baseline: additive_baseline(),
                effect: EffectShape::Constant { value },
            },
            ..SimConfig::default()
        }
    }

    /// Effect `+magnitude` for nodes with more than four VMs and `-magnitude`
    /// otherwise; VM counts uniform on 1..=8.
    pub fn two_regime(magnitude: f64) -> Self {
        SimConfig {
            vm_count_weights: vec![0.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0],
            outcome_model: OutcomeModel::Additive {
                baseline: additive_baseline(),
                effect: EffectShape::VmThreshold {
                    threshold: 4,
                    above: magnitude,
                    below: -magnitude,
                },
            },
            ..SimConfig::default()
        }
    }

    /// Hardware-heavy fleet where rebooting a hardware fault always recurs.
    pub fn recurrence_heavy() -> Self {
        // Prior repeat counts carry no cause information, and hardware faults
        // often look like transient alarms, so only live recurrences reveal them.
        let repeat = RepeatParams {
            recurrence_probability: 1.0,
            base_mean: PerCause::uniform(1.0),
            ..RepeatParams::default()
        };
        SimConfig {
            cause_probabilities: PerCause {
                transient_false_alarm: 0.35,
                software_fault: 0.30,
                hardware_fault: 0.35,
            },
            error_code_missing_rate: 0.6,
            false_network_flag_rate: 0.25,
            repeat,
            ..SimConfig::default()
        }
    }

    pub fn schema(&self) -> FeatureSchema {
        FeatureSchema {
            hardware_types: self.hardware_types,
            session_types: self.session_types,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let prob = |name: &str, p: f64| -> Result<()> {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::Config(format!("{name} must lie in [0,1], got {p}")));
            }
            Ok(())
        };
        let cp = &self.cause_probabilities;
        for (name, p) in [
            ("cause_probabilities.transient_false_alarm", cp.transient_false_alarm),
            ("cause_probabilities.software_fault", cp.software_fault),
            ("cause_probabilities.hardware_fault", cp.hardware_fault),
        ] {
            prob(name, p)?;
        }
        let total = cp.transient_false_alarm + cp.software_fault + cp.hardware_fault;
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "cause_probabilities must sum to 1, got {total}"
            )));
        }
        for (name, p) in [
            ("important_workload_rate", self.important_workload_rate),
            ("error_code_missing_rate", self.error_code_missing_rate),
            ("software_other_code_rate", self.software_other_code_rate),
            ("transient_network_down_rate", self.transient_network_down_rate),
            ("false_network_flag_rate", self.false_network_flag_rate),
            ("software_reboot_success", self.software_reboot_success),
            ("hardware_reboot_failure", self.hardware_reboot_failure),
            ("legacy_flip_probability", self.legacy_flip_probability),
            ("repeat.recurrence_probability", self.repeat.recurrence_probability),
            ("repeat.background_rate", self.repeat.background_rate),
            ("uncorrectable_base", self.uncorrectable_base),
            (
                "uncorrectable_base + uncorrectable_slope",
                self.uncorrectable_base + self.uncorrectable_slope,
            ),
        ] {
            prob(name, p)?;
        }
        if self.hardware_types == 0 || self.session_types == 0 {
            return Err(Error::Config("categorical sets must be non-empty".into()));
        }
        let weights = |name: &str, w: &[f64], len: Option<usize>| -> Result<()> {
            if let Some(len) = len {
                if w.len() != len {
                    return Err(Error::Config(format!("{name} needs {len} weights, got {}", w.len())));
                }
            }
            if w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config(format!(
                    "{name} must be non-negative with a positive sum"
                )));
            }
            Ok(())
        };
        let hw = Some(usize::from(self.hardware_types));
        for cause in Cause::ALL {
            weights("hardware_type_weights", self.hardware_type_weights.get(cause), hw)?;
        }
        weights("vm_count_weights", &self.vm_count_weights, None)?;
        let ln = |name: &str, p: &LogNormalParams| -> Result<()> {
            if !(p.scale > 0.0) || !p.location.is_finite() || !p.scale.is_finite() {
                return Err(Error::Config(format!(
                    "{name}: log-normal scale must be > 0 and location finite"
                )));
            }
            Ok(())
        };
        for cause in Cause::ALL {
            let o = self.outcomes.get(cause);
            ln("outcomes.reboot_success", &o.reboot_success)?;
            ln("outcomes.reboot_failure", &o.reboot_failure)?;
            ln("outcomes.redeploy", &o.redeploy)?;
        }
        if let OutcomeModel::Additive { baseline, effect } = &self.outcome_model {
            for cause in Cause::ALL {
                ln("outcome_model.baseline", baseline.get(cause))?;
            }
            let finite = match *effect {
                EffectShape::Constant { value } => value.is_finite(),
                EffectShape::VmThreshold { above, below, .. } => above.is_finite() && below.is_finite(),
            };
            if !finite {
                return Err(Error::Config("effect values must be finite".into()));
            }
        }
        for a in MitigationAction::ALL {
            ln("blackout", self.blackout.get(a))?;
            ln("unallocatable", self.unallocatable.get(a))?;
        }
        for cause in Cause::ALL {
            if !(*self.repeat.base_mean.get(cause) >= 0.0) {
                return Err(Error::Config("repeat.base_mean must be >= 0".into()));
            }
        }
        if !self.migration_cost_per_vm.is_finite() {
            return Err(Error::Config("migration_cost_per_vm must be finite".into()));
        }
        if self.node_pool_size == 0 {
            return Err(Error::Config("node_pool_size must be positive".into()));
        }
        if !(self.mean_interarrival_ticks > 0.0) {
            return Err(Error::Config("mean_interarrival_ticks must be positive".into()));
        }
        if self.repeat.recurrence_delay_ticks < 0 || !(self.repeat.window_days > 0.0) {
            return Err(Error::Config("repeat delay must be >= 0 and window > 0".into()));
        }
        Ok(())
    }
}

/// Both potential outcomes of one event plus the auxiliary ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialOutcomes {
    pub y_reboot: f64,
    pub y_redeploy: f64,
    pub interruptions_reboot: u32,
    pub interruptions_redeploy: u32,
    pub blackout_reboot: f64,
    pub blackout_redeploy: f64,
    pub unallocatable_reboot: f64,
    pub unallocatable_redeploy: f64,
    pub reboot_succeeds: bool,
}

impl PotentialOutcomes {
    pub fn downtime(&self, action: MitigationAction) -> f64 {
        match action {
            MitigationAction::Reboot => self.y_reboot,
            MitigationAction::Redeploy => self.y_redeploy,
        }
    }

    pub fn interruptions(&self, action: MitigationAction) -> u32 {
        match action {
            MitigationAction::Reboot => self.interruptions_reboot,
            MitigationAction::Redeploy => self.interruptions_redeploy,
        }
    }

    pub fn blackout(&self, action: MitigationAction) -> f64 {
        match action {
            MitigationAction::Reboot => self.blackout_reboot,
            MitigationAction::Redeploy => self.blackout_redeploy,
        }
    }

    pub fn unallocatable(&self, action: MitigationAction) -> f64 {
        match action {
            MitigationAction::Reboot => self.unallocatable_reboot,
            MitigationAction::Redeploy => self.unallocatable_redeploy,
        }
    }

    /// True effect `Y(Redeploy) - Y(Reboot)`.
    pub fn tau(&self) -> f64 {
        self.y_redeploy - self.y_reboot
    }

    /// Action with the smaller downtime (ties go to Reboot).
    pub fn best_action(&self) -> MitigationAction {
        MitigationAction::preferred_by(self.tau())
    }
}

/// One unhealthy event as drawn by the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct EventDraw {
    pub index: u64,
    pub event_id: String,
    pub node_id: String,
    pub timestamp: i64,
    pub signals: DiagnosticSignals,
    pub latent: LatentNodeState,
}

/// Sequential event source seeded from the config.
pub struct EventStream {
    config: SimConfig,
    rng: ChaCha8Rng,
    next_index: u64,
    clock: i64,
    cause_dist: WeightedIndex<f64>,
    vm_dist: WeightedIndex<f64>,
    hw_dist: PerCause<WeightedIndex<f64>>,
}

impl EventStream {
    pub fn new(config: &SimConfig) -> Result<Self> {
        config.validate()?;
        let cp = &config.cause_probabilities;
        let wi = |w: &[f64]| WeightedIndex::new(w.to_vec()).map_err(|e| Error::Config(e.to_string()));
        Ok(EventStream {
            rng: rng_for(config.seed, &[0]),
            next_index: 0,
            clock: 0,
            cause_dist: wi(&[cp.transient_false_alarm, cp.software_fault, cp.hardware_fault])?,
            vm_dist: wi(&config.vm_count_weights)?,
            hw_dist: PerCause {
                transient_false_alarm: wi(&config.hardware_type_weights.transient_false_alarm)?,
                software_fault: wi(&config.hardware_type_weights.software_fault)?,
                hardware_fault: wi(&config.hardware_type_weights.hardware_fault)?,
            },
            config: config.clone(),
        })
    }

    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    /// Draws the next unhealthy event.
    pub fn sample_event(&mut self) -> EventDraw {
        let cfg = &self.config;
        let rng = &mut self.rng;
        let index = self.next_index;
        self.next_index += 1;

        let gap: f64 = rng.random::<f64>();
        self.clock += (-(1.0 - gap).ln() * cfg.mean_interarrival_ticks).round() as i64;
        let node = rng.random_range(0..cfg.node_pool_size);

        let cause = Cause::ALL[self.cause_dist.sample(rng)];
        let severity: f64 = rng.random();

        let error_code = if rng.random::<f64>() < cfg.error_code_missing_rate {
            None
        } else {
            Some(match cause {
                Cause::HardwareFault => ErrorCode::HwFailure,
                Cause::SoftwareFault => {
                    if rng.random::<f64>() < cfg.software_other_code_rate {
                        ErrorCode::Other
                    } else {
                        ErrorCode::SwFault
                    }
                }
                Cause::TransientFalseAlarm => ErrorCode::None,
            })
        };
        let network_down = match cause {
            Cause::TransientFalseAlarm => rng.random::<f64>() < cfg.transient_network_down_rate,
            _ => rng.random::<f64>() < cfg.false_network_flag_rate,
        };
        // A transient alarm with a failed probe reports a timeout rather than "none".
        let error_code = match (cause, error_code, network_down) {
            (Cause::TransientFalseAlarm, Some(ErrorCode::None), true) => Some(ErrorCode::NetTimeout),
            (_, code, _) => code,
        };
        let uncorrectable_tag = cause == Cause::HardwareFault
            && rng.random::<f64>() < cfg.uncorrectable_base + cfg.uncorrectable_slope * severity;
        let base_mean = *cfg.repeat.base_mean.get(cause);
        let repeat_count = if base_mean > 0.0 {
            Geometric::new(1.0 / (1.0 + base_mean))
                .expect("valid geometric parameter")
                .sample(rng)
                .min(u64::from(u32::MAX)) as u32
        } else {
            0
        };
        let hardware_type = self.hw_dist.get(cause).sample(rng) as u16;
        let session_type = rng.random_range(0..cfg.session_types);
        let has_important_workload = rng.random::<f64>() < cfg.important_workload_rate;
        let vm_count = self.vm_dist.sample(rng) as u32;

        EventDraw {
            index,
            event_id: format!("e{index:07}"),
            node_id: format!("node-{node:05}"),
            timestamp: self.clock,
            signals: DiagnosticSignals {
                vm_count,
                has_important_workload,
                network_ok: !network_down,
                error_code,
                repeat_count,
                uncorrectable_tag,
                hardware_type,
                session_type,
            },
            latent: LatentNodeState { cause, severity },
        }
    }
}

/// Generator for the outcome draws of event `index` (recurrence `depth`, 0 for
/// the event itself). Independent of the event stream so every policy sees
/// the same outcomes.
pub fn outcome_rng(config: &SimConfig, index: u64, depth: u64) -> ChaCha8Rng {
    rng_for(config.seed, &[OUTCOME_STREAM, index, depth])
}

/// Samples both potential outcomes of an event.
pub fn potential_outcomes(
    latent: &LatentNodeState,
    signals: &DiagnosticSignals,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> PotentialOutcomes {
    let vm = signals.vm_count;
    let cause = latent.cause;
    let reboot_succeeds = match cause {
        Cause::TransientFalseAlarm => true,
        Cause::SoftwareFault => rng.random::<f64>() < config.software_reboot_success,
        Cause::HardwareFault => rng.random::<f64>() >= config.hardware_reboot_failure,
    };
    let params = config.outcomes.get(cause);
    let (y_reboot, y_redeploy) = match &config.outcome_model {
        OutcomeModel::Mechanistic => {
            let reboot = if reboot_succeeds {
                params.reboot_success.sample(0.0, rng)
            } else {
                params.reboot_failure.sample(0.0, rng)
            };
            let redeploy = params
                .redeploy
                .sample(config.migration_cost_per_vm * f64::from(vm), rng);
            (reboot, redeploy)
        }
        OutcomeModel::Additive { baseline, effect } => {
            let base = baseline.get(cause).sample(0.0, rng);
            let tau = effect.tau(signals);
            (base + (-tau).max(0.0), base + tau.max(0.0))
        }
    };
    PotentialOutcomes {
        y_reboot,
        y_redeploy,
        interruptions_reboot: if reboot_succeeds { vm } else { 2 * vm },
        interruptions_redeploy: vm,
        blackout_reboot: config.blackout.reboot.sample(0.0, rng),
        blackout_redeploy: config.blackout.redeploy.sample(0.0, rng),
        unallocatable_reboot: config.unallocatable.reboot.sample(0.0, rng),
        unallocatable_redeploy: config.unallocatable.redeploy.sample(0.0, rng),
        reboot_succeeds,
    }
}

/// Logging policy of the simulated fleet: hardware signals force Redeploy,
/// everything else is rebooted, and the choice is flipped with the configured
/// exploration probability.
pub fn legacy_assignment(
    signals: &DiagnosticSignals,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> MitigationAction {
    let rule = if signals.uncorrectable_tag || signals.error_code == Some(ErrorCode::HwFailure) {
        MitigationAction::Redeploy
    } else {
        MitigationAction::Reboot
    };
    if rng.random::<f64>() < config.legacy_flip_probability {
        rule.other()
    } else {
        rule
    }
}

/// Ground-truth row kept apart from the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruth {
    pub event_id: String,
    pub y_reboot: f64,
    pub y_redeploy: f64,
    pub cause: Cause,
}

impl GroundTruth {
    pub fn tau(&self) -> f64 {
        self.y_redeploy - self.y_reboot
    }

    pub fn downtime(&self, action: MitigationAction) -> f64 {
        match action {
            MitigationAction::Reboot => self.y_reboot,
            MitigationAction::Redeploy => self.y_redeploy,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObservationalData {
    pub events: Vec<LabeledEvent>,
    pub truth: Vec<GroundTruth>,
}

/// Generates `n` logged events under the confounded logging policy, recording
/// only the factual outcome; both potential outcomes go to `truth`.
pub fn generate_observational_dataset(n: usize, config: &SimConfig) -> Result<ObservationalData> {
    if n == 0 {
        return Err(Error::InvalidArgument("dataset size must be at least 1".into()));
    }
    let mut stream = EventStream::new(config)?;
    let mut events = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for _ in 0..n {
        let draw = stream.sample_event();
        let po = potential_outcomes(
            &draw.latent,
            &draw.signals,
            config,
            &mut outcome_rng(config, draw.index, 0),
        );
        let action = legacy_assignment(
            &draw.signals,
            config,
            &mut rng_for(config.seed, &[ASSIGN_STREAM, draw.index]),
        );
        truth.push(GroundTruth {
            event_id: draw.event_id.clone(),
            y_reboot: po.y_reboot,
            y_redeploy: po.y_redeploy,
            cause: draw.latent.cause,
        });
        events.push(LabeledEvent {
            event_id: draw.event_id,
            node_id: draw.node_id,
            timestamp: draw.timestamp,
            signals: draw.signals,
            action,
            avd: po.downtime(action),
            interruptions: po.interruptions(action),
            blackout: po.blackout(action),
            unallocatable: po.unallocatable(action),
        });
    }
    Ok(ObservationalData { events, truth })
}

/// Unhealthy-event history of one node.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NodeHistory {
    /// Repeat count carried in from before the observed period.
    pub prior_repeats: u32,
    /// Timestamps of events observed on this node.
    pub events: Vec<i64>,
}

impl NodeHistory {
    pub fn with_prior(prior_repeats: u32) -> Self {
        NodeHistory {
            prior_repeats,
            events: Vec::new(),
        }
    }

    /// Repeat count at `now`: prior repeats plus events in the trailing window.
    pub fn repeat_count(&self, now: i64, window_ticks: i64) -> u32 {
        let recent = self
            .events
            .iter()
            .filter(|&&t| t <= now && now - t < window_ticks)
            .count() as u32;
        self.prior_repeats + recent
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NodeStep {
    pub recurrence: bool,
    /// Time of the recurrence, when there is one.
    pub next_timestamp: Option<i64>,
    /// Repeat count the next event on this node will carry.
    pub repeat_count: u32,
}

/// Advances a node after mitigating an event at `now`. The event itself is
/// appended to the history; a recurrence is scheduled after the configured
/// delay and also recorded.
pub fn step_node(
    history: &mut NodeHistory,
    now: i64,
    action: MitigationAction,
    latent: &LatentNodeState,
    config: &SimConfig,
    rng: &mut ChaCha8Rng,
) -> NodeStep {
    history.events.push(now);
    let p = if latent.cause == Cause::HardwareFault && action == MitigationAction::Reboot {
        config.repeat.recurrence_probability
    } else {
        config.repeat.background_rate
    };
    let recurrence = rng.random::<f64>() < p;
    let window = config.repeat.window_ticks();
    if recurrence {
        let t = now + config.repeat.recurrence_delay_ticks;
        NodeStep {
            recurrence,
            next_timestamp: Some(t),
            repeat_count: history.repeat_count(t, window),
        }
    } else {
        NodeStep {
            recurrence,
            next_timestamp: None,
            repeat_count: history.repeat_count(now, window),
        }
    }
}
