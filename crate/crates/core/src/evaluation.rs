//! KPIs, effect summaries and the offline policy harness.
//!
//! Percentiles use the nearest-rank convention: the `p`-th percentile of `n`
//! sorted values is the value at rank `ceil(p/100 · n)` (1-based).
//!
//! The harness replays one stream of simulated events under each policy. All
//! randomness after the event draw (outcomes, recurrences, coin flips) comes
//! from generators keyed by event index and recurrence depth, so every policy
//! faces identical draws. AVD covers primary events; recurrences add
//! interruptions and raise later repeat counts.

use std::cmp::Reverse;
use std::collections::{BinaryHeap, HashMap};
use std::fmt::Write as _;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decision::{assign_policy_group, decide, legacy_policy, DecisionConfig, DecisionSource};
use crate::dml::{encode_events, DmlModel};
use crate::domain::{LabeledEvent, MitigationAction};
use crate::error::{Error, Result};
use crate::seeding::rng_for;
use crate::sim::{
    outcome_rng, potential_outcomes, step_node, Cause, EventDraw, EventStream, GroundTruth, LatentNodeState,
    NodeHistory, SimConfig, TICKS_PER_DAY,
};

const RECURRENCE_STREAM: u64 = 3;
const RANDOM_POLICY_STREAM: u64 = 4;

/// Mean of per-VM downtimes.
pub fn avd(per_vm_downtimes: &[f64]) -> Result<f64> {
    if per_vm_downtimes.is_empty() {
        return Err(Error::InvalidArgument("avd of an empty list".into()));
    }
    Ok(per_vm_downtimes.iter().sum::<f64>() / per_vm_downtimes.len() as f64)
}

/// Annual interruption rate per 100 VM-years.
pub fn air(interruptions: u64, vm_lifetime_days: f64) -> Result<f64> {
    if !(vm_lifetime_days > 0.0 && vm_lifetime_days.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "vm lifetime must be positive, got {vm_lifetime_days}"
        )));
    }
    Ok(interruptions as f64 / vm_lifetime_days * 365.0 * 100.0)
}

/// Nearest-rank percentile of an ascending slice.
pub fn percentile(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(Error::InvalidArgument("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("percentile {p} outside [0,100]")));
    }
    let rank = ((p / 100.0) * sorted.len() as f64).ceil() as usize;
    Ok(sorted[rank.clamp(1, sorted.len()) - 1])
}

fn split_by_action(events: &[LabeledEvent]) -> Result<(Vec<f64>, Vec<f64>)> {
    let (redeploy, reboot): (Vec<&LabeledEvent>, Vec<&LabeledEvent>) =
        events.iter().partition(|e| e.action == MitigationAction::Redeploy);
    if redeploy.is_empty() || reboot.is_empty() {
        return Err(Error::DegenerateTreatment("both actions must be present".into()));
    }
    Ok((
        redeploy.iter().map(|e| e.avd).collect(),
        reboot.iter().map(|e| e.avd).collect(),
    ))
}

/// `mean(Y | Redeploy) - mean(Y | Reboot)` with no adjustment.
pub fn naive_effect(events: &[LabeledEvent]) -> Result<f64> {
    let (redeploy, reboot) = split_by_action(events)?;
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    Ok(mean(&redeploy) - mean(&reboot))
}

/// Mean model effect over the rows.
pub fn adjusted_effect(model: &DmlModel, events: &[LabeledEvent]) -> Result<f64> {
    if events.is_empty() {
        return Err(Error::InsufficientData("adjusted effect of an empty dataset".into()));
    }
    let x = encode_events(model, events)?;
    let taus: Vec<f64> = (0..x.n_rows())
        .into_par_iter()
        .map(|i| model.theta(x.row(i)))
        .collect::<Result<_>>()?;
    Ok(taus.iter().sum::<f64>() / taus.len() as f64)
}

// ── Policies ────────────────────────────────────────────────────────────

#[derive(Debug, Clone)]
pub enum PolicySpec<'a> {
    Random,
    Legacy,
    AlwaysReboot,
    AlwaysRedeploy,
    Engine { model: &'a DmlModel, decision: DecisionConfig },
    Oracle,
}

impl<'a> PolicySpec<'a> {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Random => "random",
            PolicySpec::Legacy => "legacy",
            PolicySpec::AlwaysReboot => "always_reboot",
            PolicySpec::AlwaysRedeploy => "always_redeploy",
            PolicySpec::Engine { .. } => "engine",
            PolicySpec::Oracle => "oracle",
        }
    }

    /// Parses a policy name; `engine` needs a model.
    pub fn parse(name: &str, model: Option<&'a DmlModel>, decision: &DecisionConfig) -> Result<Self> {
        Ok(match name {
            "random" => PolicySpec::Random,
            "legacy" => PolicySpec::Legacy,
            "always_reboot" => PolicySpec::AlwaysReboot,
            "always_redeploy" => PolicySpec::AlwaysRedeploy,
            "oracle" => PolicySpec::Oracle,
            "engine" => PolicySpec::Engine {
                model: model.ok_or_else(|| Error::InvalidArgument("the engine policy needs a model".into()))?,
                decision: decision.clone(),
            },
            other => return Err(Error::InvalidArgument(format!("unknown policy {other:?}"))),
        })
    }

    /// All six policies in report order.
    pub fn standard_set(model: &'a DmlModel, decision: &DecisionConfig) -> Vec<Self> {
        vec![
            PolicySpec::Oracle,
            PolicySpec::Engine {
                model,
                decision: decision.clone(),
            },
            PolicySpec::Legacy,
            PolicySpec::AlwaysReboot,
            PolicySpec::AlwaysRedeploy,
            PolicySpec::Random,
        ]
    }
}

/// One event as seen by the harness.
struct Pending {
    draw_index: usize,
    depth: u64,
    timestamp: i64,
    latent: LatentNodeState,
}

struct Choice {
    action: MitigationAction,
    unallocatable_flag: bool,
    source: Option<DecisionSource>,
}

fn choose(
    policy: &PolicySpec<'_>,
    signals: &crate::domain::DiagnosticSignals,
    best: MitigationAction,
    config: &SimConfig,
    index: u64,
    depth: u64,
) -> Result<Choice> {
    let plain = |action| Choice {
        action,
        unallocatable_flag: false,
        source: None,
    };
    Ok(match policy {
        PolicySpec::Random => {
            let mut rng = rng_for(config.seed, &[RANDOM_POLICY_STREAM, index, depth]);
            plain(if rng.random::<bool>() {
                MitigationAction::Redeploy
            } else {
                MitigationAction::Reboot
            })
        }
        PolicySpec::Legacy => plain(legacy_policy(signals)),
        PolicySpec::AlwaysReboot => plain(MitigationAction::Reboot),
        PolicySpec::AlwaysRedeploy => plain(MitigationAction::Redeploy),
        PolicySpec::Oracle => plain(best),
        PolicySpec::Engine { model, decision } => {
            let ite = crate::dml::estimate_ite(model, signals)?;
            let d = decide(&ite, signals, decision);
            Choice {
                action: d.action,
                unallocatable_flag: d.unallocatable_flag,
                source: Some(d.source),
            }
        }
    })
}

/// Raw per-policy tallies.
#[derive(Debug, Clone, Default)]
struct Tally {
    per_event: Vec<(f64, u32)>,
    interruptions: u64,
    recurrences: u64,
    blackout: f64,
    unallocatable_duration: f64,
    unallocatable_flags: u64,
    decisions: u64,
    redeploys: u64,
    sources: HashMap<DecisionSource, u64>,
}

/// Replays `draws`; `policy_of(draw)` picks which policy handles the node.
fn simulate_world(
    draws: &[EventDraw],
    config: &SimConfig,
    policies: &[PolicySpec<'_>],
    policy_of: &(dyn Fn(&EventDraw) -> usize + Sync),
) -> Result<(Vec<Tally>, i64)> {
    let window = config.repeat.window_ticks();
    let mut tallies = vec![Tally::default(); policies.len()];
    let mut histories: HashMap<&str, NodeHistory> = HashMap::new();
    let mut queue: BinaryHeap<Reverse<(i64, usize, u64)>> = BinaryHeap::new();
    let mut pending: HashMap<(usize, u64), Pending> = HashMap::new();
    for (i, d) in draws.iter().enumerate() {
        queue.push(Reverse((d.timestamp, i, 0)));
        pending.insert(
            (i, 0),
            Pending {
                draw_index: i,
                depth: 0,
                timestamp: d.timestamp,
                latent: d.latent,
            },
        );
    }
    let mut horizon = 0i64;
    while let Some(Reverse(key)) = queue.pop() {
        let ev = pending.remove(&(key.1, key.2)).expect("queued event is pending");
        let draw = &draws[ev.draw_index];
        let p = policy_of(draw);
        let history = histories.entry(draw.node_id.as_str()).or_default();
        let mut signals = draw.signals.clone();
        signals.repeat_count = draw.signals.repeat_count + history.repeat_count(ev.timestamp, window);
        let po = potential_outcomes(&ev.latent, &signals, config, &mut outcome_rng(config, draw.index, ev.depth));
        let choice = choose(&policies[p], &signals, po.best_action(), config, draw.index, ev.depth)?;
        let t = &mut tallies[p];
        t.decisions += 1;
        t.interruptions += u64::from(po.interruptions(choice.action));
        t.unallocatable_flags += u64::from(choice.unallocatable_flag);
        if choice.action == MitigationAction::Redeploy {
            t.redeploys += 1;
        }
        if let Some(s) = choice.source {
            *t.sources.entry(s).or_default() += 1;
        }
        if ev.depth == 0 {
            horizon = horizon.max(ev.timestamp);
            t.per_event.push((po.downtime(choice.action), signals.vm_count));
            t.blackout += po.blackout(choice.action);
            t.unallocatable_duration += po.unallocatable(choice.action);
        } else {
            t.recurrences += 1;
        }
        let mut rng = rng_for(config.seed, &[RECURRENCE_STREAM, draw.index, ev.depth]);
        let step = step_node(history, ev.timestamp, choice.action, &ev.latent, config, &mut rng);
        if let (true, Some(next)) = (step.recurrence, step.next_timestamp) {
            if ev.depth < u64::from(config.repeat.max_chain) {
                let cause = if ev.latent.cause == Cause::HardwareFault && choice.action == MitigationAction::Reboot {
                    Cause::HardwareFault
                } else {
                    Cause::TransientFalseAlarm
                };
                let depth = ev.depth + 1;
                queue.push(Reverse((next, ev.draw_index, depth)));
                pending.insert(
                    (ev.draw_index, depth),
                    Pending {
                        draw_index: ev.draw_index,
                        depth,
                        timestamp: next,
                        latent: LatentNodeState {
                            cause,
                            severity: ev.latent.severity,
                        },
                    },
                );
            }
        }
    }
    Ok((tallies, horizon))
}

// ── Reports ─────────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DowntimePercentiles {
    pub p50: f64,
    pub p75: f64,
    pub p90: f64,
    pub p99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyKpis {
    pub policy: String,
    /// Primary events handled.
    pub events: u64,
    pub recurrences: u64,
    pub vm_count: u64,
    pub avd: f64,
    pub avd_percentiles: DowntimePercentiles,
    pub interruptions: u64,
    pub air: f64,
    /// Mean blackout per primary event.
    pub mean_blackout: f64,
    /// Share of decisions that flagged the node unallocatable.
    pub unallocatable_rate: f64,
    /// Mean unallocatable time per primary event.
    pub mean_unallocatable: f64,
    pub redeploy_count: u64,
    pub convergence_events: u64,
    /// Decision sources for engine policies, sorted by name.
    pub decision_sources: Vec<(String, u64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KpiReport {
    pub seed: u64,
    pub n_events: usize,
    pub horizon_days: f64,
    pub policies: Vec<PolicyKpis>,
}

/// Expands `(downtime, vm_count)` pairs into one value per VM.
pub fn per_vm_downtimes(per_event: &[(f64, u32)]) -> Vec<f64> {
    per_event
        .iter()
        .flat_map(|&(y, v)| std::iter::repeat_n(y, v as usize))
        .collect()
}

fn summarize(name: &str, t: &Tally, horizon_days: f64) -> Result<PolicyKpis> {
    let mut per_vm = per_vm_downtimes(&t.per_event);
    let events = t.per_event.len() as u64;
    let vm_count: u64 = t.per_event.iter().map(|&(_, v)| u64::from(v)).sum();
    let mean_avd = avd(&per_vm)?;
    per_vm.sort_by(f64::total_cmp);
    let mut sources: Vec<(String, u64)> = t.sources.iter().map(|(s, c)| (s.name().to_string(), *c)).collect();
    sources.sort();
    Ok(PolicyKpis {
        policy: name.to_string(),
        events,
        recurrences: t.recurrences,
        vm_count,
        avd: mean_avd,
        avd_percentiles: DowntimePercentiles {
            p50: percentile(&per_vm, 50.0)?,
            p75: percentile(&per_vm, 75.0)?,
            p90: percentile(&per_vm, 90.0)?,
            p99: percentile(&per_vm, 99.0)?,
        },
        interruptions: t.interruptions,
        air: air(t.interruptions, vm_count as f64 * horizon_days)?,
        mean_blackout: t.blackout / events as f64,
        unallocatable_rate: t.unallocatable_flags as f64 / t.decisions as f64,
        mean_unallocatable: t.unallocatable_duration / events as f64,
        redeploy_count: t.redeploys,
        convergence_events: 0,
        decision_sources: sources,
    })
}

fn horizon_days(last_tick: i64) -> f64 {
    (last_tick as f64 / TICKS_PER_DAY as f64).max(1.0)
}

/// Report plus the per-event downtimes behind it.
#[derive(Debug, Clone)]
pub struct ComparisonRun {
    pub report: KpiReport,
    /// `(downtime, vm_count)` of each primary event, per policy.
    pub per_event: Vec<Vec<(f64, u32)>>,
}

fn draw_events(n_events: usize, config: &SimConfig) -> Result<Vec<EventDraw>> {
    if n_events == 0 {
        return Err(Error::InvalidArgument("need at least one event".into()));
    }
    let mut stream = EventStream::new(config)?;
    Ok((0..n_events).map(|_| stream.sample_event()).collect())
}

/// Runs every policy on the same `n_events` fresh events drawn with `seed`.
pub fn run_policy_comparison(
    policies: &[PolicySpec<'_>],
    n_events: usize,
    config: &SimConfig,
    seed: u64,
) -> Result<ComparisonRun> {
    if policies.is_empty() {
        return Err(Error::InvalidArgument("no policies to compare".into()));
    }
    let config = SimConfig {
        seed,
        ..config.clone()
    };
    let draws = draw_events(n_events, &config)?;
    let worlds: Vec<(Vec<Tally>, i64)> = policies
        .par_iter()
        .map(|p| simulate_world(&draws, &config, std::slice::from_ref(p), &|_| 0))
        .collect::<Result<_>>()?;
    let horizon = horizon_days(worlds.iter().map(|w| w.1).max().unwrap_or(0));
    let kpis = policies
        .iter()
        .zip(&worlds)
        .map(|(p, (t, _))| summarize(p.name(), &t[0], horizon))
        .collect::<Result<_>>()?;
    Ok(ComparisonRun {
        report: KpiReport {
            seed,
            n_events,
            horizon_days: horizon,
            policies: kpis,
        },
        per_event: worlds.into_iter().map(|(mut t, _)| t.remove(0).per_event).collect(),
    })
}

/// Sticky A/B run: each node is hashed into one group for the whole run and
/// all of its events use that group's policy.
pub fn run_ab_test(
    experiment: &str,
    groups: &[(String, f64)],
    policies: &[PolicySpec<'_>],
    n_events: usize,
    config: &SimConfig,
) -> Result<KpiReport> {
    if groups.len() != policies.len() {
        return Err(Error::InvalidArgument("each group needs exactly one policy".into()));
    }
    assign_policy_group("probe", experiment, groups)?;
    let draws = draw_events(n_events, config)?;
    let index_of = |draw: &EventDraw| {
        let name = assign_policy_group(&draw.node_id, experiment, groups).expect("weights validated");
        groups.iter().position(|(g, _)| g == name).expect("group exists")
    };
    let (tallies, last) = simulate_world(&draws, config, policies, &index_of)?;
    let horizon = horizon_days(last);
    let mut out = Vec::new();
    for ((name, _), t) in groups.iter().zip(&tallies) {
        if t.per_event.is_empty() {
            continue;
        }
        out.push(summarize(name, t, horizon)?);
    }
    Ok(KpiReport {
        seed: config.seed,
        n_events,
        horizon_days: horizon,
        policies: out,
    })
}

impl KpiReport {
    pub fn policy(&self, name: &str) -> Option<&PolicyKpis> {
        self.policies.iter().find(|p| p.policy == name)
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Data(format!("report serialization: {e}")))
    }

    /// Fixed-width text table.
    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<16} {:>7} {:>8} {:>8} {:>8} {:>8} {:>8} {:>9} {:>9} {:>8} {:>6}",
            "policy", "events", "avd", "p50", "p90", "p99", "air", "blackout", "unalloc", "redeploy", "conv"
        );
        for p in &self.policies {
            let _ = writeln!(
                s,
                "{:<16} {:>7} {:>8.3} {:>8.3} {:>8.3} {:>8.3} {:>8.1} {:>9.3} {:>9.3} {:>8} {:>6}",
                p.policy,
                p.events,
                p.avd,
                p.avd_percentiles.p50,
                p.avd_percentiles.p90,
                p.avd_percentiles.p99,
                p.air,
                p.mean_blackout,
                p.mean_unallocatable,
                p.redeploy_count,
                p.convergence_events
            );
        }
        s
    }
}

/// Long-format histogram CSV `series,bin_low,bin_high,count` over a shared
/// range.
pub fn histogram_csv(series: &[(String, Vec<f64>)], bins: usize) -> Result<String> {
    if bins == 0 {
        return Err(Error::InvalidArgument("histogram needs at least one bin".into()));
    }
    let all = series.iter().flat_map(|(_, v)| v.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let mut out = String::from("series,bin_low,bin_high,count\n");
    if !lo.is_finite() {
        return Ok(out);
    }
    let width = if hi > lo { (hi - lo) / bins as f64 } else { 1.0 };
    for (name, values) in series {
        let mut counts = vec![0u64; bins];
        for v in values {
            let b = (((v - lo) / width) as usize).min(bins - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let a = lo + width * b as f64;
            let _ = writeln!(out, "{name},{a},{},{c}", a + width);
        }
    }
    Ok(out)
}

// ── Counterfactual analysis ─────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SwitchGroup {
    pub fraction: f64,
    pub count: usize,
    /// Mean `|τ̂|` over the group.
    pub predicted_saving: Option<f64>,
    /// Mean `Y(logged) - Y(preferred)` from ground truth.
    pub true_saving: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualReport {
    pub n: usize,
    pub agree_fraction: f64,
    pub switch_to_reboot: SwitchGroup,
    pub switch_to_redeploy: SwitchGroup,
    /// Per-row `τ̂`, in input order.
    #[serde(skip)]
    pub tau_hat: Vec<f64>,
}

pub fn counterfactual_analysis(
    model: &DmlModel,
    events: &[LabeledEvent],
    truth: Option<&[GroundTruth]>,
) -> Result<CounterfactualReport> {
    if events.is_empty() {
        return Err(Error::InsufficientData("counterfactual analysis of an empty dataset".into()));
    }
    let truth_map: Option<HashMap<&str, &GroundTruth>> =
        truth.map(|t| t.iter().map(|g| (g.event_id.as_str(), g)).collect());
    let x = encode_events(model, events)?;
    let tau_hat: Vec<f64> = (0..x.n_rows())
        .into_par_iter()
        .map(|i| model.theta(x.row(i)))
        .collect::<Result<_>>()?;
    let mut groups = [(0usize, 0.0f64, 0.0f64); 2];
    let mut agree = 0usize;
    for (e, &tau) in events.iter().zip(&tau_hat) {
        let preferred = MitigationAction::preferred_by(tau);
        if preferred == e.action {
            agree += 1;
            continue;
        }
        let g = &mut groups[usize::from(preferred.code())];
        g.0 += 1;
        g.1 += tau.abs();
        if let Some(map) = &truth_map {
            let t = map
                .get(e.event_id.as_str())
                .ok_or_else(|| Error::Data(format!("no ground truth for event {}", e.event_id)))?;
            g.2 += t.downtime(e.action) - t.downtime(preferred);
        }
    }
    let n = events.len();
    let group = |(count, pred, real): (usize, f64, f64)| SwitchGroup {
        fraction: count as f64 / n as f64,
        count,
        predicted_saving: (count > 0).then(|| pred / count as f64),
        true_saving: (count > 0 && truth_map.is_some()).then(|| real / count as f64),
    };
    Ok(CounterfactualReport {
        n,
        agree_fraction: agree as f64 / n as f64,
        switch_to_reboot: group(groups[0]),
        switch_to_redeploy: group(groups[1]),
        tau_hat,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn ev(action: MitigationAction, avd: f64) -> LabeledEvent {
        LabeledEvent {
            event_id: String::new(),
            node_id: String::new(),
            timestamp: 0,
            signals: Default::default(),
            action,
            avd,
            interruptions: 1,
            blackout: 0.0,
            unallocatable: 0.0,
        }
    }

    #[test]
    fn avd_and_air_formulas() {
        assert_eq!(avd(&[2.0, 4.0, 6.0]).unwrap(), 4.0);
        assert_eq!(avd(&[3.5]).unwrap(), 3.5);
        assert_eq!(avd(&[0.0; 3]).unwrap(), 0.0);
        assert!(avd(&[]).is_err());
        assert_eq!(air(2, 100.0).unwrap(), 730.0);
        assert_eq!(air(0, 10.0).unwrap(), 0.0);
        assert_abs_diff_eq!(air(1, 365.0).unwrap(), 100.0, epsilon = 1e-12);
        assert!(air(1, 0.0).is_err());
    }

    #[test]
    fn nearest_rank_percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0, 9.0, 10.0];
        assert_eq!(percentile(&v, 50.0).unwrap(), 5.0);
        assert_eq!(percentile(&v, 75.0).unwrap(), 8.0);
        assert_eq!(percentile(&v, 99.0).unwrap(), 10.0);
        assert_eq!(percentile(&v, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn naive_effect_two_rows() {
        let rows = [ev(MitigationAction::Redeploy, 5.0), ev(MitigationAction::Reboot, 3.0)];
        assert_eq!(naive_effect(&rows).unwrap(), 2.0);
        assert!(matches!(naive_effect(&rows[..1]), Err(Error::DegenerateTreatment(_))));
    }

    #[test]
    fn histogram_partitions_values() {
        let csv = histogram_csv(&[("a".into(), vec![0.0, 1.0, 2.0, 3.0])], 2).unwrap();
        let counts: Vec<u64> = csv.lines().skip(1).map(|l| l.rsplit(',').next().unwrap().parse().unwrap()).collect();
        assert_eq!(counts, vec![2, 2]);
    }

    proptest! {
        #[test]
        fn percentile_matches_sorted_reference(mut v in prop::collection::vec(0.0f64..100.0, 1..200), p in 0.0f64..=100.0) {
            v.sort_by(f64::total_cmp);
            let n = v.len();
            // Smallest value with at least p% of the list at or below it.
            let reference = v.iter().enumerate()
                .find(|(i, _)| (i + 1) as f64 >= p / 100.0 * n as f64)
                .map(|(_, x)| *x)
                .unwrap();
            prop_assert_eq!(percentile(&v, p).unwrap(), reference);
        }

        #[test]
        fn percentiles_are_monotone(mut v in prop::collection::vec(-50.0f64..50.0, 1..100)) {
            v.sort_by(f64::total_cmp);
            let ps: Vec<f64> = [50.0, 75.0, 90.0, 99.0].iter().map(|&p| percentile(&v, p).unwrap()).collect();
            prop_assert!(ps.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn comparison_is_reproducible_and_consistent() {
        let cfg = SimConfig::default();
        let policies = [PolicySpec::Oracle, PolicySpec::Legacy, PolicySpec::Random];
        let a = run_policy_comparison(&policies, 800, &cfg, 5).unwrap();
        let b = run_policy_comparison(&policies, 800, &cfg, 5).unwrap();
        assert_eq!(a.report.to_json().unwrap(), b.report.to_json().unwrap());
        for (k, per_event) in a.report.policies.iter().zip(&a.per_event) {
            assert_eq!(k.avd, avd(&per_vm_downtimes(per_event)).unwrap());
            assert_eq!(k.convergence_events, 0);
        }
        let oracle = a.report.policy("oracle").unwrap().avd;
        assert!(a.report.policies.iter().all(|p| oracle <= p.avd));
    }
}
