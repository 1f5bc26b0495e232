//! End-to-end operations behind each command-line subcommand. Every function
//! writes its file artifacts and returns the text meant for stdout.

use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::decision::decide;
use crate::dml::{encode_events, estimate_ite, psi_loss, train_dml, DmlModel, FinalStage, FinalStageKind};
use crate::domain::{DiagnosticSignals, MitigationAction};
use crate::error::{Error, Result};
use crate::evaluation::{
    adjusted_effect, counterfactual_analysis, histogram_csv, naive_effect, run_ab_test, run_policy_comparison,
    PolicySpec,
};
use crate::interpreter::{cate_by_feature, cate_csv, fit_policy_tree, render_policy};
use crate::io::{
    load_decision_config, load_model, read_events, read_jsonl, save_model, update_model, write_atomic, write_jsonl,
    ActionLogRecord, ActionLogger, DecisionContext, ExperimentConfig,
};
use crate::sim::{generate_observational_dataset, GroundTruth, SimConfig};

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Data(format!("json encoding: {e}")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    write_atomic(path, text.as_bytes())
}

pub struct SimulateArgs {
    pub config: PathBuf,
    pub out: PathBuf,
    pub truth: PathBuf,
    pub n: usize,
}

pub fn simulate(args: &SimulateArgs) -> Result<String> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let data = generate_observational_dataset(args.n, &cfg.simulation)?;
    write_jsonl(&args.out, &data.events)?;
    write_jsonl(&args.truth, &data.truth)?;
    let redeploys = data.events.iter().filter(|e| e.action == MitigationAction::Redeploy).count();
    Ok(format!(
        "wrote {} events ({} redeploy) to {} and ground truth to {}",
        data.events.len(),
        redeploys,
        args.out.display(),
        args.truth.display()
    ))
}

pub struct TrainArgs {
    pub config: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub final_stage: Option<FinalStageKind>,
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    n: usize,
    final_stage: FinalStageKind,
    schema_id: &'a str,
    timestamp: i64,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    condition_number: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rank: Option<usize>,
}

pub fn train(args: &TrainArgs) -> Result<String> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(kind) = args.final_stage {
        cfg.dml.final_stage = kind;
    }
    let events = read_events(&args.data)?;
    let model = train_dml(&events, &cfg.dml)?;
    save_model(&model, &args.out)?;
    let (condition_number, rank) = match &model.final_stage {
        FinalStage::Linear(t) => (Some(t.condition_number), Some(t.rank)),
        FinalStage::Forest(_) => (None, None),
    };
    to_json(&TrainSummary {
        n: model.metadata.n,
        final_stage: model.final_stage_kind(),
        schema_id: &model.schema_id,
        timestamp: model.metadata.timestamp,
        version: &model.metadata.version,
        condition_number,
        rank,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct EvalSummary {
    pub n: usize,
    pub psi: f64,
    pub naive_effect: f64,
    pub adjusted_effect: f64,
}

pub fn eval(model: &Path, data: &Path) -> Result<String> {
    let model = load_model(model)?;
    let events = read_events(data)?;
    to_json(&EvalSummary {
        n: events.len(),
        psi: psi_loss(&model, &events)?,
        naive_effect: naive_effect(&events)?,
        adjusted_effect: adjusted_effect(&model, &events)?,
    })
}

pub struct CompareArgs {
    pub config: PathBuf,
    pub model: PathBuf,
    pub n: usize,
    pub out: PathBuf,
    /// Optional plain-text KPI table.
    pub table: Option<PathBuf>,
    /// Optional per-VM downtime histogram CSV.
    pub plot: Option<PathBuf>,
}

pub fn compare(args: &CompareArgs) -> Result<String> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let model = load_model(&args.model)?;
    let policies = cfg
        .evaluation
        .policies
        .iter()
        .map(|p| PolicySpec::parse(p, Some(&model), &cfg.decision))
        .collect::<Result<Vec<_>>>()?;
    let run = run_policy_comparison(&policies, args.n, &cfg.simulation, cfg.evaluation.seed)?;
    let mut json = run.report.to_json()?;
    json.push('\n');
    write_text(&args.out, &json)?;
    let table = run.report.to_table();
    if let Some(path) = &args.table {
        write_text(path, &table)?;
    }
    if let Some(path) = &args.plot {
        let series: Vec<(String, Vec<f64>)> = policies
            .iter()
            .zip(&run.per_event)
            .map(|(p, ev)| (p.name().to_string(), ev.iter().map(|(y, _)| *y).collect()))
            .collect();
        write_text(path, &histogram_csv(&series, cfg.evaluation.histogram_bins)?)?;
    }
    Ok(table)
}

pub struct CounterfactualArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub truth: Option<PathBuf>,
    /// Optional histogram CSV of τ̂.
    pub plot: Option<PathBuf>,
    pub bins: usize,
}

pub fn counterfactual(args: &CounterfactualArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let events = read_events(&args.data)?;
    let truth: Option<Vec<GroundTruth>> = args.truth.as_deref().map(read_jsonl).transpose()?;
    let report = counterfactual_analysis(&model, &events, truth.as_deref())?;
    if let Some(path) = &args.plot {
        write_text(path, &histogram_csv(&[("tau_hat".to_string(), report.tau_hat.clone())], args.bins)?)?;
    }
    to_json(&report)
}

pub struct RecommendArgs {
    pub model: PathBuf,
    pub signals: PathBuf,
    pub decision_config: PathBuf,
    pub log: PathBuf,
    pub experiment: String,
    pub node_id: String,
    pub event_id: String,
    pub timestamp: i64,
}

pub fn recommend(args: &RecommendArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let decision_cfg = load_decision_config(&args.decision_config)?;
    let text = fs::read_to_string(&args.signals).map_err(|e| Error::io(&args.signals, e))?;
    let signals: DiagnosticSignals = serde_json::from_str(&text)
        .map_err(|e| Error::Data(format!("{}: {e}", args.signals.display())))?;
    let ite = estimate_ite(&model, &signals)?;
    let decision = decide(&ite, &signals, &decision_cfg);
    let model_name = args
        .model
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let record = ActionLogRecord::new(
        &decision,
        &model,
        &DecisionContext {
            experiment_name: &args.experiment,
            model_name: &model_name,
            node_id: &args.node_id,
            event_id: &args.event_id,
            unhealthy_timestamp: args.timestamp,
            action_timestamp: args.timestamp,
        },
    )?;
    ActionLogger::open(&args.log)?.log(&record)?;
    to_json(&decision)
}

pub struct InterpretArgs {
    pub model: PathBuf,
    pub data: PathBuf,
    pub depth: usize,
    pub cate_feature: Option<String>,
    pub bins: usize,
}

pub fn interpret(args: &InterpretArgs) -> Result<String> {
    let model = load_model(&args.model)?;
    let events = read_events(&args.data)?;
    let x = encode_events(&model, &events)?;
    let tau_hat = x.rows().map(|r| model.theta(r)).collect::<Result<Vec<_>>>()?;
    let tree = fit_policy_tree(&x, &tau_hat, args.depth)?;
    let agree = x
        .rows()
        .zip(&tau_hat)
        .filter(|(r, t)| tree.recommend(r) == MitigationAction::preferred_by(**t))
        .count();
    let mut out = render_policy(&tree, &model.schema.column_names());
    out.push_str(&format!(
        "# fidelity {:.4} ({agree}/{} rows follow the sign of tau_hat)\n",
        agree as f64 / tau_hat.len() as f64,
        tau_hat.len()
    ));
    if let Some(feature) = &args.cate_feature {
        out.push('\n');
        out.push_str(&cate_csv(&cate_by_feature(&model, &events, feature, args.bins)?));
    }
    Ok(out)
}

pub struct AbTestArgs {
    pub config: PathBuf,
    pub experiment: String,
    pub groups: String,
    pub n: usize,
    /// Engine model; trained from the config's simulation when absent.
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

/// Parses `name:weight,name:weight`.
pub fn parse_groups(spec: &str) -> Result<Vec<(String, f64)>> {
    spec.split(',')
        .map(|part| {
            let (name, w) = part
                .split_once(':')
                .ok_or_else(|| Error::InvalidArgument(format!("group {part:?} is not name:weight")))?;
            let w: f64 = w
                .trim()
                .parse()
                .map_err(|_| Error::InvalidArgument(format!("bad weight in {part:?}")))?;
            Ok((name.trim().to_string(), w))
        })
        .collect()
}

pub fn abtest(args: &AbTestArgs) -> Result<String> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let groups = parse_groups(&args.groups)?;
    let model: Option<DmlModel> = match &args.model {
        Some(path) => Some(load_model(path)?),
        None if groups.iter().any(|(g, _)| g == "engine") => {
            let data = generate_observational_dataset(cfg.evaluation.training_events, &cfg.simulation)?;
            Some(train_dml(&data.events, &cfg.dml)?)
        }
        None => None,
    };
    let policies = groups
        .iter()
        .map(|(g, _)| PolicySpec::parse(g, model.as_ref(), &cfg.decision))
        .collect::<Result<Vec<_>>>()?;
    let sim = SimConfig {
        seed: cfg.evaluation.seed,
        ..cfg.simulation.clone()
    };
    let report = run_ab_test(&args.experiment, &groups, &policies, args.n, &sim)?;
    let mut json = report.to_json()?;
    json.push('\n');
    if let Some(path) = &args.out {
        write_text(path, &json)?;
    }
    Ok(json)
}

pub struct UpdateArgs {
    pub current: PathBuf,
    pub recent: PathBuf,
    pub holdout: PathBuf,
    pub out: PathBuf,
    /// Supplies the training and gate settings; defaults otherwise.
    pub config: Option<PathBuf>,
}

pub fn update(args: &UpdateArgs) -> Result<String> {
    let cfg = match &args.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    let current = load_model(&args.current)?;
    let recent = read_events(&args.recent)?;
    let holdout = read_events(&args.holdout)?;
    let outcome = update_model(current, &recent, &holdout, &cfg.gate, &cfg.dml)?;
    save_model(&outcome.model, &args.out)?;
    to_json(&outcome.report)
}
