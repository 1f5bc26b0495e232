//! Saves a model, logs a decision, then retrains on a newer window and lets
//! the ψ gate decide whether to deploy the candidate.
//!
//! `cargo run --release --example model_update`

use causal_remedy::decision::decide;
use causal_remedy::dml::{estimate_ite, train_dml};
use causal_remedy::io::{load_model, save_model, update_model, ActionLogRecord, ActionLogger, DecisionContext, ExperimentConfig};
use causal_remedy::sim::generate_observational_dataset;

fn main() -> causal_remedy::error::Result<()> {
    let dir = std::env::temp_dir().join("causal-remedy-model-update");
    std::fs::create_dir_all(&dir).expect("create scratch directory");
    let cfg = ExperimentConfig::default();

    let data = generate_observational_dataset(9_000, &cfg.simulation)?;
    let (old, rest) = data.events.split_at(3_000);
    let (recent, holdout) = rest.split_at(4_000);

    let path = dir.join("model.bin");
    save_model(&train_dml(old, &cfg.dml)?, &path)?;
    let current = load_model(&path)?;

    let event = &holdout[0];
    let decision = decide(&estimate_ite(&current, &event.signals)?, &event.signals, &cfg.decision);
    let mut log = ActionLogger::open(&dir.join("actions.jsonl"))?;
    log.log(&ActionLogRecord::new(
        &decision,
        &current,
        &DecisionContext {
            experiment_name: &cfg.name,
            model_name: "model",
            node_id: &event.node_id,
            event_id: &event.event_id,
            unhealthy_timestamp: event.timestamp,
            action_timestamp: event.timestamp,
        },
    )?)?;
    println!("{}: {} via {}", event.event_id, decision.action, decision.source);

    let outcome = update_model(current, recent, holdout, &cfg.gate, &cfg.dml)?;
    println!(
        "psi current {:?}, candidate {:?}, deployed {}: {}",
        outcome.report.psi_current, outcome.report.psi_candidate, outcome.report.deployed, outcome.report.reason
    );
    save_model(&outcome.model, &path)?;
    println!("serving model written to {}", path.display());
    Ok(())
}
