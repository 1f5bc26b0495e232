//! Replays six policies on the same simulated events and prints their KPIs.
//!
//! `cargo run --release --example policy_comparison`

use causal_remedy::dml::train_dml;
use causal_remedy::evaluation::{run_policy_comparison, PolicySpec};
use causal_remedy::io::ExperimentConfig;
use causal_remedy::sim::generate_observational_dataset;

fn main() -> causal_remedy::error::Result<()> {
    let cfg = ExperimentConfig::default();
    let data = generate_observational_dataset(10_000, &cfg.simulation)?;
    let model = train_dml(&data.events, &cfg.dml)?;
    let policies = PolicySpec::standard_set(&model, &cfg.decision);
    let run = run_policy_comparison(&policies, 10_000, &cfg.simulation, cfg.evaluation.seed)?;
    print!("{}", run.report.to_table());
    let engine = run.report.policy("engine").expect("engine is in the standard set");
    println!("engine decision sources: {:?}", engine.decision_sources);
    Ok(())
}
