//! Hashes nodes into sticky experiment groups and runs a legacy-versus-engine
//! A/B test on the simulator.
//!
//! `cargo run --release --example sticky_abtest`

use causal_remedy::decision::{assign_policy_group, assignment_bucket};
use causal_remedy::dml::train_dml;
use causal_remedy::evaluation::{run_ab_test, PolicySpec};
use causal_remedy::io::ExperimentConfig;
use causal_remedy::sim::{generate_observational_dataset, SimConfig};

fn main() -> causal_remedy::error::Result<()> {
    let groups = vec![("legacy".to_string(), 0.5), ("engine".to_string(), 0.5)];
    for node in ["node-00001", "node-00002", "node-00003"] {
        println!(
            "{node}: bucket {:>4} -> {}",
            assignment_bucket(node, "rollout"),
            assign_policy_group(node, "rollout", &groups)?
        );
    }

    let cfg = ExperimentConfig::default();
    let data = generate_observational_dataset(10_000, &cfg.simulation)?;
    let model = train_dml(&data.events, &cfg.dml)?;
    let policies = [
        PolicySpec::Legacy,
        PolicySpec::Engine {
            model: &model,
            decision: cfg.decision.clone(),
        },
    ];
    let sim = SimConfig {
        seed: cfg.evaluation.seed,
        ..cfg.simulation.clone()
    };
    let report = run_ab_test("rollout", &groups, &policies, 10_000, &sim)?;
    print!("{}", report.to_table());
    Ok(())
}
