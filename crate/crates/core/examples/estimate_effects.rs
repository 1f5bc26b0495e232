//! Trains forest and linear final stages, compares their held-out ψ and prints
//! per-event effect estimates with confidence intervals.
//!
//! `cargo run --release --example estimate_effects`

use causal_remedy::dml::{estimate_ite, psi_loss, train_dml, FinalStage, FinalStageKind};
use causal_remedy::domain::{DiagnosticSignals, ErrorCode};
use causal_remedy::io::ExperimentConfig;
use causal_remedy::sim::generate_observational_dataset;

fn main() -> causal_remedy::error::Result<()> {
    let cfg = ExperimentConfig::preset("two_regime")?;
    let data = generate_observational_dataset(12_000, &cfg.simulation)?;
    let (train, holdout) = data.events.split_at(10_000);

    let forest = train_dml(train, &cfg.dml)?;
    let mut linear_cfg = cfg.dml.clone();
    linear_cfg.final_stage = FinalStageKind::Linear;
    let linear = train_dml(train, &linear_cfg)?;
    println!("held-out psi: forest {:.4}, linear {:.4}", psi_loss(&forest, holdout)?, psi_loss(&linear, holdout)?);
    if let FinalStage::Linear(theta) = &linear.final_stage {
        println!("linear stage: rank {}, condition number {:.1}", theta.rank, theta.condition_number);
    }

    for vm_count in [1, 3, 5, 8] {
        let signals = DiagnosticSignals {
            vm_count,
            error_code: Some(ErrorCode::SwFault),
            network_ok: true,
            ..DiagnosticSignals::default()
        };
        let ite = estimate_ite(&forest, &signals)?;
        println!(
            "vm_count {vm_count}: tau {:+.3}  90% CI [{:+.3}, {:+.3}]",
            ite.tau, ite.tau_lower, ite.tau_upper
        );
    }
    Ok(())
}
