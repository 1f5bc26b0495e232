//! Draws a confounded observational dataset and summarises it against the
//! hidden ground truth.
//!
//! `cargo run --release --example simulate_fleet`

use causal_remedy::domain::MitigationAction;
use causal_remedy::sim::{generate_observational_dataset, Cause, SimConfig};

fn main() -> causal_remedy::error::Result<()> {
    let config = SimConfig::default();
    let data = generate_observational_dataset(20_000, &config)?;

    let redeploys = data.events.iter().filter(|e| e.action == MitigationAction::Redeploy).count();
    println!("events: {}  logged redeploys: {redeploys}", data.events.len());

    for cause in Cause::ALL {
        let rows: Vec<_> = data.truth.iter().filter(|t| t.cause == cause).collect();
        let tau = rows.iter().map(|t| t.tau()).sum::<f64>() / rows.len() as f64;
        println!("{cause:?}: {} events, mean true tau {tau:.3}", rows.len());
    }

    let mean = |action| {
        let v: Vec<f64> = data.events.iter().filter(|e| e.action == action).map(|e| e.avd).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let naive = mean(MitigationAction::Redeploy) - mean(MitigationAction::Reboot);
    let ate = data.truth.iter().map(|t| t.tau()).sum::<f64>() / data.truth.len() as f64;
    println!("naive difference {naive:.3} vs true average effect {ate:.3}");
    Ok(())
}
