//! Compares the logged actions with the ones the model would have taken and
//! scores the predicted savings against ground truth.
//!
//! `cargo run --release --example counterfactual`

use causal_remedy::dml::{train_dml, DmlConfig};
use causal_remedy::evaluation::counterfactual_analysis;
use causal_remedy::sim::{generate_observational_dataset, SimConfig};

fn main() -> causal_remedy::error::Result<()> {
    let data = generate_observational_dataset(10_000, &SimConfig::default())?;
    let model = train_dml(&data.events, &DmlConfig::default())?;
    let report = counterfactual_analysis(&model, &data.events, Some(&data.truth))?;
    println!("logged action agrees with the model on {:.1}% of events", 100.0 * report.agree_fraction);
    for (label, g) in [("reboot", &report.switch_to_reboot), ("redeploy", &report.switch_to_redeploy)] {
        println!(
            "switch to {label:<8}: {:>5} events ({:.1}%), predicted saving {:.3}, true saving {:.3}",
            g.count,
            100.0 * g.fraction,
            g.predicted_saving.unwrap_or(0.0),
            g.true_saving.unwrap_or(0.0)
        );
    }
    Ok(())
}
