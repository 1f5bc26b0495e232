//! On a fleet where the action has no effect at all, the naive comparison
//! still shows a large gap; the double machine learning estimate does not.
//!
//! `cargo run --release --example confounding_bias`

use causal_remedy::dml::{train_dml, DmlConfig};
use causal_remedy::evaluation::{adjusted_effect, naive_effect};
use causal_remedy::sim::{generate_observational_dataset, SimConfig};

fn main() -> causal_remedy::error::Result<()> {
    let data = generate_observational_dataset(20_000, &SimConfig::zero_effect())?;
    let model = train_dml(&data.events, &DmlConfig::default())?;
    println!("true effect:      0");
    println!("naive effect:     {:.4}", naive_effect(&data.events)?);
    println!("adjusted effect:  {:.4}", adjusted_effect(&model, &data.events)?);
    Ok(())
}
