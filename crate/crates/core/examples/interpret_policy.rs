//! Distils the model into a depth-3 if/else policy and a CATE curve over
//! vm_count.
//!
//! `cargo run --release --example interpret_policy`

use causal_remedy::dml::{encode_events, train_dml, DmlConfig};
use causal_remedy::interpreter::{cate_by_feature, cate_csv, fit_policy_tree, render_policy, DEFAULT_POLICY_DEPTH};
use causal_remedy::sim::{generate_observational_dataset, SimConfig};

fn main() -> causal_remedy::error::Result<()> {
    let data = generate_observational_dataset(10_000, &SimConfig::default())?;
    let model = train_dml(&data.events, &DmlConfig::default())?;
    let x = encode_events(&model, &data.events)?;
    let tau_hat = x.rows().map(|r| model.theta(r)).collect::<Result<Vec<_>, _>>()?;
    let tree = fit_policy_tree(&x, &tau_hat, DEFAULT_POLICY_DEPTH)?;
    print!("{}", render_policy(&tree, &model.schema.column_names()));
    println!();
    print!("{}", cate_csv(&cate_by_feature(&model, &data.events, "vm_count", 8)?));
    Ok(())
}
