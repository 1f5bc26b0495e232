//! Writes every named scenario preset as a TOML experiment config.
//!
//! `cargo run --example config_presets -- [out_dir]` (default `configs/`).

use std::path::PathBuf;

use causal_remedy::io::ExperimentConfig;

fn main() -> causal_remedy::error::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "configs".into()));
    std::fs::create_dir_all(&dir).expect("create output directory");
    for name in ExperimentConfig::PRESETS {
        let cfg = ExperimentConfig::preset(name)?;
        let path = dir.join(format!("{name}.toml"));
        std::fs::write(&path, cfg.to_toml()?).expect("write preset");
        println!("{}", path.display());
    }
    let decision = toml::to_string(&ExperimentConfig::default().decision).expect("serialize decision config");
    std::fs::write(dir.join("decision.toml"), decision).expect("write decision config");
    println!("{}", dir.join("decision.toml").display());
    Ok(())
}
