//! Drive every stage from one TOML configuration into an output directory,
//! then show the manifest and the trade-off table.
//!
//! ```bash
//! cargo run --release --example batch_pipeline
//! ```
//! The same configuration works with the command-line tool:
//! `pplm run --config experiment.toml`.

use pplm::pipeline::{Pipeline, PipelineConfig, Stage, TRADEOFF_TABLE};

const CONFIG: &str = r#"
seed = 7
output = "run"

[corpus.synth]
patients = 8

[schemes]
names = ["mlm", "PPmlm", "clm", "PPclm"]

[model]
context_length = 64

[train]
epochs = 8
milestones = [4, 8]
batch_size = 4
learning_rate = 0.3

[attack]
member_fraction = 0.5
"#;

fn main() -> pplm::Result<()> {
    let dir = tempfile::tempdir().map_err(|e| pplm::Error::InvalidArgument(e.to_string()))?;
    let path = dir.path().join("experiment.toml");
    std::fs::write(&path, CONFIG).map_err(|e| pplm::Error::InvalidArgument(e.to_string()))?;

    let pipeline = Pipeline::new(PipelineConfig::load(&path)?)?;
    for stage in Stage::ALL {
        pipeline.run_stage(stage)?;
        println!("{stage:>9} done");
    }

    let out = pipeline.output();
    let manifest = std::fs::read_to_string(out.join("manifest.json"))
        .map_err(|e| pplm::Error::InvalidArgument(e.to_string()))?;
    let value: serde_json::Value = serde_json::from_str(&manifest)?;
    println!("\n{} artifacts recorded in manifest.json", value["artifacts"].as_object().map_or(0, |a| a.len()));

    let table = std::fs::read_to_string(out.join(TRADEOFF_TABLE))
        .map_err(|e| pplm::Error::InvalidArgument(e.to_string()))?;
    print!("\n{table}");

    // a stage whose inputs are gone names the stage to re-run
    std::fs::remove_dir_all(out.join("plans")).ok();
    if let Err(e) = pipeline.run_stage(Stage::Train) {
        println!("\n{e}");
    }
    Ok(())
}
