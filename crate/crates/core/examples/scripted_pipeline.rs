//! Runs the whole pipeline offline against scripted model responses and
//! prints the metric report.

use std::path::Path;

use cfsim::pipeline::{Pipeline, RunConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/run.toml");
    let mut cfg = RunConfig::load(&config)?;
    let store = tempfile::tempdir()?;
    cfg.store_dir = store.path().to_path_buf();

    let pipeline = Pipeline::open(cfg)?;
    for outcome in pipeline.run_all().await? {
        println!("{:<16} {} written", outcome.stage.name(), outcome.written);
    }
    println!("provider calls: {}\n", pipeline.gateway().provider_calls());
    print!("{}", pipeline.report().await?.render_table());
    Ok(())
}
