//! A run interrupted after two stages picks up where it stopped; reopening a
//! finished run makes no provider calls.

use std::path::Path;

use cfsim::pipeline::{Pipeline, RunConfig, Stage};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/run.toml");
    let mut cfg = RunConfig::load(&config)?;
    let store = tempfile::tempdir()?;
    cfg.store_dir = store.path().to_path_buf();

    {
        let first = Pipeline::open(cfg.clone())?;
        first.run_stage(Stage::Explanations).await?;
        first.run_stage(Stage::Counterfactuals).await?;
        println!("first session: {} provider calls", first.gateway().provider_calls());
        println!("still missing: {:?}", first.missing_work());
    }

    let second = Pipeline::open(cfg.clone())?;
    second.run_all().await?;
    println!("second session: {} provider calls", second.gateway().provider_calls());

    let third = Pipeline::open(cfg)?;
    third.run_all().await?;
    println!("third session: {} provider calls", third.gateway().provider_calls());
    Ok(())
}
