//! Compares normal post-hoc explanations with explanations forced to argue
//! for the opposite answer. Forced ones should be less precise.

use std::path::Path;

use cfsim::pipeline::{Pipeline, RunConfig};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/forced/run.toml");
    let mut cfg = RunConfig::load(&config)?;
    let store = tempfile::tempdir()?;
    cfg.store_dir = store.path().to_path_buf();

    let pipeline = Pipeline::open(cfg)?;
    pipeline.run_forced().await?;
    for cmp in pipeline.sanity_forced().await? {
        println!(
            "{} vs {}: precision {:?} vs {:?} over {} instances ({} excluded)",
            cmp.normal_system,
            cmp.forced_system,
            cmp.normal_precision.mean,
            cmp.forced_precision.mean,
            cmp.qualifying_instances,
            cmp.excluded_instances
        );
        if let Some(sig) = cmp.significance {
            println!("  difference {:.3}, p = {:.4}", sig.mean_difference, sig.p_value);
        }
    }
    Ok(())
}
