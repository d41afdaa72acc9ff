use std::path::{Path, PathBuf};

use cfsim::pipeline::{Pipeline, RunConfig};

fn config(store: &Path) -> RunConfig {
    let path: PathBuf = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/forced/run.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.store_dir = store.to_path_buf();
    cfg
}

#[tokio::test]
async fn forced_explanations_are_less_precise() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::open(config(dir.path())).unwrap();
    for outcome in pipeline.run_forced().await.unwrap() {
        assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    }
    let comparisons = pipeline.sanity_forced().await.unwrap();
    assert_eq!(comparisons.len(), 1);
    let c = &comparisons[0];
    assert_eq!(c.normal_system, "gpt-4/posthoc");
    assert_eq!(c.forced_system, "gpt-4/forced");
    assert_eq!(c.qualifying_instances, 8);
    assert_eq!(c.excluded_instances, 1);
    assert_eq!(c.normal_precision.mean, Some(1.0));
    assert_eq!(c.forced_precision.mean, Some(0.5));
    assert!((c.delta.unwrap() - 0.5).abs() < 1e-12);

    // every paired difference is +0.5, so only the two all-same-sign
    // flips of 2^8 are as extreme: p ~ 2/256
    let sig = c.significance.as_ref().unwrap();
    assert_eq!(sig.n, 8);
    let p = sig.p_value;
    assert!(p < 0.05, "p = {p}");
    assert!((p - 2.0 / 256.0).abs() < 0.01, "p = {p}");

    // the report carries the same comparison and keeps forced systems out
    // of the ordinary precision table
    let report = pipeline.report().await.unwrap();
    assert_eq!(report.tables.forced_vs_normal.len(), 1);
    assert!(report.tables.precision.iter().all(|r| r.system_id != "gpt-4/forced"));
}

#[tokio::test]
async fn forced_check_is_resumable() {
    let dir = tempfile::tempdir().unwrap();
    let first = {
        let p = Pipeline::open(config(dir.path())).unwrap();
        p.run_forced().await.unwrap();
        p.sanity_forced().await.unwrap()
    };
    let p = Pipeline::open(config(dir.path())).unwrap();
    p.run_forced().await.unwrap();
    assert_eq!(p.gateway().provider_calls(), 0);
    let second = p.sanity_forced().await.unwrap();
    assert_eq!(
        serde_json::to_string(&first).unwrap(),
        serde_json::to_string(&second).unwrap()
    );
}
