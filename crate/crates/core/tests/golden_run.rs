use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cfsim::pipeline::{Pipeline, RunConfig};
use cfsim::text::SimilarityMetricId;

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn config(store: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&fixture("golden/run.toml")).unwrap();
    cfg.store_dir = store.to_path_buf();
    cfg
}

async fn run_once(store: &Path) -> (String, u64) {
    let pipeline = Pipeline::open(config(store)).unwrap();
    for outcome in pipeline.run_all().await.unwrap() {
        assert!(outcome.failures.is_empty(), "{:?}", outcome.failures);
    }
    let report = pipeline.report().await.unwrap();
    (report.to_json(), pipeline.gateway().provider_calls())
}

#[tokio::test]
async fn golden_run_matches_hand_values() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::open(config(dir.path())).unwrap();
    pipeline.run_all().await.unwrap();
    let report = pipeline.report().await.unwrap();

    let pork = report.explanations.iter().find(|e| e.instance_id == "pork").unwrap();
    assert_eq!(pork.counts.counterfactuals, 5);
    assert_eq!(pork.counts.simulatable, 4);
    assert_eq!(pork.counts.matches, 3);
    assert!((pork.precision.unwrap() - 0.75).abs() < 1e-12);
    assert!((pork.sim_rate.unwrap() - 0.8).abs() < 1e-12);

    // token sets after stopword removal:
    // {hard find pork belly casablanca} {hard buy bacon rabat}
    // {hard find mint tea casablanca} {hard get ham sandwiches marrakesh}
    let pairs = [1.0 / 8.0, 3.0 / 7.0, 1.0 / 9.0, 1.0 / 8.0, 1.0 / 8.0, 1.0 / 9.0];
    let expected = 1.0 - pairs.iter().sum::<f64>() / pairs.len() as f64;
    let got = pork.generality[&SimilarityMetricId::Jaccard].unwrap();
    assert!((got - expected).abs() < 1e-12, "{got} vs {expected}");

    let tomato = report.explanations.iter().find(|e| e.instance_id == "tomato").unwrap();
    assert_eq!(tomato.precision, Some(1.0));
    assert!((tomato.sim_rate.unwrap() - 0.8).abs() < 1e-12);

    let system = &report.systems[0];
    assert!((system.precision.mean.unwrap() - 0.875).abs() < 1e-12);
    assert_eq!(system.accuracy.mean, Some(1.0));
    assert!(start.elapsed() < Duration::from_secs(5));
}

#[tokio::test]
async fn golden_report_is_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (first, calls_a) = run_once(a.path()).await;
    let (second, calls_b) = run_once(b.path()).await;
    assert_eq!(first, second);
    assert_eq!(calls_a, calls_b);

    // a finished run does no further provider work
    let (again, calls) = run_once(a.path()).await;
    assert_eq!(again, first);
    assert_eq!(calls, 0);
}

#[tokio::test]
async fn table_rendering_names_each_table() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::open(config(dir.path())).unwrap();
    pipeline.run_all().await.unwrap();
    let table = pipeline.report().await.unwrap().render_table();
    assert!(table.contains("gpt-4"));
    assert!(table.contains("0.875"));
}

#[tokio::test]
#[ignore]
async fn print_golden_report() {
    let dir = tempfile::tempdir().unwrap();
    let pipeline = Pipeline::open(config(dir.path())).unwrap();
    pipeline.run_all().await.unwrap();
    let r = pipeline.report().await.unwrap();
    println!("{}", r.render_table());
    println!("{}", r.to_json());
}
