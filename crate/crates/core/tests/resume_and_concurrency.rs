use std::collections::HashSet;
use std::io::Write;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use async_trait::async_trait;
use cfsim::gateway::{ChatProvider, Gateway, GatewayError, ProviderCall, ResponseCache, ScriptedProvider};
use cfsim::pipeline::{Pipeline, RunConfig, Stage};

/// Wraps the scripted provider, recording fingerprints and peak concurrency.
struct Counting {
    inner: ScriptedProvider,
    fingerprints: Mutex<Vec<String>>,
    active: AtomicUsize,
    peak: AtomicUsize,
    delay: Duration,
}

impl Counting {
    fn new(delay: Duration) -> Arc<Self> {
        let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/responses.json");
        Arc::new(Self {
            inner: ScriptedProvider::from_file(&path).unwrap(),
            fingerprints: Mutex::new(Vec::new()),
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            delay,
        })
    }

    fn seen(&self) -> Vec<String> {
        self.fingerprints.lock().unwrap().clone()
    }
}

#[async_trait]
impl ChatProvider for Counting {
    async fn complete(&self, call: &ProviderCall<'_>) -> Result<String, GatewayError> {
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        self.fingerprints.lock().unwrap().push(call.fingerprint.to_string());
        tokio::time::sleep(self.delay).await;
        let out = self.inner.complete(call).await;
        self.active.fetch_sub(1, Ordering::SeqCst);
        out
    }
}

fn config(store: &Path, cache: Option<&Path>, in_flight: usize) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/run.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.store_dir = store.to_path_buf();
    cfg.cache_dir = cache.map(Path::to_path_buf);
    cfg.in_flight = in_flight;
    cfg
}

fn gateway(cfg: &RunConfig, provider: Arc<Counting>) -> Gateway {
    let cache = match &cfg.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir).unwrap(),
        None => ResponseCache::in_memory(),
    };
    Gateway::new(cache)
        .with_in_flight_cap(cfg.in_flight)
        .with_provider("script", provider)
}

#[tokio::test]
async fn in_flight_cap_bounds_concurrent_provider_calls() {
    for cap in [1, 3] {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), None, cap);
        let provider = Counting::new(Duration::from_millis(10));
        let p = Pipeline::with_gateway(cfg.clone(), gateway(&cfg, provider.clone())).unwrap();
        p.run_all().await.unwrap();
        let peak = provider.peak.load(Ordering::SeqCst);
        assert!(peak <= cap, "peak {peak} above cap {cap}");
        if cap > 1 {
            assert!(peak > 1, "expected some overlap");
        }
    }
}

#[tokio::test]
async fn interrupted_run_resumes_without_repeating_requests() {
    let reference = {
        let dir = tempfile::tempdir().unwrap();
        let cfg = config(dir.path(), None, 4);
        let p = Pipeline::with_gateway(cfg.clone(), gateway(&cfg, Counting::new(Duration::ZERO))).unwrap();
        p.run_all().await.unwrap();
        p.report().await.unwrap().to_json()
    };

    let store = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let cfg = config(store.path(), Some(cache.path()), 4);

    let first = Counting::new(Duration::ZERO);
    {
        let p = Pipeline::with_gateway(cfg.clone(), gateway(&cfg, first.clone())).unwrap();
        p.run_stage(Stage::Explanations).await.unwrap();
        p.run_stage(Stage::Counterfactuals).await.unwrap();
        assert!(!p.missing_work().is_empty());
    }
    // a write cut off mid-line
    let mut f = std::fs::OpenOptions::new()
        .append(true)
        .open(store.path().join("golden/store.jsonl"))
        .unwrap();
    f.write_all(br#"{"schema_version":1,"kind":"simul"#).unwrap();
    drop(f);

    let second = Counting::new(Duration::ZERO);
    let p = Pipeline::with_gateway(cfg.clone(), gateway(&cfg, second.clone())).unwrap();
    p.run_all().await.unwrap();
    assert!(p.missing_work().is_empty());

    let a: HashSet<String> = first.seen().into_iter().collect();
    let b = second.seen();
    assert_eq!(a.len(), first.seen().len(), "duplicate request in first session");
    assert_eq!(
        b.iter().collect::<HashSet<_>>().len(),
        b.len(),
        "duplicate request in second session"
    );
    assert!(b.iter().all(|fp| !a.contains(fp)), "resumed session repeated a request");

    assert_eq!(p.report().await.unwrap().to_json(), reference);
}

#[tokio::test]
async fn reopening_with_a_different_config_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = config(dir.path(), None, 4);
    Pipeline::with_gateway(cfg.clone(), gateway(&cfg, Counting::new(Duration::ZERO))).unwrap();

    // in-flight limit may change between sessions
    let wider = config(dir.path(), None, 16);
    assert!(Pipeline::with_gateway(wider.clone(), gateway(&wider, Counting::new(Duration::ZERO))).is_ok());

    let mut other = cfg.clone();
    other.seed = 99;
    let err = Pipeline::with_gateway(other.clone(), gateway(&other, Counting::new(Duration::ZERO)))
        .err()
        .unwrap();
    assert!(err.to_string().contains("different configuration"), "{err}");
}
