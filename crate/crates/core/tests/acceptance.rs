//! One PASS/FAIL line per acceptance criterion. Run with
//! `cargo test -p cfsim --test acceptance -- --nocapture`.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use cfsim::pipeline::{Pipeline, RunConfig, Stage};
use cfsim::stats::{cohen_kappa, paired_permutation_test, pearson, spearman};
use cfsim::tasks::{
    render_cot_request, render_counterfactual_prompt, render_simulation_prompt, RequestSettings, TemplateSet,
};
use cfsim::text::{bleu, generality_from, jaccard, SimilarityMetricId, Stopwords};
use cfsim::{ExplanationRecord, Label, Method, ModelSystem, TaskInput, TaskInstance};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl Into<String>) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn close(got: f64, want: f64, tol: f64, what: &str) -> Check {
    ensure((got - want).abs() <= tol, format!("{what}: got {got}, want {want}"))
}

fn manifest() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn fixture_config(name: &str, store: &Path) -> RunConfig {
    let mut cfg = RunConfig::load(&manifest().join("fixtures").join(name).join("run.toml")).unwrap();
    cfg.store_dir = store.to_path_buf();
    cfg
}

fn bleu_oracle(hyp: &[&str], reference: &[&str]) -> f64 {
    let order = 4.min(hyp.len()).min(reference.len());
    let mut log_sum = 0.0;
    for n in 1..=order {
        let grams = |s: &[&str]| -> Vec<String> { s.windows(n).map(|w| w.join(" ")).collect() };
        let (h, r) = (grams(hyp), grams(reference));
        let mut distinct = h.clone();
        distinct.sort();
        distinct.dedup();
        let clipped: usize = distinct
            .iter()
            .map(|g| {
                h.iter()
                    .filter(|x| *x == g)
                    .count()
                    .min(r.iter().filter(|x| *x == g).count())
            })
            .sum();
        log_sum += (if clipped == 0 { 1e-9 } else { clipped as f64 } / h.len() as f64).ln();
    }
    let bp = if hyp.len() >= reference.len() {
        1.0
    } else {
        (1.0 - reference.len() as f64 / hyp.len() as f64).exp()
    };
    bp * (log_sum / order as f64).exp()
}

fn metric_oracles() -> Check {
    let start = Instant::now();
    let vocab = [
        "the", "a", "cat", "dog", "sat", "on", "mat", "can", "fly", "eagles", "penguins", "eat",
    ];
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for _ in 0..100 {
        let mut sentence = || -> Vec<&str> {
            (0..rng.gen_range(1..=12))
                .map(|_| *vocab.choose(&mut rng).unwrap())
                .collect()
        };
        let (h, r) = (sentence(), sentence());
        close(bleu(&h.join(" "), &r.join(" "), 4), bleu_oracle(&h, &r), 1e-9, "bleu")?;
    }
    let sw = Stopwords::default();
    close(
        jaccard("pigs eat meat", "pigs eat meat", &sw),
        1.0,
        0.0,
        "jaccard identity",
    )?;
    close(
        jaccard("Can eagles fly?", "Can penguins fly?", &sw),
        1.0 / 3.0,
        0.0,
        "eagles/penguins",
    )?;
    let same = ["pigs eat meat", "pigs eat meat"];
    close(
        generality_from(2, |i, j| jaccard(same[i], same[j], &sw)).unwrap(),
        0.0,
        0.0,
        "generality of identical texts",
    )?;
    let texts = ["pigs eat meat", "Pigs eat meat.", "owls hunt mice"];
    close(
        generality_from(3, |i, j| jaccard(texts[i], texts[j], &sw)).unwrap(),
        2.0 / 3.0,
        1e-12,
        "three-text generality",
    )?;
    ensure(start.elapsed() < Duration::from_secs(1), "slower than 1 s")
}

fn statistics() -> Check {
    let start = Instant::now();
    use Label::{No as N, Yes as Y};
    let a = [Y, Y, Y, Y, Y, N, N, N, N, N];
    let b = [Y, Y, Y, Y, N, N, N, N, N, Y];
    close(cohen_kappa(&a, &b).map_err(|e| e.to_string())?, 0.6, 1e-12, "kappa")?;
    let (x, y) = ([1.0, 2.0, 3.0], [3.0, 1.0, 2.0]);
    close(spearman(&x, &y).map_err(|e| e.to_string())?, -0.5, 1e-12, "spearman")?;
    close(pearson(&x, &y).map_err(|e| e.to_string())?, -0.5, 1e-12, "pearson")?;
    let s = [0.2, 0.5, 0.9, 0.4];
    let p = paired_permutation_test(&s, &s, 10_000, 7).map_err(|e| e.to_string())?;
    close(p.p_value, 1.0, 0.0, "p on identical samples")?;
    let base: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin()).collect();
    let shifted: Vec<f64> = base.iter().map(|v| v + 0.1).collect();
    let first = paired_permutation_test(&shifted, &base, 10_000, 7).map_err(|e| e.to_string())?;
    ensure(first.p_value <= 0.001, format!("shift p = {}", first.p_value))?;
    let second = paired_permutation_test(&shifted, &base, 10_000, 7).map_err(|e| e.to_string())?;
    ensure(
        serde_json::to_string(&first).unwrap() == serde_json::to_string(&second).unwrap(),
        "same seed gave different output",
    )?;
    ensure(start.elapsed() < Duration::from_secs(5), "slower than 5 s")
}

async fn golden_run() -> Check {
    let start = Instant::now();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::open(fixture_config("golden", dir.path())).map_err(|e| e.to_string())?;
        p.run_all().await.map_err(|e| e.to_string())?;
        let report = p.report().await.map_err(|e| e.to_string())?;
        let pork = report
            .explanations
            .iter()
            .find(|e| e.instance_id == "pork")
            .ok_or("pork explanation missing")?;
        ensure(pork.precision == Some(0.75), format!("precision {:?}", pork.precision))?;
        ensure(pork.sim_rate == Some(0.8), format!("sim_rate {:?}", pork.sim_rate))?;
        let hand = 1.0 - (3.0 / 8.0 + 3.0 / 7.0 + 2.0 / 9.0) / 6.0;
        let got = pork.generality[&SimilarityMetricId::Jaccard].ok_or("generality undefined")?;
        close(got, hand, 1e-9, "jaccard generality")?;
        reports.push(report.to_json());
    }
    // the scripted provider is the only one configured, so no request left the process
    ensure(reports[0] == reports[1], "reports differ between runs")?;
    ensure(start.elapsed() < Duration::from_secs(5), "slower than 5 s")
}

async fn forced_discrimination() -> Check {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::open(fixture_config("forced", dir.path())).map_err(|e| e.to_string())?;
    let c = p.sanity_forced().await.map_err(|e| e.to_string())?;
    let c = c.first().ok_or("no comparison")?;
    ensure(c.delta == Some(0.5), format!("delta {:?}", c.delta))?;
    let sig = c.significance.as_ref().ok_or("no significance test")?;
    ensure(sig.p_value < 0.05, format!("p = {}", sig.p_value))?;
    ensure(
        c.qualifying_instances == 8 && c.excluded_instances == 1,
        format!(
            "subset {} kept, {} excluded",
            c.qualifying_instances, c.excluded_instances
        ),
    )
}

fn prompt_golden_files() -> Check {
    #[derive(serde::Deserialize)]
    struct Pair {
        context: String,
        response_1: String,
        response_2: String,
    }
    #[derive(serde::Deserialize)]
    struct Shp {
        starter: Pair,
        choice: Label,
        explanation: String,
        follow_up: Option<Pair>,
    }
    #[derive(serde::Deserialize)]
    struct Qa {
        cot_question: String,
        starter: String,
        answer: Label,
        explanation: String,
        follow_up: String,
    }
    #[derive(serde::Deserialize)]
    struct Inputs {
        shp: Shp,
        shp_simulate: Shp,
        strategyqa: Qa,
    }
    let dir = manifest().join("tests/golden");
    let read = |n: &str| std::fs::read_to_string(dir.join(n)).unwrap();
    let squash = |s: &str| s.split_whitespace().collect::<Vec<_>>().join(" ");
    let inputs: Inputs = serde_json::from_str(&read("inputs.json")).unwrap();
    let t = TemplateSet::bundled();
    let settings = RequestSettings::from(&ModelSystem::new("p", "m", Method::Cot));
    let pair = |p: &Pair| TaskInput::pairwise(&p.context, &p.response_1, &p.response_2);
    let setup = |input: TaskInput, label: Label, explanation: &str| {
        let inst = TaskInstance {
            id: "i".into(),
            input,
            gold: label,
        };
        let rec = ExplanationRecord {
            instance_id: "i".into(),
            system_id: "m/cot".into(),
            explanation: explanation.into(),
            output: Some(label),
            raw_completion: String::new(),
            failure: None,
        };
        (inst, rec)
    };
    let e = |e: cfsim::tasks::TaskError| e.to_string();

    let mut rendered = Vec::new();
    let qa = &inputs.strategyqa;
    rendered.push((
        "strategyqa.cot.txt",
        render_cot_request(&t, &TaskInput::question(&qa.cot_question), &settings).map_err(e)?,
    ));
    let (inst, rec) = setup(TaskInput::question(&qa.starter), qa.answer, &qa.explanation);
    rendered.push((
        "strategyqa.counterfactual.txt",
        render_counterfactual_prompt(&t, &rec, &inst, &settings).map_err(e)?,
    ));
    rendered.push((
        "strategyqa.simulate.txt",
        render_simulation_prompt(&t, &rec, &inst, &TaskInput::question(&qa.follow_up), &settings).map_err(e)?,
    ));
    rendered.push((
        "shp.explain.txt",
        render_cot_request(&t, &pair(&inputs.shp.starter), &settings).map_err(e)?,
    ));
    let (inst, rec) = setup(pair(&inputs.shp.starter), inputs.shp.choice, &inputs.shp.explanation);
    rendered.push((
        "shp.counterfactual.txt",
        render_counterfactual_prompt(&t, &rec, &inst, &settings).map_err(e)?,
    ));
    let s = &inputs.shp_simulate;
    let (inst, rec) = setup(pair(&s.starter), s.choice, &s.explanation);
    let follow_up = pair(s.follow_up.as_ref().ok_or("no follow-up")?);
    rendered.push((
        "shp.simulate.txt",
        render_simulation_prompt(&t, &rec, &inst, &follow_up, &settings).map_err(e)?,
    ));

    for (name, req) in rendered {
        ensure(
            squash(&req.transcript()) == squash(&read(name)),
            format!("{name} differs"),
        )?;
    }
    Ok(())
}

async fn resumability() -> Check {
    let reference = {
        let dir = tempfile::tempdir().unwrap();
        let p = Pipeline::open(fixture_config("golden", dir.path())).map_err(|e| e.to_string())?;
        p.run_all().await.map_err(|e| e.to_string())?;
        p.report().await.map_err(|e| e.to_string())?.to_json()
    };
    let store = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let mut cfg = fixture_config("golden", store.path());
    cfg.cache_dir = Some(cache.path().to_path_buf());
    let first_calls = {
        let p = Pipeline::open(cfg.clone()).map_err(|e| e.to_string())?;
        p.run_stage(Stage::Explanations).await.map_err(|e| e.to_string())?;
        p.run_stage(Stage::Counterfactuals).await.map_err(|e| e.to_string())?;
        p.gateway().provider_calls()
    };
    let p = Pipeline::open(cfg).map_err(|e| e.to_string())?;
    p.run_all().await.map_err(|e| e.to_string())?;
    // 2 explanations + 10 generations happened before the interruption;
    // 10 simulations + 8 outputs remain
    ensure(first_calls == 12, format!("{first_calls} calls before interruption"))?;
    ensure(
        p.gateway().provider_calls() == 18,
        format!("{} calls after resuming", p.gateway().provider_calls()),
    )?;
    ensure(
        p.report().await.map_err(|e| e.to_string())?.to_json() == reference,
        "report differs",
    )
}

#[test]
fn acceptance() {
    let rt = tokio::runtime::Runtime::new().unwrap();
    let results: Vec<(&str, Check)> = vec![
        ("metric oracle suite", metric_oracles()),
        ("statistics suite", statistics()),
        ("golden end-to-end run", rt.block_on(golden_run())),
        ("forced discrimination", rt.block_on(forced_discrimination())),
        ("prompt golden files", prompt_golden_files()),
        ("resumability", rt.block_on(resumability())),
    ];
    let mut failed = 0;
    for (name, result) in &results {
        match result {
            Ok(()) => println!("PASS {name}"),
            Err(why) => {
                failed += 1;
                println!("FAIL {name}: {why}");
            }
        }
    }
    println!("SKIP live smoke check (manual; run the ignored `live_smoke` test with CFSIM_LIVE_CONFIG set)");
    assert_eq!(failed, 0, "{failed} acceptance criteria failed");
}

/// Needs a run configuration with real provider credentials over 20
/// StrategyQA items, named by `CFSIM_LIVE_CONFIG`.
#[test]
#[ignore]
fn live_smoke() {
    let path = std::env::var("CFSIM_LIVE_CONFIG").expect("CFSIM_LIVE_CONFIG is not set");
    let cfg = RunConfig::load(Path::new(&path)).unwrap();
    let rt = tokio::runtime::Runtime::new().unwrap();
    let check = rt.block_on(async {
        let p = Pipeline::open(cfg).map_err(|e| e.to_string())?;
        p.run_all().await.map_err(|e| e.to_string())?;
        let report = p.report().await.map_err(|e| e.to_string())?;
        let table = report.render_table();
        for system in &report.systems {
            let precision = system.precision.mean.ok_or("precision undefined")?;
            let sim = system.sim_rate.mean.ok_or("sim_rate undefined")?;
            ensure(
                (0.5..=1.0).contains(&precision),
                format!("{}: precision {precision}", system.system_id),
            )?;
            ensure(
                (0.2..=0.95).contains(&sim),
                format!("{}: sim_rate {sim}", system.system_id),
            )?;
        }
        for heading in [
            "Diversity",
            "Normal vs forced",
            "Simulator agreement",
            "Simulation precision",
            "Precision-generality",
            "Task accuracy vs",
        ] {
            ensure(table.contains(heading), format!("table {heading:?} missing"))?;
        }
        println!("{table}");
        Ok::<(), String>(())
    });
    match check {
        Ok(()) => println!("PASS live smoke check"),
        Err(why) => panic!("FAIL live smoke check: {why}"),
    }
}
