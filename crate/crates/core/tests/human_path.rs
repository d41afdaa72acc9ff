use std::collections::BTreeMap;
use std::path::Path;

use cfsim::pipeline::human::{AnnotationKind, ExportLabel, JudgmentExportLine};
use cfsim::pipeline::{Pipeline, RunConfig, SimulatorConfig};

const W: [&str; 3] = ["w1", "w2", "w3"];

fn config(store: &Path) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/run.toml");
    let mut cfg = RunConfig::load(&path).unwrap();
    cfg.store_dir = store.to_path_buf();
    cfg
}

fn cf(instance: &str, k: usize) -> String {
    format!("{instance}|gpt-4/cot|cf{k}")
}

fn sim_line(cf_id: &str, worker: &str, choice: &str) -> JudgmentExportLine {
    JudgmentExportLine {
        task_id: format!("simulation:{cf_id}"),
        kind: AnnotationKind::Simulation,
        run_id: Some("golden".into()),
        counterfactual_id: Some(cf_id.into()),
        instance_id: None,
        system_id: None,
        worker_id: worker.into(),
        label: ExportLabel::Choice(choice.into()),
        timestamp: "2024-05-01T12:00:00Z".into(),
    }
}

fn write_export(path: &Path, lines: &[JudgmentExportLine]) {
    let text: String = lines.iter().map(|l| serde_json::to_string(l).unwrap() + "\n").collect();
    std::fs::write(path, text).unwrap();
}

/// Cohen's kappa for any number of categories, from the definition.
fn kappa(a: &[&str], b: &[&str]) -> f64 {
    let n = a.len() as f64;
    let po = a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n;
    let mut cats: Vec<&str> = a.iter().chain(b).copied().collect();
    cats.sort();
    cats.dedup();
    let pe: f64 = cats
        .iter()
        .map(|c| {
            let pa = a.iter().filter(|x| *x == c).count() as f64 / n;
            let pb = b.iter().filter(|x| *x == c).count() as f64 / n;
            pa * pb
        })
        .sum();
    (po - pe) / (1.0 - pe)
}

#[tokio::test]
async fn agreement_with_human_annotators() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::open(config(dir.path())).unwrap();
    p.run_all().await.unwrap();

    // ids sort as pork cf0..cf4, tomato cf0..cf4; the LLM simulator's
    // judgments in that order:
    let llm = [
        "yes",
        "yes",
        "cannot_tell",
        "no",
        "yes",
        "yes",
        "no",
        "yes",
        "cannot_tell",
        "yes",
    ];
    let mut w2 = llm;
    w2[1] = "no";
    let mut w3 = llm;
    w3[2] = "no";
    w3[8] = "yes";
    let series = [llm, w2, w3];

    let mut lines = Vec::new();
    for (i, k) in (0..10).map(|i| (i, i % 5)) {
        let id = cf(if i < 5 { "pork" } else { "tomato" }, k);
        for (w, s) in W.iter().zip(&series) {
            lines.push(sim_line(&id, w, s[i]));
        }
    }
    let export = dir.path().join("export.jsonl");
    write_export(&export, &lines);

    let report = p.iaa_report(&export).unwrap();
    assert_eq!(report.items, 10);
    let hh = (kappa(&llm, &w2) + kappa(&llm, &w3) + kappa(&w2, &w3)) / 3.0;
    assert!((report.table.human_human.mean - hh).abs() < 1e-12);
    let sim = &report.table.simulators[0];
    let vs = (kappa(&llm, &llm) + kappa(&llm, &w2) + kappa(&llm, &w3)) / 3.0;
    assert!((sim.vs_humans.mean - vs).abs() < 1e-12);
    assert!((sim.ratio.unwrap() - vs / hh).abs() < 1e-12);
    assert!(report.table.render("strategyqa").contains("gpt-4"));
}

#[tokio::test]
async fn human_majority_replaces_the_llm_simulator() {
    let dir = tempfile::tempdir().unwrap();
    let export = dir.path().join("export.jsonl");
    let mut lines = Vec::new();
    let pork: [&[&str]; 5] = [
        &["yes", "yes", "yes"],
        &["yes", "yes", "no"],
        &["yes", "no", "cannot_tell"],
        &["no", "no"],
        &[],
    ];
    for (k, votes) in pork.iter().enumerate() {
        for (w, v) in W.iter().zip(votes.iter()) {
            lines.push(sim_line(&cf("pork", k), w, v));
        }
    }
    let tomato = ["yes", "no", "yes", "cannot_tell", "yes"];
    for (k, v) in tomato.iter().enumerate() {
        for w in W {
            lines.push(sim_line(&cf("tomato", k), w, v));
        }
    }
    // a second submission from the same worker is ignored
    lines.push(sim_line(&cf("pork", 0), "w1", "no"));
    write_export(&export, &lines);

    let mut cfg = config(dir.path());
    cfg.simulator = SimulatorConfig::Human {
        export: export.clone(),
        redundancy: 3,
    };
    let p = Pipeline::open(cfg).unwrap();
    for o in p.run_all().await.unwrap() {
        assert!(o.failures.is_empty(), "{:?}", o.failures);
    }
    let scores: BTreeMap<String, _> = p
        .scores()
        .await
        .unwrap()
        .into_iter()
        .map(|s| (s.instance_id.clone(), s))
        .collect();

    let s = &scores["pork"];
    assert_eq!(s.counts.unjudged, 1);
    assert_eq!(s.counts.counterfactuals, 4);
    assert_eq!(s.counts.simulatable, 3);
    assert!((s.sim_rate.unwrap() - 0.75).abs() < 1e-12);
    assert!((s.precision.unwrap() - 2.0 / 3.0).abs() < 1e-12);
    assert_eq!(scores["tomato"].precision, Some(1.0));
    // 2 explanations, 10 counterfactuals, 7 outputs and no simulator calls
    assert_eq!(p.gateway().provider_calls(), 19);
}
