//! Runs the scripted golden pipeline, hands its annotation tasks to three
//! in-process workers, and scores the exported judgments against the LLM
//! simulator.

use std::path::Path;
use std::sync::Arc;

use cfsim::pipeline::human::{AnnotationKind, ExportLabel};
use cfsim::pipeline::{Pipeline, RunConfig};
use cfsim_annotate::{bundled_qualification, AnnotateError, AnnotationService, ServiceConfig, SystemClock};

#[tokio::main]
async fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/fixtures/golden/run.toml");
    let mut cfg = RunConfig::load(&config)?;
    let store = tempfile::tempdir()?;
    cfg.store_dir = store.path().to_path_buf();
    let pipeline = Pipeline::open(cfg)?;
    pipeline.run_all().await?;

    let service = AnnotationService::new(ServiceConfig::default(), Arc::new(SystemClock))?;
    println!("loaded {} tasks", service.add_tasks(pipeline.annotation_tasks())?);

    let answers: Vec<String> = bundled_qualification().into_iter().map(|i| i.answer).collect();
    for (w, worker) in ["ana", "ben", "chen"].iter().enumerate() {
        let mut done = 0;
        loop {
            let view = match service.next_task(worker) {
                Ok(v) => v,
                Err(AnnotateError::NoWork) => break,
                Err(e) => return Err(e.into()),
            };
            let label = match (&view.qualification, view.kind) {
                (Some(q), _) => ExportLabel::Choice(answers[q.item - 1].clone()),
                (None, AnnotationKind::Qualification) => unreachable!("exam items carry their progress"),
                (None, AnnotationKind::Plausibility) => ExportLabel::Rating(3 + (w as u8)),
                (None, AnnotationKind::Simulation) => {
                    done += 1;
                    // one worker in three disagrees on every fourth item
                    let flip = w == 2 && done % 4 == 0;
                    ExportLabel::Choice(if flip { "no" } else { "yes" }.into())
                }
            };
            service.submit(worker, &view.task_id, label)?;
        }
        println!("{worker}: {done} simulation judgments");
    }
    println!("{:?}", service.progress());

    let export = store.path().join("export.jsonl");
    std::fs::write(&export, service.export_jsonl(Some("golden")))?;
    let iaa = pipeline.iaa_report(&export)?;
    println!("\n{} items fully annotated", iaa.items);
    print!("{}", iaa.table.render(&pipeline.dataset().id));
    Ok(())
}
