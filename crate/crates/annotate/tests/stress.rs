use std::collections::{HashMap, HashSet};
use std::sync::Arc;

use cfsim::pipeline::human::{AnnotationTaskSpec, ExportLabel, TaskPayload};
use cfsim::{Label, TaskInput};
use cfsim_annotate::{
    bundled_qualification, AnnotateError, AnnotationService, AssignmentState, ServiceConfig, SystemClock,
};

fn tasks(n: usize) -> Vec<AnnotationTaskSpec> {
    (0..n)
        .map(|i| AnnotationTaskSpec {
            task_id: format!("simulation:{i:03}"),
            run_id: Some("r".into()),
            counterfactual_id: Some(format!("cf{i:03}")),
            instance_id: None,
            system_id: None,
            payload: TaskPayload::Simulation {
                input: TaskInput::question("Is a tomato a fruit?"),
                explanation: "Botanically it is.".into(),
                output: Label::Yes,
                counterfactual: TaskInput::question(format!("Is item {i} a fruit?")),
            },
        })
        .collect()
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_workers_never_over_assign() {
    let service = Arc::new(AnnotationService::new(ServiceConfig::default(), Arc::new(SystemClock)).unwrap());
    service.add_tasks(tasks(40)).unwrap();
    let answers: Vec<String> = bundled_qualification().into_iter().map(|i| i.answer).collect();

    let mut handles = Vec::new();
    for w in 0..24 {
        let service = service.clone();
        let answers = answers.clone();
        handles.push(tokio::spawn(async move {
            let worker = format!("worker-{w:02}");
            let mut got = Vec::new();
            loop {
                tokio::task::yield_now().await;
                let view = match service.next_task(&worker) {
                    Ok(v) => v,
                    Err(AnnotateError::NoWork) => break,
                    Err(e) => panic!("{e}"),
                };
                let label = match view.qualification {
                    Some(q) => answers[q.item - 1].clone(),
                    None => {
                        got.push(view.task_id.clone());
                        if w % 2 == 0 { "yes" } else { "no" }.to_string()
                    }
                };
                service
                    .submit(&worker, &view.task_id, ExportLabel::Choice(label))
                    .unwrap();
            }
            got
        }));
    }
    let mut per_task: HashMap<String, usize> = HashMap::new();
    for h in handles {
        let got = h.await.unwrap();
        let unique: HashSet<&String> = got.iter().collect();
        assert_eq!(unique.len(), got.len(), "a worker received a task twice");
        for t in got {
            *per_task.entry(t).or_default() += 1;
        }
    }
    assert_eq!(per_task.len(), 40);
    assert!(per_task.values().all(|&n| n == 3), "{per_task:?}");
    let submitted = service
        .assignments()
        .into_iter()
        .filter(|a| a.state == AssignmentState::Submitted && a.task_id.starts_with("simulation:"))
        .count();
    assert_eq!(submitted, 120);
    assert_eq!(service.export(Some("r")).len(), 120);
    assert_eq!(service.progress().complete_tasks, 40);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 8)]
async fn concurrent_reservations_without_submitting() {
    let service = Arc::new(AnnotationService::new(ServiceConfig::default(), Arc::new(SystemClock)).unwrap());
    service.add_tasks(tasks(5)).unwrap();
    let answers: Vec<String> = bundled_qualification().into_iter().map(|i| i.answer).collect();
    for w in 0..30 {
        let worker = format!("w{w}");
        for a in &answers {
            let v = service.next_task(&worker).unwrap();
            service
                .submit(&worker, &v.task_id, ExportLabel::Choice(a.clone()))
                .unwrap();
        }
    }
    // every worker grabs tasks concurrently and holds them
    let mut handles = Vec::new();
    for w in 0..30 {
        let service = service.clone();
        handles.push(tokio::spawn(async move { service.next_task(&format!("w{w}")).ok() }));
    }
    let mut reserved = 0;
    for h in handles {
        if h.await.unwrap().is_some() {
            reserved += 1;
        }
    }
    assert_eq!(reserved, 15);
    let mut live: HashMap<String, usize> = HashMap::new();
    for a in service.assignments() {
        if a.state == AssignmentState::Pending {
            *live.entry(a.task_id).or_default() += 1;
        }
    }
    assert!(live.values().all(|&n| n == 3));
}
