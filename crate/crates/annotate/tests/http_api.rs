use std::path::Path;
use std::sync::Arc;

use cfsim::pipeline::human::{AnnotationTaskSpec, TaskPayload};
use cfsim::{Label, TaskInput};
use cfsim_annotate::{
    bundled_qualification, router, AnnotationService, ApiError, ServiceConfig, SystemClock, TaskView,
};
use reqwest::StatusCode;
use serde_json::json;

async fn start(secret: Option<&str>) -> String {
    let service = Arc::new(AnnotationService::new(ServiceConfig::default(), Arc::new(SystemClock)).unwrap());
    service
        .add_tasks(vec![AnnotationTaskSpec {
            task_id: "simulation:x".into(),
            run_id: Some("r".into()),
            counterfactual_id: Some("x".into()),
            instance_id: None,
            system_id: None,
            payload: TaskPayload::Simulation {
                input: TaskInput::question("Can eagles fly?"),
                explanation: "Eagles are birds.".into(),
                output: Label::Yes,
                counterfactual: TaskInput::question("Can hawks fly?"),
            },
        }])
        .unwrap();
    let static_dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("static");
    let app = router(service, secret.map(String::from), Some(static_dir));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    base
}

async fn post(base: &str, body: serde_json::Value) -> (StatusCode, serde_json::Value) {
    let resp = reqwest::Client::new()
        .post(format!("{base}/api/judgments"))
        .json(&body)
        .send()
        .await
        .unwrap();
    (resp.status(), resp.json().await.unwrap())
}

#[tokio::test]
async fn error_codes() {
    let base = start(None).await;
    let next = |w: &'static str| {
        let base = base.clone();
        async move { reqwest::get(format!("{base}/api/tasks/next?worker={w}")).await.unwrap() }
    };

    let (status, body) = post(&base, json!({"worker": "w", "task_id": "simulation:x", "label": "yes"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "not_assigned");

    for item in bundled_qualification() {
        let view: TaskView = next("w").await.json().await.unwrap();
        post(
            &base,
            json!({"worker": "w", "task_id": view.task_id, "label": item.answer}),
        )
        .await;
    }
    let view: TaskView = next("w").await.json().await.unwrap();
    assert_eq!(view.task_id, "simulation:x");

    let (status, body) = post(&base, json!({"worker": "w", "task_id": "simulation:x", "label": 4})).await;
    assert_eq!(status, StatusCode::UNPROCESSABLE_ENTITY);
    assert_eq!(body["error"], "bad_label_shape");

    let (status, _) = post(
        &base,
        json!({"worker": "w", "task_id": "simulation:x", "label": "cannot_tell"}),
    )
    .await;
    assert_eq!(status, StatusCode::OK);
    let (status, body) = post(&base, json!({"worker": "w", "task_id": "simulation:x", "label": "yes"})).await;
    assert_eq!(status, StatusCode::CONFLICT);
    assert_eq!(body["error"], "already_submitted");

    let resp = next("w").await;
    assert_eq!(resp.status(), StatusCode::NOT_FOUND);
    let err: ApiError = resp.json().await.unwrap();
    assert_eq!(err.error, "no_work");

    let export = reqwest::get(format!("{base}/api/export?run=r"))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert_eq!(export.lines().count(), 1);
    assert!(export.contains("\"label\":\"cannot_tell\""));
    let empty = reqwest::get(format!("{base}/api/export?run=other"))
        .await
        .unwrap()
        .text()
        .await
        .unwrap();
    assert!(empty.is_empty());
}

#[tokio::test]
async fn secret_guards_the_api_but_not_the_page() {
    let base = start(Some("k")).await;
    let resp = reqwest::get(format!("{base}/api/progress")).await.unwrap();
    assert_eq!(resp.status(), StatusCode::UNAUTHORIZED);
    let ok = reqwest::Client::new()
        .get(format!("{base}/api/progress"))
        .header("x-annotation-secret", "k")
        .send()
        .await
        .unwrap();
    assert_eq!(ok.status(), StatusCode::OK);
    let page = reqwest::get(format!("{base}/index.html")).await.unwrap();
    assert_eq!(page.status(), StatusCode::OK);
    assert!(page.text().await.unwrap().contains("/api/tasks/next"));
}
