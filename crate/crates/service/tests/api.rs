mod common;

use std::sync::Arc;
use std::time::Duration;

use axum::body::Body;
use axum::http::{Request, StatusCode};
use axum::Router;
use base64::Engine;
use doclab_core::annotation::QueueState;
use doclab_core::raster::decode_pgm;
use doclab_core::rle::{self, RleMask};
use doclab_service::server::{router, AppState};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

async fn call(app: &Router, method: &str, uri: &str, body: Option<Value>) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    raw(app, req).await
}

async fn raw(app: &Router, req: Request<Body>) -> (StatusCode, Value) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    let v = if bytes.is_empty() {
        Value::Null
    } else {
        serde_json::from_slice(&bytes).unwrap()
    };
    (status, v)
}

fn label_body(id: &str, rects: Value) -> Value {
    json!({ "sample_id": id, "rectangles": rects })
}

fn app_for(dir: &doclab_core::experiment::ExperimentDir) -> Router {
    router(Arc::new(AppState::load(dir.clone()).unwrap()))
}

#[tokio::test]
async fn queue_and_sample_view() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _, out) = common::suspended(tmp.path());
    let app = app_for(&dir);

    let (s, q) = call(&app, "GET", "/api/queue", None).await;
    assert_eq!(s, StatusCode::OK);
    let q: QueueState = serde_json::from_value(q).unwrap();
    let ids: Vec<&str> = q.pending.iter().map(|p| p.id.as_str()).collect();
    let expect: Vec<&str> = out["pending"]
        .as_array()
        .unwrap()
        .iter()
        .map(|v| v.as_str().unwrap())
        .collect();
    assert_eq!(ids, expect);

    for item in &q.pending {
        let (s, v) = call(&app, "GET", &format!("/api/sample/{}", item.id), None).await;
        assert_eq!(s, StatusCode::OK);
        let map: RleMask = serde_json::from_value(v["disagreement_map"].clone()).unwrap();
        let values = rle::decode_values(&map).unwrap();
        let ones = values.iter().filter(|&&b| b == 1).count() as f64;
        let score = v["score"].as_f64().unwrap();
        // the map fraction, the reported score and the selection score
        // computed by the collaboration module all agree
        assert!((ones / values.len() as f64 - score).abs() < 1e-12);
        assert!((score - item.disagreement).abs() < 1e-12);

        let main: RleMask = serde_json::from_value(v["pred_main"].clone()).unwrap();
        let co: RleMask = serde_json::from_value(v["pred_co"].clone()).unwrap();
        let (main, co) = (rle::decode(&main).unwrap(), rle::decode(&co).unwrap());
        let differ = main
            .data()
            .iter()
            .zip(co.data())
            .filter(|(a, b)| a != b)
            .count() as f64;
        assert_eq!(differ, ones);

        let pgm = base64::engine::general_purpose::STANDARD
            .decode(v["image"].as_str().unwrap())
            .unwrap();
        let (w, h, _) = decode_pgm(&pgm).unwrap();
        assert_eq!((w, h), (main.width(), main.height()));
    }

    let (s, v) = call(&app, "GET", "/api/sample/no-such-page", None).await;
    assert_eq!(s, StatusCode::NOT_FOUND);
    assert_eq!(v["error"]["kind"], "not_found");
}

#[tokio::test]
async fn labels_are_rasterized_and_completed_once() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, m, _) = common::suspended(tmp.path());
    let app = app_for(&dir);
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let id = q["pending"][0]["id"].as_str().unwrap().to_string();
    let (w, h) = (m.novel.config.page_width_px, m.novel.config.page_height_px);

    let body = label_body(
        &id,
        json!([{ "class_id": 0, "x": 0, "y": 0, "w": w, "h": h }]),
    );
    let (s, v) = call(
        &app,
        "POST",
        &format!("/api/sample/{id}/labels"),
        Some(body.clone()),
    )
    .await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let q: QueueState = serde_json::from_value(v).unwrap();
    assert!(q.is_completed(&id) && !q.is_pending(&id));
    let mask = dir.read_label(&id).unwrap();
    assert!(mask.data().iter().all(|&c| c == 0));
    assert!(dir.record_path(&id).exists());

    let (s, _) = call(
        &app,
        "POST",
        &format!("/api/sample/{id}/labels"),
        Some(body),
    )
    .await;
    assert_eq!(s, StatusCode::CONFLICT);
}

#[tokio::test]
async fn rectangle_area_is_painted() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _, _) = common::suspended(tmp.path());
    let app = app_for(&dir);
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let id = q["pending"][0]["id"].as_str().unwrap().to_string();
    let rects = json!([
        { "class_id": 1, "x": 2, "y": 3, "w": 10, "h": 5 },
        { "class_id": 2, "x": 8, "y": 0, "w": 4, "h": 20 },
    ]);
    let (s, _) = call(
        &app,
        "POST",
        &format!("/api/sample/{id}/labels"),
        Some(label_body(&id, rects)),
    )
    .await;
    assert_eq!(s, StatusCode::OK);
    let hist = dir.read_label(&id).unwrap().histogram();
    // figure 10x5 minus the 4x5 overlap taken by the later table
    assert_eq!(hist[1], 30);
    assert_eq!(hist[2], 80);
}

#[tokio::test]
async fn malformed_submissions_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _, _) = common::suspended(tmp.path());
    let app = app_for(&dir);
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let id = q["pending"][0]["id"].as_str().unwrap().to_string();
    let uri = format!("/api/sample/{id}/labels");

    let (s, v) = call(&app, "POST", &uri, Some(json!({ "sample_id": id }))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(
        v["error"]["fields"][0]
            .as_str()
            .unwrap()
            .contains("rectangles"),
        "{v}"
    );

    let req = Request::builder()
        .method("POST")
        .uri(&uri)
        .body(Body::from("{not json"))
        .unwrap();
    assert_eq!(raw(&app, req).await.0, StatusCode::BAD_REQUEST);

    let (s, v) = call(
        &app,
        "POST",
        &uri,
        Some(label_body("someone-else", json!([]))),
    )
    .await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    assert!(v["error"]["fields"][0]
        .as_str()
        .unwrap()
        .starts_with("sample_id"));

    let bad = json!([
        { "class_id": 1, "x": 0, "y": 0, "w": 1, "h": 1 },
        { "class_id": 9, "x": 39, "y": 0, "w": 2, "h": 1 },
    ]);
    let (s, v) = call(&app, "POST", &uri, Some(label_body(&id, bad))).await;
    assert_eq!(s, StatusCode::BAD_REQUEST);
    let fields: Vec<&str> = v["error"]["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f.as_str().unwrap())
        .collect();
    assert_eq!(fields.len(), 2);
    assert!(fields.iter().all(|f| f.starts_with("rectangles[1]")));

    let (s, _) = call(
        &app,
        "POST",
        "/api/sample/nope/labels",
        Some(label_body("nope", json!([]))),
    )
    .await;
    assert_eq!(s, StatusCode::NOT_FOUND);

    // nothing was recorded
    let (_, q2) = call(&app, "GET", "/api/queue", None).await;
    assert_eq!(q, q2);
}

#[tokio::test]
async fn non_queued_pool_sample_conflicts() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, m, _) = common::suspended(tmp.path());
    let app = app_for(&dir);
    let q = dir.read_queue().unwrap().unwrap();
    let pool = dir.load_pool(&m).unwrap();
    if let Some(free) = pool.iter().find(|s| !q.is_pending(&s.id)) {
        let (s, _) = call(
            &app,
            "POST",
            &format!("/api/sample/{}/labels", free.id),
            Some(label_body(&free.id, json!([]))),
        )
        .await;
        assert_eq!(s, StatusCode::CONFLICT);
    }
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_submissions_for_one_id() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _, _) = common::suspended(tmp.path());
    let app = app_for(&dir);
    let (_, q) = call(&app, "GET", "/api/queue", None).await;
    let id = q["pending"][0]["id"].as_str().unwrap().to_string();
    let uri = format!("/api/sample/{id}/labels");
    let body = label_body(
        &id,
        json!([{ "class_id": 3, "x": 0, "y": 0, "w": 4, "h": 4 }]),
    );
    let (a, b) = tokio::join!(
        call(&app, "POST", &uri, Some(body.clone())),
        call(&app, "POST", &uri, Some(body.clone()))
    );
    let mut statuses = [a.0, b.0];
    statuses.sort();
    assert_eq!(statuses, [StatusCode::OK, StatusCode::CONFLICT]);
}

#[tokio::test]
async fn resume_runs_the_update_once_the_queue_is_empty() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, m, _) = common::suspended(tmp.path());
    let app = app_for(&dir);

    let (s, _) = call(&app, "POST", "/api/loop/resume", None).await;
    assert_eq!(s, StatusCode::CONFLICT);
    let (_, metrics) = call(&app, "GET", "/api/metrics", None).await;
    assert_eq!(metrics["latest"], Value::Null);

    let pool = dir.load_pool(&m).unwrap();
    let q = dir.read_queue().unwrap().unwrap();
    for item in &q.pending {
        let truth = &pool.iter().find(|s| s.id == item.id).unwrap().mask;
        // one rectangle per pixel reproduces the ground truth exactly
        let rects: Vec<Value> = (0..truth.height())
            .flat_map(|y| (0..truth.width()).map(move |x| (x, y)))
            .map(|(x, y)| json!({ "class_id": truth.get(x, y), "x": x, "y": y, "w": 1, "h": 1 }))
            .collect();
        let (s, _) = call(
            &app,
            "POST",
            &format!("/api/sample/{}/labels", item.id),
            Some(label_body(&item.id, json!(rects))),
        )
        .await;
        assert_eq!(s, StatusCode::OK);
        assert_eq!(&dir.read_label(&item.id).unwrap(), truth);
    }

    let (s, v) = call(&app, "POST", "/api/loop/resume", None).await;
    assert_eq!(s, StatusCode::OK, "{v}");
    let metrics = loop {
        let (_, v) = call(&app, "GET", "/api/metrics", None).await;
        if v["running"] == false {
            break v;
        }
        tokio::time::sleep(Duration::from_millis(50)).await;
    };
    assert_eq!(metrics["last_error"], Value::Null, "{metrics}");
    assert_eq!(metrics["latest"]["status"], "updated");
    assert_eq!(metrics["latest"]["provider"], "human_queue");
    assert_eq!(metrics["latest"]["key_count"], q.pending.len());

    // human labels equal to ground truth give the oracle loop's result
    let oracle_dir = tempfile::tempdir().unwrap();
    let (odir, _) = common::synth(oracle_dir.path());
    doclab_service::cli::run(doclab_service::cli::Command::Loop {
        experiment: odir.root().to_path_buf(),
        provider: doclab_service::cli::ProviderArg::Oracle,
    })
    .unwrap();
    let human: doclab_core::pipeline::LoopReport =
        doclab_core::experiment::read_json(&dir.report_path("loop")).unwrap();
    let oracle: doclab_core::pipeline::LoopReport =
        doclab_core::experiment::read_json(&odir.report_path("loop")).unwrap();
    assert_eq!(human.updated, oracle.updated);
    assert!(dir.checkpoint_path("main_updated").exists());
}

#[tokio::test]
async fn class_palette() {
    let tmp = tempfile::tempdir().unwrap();
    let (dir, _) = common::synth(tmp.path());
    let app = app_for(&dir);
    let (s, v) = call(&app, "GET", "/api/classes", None).await;
    assert_eq!(s, StatusCode::OK);
    let list = v.as_array().unwrap();
    assert_eq!(list.len(), 7);
    let color = |name: &str| {
        list.iter().find(|c| c["name"] == name).unwrap()["color"]
            .as_str()
            .unwrap()
            .to_string()
    };
    assert_eq!(color("background"), "#000000");
    assert_eq!(color("figure"), "#ff0000");
    assert_eq!(color("table"), "#0000ff");
    for t in ["section", "caption", "list", "paragraph"] {
        let c = color(t);
        let ch = |i: usize| u8::from_str_radix(&c[i..i + 2], 16).unwrap();
        // yellow: full red, strong green, weak blue
        assert!(ch(1) == 255 && ch(3) >= 200 && ch(5) <= 128, "{t} is {c}");
    }
}
