use axum::body::Body;
use axum::http::{Request, StatusCode};
use http_body_util::BodyExt;
use serde_json::{json, Value};
use tower::ServiceExt;

use eigenflow::gallery::FlowRef;
use eigenflow::session::{Session, TraceMethod};
use eigenflow::tracker::ZnnConfig;
use eigenflow_cli::server::{router, AppState};

fn session() -> Session {
    let cfg = ZnnConfig {
        tau: 1e-3,
        ..ZnnConfig::default()
    };
    let mut s = Session::new(
        FlowRef::new("stackexchange6", Some(7)),
        -0.3,
        0.1,
        cfg,
        TraceMethod::Znn,
    );
    s.trace(&|_| {}).unwrap();
    s.analyze().unwrap();
    s.infer().unwrap();
    s
}

async fn call(
    app: &axum::Router,
    method: &str,
    uri: &str,
    body: Option<Value>,
) -> (StatusCode, Value) {
    let req = Request::builder().method(method).uri(uri);
    let req = match body {
        Some(b) => req
            .header("content-type", "application/json")
            .body(Body::from(b.to_string()))
            .unwrap(),
        None => req.body(Body::empty()).unwrap(),
    };
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let bytes = resp.into_body().collect().await.unwrap().to_bytes();
    (
        status,
        serde_json::from_slice(&bytes).unwrap_or(Value::Null),
    )
}

#[tokio::test]
async fn read_endpoints() {
    let app = router(AppState::new(session(), None));
    let (st, body) = call(&app, "GET", "/session", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["version"], "1");
    assert_eq!(body["ve"], json!([1, -1, 2, 2, -2, -2]));

    let (st, body) = call(&app, "GET", "/curves", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["curves"].as_array().unwrap().len(), 6);
    assert_eq!(body["crossings"].as_array().unwrap().len(), 9);

    let (st, body) = call(&app, "GET", "/suggestions?gap=0.05", None).await;
    assert_eq!(st, StatusCode::OK);
    assert!(body.is_array());

    let (st, body) = call(&app, "GET", "/status", None).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["phase"], "idle");
}

#[tokio::test]
async fn touch_conflict_and_success() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("s.json");
    let app = router(AppState::new(session(), Some(path.clone())));

    let (st, body) = call(
        &app,
        "POST",
        "/touch",
        Some(json!({ "pairs": [[3, 4], [1, 2]] })),
    )
    .await;
    assert_eq!(st, StatusCode::CONFLICT);
    assert_eq!(body["row"], 2);
    assert_eq!(body["pair"], json!([1, 2]));
    assert!(!path.exists());

    // 3 and 4 share label 2: a consistent no-op merge
    let (st, body) = call(&app, "POST", "/touch", Some(json!({ "pairs": [[3, 4]] }))).await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["ve"], json!([1, -1, 2, 2, -2, -2]));
    assert_eq!(body["touch"], json!([[3, 4]]));
    assert!(path.exists());

    let (st, _) = call(&app, "POST", "/touch", Some(json!({ "pairs": [[2, 2]] }))).await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
}

#[tokio::test]
async fn extend_endpoint() {
    let app = router(AppState::new(session(), None));
    let (st, body) = call(
        &app,
        "POST",
        "/extend",
        Some(json!({ "t0": -0.2, "tf": 0.1 })),
    )
    .await;
    assert_eq!(st, StatusCode::BAD_REQUEST);
    assert!(body["error"].as_str().unwrap().contains("does not contain"));

    let (st, body) = call(
        &app,
        "POST",
        "/extend",
        Some(json!({ "t0": -0.3, "tf": 0.1 })),
    )
    .await;
    assert_eq!(st, StatusCode::OK);
    assert_eq!(body["ve"], json!([1, -1, 2, 2, -2, -2]));
    let (_, session) = call(&app, "GET", "/session", None).await;
    assert_eq!(session["history"].as_array().unwrap().len(), 1);
    let (_, status) = call(&app, "GET", "/status", None).await;
    assert_eq!(status["phase"], "idle");
}
