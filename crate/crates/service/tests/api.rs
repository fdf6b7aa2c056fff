use std::path::Path;
use std::sync::Arc;

use axum::body::Body;
use axum::http::{header, Request, StatusCode};
use axum::Router;
use http_body_util::BodyExt;
use mededge::meddata::{encode_p6, skin_image, Image};
use mededge::modelpack::{pack_bundle, prune_for_inference, FrozenGraph};
use mededge::nn::{desk_dnn, residual_cnn, CnnShape, NetworkGraph};
use mededge_service::api::{
    ApiError, DiagnoseRequest, DiagnoseResponse, DiseaseList, ErrorCode, Health, SkinResponse, SymptomList,
    FINGERPRINT_HEADER, SKIN_FINGERPRINT_HEADER,
};
use mededge_service::{read_log, router, AppState, FsyncPolicy, ServiceConfig};
use serde_json::json;
use tower::ServiceExt;

fn pack(graph: NetworkGraph, path: &Path) {
    let frozen = prune_for_inference(&FrozenGraph { graph, provenance: String::new() }).unwrap();
    pack_bundle(&frozen, true, path).unwrap();
}

struct Fixture {
    dir: tempfile::TempDir,
    cfg: ServiceConfig,
}

impl Fixture {
    fn new(with_skin: bool) -> Self {
        let dir = tempfile::tempdir().unwrap();
        pack(desk_dnn(7).unwrap(), &dir.path().join("desk.emed"));
        let mut text = json!({"symptom_model": "desk.emed", "log_path": "logs/diag.jsonl"});
        if with_skin {
            pack(residual_cnn(CnnShape::DESK, 9).unwrap(), &dir.path().join("skin.emed"));
            text["skin_model"] = json!("skin.emed");
        }
        let cfg = ServiceConfig::parse(&text.to_string(), dir.path()).unwrap();
        Fixture { dir, cfg }
    }

    fn app(&self) -> Router {
        router(Arc::new(AppState::from_config(&self.cfg).unwrap()), None)
    }

    fn log(&self) -> std::path::PathBuf {
        self.dir.path().join("logs/diag.jsonl")
    }
}

async fn send(app: &Router, req: Request<Body>) -> (StatusCode, axum::http::HeaderMap, Vec<u8>) {
    let resp = app.clone().oneshot(req).await.unwrap();
    let status = resp.status();
    let headers = resp.headers().clone();
    let body = resp.into_body().collect().await.unwrap().to_bytes().to_vec();
    (status, headers, body)
}

fn get(uri: &str) -> Request<Body> {
    Request::get(uri).body(Body::empty()).unwrap()
}

fn post_json(uri: &str, body: serde_json::Value) -> Request<Body> {
    Request::post(uri).header(header::CONTENT_TYPE, "application/json").body(Body::from(body.to_string())).unwrap()
}

fn post_bytes(ctype: &str, bytes: Vec<u8>) -> Request<Body> {
    Request::post("/api/skin").header(header::CONTENT_TYPE, ctype).body(Body::from(bytes)).unwrap()
}

#[tokio::test]
async fn symptoms_listed_in_vocabulary_order_and_stable() {
    let f = Fixture::new(false);
    let app = f.app();
    let (s, h, a) = send(&app, get("/api/symptoms")).await;
    assert_eq!(s, StatusCode::OK);
    assert!(h.contains_key(FINGERPRINT_HEADER));
    let list: SymptomList = serde_json::from_slice(&a).unwrap();
    assert_eq!(list.symptoms, mededge::meddata::SymptomVocabulary::desk().names());
    assert_eq!(list.symptoms.len(), 50);
    let (_, _, b) = send(&app, get("/api/symptoms")).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn diseases_carry_treatment_flags() {
    let f = Fixture::new(false);
    let (s, _, body) = send(&f.app(), get("/api/diseases")).await;
    assert_eq!(s, StatusCode::OK);
    let list: DiseaseList = serde_json::from_slice(&body).unwrap();
    let catalog = mededge::meddata::DiseaseCatalog::desk();
    assert_eq!(list.diseases.len(), 100);
    for d in &list.diseases {
        assert_eq!(d.name, catalog.name(d.id));
        assert_eq!(d.has_treatment, !catalog.treatment(d.id).is_empty());
    }
}

#[tokio::test]
async fn diagnose_returns_five_ranked_entries_and_logs_each_call() {
    let f = Fixture::new(false);
    let app = f.app();
    let names = mededge::meddata::SymptomVocabulary::desk().names().to_vec();
    let req = json!({"symptoms": [names[3], names[10]]});
    let (s, h, a) = send(&app, post_json("/api/diagnose", req.clone())).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&a));
    let r: DiagnoseResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.entries.len(), 5);
    assert_eq!(h[FINGERPRINT_HEADER].to_str().unwrap(), r.fingerprint);
    let probs: Vec<f64> = r.entries.iter().map(|e| e.probability.parse().unwrap()).collect();
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    for e in &r.entries {
        let (_, frac) = e.probability.split_once('.').unwrap();
        assert_eq!(frac.len(), 6);
    }
    assert_eq!(r.entries.iter().map(|e| e.rank).collect::<Vec<_>>(), vec![1, 2, 3, 4, 5]);

    let (_, _, b) = send(&app, post_json("/api/diagnose", req)).await;
    assert_eq!(a, b);
    let log = read_log(&f.log()).unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].entries, r.entries);
    assert_eq!(log[0].request.symptoms, vec![names[3].clone(), names[10].clone()]);
    assert!(chrono::DateTime::parse_from_rfc3339(&log[1].timestamp).is_ok());
}

#[tokio::test]
async fn explicit_k_is_honored() {
    let f = Fixture::new(false);
    let names = mededge::meddata::SymptomVocabulary::desk().names().to_vec();
    let (s, _, body) = send(&f.app(), post_json("/api/diagnose", json!({"symptoms": [names[0]], "k": 20}))).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(serde_json::from_slice::<DiagnoseResponse>(&body).unwrap().entries.len(), 20);
}

async fn expect_error(app: &Router, req: Request<Body>, status: StatusCode, code: ErrorCode) -> ApiError {
    let (s, h, body) = send(app, req).await;
    assert_eq!(s, status, "{}", String::from_utf8_lossy(&body));
    assert!(h.contains_key(FINGERPRINT_HEADER));
    let e: ApiError = serde_json::from_slice(&body).unwrap();
    assert_eq!(e.code, code);
    assert!(!e.message.is_empty());
    e
}

#[tokio::test]
async fn misspelled_symptom_is_listed() {
    let f = Fixture::new(false);
    let names = mededge::meddata::SymptomVocabulary::desk().names().to_vec();
    let app = f.app();
    let e = expect_error(
        &app,
        post_json("/api/diagnose", json!({"symptoms": ["fevr", names[0]]})),
        StatusCode::UNPROCESSABLE_ENTITY,
        ErrorCode::UnknownSymptoms,
    )
    .await;
    assert_eq!(e.fields, vec!["fevr"]);
    assert!(!f.log().exists() || read_log(&f.log()).unwrap().is_empty());
}

#[tokio::test]
async fn request_validation_errors() {
    let f = Fixture::new(false);
    let app = f.app();
    let name = mededge::meddata::SymptomVocabulary::desk().names()[0].clone();
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    expect_error(&app, post_json("/api/diagnose", json!({"symptoms": []})), unprocessable, ErrorCode::EmptySymptoms).await;
    for k in [0, 21] {
        expect_error(&app, post_json("/api/diagnose", json!({"symptoms": [name], "k": k})), unprocessable, ErrorCode::InvalidK)
            .await;
    }
    let many: Vec<String> = (0..51).map(|_| name.clone()).collect();
    expect_error(&app, post_json("/api/diagnose", json!({"symptoms": many})), unprocessable, ErrorCode::TooManySymptoms).await;
    let bad = Request::post("/api/diagnose").body(Body::from("{not json")).unwrap();
    expect_error(&app, bad, StatusCode::BAD_REQUEST, ErrorCode::MalformedRequest).await;
    expect_error(&app, post_json("/api/diagnose", json!({"symptoms": [name], "extra": 1})), StatusCode::BAD_REQUEST, ErrorCode::MalformedRequest)
        .await;
    expect_error(&app, post_json("/api/diagnose", json!({"symptoms": [name], "k": -1})), StatusCode::BAD_REQUEST, ErrorCode::MalformedRequest)
        .await;
    expect_error(&app, get("/api/nope"), StatusCode::NOT_FOUND, ErrorCode::NotFound).await;
}

#[tokio::test]
async fn skin_upload_ranks_all_classes() {
    let f = Fixture::new(true);
    let app = f.app();
    let img = encode_p6(&skin_image(4, 11).unwrap());
    let (s, h, a) = send(&app, post_bytes("application/octet-stream", img.clone())).await;
    assert_eq!(s, StatusCode::OK, "{}", String::from_utf8_lossy(&a));
    assert!(h.contains_key(SKIN_FINGERPRINT_HEADER));
    let r: SkinResponse = serde_json::from_slice(&a).unwrap();
    assert_eq!(r.classes.len(), 26);
    let probs: Vec<f64> = r.classes.iter().map(|c| c.probability.parse().unwrap()).collect();
    assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-5);
    assert!(probs.windows(2).all(|w| w[0] >= w[1]));
    let mut ids: Vec<usize> = r.classes.iter().map(|c| c.class_id).collect();
    ids.sort_unstable();
    assert_eq!(ids, (0..26).collect::<Vec<_>>());
    let (_, _, b) = send(&app, post_bytes("application/octet-stream", img)).await;
    assert_eq!(a, b);
}

#[tokio::test]
async fn bad_skin_uploads_get_415() {
    let f = Fixture::new(true);
    let app = f.app();
    let media = StatusCode::UNSUPPORTED_MEDIA_TYPE;
    let e = expect_error(&app, post_bytes("application/octet-stream", b"hello, not an image\n".to_vec()), media, ErrorCode::UnsupportedMediaType)
        .await;
    assert!(e.message.contains("P6"));
    let small = encode_p6(&Image::filled(16, 16, [9, 9, 9]));
    let e = expect_error(&app, post_bytes("application/octet-stream", small), media, ErrorCode::UnsupportedMediaType).await;
    assert!(e.message.contains("32x32"), "{}", e.message);
    let ok = encode_p6(&Image::filled(32, 32, [9, 9, 9]));
    expect_error(&app, post_bytes("text/plain", ok), media, ErrorCode::UnsupportedMediaType).await;
}

#[tokio::test]
async fn skin_without_model_is_unavailable() {
    let f = Fixture::new(false);
    let ok = encode_p6(&Image::filled(32, 32, [9, 9, 9]));
    expect_error(&f.app(), post_bytes("application/octet-stream", ok), StatusCode::SERVICE_UNAVAILABLE, ErrorCode::SkinModelUnavailable)
        .await;
}

#[tokio::test]
async fn health_reports_fingerprints() {
    let f = Fixture::new(true);
    let (s, h, body) = send(&f.app(), get("/api/health")).await;
    assert_eq!(s, StatusCode::OK);
    let health: Health = serde_json::from_slice(&body).unwrap();
    assert_eq!(health.status, "ok");
    assert_eq!(h[FINGERPRINT_HEADER].to_str().unwrap(), health.models.symptom);
    assert_eq!(h[SKIN_FINGERPRINT_HEADER].to_str().unwrap(), health.models.skin.unwrap());
}

#[tokio::test]
async fn restart_keeps_log_and_answers() {
    let f = Fixture::new(false);
    let names = mededge::meddata::SymptomVocabulary::desk().names().to_vec();
    let req = json!({"symptoms": [names[1], names[2], names[5]], "k": 3});
    let mut bodies = Vec::new();
    for _ in 0..2 {
        let app = f.app();
        let (s, _, b) = send(&app, post_json("/api/diagnose", req.clone())).await;
        assert_eq!(s, StatusCode::OK);
        bodies.push(b);
        drop(app);
    }
    assert_eq!(bodies[0], bodies[1]);
    let log = read_log(&f.log()).unwrap();
    assert_eq!(log.len(), 2);
    assert_eq!(log[0].entries, log[1].entries);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn concurrent_requests_write_whole_lines() {
    let f = Fixture::new(false);
    let app = f.app();
    let names = mededge::meddata::SymptomVocabulary::desk().names().to_vec();
    let mut tasks = Vec::new();
    for i in 0..64 {
        let app = app.clone();
        let req = DiagnoseRequest { symptoms: vec![names[i % 50].clone(), names[(i * 7 + 1) % 50].clone()], k: Some(1 + i % 20) };
        tasks.push(tokio::spawn(async move {
            let (s, _, _) = send(&app, post_json("/api/diagnose", serde_json::to_value(&req).unwrap())).await;
            assert_eq!(s, StatusCode::OK);
            req
        }));
    }
    let mut sent = Vec::new();
    for t in tasks {
        sent.push(t.await.unwrap());
    }
    let text = std::fs::read_to_string(f.log()).unwrap();
    assert!(text.ends_with('\n'));
    let log = read_log(&f.log()).unwrap();
    assert_eq!(log.len(), 64);
    for entry in &log {
        assert_eq!(entry.entries.len(), entry.request.k.unwrap());
        assert!(sent.contains(&entry.request));
    }
}

#[tokio::test]
async fn unwritable_log_fails_request_but_not_service() {
    let f = Fixture::new(false);
    let mut cfg = f.cfg.clone();
    cfg.log_path = Path::new("/dev/full").to_path_buf();
    cfg.fsync = FsyncPolicy::Never;
    let app = router(Arc::new(AppState::from_config(&cfg).unwrap()), None);
    let name = mededge::meddata::SymptomVocabulary::desk().names()[0].clone();
    expect_error(&app, post_json("/api/diagnose", json!({"symptoms": [name]})), StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::LogWriteFailed)
        .await;
    let (s, _, _) = send(&app, get("/api/symptoms")).await;
    assert_eq!(s, StatusCode::OK);
}

#[test]
fn config_resolves_relative_paths() {
    let cfg = ServiceConfig::parse(r#"{"symptom_model": "m.emed", "fsync": "never", "bind": "0.0.0.0:9000"}"#, Path::new("/srv/x"))
        .unwrap();
    assert_eq!(cfg.symptom_model, Path::new("/srv/x/m.emed"));
    assert_eq!(cfg.log_path, Path::new("/srv/x/diagnoses.jsonl"));
    assert_eq!(cfg.fsync, FsyncPolicy::Never);
    assert!(ServiceConfig::parse(r#"{"symptom_model": "m", "bogus": 1}"#, Path::new("/")).is_err());
}

#[tokio::test]
async fn static_dir_serves_ui_assets() {
    let f = Fixture::new(false);
    let web = f.dir.path().join("web");
    std::fs::create_dir_all(&web).unwrap();
    std::fs::write(web.join("index.html"), "<html>ui</html>").unwrap();
    let app = router(Arc::new(AppState::from_config(&f.cfg).unwrap()), Some(&web));
    let (s, h, body) = send(&app, get("/index.html")).await;
    assert_eq!(s, StatusCode::OK);
    assert_eq!(body, b"<html>ui</html>");
    assert!(h.contains_key(FINGERPRINT_HEADER));
    let (s, _, _) = send(&app, get("/api/symptoms")).await;
    assert_eq!(s, StatusCode::OK);
}
