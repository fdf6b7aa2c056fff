use std::path::Path;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Request, State};
use axum::http::{header, HeaderMap, HeaderValue, StatusCode};
use axum::middleware::{self, Next};
use axum::response::Response;
use axum::routing::{get, post};
use axum::{Json, Router};
use mededge::infer::{classify_image, diagnose, load_bundle, CachePolicy, DiagnoseOptions, ModelHandle};
use mededge::meddata::{parse_p6, DiseaseCatalog, SymptomVocabulary};
use tower_http::services::ServeDir;

use crate::api::*;
use crate::config::ServiceConfig;
use crate::log::{DiagnosisLog, DiagnosisLogEntry};
use crate::ServiceError;

pub const P6_FORMAT: &str = "application/octet-stream body holding a binary PPM (P6, maxval 255)";

/// Everything a request handler reads. Immutable after startup apart from the log.
#[derive(Debug)]
pub struct AppState {
    pub symptom_model: ModelHandle,
    pub skin_model: Option<ModelHandle>,
    pub vocabulary: SymptomVocabulary,
    pub catalog: DiseaseCatalog,
    pub skin_classes: DiseaseCatalog,
    pub log: DiagnosisLog,
}

impl AppState {
    pub fn from_config(cfg: &ServiceConfig) -> Result<Self, ServiceError> {
        let policy: CachePolicy = match &cfg.cache_policy {
            Some(p) => p.parse()?,
            None => CachePolicy::None,
        };
        let symptom_model = load_bundle(&cfg.symptom_model, policy)?;
        let skin_model = cfg.skin_model.as_deref().map(|p| load_bundle(p, policy)).transpose()?;
        let vocabulary = match &cfg.vocabulary {
            Some(p) => SymptomVocabulary::load(p)?,
            None => SymptomVocabulary::desk(),
        };
        let mut catalog = match &cfg.catalog {
            Some(p) => DiseaseCatalog::load(p)?,
            None => DiseaseCatalog::desk(),
        };
        if let Some(p) = &cfg.treatments {
            let table = std::fs::read_to_string(p).map_err(|e| ServiceError::io(p.clone(), e))?;
            catalog.apply_treatments(&table)?;
        }
        let log = DiagnosisLog::open(&cfg.log_path, cfg.fsync).map_err(|e| ServiceError::io(cfg.log_path.clone(), e))?;
        Self::new(symptom_model, skin_model, vocabulary, catalog, log)
    }

    pub fn new(
        symptom_model: ModelHandle,
        skin_model: Option<ModelHandle>,
        vocabulary: SymptomVocabulary,
        catalog: DiseaseCatalog,
        log: DiagnosisLog,
    ) -> Result<Self, ServiceError> {
        if symptom_model.input_dim() != vocabulary.len() || symptom_model.output_dim() != catalog.len() {
            return Err(ServiceError::Config(format!(
                "symptom model maps {} inputs to {} classes; vocabulary has {} and catalog {}",
                symptom_model.input_dim(),
                symptom_model.output_dim(),
                vocabulary.len(),
                catalog.len()
            )));
        }
        let skin_classes = DiseaseCatalog::skin();
        if let Some(m) = &skin_model {
            if m.output_dim() != skin_classes.len() || m.input_shape().len() != 3 {
                return Err(ServiceError::Config(format!(
                    "skin model must map H×W×3 images to {} classes",
                    skin_classes.len()
                )));
            }
        }
        Ok(AppState { symptom_model, skin_model, vocabulary, catalog, skin_classes, log })
    }
}

pub fn router(state: Arc<AppState>, static_dir: Option<&Path>) -> Router {
    let api = Router::new()
        .route("/api/symptoms", get(list_symptoms))
        .route("/api/diseases", get(list_diseases))
        .route("/api/diagnose", post(handle_diagnose))
        .route("/api/skin", post(handle_skin))
        .route("/api/health", get(health));
    let api = match static_dir {
        Some(dir) => api.fallback_service(ServeDir::new(dir)),
        None => api.fallback(not_found),
    };
    api.layer(middleware::from_fn_with_state(state.clone(), fingerprint_headers)).with_state(state)
}

async fn fingerprint_headers(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    let mut resp = next.run(req).await;
    let h = resp.headers_mut();
    if let Ok(v) = HeaderValue::from_str(state.symptom_model.fingerprint()) {
        h.insert(FINGERPRINT_HEADER, v);
    }
    if let Some(v) = state.skin_model.as_ref().and_then(|m| HeaderValue::from_str(m.fingerprint()).ok()) {
        h.insert(SKIN_FINGERPRINT_HEADER, v);
    }
    resp
}

async fn not_found() -> ApiError {
    ApiError::new(StatusCode::NOT_FOUND, ErrorCode::NotFound, "no such endpoint")
}

async fn list_symptoms(State(state): State<Arc<AppState>>) -> Json<SymptomList> {
    Json(SymptomList { symptoms: state.vocabulary.names().to_vec() })
}

async fn list_diseases(State(state): State<Arc<AppState>>) -> Json<DiseaseList> {
    let c = &state.catalog;
    let diseases = (0..c.len())
        .map(|id| DiseaseInfo { id, name: c.name(id).to_string(), has_treatment: !c.treatment(id).is_empty() })
        .collect();
    Json(DiseaseList { diseases })
}

async fn health(State(state): State<Arc<AppState>>) -> Json<Health> {
    Json(Health {
        status: "ok".into(),
        models: ModelFingerprints {
            symptom: state.symptom_model.fingerprint().to_string(),
            skin: state.skin_model.as_ref().map(|m| m.fingerprint().to_string()),
        },
    })
}

/// Checks a request against everything the core would reject.
pub fn validate_request(req: &DiagnoseRequest, vocab: &SymptomVocabulary) -> Result<usize, ApiError> {
    let unprocessable = StatusCode::UNPROCESSABLE_ENTITY;
    let k = req.k.unwrap_or(DEFAULT_K);
    if !(1..=MAX_K).contains(&k) {
        return Err(ApiError::new(unprocessable, ErrorCode::InvalidK, format!("k must be between 1 and {MAX_K}, got {k}"))
            .with_fields(vec!["k".into()]));
    }
    if req.symptoms.is_empty() {
        return Err(ApiError::new(unprocessable, ErrorCode::EmptySymptoms, "select at least one symptom")
            .with_fields(vec!["symptoms".into()]));
    }
    if req.symptoms.len() > vocab.len() {
        return Err(ApiError::new(
            unprocessable,
            ErrorCode::TooManySymptoms,
            format!("at most {} symptoms may be given, got {}", vocab.len(), req.symptoms.len()),
        )
        .with_fields(vec!["symptoms".into()]));
    }
    let unknown: Vec<String> = req.symptoms.iter().filter(|s| vocab.index_of(s).is_none()).cloned().collect();
    if !unknown.is_empty() {
        return Err(ApiError::new(unprocessable, ErrorCode::UnknownSymptoms, format!("unknown symptoms: {}", unknown.join(", ")))
            .with_fields(unknown));
    }
    Ok(k)
}

async fn handle_diagnose(State(state): State<Arc<AppState>>, body: Bytes) -> Result<Json<DiagnoseResponse>, ApiError> {
    let req: DiagnoseRequest = serde_json::from_slice(&body).map_err(|e| {
        ApiError::new(StatusCode::BAD_REQUEST, ErrorCode::MalformedRequest, format!("expected {{\"symptoms\": [...], \"k\": n}}: {e}"))
    })?;
    let k = validate_request(&req, &state.vocabulary)?;
    tokio::task::spawn_blocking(move || run_diagnosis(&state, req, k)).await.map_err(|e| internal(e.to_string()))?
}

fn run_diagnosis(state: &AppState, req: DiagnoseRequest, k: usize) -> Result<Json<DiagnoseResponse>, ApiError> {
    let report = diagnose(&state.symptom_model, &req.symptoms, &state.vocabulary, &state.catalog, DiagnoseOptions {
        k,
        allow_empty: false,
    })
    .map_err(|e| internal(e.to_string()))?;
    let entries: Vec<WireEntry> = report
        .entries
        .into_iter()
        .enumerate()
        .map(|(i, e)| WireEntry {
            rank: i + 1,
            disease_id: e.disease_id,
            disease: e.disease,
            probability: format_probability(f64::from(e.probability)),
            treatment: e.treatment,
        })
        .collect();
    let entry = DiagnosisLogEntry {
        timestamp: chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Micros, true),
        request: req,
        entries: entries.clone(),
        fingerprint: report.fingerprint.clone(),
    };
    state.log.append(&entry).map_err(|e| {
        ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::LogWriteFailed, format!("diagnosis log write failed: {e}"))
    })?;
    Ok(Json(DiagnoseResponse { entries, symptoms: report.symptoms, fingerprint: report.fingerprint }))
}

fn unsupported(detail: impl std::fmt::Display) -> ApiError {
    ApiError::new(StatusCode::UNSUPPORTED_MEDIA_TYPE, ErrorCode::UnsupportedMediaType, format!("{detail}; expected {P6_FORMAT}"))
}

async fn handle_skin(State(state): State<Arc<AppState>>, headers: HeaderMap, body: Bytes) -> Result<Json<SkinResponse>, ApiError> {
    if state.skin_model.is_none() {
        return Err(ApiError::new(StatusCode::SERVICE_UNAVAILABLE, ErrorCode::SkinModelUnavailable, "no skin model is loaded"));
    }
    let ctype = headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()).unwrap_or("");
    let mime = ctype.split(';').next().unwrap_or("").trim();
    if !mime.eq_ignore_ascii_case("application/octet-stream") {
        return Err(unsupported(format!("content type {ctype:?} not accepted")));
    }
    let image = parse_p6(&body).map_err(unsupported)?;
    tokio::task::spawn_blocking(move || {
        let model = state.skin_model.as_ref().expect("checked above");
        let dims = model.input_shape();
        if dims != [image.height(), image.width(), 3] {
            return Err(unsupported(format!(
                "image is {}x{}, model expects {}x{}",
                image.width(),
                image.height(),
                dims[1],
                dims[0]
            )));
        }
        let scores = classify_image(model, &image).map_err(|e| internal(e.to_string()))?;
        let micro = apportion_micro(&scores.iter().map(|s| f64::from(s.probability)).collect::<Vec<_>>());
        let classes = scores
            .iter()
            .zip(micro)
            .enumerate()
            .map(|(i, (s, m))| WireClass {
                rank: i + 1,
                class_id: s.class_id,
                name: state.skin_classes.name(s.class_id).to_string(),
                probability: micro_to_string(m),
            })
            .collect();
        Ok(Json(SkinResponse { classes, fingerprint: model.fingerprint().to_string() }))
    })
    .await
    .map_err(|e| internal(e.to_string()))?
}

fn internal(msg: String) -> ApiError {
    ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, ErrorCode::Internal, msg)
}

impl From<ServiceError> for ApiError {
    fn from(e: ServiceError) -> Self {
        internal(e.to_string())
    }
}

