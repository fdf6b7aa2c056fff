//! Wire types. Field names are snake_case; probabilities are 6-place decimal strings.

use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::Json;
use serde::{Deserialize, Serialize};

pub const MAX_K: usize = 20;
pub const DEFAULT_K: usize = 5;
pub const FINGERPRINT_HEADER: &str = "x-model-fingerprint";
pub const SKIN_FINGERPRINT_HEADER: &str = "x-skin-model-fingerprint";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiagnoseRequest {
    pub symptoms: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireEntry {
    pub rank: usize,
    pub disease_id: usize,
    pub disease: String,
    pub probability: String,
    pub treatment: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnoseResponse {
    pub entries: Vec<WireEntry>,
    pub symptoms: Vec<String>,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SymptomList {
    pub symptoms: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseInfo {
    pub id: usize,
    pub name: String,
    pub has_treatment: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiseaseList {
    pub diseases: Vec<DiseaseInfo>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WireClass {
    pub rank: usize,
    pub class_id: usize,
    pub name: String,
    pub probability: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkinResponse {
    pub classes: Vec<WireClass>,
    pub fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelFingerprints {
    pub symptom: String,
    pub skin: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Health {
    pub status: String,
    pub models: ModelFingerprints,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    MalformedRequest,
    EmptySymptoms,
    UnknownSymptoms,
    TooManySymptoms,
    InvalidK,
    UnsupportedMediaType,
    SkinModelUnavailable,
    NotFound,
    LogWriteFailed,
    Internal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    pub code: ErrorCode,
    pub message: String,
    #[serde(default)]
    pub fields: Vec<String>,
    #[serde(skip)]
    pub status: u16,
}

impl ApiError {
    pub fn new(status: StatusCode, code: ErrorCode, message: impl Into<String>) -> Self {
        ApiError { code, message: message.into(), fields: Vec::new(), status: status.as_u16() }
    }

    pub fn with_fields(mut self, fields: Vec<String>) -> Self {
        self.fields = fields;
        self
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

pub fn format_probability(p: f64) -> String {
    format!("{:.6}", p)
}

/// Rounds a distribution to millionths so the strings still add up to the
/// rounded total (largest-remainder apportionment).
pub fn apportion_micro(probs: &[f64]) -> Vec<u64> {
    let total: f64 = probs.iter().sum();
    let target = (total * 1e6).round() as u64;
    let scaled: Vec<f64> = probs.iter().map(|p| p * 1e6).collect();
    let mut out: Vec<u64> = scaled.iter().map(|s| s.floor() as u64).collect();
    let assigned: u64 = out.iter().sum();
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| (scaled[b] - scaled[b].floor()).total_cmp(&(scaled[a] - scaled[a].floor())).then(a.cmp(&b)));
    for &i in order.iter().take(target.saturating_sub(assigned) as usize) {
        out[i] += 1;
    }
    out
}

pub fn micro_to_string(m: u64) -> String {
    format!("{}.{:06}", m / 1_000_000, m % 1_000_000)
}
