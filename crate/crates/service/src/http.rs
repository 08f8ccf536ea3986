//! The HTTP API. Every handler checks the bearer token and scope before it
//! reads a body or touches the registry.

use std::collections::BTreeMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use chrono::NaiveDate;
use mpi_core::identity::{DemographicProfile, GuardianReason, Identifier, IdentifierKind, Phn, ProfileField};
use mpi_core::merge::{FieldSource, MergeSource, ReviewItem};
use mpi_core::registry::{Command, Outcome, PatientChanges, RegistryError, SearchRequest, StewardDecision};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::auth::{AuthError, Caller, Scope};
use crate::intake::Encoding;
use crate::service::{Service, ServiceError};
use crate::store::StoreError;

pub struct ApiError(ServiceError);

impl<E: Into<ServiceError>> From<E> for ApiError {
    fn from(e: E) -> Self {
        ApiError(e.into())
    }
}

fn status_for(e: &ServiceError) -> StatusCode {
    match e {
        ServiceError::Auth(AuthError::InsufficientScope(_)) => StatusCode::FORBIDDEN,
        ServiceError::Auth(AuthError::ClientFile(_)) => StatusCode::INTERNAL_SERVER_ERROR,
        ServiceError::Auth(_) => StatusCode::UNAUTHORIZED,
        ServiceError::Malformed(_) => StatusCode::BAD_REQUEST,
        ServiceError::NotFound(_) => StatusCode::NOT_FOUND,
        ServiceError::Storage(_) => StatusCode::INTERNAL_SERVER_ERROR,
        ServiceError::Rejected(r) => match r.code() {
            "UNKNOWN_PHN" | "UNKNOWN_ITEM" | "UNKNOWN_MERGE" => StatusCode::NOT_FOUND,
            "VALIDATION_FAILED" | "FORMAT_INVALID" | "NO_CRITERIA" | "BAD_SURVIVOR_CHOICE" | "NOT_A_CANDIDATE" => {
                StatusCode::UNPROCESSABLE_ENTITY
            }
            "SEQUENCE_EXHAUSTED" => StatusCode::SERVICE_UNAVAILABLE,
            _ => StatusCode::CONFLICT,
        },
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let e = self.0;
        let status = status_for(&e);
        let mut body = json!({ "error": e.code(), "message": e.to_string() });
        match &e {
            ServiceError::Rejected(RegistryError::DuplicateIdentifier { kind, value, existing }) => {
                body["kind"] = json!(kind);
                body["value"] = json!(value);
                body["existing_phn"] = json!(existing);
            }
            ServiceError::Rejected(RegistryError::VersionConflict { current, .. }) => {
                body["current_version"] = json!(current);
            }
            _ => {}
        }
        let mut response = (status, Json(body)).into_response();
        if status == StatusCode::UNAUTHORIZED {
            response
                .headers_mut()
                .insert(header::WWW_AUTHENTICATE, header::HeaderValue::from_static("Bearer"));
        }
        response
    }
}

type ApiResult = Result<Response, ApiError>;

fn bearer(headers: &HeaderMap) -> Option<&str> {
    let value = headers.get(header::AUTHORIZATION)?.to_str().ok()?.trim();
    let (scheme, token) = value.split_once(' ')?;
    scheme.eq_ignore_ascii_case("bearer").then(|| token.trim())
}

fn auth(svc: &Service, headers: &HeaderMap, scope: Scope) -> Result<Caller, ApiError> {
    Ok(svc.authorize(bearer(headers), scope)?)
}

fn body<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError(ServiceError::Malformed(e.to_string())))
}

fn phn(raw: &str) -> Result<Phn, ApiError> {
    Phn::parse(raw).map_err(|e| ApiError(RegistryError::FormatInvalid(e.to_string()).into()))
}

/// Runs a writer-side call off the async workers: commits wait on fsync.
async fn blocking<T: Send + 'static>(f: impl FnOnce() -> T + Send + 'static) -> T {
    tokio::task::spawn_blocking(f).await.expect("blocking task panicked")
}

async fn execute(svc: Arc<Service>, caller: Caller, command: Command, status: StatusCode) -> ApiResult {
    let outcome = blocking(move || svc.execute(&caller, command)).await?;
    Ok((status, Json(outcome)).into_response())
}

#[derive(Deserialize)]
struct TokenRequest {
    client_id: String,
    client_secret: String,
}

async fn token(State(svc): State<Arc<Service>>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let form = headers
        .get(header::CONTENT_TYPE)
        .and_then(|v| v.to_str().ok())
        .is_some_and(|v| v.starts_with("application/x-www-form-urlencoded"));
    let req: TokenRequest = if form {
        serde_urlencoded::from_bytes(&bytes).map_err(|e| ServiceError::Malformed(e.to_string()))?
    } else {
        body(&bytes)?
    };
    let t = svc.issue_token(&req.client_id, &req.client_secret)?;
    let scope: Vec<&str> = t.scopes.iter().map(|s| s.as_str()).collect();
    Ok(Json(json!({
        "access_token": t.token,
        "token_type": "Bearer",
        "expires_in": (t.expires_at - t.issued_at).num_seconds(),
        "expires_at": t.expires_at,
        "scope": scope.join(" "),
    }))
    .into_response())
}

#[derive(Deserialize)]
struct RegisterBody {
    profile: DemographicProfile,
    #[serde(default)]
    identifiers: Vec<Identifier>,
    #[serde(default)]
    guardian_reason: Option<GuardianReason>,
}

async fn register(State(svc): State<Arc<Service>>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Write)?;
    let b: RegisterBody = body(&bytes)?;
    let command = Command::Register {
        profile: b.profile,
        identifiers: b.identifiers,
        guardian_reason: b.guardian_reason,
    };
    execute(svc, caller, command, StatusCode::CREATED).await
}

async fn get_patient(State(svc): State<Arc<Service>>, headers: HeaderMap, Path(raw): Path<String>) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Read)?;
    Ok(Json(svc.patient(&caller, &raw)?).into_response())
}

#[derive(Deserialize)]
struct UpdateBody {
    changes: PatientChanges,
    expected_version: u64,
}

async fn update_patient(
    State(svc): State<Arc<Service>>,
    headers: HeaderMap,
    Path(raw): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Write)?;
    let phn = phn(&raw)?;
    let b: UpdateBody = body(&bytes)?;
    let command = Command::Update {
        phn,
        changes: b.changes,
        expected_version: Some(b.expected_version),
    };
    execute(svc, caller, command, StatusCode::OK).await
}

#[derive(Deserialize)]
struct Criterion {
    kind: IdentifierKind,
    value: String,
}

#[derive(Deserialize)]
struct SearchBody {
    #[serde(default)]
    criteria: Vec<Criterion>,
    #[serde(default)]
    fuzzy_name: Option<String>,
}

async fn search(State(svc): State<Arc<Service>>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Read)?;
    let b: SearchBody = body(&bytes)?;
    let request = SearchRequest {
        criteria: b.criteria.into_iter().map(|c| (c.kind, c.value)).collect(),
        fuzzy_name: b.fuzzy_name,
    };
    let hits = svc.search(&caller, &request)?;
    Ok(Json(json!({ "hits": hits })).into_response())
}

#[derive(Deserialize)]
struct DeceasedBody {
    deceased_on: NaiveDate,
}

async fn deceased(
    State(svc): State<Arc<Service>>,
    headers: HeaderMap,
    Path(raw): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Write)?;
    let phn = phn(&raw)?;
    let b: DeceasedBody = body(&bytes)?;
    execute(svc, caller, Command::MarkDeceased { phn, deceased_on: b.deceased_on }, StatusCode::OK).await
}

#[derive(Deserialize)]
struct GuardianBody {
    guardian: Phn,
    reason: GuardianReason,
}

async fn guardian(
    State(svc): State<Arc<Service>>,
    headers: HeaderMap,
    Path(raw): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Write)?;
    let ward = phn(&raw)?;
    let b: GuardianBody = body(&bytes)?;
    let command = Command::LinkGuardian {
        ward,
        guardian: b.guardian,
        reason: b.reason,
    };
    execute(svc, caller, command, StatusCode::OK).await
}

async fn hl7(State(svc): State<Arc<Service>>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let encoding = Encoding::from_content_type(headers.get(header::CONTENT_TYPE).and_then(|v| v.to_str().ok()));
    let token = bearer(&headers).map(str::to_string);
    let reply = blocking(move || svc.intake(token.as_deref(), &bytes, encoding)).await?;
    Ok(([(header::CONTENT_TYPE, encoding.content_type())], reply.body).into_response())
}

#[derive(Deserialize)]
struct QueueQuery {
    #[serde(default)]
    state: Option<String>,
}

#[derive(Serialize)]
struct QueueView<'a> {
    pending_count: usize,
    items: Vec<&'a ReviewItem>,
}

async fn review_queue(
    State(svc): State<Arc<Service>>,
    headers: HeaderMap,
    Query(q): Query<QueueQuery>,
) -> ApiResult {
    auth(&svc, &headers, Scope::Steward)?;
    let pending_only = match q.state.as_deref().map(str::to_ascii_uppercase).as_deref() {
        None | Some("PENDING") => true,
        Some("ALL") => false,
        Some(other) => return Err(ServiceError::Malformed(format!("state must be PENDING or ALL, not {other:?}")).into()),
    };
    let view = svc.read(|r| {
        serde_json::to_value(QueueView {
            pending_count: r.queue().pending_count(),
            items: r.queue().list(pending_only),
        })
        .expect("queue serializes")
    });
    Ok(Json(view).into_response())
}

#[derive(Deserialize)]
struct DecisionBody {
    decision: StewardDecision,
    survivor: Phn,
    #[serde(default)]
    field_overrides: BTreeMap<ProfileField, FieldSource>,
}

async fn decide(
    State(svc): State<Arc<Service>>,
    headers: HeaderMap,
    Path(item_id): Path<String>,
    bytes: Bytes,
) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Steward)?;
    let b: DecisionBody = body(&bytes)?;
    let command = Command::Decide {
        item_id,
        decision: b.decision,
        survivor: b.survivor,
        field_overrides: b.field_overrides,
    };
    execute(svc, caller, command, StatusCode::OK).await
}

async fn scan(State(svc): State<Arc<Service>>, headers: HeaderMap) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Steward)?;
    let outcome = blocking(move || svc.scan(&caller)).await?;
    Ok(Json(outcome).into_response())
}

#[derive(Deserialize)]
struct MergeBody {
    survivor: Phn,
    retired: Phn,
    #[serde(default)]
    field_overrides: BTreeMap<ProfileField, FieldSource>,
}

async fn merge(State(svc): State<Arc<Service>>, headers: HeaderMap, bytes: Bytes) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Steward)?;
    let b: MergeBody = body(&bytes)?;
    let command = Command::Merge {
        survivor: b.survivor,
        retired: b.retired,
        source: MergeSource::Steward,
        field_overrides: b.field_overrides,
    };
    execute(svc, caller, command, StatusCode::OK).await
}

async fn unmerge(State(svc): State<Arc<Service>>, headers: HeaderMap, Path(merge_id): Path<String>) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Steward)?;
    execute(svc, caller, Command::Unmerge { merge_id }, StatusCode::OK).await
}

async fn purge(State(svc): State<Arc<Service>>, headers: HeaderMap) -> ApiResult {
    let caller = auth(&svc, &headers, Scope::Admin)?;
    let outcome = blocking(move || svc.execute(&caller, Command::Purge)).await?;
    let purged = match &outcome {
        Outcome::Purged { purged } => purged.clone(),
        _ => Vec::new(),
    };
    Ok(Json(json!({ "count": purged.len(), "purged": purged })).into_response())
}

#[derive(Deserialize)]
struct AuditQuery {
    #[serde(default)]
    from_seq: Option<u64>,
}

async fn audit(State(svc): State<Arc<Service>>, headers: HeaderMap, Query(q): Query<AuditQuery>) -> ApiResult {
    auth(&svc, &headers, Scope::Admin)?;
    let entries: Vec<Value> = svc
        .audit_from(q.from_seq.unwrap_or(1))
        .into_iter()
        .map(|e| serde_json::to_value(e).expect("audit entry serializes"))
        .collect();
    Ok(Json(json!({ "entries": entries })).into_response())
}

pub fn router(service: Arc<Service>) -> Router {
    Router::new()
        .route("/token", post(token))
        .route("/patients", post(register))
        .route("/patients/search", post(search))
        .route("/patients/{phn}", get(get_patient).put(update_patient))
        .route("/patients/{phn}/deceased", post(deceased))
        .route("/patients/{phn}/guardian", post(guardian))
        .route("/hl7", post(hl7))
        .route("/review-queue", get(review_queue))
        .route("/review-queue/scan", post(scan))
        .route("/review-queue/{id}/decision", post(decide))
        .route("/merges", post(merge))
        .route("/merges/{id}/unmerge", post(unmerge))
        .route("/admin/purge", post(purge))
        .route("/audit", get(audit))
        .with_state(service)
}

/// Serves until `shutdown` resolves.
pub async fn serve(
    service: Arc<Service>,
    listener: tokio::net::TcpListener,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> Result<(), StoreError> {
    axum::serve(listener, router(service))
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(StoreError::from)
}
