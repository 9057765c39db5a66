//! HTTP routes.
//!
//! | Method | Path | Body / query |
//! |---|---|---|
//! | POST | `/v1/patients` | [`CreatePatient`] |
//! | GET | `/v1/patients/{id}` | |
//! | POST | `/v1/patients/{id}/fbg` | [`FbgEntry`] |
//! | POST | `/v1/patients/{id}/doses` | [`DoseEntry`] |
//! | GET | `/v1/patients/{id}/recommendation` | |
//! | POST | `/v1/patients/{id}/whatif` | [`WhatIfQuery`] |
//! | GET | `/v1/patients/{id}/whatif?dose=` | |
//! | GET | `/v1/patients/{id}/history?offset=&limit=` | |
//!
//! Times are integer minutes since the patient's start of therapy, glucose is
//! mg/dL and doses are insulin units.

use std::collections::HashMap;
use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use axum::extract::rejection::JsonRejection;
use axum::extract::{FromRequest, Path as UrlPath, Query, Request, State};
use axum::http::{header, StatusCode};
use axum::middleware::{self, Next};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use parking_lot::RwLock;
use serde::{Deserialize, Serialize};

use titration_core::controller::TitrationConfig;
use titration_core::fasting::{ModelParams, PriorSpec};
use titration_core::trial::PriorConfig;
use titration_core::Minutes;

use crate::config::ServiceConfig;
use crate::error::{Result, ServiceError};
use crate::patient::{LoggedEvent, PastRecommendation, PatientRecord, Profile, Recommendation, WhatIf};
use crate::store::{Event, EventStore, Record};

pub const DEFAULT_PAGE: usize = 100;
pub const MAX_PAGE: usize = 1000;

type Patient = Arc<RwLock<PatientRecord>>;

pub struct AppState {
    store: EventStore,
    patients: RwLock<HashMap<String, Patient>>,
    /// Serializes patient creation so ids stay unique.
    create_lock: parking_lot::Mutex<()>,
    defaults: ServiceConfig,
    token: Option<String>,
}

impl AppState {
    /// Open the store under `data_dir` and rebuild every patient from it.
    pub fn open(data_dir: &Path, defaults: ServiceConfig, token: Option<String>) -> Result<Arc<Self>> {
        let (store, records) = EventStore::open(data_dir)?;
        let patients = rebuild(&records)?;
        tracing::info!(patients = patients.len(), events = records.len(), "event log replayed");
        Ok(Arc::new(Self {
            store,
            patients: RwLock::new(patients.into_iter().map(|(k, v)| (k, Arc::new(RwLock::new(v)))).collect()),
            create_lock: parking_lot::Mutex::new(()),
            defaults,
            token,
        }))
    }

    pub fn store_path(&self) -> &Path {
        self.store.path()
    }

    fn patient(&self, id: &str) -> Result<Patient> {
        self.patients
            .read()
            .get(id)
            .cloned()
            .ok_or_else(|| ServiceError::NotFound(id.to_string()))
    }

    /// Snapshot of one patient's derived state.
    pub fn record(&self, id: &str) -> Result<PatientRecord> {
        Ok(self.patient(id)?.read().clone())
    }
}

/// Group records by patient and replay each log.
pub fn rebuild(records: &[Record]) -> Result<HashMap<String, PatientRecord>> {
    let mut by_patient: HashMap<&str, Vec<(u64, &Event)>> = HashMap::new();
    for r in records {
        by_patient.entry(&r.patient).or_default().push((r.seq, &r.event));
    }
    by_patient
        .into_iter()
        .map(|(id, events)| Ok((id.to_string(), PatientRecord::replay(events)?)))
        .collect()
}

/// JSON body extractor whose rejections use the service error format.
pub struct Body<T>(pub T);

impl<S, T> FromRequest<S> for Body<T>
where
    axum::Json<T>: FromRequest<S, Rejection = JsonRejection>,
    S: Send + Sync,
{
    type Rejection = ServiceError;

    async fn from_request(req: Request, state: &S) -> Result<Self> {
        match axum::Json::<T>::from_request(req, state).await {
            Ok(axum::Json(v)) => Ok(Body(v)),
            Err(rejection) => Err(ServiceError::Invalid(rejection.body_text())),
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreatePatient {
    pub id: Option<String>,
    pub body_weight: f64,
    /// Formulation name; the service default when omitted.
    pub drug: Option<String>,
    pub titration: Option<TitrationConfig>,
    pub prior: Option<PriorConfig>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FbgEntry {
    pub time: Minutes,
    pub fbg: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DoseEntry {
    pub time: Minutes,
    pub units: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WhatIfQuery {
    pub dose: f64,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Page {
    pub offset: Option<usize>,
    pub limit: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PatientView {
    pub profile: Profile,
    pub readings: usize,
    pub doses: usize,
    pub estimate: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ack {
    pub patient: String,
    pub seq: u64,
    pub estimate: ModelParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub patient: String,
    pub total: usize,
    pub offset: usize,
    pub limit: usize,
    pub events: Vec<LoggedEvent>,
    /// Recommendations issued after each reading in `events`.
    pub recommendations: Vec<PastRecommendation>,
}

fn view(record: &PatientRecord) -> PatientView {
    PatientView {
        profile: record.profile().clone(),
        readings: record.log().readings().len(),
        doses: record.log().doses().len(),
        estimate: record.estimate(),
    }
}

async fn create_patient(State(state): State<Arc<AppState>>, Body(req): Body<CreatePatient>) -> Result<Response> {
    let defaults = &state.defaults;
    let _guard = state.create_lock.lock();
    let id = req.id.unwrap_or_else(|| format!("patient-{:06}", state.store.peek_seq()));
    let drug = defaults.find_drug(req.drug.as_deref().unwrap_or(&defaults.drug))?;
    let profile = Profile {
        id: id.clone(),
        body_weight: req.body_weight,
        drug,
        titration: req.titration.unwrap_or(defaults.titration),
        prior: PriorSpec::from(req.prior.unwrap_or(defaults.prior)),
    };
    let record = PatientRecord::new(profile.clone())?;
    if state.patients.read().contains_key(&id) {
        return Err(ServiceError::Duplicate(id));
    }
    let stored = state.store.append(&id, Event::PatientCreated { profile })?;
    let body = view(&record);
    state.patients.write().insert(id.clone(), Arc::new(RwLock::new(record)));
    tracing::info!(patient = %id, seq = stored.seq, "patient created");
    Ok((StatusCode::CREATED, axum::Json(body)).into_response())
}

async fn get_patient(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<axum::Json<PatientView>> {
    let patient = state.patient(&id)?;
    let record = patient.read();
    Ok(axum::Json(view(&record)))
}

async fn log_fbg(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Body(entry): Body<FbgEntry>,
) -> Result<axum::Json<Ack>> {
    let patient = state.patient(&id)?;
    let mut record = patient.write();
    record.check_fbg(entry.time, entry.fbg)?;
    // Fit on a copy first so a failed refit never leaves a logged but unapplied event.
    let mut next = record.clone();
    let seq = state.store.peek_seq();
    next.log_fbg(seq, entry.time, entry.fbg)?;
    let stored = state.store.append(&id, Event::FbgLogged { time: entry.time, fbg: entry.fbg })?;
    debug_assert_eq!(stored.seq, seq);
    *record = next;
    Ok(axum::Json(Ack {
        patient: id,
        seq: stored.seq,
        estimate: record.estimate(),
    }))
}

async fn log_dose(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Body(entry): Body<DoseEntry>,
) -> Result<axum::Json<Ack>> {
    let patient = state.patient(&id)?;
    let mut record = patient.write();
    record.check_dose(entry.time, entry.units)?;
    let stored = state.store.append(&id, Event::DoseLogged { time: entry.time, units: entry.units })?;
    record.log_dose(stored.seq, entry.time, entry.units)?;
    Ok(axum::Json(Ack {
        patient: id,
        seq: stored.seq,
        estimate: record.estimate(),
    }))
}

async fn recommendation(State(state): State<Arc<AppState>>, UrlPath(id): UrlPath<String>) -> Result<axum::Json<Recommendation>> {
    let patient = state.patient(&id)?;
    let record = patient.read();
    Ok(axum::Json(record.recommendation()?))
}

async fn what_if_post(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    Body(q): Body<WhatIfQuery>,
) -> Result<axum::Json<WhatIf>> {
    let patient = state.patient(&id)?;
    let record = patient.read();
    Ok(axum::Json(record.what_if(q.dose)?))
}

async fn what_if_get(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    q: std::result::Result<Query<WhatIfQuery>, axum::extract::rejection::QueryRejection>,
) -> Result<axum::Json<WhatIf>> {
    let Query(q) = q.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let patient = state.patient(&id)?;
    let record = patient.read();
    Ok(axum::Json(record.what_if(q.dose)?))
}

async fn history(
    State(state): State<Arc<AppState>>,
    UrlPath(id): UrlPath<String>,
    page: std::result::Result<Query<Page>, axum::extract::rejection::QueryRejection>,
) -> Result<axum::Json<History>> {
    let Query(page) = page.map_err(|e| ServiceError::Invalid(e.body_text()))?;
    let patient = state.patient(&id)?;
    let record = patient.read();
    let total = record.events().len();
    let limit = page.limit.unwrap_or(DEFAULT_PAGE).min(MAX_PAGE);
    let offset = page.offset.unwrap_or(0).min(total);
    let end = offset.saturating_add(limit).min(total);
    let events = record.events()[offset..end].to_vec();
    let recommendations = record.past_recommendations(&events)?;
    Ok(axum::Json(History {
        patient: id,
        total,
        offset,
        limit,
        events,
        recommendations,
    }))
}

async fn health() -> &'static str {
    "ok"
}

async fn require_token(State(state): State<Arc<AppState>>, req: Request, next: Next) -> Response {
    if let Some(token) = &state.token {
        let presented = req
            .headers()
            .get(header::AUTHORIZATION)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.strip_prefix("Bearer "));
        if presented != Some(token.as_str()) {
            return ServiceError::Unauthorized.into_response();
        }
    }
    next.run(req).await
}

async fn log_request(req: Request, next: Next) -> Response {
    let method = req.method().clone();
    let path = req.uri().path().to_string();
    let started = Instant::now();
    let response = next.run(req).await;
    tracing::info!(
        %method,
        %path,
        status = response.status().as_u16(),
        micros = started.elapsed().as_micros() as u64,
        "request"
    );
    response
}

pub fn router(state: Arc<AppState>) -> Router {
    let api = Router::new()
        .route("/v1/patients", post(create_patient))
        .route("/v1/patients/{id}", get(get_patient))
        .route("/v1/patients/{id}/fbg", post(log_fbg))
        .route("/v1/patients/{id}/doses", post(log_dose))
        .route("/v1/patients/{id}/recommendation", get(recommendation))
        .route("/v1/patients/{id}/whatif", post(what_if_post).get(what_if_get))
        .route("/v1/patients/{id}/history", get(history))
        .route_layer(middleware::from_fn_with_state(state.clone(), require_token))
        .with_state(state);
    Router::new()
        .route("/health", get(health))
        .merge(api)
        .layer(middleware::from_fn(log_request))
}
