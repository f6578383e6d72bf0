//! Local HTTP service over one fitted model and its dataset.
//!
//! Every payload is JSON with a `schema` tag. Errors are
//! `{"schema": "omm.error", "error": {"class", "message"}}` with status 400
//! for bad requests, 404 for unknown jobs and 422 for simulations that fail
//! numerically or hit a degenerate market.

use std::collections::{BTreeMap, HashMap};
use std::convert::Infallible;
use std::ops::RangeInclusive;
use std::sync::{Arc, Mutex};

use axum::body::Bytes;
use axum::extract::rejection::QueryRejection;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::sse::{Event, Sse};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::Router;
use futures::stream::{self, Stream};
use ndarray::{s, Array3};
use omm_core::data_io::DatasetBundle;
use omm_core::error::ErrorClass;
use omm_core::estimation::{parameter_groups, FitResult};
use omm_core::intervention::{elasticities, whatif_run, AveragedTensor, Progress, ShareSource, WhatIfResult, WhatIfScenario};
use omm_core::share::model_shares;
use omm_core::{OmmError, Result};
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use tokio::sync::watch;

use crate::commands::{resolve_intervention, whatif_history, Labels};

#[derive(Clone)]
pub struct AppState {
    inner: Arc<Inner>,
}

struct Inner {
    fit: FitResult,
    bundle: DatasetBundle,
    labels: Labels,
    fitted_shares: Array3<f64>,
    share_source: ShareSource,
    jobs: Mutex<HashMap<String, watch::Receiver<JobState>>>,
}

#[derive(Debug, Clone)]
enum JobState {
    Running(Progress),
    Done(Bytes),
    Failed(StatusCode, Bytes),
}

impl AppState {
    pub fn new(fit: FitResult, bundle: DatasetBundle, share_source: ShareSource) -> Result<Self> {
        let fitted_shares = model_shares(&fit.model, &bundle.signals, &bundle.counts)?.0;
        Ok(Self {
            inner: Arc::new(Inner {
                labels: Labels::of(&bundle),
                fit,
                bundle,
                fitted_shares,
                share_source,
                jobs: Mutex::new(HashMap::new()),
            }),
        })
    }
}

pub fn router(state: AppState) -> Router {
    Router::new()
        .route("/model", get(get_model))
        .route("/shares", get(get_shares))
        .route("/elasticities", get(get_elasticities))
        .route("/whatif", post(post_whatif))
        .route("/whatif/{id}", get(get_whatif))
        .route("/whatif/{id}/events", get(whatif_events))
        .with_state(state)
}

/// Binds `addr` and serves until the process ends.
pub async fn serve(state: AppState, addr: &str) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on http://{}", listener.local_addr()?);
    axum::serve(listener, router(state)).await
}

// ---------------------------------------------------------------- responses

fn json_bytes<T: Serialize>(body: &T) -> Bytes {
    let mut v = serde_json::to_vec_pretty(body).expect("response bodies serialise");
    v.push(b'\n');
    Bytes::from(v)
}

fn respond(status: StatusCode, body: Bytes) -> Response {
    (status, [(header::CONTENT_TYPE, "application/json")], body).into_response()
}

struct ApiError {
    status: StatusCode,
    class: &'static str,
    message: String,
}

impl ApiError {
    fn bad_request(message: impl Into<String>) -> Self {
        Self {
            status: StatusCode::BAD_REQUEST,
            class: "request",
            message: message.into(),
        }
    }

    fn body(&self) -> Bytes {
        json_bytes(&json!({
            "schema": "omm.error",
            "error": {"class": self.class, "message": self.message},
        }))
    }
}

impl From<OmmError> for ApiError {
    fn from(e: OmmError) -> Self {
        let degenerate = matches!(innermost(&e), OmmError::Degenerate(_));
        let (status, class) = match e.class() {
            ErrorClass::Numerical => (StatusCode::UNPROCESSABLE_ENTITY, "numerical"),
            _ if degenerate => (StatusCode::UNPROCESSABLE_ENTITY, "degenerate"),
            ErrorClass::Input => (StatusCode::BAD_REQUEST, "input"),
            ErrorClass::Data => (StatusCode::BAD_REQUEST, "data"),
        };
        Self {
            status,
            class,
            message: e.to_string(),
        }
    }
}

fn innermost(e: &OmmError) -> &OmmError {
    match e {
        OmmError::Stage { source, .. } => innermost(source),
        other => other,
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        respond(self.status, self.body())
    }
}

type ApiResult = std::result::Result<Response, ApiError>;

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> Result<T> + Send + 'static) -> std::result::Result<T, ApiError> {
    match tokio::task::spawn_blocking(f).await {
        Ok(r) => r.map_err(ApiError::from),
        Err(e) => Err(ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            class: "internal",
            message: e.to_string(),
        }),
    }
}

// ---------------------------------------------------------------- model, shares, elasticities

async fn get_model(State(state): State<AppState>) -> Response {
    let s = &state.inner;
    let m = &s.fit.model;
    let parameters: BTreeMap<&str, Vec<f64>> = parameter_groups(m).into_iter().collect();
    let body = json!({
        "schema": "omm.service.model",
        "dimensions": {
            "platforms": m.platforms(),
            "opinions": m.opinions(),
            "interventions": m.interventions(),
            "bins": s.bundle.counts.bins(),
        },
        "labels": s.labels,
        "parameters": parameters,
        "spectral_radius": m.params1.spectral_radius(),
        "loglik1": s.fit.loglik1,
        "loglik2": s.fit.loglik2,
        "converged": s.fit.converged,
        "samples": s.fit.samples,
    });
    respond(StatusCode::OK, json_bytes(&body))
}

#[derive(Debug, Deserialize)]
struct RangeQuery {
    range: Option<String>,
}

/// `a..b` or `a..=b`, both inclusive and 1-based.
fn parse_range(text: Option<&str>, bins: usize) -> std::result::Result<RangeInclusive<usize>, ApiError> {
    let Some(text) = text else { return Ok(1..=bins) };
    let (a, b) = text
        .split_once("..=")
        .or_else(|| text.split_once(".."))
        .ok_or_else(|| ApiError::bad_request(format!("range {text:?}: expected a..b")))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|_| ApiError::bad_request(format!("range {text:?}: {v:?} is not a bin")))
    };
    let (a, b) = (parse(a)?, parse(b)?);
    if a == 0 || a > b || b > bins {
        return Err(ApiError::bad_request(format!("range {a}..{b} outside 1..{bins}")));
    }
    Ok(a..=b)
}

fn query<T>(q: std::result::Result<Query<T>, QueryRejection>) -> std::result::Result<T, ApiError> {
    q.map(|Query(v)| v).map_err(|e| ApiError::bad_request(e.body_text()))
}

async fn get_shares(State(state): State<AppState>, q: std::result::Result<Query<RangeQuery>, QueryRejection>) -> ApiResult {
    let s = &state.inner;
    let range = parse_range(query(q)?.range.as_deref(), s.bundle.counts.bins())?;
    let (lo, hi) = (range.start() - 1, *range.end());
    let fitted = s.fitted_shares.slice(s![.., .., lo..hi]).to_owned();
    let observed = Array3::from_shape_fn(fitted.dim(), |(p, i, step)| {
        s.bundle.counts.shares_at(p, lo + step).map(|v| v[i])
    });
    let body = json!({
        "schema": "omm.service.shares",
        "start": range.start(),
        "end": range.end(),
        "labels": s.labels,
        "fitted": fitted,
        "observed": observed,
    });
    Ok(respond(StatusCode::OK, json_bytes(&body)))
}

async fn get_elasticities(
    State(state): State<AppState>,
    q: std::result::Result<Query<RangeQuery>, QueryRejection>,
) -> ApiResult {
    let range = parse_range(query(q)?.range.as_deref(), state.inner.bundle.counts.bins())?;
    let st = state.clone();
    let r = range.clone();
    let (endogenous, intervention): (AveragedTensor, AveragedTensor) = blocking(move || {
        let s = &st.inner;
        let report = elasticities(&s.fit.model, &s.bundle.signals, &s.bundle.counts, r)?;
        Ok((report.endogenous_mean, report.intervention_mean))
    })
    .await?;
    let body = json!({
        "schema": "omm.service.elasticities",
        "start": range.start(),
        "end": range.end(),
        "labels": state.inner.labels,
        "endogenous_axes": ["platform", "source_platform", "opinion", "source_opinion"],
        "endogenous": endogenous,
        "intervention_axes": ["platform", "opinion", "intervention"],
        "intervention": intervention,
    });
    Ok(respond(StatusCode::OK, json_bytes(&body)))
}

// ---------------------------------------------------------------- what-if

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum InterventionKey {
    Index(usize),
    Label(String),
}

/// Body of `POST /whatif`.
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct WhatifRequest {
    k_star: InterventionKey,
    r: f64,
    changepoint: usize,
    #[serde(default = "default_n_sims")]
    n_sims: usize,
    #[serde(default)]
    seed: u64,
    #[serde(default)]
    end: Option<usize>,
    #[serde(default)]
    from_scratch: bool,
    #[serde(default)]
    share_source: Option<ShareSource>,
}

fn default_n_sims() -> usize {
    50
}

/// Fully resolved request; its hash identifies the job.
#[derive(Debug, Clone, Serialize)]
struct ResolvedScenario {
    scenario: WhatIfScenario,
    from_scratch: bool,
}

#[derive(Debug, Serialize)]
struct TableRow<'a> {
    platform: &'a str,
    opinion: &'a str,
    baseline_share: f64,
    modulated_share: f64,
    percent_change: f64,
    spread: f64,
}

#[derive(Debug, Deserialize)]
struct WaitQuery {
    wait: Option<bool>,
}

fn resolve_request(s: &Inner, body: &[u8]) -> std::result::Result<ResolvedScenario, ApiError> {
    let req: WhatifRequest =
        serde_json::from_slice(body).map_err(|e| ApiError::bad_request(format!("whatif request: {e}")))?;
    let k_star = match &req.k_star {
        InterventionKey::Index(k) => resolve_intervention(&k.to_string(), &s.labels.interventions),
        InterventionKey::Label(l) => resolve_intervention(l, &s.labels.interventions),
    }?;
    let scenario = WhatIfScenario {
        k_star,
        r: req.r,
        changepoint: req.changepoint,
        n_sims: req.n_sims,
        end: req.end.unwrap_or(s.bundle.signals.bins()),
        seed: req.seed,
        mean_window: None,
        share_source: req.share_source.unwrap_or(s.share_source),
    };
    let history_bins = if req.from_scratch { 0 } else { req.changepoint.min(s.bundle.counts.bins()) };
    scenario.validate(history_bins)?;
    if scenario.end > s.bundle.signals.bins() {
        return Err(OmmError::TimeOutOfRange {
            t: scenario.end,
            bins: s.bundle.signals.bins(),
        }
        .into());
    }
    Ok(ResolvedScenario {
        scenario,
        from_scratch: req.from_scratch,
    })
}

fn job_id(resolved: &ResolvedScenario) -> String {
    let canonical = serde_json::to_string(&serde_json::to_value(resolved).expect("scenario serialises"))
        .expect("scenario serialises");
    hex::encode(Sha256::digest(canonical.as_bytes()))
}

fn run_job(state: &AppState, id: &str, resolved: &ResolvedScenario, tx: &watch::Sender<JobState>) -> JobState {
    let s = &state.inner;
    let outcome = whatif_history(&s.bundle, resolved.scenario.changepoint, resolved.from_scratch).and_then(|history| {
        let progress = |p: Progress| {
            tx.send_replace(JobState::Running(p));
        };
        whatif_run(&s.fit.model, &s.bundle.signals, &history, &resolved.scenario, Some(&progress))
    });
    match outcome {
        Ok(result) => JobState::Done(json_bytes(&result_body(s, id, &result))),
        Err(e) => {
            let e = ApiError::from(e.in_stage("whatif"));
            JobState::Failed(e.status, e.body())
        }
    }
}

fn result_body<'a>(s: &'a Inner, id: &'a str, result: &'a WhatIfResult) -> serde_json::Value {
    let (p_n, m_n) = result.percent_change.dim();
    let mut table = Vec::with_capacity(p_n * m_n);
    for p in 0..p_n {
        for i in 0..m_n {
            table.push(TableRow {
                platform: &s.labels.platforms[p],
                opinion: &s.labels.opinions[i],
                baseline_share: result.baseline_share[[p, i]],
                modulated_share: result.modulated_share[[p, i]],
                percent_change: result.percent_change[[p, i]],
                spread: result.spread[[p, i]],
            });
        }
    }
    json!({
        "schema": "omm.service.whatif",
        "id": id,
        "table": table,
        "result": result,
    })
}

/// Existing job for `id`, or a freshly started one.
fn job(state: &AppState, id: &str, resolved: ResolvedScenario) -> watch::Receiver<JobState> {
    let mut jobs = state.inner.jobs.lock().expect("job table lock");
    if let Some(rx) = jobs.get(id) {
        return rx.clone();
    }
    let total = resolved.scenario.n_sims * if resolved.scenario.r == 0.0 { 1 } else { 2 };
    let (tx, rx) = watch::channel(JobState::Running(Progress { completed: 0, total }));
    jobs.insert(id.to_string(), rx.clone());
    let st = state.clone();
    let id = id.to_string();
    tokio::task::spawn_blocking(move || {
        let done = run_job(&st, &id, &resolved, &tx);
        tx.send_replace(done);
    });
    rx
}

async fn finished(mut rx: watch::Receiver<JobState>) -> Response {
    let waited = rx.wait_for(|s| !matches!(s, JobState::Running(_))).await.map(|s| s.clone());
    let state = match waited {
        Ok(s) => s,
        Err(_) => rx.borrow().clone(),
    };
    match state {
        JobState::Done(body) => respond(StatusCode::OK, body),
        JobState::Failed(status, body) => respond(status, body),
        JobState::Running(_) => ApiError {
            status: StatusCode::INTERNAL_SERVER_ERROR,
            class: "internal",
            message: "job ended without a result".into(),
        }
        .into_response(),
    }
}

fn accepted(id: &str, state: &JobState) -> Response {
    let status = match state {
        JobState::Running(_) => "running",
        JobState::Done(_) => "done",
        JobState::Failed(..) => "failed",
    };
    let body = json!({
        "schema": "omm.service.whatif_job",
        "id": id,
        "status": status,
        "result": format!("/whatif/{id}"),
        "events": format!("/whatif/{id}/events"),
    });
    respond(StatusCode::ACCEPTED, json_bytes(&body))
}

async fn post_whatif(
    State(state): State<AppState>,
    q: std::result::Result<Query<WaitQuery>, QueryRejection>,
    body: Bytes,
) -> ApiResult {
    let wait = query(q)?.wait.unwrap_or(true);
    let resolved = resolve_request(&state.inner, &body)?;
    let id = job_id(&resolved);
    let rx = job(&state, &id, resolved);
    if wait {
        Ok(finished(rx).await)
    } else {
        let current = rx.borrow().clone();
        Ok(accepted(&id, &current))
    }
}

fn lookup(state: &AppState, id: &str) -> std::result::Result<watch::Receiver<JobState>, ApiError> {
    let jobs = state.inner.jobs.lock().expect("job table lock");
    jobs.get(id).cloned().ok_or_else(|| ApiError {
        status: StatusCode::NOT_FOUND,
        class: "request",
        message: format!("no what-if job {id}"),
    })
}

async fn get_whatif(State(state): State<AppState>, Path(id): Path<String>) -> ApiResult {
    let rx = lookup(&state, &id)?;
    let current = rx.borrow().clone();
    Ok(match current {
        JobState::Running(_) => accepted(&id, &current),
        JobState::Done(body) => respond(StatusCode::OK, body),
        JobState::Failed(status, body) => respond(status, body),
    })
}

fn compact(body: &Bytes) -> String {
    serde_json::from_slice::<serde_json::Value>(body)
        .map(|v| v.to_string())
        .unwrap_or_default()
}

fn event_for(state: &JobState) -> Event {
    match state {
        JobState::Running(p) => Event::default()
            .event("progress")
            .data(serde_json::to_string(p).expect("progress serialises")),
        JobState::Done(body) => Event::default().event("result").data(compact(body)),
        JobState::Failed(_, body) => Event::default().event("error").data(compact(body)),
    }
}

/// Server-sent events: `progress` while replicates run, then one `result`
/// or `error` event carrying the same JSON as `GET /whatif/{id}`.
async fn whatif_events(
    State(state): State<AppState>,
    Path(id): Path<String>,
) -> std::result::Result<Sse<impl Stream<Item = std::result::Result<Event, Infallible>>>, ApiError> {
    let rx = lookup(&state, &id)?;
    let events = stream::unfold(Some((rx, true)), |slot| async move {
        let (mut rx, first) = slot?;
        if !first && rx.changed().await.is_err() {
            let last = rx.borrow().clone();
            if matches!(last, JobState::Running(_)) {
                return None;
            }
        }
        let current = rx.borrow_and_update().clone();
        let event = event_for(&current);
        let next = matches!(current, JobState::Running(_)).then_some((rx, false));
        Some((Ok(event), next))
    });
    Ok(Sse::new(events))
}
