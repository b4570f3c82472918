//! HTTP+JSON API under `/api`.

use std::collections::HashMap;
use std::sync::Arc;

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{HeaderMap, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use gaswatch_core::flag::FlagMethod;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::publish::{group_year_key, ALL_KEY, KIND_BAND, KIND_BOXPLOT, KIND_CLUSTERS, KIND_GROUPS, KIND_SERIES};
use crate::store::{FlagFilter, FlagStatus, Store, StoreError};

/// Header naming the operator when the dismissal body does not.
pub const OPERATOR_HEADER: &str = "x-operator";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApiError {
    #[serde(skip)]
    pub status: u16,
    pub code: String,
    pub message: String,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status: status.as_u16(),
            code: code.into(),
            message: message.into(),
        }
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn validation(message: impl Into<String>) -> Self {
        Self::new(StatusCode::UNPROCESSABLE_ENTITY, "validation", message)
    }
}

impl From<StoreError> for ApiError {
    fn from(e: StoreError) -> Self {
        let message = e.to_string();
        match e {
            StoreError::UnknownFlag(_) | StoreError::UnknownRun(_) => Self::not_found(message),
            StoreError::AlreadyDismissed { .. } => Self::new(StatusCode::CONFLICT, "already_dismissed", message),
            StoreError::RunLocked(_) | StoreError::RunNotRunning(_) => {
                Self::new(StatusCode::CONFLICT, "run_conflict", message)
            }
            StoreError::Validation(_) => Self::validation(message),
            StoreError::Storage(_) | StoreError::Corrupt(_) | StoreError::Integrity(_) => {
                Self::new(StatusCode::SERVICE_UNAVAILABLE, "store_unavailable", message)
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        let status = StatusCode::from_u16(self.status).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        (status, Json(self)).into_response()
    }
}

type ApiResult<T> = Result<Json<T>, ApiError>;
type Params = Query<HashMap<String, String>>;

fn check_params(params: &HashMap<String, String>, allowed: &[&str]) -> Result<(), ApiError> {
    let mut unknown: Vec<&str> = params.keys().map(String::as_str).filter(|k| !allowed.contains(k)).collect();
    unknown.sort();
    match unknown.first() {
        Some(k) => Err(ApiError::validation(format!("unknown query parameter {k:?}; expected one of {allowed:?}"))),
        None => Ok(()),
    }
}

fn parse_param<T: std::str::FromStr>(params: &HashMap<String, String>, name: &str) -> Result<Option<T>, ApiError> {
    params
        .get(name)
        .map(|v| v.parse::<T>().map_err(|_| ApiError::validation(format!("invalid {name} {v:?}"))))
        .transpose()
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/api/flags", get(list_flags))
        .route("/api/flags/{id}", get(get_flag))
        .route("/api/flags/{id}/dismiss", post(dismiss_flag))
        .route("/api/runs", get(list_runs))
        .route("/api/runs/{id}", get(get_run))
        .route("/api/accounts", get(list_accounts))
        .route("/api/accounts/{id}/series", get(account_series))
        .route("/api/groups", get(list_groups))
        .route("/api/groups/{id}/band", get(group_band))
        .route("/api/groups/{id}/boxplot", get(group_boxplot))
        .route("/api/clusters", get(clusters))
        .fallback(|| async { ApiError::not_found("no such endpoint") })
        .with_state(store)
}

async fn list_flags(State(store): State<Arc<Store>>, Query(params): Params) -> ApiResult<Vec<crate::store::FlagRecord>> {
    check_params(&params, &["status", "method", "group", "fiscal_year", "account", "run"])?;
    let status = match params.get("status") {
        Some(s) => Some(FlagStatus::parse(s).ok_or_else(|| ApiError::validation(format!("invalid status {s:?}")))?),
        None => None,
    };
    let filter = FlagFilter {
        status,
        method: parse_param::<FlagMethod>(&params, "method")?,
        group: params.get("group").cloned(),
        fiscal_year: parse_param(&params, "fiscal_year")?,
        account: params.get("account").cloned(),
        run: params.get("run").cloned(),
    };
    Ok(Json(store.list_flags(&filter)?))
}

async fn get_flag(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<crate::store::FlagRecord> {
    Ok(Json(store.get_flag(&id)?))
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct DismissRequest {
    operator: Option<String>,
    note: Option<String>,
}

async fn dismiss_flag(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    headers: HeaderMap,
    body: Bytes,
) -> ApiResult<crate::store::FlagRecord> {
    let request: DismissRequest = if body.iter().all(u8::is_ascii_whitespace) {
        DismissRequest::default()
    } else {
        serde_json::from_slice(&body).map_err(|e| ApiError::validation(format!("invalid body: {e}")))?
    };
    let operator = request
        .operator
        .or_else(|| headers.get(OPERATOR_HEADER).and_then(|v| v.to_str().ok()).map(str::to_string))
        .filter(|o| !o.trim().is_empty())
        .ok_or_else(|| ApiError::validation("operator is required"))?;
    let note = request.note.filter(|n| !n.trim().is_empty());
    Ok(Json(store.dismiss_flag(&id, &operator, note.as_deref())?))
}

async fn list_runs(State(store): State<Arc<Store>>) -> ApiResult<Vec<crate::store::RunRecord>> {
    Ok(Json(store.list_runs()?))
}

async fn get_run(State(store): State<Arc<Store>>, Path(id): Path<String>) -> ApiResult<crate::store::RunRecord> {
    Ok(Json(store.get_run(&id)?))
}

async fn list_accounts(State(store): State<Arc<Store>>) -> ApiResult<Value> {
    let accounts: Vec<Value> = store
        .list_accounts()?
        .into_iter()
        .map(|a| {
            json!({
                "account_id": a.account_id,
                "building_id": a.building_id,
                "service_type": a.service_type,
                "service_group": a.service_group(),
                "building_sqft": a.building_sqft,
                "accounts_in_building": a.accounts_in_building,
            })
        })
        .collect();
    Ok(Json(Value::Array(accounts)))
}

fn envelope(run_id: String, data: Value) -> Json<Value> {
    Json(json!({ "run_id": run_id, "data": data }))
}

async fn account_series(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(params): Params,
) -> ApiResult<Value> {
    check_params(&params, &["run"])?;
    let (run, data) = store
        .plot_data(params.get("run").map(String::as_str), KIND_SERIES, &id)?
        .ok_or_else(|| ApiError::not_found(format!("no series for account {id}")))?;
    Ok(envelope(run, data))
}

async fn list_groups(State(store): State<Arc<Store>>, Query(params): Params) -> ApiResult<Value> {
    check_params(&params, &["run"])?;
    match store.plot_data(params.get("run").map(String::as_str), KIND_GROUPS, ALL_KEY)? {
        Some((run, data)) => Ok(envelope(run, data)),
        None => Ok(Json(json!({ "run_id": null, "data": [] }))),
    }
}

/// Plot data for one group and fiscal year; the latest fiscal year when
/// `fy` is omitted.
fn group_year(store: &Store, kind: &str, group_id: &str, params: &HashMap<String, String>) -> ApiResult<Value> {
    check_params(params, &["fy", "run"])?;
    let run = params.get("run").map(String::as_str);
    let fy = match parse_param::<i32>(params, "fy")? {
        Some(fy) => fy,
        None => {
            let prefix = format!("{group_id}/");
            store
                .plot_keys(run, kind)?
                .and_then(|(_, keys)| {
                    keys.iter()
                        .filter_map(|k| k.strip_prefix(&prefix).and_then(|fy| fy.parse::<i32>().ok()))
                        .max()
                })
                .ok_or_else(|| ApiError::not_found(format!("no {kind} data for group {group_id}")))?
        }
    };
    let (run, data) = store
        .plot_data(run, kind, &group_year_key(group_id, fy))?
        .ok_or_else(|| ApiError::not_found(format!("no {kind} data for group {group_id} in fiscal year {fy}")))?;
    Ok(envelope(run, data))
}

async fn group_band(State(store): State<Arc<Store>>, Path(id): Path<String>, Query(params): Params) -> ApiResult<Value> {
    group_year(&store, KIND_BAND, &id, &params)
}

async fn group_boxplot(
    State(store): State<Arc<Store>>,
    Path(id): Path<String>,
    Query(params): Params,
) -> ApiResult<Value> {
    group_year(&store, KIND_BOXPLOT, &id, &params)
}

async fn clusters(State(store): State<Arc<Store>>, Query(params): Params) -> ApiResult<Value> {
    check_params(&params, &["run"])?;
    let run = params.get("run").map(String::as_str);
    if let Some(r) = run {
        store.get_run(r)?;
    }
    let (run, data) = store
        .plot_data(run, KIND_CLUSTERS, ALL_KEY)?
        .ok_or_else(|| ApiError::not_found("no cluster results"))?;
    Ok(envelope(run, data))
}
