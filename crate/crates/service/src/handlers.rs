use std::collections::HashMap;
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use adsim_core::env::{Env, EnvConfig, StepRecord};
use adsim_core::policies::shapley_values;
use adsim_core::rng;
use adsim_core::schema::{ActionVector, FeatureKind, PatientState};
use adsim_core::startstate::Cohort;
use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::StatusCode;
use axum::response::IntoResponse;
use axum::Json;
use chrono::Utc;
use rand::Rng;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::{ApiError, ErrorCode};
use crate::session::{log_path, new_id, Session};
use crate::AppState;

type ApiResult<T> = Result<T, ApiError>;
type Shared = State<Arc<AppState>>;

fn lookup(state: &AppState, id: &str) -> ApiResult<Arc<Mutex<Session>>> {
    let mut store = state.sessions.lock().expect("session store poisoned");
    let s = store
        .get(id)
        .cloned()
        .ok_or_else(|| ApiError::not_found(id))?;
    let expired = {
        let g = s.lock().expect("session poisoned");
        Instant::now().saturating_duration_since(g.touched) > state.config.session_ttl
    };
    if expired {
        store.remove(id);
        return Err(ApiError::not_found(id));
    }
    Ok(s)
}

fn insert(state: &AppState, session: Session) -> Value {
    let view = session.view(&state.artifacts.schema);
    state
        .sessions
        .lock()
        .expect("session store poisoned")
        .insert(session.id.clone(), Arc::new(Mutex::new(session)));
    view
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub(crate) struct CreateRequest {
    cohort: Option<String>,
    seed: Option<u64>,
    dynamics: Option<String>,
    /// Raw-unit start state; when absent one is drawn for the cohort.
    initial: Option<Vec<f64>>,
}

pub(crate) async fn create_session(
    State(state): Shared,
    body: Bytes,
) -> ApiResult<impl IntoResponse> {
    let req: CreateRequest = if body.iter().all(u8::is_ascii_whitespace) {
        CreateRequest::default()
    } else {
        serde_json::from_slice(&body)
            .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))?
    };
    let cohort = match &req.cohort {
        Some(c) => Cohort::from_str(c)
            .map_err(|_| ApiError::bad_request(format!("unknown cohort {c:?}")))?,
        None => Cohort::All,
    };
    let dynamics = req
        .dynamics
        .unwrap_or_else(|| state.artifacts.default_dynamics().to_string());
    let sim = state
        .sims
        .get(&dynamics)
        .ok_or_else(|| ApiError::bad_request(format!("unknown dynamics {dynamics:?}")))?;
    let seed = req.seed.unwrap_or_else(|| rand::rng().random());
    let mut env = Env::new(
        Arc::clone(sim),
        EnvConfig {
            cohort,
            ..state.config.env.clone()
        },
    )?;
    let initial = match req.initial {
        Some(v) => env.reset_with(&PatientState::raw(v), seed)?,
        None => env.reset(seed)?,
    };
    let id = new_id();
    let session = Session {
        log_file: state.config.log_dir.as_deref().map(|d| log_path(d, &id)),
        id,
        parent: None,
        cohort,
        seed,
        dynamics,
        created_at: Utc::now(),
        touched: Instant::now(),
        env,
        initial: initial.values,
        log: Vec::new(),
    };
    Ok((StatusCode::CREATED, Json(insert(&state, session))))
}

pub(crate) async fn get_session(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<Json<Value>> {
    let s = lookup(&state, &id)?;
    let g = s.lock().expect("session poisoned");
    Ok(Json(g.view(&state.artifacts.schema)))
}

pub(crate) async fn delete_session(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<StatusCode> {
    lookup(&state, &id)?;
    state
        .sessions
        .lock()
        .expect("session store poisoned")
        .remove(&id);
    Ok(StatusCode::NO_CONTENT)
}

fn parse_action(body: &Value, n: usize) -> ApiResult<ActionVector> {
    let shape = |m: String| ApiError::new(ErrorCode::InvalidActionShape, m);
    let arr = body
        .get("action")
        .and_then(Value::as_array)
        .ok_or_else(|| shape(format!("expected \"action\": an array of {n} bits")))?;
    if arr.len() != n {
        return Err(shape(format!(
            "expected {n} action bits, got {}",
            arr.len()
        )));
    }
    let bits = arr
        .iter()
        .map(|v| match v {
            Value::Bool(b) => Ok(*b),
            Value::Number(x) if x.as_u64() == Some(0) => Ok(false),
            Value::Number(x) if x.as_u64() == Some(1) => Ok(true),
            other => Err(shape(format!("action entries must be 0 or 1, got {other}"))),
        })
        .collect::<ApiResult<Vec<bool>>>()?;
    Ok(ActionVector::new(bits))
}

pub(crate) async fn step_session(
    State(state): Shared,
    Path(id): Path<String>,
    body: Bytes,
) -> ApiResult<Json<Value>> {
    let s = lookup(&state, &id)?;
    let body: Value = serde_json::from_slice(&body)
        .map_err(|e| ApiError::bad_request(format!("malformed request body: {e}")))?;
    let action = parse_action(&body, state.artifacts.schema.n_actions())?;
    let mut g = s.lock().expect("session poisoned");
    if g.env.is_done() {
        return Err(ApiError::new(
            ErrorCode::EpisodeDone,
            "episode is already done",
        ));
    }
    let r = g.env.step(&action)?;
    let record = StepRecord {
        episode: g.seed,
        step: g.log.len(),
        action: action.to_u8(),
        observation: r.observation.values.clone(),
        reward: r.reward,
        terminated: r.terminated,
        truncated: r.truncated,
        reason: r.info.termination_reason,
    };
    g.append(record)
        .map_err(|e| ApiError::new(ErrorCode::Internal, format!("episode log: {e}")))?;
    g.touched = Instant::now();
    Ok(Json(json!({
        "observation": r.observation.values,
        "reward": r.reward,
        "terminated": r.terminated,
        "truncated": r.truncated,
        "info": r.info,
    })))
}

pub(crate) async fn fork_session(
    State(state): Shared,
    Path(id): Path<String>,
) -> ApiResult<impl IntoResponse> {
    let s = lookup(&state, &id)?;
    let mut child = s.lock().expect("session poisoned").clone();
    child.id = new_id();
    child.parent = Some(id);
    child.created_at = Utc::now();
    child.touched = Instant::now();
    if let Some(dir) = &state.config.log_dir {
        let dst = log_path(dir, &child.id);
        match &child.log_file {
            Some(src) if src.exists() => {
                std::fs::copy(src, &dst)
                    .map_err(|e| ApiError::new(ErrorCode::Internal, format!("episode log: {e}")))?;
            }
            _ => {}
        }
        child.log_file = Some(dst);
    }
    Ok((StatusCode::CREATED, Json(insert(&state, child))))
}

fn flag(q: &HashMap<String, String>, key: &str) -> ApiResult<bool> {
    match q.get(key).map(String::as_str) {
        None | Some("false") | Some("0") => Ok(false),
        Some("true") | Some("1") | Some("") => Ok(true),
        Some(other) => Err(ApiError::bad_request(format!(
            "{key} must be true or false, got {other:?}"
        ))),
    }
}

fn number<T: FromStr>(q: &HashMap<String, String>, key: &str, default: T) -> ApiResult<T> {
    q.get(key).map_or(Ok(default), |v| {
        v.parse().map_err(|_| {
            ApiError::bad_request(format!("{key} must be a non-negative integer, got {v:?}"))
        })
    })
}

pub(crate) async fn suggest(
    State(state): Shared,
    Path(id): Path<String>,
    Query(q): Query<HashMap<String, String>>,
) -> ApiResult<Json<Value>> {
    let s = lookup(&state, &id)?;
    let a = &state.artifacts;
    let schema = &a.schema;
    let name = q
        .get("policy")
        .ok_or_else(|| ApiError::bad_request("missing policy"))?;
    let policy = a.policy(name)?;
    let attribute = flag(&q, "attribute")?;
    let seed: u64 = number(&q, "seed", 0)?;
    let n_samples: usize = number(&q, "n_samples", 32)?;
    let n_samples = n_samples.clamp(1, state.config.max_attribution_samples);
    let action_index = match q.get("action") {
        None => schema.ad_treatment_index(),
        Some(v) => v
            .parse::<usize>()
            .ok()
            .filter(|&i| i < schema.n_actions())
            .or_else(|| schema.action_index(v))
            .ok_or_else(|| ApiError::bad_request(format!("unknown action {v:?}")))?,
    };
    let obs = PatientState::raw(s.lock().expect("session poisoned").observation().to_vec());

    let action = policy.act(&obs, &mut rng::seeded(seed))?;
    let on: Vec<&str> = schema
        .actions()
        .iter()
        .zip(action.bits())
        .filter(|(_, b)| **b)
        .map(|(n, _)| n.as_str())
        .collect();
    let attribution = if attribute {
        let baseline = a.scaler.mean.clone();
        let f = |v: &[f64]| policy.score(&PatientState::raw(v.to_vec()), action_index);
        let (values, efficiency_error) =
            shapley_values(f, &obs.values, &baseline, n_samples, seed)?;
        json!({
            "action_index": action_index,
            "action_name": schema.actions()[action_index],
            "features": schema.features().iter().map(|f| f.name.as_str()).collect::<Vec<_>>(),
            "values": values,
            "score": f(&obs.values)?,
            "baseline_score": f(&baseline)?,
            "baseline": baseline,
            "efficiency_error": efficiency_error,
            "n_samples": n_samples,
        })
    } else {
        Value::Null
    };
    Ok(Json(json!({
        "policy": policy.name(),
        "deterministic": policy.is_deterministic(),
        "action": action.to_u8(),
        "action_names": on,
        "attribution": attribution,
    })))
}

pub(crate) async fn schema(State(state): Shared) -> Json<Value> {
    let a = &state.artifacts;
    let sigma = state.config.env.validity_sigma;
    let features: Vec<Value> = a
        .schema
        .features()
        .iter()
        .enumerate()
        .map(|(j, f)| {
            let (low, high) = match f.kind {
                FeatureKind::Continuous => {
                    (a.scaler.mean[j] - sigma * a.scaler.std[j], a.scaler.mean[j] + sigma * a.scaler.std[j])
                }
                FeatureKind::Binary => (0.0, 1.0),
            };
            json!({ "name": f.name, "kind": f.kind, "unit": f.unit, "group": f.group, "low": low, "high": high })
        })
        .collect();
    Json(json!({
        "fingerprint": a.schema.fingerprint(),
        "features": features,
        "actions": a.schema.actions(),
        "time_feature": a.schema.time_feature(),
        "memory_index": a.schema.memory_index(),
        "no_medication_index": a.schema.no_medication_index(),
        "ad_treatment_index": a.schema.ad_treatment_index(),
        "horizon": state.config.env.horizon,
        "dt_months": state.config.env.dt_months,
    }))
}

pub(crate) async fn policies(State(state): Shared) -> Json<Value> {
    let a = &state.artifacts;
    Json(json!({
        "policies": a.policies.values().map(|p| json!({ "name": p.name(), "deterministic": p.is_deterministic() })).collect::<Vec<_>>(),
        "dynamics": a.dynamics.keys().collect::<Vec<_>>(),
        "cohorts": a.start_states.models.keys().collect::<Vec<_>>(),
    }))
}

pub(crate) async fn not_routed() -> ApiError {
    ApiError::bad_request("no such endpoint")
}
