//! Session-oriented HTTP service over the virtual-patient environment.
//!
//! Endpoints (JSON bodies):
//!
//! | method | path | |
//! |---|---|---|
//! | POST | `/sessions` | `{cohort?, seed?, dynamics?, initial?}` -> session view |
//! | GET | `/sessions/{id}` | session view |
//! | POST | `/sessions/{id}/step` | `{action: [0/1; n_actions]}` -> step result |
//! | POST | `/sessions/{id}/fork` | session view of the copy |
//! | DELETE | `/sessions/{id}` | 204 |
//! | GET | `/sessions/{id}/suggest?policy=&attribute=&action=&n_samples=&seed=` | suggestion |
//! | GET | `/schema` | features, actions, raw bounds |
//! | GET | `/policies` | policies, dynamics, cohorts |
//!
//! Errors carry `{code, message}` with `code` one of `invalid_action_shape`,
//! `session_not_found`, `episode_done`, `bad_request`, `internal`.

mod error;
mod handlers;
mod session;

use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use adsim_core::artifacts::Artifacts;
use adsim_core::env::{EnvConfig, Simulator};
use axum::routing::{get, post};
use axum::Router;

pub use error::{ApiError, ErrorCode};
use session::Session;

#[derive(Debug, Clone)]
pub struct ServiceConfig {
    /// Idle time after which a session is evicted; creating, stepping or
    /// forking a session resets it.
    pub session_ttl: Duration,
    /// Directory for append-only per-session episode logs.
    pub log_dir: Option<PathBuf>,
    pub max_attribution_samples: usize,
    pub env: EnvConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            session_ttl: Duration::from_secs(2 * 3600),
            log_dir: None,
            max_attribution_samples: 200,
            env: EnvConfig::default(),
        }
    }
}

pub struct AppState {
    artifacts: Arc<Artifacts>,
    sims: BTreeMap<String, Arc<Simulator>>,
    sessions: Mutex<HashMap<String, Arc<Mutex<Session>>>>,
    config: ServiceConfig,
}

impl AppState {
    pub fn new(artifacts: Artifacts, config: ServiceConfig) -> adsim_core::Result<Arc<Self>> {
        config.env.validate()?;
        if let Some(dir) = &config.log_dir {
            std::fs::create_dir_all(dir)?;
        }
        let sims = artifacts
            .dynamics
            .keys()
            .map(|name| Ok((name.clone(), artifacts.simulator(name)?)))
            .collect::<adsim_core::Result<_>>()?;
        Ok(Arc::new(Self {
            artifacts: Arc::new(artifacts),
            sims,
            sessions: Mutex::new(HashMap::new()),
            config,
        }))
    }

    pub fn artifacts(&self) -> &Artifacts {
        &self.artifacts
    }

    pub fn config(&self) -> &ServiceConfig {
        &self.config
    }

    pub fn session_count(&self) -> usize {
        self.sessions.lock().expect("session store poisoned").len()
    }

    /// Drops sessions idle for longer than the TTL; returns how many.
    pub fn evict_expired(&self, now: Instant) -> usize {
        let ttl = self.config.session_ttl;
        let mut store = self.sessions.lock().expect("session store poisoned");
        let before = store.len();
        store.retain(|_, s| {
            let s = s.lock().expect("session poisoned");
            now.saturating_duration_since(s.touched) <= ttl
        });
        before - store.len()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/sessions", post(handlers::create_session))
        .route(
            "/sessions/{id}",
            get(handlers::get_session).delete(handlers::delete_session),
        )
        .route("/sessions/{id}/step", post(handlers::step_session))
        .route("/sessions/{id}/fork", post(handlers::fork_session))
        .route("/sessions/{id}/suggest", get(handlers::suggest))
        .route("/schema", get(handlers::schema))
        .route("/policies", get(handlers::policies))
        .fallback(handlers::not_routed)
        .with_state(state)
}

/// Serves until ctrl-c, sweeping expired sessions in the background.
pub async fn serve(listener: tokio::net::TcpListener, state: Arc<AppState>) -> std::io::Result<()> {
    let period =
        (state.config.session_ttl / 4).clamp(Duration::from_millis(10), Duration::from_secs(60));
    let sweeper = {
        let state = Arc::clone(&state);
        tokio::spawn(async move {
            let mut tick = tokio::time::interval(period);
            loop {
                tick.tick().await;
                state.evict_expired(Instant::now());
            }
        })
    };
    let out = axum::serve(listener, router(state))
        .with_graceful_shutdown(async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await;
    sweeper.abort();
    out
}
