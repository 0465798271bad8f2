//! Episode state machine over a dynamics model.

use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dynamics::Dynamics;
use crate::error::{check_len, Error, Result};
use crate::policies::Policy;
use crate::rng::{self, SimRng};
use crate::schema::{
    ActionVector, FeatureKind, FeatureSchema, PatientState, ScalerStats, Space, Visit,
};
use crate::startstate::{Cohort, StartStateModels};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub horizon: usize,
    pub dt_months: f64,
    pub validity_sigma: f64,
    pub rxx: f64,
    pub reward_clip: f64,
    pub penalty: f64,
    pub cohort: Cohort,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: 22,
            dt_months: 6.0,
            validity_sigma: 3.0,
            rxx: 0.91,
            reward_clip: 10.0,
            penalty: -10.0,
            cohort: Cohort::All,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::InvalidInput("horizon must be at least 1".into()));
        }
        if !(self.dt_months > 0.0) {
            return Err(Error::InvalidInput("dt_months must be positive".into()));
        }
        if !(self.rxx > 0.0 && self.rxx < 1.0) {
            return Err(Error::InvalidInput("rxx must lie in (0, 1)".into()));
        }
        if !(self.validity_sigma > 0.0) || !(self.reward_clip > 0.0) {
            return Err(Error::InvalidInput(
                "validity_sigma and reward_clip must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Standard error of a difference for unit-variance scores.
    pub fn m_diff(&self) -> f64 {
        (2.0 * (1.0 - self.rxx)).sqrt()
    }
}

/// `clip(10 * (m_t1 - m_t) / sqrt(2 (1 - rxx)), -clip, clip)` on z-scaled
/// memory scores.
pub fn reward(m_t: f64, m_t1: f64, rxx: f64, clip: f64) -> f64 {
    let m_diff = (2.0 * (1.0 - rxx)).sqrt();
    (10.0 * (m_t1 - m_t) / m_diff).clamp(-clip, clip)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    None,
    InvalidAction,
    OutOfDistribution,
    Horizon,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepInfo {
    pub termination_reason: TerminationReason,
    pub step_index: usize,
    pub memory_before: f64,
    pub memory_after: Option<f64>,
    /// Per feature, whether the forecast stayed inside the validity band
    /// (binary features are always valid). Empty when no forecast was made.
    pub validity: Vec<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepResult {
    pub observation: PatientState,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

/// Read-only pieces shared by many environments.
pub struct Simulator {
    pub schema: FeatureSchema,
    pub scaler: ScalerStats,
    pub dynamics: Arc<dyn Dynamics>,
    pub start_states: Option<StartStateModels>,
}

impl Simulator {
    pub fn new(
        schema: FeatureSchema,
        scaler: ScalerStats,
        dynamics: Arc<dyn Dynamics>,
        start_states: Option<StartStateModels>,
    ) -> Result<Self> {
        check_len("scaler", schema.n_features(), scaler.len())?;
        Ok(Self {
            schema,
            scaler,
            dynamics,
            start_states,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EnvState {
    /// z-scaled visits; the last visit's action is filled in when stepping.
    pub history: Vec<Visit>,
    pub raw: Vec<PatientState>,
    pub step_index: usize,
    pub done: bool,
    pub reason: TerminationReason,
    pub cumulative_reward: f64,
}

/// One episode at a time; cheap to clone for forking.
#[derive(Clone)]
pub struct Env {
    sim: Arc<Simulator>,
    config: EnvConfig,
    state: Option<EnvState>,
    rng: SimRng,
}

impl Env {
    pub fn new(sim: Arc<Simulator>, config: EnvConfig) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            sim,
            config,
            state: None,
            rng: rng::seeded(rng::DEFAULT_SEED),
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn simulator(&self) -> &Arc<Simulator> {
        &self.sim
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.state.as_ref().is_none_or(|s| s.done)
    }

    /// Samples a start state for the configured cohort.
    pub fn reset(&mut self, seed: u64) -> Result<PatientState> {
        self.rng = rng::seeded(seed);
        let models = self
            .sim
            .start_states
            .as_ref()
            .ok_or_else(|| Error::MissingStartModel(self.config.cohort.as_str().into()))?;
        let z = models.sample(self.config.cohort, &self.sim.schema, &mut self.rng)?;
        self.start(z)
    }

    /// Starts from an explicit state (raw or z-scaled).
    pub fn reset_with(&mut self, initial: &PatientState, seed: u64) -> Result<PatientState> {
        self.rng = rng::seeded(seed);
        self.sim.schema.check_state(initial)?;
        let z = self.sim.scaler.to_zspace(initial)?;
        self.start(z)
    }

    fn start(&mut self, z: PatientState) -> Result<PatientState> {
        if z.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("initial state"));
        }
        let raw = self.sim.scaler.inverse_scale(&z)?;
        let n_actions = self.sim.schema.n_actions();
        self.state = Some(EnvState {
            history: vec![Visit::new(z, ActionVector::zeros(n_actions), 0.0)],
            raw: vec![raw.clone()],
            step_index: 0,
            done: false,
            reason: TerminationReason::None,
            cumulative_reward: 0.0,
        });
        Ok(raw)
    }

    pub fn observation(&self) -> Option<&PatientState> {
        self.state.as_ref().and_then(|s| s.raw.last())
    }

    pub fn step(&mut self, action: &ActionVector) -> Result<StepResult> {
        let schema = &self.sim.schema;
        let scaler = &self.sim.scaler;
        let cfg = &self.config;
        let st = self.state.as_mut().ok_or(Error::EpisodeDone)?;
        if st.done {
            return Err(Error::EpisodeDone);
        }
        check_len("action", schema.n_actions(), action.len())?;
        let mem = schema.memory_index();
        let current_raw = st.raw.last().expect("history is nonempty").clone();
        let current_z = st
            .history
            .last()
            .expect("history is nonempty")
            .state
            .clone();
        let memory_before = current_raw.values[mem];

        if !schema.action_is_valid(action) {
            st.done = true;
            st.reason = TerminationReason::InvalidAction;
            st.cumulative_reward += cfg.penalty;
            return Ok(StepResult {
                observation: current_raw,
                reward: cfg.penalty,
                terminated: true,
                truncated: false,
                info: StepInfo {
                    termination_reason: TerminationReason::InvalidAction,
                    step_index: st.step_index,
                    memory_before,
                    memory_after: None,
                    validity: Vec::new(),
                },
            });
        }

        let last = st.history.last_mut().expect("history is nonempty");
        last.action = action.clone();
        last.months_to_next = cfg.dt_months;
        let forecast = self.sim.dynamics.predict_next(&st.history, &mut self.rng)?;
        if forecast.space != Space::Zscaled {
            return Err(Error::Space {
                expected: "zscaled",
                got: forecast.space.as_str(),
            });
        }
        check_len("forecast", schema.n_features(), forecast.len())?;
        if forecast.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("forecast"));
        }

        // pin demographics, advance age analytically
        let initial_z = &st.history[0].state;
        let age = schema.age_index();
        let mut z_next = forecast.values;
        for j in schema.binary_indices() {
            z_next[j] = initial_z.values[j];
        }
        let mut raw_next = scaler.inverse_scale(&PatientState::zscaled(z_next.clone()))?;
        raw_next.values[age] = current_raw.values[age] + cfg.dt_months / 12.0;
        z_next[age] = (raw_next.values[age] - scaler.mean[age]) / scaler.std[age];

        let validity: Vec<bool> = (0..schema.n_features())
            .map(|j| {
                schema.kind(j) == FeatureKind::Binary || {
                    let lo = scaler.mean[j] - cfg.validity_sigma * scaler.std[j];
                    let hi = scaler.mean[j] + cfg.validity_sigma * scaler.std[j];
                    (lo..=hi).contains(&raw_next.values[j])
                }
            })
            .collect();
        if validity.iter().any(|v| !v) {
            st.done = true;
            st.reason = TerminationReason::OutOfDistribution;
            return Ok(StepResult {
                observation: raw_next,
                reward: 0.0,
                terminated: true,
                truncated: false,
                info: StepInfo {
                    termination_reason: TerminationReason::OutOfDistribution,
                    step_index: st.step_index,
                    memory_before,
                    memory_after: None,
                    validity,
                },
            });
        }

        let r = reward(current_z.values[mem], z_next[mem], cfg.rxx, cfg.reward_clip);
        let memory_after = raw_next.values[mem];
        st.history.push(Visit::new(
            PatientState::zscaled(z_next),
            ActionVector::zeros(schema.n_actions()),
            0.0,
        ));
        st.raw.push(raw_next.clone());
        st.step_index += 1;
        st.cumulative_reward += r;
        let truncated = st.step_index >= cfg.horizon;
        if truncated {
            st.done = true;
            st.reason = TerminationReason::Horizon;
        }
        Ok(StepResult {
            observation: raw_next,
            reward: r,
            terminated: false,
            truncated,
            info: StepInfo {
                termination_reason: st.reason,
                step_index: st.step_index,
                memory_before,
                memory_after: Some(memory_after),
                validity,
            },
        })
    }
}

/// One line of an episode log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: u64,
    pub step: usize,
    pub action: Vec<u8>,
    pub observation: Vec<f64>,
    pub reward: f64,
    pub terminated: bool,
    pub truncated: bool,
    pub reason: TerminationReason,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub seed: u64,
    pub policy: String,
    pub initial: Vec<f64>,
    pub steps: Vec<StepRecord>,
    pub cumulative_reward: f64,
    pub termination_reason: TerminationReason,
}

impl EpisodeRecord {
    pub fn rewards(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.reward).collect()
    }

    /// Raw memory score after the last step (the initial one if no step
    /// produced an observation).
    pub fn final_memory(&self, schema: &FeatureSchema) -> f64 {
        let mem = schema.memory_index();
        self.steps
            .last()
            .map_or(self.initial[mem], |s| s.observation[mem])
    }

    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for s in &self.steps {
            serde_json::to_writer(&mut w, s)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<StepRecord>> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| Error::Malformed {
            path: "episode log".into(),
            message: format!("line {}: {e}", i + 1),
        })?);
    }
    Ok(out)
}

fn run_episode<P: Policy + ?Sized>(
    env: &mut Env,
    initial: PatientState,
    policy: &P,
    seed: u64,
    max_steps: usize,
) -> Result<EpisodeRecord> {
    let mut policy_rng = rng::substream(seed, 0x706f_6c69);
    let mut obs = initial.clone();
    let mut steps = Vec::new();
    let mut reason = TerminationReason::None;
    for step in 0..max_steps {
        let action = policy.act(&obs, &mut policy_rng)?;
        let res = env.step(&action)?;
        reason = res.info.termination_reason;
        steps.push(StepRecord {
            episode: seed,
            step,
            action: action.to_u8(),
            observation: res.observation.values.clone(),
            reward: res.reward,
            terminated: res.terminated,
            truncated: res.truncated,
            reason,
        });
        obs = res.observation;
        if res.terminated || res.truncated {
            break;
        }
    }
    Ok(EpisodeRecord {
        seed,
        policy: policy.name().to_string(),
        initial: initial.values,
        cumulative_reward: steps.iter().map(|s| s.reward).sum(),
        steps,
        termination_reason: reason,
    })
}

/// Resets from the start-state model and alternates `policy.act` and `step`
/// until the episode ends or `max_steps` steps were taken.
pub fn rollout<P: Policy + ?Sized>(
    env: &mut Env,
    policy: &P,
    seed: u64,
    max_steps: usize,
) -> Result<EpisodeRecord> {
    let initial = env.reset(seed)?;
    run_episode(env, initial, policy, seed, max_steps)
}

/// As [`rollout`] from an explicit initial state.
pub fn rollout_from<P: Policy + ?Sized>(
    env: &mut Env,
    initial: &PatientState,
    policy: &P,
    seed: u64,
    max_steps: usize,
) -> Result<EpisodeRecord> {
    let initial = env.reset_with(initial, seed)?;
    run_episode(env, initial, policy, seed, max_steps)
}
