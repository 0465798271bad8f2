//! Browser bindings: one virtual patient stepped by hand, policy suggestions
//! with Shapley attribution, and a baseline policy comparison. Every method
//! returns a JSON string.

use adsim_core::artifacts::Artifacts;
use adsim_core::env::{Env, EnvConfig};
use adsim_core::policies::{evaluate, shapley_values, Policy};
use adsim_core::rng;
use adsim_core::schema::{ActionVector, PatientState};
use adsim_core::startstate::Cohort;
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn js_err(e: impl std::fmt::Display) -> JsError {
    JsError::new(&e.to_string())
}

#[wasm_bindgen]
pub struct Demo {
    artifacts: Artifacts,
    env: Option<Env>,
    history: Vec<Vec<f64>>,
}

#[wasm_bindgen]
impl Demo {
    /// Fits the synthetic bundle; `n_subjects` around 400 keeps start-up
    /// under a second.
    #[wasm_bindgen(constructor)]
    pub fn new(n_subjects: usize, seed: u64) -> Result<Demo, JsError> {
        let artifacts = Artifacts::demo(n_subjects.max(50), 3, seed).map_err(js_err)?;
        Ok(Demo {
            artifacts,
            env: None,
            history: Vec::new(),
        })
    }

    /// Feature names, units, action names and the memory index.
    pub fn schema(&self) -> String {
        let s = &self.artifacts.schema;
        json!({
            "features": s.features().iter().map(|f| &f.name).collect::<Vec<_>>(),
            "units": s.features().iter().map(|f| &f.unit).collect::<Vec<_>>(),
            "actions": s.actions(),
            "memory_index": s.memory_index(),
            "no_medication_index": s.no_medication_index(),
            "policies": self.artifacts.policies.keys().collect::<Vec<_>>(),
        })
        .to_string()
    }

    /// Starts a new patient from the cohort's start-state model.
    pub fn reset(&mut self, cohort: &str, seed: u64) -> Result<String, JsError> {
        let cohort: Cohort = cohort.parse().map_err(js_err)?;
        let sim = self.artifacts.simulator("linear_noisy").map_err(js_err)?;
        let mut env = Env::new(
            sim,
            EnvConfig {
                cohort,
                ..EnvConfig::default()
            },
        )
        .map_err(js_err)?;
        let obs = env.reset(seed).map_err(js_err)?;
        self.history = vec![obs.values.clone()];
        self.env = Some(env);
        Ok(json!({ "observation": obs.values }).to_string())
    }

    /// One six-month visit with the given 0/1 action bits.
    pub fn step(&mut self, bits: Vec<u8>) -> Result<String, JsError> {
        let env = self
            .env
            .as_mut()
            .ok_or_else(|| JsError::new("call reset first"))?;
        let action = ActionVector::from_u8(&bits).map_err(js_err)?;
        let r = env.step(&action).map_err(js_err)?;
        self.history.push(r.observation.values.clone());
        Ok(json!({
            "observation": r.observation.values,
            "reward": r.reward,
            "terminated": r.terminated,
            "truncated": r.truncated,
            "reason": r.info.termination_reason,
            "step": r.info.step_index,
        })
        .to_string())
    }

    /// Memory trajectory so far (raw units).
    pub fn memory_history(&self) -> Vec<f64> {
        let m = self.artifacts.schema.memory_index();
        self.history.iter().map(|v| v[m]).collect()
    }

    /// The named policy's action at the current observation and the Shapley
    /// attribution of its score for `action_index` against the cohort mean.
    pub fn suggest(
        &self,
        policy: &str,
        action_index: usize,
        n_samples: usize,
        seed: u64,
    ) -> Result<String, JsError> {
        let env = self
            .env
            .as_ref()
            .ok_or_else(|| JsError::new("call reset first"))?;
        let obs = env
            .observation()
            .ok_or_else(|| JsError::new("no observation"))?
            .clone();
        let pol = self.artifacts.policy(policy).map_err(js_err)?;
        let act = pol.act(&obs, &mut rng::seeded(seed)).map_err(js_err)?;
        let base = self.artifacts.scaler.mean.clone();
        let f = |v: &[f64]| pol.score(&PatientState::raw(v.to_vec()), action_index);
        let (values, err) =
            shapley_values(f, &obs.values, &base, n_samples.clamp(1, 200), seed).map_err(js_err)?;
        Ok(json!({
            "action": act.to_u8(),
            "attribution": values,
            "score": f(&obs.values).map_err(js_err)?,
            "baseline_score": f(&base).map_err(js_err)?,
            "efficiency_error": err,
        })
        .to_string())
    }

    /// Baseline policies over `n_patients` seeded episodes on the
    /// deterministic engine.
    pub fn compare(&self, cohort: &str, n_patients: usize, seed: u64) -> Result<String, JsError> {
        let cohort: Cohort = cohort.parse().map_err(js_err)?;
        let sim = self.artifacts.simulator("linear").map_err(js_err)?;
        let pols: Vec<&dyn Policy> = ["no_medication", "heuristic", "always_treat"]
            .iter()
            .map(|n| self.artifacts.policy(n).map(|p| p.as_ref()))
            .collect::<Result<_, _>>()
            .map_err(js_err)?;
        let cfg = EnvConfig {
            cohort,
            ..EnvConfig::default()
        };
        let report = evaluate(&pols, &sim, &cfg, n_patients.clamp(1, 500), seed).map_err(js_err)?;
        let rows: Vec<Value> = report
            .policies
            .iter()
            .map(|p| json!({ "policy": p.name, "cumulative_mean": p.cumulative_mean, "cumulative_ci": p.cumulative_ci, "final_memory_mean": p.final_memory_mean }))
            .collect();
        let tests: Vec<Value> = report
            .pairwise
            .iter()
            .map(|t| json!({ "a": t.a, "b": t.b, "p_greater": t.p_greater }))
            .collect();
        Ok(json!({ "policies": rows, "pairwise": tests }).to_string())
    }
}
