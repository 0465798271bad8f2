//! Treatment policies, the evaluation harness, paired tests and Shapley
//! attribution.

mod cem;
mod eval;
mod shapley;
mod wilcoxon;

pub use cem::{cem_train, CemConfig, CemIteration, CemPolicy};
pub use eval::{evaluate, EvalReport, PairwiseTest, PolicySummary};
pub use shapley::{policy_attribution, shapley_values, ShapleyReport};
pub use wilcoxon::{wilcoxon_signed_rank, Alternative, WilcoxonResult};

use crate::error::Result;
use crate::ingest::IMPAIRMENT_THRESHOLD;
use crate::rng::{self, SimRng};
use crate::schema::{ActionVector, FeatureSchema, PatientState};

pub trait Policy: Send + Sync {
    /// Chooses an action for a raw-unit observation.
    fn act(&self, observation: &PatientState, rng: &mut SimRng) -> Result<ActionVector>;

    fn name(&self) -> &str;

    fn is_deterministic(&self) -> bool {
        true
    }

    /// Scalar score of `action_index` at `observation`, used for attribution.
    /// Defaults to the 0/1 indicator of the emitted bit.
    fn score(&self, observation: &PatientState, action_index: usize) -> Result<f64> {
        let a = self.act(observation, &mut rng::seeded(0))?;
        Ok(if a.get(action_index) { 1.0 } else { 0.0 })
    }
}

impl<P: Policy + ?Sized> Policy for Box<P> {
    fn act(&self, observation: &PatientState, rng: &mut SimRng) -> Result<ActionVector> {
        (**self).act(observation, rng)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
    fn score(&self, observation: &PatientState, action_index: usize) -> Result<f64> {
        (**self).score(observation, action_index)
    }
}

impl<P: Policy + ?Sized> Policy for std::sync::Arc<P> {
    fn act(&self, observation: &PatientState, rng: &mut SimRng) -> Result<ActionVector> {
        (**self).act(observation, rng)
    }
    fn name(&self) -> &str {
        (**self).name()
    }
    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
    fn score(&self, observation: &PatientState, action_index: usize) -> Result<f64> {
        (**self).score(observation, action_index)
    }
}

/// Emits the same action for every state.
#[derive(Debug, Clone)]
pub struct ConstantPolicy {
    action: ActionVector,
    name: String,
}

impl ConstantPolicy {
    pub fn new(action: ActionVector, name: impl Into<String>) -> Self {
        Self {
            action,
            name: name.into(),
        }
    }
}

impl Policy for ConstantPolicy {
    fn act(&self, _: &PatientState, _: &mut SimRng) -> Result<ActionVector> {
        Ok(self.action.clone())
    }

    fn name(&self) -> &str {
        &self.name
    }
}

pub fn no_medication_policy(schema: &FeatureSchema) -> ConstantPolicy {
    ConstantPolicy::new(schema.no_medication_action(), "no_medication")
}

pub fn always_treat_policy(schema: &FeatureSchema) -> ConstantPolicy {
    ConstantPolicy::new(schema.ad_treatment_action(), "always_treat")
}

/// AD treatment when raw ADNI-Mem falls strictly below the threshold,
/// otherwise no medication.
#[derive(Debug, Clone)]
pub struct HeuristicPolicy {
    pub threshold: f64,
    memory: usize,
    n_features: usize,
    treat: ActionVector,
    none: ActionVector,
}

impl Policy for HeuristicPolicy {
    fn act(&self, observation: &PatientState, _: &mut SimRng) -> Result<ActionVector> {
        crate::error::check_len("observation", self.n_features, observation.len())?;
        let m = observation.values[self.memory];
        Ok(if m < self.threshold {
            self.treat.clone()
        } else {
            self.none.clone()
        })
    }

    fn name(&self) -> &str {
        "heuristic"
    }
}

pub fn heuristic_policy(schema: &FeatureSchema, threshold: f64) -> HeuristicPolicy {
    HeuristicPolicy {
        threshold,
        memory: schema.memory_index(),
        n_features: schema.n_features(),
        treat: schema.ad_treatment_action(),
        none: schema.no_medication_action(),
    }
}

pub fn default_heuristic(schema: &FeatureSchema) -> HeuristicPolicy {
    heuristic_policy(schema, IMPAIRMENT_THRESHOLD)
}
