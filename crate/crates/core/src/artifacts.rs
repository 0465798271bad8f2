//! The immutable bundle an interactive front end needs: schema, scaler,
//! start-state mixtures, named dynamics and named policies.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use crate::clinician::{bc_policy, BcMode, BcNet};
use crate::container::TensorFile;
use crate::dynamics::{load_dynamics, Dynamics, LinearGaussianDynamics};
use crate::env::Simulator;
use crate::error::{Error, Result};
use crate::ingest::{io, synth_cohort, CohortSummary};
use crate::policies::{
    always_treat_policy, default_heuristic, no_medication_policy, CemPolicy, Policy,
};
use crate::schema::{FeatureSchema, ScalerStats};
use crate::startstate::{EmConfig, StartStateModels};

/// Per-step memory drift of the built-in linear engine (z units).
pub const DEMO_DRIFT: f64 = -0.05;
/// Per-step AD-treatment effect of the built-in linear engine (z units).
pub const DEMO_EFFECT: f64 = 0.08;

#[derive(Clone)]
pub struct Artifacts {
    pub schema: FeatureSchema,
    pub scaler: ScalerStats,
    pub start_states: StartStateModels,
    pub dynamics: BTreeMap<String, Arc<dyn Dynamics>>,
    pub policies: BTreeMap<String, Arc<dyn Policy>>,
}

/// Files to load; the scaler and start-state models are required.
#[derive(Debug, Clone, Default)]
pub struct ArtifactPaths {
    pub schema: Option<PathBuf>,
    pub scaler: PathBuf,
    pub start_states: PathBuf,
    /// Named dynamics containers.
    pub dynamics: Vec<(String, PathBuf)>,
    pub bc: Option<PathBuf>,
    pub cem: Option<PathBuf>,
}

impl Artifacts {
    /// Everything fitted on a synthetic reference cohort, with the linear
    /// memory engine as `linear` (deterministic) and `linear_noisy`.
    pub fn demo(n_subjects: usize, max_k: usize, seed: u64) -> Result<Self> {
        let schema = FeatureSchema::adni_default();
        let cohort = synth_cohort(
            n_subjects,
            seed,
            &CohortSummary::adni_reference(&schema),
            &schema,
        );
        let scaler = ScalerStats::fit(&schema, cohort.iter().flat_map(|t| t.states()))?;
        let (start_states, _) = StartStateModels::fit(
            &cohort,
            &schema,
            &scaler,
            1..=max_k.max(1),
            seed,
            &EmConfig::default(),
        )?;
        let linear = LinearGaussianDynamics::memory_benchmark(&schema, DEMO_DRIFT, DEMO_EFFECT);
        let mut dynamics: BTreeMap<String, Arc<dyn Dynamics>> = BTreeMap::new();
        dynamics.insert("linear".into(), Arc::new(linear.clone()));
        dynamics.insert("linear_noisy".into(), Arc::new(linear.with_noise(0.05)));
        let mut out = Self {
            policies: BTreeMap::new(),
            schema,
            scaler,
            start_states,
            dynamics,
        };
        out.add_baselines();
        Ok(out)
    }

    pub fn load(paths: &ArtifactPaths) -> Result<Self> {
        let schema = match &paths.schema {
            Some(p) => FeatureSchema::from_manifest(&std::fs::read_to_string(p)?)?,
            None => FeatureSchema::adni_default(),
        };
        let scaler = io::scaler_from_container(&TensorFile::load(&paths.scaler)?, &schema)?;
        let start_states =
            StartStateModels::from_container(&TensorFile::load(&paths.start_states)?, &schema)?;
        if paths.dynamics.is_empty() {
            return Err(Error::InvalidInput(
                "at least one dynamics model is required".into(),
            ));
        }
        let mut dynamics = BTreeMap::new();
        for (name, p) in &paths.dynamics {
            dynamics.insert(name.clone(), load_dynamics(&TensorFile::load(p)?, &schema)?);
        }
        let mut out = Self {
            policies: BTreeMap::new(),
            schema,
            scaler,
            start_states,
            dynamics,
        };
        out.add_baselines();
        if let Some(p) = &paths.bc {
            let net = BcNet::from_container(&TensorFile::load(p)?, &out.schema)?;
            let pol = bc_policy(net, &out.schema, &out.scaler, BcMode::Threshold, 1)?;
            out.policies.insert(pol.name().to_string(), Arc::new(pol));
        }
        if let Some(p) = &paths.cem {
            let pol = CemPolicy::from_container(&TensorFile::load(p)?, &out.schema, &out.scaler)?;
            out.policies.insert(pol.name().to_string(), Arc::new(pol));
        }
        Ok(out)
    }

    fn add_baselines(&mut self) {
        let base: [Arc<dyn Policy>; 3] = [
            Arc::new(no_medication_policy(&self.schema)),
            Arc::new(always_treat_policy(&self.schema)),
            Arc::new(default_heuristic(&self.schema)),
        ];
        for p in base {
            self.policies.insert(p.name().to_string(), p);
        }
    }

    pub fn add_policy(&mut self, policy: Arc<dyn Policy>) {
        self.policies.insert(policy.name().to_string(), policy);
    }

    /// The first dynamics name in sorted order.
    pub fn default_dynamics(&self) -> &str {
        self.dynamics
            .keys()
            .next()
            .map(String::as_str)
            .unwrap_or("")
    }

    pub fn simulator(&self, dynamics: &str) -> Result<Arc<Simulator>> {
        let d = self
            .dynamics
            .get(dynamics)
            .ok_or_else(|| Error::InvalidInput(format!("unknown dynamics {dynamics:?}")))?;
        Ok(Arc::new(Simulator::new(
            self.schema.clone(),
            self.scaler.clone(),
            Arc::clone(d),
            Some(self.start_states.clone()),
        )?))
    }

    pub fn policy(&self, name: &str) -> Result<&Arc<dyn Policy>> {
        self.policies
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown policy {name:?}")))
    }
}
