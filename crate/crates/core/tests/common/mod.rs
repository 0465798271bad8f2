#![allow(dead_code, clippy::needless_range_loop)]

pub mod oracle;

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use adsim_core::dynamics::{Dynamics, LinearGaussianDynamics};
use adsim_core::env::Simulator;
use adsim_core::ingest::{synth_cohort, CohortSummary};
use adsim_core::rng::SimRng;
use adsim_core::schema::{FeatureSchema, PatientState, ScalerStats, Visit};
use adsim_core::startstate::{EmConfig, StartStateModels};
use adsim_core::Result;

/// Adds a fixed z-space delta to the last state and counts calls.
pub struct CountingStub {
    pub calls: AtomicUsize,
    pub delta: Vec<f64>,
}

impl CountingStub {
    pub fn new(delta: Vec<f64>) -> Self {
        Self {
            calls: AtomicUsize::new(0),
            delta,
        }
    }

    pub fn count(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }
}

impl Dynamics for CountingStub {
    fn predict_next(&self, history: &[Visit], _: &mut SimRng) -> Result<PatientState> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        let last = &history.last().unwrap().state;
        Ok(PatientState::zscaled(
            last.values
                .iter()
                .zip(&self.delta)
                .map(|(a, b)| a + b)
                .collect(),
        ))
    }

    fn name(&self) -> &str {
        "counting_stub"
    }
}

pub struct Fixture {
    pub schema: FeatureSchema,
    pub scaler: ScalerStats,
    pub models: StartStateModels,
}

/// Shared per test binary: synthetic reference cohort, its scaler and the
/// three start-state mixtures.
pub fn fixture() -> &'static Fixture {
    static FX: std::sync::OnceLock<Fixture> = std::sync::OnceLock::new();
    FX.get_or_init(build_fixture)
}

fn build_fixture() -> Fixture {
    let schema = FeatureSchema::adni_default();
    let cohort = synth_cohort(1000, 3, &CohortSummary::adni_reference(&schema), &schema);
    let scaler = ScalerStats::fit(&schema, cohort.iter().flat_map(|t| t.states())).unwrap();
    let (models, _) =
        StartStateModels::fit(&cohort, &schema, &scaler, 1..=10, 42, &EmConfig::default()).unwrap();
    Fixture {
        schema,
        scaler,
        models,
    }
}

impl Fixture {
    pub fn sim(&self, dynamics: Arc<dyn Dynamics>) -> Arc<Simulator> {
        Arc::new(
            Simulator::new(
                self.schema.clone(),
                self.scaler.clone(),
                dynamics,
                Some(self.models.clone()),
            )
            .unwrap(),
        )
    }

    pub fn linear_sim(&self, drift: f64, effect: f64) -> Arc<Simulator> {
        self.sim(Arc::new(LinearGaussianDynamics::memory_benchmark(
            &self.schema,
            drift,
            effect,
        )))
    }

    /// A raw state at the scaler mean with valid one-hot demographics.
    pub fn mean_state(&self) -> PatientState {
        let mut v = self.scaler.mean.clone();
        for (_, idx) in self.schema.one_hot_groups() {
            for (k, &j) in idx.iter().enumerate() {
                v[j] = if k == 0 { 1.0 } else { 0.0 };
            }
        }
        PatientState::raw(v)
    }
}
