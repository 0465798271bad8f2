//! Forecasting models: next-visit state given the visit history.
//!
//! Every model implements [`Dynamics`]. Histories are z-scaled; the last visit
//! in a history carries the action being taken and the months until the
//! forecast visit.

mod gradcheck;
mod linear;
mod loss;
mod mini;
mod rollout;
mod transformer;

pub use gradcheck::{gradient_check, Differentiable, GradCheck};
pub use linear::LinearGaussianDynamics;
pub use loss::{composite_loss, LossBreakdown, RouterStats, LOAD_BALANCE_WEIGHT};
pub use mini::{
    train_mini, train_samples, EpochLog, MiniMoe, MiniObjective, MiniSample, TrainConfig,
    TrainReport,
};
pub use rollout::autoregressive_rollout;
pub use transformer::{moe_forward, ForwardOutput, LayerRoute, MoEConfig, MoeTransformer};

use std::sync::Arc;

use crate::container::TensorFile;
use crate::error::{Error, Result};
use crate::rng::SimRng;
use crate::schema::{FeatureSchema, PatientState, Space, Visit};

pub trait Dynamics: Send + Sync {
    /// Forecasts the z-scaled state that follows the last visit of `history`.
    fn predict_next(&self, history: &[Visit], rng: &mut SimRng) -> Result<PatientState>;

    fn name(&self) -> &str;

    /// Whether `predict_next` ignores the random stream.
    fn is_deterministic(&self) -> bool {
        true
    }
}

impl<D: Dynamics + ?Sized> Dynamics for Arc<D> {
    fn predict_next(&self, history: &[Visit], rng: &mut SimRng) -> Result<PatientState> {
        (**self).predict_next(history, rng)
    }

    fn name(&self) -> &str {
        (**self).name()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

impl<D: Dynamics + ?Sized> Dynamics for Box<D> {
    fn predict_next(&self, history: &[Visit], rng: &mut SimRng) -> Result<PatientState> {
        (**self).predict_next(history, rng)
    }

    fn name(&self) -> &str {
        (**self).name()
    }

    fn is_deterministic(&self) -> bool {
        (**self).is_deterministic()
    }
}

/// Model input row for a z-scaled visit.
pub(crate) fn input_row(visit: &Visit, out: &mut Vec<f64>) -> Result<()> {
    if visit.state.space != Space::Zscaled {
        return Err(Error::Space {
            expected: "zscaled",
            got: visit.state.space.as_str(),
        });
    }
    if visit.state.values.iter().any(|v| !v.is_finite()) || !visit.months_to_next.is_finite() {
        return Err(Error::NonFinite("model input"));
    }
    out.extend_from_slice(&visit.state.values);
    out.extend(
        visit
            .action
            .bits()
            .iter()
            .map(|&b| if b { 1.0 } else { 0.0 }),
    );
    out.push(visit.months_to_next);
    Ok(())
}

/// Loads any supported dynamics container.
pub fn load_dynamics(file: &TensorFile, schema: &FeatureSchema) -> Result<Arc<dyn Dynamics>> {
    file.expect_fingerprint(&schema.fingerprint())?;
    match file.kind.as_str() {
        linear::KIND => Ok(Arc::new(LinearGaussianDynamics::from_container(
            file, schema,
        )?)),
        transformer::KIND => Ok(Arc::new(MoeTransformer::from_container(file, schema)?)),
        mini::KIND => Ok(Arc::new(MiniMoe::from_container(file, schema)?)),
        other => Err(Error::InvalidInput(format!(
            "{other:?} is not a dynamics container"
        ))),
    }
}
