use rand_distr::{Distribution, StandardNormal};

use super::Dynamics;
use crate::container::{Tensor, TensorFile};
use crate::error::{check_len, Error, Result};
use crate::rng::SimRng;
use crate::schema::{FeatureKind, FeatureSchema, PatientState, Visit};

pub(super) const KIND: &str = "linear_gaussian";

/// Reference dynamics with a closed form:
///
/// `z' = z + (dt / ref_months) * (M z + drift + sum_e a_e * effect_e) + noise`
///
/// where the noise is `noise_sd * sqrt(dt / ref_months)` per continuous
/// feature. Binary features are never perturbed by noise.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianDynamics {
    /// Row-major d×d coupling matrix.
    pub drift_matrix: Vec<f64>,
    pub drift: Vec<f64>,
    /// One effect vector per action, each of length d.
    pub action_effects: Vec<Vec<f64>>,
    pub noise_sd: f64,
    pub reference_months: f64,
    noisy: Vec<bool>,
}

impl LinearGaussianDynamics {
    /// Zero coupling, zero drift, zero effects, no noise.
    pub fn zero(schema: &FeatureSchema) -> Self {
        let d = schema.n_features();
        Self {
            drift_matrix: vec![0.0; d * d],
            drift: vec![0.0; d],
            action_effects: vec![vec![0.0; d]; schema.n_actions()],
            noise_sd: 0.0,
            reference_months: 6.0,
            noisy: schema
                .features()
                .iter()
                .map(|f| f.kind == FeatureKind::Continuous)
                .collect(),
        }
    }

    /// Memory score drifts by `drift` per step and AD treatment adds
    /// `treatment_effect` per step; everything else is static.
    pub fn memory_benchmark(schema: &FeatureSchema, drift: f64, treatment_effect: f64) -> Self {
        let mut dynm = Self::zero(schema);
        dynm.drift[schema.memory_index()] = drift;
        dynm.action_effects[schema.ad_treatment_index()][schema.memory_index()] = treatment_effect;
        dynm
    }

    pub fn with_noise(mut self, noise_sd: f64) -> Self {
        self.noise_sd = noise_sd;
        self
    }

    fn dim(&self) -> usize {
        self.drift.len()
    }

    /// Deterministic part of the step.
    pub fn mean_next(&self, state: &[f64], action: &[bool], months: f64) -> Vec<f64> {
        let d = self.dim();
        let scale = months / self.reference_months;
        let mut out = state.to_vec();
        for i in 0..d {
            let mut delta = self.drift[i];
            let row = &self.drift_matrix[i * d..(i + 1) * d];
            delta += row.iter().zip(state).map(|(m, z)| m * z).sum::<f64>();
            for (e, &on) in action.iter().enumerate() {
                if on {
                    delta += self.action_effects[e][i];
                }
            }
            out[i] += scale * delta;
        }
        out
    }

    pub fn to_container(&self, schema: &FeatureSchema) -> TensorFile {
        let d = self.dim();
        let a = self.action_effects.len();
        let mut f = TensorFile::new(KIND, schema.fingerprint());
        f.meta = serde_json::json!({ "reference_months": self.reference_months });
        f.insert(
            "drift_matrix",
            Tensor::matrix(d, d, self.drift_matrix.clone()).expect("square"),
        );
        f.insert("drift", Tensor::vector(self.drift.clone()));
        f.insert(
            "action_effects",
            Tensor::matrix(a, d, self.action_effects.concat()).expect("a×d"),
        );
        f.insert("noise_sd", Tensor::scalar(self.noise_sd));
        f
    }

    pub fn from_container(f: &TensorFile, schema: &FeatureSchema) -> Result<Self> {
        f.expect_kind(KIND)?;
        let d = schema.n_features();
        let a = schema.n_actions();
        let mut out = Self::zero(schema);
        out.drift_matrix = f.expect("drift_matrix", &[d, d])?.to_vec();
        out.drift = f.expect("drift", &[d])?.to_vec();
        out.action_effects = f
            .expect("action_effects", &[a, d])?
            .chunks(d)
            .map(<[f64]>::to_vec)
            .collect();
        out.noise_sd = f.expect("noise_sd", &[])?[0];
        out.reference_months = f.meta["reference_months"].as_f64().ok_or_else(|| {
            Error::InvalidInput("linear dynamics container lacks reference_months".into())
        })?;
        Ok(out)
    }
}

impl Dynamics for LinearGaussianDynamics {
    fn predict_next(&self, history: &[Visit], rng: &mut SimRng) -> Result<PatientState> {
        let last = history
            .last()
            .ok_or_else(|| Error::InvalidInput("empty history".into()))?;
        check_len("linear dynamics state", self.dim(), last.state.len())?;
        check_len(
            "linear dynamics action",
            self.action_effects.len(),
            last.action.len(),
        )?;
        let mut next = self.mean_next(&last.state.values, last.action.bits(), last.months_to_next);
        if self.noise_sd > 0.0 {
            let sd = self.noise_sd
                * (last.months_to_next / self.reference_months)
                    .max(0.0)
                    .sqrt();
            for (v, &noisy) in next.iter_mut().zip(&self.noisy) {
                if noisy {
                    let z: f64 = StandardNormal.sample(rng);
                    *v += sd * z;
                }
            }
        }
        Ok(PatientState::zscaled(next))
    }

    fn name(&self) -> &str {
        "linear_gaussian"
    }

    fn is_deterministic(&self) -> bool {
        self.noise_sd == 0.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::schema::ActionVector;

    #[test]
    fn benchmark_step() {
        let schema = FeatureSchema::adni_default();
        let dynm = LinearGaussianDynamics::memory_benchmark(&schema, -0.05, 0.05);
        let mem = schema.memory_index();
        let mut r = rng::seeded(0);
        let v = Visit::new(
            PatientState::zscaled(vec![0.0; 21]),
            schema.no_medication_action(),
            6.0,
        );
        assert_eq!(
            dynm.predict_next(std::slice::from_ref(&v), &mut r)
                .unwrap()
                .values[mem],
            -0.05
        );
        let v = Visit::new(
            PatientState::zscaled(vec![0.0; 21]),
            schema.ad_treatment_action(),
            6.0,
        );
        assert_eq!(dynm.predict_next(&[v], &mut r).unwrap().values[mem], 0.0);
        // half interval, half step
        let v = Visit::new(
            PatientState::zscaled(vec![0.0; 21]),
            ActionVector::zeros(17),
            3.0,
        );
        assert_eq!(dynm.predict_next(&[v], &mut r).unwrap().values[mem], -0.025);
    }

    #[test]
    fn noise_spares_binary_features() {
        let schema = FeatureSchema::adni_default();
        let dynm = LinearGaussianDynamics::zero(&schema).with_noise(0.5);
        let mut state = vec![0.0; 21];
        for j in schema.binary_indices() {
            state[j] = 1.0;
        }
        let v = Visit::new(
            PatientState::zscaled(state),
            schema.no_medication_action(),
            6.0,
        );
        let next = dynm.predict_next(&[v], &mut rng::seeded(3)).unwrap();
        for j in schema.binary_indices() {
            assert_eq!(next.values[j], 1.0);
        }
        assert!(schema
            .continuous_indices()
            .iter()
            .any(|&j| next.values[j] != 0.0));
        assert!(!dynm.is_deterministic());
    }

    #[test]
    fn container_round_trip() {
        let schema = FeatureSchema::adni_default();
        let dynm = LinearGaussianDynamics::memory_benchmark(&schema, -0.05, 0.05).with_noise(0.1);
        let back =
            LinearGaussianDynamics::from_container(&dynm.to_container(&schema), &schema).unwrap();
        assert_eq!(back, dynm);
    }
}
