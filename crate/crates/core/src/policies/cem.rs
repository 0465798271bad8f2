use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::container::{Tensor, TensorFile};
use crate::env::{rollout, Env, EnvConfig, Simulator};
use crate::error::{check_len, Error, Result};
use crate::math::sigmoid;
use crate::par;
use crate::rng::{self, SimRng};
use crate::schema::{ActionVector, FeatureSchema, PatientState, ScalerStats};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemConfig {
    pub population: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub init_mean: f64,
    pub init_sd: f64,
    /// Lower bound on the refitted SD so small elite sets keep exploring.
    pub sd_floor: f64,
    pub rollouts: usize,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population: 64,
            elite_fraction: 0.1,
            iterations: 30,
            init_mean: 0.0,
            init_sd: 1.0,
            sd_floor: 0.01,
            rollouts: 4,
        }
    }
}

impl CemConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return Err(Error::InvalidInput(
                "elite_fraction must lie in (0, 1]".into(),
            ));
        }
        if self.population == 0 || self.rollouts == 0 {
            return Err(Error::InvalidInput(
                "population and rollouts must be positive".into(),
            ));
        }
        Ok(())
    }

    fn n_elite(&self) -> usize {
        ((self.population as f64 * self.elite_fraction).round() as usize).clamp(1, self.population)
    }
}

/// Linear scores on z-scaled observations: action `a` is on when
/// `w_a . z - theta_a > 0`; the result is constraint-repaired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemPolicy {
    /// Per action: `n_features` weights followed by the threshold.
    pub params: Vec<f64>,
    pub n_features: usize,
    pub n_actions: usize,
    schema: FeatureSchema,
    scaler: ScalerStats,
}

impl CemPolicy {
    pub fn new(schema: &FeatureSchema, scaler: &ScalerStats, params: Vec<f64>) -> Result<Self> {
        let (f, a) = (schema.n_features(), schema.n_actions());
        check_len("CEM parameters", a * (f + 1), params.len())?;
        Ok(Self {
            params,
            n_features: f,
            n_actions: a,
            schema: schema.clone(),
            scaler: scaler.clone(),
        })
    }

    pub fn n_params(schema: &FeatureSchema) -> usize {
        schema.n_actions() * (schema.n_features() + 1)
    }

    pub fn margins(&self, observation: &PatientState) -> Result<Vec<f64>> {
        let z = self.scaler.to_zspace(observation)?;
        let f = self.n_features;
        Ok((0..self.n_actions)
            .map(|a| {
                let p = &self.params[a * (f + 1)..(a + 1) * (f + 1)];
                crate::math::dot(&p[..f], &z.values) - p[f]
            })
            .collect())
    }
}

impl Policy for CemPolicy {
    fn act(&self, observation: &PatientState, _: &mut SimRng) -> Result<ActionVector> {
        let bits = self
            .margins(observation)?
            .into_iter()
            .map(|m| m > 0.0)
            .collect();
        Ok(self.schema.repair_action(&ActionVector::new(bits)))
    }

    fn name(&self) -> &str {
        "cem"
    }

    /// Logistic of the action's margin (before repair).
    fn score(&self, observation: &PatientState, action_index: usize) -> Result<f64> {
        let m = self.margins(observation)?;
        m.get(action_index)
            .map(|&v| sigmoid(v))
            .ok_or(Error::Dimension {
                context: "action index",
                expected: self.n_actions,
                got: action_index,
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CemIteration {
    pub iteration: usize,
    pub population_mean: f64,
    pub elite_mean: f64,
    pub best: f64,
}

/// Cross-entropy method over [`CemPolicy`] parameters. Every candidate is
/// scored on the same start-state seeds in every iteration, so the objective
/// is stationary; the final sampling mean is returned as the policy.
pub fn cem_train(
    sim: &Arc<Simulator>,
    env_config: &EnvConfig,
    config: &CemConfig,
    seed: u64,
) -> Result<(CemPolicy, Vec<CemIteration>)> {
    config.validate()?;
    env_config.validate()?;
    let schema = &sim.schema;
    let dim = CemPolicy::n_params(schema);
    let mut mean = vec![config.init_mean; dim];
    let mut sd = vec![config.init_sd; dim];
    let mut sampler = rng::substream(seed, 0);
    let n_elite = config.n_elite();
    let mut curve = Vec::with_capacity(config.iterations);
    let seeds: Vec<u64> = (0..config.rollouts)
        .map(|r| rng::derive_seed(seed, r as u64))
        .collect();

    for it in 0..config.iterations {
        let candidates: Vec<Vec<f64>> = (0..config.population)
            .map(|_| {
                (0..dim)
                    .map(|i| {
                        let z: f64 = StandardNormal.sample(&mut sampler);
                        mean[i] + sd[i] * z
                    })
                    .collect()
            })
            .collect();
        let scores = par::map_slice(&candidates, |params| -> Result<f64> {
            let policy = CemPolicy::new(schema, &sim.scaler, params.clone())?;
            let mut env = Env::new(Arc::clone(sim), env_config.clone())?;
            let mut total = 0.0;
            for &s in &seeds {
                total += rollout(&mut env, &policy, s, env_config.horizon)?.cumulative_reward;
            }
            Ok(total / seeds.len() as f64)
        })
        .into_iter()
        .collect::<Result<Vec<f64>>>()?;

        let mut order: Vec<usize> = (0..candidates.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
        let elite = &order[..n_elite];
        for i in 0..dim {
            let m = elite.iter().map(|&e| candidates[e][i]).sum::<f64>() / n_elite as f64;
            let v = elite
                .iter()
                .map(|&e| (candidates[e][i] - m).powi(2))
                .sum::<f64>()
                / n_elite as f64;
            mean[i] = m;
            sd[i] = v.sqrt().max(config.sd_floor);
        }
        let top = order[0];
        curve.push(CemIteration {
            iteration: it,
            population_mean: scores.iter().sum::<f64>() / scores.len() as f64,
            elite_mean: elite.iter().map(|&e| scores[e]).sum::<f64>() / n_elite as f64,
            best: scores[top],
        });
    }
    Ok((CemPolicy::new(schema, &sim.scaler, mean)?, curve))
}

pub const KIND: &str = "cem_linear";

impl CemPolicy {
    pub fn to_container(&self) -> TensorFile {
        let mut f = TensorFile::new(KIND, self.schema.fingerprint());
        f.insert(
            "params",
            Tensor::matrix(self.n_actions, self.n_features + 1, self.params.clone())
                .expect("shape"),
        );
        f
    }

    pub fn from_container(
        f: &TensorFile,
        schema: &FeatureSchema,
        scaler: &ScalerStats,
    ) -> Result<Self> {
        f.expect_kind(KIND)?;
        f.expect_fingerprint(&schema.fingerprint())?;
        let p = f.expect("params", &[schema.n_actions(), schema.n_features() + 1])?;
        Self::new(schema, scaler, p.to_vec())
    }
}
