use std::fmt::Write as _;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{wilcoxon_signed_rank, Alternative, Policy};
use crate::env::{rollout, Env, EnvConfig, Simulator};
use crate::error::{Error, Result};
use crate::math::{mean, sample_var};
use crate::par;
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySummary {
    pub name: String,
    pub cumulative: Vec<f64>,
    pub per_step: Vec<f64>,
    pub final_memory: Vec<f64>,
    pub initial_observations: Vec<Vec<f64>>,
    pub episode_lengths: Vec<usize>,
    pub cumulative_mean: f64,
    pub cumulative_ci: (f64, f64),
    pub per_step_mean: f64,
    pub per_step_ci: (f64, f64),
    pub final_memory_mean: f64,
    pub final_memory_ci: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTest {
    pub a: String,
    pub b: String,
    /// One-sided p that `a` earns more cumulative reward than `b`.
    pub p_greater: f64,
    pub p_two_sided: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub n_patients: usize,
    pub seed: u64,
    pub policies: Vec<PolicySummary>,
    pub pairwise: Vec<PairwiseTest>,
}

/// Mean with a normal-approximation 95% interval.
pub(crate) fn mean_ci(v: &[f64]) -> (f64, (f64, f64)) {
    let m = mean(v);
    if v.len() < 2 {
        return (m, (m, m));
    }
    let half = 1.96 * (sample_var(v) / v.len() as f64).sqrt();
    (m, (m - half, m + half))
}

/// Rolls every policy out from the same seed-derived start states.
pub fn evaluate(
    policies: &[&dyn Policy],
    sim: &Arc<Simulator>,
    env_config: &EnvConfig,
    n_patients: usize,
    seed: u64,
) -> Result<EvalReport> {
    if n_patients == 0 || policies.is_empty() {
        return Err(Error::InvalidInput(
            "evaluation needs at least one patient and one policy".into(),
        ));
    }
    let seeds: Vec<u64> = (0..n_patients)
        .map(|i| rng::derive_seed(seed, i as u64))
        .collect();
    let mem = sim.schema.memory_index();
    let mut summaries = Vec::with_capacity(policies.len());
    for policy in policies {
        let episodes = par::map_slice(&seeds, |&s| {
            let mut env = Env::new(Arc::clone(sim), env_config.clone())?;
            rollout(&mut env, *policy, s, env_config.horizon)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let cumulative: Vec<f64> = episodes.iter().map(|e| e.cumulative_reward).collect();
        let per_step: Vec<f64> = episodes
            .iter()
            .map(|e| e.cumulative_reward / e.steps.len().max(1) as f64)
            .collect();
        let final_memory: Vec<f64> = episodes
            .iter()
            .map(|e| {
                e.steps
                    .last()
                    .map_or(e.initial[mem], |s| s.observation[mem])
            })
            .collect();
        let (cm, cci) = mean_ci(&cumulative);
        let (pm, pci) = mean_ci(&per_step);
        let (fm, fci) = mean_ci(&final_memory);
        summaries.push(PolicySummary {
            name: policy.name().to_string(),
            initial_observations: episodes.iter().map(|e| e.initial.clone()).collect(),
            episode_lengths: episodes.iter().map(|e| e.steps.len()).collect(),
            cumulative,
            per_step,
            final_memory,
            cumulative_mean: cm,
            cumulative_ci: cci,
            per_step_mean: pm,
            per_step_ci: pci,
            final_memory_mean: fm,
            final_memory_ci: fci,
        });
    }
    let mut pairwise = Vec::new();
    for i in 0..summaries.len() {
        for j in i + 1..summaries.len() {
            let (a, b) = (&summaries[i], &summaries[j]);
            pairwise.push(PairwiseTest {
                a: a.name.clone(),
                b: b.name.clone(),
                p_greater: wilcoxon_signed_rank(
                    &a.cumulative,
                    &b.cumulative,
                    Alternative::Greater,
                )?
                .p_value,
                p_two_sided: wilcoxon_signed_rank(
                    &a.cumulative,
                    &b.cumulative,
                    Alternative::TwoSided,
                )?
                .p_value,
            });
        }
    }
    Ok(EvalReport {
        n_patients,
        seed,
        policies: summaries,
        pairwise,
    })
}

impl EvalReport {
    pub fn policy(&self, name: &str) -> Option<&PolicySummary> {
        self.policies.iter().find(|p| p.name == name)
    }

    /// Tab-separated table: policy, cumulative, per-step and final memory
    /// means with 95% intervals.
    pub fn to_table(&self) -> String {
        let mut s = String::from(
            "policy\tcumulative_mean\tcumulative_lo\tcumulative_hi\tper_step_mean\tper_step_lo\tper_step_hi\tfinal_mem_mean\tfinal_mem_lo\tfinal_mem_hi\n",
        );
        for p in &self.policies {
            let _ = writeln!(
                s,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                p.name,
                p.cumulative_mean,
                p.cumulative_ci.0,
                p.cumulative_ci.1,
                p.per_step_mean,
                p.per_step_ci.0,
                p.per_step_ci.1,
                p.final_memory_mean,
                p.final_memory_ci.0,
                p.final_memory_ci.1
            );
        }
        s.push_str("\na\tb\tp_greater\tp_two_sided\n");
        for t in &self.pairwise {
            let _ = writeln!(
                s,
                "{}\t{}\t{:.6e}\t{:.6e}",
                t.a, t.b, t.p_greater, t.p_two_sided
            );
        }
        s
    }
}
