use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::Policy;
use crate::error::{Error, Result};
use crate::rng;
use crate::schema::PatientState;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShapleyReport {
    pub action_index: usize,
    pub baseline: Vec<f64>,
    /// Attributions per state, per feature.
    pub per_state: Vec<Vec<f64>>,
    pub mean: Vec<f64>,
    pub mean_abs: Vec<f64>,
    /// Largest |sum of contributions - (f(x) - f(baseline))| over orderings.
    pub max_efficiency_error: f64,
    pub n_samples: usize,
}

/// Monte Carlo permutation Shapley values of `f` at `x` against `baseline`.
/// Returns the attributions and the worst per-ordering efficiency error.
pub fn shapley_values<F>(
    f: F,
    x: &[f64],
    baseline: &[f64],
    n_samples: usize,
    seed: u64,
) -> Result<(Vec<f64>, f64)>
where
    F: Fn(&[f64]) -> Result<f64>,
{
    crate::error::check_len("shapley baseline", x.len(), baseline.len())?;
    if n_samples == 0 {
        return Err(Error::InvalidInput("n_samples must be positive".into()));
    }
    let d = x.len();
    let mut r = rng::seeded(seed);
    let mut order: Vec<usize> = (0..d).collect();
    let mut phi = vec![0.0; d];
    let fx = f(x)?;
    let fb = f(baseline)?;
    let mut worst = 0.0f64;
    for _ in 0..n_samples {
        order.shuffle(&mut r);
        let mut z = baseline.to_vec();
        let mut prev = fb;
        let mut sum = 0.0;
        for &j in &order {
            z[j] = x[j];
            let cur = f(&z)?;
            let c = cur - prev;
            phi[j] += c;
            sum += c;
            prev = cur;
        }
        worst = worst.max((sum - (fx - fb)).abs());
    }
    phi.iter_mut().for_each(|p| *p /= n_samples as f64);
    Ok((phi, worst))
}

/// Attribution of a policy's score for `action_index` over `states`, with
/// the states' mean as the baseline.
pub fn policy_attribution<P: Policy + ?Sized>(
    policy: &P,
    states: &[PatientState],
    action_index: usize,
    n_samples: usize,
    seed: u64,
) -> Result<ShapleyReport> {
    let first = states
        .first()
        .ok_or_else(|| Error::InvalidInput("no states to attribute".into()))?;
    let d = first.len();
    let space = first.space;
    let mut baseline = vec![0.0; d];
    for s in states {
        crate::error::check_len("attribution state", d, s.len())?;
        for (b, v) in baseline.iter_mut().zip(&s.values) {
            *b += v / states.len() as f64;
        }
    }
    let score = |v: &[f64]| {
        policy.score(
            &PatientState {
                values: v.to_vec(),
                space,
            },
            action_index,
        )
    };
    let mut per_state = Vec::with_capacity(states.len());
    let mut worst = 0.0f64;
    for (i, s) in states.iter().enumerate() {
        let (phi, err) = shapley_values(
            score,
            &s.values,
            &baseline,
            n_samples,
            rng::derive_seed(seed, i as u64),
        )?;
        worst = worst.max(err);
        per_state.push(phi);
    }
    let n = states.len() as f64;
    let mean = (0..d)
        .map(|j| per_state.iter().map(|p| p[j]).sum::<f64>() / n)
        .collect();
    let mean_abs = (0..d)
        .map(|j| per_state.iter().map(|p| p[j].abs()).sum::<f64>() / n)
        .collect();
    Ok(ShapleyReport {
        action_index,
        baseline,
        per_state,
        mean,
        mean_abs,
        max_efficiency_error: worst,
        n_samples,
    })
}
