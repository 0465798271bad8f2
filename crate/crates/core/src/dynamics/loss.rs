use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::math::{argmax, bce_with_logit};

pub const LOAD_BALANCE_WEIGHT: f64 = 0.005;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub mse: f64,
    pub bce: f64,
    pub load_balance: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(mse: f64, bce: f64, load_balance: f64) -> Self {
        Self {
            mse,
            bce,
            load_balance,
            total: mse + bce + LOAD_BALANCE_WEIGHT * load_balance,
        }
    }
}

/// Per-expert assignment fractions `f_e` and mean router probabilities `P_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct RouterStats {
    pub fractions: Vec<f64>,
    pub mean_probs: Vec<f64>,
}

impl RouterStats {
    /// Hard top-1 fractions and mean probabilities over a set of tokens.
    pub fn from_probs(probs: &[Vec<f64>], n_experts: usize) -> Self {
        let mut fractions = vec![0.0; n_experts];
        let mut mean_probs = vec![0.0; n_experts];
        if probs.is_empty() {
            return Self {
                fractions,
                mean_probs,
            };
        }
        let n = probs.len() as f64;
        for p in probs {
            fractions[argmax(p)] += 1.0 / n;
            for (m, v) in mean_probs.iter_mut().zip(p) {
                *m += v / n;
            }
        }
        Self {
            fractions,
            mean_probs,
        }
    }

    pub fn load_balance(&self) -> f64 {
        let e = self.fractions.len() as f64;
        e * self
            .fractions
            .iter()
            .zip(&self.mean_probs)
            .map(|(f, p)| f * p)
            .sum::<f64>()
    }

    pub fn max_fraction(&self) -> f64 {
        self.fractions.iter().copied().fold(0.0, f64::max)
    }
}

/// Composite forecasting loss: mean squared error over continuous targets,
/// mean binary cross-entropy over binary targets (from logits) and the
/// weighted load-balancing term.
pub fn composite_loss(
    pred_continuous: &[f64],
    target_continuous: &[f64],
    binary_logits: &[f64],
    target_binary: &[f64],
    router: &RouterStats,
) -> Result<LossBreakdown> {
    check_len(
        "continuous targets",
        pred_continuous.len(),
        target_continuous.len(),
    )?;
    check_len("binary targets", binary_logits.len(), target_binary.len())?;
    check_len(
        "router stats",
        router.fractions.len(),
        router.mean_probs.len(),
    )?;
    if target_binary.iter().any(|&t| t != 0.0 && t != 1.0) {
        return Err(Error::InvalidInput("binary target outside {0, 1}".into()));
    }
    let mse = if pred_continuous.is_empty() {
        0.0
    } else {
        pred_continuous
            .iter()
            .zip(target_continuous)
            .map(|(p, t)| (p - t) * (p - t))
            .sum::<f64>()
            / pred_continuous.len() as f64
    };
    let bce = if binary_logits.is_empty() {
        0.0
    } else {
        binary_logits
            .iter()
            .zip(target_binary)
            .map(|(&l, &t)| bce_with_logit(l, t, 1.0))
            .sum::<f64>()
            / binary_logits.len() as f64
    };
    Ok(LossBreakdown::new(mse, bce, router.load_balance()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(e: usize) -> RouterStats {
        RouterStats {
            fractions: vec![1.0 / e as f64; e],
            mean_probs: vec![1.0 / e as f64; e],
        }
    }

    #[test]
    fn perfect_fit_floor() {
        let logit = ((1.0 - 1e-9) / 1e-9f64).ln();
        let l = composite_loss(
            &[0.3, -1.2],
            &[0.3, -1.2],
            &[logit, -logit],
            &[1.0, 0.0],
            &uniform(8),
        )
        .unwrap();
        assert_eq!(l.mse, 0.0);
        assert!(l.bce < 1.1e-9);
        assert!((l.total - (l.bce + 0.005)).abs() < 1e-15);
    }

    #[test]
    fn load_balance_extremes() {
        let u = uniform(8);
        assert!((u.load_balance() - 1.0).abs() < 1e-12);
        let mut collapsed = RouterStats {
            fractions: vec![0.0; 8],
            mean_probs: vec![0.0; 8],
        };
        collapsed.fractions[3] = 1.0;
        collapsed.mean_probs[3] = 1.0;
        assert_eq!(collapsed.load_balance(), 8.0);
        let l = composite_loss(&[], &[], &[], &[], &u).unwrap();
        assert!((l.total - 0.005).abs() < 1e-15);
    }

    #[test]
    fn uniform_assignment_minimises_load_balance() {
        // every hard assignment of 4 tokens to 4 experts
        let (e, n) = (4usize, 4usize);
        let mut best = f64::INFINITY;
        let mut best_is_uniform = false;
        for code in 0..e.pow(n as u32) {
            let probs: Vec<Vec<f64>> = (0..n)
                .map(|t| {
                    let k = code / e.pow(t as u32) % e;
                    (0..e).map(|j| if j == k { 1.0 } else { 0.0 }).collect()
                })
                .collect();
            let s = RouterStats::from_probs(&probs, e);
            let lb = s.load_balance();
            if lb < best - 1e-12 {
                best = lb;
                best_is_uniform = s.fractions.iter().all(|&f| (f - 0.25).abs() < 1e-12);
            }
        }
        assert!((best - 1.0).abs() < 1e-12);
        assert!(best_is_uniform);
    }

    #[test]
    fn rejects_mismatch() {
        assert!(composite_loss(&[1.0], &[], &[], &[], &uniform(2)).is_err());
        assert!(composite_loss(&[], &[], &[0.0], &[0.5], &uniform(2)).is_err());
    }

    #[test]
    fn conservation() {
        let probs = vec![
            vec![0.2, 0.5, 0.3],
            vec![0.6, 0.1, 0.3],
            vec![0.1, 0.1, 0.8],
        ];
        let s = RouterStats::from_probs(&probs, 3);
        assert!((s.fractions.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert!(s.mean_probs.iter().all(|&p| (0.0..=1.0).contains(&p)));
    }
}
