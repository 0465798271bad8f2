use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Largest number of nonzero differences handled by exact enumeration.
pub const EXACT_MAX_N: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `a` tends to exceed `b`.
    Greater,
    Less,
    TwoSided,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// Sum of ranks of positive differences.
    pub w_plus: f64,
    pub p_value: f64,
    /// Nonzero differences used.
    pub n: usize,
    pub exact: bool,
}

/// Midranks of `v` (1-based).
fn midranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Paired signed-rank test of `a - b`.
pub fn wilcoxon_signed_rank(
    a: &[f64],
    b: &[f64],
    alternative: Alternative,
) -> Result<WilcoxonResult> {
    check_len("wilcoxon pairs", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::InvalidInput(
            "wilcoxon needs at least one pair".into(),
        ));
    }
    let d: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|v| *v != 0.0)
        .collect();
    if d.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("wilcoxon differences"));
    }
    let n = d.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            w_plus: 0.0,
            p_value: 1.0,
            n: 0,
            exact: true,
        });
    }
    let abs: Vec<f64> = d.iter().map(|v| v.abs()).collect();
    let ranks = midranks(&abs);
    let w_plus: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();

    if n <= EXACT_MAX_N {
        // doubled ranks are integers, so comparisons are exact
        let r2: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let obs = (2.0 * w_plus).round() as u64;
        let total = 1u64 << n;
        let (mut ge, mut le) = (0u64, 0u64);
        for mask in 0..total {
            let w: u64 = (0..n).filter(|&i| mask >> i & 1 == 1).map(|i| r2[i]).sum();
            ge += u64::from(w >= obs);
            le += u64::from(w <= obs);
        }
        let p_ge = ge as f64 / total as f64;
        let p_le = le as f64 / total as f64;
        let p = match alternative {
            Alternative::Greater => p_ge,
            Alternative::Less => p_le,
            Alternative::TwoSided => (2.0 * p_ge.min(p_le)).min(1.0),
        };
        return Ok(WilcoxonResult {
            w_plus,
            p_value: p,
            n,
            exact: true,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut sorted = ranks.clone();
    sorted.sort_by(f64::total_cmp);
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        i = j + 1;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let sd = var.sqrt();
    let p = if sd == 0.0 {
        1.0
    } else {
        match alternative {
            Alternative::Greater => normal_sf((w_plus - mean - 0.5) / sd),
            Alternative::Less => normal_sf(-(w_plus - mean + 0.5) / sd),
            Alternative::TwoSided => {
                let z = ((w_plus - mean).abs() - 0.5).max(0.0) / sd;
                (2.0 * normal_sf(z)).min(1.0)
            }
        }
    };
    Ok(WilcoxonResult {
        w_plus,
        p_value: p,
        n,
        exact: false,
    })
}

/// Upper tail of the standard normal.
fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn six_positive_differences() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let b = [0.0; 6];
        let r = wilcoxon_signed_rank(&a, &b, Alternative::Greater).unwrap();
        assert_eq!(r.p_value, 1.0 / 64.0);
        assert_eq!(r.w_plus, 21.0);
        assert!(r.exact);
    }

    #[test]
    fn identical_samples() {
        let a = [0.3, 1.0, -2.0];
        for alt in [
            Alternative::Greater,
            Alternative::Less,
            Alternative::TwoSided,
        ] {
            assert_eq!(wilcoxon_signed_rank(&a, &a, alt).unwrap().p_value, 1.0);
        }
    }

    #[test]
    fn midranks_for_ties() {
        assert_eq!(midranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn normal_approximation_with_continuity() {
        // W+ = 300, mean 232.5, var 2363.75: p = 1 - Phi(66.5 / sqrt(2363.75))
        let a: Vec<f64> = (1..=30)
            .map(|i| i as f64 * if i % 3 == 0 { -1.0 } else { 1.0 })
            .collect();
        let r = wilcoxon_signed_rank(&a, &vec![0.0; 30], Alternative::Greater).unwrap();
        assert!(!r.exact);
        assert_eq!(r.w_plus, 300.0);
        assert!(
            (r.p_value - 0.08408948986167625).abs() < 1e-12,
            "{}",
            r.p_value
        );
    }
}
