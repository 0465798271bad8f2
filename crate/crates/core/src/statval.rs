//! Trajectory-fidelity statistics: kernel two-sample tests on transitions
//! and Mantel tests on temporal distance structure.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dynamics::{autoregressive_rollout, Dynamics};
use crate::error::{check_len, Error, Result};
use crate::math::{euclidean, mean, pearson, sample_var};
use crate::par;
use crate::rng;
use crate::schema::{FeatureSchema, PatientState, ScalerStats, Space, Trajectory};

/// Clamp applied to |r| before the Fisher transform.
pub const FISHER_CLAMP: f64 = 1.0 - 1e-12;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MmdVariant {
    ShortRange,
    LongRange,
    PerFeature(String),
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MmdResult {
    pub statistic: f64,
    pub p_value: f64,
    pub n_permutations: usize,
    pub bandwidth: f64,
    pub variant: MmdVariant,
    pub n_x: usize,
    pub n_y: usize,
}

fn z_rows(t: &Trajectory) -> Result<Vec<&[f64]>> {
    t.visits
        .iter()
        .map(|v| {
            v.state.expect_space(Space::Zscaled)?;
            Ok(v.state.values.as_slice())
        })
        .collect()
}

fn diff(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

fn need_visits(t: &Trajectory, min: usize) -> Result<()> {
    if t.len() < min {
        return Err(Error::InvalidInput(format!(
            "trajectory {} has {} visits, need at least {min}",
            t.subject_id,
            t.len()
        )));
    }
    Ok(())
}

/// One-step differences `s_{t+1} - s_t` pooled over subjects.
pub fn transitions_short(trajs: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::new();
    for t in trajs {
        need_visits(t, 2)?;
        let rows = z_rows(t)?;
        out.extend(rows.windows(2).map(|w| diff(w[1], w[0])));
    }
    Ok(out)
}

/// First-to-last differences, one row per subject.
pub fn drift_long(trajs: &[Trajectory]) -> Result<Vec<Vec<f64>>> {
    trajs
        .iter()
        .map(|t| {
            need_visits(t, 2)?;
            let rows = z_rows(t)?;
            Ok(diff(rows[rows.len() - 1], rows[0]))
        })
        .collect()
}

/// Median of the pooled pairwise Euclidean distances; 1 when it is zero.
pub fn median_bandwidth(pooled: &[&[f64]]) -> f64 {
    let n = pooled.len();
    let mut d = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for i in 0..n {
        for j in i + 1..n {
            d.push(euclidean(pooled[i], pooled[j]));
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    let mid = d.len() / 2;
    let m = if d.len() % 2 == 1 {
        *d.select_nth_unstable_by(mid, f64::total_cmp).1
    } else {
        let hi = *d.select_nth_unstable_by(mid, f64::total_cmp).1;
        let lo = d[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lo + hi)
    };
    if m > 0.0 && m.is_finite() {
        m
    } else {
        1.0
    }
}

/// Pooled RBF Gram matrix `exp(-|a-b|^2 / (2 h^2))`, row-major.
struct Gram {
    k: Vec<f64>,
    n: usize,
    total_off_diag: f64,
}

impl Gram {
    fn new(pooled: &[&[f64]], bandwidth: f64) -> Self {
        let n = pooled.len();
        let g = 1.0 / (2.0 * bandwidth * bandwidth);
        let rows = par::map_range(n, |i| {
            (0..n)
                .map(|j| {
                    let d2: f64 = pooled[i]
                        .iter()
                        .zip(pooled[j])
                        .map(|(a, b)| (a - b) * (a - b))
                        .sum();
                    (-g * d2).exp()
                })
                .collect::<Vec<f64>>()
        });
        let k: Vec<f64> = rows.into_iter().flatten().collect();
        let mut total = 0.0;
        for i in 0..n {
            for j in 0..n {
                if i != j {
                    total += k[i * n + j];
                }
            }
        }
        Self {
            k,
            n,
            total_off_diag: total,
        }
    }

    fn block_sum(&self, idx: &[usize]) -> f64 {
        let mut s = 0.0;
        for &i in idx {
            let row = &self.k[i * self.n..(i + 1) * self.n];
            for &j in idx {
                if i != j {
                    s += row[j];
                }
            }
        }
        s
    }

    /// Unbiased MMD^2 for the split `xs | ys`.
    fn mmd2(&self, xs: &[usize], ys: &[usize]) -> f64 {
        let (n, m) = (xs.len() as f64, ys.len() as f64);
        let sxx = self.block_sum(xs);
        let syy = self.block_sum(ys);
        let sxy = 0.5 * (self.total_off_diag - sxx - syy);
        sxx / (n * (n - 1.0)) + syy / (m * (m - 1.0)) - 2.0 * sxy / (n * m)
    }
}

fn check_samples(x: &[Vec<f64>], y: &[Vec<f64>]) -> Result<usize> {
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidInput(
            "MMD needs at least 2 rows per sample".into(),
        ));
    }
    let d = x[0].len();
    for r in x.iter().chain(y) {
        check_len("MMD row", d, r.len())?;
        if r.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("MMD sample"));
        }
    }
    Ok(d)
}

/// Unbiased MMD^2 with an RBF kernel of the given bandwidth.
pub fn mmd_unbiased(x: &[Vec<f64>], y: &[Vec<f64>], bandwidth: f64) -> Result<f64> {
    check_samples(x, y)?;
    let pooled: Vec<&[f64]> = x.iter().chain(y).map(Vec::as_slice).collect();
    let gram = Gram::new(&pooled, bandwidth);
    let xs: Vec<usize> = (0..x.len()).collect();
    let ys: Vec<usize> = (x.len()..pooled.len()).collect();
    Ok(gram.mmd2(&xs, &ys))
}

/// Permutation two-sample test with the unbiased MMD^2 statistic. The
/// bandwidth is the pooled median distance, fixed before permuting; the
/// samples are put in a canonical order first so the test is symmetric.
pub fn mmd_rbf_test(
    x: &[Vec<f64>],
    y: &[Vec<f64>],
    n_perm: usize,
    seed: u64,
    variant: MmdVariant,
) -> Result<MmdResult> {
    check_samples(x, y)?;
    let (a, b) = if canonical_le(x, y) { (x, y) } else { (y, x) };
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(Vec::as_slice).collect();
    let bandwidth = median_bandwidth(&pooled);
    let gram = Gram::new(&pooled, bandwidth);
    let n = a.len();
    let xs: Vec<usize> = (0..n).collect();
    let ys: Vec<usize> = (n..pooled.len()).collect();
    let observed = gram.mmd2(&xs, &ys);
    let exceed = par::map_range(n_perm, |r| {
        let mut idx: Vec<usize> = (0..pooled.len()).collect();
        idx.shuffle(&mut rng::seeded(rng::derive_seed(seed, r as u64)));
        usize::from(gram.mmd2(&idx[..n], &idx[n..]) >= observed)
    })
    .into_iter()
    .sum::<usize>();
    Ok(MmdResult {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (n_perm + 1) as f64,
        n_permutations: n_perm,
        bandwidth,
        variant,
        n_x: x.len(),
        n_y: y.len(),
    })
}

fn canonical_le(x: &[Vec<f64>], y: &[Vec<f64>]) -> bool {
    if x.len() != y.len() {
        return x.len() < y.len();
    }
    for (rx, ry) in x.iter().zip(y) {
        for (a, b) in rx.iter().zip(ry) {
            match a.total_cmp(b) {
                std::cmp::Ordering::Less => return true,
                std::cmp::Ordering::Greater => return false,
                std::cmp::Ordering::Equal => {}
            }
        }
    }
    true
}

/// Upper triangle of the time-by-time Euclidean distance matrix.
fn distance_triangle(rows: &[&[f64]]) -> Vec<f64> {
    let t = rows.len();
    let mut out = Vec::with_capacity(t * (t - 1) / 2);
    for i in 0..t {
        for j in i + 1..t {
            out.push(euclidean(rows[i], rows[j]));
        }
    }
    out
}

fn check_pair(pred: &Trajectory, truth: &Trajectory) -> Result<()> {
    check_len("mantel visit count", truth.len(), pred.len())?;
    need_visits(truth, 3)
}

/// Pearson correlation of the two trajectories' distance matrices over time
/// points; `None` when either matrix has zero variance.
pub fn mantel_r(pred: &Trajectory, truth: &Trajectory) -> Result<Option<f64>> {
    check_pair(pred, truth)?;
    let dp = distance_triangle(&z_rows(pred)?);
    let dt = distance_triangle(&z_rows(truth)?);
    Ok(pearson(&dp, &dt))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FisherResult {
    /// tanh of the mean Fisher z.
    pub mean_r: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub t: f64,
    pub p_value: f64,
    pub n: usize,
}

/// One-sided one-sample t-test of mean atanh(r) > 0 with a back-transformed
/// 95% interval.
pub fn mantel_group_fisher(rs: &[f64]) -> Result<FisherResult> {
    if rs.len() < 2 {
        return Err(Error::InvalidInput(
            "Fisher test needs at least 2 correlations".into(),
        ));
    }
    if rs.iter().any(|r| !r.is_finite() || r.abs() > 1.0) {
        return Err(Error::InvalidInput(
            "correlations must lie in [-1, 1]".into(),
        ));
    }
    let z: Vec<f64> = rs
        .iter()
        .map(|r| r.clamp(-FISHER_CLAMP, FISHER_CLAMP).atanh())
        .collect();
    let n = z.len();
    let m = mean(&z);
    let se = (sample_var(&z) / n as f64).sqrt();
    let dist =
        StudentsT::new(0.0, 1.0, (n - 1) as f64).map_err(|e| Error::Numerical(e.to_string()))?;
    let (t, p) = if se > 0.0 {
        let t = m / se;
        (t, dist.sf(t))
    } else if m == 0.0 {
        (0.0, 0.5)
    } else if m > 0.0 {
        (f64::INFINITY, 0.0)
    } else {
        (f64::NEG_INFINITY, 1.0)
    };
    let q = dist.inverse_cdf(0.975);
    Ok(FisherResult {
        mean_r: m.tanh(),
        ci_low: (m - q * se).tanh(),
        ci_high: (m + q * se).tanh(),
        t,
        p_value: p,
        n,
    })
}

struct PreparedPair {
    pred: Vec<f64>,
    truth: Vec<f64>,
    t: usize,
}

impl PreparedPair {
    /// Full pred distance matrix plus the truth triangle.
    fn new(pred: &Trajectory, truth: &Trajectory) -> Result<Self> {
        check_pair(pred, truth)?;
        let p = z_rows(pred)?;
        let t = p.len();
        let mut full = vec![0.0; t * t];
        for i in 0..t {
            for j in 0..t {
                full[i * t + j] = euclidean(p[i], p[j]);
            }
        }
        Ok(Self {
            pred: full,
            truth: distance_triangle(&z_rows(truth)?),
            t,
        })
    }

    fn r_under(&self, perm: &[usize]) -> Option<f64> {
        let t = self.t;
        let mut dp = Vec::with_capacity(self.truth.len());
        for i in 0..t {
            for j in i + 1..t {
                dp.push(self.pred[perm[i] * t + perm[j]]);
            }
        }
        pearson(&dp, &self.truth)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MantelResult {
    pub per_subject_r: Vec<f64>,
    /// Indices of subjects whose distance matrices had zero variance.
    pub excluded: Vec<usize>,
    pub fisher: Option<FisherResult>,
    pub mean_r: f64,
    pub group_perm_p: f64,
    pub n_permutations: usize,
    pub n_subjects: usize,
}

/// Group permutation test: the observed mean Mantel r against a null that
/// shuffles the time order of every forecast independently each round.
/// Returns the add-one p-value, the per-subject r and the excluded indices.
pub fn mantel_group_permutation(
    pairs: &[(Trajectory, Trajectory)],
    n_perm: usize,
    seed: u64,
) -> Result<(f64, Vec<f64>, Vec<usize>)> {
    let prepared = pairs
        .iter()
        .map(|(p, t)| PreparedPair::new(p, t))
        .collect::<Result<Vec<_>>>()?;
    let mut kept = Vec::new();
    let mut rs = Vec::new();
    let mut excluded = Vec::new();
    for (i, pp) in prepared.iter().enumerate() {
        let ident: Vec<usize> = (0..pp.t).collect();
        match pp.r_under(&ident) {
            Some(r) => {
                rs.push(r);
                kept.push(pp);
            }
            None => excluded.push(i),
        }
    }
    if kept.is_empty() {
        return Err(Error::InvalidInput(
            "no subject has a usable distance matrix".into(),
        ));
    }
    let observed = mean(&rs);
    let exceed = par::map_range(n_perm, |round| {
        let mut r = rng::seeded(rng::derive_seed(seed, round as u64));
        let mut total = 0.0;
        for pp in &kept {
            let mut perm: Vec<usize> = (0..pp.t).collect();
            perm.shuffle(&mut r);
            total += pp.r_under(&perm).expect("permuting keeps the variance");
        }
        usize::from(total / kept.len() as f64 >= observed)
    })
    .into_iter()
    .sum::<usize>();
    Ok(((1 + exceed) as f64 / (n_perm + 1) as f64, rs, excluded))
}

/// Per-subject Mantel r, the Fisher-Z test and the group permutation test.
pub fn mantel_suite(
    pairs: &[(Trajectory, Trajectory)],
    n_perm: usize,
    seed: u64,
) -> Result<MantelResult> {
    let (p, rs, excluded) = mantel_group_permutation(pairs, n_perm, seed)?;
    let fisher = if rs.len() >= 2 {
        Some(mantel_group_fisher(&rs)?)
    } else {
        None
    };
    Ok(MantelResult {
        mean_r: mean(&rs),
        n_subjects: rs.len(),
        per_subject_r: rs,
        excluded,
        fisher,
        group_perm_p: p,
        n_permutations: n_perm,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationConfig {
    pub mmd_permutations: usize,
    pub mantel_permutations: usize,
    pub per_feature: bool,
    pub seed: u64,
}

impl Default for ValidationConfig {
    fn default() -> Self {
        Self {
            mmd_permutations: 1000,
            mantel_permutations: 5000,
            per_feature: true,
            seed: rng::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub short_range: MmdResult,
    pub long_range: MmdResult,
    /// Single-feature short-range tests, in schema order.
    pub per_feature: Vec<MmdResult>,
    pub mantel: MantelResult,
    pub n_subjects: usize,
}

/// Free-running forecasts from each trajectory's first visit under its
/// recorded actions and intervals. Subject `i` uses stream `derive_seed(seed, i)`.
pub fn forecast_trajectories<D: Dynamics + ?Sized>(
    dynamics: &D,
    truth: &[Trajectory],
    seed: u64,
) -> Result<Vec<Trajectory>> {
    par::map_range(truth.len(), |i| {
        let t = &truth[i];
        need_visits(t, 2)?;
        t.visits[0].state.expect_space(Space::Zscaled)?;
        let k = t.len() - 1;
        let actions: Vec<_> = t.visits[..k].iter().map(|v| v.action.clone()).collect();
        let deltas: Vec<f64> = t.visits[..k].iter().map(|v| v.months_to_next).collect();
        let mut r = rng::seeded(rng::derive_seed(seed, i as u64));
        let mut f = autoregressive_rollout(
            dynamics,
            t.visits[0].state.clone(),
            &actions,
            &deltas,
            &mut r,
        )?;
        f.subject_id = t.subject_id.clone();
        Ok(f)
    })
    .into_iter()
    .collect()
}

/// z-scales every visit of raw trajectories.
pub fn zscale_trajectories(trajs: &[Trajectory], scaler: &ScalerStats) -> Result<Vec<Trajectory>> {
    trajs
        .iter()
        .map(|t| {
            let mut t = t.clone();
            for v in &mut t.visits {
                v.state = scaler.to_zspace(&v.state)?;
            }
            Ok(t)
        })
        .collect()
}

/// Compares forecasts with ground truth (both z-scaled, paired by index).
pub fn compare(
    forecast: &[Trajectory],
    truth: &[Trajectory],
    schema: &FeatureSchema,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    check_len("forecast trajectories", truth.len(), forecast.len())?;
    let sf = transitions_short(forecast)?;
    let st = transitions_short(truth)?;
    let short_range = mmd_rbf_test(
        &sf,
        &st,
        cfg.mmd_permutations,
        cfg.seed,
        MmdVariant::ShortRange,
    )?;
    let long_range = mmd_rbf_test(
        &drift_long(forecast)?,
        &drift_long(truth)?,
        cfg.mmd_permutations,
        rng::derive_seed(cfg.seed, 1),
        MmdVariant::LongRange,
    )?;
    let mut per_feature = Vec::new();
    if cfg.per_feature {
        for (j, f) in schema.features().iter().enumerate() {
            let col = |rows: &[Vec<f64>]| rows.iter().map(|r| vec![r[j]]).collect::<Vec<_>>();
            per_feature.push(mmd_rbf_test(
                &col(&sf),
                &col(&st),
                cfg.mmd_permutations,
                rng::derive_seed(cfg.seed, 100 + j as u64),
                MmdVariant::PerFeature(f.name.clone()),
            )?);
        }
    }
    let pairs: Vec<(Trajectory, Trajectory)> = forecast
        .iter()
        .zip(truth)
        .filter(|(_, t)| t.len() >= 3)
        .map(|(f, t)| (f.clone(), t.clone()))
        .collect();
    let mantel = mantel_suite(
        &pairs,
        cfg.mantel_permutations,
        rng::derive_seed(cfg.seed, 2),
    )?;
    Ok(ValidationReport {
        short_range,
        long_range,
        per_feature,
        mantel,
        n_subjects: truth.len(),
    })
}

/// Forecasts every held-out trajectory and compares it with the truth.
pub fn validate<D: Dynamics + ?Sized>(
    dynamics: &D,
    truth: &[Trajectory],
    schema: &FeatureSchema,
    cfg: &ValidationConfig,
) -> Result<ValidationReport> {
    let forecast = forecast_trajectories(dynamics, truth, rng::derive_seed(cfg.seed, 3))?;
    compare(&forecast, truth, schema, cfg)
}

impl ValidationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mmd = |s: &mut String, label: &str, m: &MmdResult| {
            let _ = writeln!(
                s,
                "{label}\tmmd2={:.6e}\tp={:.4}\tn_perm={}\tbandwidth={:.6}\tn={}/{}",
                m.statistic, m.p_value, m.n_permutations, m.bandwidth, m.n_x, m.n_y
            );
        };
        let _ = writeln!(s, "subjects\t{}", self.n_subjects);
        mmd(&mut s, "short_range", &self.short_range);
        mmd(&mut s, "long_range", &self.long_range);
        let m = &self.mantel;
        let _ = writeln!(
            s,
            "mantel\tmean_r={:.4}\tgroup_perm_p={:.4e}\tn_perm={}\tn={}\texcluded={}",
            m.mean_r,
            m.group_perm_p,
            m.n_permutations,
            m.n_subjects,
            m.excluded.len()
        );
        if let Some(f) = &m.fisher {
            let _ = writeln!(
                s,
                "fisher_z\tr={:.4}\tci={:.4}-{:.4}\tt={:.4}\tp={:.4e}",
                f.mean_r, f.ci_low, f.ci_high, f.t, f.p_value
            );
        }
        if !self.per_feature.is_empty() {
            s.push_str("\nfeature\tmmd2\tp\n");
            for r in &self.per_feature {
                if let MmdVariant::PerFeature(name) = &r.variant {
                    let _ = writeln!(s, "{name}\t{:.6e}\t{:.4}", r.statistic, r.p_value);
                }
            }
        }
        s
    }
}

/// Wraps z-scaled rows as a trajectory with no actions and 6-month gaps.
pub fn trajectory_from_rows(id: &str, rows: &[Vec<f64>], n_actions: usize) -> Trajectory {
    use crate::schema::{ActionVector, Visit};
    Trajectory {
        subject_id: id.to_string(),
        visits: rows
            .iter()
            .map(|r| {
                Visit::new(
                    PatientState::zscaled(r.clone()),
                    ActionVector::zeros(n_actions),
                    6.0,
                )
            })
            .collect(),
    }
}
