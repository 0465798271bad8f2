//! Start-state distribution: full-covariance Gaussian mixtures fitted by EM
//! with BIC model selection, one per patient cohort.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use nalgebra::{Cholesky, DMatrix};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::container::{Tensor, TensorFile};
use crate::error::{check_len, Error, Result};
use crate::ingest::Cohort as CohortData;
use crate::math::{argmax, log_sum_exp};
use crate::par;
use crate::rng::{self, SimRng};
use crate::schema::{FeatureSchema, PatientState, ScalerStats};

pub const KIND: &str = "gmm_set";

/// Raw ADNI-Mem below this value marks an impaired patient.
pub const IMPAIRMENT_THRESHOLD: f64 = crate::ingest::IMPAIRMENT_THRESHOLD;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
const CHUNK: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Cohort {
    All,
    Healthy,
    Impaired,
}

impl Cohort {
    pub const ALL: [Cohort; 3] = [Cohort::All, Cohort::Healthy, Cohort::Impaired];

    pub fn as_str(self) -> &'static str {
        match self {
            Cohort::All => "all",
            Cohort::Healthy => "healthy",
            Cohort::Impaired => "impaired",
        }
    }

    /// Whether a raw ADNI-Mem value belongs to this cohort.
    pub fn selects(self, raw_memory: f64) -> bool {
        match self {
            Cohort::All => true,
            Cohort::Impaired => raw_memory < IMPAIRMENT_THRESHOLD,
            Cohort::Healthy => raw_memory >= IMPAIRMENT_THRESHOLD,
        }
    }
}

impl fmt::Display for Cohort {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Cohort {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "all" => Ok(Cohort::All),
            "healthy" => Ok(Cohort::Healthy),
            "impaired" => Ok(Cohort::Impaired),
            other => Err(Error::InvalidInput(format!("unknown cohort {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EmConfig {
    pub reg: f64,
    /// Convergence threshold on the change of mean per-point log-likelihood.
    pub tol: f64,
    pub max_iter: usize,
    pub max_restarts: usize,
    pub kmeans_iter: usize,
}

impl Default for EmConfig {
    fn default() -> Self {
        Self {
            reg: 1e-6,
            tol: 1e-6,
            max_iter: 500,
            max_restarts: 5,
            kmeans_iter: 20,
        }
    }
}

/// Full-covariance Gaussian mixture.
#[derive(Debug, Clone)]
pub struct Gmm {
    pub weights: Vec<f64>,
    pub means: Vec<Vec<f64>>,
    pub covariances: Vec<DMatrix<f64>>,
    /// Total log-likelihood on the fitting data.
    pub log_likelihood: f64,
    pub n: usize,
    pub seed: u64,
    /// Total log-likelihood before each M-step.
    pub history: Vec<f64>,
    chol: Vec<DMatrix<f64>>,
    log_det: Vec<f64>,
}

impl PartialEq for Gmm {
    fn eq(&self, o: &Self) -> bool {
        self.weights == o.weights
            && self.means == o.means
            && self.covariances == o.covariances
            && self.log_likelihood == o.log_likelihood
            && self.n == o.n
    }
}

/// Free parameters of a K-component full-covariance mixture in d dimensions.
pub fn n_params(k: usize, d: usize) -> usize {
    k - 1 + k * d + k * d * (d + 1) / 2
}

impl Gmm {
    pub fn from_parts(
        weights: Vec<f64>,
        means: Vec<Vec<f64>>,
        covariances: Vec<DMatrix<f64>>,
    ) -> Result<Self> {
        let k = weights.len();
        if k == 0 || means.len() != k || covariances.len() != k {
            return Err(Error::InvalidInput("mixture parts disagree on K".into()));
        }
        let d = means[0].len();
        let mut chol = Vec::with_capacity(k);
        let mut log_det = Vec::with_capacity(k);
        for (m, c) in means.iter().zip(&covariances) {
            check_len("mixture mean", d, m.len())?;
            if c.nrows() != d || c.ncols() != d {
                return Err(Error::Dimension {
                    context: "mixture covariance",
                    expected: d,
                    got: c.nrows(),
                });
            }
            let l = Cholesky::new(c.clone())
                .ok_or_else(|| Error::Numerical("covariance is not positive definite".into()))?
                .unpack();
            log_det.push(2.0 * (0..d).map(|i| l[(i, i)].ln()).sum::<f64>());
            chol.push(l);
        }
        if weights.iter().any(|&w| !(w > 0.0)) || (weights.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidInput(
                "mixture weights must be a positive simplex".into(),
            ));
        }
        Ok(Self {
            weights,
            means,
            covariances,
            log_likelihood: f64::NAN,
            n: 0,
            seed: 0,
            history: Vec::new(),
            chol,
            log_det,
        })
    }

    pub fn k(&self) -> usize {
        self.weights.len()
    }

    pub fn dim(&self) -> usize {
        self.means[0].len()
    }

    /// Per-component `log w_k + log N(x | mu_k, Sigma_k)`.
    fn component_log_density(&self, x: &[f64], out: &mut [f64], scratch: &mut [f64]) {
        let d = self.dim();
        for k in 0..self.k() {
            let l = &self.chol[k];
            let mu = &self.means[k];
            let mut q = 0.0;
            for i in 0..d {
                let mut s = x[i] - mu[i];
                for j in 0..i {
                    s -= l[(i, j)] * scratch[j];
                }
                scratch[i] = s / l[(i, i)];
                q += scratch[i] * scratch[i];
            }
            out[k] = self.weights[k].ln() - 0.5 * (d as f64 * LN_2PI + self.log_det[k] + q);
        }
    }

    pub fn log_density(&self, x: &[f64]) -> f64 {
        let mut lp = vec![0.0; self.k()];
        let mut scratch = vec![0.0; self.dim()];
        self.component_log_density(x, &mut lp, &mut scratch);
        log_sum_exp(&lp)
    }

    pub fn total_log_likelihood(&self, data: &[Vec<f64>]) -> f64 {
        let chunks: Vec<&[Vec<f64>]> = data.chunks(CHUNK).collect();
        par::map_slice(&chunks, |c| {
            c.iter().map(|x| self.log_density(x)).sum::<f64>()
        })
        .into_iter()
        .sum()
    }

    /// Mixture mean `sum_k w_k mu_k`.
    pub fn mixture_mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim()];
        for (w, mu) in self.weights.iter().zip(&self.means) {
            for (a, b) in m.iter_mut().zip(mu) {
                *a += w * b;
            }
        }
        m
    }

    /// Unsnapped draw from the mixture.
    pub fn sample_raw(&self, rng: &mut SimRng) -> Vec<f64> {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut k = self.k() - 1;
        for (i, w) in self.weights.iter().enumerate() {
            acc += w;
            if u < acc {
                k = i;
                break;
            }
        }
        let d = self.dim();
        let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let l = &self.chol[k];
        (0..d)
            .map(|i| self.means[k][i] + (0..=i).map(|j| l[(i, j)] * z[j]).sum::<f64>())
            .collect()
    }

    /// Draw snapped to the schema: binaries thresholded at 0.5 and each
    /// one-hot group reduced to its argmax.
    pub fn sample(&self, schema: &FeatureSchema, rng: &mut SimRng) -> Result<PatientState> {
        check_len("mixture dimension", schema.n_features(), self.dim())?;
        Ok(PatientState::zscaled(snap(schema, self.sample_raw(rng))))
    }
}

/// Applies binary thresholding and one-hot argmax snapping.
pub fn snap(schema: &FeatureSchema, mut x: Vec<f64>) -> Vec<f64> {
    let groups = schema.one_hot_groups();
    let grouped: Vec<usize> = groups
        .iter()
        .flat_map(|(_, idx)| idx.iter().copied())
        .collect();
    for (_, idx) in &groups {
        let vals: Vec<f64> = idx.iter().map(|&j| x[j]).collect();
        let best = argmax(&vals);
        for (pos, &j) in idx.iter().enumerate() {
            x[j] = if pos == best { 1.0 } else { 0.0 };
        }
    }
    for j in schema.binary_indices() {
        if !grouped.contains(&j) {
            x[j] = if x[j] >= 0.5 { 1.0 } else { 0.0 };
        }
    }
    x
}

/// BIC: `-2 logL + p ln n`.
pub fn bic(model: &Gmm, data: &[Vec<f64>]) -> f64 {
    let ll = model.total_log_likelihood(data);
    bic_from(ll, model.k(), model.dim(), data.len())
}

pub fn bic_from(log_likelihood: f64, k: usize, d: usize, n: usize) -> f64 {
    -2.0 * log_likelihood + n_params(k, d) as f64 * (n as f64).ln()
}

fn kmeans_init(data: &[Vec<f64>], k: usize, iters: usize, rng: &mut SimRng) -> Option<Vec<usize>> {
    let n = data.len();
    let sq = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>();
    let mut centers = vec![data[rng.random_range(0..n)].clone()];
    let mut d2: Vec<f64> = data.iter().map(|x| sq(x, &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let u = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut pick = n - 1;
            for (i, v) in d2.iter().enumerate() {
                acc += v;
                if u < acc {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(data[next].clone());
        for (v, x) in d2.iter_mut().zip(data) {
            *v = v.min(sq(x, &centers[centers.len() - 1]));
        }
    }
    let mut labels = vec![0usize; n];
    for it in 0..=iters {
        let mut changed = false;
        for (lab, x) in labels.iter_mut().zip(data) {
            let dists: Vec<f64> = centers.iter().map(|c| -sq(x, c)).collect();
            let best = argmax(&dists);
            if best != *lab {
                changed = true;
                *lab = best;
            }
        }
        if it > 0 && !changed {
            break;
        }
        let d = data[0].len();
        let mut sums = vec![vec![0.0; d]; k];
        let mut counts = vec![0usize; k];
        for (lab, x) in labels.iter().zip(data) {
            counts[*lab] += 1;
            for (s, v) in sums[*lab].iter_mut().zip(x) {
                *s += v;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|&l| counts[l] += 1);
    if counts.contains(&0) {
        return None;
    }
    Some(labels)
}

/// a^T b without materialising the transpose.
fn gram(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (n, p) = a.shape();
    let q = b.ncols();
    assert_eq!(n, b.nrows());
    let mut out = DMatrix::zeros(p, q);
    // SAFETY: all three buffers are contiguous column-major with the strides given.
    unsafe {
        matrixmultiply::dgemm(
            p,
            n,
            q,
            1.0,
            a.as_ptr(),
            n as isize,
            1,
            b.as_ptr(),
            1,
            n as isize,
            0.0,
            out.as_mut_ptr(),
            1,
            p as isize,
        );
    }
    out
}

fn m_step(x: &DMatrix<f64>, resp: &DMatrix<f64>, reg: f64) -> Result<Gmm> {
    let (n, d) = x.shape();
    let k = resp.ncols();
    let nk: Vec<f64> = (0..k).map(|c| resp.column(c).sum()).collect();
    if nk.iter().any(|&w| w / (n as f64) < 1e-8) {
        return Err(Error::Numerical("degenerate mixture component".into()));
    }
    let sums = gram(resp, x);
    let means: Vec<Vec<f64>> = (0..k)
        .map(|c| sums.row(c).iter().map(|s| s / nk[c]).collect())
        .collect();
    let covs: Vec<DMatrix<f64>> = par::map_range(k, |c| {
        let w: Vec<f64> = resp.as_slice()[c * n..(c + 1) * n]
            .iter()
            .map(|v| v.sqrt())
            .collect();
        let mut xs = Vec::with_capacity(n * d);
        for (col, m) in x.as_slice().chunks(n).zip(&means[c]) {
            xs.extend(col.iter().zip(&w).map(|(v, wi)| (v - m) * wi));
        }
        let xs = DMatrix::from_vec(n, d, xs);
        let mut cov = gram(&xs, &xs) / nk[c];
        for i in 0..d {
            cov[(i, i)] += reg;
        }
        cov
    });
    let weights = nk.iter().map(|w| w / n as f64).collect();
    Gmm::from_parts(weights, means, covs)
}

/// E-step over the data matrix: responsibilities (n x K) and the total
/// log-likelihood.
fn e_step(model: &Gmm, x: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let (n, d) = x.shape();
    let k = model.k();
    let cols = par::map_range(k, |c| {
        let linv_t = model.chol[c]
            .solve_lower_triangular(&DMatrix::identity(d, d))
            .expect("Cholesky factor has a positive diagonal")
            .transpose();
        // row i is L^-1 (x_i - mu_c)
        let shift = DMatrix::from_row_slice(1, d, &model.means[c]) * &linv_t;
        let y = x * &linv_t;
        let mut q = vec![0.0; n];
        for (col, sh) in y.as_slice().chunks(n).zip(shift.iter()) {
            for (qi, v) in q.iter_mut().zip(col) {
                let e = v - sh;
                *qi += e * e;
            }
        }
        let base = model.weights[c].ln() - 0.5 * (d as f64 * LN_2PI + model.log_det[c]);
        q.into_iter()
            .map(|qi| base - 0.5 * qi)
            .collect::<Vec<f64>>()
    });
    let mut m = vec![f64::NEG_INFINITY; n];
    for col in &cols {
        for (mi, v) in m.iter_mut().zip(col) {
            *mi = mi.max(*v);
        }
    }
    let mut total = vec![0.0; n];
    let mut flat = Vec::with_capacity(n * k);
    for col in &cols {
        for ((v, mi), t) in col.iter().zip(&m).zip(total.iter_mut()) {
            // flushed to zero: subnormal responsibilities slow the M-step by orders of magnitude
            let e = if v - mi < -700.0 { 0.0 } else { (v - mi).exp() };
            *t += e;
            flat.push(e);
        }
    }
    for chunk in flat.chunks_mut(n) {
        for (e, t) in chunk.iter_mut().zip(&total) {
            *e /= t;
        }
    }
    let ll = m.iter().zip(&total).map(|(mi, t)| mi + t.ln()).sum();
    let resp = DMatrix::from_vec(n, k, flat);
    (resp, ll)
}

fn fit_once(
    data: &[Vec<f64>],
    x: &DMatrix<f64>,
    k: usize,
    rng: &mut SimRng,
    cfg: &EmConfig,
) -> Result<Gmm> {
    let labels = kmeans_init(data, k, cfg.kmeans_iter, rng)
        .ok_or_else(|| Error::Numerical("empty cluster at initialisation".into()))?;
    let resp = DMatrix::from_fn(data.len(), k, |i, c| if labels[i] == c { 1.0 } else { 0.0 });
    let mut model = m_step(x, &resp, cfg.reg)?;
    let n = data.len() as f64;
    let mut history: Vec<f64> = Vec::new();
    for _ in 0..cfg.max_iter {
        let (resp, ll) = e_step(&model, x);
        if !ll.is_finite() {
            return Err(Error::Numerical("non-finite log-likelihood".into()));
        }
        let converged = history
            .last()
            .is_some_and(|prev| (ll - prev).abs() / n < cfg.tol);
        history.push(ll);
        if converged {
            break;
        }
        model = m_step(x, &resp, cfg.reg)?;
    }
    let (_, ll) = e_step(&model, x);
    if history.last() != Some(&ll) {
        history.push(ll);
    }
    model.log_likelihood = ll;
    model.history = history;
    Ok(model)
}

/// EM fit with k-means++ initialisation; degenerate fits restart from a
/// fresh random stream up to `max_restarts` times.
pub fn fit_em(data: &[Vec<f64>], k: usize, seed: u64, cfg: &EmConfig) -> Result<Gmm> {
    if k == 0 || data.len() < k {
        return Err(Error::InvalidInput(format!(
            "cannot fit {k} components to {} rows",
            data.len()
        )));
    }
    let d = data[0].len();
    for x in data {
        check_len("mixture data row", d, x.len())?;
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("mixture data"));
        }
    }
    let x = DMatrix::from_fn(data.len(), d, |i, j| data[i][j]);
    let mut last = None;
    for attempt in 0..=cfg.max_restarts {
        let mut r = rng::substream(seed, attempt as u64);
        match fit_once(data, &x, k, &mut r, cfg) {
            Ok(mut m) => {
                m.n = data.len();
                m.seed = seed;
                return Ok(m);
            }
            Err(e) => last = Some(e),
        }
    }
    Err(last.expect("at least one attempt"))
}

/// (K, BIC) curve per cohort.
pub type BicCurves = BTreeMap<Cohort, Vec<(usize, f64)>>;

#[derive(Debug, Clone)]
pub struct KSelection {
    pub model: Gmm,
    /// (K, BIC) for every K that was fitted.
    pub curve: Vec<(usize, f64)>,
}

/// Fits every K in `k_range` (upper bound clipped at n/10, never above n)
/// and keeps the minimal-BIC fit, ties to the smaller K.
pub fn select_k(
    data: &[Vec<f64>],
    k_range: std::ops::RangeInclusive<usize>,
    seed: u64,
    cfg: &EmConfig,
) -> Result<KSelection> {
    let n = data.len();
    let lo = (*k_range.start()).max(1);
    let hi = (*k_range.end()).min((n / 10).max(lo)).min(n);
    if lo > hi {
        return Err(Error::InvalidInput(format!("empty K range for {n} rows")));
    }
    let ks: Vec<usize> = (lo..=hi).collect();
    let fits = par::map_slice(&ks, |&k| {
        fit_em(data, k, rng::derive_seed(seed, k as u64), cfg)
    });
    let mut best: Option<(f64, Gmm)> = None;
    let mut curve = Vec::new();
    for (k, fit) in ks.iter().zip(fits) {
        let Ok(model) = fit else { continue };
        let b = bic_from(model.log_likelihood, k.to_owned(), model.dim(), n);
        curve.push((*k, b));
        if best.as_ref().is_none_or(|(bb, _)| b < *bb) {
            best = Some((b, model));
        }
    }
    let (_, model) =
        best.ok_or_else(|| Error::Numerical("no K in range could be fitted".into()))?;
    Ok(KSelection { model, curve })
}

/// First visits of every trajectory, z-scaled, with their raw memory score.
pub fn start_rows(
    cohort: &CohortData,
    schema: &FeatureSchema,
    scaler: &ScalerStats,
) -> Result<Vec<(Vec<f64>, f64)>> {
    let mem = schema.memory_index();
    cohort
        .iter()
        .filter_map(|tr| tr.visits.first())
        .map(|v| {
            let z = scaler.to_zspace(&v.state)?;
            let raw = scaler.inverse_scale(&z)?;
            Ok((z.values, raw.values[mem]))
        })
        .collect()
}

/// Start-state models keyed by cohort.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct StartStateModels {
    pub models: BTreeMap<Cohort, Gmm>,
}

impl StartStateModels {
    /// Fits one BIC-selected mixture per cohort on the first visits.
    pub fn fit(
        cohort: &CohortData,
        schema: &FeatureSchema,
        scaler: &ScalerStats,
        k_range: std::ops::RangeInclusive<usize>,
        seed: u64,
        cfg: &EmConfig,
    ) -> Result<(Self, BicCurves)> {
        let rows = start_rows(cohort, schema, scaler)?;
        let mut models = BTreeMap::new();
        let mut curves = BTreeMap::new();
        for c in Cohort::ALL {
            let data: Vec<Vec<f64>> = rows
                .iter()
                .filter(|(_, m)| c.selects(*m))
                .map(|(z, _)| z.clone())
                .collect();
            if data.is_empty() {
                continue;
            }
            let sel = select_k(
                &data,
                k_range.clone(),
                rng::derive_seed(seed, c as u64),
                cfg,
            )?;
            curves.insert(c, sel.curve);
            models.insert(c, sel.model);
        }
        Ok((Self { models }, curves))
    }

    pub fn get(&self, cohort: Cohort) -> Result<&Gmm> {
        self.models
            .get(&cohort)
            .ok_or_else(|| Error::MissingStartModel(cohort.as_str().into()))
    }

    pub fn sample(
        &self,
        cohort: Cohort,
        schema: &FeatureSchema,
        rng: &mut SimRng,
    ) -> Result<PatientState> {
        self.get(cohort)?.sample(schema, rng)
    }

    pub fn to_container(&self, schema: &FeatureSchema) -> TensorFile {
        let mut f = TensorFile::new(KIND, schema.fingerprint());
        let mut meta = serde_json::Map::new();
        for (c, g) in &self.models {
            let (k, d) = (g.k(), g.dim());
            let p = c.as_str();
            f.insert(format!("{p}.weights"), Tensor::vector(g.weights.clone()));
            f.insert(
                format!("{p}.means"),
                Tensor::matrix(k, d, g.means.concat()).expect("shape"),
            );
            let covs: Vec<f64> = g
                .covariances
                .iter()
                .flat_map(|m| m.transpose().iter().copied().collect::<Vec<_>>())
                .collect();
            f.insert(
                format!("{p}.covariances"),
                Tensor::new(vec![k, d, d], covs).expect("shape"),
            );
            meta.insert(
                p.into(),
                serde_json::json!({ "k": k, "log_likelihood": g.log_likelihood, "n": g.n, "seed": g.seed }),
            );
        }
        f.meta = serde_json::Value::Object(meta);
        f
    }

    pub fn from_container(f: &TensorFile, schema: &FeatureSchema) -> Result<Self> {
        f.expect_kind(KIND)?;
        f.expect_fingerprint(&schema.fingerprint())?;
        let d = schema.n_features();
        let mut models = BTreeMap::new();
        for c in Cohort::ALL {
            let p = c.as_str();
            let Some(info) = f.meta.get(p) else { continue };
            let k = info["k"]
                .as_u64()
                .ok_or_else(|| Error::InvalidInput(format!("start-state model {p} lacks k")))?
                as usize;
            let weights = f.expect(&format!("{p}.weights"), &[k])?.to_vec();
            let means = f
                .expect(&format!("{p}.means"), &[k, d])?
                .chunks(d)
                .map(<[f64]>::to_vec)
                .collect();
            let covs = f
                .expect(&format!("{p}.covariances"), &[k, d, d])?
                .chunks(d * d)
                .map(|c| DMatrix::from_row_slice(d, d, c))
                .collect();
            let mut g = Gmm::from_parts(weights, means, covs)?;
            g.log_likelihood = info["log_likelihood"].as_f64().unwrap_or(f64::NAN);
            g.n = info["n"].as_u64().unwrap_or(0) as usize;
            g.seed = info["seed"].as_u64().unwrap_or(0);
            models.insert(c, g);
        }
        Ok(Self { models })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bic_hand_computation() {
        // K = 1, d = 1 on five numbers: closed-form MLE
        let xs = [1.0, 2.0, 4.0, 7.0, 11.0];
        let data: Vec<Vec<f64>> = xs.iter().map(|&x| vec![x]).collect();
        let cfg = EmConfig {
            reg: 0.0,
            ..EmConfig::default()
        };
        let g = fit_em(&data, 1, 0, &cfg).unwrap();
        let mu = 5.0;
        let var = xs.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / 5.0;
        let ll = -2.5 * (2.0 * std::f64::consts::PI * var).ln() - 2.5;
        let want = -2.0 * ll + 2.0 * 5f64.ln();
        assert_eq!(n_params(1, 1), 2);
        assert!((bic(&g, &data) - want).abs() < 1e-10);
        assert_eq!(n_params(1, 21), 21 + 231);
    }

    #[test]
    fn bic_penalty_structure() {
        let a = bic_from(-100.0, 2, 3, 50);
        let b = bic_from(-200.0, 2, 3, 100);
        assert!((b - a - (-2.0 * -100.0) - n_params(2, 3) as f64 * 2f64.ln()).abs() < 1e-9);
        assert!(bic_from(-100.0, 3, 3, 50) > bic_from(-100.0, 2, 3, 50));
    }

    #[test]
    fn cohort_filter() {
        assert!(Cohort::Impaired.selects(-0.11));
        assert!(!Cohort::Impaired.selects(-0.1));
        assert!(Cohort::Healthy.selects(-0.1));
        assert!(Cohort::All.selects(-5.0));
        assert_eq!("Impaired".parse::<Cohort>().unwrap(), Cohort::Impaired);
    }
}
