//! Behavior-cloned clinician policy: a one-hidden-layer MC-dropout network
//! trained with class-balanced BCE, and its probabilistic metrics.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::container::{Tensor, TensorFile};
use crate::dynamics::Differentiable;
use crate::error::{check_len, Error, Result};
use crate::math::{bce_with_logit, sigmoid};
use crate::optim::AdamW;
use crate::par;
use crate::policies::Policy;
use crate::rng::{self, SimRng};
use crate::schema::{ActionVector, FeatureSchema, PatientState, ScalerStats, Trajectory};

pub const KIND: &str = "bc_mlp";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcConfig {
    pub hidden_width: usize,
    pub dropout_p: f64,
    pub pos_weight_exponent: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub mc_samples: usize,
    pub seed: u64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            hidden_width: 128,
            dropout_p: 0.2,
            pos_weight_exponent: 0.55,
            epochs: 30,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.0,
            mc_samples: 50,
            seed: rng::DEFAULT_SEED,
        }
    }
}

impl BcConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dropout_p > 0.0 && self.dropout_p < 1.0) {
            return Err(Error::InvalidInput("dropout_p must lie in (0, 1)".into()));
        }
        if !(self.pos_weight_exponent >= 0.0) {
            return Err(Error::InvalidInput(
                "pos_weight_exponent must be non-negative".into(),
            ));
        }
        if self.hidden_width == 0 || self.batch_size == 0 || self.mc_samples == 0 {
            return Err(Error::InvalidInput(
                "hidden_width, batch_size and mc_samples must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// One (z-scaled state, prescribed actions) pair.
#[derive(Debug, Clone, PartialEq)]
pub struct BcSample {
    pub state: Vec<f64>,
    pub labels: Vec<bool>,
}

impl BcSample {
    /// Every visit of every trajectory, z-scaled with `scaler`.
    pub fn from_cohort(cohort: &[Trajectory], scaler: &ScalerStats) -> Result<Vec<Self>> {
        let mut out = Vec::new();
        for t in cohort {
            for v in &t.visits {
                out.push(Self {
                    state: scaler.to_zspace(&v.state)?.values,
                    labels: v.action.bits().to_vec(),
                });
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PosWeights {
    pub weights: Vec<f64>,
    /// Actions with no positive label; their weight is `n^exponent`.
    pub capped: Vec<usize>,
}

/// `(neg / pos)^exponent` per action.
pub fn pos_weights(labels: &[Vec<bool>], exponent: f64) -> Result<PosWeights> {
    let first = labels
        .first()
        .ok_or_else(|| Error::InvalidInput("no labels for pos_weights".into()))?;
    let a = first.len();
    let n = labels.len();
    let mut pos = vec![0usize; a];
    for row in labels {
        check_len("label row", a, row.len())?;
        for (p, &y) in pos.iter_mut().zip(row) {
            *p += usize::from(y);
        }
    }
    let mut capped = Vec::new();
    let weights = pos
        .iter()
        .enumerate()
        .map(|(e, &p)| {
            if p == 0 {
                capped.push(e);
                (n as f64).powf(exponent)
            } else {
                ((n - p) as f64 / p as f64).powf(exponent)
            }
        })
        .collect();
    Ok(PosWeights { weights, capped })
}

#[derive(Debug, Clone, Copy)]
struct Layout {
    f: usize,
    h: usize,
    a: usize,
}

impl Layout {
    fn b1(&self) -> usize {
        self.h * self.f
    }
    fn w2(&self) -> usize {
        self.b1() + self.h
    }
    fn b2(&self) -> usize {
        self.w2() + self.a * self.h
    }
    fn total(&self) -> usize {
        self.b2() + self.a
    }
}

/// `x -> tanh(W1 x + b1) -> dropout -> W2 h + b2` (action logits).
#[derive(Debug, Clone, PartialEq)]
pub struct BcNet {
    pub params: Vec<f64>,
    pub n_features: usize,
    pub hidden: usize,
    pub n_actions: usize,
    /// Dropout rate used by stochastic passes; 0 disables it.
    pub dropout_p: f64,
}

impl BcNet {
    pub fn new(
        n_features: usize,
        hidden: usize,
        n_actions: usize,
        dropout_p: f64,
        seed: u64,
    ) -> Result<Self> {
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::InvalidInput("dropout_p must lie in [0, 1)".into()));
        }
        let l = Layout {
            f: n_features,
            h: hidden,
            a: n_actions,
        };
        let mut r = rng::seeded(seed);
        let mut params = vec![0.0; l.total()];
        let n1 = Normal::new(0.0, (1.0 / n_features as f64).sqrt())
            .map_err(|e| Error::Numerical(e.to_string()))?;
        let n2 = Normal::new(0.0, (1.0 / hidden as f64).sqrt())
            .map_err(|e| Error::Numerical(e.to_string()))?;
        for p in &mut params[..l.b1()] {
            *p = n1.sample(&mut r);
        }
        for p in &mut params[l.w2()..l.b2()] {
            *p = n2.sample(&mut r);
        }
        Ok(Self {
            params,
            n_features,
            hidden,
            n_actions,
            dropout_p,
        })
    }

    fn layout(&self) -> Layout {
        Layout {
            f: self.n_features,
            h: self.hidden,
            a: self.n_actions,
        }
    }

    pub fn with_dropout(mut self, p: f64) -> Self {
        self.dropout_p = p;
        self
    }

    /// Logits with an explicit dropout mask (already scaled by 1/(1-p)) or
    /// none for the deterministic pass.
    pub fn logits_masked(&self, x: &[f64], mask: Option<&[f64]>) -> Vec<f64> {
        forward(self.layout(), &self.params, x, mask).1
    }

    /// Deterministic probabilities (dropout off).
    pub fn predict_probs(&self, x: &[f64]) -> Vec<f64> {
        self.logits_masked(x, None)
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    fn draw_mask<R: Rng>(&self, r: &mut R) -> Option<Vec<f64>> {
        draw_mask(self.hidden, self.dropout_p, r)
    }

    /// One stochastic pass.
    pub fn sample_probs<R: Rng>(&self, x: &[f64], r: &mut R) -> Vec<f64> {
        let mask = self.draw_mask(r);
        self.logits_masked(x, mask.as_deref())
            .into_iter()
            .map(sigmoid)
            .collect()
    }

    pub fn to_container(&self, schema: &FeatureSchema) -> TensorFile {
        let l = self.layout();
        let p = &self.params;
        let mut f = TensorFile::new(KIND, schema.fingerprint());
        f.meta = serde_json::json!({ "hidden": l.h, "dropout_p": self.dropout_p });
        f.insert(
            "fc1.w",
            Tensor::matrix(l.h, l.f, p[..l.b1()].to_vec()).expect("shape"),
        );
        f.insert("fc1.b", Tensor::vector(p[l.b1()..l.w2()].to_vec()));
        f.insert(
            "fc2.w",
            Tensor::matrix(l.a, l.h, p[l.w2()..l.b2()].to_vec()).expect("shape"),
        );
        f.insert("fc2.b", Tensor::vector(p[l.b2()..].to_vec()));
        f
    }

    pub fn from_container(f: &TensorFile, schema: &FeatureSchema) -> Result<Self> {
        f.expect_kind(KIND)?;
        f.expect_fingerprint(&schema.fingerprint())?;
        let h = f.meta["hidden"]
            .as_u64()
            .ok_or_else(|| Error::InvalidInput("BC container lacks hidden".into()))?
            as usize;
        let dropout_p = f.meta["dropout_p"]
            .as_f64()
            .ok_or_else(|| Error::InvalidInput("BC container lacks dropout_p".into()))?;
        let l = Layout {
            f: schema.n_features(),
            h,
            a: schema.n_actions(),
        };
        let mut params = Vec::with_capacity(l.total());
        params.extend_from_slice(f.expect("fc1.w", &[l.h, l.f])?);
        params.extend_from_slice(f.expect("fc1.b", &[l.h])?);
        params.extend_from_slice(f.expect("fc2.w", &[l.a, l.h])?);
        params.extend_from_slice(f.expect("fc2.b", &[l.a])?);
        Ok(Self {
            params,
            n_features: l.f,
            hidden: l.h,
            n_actions: l.a,
            dropout_p,
        })
    }
}

fn draw_mask<R: Rng>(hidden: usize, p: f64, r: &mut R) -> Option<Vec<f64>> {
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some(
        (0..hidden)
            .map(|_| if r.random::<f64>() < p { 0.0 } else { keep })
            .collect(),
    )
}

/// Returns (hidden activations before masking, logits).
fn forward(l: Layout, p: &[f64], x: &[f64], mask: Option<&[f64]>) -> (Vec<f64>, Vec<f64>) {
    let mut h = vec![0.0; l.h];
    crate::math::affine(&p[..l.b1()], &p[l.b1()..l.w2()], x, &mut h);
    h.iter_mut().for_each(|v| *v = v.tanh());
    let hm: Vec<f64> = match mask {
        Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
        None => h.clone(),
    };
    let mut z = vec![0.0; l.a];
    crate::math::affine(&p[l.w2()..l.b2()], &p[l.b2()..], &hm, &mut z);
    (h, z)
}

/// Mean over samples and actions of the class-weighted BCE, and optionally
/// its gradient, for fixed dropout masks.
fn batch_loss(
    l: Layout,
    p: &[f64],
    samples: &[&BcSample],
    masks: &[Option<Vec<f64>>],
    w: &[f64],
    want_grad: bool,
) -> (f64, Option<Vec<f64>>) {
    let norm = 1.0 / (samples.len() * l.a) as f64;
    let mut loss = 0.0;
    let mut grad = want_grad.then(|| vec![0.0; l.total()]);
    for (s, mask) in samples.iter().zip(masks) {
        let (h, z) = forward(l, p, &s.state, mask.as_deref());
        let mut dz = vec![0.0; l.a];
        for e in 0..l.a {
            let y = if s.labels[e] { 1.0 } else { 0.0 };
            loss += bce_with_logit(z[e], y, w[e]);
            let q = sigmoid(z[e]);
            dz[e] = norm * (w[e] * y * (q - 1.0) + (1.0 - y) * q);
        }
        if let Some(g) = grad.as_mut() {
            let hm: Vec<f64> = match mask {
                Some(m) => h.iter().zip(m).map(|(a, b)| a * b).collect(),
                None => h.clone(),
            };
            let mut dh = vec![0.0; l.h];
            for e in 0..l.a {
                let row = l.w2() + e * l.h;
                for k in 0..l.h {
                    g[row + k] += dz[e] * hm[k];
                    dh[k] += dz[e] * p[row + k];
                }
                g[l.b2() + e] += dz[e];
            }
            for k in 0..l.h {
                let m = mask.as_ref().map_or(1.0, |m| m[k]);
                let da = dh[k] * m * (1.0 - h[k] * h[k]);
                if da != 0.0 {
                    let row = k * l.f;
                    for (j, &xj) in s.state.iter().enumerate() {
                        g[row + j] += da * xj;
                    }
                }
                g[l.b1() + k] += da;
            }
        }
    }
    (loss * norm, grad)
}

/// The training loss over fixed samples and dropout masks, as a function of
/// the parameters.
pub struct BcObjective<'a> {
    layout_net: &'a BcNet,
    samples: Vec<&'a BcSample>,
    masks: Vec<Option<Vec<f64>>>,
    weights: Vec<f64>,
}

impl<'a> BcObjective<'a> {
    /// Freezes one dropout mask per sample from `seed`.
    pub fn new(net: &'a BcNet, samples: &'a [BcSample], weights: Vec<f64>, seed: u64) -> Self {
        let mut r = rng::seeded(seed);
        let masks = samples.iter().map(|_| net.draw_mask(&mut r)).collect();
        Self {
            layout_net: net,
            samples: samples.iter().collect(),
            masks,
            weights,
        }
    }
}

impl Differentiable for BcObjective<'_> {
    fn dim(&self) -> usize {
        self.layout_net.params.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        batch_loss(
            self.layout_net.layout(),
            x,
            &self.samples,
            &self.masks,
            &self.weights,
            false,
        )
        .0
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        batch_loss(
            self.layout_net.layout(),
            x,
            &self.samples,
            &self.masks,
            &self.weights,
            true,
        )
        .1
        .expect("gradient requested")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcEpoch {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    pub history: Vec<BcEpoch>,
    pub best_epoch: usize,
    pub pos_weights: PosWeights,
}

/// Mini-batch Adam on the class-balanced BCE with dropout active. Returns the
/// weights of the epoch with the lowest deterministic validation loss.
pub fn train_bc(
    train: &[BcSample],
    val: &[BcSample],
    config: &BcConfig,
) -> Result<(BcNet, BcReport)> {
    config.validate()?;
    let first = train
        .first()
        .ok_or_else(|| Error::InvalidInput("training needs at least one sample".into()))?;
    if val.is_empty() {
        return Err(Error::InvalidInput("validation set is empty".into()));
    }
    let (f, a) = (first.state.len(), first.labels.len());
    for s in train.iter().chain(val) {
        check_len("BC state", f, s.state.len())?;
        check_len("BC labels", a, s.labels.len())?;
    }
    let labels: Vec<Vec<bool>> = train.iter().map(|s| s.labels.clone()).collect();
    let pw = pos_weights(&labels, config.pos_weight_exponent)?;
    let mut net = BcNet::new(
        f,
        config.hidden_width,
        a,
        config.dropout_p,
        rng::derive_seed(config.seed, 1),
    )?;
    let l = net.layout();
    let mut opt = AdamW::new(net.params.len(), 0.9, 0.999, 1e-8, config.weight_decay);
    let mut shuffle_rng = rng::substream(config.seed, 2);
    let mut mask_rng = rng::substream(config.seed, 3);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let all_train: Vec<&BcSample> = train.iter().collect();
    let all_val: Vec<&BcSample> = val.iter().collect();
    let no_masks = |n: usize| vec![None; n];
    let mut history = Vec::with_capacity(config.epochs);
    let mut best = (f64::INFINITY, net.params.clone(), 0);

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(config.batch_size) {
            let b: Vec<&BcSample> = idx.iter().map(|&i| &train[i]).collect();
            let masks: Vec<Option<Vec<f64>>> =
                b.iter().map(|_| net.draw_mask(&mut mask_rng)).collect();
            let (loss, grad) = batch_loss(l, &net.params, &b, &masks, &pw.weights, true);
            if !loss.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("non-finite BC batch loss {loss}"),
                });
            }
            opt.update(
                &mut net.params,
                &grad.expect("gradient requested"),
                config.lr,
            );
        }
        let train_loss = batch_loss(
            l,
            &net.params,
            &all_train,
            &no_masks(train.len()),
            &pw.weights,
            false,
        )
        .0;
        let val_loss = batch_loss(
            l,
            &net.params,
            &all_val,
            &no_masks(val.len()),
            &pw.weights,
            false,
        )
        .0;
        if !train_loss.is_finite() || !val_loss.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: "non-finite BC epoch loss".into(),
            });
        }
        history.push(BcEpoch {
            epoch,
            train_loss,
            val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, net.params.clone(), epoch);
        }
    }
    net.params = best.1;
    Ok((
        net,
        BcReport {
            history,
            best_epoch: best.2,
            pos_weights: pw,
        },
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McPrediction {
    pub mean_probs: Vec<f64>,
    /// Mean over samples and actions of p (1 - p).
    pub aleatoric: f64,
    /// Mean over actions of the across-sample variance of p.
    pub epistemic: f64,
}

/// `mc_samples` stochastic passes with independent dropout masks; pass `i`
/// uses stream `derive_seed(seed, i)`.
pub fn mc_predict(
    net: &BcNet,
    state: &[f64],
    mc_samples: usize,
    seed: u64,
) -> Result<McPrediction> {
    check_len("BC state", net.n_features, state.len())?;
    if mc_samples == 0 {
        return Err(Error::InvalidInput("mc_samples must be positive".into()));
    }
    let draws = par::map_range(mc_samples, |i| {
        net.sample_probs(state, &mut rng::seeded(rng::derive_seed(seed, i as u64)))
    });
    Ok(summarize_draws(&draws))
}

fn summarize_draws(draws: &[Vec<f64>]) -> McPrediction {
    let s = draws.len() as f64;
    let a = draws[0].len();
    let mut mean_probs = vec![0.0; a];
    let mut aleatoric = 0.0;
    for d in draws {
        for (m, &p) in mean_probs.iter_mut().zip(d) {
            *m += p / s;
            aleatoric += p * (1.0 - p);
        }
    }
    aleatoric /= s * a as f64;
    let epistemic = (0..a)
        .map(|e| {
            draws
                .iter()
                .map(|d| (d[e] - mean_probs[e]).powi(2))
                .sum::<f64>()
                / s
        })
        .sum::<f64>()
        / a as f64;
    McPrediction {
        mean_probs,
        aleatoric,
        epistemic,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub exact_match: f64,
    pub hamming: f64,
    pub f1_macro: f64,
    pub f1_micro: f64,
    pub brier: f64,
    pub ece: f64,
    pub ace: f64,
    pub log_likelihood: f64,
    pub aleatoric: f64,
    pub epistemic: f64,
    /// Per action; `None` where the action never occurs in the labels.
    pub f1_per_action: Vec<Option<f64>>,
}

/// Probability floor used by the log-likelihood.
pub const LOG_FLOOR: f64 = 1e-12;

/// Thresholded and calibration metrics for probabilities against labels.
/// `aleatoric` is the mean p (1 - p); `epistemic` is left at 0 (see
/// [`evaluate_bc`] for the Monte Carlo decomposition).
pub fn bc_metrics(
    probs: &[Vec<f64>],
    labels: &[Vec<bool>],
    threshold: f64,
    bins: usize,
) -> Result<CalibrationReport> {
    check_len("metric rows", labels.len(), probs.len())?;
    if probs.is_empty() || bins == 0 {
        return Err(Error::InvalidInput(
            "metrics need rows and at least one bin".into(),
        ));
    }
    let a = labels[0].len();
    let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(probs.len() * a);
    let mut exact = 0usize;
    let (mut tp, mut fp, mut fneg) = (vec![0usize; a], vec![0usize; a], vec![0usize; a]);
    let mut wrong = 0usize;
    for (p, y) in probs.iter().zip(labels) {
        check_len("probability row", a, p.len())?;
        check_len("label row", a, y.len())?;
        let mut row_ok = true;
        for e in 0..a {
            if !(0.0..=1.0).contains(&p[e]) {
                return Err(Error::InvalidInput(format!(
                    "probability {} outside [0, 1]",
                    p[e]
                )));
            }
            let pred = p[e] >= threshold;
            if pred != y[e] {
                wrong += 1;
                row_ok = false;
            }
            match (pred, y[e]) {
                (true, true) => tp[e] += 1,
                (true, false) => fp[e] += 1,
                (false, true) => fneg[e] += 1,
                _ => {}
            }
            pairs.push((p[e], if y[e] { 1.0 } else { 0.0 }));
        }
        exact += usize::from(row_ok);
    }
    let n_rows = probs.len() as f64;
    let n_bits = pairs.len() as f64;
    let f1 = |tp: usize, fp: usize, fneg: usize| {
        let d = 2 * tp + fp + fneg;
        if d == 0 {
            0.0
        } else {
            2.0 * tp as f64 / d as f64
        }
    };
    let f1_per_action: Vec<Option<f64>> = (0..a)
        .map(|e| (tp[e] + fneg[e] > 0).then(|| f1(tp[e], fp[e], fneg[e])))
        .collect();
    let defined: Vec<f64> = f1_per_action.iter().flatten().copied().collect();
    let f1_macro = if defined.is_empty() {
        0.0
    } else {
        defined.iter().sum::<f64>() / defined.len() as f64
    };
    let f1_micro = f1(tp.iter().sum(), fp.iter().sum(), fneg.iter().sum());
    let brier = pairs.iter().map(|(p, y)| (p - y) * (p - y)).sum::<f64>() / n_bits;
    let log_likelihood = pairs
        .iter()
        .map(|&(p, y)| {
            let p = p.clamp(LOG_FLOOR, 1.0 - LOG_FLOOR);
            y * p.ln() + (1.0 - y) * (1.0 - p).ln()
        })
        .sum::<f64>()
        / n_bits;
    let aleatoric = pairs.iter().map(|(p, _)| p * (1.0 - p)).sum::<f64>() / n_bits;
    Ok(CalibrationReport {
        exact_match: exact as f64 / n_rows,
        hamming: wrong as f64 / n_bits,
        f1_macro,
        f1_micro,
        brier,
        ece: ece(&pairs, bins),
        ace: ace(&pairs, bins),
        log_likelihood,
        aleatoric,
        epistemic: 0.0,
        f1_per_action,
    })
}

/// Equal-width bins on [0, 1]; the top edge falls into the last bin.
fn ece(pairs: &[(f64, f64)], bins: usize) -> f64 {
    let mut count = vec![0usize; bins];
    let mut conf = vec![0.0; bins];
    let mut acc = vec![0.0; bins];
    for &(p, y) in pairs {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        count[b] += 1;
        conf[b] += p;
        acc[b] += y;
    }
    let n = pairs.len() as f64;
    (0..bins)
        .filter(|&b| count[b] > 0)
        .map(|b| (acc[b] - conf[b]).abs() / n)
        .sum()
}

/// Equal-frequency bins over the pooled probabilities (sorted, split into
/// `bins` contiguous chunks whose sizes differ by at most one), averaged
/// without weights over non-empty bins.
fn ace(pairs: &[(f64, f64)], bins: usize) -> f64 {
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = sorted.len();
    let (base, extra) = (n / bins, n % bins);
    let mut start = 0;
    let mut total = 0.0;
    let mut used = 0;
    for b in 0..bins {
        let len = base + usize::from(b < extra);
        if len == 0 {
            continue;
        }
        let chunk = &sorted[start..start + len];
        let conf = chunk.iter().map(|c| c.0).sum::<f64>() / len as f64;
        let acc = chunk.iter().map(|c| c.1).sum::<f64>() / len as f64;
        total += (acc - conf).abs();
        used += 1;
        start += len;
    }
    total / used as f64
}

/// MC-averaged probabilities per sample, scored with [`bc_metrics`]; the
/// aleatoric and epistemic terms are averaged over samples.
pub fn evaluate_bc(
    net: &BcNet,
    samples: &[BcSample],
    mc_samples: usize,
    seed: u64,
) -> Result<CalibrationReport> {
    let preds = par::map_range(samples.len(), |i| {
        mc_predict(
            net,
            &samples[i].state,
            mc_samples,
            rng::derive_seed(seed, i as u64),
        )
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;
    let probs: Vec<Vec<f64>> = preds.iter().map(|p| p.mean_probs.clone()).collect();
    let labels: Vec<Vec<bool>> = samples.iter().map(|s| s.labels.clone()).collect();
    let mut rep = bc_metrics(&probs, &labels, 0.5, 15)?;
    let n = preds.len() as f64;
    rep.aleatoric = preds.iter().map(|p| p.aleatoric).sum::<f64>() / n;
    rep.epistemic = preds.iter().map(|p| p.epistemic).sum::<f64>() / n;
    Ok(rep)
}

impl CalibrationReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (k, v) in [
            ("exact_match", self.exact_match),
            ("hamming", self.hamming),
            ("f1_macro", self.f1_macro),
            ("f1_micro", self.f1_micro),
            ("brier", self.brier),
            ("ece", self.ece),
            ("ace", self.ace),
            ("log_likelihood", self.log_likelihood),
            ("aleatoric", self.aleatoric),
            ("epistemic", self.epistemic),
        ] {
            let _ = writeln!(s, "{k}\t{v:.6}");
        }
        s
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcMode {
    /// Deterministic pass, thresholded at 0.5.
    Threshold,
    /// Mean of `mc_samples` dropout passes, thresholded at 0.5.
    McMeanThreshold,
}

/// Behavior-cloned clinician as a [`Policy`] on raw observations.
#[derive(Debug, Clone)]
pub struct BcPolicy {
    net: BcNet,
    scaler: ScalerStats,
    schema: FeatureSchema,
    mode: BcMode,
    mc_samples: usize,
}

pub fn bc_policy(
    net: BcNet,
    schema: &FeatureSchema,
    scaler: &ScalerStats,
    mode: BcMode,
    mc_samples: usize,
) -> Result<BcPolicy> {
    check_len("BC network inputs", schema.n_features(), net.n_features)?;
    check_len("BC network outputs", schema.n_actions(), net.n_actions)?;
    Ok(BcPolicy {
        net,
        scaler: scaler.clone(),
        schema: schema.clone(),
        mode,
        mc_samples: mc_samples.max(1),
    })
}

impl BcPolicy {
    pub fn probs(&self, observation: &PatientState, r: &mut SimRng) -> Result<Vec<f64>> {
        let z = self.scaler.to_zspace(observation)?;
        Ok(match self.mode {
            BcMode::Threshold => self.net.predict_probs(&z.values),
            BcMode::McMeanThreshold => {
                let draws: Vec<Vec<f64>> = (0..self.mc_samples)
                    .map(|_| self.net.sample_probs(&z.values, r))
                    .collect();
                summarize_draws(&draws).mean_probs
            }
        })
    }

    pub fn actions_from_probs(&self, probs: &[f64]) -> ActionVector {
        self.schema.repair_action(&ActionVector::new(
            probs.iter().map(|&p| p >= 0.5).collect(),
        ))
    }
}

impl Policy for BcPolicy {
    fn act(&self, observation: &PatientState, r: &mut SimRng) -> Result<ActionVector> {
        let p = self.probs(observation, r)?;
        Ok(self.actions_from_probs(&p))
    }

    fn name(&self) -> &str {
        "clinician_bc"
    }

    fn is_deterministic(&self) -> bool {
        self.mode == BcMode::Threshold || self.net.dropout_p == 0.0
    }

    /// Deterministic-pass probability of the action.
    fn score(&self, observation: &PatientState, action_index: usize) -> Result<f64> {
        let z = self.scaler.to_zspace(observation)?;
        self.net
            .predict_probs(&z.values)
            .get(action_index)
            .copied()
            .ok_or(Error::Dimension {
                context: "action index",
                expected: self.net.n_actions,
                got: action_index,
            })
    }
}
