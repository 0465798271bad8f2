use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{input_row, Differentiable, Dynamics, LossBreakdown, LOAD_BALANCE_WEIGHT};
use crate::container::{Tensor, TensorFile};
use crate::error::{check_len, Error, Result};
use crate::math::{argmax, bce_with_logit, sigmoid, softmax_in_place};
use crate::optim::AdamW;
use crate::par;
use crate::rng::{self, SimRng};
use crate::schema::{FeatureKind, FeatureSchema, PatientState, Trajectory, Visit};

pub(super) const KIND: &str = "moe_mini";

/// Samples per gradient chunk; fixed so reductions do not depend on the
/// thread count.
const CHUNK: usize = 16;

/// One teacher-forced transition: context summary of visits `1..=t` and the
/// z-scaled state at visit `t + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniSample {
    pub context: Vec<f64>,
    pub target: Vec<f64>,
}

impl MiniSample {
    /// Last input row concatenated with the mean of the earlier rows (zeros
    /// when there are none).
    pub fn context_for(history: &[Visit]) -> Result<Vec<f64>> {
        let (last, prior) = history
            .split_last()
            .ok_or_else(|| Error::InvalidInput("empty history".into()))?;
        let mut ctx = Vec::new();
        input_row(last, &mut ctx)?;
        let width = ctx.len();
        let mut mean = vec![0.0; width];
        let mut row = Vec::with_capacity(width);
        for v in prior {
            row.clear();
            input_row(v, &mut row)?;
            for (m, x) in mean.iter_mut().zip(&row) {
                *m += x;
            }
        }
        if !prior.is_empty() {
            let n = prior.len() as f64;
            mean.iter_mut().for_each(|m| *m /= n);
        }
        ctx.extend(mean);
        Ok(ctx)
    }

    pub fn from_cohort(cohort: &[Trajectory]) -> Result<Vec<MiniSample>> {
        let mut out = Vec::new();
        for tr in cohort {
            for t in 0..tr.visits.len().saturating_sub(1) {
                out.push(MiniSample {
                    context: Self::context_for(&tr.visits[..=t])?,
                    target: tr.visits[t + 1].state.values.clone(),
                });
            }
        }
        Ok(out)
    }
}

/// Reduced trainable mixture of experts: softmax router over linear experts
/// acting on a context summary. Training mixes experts by router
/// probability; inference uses the top-1 expert.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniMoe {
    n_experts: usize,
    context_dim: usize,
    out_dim: usize,
    /// Flat parameters: router W (E×C), router b (E), expert W (E×D×C),
    /// expert b (E×D).
    pub params: Vec<f64>,
    continuous: Vec<bool>,
}

struct Layout {
    e: usize,
    c: usize,
    d: usize,
}

impl Layout {
    fn rb(&self) -> usize {
        self.e * self.c
    }
    fn ew(&self) -> usize {
        self.rb() + self.e
    }
    fn eb(&self) -> usize {
        self.ew() + self.e * self.d * self.c
    }
    fn total(&self) -> usize {
        self.eb() + self.e * self.d
    }
}

impl MiniMoe {
    pub fn new(schema: &FeatureSchema, n_experts: usize, seed: u64) -> Result<Self> {
        if n_experts == 0 {
            return Err(Error::InvalidInput(
                "MoE-mini needs at least one expert".into(),
            ));
        }
        let mut m = Self::zeros(schema, n_experts);
        let mut r = rng::seeded(seed);
        let router = Normal::new(0.0, 0.1).expect("sd");
        let expert = Normal::new(0.0, 0.1 / (m.context_dim as f64).sqrt()).expect("sd");
        let l = m.layout();
        for (i, p) in m.params.iter_mut().enumerate() {
            if i < l.rb() {
                *p = router.sample(&mut r);
            } else if (l.ew()..l.eb()).contains(&i) {
                *p = expert.sample(&mut r);
            }
        }
        Ok(m)
    }

    pub fn zeros(schema: &FeatureSchema, n_experts: usize) -> Self {
        let context_dim = 2 * schema.input_dim();
        let out_dim = schema.n_features();
        let l = Layout {
            e: n_experts,
            c: context_dim,
            d: out_dim,
        };
        Self {
            n_experts,
            context_dim,
            out_dim,
            params: vec![0.0; l.total()],
            continuous: schema
                .features()
                .iter()
                .map(|f| f.kind == FeatureKind::Continuous)
                .collect(),
        }
    }

    fn layout(&self) -> Layout {
        Layout {
            e: self.n_experts,
            c: self.context_dim,
            d: self.out_dim,
        }
    }

    pub fn n_experts(&self) -> usize {
        self.n_experts
    }

    pub fn context_dim(&self) -> usize {
        self.context_dim
    }

    pub fn n_params(&self) -> usize {
        self.params.len()
    }

    pub fn router_probs(&self, context: &[f64]) -> Vec<f64> {
        let mut p = router_logits(&self.layout(), &self.params, context);
        softmax_in_place(&mut p);
        p
    }

    /// Output of one expert, schema-ordered (continuous values and binary
    /// logits).
    pub fn expert_output(&self, e: usize, context: &[f64]) -> Vec<f64> {
        expert_out(&self.layout(), &self.params, e, context)
    }

    /// Probability-weighted mixture used during training.
    pub fn predict_soft(&self, context: &[f64]) -> Vec<f64> {
        let p = self.router_probs(context);
        let mut y = vec![0.0; self.out_dim];
        for (e, pe) in p.iter().enumerate() {
            for (v, u) in y.iter_mut().zip(self.expert_output(e, context)) {
                *v += pe * u;
            }
        }
        y
    }

    /// Top-1 expert output (ties to the lowest index).
    pub fn predict_top1(&self, context: &[f64]) -> (usize, Vec<f64>) {
        let l = self.layout();
        let e = argmax(&router_logits(&l, &self.params, context));
        (e, expert_out(&l, &self.params, e, context))
    }

    /// Loss breakdown (with the fixed 0.005 weighting) of the soft mixture.
    pub fn evaluate(&self, samples: &[MiniSample]) -> LossBreakdown {
        let refs: Vec<&MiniSample> = samples.iter().collect();
        batch(self, &self.params, &refs, LOAD_BALANCE_WEIGHT, false).0
    }

    /// Router assignment fractions of the top-1 choice over `samples`.
    pub fn assignment_fractions(&self, samples: &[MiniSample]) -> Vec<f64> {
        let mut f = vec![0.0; self.n_experts];
        for s in samples {
            f[self.predict_top1(&s.context).0] += 1.0 / samples.len() as f64;
        }
        f
    }

    /// Mean squared error over continuous features of top-1 inference.
    pub fn top1_mse(&self, samples: &[MiniSample]) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for s in samples {
            let y = self.predict_top1(&s.context).1;
            for j in 0..self.out_dim {
                if self.continuous[j] {
                    sum += (y[j] - s.target[j]).powi(2);
                    n += 1;
                }
            }
        }
        sum / n.max(1) as f64
    }

    pub fn to_container(&self, schema: &FeatureSchema) -> TensorFile {
        let l = self.layout();
        let p = &self.params;
        let mut f = TensorFile::new(KIND, schema.fingerprint());
        f.meta = serde_json::json!({ "n_experts": l.e, "context_dim": l.c });
        f.insert(
            "router.w",
            Tensor::matrix(l.e, l.c, p[..l.rb()].to_vec()).expect("shape"),
        );
        f.insert("router.b", Tensor::vector(p[l.rb()..l.ew()].to_vec()));
        f.insert(
            "experts.w",
            Tensor::new(vec![l.e, l.d, l.c], p[l.ew()..l.eb()].to_vec()).expect("shape"),
        );
        f.insert(
            "experts.b",
            Tensor::matrix(l.e, l.d, p[l.eb()..].to_vec()).expect("shape"),
        );
        f
    }

    pub fn from_container(f: &TensorFile, schema: &FeatureSchema) -> Result<Self> {
        f.expect_kind(KIND)?;
        let e = f.meta["n_experts"]
            .as_u64()
            .ok_or_else(|| Error::InvalidInput("MoE-mini container lacks n_experts".into()))?
            as usize;
        let mut m = Self::zeros(schema, e);
        let l = m.layout();
        let mut params = Vec::with_capacity(l.total());
        params.extend_from_slice(f.expect("router.w", &[l.e, l.c])?);
        params.extend_from_slice(f.expect("router.b", &[l.e])?);
        params.extend_from_slice(f.expect("experts.w", &[l.e, l.d, l.c])?);
        params.extend_from_slice(f.expect("experts.b", &[l.e, l.d])?);
        m.params = params;
        Ok(m)
    }
}

fn router_logits(l: &Layout, p: &[f64], c: &[f64]) -> Vec<f64> {
    (0..l.e)
        .map(|e| p[l.rb() + e] + crate::math::dot(&p[e * l.c..(e + 1) * l.c], c))
        .collect()
}

fn expert_out(l: &Layout, p: &[f64], e: usize, c: &[f64]) -> Vec<f64> {
    let w = &p[l.ew() + e * l.d * l.c..l.ew() + (e + 1) * l.d * l.c];
    let b = &p[l.eb() + e * l.d..l.eb() + (e + 1) * l.d];
    let mut out = vec![0.0; l.d];
    crate::math::affine(w, b, c, &mut out);
    out
}

/// Loss over a batch at parameters `p`, with optional gradient of
/// `mse + bce + lb_weight * load_balance`. Assignment fractions are treated
/// as constants.
fn batch(
    model: &MiniMoe,
    p: &[f64],
    samples: &[&MiniSample],
    lb_weight: f64,
    want_grad: bool,
) -> (LossBreakdown, Option<Vec<f64>>) {
    let l = model.layout();
    let b = samples.len() as f64;
    let n_cont = model.continuous.iter().filter(|&&c| c).count() as f64;
    let n_bin = model.continuous.len() as f64 - n_cont;

    struct Partial {
        counts: Vec<f64>,
        prob_sum: Vec<f64>,
        sq: f64,
        bce: f64,
    }
    let chunks: Vec<&[&MiniSample]> = samples.chunks(CHUNK).collect();
    let partials = par::map_slice(&chunks, |chunk| {
        let mut part = Partial {
            counts: vec![0.0; l.e],
            prob_sum: vec![0.0; l.e],
            sq: 0.0,
            bce: 0.0,
        };
        for s in chunk.iter() {
            let mut probs = router_logits(&l, p, &s.context);
            part.counts[argmax(&probs)] += 1.0;
            softmax_in_place(&mut probs);
            let mut y = vec![0.0; l.d];
            for (e, pe) in probs.iter().enumerate() {
                part.prob_sum[e] += pe;
                for (v, u) in y.iter_mut().zip(expert_out(&l, p, e, &s.context)) {
                    *v += pe * u;
                }
            }
            for j in 0..l.d {
                if model.continuous[j] {
                    part.sq += (y[j] - s.target[j]).powi(2);
                } else {
                    part.bce += bce_with_logit(y[j], s.target[j], 1.0);
                }
            }
        }
        part
    });
    let mut frac = vec![0.0; l.e];
    let mut mean_p = vec![0.0; l.e];
    let (mut sq, mut bce) = (0.0, 0.0);
    for part in &partials {
        for e in 0..l.e {
            frac[e] += part.counts[e];
            mean_p[e] += part.prob_sum[e];
        }
        sq += part.sq;
        bce += part.bce;
    }
    frac.iter_mut().for_each(|f| *f /= b);
    mean_p.iter_mut().for_each(|m| *m /= b);
    let mse = if n_cont > 0.0 { sq / (b * n_cont) } else { 0.0 };
    let bce = if n_bin > 0.0 { bce / (b * n_bin) } else { 0.0 };
    let lb = l.e as f64 * frac.iter().zip(&mean_p).map(|(f, m)| f * m).sum::<f64>();
    let loss = LossBreakdown::new(mse, bce, lb);
    if !want_grad {
        return (loss, None);
    }

    let lb_coef: Vec<f64> = frac
        .iter()
        .map(|f| lb_weight * l.e as f64 * f / b)
        .collect();
    let grads = par::map_slice(&chunks, |chunk| {
        let mut g = vec![0.0; l.total()];
        for s in chunk.iter() {
            let c = &s.context;
            let mut probs = router_logits(&l, p, c);
            softmax_in_place(&mut probs);
            let outs: Vec<Vec<f64>> = (0..l.e).map(|e| expert_out(&l, p, e, c)).collect();
            let mut y = vec![0.0; l.d];
            for (pe, u) in probs.iter().zip(&outs) {
                for (v, x) in y.iter_mut().zip(u) {
                    *v += pe * x;
                }
            }
            let gy: Vec<f64> = (0..l.d)
                .map(|j| {
                    if model.continuous[j] {
                        2.0 * (y[j] - s.target[j]) / (b * n_cont)
                    } else {
                        (sigmoid(y[j]) - s.target[j]) / (b * n_bin)
                    }
                })
                .collect();
            let mut dp = vec![0.0; l.e];
            for e in 0..l.e {
                dp[e] = crate::math::dot(&gy, &outs[e]) + lb_coef[e];
                let pe = probs[e];
                let wbase = l.ew() + e * l.d * l.c;
                let bbase = l.eb() + e * l.d;
                for j in 0..l.d {
                    let gj = pe * gy[j];
                    g[bbase + j] += gj;
                    let row = &mut g[wbase + j * l.c..wbase + (j + 1) * l.c];
                    for (r, x) in row.iter_mut().zip(c) {
                        *r += gj * x;
                    }
                }
            }
            let avg: f64 = probs.iter().zip(&dp).map(|(a, d)| a * d).sum();
            for e in 0..l.e {
                let dl = probs[e] * (dp[e] - avg);
                g[l.rb() + e] += dl;
                for (r, x) in g[e * l.c..(e + 1) * l.c].iter_mut().zip(c) {
                    *r += dl * x;
                }
            }
        }
        g
    });
    let mut grad = vec![0.0; l.total()];
    for g in &grads {
        for (a, v) in grad.iter_mut().zip(g) {
            *a += v;
        }
    }
    (loss, Some(grad))
}

/// Training objective over a fixed batch as a function of the flat
/// parameter vector.
pub struct MiniObjective<'a> {
    model: &'a MiniMoe,
    samples: Vec<&'a MiniSample>,
    lb_weight: f64,
}

impl<'a> MiniObjective<'a> {
    pub fn new(model: &'a MiniMoe, samples: &'a [MiniSample], lb_weight: f64) -> Self {
        Self {
            model,
            samples: samples.iter().collect(),
            lb_weight,
        }
    }
}

impl Differentiable for MiniObjective<'_> {
    fn dim(&self) -> usize {
        self.model.params.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let (l, _) = batch(self.model, x, &self.samples, self.lb_weight, false);
        l.mse + l.bce + self.lb_weight * l.load_balance
    }

    fn gradient(&self, x: &[f64]) -> Vec<f64> {
        batch(self.model, x, &self.samples, self.lb_weight, true)
            .1
            .expect("gradient requested")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub n_experts: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub plateau_patience: usize,
    pub plateau_min_delta: f64,
    pub plateau_factor: f64,
    pub lr_floor: f64,
    pub load_balance_weight: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            n_experts: 8,
            epochs: 100,
            batch_size: 64,
            lr: 1e-3,
            weight_decay: 0.01,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            plateau_patience: 5,
            plateau_min_delta: 1e-4,
            plateau_factor: 0.5,
            lr_floor: 1e-6,
            load_balance_weight: LOAD_BALANCE_WEIGHT,
            seed: rng::DEFAULT_SEED,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub train: LossBreakdown,
    pub val: LossBreakdown,
    pub max_expert_fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub history: Vec<EpochLog>,
    pub best_epoch: usize,
}

impl TrainReport {
    pub fn best(&self) -> &EpochLog {
        &self.history[self.best_epoch]
    }
}

/// Teacher-forced mini-batch AdamW training with a plateau schedule on the
/// validation objective. Returns the weights of the best validation epoch.
pub fn train_mini(
    train: &[Trajectory],
    val: &[Trajectory],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<(MiniMoe, TrainReport)> {
    let train_s = MiniSample::from_cohort(train)?;
    let val_s = MiniSample::from_cohort(val)?;
    train_samples(&train_s, &val_s, schema, config)
}

/// As [`train_mini`] on prepared samples.
pub fn train_samples(
    train: &[MiniSample],
    val: &[MiniSample],
    schema: &FeatureSchema,
    config: &TrainConfig,
) -> Result<(MiniMoe, TrainReport)> {
    if train.is_empty() || val.is_empty() {
        return Err(Error::InvalidInput(
            "training needs non-empty train and validation sets".into(),
        ));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidInput("batch_size must be positive".into()));
    }
    let mut model = MiniMoe::new(schema, config.n_experts, rng::derive_seed(config.seed, 1))?;
    for s in train.iter().chain(val) {
        check_len("MoE-mini context", model.context_dim, s.context.len())?;
        check_len("MoE-mini target", model.out_dim, s.target.len())?;
    }
    let mut shuffle_rng = rng::substream(config.seed, 2);
    let mut opt = AdamW::new(
        model.params.len(),
        config.beta1,
        config.beta2,
        config.adam_eps,
        config.weight_decay,
    );
    let mut lr = config.lr;
    let mut best_val = f64::INFINITY;
    let mut best_params = model.params.clone();
    let mut best_epoch = 0;
    let mut stale = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut history = Vec::with_capacity(config.epochs);
    let all_train: Vec<&MiniSample> = train.iter().collect();
    let all_val: Vec<&MiniSample> = val.iter().collect();

    for epoch in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        for idx in order.chunks(config.batch_size) {
            let b: Vec<&MiniSample> = idx.iter().map(|&i| &train[i]).collect();
            let (loss, grad) = batch(&model, &model.params, &b, config.load_balance_weight, true);
            if !loss.total.is_finite() {
                return Err(Error::Diverged {
                    epoch,
                    message: format!("non-finite batch loss {loss:?}"),
                });
            }
            opt.update(&mut model.params, &grad.expect("gradient requested"), lr);
        }
        let train_loss = batch(
            &model,
            &model.params,
            &all_train,
            config.load_balance_weight,
            false,
        )
        .0;
        let val_loss = batch(
            &model,
            &model.params,
            &all_val,
            config.load_balance_weight,
            false,
        )
        .0;
        if !val_loss.total.is_finite() || !train_loss.total.is_finite() {
            return Err(Error::Diverged {
                epoch,
                message: format!("non-finite epoch loss {val_loss:?}"),
            });
        }
        let frac = model.assignment_fractions(val);
        history.push(EpochLog {
            epoch,
            lr,
            train: train_loss,
            val: val_loss,
            max_expert_fraction: frac.iter().copied().fold(0.0, f64::max),
        });
        let objective =
            val_loss.mse + val_loss.bce + config.load_balance_weight * val_loss.load_balance;
        if objective < best_val - config.plateau_min_delta {
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.plateau_patience {
                lr = (lr * config.plateau_factor).max(config.lr_floor);
                stale = 0;
            }
        }
        if objective < best_val {
            best_val = objective;
            best_params.clone_from(&model.params);
            best_epoch = epoch;
        }
    }
    model.params = best_params;
    Ok((
        model,
        TrainReport {
            history,
            best_epoch,
        },
    ))
}

impl Dynamics for MiniMoe {
    fn predict_next(&self, history: &[Visit], _rng: &mut SimRng) -> Result<PatientState> {
        let ctx = MiniSample::context_for(history)?;
        check_len("MoE-mini context", self.context_dim, ctx.len())?;
        let (_, y) = self.predict_top1(&ctx);
        let state = y
            .iter()
            .zip(&self.continuous)
            .map(|(&v, &cont)| {
                if cont {
                    v
                } else if v >= 0.0 {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        Ok(PatientState::zscaled(state))
    }

    fn name(&self) -> &str {
        "moe_mini"
    }
}
