//! Independent scalar reference computations and random inputs shared by the
//! component suites and the acceptance run.

use adsim_core::clinician::BcSample;
use adsim_core::dynamics::{MiniSample, MoEConfig, MoeTransformer};
use adsim_core::policies::Alternative;
use adsim_core::rng;
use adsim_core::schema::{ActionVector, FeatureSchema, PatientState, Visit};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

/// One layer, two heads, two experts, width 4.
pub fn tiny_config(schema: &FeatureSchema) -> MoEConfig {
    MoEConfig {
        n_layers: 1,
        embed_dim: 4,
        n_heads: 2,
        n_experts: 2,
        ffn_dim: 3,
        max_positions: 8,
        ..MoEConfig::for_schema(schema)
    }
}

pub fn random_history(schema: &FeatureSchema, len: usize, seed: u64) -> Vec<Visit> {
    let mut r = rng::seeded(seed);
    (0..len)
        .map(|_| {
            let mut s: Vec<f64> = (0..schema.n_features())
                .map(|_| r.random_range(-1.5..1.5))
                .collect();
            for j in schema.binary_indices() {
                s[j] = f64::from(r.random_bool(0.5) as u8);
            }
            let bits: Vec<bool> = (0..schema.n_actions())
                .map(|_| r.random_bool(0.2))
                .collect();
            Visit::new(PatientState::zscaled(s), ActionVector::new(bits), 6.0)
        })
        .collect()
}

pub fn random_mini_samples(schema: &FeatureSchema, n: usize, seed: u64) -> Vec<MiniSample> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| {
            let hist = random_history(schema, 1 + r.random_range(0..4usize), r.random());
            let mut target: Vec<f64> = (0..schema.n_features())
                .map(|_| r.random_range(-2.0..2.0))
                .collect();
            for j in schema.binary_indices() {
                target[j] = f64::from(r.random_bool(0.5) as u8);
            }
            MiniSample {
                context: MiniSample::context_for(&hist).unwrap(),
                target,
            }
        })
        .collect()
}

pub fn random_bc_samples(n: usize, f: usize, a: usize, seed: u64) -> Vec<BcSample> {
    let mut r = rng::seeded(seed);
    (0..n)
        .map(|_| BcSample {
            state: (0..f).map(|_| StandardNormal.sample(&mut r)).collect(),
            labels: (0..a).map(|_| r.random::<f64>() < 0.3).collect(),
        })
        .collect()
}

fn layer_norm(x: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mu: f64 = x.iter().sum::<f64>() / n;
    let var: f64 = x.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n;
    x.iter().map(|v| (v - mu) / (var + 1e-5).sqrt()).collect()
}

fn matvec(w: &[f64], b: &[f64], x: &[f64]) -> Vec<f64> {
    (0..b.len())
        .map(|i| b[i] + (0..x.len()).map(|j| w[i * x.len() + j] * x[j]).sum::<f64>())
        .collect()
}

fn gelu_erf(x: f64) -> f64 {
    0.5 * x * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()))
}

/// Zero query/key maps (uniform causal attention) and identity value/output maps.
pub fn make_uniform_attention(m: &mut MoeTransformer) {
    let d = m.config.embed_dim;
    let layer = &mut m.layers[0];
    layer.q.w.iter_mut().for_each(|v| *v = 0.0);
    layer.k.w.iter_mut().for_each(|v| *v = 0.0);
    layer.v.w = (0..d * d)
        .map(|i| f64::from(u8::from(i % (d + 1) == 0)))
        .collect();
    layer.o.w = layer.v.w.clone();
}

pub struct HandForward {
    pub expert: Vec<usize>,
    pub continuous: Vec<Vec<f64>>,
    pub binary: Vec<Vec<f64>>,
}

/// Scalar forward pass for a single-layer, two-expert model after
/// [`make_uniform_attention`].
pub fn hand_forward(m: &MoeTransformer, hist: &[Visit]) -> HandForward {
    let d = m.config.embed_dim;
    let rows: Vec<Vec<f64>> = hist
        .iter()
        .map(|v| {
            let mut r = v.state.values.clone();
            r.extend(v.action.bits().iter().map(|&b| if b { 1.0 } else { 0.0 }));
            r.push(v.months_to_next);
            r
        })
        .collect();
    let h: Vec<Vec<f64>> = rows
        .iter()
        .enumerate()
        .map(|(t, x)| {
            let e = matvec(&m.embed.w, &m.embed.b, x);
            e.iter()
                .zip(&m.positions[t * d..(t + 1) * d])
                .map(|(a, b)| a + b)
                .collect()
        })
        .collect();
    let a: Vec<Vec<f64>> = h.iter().map(|x| layer_norm(x)).collect();
    let layer = &m.layers[0];
    let mut out = HandForward {
        expert: vec![],
        continuous: vec![],
        binary: vec![],
    };
    for t in 0..hist.len() {
        // mean of the visible value vectors (value bias included)
        let mean: Vec<f64> = (0..d)
            .map(|i| {
                (0..=t).map(|s| a[s][i] + layer.v.b[i]).sum::<f64>() / (t + 1) as f64 + layer.o.b[i]
            })
            .collect();
        let h1: Vec<f64> = (0..d).map(|i| h[t][i] + mean[i]).collect();
        let n = layer_norm(&h1);
        let logits = matvec(&layer.router.w, &layer.router.b, &n);
        let chosen = usize::from(logits[1] > logits[0]);
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        let p = logits[chosen].exp() / z;
        let ex = &layer.experts[chosen];
        let hid: Vec<f64> = matvec(&ex.up.w, &ex.up.b, &n)
            .into_iter()
            .map(gelu_erf)
            .collect();
        let y = matvec(&ex.down.w, &ex.down.b, &hid);
        let h2: Vec<f64> = (0..d).map(|i| h1[i] + p * y[i]).collect();
        let f = layer_norm(&h2);
        out.expert.push(chosen);
        out.continuous
            .push(matvec(&m.head_continuous.w, &m.head_continuous.b, &f));
        out.binary
            .push(matvec(&m.head_binary.w, &m.head_binary.b, &f));
    }
    out
}

/// Signed-rank p-value by enumerating all 2^n sign assignments, plus the
/// probability of the observed statistic itself.
pub fn brute_force_wilcoxon(d: &[f64], alt: Alternative) -> (f64, f64) {
    let d: Vec<f64> = d.iter().copied().filter(|v| *v != 0.0).collect();
    let n = d.len();
    if n == 0 {
        return (1.0, 1.0);
    }
    let rank = |x: f64| {
        let less = d.iter().filter(|v| v.abs() < x.abs()).count() as f64;
        let equal = d.iter().filter(|v| v.abs() == x.abs()).count() as f64;
        less + (equal + 1.0) / 2.0
    };
    let ranks: Vec<f64> = d.iter().map(|&x| rank(x)).collect();
    let obs: f64 = d
        .iter()
        .zip(&ranks)
        .filter(|(v, _)| **v > 0.0)
        .map(|(_, r)| r)
        .sum();
    let (mut ge, mut le, mut eq) = (0usize, 0usize, 0usize);
    for mask in 0..1usize << n {
        let w: f64 = (0..n)
            .filter(|i| mask >> i & 1 == 1)
            .map(|i| ranks[i])
            .sum();
        ge += usize::from(w >= obs - 1e-9);
        le += usize::from(w <= obs + 1e-9);
        eq += usize::from((w - obs).abs() <= 1e-9);
    }
    let t = (1usize << n) as f64;
    let p = match alt {
        Alternative::Greater => ge as f64 / t,
        Alternative::Less => le as f64 / t,
        Alternative::TwoSided => (2.0 * (ge.min(le)) as f64 / t).min(1.0),
    };
    (p, eq as f64 / t)
}
