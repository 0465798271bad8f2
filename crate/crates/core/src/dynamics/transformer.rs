use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erf;

use super::{input_row, Dynamics, RouterStats};
use crate::container::{Tensor, TensorFile};
use crate::error::{Error, Result};
use crate::math::{affine, argmax, softmax_in_place};
use crate::rng::{self, SimRng};
use crate::schema::{FeatureSchema, PatientState, Visit};

pub(super) const KIND: &str = "moe_transformer";

const LN_EPS: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoEConfig {
    pub n_layers: usize,
    pub embed_dim: usize,
    pub n_heads: usize,
    pub n_experts: usize,
    pub top_k: usize,
    pub ffn_dim: usize,
    /// Training-time only; the forward pass here never applies it.
    pub dropout: f64,
    pub input_dim: usize,
    pub max_positions: usize,
    pub n_continuous: usize,
    pub n_binary: usize,
}

impl MoEConfig {
    pub fn for_schema(schema: &FeatureSchema) -> Self {
        Self {
            n_layers: 3,
            embed_dim: 256,
            n_heads: 4,
            n_experts: 8,
            top_k: 1,
            ffn_dim: 1024,
            dropout: 0.3,
            input_dim: schema.input_dim(),
            max_positions: 64,
            n_continuous: schema.continuous_indices().len(),
            n_binary: schema.binary_indices().len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("MoE config: {m}")));
        if self.n_heads == 0 || !self.embed_dim.is_multiple_of(self.n_heads) {
            return bad("embed_dim must be divisible by n_heads");
        }
        if self.top_k != 1 {
            return bad("only top_k = 1 is supported");
        }
        if self.top_k > self.n_experts {
            return bad("top_k exceeds n_experts");
        }
        if self.n_layers == 0 || self.ffn_dim == 0 || self.input_dim == 0 || self.max_positions == 0
        {
            return bad("zero-sized dimension");
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.embed_dim / self.n_heads
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    /// Row-major (out, in).
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Linear {
    pub fn zeros(out: usize, inp: usize) -> Self {
        Self {
            w: vec![0.0; out * inp],
            b: vec![0.0; out],
        }
    }

    fn random(out: usize, inp: usize, rng: &mut SimRng) -> Self {
        let sd = (1.0 / inp as f64).sqrt();
        let normal = Normal::new(0.0, sd).expect("positive sd");
        Self {
            w: (0..out * inp).map(|_| normal.sample(rng)).collect(),
            b: vec![0.0; out],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.b.len()];
        affine(&self.w, &self.b, x, &mut out);
        out
    }

    fn store(&self, f: &mut TensorFile, name: &str) {
        let out = self.b.len();
        let inp = self.w.len() / out;
        f.insert(
            format!("{name}.w"),
            Tensor::matrix(out, inp, self.w.clone()).expect("shape"),
        );
        f.insert(format!("{name}.b"), Tensor::vector(self.b.clone()));
    }

    fn load(f: &TensorFile, name: &str, out: usize, inp: usize) -> Result<Self> {
        Ok(Self {
            w: f.expect(&format!("{name}.w"), &[out, inp])?.to_vec(),
            b: f.expect(&format!("{name}.b"), &[out])?.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gain: Vec<f64>,
    pub bias: Vec<f64>,
}

impl LayerNorm {
    pub fn identity(dim: usize) -> Self {
        Self {
            gain: vec![1.0; dim],
            bias: vec![0.0; dim],
        }
    }

    fn apply(&self, x: &[f64]) -> Vec<f64> {
        let n = x.len() as f64;
        let mu = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        x.iter()
            .zip(self.gain.iter().zip(&self.bias))
            .map(|(v, (g, b))| (v - mu) * inv * g + b)
            .collect()
    }

    fn store(&self, f: &mut TensorFile, name: &str) {
        f.insert(format!("{name}.g"), Tensor::vector(self.gain.clone()));
        f.insert(format!("{name}.b"), Tensor::vector(self.bias.clone()));
    }

    fn load(f: &TensorFile, name: &str, dim: usize) -> Result<Self> {
        Ok(Self {
            gain: f.expect(&format!("{name}.g"), &[dim])?.to_vec(),
            bias: f.expect(&format!("{name}.b"), &[dim])?.to_vec(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Expert {
    pub up: Linear,
    pub down: Linear,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub ln1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub ln2: LayerNorm,
    pub router: Linear,
    pub experts: Vec<Expert>,
}

/// Causal mixture-of-experts transformer (forward only).
#[derive(Debug, Clone, PartialEq)]
pub struct MoeTransformer {
    pub config: MoEConfig,
    pub embed: Linear,
    /// Learned positional table, row-major (max_positions, embed_dim).
    pub positions: Vec<f64>,
    pub layers: Vec<Layer>,
    pub final_ln: LayerNorm,
    pub head_continuous: Linear,
    pub head_binary: Linear,
    continuous_idx: Vec<usize>,
    binary_idx: Vec<usize>,
}

/// Routing decisions of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerRoute {
    /// Chosen expert per position.
    pub expert: Vec<usize>,
    /// Router probabilities per position.
    pub probs: Vec<Vec<f64>>,
}

impl LayerRoute {
    /// Number of experts activated at `position` (always one under top-1).
    pub fn active_count(&self, position: usize) -> usize {
        usize::from(self.expert.get(position).is_some())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForwardOutput {
    pub continuous: Vec<Vec<f64>>,
    pub binary_logits: Vec<Vec<f64>>,
    pub routes: Vec<LayerRoute>,
}

impl ForwardOutput {
    pub fn len(&self) -> usize {
        self.continuous.len()
    }

    pub fn is_empty(&self) -> bool {
        self.continuous.is_empty()
    }

    /// Router statistics pooled over layers and positions.
    pub fn router_stats(&self, n_experts: usize) -> RouterStats {
        let probs: Vec<Vec<f64>> = self
            .routes
            .iter()
            .flat_map(|r| r.probs.iter().cloned())
            .collect();
        RouterStats::from_probs(&probs, n_experts)
    }
}

pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + erf(x / std::f64::consts::SQRT_2))
}

impl MoeTransformer {
    /// All-zero weights with identity layer norms.
    pub fn zeros(config: MoEConfig, schema: &FeatureSchema) -> Result<Self> {
        config.validate()?;
        check_schema(&config, schema)?;
        let d = config.embed_dim;
        let layers = (0..config.n_layers)
            .map(|_| Layer {
                ln1: LayerNorm::identity(d),
                q: Linear::zeros(d, d),
                k: Linear::zeros(d, d),
                v: Linear::zeros(d, d),
                o: Linear::zeros(d, d),
                ln2: LayerNorm::identity(d),
                router: Linear::zeros(config.n_experts, d),
                experts: (0..config.n_experts)
                    .map(|_| Expert {
                        up: Linear::zeros(config.ffn_dim, d),
                        down: Linear::zeros(d, config.ffn_dim),
                    })
                    .collect(),
            })
            .collect();
        Ok(Self {
            embed: Linear::zeros(d, config.input_dim),
            positions: vec![0.0; config.max_positions * d],
            layers,
            final_ln: LayerNorm::identity(d),
            head_continuous: Linear::zeros(config.n_continuous, d),
            head_binary: Linear::zeros(config.n_binary, d),
            continuous_idx: schema.continuous_indices(),
            binary_idx: schema.binary_indices(),
            config,
        })
    }

    /// Scaled-normal initialisation from a seed.
    pub fn random(config: MoEConfig, schema: &FeatureSchema, seed: u64) -> Result<Self> {
        let mut m = Self::zeros(config, schema)?;
        let mut r = rng::seeded(seed);
        let c = m.config.clone();
        let d = c.embed_dim;
        m.embed = Linear::random(d, c.input_dim, &mut r);
        for p in m.positions.iter_mut() {
            *p = 0.02 * r.random_range(-1.0..1.0);
        }
        for layer in m.layers.iter_mut() {
            layer.q = Linear::random(d, d, &mut r);
            layer.k = Linear::random(d, d, &mut r);
            layer.v = Linear::random(d, d, &mut r);
            layer.o = Linear::random(d, d, &mut r);
            layer.router = Linear::random(c.n_experts, d, &mut r);
            for e in layer.experts.iter_mut() {
                e.up = Linear::random(c.ffn_dim, d, &mut r);
                e.down = Linear::random(d, c.ffn_dim, &mut r);
            }
        }
        m.head_continuous = Linear::random(c.n_continuous, d, &mut r);
        m.head_binary = Linear::random(c.n_binary, d, &mut r);
        Ok(m)
    }

    /// Forward pass over model-input rows, one per position.
    pub fn forward_rows(&self, rows: &[Vec<f64>]) -> Result<ForwardOutput> {
        let c = &self.config;
        let d = c.embed_dim;
        if rows.is_empty() {
            return Err(Error::InvalidInput("empty history".into()));
        }
        if rows.len() > c.max_positions {
            return Err(Error::InvalidInput(format!(
                "history of {} visits exceeds max_positions {}",
                rows.len(),
                c.max_positions
            )));
        }
        for row in rows {
            crate::error::check_len("transformer input", c.input_dim, row.len())?;
            if row.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("transformer input"));
            }
        }
        let mut h: Vec<Vec<f64>> = rows
            .iter()
            .enumerate()
            .map(|(t, x)| {
                let mut e = self.embed.apply(x);
                for (v, p) in e.iter_mut().zip(&self.positions[t * d..(t + 1) * d]) {
                    *v += p;
                }
                e
            })
            .collect();
        let mut routes = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            attention(layer, c, &mut h);
            routes.push(moe_block(layer, &mut h));
        }
        let mut continuous = Vec::with_capacity(h.len());
        let mut binary_logits = Vec::with_capacity(h.len());
        for x in &h {
            let n = self.final_ln.apply(x);
            continuous.push(self.head_continuous.apply(&n));
            binary_logits.push(self.head_binary.apply(&n));
        }
        Ok(ForwardOutput {
            continuous,
            binary_logits,
            routes,
        })
    }

    /// Merges one position's heads into a schema-ordered state; binary
    /// outputs are thresholded at probability 0.5.
    pub fn assemble_state(&self, continuous: &[f64], binary_logits: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.continuous_idx.len() + self.binary_idx.len()];
        for (&j, &v) in self.continuous_idx.iter().zip(continuous) {
            out[j] = v;
        }
        for (&j, &l) in self.binary_idx.iter().zip(binary_logits) {
            out[j] = if l >= 0.0 { 1.0 } else { 0.0 };
        }
        out
    }

    pub fn to_container(&self, schema: &FeatureSchema) -> TensorFile {
        let c = &self.config;
        let mut f = TensorFile::new(KIND, schema.fingerprint());
        f.meta = serde_json::json!({ "config": c });
        self.embed.store(&mut f, "embed");
        f.insert(
            "positions",
            Tensor::matrix(c.max_positions, c.embed_dim, self.positions.clone()).expect("shape"),
        );
        for (l, layer) in self.layers.iter().enumerate() {
            let p = format!("layer{l}");
            layer.ln1.store(&mut f, &format!("{p}.ln1"));
            layer.q.store(&mut f, &format!("{p}.attn.q"));
            layer.k.store(&mut f, &format!("{p}.attn.k"));
            layer.v.store(&mut f, &format!("{p}.attn.v"));
            layer.o.store(&mut f, &format!("{p}.attn.o"));
            layer.ln2.store(&mut f, &format!("{p}.ln2"));
            layer.router.store(&mut f, &format!("{p}.router"));
            for (e, ex) in layer.experts.iter().enumerate() {
                ex.up.store(&mut f, &format!("{p}.expert{e}.up"));
                ex.down.store(&mut f, &format!("{p}.expert{e}.down"));
            }
        }
        self.final_ln.store(&mut f, "final_ln");
        self.head_continuous.store(&mut f, "head.cont");
        self.head_binary.store(&mut f, "head.bin");
        f
    }

    pub fn from_container(f: &TensorFile, schema: &FeatureSchema) -> Result<Self> {
        f.expect_kind(KIND)?;
        let config: MoEConfig = serde_json::from_value(f.meta["config"].clone())?;
        let mut m = Self::zeros(config, schema)?;
        let c = m.config.clone();
        let d = c.embed_dim;
        m.embed = Linear::load(f, "embed", d, c.input_dim)?;
        m.positions = f.expect("positions", &[c.max_positions, d])?.to_vec();
        for (l, layer) in m.layers.iter_mut().enumerate() {
            let p = format!("layer{l}");
            layer.ln1 = LayerNorm::load(f, &format!("{p}.ln1"), d)?;
            layer.q = Linear::load(f, &format!("{p}.attn.q"), d, d)?;
            layer.k = Linear::load(f, &format!("{p}.attn.k"), d, d)?;
            layer.v = Linear::load(f, &format!("{p}.attn.v"), d, d)?;
            layer.o = Linear::load(f, &format!("{p}.attn.o"), d, d)?;
            layer.ln2 = LayerNorm::load(f, &format!("{p}.ln2"), d)?;
            layer.router = Linear::load(f, &format!("{p}.router"), c.n_experts, d)?;
            for (e, ex) in layer.experts.iter_mut().enumerate() {
                ex.up = Linear::load(f, &format!("{p}.expert{e}.up"), c.ffn_dim, d)?;
                ex.down = Linear::load(f, &format!("{p}.expert{e}.down"), d, c.ffn_dim)?;
            }
        }
        m.final_ln = LayerNorm::load(f, "final_ln", d)?;
        m.head_continuous = Linear::load(f, "head.cont", c.n_continuous, d)?;
        m.head_binary = Linear::load(f, "head.bin", c.n_binary, d)?;
        Ok(m)
    }
}

fn check_schema(config: &MoEConfig, schema: &FeatureSchema) -> Result<()> {
    crate::error::check_len(
        "transformer input_dim",
        schema.input_dim(),
        config.input_dim,
    )?;
    crate::error::check_len(
        "transformer continuous head",
        schema.continuous_indices().len(),
        config.n_continuous,
    )?;
    crate::error::check_len(
        "transformer binary head",
        schema.binary_indices().len(),
        config.n_binary,
    )
}

fn attention(layer: &Layer, c: &MoEConfig, h: &mut [Vec<f64>]) {
    let hd = c.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let normed: Vec<Vec<f64>> = h.iter().map(|x| layer.ln1.apply(x)).collect();
    let q: Vec<Vec<f64>> = normed.iter().map(|x| layer.q.apply(x)).collect();
    let k: Vec<Vec<f64>> = normed.iter().map(|x| layer.k.apply(x)).collect();
    let v: Vec<Vec<f64>> = normed.iter().map(|x| layer.v.apply(x)).collect();
    for t in 0..h.len() {
        let mut mixed = vec![0.0; c.embed_dim];
        for head in 0..c.n_heads {
            let r = head * hd..(head + 1) * hd;
            let mut scores: Vec<f64> = (0..=t)
                .map(|s| crate::math::dot(&q[t][r.clone()], &k[s][r.clone()]) * scale)
                .collect();
            softmax_in_place(&mut scores);
            for (s, w) in scores.iter().enumerate() {
                for (m, val) in mixed[r.clone()].iter_mut().zip(&v[s][r.clone()]) {
                    *m += w * val;
                }
            }
        }
        let out = layer.o.apply(&mixed);
        for (x, o) in h[t].iter_mut().zip(out) {
            *x += o;
        }
    }
}

fn moe_block(layer: &Layer, h: &mut [Vec<f64>]) -> LayerRoute {
    let mut expert = Vec::with_capacity(h.len());
    let mut probs = Vec::with_capacity(h.len());
    for x in h.iter_mut() {
        let n = layer.ln2.apply(x);
        let mut p = layer.router.apply(&n);
        let chosen = argmax(&p);
        softmax_in_place(&mut p);
        let ex = &layer.experts[chosen];
        let hidden: Vec<f64> = ex.up.apply(&n).into_iter().map(gelu).collect();
        let out = ex.down.apply(&hidden);
        for (v, o) in x.iter_mut().zip(out) {
            *v += p[chosen] * o;
        }
        expert.push(chosen);
        probs.push(p);
    }
    LayerRoute { expert, probs }
}

/// Runs the transformer over a z-scaled visit history.
pub fn moe_forward(history: &[Visit], w: &MoeTransformer) -> Result<ForwardOutput> {
    let rows = history
        .iter()
        .map(|v| {
            let mut row = Vec::with_capacity(w.config.input_dim);
            input_row(v, &mut row)?;
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    w.forward_rows(&rows)
}

impl Dynamics for MoeTransformer {
    fn predict_next(&self, history: &[Visit], _rng: &mut SimRng) -> Result<PatientState> {
        let out = moe_forward(history, self)?;
        let t = out.len() - 1;
        Ok(PatientState::zscaled(
            self.assemble_state(&out.continuous[t], &out.binary_logits[t]),
        ))
    }

    fn name(&self) -> &str {
        "moe_transformer"
    }
}
