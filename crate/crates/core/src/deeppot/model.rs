//! Model parameters: type embedding, embedding net, attention layers and fitting net.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::linalg;
use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DPConfig {
    pub n_types: usize,
    pub rc: f64,
    pub rcs: f64,
    pub n_max: usize,
    /// Type-embedding width.
    pub d_z: usize,
    pub embed_hidden: Vec<usize>,
    /// Embedding output width `M`.
    pub m: usize,
    /// Column count of the reduced embedding `G_r`.
    pub m_r: usize,
    /// Attention hidden width.
    pub d_a: usize,
    pub n_attn: usize,
    pub fit_hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for DPConfig {
    fn default() -> Self {
        DPConfig {
            n_types: 2,
            rc: 2.0,
            rcs: 1.5,
            n_max: 64,
            d_z: 4,
            embed_hidden: vec![16],
            m: 16,
            m_r: 4,
            d_a: 16,
            n_attn: 3,
            fit_hidden: vec![32, 32],
            seed: 1,
        }
    }
}

impl DPConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidInput(format!("model config: {m}")));
        if !(self.rcs > 0.0 && self.rcs < self.rc) {
            return bad("need 0 < rcs < rc");
        }
        if self.n_types == 0 || self.n_max == 0 || self.m == 0 || self.d_z == 0 {
            return bad("n_types, n_max, m and d_z must be positive");
        }
        if self.m_r == 0 || self.m_r > self.m {
            return bad("need 1 <= m_r <= m");
        }
        if self.n_attn > 0 && self.d_a == 0 {
            return bad("attention needs d_a > 0");
        }
        if self.embed_hidden.contains(&0) || self.fit_hidden.contains(&0) {
            return bad("hidden layer widths must be positive");
        }
        Ok(())
    }

    pub fn embed_input(&self) -> usize {
        1 + 2 * self.d_z
    }

    pub fn descriptor_len(&self) -> usize {
        self.m * self.m_r
    }
}

/// Fully connected layer, `y = x·W + b` with `W` stored `n_in × n_out` row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub n_in: usize,
    pub n_out: usize,
    pub w: Vec<f64>,
    pub b: Vec<f64>,
}

impl Dense {
    fn xavier(n_in: usize, n_out: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = (6.0 / (n_in + n_out) as f64).sqrt();
        Dense {
            n_in,
            n_out,
            w: (0..n_in * n_out).map(|_| rng.gen_range(-bound..bound)).collect(),
            b: vec![0.0; n_out],
        }
    }

    fn zeros(n_in: usize, n_out: usize) -> Self {
        Dense {
            n_in,
            n_out,
            w: vec![0.0; n_in * n_out],
            b: vec![0.0; n_out],
        }
    }
}

/// Multilayer perceptron with tanh on every layer, except a linear output layer
/// when `linear_output` is set.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub linear_output: bool,
}

/// Activations of a batched forward pass: `acts[0]` is the input, `acts[l+1]`
/// the output of layer `l`, all row-major with `rows` rows.
#[derive(Debug, Clone)]
pub struct MlpCache {
    pub rows: usize,
    pub acts: Vec<Vec<f64>>,
}

impl MlpCache {
    pub fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }
}

impl Mlp {
    fn new(sizes: &[usize], linear_output: bool, rng: &mut ChaCha8Rng) -> Self {
        Mlp {
            layers: sizes.windows(2).map(|w| Dense::xavier(w[0], w[1], rng)).collect(),
            linear_output,
        }
    }

    fn zeros_like(&self) -> Self {
        Mlp {
            layers: self.layers.iter().map(|l| Dense::zeros(l.n_in, l.n_out)).collect(),
            linear_output: self.linear_output,
        }
    }

    fn activated(&self, layer: usize) -> bool {
        !(self.linear_output && layer + 1 == self.layers.len())
    }

    pub fn forward(&self, input: Vec<f64>, rows: usize) -> MlpCache {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(input);
        for (l, layer) in self.layers.iter().enumerate() {
            let mut y = linalg::matmul(acts.last().unwrap(), &layer.w, rows, layer.n_in, layer.n_out);
            for row in y.chunks_exact_mut(layer.n_out) {
                for (v, b) in row.iter_mut().zip(&layer.b) {
                    *v += b;
                }
            }
            if self.activated(l) {
                y.iter_mut().for_each(|v| *v = v.tanh());
            }
            acts.push(y);
        }
        MlpCache { rows, acts }
    }

    /// Back-propagates `dy` (gradient w.r.t. the output) and returns the gradient
    /// w.r.t. the input. Parameter gradients are accumulated into `grad`.
    pub fn backward(&self, cache: &MlpCache, dy: Vec<f64>, mut grad: Option<&mut Mlp>) -> Vec<f64> {
        let rows = cache.rows;
        let mut dy = dy;
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            if self.activated(l) {
                for (d, y) in dy.iter_mut().zip(&cache.acts[l + 1]) {
                    *d *= 1.0 - y * y;
                }
            }
            if let Some(g) = grad.as_deref_mut() {
                let gl = &mut g.layers[l];
                linalg::matmul_tn_acc(&mut gl.w, &cache.acts[l], &dy, rows, layer.n_in, layer.n_out);
                for row in dy.chunks_exact(layer.n_out) {
                    for (gb, d) in gl.b.iter_mut().zip(row) {
                        *gb += d;
                    }
                }
            }
            dy = linalg::matmul_nt(&dy, &layer.w, rows, layer.n_out, layer.n_in);
        }
        dy
    }
}

/// One gated self-attention layer. `wq`, `wk`, `wv` are `M × d_a`, `wo` is `d_a × M`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttnLayer {
    pub wq: Vec<f64>,
    pub wk: Vec<f64>,
    pub wv: Vec<f64>,
    pub wo: Vec<f64>,
}

impl AttnLayer {
    fn xavier(m: usize, d_a: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut draw = |n_in: usize, n_out: usize| Dense::xavier(n_in, n_out, rng).w;
        AttnLayer {
            wq: draw(m, d_a),
            wk: draw(m, d_a),
            wv: draw(m, d_a),
            wo: draw(d_a, m),
        }
    }

    fn zeros(m: usize, d_a: usize) -> Self {
        AttnLayer {
            wq: vec![0.0; m * d_a],
            wk: vec![0.0; m * d_a],
            wv: vec![0.0; m * d_a],
            wo: vec![0.0; d_a * m],
        }
    }
}

/// Gate normalisation recorded in model files. Only one scheme exists: rows of
/// `R·Rᵀ` divided by `Σ_l s_l²`.
pub const GATE_NORM_S2: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct DPModel {
    pub config: DPConfig,
    /// `n_types × d_z`
    pub type_embed: Vec<f64>,
    pub embed: Mlp,
    pub attn: Vec<AttnLayer>,
    pub fit: Mlp,
    /// Descriptor standardisation, `D' = (D - fit_shift)·fit_scale`. Not trained.
    pub fit_shift: Vec<f64>,
    pub fit_scale: Vec<f64>,
}

impl DPModel {
    pub fn new(config: DPConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let bound = (6.0 / (config.n_types + config.d_z) as f64).sqrt();
        let type_embed = (0..config.n_types * config.d_z)
            .map(|_| rng.gen_range(-bound..bound))
            .collect();
        let mut embed_sizes = vec![config.embed_input()];
        embed_sizes.extend(&config.embed_hidden);
        embed_sizes.push(config.m);
        let embed = Mlp::new(&embed_sizes, false, &mut rng);
        let attn = (0..config.n_attn)
            .map(|_| AttnLayer::xavier(config.m, config.d_a, &mut rng))
            .collect();
        let mut fit_sizes = vec![config.descriptor_len()];
        fit_sizes.extend(&config.fit_hidden);
        fit_sizes.push(1);
        let fit = Mlp::new(&fit_sizes, true, &mut rng);
        let dlen = config.descriptor_len();
        Ok(DPModel {
            config,
            type_embed,
            embed,
            attn,
            fit,
            fit_shift: vec![0.0; dlen],
            fit_scale: vec![1.0; dlen],
        })
    }

    /// A model of the same shape with every tensor zero, used as a gradient buffer.
    pub fn zeros_like(&self) -> Self {
        DPModel {
            config: self.config.clone(),
            type_embed: vec![0.0; self.type_embed.len()],
            embed: self.embed.zeros_like(),
            attn: self
                .attn
                .iter()
                .map(|_| AttnLayer::zeros(self.config.m, self.config.d_a))
                .collect(),
            fit: self.fit.zeros_like(),
            fit_shift: vec![0.0; self.fit_shift.len()],
            fit_scale: vec![0.0; self.fit_scale.len()],
        }
    }

    /// Tensor shapes `(rows, cols)` in storage order, matching [`DPModel::tensors`].
    pub fn shapes(&self) -> Vec<(usize, usize)> {
        let c = &self.config;
        let mut out = vec![(c.n_types, c.d_z)];
        for l in &self.embed.layers {
            out.push((l.n_in, l.n_out));
            out.push((1, l.n_out));
        }
        for _ in &self.attn {
            out.extend([(c.m, c.d_a), (c.m, c.d_a), (c.m, c.d_a), (c.d_a, c.m)]);
        }
        for l in &self.fit.layers {
            out.push((l.n_in, l.n_out));
            out.push((1, l.n_out));
        }
        out.push((1, c.descriptor_len()));
        out.push((1, c.descriptor_len()));
        out
    }

    /// All tensors in storage order. The last two (descriptor standardisation)
    /// are not trainable.
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = vec![&self.type_embed];
        for l in &self.embed.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        for a in &self.attn {
            out.extend([&a.wq, &a.wk, &a.wv, &a.wo]);
        }
        for l in &self.fit.layers {
            out.push(&l.w);
            out.push(&l.b);
        }
        out.push(&self.fit_shift);
        out.push(&self.fit_scale);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out = vec![&mut self.type_embed];
        for l in &mut self.embed.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        for a in &mut self.attn {
            out.push(&mut a.wq);
            out.push(&mut a.wk);
            out.push(&mut a.wv);
            out.push(&mut a.wo);
        }
        for l in &mut self.fit.layers {
            out.push(&mut l.w);
            out.push(&mut l.b);
        }
        out.push(&mut self.fit_shift);
        out.push(&mut self.fit_scale);
        out
    }

    pub fn trainable_tensor_count(&self) -> usize {
        self.tensors().len() - 2
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors()[..self.trainable_tensor_count()].iter().map(|t| t.len()).sum()
    }

    /// Trainable parameters flattened in storage order.
    pub fn flat_params(&self) -> Vec<f64> {
        let n = self.trainable_tensor_count();
        self.tensors()[..n].iter().flat_map(|t| t.iter().copied()).collect()
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) {
        let n = self.trainable_tensor_count();
        let mut offset = 0;
        for t in self.tensors_mut().into_iter().take(n) {
            let len = t.len();
            t.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Bias of the final (linear) fitting layer, i.e. the per-atom energy offset.
    pub fn energy_bias_mut(&mut self) -> &mut f64 {
        &mut self.fit.layers.last_mut().unwrap().b[0]
    }

    pub fn type_embedding(&self, species: usize) -> &[f64] {
        let d = self.config.d_z;
        &self.type_embed[species * d..(species + 1) * d]
    }
}
