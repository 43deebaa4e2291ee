//! Pre-norm vision transformer with an explicit backward pass down to every
//! block's attention probabilities.
//!
//! The layer layout follows CLIP's image tower: patch embedding, class token,
//! learned positions, `ln_pre`, residual blocks (`ln_1 → attention`,
//! `ln_2 → MLP`), `ln_post` on the class token and a bias-free output
//! projection. The same code backs the seeded mock adapter and weights loaded
//! from a checkpoint.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::PixelTensor;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, Matrix};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// tanh approximation of GELU
    Gelu,
    /// `x · σ(1.702x)`, as used by CLIP
    QuickGelu,
}

impl Activation {
    fn forward(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                0.5 * x * (1.0 + inner.tanh())
            }
            Activation::QuickGelu => x * crate::linalg::sigmoid(1.702 * x),
        }
    }

    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Gelu => {
                let inner = GELU_C * (x + 0.044715 * x * x * x);
                let t = inner.tanh();
                let dinner = GELU_C * (1.0 + 3.0 * 0.044715 * x * x);
                0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
            }
            Activation::QuickGelu => {
                let s = crate::linalg::sigmoid(1.702 * x);
                s + 1.702 * x * s * (1.0 - s)
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

/// Attention probabilities (or their gradients) for all heads of one block,
/// stored `heads × tokens × tokens`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadMaps {
    pub heads: usize,
    pub tokens: usize,
    pub data: Vec<f64>,
}

impl HeadMaps {
    pub fn zeros(heads: usize, tokens: usize) -> Self {
        Self {
            heads,
            tokens,
            data: vec![0.0; heads * tokens * tokens],
        }
    }

    pub fn from_vec(heads: usize, tokens: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != heads * tokens * tokens {
            return Err(Error::Argument(format!(
                "attention buffer has {} values, expected {heads}×{tokens}×{tokens}",
                data.len()
            )));
        }
        Ok(Self { heads, tokens, data })
    }

    pub fn head(&self, h: usize) -> &[f64] {
        let n2 = self.tokens * self.tokens;
        &self.data[h * n2..(h + 1) * n2]
    }

    fn head_mut(&mut self, h: usize) -> &mut [f64] {
        let n2 = self.tokens * self.tokens;
        &mut self.data[h * n2..(h + 1) * n2]
    }

    pub fn get(&self, h: usize, i: usize, j: usize) -> f64 {
        self.data[(h * self.tokens + i) * self.tokens + j]
    }

    pub fn set(&mut self, h: usize, i: usize, j: usize, v: f64) {
        self.data[(h * self.tokens + i) * self.tokens + j] = v;
    }

    pub fn same_shape(&self, other: &HeadMaps) -> bool {
        self.heads == other.heads && self.tokens == other.tokens
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    pub width: usize,
    pub heads: usize,
    pub layers: usize,
    pub mlp_width: usize,
    pub out_dim: usize,
    pub activation: Activation,
    pub ln_eps: f64,
}

impl TransformerConfig {
    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Argument(format!(
                "width {} must be a positive multiple of heads {}",
                self.width, self.heads
            )));
        }
        if self.layers == 0 || self.mlp_width == 0 || self.out_dim == 0 {
            return Err(Error::Argument(
                "layers, mlp width and output dim must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerNorm {
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub eps: f64,
}

impl LayerNorm {
    pub fn identity(width: usize, eps: f64) -> Self {
        Self {
            gamma: vec![1.0; width],
            beta: vec![0.0; width],
            eps,
        }
    }

    /// Returns `(output, normalized input, 1/σ)`.
    fn forward_row(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>, f64) {
        let n = x.len() as f64;
        let mean = x.iter().sum::<f64>() / n;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let rstd = 1.0 / (var + self.eps).sqrt();
        let xhat: Vec<f64> = x.iter().map(|v| (v - mean) * rstd).collect();
        let y = xhat
            .iter()
            .zip(self.gamma.iter().zip(&self.beta))
            .map(|(h, (g, b))| h * g + b)
            .collect();
        (y, xhat, rstd)
    }

    fn backward_row(&self, xhat: &[f64], rstd: f64, dy: &[f64]) -> Vec<f64> {
        let n = xhat.len() as f64;
        let dxhat: Vec<f64> = dy.iter().zip(&self.gamma).map(|(d, g)| d * g).collect();
        let mean_d = dxhat.iter().sum::<f64>() / n;
        let mean_dx = dot(&dxhat, xhat) / n;
        dxhat
            .iter()
            .zip(xhat)
            .map(|(d, h)| rstd * (d - mean_d - h * mean_dx))
            .collect()
    }

    fn forward(&self, x: &Matrix) -> NormCache {
        let mut out = Matrix::zeros(x.rows, x.cols);
        let mut xhat = Matrix::zeros(x.rows, x.cols);
        let mut rstd = Vec::with_capacity(x.rows);
        for i in 0..x.rows {
            let (y, h, r) = self.forward_row(x.row(i));
            out.row_mut(i).copy_from_slice(&y);
            xhat.row_mut(i).copy_from_slice(&h);
            rstd.push(r);
        }
        NormCache { out, xhat, rstd }
    }

    fn backward(&self, cache: &NormCache, dy: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(dy.rows, dy.cols);
        for i in 0..dy.rows {
            if dy.row(i).iter().all(|&v| v == 0.0) {
                continue;
            }
            let g = self.backward_row(cache.xhat.row(i), cache.rstd[i], dy.row(i));
            dx.row_mut(i).copy_from_slice(&g);
        }
        dx
    }

    fn feed(&self, h: &mut Sha256) {
        feed_values(h, &self.gamma);
        feed_values(h, &self.beta);
    }
}

struct NormCache {
    out: Matrix,
    xhat: Matrix,
    rstd: Vec<f64>,
}

/// Affine map `y = W·x + b` with `W` stored `out × in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

impl Linear {
    pub fn new(weight: Matrix, bias: Vec<f64>) -> Self {
        assert_eq!(weight.rows, bias.len(), "bias length");
        Self { weight, bias }
    }

    /// Applies the map to every row of `x`.
    fn forward(&self, x: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(x.rows, self.weight.rows);
        for i in 0..x.rows {
            let xi = x.row(i);
            let row = out.row_mut(i);
            for (o, r) in row.iter_mut().enumerate() {
                *r = dot(self.weight.row(o), xi) + self.bias[o];
            }
        }
        out
    }

    /// Gradient with respect to the input rows.
    fn backward_input(&self, dy: &Matrix) -> Matrix {
        let mut dx = Matrix::zeros(dy.rows, self.weight.cols);
        for i in 0..dy.rows {
            let out = dx.row_mut(i);
            for (o, &g) in dy.row(i).iter().enumerate() {
                if g != 0.0 {
                    axpy(g, self.weight.row(o), out);
                }
            }
        }
        dx
    }

    fn feed(&self, h: &mut Sha256) {
        feed_values(h, &self.weight.data);
        feed_values(h, &self.bias);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block {
    pub ln_1: LayerNorm,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub out: Linear,
    pub ln_2: LayerNorm,
    pub fc_1: Linear,
    pub fc_2: Linear,
}

struct BlockCache {
    input: Matrix,
    norm_1: NormCache,
    q: Matrix,
    k: Matrix,
    v: Matrix,
    attn: HeadMaps,
    norm_2: NormCache,
    pre_act: Matrix,
}

/// Forward pass state kept for the backward pass.
pub struct ForwardTrace {
    blocks: Vec<BlockCache>,
    post_norm: NormCache,
    pub output: Vec<f64>,
}

impl ForwardTrace {
    /// Attention probabilities of every block, first block first.
    pub fn attention(&self) -> Vec<HeadMaps> {
        self.blocks.iter().map(|b| b.attn.clone()).collect()
    }
}

/// Gradients from one backward pass.
pub struct BackwardTrace {
    /// `∂target/∂A` per block, first block first. Blocks the pass did not
    /// reach (see [`Transformer::backward`]) are absent.
    pub attention_grads: Vec<HeadMaps>,
    /// `∂target/∂tokens` for the transformer input, when the pass went all the way.
    pub input_grad: Option<Matrix>,
}

/// Residual transformer stack acting on token matrices (`tokens × width`).
#[derive(Debug, Clone, PartialEq)]
pub struct Transformer {
    pub config: TransformerConfig,
    pub blocks: Vec<Block>,
    pub ln_post: LayerNorm,
    /// `out_dim × width`
    pub proj: Matrix,
}

impl Transformer {
    pub fn new(config: TransformerConfig, blocks: Vec<Block>, ln_post: LayerNorm, proj: Matrix) -> Result<Self> {
        config.validate()?;
        if blocks.len() != config.layers {
            return Err(Error::Argument(format!(
                "{} blocks given for {} layers",
                blocks.len(),
                config.layers
            )));
        }
        if proj.rows != config.out_dim || proj.cols != config.width {
            return Err(Error::Argument(format!(
                "projection is {}×{}, expected {}×{}",
                proj.rows, proj.cols, config.out_dim, config.width
            )));
        }
        for (i, b) in blocks.iter().enumerate() {
            let w = config.width;
            let shapes = [
                (&b.q.weight, w, w),
                (&b.k.weight, w, w),
                (&b.v.weight, w, w),
                (&b.out.weight, w, w),
                (&b.fc_1.weight, config.mlp_width, w),
                (&b.fc_2.weight, w, config.mlp_width),
            ];
            if shapes.iter().any(|(m, r, c)| m.rows != *r || m.cols != *c) {
                return Err(Error::Argument(format!("block {i} has mis-shaped weights")));
            }
        }
        Ok(Self {
            config,
            blocks,
            ln_post,
            proj,
        })
    }

    /// Seeded random weights, scaled so activations stay O(1).
    pub fn seeded(config: TransformerConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let w = config.width;
        let m = config.mlp_width;
        let mut blocks = Vec::with_capacity(config.layers);
        for _ in 0..config.layers {
            blocks.push(Block {
                ln_1: LayerNorm::identity(w, config.ln_eps),
                q: random_linear(&mut rng, w, w, 1.5),
                k: random_linear(&mut rng, w, w, 1.5),
                v: random_linear(&mut rng, w, w, 1.0),
                out: random_linear(&mut rng, w, w, 1.0),
                ln_2: LayerNorm::identity(w, config.ln_eps),
                fc_1: random_linear(&mut rng, m, w, 1.0),
                fc_2: random_linear(&mut rng, w, m, 1.0),
            });
        }
        let proj = random_matrix(&mut rng, config.out_dim, w, 1.0);
        Self::new(config, blocks, LayerNorm::identity(w, config.ln_eps), proj)
    }

    pub fn forward(&self, tokens: &Matrix) -> Result<ForwardTrace> {
        self.forward_impl(tokens, None)
    }

    /// Forward pass with block `block`'s attention probabilities replaced by
    /// `attn`; the replacement is used as given (no renormalization).
    pub fn forward_with_attention(&self, tokens: &Matrix, block: usize, attn: &HeadMaps) -> Result<Vec<f64>> {
        if block >= self.blocks.len() {
            return Err(Error::Argument(format!("block {block} out of range")));
        }
        Ok(self.forward_impl(tokens, Some((block, attn)))?.output)
    }

    fn forward_impl(&self, tokens: &Matrix, replace: Option<(usize, &HeadMaps)>) -> Result<ForwardTrace> {
        if tokens.cols != self.config.width || tokens.rows == 0 {
            return Err(Error::Argument(format!(
                "token matrix is {}×{}, expected n×{}",
                tokens.rows, tokens.cols, self.config.width
            )));
        }
        let mut x = tokens.clone();
        let mut caches = Vec::with_capacity(self.blocks.len());
        for (bi, block) in self.blocks.iter().enumerate() {
            let over = replace.filter(|(b, _)| *b == bi).map(|(_, a)| a);
            let (next, cache) = self.block_forward(block, x, over)?;
            caches.push(cache);
            x = next;
        }
        let cls = Matrix::from_vec(1, x.cols, x.row(0).to_vec());
        let post_norm = self.ln_post.forward(&cls);
        let output = self.proj.matvec(post_norm.out.row(0));
        Ok(ForwardTrace {
            blocks: caches,
            post_norm,
            output,
        })
    }

    fn block_forward(&self, block: &Block, x: Matrix, replace: Option<&HeadMaps>) -> Result<(Matrix, BlockCache)> {
        let n = x.rows;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();

        let norm_1 = block.ln_1.forward(&x);
        let q = block.q.forward(&norm_1.out);
        let k = block.k.forward(&norm_1.out);
        let v = block.v.forward(&norm_1.out);

        let attn = match replace {
            Some(a) => {
                if a.heads != heads || a.tokens != n {
                    return Err(Error::Argument(format!(
                        "replacement attention is {}×{n2}×{n2}, expected {heads}×{n}×{n}",
                        a.heads,
                        n2 = a.tokens
                    )));
                }
                a.clone()
            }
            None => {
                let mut attn = HeadMaps::zeros(heads, n);
                for h in 0..heads {
                    let off = h * dh;
                    let probs = attn.head_mut(h);
                    for i in 0..n {
                        let qi = &q.row(i)[off..off + dh];
                        let row = &mut probs[i * n..(i + 1) * n];
                        for (j, r) in row.iter_mut().enumerate() {
                            *r = dot(qi, &k.row(j)[off..off + dh]) * scale;
                        }
                        softmax_in_place(row);
                    }
                }
                attn
            }
        };

        let mut mixed = Matrix::zeros(n, self.config.width);
        for h in 0..heads {
            let off = h * dh;
            let probs = attn.head(h);
            for i in 0..n {
                let out = &mut mixed.row_mut(i)[off..off + dh];
                for j in 0..n {
                    axpy(probs[i * n + j], &v.row(j)[off..off + dh], out);
                }
            }
        }
        let attended = block.out.forward(&mixed);
        let mut x1 = x.clone();
        axpy(1.0, &attended.data, &mut x1.data);

        let norm_2 = block.ln_2.forward(&x1);
        let pre_act = block.fc_1.forward(&norm_2.out);
        let mut hidden = pre_act.clone();
        for v in &mut hidden.data {
            *v = self.config.activation.forward(*v);
        }
        let mlp = block.fc_2.forward(&hidden);
        let mut x2 = x1;
        axpy(1.0, &mlp.data, &mut x2.data);

        Ok((
            x2,
            BlockCache {
                input: x,
                norm_1,
                q,
                k,
                v,
                attn,
                norm_2,
                pre_act,
            },
        ))
    }

    /// Backpropagates `grad_output = ∂target/∂output` and returns attention
    /// gradients for the last `depth` blocks (all blocks when `depth` is `None`).
    pub fn backward(&self, trace: &ForwardTrace, grad_output: &[f64], depth: Option<usize>) -> Result<BackwardTrace> {
        if grad_output.len() != self.config.out_dim {
            return Err(Error::Argument(format!(
                "output gradient has length {}, expected {}",
                grad_output.len(),
                self.config.out_dim
            )));
        }
        let layers = self.blocks.len();
        let depth = depth.unwrap_or(layers).clamp(1, layers);
        let n = trace.blocks[0].input.rows;

        let d_post = self.proj.matvec_t(grad_output);
        let d_cls = self
            .ln_post
            .backward(&trace.post_norm, &Matrix::from_vec(1, d_post.len(), d_post));
        let mut dx = Matrix::zeros(n, self.config.width);
        dx.row_mut(0).copy_from_slice(d_cls.row(0));

        let mut grads = Vec::with_capacity(depth);
        for bi in (layers - depth..layers).rev() {
            let (d_in, d_attn) = self.block_backward(&self.blocks[bi], &trace.blocks[bi], dx);
            grads.push(d_attn);
            dx = d_in;
        }
        grads.reverse();
        Ok(BackwardTrace {
            attention_grads: grads,
            input_grad: (depth == layers).then_some(dx),
        })
    }

    fn block_backward(&self, block: &Block, cache: &BlockCache, d_out: Matrix) -> (Matrix, HeadMaps) {
        let n = cache.input.rows;
        let heads = self.config.heads;
        let dh = self.config.head_dim();
        let scale = 1.0 / (dh as f64).sqrt();
        let act = self.config.activation;

        // MLP branch
        let d_hidden = block.fc_2.backward_input(&d_out);
        let mut d_pre = d_hidden;
        for (d, &u) in d_pre.data.iter_mut().zip(&cache.pre_act.data) {
            *d *= act.derivative(u);
        }
        let d_norm_2 = block.fc_1.backward_input(&d_pre);
        let mut d_x1 = d_out;
        axpy(1.0, &block.ln_2.backward(&cache.norm_2, &d_norm_2).data, &mut d_x1.data);

        // attention branch
        let d_mixed = block.out.backward_input(&d_x1);
        let mut d_attn = HeadMaps::zeros(heads, n);
        let mut dq = Matrix::zeros(n, self.config.width);
        let mut dk = Matrix::zeros(n, self.config.width);
        let mut dv = Matrix::zeros(n, self.config.width);
        for h in 0..heads {
            let off = h * dh;
            let probs = cache.attn.head(h);
            let grads = d_attn.head_mut(h);
            for i in 0..n {
                let dmi = &d_mixed.row(i)[off..off + dh];
                for j in 0..n {
                    grads[i * n + j] = dot(dmi, &cache.v.row(j)[off..off + dh]);
                    axpy(probs[i * n + j], dmi, &mut dv.row_mut(j)[off..off + dh]);
                }
            }
            // softmax backward, then the scaled dot products
            for i in 0..n {
                let a = &probs[i * n..(i + 1) * n];
                let g = &grads[i * n..(i + 1) * n];
                let inner = dot(a, g);
                for j in 0..n {
                    let ds = a[j] * (g[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    let kj = cache.k.row(j)[off..off + dh].to_vec();
                    let qi = cache.q.row(i)[off..off + dh].to_vec();
                    axpy(ds, &kj, &mut dq.row_mut(i)[off..off + dh]);
                    axpy(ds, &qi, &mut dk.row_mut(j)[off..off + dh]);
                }
            }
        }
        let mut d_norm_1 = block.q.backward_input(&dq);
        axpy(1.0, &block.k.backward_input(&dk).data, &mut d_norm_1.data);
        axpy(1.0, &block.v.backward_input(&dv).data, &mut d_norm_1.data);
        let mut d_in = d_x1;
        axpy(1.0, &block.ln_1.backward(&cache.norm_1, &d_norm_1).data, &mut d_in.data);
        (d_in, d_attn)
    }

    fn feed(&self, h: &mut Sha256) {
        for b in &self.blocks {
            b.ln_1.feed(h);
            b.q.feed(h);
            b.k.feed(h);
            b.v.feed(h);
            b.out.feed(h);
            b.ln_2.feed(h);
            b.fc_1.feed(h);
            b.fc_2.feed(h);
        }
        self.ln_post.feed(h);
        feed_values(h, &self.proj.data);
    }
}

/// Patch-embedding front end plus [`Transformer`].
#[derive(Debug, Clone, PartialEq)]
pub struct VisionTransformer {
    pub image_size: usize,
    pub patch_size: usize,
    /// `width × (3·patch²)`, input laid out `(channel, row, col)` per patch
    pub patch_embed: Matrix,
    pub class_embedding: Vec<f64>,
    /// `(k²+1) × width`
    pub positions: Matrix,
    pub ln_pre: LayerNorm,
    pub transformer: Transformer,
}

impl VisionTransformer {
    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn tokens(&self) -> usize {
        self.grid() * self.grid() + 1
    }

    pub fn seeded(image_size: usize, patch_size: usize, config: TransformerConfig, seed: u64) -> Result<Self> {
        if patch_size == 0 || !image_size.is_multiple_of(patch_size) {
            return Err(Error::Argument(format!(
                "image size {image_size} is not a multiple of patch size {patch_size}"
            )));
        }
        let transformer = Transformer::seeded(config, seed)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(0x5eed));
        let w = config.width;
        let fan_in = 3 * patch_size * patch_size;
        let grid = image_size / patch_size;
        let patch_embed = random_matrix(&mut rng, w, fan_in, 1.0);
        let class_embedding = random_matrix(&mut rng, 1, w, 1.0).data;
        let positions = random_matrix(&mut rng, grid * grid + 1, w, 1.0).scaled(0.5);
        Ok(Self {
            image_size,
            patch_size,
            patch_embed,
            class_embedding,
            positions,
            ln_pre: LayerNorm::identity(w, config.ln_eps),
            transformer,
        })
    }

    /// Class token followed by one token per patch, row-major over the grid.
    pub fn embed(&self, pixels: &PixelTensor) -> Result<Matrix> {
        if pixels.size != self.image_size {
            return Err(Error::Argument(format!(
                "pixel tensor is {0}×{0}, encoder expects {1}×{1}",
                pixels.size, self.image_size
            )));
        }
        let p = self.patch_size;
        let grid = self.grid();
        let width = self.transformer.config.width;
        let mut tokens = Matrix::zeros(grid * grid + 1, width);
        tokens.row_mut(0).copy_from_slice(&self.class_embedding);
        let mut patch = vec![0.0; 3 * p * p];
        for gy in 0..grid {
            for gx in 0..grid {
                for c in 0..3 {
                    for py in 0..p {
                        for px in 0..p {
                            let v = pixels.pixel(gy * p + py, gx * p + px)[c];
                            patch[(c * p + py) * p + px] = v as f64;
                        }
                    }
                }
                let row = tokens.row_mut(1 + gy * grid + gx);
                for (o, r) in row.iter_mut().enumerate() {
                    *r = dot(self.patch_embed.row(o), &patch);
                }
            }
        }
        axpy(1.0, &self.positions.data, &mut tokens.data);
        let normed = self.ln_pre.forward(&tokens);
        Ok(normed.out)
    }

    pub fn forward(&self, pixels: &PixelTensor) -> Result<ForwardTrace> {
        self.transformer.forward(&self.embed(pixels)?)
    }

    /// SHA-256 over every parameter, in a fixed order.
    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        h.update((self.image_size as u64).to_le_bytes());
        h.update((self.patch_size as u64).to_le_bytes());
        feed_values(&mut h, &self.patch_embed.data);
        feed_values(&mut h, &self.class_embedding);
        feed_values(&mut h, &self.positions.data);
        self.ln_pre.feed(&mut h);
        self.transformer.feed(&mut h);
        hex::encode(h.finalize())
    }
}

fn feed_values(h: &mut Sha256, values: &[f64]) {
    for v in values {
        h.update(v.to_le_bytes());
    }
}

fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize, gain: f64) -> Matrix {
    let normal = Normal::new(0.0, gain / (cols as f64).sqrt()).expect("valid std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| normal.sample(rng)).collect())
}

fn random_linear(rng: &mut ChaCha8Rng, out: usize, inp: usize, gain: f64) -> Linear {
    let weight = random_matrix(rng, out, inp, gain);
    let bias = Normal::new(0.0, 0.02).expect("valid std");
    Linear::new(weight, (0..out).map(|_| bias.sample(rng)).collect())
}
