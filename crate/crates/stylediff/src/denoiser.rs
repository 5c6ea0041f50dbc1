//! Fixed-weight transformer noise predictor.
//!
//! The network is seeded, frozen, and never trained: every acceptance check
//! downstream is an invariance or oracle argument, so all that matters here
//! is that the forward pass is deterministic, genuinely timestep-dependent,
//! and exposes its self-attention through hook points. A spectrally scaled
//! linear map ([`LinearDenoiserWeights`]) doubles as the ground-truth model
//! for the inversion fixed-point analysis.

use std::fmt;

use crate::error::{Error, Result};
use crate::style::dfca;
use crate::tensor::{fnv1a64, randn, SeededRng, Tensor};

/// Which section of the denoiser a transformer block sits in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BlockPath {
    Down,
    Mid,
    Up,
}

/// Identifies one transformer block; indices are 1-based within their path.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BlockId {
    pub path: BlockPath,
    pub index: usize,
}

impl BlockId {
    pub fn down(index: usize) -> Self {
        BlockId {
            path: BlockPath::Down,
            index,
        }
    }

    pub fn mid(index: usize) -> Self {
        BlockId {
            path: BlockPath::Mid,
            index,
        }
    }

    pub fn up(index: usize) -> Self {
        BlockId {
            path: BlockPath::Up,
            index,
        }
    }
}

impl fmt::Display for BlockId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let path = match self.path {
            BlockPath::Down => "down",
            BlockPath::Mid => "mid",
            BlockPath::Up => "up",
        };
        write!(f, "{path}-{}", self.index)
    }
}

/// Architecture hyperparameters. The six up blocks are load-bearing (style
/// injection sweeps address them); everything else is minimal.
#[derive(Clone, Copy, Debug)]
pub struct ArchConfig {
    pub in_channels: usize,
    pub width: usize,
    pub heads: usize,
    pub down_blocks: usize,
    pub mid_blocks: usize,
    pub up_blocks: usize,
    /// Width of context tokens (text and image streams).
    pub ctx_dim: usize,
    /// Number of text tokens produced per prompt.
    pub text_tokens: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            in_channels: 48,
            width: 64,
            heads: 4,
            down_blocks: 2,
            mid_blocks: 1,
            up_blocks: 6,
            ctx_dim: 32,
            text_tokens: 4,
        }
    }
}

impl ArchConfig {
    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.heads == 0 || !self.width.is_multiple_of(self.heads) {
            return Err(Error::Parameter(format!(
                "width {} must be a positive multiple of head count {}",
                self.width, self.heads
            )));
        }
        if self.in_channels == 0 || self.ctx_dim == 0 || self.text_tokens == 0 {
            return Err(Error::Parameter("zero-sized architecture dimension".into()));
        }
        Ok(())
    }

    /// Every block id in forward order.
    pub fn block_ids(&self) -> Vec<BlockId> {
        let mut ids = Vec::new();
        for i in 1..=self.down_blocks {
            ids.push(BlockId::down(i));
        }
        for i in 1..=self.mid_blocks {
            ids.push(BlockId::mid(i));
        }
        for i in 1..=self.up_blocks {
            ids.push(BlockId::up(i));
        }
        ids
    }

    pub fn contains_block(&self, id: BlockId) -> bool {
        let max = match id.path {
            BlockPath::Down => self.down_blocks,
            BlockPath::Mid => self.mid_blocks,
            BlockPath::Up => self.up_blocks,
        };
        id.index >= 1 && id.index <= max
    }
}

/// Conditioning streams for one forward pass: text tokens always, plus
/// optional content-image and style-image token streams.
#[derive(Clone, Debug)]
pub struct ContextBundle {
    pub text_tokens: Tensor,
    pub content_tokens: Option<Tensor>,
    pub style_tokens: Option<Tensor>,
}

impl ContextBundle {
    /// Text-only bundle for a prompt. The prompt is hashed (FNV-1a) into an
    /// RNG seed and the tokens drawn from it, so equal prompts always yield
    /// equal tokens.
    pub fn from_prompt(prompt: &str, arch: &ArchConfig) -> Self {
        ContextBundle {
            text_tokens: text_tokens_for_prompt(prompt, arch.text_tokens, arch.ctx_dim),
            content_tokens: None,
            style_tokens: None,
        }
    }

    pub fn with_image_tokens(mut self, content: Tensor, style: Tensor) -> Self {
        self.content_tokens = Some(content);
        self.style_tokens = Some(style);
        self
    }

    /// The unconditional counterpart used by classifier-free guidance: empty
    /// prompt, no image streams, same token geometry.
    pub fn unconditional_like(&self) -> Self {
        let shape = self.text_tokens.shape();
        ContextBundle {
            text_tokens: text_tokens_for_prompt("", shape[0], shape[1]),
            content_tokens: None,
            style_tokens: None,
        }
    }

    /// Copy with the optional streams masked by the given switches.
    pub(crate) fn masked(&self, content: bool, style: bool) -> Self {
        ContextBundle {
            text_tokens: self.text_tokens.clone(),
            content_tokens: if content {
                self.content_tokens.clone()
            } else {
                None
            },
            style_tokens: if style {
                self.style_tokens.clone()
            } else {
                None
            },
        }
    }
}

/// Deterministic text-token stand-in: hash the prompt, seed the generator,
/// draw a fixed `tokens x dim` embedding.
pub fn text_tokens_for_prompt(prompt: &str, tokens: usize, dim: usize) -> Tensor {
    let mut rng = SeededRng::new(fnv1a64(prompt.as_bytes()));
    randn(&mut rng, &[tokens, dim])
}

/// Observer/editor of self-attention. Consulted with the block id, timestep
/// and the full-width Q, K, V; may return replacement (K, V) of identical
/// shapes. Q is observed, never mutated.
pub trait AttentionHook {
    fn on_self_attention(
        &self,
        block: BlockId,
        t: usize,
        q: &Tensor,
        k: &Tensor,
        v: &Tensor,
    ) -> Result<Option<(Tensor, Tensor)>>;
}

/// Anything that predicts noise for a latent at a timestep.
pub trait NoisePredictor {
    fn predict_noise(
        &self,
        x: &Tensor,
        t: usize,
        ctx: &ContextBundle,
        hooks: &[&dyn AttentionHook],
    ) -> Result<Tensor>;
}

/// Per-block weights: fused QKV projections for self-attention (the Q
/// projection is reused for cross-attention queries), the shared attention
/// output projection, and the MLP.
#[derive(Clone, Debug)]
pub struct BlockWeights {
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub w_o: Tensor,
    pub mlp_in: Tensor,
    pub mlp_out: Tensor,
}

/// Full seeded weight set. Two constructions with equal (arch, seed) are
/// bit-identical.
#[derive(Clone, Debug)]
pub struct DenoiserWeights {
    pub arch: ArchConfig,
    pub seed: u64,
    pub input_proj: Tensor,
    pub output_proj: Tensor,
    pub time_proj: Tensor,
    pub blocks: Vec<(BlockId, BlockWeights)>,
    /// Text-context key/value projections, shared across blocks.
    pub text_key_proj: Tensor,
    pub text_value_proj: Tensor,
    /// Image-context key/value projections, shared across blocks and between
    /// the content and style streams.
    pub image_key_proj: Tensor,
    pub image_value_proj: Tensor,
}

// Weight scales, chosen so the whole map stays comfortably contractive under
// the inversion fixed-point iteration (branch outputs stay well below the
// residual trunk).
const SCALE_QK: f64 = 1.0;
const SCALE_V: f64 = 0.5;
const SCALE_OUT: f64 = 0.5;
const SCALE_MLP_OUT: f64 = 0.5;

impl DenoiserWeights {
    pub fn seeded(arch: ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SeededRng::new(seed);
        let d = arch.width;
        let c = arch.in_channels;
        let dc = arch.ctx_dim;
        let gauss = |rng: &mut SeededRng, rows: usize, cols: usize, scale: f64| {
            randn(rng, &[rows, cols]).scale(scale / (rows as f64).sqrt())
        };
        let input_proj = gauss(&mut rng, c, d, 1.0);
        let time_proj = gauss(&mut rng, d, d, 1.0);
        let mut blocks = Vec::new();
        for id in arch.block_ids() {
            let bw = BlockWeights {
                w_q: gauss(&mut rng, d, d, SCALE_QK),
                w_k: gauss(&mut rng, d, d, SCALE_QK),
                w_v: gauss(&mut rng, d, d, SCALE_V),
                w_o: gauss(&mut rng, d, d, SCALE_OUT),
                mlp_in: gauss(&mut rng, d, 2 * d, 1.0),
                mlp_out: gauss(&mut rng, 2 * d, d, SCALE_MLP_OUT),
            };
            blocks.push((id, bw));
        }
        let text_key_proj = gauss(&mut rng, dc, d, SCALE_QK);
        let text_value_proj = gauss(&mut rng, dc, d, SCALE_V);
        let image_key_proj = gauss(&mut rng, dc, d, SCALE_QK);
        let image_value_proj = gauss(&mut rng, dc, d, SCALE_V);
        let output_proj = gauss(&mut rng, d, c, SCALE_OUT);
        Ok(DenoiserWeights {
            arch,
            seed,
            input_proj,
            output_proj,
            time_proj,
            blocks,
            text_key_proj,
            text_value_proj,
            image_key_proj,
            image_value_proj,
        })
    }

    /// Block id carrying the content-image cross-attention stream (the last
    /// downsampling block).
    pub fn content_stream_block(&self) -> BlockId {
        BlockId::down(self.arch.down_blocks)
    }

    /// Block id carrying the style-image cross-attention stream (the first
    /// upsampling block).
    pub fn style_stream_block(&self) -> BlockId {
        BlockId::up(1)
    }
}

impl NoisePredictor for DenoiserWeights {
    fn predict_noise(
        &self,
        x: &Tensor,
        t: usize,
        ctx: &ContextBundle,
        hooks: &[&dyn AttentionHook],
    ) -> Result<Tensor> {
        if x.shape().len() != 3 || x.shape()[0] != self.arch.in_channels {
            return Err(Error::dim(
                "predict_noise latent",
                x.shape(),
                &[self.arch.in_channels, 0, 0],
            ));
        }
        let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        let n = h * w;
        if n == 0 {
            return Err(Error::dim(
                "predict_noise empty latent",
                x.shape(),
                &[c, 1, 1],
            ));
        }

        // Latent -> tokens: one token per spatial site, channels as features.
        let mut tokens = Tensor::zeros(&[n, c]);
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    tokens.set2(y * w + xx, ch, x.at3(ch, y, xx));
                }
            }
        }
        let mut state = tokens.matmul(&self.input_proj)?;

        // Sinusoidal timestep embedding, projected and added to every token.
        let temb = time_embedding(t, self.arch.width).matmul(&self.time_proj)?;
        for row in 0..n {
            for col in 0..self.arch.width {
                let v = state.at2(row, col) + temb.at2(0, col);
                state.set2(row, col, v);
            }
        }

        let content_block = self.content_stream_block();
        let style_block = self.style_stream_block();
        for (id, bw) in &self.blocks {
            // Self-attention with hook consultation.
            let normed = rmsnorm_rows(&state);
            let q = normed.matmul(&bw.w_q)?;
            let mut k = normed.matmul(&bw.w_k)?;
            let mut v = normed.matmul(&bw.w_v)?;
            for hook in hooks {
                if let Some((rk, rv)) = hook.on_self_attention(*id, t, &q, &k, &v)? {
                    if rk.shape() != k.shape() || rv.shape() != v.shape() {
                        return Err(Error::HookContract(format!(
                            "hook at {id} t={t} returned K {:?} / V {:?}, expected K {:?} / V {:?}",
                            rk.shape(),
                            rv.shape(),
                            k.shape(),
                            v.shape()
                        )));
                    }
                    k = rk;
                    v = rv;
                }
            }
            let attn = multihead_attention(&q, &k, &v, self.arch.heads)?.matmul(&bw.w_o)?;
            state = state.add(&attn)?;

            // Cross-attention: text everywhere, image streams at their
            // dedicated blocks only.
            let normed = rmsnorm_rows(&state);
            let qx = normed.matmul(&bw.w_q)?;
            let block_ctx = ctx.masked(*id == content_block, *id == style_block);
            let cross = dfca(&qx, &block_ctx, self)?;
            state = state.add(&cross)?;

            // MLP.
            let normed = rmsnorm_rows(&state);
            let mlp = normed
                .matmul(&bw.mlp_in)?
                .map(f64::tanh)
                .matmul(&bw.mlp_out)?;
            state = state.add(&mlp)?;
        }

        let out_tokens = state.matmul(&self.output_proj)?;
        let mut out = Tensor::zeros(&[c, h, w]);
        for ch in 0..c {
            for y in 0..h {
                for xx in 0..w {
                    out.set3(ch, y, xx, out_tokens.at2(y * w + xx, ch));
                }
            }
        }
        Ok(out)
    }
}

/// Classifier-free guidance: `eps_uncond + s * (eps_cond - eps_uncond)`.
/// The s = 0 and s = 1 endpoints return the corresponding input exactly.
pub fn cfg_combine(eps_uncond: &Tensor, eps_cond: &Tensor, s: f64) -> Result<Tensor> {
    if eps_uncond.shape() != eps_cond.shape() {
        return Err(Error::dim(
            "cfg_combine",
            eps_uncond.shape(),
            eps_cond.shape(),
        ));
    }
    if s == 0.0 {
        return Ok(eps_uncond.clone());
    }
    if s == 1.0 {
        return Ok(eps_cond.clone());
    }
    eps_uncond.add(&eps_cond.sub(eps_uncond)?.scale(s))
}

/// Analytic stand-in for the noise predictor: `eps = A vec(x)` with the
/// spectral norm of A scaled to an exact target. Timestep, context and hooks
/// are ignored, which is what makes the inversion fixed point solvable in
/// closed form.
#[derive(Clone, Debug)]
pub struct LinearDenoiserWeights {
    matrix: Tensor,
    seed: u64,
}

impl LinearDenoiserWeights {
    pub fn seeded(dim: usize, spectral_norm: f64, seed: u64) -> Result<Self> {
        if dim == 0 || spectral_norm <= 0.0 {
            return Err(Error::Parameter(
                "linear denoiser needs dim >= 1 and spectral_norm > 0".into(),
            ));
        }
        let mut rng = SeededRng::new(seed);
        let raw = randn(&mut rng, &[dim, dim]);
        let est = estimate_spectral_norm(&raw);
        Ok(LinearDenoiserWeights {
            matrix: raw.scale(spectral_norm / est),
            seed,
        })
    }

    pub fn matrix(&self) -> &Tensor {
        &self.matrix
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn dim(&self) -> usize {
        self.matrix.rows()
    }

    /// Power-iteration estimate of the spectral norm.
    pub fn spectral_norm_estimate(&self) -> f64 {
        estimate_spectral_norm(&self.matrix)
    }
}

impl NoisePredictor for LinearDenoiserWeights {
    fn predict_noise(
        &self,
        x: &Tensor,
        _t: usize,
        _ctx: &ContextBundle,
        _hooks: &[&dyn AttentionHook],
    ) -> Result<Tensor> {
        if x.len() != self.dim() {
            return Err(Error::dim(
                "linear denoiser input",
                x.shape(),
                &[self.dim()],
            ));
        }
        let y = self.matrix.matvec(x.data())?;
        Ok(Tensor::from_parts(x.shape().to_vec(), y))
    }
}

/// Power iteration on A^T A from a fixed start vector; deterministic.
fn estimate_spectral_norm(a: &Tensor) -> f64 {
    let n = a.cols();
    let mut v = vec![1.0 / (n as f64).sqrt(); n];
    let at = a.transpose().expect("square matrix");
    let mut sigma = 0.0f64;
    for _ in 0..500 {
        let av = a.matvec(&v).expect("dims");
        let atav = at.matvec(&av).expect("dims");
        let norm = atav.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm == 0.0 {
            return 0.0;
        }
        for (slot, val) in v.iter_mut().zip(atav.iter()) {
            *slot = val / norm;
        }
        let next = av.iter().map(|x| x * x).sum::<f64>().sqrt();
        if (next - sigma).abs() < 1e-10 * next.max(1.0) {
            sigma = next;
            break;
        }
        sigma = next;
    }
    sigma
}

/// Row-wise RMS normalization with a small epsilon; keeps token activations
/// on a fixed scale ahead of each attention/MLP branch.
fn rmsnorm_rows(x: &Tensor) -> Tensor {
    let (m, n) = (x.rows(), x.cols());
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let mut ms = 0.0f64;
        for j in 0..n {
            let v = x.at2(i, j);
            ms += v * v;
        }
        let denom = (ms / n as f64 + 1e-6).sqrt();
        for j in 0..n {
            out.set2(i, j, x.at2(i, j) / denom);
        }
    }
    out
}

/// Scaled dot-product attention split over `heads` equal column groups:
/// per head `Softmax(Q K^T / sqrt(d_head)) V`, concatenated back.
pub(crate) fn multihead_attention(
    q: &Tensor,
    k: &Tensor,
    v: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    let d = q.cols();
    if !d.is_multiple_of(heads) || k.cols() != d || v.cols() != d || k.rows() != v.rows() {
        return Err(Error::dim("attention dims", q.shape(), k.shape()));
    }
    let dh = d / heads;
    let n = q.rows();
    let scale = 1.0 / (dh as f64).sqrt();
    let mut out = Tensor::zeros(&[n, d]);
    for head in 0..heads {
        let lo = head * dh;
        let qh = col_slice(q, lo, lo + dh);
        let kh = col_slice(k, lo, lo + dh);
        let vh = col_slice(v, lo, lo + dh);
        let scores = qh.matmul(&kh.transpose()?)?.scale(scale);
        let weights = scores.softmax_rows()?;
        let ah = weights.matmul(&vh)?;
        for i in 0..n {
            for j in 0..dh {
                out.set2(i, lo + j, ah.at2(i, j));
            }
        }
    }
    Ok(out)
}

fn col_slice(t: &Tensor, lo: usize, hi: usize) -> Tensor {
    let (m, n) = (t.rows(), t.cols());
    debug_assert!(hi <= n);
    let mut out = Tensor::zeros(&[m, hi - lo]);
    for i in 0..m {
        for j in lo..hi {
            out.set2(i, j - lo, t.at2(i, j));
        }
    }
    out
}

/// Standard sinusoidal embedding of an integer timestep into `dim` features.
fn time_embedding(t: usize, dim: usize) -> Tensor {
    let mut out = Tensor::zeros(&[1, dim]);
    let half = dim / 2;
    for i in 0..half {
        let freq = (10000.0f64).powf(-(i as f64) / half as f64);
        let angle = t as f64 * freq;
        out.set2(0, 2 * i, angle.sin());
        out.set2(0, 2 * i + 1, angle.cos());
    }
    out
}
