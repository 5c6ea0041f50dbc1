//! Style machinery: self-attention key/value capture and injection, adaptive
//! instance normalization (plain and content-aware), the seeded image
//! embedder, and the dual-feature cross-attention composition.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Mutex;

use crate::denoiser::{
    multihead_attention, ArchConfig, AttentionHook, BlockId, ContextBundle, DenoiserWeights,
};
use crate::error::{Error, Result};
use crate::tensor::{randn, SeededRng, Tensor};

/// Epsilon floor applied under the square root before any division by a
/// channel standard deviation; constant channels must not divide by zero.
const SIGMA_EPS: f64 = 1e-8;

/// Map `(block, timestep) -> (K, V)` recorded during one inversion; written
/// once, then read-only during sampling.
#[derive(Clone, Debug, Default)]
pub struct AttentionSnapshotStore {
    entries: BTreeMap<(BlockId, usize), (Tensor, Tensor)>,
}

impl AttentionSnapshotStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Records a snapshot; a second write to the same slot is a conflict.
    pub fn insert(&mut self, block: BlockId, t: usize, k: Tensor, v: Tensor) -> Result<()> {
        if k.shape()[0] != v.shape()[0] {
            return Err(Error::dim("snapshot token counts", k.shape(), v.shape()));
        }
        if self.entries.contains_key(&(block, t)) {
            return Err(Error::CaptureConflict { block, t });
        }
        self.entries.insert((block, t), (k, v));
        Ok(())
    }

    pub fn get(&self, block: BlockId, t: usize) -> Option<&(Tensor, Tensor)> {
        self.entries.get(&(block, t))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn keys(&self) -> impl Iterator<Item = &(BlockId, usize)> {
        self.entries.keys()
    }
}

/// Which self-attention blocks take part in capture/injection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InjectionConfig {
    blocks: BTreeSet<BlockId>,
}

impl Default for InjectionConfig {
    /// The default injection set: the 5th and 6th upsampling blocks.
    fn default() -> Self {
        InjectionConfig::up_blocks(&[5, 6])
    }
}

impl InjectionConfig {
    pub fn new(blocks: impl IntoIterator<Item = BlockId>) -> Self {
        InjectionConfig {
            blocks: blocks.into_iter().collect(),
        }
    }

    /// Injection set made of upsampling blocks by index.
    pub fn up_blocks(indices: &[usize]) -> Self {
        InjectionConfig::new(indices.iter().map(|&i| BlockId::up(i)))
    }

    pub fn empty() -> Self {
        InjectionConfig {
            blocks: BTreeSet::new(),
        }
    }

    pub fn contains(&self, block: BlockId) -> bool {
        self.blocks.contains(&block)
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = &BlockId> {
        self.blocks.iter()
    }

    /// All block ids must exist in the architecture.
    pub fn validate(&self, arch: &ArchConfig) -> Result<()> {
        for &b in &self.blocks {
            if !arch.contains_block(b) {
                return Err(Error::Parameter(format!(
                    "injection block {b} not present in architecture"
                )));
            }
        }
        Ok(())
    }
}

/// Hook that records (K, V) at watched blocks and passes everything through
/// unchanged, so the trajectory it observes is never perturbed.
pub struct CaptureHook {
    watch: InjectionConfig,
    store: Mutex<AttentionSnapshotStore>,
    log: Mutex<Vec<(BlockId, usize)>>,
}

impl CaptureHook {
    pub fn new(watch: InjectionConfig) -> Self {
        CaptureHook {
            watch,
            store: Mutex::new(AttentionSnapshotStore::new()),
            log: Mutex::new(Vec::new()),
        }
    }

    /// Consumes the hook and yields the recorded snapshots.
    pub fn into_store(self) -> AttentionSnapshotStore {
        self.store.into_inner().expect("capture store poisoned")
    }

    /// Every (block, t) this hook recorded, in capture order.
    pub fn capture_log(&self) -> Vec<(BlockId, usize)> {
        self.log.lock().expect("capture log poisoned").clone()
    }
}

impl AttentionHook for CaptureHook {
    fn on_self_attention(
        &self,
        block: BlockId,
        t: usize,
        _q: &Tensor,
        k: &Tensor,
        v: &Tensor,
    ) -> Result<Option<(Tensor, Tensor)>> {
        if self.watch.contains(block) {
            self.store.lock().expect("capture store poisoned").insert(
                block,
                t,
                k.clone(),
                v.clone(),
            )?;
            self.log
                .lock()
                .expect("capture log poisoned")
                .push((block, t));
        }
        Ok(None)
    }
}

/// Hook that substitutes stored (K, V) at the configured blocks, leaving the
/// live query untouched; everywhere else it passes through.
pub struct InjectionHook<'s> {
    store: &'s AttentionSnapshotStore,
    inject: InjectionConfig,
    log: Mutex<Vec<(BlockId, usize)>>,
}

impl<'s> InjectionHook<'s> {
    pub fn new(store: &'s AttentionSnapshotStore, inject: InjectionConfig) -> Self {
        InjectionHook {
            store,
            inject,
            log: Mutex::new(Vec::new()),
        }
    }

    /// Every (block, t) where this hook substituted a snapshot.
    pub fn fired_log(&self) -> Vec<(BlockId, usize)> {
        self.log.lock().expect("injection log poisoned").clone()
    }
}

impl AttentionHook for InjectionHook<'_> {
    fn on_self_attention(
        &self,
        block: BlockId,
        t: usize,
        _q: &Tensor,
        _k: &Tensor,
        _v: &Tensor,
    ) -> Result<Option<(Tensor, Tensor)>> {
        if !self.inject.contains(block) {
            return Ok(None);
        }
        let (k, v) = self
            .store
            .get(block, t)
            .ok_or(Error::InjectionMiss { block, t })?;
        self.log
            .lock()
            .expect("injection log poisoned")
            .push((block, t));
        Ok(Some((k.clone(), v.clone())))
    }
}

/// Weights for blending content and style channel statistics; the two
/// coefficients must sum to one.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CaAdainParams {
    pub alpha_c: f64,
    pub alpha_s: f64,
}

impl Default for CaAdainParams {
    fn default() -> Self {
        CaAdainParams {
            alpha_c: 0.4,
            alpha_s: 0.6,
        }
    }
}

impl CaAdainParams {
    pub fn new(alpha_c: f64, alpha_s: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha_c) || !(0.0..=1.0).contains(&alpha_s) {
            return Err(Error::Parameter(format!(
                "alpha_c={alpha_c} and alpha_s={alpha_s} must lie in [0, 1]"
            )));
        }
        if (alpha_c + alpha_s - 1.0).abs() > 1e-9 {
            return Err(Error::Parameter(format!(
                "alpha_c + alpha_s must equal 1, got {}",
                alpha_c + alpha_s
            )));
        }
        Ok(CaAdainParams { alpha_c, alpha_s })
    }

    pub fn from_alpha_c(alpha_c: f64) -> Result<Self> {
        Self::new(alpha_c, 1.0 - alpha_c)
    }
}

/// Floored channel moments: mean and `sqrt(var + eps)`.
fn floored_moments(x: &Tensor) -> Result<(Vec<f64>, Vec<f64>)> {
    let (mean, std) = x.channel_moments()?;
    let floored = std
        .data()
        .iter()
        .map(|s| (s * s + SIGMA_EPS).sqrt())
        .collect();
    Ok((mean.data().to_vec(), floored))
}

/// Re-standardizes `x` channel-wise to the target statistics.
fn moment_align(x: &Tensor, target_mean: &[f64], target_std: &[f64]) -> Result<Tensor> {
    let (mu_x, sd_x) = floored_moments(x)?;
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    let mut out = Tensor::zeros(x.shape());
    for ch in 0..c {
        let scale = target_std[ch] / sd_x[ch];
        let (mu, target_mu) = (mu_x[ch], target_mean[ch]);
        for y in 0..h {
            for xx in 0..w {
                out.set3(ch, y, xx, scale * (x.at3(ch, y, xx) - mu) + target_mu);
            }
        }
    }
    Ok(out)
}

/// Adaptive instance normalization: aligns the channel mean and standard
/// deviation of `x` with those of `y`.
pub fn adain(x: &Tensor, y: &Tensor) -> Result<Tensor> {
    if x.shape() != y.shape() {
        return Err(Error::dim("adain", x.shape(), y.shape()));
    }
    let (mu_y, sd_y) = floored_moments(y)?;
    moment_align(x, &mu_y, &sd_y)
}

/// Content-aware AdaIN: the target statistics are the convex blend
/// `alpha_s * style + alpha_c * content`. With `alpha_c = 1` the input is
/// returned unchanged; with `alpha_s = 1` this is exactly [`adain`].
pub fn ca_adain(x_c: &Tensor, x_s: &Tensor, p: &CaAdainParams) -> Result<Tensor> {
    if x_c.shape() != x_s.shape() {
        return Err(Error::dim("ca_adain", x_c.shape(), x_s.shape()));
    }
    if p.alpha_c == 1.0 {
        return Ok(x_c.clone());
    }
    let (mu_c, sd_c) = floored_moments(x_c)?;
    let (mu_s, sd_s) = floored_moments(x_s)?;
    let target_mu: Vec<f64> = mu_s
        .iter()
        .zip(mu_c.iter())
        .map(|(s, c)| p.alpha_s * s + p.alpha_c * c)
        .collect();
    let target_sd: Vec<f64> = sd_s
        .iter()
        .zip(sd_c.iter())
        .map(|(s, c)| p.alpha_s * s + p.alpha_c * c)
        .collect();
    moment_align(x_c, &target_mu, &target_sd)
}

/// Seeded stand-in for a pretrained image encoder: average-pool, flatten,
/// project to a fixed number of context tokens. Linear and bias-free.
#[derive(Clone, Debug)]
pub struct EmbedderWeights {
    pool: usize,
    tokens: usize,
    ctx_dim: usize,
    proj: Tensor,
    seed: u64,
}

impl EmbedderWeights {
    /// Builds weights for images of the given dimensions.
    pub fn seeded(
        pool: usize,
        h: usize,
        w: usize,
        tokens: usize,
        ctx_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        if pool == 0 || tokens == 0 || ctx_dim == 0 {
            return Err(Error::Parameter("embedder sizes must be positive".into()));
        }
        if !h.is_multiple_of(pool) || !w.is_multiple_of(pool) {
            return Err(Error::dim(
                "embedder pooling factor",
                &[3, h, w],
                &[3, pool, pool],
            ));
        }
        let in_dim = 3 * (h / pool) * (w / pool);
        let mut rng = SeededRng::new(seed);
        let proj = randn(&mut rng, &[tokens * ctx_dim, in_dim]).scale(1.0 / (in_dim as f64).sqrt());
        Ok(EmbedderWeights {
            pool,
            tokens,
            ctx_dim,
            proj,
            seed,
        })
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn projection(&self) -> &Tensor {
        &self.proj
    }

    pub fn pool(&self) -> usize {
        self.pool
    }

    /// Maps a `3 x H x W` image in [0, 1] to `tokens x ctx_dim` context
    /// tokens: rescale to [-1, 1], average-pool, flatten, project.
    pub fn extract_embedding(&self, img: &Tensor) -> Result<Tensor> {
        if img.shape().len() != 3 || img.shape()[0] != 3 {
            return Err(Error::dim(
                "extract_embedding image",
                img.shape(),
                &[3, 0, 0],
            ));
        }
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if h % self.pool != 0 || w % self.pool != 0 {
            return Err(Error::dim(
                "extract_embedding pooling",
                img.shape(),
                &[3, self.pool, self.pool],
            ));
        }
        let (gh, gw) = (h / self.pool, w / self.pool);
        let in_dim = 3 * gh * gw;
        if self.proj.cols() != in_dim {
            return Err(Error::dim(
                "extract_embedding projection",
                self.proj.shape(),
                &[self.tokens * self.ctx_dim, in_dim],
            ));
        }
        let mut pooled = vec![0.0f64; in_dim];
        let area = (self.pool * self.pool) as f64;
        for c in 0..3 {
            for gy in 0..gh {
                for gx in 0..gw {
                    let mut acc = 0.0f64;
                    for py in 0..self.pool {
                        for px in 0..self.pool {
                            acc += 2.0 * img.at3(c, gy * self.pool + py, gx * self.pool + px) - 1.0;
                        }
                    }
                    pooled[c * gh * gw + gy * gw + gx] = acc / area;
                }
            }
        }
        let flat = self.proj.matvec(&pooled)?;
        Ok(Tensor::from_parts(vec![self.tokens, self.ctx_dim], flat))
    }
}

/// Dual-feature cross-attention: one attention stream per context source
/// (text, content image, style image), each `Softmax(Q K^T / sqrt(d)) V`
/// over its own projected keys/values, summed. Absent optional streams
/// contribute exactly zero.
pub fn dfca(q: &Tensor, ctx: &ContextBundle, w: &DenoiserWeights) -> Result<Tensor> {
    let mut out = attention_stream(
        q,
        &ctx.text_tokens,
        &w.text_key_proj,
        &w.text_value_proj,
        w.arch.heads,
    )?;
    if let Some(content) = &ctx.content_tokens {
        let phi = attention_stream(
            q,
            content,
            &w.image_key_proj,
            &w.image_value_proj,
            w.arch.heads,
        )?;
        out = out.add(&phi)?;
    }
    if let Some(style) = &ctx.style_tokens {
        let phi = attention_stream(
            q,
            style,
            &w.image_key_proj,
            &w.image_value_proj,
            w.arch.heads,
        )?;
        out = out.add(&phi)?;
    }
    Ok(out)
}

fn attention_stream(
    q: &Tensor,
    tokens: &Tensor,
    key_proj: &Tensor,
    value_proj: &Tensor,
    heads: usize,
) -> Result<Tensor> {
    if tokens.shape().len() != 2 || tokens.cols() != key_proj.rows() {
        return Err(Error::dim(
            "context token width",
            tokens.shape(),
            key_proj.shape(),
        ));
    }
    let k = tokens.matmul(key_proj)?;
    let v = tokens.matmul(value_proj)?;
    multihead_attention(q, &k, &v, heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::randn;
    use proptest::prelude::*;

    fn rand3(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = SeededRng::new(seed);
        randn(&mut rng, shape)
    }

    #[test]
    fn store_rejects_duplicate_slot() {
        let mut store = AttentionSnapshotStore::new();
        let k = Tensor::zeros(&[2, 4]);
        let v = Tensor::zeros(&[2, 4]);
        store
            .insert(BlockId::up(5), 3, k.clone(), v.clone())
            .unwrap();
        let err = store.insert(BlockId::up(5), 3, k, v).unwrap_err();
        assert!(matches!(err, Error::CaptureConflict { .. }));
    }

    #[test]
    fn injection_missing_snapshot_names_the_pair() {
        let store = AttentionSnapshotStore::new();
        let hook = InjectionHook::new(&store, InjectionConfig::up_blocks(&[5]));
        let q = Tensor::zeros(&[2, 4]);
        let err = hook
            .on_self_attention(BlockId::up(5), 7, &q, &q, &q)
            .unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("up-5") && msg.contains("t=7"), "{msg}");
    }

    #[test]
    fn injection_passes_through_elsewhere() {
        let store = AttentionSnapshotStore::new();
        let hook = InjectionHook::new(&store, InjectionConfig::up_blocks(&[5]));
        let q = Tensor::zeros(&[2, 4]);
        let res = hook
            .on_self_attention(BlockId::down(1), 7, &q, &q, &q)
            .unwrap();
        assert!(res.is_none());
        assert!(hook.fired_log().is_empty());
    }

    #[test]
    fn adain_self_style_is_identity() {
        let x = rand3(1, &[3, 4, 4]);
        let out = adain(&x, &x).unwrap();
        assert!(out.linf_dist(&x) < 1e-5);
    }

    #[test]
    fn adain_matches_target_moments() {
        let x = rand3(2, &[3, 5, 5]);
        let y = rand3(3, &[3, 5, 5]).scale(2.0).map(|v| v + 1.0);
        let out = adain(&x, &y).unwrap();
        let (mu_o, sd_o) = out.channel_moments().unwrap();
        let (mu_y, sd_y) = y.channel_moments().unwrap();
        for c in 0..3 {
            assert!((mu_o.data()[c] - mu_y.data()[c]).abs() < 1e-5);
            assert!((sd_o.data()[c] - sd_y.data()[c]).abs() < 1e-5);
        }
    }

    #[test]
    fn adain_affine_hand_case() {
        // x standardized per channel, y with moments (3, 2) -> out = 2x + 3.
        let x = Tensor::from_vec(vec![1, 1, 2], vec![-1.0, 1.0]).unwrap();
        let y = Tensor::from_vec(vec![1, 1, 2], vec![1.0, 5.0]).unwrap();
        let out = adain(&x, &y).unwrap();
        assert!((out.at3(0, 0, 0) - 1.0).abs() < 1e-4);
        assert!((out.at3(0, 0, 1) - 5.0).abs() < 1e-4);
    }

    #[test]
    fn ca_adain_alpha_c_one_is_identity() {
        let x = rand3(4, &[2, 3, 3]);
        let y = rand3(5, &[2, 3, 3]);
        let p = CaAdainParams::new(1.0, 0.0).unwrap();
        let out = ca_adain(&x, &y, &p).unwrap();
        assert_eq!(out, x);
    }

    #[test]
    fn ca_adain_alpha_s_one_matches_adain() {
        let x = rand3(6, &[2, 3, 3]);
        let y = rand3(7, &[2, 3, 3]);
        let p = CaAdainParams::new(0.0, 1.0).unwrap();
        let a = ca_adain(&x, &y, &p).unwrap();
        let b = adain(&x, &y).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn ca_adain_default_moments() {
        let x = rand3(8, &[3, 6, 6]);
        let y = rand3(9, &[3, 6, 6]).scale(1.7);
        let p = CaAdainParams::default();
        let out = ca_adain(&x, &y, &p).unwrap();
        let (mu_o, sd_o) = out.channel_moments().unwrap();
        let (mu_c, sd_c) = x.channel_moments().unwrap();
        let (mu_s, sd_s) = y.channel_moments().unwrap();
        for c in 0..3 {
            let want_mu = 0.6 * mu_s.data()[c] + 0.4 * mu_c.data()[c];
            let want_sd = 0.6 * sd_s.data()[c] + 0.4 * sd_c.data()[c];
            assert!((mu_o.data()[c] - want_mu).abs() < 1e-5);
            assert!((sd_o.data()[c] - want_sd).abs() < 1e-5);
        }
    }

    #[test]
    fn ca_adain_constant_channel_does_not_blow_up() {
        let x = Tensor::zeros(&[1, 2, 2]).map(|_| 3.0);
        let y = rand3(10, &[1, 2, 2]);
        let p = CaAdainParams::default();
        let out = ca_adain(&x, &y, &p).unwrap();
        assert!(out.data().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn ca_adain_params_validation() {
        assert!(CaAdainParams::new(0.4, 0.6).is_ok());
        assert!(CaAdainParams::new(0.5, 0.6).is_err());
        assert!(CaAdainParams::new(-0.1, 1.1).is_err());
    }

    #[test]
    fn embedder_deterministic_and_linear() {
        let e = EmbedderWeights::seeded(8, 32, 32, 4, 16, 3).unwrap();
        let img = rand3(11, &[3, 32, 32]).map(|v| (v * 0.2 + 0.5).clamp(0.0, 1.0));
        let a = e.extract_embedding(&img).unwrap();
        let b = e.extract_embedding(&img).unwrap();
        assert_eq!(a, b);
        // mid-gray image (rescales to zero) embeds to zero
        let gray = Tensor::zeros(&[3, 32, 32]).map(|_| 0.5);
        let z = e.extract_embedding(&gray).unwrap();
        assert!(z.data().iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn embedder_matches_pool_then_project_transcription() {
        let pool = 4;
        let e = EmbedderWeights::seeded(pool, 8, 8, 3, 5, 7).unwrap();
        let img = rand3(13, &[3, 8, 8]).map(|v| (v * 0.25 + 0.5).clamp(0.0, 1.0));
        let emb = e.extract_embedding(&img).unwrap();
        // independent transcription
        let (gh, gw) = (2, 2);
        let mut pooled = vec![0.0f64; 3 * gh * gw];
        for c in 0..3 {
            for gy in 0..gh {
                for gx in 0..gw {
                    let mut acc = 0.0;
                    for py in 0..pool {
                        for px in 0..pool {
                            acc += 2.0 * img.at3(c, gy * pool + py, gx * pool + px) - 1.0;
                        }
                    }
                    pooled[c * gh * gw + gy * gw + gx] = acc / (pool * pool) as f64;
                }
            }
        }
        for i in 0..3 * 5 {
            let mut acc = 0.0;
            for (j, &p) in pooled.iter().enumerate() {
                acc += e.projection().at2(i, j) * p;
            }
            assert!((emb.data()[i] - acc).abs() < 1e-6);
        }
    }

    #[test]
    fn dfca_text_only_when_streams_absent() {
        let arch = ArchConfig {
            in_channels: 8,
            width: 8,
            heads: 2,
            down_blocks: 1,
            mid_blocks: 1,
            up_blocks: 2,
            ctx_dim: 6,
            text_tokens: 3,
        };
        let w = DenoiserWeights::seeded(arch, 5).unwrap();
        let ctx = ContextBundle::from_prompt("x", &arch);
        let q = rand3(14, &[4, 8]);
        let out = dfca(&q, &ctx, &w).unwrap();
        let text_only = attention_stream(
            &q,
            &ctx.text_tokens,
            &w.text_key_proj,
            &w.text_value_proj,
            2,
        )
        .unwrap();
        assert_eq!(out, text_only);
    }

    #[test]
    fn dfca_additive_in_streams() {
        let arch = ArchConfig {
            in_channels: 8,
            width: 8,
            heads: 2,
            down_blocks: 1,
            mid_blocks: 1,
            up_blocks: 2,
            ctx_dim: 6,
            text_tokens: 3,
        };
        let w = DenoiserWeights::seeded(arch, 6).unwrap();
        let content = rand3(15, &[2, 6]);
        let style = rand3(16, &[2, 6]);
        let ctx = ContextBundle::from_prompt("y", &arch)
            .with_image_tokens(content.clone(), style.clone());
        let q = rand3(17, &[4, 8]);
        let full = dfca(&q, &ctx, &w).unwrap();
        let text = dfca(&q, &ctx.masked(false, false), &w).unwrap();
        let with_c = dfca(&q, &ctx.masked(true, false), &w).unwrap();
        let with_s = dfca(&q, &ctx.masked(false, true), &w).unwrap();
        // per-stream softmax makes the decomposition exact
        let sum = with_c.sub(&text).unwrap().add(&with_s).unwrap();
        assert!(full.linf_dist(&sum) < 1e-5);
    }

    #[test]
    fn dfca_hand_computed_two_token_case() {
        let arch = ArchConfig {
            in_channels: 2,
            width: 2,
            heads: 1,
            down_blocks: 1,
            mid_blocks: 1,
            up_blocks: 1,
            ctx_dim: 2,
            text_tokens: 2,
        };
        let w = DenoiserWeights::seeded(arch, 8).unwrap();
        let content = rand3(18, &[2, 2]);
        let style = rand3(19, &[2, 2]);
        let ctx = ContextBundle::from_prompt("z", &arch)
            .with_image_tokens(content.clone(), style.clone());
        let q = rand3(20, &[2, 2]);
        let out = dfca(&q, &ctx, &w).unwrap();
        // independent evaluation: softmax(q k^T / sqrt(2)) v per stream, summed
        let eval = |tokens: &Tensor, kp: &Tensor, vp: &Tensor| -> Tensor {
            let k = tokens.matmul(kp).unwrap();
            let v = tokens.matmul(vp).unwrap();
            let scores = q
                .matmul(&k.transpose().unwrap())
                .unwrap()
                .scale(1.0 / 2.0f64.sqrt());
            scores.softmax_rows().unwrap().matmul(&v).unwrap()
        };
        let expect = eval(&ctx.text_tokens, &w.text_key_proj, &w.text_value_proj)
            .add(&eval(&content, &w.image_key_proj, &w.image_value_proj))
            .unwrap()
            .add(&eval(&style, &w.image_key_proj, &w.image_value_proj))
            .unwrap();
        assert!(out.linf_dist(&expect) < 1e-9);
    }

    #[test]
    fn single_token_attention_degenerates_to_value_row() {
        // with a single key token every softmax weight is 1, so each output
        // row equals the lone value row
        let q = rand3(21, &[3, 4]);
        let k = rand3(22, &[1, 4]);
        let v = rand3(23, &[1, 4]);
        let out = multihead_attention(&q, &k, &v, 1).unwrap();
        for i in 0..3 {
            for j in 0..4 {
                assert!((out.at2(i, j) - v.at2(0, j)).abs() < 1e-12);
            }
        }
    }

    proptest! {
        #[test]
        fn ca_adain_moment_blend_on_alpha_grid(seed in 0u64..200, grid in 0usize..11) {
            let alpha_c = grid as f64 / 10.0;
            let p = CaAdainParams::from_alpha_c(alpha_c).unwrap();
            let x = rand3(seed.wrapping_mul(2) + 1, &[2, 4, 4]);
            let y = rand3(seed.wrapping_mul(2) + 1000, &[2, 4, 4]);
            let out = ca_adain(&x, &y, &p).unwrap();
            let (mu_o, sd_o) = out.channel_moments().unwrap();
            let (mu_c, sd_c) = x.channel_moments().unwrap();
            let (mu_s, sd_s) = y.channel_moments().unwrap();
            for c in 0..2 {
                let want_mu = p.alpha_s * mu_s.data()[c] + p.alpha_c * mu_c.data()[c];
                let want_sd = p.alpha_s * sd_s.data()[c] + p.alpha_c * sd_c.data()[c];
                prop_assert!((mu_o.data()[c] - want_mu).abs() < 1e-5);
                prop_assert!((sd_o.data()[c] - want_sd).abs() < 1e-5);
            }
        }

        #[test]
        fn ca_adain_continuous_in_alpha(seed in 0u64..100, grid in 1usize..10) {
            let alpha = grid as f64 / 10.0;
            let delta = 1e-4;
            let x = rand3(seed + 1, &[2, 4, 4]);
            let y = rand3(seed + 500, &[2, 4, 4]);
            let a = ca_adain(&x, &y, &CaAdainParams::from_alpha_c(alpha).unwrap()).unwrap();
            let b = ca_adain(&x, &y, &CaAdainParams::from_alpha_c(alpha + delta).unwrap()).unwrap();
            // outputs move at most proportionally to the stat gap; generous
            // Lipschitz bound for standard-normal draws
            prop_assert!(a.linf_dist(&b) < delta * 100.0);
        }
    }
}
