//! Exactly-invertible latent codec.
//!
//! Images enter the engine through a fixed orthogonal patch projection rather
//! than a learned autoencoder: each non-overlapping `p x p x 3` patch is
//! flattened and multiplied by a seeded orthogonal matrix. The map is linear
//! and norm-preserving, so every reconstruction error observed downstream is
//! attributable to the diffusion stage, not the codec.

use crate::error::{Error, Result};
use crate::tensor::{randn, SeededRng, Tensor};

/// Fixed codec weights: patch size and an orthogonal projection derived
/// deterministically from `seed` via Gram-Schmidt on a Gaussian matrix.
#[derive(Clone, Debug)]
pub struct CodecWeights {
    patch: usize,
    proj: Tensor,
    seed: u64,
}

impl CodecWeights {
    pub fn seeded(patch: usize, seed: u64) -> Result<Self> {
        if patch == 0 {
            return Err(Error::Parameter("codec patch size must be >= 1".into()));
        }
        let dim = 3 * patch * patch;
        let mut rng = SeededRng::new(seed);
        let raw = randn(&mut rng, &[dim, dim]);
        let proj = gram_schmidt_rows(&raw)?;
        Ok(CodecWeights { patch, proj, seed })
    }

    pub fn patch_size(&self) -> usize {
        self.patch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Latent channel count, `3 * p^2`.
    pub fn latent_channels(&self) -> usize {
        3 * self.patch * self.patch
    }

    /// The orthogonal projection matrix (rows are the basis).
    pub fn projection(&self) -> &Tensor {
        &self.proj
    }

    /// Encodes a `3 x H x W` image with values in [0, 1] into a
    /// `(3p^2) x (H/p) x (W/p)` latent. Pixels are rescaled to [-1, 1] before
    /// the bias-free linear projection.
    pub fn encode(&self, img: &Tensor) -> Result<Tensor> {
        let (h, w) = self.check_image(img)?;
        let p = self.patch;
        let (gh, gw) = (h / p, w / p);
        let dim = self.latent_channels();
        let mut out = Tensor::zeros(&[dim, gh, gw]);
        let mut patch_vec = vec![0.0f64; dim];
        for gy in 0..gh {
            for gx in 0..gw {
                for c in 0..3 {
                    for py in 0..p {
                        for px in 0..p {
                            let v = img.at3(c, gy * p + py, gx * p + px);
                            patch_vec[c * p * p + py * p + px] = 2.0 * v - 1.0;
                        }
                    }
                }
                let token = self.proj.matvec(&patch_vec)?;
                for (ch, &v) in token.iter().enumerate() {
                    out.set3(ch, gy, gx, v);
                }
            }
        }
        Ok(out)
    }

    /// Inverse of [`encode`](Self::encode): applies the transposed projection
    /// per token, un-patchifies, rescales back to [0, 1] and clamps.
    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        Ok(self.decode_unclamped(z)?.map(|v| v.clamp(0.0, 1.0)))
    }

    /// Decode without the final clamp; used by round-trip tests and metrics
    /// that must see out-of-range values.
    pub fn decode_unclamped(&self, z: &Tensor) -> Result<Tensor> {
        if z.shape().len() != 3 {
            return Err(Error::dim("decode latent rank", z.shape(), &[0, 0, 0]));
        }
        let dim = self.latent_channels();
        if z.shape()[0] != dim {
            return Err(Error::dim(
                "decode latent channels",
                z.shape(),
                &[dim, 0, 0],
            ));
        }
        let p = self.patch;
        let (gh, gw) = (z.shape()[1], z.shape()[2]);
        let mut img = Tensor::zeros(&[3, gh * p, gw * p]);
        let mut token = vec![0.0f64; dim];
        let proj_t = self.proj.transpose()?;
        for gy in 0..gh {
            for gx in 0..gw {
                for (ch, slot) in token.iter_mut().enumerate() {
                    *slot = z.at3(ch, gy, gx);
                }
                let patch_vec = proj_t.matvec(&token)?;
                for c in 0..3 {
                    for py in 0..p {
                        for px in 0..p {
                            let v = patch_vec[c * p * p + py * p + px];
                            img.set3(c, gy * p + py, gx * p + px, (v + 1.0) / 2.0);
                        }
                    }
                }
            }
        }
        Ok(img)
    }

    fn check_image(&self, img: &Tensor) -> Result<(usize, usize)> {
        if img.shape().len() != 3 || img.shape()[0] != 3 {
            return Err(Error::dim("encode image rank", img.shape(), &[3, 0, 0]));
        }
        let (h, w) = (img.shape()[1], img.shape()[2]);
        if h % self.patch != 0 || w % self.patch != 0 {
            return Err(Error::dim(
                "encode image not divisible by patch",
                img.shape(),
                &[3, self.patch, self.patch],
            ));
        }
        Ok((h, w))
    }
}

/// Orthonormalizes the rows of a square matrix (modified Gram-Schmidt).
fn gram_schmidt_rows(m: &Tensor) -> Result<Tensor> {
    let n = m.rows();
    let mut rows: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| m.at2(i, j)).collect())
        .collect();
    for i in 0..n {
        for j in 0..i {
            let dot: f64 = rows[i].iter().zip(rows[j].iter()).map(|(a, b)| a * b).sum();
            for k in 0..n {
                rows[i][k] -= dot * rows[j][k];
            }
        }
        let norm: f64 = rows[i].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm < 1e-12 {
            return Err(Error::Parameter(
                "degenerate basis during orthonormalization".into(),
            ));
        }
        for v in rows[i].iter_mut() {
            *v /= norm;
        }
    }
    Tensor::from_vec(vec![n, n], rows.into_iter().flatten().collect())
}
