//! Dense tensor arithmetic and seeded randomness.
//!
//! Everything downstream of this module is expressed in terms of [`Tensor`]
//! operations, so the rules here are strict: row-major storage, `f64`
//! elements, fixed left-to-right accumulation order, and no hidden state.
//! Same inputs always produce bit-identical outputs.

use crate::error::{Error, Result};

/// Dense N-dimensional array, row-major, `f64` elements.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor after checking that `shape` and `data` agree and that
    /// every element is finite.
    pub fn from_vec(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim("Tensor::from_vec", &shape, &[data.len()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("Tensor::from_vec".into()));
        }
        Ok(Tensor { shape, data })
    }

    /// All-zero tensor of the given shape.
    pub fn zeros(shape: &[usize]) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; n],
        }
    }

    /// Identity matrix of size `n`.
    pub fn identity(n: usize) -> Self {
        let mut t = Tensor::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Number of rows when viewed as a matrix.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of columns when viewed as a matrix.
    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor { shape, data }
    }

    /// Matrix element accessor; only valid on rank-2 tensors.
    pub fn at2(&self, r: usize, c: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[r * self.shape[1] + c]
    }

    pub(crate) fn set2(&mut self, r: usize, c: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 2);
        let cols = self.shape[1];
        self.data[r * cols + c] = v;
    }

    /// Element accessor for rank-3 tensors (channel, row, column).
    pub fn at3(&self, c: usize, y: usize, x: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 3);
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[c * h * w + y * w + x]
    }

    pub(crate) fn set3(&mut self, c: usize, y: usize, x: usize, v: f64) {
        debug_assert_eq!(self.shape.len(), 3);
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[c * h * w + y * w + x] = v;
    }

    /// Reinterprets the data under a new shape with the same element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    /// Standard matrix product with fixed left-to-right accumulation over the
    /// inner dimension.
    pub fn matmul(&self, other: &Tensor) -> Result<Tensor> {
        if self.shape.len() != 2 || other.shape.len() != 2 {
            return Err(Error::dim("matmul rank", &self.shape, &other.shape));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let (k2, n) = (other.shape[0], other.shape[1]);
        if k != k2 {
            return Err(Error::dim("matmul inner", &self.shape, &other.shape));
        }
        let mut out = vec![0.0f64; m * n];
        // i-k-j loop order: cache friendly and still accumulates each output
        // element over k in ascending order.
        for i in 0..m {
            for p in 0..k {
                let a = self.data[i * k + p];
                let brow = &other.data[p * n..(p + 1) * n];
                let orow = &mut out[i * n..(i + 1) * n];
                for j in 0..n {
                    orow[j] += a * brow[j];
                }
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Matrix-vector product (rank-2 times flat slice).
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if self.shape.len() != 2 || self.shape[1] != v.len() {
            return Err(Error::dim("matvec", &self.shape, &[v.len()]));
        }
        let (m, k) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0f64; m];
        for i in 0..m {
            let row = &self.data[i * k..(i + 1) * k];
            let mut acc = 0.0f64;
            for p in 0..k {
                acc += row[p] * v[p];
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::dim("transpose", &self.shape, &[0, 0]));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Ok(Tensor::from_parts(vec![n, m], out))
    }

    /// Row-wise softmax with per-row max subtraction, so large logits cannot
    /// overflow.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        if self.shape.len() != 2 {
            return Err(Error::dim("softmax_rows", &self.shape, &[0, 0]));
        }
        let (m, n) = (self.shape[0], self.shape[1]);
        if n == 0 {
            return Err(Error::dim("softmax_rows empty row", &self.shape, &[m, 1]));
        }
        let mut out = vec![0.0f64; m * n];
        for i in 0..m {
            let row = &self.data[i * n..(i + 1) * n];
            let mut mx = row[0];
            for &v in row.iter() {
                if v > mx {
                    mx = v;
                }
            }
            let orow = &mut out[i * n..(i + 1) * n];
            let mut sum = 0.0f64;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                orow[j] = e;
                sum += e;
            }
            for v in orow.iter_mut() {
                *v /= sum;
            }
        }
        Ok(Tensor::from_parts(vec![m, n], out))
    }

    /// Per-channel mean and population standard deviation of a CxHxW tensor.
    ///
    /// The std divides by H*W (population form) and carries no epsilon floor;
    /// callers that divide by it apply their own floor.
    pub fn channel_moments(&self) -> Result<(Tensor, Tensor)> {
        if self.shape.len() != 3 {
            return Err(Error::dim("channel_moments rank", &self.shape, &[0, 0, 0]));
        }
        let (c, h, w) = (self.shape[0], self.shape[1], self.shape[2]);
        let hw = h * w;
        if hw == 0 {
            return Err(Error::dim(
                "channel_moments spatial extent",
                &self.shape,
                &[c, 1, 1],
            ));
        }
        let mut means = vec![0.0f64; c];
        let mut stds = vec![0.0f64; c];
        for ch in 0..c {
            let plane = &self.data[ch * hw..(ch + 1) * hw];
            let mut acc = 0.0f64;
            for &v in plane {
                acc += v;
            }
            let mean = acc / hw as f64;
            let mut var = 0.0f64;
            for &v in plane {
                let d = v - mean;
                var += d * d;
            }
            var /= hw as f64;
            means[ch] = mean;
            stds[ch] = var.sqrt();
        }
        Ok((
            Tensor::from_parts(vec![c], means),
            Tensor::from_parts(vec![c], stds),
        ))
    }

    /// Elementwise sum; shapes must match.
    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    /// Elementwise difference; shapes must match.
    pub fn sub(&self, other: &Tensor) -> Result<Tensor> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    /// Multiplies every element by a scalar.
    pub fn scale(&self, s: f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|v| v * s).collect(),
        )
    }

    /// Applies a function to every element.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::from_parts(
            self.shape.clone(),
            self.data.iter().map(|&v| f(v)).collect(),
        )
    }

    fn zip_with(&self, other: &Tensor, ctx: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        if self.shape != other.shape {
            return Err(Error::dim(ctx, &self.shape, &other.shape));
        }
        let data = self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor::from_parts(self.shape.clone(), data))
    }

    /// `self + s * other`, the scaled-add used all over the samplers.
    pub fn add_scaled(&self, other: &Tensor, s: f64) -> Result<Tensor> {
        self.zip_with(other, "add_scaled", |a, b| a + s * b)
    }

    /// Euclidean norm of the flattened data.
    pub fn norm_l2(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Largest absolute elementwise difference to `other`.
    pub fn linf_dist(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max)
    }

    /// Root-mean-square elementwise difference to `other`.
    pub fn rms_dist(&self, other: &Tensor) -> f64 {
        debug_assert_eq!(self.shape, other.shape);
        let n = self.data.len().max(1) as f64;
        (self
            .data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / n)
            .sqrt()
    }
}

/// Deterministic 64-bit generator with a splitmix64 output function.
///
/// The update is `state += 0x9E3779B97F4A7C15` followed by two xor-multiply
/// mixing rounds (constants 0xBF58476D1CE4E5B9 and 0x94D049BB133111EB). Any
/// implementation of these constants reproduces the stream exactly, which is
/// what keeps seeded weights identical across platforms.
#[derive(Clone, Debug)]
pub struct SeededRng {
    state: u64,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        SeededRng { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(0x9E3779B97F4A7C15);
        let mut z = self.state;
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
        z ^ (z >> 31)
    }

    /// Uniform draw in the open interval (0, 1): the top 53 bits plus a half
    /// step, scaled by 2^-53. Never returns 0 or 1, so logs are safe.
    pub fn next_uniform(&mut self) -> f64 {
        ((self.next_u64() >> 11) as f64 + 0.5) * (1.0 / 9007199254740992.0)
    }

    /// Standard normal draw via the Box-Muller transform
    /// `sqrt(-2 ln u1) * cos(2 pi u2)`. One draw consumes two uniforms.
    pub fn next_normal(&mut self) -> f64 {
        let u1 = self.next_uniform();
        let u2 = self.next_uniform();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    }

    /// Derives an independent child seed; used to fan one master seed out to
    /// subsystems without overlapping streams.
    pub fn derive(seed: u64, stream: u64) -> u64 {
        let mut rng = SeededRng::new(seed ^ stream.wrapping_mul(0xA24BAED4963EE407));
        rng.next_u64()
    }
}

/// Tensor of i.i.d. standard-normal draws from `rng`.
pub fn randn(rng: &mut SeededRng, shape: &[usize]) -> Tensor {
    let n: usize = shape.iter().product();
    let data = (0..n).map(|_| rng.next_normal()).collect();
    Tensor::from_parts(shape.to_vec(), data)
}

/// FNV-1a 64-bit hash; turns prompt strings into RNG seeds.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rand_tensor(seed: u64, shape: &[usize]) -> Tensor {
        let mut rng = SeededRng::new(seed);
        randn(&mut rng, shape)
    }

    #[test]
    fn matmul_identity_is_exact() {
        let a = Tensor::from_vec(vec![2, 2], vec![3.0, 4.0, 5.0, 6.0]).unwrap();
        let id = Tensor::identity(2);
        let out = id.matmul(&a).unwrap();
        assert_eq!(out.data(), a.data());
        let out2 = a.matmul(&id).unwrap();
        assert_eq!(out2.data(), a.data());
    }

    #[test]
    fn matmul_zero_case() {
        let a = Tensor::from_vec(vec![1, 2], vec![1.0, 2.0]).unwrap();
        let b = Tensor::from_vec(vec![2, 1], vec![0.0, 0.0]).unwrap();
        let out = a.matmul(&b).unwrap();
        assert_eq!(out.shape(), &[1, 1]);
        assert_eq!(out.data()[0], 0.0);
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let a = rand_tensor(11, &[4, 5]);
        let b = rand_tensor(12, &[5, 3]);
        let out = a.matmul(&b).unwrap();
        // Independent naive transcription: plain i-j-k loops.
        for i in 0..4 {
            for j in 0..3 {
                let mut acc = 0.0f64;
                for k in 0..5 {
                    acc += a.at2(i, k) * b.at2(k, j);
                }
                assert!((out.at2(i, j) - acc).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        let err = a.matmul(&b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]") && msg.contains("[4, 2]"), "{msg}");
    }

    #[test]
    fn softmax_symmetric_rows() {
        let t = Tensor::from_vec(vec![2, 2], vec![0.0, 0.0, 1000.0, 1000.0]).unwrap();
        let s = t.softmax_rows().unwrap();
        for &v in s.data() {
            assert!((v - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_hand_value() {
        // e^0 / (e^0 + e^ln3) = 1/4.
        let t = Tensor::from_vec(vec![1, 2], vec![0.0, 3.0f64.ln()]).unwrap();
        let s = t.softmax_rows().unwrap();
        assert!((s.data()[0] - 0.25).abs() < 1e-12);
        assert!((s.data()[1] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn channel_moments_constant_channel() {
        let t = Tensor::from_vec(vec![1, 2, 2], vec![7.0; 4]).unwrap();
        let (mean, std) = t.channel_moments().unwrap();
        assert_eq!(mean.data()[0], 7.0);
        assert_eq!(std.data()[0], 0.0);
    }

    #[test]
    fn channel_moments_symmetric_pair() {
        let t = Tensor::from_vec(vec![1, 1, 2], vec![-1.0, 1.0]).unwrap();
        let (mean, std) = t.channel_moments().unwrap();
        assert_eq!(mean.data()[0], 0.0);
        assert!((std.data()[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn channel_moments_matches_two_pass_oracle() {
        let t = rand_tensor(5, &[3, 4, 4]);
        let (mean, std) = t.channel_moments().unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|y| (0..4).map(move |x| (y, x)))
                .map(|(y, x)| t.at3(c, y, x))
                .collect();
            let m = vals.iter().sum::<f64>() / 16.0;
            let v = vals.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / 16.0;
            assert!((mean.data()[c] - m).abs() < 1e-6);
            assert!((std.data()[c] - v.sqrt()).abs() < 1e-6);
        }
    }

    #[test]
    fn channel_moments_empty_extent_errors() {
        let t = Tensor::zeros(&[3, 0, 4]);
        assert!(t.channel_moments().is_err());
    }

    #[test]
    fn randn_is_reproducible_and_seed_sensitive() {
        let a = rand_tensor(42, &[3, 5]);
        let b = rand_tensor(42, &[3, 5]);
        assert_eq!(a, b);
        let c = rand_tensor(43, &[3, 5]);
        assert_ne!(a, c);
    }

    #[test]
    fn randn_statistics() {
        let t = rand_tensor(7, &[100_000]);
        let n = t.len() as f64;
        let mean = t.data().iter().sum::<f64>() / n;
        let var = t
            .data()
            .iter()
            .map(|v| (v - mean) * (v - mean))
            .sum::<f64>()
            / n;
        assert!(mean.abs() < 0.02, "sample mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 0.02, "sample std {}", var.sqrt());
    }

    #[test]
    fn from_vec_rejects_bad_length_and_nonfinite() {
        assert!(Tensor::from_vec(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::from_vec(vec![1], vec![f64::NAN]).is_err());
    }

    proptest! {
        #[test]
        fn softmax_rows_sum_to_one(seed in 0u64..1000, m in 1usize..6, n in 1usize..8) {
            let t = rand_tensor(seed, &[m, n]).scale(10.0);
            let s = t.softmax_rows().unwrap();
            for i in 0..m {
                let sum: f64 = (0..n).map(|j| s.at2(i, j)).sum();
                prop_assert!((sum - 1.0).abs() < 1e-6);
                for j in 0..n {
                    prop_assert!(s.at2(i, j) >= 0.0);
                }
            }
        }

        #[test]
        fn matmul_right_identity_exact(seed in 0u64..1000, m in 1usize..5, n in 1usize..5) {
            let a = rand_tensor(seed, &[m, n]);
            let out = a.matmul(&Tensor::identity(n)).unwrap();
            prop_assert_eq!(out.data(), a.data());
        }

        #[test]
        fn channel_std_nonnegative(seed in 0u64..1000) {
            let t = rand_tensor(seed, &[2, 3, 3]);
            let (_, std) = t.channel_moments().unwrap();
            for &s in std.data() {
                prop_assert!(s >= 0.0);
            }
        }
    }
}
