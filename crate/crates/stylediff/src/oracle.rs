//! Independent closed-form references for the diffusion engine.
//!
//! Everything in this module is written against the schedule numbers and the
//! linear denoiser matrix directly — dense solves and explicit affine-map
//! composition — and deliberately shares no code with the stepping functions
//! it is used to check. The `selftest` command and the acceptance suite both
//! run against these.

use crate::diffusion::NoiseSchedule;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve_dense(a: &Tensor, b: &[f64]) -> Result<Vec<f64>> {
    if a.shape().len() != 2 || a.rows() != a.cols() || a.rows() != b.len() {
        return Err(Error::dim("solve_dense", a.shape(), &[b.len()]));
    }
    let n = b.len();
    let mut m: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            let mut row: Vec<f64> = (0..n).map(|j| a.at2(i, j)).collect();
            row.push(b[i]);
            row
        })
        .collect();
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))
            .expect("non-empty range");
        if m[pivot][col].abs() < 1e-14 {
            return Err(Error::Parameter("singular system in solve_dense".into()));
        }
        m.swap(col, pivot);
        for row in col + 1..n {
            let factor = m[row][col] / m[col][col];
            for k in col..=n {
                m[row][k] -= factor * m[col][k];
            }
        }
    }
    let mut x = vec![0.0f64; n];
    for row in (0..n).rev() {
        let mut acc = m[row][n];
        for k in row + 1..n {
            acc -= m[row][k] * x[k];
        }
        x[row] = acc / m[row][row];
    }
    Ok(x)
}

/// Coefficients of one inversion step under a linear noise model: the state
/// multiplier `sqrt(a_t / a_prev)` and the noise multiplier, written in the
/// form obtained by inverting the denoising update directly.
pub fn inversion_coefficients(sched: &NoiseSchedule, t: usize) -> (f64, f64) {
    let a_t = sched.alpha_bar(t);
    let a_prev = sched.alpha_bar(t - 1);
    let state = (a_t / a_prev).sqrt();
    let noise = (1.0 - a_t).sqrt() - state * (1.0 - a_prev).sqrt();
    (state, noise)
}

/// Predicted per-iteration contraction factor of the refined inversion at
/// step `t` for a noise model with spectral norm `rho`.
pub fn contraction_factor(sched: &NoiseSchedule, t: usize, rho: f64) -> f64 {
    let (_, noise_coef) = inversion_coefficients(sched, t);
    noise_coef.abs() * rho
}

/// Closed-form fixed point of the refined inversion step for the linear
/// noise model `eps = A vec(x)`: solves `(I - c_t A) x* = a_t x_prev`.
pub fn linear_fixed_point(
    matrix: &Tensor,
    sched: &NoiseSchedule,
    t: usize,
    x_prev: &Tensor,
) -> Result<Tensor> {
    let n = x_prev.len();
    if matrix.rows() != n || matrix.cols() != n {
        return Err(Error::dim(
            "linear_fixed_point",
            matrix.shape(),
            x_prev.shape(),
        ));
    }
    let (state_coef, noise_coef) = inversion_coefficients(sched, t);
    let mut system = Tensor::identity(n);
    for i in 0..n {
        for j in 0..n {
            let v = system.at2(i, j) - noise_coef * matrix.at2(i, j);
            system.set2(i, j, v);
        }
    }
    let rhs: Vec<f64> = x_prev.data().iter().map(|v| state_coef * v).collect();
    let solution = solve_dense(&system, &rhs)?;
    Tensor::from_vec(x_prev.shape().to_vec(), solution)
}

/// The denoising step as an explicit matrix for the linear noise model:
/// `x_{t-1} = L_t x_t` with `L_t = c_x I + c_e A`.
pub fn denoise_step_matrix(matrix: &Tensor, sched: &NoiseSchedule, t: usize) -> Result<Tensor> {
    let n = matrix.rows();
    if matrix.cols() != n {
        return Err(Error::dim("denoise_step_matrix", matrix.shape(), &[n, n]));
    }
    let a_t = sched.alpha_bar(t);
    let a_prev = sched.alpha_bar(t - 1);
    let c_x = (a_prev / a_t).sqrt();
    let c_e = (1.0 - a_prev).sqrt() - c_x * (1.0 - a_t).sqrt();
    let mut out = Tensor::zeros(&[n, n]);
    for i in 0..n {
        for j in 0..n {
            let diag = if i == j { c_x } else { 0.0 };
            out.set2(i, j, diag + c_e * matrix.at2(i, j));
        }
    }
    Ok(out)
}

/// Closed-form full sampling pass for the linear noise model: the explicit
/// product of all per-step matrices applied to `x_T`.
pub fn sample_closed_form(matrix: &Tensor, sched: &NoiseSchedule, x_t: &Tensor) -> Result<Tensor> {
    let mut product = Tensor::identity(matrix.rows());
    // x_0 = L_1 L_2 ... L_T x_T, built right-to-left
    for t in (1..=sched.t_max()).rev() {
        let step = denoise_step_matrix(matrix, sched, t)?;
        product = step.matmul(&product)?;
    }
    let out = product.matvec(x_t.data())?;
    Ok(Tensor::from_parts(x_t.shape().to_vec(), out))
}
