//! Gaussian random field samplers.
//!
//! Two-phase coefficients draw `g ~ N(0, (-Δ + cI)^{-2})` with zero Neumann
//! boundary conditions via the cosine eigenexpansion
//! `g = Σ ξ_jk (π²(j²+k²)+c)^{-1} cos(jπx₁)cos(kπx₂)` and threshold at zero.
//! The vorticity initializer uses the periodic analogue of the same family
//! (Fourier eigenfunctions, eigenvalues `4π²|k|² + c`), projected to mean
//! zero by dropping the DC mode.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::Result;
use crate::field::{Domain, GridField};
use crate::spectral;
use crate::tensor::Tensor;
use crate::seed;

/// Sample `g ~ N(0, (-Δ + cI)^{-2})` with zero Neumann conditions on the
/// unit square, evaluated on `n × n` grid nodes `i/(n-1)`.
pub fn sample_grf_neumann(seed_v: u64, n: usize, c: f64) -> Tensor {
    let mut rng = seed::rng_for(seed_v, "grf-neumann", 0);
    // mode coefficients ξ_jk · λ_jk
    let mut coeff = vec![0.0; n * n];
    for j in 0..n {
        for k in 0..n {
            let xi: f64 = rng.sample(StandardNormal);
            let lambda = 1.0 / (std::f64::consts::PI.powi(2) * ((j * j + k * k) as f64) + c);
            coeff[j * n + k] = xi * lambda;
        }
    }
    // basis[j][i] = cos(jπ x_i), x_i = i/(n-1)
    let mut basis = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            basis[j * n + i] = (j as f64 * std::f64::consts::PI * i as f64 / (n - 1) as f64).cos();
        }
    }
    // g = Bᵀ · coeff · B via two small matmuls
    let mut tmp = vec![0.0; n * n]; // tmp[j][i2] = Σ_k coeff[j][k] basis[k][i2]
    for j in 0..n {
        for k in 0..n {
            let cjk = coeff[j * n + k];
            if cjk == 0.0 {
                continue;
            }
            let row = &basis[k * n..(k + 1) * n];
            for (t, &b) in tmp[j * n..(j + 1) * n].iter_mut().zip(row) {
                *t += cjk * b;
            }
        }
    }
    let mut g = vec![0.0; n * n];
    for j in 0..n {
        let bj = &basis[j * n..(j + 1) * n];
        let tj = &tmp[j * n..(j + 1) * n];
        for i1 in 0..n {
            let w = bj[i1];
            if w == 0.0 {
                continue;
            }
            let dst = &mut g[i1 * n..(i1 + 1) * n];
            for (d, &t) in dst.iter_mut().zip(tj) {
                *d += w * t;
            }
        }
    }
    Tensor::new(vec![n, n], g).unwrap()
}

/// Project a node-sampled field onto `cos(jπx₁)cos(kπx₂)` with trapezoid
/// weights; recovers the expansion coefficient exactly for `j, k < n-1`.
/// Test oracle for the mode-amplitude law.
pub fn neumann_mode_coefficient(g: &Tensor, j: usize, k: usize) -> f64 {
    let n = g.shape()[0];
    let nn = (n - 1) as f64;
    let norm = |m: usize| if m == 0 || m == n - 1 { nn } else { nn / 2.0 };
    let mut acc = 0.0;
    for i1 in 0..n {
        let w1 = if i1 == 0 || i1 == n - 1 { 0.5 } else { 1.0 };
        let b1 = (j as f64 * std::f64::consts::PI * i1 as f64 / nn).cos();
        for i2 in 0..n {
            let w2 = if i2 == 0 || i2 == n - 1 { 0.5 } else { 1.0 };
            let b2 = (k as f64 * std::f64::consts::PI * i2 as f64 / nn).cos();
            acc += w1 * w2 * g.data()[i1 * n + i2] * b1 * b2;
        }
    }
    acc / (norm(j) * norm(k))
}

/// Two-phase coefficient: threshold the Neumann GRF at zero, assigning
/// `a_max` to the positive part and `a_min` to the negative part.
pub fn sample_grf_twophase(
    seed_v: u64,
    resolution: usize,
    c: f64,
    a_min: f64,
    a_max: f64,
) -> Result<GridField> {
    let g = sample_grf_neumann(seed_v, resolution, c);
    let a = g.map(|v| if v >= 0.0 { a_max } else { a_min });
    GridField::new(
        Tensor::new(vec![1, resolution, resolution], a.into_data())?,
        Domain::UNIT,
    )
}

/// Mean-zero periodic GRF from the same covariance family, for initial
/// vorticity: white noise filtered per mode by `amp·n/(4π²|k|²+c)`.
pub fn sample_w0_periodic(seed_v: u64, n: usize, c: f64, amp: f64) -> Tensor {
    let mut rng = seed::rng_for(seed_v, "grf-periodic", 0);
    let noise: Vec<f64> = (0..n * n).map(|_| rng.sample(StandardNormal)).collect();
    let white = Tensor::new(vec![1, n, n], noise).unwrap();
    let mut spec = spectral::rfft2(&white).unwrap();
    let cols = n / 2 + 1;
    {
        let re = spec.re.data_mut();
        for (idx, v) in re.iter_mut().enumerate() {
            let (r, col) = (idx / cols, idx % cols);
            *v *= periodic_filter(r, col, n, c, amp);
        }
    }
    {
        let im = spec.im.data_mut();
        for (idx, v) in im.iter_mut().enumerate() {
            let (r, col) = (idx / cols, idx % cols);
            *v *= periodic_filter(r, col, n, c, amp);
        }
    }
    let field = spectral::irfft2(&spec).unwrap();
    Tensor::new(vec![n, n], field.into_data()).unwrap()
}

fn periodic_filter(row: usize, col: usize, n: usize, c: f64, amp: f64) -> f64 {
    if row == 0 && col == 0 {
        return 0.0; // mean-zero projection
    }
    let k1 = if row <= n / 2 { row as f64 } else { row as f64 - n as f64 };
    let k2 = col as f64;
    let eig = 4.0 * std::f64::consts::PI.powi(2) * (k1 * k1 + k2 * k2) + c;
    amp * n as f64 / eig
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn twophase_takes_exactly_two_values() {
        let a = sample_grf_twophase(3, 32, 9.0, 3.0, 12.0).unwrap();
        assert!(a.data.data().iter().all(|&v| v == 3.0 || v == 12.0));
        assert!(a.data.data().iter().any(|&v| v == 3.0));
        assert!(a.data.data().iter().any(|&v| v == 12.0));
    }

    #[test]
    fn twophase_area_fraction_is_balanced() {
        let draws = 2000;
        let n = 16;
        let mut frac = 0.0;
        for s in 0..draws {
            let a = sample_grf_twophase(1000 + s, n, 9.0, 0.0, 1.0).unwrap();
            frac += a.data.data().iter().sum::<f64>() / (n * n) as f64;
        }
        frac /= draws as f64;
        assert!(
            (frac - 0.5).abs() < 0.02,
            "area fraction of a_max: {}",
            frac
        );
    }

    #[test]
    fn mode_amplitudes_follow_the_eigenvalue_law() {
        let n = 32;
        let c = 9.0;
        let draws = 2000;
        let modes: [(usize, usize); 10] = [
            (0, 0),
            (0, 1),
            (1, 0),
            (1, 1),
            (0, 2),
            (2, 0),
            (1, 2),
            (2, 1),
            (2, 2),
            (0, 3),
        ];
        let mut sums = [0.0f64; 10];
        for s in 0..draws {
            let g = sample_grf_neumann(77_000 + s, n, c);
            for (m, &(j, k)) in modes.iter().enumerate() {
                let coeff = neumann_mode_coefficient(&g, j, k);
                sums[m] += coeff * coeff;
            }
        }
        for (m, &(j, k)) in modes.iter().enumerate() {
            let emp_std = (sums[m] / draws as f64).sqrt();
            let expect = 1.0 / (std::f64::consts::PI.powi(2) * ((j * j + k * k) as f64) + c);
            let rel = (emp_std - expect).abs() / expect;
            assert!(
                rel < 0.05,
                "mode ({}, {}): empirical {} vs {} (rel {:.3})",
                j,
                k,
                emp_std,
                expect,
                rel
            );
        }
    }

    #[test]
    fn w0_is_mean_zero_and_deterministic() {
        let w = sample_w0_periodic(5, 64, 49.0, 1.0);
        assert!(w.mean().abs() < 1e-12);
        let w2 = sample_w0_periodic(5, 64, 49.0, 1.0);
        assert_eq!(w, w2);
        assert_ne!(w, sample_w0_periodic(6, 64, 49.0, 1.0));
    }
}
