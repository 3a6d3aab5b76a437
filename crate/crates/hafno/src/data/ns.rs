//! Pseudo-spectral solver for the 2D incompressible Navier–Stokes equations
//! in vorticity form on the unit torus:
//! `∂w/∂t + u·∇w = ν Δw + f`, `∇·u = 0`, `w = ∇×u`.
//!
//! Velocity comes from the streamfunction (`-Δψ = w`, `u = (∂y ψ, -∂x ψ)`),
//! so incompressibility is structural. The advection term is evaluated
//! pseudo-spectrally with 2/3-rule dealiasing; time stepping is
//! Crank–Nicolson for the viscous term and Heun (explicit trapezoid) for
//! advection and forcing, with an adaptive CFL-bounded step.

use crate::error::{Error, Result};
use crate::spectral::{irfft2, rfft2, Spectrum};
use crate::tensor::Tensor;

use super::grf::sample_w0_periodic;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NsSpec {
    pub viscosity: f64,
    pub grid: usize,
    /// Largest admissible time step; the CFL bound may shrink it.
    pub dt: f64,
    /// Conditioning frames (the recorded trajectory starts at t = 1).
    pub t0: usize,
    /// Total recorded frames, one per unit time.
    pub t_end: usize,
    /// Amplitude of `f = amp·(sin(2π(x+y)) + cos(2π(x+y)))`; 0 disables.
    pub forcing_amp: f64,
    /// Covariance shift `c` of the initial-vorticity field.
    pub w0_smoothness: f64,
    pub w0_amp: f64,
}

impl NsSpec {
    pub fn tiny(viscosity: f64) -> Self {
        NsSpec {
            viscosity,
            grid: 64,
            dt: 5e-3,
            t0: 10,
            t_end: 20,
            forcing_amp: 0.1,
            w0_smoothness: 49.0,
            w0_amp: 30.0,
        }
    }

    pub fn paper(viscosity: f64) -> Self {
        let t_end = if viscosity >= 1e-3 {
            50
        } else if viscosity >= 1e-4 {
            30
        } else {
            20
        };
        NsSpec {
            t_end,
            ..NsSpec::tiny(viscosity)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.viscosity <= 0.0 {
            return Err(Error::invalid("viscosity must be positive"));
        }
        if !self.grid.is_power_of_two() || self.grid < 16 {
            return Err(Error::invalid("NS grid must be a power of two >= 16"));
        }
        if self.t0 == 0 || self.t_end <= self.t0 {
            return Err(Error::invalid("need t_end > t0 >= 1"));
        }
        if self.dt <= 0.0 {
            return Err(Error::invalid("dt must be positive"));
        }
        Ok(())
    }

    /// Seeded mean-zero initial vorticity.
    pub fn sample_w0(&self, seed_v: u64) -> Tensor {
        sample_w0_periodic(seed_v, self.grid, self.w0_smoothness, self.w0_amp)
    }
}

/// Signed integer frequency of a stored spectral row.
fn row_freq(r: usize, n: usize) -> f64 {
    if r <= n / 2 {
        r as f64
    } else {
        r as f64 - n as f64
    }
}

struct NsWorkspace {
    n: usize,
    lam: Vec<f64>,       // ν (2π)² |k|² per stored mode
    ksq: Vec<f64>,       // (2π)² |k|²
    kx: Vec<f64>,        // 2π k₂ (column direction = x)
    ky: Vec<f64>,        // 2π k₁ (row direction = y)
    dealias: Vec<bool>,  // keep-mask from the 2/3 rule
    forcing: Option<Spectrum>,
}

impl NsWorkspace {
    fn new(spec: &NsSpec) -> Self {
        let n = spec.grid;
        let cols = n / 2 + 1;
        let two_pi = 2.0 * std::f64::consts::PI;
        let cut = n as f64 / 3.0;
        let mut lam = vec![0.0; n * cols];
        let mut ksq = vec![0.0; n * cols];
        let mut kx = vec![0.0; n * cols];
        let mut ky = vec![0.0; n * cols];
        let mut dealias = vec![false; n * cols];
        for r in 0..n {
            let k1 = row_freq(r, n);
            for c in 0..cols {
                let k2 = c as f64;
                let idx = r * cols + c;
                let k2sum = k1 * k1 + k2 * k2;
                ksq[idx] = two_pi * two_pi * k2sum;
                lam[idx] = spec.viscosity * ksq[idx];
                kx[idx] = two_pi * k2;
                ky[idx] = two_pi * k1;
                dealias[idx] = k1.abs() <= cut && k2 <= cut;
            }
        }
        let forcing = if spec.forcing_amp != 0.0 {
            let mut data = vec![0.0; n * n];
            for i in 0..n {
                for j in 0..n {
                    let x = j as f64 / n as f64;
                    let y = i as f64 / n as f64;
                    let phase = two_pi * (x + y);
                    data[i * n + j] = spec.forcing_amp * (phase.sin() + phase.cos());
                }
            }
            Some(rfft2(&Tensor::new(vec![1, n, n], data).unwrap()).unwrap())
        } else {
            None
        };
        NsWorkspace {
            n,
            lam,
            ksq,
            kx,
            ky,
            dealias,
            forcing,
        }
    }

    /// Dealiased advection spectrum `rfft2(u·∇w)` and the grid max speed.
    fn advection(&self, w_hat: &Spectrum) -> (Spectrum, f64) {
        let n = self.n;
        let cols = n / 2 + 1;
        let modes = n * cols;
        let mut psi_re = vec![0.0; modes];
        let mut psi_im = vec![0.0; modes];
        let wr = w_hat.re.data();
        let wi = w_hat.im.data();
        for k in 0..modes {
            if self.ksq[k] > 0.0 {
                psi_re[k] = wr[k] / self.ksq[k];
                psi_im[k] = wi[k] / self.ksq[k];
            }
        }
        // u_x = ∂y ψ, u_y = -∂x ψ, plus the vorticity gradient
        let spec_of = |re: Vec<f64>, im: Vec<f64>| Spectrum {
            re: Tensor::new(vec![1, n, cols], re).unwrap(),
            im: Tensor::new(vec![1, n, cols], im).unwrap(),
            spatial: (n, n),
        };
        let mul_ik = |re: &[f64], im: &[f64], k: &[f64]| {
            // multiply by i·k : (re + i·im)(i k) = -k·im + i·k·re
            let out_re: Vec<f64> = im.iter().zip(k).map(|(&v, &kk)| -kk * v).collect();
            let out_im: Vec<f64> = re.iter().zip(k).map(|(&v, &kk)| kk * v).collect();
            (out_re, out_im)
        };
        let (uxr, uxi) = mul_ik(&psi_re, &psi_im, &self.ky);
        let (uyr_neg, uyi_neg) = mul_ik(&psi_re, &psi_im, &self.kx);
        let (wxr, wxi) = mul_ik(wr, wi, &self.kx);
        let (wyr, wyi) = mul_ik(wr, wi, &self.ky);

        let ux = irfft2(&spec_of(uxr, uxi)).unwrap();
        let uy_neg = irfft2(&spec_of(uyr_neg, uyi_neg)).unwrap();
        let wx = irfft2(&spec_of(wxr, wxi)).unwrap();
        let wy = irfft2(&spec_of(wyr, wyi)).unwrap();

        let mut adv = vec![0.0; n * n];
        let mut umax = 0.0f64;
        for p in 0..n * n {
            let ux_v = ux.data()[p];
            let uy_v = -uy_neg.data()[p];
            umax = umax.max(ux_v.abs()).max(uy_v.abs());
            adv[p] = ux_v * wx.data()[p] + uy_v * wy.data()[p];
        }
        let mut spec = rfft2(&Tensor::new(vec![1, n, n], adv).unwrap()).unwrap();
        {
            let re = spec.re.data_mut();
            for (k, keep) in self.dealias.iter().enumerate() {
                if !keep {
                    re[k] = 0.0;
                }
            }
        }
        {
            let im = spec.im.data_mut();
            for (k, keep) in self.dealias.iter().enumerate() {
                if !keep {
                    im[k] = 0.0;
                }
            }
        }
        (spec, umax)
    }
}

/// Integrate the vorticity equation from `w0`, recording one frame per unit
/// time: `t = 1, 2, …, t_end`.
pub fn solve_ns_vorticity(w0: &Tensor, spec: &NsSpec) -> Result<Vec<Tensor>> {
    spec.validate()?;
    let n = spec.grid;
    if w0.shape() != [n, n] {
        return Err(Error::invalid(format!(
            "w0 must be [{}, {}], got {:?}",
            n,
            n,
            w0.shape()
        )));
    }
    if w0.mean().abs() > 1e-8 {
        return Err(Error::invalid("w0 must have zero mean on the torus"));
    }
    let ws = NsWorkspace::new(spec);
    let cols = n / 2 + 1;
    let modes = n * cols;
    let h = 1.0 / n as f64;
    let dt_floor = spec.dt / 2f64.powi(24);

    let w3 = Tensor::new(vec![1, n, n], w0.data().to_vec())?;
    let mut w_hat = rfft2(&w3)?;
    let mut frames = Vec::with_capacity(spec.t_end);
    let mut t = 0.0f64;

    for frame in 1..=spec.t_end {
        let target = frame as f64;
        while t < target - 1e-12 {
            let (n0_hat, umax) = ws.advection(&w_hat);
            let mut dt = spec.dt.min(target - t);
            if umax > 0.0 {
                let cfl_dt = 0.4 * h / umax;
                while dt > cfl_dt {
                    dt *= 0.5;
                    if dt < dt_floor {
                        return Err(Error::SolverDiverged {
                            context: "NS CFL step collapse",
                            residual: umax,
                            iterations: frame,
                        });
                    }
                }
            }

            let step = |n_avg_re: &[f64], n_avg_im: &[f64]| -> Spectrum {
                let mut out_re = vec![0.0; modes];
                let mut out_im = vec![0.0; modes];
                let wr = w_hat.re.data();
                let wi = w_hat.im.data();
                for k in 0..modes {
                    let denom = 1.0 + 0.5 * dt * ws.lam[k];
                    let numer = 1.0 - 0.5 * dt * ws.lam[k];
                    let (fr, fi) = match &ws.forcing {
                        Some(f) => (f.re.data()[k], f.im.data()[k]),
                        None => (0.0, 0.0),
                    };
                    out_re[k] = (numer * wr[k] + dt * (fr - n_avg_re[k])) / denom;
                    out_im[k] = (numer * wi[k] + dt * (fi - n_avg_im[k])) / denom;
                }
                Spectrum {
                    re: Tensor::new(vec![1, n, cols], out_re).unwrap(),
                    im: Tensor::new(vec![1, n, cols], out_im).unwrap(),
                    spatial: (n, n),
                }
            };

            // predictor with the current advection, corrector with the average
            let w_pred = step(n0_hat.re.data(), n0_hat.im.data());
            let (n1_hat, _) = ws.advection(&w_pred);
            let avg_re: Vec<f64> = n0_hat
                .re
                .data()
                .iter()
                .zip(n1_hat.re.data())
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect();
            let avg_im: Vec<f64> = n0_hat
                .im
                .data()
                .iter()
                .zip(n1_hat.im.data())
                .map(|(&a, &b)| 0.5 * (a + b))
                .collect();
            w_hat = step(&avg_re, &avg_im);
            t += dt;
        }
        let w = irfft2(&w_hat)?;
        frames.push(Tensor::new(vec![n, n], w.into_data())?);
    }
    Ok(frames)
}

/// Grid enstrophy `Σ w²`.
pub fn enstrophy(w: &Tensor) -> f64 {
    w.data().iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_mode_decays_at_the_analytic_rate() {
        let n = 64;
        let spec = NsSpec {
            viscosity: 1e-3,
            grid: n,
            dt: 5e-3,
            t0: 1,
            t_end: 2,
            forcing_amp: 0.0,
            w0_smoothness: 49.0,
            w0_amp: 1.0,
        };
        let data: Vec<f64> = (0..n * n)
            .map(|p| (2.0 * std::f64::consts::PI * (p % n) as f64 / n as f64).cos())
            .collect();
        let w0 = Tensor::new(vec![n, n], data).unwrap();
        let frames = solve_ns_vorticity(&w0, &spec).unwrap();
        let decay = (-spec.viscosity * (2.0 * std::f64::consts::PI).powi(2)).exp();
        let mut max_rel = 0.0f64;
        for p in 0..n * n {
            let expect = decay * w0.data()[p];
            let got = frames[0].data()[p];
            if expect.abs() > 1e-6 {
                max_rel = max_rel.max((got - expect).abs() / expect.abs());
            }
        }
        assert!(max_rel < 1e-3, "analytic decay rel err {}", max_rel);
    }

    #[test]
    fn enstrophy_decays_without_forcing() {
        let spec = NsSpec {
            forcing_amp: 0.0,
            t_end: 12,
            ..NsSpec::tiny(1e-3)
        };
        let w0 = spec.sample_w0(3);
        let frames = solve_ns_vorticity(&w0, &spec).unwrap();
        let mut prev = enstrophy(&w0);
        for (i, f) in frames.iter().enumerate() {
            let e = enstrophy(f);
            assert!(e < prev, "enstrophy rose at frame {}: {} -> {}", i, prev, e);
            prev = e;
        }
    }

    #[test]
    fn mean_vorticity_is_conserved_with_zero_mean_forcing() {
        let spec = NsSpec {
            t_end: 5,
            ..NsSpec::tiny(1e-3)
        };
        let w0 = spec.sample_w0(4);
        let frames = solve_ns_vorticity(&w0, &spec).unwrap();
        for f in &frames {
            assert!(f.mean().abs() < 1e-12, "mean drifted to {}", f.mean());
        }
    }

    #[test]
    fn rejects_nonzero_mean_initial_state() {
        let spec = NsSpec::tiny(1e-3);
        let w0 = Tensor::filled(&[64, 64], 1.0);
        assert!(solve_ns_vorticity(&w0, &spec).is_err());
    }

    #[test]
    fn trajectories_are_deterministic() {
        let spec = NsSpec {
            t_end: 3,
            ..NsSpec::tiny(1e-3)
        };
        let w0 = spec.sample_w0(9);
        let a = solve_ns_vorticity(&w0, &spec).unwrap();
        let b = solve_ns_vorticity(&w0, &spec).unwrap();
        assert_eq!(a, b);
    }
}
