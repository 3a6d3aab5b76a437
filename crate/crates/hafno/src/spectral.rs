//! 2D real FFT, mode truncation and the learnable frequency-domain kernel.
//!
//! Conventions, stated once and pinned by tests:
//! - forward transform is unnormalized, `coeffs[0,0] = Σ x`;
//! - inverse divides by `H·W`, so `irfft2(rfft2(x)) == x`;
//! - real input keeps columns `0..=W/2` of the last axis; the missing half
//!   is implied by conjugate symmetry;
//! - truncation to `(m1, m2)` keeps rows `{0..m1} ∪ {H-m1..H}` (positive and
//!   negative row frequencies) and columns `{0..m2}`, packed as `[C, 2·m1, m2]`.
//!
//! Grids must be powers of two (the model pads before entry); the transform
//! is an iterative radix-2 Cooley–Tukey with bit-reversal.

use rand::Rng;

use crate::autodiff::{NodeId, Op, Tape};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Complex Fourier coefficients of a real field, split into re/im planes of
/// shape `[C, rows, cols]`. A full spectrum has `rows == H`, `cols == W/2+1`;
/// a truncated one has `rows == 2·m1`, `cols == m2`. `spatial` remembers the
/// grid the coefficients refer to.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub re: Tensor,
    pub im: Tensor,
    pub spatial: (usize, usize),
}

impl Spectrum {
    pub fn channels(&self) -> usize {
        self.re.shape()[0]
    }

    pub fn rows(&self) -> usize {
        self.re.shape()[1]
    }

    pub fn cols(&self) -> usize {
        self.re.shape()[2]
    }

    pub fn is_full(&self) -> bool {
        self.rows() == self.spatial.0 && self.cols() == self.spatial.1 / 2 + 1
    }

    /// Squared magnitude at a coefficient index.
    pub fn mag2(&self, ch: usize, r: usize, c: usize) -> f64 {
        let idx = (ch * self.rows() + r) * self.cols() + c;
        let re = self.re.data()[idx];
        let im = self.im.data()[idx];
        re * re + im * im
    }

    /// Spectral energy with conjugate-symmetric columns counted twice;
    /// by Parseval this equals `H·W · Σ x²` for a full spectrum.
    pub fn energy(&self) -> f64 {
        let (_, w) = self.spatial;
        let cols = self.cols();
        let mut total = 0.0;
        for ch in 0..self.channels() {
            for r in 0..self.rows() {
                for c in 0..cols {
                    let weight = if c == 0 || c == w / 2 { 1.0 } else { 2.0 };
                    total += weight * self.mag2(ch, r, c);
                }
            }
        }
        total
    }

    /// Coefficient at arbitrary integer frequencies, resolving indices outside
    /// the stored half-plane through conjugate symmetry of real input.
    pub fn full_coeff(&self, ch: usize, k1: i64, k2: i64) -> (f64, f64) {
        assert!(self.is_full(), "full_coeff needs an untruncated spectrum");
        let (h, w) = self.spatial;
        let k1 = k1.rem_euclid(h as i64) as usize;
        let k2 = k2.rem_euclid(w as i64) as usize;
        let cols = self.cols();
        if k2 < cols {
            let idx = (ch * h + k1) * cols + k2;
            (self.re.data()[idx], self.im.data()[idx])
        } else {
            let r = (h - k1) % h;
            let c = w - k2;
            let idx = (ch * h + r) * cols + c;
            (self.re.data()[idx], -self.im.data()[idx])
        }
    }
}

/// Learnable per-mode channel-mixing weights for the retained modes.
/// Real and imaginary parts are separate real tensors of shape
/// `[2·m1, m2, C_in, C_out]` so the autodiff engine stays real-valued.
#[derive(Clone, Debug)]
pub struct SpectralKernel {
    pub re: Tensor,
    pub im: Tensor,
    pub modes: (usize, usize),
}

impl SpectralKernel {
    pub fn init(m1: usize, m2: usize, c_in: usize, c_out: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (c_in as f64 * c_out as f64 * ((m1 * m2) as f64).sqrt());
        let n = 2 * m1 * m2 * c_in * c_out;
        let re: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let im: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
        let shape = vec![2 * m1, m2, c_in, c_out];
        SpectralKernel {
            re: Tensor::new(shape.clone(), re).unwrap(),
            im: Tensor::new(shape, im).unwrap(),
            modes: (m1, m2),
        }
    }

    /// Per-mode identity map (requires `c_in == c_out`); useful in tests.
    pub fn identity(m1: usize, m2: usize, c: usize) -> Self {
        let mut re = vec![0.0; 2 * m1 * m2 * c * c];
        for mode in 0..2 * m1 * m2 {
            for ch in 0..c {
                re[(mode * c + ch) * c + ch] = 1.0;
            }
        }
        let shape = vec![2 * m1, m2, c, c];
        SpectralKernel {
            re: Tensor::new(shape.clone(), re).unwrap(),
            im: Tensor::new(shape.clone(), vec![0.0; 2 * m1 * m2 * c * c]).unwrap(),
            modes: (m1, m2),
        }
    }

    pub fn zeros(m1: usize, m2: usize, c_in: usize, c_out: usize) -> Self {
        let shape = vec![2 * m1, m2, c_in, c_out];
        SpectralKernel {
            re: Tensor::zeros(&shape),
            im: Tensor::zeros(&shape),
            modes: (m1, m2),
        }
    }

    pub fn c_in(&self) -> usize {
        self.re.shape()[2]
    }

    pub fn c_out(&self) -> usize {
        self.re.shape()[3]
    }
}

// ---------------------------------------------------------------------------
// radix-2 complex FFT
// ---------------------------------------------------------------------------

struct Cfft {
    n: usize,
    tw_re: Vec<f64>,
    tw_im: Vec<f64>,
}

impl Cfft {
    fn new(n: usize) -> Self {
        assert!(n.is_power_of_two() && n >= 1);
        let half = n / 2;
        let mut tw_re = Vec::with_capacity(half);
        let mut tw_im = Vec::with_capacity(half);
        for j in 0..half {
            let ang = -2.0 * std::f64::consts::PI * j as f64 / n as f64;
            tw_re.push(ang.cos());
            tw_im.push(ang.sin());
        }
        Cfft { n, tw_re, tw_im }
    }

    fn butterflies(&self, re: &mut [f64], im: &mut [f64], conj: bool) {
        let n = self.n;
        // bit-reversal permutation
        let mut j = 0usize;
        for i in 1..n {
            let mut bit = n >> 1;
            while j & bit != 0 {
                j ^= bit;
                bit >>= 1;
            }
            j |= bit;
            if i < j {
                re.swap(i, j);
                im.swap(i, j);
            }
        }
        let sign = if conj { -1.0 } else { 1.0 };
        let mut len = 2;
        while len <= n {
            let half = len / 2;
            let step = n / len;
            for base in (0..n).step_by(len) {
                for k in 0..half {
                    let wr = self.tw_re[k * step];
                    let wi = sign * self.tw_im[k * step];
                    let (ar, ai) = (re[base + k], im[base + k]);
                    let (br, bi) = (re[base + k + half], im[base + k + half]);
                    let tr = wr * br - wi * bi;
                    let ti = wr * bi + wi * br;
                    re[base + k] = ar + tr;
                    im[base + k] = ai + ti;
                    re[base + k + half] = ar - tr;
                    im[base + k + half] = ai - ti;
                }
            }
            len <<= 1;
        }
    }

    /// Unnormalized forward DFT.
    fn forward(&self, re: &mut [f64], im: &mut [f64]) {
        self.butterflies(re, im, false);
    }

    /// Inverse DFT including the 1/n factor.
    fn inverse(&self, re: &mut [f64], im: &mut [f64]) {
        self.butterflies(re, im, true);
        let inv = 1.0 / self.n as f64;
        for v in re.iter_mut() {
            *v *= inv;
        }
        for v in im.iter_mut() {
            *v *= inv;
        }
    }
}

fn check_grid(h: usize, w: usize) -> Result<()> {
    if h < 2 || w < 2 {
        return Err(Error::invalid(format!("grid {}x{} too small for FFT", h, w)));
    }
    if !h.is_power_of_two() || !w.is_power_of_two() {
        return Err(Error::invalid(format!(
            "grid {}x{} is not a power of two (pad before the transform)",
            h, w
        )));
    }
    Ok(())
}

/// Forward 2D real FFT of a `[C, H, W]` tensor (unnormalized).
pub fn rfft2(x: &Tensor) -> Result<Spectrum> {
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::invalid(format!("rfft2 expects [C,H,W], got {:?}", s)));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    check_grid(h, w)?;
    let cols = w / 2 + 1;
    let row_fft = Cfft::new(w);
    let col_fft = Cfft::new(h);
    let xv = x.data();
    let mut out_re = vec![0.0; c * h * cols];
    let mut out_im = vec![0.0; c * h * cols];
    let mut row_re = vec![0.0; w];
    let mut row_im = vec![0.0; w];
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for ch in 0..c {
        // rows: real data, keep the non-redundant half
        for i in 0..h {
            row_re.copy_from_slice(&xv[(ch * h + i) * w..(ch * h + i + 1) * w]);
            row_im.fill(0.0);
            row_fft.forward(&mut row_re, &mut row_im);
            for j in 0..cols {
                out_re[(ch * h + i) * cols + j] = row_re[j];
                out_im[(ch * h + i) * cols + j] = row_im[j];
            }
        }
        // columns: complex
        for j in 0..cols {
            for i in 0..h {
                col_re[i] = out_re[(ch * h + i) * cols + j];
                col_im[i] = out_im[(ch * h + i) * cols + j];
            }
            col_fft.forward(&mut col_re, &mut col_im);
            for i in 0..h {
                out_re[(ch * h + i) * cols + j] = col_re[i];
                out_im[(ch * h + i) * cols + j] = col_im[i];
            }
        }
    }
    Ok(Spectrum {
        re: Tensor::new(vec![c, h, cols], out_re)?,
        im: Tensor::new(vec![c, h, cols], out_im)?,
        spatial: (h, w),
    })
}

/// Inverse of [`rfft2`], normalized by `H·W`. The stored half-spectrum is
/// extended by conjugate symmetry and the real part of the inverse is taken.
pub fn irfft2(s: &Spectrum) -> Result<Tensor> {
    let (h, w) = s.spatial;
    check_grid(h, w)?;
    let cols = w / 2 + 1;
    if s.rows() != h || s.cols() != cols {
        return Err(Error::invalid(format!(
            "irfft2: coefficient block {}x{} inconsistent with spatial dims {}x{}",
            s.rows(),
            s.cols(),
            h,
            w
        )));
    }
    let c = s.channels();
    let row_fft = Cfft::new(w);
    let col_fft = Cfft::new(h);
    let sre = s.re.data();
    let sim = s.im.data();
    let mut out = vec![0.0; c * h * w];
    let mut buf_re = vec![0.0; h * cols];
    let mut buf_im = vec![0.0; h * cols];
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    let mut row_re = vec![0.0; w];
    let mut row_im = vec![0.0; w];
    for ch in 0..c {
        for j in 0..cols {
            for i in 0..h {
                col_re[i] = sre[(ch * h + i) * cols + j];
                col_im[i] = sim[(ch * h + i) * cols + j];
            }
            col_fft.inverse(&mut col_re, &mut col_im);
            for i in 0..h {
                buf_re[i * cols + j] = col_re[i];
                buf_im[i * cols + j] = col_im[i];
            }
        }
        for i in 0..h {
            for j in 0..cols {
                row_re[j] = buf_re[i * cols + j];
                row_im[j] = buf_im[i * cols + j];
            }
            for j in cols..w {
                row_re[j] = buf_re[i * cols + (w - j)];
                row_im[j] = -buf_im[i * cols + (w - j)];
            }
            row_fft.inverse(&mut row_re, &mut row_im);
            out[(ch * h + i) * w..(ch * h + i + 1) * w].copy_from_slice(&row_re);
        }
    }
    Ok(Tensor::new(vec![c, h, w], out)?)
}

/// Keep rows `{0..m1} ∪ {H-m1..H}` and columns `{0..m2}` of a full spectrum,
/// packed as `[C, 2·m1, m2]`.
pub fn truncate_modes(s: &Spectrum, m1: usize, m2: usize) -> Result<Spectrum> {
    let (h, w) = s.spatial;
    if !s.is_full() {
        return Err(Error::invalid("truncate_modes expects a full spectrum"));
    }
    if m1 == 0 || m2 == 0 || m1 > h / 2 || m2 > w / 2 + 1 {
        return Err(Error::invalid(format!(
            "mode cut ({}, {}) exceeds Nyquist of {}x{} grid",
            m1, m2, h, w
        )));
    }
    let c = s.channels();
    let cols = s.cols();
    let sre = s.re.data();
    let sim = s.im.data();
    let mut re = vec![0.0; c * 2 * m1 * m2];
    let mut im = vec![0.0; c * 2 * m1 * m2];
    for ch in 0..c {
        for rc in 0..2 * m1 {
            let r = compact_to_full_row(rc, m1, h);
            for j in 0..m2 {
                let src = (ch * h + r) * cols + j;
                let dst = (ch * 2 * m1 + rc) * m2 + j;
                re[dst] = sre[src];
                im[dst] = sim[src];
            }
        }
    }
    Ok(Spectrum {
        re: Tensor::new(vec![c, 2 * m1, m2], re)?,
        im: Tensor::new(vec![c, 2 * m1, m2], im)?,
        spatial: (h, w),
    })
}

/// Zero-fill a truncated spectrum back to the full `[C, H, W/2+1]` layout.
pub fn pad_modes(s: &Spectrum) -> Result<Spectrum> {
    let (h, w) = s.spatial;
    if s.rows() % 2 != 0 {
        return Err(Error::invalid("pad_modes expects a truncated spectrum"));
    }
    let m1 = s.rows() / 2;
    let m2 = s.cols();
    if m1 > h / 2 || m2 > w / 2 + 1 {
        return Err(Error::invalid("truncated block exceeds target grid"));
    }
    let c = s.channels();
    let cols = w / 2 + 1;
    let sre = s.re.data();
    let sim = s.im.data();
    let mut re = vec![0.0; c * h * cols];
    let mut im = vec![0.0; c * h * cols];
    for ch in 0..c {
        for rc in 0..2 * m1 {
            let r = compact_to_full_row(rc, m1, h);
            for j in 0..m2 {
                let src = (ch * 2 * m1 + rc) * m2 + j;
                let dst = (ch * h + r) * cols + j;
                re[dst] = sre[src];
                im[dst] = sim[src];
            }
        }
    }
    Ok(Spectrum {
        re: Tensor::new(vec![c, h, cols], re)?,
        im: Tensor::new(vec![c, h, cols], im)?,
        spatial: (h, w),
    })
}

fn compact_to_full_row(rc: usize, m1: usize, h: usize) -> usize {
    if rc < m1 {
        rc
    } else {
        h - 2 * m1 + rc
    }
}

/// Project a truncated spectrum onto coefficients of a real field that is
/// exactly band-limited to the kept set.
///
/// In the self-conjugate columns (0 and W/2) a real field needs
/// `X[r] == conj(X[H-r])`. The kept rows `{0..m1} ∪ {H-m1..H}` pair up except
/// for the orphan `H-m1` (its mirror `m1` is not kept), so pairs are
/// averaged, self-paired rows lose their imaginary part, and the orphan is
/// zeroed. Other columns have their conjugate partners implied by the
/// storage layout and need no fixing. The map is an orthogonal projection,
/// hence self-adjoint, which the backward rule relies on.
pub(crate) fn hermitian_project_kept(s: &mut Spectrum) {
    let (h, w) = s.spatial;
    let m1 = s.rows() / 2;
    let m2 = s.cols();
    let c = s.channels();
    let modes = 2 * m1 * m2;
    let re = s.re.data_mut();
    let im_t = &mut s.im;
    let im = im_t.data_mut();
    for col in [0usize, w / 2] {
        if col >= m2 {
            continue;
        }
        for ch in 0..c {
            let at = |rc: usize| ch * modes + rc * m2 + col;
            // DC row is self-paired
            im[at(0)] = 0.0;
            for j in 1..m1 {
                let a = at(j);
                let b = at(2 * m1 - j);
                let ar = 0.5 * (re[a] + re[b]);
                let ai = 0.5 * (im[a] - im[b]);
                re[a] = ar;
                im[a] = ai;
                re[b] = ar;
                im[b] = -ai;
            }
            // compact row m1 is full row H-m1: self-paired at the Nyquist
            // row (m1 == H/2), otherwise an orphan
            if m1 == h / 2 {
                im[at(m1)] = 0.0;
            } else {
                re[at(m1)] = 0.0;
                im[at(m1)] = 0.0;
            }
        }
    }
}

/// Projection of a field onto the kept-mode band: the identity-kernel
/// spectral unit. Useful for constructing exactly band-limited fixtures.
pub fn band_limit(x: &Tensor, m1: usize, m2: usize) -> Result<Tensor> {
    let mut t = truncate_modes(&rfft2(x)?, m1, m2)?;
    hermitian_project_kept(&mut t);
    irfft2(&pad_modes(&t)?)
}

/// Per-mode complex channel mixing: `out[k, co] = Σ_ci R[k, ci, co] · s[k, ci]`.
pub fn spectral_multiply(s: &Spectrum, kernel: &SpectralKernel) -> Result<Spectrum> {
    let modes = s.rows() * s.cols();
    let kr = kernel.re.shape();
    if kr[0] != s.rows() || kr[1] != s.cols() || kr[2] != s.channels() {
        return Err(Error::ShapeMismatch {
            context: "spectral_multiply",
            lhs: s.re.shape().to_vec(),
            rhs: kr.to_vec(),
        });
    }
    let (c_in, c_out) = (kernel.c_in(), kernel.c_out());
    let sre = s.re.data();
    let sim = s.im.data();
    let wre = kernel.re.data();
    let wim = kernel.im.data();
    let (rows, cols) = (s.rows(), s.cols());
    let mut ore = vec![0.0; c_out * modes];
    let mut oim = vec![0.0; c_out * modes];
    for k in 0..modes {
        for ci in 0..c_in {
            let xr = sre[ci * modes + k];
            let xi = sim[ci * modes + k];
            let wbase = (k * c_in + ci) * c_out;
            for co in 0..c_out {
                let wr = wre[wbase + co];
                let wi = wim[wbase + co];
                ore[co * modes + k] += wr * xr - wi * xi;
                oim[co * modes + k] += wr * xi + wi * xr;
            }
        }
    }
    Ok(Spectrum {
        re: Tensor::new(vec![c_out, rows, cols], ore)?,
        im: Tensor::new(vec![c_out, rows, cols], oim)?,
        spatial: s.spatial,
    })
}

/// Like [`spectral_multiply`] with the conjugate-transposed kernel:
/// `out[k, ci] = Σ_co conj(R[k, ci, co]) · s[k, co]`.
fn spectral_multiply_adjoint(s: &Spectrum, kernel: &SpectralKernel) -> Spectrum {
    let modes = s.rows() * s.cols();
    let (c_in, c_out) = (kernel.c_in(), kernel.c_out());
    debug_assert_eq!(s.channels(), c_out);
    let sre = s.re.data();
    let sim = s.im.data();
    let wre = kernel.re.data();
    let wim = kernel.im.data();
    let mut ore = vec![0.0; c_in * modes];
    let mut oim = vec![0.0; c_in * modes];
    for k in 0..modes {
        for ci in 0..c_in {
            let wbase = (k * c_in + ci) * c_out;
            let mut ar = 0.0;
            let mut ai = 0.0;
            for co in 0..c_out {
                let wr = wre[wbase + co];
                let wi = wim[wbase + co];
                let gr = sre[co * modes + k];
                let gi = sim[co * modes + k];
                // conj(w) * g
                ar += wr * gr + wi * gi;
                ai += wr * gi - wi * gr;
            }
            ore[ci * modes + k] = ar;
            oim[ci * modes + k] = ai;
        }
    }
    Spectrum {
        re: Tensor::new(vec![c_in, s.rows(), s.cols()], ore).unwrap(),
        im: Tensor::new(vec![c_in, s.rows(), s.cols()], oim).unwrap(),
        spatial: s.spatial,
    }
}

/// Forward value of the spectral unit:
/// `irfft2(pad(R · truncate(rfft2(x))))`.
pub fn fourier_unit_value(
    x: &Tensor,
    weight_re: &Tensor,
    weight_im: &Tensor,
    modes: (usize, usize),
) -> Result<Tensor> {
    let kernel = SpectralKernel {
        re: weight_re.clone(),
        im: weight_im.clone(),
        modes,
    };
    let spec = rfft2(x)?;
    let trunc = truncate_modes(&spec, modes.0, modes.1)?;
    let mut mixed = spectral_multiply(&trunc, &kernel)?;
    hermitian_project_kept(&mut mixed);
    irfft2(&pad_modes(&mixed)?)
}

/// Graph insertion for the spectral unit; called through
/// [`Tape::fourier_unit`].
pub(crate) fn fourier_unit(
    tape: &mut Tape,
    x: NodeId,
    weight_re: NodeId,
    weight_im: NodeId,
    modes: (usize, usize),
) -> Result<NodeId> {
    let xs = tape.value(x).shape().to_vec();
    if xs.len() != 3 {
        return Err(Error::invalid("fourier_unit expects x [C,H,W]"));
    }
    let ws = tape.value(weight_re).shape().to_vec();
    if tape.value(weight_im).shape() != &ws[..] {
        return Err(Error::ShapeMismatch {
            context: "fourier_unit weight re/im",
            lhs: ws,
            rhs: tape.value(weight_im).shape().to_vec(),
        });
    }
    if ws.len() != 4 || ws[0] != 2 * modes.0 || ws[1] != modes.1 || ws[2] != xs[0] {
        return Err(Error::ShapeMismatch {
            context: "fourier_unit weights vs input",
            lhs: xs,
            rhs: ws,
        });
    }
    let value = fourier_unit_value(
        tape.value(x),
        tape.value(weight_re),
        tape.value(weight_im),
        modes,
    )?;
    Ok(tape.push_op(
        value,
        Op::FourierUnit {
            x,
            weight_re,
            weight_im,
            modes,
        },
        &[x, weight_re, weight_im],
    ))
}

/// Backward rule of the spectral unit, written out in re/im parts.
///
/// With `A = rfft2` (unnormalized), `B = irfft2` (1/HW-normalized) and `C`
/// the per-mode double-count diagonal (2 on conjugate-symmetric column
/// pairs), the adjoints are `Bᵀ = (C/HW)·A` and `Aᵀ = HW·B·C⁻¹`. Composed
/// through the per-mode kernel the C factors cancel, so the input gradient
/// is again a spectral unit with the conjugate-transposed kernel, while the
/// weight gradient keeps the `C/HW` scaling.
pub(crate) fn fourier_unit_backward(
    g: &Tensor,
    x: &Tensor,
    weight_re: &Tensor,
    weight_im: &Tensor,
    modes: (usize, usize),
    need_x: bool,
    need_w: bool,
) -> (Option<Tensor>, Option<Tensor>, Option<Tensor>) {
    let kernel = SpectralKernel {
        re: weight_re.clone(),
        im: weight_im.clone(),
        modes,
    };
    let (m1, m2) = modes;
    let mut g_spec = truncate_modes(&rfft2(g).unwrap(), m1, m2).unwrap();
    hermitian_project_kept(&mut g_spec);

    let gx = if need_x {
        let adj = spectral_multiply_adjoint(&g_spec, &kernel);
        Some(irfft2(&pad_modes(&adj).unwrap()).unwrap())
    } else {
        None
    };

    let (gwr, gwi) = if need_w {
        let (h, w) = g_spec.spatial;
        let norm = 1.0 / (h * w) as f64;
        let s_x = truncate_modes(&rfft2(x).unwrap(), m1, m2).unwrap();
        let (c_in, c_out) = (kernel.c_in(), kernel.c_out());
        let modes_n = 2 * m1 * m2;
        let sre = s_x.re.data();
        let sim = s_x.im.data();
        let gre = g_spec.re.data();
        let gim = g_spec.im.data();
        let mut gwr = vec![0.0; modes_n * c_in * c_out];
        let mut gwi = vec![0.0; modes_n * c_in * c_out];
        for k in 0..modes_n {
            let col = k % m2;
            let weight = if col == 0 || col == w / 2 { 1.0 } else { 2.0 };
            let scale = weight * norm;
            for ci in 0..c_in {
                let xr = sre[ci * modes_n + k];
                let xi = sim[ci * modes_n + k];
                let base = (k * c_in + ci) * c_out;
                for co in 0..c_out {
                    let gr = gre[co * modes_n + k] * scale;
                    let gi = gim[co * modes_n + k] * scale;
                    // d out / d wr = s, d out / d wi = i·s
                    gwr[base + co] += gr * xr + gi * xi;
                    gwi[base + co] += gi * xr - gr * xi;
                }
            }
        }
        let shape = vec![2 * m1, m2, c_in, c_out];
        (
            Some(Tensor::new(shape.clone(), gwr).unwrap()),
            Some(Tensor::new(shape, gwi).unwrap()),
        )
    } else {
        (None, None)
    };

    (gx, gwr, gwi)
}
