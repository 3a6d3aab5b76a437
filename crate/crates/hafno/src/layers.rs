//! The two per-scale building blocks: the convolutional-residual Fourier
//! layer and the serial channel→spatial attention block with residual.
//!
//! Everything here is exactly equivariant to cyclic shifts on the discrete
//! torus: spatial reductions are global or circular, so attention maps shift
//! with their input and multiplying the input by them before the (circular)
//! convolution factorizes as `[f ⋆ᵅ ψ] = [(αˣ αᶜ f) ⋆ ψ]`. The brute-force
//! check of that identity lives in
//! [`attentive_conv_factorization_check`].

use rand::Rng;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::spectral::SpectralKernel;
use crate::tensor::Tensor;

/// Residual branch of the Fourier layer. The convolution is the default;
/// the other variants implement the replacement ablations.
#[derive(Clone, Debug)]
pub enum ResidualParams {
    /// Circular 3×3 convolution, `kernel: [C_out, C_in, 3, 3]`.
    Conv { kernel: Tensor, bias: Tensor },
    /// Per-point linear map, `weight: [C_out, C_in]`.
    Pointwise { weight: Tensor, bias: Tensor },
    /// Identity passthrough (requires `C_in == C_out`).
    Identity,
}

#[derive(Clone, Copy, Debug)]
pub enum ResidualNodes {
    Conv { kernel: NodeId, bias: NodeId },
    Pointwise { weight: NodeId, bias: NodeId },
    Identity,
}

/// Parameters of one convolutional-residual Fourier layer:
/// `out = GELU(residual(v) + irfft2(R · rfft2(v)))`.
/// `spectral: None` drops the frequency branch entirely.
#[derive(Clone, Debug)]
pub struct ConvResFourierParams {
    pub spectral: Option<SpectralKernel>,
    pub residual: ResidualParams,
}

#[derive(Clone, Copy, Debug)]
pub struct ConvResFourierNodes {
    pub spectral: Option<(NodeId, NodeId, (usize, usize))>,
    pub residual: ResidualNodes,
}

impl ConvResFourierParams {
    pub fn init(
        c_in: usize,
        c_out: usize,
        modes: (usize, usize),
        rng: &mut impl Rng,
    ) -> Self {
        ConvResFourierParams {
            spectral: Some(SpectralKernel::init(modes.0, modes.1, c_in, c_out, rng)),
            residual: ResidualParams::Conv {
                kernel: uniform_fan_in(&[c_out, c_in, 3, 3], c_in * 9, rng),
                bias: Tensor::zeros(&[c_out]),
            },
        }
    }
}

/// CBAM-style attention parameters: a shared two-layer pointwise MLP over
/// the avg- and max-pooled channel descriptors, and a 7×7 circular
/// convolution over the channel mean/max planes.
#[derive(Clone, Debug)]
pub struct AttentionParams {
    pub mlp_w1: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_w2: Tensor,
    pub mlp_b2: Tensor,
    pub spatial_kernel: Tensor,
    pub spatial_bias: Tensor,
    pub reduction: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionNodes {
    pub mlp_w1: NodeId,
    pub mlp_b1: NodeId,
    pub mlp_w2: NodeId,
    pub mlp_b2: NodeId,
    pub spatial_kernel: NodeId,
    pub spatial_bias: NodeId,
}

pub const SPATIAL_ATTENTION_KERNEL: usize = 7;

impl AttentionParams {
    pub fn init(channels: usize, reduction: usize, rng: &mut impl Rng) -> Result<Self> {
        if reduction == 0 || channels % reduction != 0 {
            return Err(Error::invalid(format!(
                "attention reduction {} must divide channel count {}",
                reduction, channels
            )));
        }
        let hidden = channels / reduction;
        let k = SPATIAL_ATTENTION_KERNEL;
        Ok(AttentionParams {
            mlp_w1: uniform_fan_in(&[hidden, channels], channels, rng),
            mlp_b1: Tensor::zeros(&[hidden]),
            mlp_w2: uniform_fan_in(&[channels, hidden], hidden, rng),
            mlp_b2: Tensor::zeros(&[channels]),
            spatial_kernel: uniform_fan_in(&[1, 2, k, k], 2 * k * k, rng),
            spatial_bias: Tensor::zeros(&[1]),
            reduction,
        })
    }
}

pub(crate) fn uniform_fan_in(shape: &[usize], fan_in: usize, rng: &mut impl Rng) -> Tensor {
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-bound..bound)).collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Channel attention map `αᶜ = sigmoid(MLP(avgpool(a)) + MLP(maxpool(a)))`,
/// one scalar per channel, returned as `[C, 1, 1]`.
pub fn channel_attention(tape: &mut Tape, a: NodeId, p: &AttentionNodes) -> Result<NodeId> {
    let avg = tape.global_avg_pool(a)?;
    let mx = tape.global_max_pool(a)?;
    let mlp = |tape: &mut Tape, d: NodeId| -> Result<NodeId> {
        let h = tape.pointwise_linear(d, p.mlp_w1, p.mlp_b1)?;
        let h = tape.gelu(h);
        tape.pointwise_linear(h, p.mlp_w2, p.mlp_b2)
    };
    let da = mlp(tape, avg)?;
    let dm = mlp(tape, mx)?;
    let s = tape.add(da, dm)?;
    Ok(tape.sigmoid(s))
}

/// Spatial attention map
/// `αˣ = sigmoid(conv7x7(concat(mean_c(a), max_c(a))))`, one scalar per
/// position, returned as `[1, H, W]`.
pub fn spatial_attention(tape: &mut Tape, a: NodeId, p: &AttentionNodes) -> Result<NodeId> {
    let mean = tape.mean_channels(a)?;
    let max = tape.max_channels(a)?;
    let stacked = tape.concat_channels(mean, max)?;
    let conv = tape.conv2d_circular(stacked, p.spatial_kernel, p.spatial_bias)?;
    Ok(tape.sigmoid(conv))
}

/// Combine precomputed attention maps with the input:
/// `v = αˣ ⊗ (αᶜ ⊗ a) + a`. Split out so tests can force the maps.
pub fn apply_attention(
    tape: &mut Tape,
    a: NodeId,
    alpha_c: NodeId,
    alpha_x: NodeId,
) -> Result<NodeId> {
    let ac = tape.scale_channels(a, alpha_c)?;
    let axc = tape.scale_spatial(ac, alpha_x)?;
    tape.add(axc, a)
}

/// Serial channel-then-spatial attention with residual (the per-scale gate).
pub fn attention_block(tape: &mut Tape, a: NodeId, p: &AttentionNodes) -> Result<NodeId> {
    let alpha_c = channel_attention(tape, a, p)?;
    let ac = tape.scale_channels(a, alpha_c)?;
    let alpha_x = spatial_attention(tape, ac, p)?;
    let axc = tape.scale_spatial(ac, alpha_x)?;
    tape.add(axc, a)
}

/// Convolutional-residual Fourier layer:
/// `out = GELU(residual(v) + spectral(v))`.
pub fn conv_res_fourier(tape: &mut Tape, v: NodeId, p: &ConvResFourierNodes) -> Result<NodeId> {
    let res = match p.residual {
        ResidualNodes::Conv { kernel, bias } => Some(tape.conv2d_circular(v, kernel, bias)?),
        ResidualNodes::Pointwise { weight, bias } => {
            Some(tape.pointwise_linear(v, weight, bias)?)
        }
        ResidualNodes::Identity => Some(v),
    };
    let spec = match p.spectral {
        Some((wr, wi, modes)) => Some(tape.fourier_unit(v, wr, wi, modes)?),
        None => None,
    };
    let pre = match (res, spec) {
        (Some(r), Some(s)) => tape.add(r, s)?,
        (Some(r), None) => r,
        (None, Some(s)) => s,
        (None, None) => v,
    };
    Ok(tape.gelu(pre))
}

/// Pointwise two-layer MLP with residual; the attention-replacement
/// ablation. Parameter shapes mirror the channel-attention MLP.
pub fn mlp_gate(
    tape: &mut Tape,
    a: NodeId,
    w1: NodeId,
    b1: NodeId,
    w2: NodeId,
    b2: NodeId,
) -> Result<NodeId> {
    let h = tape.pointwise_linear(a, w1, b1)?;
    let h = tape.gelu(h);
    let out = tape.pointwise_linear(h, w2, b2)?;
    tape.add(out, a)
}

/// Brute-force check of the attentive-convolution factorization.
///
/// The left side evaluates the attention-weighted correlation position by
/// position: `out[co](x) = Σ_ci Σ_x̃ αˣ(x̃)·αᶜ(ci)·f[ci](x̃)·ψ[co,ci](x̃−x)`
/// summing over every grid point `x̃` of the torus, with `ψ` supported on
/// offsets in `[-r, r]²`. The right side weights the input first and then
/// runs the production circular convolution. Returns the max abs deviation.
pub fn attentive_conv_factorization_check(
    f: &Tensor,
    psi: &Tensor,
    alpha_c: &[f64],
    alpha_x: &Tensor,
) -> Result<f64> {
    let fs = f.shape();
    let ps = psi.shape();
    if fs.len() != 3 || ps.len() != 4 || ps[1] != fs[0] {
        return Err(Error::invalid("factorization check: bad shapes"));
    }
    let (c_in, h, w) = (fs[0], fs[1], fs[2]);
    let (c_out, kh, kw) = (ps[0], ps[2], ps[3]);
    if alpha_c.len() != c_in || alpha_x.shape() != [h, w] {
        return Err(Error::invalid("factorization check: attention map shapes"));
    }
    let (rh, rw) = (kh as i64 / 2, kw as i64 / 2);
    let fv = f.data();
    let pv = psi.data();
    let av = alpha_x.data();

    // left side: explicit sum over the whole torus
    let mut lhs = vec![0.0; c_out * h * w];
    for co in 0..c_out {
        for y in 0..h as i64 {
            for x in 0..w as i64 {
                let mut acc = 0.0;
                for ty in 0..h as i64 {
                    for tx in 0..w as i64 {
                        let dy = signed_offset(ty - y, h as i64, rh);
                        let dx = signed_offset(tx - x, w as i64, rw);
                        let (dy, dx) = match (dy, dx) {
                            (Some(a), Some(b)) => (a, b),
                            _ => continue,
                        };
                        let alpha = av[(ty * w as i64 + tx) as usize];
                        for ci in 0..c_in {
                            let fval = fv[ci * h * w + (ty * w as i64 + tx) as usize];
                            let kidx = ((co * c_in + ci) * kh as usize
                                + (dy + rh) as usize)
                                * kw as usize
                                + (dx + rw) as usize;
                            acc += alpha * alpha_c[ci] * fval * pv[kidx];
                        }
                    }
                }
                lhs[co * h * w + (y * w as i64 + x) as usize] = acc;
            }
        }
    }

    // right side: weight the input, then convolve through the normal path
    let mut weighted = vec![0.0; c_in * h * w];
    for ci in 0..c_in {
        for p in 0..h * w {
            weighted[ci * h * w + p] = alpha_c[ci] * av[p] * fv[ci * h * w + p];
        }
    }
    let mut tape = Tape::new();
    let win = tape.constant(Tensor::new(vec![c_in, h, w], weighted)?);
    let kn = tape.constant(psi.clone());
    let bn = tape.constant(Tensor::zeros(&[c_out]));
    let rhs = tape.conv2d_circular(win, kn, bn)?;

    let lhs_t = Tensor::new(vec![c_out, h, w], lhs)?;
    Ok(lhs_t.sub(tape.value(rhs))?.max_abs())
}

/// Map a torus offset to the signed kernel window `[-r, r]`, or `None` when
/// the filter does not reach it.
fn signed_offset(d: i64, n: i64, r: i64) -> Option<i64> {
    let m = d.rem_euclid(n);
    if m <= r {
        Some(m)
    } else if m >= n - r {
        Some(m - n)
    } else {
        None
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed;
    use rand::Rng;

    fn randn(shape: &[usize], seed_v: u64) -> Tensor {
        let mut rng = seed::rng(seed_v);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    fn attention_nodes(tape: &mut Tape, p: &AttentionParams, trainable: bool) -> AttentionNodes {
        let mut ins = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        AttentionNodes {
            mlp_w1: ins(&p.mlp_w1),
            mlp_b1: ins(&p.mlp_b1),
            mlp_w2: ins(&p.mlp_w2),
            mlp_b2: ins(&p.mlp_b2),
            spatial_kernel: ins(&p.spatial_kernel),
            spatial_bias: ins(&p.spatial_bias),
        }
    }

    fn zero_attention(c: usize, r: usize) -> AttentionParams {
        let k = SPATIAL_ATTENTION_KERNEL;
        AttentionParams {
            mlp_w1: Tensor::zeros(&[c / r, c]),
            mlp_b1: Tensor::zeros(&[c / r]),
            mlp_w2: Tensor::zeros(&[c, c / r]),
            mlp_b2: Tensor::zeros(&[c]),
            spatial_kernel: Tensor::zeros(&[1, 2, k, k]),
            spatial_bias: Tensor::zeros(&[1]),
            reduction: r,
        }
    }

    #[test]
    fn zero_weights_give_half_attention_everywhere() {
        let p = zero_attention(4, 2);
        let mut tape = Tape::new();
        let a = tape.constant(randn(&[4, 8, 8], 1));
        let nodes = attention_nodes(&mut tape, &p, false);
        let ac = channel_attention(&mut tape, a, &nodes).unwrap();
        assert!(tape.value(ac).data().iter().all(|&v| v == 0.5));
        let ax = spatial_attention(&mut tape, a, &nodes).unwrap();
        assert!(tape.value(ax).data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn channel_attention_is_shift_invariant_and_spatially_constant() {
        let mut rng = seed::rng(7);
        let p = AttentionParams::init(4, 2, &mut rng).unwrap();
        let x = randn(&[4, 8, 8], 2);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let a = tape.constant(x.clone());
            let nodes = attention_nodes(&mut tape, &p, false);
            let ac = channel_attention(&mut tape, a, &nodes).unwrap();
            tape.value(ac).clone()
        };
        let base = run(&x);
        assert_eq!(base.shape(), &[4, 1, 1]);
        let shifted = run(&x.cyclic_shift2(3, 5));
        assert_eq!(base, shifted);
    }

    #[test]
    fn spatial_attention_shifts_with_input_and_stays_in_range() {
        let mut rng = seed::rng(8);
        let p = AttentionParams::init(4, 2, &mut rng).unwrap();
        let x = randn(&[4, 16, 16], 3);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let a = tape.constant(x.clone());
            let nodes = attention_nodes(&mut tape, &p, false);
            let ax = spatial_attention(&mut tape, a, &nodes).unwrap();
            tape.value(ax).clone()
        };
        let base = run(&x);
        assert!(base.data().iter().all(|&v| v > 0.0 && v < 1.0));
        let a = run(&x.cyclic_shift2(5, -3));
        let b = base.cyclic_shift2(5, -3);
        assert!(a.sub(&b).unwrap().max_abs() < 1e-12);

        // constant input → constant map
        let c = run(&Tensor::filled(&[4, 16, 16], 0.3));
        let first = c.data()[0];
        assert!(c.data().iter().all(|&v| (v - first).abs() < 1e-15));

        // grid smaller than the 7×7 kernel is rejected
        let mut tape = Tape::new();
        let small = tape.constant(Tensor::zeros(&[4, 4, 4]));
        let nodes = attention_nodes(&mut tape, &p, false);
        assert!(spatial_attention(&mut tape, small, &nodes).is_err());
    }

    #[test]
    fn forced_unit_maps_double_the_input() {
        let x = randn(&[3, 8, 8], 4);
        let mut tape = Tape::new();
        let a = tape.constant(x.clone());
        let ones_c = tape.constant(Tensor::filled(&[3, 1, 1], 1.0));
        let ones_x = tape.constant(Tensor::filled(&[1, 8, 8], 1.0));
        let v = apply_attention(&mut tape, a, ones_c, ones_x).unwrap();
        assert!(tape.value(v).sub(&x.scale(2.0)).unwrap().max_abs() < 1e-15);
    }

    #[test]
    fn attention_block_is_shift_equivariant() {
        let mut rng = seed::rng(9);
        let p = AttentionParams::init(8, 4, &mut rng).unwrap();
        let x = randn(&[8, 16, 16], 5);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let a = tape.constant(x.clone());
            let nodes = attention_nodes(&mut tape, &p, false);
            let v = attention_block(&mut tape, a, &nodes).unwrap();
            tape.value(v).clone()
        };
        for &(si, sj) in &[(1i64, 0i64), (7, 11), (-4, 3)] {
            let a = run(&x.cyclic_shift2(si, sj));
            let b = run(&x).cyclic_shift2(si, sj);
            assert!(a.sub(&b).unwrap().max_abs() < 1e-11);
        }
    }

    #[test]
    fn channel_attention_gradcheck_through_gating() {
        let mut rng = seed::rng(10);
        let p = AttentionParams::init(4, 2, &mut rng).unwrap();
        let x0 = randn(&[4, 8, 8], 6);
        let eval = |w1: &Tensor| -> f64 {
            let mut tape = Tape::new();
            let a = tape.constant(x0.clone());
            let mut p2 = p.clone();
            p2.mlp_w1 = w1.clone();
            let nodes = attention_nodes(&mut tape, &p2, false);
            let ac = channel_attention(&mut tape, a, &nodes).unwrap();
            let gated = tape.scale_channels(a, ac).unwrap();
            let s = tape.sum(gated);
            tape.value(s).item()
        };
        // analytic gradient
        let mut tape = Tape::new();
        let a = tape.constant(x0.clone());
        let w1 = tape.param(p.mlp_w1.clone());
        let nodes = AttentionNodes {
            mlp_w1: w1,
            mlp_b1: tape.constant(p.mlp_b1.clone()),
            mlp_w2: tape.constant(p.mlp_w2.clone()),
            mlp_b2: tape.constant(p.mlp_b2.clone()),
            spatial_kernel: tape.constant(p.spatial_kernel.clone()),
            spatial_bias: tape.constant(p.spatial_bias.clone()),
        };
        let ac = channel_attention(&mut tape, a, &nodes).unwrap();
        let gated = tape.scale_channels(a, ac).unwrap();
        let loss = tape.sum(gated);
        tape.backward(loss).unwrap();
        let grad = tape.grad(w1).unwrap().clone();

        let mut rng = seed::rng(11);
        let h = 1e-5;
        for _ in 0..6 {
            let idx = rng.gen_range(0..p.mlp_w1.numel());
            let mut wp = p.mlp_w1.clone();
            wp.data_mut()[idx] += h;
            let mut wm = p.mlp_w1.clone();
            wm.data_mut()[idx] -= h;
            let fd = (eval(&wp) - eval(&wm)) / (2.0 * h);
            let an = grad.data()[idx];
            let rel = (an - fd).abs() / an.abs().max(fd.abs()).max(1e-6);
            assert!(rel < 1e-4, "rel {} at {}", rel, idx);
        }
    }

    #[test]
    fn conv_res_fourier_reduces_to_gelu_of_conv_without_spectral() {
        let mut rng = seed::rng(12);
        let x = randn(&[4, 16, 16], 13);
        let kernel = randn(&[4, 4, 3, 3], 14);
        let bias = randn(&[4], 15);
        let spec = SpectralKernel::init(4, 4, 4, 4, &mut rng);

        let mut tape = Tape::new();
        let v = tape.constant(x.clone());
        let k = tape.constant(kernel.clone());
        let b = tape.constant(bias.clone());
        // spectral branch removed: exactly GELU(conv(v))
        let out = conv_res_fourier(
            &mut tape,
            v,
            &ConvResFourierNodes {
                spectral: None,
                residual: ResidualNodes::Conv { kernel: k, bias: b },
            },
        )
        .unwrap();
        let conv = tape.conv2d_circular(v, k, b).unwrap();
        let gelu = tape.gelu(conv);
        assert_eq!(tape.value(out), tape.value(gelu));

        // zero conv weights with identity spectral on band-limited input ≥ 0:
        // the layer is GELU of the input
        let band = crate::spectral::band_limit(&x.map(|v| v.abs() + 0.1), 4, 4).unwrap();
        let ident = SpectralKernel::identity(4, 4, 4);
        let mut tape = Tape::new();
        let v = tape.constant(band.clone());
        let k0 = tape.constant(Tensor::zeros(&[4, 4, 3, 3]));
        let b0 = tape.constant(Tensor::zeros(&[4]));
        let wr = tape.constant(ident.re.clone());
        let wi = tape.constant(ident.im.clone());
        let out = conv_res_fourier(
            &mut tape,
            v,
            &ConvResFourierNodes {
                spectral: Some((wr, wi, (4, 4))),
                residual: ResidualNodes::Conv { kernel: k0, bias: b0 },
            },
        )
        .unwrap();
        let direct = tape.gelu(v);
        assert!(tape.value(out).sub(tape.value(direct)).unwrap().max_abs() < 1e-10);
        let _ = spec;
    }

    #[test]
    fn conv_res_fourier_is_shift_equivariant() {
        let mut rng = seed::rng(16);
        let x = randn(&[3, 16, 16], 17);
        let p = ConvResFourierParams::init(3, 3, (4, 4), &mut rng);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let v = tape.constant(x.clone());
            let (kernel, bias) = match &p.residual {
                ResidualParams::Conv { kernel, bias } => (kernel.clone(), bias.clone()),
                _ => unreachable!(),
            };
            let k = tape.constant(kernel);
            let b = tape.constant(bias);
            let sk = p.spectral.as_ref().unwrap();
            let wr = tape.constant(sk.re.clone());
            let wi = tape.constant(sk.im.clone());
            let out = conv_res_fourier(
                &mut tape,
                v,
                &ConvResFourierNodes {
                    spectral: Some((wr, wi, (4, 4))),
                    residual: ResidualNodes::Conv { kernel: k, bias: b },
                },
            )
            .unwrap();
            tape.value(out).clone()
        };
        for &(si, sj) in &[(2i64, 3i64), (-5, 1)] {
            let a = run(&x.cyclic_shift2(si, sj));
            let b = run(&x).cyclic_shift2(si, sj);
            assert!(a.sub(&b).unwrap().max_abs() < 1e-10);
        }
    }

    #[test]
    fn factorization_unit_alpha_is_plain_convolution() {
        let f = randn(&[2, 16, 16], 20);
        let psi = randn(&[3, 2, 5, 5], 21);
        let alpha_x = Tensor::filled(&[16, 16], 1.0);
        let dev = attentive_conv_factorization_check(&f, &psi, &[1.0, 1.0], &alpha_x).unwrap();
        assert!(dev < 1e-12, "unit-alpha deviation {}", dev);
    }

    #[test]
    fn factorization_holds_for_random_attention() {
        for trial in 0..20 {
            let f = randn(&[2, 16, 16], 30 + trial);
            let psi = randn(&[2, 2, 3, 3], 60 + trial);
            let mut rng = seed::rng(90 + trial);
            let alpha_c: Vec<f64> = (0..2).map(|_| rng.gen_range(0.0..1.0)).collect();
            let ax = Tensor::new(
                vec![16, 16],
                (0..256).map(|_| rng.gen_range(0.0..1.0)).collect(),
            )
            .unwrap();
            let dev = attentive_conv_factorization_check(&f, &psi, &alpha_c, &ax).unwrap();
            assert!(dev < 1e-10, "trial {} deviation {}", trial, dev);
        }
    }

    #[test]
    fn factorization_sides_shift_together() {
        // shifting (f, αˣ) jointly shifts both sides of the identity
        let f = randn(&[1, 16, 16], 40);
        let psi = randn(&[1, 1, 3, 3], 41);
        let mut rng = seed::rng(42);
        let ax = Tensor::new(
            vec![16, 16],
            (0..256).map(|_| rng.gen_range(0.0..1.0)).collect(),
        )
        .unwrap();
        let shifted_dev = attentive_conv_factorization_check(
            &f.cyclic_shift2(3, 7),
            &psi,
            &[0.7],
            &ax.cyclic_shift2(3, 7),
        )
        .unwrap();
        assert!(shifted_dev < 1e-10);
    }
}
