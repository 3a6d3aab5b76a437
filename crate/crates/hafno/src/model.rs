//! The K-scale hierarchical operator network.
//!
//! Encoder: the lifted input is downsampled scale to scale
//! (`ã^{k+1} = Conv(MaxPool(ã^k))`) while each scale processes its own
//! feature map with an attention gate followed by convolutional-residual
//! Fourier layers. Decoder: coarse-to-fine bilinear upsampling, channel
//! concatenation with the finer scale's processed features and a 1×1
//! projection. A two-layer pointwise MLP head maps to the output channels.
//!
//! Inputs are zero-padded bottom/right to the next power of two before the
//! network body and cropped back afterwards; two normalized coordinate
//! channels are appended to the raw input. The network body itself commutes
//! with cyclic shifts that are multiples of `2^{K-1}`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::autodiff::{NodeId, Tape};
use crate::error::{Error, Result};
use crate::layers::{
    attention_block, conv_res_fourier, mlp_gate, uniform_fan_in, AttentionNodes, AttentionParams,
    ConvResFourierNodes, ResidualNodes, ResidualParams, SPATIAL_ATTENTION_KERNEL,
};
use crate::spectral::SpectralKernel;
use crate::tensor::Tensor;
use crate::{seed, wire};

/// One hierarchy level: channel width, square mode cut and how many Fourier
/// layers run at this scale.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ScaleSpec {
    pub channels: usize,
    pub modes: usize,
    pub layers_per_scale: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GateKind {
    Attention,
    Mlp,
    Identity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ResidualKind {
    Conv,
    Pointwise,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub scales: Vec<ScaleSpec>,
    /// Raw data channels, before the two coordinate channels.
    pub data_channels: usize,
    pub output_channels: usize,
    pub gate: GateKind,
    pub fourier_on: bool,
    pub residual: ResidualKind,
    pub attention_reduction: usize,
    pub head_hidden: usize,
    pub coord_channels: bool,
    pub downsample_ratio: usize,
}

impl ModelConfig {
    /// Full-size configuration: K = 4 scales, channels {32, 64, 128, 128},
    /// modes {24, 12, 6, 3}, ratio 2.
    pub fn paper(data_channels: usize, output_channels: usize) -> Self {
        ModelConfig {
            scales: [(32, 24), (64, 12), (128, 6), (128, 3)]
                .iter()
                .map(|&(channels, modes)| ScaleSpec {
                    channels,
                    modes,
                    layers_per_scale: 1,
                })
                .collect(),
            data_channels,
            output_channels,
            gate: GateKind::Attention,
            fourier_on: true,
            residual: ResidualKind::Conv,
            attention_reduction: 4,
            head_hidden: 128,
            coord_channels: true,
            downsample_ratio: 2,
        }
    }

    /// Desk-scale configuration for 64² experiments.
    pub fn tiny(data_channels: usize, output_channels: usize) -> Self {
        ModelConfig {
            scales: [(8, 12), (16, 6), (32, 4)]
                .iter()
                .map(|&(channels, modes)| ScaleSpec {
                    channels,
                    modes,
                    layers_per_scale: 1,
                })
                .collect(),
            data_channels,
            output_channels,
            gate: GateKind::Attention,
            fourier_on: true,
            residual: ResidualKind::Conv,
            attention_reduction: 4,
            head_hidden: 16,
            coord_channels: true,
            downsample_ratio: 2,
        }
    }

    /// Plain single-scale spectral-operator baseline: no attention, per-point
    /// linear residual, 4 stacked layers at mode cut 24.
    pub fn baseline_fno(width: usize, data_channels: usize, output_channels: usize) -> Self {
        ModelConfig {
            scales: vec![ScaleSpec {
                channels: width,
                modes: 24,
                layers_per_scale: 4,
            }],
            data_channels,
            output_channels,
            gate: GateKind::Identity,
            fourier_on: true,
            residual: ResidualKind::Pointwise,
            attention_reduction: 1,
            head_hidden: 16,
            coord_channels: true,
            downsample_ratio: 2,
        }
    }

    /// Baseline with the width chosen so the parameter count lands closest
    /// to `target`.
    pub fn baseline_fno_matched(
        target: usize,
        data_channels: usize,
        output_channels: usize,
    ) -> Self {
        let mut best = Self::baseline_fno(2, data_channels, output_channels);
        let mut best_gap = usize::MAX;
        for width in 2..=96 {
            let cfg = Self::baseline_fno(width, data_channels, output_channels);
            let gap = cfg.param_count().abs_diff(target);
            if gap < best_gap {
                best_gap = gap;
                best = cfg;
            }
        }
        best
    }

    pub fn depth(&self) -> usize {
        self.scales.len()
    }

    /// Input channels seen by the lift, coordinate channels included.
    pub fn in_channels(&self) -> usize {
        self.data_channels + if self.coord_channels { 2 } else { 0 }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scales.is_empty() {
            return Err(Error::ConfigMismatch("model needs at least one scale".into()));
        }
        if self.downsample_ratio != 2 {
            return Err(Error::ConfigMismatch(
                "only downsample ratio 2 is supported".into(),
            ));
        }
        if self.data_channels == 0 || self.output_channels == 0 || self.head_hidden == 0 {
            return Err(Error::ConfigMismatch("zero-width channel config".into()));
        }
        for (k, s) in self.scales.iter().enumerate() {
            if s.channels == 0 || s.modes == 0 || s.layers_per_scale == 0 {
                return Err(Error::ConfigMismatch(format!("scale {} has a zero field", k)));
            }
            if matches!(self.gate, GateKind::Attention | GateKind::Mlp)
                && (self.attention_reduction == 0 || s.channels % self.attention_reduction != 0)
            {
                return Err(Error::ConfigMismatch(format!(
                    "attention reduction {} does not divide channels {} at scale {}",
                    self.attention_reduction, s.channels, k
                )));
            }
        }
        Ok(())
    }

    /// Check the configuration against concrete padded grid dims.
    pub fn validate_grid(&self, h: usize, w: usize) -> Result<()> {
        for (k, s) in self.scales.iter().enumerate() {
            let (gh, gw) = (h >> k, w >> k);
            if gh < 2 || gw < 2 {
                return Err(Error::ConfigMismatch(format!(
                    "grid {}x{} too small for {} scales",
                    h,
                    w,
                    self.depth()
                )));
            }
            if self.fourier_on && (s.modes > gh / 2 || s.modes > gw / 2) {
                return Err(Error::ConfigMismatch(format!(
                    "mode cut {} exceeds Nyquist of scale-{} grid {}x{}",
                    s.modes, k, gh, gw
                )));
            }
            if self.gate == GateKind::Attention
                && (gh < SPATIAL_ATTENTION_KERNEL || gw < SPATIAL_ATTENTION_KERNEL)
            {
                return Err(Error::ConfigMismatch(format!(
                    "scale-{} grid {}x{} smaller than the spatial attention kernel",
                    k, gh, gw
                )));
            }
        }
        Ok(())
    }

    /// Exact number of scalar learnables.
    pub fn param_count(&self) -> usize {
        let da = self.in_channels();
        let c1 = self.scales[0].channels;
        let mut n = c1 * da + c1; // lift
        for (k, s) in self.scales.iter().enumerate() {
            let c = s.channels;
            n += match self.gate {
                GateKind::Attention => {
                    let h = c / self.attention_reduction;
                    let ksz = SPATIAL_ATTENTION_KERNEL;
                    h * c + h + c * h + c + 2 * ksz * ksz + 1
                }
                GateKind::Mlp => {
                    let h = c / self.attention_reduction;
                    h * c + h + c * h + c
                }
                GateKind::Identity => 0,
            };
            let per_layer = if self.fourier_on {
                2 * (2 * s.modes * s.modes * c * c)
            } else {
                0
            } + match self.residual {
                ResidualKind::Conv => c * c * 9 + c,
                ResidualKind::Pointwise => c * c + c,
                ResidualKind::Identity => 0,
            };
            n += per_layer * s.layers_per_scale;
            if k + 1 < self.depth() {
                let cn = self.scales[k + 1].channels;
                n += cn * c * 9 + cn; // downsample conv
                n += c * (c + cn) + c; // fuse projection
            }
        }
        n += self.head_hidden * c1 + self.head_hidden;
        n += self.output_channels * self.head_hidden + self.output_channels;
        n
    }

    /// Canonical `key = value` text, sorted keys, one per line.
    pub fn to_text(&self) -> String {
        let join = |f: &dyn Fn(&ScaleSpec) -> usize| {
            self.scales
                .iter()
                .map(|s| f(s).to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let gate = match self.gate {
            GateKind::Attention => "attention",
            GateKind::Mlp => "mlp",
            GateKind::Identity => "identity",
        };
        let residual = match self.residual {
            ResidualKind::Conv => "conv",
            ResidualKind::Pointwise => "pointwise",
            ResidualKind::Identity => "identity",
        };
        let mut lines = vec![
            format!("attention_reduction = {}", self.attention_reduction),
            format!("channels = {}", join(&|s| s.channels)),
            format!("coord_channels = {}", self.coord_channels),
            format!("data_channels = {}", self.data_channels),
            format!("downsample_ratio = {}", self.downsample_ratio),
            format!("fourier_on = {}", self.fourier_on),
            format!("gate = {}", gate),
            format!("head_hidden = {}", self.head_hidden),
            format!("layers_per_scale = {}", join(&|s| s.layers_per_scale)),
            format!("modes = {}", join(&|s| s.modes)),
            format!("output_channels = {}", self.output_channels),
            format!("residual = {}", residual),
        ];
        lines.sort();
        lines.join("\n") + "\n"
    }

    /// Parse the canonical text. Lines with a `train.` prefix belong to the
    /// training layer and are skipped; any other unknown key is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut kv = std::collections::BTreeMap::new();
        for line in text.lines() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::ConfigMismatch(format!("bad config line `{}`", line)))?;
            kv.insert(k.trim().to_string(), v.trim().to_string());
        }
        let mut take = |key: &str| -> Result<String> {
            kv.remove(key)
                .ok_or_else(|| Error::ConfigMismatch(format!("missing config key `{}`", key)))
        };
        let parse_usize = |s: &str, key: &str| -> Result<usize> {
            s.parse()
                .map_err(|_| Error::ConfigMismatch(format!("bad value for `{}`", key)))
        };
        let parse_list = |s: &str, key: &str| -> Result<Vec<usize>> {
            s.split(',')
                .map(|p| parse_usize(p.trim(), key))
                .collect()
        };

        let channels = parse_list(&take("channels")?, "channels")?;
        let modes = parse_list(&take("modes")?, "modes")?;
        let layers = parse_list(&take("layers_per_scale")?, "layers_per_scale")?;
        if channels.len() != modes.len() || channels.len() != layers.len() {
            return Err(Error::ConfigMismatch(
                "channels/modes/layers_per_scale length mismatch".into(),
            ));
        }
        let gate = match take("gate")?.as_str() {
            "attention" => GateKind::Attention,
            "mlp" => GateKind::Mlp,
            "identity" => GateKind::Identity,
            other => {
                return Err(Error::ConfigMismatch(format!("unknown gate `{}`", other)));
            }
        };
        let residual = match take("residual")?.as_str() {
            "conv" => ResidualKind::Conv,
            "pointwise" => ResidualKind::Pointwise,
            "identity" => ResidualKind::Identity,
            other => {
                return Err(Error::ConfigMismatch(format!("unknown residual `{}`", other)));
            }
        };
        let cfg = ModelConfig {
            scales: channels
                .iter()
                .zip(&modes)
                .zip(&layers)
                .map(|((&channels, &modes), &layers_per_scale)| ScaleSpec {
                    channels,
                    modes,
                    layers_per_scale,
                })
                .collect(),
            data_channels: parse_usize(&take("data_channels")?, "data_channels")?,
            output_channels: parse_usize(&take("output_channels")?, "output_channels")?,
            gate,
            fourier_on: take("fourier_on")? == "true",
            residual,
            attention_reduction: parse_usize(&take("attention_reduction")?, "attention_reduction")?,
            head_hidden: parse_usize(&take("head_hidden")?, "head_hidden")?,
            coord_channels: take("coord_channels")? == "true",
            downsample_ratio: parse_usize(&take("downsample_ratio")?, "downsample_ratio")?,
        };
        for key in kv.keys() {
            if !key.starts_with("train.") {
                return Err(Error::ConfigMismatch(format!("unknown config key `{}`", key)));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Component-removal and -replacement experiment arms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AblationArm {
    WoAttention,
    WoFno,
    ConvToRes,
    ConvToFc,
    AttToMlp,
    AddHier,
}

impl AblationArm {
    pub fn parse(s: &str) -> Result<Self> {
        Ok(match s {
            "wo_attention" => AblationArm::WoAttention,
            "wo_fno" => AblationArm::WoFno,
            "conv_to_res" => AblationArm::ConvToRes,
            "conv_to_fc" => AblationArm::ConvToFc,
            "att_to_mlp" => AblationArm::AttToMlp,
            "add_hier" => AblationArm::AddHier,
            other => {
                return Err(Error::invalid(format!(
                    "unknown ablation arm `{}` (expected wo_attention, wo_fno, conv_to_res, conv_to_fc, att_to_mlp, add_hier)",
                    other
                )))
            }
        })
    }

    pub fn name(&self) -> &'static str {
        match self {
            AblationArm::WoAttention => "wo_attention",
            AblationArm::WoFno => "wo_fno",
            AblationArm::ConvToRes => "conv_to_res",
            AblationArm::ConvToFc => "conv_to_fc",
            AblationArm::AttToMlp => "att_to_mlp",
            AblationArm::AddHier => "add_hier",
        }
    }

    pub const ALL: [AblationArm; 6] = [
        AblationArm::WoAttention,
        AblationArm::WoFno,
        AblationArm::ConvToRes,
        AblationArm::ConvToFc,
        AblationArm::AttToMlp,
        AblationArm::AddHier,
    ];
}

/// Derive the configuration variant implementing an ablation arm.
pub fn build_ablation(base: &ModelConfig, arm: AblationArm) -> ModelConfig {
    let mut cfg = base.clone();
    match arm {
        AblationArm::WoAttention => cfg.gate = GateKind::Identity,
        AblationArm::WoFno => cfg.fourier_on = false,
        AblationArm::ConvToRes => cfg.residual = ResidualKind::Identity,
        AblationArm::ConvToFc => cfg.residual = ResidualKind::Pointwise,
        AblationArm::AttToMlp => cfg.gate = GateKind::Mlp,
        AblationArm::AddHier => {
            let last = *cfg.scales.last().unwrap();
            cfg.scales.push(ScaleSpec {
                channels: last.channels,
                modes: (last.modes / 2).max(1),
                layers_per_scale: last.layers_per_scale,
            });
        }
    }
    cfg
}

// ---------------------------------------------------------------------------
// parameters
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum GateParams {
    Attention(AttentionParams),
    Mlp {
        w1: Tensor,
        b1: Tensor,
        w2: Tensor,
        b2: Tensor,
    },
    Identity,
}

#[derive(Clone, Debug)]
pub struct FourierLayerParams {
    pub spectral: Option<SpectralKernel>,
    pub residual: ResidualParams,
}

#[derive(Clone, Debug)]
pub struct ScaleParams {
    pub gate: GateParams,
    pub fourier: Vec<FourierLayerParams>,
    /// `Conv(MaxPool(·))` mapping this scale's channels to the next's.
    pub down: Option<(Tensor, Tensor)>,
    /// 1×1 projection after concatenating the upsampled coarser features.
    pub fuse: Option<(Tensor, Tensor)>,
}

#[derive(Clone, Debug)]
pub struct ModelParams {
    pub lift_w: Tensor,
    pub lift_b: Tensor,
    pub scales: Vec<ScaleParams>,
    pub head_w1: Tensor,
    pub head_b1: Tensor,
    pub head_w2: Tensor,
    pub head_b2: Tensor,
}

enum GateLeaves {
    Attention(AttentionNodes),
    Mlp {
        w1: NodeId,
        b1: NodeId,
        w2: NodeId,
        b2: NodeId,
    },
    Identity,
}

struct FourierLeaves {
    spectral: Option<(NodeId, NodeId, (usize, usize))>,
    residual: ResidualNodes,
}

struct ScaleLeaves {
    gate: GateLeaves,
    fourier: Vec<FourierLeaves>,
    down: Option<(NodeId, NodeId)>,
    fuse: Option<(NodeId, NodeId)>,
}

struct ModelLeaves {
    lift_w: NodeId,
    lift_b: NodeId,
    scales: Vec<ScaleLeaves>,
    head_w1: NodeId,
    head_b1: NodeId,
    head_w2: NodeId,
    head_b2: NodeId,
}

#[derive(Clone, Debug)]
pub struct Model {
    pub cfg: ModelConfig,
    pub params: ModelParams,
}

impl Model {
    pub fn init(cfg: ModelConfig, seed_v: u64) -> Result<Model> {
        cfg.validate()?;
        let rng = &mut seed::rng_for(seed_v, "model-init", 0);
        let da = cfg.in_channels();
        let c1 = cfg.scales[0].channels;
        let k_scales = cfg.depth();

        let mut scales = Vec::with_capacity(k_scales);
        for (k, s) in cfg.scales.iter().enumerate() {
            let c = s.channels;
            let gate = match cfg.gate {
                GateKind::Attention => {
                    GateParams::Attention(AttentionParams::init(c, cfg.attention_reduction, rng)?)
                }
                GateKind::Mlp => {
                    let h = c / cfg.attention_reduction;
                    GateParams::Mlp {
                        w1: uniform_fan_in(&[h, c], c, rng),
                        b1: Tensor::zeros(&[h]),
                        w2: uniform_fan_in(&[c, h], h, rng),
                        b2: Tensor::zeros(&[c]),
                    }
                }
                GateKind::Identity => GateParams::Identity,
            };
            let fourier = (0..s.layers_per_scale)
                .map(|_| FourierLayerParams {
                    spectral: if cfg.fourier_on {
                        Some(SpectralKernel::init(s.modes, s.modes, c, c, rng))
                    } else {
                        None
                    },
                    residual: match cfg.residual {
                        ResidualKind::Conv => ResidualParams::Conv {
                            kernel: uniform_fan_in(&[c, c, 3, 3], c * 9, rng),
                            bias: Tensor::zeros(&[c]),
                        },
                        ResidualKind::Pointwise => ResidualParams::Pointwise {
                            weight: uniform_fan_in(&[c, c], c, rng),
                            bias: Tensor::zeros(&[c]),
                        },
                        ResidualKind::Identity => ResidualParams::Identity,
                    },
                })
                .collect();
            let (down, fuse) = if k + 1 < k_scales {
                let cn = cfg.scales[k + 1].channels;
                (
                    Some((
                        uniform_fan_in(&[cn, c, 3, 3], c * 9, rng),
                        Tensor::zeros(&[cn]),
                    )),
                    Some((
                        uniform_fan_in(&[c, c + cn], c + cn, rng),
                        Tensor::zeros(&[c]),
                    )),
                )
            } else {
                (None, None)
            };
            scales.push(ScaleParams {
                gate,
                fourier,
                down,
                fuse,
            });
        }

        let params = ModelParams {
            lift_w: uniform_fan_in(&[c1, da], da, rng),
            lift_b: Tensor::zeros(&[c1]),
            scales,
            head_w1: uniform_fan_in(&[cfg.head_hidden, c1], c1, rng),
            head_b1: Tensor::zeros(&[cfg.head_hidden]),
            head_w2: uniform_fan_in(&[cfg.output_channels, cfg.head_hidden], cfg.head_hidden, rng),
            head_b2: Tensor::zeros(&[cfg.output_channels]),
        };
        Ok(Model { cfg, params })
    }

    /// Named views of every parameter tensor, in the canonical declaration
    /// order shared by the checkpoint format and the optimizer.
    pub fn param_refs(&self) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = Vec::new();
        let p = &self.params;
        out.push(("lift.w".into(), &p.lift_w));
        out.push(("lift.b".into(), &p.lift_b));
        for (k, s) in p.scales.iter().enumerate() {
            let pre = format!("scale{}", k);
            match &s.gate {
                GateParams::Attention(a) => {
                    out.push((format!("{}.att.mlp_w1", pre), &a.mlp_w1));
                    out.push((format!("{}.att.mlp_b1", pre), &a.mlp_b1));
                    out.push((format!("{}.att.mlp_w2", pre), &a.mlp_w2));
                    out.push((format!("{}.att.mlp_b2", pre), &a.mlp_b2));
                    out.push((format!("{}.att.spatial_k", pre), &a.spatial_kernel));
                    out.push((format!("{}.att.spatial_b", pre), &a.spatial_bias));
                }
                GateParams::Mlp { w1, b1, w2, b2 } => {
                    out.push((format!("{}.mlp.w1", pre), w1));
                    out.push((format!("{}.mlp.b1", pre), b1));
                    out.push((format!("{}.mlp.w2", pre), w2));
                    out.push((format!("{}.mlp.b2", pre), b2));
                }
                GateParams::Identity => {}
            }
            for (i, f) in s.fourier.iter().enumerate() {
                if let Some(sk) = &f.spectral {
                    out.push((format!("{}.fourier{}.spec_re", pre, i), &sk.re));
                    out.push((format!("{}.fourier{}.spec_im", pre, i), &sk.im));
                }
                match &f.residual {
                    ResidualParams::Conv { kernel, bias } => {
                        out.push((format!("{}.fourier{}.conv_k", pre, i), kernel));
                        out.push((format!("{}.fourier{}.conv_b", pre, i), bias));
                    }
                    ResidualParams::Pointwise { weight, bias } => {
                        out.push((format!("{}.fourier{}.fc_w", pre, i), weight));
                        out.push((format!("{}.fourier{}.fc_b", pre, i), bias));
                    }
                    ResidualParams::Identity => {}
                }
            }
            if let Some((k_, b_)) = &s.down {
                out.push((format!("{}.down.k", pre), k_));
                out.push((format!("{}.down.b", pre), b_));
            }
            if let Some((w_, b_)) = &s.fuse {
                out.push((format!("{}.fuse.w", pre), w_));
                out.push((format!("{}.fuse.b", pre), b_));
            }
        }
        out.push(("head.w1".into(), &p.head_w1));
        out.push(("head.b1".into(), &p.head_b1));
        out.push(("head.w2".into(), &p.head_w2));
        out.push(("head.b2".into(), &p.head_b2));
        out
    }

    pub fn param_refs_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = Vec::new();
        let p = &mut self.params;
        out.push(("lift.w".into(), &mut p.lift_w));
        out.push(("lift.b".into(), &mut p.lift_b));
        for (k, s) in p.scales.iter_mut().enumerate() {
            let pre = format!("scale{}", k);
            match &mut s.gate {
                GateParams::Attention(a) => {
                    out.push((format!("{}.att.mlp_w1", pre), &mut a.mlp_w1));
                    out.push((format!("{}.att.mlp_b1", pre), &mut a.mlp_b1));
                    out.push((format!("{}.att.mlp_w2", pre), &mut a.mlp_w2));
                    out.push((format!("{}.att.mlp_b2", pre), &mut a.mlp_b2));
                    out.push((format!("{}.att.spatial_k", pre), &mut a.spatial_kernel));
                    out.push((format!("{}.att.spatial_b", pre), &mut a.spatial_bias));
                }
                GateParams::Mlp { w1, b1, w2, b2 } => {
                    out.push((format!("{}.mlp.w1", pre), w1));
                    out.push((format!("{}.mlp.b1", pre), b1));
                    out.push((format!("{}.mlp.w2", pre), w2));
                    out.push((format!("{}.mlp.b2", pre), b2));
                }
                GateParams::Identity => {}
            }
            for (i, f) in s.fourier.iter_mut().enumerate() {
                if let Some(sk) = &mut f.spectral {
                    out.push((format!("{}.fourier{}.spec_re", pre, i), &mut sk.re));
                    out.push((format!("{}.fourier{}.spec_im", pre, i), &mut sk.im));
                }
                match &mut f.residual {
                    ResidualParams::Conv { kernel, bias } => {
                        out.push((format!("{}.fourier{}.conv_k", pre, i), kernel));
                        out.push((format!("{}.fourier{}.conv_b", pre, i), bias));
                    }
                    ResidualParams::Pointwise { weight, bias } => {
                        out.push((format!("{}.fourier{}.fc_w", pre, i), weight));
                        out.push((format!("{}.fourier{}.fc_b", pre, i), bias));
                    }
                    ResidualParams::Identity => {}
                }
            }
            if let Some((k_, b_)) = &mut s.down {
                out.push((format!("{}.down.k", pre), k_));
                out.push((format!("{}.down.b", pre), b_));
            }
            if let Some((w_, b_)) = &mut s.fuse {
                out.push((format!("{}.fuse.w", pre), w_));
                out.push((format!("{}.fuse.b", pre), b_));
            }
        }
        out.push(("head.w1".into(), &mut p.head_w1));
        out.push(("head.b1".into(), &mut p.head_b1));
        out.push(("head.w2".into(), &mut p.head_w2));
        out.push(("head.b2".into(), &mut p.head_b2));
        out
    }

    fn insert_leaves(&self, tape: &mut Tape, trainable: bool, ids: &mut Vec<NodeId>) -> ModelLeaves {
        let mut leaf = |tape: &mut Tape, ids: &mut Vec<NodeId>, t: &Tensor| -> NodeId {
            let id = if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            };
            ids.push(id);
            id
        };
        let p = &self.params;
        let lift_w = leaf(tape, ids, &p.lift_w);
        let lift_b = leaf(tape, ids, &p.lift_b);
        let mut scales = Vec::with_capacity(p.scales.len());
        for s in &p.scales {
            let gate = match &s.gate {
                GateParams::Attention(a) => GateLeaves::Attention(AttentionNodes {
                    mlp_w1: leaf(tape, ids, &a.mlp_w1),
                    mlp_b1: leaf(tape, ids, &a.mlp_b1),
                    mlp_w2: leaf(tape, ids, &a.mlp_w2),
                    mlp_b2: leaf(tape, ids, &a.mlp_b2),
                    spatial_kernel: leaf(tape, ids, &a.spatial_kernel),
                    spatial_bias: leaf(tape, ids, &a.spatial_bias),
                }),
                GateParams::Mlp { w1, b1, w2, b2 } => GateLeaves::Mlp {
                    w1: leaf(tape, ids, w1),
                    b1: leaf(tape, ids, b1),
                    w2: leaf(tape, ids, w2),
                    b2: leaf(tape, ids, b2),
                },
                GateParams::Identity => GateLeaves::Identity,
            };
            let fourier = s
                .fourier
                .iter()
                .map(|f| FourierLeaves {
                    spectral: f.spectral.as_ref().map(|sk| {
                        (
                            leaf(tape, ids, &sk.re),
                            leaf(tape, ids, &sk.im),
                            sk.modes,
                        )
                    }),
                    residual: match &f.residual {
                        ResidualParams::Conv { kernel, bias } => ResidualNodes::Conv {
                            kernel: leaf(tape, ids, kernel),
                            bias: leaf(tape, ids, bias),
                        },
                        ResidualParams::Pointwise { weight, bias } => ResidualNodes::Pointwise {
                            weight: leaf(tape, ids, weight),
                            bias: leaf(tape, ids, bias),
                        },
                        ResidualParams::Identity => ResidualNodes::Identity,
                    },
                })
                .collect();
            let down = s
                .down
                .as_ref()
                .map(|(k, b)| (leaf(tape, ids, k), leaf(tape, ids, b)));
            let fuse = s
                .fuse
                .as_ref()
                .map(|(w, b)| (leaf(tape, ids, w), leaf(tape, ids, b)));
            scales.push(ScaleLeaves {
                gate,
                fourier,
                down,
                fuse,
            });
        }
        let head_w1 = leaf(tape, ids, &p.head_w1);
        let head_b1 = leaf(tape, ids, &p.head_b1);
        let head_w2 = leaf(tape, ids, &p.head_w2);
        let head_b2 = leaf(tape, ids, &p.head_b2);
        ModelLeaves {
            lift_w,
            lift_b,
            scales,
            head_w1,
            head_b1,
            head_w2,
            head_b2,
        }
    }

    /// Network body over an already padded full-channel input node
    /// (coordinate channels included when configured). This is the part of
    /// the model that commutes with cyclic shifts by multiples of
    /// `2^(K-1)`.
    pub fn forward_padded(
        &self,
        tape: &mut Tape,
        input: NodeId,
        trainable: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let shape = tape.value(input).shape().to_vec();
        if shape.len() != 3 || shape[0] != self.cfg.in_channels() {
            return Err(Error::ConfigMismatch(format!(
                "model expects [{}, H, W] input, got {:?}",
                self.cfg.in_channels(),
                shape
            )));
        }
        self.cfg.validate_grid(shape[1], shape[2])?;

        let mut ids = Vec::new();
        let leaves = self.insert_leaves(tape, trainable, &mut ids);

        let mut a_k = tape.pointwise_linear(input, leaves.lift_w, leaves.lift_b)?;
        let depth = self.cfg.depth();
        let mut processed = Vec::with_capacity(depth);
        for (k, sl) in leaves.scales.iter().enumerate() {
            let gated = match &sl.gate {
                GateLeaves::Attention(nodes) => attention_block(tape, a_k, nodes)?,
                GateLeaves::Mlp { w1, b1, w2, b2 } => mlp_gate(tape, a_k, *w1, *b1, *w2, *b2)?,
                GateLeaves::Identity => a_k,
            };
            let mut u = gated;
            for f in &sl.fourier {
                u = conv_res_fourier(
                    tape,
                    u,
                    &ConvResFourierNodes {
                        spectral: f.spectral,
                        residual: f.residual,
                    },
                )?;
            }
            processed.push(u);
            if k + 1 < depth {
                let (dk, db) = sl.down.expect("non-final scale has a downsample conv");
                let pooled = tape.maxpool2(a_k)?;
                a_k = tape.conv2d_circular(pooled, dk, db)?;
            }
        }

        let mut cur = processed[depth - 1];
        for k in (0..depth - 1).rev() {
            let (fw, fb) = leaves.scales[k].fuse.expect("non-final scale has a fuse");
            let up = tape.bilinear_upsample2(cur)?;
            let cat = tape.concat_channels(up, processed[k])?;
            cur = tape.pointwise_linear(cat, fw, fb)?;
        }

        let h = tape.pointwise_linear(cur, leaves.head_w1, leaves.head_b1)?;
        let h = tape.gelu(h);
        let out = tape.pointwise_linear(h, leaves.head_w2, leaves.head_b2)?;
        Ok((out, ids))
    }

    /// Full forward pass from a raw `[data_channels, H, W]` input: append
    /// coordinate channels, pad to the next power of two, run the body and
    /// crop back.
    pub fn forward(
        &self,
        tape: &mut Tape,
        raw: &Tensor,
        trainable: bool,
    ) -> Result<(NodeId, Vec<NodeId>)> {
        let s = raw.shape();
        if s.len() != 3 || s[0] != self.cfg.data_channels {
            return Err(Error::ConfigMismatch(format!(
                "expected [{}, H, W] input, got {:?}",
                self.cfg.data_channels, s
            )));
        }
        if !raw.all_finite() {
            return Err(Error::invalid("non-finite value in model input"));
        }
        let (h, w) = (s[1], s[2]);
        let (hp, wp) = (h.next_power_of_two().max(2), w.next_power_of_two().max(2));
        let full = self.assemble_input(raw, hp, wp);
        let input = tape.constant(full);
        let (out, ids) = self.forward_padded(tape, input, trainable)?;
        let cropped = tape.crop_spatial(out, h, w)?;
        Ok((cropped, ids))
    }

    /// Padded raw channels plus (when configured) the normalized coordinate
    /// meshgrid of the padded domain.
    pub fn assemble_input(&self, raw: &Tensor, hp: usize, wp: usize) -> Tensor {
        let padded = raw.pad_bottom_right(hp, wp);
        if !self.cfg.coord_channels {
            return padded;
        }
        let c = padded.shape()[0];
        let mut data = padded.into_data();
        data.reserve(2 * hp * wp);
        for _i in 0..hp {
            for j in 0..wp {
                data.push((j as f64 + 0.5) / wp as f64);
            }
        }
        for i in 0..hp {
            for _j in 0..wp {
                data.push((i as f64 + 0.5) / hp as f64);
            }
        }
        Tensor::new(vec![c + 2, hp, wp], data).unwrap()
    }

    /// Inference convenience: forward without gradient bookkeeping.
    pub fn predict(&self, raw: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let (out, _) = self.forward(&mut tape, raw, false)?;
        Ok(tape.value(out).clone())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let tensors = self
            .param_refs()
            .into_iter()
            .map(|(n, t)| (n, t.clone()))
            .collect();
        write_checkpoint(
            path,
            &Checkpoint {
                config_text: self.cfg.to_text(),
                tensors,
            },
        )
    }

    pub fn load(path: &Path) -> Result<Model> {
        let ck = read_checkpoint(path)?;
        Model::from_checkpoint(&ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Model> {
        let cfg = ModelConfig::from_text(&ck.config_text)?;
        let mut model = Model::init(cfg, 0)?;
        let by_name: std::collections::HashMap<&str, &Tensor> = ck
            .tensors
            .iter()
            .map(|(n, t)| (n.as_str(), t))
            .collect();
        for (name, slot) in model.param_refs_mut() {
            let src = by_name.get(name.as_str()).ok_or_else(|| {
                Error::ConfigMismatch(format!("checkpoint is missing tensor `{}`", name))
            })?;
            if src.shape() != slot.shape() {
                return Err(Error::ConfigMismatch(format!(
                    "checkpoint tensor `{}` has shape {:?}, expected {:?}",
                    name,
                    src.shape(),
                    slot.shape()
                )));
            }
            *slot = (*src).clone();
        }
        Ok(model)
    }
}

// ---------------------------------------------------------------------------
// checkpoint container
// ---------------------------------------------------------------------------

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"HAFN";
pub const CHECKPOINT_VERSION: u16 = 1;

/// On-disk checkpoint: magic, format version, canonical config text, then
/// named tensors in declaration order.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub config_text: String,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
    }
}

pub fn write_checkpoint(path: &Path, ck: &Checkpoint) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    wire::write_u16(&mut w, CHECKPOINT_VERSION)?;
    wire::write_string(&mut w, &ck.config_text)?;
    wire::write_u32(&mut w, ck.tensors.len() as u32)?;
    for (name, t) in &ck.tensors {
        wire::write_string(&mut w, name)?;
        wire::write_tensor(&mut w, t)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_checkpoint(path: &Path) -> Result<Checkpoint> {
    let file = File::open(path).map_err(|_| Error::MissingFile(path.display().to_string()))?;
    let mut r = BufReader::new(file);
    let mut magic = [0u8; 4];
    wire::read_exact(&mut r, &mut magic, "checkpoint magic")?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::BadMagic {
            expected: CHECKPOINT_MAGIC,
            found: magic,
        });
    }
    let version = wire::read_u16(&mut r, "checkpoint version")?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::VersionMismatch {
            expected: CHECKPOINT_VERSION,
            found: version,
        });
    }
    let config_text = wire::read_string(&mut r, "checkpoint config")?;
    let n = wire::read_u32(&mut r, "checkpoint tensor count")? as usize;
    let mut tensors = Vec::with_capacity(n);
    for _ in 0..n {
        let name = wire::read_string(&mut r, "tensor name")?;
        let t = wire::read_tensor(&mut r, &name)?;
        tensors.push((name, t));
    }
    Ok(Checkpoint {
        config_text,
        tensors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn randn(shape: &[usize], seed_v: u64) -> Tensor {
        let mut rng = crate::seed::rng(seed_v);
        let n: usize = shape.iter().product();
        let data: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        Tensor::new(shape.to_vec(), data).unwrap()
    }

    #[test]
    fn param_count_matches_materialized_model() {
        for cfg in [
            ModelConfig::tiny(1, 1),
            ModelConfig::paper(1, 1),
            ModelConfig::baseline_fno(4, 1, 1),
            build_ablation(&ModelConfig::tiny(1, 1), AblationArm::AttToMlp),
            build_ablation(&ModelConfig::tiny(1, 1), AblationArm::WoFno),
            build_ablation(&ModelConfig::tiny(1, 1), AblationArm::ConvToRes),
        ] {
            let model = Model::init(cfg.clone(), 1).unwrap();
            let total: usize = model.param_refs().iter().map(|(_, t)| t.numel()).sum();
            assert_eq!(total, cfg.param_count(), "cfg {:?}", cfg.scales);
        }
    }

    #[test]
    fn param_count_closed_form_single_scale() {
        // K = 1, one channel, one mode, no attention, conv residual:
        // lift 1·3+1, spectral 2·(2·1·1·1·1), conv 9+1, head h·1+h+1·h+1
        let cfg = ModelConfig {
            scales: vec![ScaleSpec {
                channels: 1,
                modes: 1,
                layers_per_scale: 1,
            }],
            data_channels: 1,
            output_channels: 1,
            gate: GateKind::Identity,
            fourier_on: true,
            residual: ResidualKind::Conv,
            attention_reduction: 1,
            head_hidden: 1,
            coord_channels: true,
            downsample_ratio: 2,
        };
        assert_eq!(cfg.param_count(), 4 + 4 + 10 + 4);
    }

    #[test]
    fn doubling_widths_quadruples_pointwise_weights() {
        let base = ModelConfig::tiny(1, 1);
        let mut wide = base.clone();
        for s in &mut wide.scales {
            s.channels *= 2;
        }
        wide.head_hidden *= 2;
        let m1 = Model::init(base, 1).unwrap();
        let m2 = Model::init(wide, 1).unwrap();
        let numel = |m: &Model, name: &str| {
            m.param_refs()
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t.numel())
                .unwrap()
        };
        assert_eq!(numel(&m2, "scale0.fuse.w"), 4 * numel(&m1, "scale0.fuse.w"));
        assert_eq!(numel(&m2, "head.w1"), 4 * numel(&m1, "head.w1"));
        assert_eq!(
            numel(&m2, "scale0.fourier0.conv_k"),
            4 * numel(&m1, "scale0.fourier0.conv_k")
        );
    }

    #[test]
    fn ablations_move_param_count_in_expected_direction() {
        let base = ModelConfig::tiny(1, 1);
        let n0 = base.param_count();
        for arm in AblationArm::ALL {
            let cfg = build_ablation(&base, arm);
            let n = cfg.param_count();
            match arm {
                AblationArm::WoAttention
                | AblationArm::WoFno
                | AblationArm::ConvToRes
                | AblationArm::ConvToFc => {
                    assert!(n < n0, "{} should shrink: {} vs {}", arm.name(), n, n0)
                }
                AblationArm::AddHier => {
                    assert!(n > n0, "add_hier should grow: {} vs {}", n, n0)
                }
                AblationArm::AttToMlp => {
                    // parameter-neutral up to the 7×7 spatial kernel
                    let delta = n0 - n;
                    let spatial = base.depth() * (2 * 49 + 1);
                    assert_eq!(delta, spatial);
                }
            }
        }
        assert!(AblationArm::parse("bogus").is_err());
        assert_eq!(
            build_ablation(&base, AblationArm::AddHier).scales.last().unwrap().modes,
            2
        );
    }

    #[test]
    fn wo_fno_and_wo_attention_leave_conv_gelu_only() {
        let cfg = build_ablation(
            &build_ablation(&ModelConfig::tiny(1, 1), AblationArm::WoFno),
            AblationArm::WoAttention,
        );
        // remaining params: lift, per-scale conv residual, down, fuse, head
        let mut expect = 0;
        let da = cfg.in_channels();
        expect += cfg.scales[0].channels * da + cfg.scales[0].channels;
        for (k, s) in cfg.scales.iter().enumerate() {
            expect += s.channels * s.channels * 9 + s.channels;
            if k + 1 < cfg.depth() {
                let cn = cfg.scales[k + 1].channels;
                expect += cn * s.channels * 9 + cn;
                expect += s.channels * (s.channels + cn) + s.channels;
            }
        }
        expect += cfg.head_hidden * cfg.scales[0].channels + cfg.head_hidden;
        expect += cfg.output_channels * cfg.head_hidden + cfg.output_channels;
        assert_eq!(cfg.param_count(), expect);
    }

    #[test]
    fn config_text_round_trips() {
        for cfg in [
            ModelConfig::tiny(1, 1),
            ModelConfig::paper(10, 1),
            build_ablation(&ModelConfig::tiny(2, 3), AblationArm::AttToMlp),
        ] {
            let text = cfg.to_text();
            let back = ModelConfig::from_text(&text).unwrap();
            assert_eq!(cfg, back);
        }
        assert!(ModelConfig::from_text("nonsense = 1\n").is_err());
        // train.* keys are tolerated
        let text = ModelConfig::tiny(1, 1).to_text() + "train.lr = 0.0005\n";
        assert!(ModelConfig::from_text(&text).is_ok());
    }

    #[test]
    fn forward_shape_contract_and_determinism() {
        let model = Model::init(ModelConfig::tiny(1, 1), 7).unwrap();
        let input = randn(&[1, 64, 64], 3);
        let out1 = model.predict(&input).unwrap();
        assert_eq!(out1.shape(), &[1, 64, 64]);
        let out2 = model.predict(&input).unwrap();
        assert_eq!(out1, out2);

        // non-power-of-two input pads and crops back
        let odd = randn(&[1, 50, 60], 4);
        let out = model.predict(&odd).unwrap();
        assert_eq!(out.shape(), &[1, 50, 60]);
    }

    #[test]
    fn zero_weights_give_spatially_constant_output() {
        let mut model = Model::init(ModelConfig::tiny(1, 1), 7).unwrap();
        for (name, t) in model.param_refs_mut() {
            if name.ends_with(".w")
                || name.ends_with("_w1")
                || name.ends_with("_w2")
                || name.ends_with(".w1")
                || name.ends_with(".w2")
                || name.ends_with("_k")
                || name.ends_with(".k")
                || name.ends_with("spec_re")
                || name.ends_with("spec_im")
            {
                *t = Tensor::zeros(t.shape());
            }
        }
        // set biases to something nonzero so the output is not trivially zero
        for (name, t) in model.param_refs_mut() {
            if name.ends_with('b') || name.ends_with("b1") || name.ends_with("b2") {
                *t = Tensor::filled(t.shape(), 0.3);
            }
        }
        let out = model.predict(&randn(&[1, 64, 64], 5)).unwrap();
        let first = out.data()[0];
        assert!(out.data().iter().all(|&v| (v - first).abs() < 1e-12));
        assert!(first != 0.0);
    }

    #[test]
    fn body_is_equivariant_to_coarse_shifts() {
        let model = Model::init(ModelConfig::tiny(1, 1), 11).unwrap();
        let raw = randn(&[1, 64, 64], 6);
        let full = model.assemble_input(&raw, 64, 64);
        let run = |x: &Tensor| {
            let mut tape = Tape::new();
            let input = tape.constant(x.clone());
            let (out, _) = model.forward_padded(&mut tape, input, false).unwrap();
            tape.value(out).clone()
        };
        let base = run(&full);
        let shift = 2i64.pow(model.cfg.depth() as u32 - 1);
        for &(si, sj) in &[(shift, 0i64), (shift, shift), (2 * shift, -shift)] {
            let a = run(&full.cyclic_shift2(si, sj));
            let b = base.cyclic_shift2(si, sj);
            let rel = a.sub(&b).unwrap().max_abs() / base.max_abs().max(1e-12);
            assert!(rel < 1e-8, "shift ({}, {}): rel {}", si, sj, rel);
        }
    }

    #[test]
    fn gradients_reach_every_parameter_group() {
        let model = Model::init(ModelConfig::tiny(1, 1), 13).unwrap();
        let input = randn(&[1, 64, 64], 8);
        let mut tape = Tape::new();
        let (out, ids) = model.forward(&mut tape, &input, true).unwrap();
        let sq = tape.mul(out, out).unwrap();
        let loss = tape.sum(sq);
        tape.backward(loss).unwrap();
        let names: Vec<String> = model.param_refs().into_iter().map(|(n, _)| n).collect();
        assert_eq!(names.len(), ids.len());
        for (name, id) in names.iter().zip(&ids) {
            let g = tape.grad(*id).unwrap_or_else(|| panic!("no grad for {}", name));
            assert!(
                g.data().iter().any(|&v| v != 0.0),
                "gradient all-zero for {}",
                name
            );
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hafn");
        let model = Model::init(ModelConfig::tiny(1, 1), 17).unwrap();
        model.save(&path).unwrap();
        let loaded = Model::load(&path).unwrap();
        assert_eq!(model.cfg, loaded.cfg);
        for ((n1, t1), (n2, t2)) in model.param_refs().iter().zip(loaded.param_refs().iter()) {
            assert_eq!(n1, n2);
            assert_eq!(t1, t2, "tensor {} differs", n1);
        }
    }

    #[test]
    fn checkpoint_rejects_bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.hafn");
        let model = Model::init(ModelConfig::tiny(1, 1), 17).unwrap();
        model.save(&path).unwrap();

        let mut bytes = std::fs::read(&path).unwrap();
        bytes[0] = b'X';
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(Model::load(&path), Err(Error::BadMagic { .. })));

        let mut bytes = std::fs::read(dir.path().join("model.hafn")).unwrap_or(bytes);
        bytes[0] = b'H';
        bytes[4] = 99;
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            Model::load(&path),
            Err(Error::VersionMismatch { .. })
        ));
    }

    #[test]
    fn baseline_matching_lands_within_ten_percent() {
        let full = ModelConfig::tiny(1, 1);
        let target = full.param_count();
        let baseline = ModelConfig::baseline_fno_matched(target, 1, 1);
        let ratio = baseline.param_count() as f64 / target as f64;
        assert!(
            (0.9..=1.1).contains(&ratio),
            "baseline {} vs full {} (ratio {:.3})",
            baseline.param_count(),
            target,
            ratio
        );
    }
}
