//! The proposed deeply supervised eCAM network and the single-CAM baseline.
//!
//! Backbone: `S` scale blocks, each `conv3x3(pad 1) -> ReLU -> conv3x3(pad 1)
//! -> ReLU`, with a 2x2/2 max-pool between consecutive blocks. Inputs in
//! `[0, 1]` are shifted by `-INPUT_CENTRE`, zero-padded at the bottom and
//! right to a multiple of `2^(S-1)`, and every full-resolution map is cropped
//! back to the input extent.
//!
//! Proposed head at scale `s` (1-based, stride `f = 2^(s-1)`): a 1x1 conv to
//! `K` channels, then a learnt transposed conv with kernel `2f`, stride `f`,
//! cropped at offset `f/2`, giving a `(H, W)` eCAM. Scale 1 needs no
//! upsampling. The `S` eCAMs are concatenated scale-major (`s * K + k`) and
//! fused by a 1x1 conv. Logits are spatial means of the full-resolution maps.
//!
//! Baseline: the same backbone with one 1x1 CAM head on the last scale and
//! global average pooling; no deep supervision.
//!
//! Initialisation draws from [`SplitMix64::derive`]`(seed, 0)` in parameter
//! order (blocks, then heads or the CAM head), uniform in
//! `+-sqrt(6 / (fan_in + fan_out))` with zero biases. Upsamplers start as
//! per-class bilinear interpolation and the fusion as the per-class mean of
//! the scales.

mod forward;
mod heatmap;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::ops::{bilinear_kernel, ConvSpec, DeconvSpec, OpsError};
use crate::rng::SplitMix64;
use crate::tensor::{Scalar, Shape, Tensor};

pub(crate) use forward::argmax;
pub use forward::{loss_per_scale, total_loss, ActivationPattern, ScaleOutputs};
pub use heatmap::{parse_scale_list, Heatmap, ScaleTag};

/// Largest accepted input extent.
pub const MAX_EXTENT: usize = 1024;
/// Subtracted from every input value before the first convolution.
pub const INPUT_CENTRE: f64 = 0.5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetError {
    #[error("invalid network config: {0}")]
    InvalidConfig(String),
    #[error("expected image of shape (1, {channels}, H, W), got {got:?}")]
    BadInputShape { channels: usize, got: Shape },
    #[error("input extent {h}x{w} outside [{min}, {max}]")]
    ExtentOutOfRange {
        h: usize,
        w: usize,
        min: usize,
        max: usize,
    },
    #[error("operation requires the {expected} architecture")]
    WrongArch { expected: Arch },
    #[error("index out of range: {0}")]
    BadIndex(String),
    #[error("expected {expected} per-scale losses, got {got}")]
    CountMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Ops(#[from] OpsError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default)]
pub enum Arch {
    #[default]
    Proposed,
    Baseline,
}

impl fmt::Display for Arch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Arch::Proposed => "proposed",
            Arch::Baseline => "baseline",
        })
    }
}

impl FromStr for Arch {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "proposed" => Ok(Arch::Proposed),
            "baseline" => Ok(Arch::Baseline),
            other => Err(format!("unknown architecture `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NetworkConfig {
    pub scales: usize,
    pub classes: usize,
    pub input_channels: usize,
    pub filters_per_scale: Vec<usize>,
    pub arch: Arch,
    pub seed: u64,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self {
            scales: 5,
            classes: 2,
            input_channels: 3,
            filters_per_scale: vec![8, 16, 32, 64, 64],
            arch: Arch::Proposed,
            seed: 0,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<(), NetError> {
        let bad = |m: String| Err(NetError::InvalidConfig(m));
        if self.scales == 0 || self.scales > 10 {
            return bad(format!("scale count {} outside [1, 10]", self.scales));
        }
        if self.classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.classes));
        }
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        if self.filters_per_scale.len() != self.scales {
            return bad(format!(
                "{} filter widths for {} scales",
                self.filters_per_scale.len(),
                self.scales
            ));
        }
        if let Some(&f) = self.filters_per_scale.iter().find(|&&f| f < self.classes) {
            return bad(format!("filter width {f} below class count {}", self.classes));
        }
        Ok(())
    }

    /// Padding granularity `2^(S-1)`; also the smallest accepted extent.
    pub fn granularity(&self) -> usize {
        1 << (self.scales - 1)
    }

    /// Input extent after zero-padding to the granularity.
    pub fn padded_extent(&self, h: usize, w: usize) -> (usize, usize) {
        let g = self.granularity();
        (h.div_ceil(g) * g, w.div_ceil(g) * g)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Block<T: Scalar = f32> {
    pub conv1: ConvSpec<T>,
    pub conv2: ConvSpec<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Upsampler<T: Scalar = f32> {
    /// Scale 1 is already at input resolution.
    Identity,
    Learnt(DeconvSpec<T>),
}

/// A named parameter viewed as a flat slice with its logical dims.
#[derive(Debug)]
pub struct Param<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a [T],
}

#[derive(Debug)]
pub struct ParamMut<'a, T> {
    pub name: String,
    pub dims: Vec<usize>,
    pub values: &'a mut [T],
}

/// Gradient of the loss for every named parameter.
pub type Gradients<T> = BTreeMap<String, Vec<T>>;

#[derive(Debug, Clone, PartialEq)]
pub struct Network<T: Scalar = f32> {
    config: NetworkConfig,
    pub(crate) blocks: Vec<Block<T>>,
    pub(crate) heads: Vec<ConvSpec<T>>,
    pub(crate) upsamplers: Vec<Upsampler<T>>,
    pub(crate) fusion: Option<ConvSpec<T>>,
    pub(crate) cam_head: Option<ConvSpec<T>>,
}

fn glorot<T: Scalar>(spec: &mut ConvSpec<T>, rng: &mut SplitMix64) {
    let taps = spec.kernel.0 * spec.kernel.1;
    let fan_in = spec.in_channels * taps;
    let fan_out = spec.out_channels * taps;
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for v in spec.weights.data_mut() {
        *v = T::from_f64_lossy(rng.uniform(-bound, bound));
    }
}

impl<T: Scalar> Network<T> {
    pub fn build(config: NetworkConfig) -> Result<Self, NetError> {
        config.validate()?;
        let mut rng = SplitMix64::derive(config.seed, 0);
        let k = config.classes;
        let mut blocks = Vec::with_capacity(config.scales);
        let mut in_c = config.input_channels;
        for &width in &config.filters_per_scale {
            let mut conv1 = ConvSpec::zeros(in_c, width, (3, 3), 1, 1)?;
            let mut conv2 = ConvSpec::zeros(width, width, (3, 3), 1, 1)?;
            glorot(&mut conv1, &mut rng);
            glorot(&mut conv2, &mut rng);
            blocks.push(Block { conv1, conv2 });
            in_c = width;
        }

        let mut net = Self {
            config,
            blocks,
            heads: Vec::new(),
            upsamplers: Vec::new(),
            fusion: None,
            cam_head: None,
        };
        let cfg = &net.config;
        match cfg.arch {
            Arch::Proposed => {
                for (s, &width) in cfg.filters_per_scale.iter().enumerate() {
                    let mut head = ConvSpec::zeros(width, k, (1, 1), 1, 0)?;
                    glorot(&mut head, &mut rng);
                    net.heads.push(head);
                    net.upsamplers.push(if s == 0 {
                        Upsampler::Identity
                    } else {
                        Upsampler::Learnt(bilinear_upsampler(k, 1 << s)?)
                    });
                }
                let scales = cfg.scales;
                let mut fusion = ConvSpec::zeros(scales * k, k, (1, 1), 1, 0)?;
                let share = T::from_f64_lossy(1.0 / scales as f64);
                for class in 0..k {
                    for s in 0..scales {
                        let off = fusion.weights.shape().offset(class, s * k + class, 0, 0);
                        fusion.weights.data_mut()[off] = share;
                    }
                }
                net.fusion = Some(fusion);
            }
            Arch::Baseline => {
                let last = *cfg.filters_per_scale.last().unwrap();
                let mut head = ConvSpec::zeros(last, k, (1, 1), 1, 0)?;
                glorot(&mut head, &mut rng);
                net.cam_head = Some(head);
            }
        }
        Ok(net)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn arch(&self) -> Arch {
        self.config.arch
    }

    pub fn heads(&self) -> &[ConvSpec<T>] {
        &self.heads
    }

    pub fn upsamplers(&self) -> &[Upsampler<T>] {
        &self.upsamplers
    }

    pub fn fusion(&self) -> Option<&ConvSpec<T>> {
        self.fusion.as_ref()
    }

    pub fn fusion_mut(&mut self) -> Option<&mut ConvSpec<T>> {
        self.fusion.as_mut()
    }

    pub fn cam_head(&self) -> Option<&ConvSpec<T>> {
        self.cam_head.as_ref()
    }

    pub fn cam_head_mut(&mut self) -> Option<&mut ConvSpec<T>> {
        self.cam_head.as_mut()
    }

    pub fn blocks(&self) -> &[Block<T>] {
        &self.blocks
    }

    /// `(name, conv)` pairs for every convolution-shaped layer, in canonical order.
    fn conv_layers(&self) -> Vec<(String, &ConvSpec<T>)> {
        let mut out = Vec::new();
        for (s, b) in self.blocks.iter().enumerate() {
            out.push((format!("block{}.conv1", s + 1), &b.conv1));
            out.push((format!("block{}.conv2", s + 1), &b.conv2));
        }
        for (s, h) in self.heads.iter().enumerate() {
            out.push((format!("head{}", s + 1), h));
        }
        if let Some(c) = &self.cam_head {
            out.push(("cam_head".into(), c));
        }
        out
    }

    /// All named parameters in canonical order.
    pub fn params(&self) -> Vec<Param<'_, T>> {
        fn pair<'a, T: Scalar>(out: &mut Vec<Param<'a, T>>, prefix: String, w: &'a Tensor<T>, b: &'a [T]) {
            out.push(Param {
                name: format!("{prefix}.weight"),
                dims: w.shape().dims().to_vec(),
                values: w.data(),
            });
            out.push(Param {
                name: format!("{prefix}.bias"),
                dims: vec![b.len()],
                values: b,
            });
        }
        let mut out = Vec::new();
        for (name, conv) in self.conv_layers() {
            pair(&mut out, name, &conv.weights, &conv.bias);
        }
        for (s, up) in self.upsamplers.iter().enumerate() {
            if let Upsampler::Learnt(d) = up {
                pair(&mut out, format!("upsample{}", s + 1), &d.weights, &d.bias);
            }
        }
        if let Some(f) = &self.fusion {
            pair(&mut out, "fusion".into(), &f.weights, &f.bias);
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<ParamMut<'_, T>> {
        fn pair<'a, T: Scalar>(out: &mut Vec<ParamMut<'a, T>>, prefix: String, w: &'a mut Tensor<T>, b: &'a mut Vec<T>) {
            out.push(ParamMut {
                name: format!("{prefix}.weight"),
                dims: w.shape().dims().to_vec(),
                values: w.data_mut(),
            });
            out.push(ParamMut {
                name: format!("{prefix}.bias"),
                dims: vec![b.len()],
                values: b.as_mut_slice(),
            });
        }
        let mut out = Vec::new();
        for (s, b) in self.blocks.iter_mut().enumerate() {
            pair(&mut out, format!("block{}.conv1", s + 1), &mut b.conv1.weights, &mut b.conv1.bias);
            pair(&mut out, format!("block{}.conv2", s + 1), &mut b.conv2.weights, &mut b.conv2.bias);
        }
        for (s, h) in self.heads.iter_mut().enumerate() {
            pair(&mut out, format!("head{}", s + 1), &mut h.weights, &mut h.bias);
        }
        if let Some(c) = &mut self.cam_head {
            pair(&mut out, "cam_head".into(), &mut c.weights, &mut c.bias);
        }
        for (s, up) in self.upsamplers.iter_mut().enumerate() {
            if let Upsampler::Learnt(d) = up {
                pair(&mut out, format!("upsample{}", s + 1), &mut d.weights, &mut d.bias);
            }
        }
        if let Some(f) = &mut self.fusion {
            pair(&mut out, "fusion".into(), &mut f.weights, &mut f.bias);
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.values.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Network<U> {
        Network {
            config: self.config.clone(),
            blocks: self
                .blocks
                .iter()
                .map(|b| Block {
                    conv1: b.conv1.cast(),
                    conv2: b.conv2.cast(),
                })
                .collect(),
            heads: self.heads.iter().map(ConvSpec::cast).collect(),
            upsamplers: self
                .upsamplers
                .iter()
                .map(|u| match u {
                    Upsampler::Identity => Upsampler::Identity,
                    Upsampler::Learnt(d) => Upsampler::Learnt(d.cast()),
                })
                .collect(),
            fusion: self.fusion.as_ref().map(ConvSpec::cast),
            cam_head: self.cam_head.as_ref().map(ConvSpec::cast),
        }
    }
}

/// `classes -> classes` transposed conv with kernel `2f`, stride `f`,
/// bilinear weights on the diagonal and zero elsewhere.
fn bilinear_upsampler<T: Scalar>(classes: usize, factor: usize) -> Result<DeconvSpec<T>, OpsError> {
    let k = 2 * factor;
    let mut spec = DeconvSpec::zeros(classes, classes, (k, k), factor, 0)?;
    let kernel = bilinear_kernel(k);
    let taps = k * k;
    for c in 0..classes {
        let off = spec.weights.shape().offset(c, c, 0, 0);
        for (dst, &v) in spec.weights.data_mut()[off..off + taps].iter_mut().zip(&kernel) {
            *dst = T::from_f64_lossy(v);
        }
    }
    Ok(spec)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_config_builds_all_heads() {
        let net = Network::<f32>::build(NetworkConfig::default()).unwrap();
        assert_eq!(net.heads().len(), 5);
        assert_eq!(net.upsamplers().len(), 5);
        assert!(matches!(net.upsamplers()[0], Upsampler::Identity));
        let learnt = net
            .upsamplers()
            .iter()
            .filter(|u| matches!(u, Upsampler::Learnt(_)))
            .count();
        assert_eq!(learnt, 4);
        assert!(net.fusion().is_some());
        assert!(net.cam_head().is_none());
    }

    #[test]
    fn baseline_has_single_cam_head() {
        let cfg = NetworkConfig {
            arch: Arch::Baseline,
            ..Default::default()
        };
        let net = Network::<f32>::build(cfg).unwrap();
        assert!(net.heads().is_empty() && net.upsamplers().is_empty());
        assert!(net.fusion().is_none());
        let cam = net.cam_head().unwrap();
        assert_eq!((cam.in_channels, cam.out_channels), (64, 2));
    }

    #[test]
    fn seeded_init_is_bitwise_reproducible() {
        let cfg = NetworkConfig {
            seed: 42,
            ..Default::default()
        };
        let a = Network::<f32>::build(cfg.clone()).unwrap();
        let b = Network::<f32>::build(cfg.clone()).unwrap();
        for (pa, pb) in a.params().iter().zip(b.params()) {
            assert_eq!(pa.name, pb.name);
            let ba: Vec<u32> = pa.values.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u32> = pb.values.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ba, bb);
        }
        let c = Network::<f32>::build(NetworkConfig { seed: 43, ..cfg }).unwrap();
        assert_ne!(a.params()[0].values, c.params()[0].values);
    }

    #[test]
    fn variants_share_backbone() {
        let p = Network::<f32>::build(NetworkConfig::default()).unwrap();
        let b = Network::<f32>::build(NetworkConfig {
            arch: Arch::Baseline,
            ..Default::default()
        })
        .unwrap();
        // backbone is drawn first, so shapes and values agree
        assert_eq!(p.blocks(), b.blocks());
    }

    #[test]
    fn param_names_unique_and_complete() {
        let net = Network::<f32>::build(NetworkConfig::default()).unwrap();
        let names: Vec<String> = net.params().into_iter().map(|p| p.name).collect();
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        // 5 blocks x 2 convs + 5 heads + 4 upsamplers + fusion, each weight + bias
        assert_eq!(names.len(), 2 * (10 + 5 + 4 + 1));
        let mut net = net;
        let mut_names: Vec<String> = net.params_mut().into_iter().map(|p| p.name).collect();
        assert_eq!(mut_names, names);
    }

    #[test]
    fn invalid_configs_rejected() {
        let cases = [
            NetworkConfig {
                scales: 0,
                filters_per_scale: vec![],
                ..Default::default()
            },
            NetworkConfig {
                classes: 1,
                ..Default::default()
            },
            NetworkConfig {
                filters_per_scale: vec![8, 16],
                ..Default::default()
            },
            NetworkConfig {
                classes: 10,
                ..Default::default()
            },
        ];
        for cfg in cases {
            assert!(matches!(
                Network::<f32>::build(cfg),
                Err(NetError::InvalidConfig(_))
            ));
        }
    }

    #[test]
    fn fusion_starts_as_scale_mean() {
        let net = Network::<f64>::build(NetworkConfig::default()).unwrap();
        let f = net.fusion().unwrap();
        for class in 0..2 {
            for ch in 0..10 {
                let w = f.weights.at(class, ch, 0, 0);
                let want = if ch % 2 == class { 0.2 } else { 0.0 };
                assert!((w - want).abs() < 1e-15);
            }
        }
    }
}
