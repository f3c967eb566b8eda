//! Single-image prediction with heatmap and overlay output.
//!
//! Files written to the output directory:
//! - `<tag>_<class>.pgm` for each requested tag and class (`fused_B.pgm`,
//!   `s3_A.pgm`, ...). The baseline has a single map, written as `cam_<class>.pgm`
//!   whatever tags are requested.
//! - `overlay.ppm`: the predicted class's map blended onto the input.
//!
//! Every map is min-max normalised per image before writing.

use std::fs;
use std::path::{Path, PathBuf};

use crate::data::pnm::{self, Raster};
use crate::data::Label;
use crate::engine::EngineError;
use crate::net::{Arch, Heatmap, NetError, Network, ScaleTag};
use crate::optim;
use crate::tensor::Tensor;

pub const DEFAULT_OPACITY: f64 = 0.5;

#[derive(Debug, Clone, PartialEq)]
pub struct InferOptions {
    pub tags: Vec<ScaleTag>,
    /// Weight of the colour map in the overlay, in `[0, 1]`.
    pub opacity: f64,
}

impl Default for InferOptions {
    fn default() -> Self {
        Self {
            tags: vec![ScaleTag::Fused],
            opacity: DEFAULT_OPACITY,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct InferOutput {
    pub predicted: usize,
    pub probabilities: Vec<f32>,
    pub heatmaps: Vec<PathBuf>,
    pub overlay: PathBuf,
}

/// Piecewise-linear ramp: dark blue at 0, through cyan and yellow, to red at 1.
pub fn colormap(t: f64) -> [f64; 3] {
    let t = t.clamp(0.0, 1.0);
    let ch = |centre: f64| (1.5 - (4.0 * t - centre).abs()).clamp(0.0, 1.0);
    if t >= 0.875 {
        // stop at pure red rather than darkening
        return [1.0, ch(2.0), 0.0];
    }
    [ch(3.0), ch(2.0), ch(1.0)]
}

fn min_max(values: &[f64]) -> Vec<f64> {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Blends the colour-mapped heatmap onto an RGB raster of the same extent.
/// Opacity 0 returns the input unchanged.
pub fn overlay(image: &Raster, heatmap: &[f64], opacity: f64) -> Result<Raster, EngineError> {
    if image.channels != 3 || heatmap.len() != image.width * image.height {
        return Err(EngineError::ShapeMismatch(format!(
            "overlay of {} values onto {}x{}x{}",
            heatmap.len(),
            image.height,
            image.width,
            image.channels
        )));
    }
    let a = opacity.clamp(0.0, 1.0);
    let norm = min_max(heatmap);
    let mut pixels = Vec::with_capacity(image.pixels.len());
    for (px, &t) in image.pixels.chunks_exact(3).zip(&norm) {
        let c = colormap(t);
        for k in 0..3 {
            let v = (1.0 - a) * px[k] as f64 + a * 255.0 * c[k];
            pixels.push(v.round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(Raster {
        pixels,
        ..image.clone()
    })
}

/// Nearest-neighbour expansion of the coarse baseline CAM to the input
/// extent: each coarse cell covers a `factor x factor` block of the padded input.
fn expand_cam(cam: &Tensor<f32>, factor: usize, h: usize, w: usize) -> Tensor<f32> {
    let s = cam.shape();
    let mut out = Tensor::zeros((1, s.c, h, w));
    for c in 0..s.c {
        let src = cam.plane(0, c);
        let dst = out.plane_mut(0, c);
        for y in 0..h {
            for x in 0..w {
                dst[y * w + x] = src[(y / factor) * s.w + x / factor];
            }
        }
    }
    out
}

fn shape_error(e: NetError) -> EngineError {
    match e {
        NetError::BadInputShape { .. } | NetError::ExtentOutOfRange { .. } => EngineError::ShapeMismatch(e.to_string()),
        other => other.into(),
    }
}

/// Probabilities and input-resolution heatmaps for every class and tag.
pub fn heatmaps(
    net: &Network<f32>,
    image: &Tensor<f32>,
    tags: &[ScaleTag],
) -> Result<(Vec<f32>, Vec<Heatmap<f32>>), EngineError> {
    let classes = net.config().classes;
    let s = image.shape();
    match net.arch() {
        Arch::Proposed => {
            let out = net.forward(image).map_err(shape_error)?;
            let mut maps = Vec::with_capacity(tags.len() * classes);
            for &tag in tags {
                for k in 0..classes {
                    maps.push(out.heatmap(k, tag)?);
                }
            }
            Ok((out.probs_f, maps))
        }
        Arch::Baseline => {
            let (probs, cam) = net.baseline_forward(image).map_err(shape_error)?;
            let full = expand_cam(&cam, net.config().granularity(), s.h, s.w);
            let tag = ScaleTag::Scale(net.config().scales);
            let maps = (0..classes)
                .map(|k| Heatmap::from_channel(&full, k, tag))
                .collect::<Result<Vec<_>, _>>()?;
            Ok((probs, maps))
        }
    }
}

fn class_name(k: usize) -> String {
    Label::from_class_index(k).map_or_else(|| format!("class{k}"), |l| l.to_string())
}

pub fn infer_network(
    net: &Network<f32>,
    raster: &Raster,
    out_dir: impl AsRef<Path>,
    opts: &InferOptions,
) -> Result<InferOutput, EngineError> {
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir).map_err(|e| EngineError::Io(format!("{}: {e}", out_dir.display())))?;
    let image = raster.to_tensor::<f32>()?;
    let tags = if opts.tags.is_empty() { vec![ScaleTag::Fused] } else { opts.tags.clone() };
    let (probs, maps) = heatmaps(net, &image, &tags)?;
    let predicted = crate::net::argmax(&probs);

    let mut files = Vec::with_capacity(maps.len());
    for m in &maps {
        let prefix = match net.arch() {
            Arch::Proposed => m.tag.to_string(),
            Arch::Baseline => "cam".to_string(),
        };
        let path = out_dir.join(format!("{prefix}_{}.pgm", class_name(m.class_index)));
        pnm::write_gray(&path, &m.values, m.height, m.width)?;
        files.push(path);
    }
    let shown_tag = if tags.contains(&ScaleTag::Fused) { ScaleTag::Fused } else { tags[0] };
    let shown = maps
        .iter()
        .find(|m| m.class_index == predicted && (net.arch() == Arch::Baseline || m.tag == shown_tag))
        .expect("one map per class and tag");
    let values: Vec<f64> = shown.values.iter().map(|&v| v as f64).collect();
    let overlay_path = out_dir.join("overlay.ppm");
    pnm::write_raster(&overlay_path, &overlay(raster, &values, opts.opacity)?)?;
    Ok(InferOutput {
        predicted,
        probabilities: probs,
        heatmaps: files,
        overlay: overlay_path,
    })
}

pub fn infer(
    checkpoint: impl AsRef<Path>,
    image: impl AsRef<Path>,
    out_dir: impl AsRef<Path>,
    opts: &InferOptions,
) -> Result<InferOutput, EngineError> {
    let ckpt = optim::load(checkpoint)?;
    let raster = pnm::read_raster(image)?;
    infer_network(&ckpt.network, &raster, out_dir, opts)
}
