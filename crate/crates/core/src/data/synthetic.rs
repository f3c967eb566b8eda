//! Synthetic two-class texture images with lesion masks.
//!
//! Class A: mucosa-coloured background with a few thin vessels and many
//! minuscule dots, each attached to a thin filament. Class B: the same
//! texture plus one elliptical lesion region filled with dilated, tortuous
//! strokes; the lesion region is written as a 0/255 PGM mask. Both classes
//! carry a few bright specular blobs. Each synthetic patient has its own
//! colour, illumination and density draw, and every image is a pure function
//! of `(seed, fold, split, class, index)`.

use std::f64::consts::{PI, TAU};
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::manifest::{render_manifest, FoldManifest, Label, Sample, Split};
use crate::data::pnm::{encode, Raster};
use crate::data::DataError;
use crate::rng::SplitMix64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ClassCounts {
    pub a: usize,
    pub b: usize,
}

impl ClassCounts {
    pub fn get(&self, label: Label) -> usize {
        match label {
            Label::A => self.a,
            Label::B => self.b,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SplitCounts {
    pub train: ClassCounts,
    pub val: ClassCounts,
    pub test: ClassCounts,
}

impl SplitCounts {
    pub fn get(&self, split: Split) -> ClassCounts {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

impl Default for SplitCounts {
    fn default() -> Self {
        Self {
            train: ClassCounts { a: 250, b: 250 },
            val: ClassCounts { a: 50, b: 50 },
            test: ClassCounts { a: 50, b: 50 },
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TextureParams {
    /// Background vessels per 1000 pixels.
    pub vessel_density: f64,
    pub vessel_width: (f64, f64),
    /// Healthy capillary dots per 1000 pixels.
    pub dot_density: f64,
    pub dot_radius: (f64, f64),
    pub filament_width: f64,
    /// Width range of the dilated lesion strokes.
    pub lesion_width: (f64, f64),
    /// Standard deviation (radians) of the heading change per stroke step.
    pub tortuosity: f64,
    /// Lesion area as a fraction of the image.
    pub lesion_fraction: (f64, f64),
    /// Inclusive range of specular highlights per image.
    pub specular_count: (usize, usize),
}

impl Default for TextureParams {
    fn default() -> Self {
        Self {
            vessel_density: 0.8,
            vessel_width: (1.0, 1.6),
            dot_density: 8.0,
            dot_radius: (0.6, 1.2),
            filament_width: 0.7,
            lesion_width: (2.4, 3.6),
            tortuosity: 0.6,
            lesion_fraction: (0.08, 0.30),
            specular_count: (1, 3),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub counts: SplitCounts,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
    pub folds: usize,
    /// Patients per class per split; images are dealt round-robin.
    pub patients_per_class: usize,
    pub texture: TextureParams,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            counts: SplitCounts::default(),
            height: 64,
            width: 64,
            seed: 0,
            folds: 1,
            patients_per_class: 5,
            texture: TextureParams::default(),
        }
    }
}

/// Minimum accepted image extent.
pub const MIN_EXTENT: usize = 32;

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        if self.height < MIN_EXTENT || self.width < MIN_EXTENT {
            return Err(DataError::InvalidSpec(format!(
                "extent {}x{} below {MIN_EXTENT}",
                self.height, self.width
            )));
        }
        if self.folds == 0 || self.patients_per_class == 0 {
            return Err(DataError::InvalidSpec("folds and patients must be positive".into()));
        }
        let t = &self.texture;
        let (lo, hi) = t.lesion_fraction;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return Err(DataError::InvalidSpec("lesion fraction range".into()));
        }
        if t.specular_count.0 > t.specular_count.1 {
            return Err(DataError::InvalidSpec("specular count range".into()));
        }
        Ok(())
    }

    fn stream(fold: usize, split: Split, label: Label, index: usize, kind: u64) -> u64 {
        let split = split as u64;
        let class = label.class_index() as u64;
        (kind << 60) ^ ((fold as u64) << 40) ^ (split << 36) ^ (class << 32) ^ index as u64
    }

    pub fn patient_id(fold: usize, split: Split, label: Label, patient: usize) -> String {
        format!("f{fold}-{split}-{label}{patient:02}")
    }

    /// Renders one image deterministically.
    pub fn render(&self, fold: usize, split: Split, label: Label, index: usize) -> SyntheticImage {
        let patient = index % self.patients_per_class;
        let mut prng = SplitMix64::derive(self.seed, Self::stream(fold, split, label, patient, 1));
        let look = PatientLook::draw(&mut prng, &self.texture);
        let mut rng = SplitMix64::derive(self.seed, Self::stream(fold, split, label, index, 2));
        Canvas::new(self.height, self.width).paint(&look, &self.texture, label, &mut rng)
    }
}

/// Per-patient appearance.
#[derive(Debug, Clone)]
struct PatientLook {
    base: [f64; 3],
    pigment: [f64; 3],
    vessel: [f64; 3],
    density_scale: f64,
    illum: (f64, f64, f64, f64),
}

impl PatientLook {
    fn draw(rng: &mut SplitMix64, _t: &TextureParams) -> Self {
        let j = |rng: &mut SplitMix64, v: f64, d: f64| (v + rng.uniform(-d, d)).clamp(0.0, 1.0);
        let base = [j(rng, 0.64, 0.06), j(rng, 0.56, 0.05), j(rng, 0.44, 0.05)];
        let pigment = [j(rng, 0.38, 0.05), j(rng, 0.22, 0.04), j(rng, 0.17, 0.04)];
        let vessel = [j(rng, 0.28, 0.04), j(rng, 0.38, 0.04), j(rng, 0.42, 0.04)];
        let density_scale = rng.uniform(0.75, 1.25);
        let angle = rng.uniform(0.0, TAU);
        let freq = rng.uniform(0.03, 0.09);
        let illum = (freq * angle.cos(), freq * angle.sin(), rng.uniform(0.0, TAU), rng.uniform(0.04, 0.12));
        Self {
            base,
            pigment,
            vessel,
            density_scale,
            illum,
        }
    }
}

/// One rendered sample with the generator's own ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticImage {
    pub height: usize,
    pub width: usize,
    /// Interleaved RGB bytes.
    pub rgb: Vec<u8>,
    /// Lesion region (class B only).
    pub mask: Option<Vec<bool>>,
    /// Width of every curvilinear stroke drawn (vessels, filaments, lesion strokes).
    pub stroke_widths: Vec<f64>,
}

impl SyntheticImage {
    pub fn mask_fraction(&self) -> f64 {
        self.mask.as_ref().map_or(0.0, |m| {
            m.iter().filter(|&&v| v).count() as f64 / m.len() as f64
        })
    }

    /// Mean width of the three widest strokes.
    pub fn stroke_width_statistic(&self) -> f64 {
        let mut w = self.stroke_widths.clone();
        w.sort_by(|a, b| b.total_cmp(a));
        let top = &w[..w.len().min(3)];
        if top.is_empty() {
            0.0
        } else {
            top.iter().sum::<f64>() / top.len() as f64
        }
    }

    pub fn raster(&self) -> Raster {
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            pixels: self.rgb.clone(),
        }
    }

    pub fn mask_raster(&self) -> Option<Raster> {
        self.mask.as_ref().map(|m| Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            pixels: m.iter().map(|&v| if v { 255 } else { 0 }).collect(),
        })
    }
}

struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    cos: f64,
    sin: f64,
}

impl Ellipse {
    fn contains(&self, y: f64, x: f64) -> bool {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let u = (dx * self.cos + dy * self.sin) / self.a;
        let v = (-dx * self.sin + dy * self.cos) / self.b;
        u * u + v * v <= 1.0
    }
}

struct Canvas {
    h: usize,
    w: usize,
    px: Vec<[f64; 3]>,
}

fn seg_distance(py: f64, px: f64, (ay, ax): (f64, f64), (by, bx): (f64, f64)) -> f64 {
    let (dy, dx) = (by - ay, bx - ax);
    let len2 = dy * dy + dx * dx;
    let t = if len2 > 0.0 {
        (((py - ay) * dy + (px - ax) * dx) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let (qy, qx) = (ay + t * dy, ax + t * dx);
    ((py - qy).powi(2) + (px - qx).powi(2)).sqrt()
}

impl Canvas {
    fn new(h: usize, w: usize) -> Self {
        Self {
            h,
            w,
            px: vec![[0.0; 3]; h * w],
        }
    }

    fn blend(&mut self, i: usize, color: [f64; 3], alpha: f64) {
        let p = &mut self.px[i];
        for c in 0..3 {
            p[c] += (color[c] - p[c]) * alpha;
        }
    }

    /// Anti-aliased polyline; `clip` restricts coverage to a region.
    fn stroke(&mut self, path: &[(f64, f64)], width: f64, color: [f64; 3], opacity: f64, clip: Option<&Ellipse>) {
        let r = width / 2.0;
        for seg in path.windows(2) {
            let (a, b) = (seg[0], seg[1]);
            let y0 = (a.0.min(b.0) - r - 1.0).floor().max(0.0) as usize;
            let y1 = ((a.0.max(b.0) + r + 1.0).ceil() as usize).min(self.h - 1);
            let x0 = (a.1.min(b.1) - r - 1.0).floor().max(0.0) as usize;
            let x1 = ((a.1.max(b.1) + r + 1.0).ceil() as usize).min(self.w - 1);
            for y in y0..=y1 {
                for x in x0..=x1 {
                    let (cy, cx) = (y as f64 + 0.5, x as f64 + 0.5);
                    if clip.is_some_and(|e| !e.contains(cy, cx)) {
                        continue;
                    }
                    let cover = (r + 0.5 - seg_distance(cy, cx, a, b)).clamp(0.0, 1.0);
                    if cover > 0.0 {
                        self.blend(y * self.w + x, color, cover * opacity);
                    }
                }
            }
        }
    }

    fn disk(&mut self, cy: f64, cx: f64, radius: f64, color: [f64; 3], opacity: f64) {
        self.stroke(&[(cy, cx), (cy, cx)], 2.0 * radius, color, opacity, None);
    }

    fn walk(
        rng: &mut SplitMix64,
        start: (f64, f64),
        steps: usize,
        step_len: f64,
        tortuosity: f64,
        region: Option<&Ellipse>,
        bounds: (f64, f64),
    ) -> Vec<(f64, f64)> {
        let mut heading = rng.uniform(0.0, TAU);
        let mut p = start;
        let mut path = vec![p];
        for _ in 0..steps {
            heading += tortuosity * rng.normal();
            let mut next = (p.0 + step_len * heading.sin(), p.1 + step_len * heading.cos());
            let outside = |q: (f64, f64)| {
                q.0 < 0.0 || q.1 < 0.0 || q.0 >= bounds.0 || q.1 >= bounds.1
                    || region.is_some_and(|e| !e.contains(q.0, q.1))
            };
            if outside(next) {
                heading += PI + rng.uniform(-0.5, 0.5);
                next = (p.0 + step_len * heading.sin(), p.1 + step_len * heading.cos());
                if outside(next) {
                    continue;
                }
            }
            p = next;
            path.push(p);
        }
        path
    }

    fn paint(mut self, look: &PatientLook, t: &TextureParams, label: Label, rng: &mut SplitMix64) -> SyntheticImage {
        let (h, w) = (self.h as f64, self.w as f64);
        let area_k = h * w / 1000.0;
        let (fy, fx, phase, amp) = look.illum;
        for y in 0..self.h {
            for x in 0..self.w {
                let shade = 1.0 + amp * (fy * y as f64 + fx * x as f64 + phase).sin();
                let i = y * self.w + x;
                for c in 0..3 {
                    self.px[i][c] = look.base[c] * shade;
                }
            }
        }
        let mut widths = Vec::new();

        let vessels = (t.vessel_density * area_k * look.density_scale).round().max(1.0) as usize;
        for _ in 0..vessels {
            let start = (rng.uniform(0.0, h), rng.uniform(0.0, w));
            let steps = 15 + rng.below(20);
            let path = Self::walk(rng, start, steps, 2.0, 0.15, None, (h, w));
            let width = rng.uniform(t.vessel_width.0, t.vessel_width.1);
            self.stroke(&path, width, look.vessel, 0.6, None);
            widths.push(width);
        }

        let dots = (t.dot_density * area_k * look.density_scale).round() as usize;
        for _ in 0..dots {
            let (cy, cx) = (rng.uniform(0.0, h), rng.uniform(0.0, w));
            let radius = rng.uniform(t.dot_radius.0, t.dot_radius.1);
            let theta = rng.uniform(0.0, TAU);
            let len = rng.uniform(3.0, 6.0);
            let tail = (cy + len * theta.sin(), cx + len * theta.cos());
            self.stroke(&[(cy, cx), tail], t.filament_width, look.pigment, 0.45, None);
            widths.push(t.filament_width);
            self.disk(cy, cx, radius, look.pigment, 0.85);
        }

        let mask = (label == Label::B).then(|| {
            let lesion = self.lesion_region(rng, t);
            let strokes = ((lesion.a * lesion.b * PI) / 120.0).ceil() as usize;
            for _ in 0..strokes {
                // rejection-sample a start point inside the region
                let start = loop {
                    let r = lesion.a.max(lesion.b);
                    let q = (lesion.cy + rng.uniform(-r, r), lesion.cx + rng.uniform(-r, r));
                    if lesion.contains(q.0, q.1) {
                        break q;
                    }
                };
                let steps = 8 + rng.below(12);
                let path = Self::walk(rng, start, steps, 1.5, t.tortuosity, Some(&lesion), (h, w));
                let width = rng.uniform(t.lesion_width.0, t.lesion_width.1);
                let dark = look.pigment.map(|c| c * 0.85);
                self.stroke(&path, width, dark, 0.9, Some(&lesion));
                widths.push(width);
            }
            let mut m = vec![false; self.h * self.w];
            for y in 0..self.h {
                for x in 0..self.w {
                    m[y * self.w + x] = lesion.contains(y as f64 + 0.5, x as f64 + 0.5);
                }
            }
            m
        });

        let (lo, hi) = t.specular_count;
        let speculars = lo + rng.below(hi - lo + 1);
        for _ in 0..speculars {
            let (cy, cx) = (rng.uniform(0.0, h), rng.uniform(0.0, w));
            let sigma = rng.uniform(1.0, 2.0);
            let reach = (3.0 * sigma).ceil() as isize;
            for dy in -reach..=reach {
                for dx in -reach..=reach {
                    let (y, x) = (cy as isize + dy, cx as isize + dx);
                    if y < 0 || x < 0 || y >= self.h as isize || x >= self.w as isize {
                        continue;
                    }
                    let d2 = (y as f64 + 0.5 - cy).powi(2) + (x as f64 + 0.5 - cx).powi(2);
                    let a = 0.95 * (-d2 / (2.0 * sigma * sigma)).exp();
                    self.blend(y as usize * self.w + x as usize, [1.0, 1.0, 1.0], a);
                }
            }
        }

        let mut rgb = Vec::with_capacity(self.h * self.w * 3);
        for p in &self.px {
            for &c in p {
                let v = c + 0.015 * rng.normal();
                rgb.push((v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        SyntheticImage {
            height: self.h,
            width: self.w,
            rgb,
            mask,
            stroke_widths: widths,
        }
    }

    fn lesion_region(&self, rng: &mut SplitMix64, t: &TextureParams) -> Ellipse {
        let (h, w) = (self.h as f64, self.w as f64);
        let frac = rng.uniform(t.lesion_fraction.0, t.lesion_fraction.1);
        let aspect = rng.uniform(0.6, 1.6);
        let area = frac * h * w;
        let limit = h.min(w) / 2.0 - 1.0;
        let a = (area * aspect / PI).sqrt().min(limit);
        let b = (area / (aspect * PI)).sqrt().min(limit);
        let r = a.max(b);
        let angle = rng.uniform(0.0, PI);
        Ellipse {
            cy: rng.uniform(r + 1.0, h - r - 1.0),
            cx: rng.uniform(r + 1.0, w - r - 1.0),
            a,
            b,
            cos: angle.cos(),
            sin: angle.sin(),
        }
    }
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    fs::write(path, bytes).map_err(|e| DataError::IoFailure(format!("{}: {e}", path.display())))
}

/// Writes every fold under `out_dir` plus `out_dir/manifest.csv`.
///
/// Layout: `fold<k>/<split>/<class>/imgNNNN.ppm`, with `imgNNNN.mask.pgm`
/// next to each class-B image. Folds are numbered from 1.
pub fn generate_synthetic(spec: &SyntheticSpec, out_dir: impl AsRef<Path>) -> Result<Vec<FoldManifest>, DataError> {
    spec.validate()?;
    let out_dir = out_dir.as_ref();
    let mut folds = Vec::with_capacity(spec.folds);
    for fold in 1..=spec.folds {
        let mut samples = Vec::new();
        for split in Split::ALL {
            for label in Label::ALL {
                let n = spec.counts.get(split).get(label);
                if n == 0 {
                    continue;
                }
                let rel_dir = PathBuf::from(format!("fold{fold}/{split}/{label}"));
                let dir = out_dir.join(&rel_dir);
                fs::create_dir_all(&dir).map_err(|e| DataError::IoFailure(format!("{}: {e}", dir.display())))?;
                for index in 0..n {
                    let img = spec.render(fold, split, label, index);
                    let name = format!("img{index:04}");
                    let rel = rel_dir.join(format!("{name}.ppm"));
                    write_bytes(&out_dir.join(&rel), &encode(&img.raster()))?;
                    if let Some(mask) = img.mask_raster() {
                        write_bytes(&dir.join(format!("{name}.mask.pgm")), &encode(&mask))?;
                    }
                    samples.push(Sample {
                        resolved: out_dir.join(&rel),
                        path: rel,
                        label,
                        patient_id: SyntheticSpec::patient_id(fold, split, label, index % spec.patients_per_class),
                        split,
                        fold,
                    });
                }
            }
        }
        let manifest = FoldManifest { fold, samples };
        manifest.check_patient_disjoint()?;
        folds.push(manifest);
    }
    write_bytes(&out_dir.join("manifest.csv"), render_manifest(&folds).as_bytes())?;
    Ok(folds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            counts: SplitCounts {
                train: ClassCounts { a: 10, b: 10 },
                val: ClassCounts { a: 10, b: 10 },
                test: ClassCounts { a: 10, b: 10 },
            },
            seed: 17,
            ..Default::default()
        }
    }

    #[test]
    fn render_is_deterministic() {
        let spec = small();
        assert_eq!(spec.render(1, Split::Train, Label::B, 3), spec.render(1, Split::Train, Label::B, 3));
        assert_ne!(spec.render(1, Split::Train, Label::B, 3).rgb, spec.render(1, Split::Train, Label::B, 4).rgb);
    }

    #[test]
    fn mask_fraction_in_range() {
        let spec = SyntheticSpec {
            seed: 3,
            ..Default::default()
        };
        for i in 0..200 {
            let img = spec.render(1, Split::Train, Label::B, i);
            let f = img.mask_fraction();
            assert!((0.05..=0.40).contains(&f), "image {i}: {f}");
            assert!(spec.render(1, Split::Train, Label::A, i).mask.is_none());
        }
    }

    #[test]
    fn width_statistic_separates_classes() {
        let spec = SyntheticSpec {
            seed: 5,
            ..Default::default()
        };
        let t = &spec.texture;
        let threshold = (t.vessel_width.1 + t.lesion_width.0) / 2.0;
        let mut correct = 0;
        let n = 200;
        for i in 0..n {
            for label in Label::ALL {
                let stat = spec.render(1, Split::Val, label, i).stroke_width_statistic();
                let predicted = if stat > threshold { Label::B } else { Label::A };
                correct += usize::from(predicted == label);
            }
        }
        assert!(correct as f64 / (2 * n) as f64 >= 0.95, "{correct}");
    }

    #[test]
    fn invalid_specs() {
        let tiny = SyntheticSpec {
            height: 16,
            ..Default::default()
        };
        assert!(matches!(tiny.validate(), Err(DataError::InvalidSpec(_))));
    }
}
