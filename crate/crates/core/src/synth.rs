//! Seeded generator of synthetic lesion images.
//!
//! Every image holds a textured elliptical region of interest with a darker
//! rim on a light, noisy background. Positive images add short comb-like
//! serrations straddling the rim, each recorded as a box annotation. Both
//! classes carry fainter folds deep inside the region, and may show a piece
//! of neighbouring tissue cut off by the image border whose edge bears the
//! same serration motif, so anything outside the mask is uninformative about
//! the label.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use image::{Rgb, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::classifier::mix_seed;
use crate::error::{Error, Result};
use crate::imageio::{read_mask, write_image, write_mask};
use crate::manifest::{read_manifest, write_manifest, ManifestRow};
use crate::types::{BagLabel, BoxAnnotation, MaskSource, RegionMask};

#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub seed: u64,
    pub n_pos: usize,
    pub n_neg: usize,
    pub image_size: usize,
    /// Semi-axis range as a fraction of `image_size`.
    pub blob_radius: (f64, f64),
    /// Inclusive range of serrations per positive image.
    pub spikes: (usize, usize),
    /// Inclusive motif diameter range in pixels.
    pub motif_size: (usize, usize),
    pub noise_std: f64,
    pub box_size: usize,
    /// Chance that an image (of either class) shows neighbouring tissue at
    /// its border.
    pub debris_probability: f64,
    /// Inclusive range of interior folds per image, in both classes. A fold
    /// is drawn like a serration but lies well inside the region, away from
    /// the rim.
    pub folds: (usize, usize),
    /// When false, positives keep their boxes but the motifs are not drawn.
    pub render_spikes: bool,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            n_pos: 10,
            n_neg: 10,
            image_size: 128,
            blob_radius: (0.30, 0.42),
            spikes: (3, 8),
            motif_size: (12, 16),
            noise_std: 8.0,
            box_size: 16,
            debris_probability: 0.5,
            folds: (1, 3),
            render_spikes: true,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        let (lo, hi) = self.blob_radius;
        if !(0.0 < lo && lo <= hi && hi < 0.5) {
            return bad(format!("blob radius range {lo}..{hi} must satisfy 0 < lo <= hi < 0.5"));
        }
        if self.spikes.0 > self.spikes.1 || self.spikes.1 == 0 {
            return bad("spike count range must be non-empty and positive".into());
        }
        if self.motif_size.0 == 0 || self.motif_size.0 > self.motif_size.1 {
            return bad("motif size range must be non-empty and positive".into());
        }
        if self.motif_size.1 > self.box_size || self.box_size * 4 > self.image_size {
            return bad(format!(
                "need motif size <= box size <= image_size/4 (motif {}, box {}, image {})",
                self.motif_size.1, self.box_size, self.image_size
            ));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad("noise_std must be finite and non-negative".into());
        }
        if self.folds.0 > self.folds.1 {
            return bad("fold count range must be non-empty".into());
        }
        if !(0.0..=1.0).contains(&self.debris_probability) {
            return bad("debris_probability must lie in [0, 1]".into());
        }
        Ok(())
    }
}

/// One generated image with its ground truth.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub id: String,
    pub image: RgbImage,
    pub mask: RegionMask,
    pub label: BagLabel,
    pub boxes: Vec<BoxAnnotation>,
    /// Serration centers (row, col) and diameters.
    pub spikes: Vec<(f64, f64, usize)>,
}

#[derive(Debug, Clone, Copy)]
struct Ellipse {
    cy: f64,
    cx: f64,
    a: f64,
    b: f64,
    angle: f64,
}

impl Ellipse {
    /// Normalized radius: <= 1 inside.
    fn q(&self, y: f64, x: f64) -> f64 {
        let (dy, dx) = (y - self.cy, x - self.cx);
        let (s, c) = self.angle.sin_cos();
        let u = (dx * c + dy * s) / self.a;
        let v = (-dx * s + dy * c) / self.b;
        (u * u + v * v).sqrt()
    }

    /// Boundary point and outward unit normal at parameter `t`.
    fn boundary(&self, t: f64) -> ((f64, f64), (f64, f64)) {
        let (s, c) = self.angle.sin_cos();
        let (ux, uy) = (self.a * t.cos(), self.b * t.sin());
        let px = self.cx + ux * c - uy * s;
        let py = self.cy + ux * s + uy * c;
        let (gx, gy) = (t.cos() / self.a, t.sin() / self.b);
        let (nx, ny) = (gx * c - gy * s, gx * s + gy * c);
        let norm = (nx * nx + ny * ny).sqrt();
        ((py, px), (ny / norm, nx / norm))
    }
}

const BACKGROUND: [f64; 3] = [232.0, 226.0, 230.0];
const TISSUE: [f64; 3] = [176.0, 112.0, 150.0];
const NUCLEUS: [f64; 3] = [96.0, 60.0, 110.0];
const STROKE_DARK: [f64; 3] = [45.0, 30.0, 55.0];
const STROKE_LIGHT: [f64; 3] = [245.0, 240.0, 245.0];
const RIM_WIDTH: f64 = 2.0;
const RIM_SHADE: f64 = 0.7;
/// Stroke strength of interior folds relative to a serration.
const FOLD_CONTRAST: f64 = 0.85;
/// Minimum gap between an interior fold and the rim.
const FOLD_CLEARANCE: f64 = 16.0;
/// Minimum gap between neighbouring tissue and the region boundary.
const DEBRIS_MARGIN: f64 = 12.0;

struct Canvas {
    n: usize,
    rgb: Vec<[f64; 3]>,
}

impl Canvas {
    fn paint(&mut self, y: usize, x: usize, color: [f64; 3]) {
        self.rgb[y * self.n + x] = color;
    }

    /// Fills the pixels of an ellipse with wavy tissue texture, nuclei and a
    /// darker rim.
    fn draw_tissue(&mut self, e: &Ellipse, rng: &mut ChaCha8Rng) {
        let waves: Vec<(f64, f64, f64, f64)> = (0..2)
            .map(|_| {
                (
                    rng.random_range(0.08..0.25),
                    rng.random_range(0.0..PI),
                    rng.random_range(0.0..2.0 * PI),
                    rng.random_range(8.0..16.0),
                )
            })
            .collect();
        let rim = RIM_WIDTH / e.a.min(e.b);
        let n = self.n;
        for y in 0..n {
            for x in 0..n {
                let q = e.q(y as f64, x as f64);
                if q > 1.0 {
                    continue;
                }
                let mut shade = 0.0;
                for &(f, dir, phase, amp) in &waves {
                    shade += amp * (f * (x as f64 * dir.cos() + y as f64 * dir.sin()) + phase).sin();
                }
                let mut c = TISSUE.map(|v| v + shade);
                if q > 1.0 - rim {
                    c = c.map(|v| v * RIM_SHADE);
                }
                self.paint(y, x, c);
            }
        }
        let area = PI * e.a * e.b;
        let nuclei = (area / 300.0).round() as usize;
        for _ in 0..nuclei {
            let t = rng.random_range(0.0..2.0 * PI);
            let r = rng.random_range(0.0..0.8f64).sqrt();
            let (s, c) = e.angle.sin_cos();
            let (ux, uy) = (e.a * r * t.cos(), e.b * r * t.sin());
            let (cx, cy) = (e.cx + ux * c - uy * s, e.cy + ux * s + uy * c);
            let rad: f64 = rng.random_range(1.2..2.4);
            self.disk(cy, cx, rad, |_, _| Some(NUCLEUS));
        }
    }

    /// Calls `color` for every pixel within `radius` of the center, with the
    /// offset (dy, dx); `None` leaves the pixel alone.
    fn disk(&mut self, cy: f64, cx: f64, radius: f64, mut color: impl FnMut(f64, f64) -> Option<[f64; 3]>) {
        let n = self.n as isize;
        let (y0, y1) = ((cy - radius).floor() as isize, (cy + radius).ceil() as isize);
        let (x0, x1) = ((cx - radius).floor() as isize, (cx + radius).ceil() as isize);
        for y in y0.max(0)..=y1.min(n - 1) {
            for x in x0.max(0)..=x1.min(n - 1) {
                let (dy, dx) = (y as f64 - cy, x as f64 - cx);
                if dy * dy + dx * dx <= radius * radius {
                    if let Some(c) = color(dy, dx) {
                        self.paint(y as usize, x as usize, c);
                    }
                }
            }
        }
    }

    /// Alternating dark/light strokes along `normal`, stacked across the
    /// tangent, inside a disk of diameter `size`. `contrast` blends the
    /// strokes over what is already painted (1 replaces it).
    fn draw_comb(&mut self, center: (f64, f64), normal: (f64, f64), size: usize, strokes: usize, contrast: f64) {
        let half = size as f64 / 2.0;
        let stripe = size as f64 / (2 * strokes - 1) as f64;
        let tangent = (-normal.1, normal.0);
        let n = self.n;
        let under = self.rgb.clone();
        self.disk(center.0, center.1, half, |dy, dx| {
            let u = dy * tangent.0 + dx * tangent.1 + half;
            let k = ((u / stripe).floor() as isize).clamp(0, 2 * strokes as isize - 2);
            let stroke = if k % 2 == 0 { STROKE_DARK } else { STROKE_LIGHT };
            let (y, x) = ((center.0 + dy).round() as usize, (center.1 + dx).round() as usize);
            let old = under[y * n + x];
            Some([0, 1, 2].map(|i| old[i] + contrast * (stroke[i] - old[i])))
        });
    }

    fn into_image(self, noise_std: f64, rng: &mut ChaCha8Rng) -> RgbImage {
        let normal = Normal::new(0.0, noise_std.max(f64::MIN_POSITIVE)).unwrap();
        let n = self.n as u32;
        let mut img = RgbImage::new(n, n);
        for (i, c) in self.rgb.iter().enumerate() {
            let px = c.map(|v| {
                let noise = if noise_std > 0.0 { normal.sample(rng) } else { 0.0 };
                (v + noise).round().clamp(0.0, 255.0) as u8
            });
            img.put_pixel(i as u32 % n, i as u32 / n, Rgb(px));
        }
        img
    }
}

fn sample_blob(cfg: &GenConfig, rng: &mut ChaCha8Rng) -> Ellipse {
    let n = cfg.image_size as f64;
    let jitter = 0.04 * n;
    let cy = n / 2.0 + rng.random_range(-jitter..=jitter);
    let cx = n / 2.0 + rng.random_range(-jitter..=jitter);
    let (lo, hi) = cfg.blob_radius;
    let room = (cy.min(n - 1.0 - cy)).min(cx.min(n - 1.0 - cx)) - 2.0;
    let a = (rng.random_range(lo..=hi) * n).min(room);
    let b = (rng.random_range(lo..=hi) * n).min(room);
    Ellipse {
        cy,
        cx,
        a,
        b,
        angle: rng.random_range(0.0..PI),
    }
}

fn box_around(center: (f64, f64), size: usize, n: usize) -> BoxAnnotation {
    let clamp = |v: f64| ((v.round() as isize - size as isize / 2).max(0) as usize).min(n - size);
    BoxAnnotation::new(clamp(center.0), clamp(center.1), size, size)
}

/// Renders sample `index` of the given class. Deterministic in
/// (`cfg.seed`, `index`, `label`).
pub fn render_sample(cfg: &GenConfig, index: usize, label: BagLabel) -> SynthSample {
    let class_tag = if label.is_positive() { 1 } else { 2 };
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(mix_seed(cfg.seed, class_tag), index as u64));
    let n = cfg.image_size;
    let mut canvas = Canvas {
        n,
        rgb: vec![BACKGROUND; n * n],
    };
    let blob = sample_blob(cfg, &mut rng);
    canvas.draw_tissue(&blob, &mut rng);
    let mask = RegionMask::from_fn(n, n, MaskSource::OracleFile, |r, c| blob.q(r as f64, c as f64) <= 1.0);

    let folds = rng.random_range(cfg.folds.0..=cfg.folds.1);
    let mut placed: Vec<(f64, f64, f64)> = Vec::new();
    for _ in 0..folds * 20 {
        if placed.len() == folds {
            break;
        }
        let size = rng.random_range(cfg.motif_size.0..=cfg.motif_size.1);
        let strokes = rng.random_range(3..=5);
        let depth = 1.0 - (size as f64 / 2.0 + FOLD_CLEARANCE) / blob.a.min(blob.b);
        if depth <= 0.0 {
            break;
        }
        let t = rng.random_range(0.0..2.0 * PI);
        let r = depth * rng.random_range(0.0..1.0f64).sqrt();
        let (s, c) = blob.angle.sin_cos();
        let (ux, uy) = (blob.a * r * t.cos(), blob.b * r * t.sin());
        let center = (blob.cy + ux * s + uy * c, blob.cx + ux * c - uy * s);
        let half = size as f64 / 2.0;
        if placed.iter().any(|&(y, x, h)| ((y - center.0).powi(2) + (x - center.1).powi(2)).sqrt() < h + half + 2.0) {
            continue;
        }
        placed.push((center.0, center.1, half));
        let phi = rng.random_range(0.0..2.0 * PI);
        canvas.draw_comb(center, (phi.sin(), phi.cos()), size, strokes, FOLD_CONTRAST);
    }

    let mut spikes = Vec::new();
    let mut boxes = Vec::new();
    if label.is_positive() {
        let count = rng.random_range(cfg.spikes.0..=cfg.spikes.1);
        let mut attempts = 0;
        while spikes.len() < count && attempts < 200 {
            attempts += 1;
            let t = rng.random_range(0.0..2.0 * PI);
            let size = rng.random_range(cfg.motif_size.0..=cfg.motif_size.1);
            let strokes = rng.random_range(3..=5);
            let (p, normal) = blob.boundary(t);
            let crowded = spikes
                .iter()
                .any(|&(y, x, s): &(f64, f64, usize)| ((y - p.0).powi(2) + (x - p.1).powi(2)).sqrt() < (s.max(size)) as f64);
            if crowded {
                continue;
            }
            if cfg.render_spikes {
                canvas.draw_comb(p, normal, size, strokes, 1.0);
            }
            spikes.push((p.0, p.1, size));
            boxes.push(box_around(p, cfg.box_size, n));
        }
    }

    if rng.random_bool(cfg.debris_probability) {
        let size = rng.random_range(cfg.motif_size.0..=cfg.motif_size.1);
        let strokes = rng.random_range(3..=5);
        let rim: Vec<(f64, f64)> = (0..144).map(|k| blob.boundary(k as f64 * PI / 72.0).0).collect();
        let far = |p: (f64, f64), gap: f64| {
            rim.iter()
                .all(|&(y, x)| ((y - p.0).powi(2) + (x - p.1).powi(2)).sqrt() >= gap)
        };
        let last = n as f64 - 1.0;
        for _ in 0..100 {
            let r = rng.random_range(16.0..24.0);
            let reach = rng.random_range(8.0..14.0);
            let u = rng.random_range(0.0..last);
            let (cy, cx, facing) = match rng.random_range(0..4) {
                0 => (reach - r, u, PI / 2.0),
                1 => (last - reach + r, u, -PI / 2.0),
                2 => (u, reach - r, 0.0),
                _ => (u, last - reach + r, PI),
            };
            let phi = facing + rng.random_range(-0.5..0.5);
            let p = (cy + r * phi.sin(), cx + r * phi.cos());
            let inside = (0.0..=last).contains(&p.0) && (0.0..=last).contains(&p.1);
            if !inside || !far((cy, cx), r + DEBRIS_MARGIN) || !far(p, size as f64 / 2.0 + DEBRIS_MARGIN) {
                continue;
            }
            let frag = Ellipse { cy, cx, a: r, b: r, angle: 0.0 };
            canvas.draw_tissue(&frag, &mut rng);
            canvas.draw_comb(p, (phi.sin(), phi.cos()), size, strokes, 1.0);
            break;
        }
    }

    let id = format!("{}_{index:04}", if label.is_positive() { "pos" } else { "neg" });
    SynthSample {
        id,
        image: canvas.into_image(cfg.noise_std, &mut rng),
        mask,
        label,
        boxes,
        spikes,
    }
}

/// Writes `images/`, `masks/` and `manifest.csv` under `out_dir`; returns the
/// manifest path. Positives are listed first.
pub fn generate(cfg: &GenConfig, out_dir: impl AsRef<Path>) -> Result<PathBuf> {
    cfg.validate()?;
    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;
    let jobs: Vec<(usize, BagLabel)> = (0..cfg.n_pos)
        .map(|i| (i, BagLabel::Positive))
        .chain((0..cfg.n_neg).map(|i| (i, BagLabel::Negative)))
        .collect();
    let rows = jobs
        .par_iter()
        .map(|&(i, label)| {
            let s = render_sample(cfg, i, label);
            let image_rel = PathBuf::from("images").join(format!("{}.png", s.id));
            let mask_rel = PathBuf::from("masks").join(format!("{}.png", s.id));
            write_image(&s.image, out.join(&image_rel))?;
            write_mask(&s.mask, out.join(&mask_rel))?;
            Ok(ManifestRow {
                id: s.id,
                image_path: image_rel,
                mask_path: Some(mask_rel),
                label,
                boxes: s.boxes,
                line: 0,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let manifest = out.join("manifest.csv");
    write_manifest(&manifest, &rows)?;
    Ok(manifest)
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSummary {
    pub positives: usize,
    pub negatives: usize,
    pub boxes: usize,
    /// Mean foreground pixel count over rows that list a mask.
    pub mean_blob_area: f64,
}

pub fn describe(manifest: impl AsRef<Path>) -> Result<DatasetSummary> {
    let rows = read_manifest(manifest)?;
    let positives = rows.iter().filter(|r| r.label.is_positive()).count();
    let boxes = rows.iter().map(|r| r.boxes.len()).sum();
    let mut areas = Vec::new();
    for row in &rows {
        if let Some(p) = &row.mask_path {
            areas.push(read_mask(p)?.foreground_count() as f64);
        }
    }
    let mean_blob_area = if areas.is_empty() {
        0.0
    } else {
        areas.iter().sum::<f64>() / areas.len() as f64
    };
    Ok(DatasetSummary {
        positives,
        negatives: rows.len() - positives,
        boxes,
        mean_blob_area,
    })
}
