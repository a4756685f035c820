//! Sliding-window inference, the image-level decision rule, and heatmaps.

use std::io::Write;
use std::path::Path;

use image::{Rgb, RgbImage, Rgba, RgbaImage};
use rayon::prelude::*;

use crate::classifier::ClassifierModel;
use crate::error::{Error, Result};
use crate::tiler::{included_cells, Lattice, TilerConfig};
use crate::types::{BagLabel, LesionImage, RegionMask};

/// Default decision threshold: a window is positive if p exceeds it.
pub const DEFAULT_THRESHOLD: f64 = 0.5;
pub const DEFAULT_ALPHA: f64 = 0.4;

/// Window probabilities on the tiler's lattice. `None` marks windows that
/// failed the mask inclusion test.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbabilityMatrix {
    pub rows: usize,
    pub cols: usize,
    pub window: usize,
    pub stride: usize,
    pub cells: Vec<Option<f64>>,
}

impl ProbabilityMatrix {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.cells[row * self.cols + col]
    }

    pub fn origin(&self, row: usize, col: usize) -> (usize, usize) {
        (row * self.stride, col * self.stride)
    }

    /// (cell_row, cell_col, origin_row, origin_col, p) for present cells.
    pub fn present(&self) -> impl Iterator<Item = (usize, usize, usize, usize, f64)> + '_ {
        self.cells.iter().enumerate().filter_map(move |(i, p)| {
            p.map(|p| {
                let (r, c) = (i / self.cols, i % self.cols);
                let (or, oc) = self.origin(r, c);
                (r, c, or, oc, p)
            })
        })
    }

    /// CSV `row,col,origin_r,origin_c,p`; absent cells are omitted.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "row,col,origin_r,origin_c,p")?;
        for (r, c, or, oc, p) in self.present() {
            writeln!(f, "{r},{c},{or},{oc},{p}")?;
        }
        f.flush()?;
        Ok(())
    }
}

/// Classifies every included window of the lattice defined by `windows`.
pub fn slide_windows(
    model: &ClassifierModel,
    image: &LesionImage,
    mask: &RegionMask,
    windows: &TilerConfig,
) -> Result<ProbabilityMatrix> {
    windows.validate()?;
    model.check_tile_size(windows.tile_size)?;
    if mask.shape() != image.shape() {
        return Err(Error::ShapeMismatch {
            expected: image.shape(),
            found: mask.shape(),
        });
    }
    let (lattice, included): (Lattice, _) = included_cells(mask, windows);
    let probs: Vec<(usize, f64)> = included
        .par_iter()
        .map_init(
            || model.predictor(),
            |pred, &(a, b, r, c)| pred.predict_window(image, r, c).map(|p| (a * lattice.cols + b, p)),
        )
        .collect::<Result<_>>()?;
    let mut cells = vec![None; lattice.len()];
    for (i, p) in probs {
        cells[i] = Some(p);
    }
    Ok(ProbabilityMatrix {
        rows: lattice.rows,
        cols: lattice.cols,
        window: windows.tile_size,
        stride: windows.step,
        cells,
    })
}

/// Positive iff some present window has p strictly above `threshold`.
pub fn classify_image(matrix: &ProbabilityMatrix, threshold: f64) -> BagLabel {
    if matrix.cells.iter().flatten().any(|&p| p > threshold) {
        BagLabel::Positive
    } else {
        BagLabel::Negative
    }
}

/// Maximum window probability, or 0 when no window is present.
pub fn image_score(matrix: &ProbabilityMatrix) -> f64 {
    matrix.cells.iter().flatten().fold(0.0, |m, &p| m.max(p))
}

/// How overlapping windows combine into a per-pixel probability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fusion {
    #[default]
    Mean,
    Max,
}

/// Overlay colors with per-pixel alpha, plus the blended result.
#[derive(Debug, Clone, PartialEq)]
pub struct Heatmap {
    /// Colormap RGB with alpha; alpha is 0 where no present window covers
    /// the pixel or the pixel lies outside the mask.
    pub overlay: RgbaImage,
    /// alpha·color + (1−alpha)·original.
    pub composite: RgbImage,
    pub probability: Vec<Option<f64>>,
}

/// Hue 240° (blue) at p = 0 down to 0° (red) at p = 1.
pub fn probability_hue(p: f64) -> f64 {
    240.0 * (1.0 - p.clamp(0.0, 1.0))
}

/// Fully saturated, full-value HSV color as floating RGB in [0, 1].
pub fn hue_to_rgb(hue: f64) -> [f64; 3] {
    let h = (hue.rem_euclid(360.0)) / 60.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    match h as u32 {
        0 => [1.0, x, 0.0],
        1 => [x, 1.0, 0.0],
        2 => [0.0, 1.0, x],
        3 => [0.0, x, 1.0],
        4 => [x, 0.0, 1.0],
        _ => [1.0, 0.0, x],
    }
}

/// Per-pixel probability from overlapping present windows.
pub fn pixel_probabilities(matrix: &ProbabilityMatrix, height: usize, width: usize, fusion: Fusion) -> Vec<Option<f64>> {
    let mut acc = vec![0.0f64; height * width];
    let mut count = vec![0u32; height * width];
    for (_, _, or, oc, p) in matrix.present() {
        for r in or..(or + matrix.window).min(height) {
            for c in oc..(oc + matrix.window).min(width) {
                let i = r * width + c;
                match fusion {
                    Fusion::Mean => acc[i] += p,
                    Fusion::Max => acc[i] = acc[i].max(p),
                }
                count[i] += 1;
            }
        }
    }
    acc.iter()
        .zip(&count)
        .map(|(&a, &n)| match (n, fusion) {
            (0, _) => None,
            (n, Fusion::Mean) => Some(a / n as f64),
            (_, Fusion::Max) => Some(a),
        })
        .collect()
}

pub fn render_heatmap(
    matrix: &ProbabilityMatrix,
    image: &LesionImage,
    mask: &RegionMask,
    alpha: f64,
    fusion: Fusion,
) -> Result<Heatmap> {
    if mask.shape() != image.shape() {
        return Err(Error::ShapeMismatch {
            expected: image.shape(),
            found: mask.shape(),
        });
    }
    let (h, w) = image.shape();
    let lattice = Lattice::new(h, w, matrix.window, matrix.stride);
    if lattice.rows != matrix.rows || lattice.cols != matrix.cols {
        return Err(Error::ShapeMismatch {
            expected: (lattice.rows, lattice.cols),
            found: (matrix.rows, matrix.cols),
        });
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::InvalidConfig(format!("alpha must lie in [0, 1], got {alpha}")));
    }
    let mut probability = pixel_probabilities(matrix, h, w, fusion);
    let mut overlay = RgbaImage::new(w as u32, h as u32);
    let mut composite = image.pixels.clone();
    for r in 0..h {
        for c in 0..w {
            let i = r * w + c;
            if !mask.get(r, c) {
                probability[i] = None;
            }
            let Some(p) = probability[i] else { continue };
            let color = hue_to_rgb(probability_hue(p)).map(|v| (v * 255.0).round() as u8);
            overlay.put_pixel(c as u32, r as u32, Rgba([color[0], color[1], color[2], (alpha * 255.0).round() as u8]));
            let orig = image.pixels.get_pixel(c as u32, r as u32).0;
            let blend = |k: usize| (alpha * color[k] as f64 + (1.0 - alpha) * orig[k] as f64).round() as u8;
            composite.put_pixel(c as u32, r as u32, Rgb([blend(0), blend(1), blend(2)]));
        }
    }
    Ok(Heatmap {
        overlay,
        composite,
        probability,
    })
}
