//! Overlapping tile lattice over the masked region, plus box-derived tiles.

use crate::error::{Error, Result};
use crate::types::{Bag, BagLabel, BoxAnnotation, Provenance, RegionMask, Tile, TileLabel};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TilerConfig {
    pub tile_size: usize,
    pub step: usize,
    /// Minimum foreground fraction of a tile footprint for inclusion.
    pub inclusion_fraction: f64,
}

impl TilerConfig {
    /// Tile of side `tile_size` with half-tile overlap and a 50% inclusion rule.
    pub fn with_tile_size(tile_size: usize) -> Self {
        Self {
            tile_size,
            step: (tile_size / 2).max(1),
            inclusion_fraction: 0.5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tile_size == 0 {
            return Err(Error::InvalidConfig("tile_size must be at least 1".into()));
        }
        if self.step == 0 || self.step > self.tile_size {
            return Err(Error::InvalidConfig(format!(
                "step must lie in 1..={}, got {}",
                self.tile_size, self.step
            )));
        }
        if !(self.inclusion_fraction > 0.0 && self.inclusion_fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "inclusion_fraction must lie in (0, 1], got {}",
                self.inclusion_fraction
            )));
        }
        Ok(())
    }

    pub fn validate_for(&self, height: usize, width: usize) -> Result<()> {
        self.validate()?;
        if self.tile_size > height.min(width) {
            return Err(Error::InvalidConfig(format!(
                "tile_size {} exceeds image {}x{}",
                self.tile_size, height, width
            )));
        }
        Ok(())
    }
}

impl Default for TilerConfig {
    fn default() -> Self {
        Self::with_tile_size(50)
    }
}

/// The regular origin lattice shared by tiling and sliding-window inference.
///
/// Origins sit at multiples of `step`; a right or bottom strip narrower than
/// a full step is not covered.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Lattice {
    pub rows: usize,
    pub cols: usize,
    pub size: usize,
    pub step: usize,
}

impl Lattice {
    pub fn new(height: usize, width: usize, size: usize, step: usize) -> Self {
        let axis = |n: usize| if n < size { 0 } else { (n - size) / step + 1 };
        Self {
            rows: axis(height),
            cols: axis(width),
            size,
            step,
        }
    }

    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn origin(&self, cell_row: usize, cell_col: usize) -> (usize, usize) {
        (cell_row * self.step, cell_col * self.step)
    }

    /// Origins in row-major order.
    pub fn origins(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.rows).flat_map(move |a| (0..self.cols).map(move |b| self.origin(a, b)))
    }
}

/// Summed-area table of a mask, for O(1) rectangle counts.
pub(crate) struct MaskIntegral {
    width: usize,
    sums: Vec<u32>,
}

impl MaskIntegral {
    pub(crate) fn new(mask: &RegionMask) -> Self {
        let (h, w) = mask.shape();
        let mut sums = vec![0u32; (h + 1) * (w + 1)];
        for r in 0..h {
            let mut row_sum = 0;
            for c in 0..w {
                row_sum += mask.get(r, c) as u32;
                sums[(r + 1) * (w + 1) + c + 1] = sums[r * (w + 1) + c + 1] + row_sum;
            }
        }
        Self { width: w + 1, sums }
    }

    pub(crate) fn count(&self, row: usize, col: usize, size: usize) -> u32 {
        let w = self.width;
        let (r1, c1) = (row + size, col + size);
        self.sums[r1 * w + c1] + self.sums[row * w + col] - self.sums[row * w + c1] - self.sums[r1 * w + col]
    }
}

/// Inclusion test shared with inference: foreground / area >= fraction.
#[inline]
pub(crate) fn passes_inclusion(foreground: u32, size: usize, fraction: f64) -> bool {
    foreground as f64 >= fraction * (size * size) as f64
}

/// Lattice cells of `mask` that pass the inclusion rule, as
/// (cell_row, cell_col, origin_row, origin_col), row-major.
pub(crate) fn included_cells(
    mask: &RegionMask,
    config: &TilerConfig,
) -> (Lattice, Vec<(usize, usize, usize, usize)>) {
    let lattice = Lattice::new(mask.height(), mask.width(), config.tile_size, config.step);
    let integral = MaskIntegral::new(mask);
    let mut cells = Vec::new();
    for a in 0..lattice.rows {
        for b in 0..lattice.cols {
            let (r, c) = lattice.origin(a, b);
            if passes_inclusion(integral.count(r, c, config.tile_size), config.tile_size, config.inclusion_fraction) {
                cells.push((a, b, r, c));
            }
        }
    }
    (lattice, cells)
}

/// Weak tiles over the masked region, labeled with the bag label.
pub fn partition_tiles(bag: &Bag, config: &TilerConfig) -> Result<Vec<Tile>> {
    config.validate_for(bag.image.height(), bag.image.width())?;
    if bag.mask.shape() != bag.image.shape() {
        return Err(Error::ShapeMismatch {
            expected: bag.image.shape(),
            found: bag.mask.shape(),
        });
    }
    let (_, cells) = included_cells(&bag.mask, config);
    if cells.is_empty() {
        return Err(Error::NoTilesIncluded);
    }
    Ok(cells
        .into_iter()
        .enumerate()
        .map(|(j, (_, _, row, col))| Tile {
            bag_index: bag.index,
            tile_index: j,
            row,
            col,
            size: config.tile_size,
            label: TileLabel::from(bag.label),
            provenance: Provenance::Weak,
        })
        .collect())
}

/// One positive tile per box, its origin clamped so the footprint stays in
/// the image. A box may overhang the right or bottom edge; a box whose origin
/// lies outside the image is an error.
pub fn extract_reinforced_tiles(bag: &Bag, config: &TilerConfig) -> Result<Vec<Tile>> {
    let (h, w) = bag.image.shape();
    config.validate_for(h, w)?;
    if bag.label == BagLabel::Negative {
        return Ok(Vec::new());
    }
    bag.boxes
        .iter()
        .enumerate()
        .map(|(j, b)| {
            if b.row >= h || b.col >= w || b.height == 0 || b.width == 0 {
                return Err(box_error(b, h, w));
            }
            let s = config.tile_size;
            Ok(Tile {
                bag_index: bag.index,
                tile_index: j,
                row: b.row.min(h - s),
                col: b.col.min(w - s),
                size: s,
                label: TileLabel::Positive,
                provenance: Provenance::Reinforced,
            })
        })
        .collect()
}

pub(crate) fn box_error(b: &BoxAnnotation, h: usize, w: usize) -> Error {
    Error::BoxOutsideImage {
        row: b.row,
        col: b.col,
        height: b.height,
        width: b.width,
        img_h: h,
        img_w: w,
    }
}
