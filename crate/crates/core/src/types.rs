//! Domain types shared by every stage of the pipeline.
//!
//! An image is a *bag*; each square tile cut from its region of interest is an
//! *instance*. Bags carry an image-level label and, for positives, optional
//! box annotations that become trusted instance-level positives.

use std::fmt;
use std::str::FromStr;

use image::RgbImage;

use crate::error::{Error, Result};

/// Default physical pixel spacing in micrometers. Metadata only.
pub const DEFAULT_SPACING_UM: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum BagLabel {
    Positive,
    Negative,
}

impl BagLabel {
    pub fn is_positive(self) -> bool {
        self == BagLabel::Positive
    }

    /// 1 for positive, 0 for negative.
    pub fn as_target(self) -> u8 {
        match self {
            BagLabel::Positive => 1,
            BagLabel::Negative => 0,
        }
    }
}

impl fmt::Display for BagLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BagLabel::Positive => "pos",
            BagLabel::Negative => "neg",
        })
    }
}

impl FromStr for BagLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim() {
            "pos" => Ok(BagLabel::Positive),
            "neg" => Ok(BagLabel::Negative),
            other => Err(format!("label must be 'pos' or 'neg', got '{other}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TileLabel {
    Positive,
    Negative,
    Unknown,
}

impl From<BagLabel> for TileLabel {
    fn from(label: BagLabel) -> Self {
        match label {
            BagLabel::Positive => TileLabel::Positive,
            BagLabel::Negative => TileLabel::Negative,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Provenance {
    Weak,
    Reinforced,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskSource {
    OracleFile,
    BaselineSegmenter,
    /// Whole image treated as foreground (segmentation skipped).
    FullImage,
}

/// An RGB image together with its identifier.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionImage {
    pub id: String,
    pub pixels: RgbImage,
    pub spacing: f64,
}

impl LesionImage {
    pub fn new(id: impl Into<String>, pixels: RgbImage) -> Self {
        Self {
            id: id.into(),
            pixels,
            spacing: DEFAULT_SPACING_UM,
        }
    }

    pub fn height(&self) -> usize {
        self.pixels.height() as usize
    }

    pub fn width(&self) -> usize {
        self.pixels.width() as usize
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height(), self.width())
    }

    /// Copies the `size`x`size` window at (`row`, `col`) into `out` as
    /// row-major HWC floats scaled to [0, 1].
    pub fn window_into(&self, row: usize, col: usize, size: usize, out: &mut Vec<f32>) {
        out.clear();
        out.reserve(size * size * 3);
        let raw = self.pixels.as_raw();
        let stride = self.width() * 3;
        for r in row..row + size {
            let start = r * stride + col * 3;
            out.extend(raw[start..start + size * 3].iter().map(|&v| v as f32 / 255.0));
        }
    }

    pub fn window(&self, row: usize, col: usize, size: usize) -> Vec<f32> {
        let mut out = Vec::new();
        self.window_into(row, col, size, &mut out);
        out
    }
}

/// Binary region-of-interest mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RegionMask {
    height: usize,
    width: usize,
    data: Vec<bool>,
    pub source: MaskSource,
}

impl RegionMask {
    pub fn new(height: usize, width: usize, data: Vec<bool>, source: MaskSource) -> Self {
        assert_eq!(data.len(), height * width, "mask buffer length");
        Self {
            height,
            width,
            data,
            source,
        }
    }

    pub fn empty(height: usize, width: usize, source: MaskSource) -> Self {
        Self::new(height, width, vec![false; height * width], source)
    }

    pub fn full(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![true; height * width], MaskSource::FullImage)
    }

    pub fn from_fn(
        height: usize,
        width: usize,
        source: MaskSource,
        mut f: impl FnMut(usize, usize) -> bool,
    ) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                data.push(f(r, c));
            }
        }
        Self::new(height, width, data, source)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> bool {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: bool) {
        self.data[row * self.width + col] = value;
    }

    pub fn as_slice(&self) -> &[bool] {
        &self.data
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v).count()
    }

    /// Foreground pixel count inside a rectangle, via a direct scan.
    pub fn count_in(&self, row: usize, col: usize, height: usize, width: usize) -> usize {
        (row..row + height)
            .map(|r| {
                self.data[r * self.width + col..r * self.width + col + width]
                    .iter()
                    .filter(|&&v| v)
                    .count()
            })
            .sum()
    }

    pub fn with_source(mut self, source: MaskSource) -> Self {
        self.source = source;
        self
    }
}

/// A rectangular location-level annotation in pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct BoxAnnotation {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl BoxAnnotation {
    pub fn new(row: usize, col: usize, height: usize, width: usize) -> Self {
        Self {
            row,
            col,
            height,
            width,
        }
    }

    pub fn fits(&self, img_h: usize, img_w: usize) -> bool {
        self.height >= 1
            && self.width >= 1
            && self.row + self.height <= img_h
            && self.col + self.width <= img_w
    }

    /// True if the rectangles share at least one pixel.
    pub fn intersects(&self, row: usize, col: usize, height: usize, width: usize) -> bool {
        self.row < row + height
            && row < self.row + self.height
            && self.col < col + width
            && col < self.col + self.width
    }
}

impl fmt::Display for BoxAnnotation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{},{},{}", self.row, self.col, self.height, self.width)
    }
}

impl FromStr for BoxAnnotation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(format!("box '{s}' must have four fields r,c,h,w"));
        }
        let mut vals = [0usize; 4];
        for (v, p) in vals.iter_mut().zip(&parts) {
            *v = p
                .parse()
                .map_err(|_| format!("box field '{p}' is not a non-negative integer"))?;
        }
        Ok(BoxAnnotation::new(vals[0], vals[1], vals[2], vals[3]))
    }
}

/// One instance: a square footprint inside a bag's image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tile {
    pub bag_index: usize,
    pub tile_index: usize,
    pub row: usize,
    pub col: usize,
    pub size: usize,
    pub label: TileLabel,
    pub provenance: Provenance,
}

impl Tile {
    pub fn origin(&self) -> (usize, usize) {
        (self.row, self.col)
    }

    pub fn intersects_box(&self, b: &BoxAnnotation) -> bool {
        b.intersects(self.row, self.col, self.size, self.size)
    }
}

#[derive(Debug, Clone)]
pub struct Bag {
    pub index: usize,
    pub image: LesionImage,
    pub mask: RegionMask,
    pub label: BagLabel,
    pub boxes: Vec<BoxAnnotation>,
    /// Weakly labeled tiles covering the masked region.
    pub tiles: Vec<Tile>,
    /// Box-derived tiles; empty for negative bags.
    pub reinforced: Vec<Tile>,
}

impl Bag {
    pub fn id(&self) -> &str {
        &self.image.id
    }

    pub fn tile_pixels(&self, tile: &Tile) -> Vec<f32> {
        self.image.window(tile.row, tile.col, tile.size)
    }
}

/// All bags plus the partition views over their tiles.
#[derive(Debug, Clone, Default)]
pub struct TrainingCorpus {
    pub bags: Vec<Bag>,
}

impl TrainingCorpus {
    pub fn new(bags: Vec<Bag>) -> Result<Self> {
        let corpus = Self { bags };
        corpus.validate()?;
        Ok(corpus)
    }

    pub fn len(&self) -> usize {
        self.bags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bags.is_empty()
    }

    /// Weak tiles from negative bags.
    pub fn weak_negative(&self) -> impl Iterator<Item = &Tile> {
        self.bags
            .iter()
            .filter(|b| !b.label.is_positive())
            .flat_map(|b| b.tiles.iter())
    }

    /// Weak tiles from positive bags.
    pub fn weak_positive(&self) -> impl Iterator<Item = &Tile> {
        self.bags
            .iter()
            .filter(|b| b.label.is_positive())
            .flat_map(|b| b.tiles.iter())
    }

    /// The reinforced set: box-derived positive tiles.
    pub fn reinforced(&self) -> impl Iterator<Item = &Tile> {
        self.bags.iter().flat_map(|b| b.reinforced.iter())
    }

    /// Every tile: the union of both weak partitions and the reinforced set.
    pub fn all_tiles(&self) -> impl Iterator<Item = &Tile> {
        self.bags
            .iter()
            .flat_map(|b| b.tiles.iter().chain(b.reinforced.iter()))
    }

    pub fn count_by_label(&self) -> (usize, usize) {
        let pos = self.bags.iter().filter(|b| b.label.is_positive()).count();
        (pos, self.bags.len() - pos)
    }

    pub fn validate(&self) -> Result<()> {
        for (i, bag) in self.bags.iter().enumerate() {
            let bad = |reason: String| Error::MalformedManifest {
                line: i as u64 + 2,
                reason,
            };
            if bag.index != i {
                return Err(bad(format!("bag index {} at position {i}", bag.index)));
            }
            if bag.image.shape() != bag.mask.shape() {
                return Err(Error::ShapeMismatch {
                    expected: bag.image.shape(),
                    found: bag.mask.shape(),
                });
            }
            if !bag.label.is_positive() && (!bag.boxes.is_empty() || !bag.reinforced.is_empty()) {
                return Err(bad("negative bag carries box annotations".into()));
            }
            let (h, w) = bag.image.shape();
            for t in bag.tiles.iter().chain(&bag.reinforced) {
                if t.bag_index != i {
                    return Err(bad(format!("tile claims bag {}", t.bag_index)));
                }
                if t.row + t.size > h || t.col + t.size > w {
                    return Err(bad(format!("tile at {:?} leaves the image", t.origin())));
                }
            }
            for t in &bag.reinforced {
                if t.provenance != Provenance::Reinforced || t.label == TileLabel::Unknown {
                    return Err(bad("reinforced tile without a definite label".into()));
                }
            }
            if bag.tiles.iter().any(|t| t.provenance != Provenance::Weak) {
                return Err(bad("weak tile list holds a non-weak tile".into()));
            }
        }
        Ok(())
    }
}
