//! CSV dataset manifest and corpus loading.
//!
//! One row per bag with header `id,image_path,mask_path,label,boxes`:
//! `label` is `pos` or `neg`, `mask_path` may be empty, and `boxes` holds
//! semicolon-separated `r,c,h,w` rectangles. Relative paths resolve against
//! the manifest's directory.

use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::imageio::{read_image, read_mask};
use crate::segment::{self, Provider, SegmenterConfig};
use crate::tiler::{extract_reinforced_tiles, partition_tiles, TilerConfig};
use crate::types::{Bag, BagLabel, BoxAnnotation, MaskSource, RegionMask, TrainingCorpus};

pub const MANIFEST_HEADER: [&str; 5] = ["id", "image_path", "mask_path", "label", "boxes"];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub id: String,
    pub image_path: PathBuf,
    pub mask_path: Option<PathBuf>,
    pub label: BagLabel,
    pub boxes: Vec<BoxAnnotation>,
    /// 1-based line in the manifest file (0 when built in memory).
    pub line: u64,
}

fn malformed(line: u64, reason: impl Into<String>) -> Error {
    Error::MalformedManifest {
        line,
        reason: reason.into(),
    }
}

fn parse_boxes(field: &str, line: u64) -> Result<Vec<BoxAnnotation>> {
    field
        .split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<BoxAnnotation>().map_err(|e| malformed(line, e)))
        .collect()
}

/// Parses the manifest; paths are returned resolved against its directory.
pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestRow>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let base = path.parent().unwrap_or(Path::new("")).to_path_buf();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)?;
    let header = reader.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    if !header.is_empty() && header.iter().collect::<Vec<_>>() != MANIFEST_HEADER {
        return Err(malformed(1, format!("header must be {}", MANIFEST_HEADER.join(","))));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() == 1 && record[0].is_empty() {
            continue;
        }
        if record.len() != MANIFEST_HEADER.len() {
            return Err(malformed(line, format!("expected 5 fields, found {}", record.len())));
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(malformed(line, "empty id"));
        }
        if record[1].is_empty() {
            return Err(malformed(line, "empty image_path"));
        }
        let label: BagLabel = record[3].parse().map_err(|e: String| malformed(line, e))?;
        let boxes = parse_boxes(&record[4], line)?;
        if label == BagLabel::Negative && !boxes.is_empty() {
            return Err(malformed(line, "negative bags cannot carry boxes"));
        }
        rows.push(ManifestRow {
            id,
            image_path: base.join(&record[1]),
            mask_path: (!record[2].is_empty()).then(|| base.join(&record[2])),
            label,
            boxes,
            line,
        });
    }
    Ok(rows)
}

/// Writes rows; paths are written as given.
pub fn write_manifest(path: impl AsRef<Path>, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(MANIFEST_HEADER)?;
    for row in rows {
        let boxes: Vec<String> = row.boxes.iter().map(ToString::to_string).collect();
        w.write_record([
            row.id.as_str(),
            &row.image_path.to_string_lossy(),
            &row.mask_path.as_ref().map(|p| p.to_string_lossy().into_owned()).unwrap_or_default(),
            &row.label.to_string(),
            &boxes.join(";"),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MaskMode {
    /// Mask from the manifest, or from the segmenter when none is listed.
    #[default]
    Segmented,
    /// Whole image is the region of interest.
    FullImage,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LoadOptions {
    pub tiler: TilerConfig,
    pub segmenter: SegmenterConfig,
    pub mask_mode: MaskMode,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            tiler: TilerConfig::default(),
            segmenter: SegmenterConfig::default(),
            mask_mode: MaskMode::Segmented,
        }
    }
}

/// Loads one bag's image and post-processed mask.
pub fn load_bag_inputs(row: &ManifestRow, options: &LoadOptions) -> Result<(crate::types::LesionImage, RegionMask)> {
    let image = read_image(&row.image_path, &row.id)?;
    let (h, w) = image.shape();
    for b in &row.boxes {
        if !b.fits(h, w) {
            return Err(malformed(row.line, format!("box {b} exceeds {h}x{w} image")));
        }
    }
    let mask = match options.mask_mode {
        MaskMode::FullImage => RegionMask::full(h, w),
        MaskMode::Segmented => {
            let oracle = match (&row.mask_path, options.segmenter.provider) {
                (Some(p), Provider::Oracle) => Some(read_mask(p)?),
                _ => None,
            };
            let cfg = if oracle.is_none() {
                SegmenterConfig {
                    provider: Provider::Baseline,
                    ..options.segmenter
                }
            } else {
                options.segmenter
            };
            let raw = segment::segment(&image, oracle.as_ref(), &cfg)?;
            let source = if oracle.is_some() {
                MaskSource::OracleFile
            } else {
                MaskSource::BaselineSegmenter
            };
            segment::postprocess_mask(&raw)?.with_source(source)
        }
    };
    Ok((image, mask))
}

/// Loads, masks and tiles every bag listed in the manifest. Bag order equals
/// manifest order.
pub fn load_corpus(manifest_path: impl AsRef<Path>, options: &LoadOptions) -> Result<TrainingCorpus> {
    let rows = read_manifest(manifest_path)?;
    options.tiler.validate()?;
    let bags = rows
        .par_iter()
        .enumerate()
        .map(|(index, row)| {
            let (image, mask) = load_bag_inputs(row, options)?;
            let mut bag = Bag {
                index,
                image,
                mask,
                label: row.label,
                boxes: row.boxes.clone(),
                tiles: Vec::new(),
                reinforced: Vec::new(),
            };
            bag.tiles = partition_tiles(&bag, &options.tiler)?;
            bag.reinforced = extract_reinforced_tiles(&bag, &options.tiler)?;
            Ok(bag)
        })
        .collect::<Result<Vec<_>>>()?;
    TrainingCorpus::new(bags)
}
