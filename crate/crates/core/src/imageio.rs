//! PNG input and output for images and masks (masks: one channel, 0 / 255).

use std::path::Path;

use image::{GrayImage, Luma, RgbImage};

use crate::error::{Error, Result};
use crate::types::{LesionImage, MaskSource, RegionMask};

fn ensure_exists(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::MissingFile(path.to_path_buf()))
    }
}

pub fn read_image(path: impl AsRef<Path>, id: impl Into<String>) -> Result<LesionImage> {
    let path = path.as_ref();
    ensure_exists(path)?;
    let img = image::open(path)?.to_rgb8();
    Ok(LesionImage::new(id, img))
}

pub fn write_image(image: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Any nonzero luma value is foreground.
pub fn read_mask(path: impl AsRef<Path>) -> Result<RegionMask> {
    let path = path.as_ref();
    ensure_exists(path)?;
    let img = image::open(path)?.to_luma8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let data = img.as_raw().iter().map(|&v| v != 0).collect();
    Ok(RegionMask::new(h, w, data, MaskSource::OracleFile))
}

pub fn mask_to_gray(mask: &RegionMask) -> GrayImage {
    GrayImage::from_fn(mask.width() as u32, mask.height() as u32, |c, r| {
        Luma([if mask.get(r as usize, c as usize) { 255 } else { 0 }])
    })
}

pub fn write_mask(mask: &RegionMask, path: impl AsRef<Path>) -> Result<()> {
    mask_to_gray(mask).save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}
