//! Region-of-interest masks: providers and post-processing.
//!
//! Post-processing keeps the largest 4-connected foreground component and
//! fills every background region that is not 8-connected to the image border.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::types::{LesionImage, MaskSource, RegionMask};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provider {
    /// Use the mask supplied alongside the image.
    Oracle,
    /// Global threshold followed by morphological closing.
    Baseline,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmenterConfig {
    pub provider: Provider,
    /// Pixels whose mean intensity is strictly below this are foreground.
    pub baseline_threshold: u8,
    pub morphology_radius: usize,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        Self {
            provider: Provider::Oracle,
            baseline_threshold: 200,
            morphology_radius: 2,
        }
    }
}

/// Produces the raw (not yet post-processed) mask for `image`.
pub fn segment(
    image: &LesionImage,
    oracle: Option<&RegionMask>,
    config: &SegmenterConfig,
) -> Result<RegionMask> {
    match config.provider {
        Provider::Oracle => {
            let mask = oracle.ok_or_else(|| Error::OracleMaskMissing(image.id.clone()))?;
            if mask.shape() != image.shape() {
                return Err(Error::ShapeMismatch {
                    expected: image.shape(),
                    found: mask.shape(),
                });
            }
            Ok(mask.clone())
        }
        Provider::Baseline => {
            let mask = threshold(image, config.baseline_threshold);
            if mask.foreground_count() == 0 {
                return Err(Error::EmptyForeground);
            }
            Ok(closing(&mask, config.morphology_radius))
        }
    }
}

/// Runs the provider, then post-processing.
pub fn segment_and_clean(
    image: &LesionImage,
    oracle: Option<&RegionMask>,
    config: &SegmenterConfig,
) -> Result<RegionMask> {
    postprocess_mask(&segment(image, oracle, config)?)
}

pub fn threshold(image: &LesionImage, level: u8) -> RegionMask {
    let (h, w) = image.shape();
    RegionMask::from_fn(h, w, MaskSource::BaselineSegmenter, |r, c| {
        let p = image.pixels.get_pixel(c as u32, r as u32).0;
        let sum = p[0] as u32 + p[1] as u32 + p[2] as u32;
        sum < 3 * level as u32
    })
}

fn disk_offsets(radius: usize) -> Vec<(isize, isize)> {
    let r = radius as isize;
    let mut out = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                out.push((dr, dc));
            }
        }
    }
    out
}

/// Binary dilation by a disk. Out-of-bounds pixels count as background.
pub fn dilate(mask: &RegionMask, radius: usize) -> RegionMask {
    let (h, w) = mask.shape();
    let offsets = disk_offsets(radius);
    let mut out = RegionMask::empty(h, w, mask.source);
    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            for &(dr, dc) in &offsets {
                let (rr, cc) = (r as isize + dr, c as isize + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    out.set(rr as usize, cc as usize, true);
                }
            }
        }
    }
    out
}

/// Binary erosion by a disk. Out-of-bounds pixels are ignored, so erosion
/// never eats into objects touching the border.
pub fn erode(mask: &RegionMask, radius: usize) -> RegionMask {
    let (h, w) = mask.shape();
    let offsets = disk_offsets(radius);
    RegionMask::from_fn(h, w, mask.source, |r, c| {
        offsets.iter().all(|&(dr, dc)| {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w || mask.get(rr as usize, cc as usize)
        })
    })
}

pub fn closing(mask: &RegionMask, radius: usize) -> RegionMask {
    if radius == 0 {
        return mask.clone();
    }
    erode(&dilate(mask, radius), radius)
}

const N4: [(isize, isize); 4] = [(-1, 0), (1, 0), (0, -1), (0, 1)];
const N8: [(isize, isize); 8] = [
    (-1, -1),
    (-1, 0),
    (-1, 1),
    (0, -1),
    (0, 1),
    (1, -1),
    (1, 0),
    (1, 1),
];

/// Labels connected regions of pixels equal to `value`. Returns one label per
/// pixel (`usize::MAX` for pixels of the other value) and the size of each
/// region, numbered in row-major order of first pixel.
fn label_regions(
    mask: &RegionMask,
    value: bool,
    neighbors: &[(isize, isize)],
) -> (Vec<usize>, Vec<usize>) {
    let (h, w) = mask.shape();
    let mut labels = vec![usize::MAX; h * w];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..h * w {
        if labels[start] != usize::MAX || mask.as_slice()[start] != value {
            continue;
        }
        let id = sizes.len();
        let mut size = 0;
        labels[start] = id;
        queue.push_back(start);
        while let Some(p) = queue.pop_front() {
            size += 1;
            let (r, c) = ((p / w) as isize, (p % w) as isize);
            for &(dr, dc) in neighbors {
                let (rr, cc) = (r + dr, c + dc);
                if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                    continue;
                }
                let q = rr as usize * w + cc as usize;
                if labels[q] == usize::MAX && mask.as_slice()[q] == value {
                    labels[q] = id;
                    queue.push_back(q);
                }
            }
        }
        sizes.push(size);
    }
    (labels, sizes)
}

/// Number of 4-connected foreground components.
pub fn count_components(mask: &RegionMask) -> usize {
    label_regions(mask, true, &N4).1.len()
}

/// Background pixels that cannot reach the border through 8-connected
/// background.
pub fn enclosed_background(mask: &RegionMask) -> Vec<(usize, usize)> {
    let (h, w) = mask.shape();
    let mut reached = vec![false; h * w];
    let mut queue = VecDeque::new();
    for r in 0..h {
        for c in 0..w {
            if (r == 0 || c == 0 || r == h - 1 || c == w - 1) && !mask.get(r, c) {
                reached[r * w + c] = true;
                queue.push_back((r, c));
            }
        }
    }
    while let Some((r, c)) = queue.pop_front() {
        for &(dr, dc) in &N8 {
            let (rr, cc) = (r as isize + dr, c as isize + dc);
            if rr < 0 || cc < 0 || rr as usize >= h || cc as usize >= w {
                continue;
            }
            let (rr, cc) = (rr as usize, cc as usize);
            if !reached[rr * w + cc] && !mask.get(rr, cc) {
                reached[rr * w + cc] = true;
                queue.push_back((rr, cc));
            }
        }
    }
    (0..h * w)
        .filter(|&p| !mask.as_slice()[p] && !reached[p])
        .map(|p| (p / w, p % w))
        .collect()
}

/// Keeps the largest 4-connected foreground component and fills its holes.
///
/// Equal sizes resolve to the component whose first pixel in row-major order
/// comes first.
pub fn postprocess_mask(mask: &RegionMask) -> Result<RegionMask> {
    let (labels, sizes) = label_regions(mask, true, &N4);
    // max_by_key returns the last maximum; scan in reverse so ties keep the
    // lowest label.
    let keep = sizes
        .iter()
        .enumerate()
        .rev()
        .max_by_key(|&(_, &s)| s)
        .map(|(id, _)| id)
        .ok_or(Error::EmptyForeground)?;
    let (h, w) = mask.shape();
    let mut out = RegionMask::new(
        h,
        w,
        labels.iter().map(|&l| l == keep).collect(),
        mask.source,
    );
    for (r, c) in enclosed_background(&out) {
        out.set(r, c, true);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{Rgb, RgbImage};
    use proptest::prelude::*;

    fn from_rows(rows: &[&str]) -> RegionMask {
        let h = rows.len();
        let w = rows[0].len();
        RegionMask::from_fn(h, w, MaskSource::OracleFile, |r, c| rows[r].as_bytes()[c] == b'#')
    }

    #[test]
    fn disk_hole_is_filled_and_boundary_kept() {
        let n = 21;
        let disk = RegionMask::from_fn(n, n, MaskSource::OracleFile, |r, c| {
            let (dr, dc) = (r as isize - 10, c as isize - 10);
            let d2 = dr * dr + dc * dc;
            d2 <= 64 && d2 > 4
        });
        let solid = RegionMask::from_fn(n, n, MaskSource::OracleFile, |r, c| {
            let (dr, dc) = (r as isize - 10, c as isize - 10);
            dr * dr + dc * dc <= 64
        });
        assert_eq!(postprocess_mask(&disk).unwrap(), solid);
    }

    #[test]
    fn largest_square_survives_unchanged() {
        let mask = RegionMask::from_fn(30, 30, MaskSource::OracleFile, |r, c| {
            (2..12).contains(&r) && (2..12).contains(&c) || (15..23).contains(&r) && (15..23).contains(&c)
        });
        let out = postprocess_mask(&mask).unwrap();
        assert_eq!(out.foreground_count(), 100);
        for r in 0..30 {
            for c in 0..30 {
                assert_eq!(out.get(r, c), (2..12).contains(&r) && (2..12).contains(&c));
            }
        }
    }

    #[test]
    fn solid_component_is_fixed_point() {
        let mask = from_rows(&["......", ".####.", ".####.", "..##..", "......"]);
        assert_eq!(postprocess_mask(&mask).unwrap(), mask);
    }

    #[test]
    fn equal_sizes_keep_first_component() {
        let mask = from_rows(&["##..", "##..", "....", "..##", "..##"]);
        let out = postprocess_mask(&mask).unwrap();
        assert!(out.get(0, 0) && !out.get(4, 3));
    }

    #[test]
    fn single_pixel_cavity_is_filled() {
        let mask = from_rows(&["###", "#.#", "###"]);
        assert_eq!(postprocess_mask(&mask).unwrap().foreground_count(), 9);
    }

    #[test]
    fn pocket_open_at_a_corner_stays_background() {
        // (1,1) escapes to the border diagonally through (0,0).
        let mask = from_rows(&[".###", "#..#", "#..#", "####"]);
        let out = postprocess_mask(&mask).unwrap();
        assert!(!out.get(1, 1) && !out.get(2, 2));
    }

    #[test]
    fn empty_mask_is_rejected() {
        let mask = RegionMask::empty(4, 4, MaskSource::OracleFile);
        assert!(matches!(postprocess_mask(&mask), Err(Error::EmptyForeground)));
    }

    #[test]
    fn oracle_returns_supplied_mask() {
        let img = LesionImage::new("a", RgbImage::from_pixel(5, 4, Rgb([10, 10, 10])));
        let mask = from_rows(&[".....", ".##..", ".##..", "....."]);
        let cfg = SegmenterConfig::default();
        assert_eq!(segment(&img, Some(&mask), &cfg).unwrap(), mask);
        assert!(matches!(
            segment(&img, None, &cfg),
            Err(Error::OracleMaskMissing(_))
        ));
    }

    #[test]
    fn baseline_rejects_blank_image() {
        let img = LesionImage::new("w", RgbImage::from_pixel(8, 8, Rgb([255, 255, 255])));
        let cfg = SegmenterConfig {
            provider: Provider::Baseline,
            ..Default::default()
        };
        assert!(matches!(segment(&img, None, &cfg), Err(Error::EmptyForeground)));
    }

    #[test]
    fn baseline_recovers_dark_ellipse() {
        let (h, w) = (64u32, 80u32);
        let inside = |r: f64, c: f64| ((r - 32.0) / 20.0).powi(2) + ((c - 40.0) / 28.0).powi(2) <= 1.0;
        let img = RgbImage::from_fn(w, h, |c, r| {
            if inside(r as f64, c as f64) {
                Rgb([90, 60, 80])
            } else {
                Rgb([235, 235, 235])
            }
        });
        let truth = RegionMask::from_fn(h as usize, w as usize, MaskSource::OracleFile, |r, c| {
            inside(r as f64, c as f64)
        });
        let cfg = SegmenterConfig {
            provider: Provider::Baseline,
            baseline_threshold: 200,
            morphology_radius: 2,
        };
        let out = segment_and_clean(&LesionImage::new("e", img), None, &cfg).unwrap();
        let inter = (0..h as usize * w as usize)
            .filter(|&p| out.as_slice()[p] && truth.as_slice()[p])
            .count();
        let union = (0..h as usize * w as usize)
            .filter(|&p| out.as_slice()[p] || truth.as_slice()[p])
            .count();
        assert!(inter as f64 / union as f64 > 0.9);
    }

    #[test]
    fn closing_is_extensive() {
        let mask = from_rows(&["#.#.#", ".....", "#...#", "....."]);
        let closed = closing(&mask, 1);
        for (a, b) in mask.as_slice().iter().zip(closed.as_slice()) {
            assert!(!a || *b);
        }
    }

    fn arb_mask() -> impl Strategy<Value = RegionMask> {
        (2usize..24, 2usize..24).prop_flat_map(|(h, w)| {
            proptest::collection::vec(any::<bool>(), h * w)
                .prop_map(move |d| RegionMask::new(h, w, d, MaskSource::OracleFile))
        })
    }

    proptest! {
        #[test]
        fn output_is_single_solid_component(mask in arb_mask()) {
            prop_assume!(mask.foreground_count() > 0);
            let (_, sizes) = label_regions(&mask, true, &N4);
            let largest = *sizes.iter().max().unwrap();
            let once = postprocess_mask(&mask).unwrap();
            prop_assert_eq!(count_components(&once), 1);
            prop_assert!(enclosed_background(&once).is_empty());
            prop_assert!(once.foreground_count() >= largest);
            prop_assert_eq!(postprocess_mask(&once).unwrap(), once);
        }
    }
}
