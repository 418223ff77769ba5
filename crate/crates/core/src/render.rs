//! 8-bit grayscale rendering of uncertainty maps, accuracy maps and distance
//! matrices, written as PNG or binary PGM.
//!
//! Brightness increases with the stored value. For uncertainty-like maps that
//! means bright = uncertain; for log-density maps bright = confident.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::DistanceMatrix;
use crate::error::{Error, Result};
use crate::eval::quantile;
use crate::io;
use crate::maps::{LabelMap, UncertaintyMap};

/// Gray level of a constant map (and of values equal to a collapsed range).
pub const MID_GRAY: u8 = 128;
/// Default gray level for ignored pixels in accuracy maps.
pub const DEFAULT_IGNORE_GRAY: u8 = 128;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Normalization {
    /// Map the minimum to 0 and the maximum to 255.
    #[default]
    MinMax,
    /// Map the `lo` and `hi` quantiles (fractions in [0, 1]) to 0 and 255 and clamp outside.
    Quantile { lo: f64, hi: f64 },
}

impl Normalization {
    pub fn validate(&self) -> Result<()> {
        if let Normalization::Quantile { lo, hi } = *self {
            if !(0.0..=1.0).contains(&lo) || !(0.0..=1.0).contains(&hi) || lo > hi {
                return Err(Error::Config(format!(
                    "quantile normalisation needs 0 <= lo <= hi <= 1, got lo={lo} hi={hi}"
                )));
            }
        }
        Ok(())
    }

    /// The value range `(lo, hi)` that maps onto [0, 255].
    pub fn range(&self, values: &[f64]) -> Result<(f64, f64)> {
        self.validate()?;
        if values.is_empty() {
            return Err(Error::validation("cannot normalise an empty map"));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("cannot render non-finite values"));
        }
        Ok(match *self {
            Normalization::MinMax => values
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v))),
            Normalization::Quantile { lo, hi } => {
                let mut sorted = values.to_vec();
                sorted.sort_by(f64::total_cmp);
                (quantile(&sorted, lo), quantile(&sorted, hi))
            }
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub height: usize,
    pub width: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(height: usize, width: usize, pixels: Vec<u8>) -> Result<Self> {
        if pixels.len() != height * width {
            return Err(Error::validation(format!(
                "{} pixels for a {height}x{width} image",
                pixels.len()
            )));
        }
        Ok(Self { height, width, pixels })
    }

    pub fn at(&self, i: usize, j: usize) -> u8 {
        self.pixels[i * self.width + j]
    }

    /// Non-interlaced 8-bit grayscale PNG.
    pub fn to_png(&self) -> Result<Vec<u8>> {
        if self.height == 0 || self.width == 0 {
            return Err(Error::validation("PNG images need non-zero dimensions"));
        }
        let (w, h) = (u32::try_from(self.width), u32::try_from(self.height));
        let (Ok(w), Ok(h)) = (w, h) else {
            return Err(Error::validation("image too large for PNG"));
        };
        let mut out = Vec::new();
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(png::ColorType::Grayscale);
        enc.set_depth(png::BitDepth::Eight);
        let png_err = |e: png::EncodingError| Error::validation(format!("PNG encoding failed: {e}"));
        let mut writer = enc.write_header().map_err(png_err)?;
        writer.write_image_data(&self.pixels).map_err(png_err)?;
        writer.finish().map_err(png_err)?;
        Ok(out)
    }

    /// Binary PGM (P5, maxval 255).
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.pixels);
        out
    }

    /// Writes PGM when the extension is `.pgm`, PNG otherwise.
    pub fn save(&self, path: &Path) -> Result<()> {
        let is_pgm = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("pgm"));
        let bytes = if is_pgm { self.to_pgm() } else { self.to_png()? };
        io::atomic_write(path, &bytes)
    }
}

/// Maps `v` linearly from `[lo, hi]` onto [0, 255], clamping outside.
/// A collapsed range sends values below, at and above it to 0, 128 and 255.
pub fn gray_level(v: f64, lo: f64, hi: f64) -> u8 {
    if hi <= lo {
        return match v.total_cmp(&lo) {
            std::cmp::Ordering::Less => 0,
            std::cmp::Ordering::Equal => MID_GRAY,
            std::cmp::Ordering::Greater => 255,
        };
    }
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    (t * 255.0).round() as u8
}

fn render_with_range(map: &UncertaintyMap, (lo, hi): (f64, f64)) -> Result<GrayImage> {
    let pixels = map.values().iter().map(|&v| gray_level(v, lo, hi)).collect();
    GrayImage::new(map.height(), map.width(), pixels)
}

/// Renders one map with its own normalisation range.
pub fn render_map(map: &UncertaintyMap, norm: Normalization) -> Result<GrayImage> {
    let range = norm.range(map.values())?;
    render_with_range(map, range)
}

/// Renders several maps with one range computed over all of their values,
/// so gray levels are comparable across images.
pub fn render_maps_global(maps: &[UncertaintyMap], norm: Normalization) -> Result<Vec<GrayImage>> {
    if let Some(first) = maps.first() {
        if maps.iter().any(|m| m.polarity() != first.polarity()) {
            return Err(Error::validation("maps of mixed polarity cannot share a range"));
        }
    }
    let pooled: Vec<f64> = maps.iter().flat_map(|m| m.values().iter().copied()).collect();
    let range = norm.range(&pooled)?;
    maps.iter().map(|m| render_with_range(m, range)).collect()
}

/// 255 where the prediction is correct, 0 where it is wrong and
/// `ignore_gray` where the ground truth carries the ignore id.
pub fn render_accuracy(pred: &LabelMap, gt: &LabelMap, ignore_gray: u8) -> Result<GrayImage> {
    if pred.height() != gt.height() || pred.width() != gt.width() {
        return Err(Error::validation(format!(
            "prediction is {}x{}, ground truth is {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let pixels = pred
        .data()
        .iter()
        .zip(gt.data())
        .enumerate()
        .map(|(p, (a, b))| {
            if gt.is_ignored(p) {
                ignore_gray
            } else if a == b {
                255
            } else {
                0
            }
        })
        .collect();
    GrayImage::new(gt.height(), gt.width(), pixels)
}

/// Heatmap of a distance matrix with `cell`×`cell` pixels per entry; small
/// distances are dark. Undefined entries get `undefined_gray`.
pub fn render_matrix(m: &DistanceMatrix, cell: usize, undefined_gray: u8) -> Result<GrayImage> {
    if cell == 0 {
        return Err(Error::Config("cell size must be at least 1".into()));
    }
    let defined: Vec<f64> = m.values.iter().flatten().copied().collect();
    let range = if defined.is_empty() {
        (0.0, 0.0)
    } else {
        Normalization::MinMax.range(&defined)?
    };
    let k = m.num_classes;
    let side = k * cell;
    let mut pixels = vec![0u8; side * side];
    for i in 0..side {
        for j in 0..side {
            pixels[i * side + j] = match m.get(i / cell, j / cell) {
                Some(v) => gray_level(v, range.0, range.1),
                None => undefined_gray,
            };
        }
    }
    GrayImage::new(side, side, pixels)
}
