//! Per-pixel containers shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// H×W×D row-major feature vectors, always held as f64.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    data: Vec<f64>,
}

impl FeatureMap {
    pub fn new(height: usize, width: usize, dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::validation("feature dimension must be at least 1"));
        }
        if data.len() != height * width * dim {
            return Err(Error::validation(format!(
                "feature buffer has {} values, expected {height}x{width}x{dim}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            dim,
            data,
        })
    }

    /// A single row of `n` pixels, handy for point evaluation.
    pub fn from_points(dim: usize, points: &[Vec<f64>]) -> Result<Self> {
        let mut data = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::validation(format!(
                    "point has dimension {}, expected {dim}",
                    p.len()
                )));
            }
            data.extend_from_slice(p);
        }
        Self::new(1, points.len(), dim, data)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_pixels(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Feature vector of the pixel at flat index `p = i * width + j`.
    pub fn pixel(&self, p: usize) -> &[f64] {
        &self.data[p * self.dim..(p + 1) * self.dim]
    }

    pub fn at(&self, i: usize, j: usize) -> &[f64] {
        self.pixel(i * self.width + j)
    }
}

/// H×W class ids. `ignore_id` marks pixels excluded from fitting and scoring.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    data: Vec<i32>,
    ignore_id: i32,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<i32>, ignore_id: i32) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::validation(format!(
                "label buffer has {} values, expected {height}x{width}",
                data.len()
            )));
        }
        Ok(Self {
            height,
            width,
            data,
            ignore_id,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn data(&self) -> &[i32] {
        &self.data
    }

    pub fn ignore_id(&self) -> i32 {
        self.ignore_id
    }

    pub fn at(&self, i: usize, j: usize) -> i32 {
        self.data[i * self.width + j]
    }

    pub fn is_ignored(&self, p: usize) -> bool {
        self.data[p] == self.ignore_id
    }

    /// Fails if any label is outside `[0, k)` and not the ignore id.
    pub fn check_range(&self, k: usize) -> Result<()> {
        if let Some(&bad) = self
            .data
            .iter()
            .find(|&&l| l != self.ignore_id && (l < 0 || l as usize >= k))
        {
            return Err(Error::validation(format!(
                "label {bad} outside [0, {k}) and not the ignore id {}",
                self.ignore_id
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Polarity {
    /// Larger means less certain.
    UncertaintyLike,
    /// Larger means more certain.
    ConfidenceLike,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Source {
    Entropy,
    Pe,
    Mi,
    LogDensity,
    NegLogDensity,
}

impl Source {
    /// Only the raw feature log density is confidence-like.
    pub fn polarity(self) -> Polarity {
        match self {
            Source::LogDensity => Polarity::ConfidenceLike,
            _ => Polarity::UncertaintyLike,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Source::Entropy => "entropy",
            Source::Pe => "pe",
            Source::Mi => "mi",
            Source::LogDensity => "log-density",
            Source::NegLogDensity => "neg-log-density",
        }
    }
}

/// H×W scalar field with its polarity and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct UncertaintyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
    source: Source,
}

impl UncertaintyMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>, source: Source) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::validation(format!(
                "map has {} values, expected {height}x{width}",
                values.len()
            )));
        }
        if let Some(p) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite value {} at pixel {p}",
                values[p]
            )));
        }
        Ok(Self {
            height,
            width,
            values,
            source,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn source(&self) -> Source {
        self.source
    }

    pub fn polarity(&self) -> Polarity {
        self.source.polarity()
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.width + j]
    }

    /// Flips a confidence-like map into an uncertainty-like one.
    pub fn negate_to_uncertainty(&self) -> Result<Self> {
        if self.polarity() != Polarity::ConfidenceLike {
            return Err(Error::validation(format!(
                "map from `{}` is already uncertainty-like",
                self.source.as_str()
            )));
        }
        Ok(Self {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|v| -v).collect(),
            source: Source::NegLogDensity,
        })
    }

    /// Returns an uncertainty-like view, negating only when needed.
    pub fn into_uncertainty(self) -> Self {
        match self.polarity() {
            Polarity::UncertaintyLike => self,
            Polarity::ConfidenceLike => self
                .negate_to_uncertainty()
                .expect("confidence-like map always negates"),
        }
    }
}

/// JSON sidecar written next to every exported map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MapSidecar {
    pub polarity: Polarity,
    pub source: Source,
    pub height: usize,
    pub width: usize,
}

impl From<&UncertaintyMap> for MapSidecar {
    fn from(m: &UncertaintyMap) -> Self {
        Self {
            polarity: m.polarity(),
            source: m.source(),
            height: m.height(),
            width: m.width(),
        }
    }
}
