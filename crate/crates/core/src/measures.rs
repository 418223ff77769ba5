//! Softmax-based uncertainty: entropy, predictive entropy and mutual information.
//!
//! All logarithms are natural. Probabilities are floored at [`PROB_FLOOR`]
//! inside the log so exporter-rounded zeros stay finite; since the floored
//! value is still multiplied by `p`, `0 * log 0` evaluates to 0.

use crate::error::{Error, Result};
use crate::maps::{Source, UncertaintyMap};
use crate::parallel;

pub const PROB_FLOOR: f64 = 1e-12;
/// Rows whose sum is off by more than this are rejected rather than renormalised.
pub const ROW_SUM_TOLERANCE: f64 = 1e-5;

/// M×H×W×K categorical distributions, one row per (member, pixel).
#[derive(Debug, Clone, PartialEq)]
pub struct SoftmaxStack {
    members: usize,
    height: usize,
    width: usize,
    classes: usize,
    probs: Vec<f64>,
}

impl SoftmaxStack {
    pub fn new(members: usize, height: usize, width: usize, classes: usize, mut probs: Vec<f64>) -> Result<Self> {
        if members == 0 || classes == 0 {
            return Err(Error::validation("softmax stack needs M >= 1 and K >= 1"));
        }
        if probs.len() != members * height * width * classes {
            return Err(Error::validation(format!(
                "softmax buffer has {} values, expected {members}x{height}x{width}x{classes}",
                probs.len()
            )));
        }
        for (r, row) in probs.chunks_exact_mut(classes).enumerate() {
            if let Some(&bad) = row.iter().find(|p| !(0.0..=1.0).contains(*p)) {
                return Err(Error::validation(format!(
                    "probability {bad} outside [0, 1] in row {r}"
                )));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOLERANCE {
                return Err(Error::validation(format!("row {r} sums to {sum}")));
            }
            if sum != 1.0 {
                row.iter_mut().for_each(|p| *p /= sum);
            }
        }
        Ok(Self {
            members,
            height,
            width,
            classes,
            probs,
        })
    }

    /// Max-subtracted softmax of H×W×K logits; yields a single-member stack.
    pub fn from_logits(height: usize, width: usize, classes: usize, logits: &[f64]) -> Result<Self> {
        if classes == 0 || logits.len() != height * width * classes {
            return Err(Error::validation(format!(
                "logit buffer has {} values, expected {height}x{width}x{classes}",
                logits.len()
            )));
        }
        if let Some(p) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!("non-finite logit at index {p}")));
        }
        let mut probs = vec![0.0; logits.len()];
        let rows_per_chunk = 1024;
        parallel::for_each_chunk_mut(&mut probs, rows_per_chunk * classes, |ci, out| {
            let base = ci * rows_per_chunk * classes;
            for (r, dst) in out.chunks_exact_mut(classes).enumerate() {
                let src = &logits[base + r * classes..base + (r + 1) * classes];
                softmax_row(src, dst);
            }
        });
        Ok(Self {
            members: 1,
            height,
            width,
            classes,
            probs,
        })
    }

    pub fn members(&self) -> usize {
        self.members
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Distribution of member `m` at flat pixel `p`.
    pub fn row(&self, m: usize, p: usize) -> &[f64] {
        let npix = self.height * self.width;
        let start = (m * npix + p) * self.classes;
        &self.probs[start..start + self.classes]
    }

    /// Per-pixel argmax of the member-averaged distribution (first index on ties).
    pub fn predicted_labels(&self) -> Vec<i32> {
        let mut mean = vec![0.0; self.classes];
        (0..self.height * self.width)
            .map(|p| {
                self.mean_row(p, &mut mean);
                argmax(&mean) as i32
            })
            .collect()
    }

    fn mean_row(&self, p: usize, out: &mut [f64]) {
        // offsets from the first member, so identical members average exactly
        let first = self.row(0, p);
        out.iter_mut().for_each(|o| *o = 0.0);
        for m in 1..self.members {
            for ((o, q), f) in out.iter_mut().zip(self.row(m, p)).zip(first) {
                *o += q - f;
            }
        }
        let n = self.members as f64;
        for (o, f) in out.iter_mut().zip(first) {
            *o = f + *o / n;
        }
    }

    fn map_pixels(&self, f: impl Fn(usize, &mut [f64]) -> f64 + Send + Sync) -> Vec<f64> {
        let npix = self.height * self.width;
        let mut out = vec![0.0; npix];
        let chunk = 2048;
        parallel::for_each_chunk_mut(&mut out, chunk, |ci, dst| {
            let mut scratch = vec![0.0; self.classes];
            for (k, v) in dst.iter_mut().enumerate() {
                *v = f(ci * chunk + k, &mut scratch);
            }
        });
        out
    }
}

fn softmax_row(logits: &[f64], out: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for (o, &l) in out.iter_mut().zip(logits) {
        *o = (l - max).exp();
        sum += *o;
    }
    out.iter_mut().for_each(|o| *o /= sum);
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (k, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = k;
        }
    }
    best
}

/// Shannon entropy of one categorical row, in nats.
pub fn categorical_entropy(p: &[f64]) -> f64 {
    -p.iter().map(|&q| q * q.max(PROB_FLOOR).ln()).sum::<f64>()
}

/// Softmax entropy of a deterministic (M = 1) model.
pub fn entropy(stack: &SoftmaxStack) -> Result<UncertaintyMap> {
    if stack.members != 1 {
        return Err(Error::validation(format!(
            "entropy needs a single-member stack, got M={}; use predictive_entropy",
            stack.members
        )));
    }
    let values = stack.map_pixels(|p, _| categorical_entropy(stack.row(0, p)));
    UncertaintyMap::new(stack.height, stack.width, values, Source::Entropy)
}

/// Entropy of the member-averaged distribution.
pub fn predictive_entropy(stack: &SoftmaxStack) -> Result<UncertaintyMap> {
    let values = stack.map_pixels(|p, mean| {
        stack.mean_row(p, mean);
        categorical_entropy(mean)
    });
    UncertaintyMap::new(stack.height, stack.width, values, Source::Pe)
}

/// Predictive entropy minus mean member entropy, clamped at zero.
pub fn mutual_information(stack: &SoftmaxStack) -> Result<UncertaintyMap> {
    let m = stack.members as f64;
    let values = stack.map_pixels(|p, mean| {
        stack.mean_row(p, mean);
        let pe = categorical_entropy(mean);
        let h0 = categorical_entropy(stack.row(0, p));
        let expected = h0
            + (1..stack.members)
                .map(|k| categorical_entropy(stack.row(k, p)) - h0)
                .sum::<f64>()
                / m;
        (pe - expected).max(0.0)
    });
    UncertaintyMap::new(stack.height, stack.width, values, Source::Mi)
}
