//! Independent reference implementations used by the integration tests.
#![allow(dead_code)]

use std::collections::HashSet;

use dense_ddu::gda::GdaModel;
use dense_ddu::{LabelMap, UncertaintyMap};
use nalgebra::{DMatrix, DVector};

/// Mixture log density from explicit covariance inverses and determinants.
pub fn dense_log_density(model: &GdaModel, z: &[f64]) -> f64 {
    let d = model.dim();
    let zv = DVector::from_column_slice(z);
    let terms: Vec<f64> = model
        .components()
        .iter()
        .map(|c| {
            let sigma = DMatrix::from_row_slice(d, d, &c.covariance());
            let inv = sigma.clone().try_inverse().expect("invertible");
            let det = sigma.determinant();
            let r = &zv - DVector::from_column_slice(&c.mean);
            let maha = (r.transpose() * inv * &r)[(0, 0)];
            c.log_prior - 0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + det.ln() + maha)
        })
        .collect();
    let m = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
}

pub struct BrutePatch {
    pub correct: usize,
    pub valid: usize,
    /// Mean uncertainty over valid pixels, summed in row-major order.
    pub uncertainty: f64,
}

impl BrutePatch {
    pub fn accurate(&self, alpha: f64) -> bool {
        self.correct as f64 / self.valid as f64 >= alpha
    }
}

/// Every window position with at least one valid pixel.
pub fn brute_patches(pred: &LabelMap, gt: &LabelMap, unc: &UncertaintyMap, window: usize, stride: usize) -> Vec<BrutePatch> {
    let (h, w) = (gt.height(), gt.width());
    let origins: Vec<(usize, usize)> = (0..h)
        .step_by(stride)
        .flat_map(|i| (0..w).step_by(stride).map(move |j| (i, j)))
        .filter(|&(i, j)| i + window <= h && j + window <= w)
        .collect();
    origins
        .into_iter()
        .filter_map(|(i0, j0)| {
            let cells: Vec<(usize, usize)> = (i0..i0 + window)
                .flat_map(|i| (j0..j0 + window).map(move |j| (i, j)))
                .filter(|&(i, j)| gt.at(i, j) != gt.ignore_id())
                .collect();
            if cells.is_empty() {
                return None;
            }
            let mut sum = 0.0;
            for &(i, j) in &cells {
                sum += unc.at(i, j);
            }
            Some(BrutePatch {
                correct: cells.iter().filter(|&&(i, j)| pred.at(i, j) == gt.at(i, j)).count(),
                valid: cells.len(),
                uncertainty: sum / cells.len() as f64,
            })
        })
        .collect()
}

/// `(n_ac, n_au, n_ic, n_iu)` by enumeration.
pub fn brute_counts(patches: &[BrutePatch], threshold: f64, alpha: f64) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for p in patches {
        match (p.accurate(alpha), p.uncertainty <= threshold) {
            (true, true) => c.0 += 1,
            (true, false) => c.1 += 1,
            (false, true) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

/// numpy-style linear quantile, computed from scratch.
pub fn np_quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let pos = q * (v.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// IoU per class from explicit pixel sets over the whole dataset.
pub fn set_iou(preds: &[LabelMap], gts: &[LabelMap], k: usize) -> (Vec<Option<f64>>, Option<f64>) {
    let mut per_class = Vec::with_capacity(k);
    for c in 0..k as i32 {
        let mut g = HashSet::new();
        let mut p = HashSet::new();
        for (n, (pred, gt)) in preds.iter().zip(gts).enumerate() {
            for idx in 0..gt.data().len() {
                if gt.is_ignored(idx) {
                    continue;
                }
                if gt.data()[idx] == c {
                    g.insert((n, idx));
                }
                if pred.data()[idx] == c {
                    p.insert((n, idx));
                }
            }
        }
        let union = g.union(&p).count();
        let inter = g.intersection(&p).count();
        per_class.push((union > 0).then(|| inter as f64 / union as f64));
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    let mean = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    (per_class, mean)
}

/// AUROC by comparing every (negative, positive) pair.
pub fn pairwise_auroc(negatives: &[f64], positives: &[f64]) -> f64 {
    let mut wins = 0.0;
    for &p in positives {
        for &n in negatives {
            if p > n {
                wins += 1.0;
            } else if p == n {
                wins += 0.5;
            }
        }
    }
    wins / (negatives.len() * positives.len()) as f64
}
