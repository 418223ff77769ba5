//! Per-location class means and cross-location distance matrices.
//!
//! Used to check whether a location-shared class-conditional model is
//! reasonable: if features of the same class look alike wherever the pixel
//! sits, `distance_matrix` between two distant locations has its row minima
//! on the diagonal.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::io::DatasetManifest;
use crate::maps::{FeatureMap, LabelMap};
use crate::parallel;

/// Class means of the features observed at one pixel coordinate across a dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LocationMeans {
    pub coord: (usize, usize),
    pub dim: usize,
    pub counts: Vec<u64>,
    /// `None` for classes never observed at this coordinate.
    pub means: Vec<Option<Vec<f64>>>,
    /// Images too small to contain the coordinate.
    pub skipped_images: usize,
}

impl LocationMeans {
    pub fn num_classes(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.iter().all(|&c| c == 0)
    }
}

/// Per-image contribution: feature sums and counts per (coord, class).
struct Partial {
    sums: Vec<Vec<f64>>,
    counts: Vec<u64>,
    skipped: Vec<bool>,
}

fn partial(features: &FeatureMap, labels: &LabelMap, coords: &[(usize, usize)], k: usize) -> Result<Partial> {
    if (features.height(), features.width()) != (labels.height(), labels.width()) {
        return Err(Error::validation("features and labels disagree on spatial size"));
    }
    labels.check_range(k)?;
    let d = features.dim();
    let mut p = Partial {
        sums: vec![vec![0.0; d]; coords.len() * k],
        counts: vec![0; coords.len() * k],
        skipped: vec![false; coords.len()],
    };
    for (ci, &(i, j)) in coords.iter().enumerate() {
        if i >= features.height() || j >= features.width() {
            p.skipped[ci] = true;
            continue;
        }
        let l = labels.at(i, j);
        if l == labels.ignore_id() {
            continue;
        }
        let slot = ci * k + l as usize;
        p.counts[slot] += 1;
        for (s, v) in p.sums[slot].iter_mut().zip(features.at(i, j)) {
            *s += v;
        }
    }
    Ok(p)
}

/// Class means at each coordinate over images produced by `load(index)`.
/// Contributions are summed in image order, independent of threading.
pub fn fit_location_means_with<F>(
    num_images: usize,
    num_classes: usize,
    dim: usize,
    coords: &[(usize, usize)],
    load: F,
) -> Result<Vec<LocationMeans>>
where
    F: Fn(usize) -> Result<(FeatureMap, LabelMap)> + Send + Sync,
{
    let k = num_classes;
    let partials = parallel::map_range(num_images, |n| {
        let (f, l) = load(n)?;
        if f.dim() != dim {
            return Err(Error::validation(format!("image {n}: D={}, expected {dim}", f.dim())));
        }
        partial(&f, &l, coords, k)
    });
    let mut sums = vec![vec![0.0; dim]; coords.len() * k];
    let mut counts = vec![0u64; coords.len() * k];
    let mut skipped = vec![0usize; coords.len()];
    for p in partials {
        let p = p?;
        for (slot, (s, c)) in sums.iter_mut().zip(&mut counts).enumerate() {
            *c += p.counts[slot];
            if p.counts[slot] > 0 {
                for (a, b) in s.iter_mut().zip(&p.sums[slot]) {
                    *a += b;
                }
            }
        }
        for (s, &flag) in skipped.iter_mut().zip(&p.skipped) {
            *s += usize::from(flag);
        }
    }
    Ok(coords
        .iter()
        .enumerate()
        .map(|(ci, &coord)| {
            let counts: Vec<u64> = counts[ci * k..(ci + 1) * k].to_vec();
            let means = (0..k)
                .map(|c| {
                    let n = counts[c];
                    (n > 0).then(|| sums[ci * k + c].iter().map(|s| s / n as f64).collect())
                })
                .collect();
            LocationMeans {
                coord,
                dim,
                counts,
                means,
                skipped_images: skipped[ci],
            }
        })
        .collect())
}

/// Class means at each coordinate across every image of a manifest.
pub fn fit_location_means(manifest: &DatasetManifest, coords: &[(usize, usize)]) -> Result<Vec<LocationMeans>> {
    fit_location_means_with(
        manifest.entries.len(),
        manifest.num_classes,
        manifest.feature_dim,
        coords,
        |n| {
            let e = &manifest.entries[n];
            Ok((manifest.load_features(e)?, manifest.load_labels(e)?))
        },
    )
}

/// K×K matrix of L2 distances `M[p][q] = |mean_a(p) - mean_b(q)|`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DistanceMatrix {
    pub num_classes: usize,
    /// Row-major; `None` where either mean is undefined.
    pub values: Vec<Option<f64>>,
}

impl DistanceMatrix {
    pub fn get(&self, p: usize, q: usize) -> Option<f64> {
        self.values[p * self.num_classes + q]
    }

    pub fn transpose(&self) -> Self {
        let k = self.num_classes;
        Self {
            num_classes: k,
            values: (0..k * k).map(|i| self.values[(i % k) * k + i / k]).collect(),
        }
    }

    /// Rows whose defined minimum sits on the diagonal, and the number of rows with a defined diagonal.
    pub fn diagonal_minimum_rows(&self) -> (usize, usize) {
        let k = self.num_classes;
        let mut hits = 0;
        let mut defined = 0;
        for p in 0..k {
            let Some(diag) = self.get(p, p) else { continue };
            defined += 1;
            if (0..k).filter_map(|q| self.get(p, q)).all(|v| diag <= v) {
                hits += 1;
            }
        }
        (hits, defined)
    }

    /// Comma separated rows; undefined entries are empty fields.
    pub fn to_csv(&self) -> String {
        let k = self.num_classes;
        let mut out = String::new();
        for p in 0..k {
            let row: Vec<String> = (0..k)
                .map(|q| self.get(p, q).map(|v| v.to_string()).unwrap_or_default())
                .collect();
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

pub fn distance_matrix(a: &LocationMeans, b: &LocationMeans) -> Result<DistanceMatrix> {
    if a.num_classes() != b.num_classes() || a.dim != b.dim {
        return Err(Error::validation(format!(
            "location means disagree: K={} D={} vs K={} D={}",
            a.num_classes(),
            a.dim,
            b.num_classes(),
            b.dim
        )));
    }
    let k = a.num_classes();
    let values = (0..k * k)
        .map(|idx| {
            let (p, q) = (idx / k, idx % k);
            match (&a.means[p], &b.means[q]) {
                (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt()),
                _ => None,
            }
        })
        .collect();
    Ok(DistanceMatrix { num_classes: k, values })
}
