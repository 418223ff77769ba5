//! Deterministic synthetic datasets drawn from known class Gaussians.
//!
//! Each image gets its own random stream and each pixel its own position in
//! that stream (see [`crate::rng`]), so the emitted bytes depend only on the
//! spec and its seed.

use std::path::Path;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gda::{linalg, logsumexp};
use crate::io::{self, DatasetManifest, ManifestEntry, TensorFile};
use crate::maps::{FeatureMap, LabelMap};
use crate::parallel;
use crate::rng::CounterRng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;
/// Images generated (and held in memory) at once while writing a dataset.
const WRITE_BATCH: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    /// Independent per-pixel labels drawn from `class_weights`.
    #[default]
    Random,
    /// Vertical bands: column `j` gets class `floor(j * K / W)`.
    Blocks,
    /// One site per class at a random position; pixels take the nearest site's class.
    Voronoi,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureDtype {
    #[default]
    Float32,
    Float64,
}

fn default_ignore() -> i32 {
    255
}
fn default_offset() -> f64 {
    10.0
}
fn default_accuracy() -> f64 {
    0.9
}
fn default_margin() -> f64 {
    4.0
}
fn default_noise() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthSpec {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub num_images: usize,
    pub height: usize,
    pub width: usize,
    /// K mean vectors of length D.
    pub means: Vec<Vec<f64>>,
    /// K symmetric positive definite D×D matrices.
    pub covariances: Vec<Vec<Vec<f64>>>,
    #[serde(default)]
    pub layout: Layout,
    /// Relative class frequencies for the random layout; uniform when absent.
    #[serde(default)]
    pub class_weights: Option<Vec<f64>>,
    /// Fraction of each image covered by a square OoD patch.
    #[serde(default)]
    pub ood_fraction: f64,
    /// Distance of the OoD mean from the class means, in units of the largest class standard deviation.
    #[serde(default = "default_offset")]
    pub ood_offset: f64,
    pub seed: u64,
    #[serde(default = "default_ignore")]
    pub ignore_id: i32,
    /// Fraction of in-distribution pixels whose logit argmax equals the label.
    #[serde(default = "default_accuracy")]
    pub logit_accuracy: f64,
    /// The winning logit exceeds the runner-up by `margin * u`, `u ~ U(0, 1]`.
    #[serde(default = "default_margin")]
    pub logit_margin: f64,
    #[serde(default = "default_noise")]
    pub logit_noise: f64,
    #[serde(default)]
    pub feature_dtype: FeatureDtype,
}

impl SynthSpec {
    /// Isotropic classes `N(mean_c, sigma^2 I)` with means `separation` apart
    /// along distinct axes.
    pub fn isotropic(num_classes: usize, feature_dim: usize, separation: f64, sigma: f64, seed: u64) -> Self {
        let means = (0..num_classes)
            .map(|c| {
                let mut m = vec![0.0; feature_dim];
                m[c % feature_dim] = separation * (1 + c / feature_dim) as f64;
                m
            })
            .collect();
        let cov: Vec<Vec<f64>> = (0..feature_dim)
            .map(|i| (0..feature_dim).map(|j| if i == j { sigma * sigma } else { 0.0 }).collect())
            .collect();
        Self {
            num_classes,
            feature_dim,
            num_images: 1,
            height: 8,
            width: 8,
            means,
            covariances: vec![cov; num_classes],
            layout: Layout::Random,
            class_weights: None,
            ood_fraction: 0.0,
            ood_offset: default_offset(),
            seed,
            ignore_id: default_ignore(),
            logit_accuracy: default_accuracy(),
            logit_margin: default_margin(),
            logit_noise: default_noise(),
            feature_dtype: FeatureDtype::Float32,
        }
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(text).map_err(|e| Error::Config(format!("synth spec: {e}")))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let (k, d) = (self.num_classes, self.feature_dim);
        if k == 0 || d == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("K, D, H and W must all be at least 1".into()));
        }
        if self.means.len() != k || self.means.iter().any(|m| m.len() != d) {
            return Err(Error::Config(format!("means must be {k} vectors of length {d}")));
        }
        if self.covariances.len() != k || self.covariances.iter().any(|c| c.len() != d || c.iter().any(|r| r.len() != d)) {
            return Err(Error::Config(format!("covariances must be {k} matrices of size {d}x{d}")));
        }
        for (c, cov) in self.covariances.iter().enumerate() {
            for i in 0..d {
                for j in 0..i {
                    if cov[i][j] != cov[j][i] {
                        return Err(Error::Config(format!("covariance {c} is not symmetric")));
                    }
                }
            }
            if linalg::cholesky(&cov.concat(), d).is_none() {
                return Err(Error::Config(format!("covariance {c} is not positive definite")));
            }
        }
        if let Some(w) = &self.class_weights {
            if w.len() != k || w.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::Config("class_weights must be K non-negative values with a positive sum".into()));
            }
        }
        if !(0.0..1.0).contains(&self.ood_fraction) {
            return Err(Error::Config("ood_fraction must lie in [0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.logit_accuracy) {
            return Err(Error::Config("logit_accuracy must lie in [0, 1]".into()));
        }
        if !(self.logit_margin >= 0.0 && self.logit_noise >= 0.0) {
            return Err(Error::Config("logit_margin and logit_noise must be non-negative".into()));
        }
        if (0..k as i32).contains(&self.ignore_id) {
            return Err(Error::Config("ignore_id collides with a class id".into()));
        }
        Ok(())
    }

    fn weights(&self) -> Vec<f64> {
        match &self.class_weights {
            Some(w) => {
                let s: f64 = w.iter().sum();
                w.iter().map(|x| x / s).collect()
            }
            None => vec![1.0 / self.num_classes as f64; self.num_classes],
        }
    }

    /// Expected class proportions of the layout, before OoD masking.
    /// Exact for blocks; the Voronoi layout is uniform by symmetry.
    pub fn layout_proportions(&self) -> Vec<f64> {
        let k = self.num_classes;
        match self.layout {
            Layout::Random => self.weights(),
            Layout::Blocks => {
                let mut counts = vec![0usize; k];
                for j in 0..self.width {
                    counts[j * k / self.width] += 1;
                }
                counts.iter().map(|&c| c as f64 / self.width as f64).collect()
            }
            Layout::Voronoi => vec![1.0 / k as f64; k],
        }
    }

    fn chol(&self, c: usize) -> Vec<f64> {
        linalg::cholesky(&self.covariances[c].concat(), self.feature_dim).expect("validated")
    }

    /// Mean of the OoD Gaussian: `ood_offset` class standard deviations beyond
    /// the class mean furthest along the all-ones direction, so every class
    /// mean is at least that far away.
    pub fn ood_mean(&self) -> Vec<f64> {
        let d = self.feature_dim;
        let u = 1.0 / (d as f64).sqrt();
        let proj = |m: &Vec<f64>| m.iter().sum::<f64>() * u;
        let far = self
            .means
            .iter()
            .max_by(|a, b| proj(a).total_cmp(&proj(b)))
            .expect("K >= 1");
        let sigma = self
            .covariances
            .iter()
            .flat_map(|c| (0..d).map(move |i| c[i][i]))
            .fold(0.0, f64::max)
            .sqrt();
        far.iter().map(|m| m + self.ood_offset * sigma * u).collect()
    }

    /// Average of the class covariances.
    pub fn ood_covariance(&self) -> Vec<f64> {
        let d = self.feature_dim;
        let k = self.num_classes as f64;
        let mut out = vec![0.0; d * d];
        for c in &self.covariances {
            for (o, v) in out.iter_mut().zip(c.concat()) {
                *o += v / k;
            }
        }
        out
    }

    /// Side lengths of the square OoD patch.
    fn ood_patch(&self) -> (usize, usize) {
        if self.ood_fraction <= 0.0 {
            return (0, 0);
        }
        let s = self.ood_fraction.sqrt();
        let ph = ((self.height as f64 * s).round() as usize).clamp(1, self.height);
        let pw = ((self.width as f64 * s).round() as usize).clamp(1, self.width);
        (ph, pw)
    }
}

/// Mixture log density under the generator's true parameters, weighting
/// classes by the layout proportions.
pub fn analytic_log_density(spec: &SynthSpec, z: &[f64]) -> Result<f64> {
    let d = spec.feature_dim;
    if z.len() != d {
        return Err(Error::validation(format!("point has D={}, spec has D={d}", z.len())));
    }
    let props = spec.layout_proportions();
    let terms: Vec<f64> = (0..spec.num_classes)
        .filter(|&c| props[c] > 0.0)
        .map(|c| {
            let l = spec.chol(c);
            let mut r: Vec<f64> = z.iter().zip(&spec.means[c]).map(|(a, b)| a - b).collect();
            linalg::forward_solve(&l, d, &mut r);
            let maha: f64 = r.iter().map(|v| v * v).sum();
            let log_det = linalg::log_det_from_cholesky(&l, d);
            props[c].ln() - 0.5 * (d as f64 * LN_2PI + log_det + maha)
        })
        .collect();
    Ok(logsumexp(&terms))
}

/// One generated image, held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthImage {
    pub features: FeatureMap,
    pub labels: LabelMap,
    /// H×W×K row-major.
    pub logits: Vec<f64>,
    pub ood: Vec<bool>,
}

struct Sampler {
    rng: CounterRng,
    chols: Vec<Vec<f64>>,
    ood_mean: Vec<f64>,
    ood_chol: Vec<f64>,
    cumulative: Vec<f64>,
}

impl Sampler {
    fn new(spec: &SynthSpec) -> Self {
        let mut acc = 0.0;
        let cumulative = spec
            .weights()
            .iter()
            .map(|w| {
                acc += w;
                acc
            })
            .collect();
        Self {
            rng: CounterRng::new(spec.seed),
            chols: (0..spec.num_classes).map(|c| spec.chol(c)).collect(),
            ood_mean: spec.ood_mean(),
            ood_chol: linalg::cholesky(&spec.ood_covariance(), spec.feature_dim).expect("average of SPD matrices"),
            cumulative,
        }
    }
}

fn gaussian(rng: &mut ChaCha8Rng, mean: &[f64], chol: &[f64], out: &mut [f64]) {
    let d = mean.len();
    let eps: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    for i in 0..d {
        let row = &chol[i * d..i * d + i + 1];
        out[i] = mean[i] + row.iter().zip(&eps).map(|(a, b)| a * b).sum::<f64>();
    }
}

struct ImageLayout {
    sites: Vec<(f64, f64)>,
    ood_origin: (usize, usize),
}

fn image_layout(spec: &SynthSpec, s: &Sampler, n: usize) -> ImageLayout {
    let mut rng = s.rng.at(n as u64, (spec.height * spec.width) as u64);
    let sites = (0..spec.num_classes)
        .map(|_| {
            (
                rng.random::<f64>() * spec.height as f64,
                rng.random::<f64>() * spec.width as f64,
            )
        })
        .collect();
    let (ph, pw) = spec.ood_patch();
    let oi = rng.random_range(0..=spec.height - ph);
    let oj = rng.random_range(0..=spec.width - pw);
    ImageLayout {
        sites,
        ood_origin: (oi, oj),
    }
}

struct PixelSample {
    label: i32,
    ood: bool,
    feature: Vec<f64>,
    logits: Vec<f64>,
}

fn sample_pixel(spec: &SynthSpec, s: &Sampler, layout: &ImageLayout, n: usize, p: usize) -> PixelSample {
    let (k, d) = (spec.num_classes, spec.feature_dim);
    let (i, j) = (p / spec.width, p % spec.width);
    let mut rng = s.rng.at(n as u64, p as u64);

    let class = match spec.layout {
        Layout::Random => {
            let u: f64 = rng.random();
            s.cumulative.iter().position(|&c| u < c).unwrap_or(k - 1)
        }
        Layout::Blocks => j * k / spec.width,
        Layout::Voronoi => {
            let (ci, cj) = (i as f64 + 0.5, j as f64 + 0.5);
            let dist = |&(si, sj): &(f64, f64)| (si - ci).powi(2) + (sj - cj).powi(2);
            (0..k)
                .min_by(|&a, &b| dist(&layout.sites[a]).total_cmp(&dist(&layout.sites[b])))
                .expect("K >= 1")
        }
    };
    let (ph, pw) = spec.ood_patch();
    let (oi, oj) = layout.ood_origin;
    let ood = (oi..oi + ph).contains(&i) && (oj..oj + pw).contains(&j);

    let mut feature = vec![0.0; d];
    if ood {
        gaussian(&mut rng, &s.ood_mean, &s.ood_chol, &mut feature);
    } else {
        gaussian(&mut rng, &spec.means[class], &s.chols[class], &mut feature);
    }

    let mut logits: Vec<f64> = (0..k)
        .map(|_| { let e: f64 = StandardNormal.sample(&mut rng); spec.logit_noise * e })
        .collect();
    let target = if k == 1 {
        0
    } else if ood {
        rng.random_range(0..k)
    } else if rng.random::<f64>() < spec.logit_accuracy {
        class
    } else {
        let other = rng.random_range(0..k - 1);
        if other >= class {
            other + 1
        } else {
            other
        }
    };
    if k > 1 {
        let runner_up = (0..k)
            .filter(|&c| c != target)
            .map(|c| logits[c])
            .fold(f64::NEG_INFINITY, f64::max);
        let u = 1.0 - rng.random::<f64>();
        logits[target] = runner_up + spec.logit_margin * u;
        if spec.logit_margin == 0.0 {
            // keep the argmax well defined
            logits[target] = runner_up + f64::EPSILON * runner_up.abs().max(1.0);
        }
    }

    PixelSample {
        label: if ood { spec.ignore_id } else { class as i32 },
        ood,
        feature,
        logits,
    }
}

/// Generates image `n` of the dataset described by `spec`.
pub fn generate_image(spec: &SynthSpec, n: usize) -> Result<SynthImage> {
    spec.validate()?;
    generate_with(spec, &Sampler::new(spec), n)
}

fn generate_with(spec: &SynthSpec, s: &Sampler, n: usize) -> Result<SynthImage> {
    let layout = image_layout(spec, s, n);
    let (h, w, d, k) = (spec.height, spec.width, spec.feature_dim, spec.num_classes);
    let pixels = parallel::map_range(h * w, |p| sample_pixel(spec, s, &layout, n, p));
    let mut feats = Vec::with_capacity(h * w * d);
    let mut logits = Vec::with_capacity(h * w * k);
    let mut labels = Vec::with_capacity(h * w);
    let mut ood = Vec::with_capacity(h * w);
    for px in pixels {
        match spec.feature_dtype {
            FeatureDtype::Float32 => feats.extend(px.feature.iter().map(|&v| f64::from(v as f32))),
            FeatureDtype::Float64 => feats.extend_from_slice(&px.feature),
        }
        logits.extend(px.logits.iter().map(|&v| f64::from(v as f32)));
        labels.push(px.label);
        ood.push(px.ood);
    }
    Ok(SynthImage {
        features: FeatureMap::new(h, w, d, feats)?,
        labels: LabelMap::new(h, w, labels, spec.ignore_id)?,
        logits,
        ood,
    })
}

pub fn image_id(n: usize) -> String {
    format!("img{n:05}")
}

/// Writes every image's tensors plus `manifest.json` into `out_dir`.
pub fn generate(spec: &SynthSpec, out_dir: &Path) -> Result<DatasetManifest> {
    spec.validate()?;
    io::create_dir(out_dir)?;
    let sampler = Sampler::new(spec);
    let (h, w, d, k) = (spec.height, spec.width, spec.feature_dim, spec.num_classes);
    let small_labels = k <= 255 && (0..=255).contains(&spec.ignore_id);
    let mut entries = Vec::with_capacity(spec.num_images);

    let mut start = 0;
    while start < spec.num_images {
        let end = (start + WRITE_BATCH).min(spec.num_images);
        let batch = parallel::map_range(end - start, |i| generate_with(spec, &sampler, start + i));
        for (i, img) in batch.into_iter().enumerate() {
            let img = img?;
            let id = image_id(start + i);
            let features = match spec.feature_dtype {
                FeatureDtype::Float32 => {
                    TensorFile::f32(vec![h, w, d], img.features.data().iter().map(|&v| v as f32).collect())?
                }
                FeatureDtype::Float64 => TensorFile::f64(vec![h, w, d], img.features.data().to_vec())?,
            };
            let logits = TensorFile::f32(vec![h, w, k], img.logits.iter().map(|&v| v as f32).collect())?;
            let labels = if small_labels {
                TensorFile::u8(vec![h, w], img.labels.data().iter().map(|&l| l as u8).collect())?
            } else {
                TensorFile::i32(vec![h, w], img.labels.data().to_vec())?
            };
            let mask = TensorFile::u8(vec![h, w], img.ood.iter().map(|&o| u8::from(o)).collect())?;

            let mut entry = ManifestEntry::new(&id);
            for (suffix, tensor, slot) in [
                ("features", &features, &mut entry.feature_path),
                ("logits", &logits, &mut entry.logit_path),
                ("labels", &labels, &mut entry.label_path),
                ("ood", &mask, &mut entry.ood_mask_path),
            ] {
                let name = format!("{id}.{suffix}.npy");
                io::write_tensor(&out_dir.join(&name), tensor)?;
                *slot = Some(name.into());
            }
            entries.push(entry);
        }
        start = end;
    }

    let mut manifest = DatasetManifest::new(k, d, spec.ignore_id, entries)?;
    io::atomic_write(&out_dir.join("manifest.json"), &manifest.to_json())?;
    manifest.set_base_dir(out_dir);
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthSpec {
        let mut s = SynthSpec::isotropic(2, 2, 5.0, 1.0, 7);
        s.height = 4;
        s.width = 4;
        s
    }

    #[test]
    fn same_seed_same_image() {
        let s = small();
        assert_eq!(generate_image(&s, 0).unwrap(), generate_image(&s, 0).unwrap());
        assert_ne!(generate_image(&s, 0).unwrap(), generate_image(&s, 1).unwrap());
    }

    #[test]
    fn zero_ood_fraction_gives_empty_mask() {
        let img = generate_image(&small(), 0).unwrap();
        assert!(img.ood.iter().all(|&o| !o));
        assert!(img.labels.data().iter().all(|&l| l == 0 || l == 1));
    }

    #[test]
    fn ood_patch_is_ignored_and_far() {
        let mut s = small();
        s.height = 16;
        s.width = 16;
        s.ood_fraction = 0.25;
        let img = generate_image(&s, 0).unwrap();
        assert_eq!(img.ood.iter().filter(|&&o| o).count(), 64);
        for (p, &o) in img.ood.iter().enumerate() {
            assert_eq!(o, img.labels.data()[p] == 255);
        }
        let om = s.ood_mean();
        for m in &s.means {
            let dist: f64 = om.iter().zip(m).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            assert!(dist >= 10.0 - 1e-9, "distance {dist}");
        }
    }

    #[test]
    fn logits_follow_labels_at_requested_rate() {
        let mut s = SynthSpec::isotropic(3, 2, 5.0, 1.0, 3);
        s.height = 64;
        s.width = 64;
        s.logit_accuracy = 0.8;
        let img = generate_image(&s, 0).unwrap();
        let hits = (0..64 * 64)
            .filter(|&p| {
                let row = &img.logits[p * 3..p * 3 + 3];
                let arg = (0..3).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
                arg as i32 == img.labels.data()[p]
            })
            .count();
        let rate = hits as f64 / 4096.0;
        assert!((rate - 0.8).abs() < 0.03, "rate {rate}");
    }

    #[test]
    fn block_proportions_are_exact() {
        let mut s = SynthSpec::isotropic(3, 2, 5.0, 1.0, 3);
        s.layout = Layout::Blocks;
        s.height = 4;
        s.width = 32;
        assert_eq!(s.layout_proportions(), vec![11.0 / 32.0, 11.0 / 32.0, 10.0 / 32.0]);
        let img = generate_image(&s, 0).unwrap();
        let zeros = img.labels.data().iter().filter(|&&l| l == 0).count();
        assert_eq!(zeros, 4 * 11);
    }

    #[test]
    fn voronoi_uses_every_site_class() {
        let mut s = SynthSpec::isotropic(3, 2, 5.0, 1.0, 11);
        s.layout = Layout::Voronoi;
        s.height = 32;
        s.width = 32;
        let img = generate_image(&s, 0).unwrap();
        for c in 0..3 {
            assert!(img.labels.data().contains(&c));
        }
    }

    #[test]
    fn analytic_density_standard_normal() {
        let mut s = SynthSpec::isotropic(1, 2, 0.0, 1.0, 0);
        s.means = vec![vec![0.0, 0.0]];
        let v = analytic_log_density(&s, &[0.0, 0.0]).unwrap();
        assert!((v + (2.0 * std::f64::consts::PI).ln()).abs() < 1e-14);
    }

    #[test]
    fn analytic_density_symmetric_midpoint() {
        // N(-a, 1) and N(a, 1) in 1-D with equal weights, evaluated at 0:
        // both components give exp(-a^2/2)/sqrt(2 pi)
        let mut s = SynthSpec::isotropic(2, 1, 0.0, 1.0, 0);
        s.means = vec![vec![-1.5], vec![1.5]];
        let v = analytic_log_density(&s, &[0.0]).unwrap();
        let expect = -0.5 * 1.5f64.powi(2) - 0.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((v - expect).abs() < 1e-14);
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = small();
        s.covariances[0] = vec![vec![1.0, 2.0], vec![2.0, 1.0]];
        assert!(matches!(s.validate(), Err(Error::Config(_))));
        let mut s = small();
        s.ood_fraction = 1.0;
        assert!(s.validate().is_err());
        let mut s = small();
        s.ignore_id = 1;
        assert!(s.validate().is_err());
    }

    #[test]
    fn spec_json_round_trip() {
        let s = small();
        let text = serde_json::to_string(&s).unwrap();
        assert_eq!(SynthSpec::from_json(&text).unwrap(), s);
        assert!(SynthSpec::from_json("{\"num_classes\": 2}").is_err());
    }
}
