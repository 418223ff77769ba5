use serde::{Deserialize, Serialize};

use super::accumulator::{ClassAccumulator, FitAccumulator};
use super::linalg;
use crate::error::{Error, Result};
use crate::maps::{FeatureMap, Source, UncertaintyMap};
use crate::parallel;

/// Multipliers of the mean covariance diagonal tried, in order, as ridge terms.
pub const DEFAULT_JITTER_LADDER: [f64; 5] = [1e-8, 1e-6, 1e-4, 1e-2, 1.0];

const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceMode {
    /// One full covariance per class.
    #[default]
    Full,
    /// Per-class covariance with off-diagonal terms zeroed.
    Diagonal,
    /// A single pooled within-class covariance shared by all classes.
    Tied,
}

impl std::str::FromStr for CovarianceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Self::Full),
            "diagonal" | "diag" => Ok(Self::Diagonal),
            "tied" => Ok(Self::Tied),
            other => Err(Error::Config(format!("unknown covariance mode `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub covariance: CovarianceMode,
    pub jitter_ladder: Vec<f64>,
}

impl FitOptions {
    pub fn validate(&self) -> Result<()> {
        if self.jitter_ladder.is_empty() {
            return Err(Error::Config("jitter ladder is empty".into()));
        }
        if let Some(bad) = self.jitter_ladder.iter().find(|j| !(j.is_finite() && **j >= 0.0)) {
            return Err(Error::Config(format!("jitter multiplier {bad} must be finite and non-negative")));
        }
        Ok(())
    }
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            covariance: CovarianceMode::Full,
            jitter_ladder: DEFAULT_JITTER_LADDER.to_vec(),
        }
    }
}

/// One fitted mixture component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassGaussian {
    pub class_id: usize,
    pub mean: Vec<f64>,
    /// Lower-triangular factor of the regularised covariance, row-major D×D.
    pub chol: Vec<f64>,
    /// `log |Sigma|`.
    pub log_det: f64,
    pub log_prior: f64,
}

impl ClassGaussian {
    pub fn covariance(&self) -> Vec<f64> {
        linalg::reconstruct(&self.chol, self.mean.len())
    }
}

/// Fit provenance, stored alongside the parameters in the model archive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMetadata {
    pub format_version: u32,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub ignore_id: i32,
    pub covariance_mode: CovarianceMode,
    pub jitter_ladder: Vec<f64>,
    /// Pixel count per class id `0..K`.
    pub pixel_counts: Vec<u64>,
    /// Absolute ridge added to each fitted component, aligned with `class_ids`.
    pub jitter: Vec<f64>,
    /// Classes with no pixels; they carry no mass in the mixture.
    pub dropped_classes: Vec<usize>,
    /// Classes fitted from fewer than D + 1 pixels.
    pub degenerate_classes: Vec<usize>,
    /// Free-form effective settings recorded by the caller.
    #[serde(default)]
    pub settings: serde_json::Value,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GdaModel {
    pub(crate) dim: usize,
    pub(crate) components: Vec<ClassGaussian>,
    pub(crate) metadata: FitMetadata,
}

/// Per-pixel `log p(z|c)` for every fitted component.
#[derive(Debug, Clone, PartialEq)]
pub struct PerClassLogDensity {
    pub height: usize,
    pub width: usize,
    pub class_ids: Vec<usize>,
    /// Row-major `(H*W) x components`.
    pub values: Vec<f64>,
}

impl PerClassLogDensity {
    pub fn pixel(&self, p: usize) -> &[f64] {
        let k = self.class_ids.len();
        &self.values[p * k..(p + 1) * k]
    }
}

/// `log sum exp(values)`, max-shifted; `-inf` for an empty or all `-inf` input.
pub fn logsumexp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Builds a mixture from per-class statistics; `accs[c]` must hold class `c`.
pub fn finalize(accs: &[ClassAccumulator], ignore_id: i32, opts: &FitOptions) -> Result<GdaModel> {
    let dim = accs
        .first()
        .map(ClassAccumulator::dim)
        .ok_or_else(|| Error::Fit("no class accumulators".into()))?;
    for (c, a) in accs.iter().enumerate() {
        if a.class_id() != c || a.dim() != dim {
            return Err(Error::validation(format!(
                "accumulator {c} holds class {} with D={}, expected class {c} with D={dim}",
                a.class_id(),
                a.dim()
            )));
        }
    }
    opts.validate()?;
    let total: u64 = accs.iter().map(ClassAccumulator::count).sum();
    if total == 0 {
        return Err(Error::Fit("every class is empty".into()));
    }

    let tied = (opts.covariance == CovarianceMode::Tied).then(|| {
        let mut pooled = vec![0.0; dim * dim];
        for a in accs.iter().filter(|a| !a.is_empty()) {
            for (p, s) in pooled.iter_mut().zip(a.scatter()) {
                *p += s;
            }
        }
        pooled.iter_mut().for_each(|p| *p /= total as f64);
        pooled
    });

    let mut components = Vec::new();
    let mut jitter = Vec::new();
    let mut dropped = Vec::new();
    let mut degenerate = Vec::new();
    for a in accs {
        if a.is_empty() {
            dropped.push(a.class_id());
            continue;
        }
        if a.count() < dim as u64 + 1 {
            degenerate.push(a.class_id());
        }
        let mut cov = match &tied {
            Some(shared) => shared.clone(),
            None => a.covariance().expect("non-empty"),
        };
        if opts.covariance == CovarianceMode::Diagonal {
            for i in 0..dim {
                for j in 0..dim {
                    if i != j {
                        cov[i * dim + j] = 0.0;
                    }
                }
            }
        }
        let (chol, eps) = factor_with_jitter(&cov, dim, &opts.jitter_ladder).ok_or_else(|| {
            Error::Numerical {
                class: a.class_id() as i32,
                message: format!(
                    "covariance not positive definite at the largest jitter ({})",
                    opts.jitter_ladder.last().copied().unwrap_or(0.0)
                ),
            }
        })?;
        components.push(ClassGaussian {
            class_id: a.class_id(),
            mean: a.mean().to_vec(),
            log_det: linalg::log_det_from_cholesky(&chol, dim),
            chol,
            log_prior: (a.count() as f64 / total as f64).ln(),
        });
        jitter.push(eps);
    }

    Ok(GdaModel {
        dim,
        components,
        metadata: FitMetadata {
            format_version: 1,
            num_classes: accs.len(),
            feature_dim: dim,
            ignore_id,
            covariance_mode: opts.covariance,
            jitter_ladder: opts.jitter_ladder.clone(),
            pixel_counts: accs.iter().map(ClassAccumulator::count).collect(),
            jitter,
            dropped_classes: dropped,
            degenerate_classes: degenerate,
            settings: serde_json::Value::Null,
        },
    })
}

/// First rung `r` for which `cov + r * mean_diag * I` factorises.
fn factor_with_jitter(cov: &[f64], dim: usize, ladder: &[f64]) -> Option<(Vec<f64>, f64)> {
    let mean_diag = (0..dim).map(|i| cov[i * dim + i]).sum::<f64>() / dim as f64;
    // all-identical samples have a zero diagonal; fall back to an absolute scale
    let scale = if mean_diag > 0.0 && mean_diag.is_finite() {
        mean_diag
    } else {
        1.0
    };
    let mut work = cov.to_vec();
    for &rung in ladder {
        let eps = rung * scale;
        for i in 0..dim {
            work[i * dim + i] = cov[i * dim + i] + eps;
        }
        if let Some(l) = linalg::cholesky(&work, dim) {
            return Some((l, eps));
        }
    }
    None
}

impl FitAccumulator {
    pub fn finalize(&self, opts: &FitOptions) -> Result<GdaModel> {
        finalize(self.classes(), self.ignore_id(), opts)
    }
}

impl GdaModel {
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn components(&self) -> &[ClassGaussian] {
        &self.components
    }

    pub fn metadata(&self) -> &FitMetadata {
        &self.metadata
    }

    pub fn metadata_mut(&mut self) -> &mut FitMetadata {
        &mut self.metadata
    }

    pub fn log_priors(&self) -> Vec<f64> {
        self.components.iter().map(|c| c.log_prior).collect()
    }

    pub fn class_ids(&self) -> Vec<usize> {
        self.components.iter().map(|c| c.class_id).collect()
    }

    fn check_input(&self, features: &FeatureMap) -> Result<()> {
        if features.dim() != self.dim {
            return Err(Error::validation(format!(
                "features have D={}, model expects D={}",
                features.dim(),
                self.dim
            )));
        }
        if let Some(p) = features.data().iter().position(|v| !v.is_finite()) {
            return Err(Error::validation(format!(
                "non-finite feature value at flat index {p}"
            )));
        }
        Ok(())
    }

    /// `log N(z; mu_c, Sigma_c)` for every component, written into `out`.
    fn component_log_pdfs(&self, z: &[f64], work: &mut [f64], out: &mut [f64]) {
        let d = self.dim;
        for (o, c) in out.iter_mut().zip(&self.components) {
            for ((w, zi), mi) in work.iter_mut().zip(z).zip(&c.mean) {
                *w = zi - mi;
            }
            linalg::forward_solve(&c.chol, d, work);
            let maha: f64 = work.iter().map(|v| v * v).sum();
            *o = -0.5 * (d as f64 * LN_2PI + c.log_det + maha);
        }
    }

    fn per_pixel<F>(&self, features: &FeatureMap, width: usize, f: F) -> Vec<f64>
    where
        F: Fn(&[f64], &mut [f64], &mut [f64], &mut [f64]) + Send + Sync,
    {
        let npix = features.num_pixels();
        let k = self.components.len();
        let mut out = vec![0.0; npix * width];
        let chunk_pixels = 256;
        parallel::for_each_chunk_mut(&mut out, chunk_pixels * width, |ci, dst| {
            let mut work = vec![0.0; self.dim];
            let mut comp = vec![0.0; k];
            for (q, o) in dst.chunks_exact_mut(width).enumerate() {
                let z = features.pixel(ci * chunk_pixels + q);
                f(z, &mut work, &mut comp, o);
            }
        });
        out
    }

    /// Per-pixel `log p(z|c)` for each fitted class, without the priors.
    pub fn log_density_per_class(&self, features: &FeatureMap) -> Result<PerClassLogDensity> {
        self.check_input(features)?;
        let k = self.components.len();
        let values = self.per_pixel(features, k, |z, work, _, out| {
            self.component_log_pdfs(z, work, out);
        });
        Ok(PerClassLogDensity {
            height: features.height(),
            width: features.width(),
            class_ids: self.class_ids(),
            values,
        })
    }

    /// Per-pixel marginal `log p(z)`; confidence-like.
    pub fn log_density(&self, features: &FeatureMap) -> Result<UncertaintyMap> {
        self.check_input(features)?;
        let values = self.per_pixel(features, 1, |z, work, comp, out| {
            self.component_log_pdfs(z, work, comp);
            for (v, c) in comp.iter_mut().zip(&self.components) {
                *v += c.log_prior;
            }
            out[0] = logsumexp(comp);
        });
        UncertaintyMap::new(features.height(), features.width(), values, Source::LogDensity)
    }
}
