use serde::{Deserialize, Serialize};

use super::patch::{count_at, metrics_from_counts, patch_scores, ConditionalMetrics, ConfusionCounts, PatchConfig};
use crate::error::{Error, Result};
use crate::maps::{LabelMap, UncertaintyMap};
use crate::parallel;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Evenly spaced interior quantiles `i / (points + 1)` of the pooled patch uncertainties.
    #[default]
    Quantile,
    /// Evenly spaced values from the pooled minimum to the pooled maximum, inclusive.
    Absolute,
}

impl std::str::FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "quantile" => Ok(Self::Quantile),
            "absolute" => Ok(Self::Absolute),
            other => Err(Error::Config(format!("unknown threshold mode `{other}`"))),
        }
    }
}

/// One image's prediction, ground truth and uncertainty-like map.
#[derive(Debug, Clone)]
pub struct EvalImage {
    pub pred: LabelMap,
    pub gt: LabelMap,
    pub unc: UncertaintyMap,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub threshold: f64,
    #[serde(flatten)]
    pub metrics: ConditionalMetrics,
    #[serde(flatten)]
    pub counts: ConfusionCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricCurve {
    pub mode: ThresholdMode,
    pub patch: PatchConfig,
    pub points: Vec<CurvePoint>,
}

impl MetricCurve {
    pub fn thresholds(&self) -> Vec<f64> {
        self.points.iter().map(|p| p.threshold).collect()
    }

    /// CSV with one row per threshold; undefined ratios are empty fields.
    pub fn to_csv(&self) -> String {
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out = String::from("threshold,p_acc_cert,p_unc_inacc,pavpu,n_ac,n_au,n_ic,n_iu\n");
        for p in &self.points {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.threshold,
                opt(p.metrics.p_acc_given_cert),
                opt(p.metrics.p_unc_given_inacc),
                opt(p.metrics.pavpu),
                p.counts.n_ac,
                p.counts.n_au,
                p.counts.n_ic,
                p.counts.n_iu
            ));
        }
        out
    }
}

/// Linear-interpolation quantile of sorted data (numpy's default rule).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    sorted[lo] + frac * (sorted[hi] - sorted[lo])
}

/// Confusion counts and metrics over the whole dataset at `points` thresholds.
pub fn sweep(images: &[EvalImage], cfg: &PatchConfig, mode: ThresholdMode, points: usize) -> Result<MetricCurve> {
    if points < 2 {
        return Err(Error::Config(format!("a sweep needs at least 2 points, got {points}")));
    }
    cfg.validate()?;
    let per_image = parallel::map_slice(images, |im| patch_scores(&im.pred, &im.gt, &im.unc, cfg));
    let mut scores = Vec::new();
    for s in per_image {
        scores.extend(s?);
    }
    if scores.is_empty() {
        return Err(Error::validation("no patch holds a valid pixel"));
    }
    let mut pooled: Vec<f64> = scores.iter().map(|s| s.uncertainty).collect();
    pooled.sort_by(f64::total_cmp);

    let thresholds: Vec<f64> = match mode {
        ThresholdMode::Quantile => (1..=points)
            .map(|i| quantile(&pooled, i as f64 / (points + 1) as f64))
            .collect(),
        ThresholdMode::Absolute => {
            let (lo, hi) = (pooled[0], pooled[pooled.len() - 1]);
            (0..points)
                .map(|i| {
                    if i == points - 1 {
                        hi
                    } else {
                        lo + (hi - lo) * i as f64 / (points - 1) as f64
                    }
                })
                .collect()
        }
    };

    let points = parallel::map_slice(&thresholds, |&t| {
        let counts = count_at(&scores, t);
        CurvePoint {
            threshold: t,
            metrics: metrics_from_counts(&counts),
            counts,
        }
    });
    Ok(MetricCurve {
        mode,
        patch: *cfg,
        points,
    })
}
