use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::{LabelMap, Polarity, UncertaintyMap};

/// How the uncertainties of a patch's valid pixels are pooled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    #[default]
    Mean,
    Max,
    Median,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Self::Mean),
            "max" => Ok(Self::Max),
            "median" => Ok(Self::Median),
            other => Err(Error::Config(format!("unknown aggregation `{other}`"))),
        }
    }
}

/// Square `window`×`window` patches placed every `stride` pixels. Only
/// windows that fit entirely inside the image are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PatchConfig {
    pub window: usize,
    /// A patch is accurate when at least this fraction of its valid pixels is correct.
    pub alpha: f64,
    pub stride: usize,
    #[serde(default)]
    pub aggregation: Aggregation,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            window: 1,
            alpha: 0.5,
            stride: 1,
            aggregation: Aggregation::Mean,
        }
    }
}

impl PatchConfig {
    /// Non-overlapping windows of size `window`.
    pub fn tiled(window: usize, alpha: f64) -> Self {
        Self {
            window,
            alpha,
            stride: window,
            aggregation: Aggregation::Mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.window == 0 || self.stride == 0 {
            return Err(Error::Config("patch window and stride must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha {} outside (0, 1]", self.alpha)));
        }
        Ok(())
    }
}

/// Patch counts: accurate/inaccurate × certain/uncertain.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub n_ac: u64,
    pub n_au: u64,
    pub n_ic: u64,
    pub n_iu: u64,
}

impl ConfusionCounts {
    pub fn new(n_ac: u64, n_au: u64, n_ic: u64, n_iu: u64) -> Self {
        Self { n_ac, n_au, n_ic, n_iu }
    }

    pub fn total(&self) -> u64 {
        self.n_ac + self.n_au + self.n_ic + self.n_iu
    }

    pub fn add(&mut self, accurate: bool, certain: bool) {
        match (accurate, certain) {
            (true, true) => self.n_ac += 1,
            (true, false) => self.n_au += 1,
            (false, true) => self.n_ic += 1,
            (false, false) => self.n_iu += 1,
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = Self;

    fn add(self, o: Self) -> Self {
        Self::new(self.n_ac + o.n_ac, self.n_au + o.n_au, self.n_ic + o.n_ic, self.n_iu + o.n_iu)
    }
}

/// The three conditional metrics; `None` where the denominator is zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConditionalMetrics {
    pub p_acc_given_cert: Option<f64>,
    pub p_unc_given_inacc: Option<f64>,
    pub pavpu: Option<f64>,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

pub fn metrics_from_counts(c: &ConfusionCounts) -> ConditionalMetrics {
    ConditionalMetrics {
        p_acc_given_cert: ratio(c.n_ac, c.n_ac + c.n_ic),
        p_unc_given_inacc: ratio(c.n_iu, c.n_ic + c.n_iu),
        pavpu: ratio(c.n_ac + c.n_iu, c.total()),
    }
}

/// Accuracy flag and pooled uncertainty of one patch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchScore {
    pub accurate: bool,
    pub uncertainty: f64,
}

fn check_inputs(pred: &LabelMap, gt: &LabelMap, unc: &UncertaintyMap) -> Result<()> {
    if unc.polarity() != Polarity::UncertaintyLike {
        return Err(Error::validation(
            "patch metrics need an uncertainty-like map; negate confidence maps first",
        ));
    }
    let dims = [
        (pred.height(), pred.width()),
        (gt.height(), gt.width()),
        (unc.height(), unc.width()),
    ];
    if dims[0] != dims[1] || dims[0] != dims[2] {
        return Err(Error::validation(format!(
            "shape mismatch: pred {:?}, gt {:?}, uncertainty {:?}",
            dims[0], dims[1], dims[2]
        )));
    }
    Ok(())
}

/// Scores every window holding at least one non-ignored ground-truth pixel.
pub fn patch_scores(pred: &LabelMap, gt: &LabelMap, unc: &UncertaintyMap, cfg: &PatchConfig) -> Result<Vec<PatchScore>> {
    cfg.validate()?;
    check_inputs(pred, gt, unc)?;
    let (h, w) = (gt.height(), gt.width());
    let win = cfg.window;
    let mut out = Vec::new();
    let mut vals = Vec::with_capacity(win * win);
    let mut i0 = 0;
    while i0 + win <= h {
        let mut j0 = 0;
        while j0 + win <= w {
            vals.clear();
            let mut correct = 0usize;
            for i in i0..i0 + win {
                for j in j0..j0 + win {
                    let g = gt.at(i, j);
                    if g == gt.ignore_id() {
                        continue;
                    }
                    correct += usize::from(pred.at(i, j) == g);
                    vals.push(unc.at(i, j));
                }
            }
            if !vals.is_empty() {
                let n = vals.len();
                let uncertainty = match cfg.aggregation {
                    Aggregation::Mean => vals.iter().sum::<f64>() / n as f64,
                    Aggregation::Max => vals.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                    Aggregation::Median => {
                        vals.sort_by(f64::total_cmp);
                        if n % 2 == 1 {
                            vals[n / 2]
                        } else {
                            0.5 * (vals[n / 2 - 1] + vals[n / 2])
                        }
                    }
                };
                out.push(PatchScore {
                    accurate: correct as f64 / n as f64 >= cfg.alpha,
                    uncertainty,
                });
            }
            j0 += cfg.stride;
        }
        i0 += cfg.stride;
    }
    Ok(out)
}

pub(crate) fn count_at(scores: &[PatchScore], threshold: f64) -> ConfusionCounts {
    let mut c = ConfusionCounts::default();
    for s in scores {
        c.add(s.accurate, s.uncertainty <= threshold);
    }
    c
}

/// Patch confusion counts for one image at one certainty threshold.
/// A patch is certain when its pooled uncertainty is `<= threshold`.
pub fn patch_counts(
    pred: &LabelMap,
    gt: &LabelMap,
    unc: &UncertaintyMap,
    threshold: f64,
    cfg: &PatchConfig,
) -> Result<ConfusionCounts> {
    Ok(count_at(&patch_scores(pred, gt, unc, cfg)?, threshold))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::Source;

    #[test]
    fn exhaustive_two_by_two() {
        let gt = LabelMap::new(2, 2, vec![0, 0, 0, 0], 255).unwrap();
        let pred = LabelMap::new(2, 2, vec![0, 0, 1, 1], 255).unwrap();
        let unc = UncertaintyMap::new(2, 2, vec![0.1, 0.9, 0.1, 0.9], Source::Entropy).unwrap();
        let c = patch_counts(&pred, &gt, &unc, 0.5, &PatchConfig::default()).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 1));
    }

    #[test]
    fn all_accurate_and_certain() {
        let gt = LabelMap::new(2, 2, vec![1, 2, 0, 1], 255).unwrap();
        let unc = UncertaintyMap::new(2, 2, vec![0.0; 4], Source::Entropy).unwrap();
        let c = patch_counts(&gt, &gt, &unc, 0.0, &PatchConfig::default()).unwrap();
        let m = metrics_from_counts(&c);
        assert_eq!(m.p_acc_given_cert, Some(1.0));
        assert_eq!(m.pavpu, Some(1.0));
        assert_eq!(m.p_unc_given_inacc, None);
    }

    #[test]
    fn metric_fixtures() {
        let m = metrics_from_counts(&ConfusionCounts::new(1, 1, 1, 1));
        assert_eq!((m.p_acc_given_cert, m.p_unc_given_inacc, m.pavpu), (Some(0.5), Some(0.5), Some(0.5)));
        let m = metrics_from_counts(&ConfusionCounts::new(10, 0, 0, 0));
        assert_eq!((m.p_acc_given_cert, m.p_unc_given_inacc, m.pavpu), (Some(1.0), None, Some(1.0)));
        let m = metrics_from_counts(&ConfusionCounts::new(3, 1, 2, 4));
        assert!((m.p_acc_given_cert.unwrap() - 0.6).abs() < 1e-15);
        assert!((m.p_unc_given_inacc.unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert!((m.pavpu.unwrap() - 0.7).abs() < 1e-15);
        let m = metrics_from_counts(&ConfusionCounts::default());
        assert_eq!((m.p_acc_given_cert, m.p_unc_given_inacc, m.pavpu), (None, None, None));
    }

    #[test]
    fn confidence_maps_rejected() {
        let gt = LabelMap::new(1, 1, vec![0], 255).unwrap();
        let unc = UncertaintyMap::new(1, 1, vec![-3.0], Source::LogDensity).unwrap();
        assert!(matches!(
            patch_counts(&gt, &gt, &unc, 0.0, &PatchConfig::default()),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn shape_mismatch_rejected() {
        let gt = LabelMap::new(1, 2, vec![0, 0], 255).unwrap();
        let unc = UncertaintyMap::new(2, 1, vec![0.0, 0.0], Source::Entropy).unwrap();
        assert!(patch_counts(&gt, &gt, &unc, 0.0, &PatchConfig::default()).is_err());
    }

    #[test]
    fn ignored_pixels_are_skipped() {
        let gt = LabelMap::new(1, 2, vec![0, 255], 255).unwrap();
        let pred = LabelMap::new(1, 2, vec![0, 3], 255).unwrap();
        let unc = UncertaintyMap::new(1, 2, vec![0.2, 100.0], Source::Entropy).unwrap();
        let cfg = PatchConfig::tiled(2, 1.0);
        let s = patch_scores(&pred, &gt, &unc, &cfg).unwrap();
        assert_eq!(s, vec![]);
        let cfg = PatchConfig::tiled(1, 1.0);
        let s = patch_scores(&pred, &gt, &unc, &cfg).unwrap();
        assert_eq!(s, vec![PatchScore { accurate: true, uncertainty: 0.2 }]);
    }

    #[test]
    fn aggregation_modes() {
        let gt = LabelMap::new(2, 2, vec![0; 4], 255).unwrap();
        let unc = UncertaintyMap::new(2, 2, vec![1.0, 2.0, 3.0, 10.0], Source::Entropy).unwrap();
        let mut cfg = PatchConfig::tiled(2, 0.5);
        assert_eq!(patch_scores(&gt, &gt, &unc, &cfg).unwrap()[0].uncertainty, 4.0);
        cfg.aggregation = Aggregation::Max;
        assert_eq!(patch_scores(&gt, &gt, &unc, &cfg).unwrap()[0].uncertainty, 10.0);
        cfg.aggregation = Aggregation::Median;
        assert_eq!(patch_scores(&gt, &gt, &unc, &cfg).unwrap()[0].uncertainty, 2.5);
    }

    #[test]
    fn config_validation() {
        assert!(PatchConfig::tiled(0, 0.5).validate().is_err());
        assert!(PatchConfig::tiled(2, 0.0).validate().is_err());
        assert!(PatchConfig::tiled(2, 1.5).validate().is_err());
        assert!(PatchConfig::tiled(2, 1.0).validate().is_ok());
    }
}
