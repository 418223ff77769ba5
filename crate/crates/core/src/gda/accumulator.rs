use crate::error::{Error, Result};
use crate::maps::{FeatureMap, LabelMap};

/// Running count, mean and centred scatter `sum (z - mean)(z - mean)ᵀ` of one class.
///
/// Storage for the D×D scatter is allocated lazily, so an empty accumulator
/// costs O(1) memory regardless of the feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAccumulator {
    class_id: usize,
    dim: usize,
    count: u64,
    mean: Vec<f64>,
    scatter: Vec<f64>,
}

impl ClassAccumulator {
    pub fn new(class_id: usize, dim: usize) -> Self {
        Self {
            class_id,
            dim,
            count: 0,
            mean: Vec::new(),
            scatter: Vec::new(),
        }
    }

    /// Exact two-pass statistics of a batch of feature vectors.
    pub fn from_samples<'a>(class_id: usize, dim: usize, samples: impl Iterator<Item = &'a [f64]> + Clone) -> Self {
        let mut acc = Self::new(class_id, dim);
        let mut sum = vec![0.0; dim];
        let mut n = 0u64;
        for z in samples.clone() {
            for (s, v) in sum.iter_mut().zip(z) {
                *s += v;
            }
            n += 1;
        }
        if n == 0 {
            return acc;
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut scatter = vec![0.0; dim * dim];
        let mut centred = vec![0.0; dim];
        for z in samples {
            for ((c, v), m) in centred.iter_mut().zip(z).zip(&mean) {
                *c = v - m;
            }
            for a in 0..dim {
                let ca = centred[a];
                let row = &mut scatter[a * dim..a * dim + a + 1];
                for (s, cb) in row.iter_mut().zip(&centred[..=a]) {
                    *s += ca * cb;
                }
            }
        }
        mirror_lower(&mut scatter, dim);
        acc.count = n;
        acc.mean = mean;
        acc.scatter = scatter;
        acc
    }

    pub fn class_id(&self) -> usize {
        self.class_id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    /// Running mean; empty slice when no samples were seen.
    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// Centred scatter (row-major D×D); empty slice when no samples were seen.
    pub fn scatter(&self) -> &[f64] {
        &self.scatter
    }

    /// Maximum-likelihood covariance `scatter / n`.
    pub fn covariance(&self) -> Option<Vec<f64>> {
        (self.count > 0).then(|| self.scatter.iter().map(|s| s / self.count as f64).collect())
    }

    /// Folds in every non-ignored pixel of this accumulator's class.
    pub fn accumulate(&mut self, features: &FeatureMap, labels: &LabelMap) -> Result<()> {
        check_shapes(features, labels, self.dim)?;
        let class = self.class_id as i32;
        let pixels = (0..labels.data().len()).filter(|&p| labels.data()[p] == class);
        let batch = Self::from_samples(self.class_id, self.dim, pixels.map(|p| features.pixel(p)));
        *self = self.merge(&batch)?;
        Ok(())
    }

    /// Pairwise combination of two accumulators' statistics.
    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.class_id != other.class_id || self.dim != other.dim {
            return Err(Error::validation(format!(
                "cannot merge class {} (D={}) with class {} (D={})",
                self.class_id, self.dim, other.class_id, other.dim
            )));
        }
        if other.count == 0 {
            return Ok(self.clone());
        }
        if self.count == 0 {
            return Ok(other.clone());
        }
        let d = self.dim;
        let (na, nb) = (self.count as f64, other.count as f64);
        let n = na + nb;
        let mean: Vec<f64> = self
            .mean
            .iter()
            .zip(&other.mean)
            .map(|(a, b)| (na * a + nb * b) / n)
            .collect();
        let delta: Vec<f64> = other.mean.iter().zip(&self.mean).map(|(b, a)| b - a).collect();
        let w = na * nb / n;
        let mut scatter = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..=i {
                let k = i * d + j;
                scatter[k] = self.scatter[k] + other.scatter[k] + delta[i] * delta[j] * w;
            }
        }
        mirror_lower(&mut scatter, d);
        Ok(Self {
            class_id: self.class_id,
            dim: d,
            count: self.count + other.count,
            mean,
            scatter,
        })
    }
}

fn mirror_lower(m: &mut [f64], d: usize) {
    for i in 0..d {
        for j in 0..i {
            m[j * d + i] = m[i * d + j];
        }
    }
}

fn check_shapes(features: &FeatureMap, labels: &LabelMap, dim: usize) -> Result<()> {
    if features.height() != labels.height() || features.width() != labels.width() {
        return Err(Error::validation(format!(
            "features are {}x{}, labels are {}x{}",
            features.height(),
            features.width(),
            labels.height(),
            labels.width()
        )));
    }
    if features.dim() != dim {
        return Err(Error::validation(format!(
            "features have D={}, accumulator expects D={dim}",
            features.dim()
        )));
    }
    Ok(())
}

/// One accumulator per class `0..K`.
#[derive(Debug, Clone, PartialEq)]
pub struct FitAccumulator {
    dim: usize,
    ignore_id: i32,
    classes: Vec<ClassAccumulator>,
}

impl FitAccumulator {
    pub fn new(num_classes: usize, dim: usize, ignore_id: i32) -> Self {
        Self {
            dim,
            ignore_id,
            classes: (0..num_classes).map(|c| ClassAccumulator::new(c, dim)).collect(),
        }
    }

    /// Statistics of a single image.
    pub fn from_image(num_classes: usize, features: &FeatureMap, labels: &LabelMap) -> Result<Self> {
        let mut acc = Self::new(num_classes, features.dim(), labels.ignore_id());
        acc.accumulate(features, labels)?;
        Ok(acc)
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn ignore_id(&self) -> i32 {
        self.ignore_id
    }

    pub fn classes(&self) -> &[ClassAccumulator] {
        &self.classes
    }

    pub fn into_classes(self) -> Vec<ClassAccumulator> {
        self.classes
    }

    pub fn accumulate(&mut self, features: &FeatureMap, labels: &LabelMap) -> Result<()> {
        check_shapes(features, labels, self.dim)?;
        if labels.ignore_id() != self.ignore_id {
            return Err(Error::validation(format!(
                "labels use ignore id {}, accumulator uses {}",
                labels.ignore_id(),
                self.ignore_id
            )));
        }
        let k = self.classes.len();
        labels.check_range(k)?;
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); k];
        for (p, &l) in labels.data().iter().enumerate() {
            if l != self.ignore_id {
                by_class[l as usize].push(p);
            }
        }
        for (acc, pixels) in self.classes.iter_mut().zip(&by_class) {
            if pixels.is_empty() {
                continue;
            }
            let batch = ClassAccumulator::from_samples(
                acc.class_id,
                self.dim,
                pixels.iter().map(|&p| features.pixel(p)),
            );
            *acc = acc.merge(&batch)?;
        }
        Ok(())
    }

    pub fn merge(&self, other: &Self) -> Result<Self> {
        if self.classes.len() != other.classes.len() || self.dim != other.dim || self.ignore_id != other.ignore_id {
            return Err(Error::validation("cannot merge accumulators with different K, D or ignore id"));
        }
        let classes = self
            .classes
            .iter()
            .zip(&other.classes)
            .map(|(a, b)| a.merge(b))
            .collect::<Result<_>>()?;
        Ok(Self {
            dim: self.dim,
            ignore_id: self.ignore_id,
            classes,
        })
    }

    pub fn total_count(&self) -> u64 {
        self.classes.iter().map(|c| c.count).sum()
    }
}

/// Streaming balanced merge tree. Leaves pushed in order are combined like a
/// binary counter, so the tree shape depends only on the number of leaves and
/// never on how or where the leaves were computed.
#[derive(Debug, Default)]
pub struct TreeReducer {
    stack: Vec<(u32, FitAccumulator)>,
}

impl TreeReducer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, leaf: FitAccumulator) -> Result<()> {
        let mut node = (0u32, leaf);
        while let Some((level, _)) = self.stack.last() {
            if *level != node.0 {
                break;
            }
            let (level, left) = self.stack.pop().expect("checked non-empty");
            node = (level + 1, left.merge(&node.1)?);
        }
        self.stack.push(node);
        Ok(())
    }

    pub fn finish(mut self) -> Result<Option<FitAccumulator>> {
        let Some((_, mut acc)) = self.stack.pop() else {
            return Ok(None);
        };
        while let Some((_, left)) = self.stack.pop() {
            acc = left.merge(&acc)?;
        }
        Ok(Some(acc))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_pixels() -> (FeatureMap, LabelMap) {
        let f = FeatureMap::new(1, 2, 2, vec![0.0, 0.0, 2.0, 0.0]).unwrap();
        let l = LabelMap::new(1, 2, vec![0, 0], 255).unwrap();
        (f, l)
    }

    #[test]
    fn two_point_statistics() {
        let (f, l) = two_pixels();
        let mut acc = ClassAccumulator::new(0, 2);
        acc.accumulate(&f, &l).unwrap();
        assert_eq!(acc.count(), 2);
        assert_eq!(acc.mean(), &[1.0, 0.0]);
        assert_eq!(acc.covariance().unwrap(), vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn ignored_and_foreign_pixels_untouched() {
        let f = FeatureMap::new(1, 3, 1, vec![1.0, 2.0, 3.0]).unwrap();
        let ignored = LabelMap::new(1, 3, vec![255; 3], 255).unwrap();
        let mut acc = FitAccumulator::new(2, 1, 255);
        acc.accumulate(&f, &ignored).unwrap();
        assert_eq!(acc, FitAccumulator::new(2, 1, 255));

        let other = LabelMap::new(1, 3, vec![1, 1, 255], 255).unwrap();
        let mut c0 = ClassAccumulator::new(0, 1);
        c0.accumulate(&f, &other).unwrap();
        assert!(c0.is_empty());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let f = FeatureMap::new(1, 2, 2, vec![0.0; 4]).unwrap();
        let l = LabelMap::new(2, 1, vec![0, 0], 255).unwrap();
        assert!(matches!(
            ClassAccumulator::new(0, 2).accumulate(&f, &l),
            Err(Error::Validation(_))
        ));
    }

    #[test]
    fn merge_with_empty_is_identity() {
        let (f, l) = two_pixels();
        let mut a = ClassAccumulator::new(0, 2);
        a.accumulate(&f, &l).unwrap();
        let e = ClassAccumulator::new(0, 2);
        assert_eq!(e.merge(&a).unwrap(), a);
        assert_eq!(a.merge(&e).unwrap(), a);
    }

    #[test]
    fn merge_rejects_mismatch() {
        let a = ClassAccumulator::new(0, 2);
        assert!(a.merge(&ClassAccumulator::new(1, 2)).is_err());
        assert!(a.merge(&ClassAccumulator::new(0, 3)).is_err());
    }

    #[test]
    fn tree_shape_is_fixed() {
        let leaves: Vec<FitAccumulator> = (0..7)
            .map(|i| {
                let f = FeatureMap::new(1, 1, 1, vec![i as f64 * 0.1]).unwrap();
                let l = LabelMap::new(1, 1, vec![0], 255).unwrap();
                FitAccumulator::from_image(1, &f, &l).unwrap()
            })
            .collect();
        let mut a = TreeReducer::new();
        let mut b = TreeReducer::new();
        for leaf in &leaves {
            a.push(leaf.clone()).unwrap();
            b.push(leaf.clone()).unwrap();
        }
        let a = a.finish().unwrap().unwrap();
        let b = b.finish().unwrap().unwrap();
        assert_eq!(a, b);
        assert_eq!(a.total_count(), 7);
        assert!((a.classes()[0].mean()[0] - 0.3).abs() < 1e-15);
    }
}
