//! JSON dataset manifests listing per-image tensor files.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::npy::{read_header, read_tensor};
use crate::error::{Error, Result};
use crate::maps::{FeatureMap, LabelMap};
use crate::measures::SoftmaxStack;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestEntry {
    pub image_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub logit_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub softmax_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_path: Option<PathBuf>,
    /// H×W uint8 mask, nonzero on out-of-distribution pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ood_mask_path: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub num_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feature_dim: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ignore_id: Option<i32>,
}

impl ManifestEntry {
    pub fn new(image_id: impl Into<String>) -> Self {
        Self {
            image_id: image_id.into(),
            feature_path: None,
            logit_path: None,
            softmax_path: None,
            label_path: None,
            ood_mask_path: None,
            num_classes: None,
            feature_dim: None,
            ignore_id: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub ignore_id: i32,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base_dir: PathBuf,
}

/// Which tensors a command is about to read.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub features: bool,
    pub labels: bool,
    pub probs: bool,
}

impl DatasetManifest {
    pub fn new(num_classes: usize, feature_dim: usize, ignore_id: i32, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            num_classes,
            feature_dim,
            ignore_id,
            entries,
            base_dir: PathBuf::from("."),
        };
        m.validate()?;
        Ok(m)
    }

    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::Config(format!("manifest: {e}")))?;
        m.base_dir = base_dir.to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_json(&text, base)
    }

    pub fn to_json(&self) -> Vec<u8> {
        super::to_json_bytes(self)
    }

    pub fn base_dir(&self) -> &Path {
        &self.base_dir
    }

    pub fn set_base_dir(&mut self, dir: &Path) {
        self.base_dir = dir.to_path_buf();
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes == 0 {
            return Err(Error::Config("num_classes must be at least 1".into()));
        }
        if self.feature_dim == 0 {
            return Err(Error::Config("feature_dim must be at least 1".into()));
        }
        let mut seen = HashSet::new();
        for e in &self.entries {
            if e.image_id.is_empty() || e.image_id.contains(['/', '\\']) || e.image_id.starts_with('.') {
                return Err(Error::validation(format!("invalid image id `{}`", e.image_id)));
            }
            if !seen.insert(e.image_id.as_str()) {
                return Err(Error::validation(format!("duplicate image id `{}`", e.image_id)));
            }
            let check = |what: &str, got: Option<String>, want: String| match got {
                Some(g) if g != want => Err(Error::validation(format!(
                    "entry `{}` declares {what}={g}, manifest has {want}",
                    e.image_id
                ))),
                _ => Ok(()),
            };
            check("num_classes", e.num_classes.map(|v| v.to_string()), self.num_classes.to_string())?;
            check("feature_dim", e.feature_dim.map(|v| v.to_string()), self.feature_dim.to_string())?;
            check("ignore_id", e.ignore_id.map(|v| v.to_string()), self.ignore_id.to_string())?;
        }
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    fn required<'a>(&self, e: &'a ManifestEntry, p: &'a Option<PathBuf>, what: &str) -> Result<PathBuf> {
        p.as_deref()
            .map(|p| self.resolve(p))
            .ok_or_else(|| Error::Config(format!("entry `{}` has no {what}", e.image_id)))
    }

    pub fn load_features(&self, e: &ManifestEntry) -> Result<FeatureMap> {
        let path = self.required(e, &e.feature_path, "feature_path")?;
        let t = read_tensor(&path)?;
        let [h, w, d] = *t.shape() else {
            return Err(Error::validation(format!(
                "{}: features must be HxWxD, got shape {:?}",
                path.display(),
                t.shape()
            )));
        };
        if d != self.feature_dim {
            return Err(Error::validation(format!(
                "{}: feature dim {d}, manifest declares {}",
                path.display(),
                self.feature_dim
            )));
        }
        FeatureMap::new(h, w, d, t.to_f64()?)
    }

    pub fn load_labels(&self, e: &ManifestEntry) -> Result<LabelMap> {
        let path = self.required(e, &e.label_path, "label_path")?;
        let t = read_tensor(&path)?;
        let [h, w] = *t.shape() else {
            return Err(Error::validation(format!(
                "{}: labels must be HxW, got shape {:?}",
                path.display(),
                t.shape()
            )));
        };
        let labels = LabelMap::new(h, w, t.to_labels()?, self.ignore_id)?;
        labels.check_range(self.num_classes)?;
        Ok(labels)
    }

    /// Softmax stack from `softmax_path` (M×H×W×K or H×W×K) or from `logit_path`.
    pub fn load_softmax(&self, e: &ManifestEntry) -> Result<SoftmaxStack> {
        let stack = if let Some(p) = &e.softmax_path {
            let path = self.resolve(p);
            let t = read_tensor(&path)?;
            let (m, h, w, k) = match *t.shape() {
                [m, h, w, k] => (m, h, w, k),
                [h, w, k] => (1, h, w, k),
                _ => {
                    return Err(Error::validation(format!(
                        "{}: softmax must be MxHxWxK or HxWxK, got {:?}",
                        path.display(),
                        t.shape()
                    )))
                }
            };
            SoftmaxStack::new(m, h, w, k, t.to_f64()?)?
        } else {
            let path = self.required(e, &e.logit_path, "logit_path or softmax_path")?;
            let t = read_tensor(&path)?;
            let [h, w, k] = *t.shape() else {
                return Err(Error::validation(format!(
                    "{}: logits must be HxWxK, got {:?}",
                    path.display(),
                    t.shape()
                )));
            };
            SoftmaxStack::from_logits(h, w, k, &t.to_f64()?)?
        };
        if stack.classes() != self.num_classes {
            return Err(Error::validation(format!(
                "entry `{}`: {} classes in probabilities, manifest declares {}",
                e.image_id,
                stack.classes(),
                self.num_classes
            )));
        }
        Ok(stack)
    }

    /// OoD mask as booleans, or `None` when the entry has no mask.
    pub fn load_ood_mask(&self, e: &ManifestEntry) -> Result<Option<(usize, usize, Vec<bool>)>> {
        let Some(p) = &e.ood_mask_path else {
            return Ok(None);
        };
        let path = self.resolve(p);
        let t = read_tensor(&path)?;
        let [h, w] = *t.shape() else {
            return Err(Error::validation(format!(
                "{}: OoD mask must be HxW, got {:?}",
                path.display(),
                t.shape()
            )));
        };
        Ok(Some((h, w, t.to_labels()?.into_iter().map(|v| v != 0).collect())))
    }

    /// Header-only check of every entry: required paths exist, ranks and
    /// trailing dims match the manifest, spatial dims agree within an entry.
    pub fn prevalidate(&self, needs: Needs) -> Result<()> {
        for e in &self.entries {
            let mut spatial: Option<(usize, usize, &str)> = None;
            let mut agree = |h: usize, w: usize, what: &'static str| -> Result<()> {
                match spatial {
                    Some((h0, w0, first)) if (h0, w0) != (h, w) => Err(Error::validation(format!(
                        "entry `{}`: {what} is {h}x{w} but {first} is {h0}x{w0}",
                        e.image_id
                    ))),
                    Some(_) => Ok(()),
                    None => {
                        spatial = Some((h, w, what));
                        Ok(())
                    }
                }
            };
            if needs.features {
                let path = self.required(e, &e.feature_path, "feature_path")?;
                let (_, shape) = read_header(&path)?;
                match shape[..] {
                    [h, w, d] if d == self.feature_dim => agree(h, w, "features")?,
                    _ => {
                        return Err(Error::validation(format!(
                            "{}: features shape {shape:?} incompatible with D={}",
                            path.display(),
                            self.feature_dim
                        )))
                    }
                }
            }
            if needs.labels {
                let path = self.required(e, &e.label_path, "label_path")?;
                let (_, shape) = read_header(&path)?;
                match shape[..] {
                    [h, w] => agree(h, w, "labels")?,
                    _ => {
                        return Err(Error::validation(format!(
                            "{}: labels shape {shape:?} is not HxW",
                            path.display()
                        )))
                    }
                }
            }
            if needs.probs {
                let (path, is_softmax) = match (&e.softmax_path, &e.logit_path) {
                    (Some(p), _) => (self.resolve(p), true),
                    (None, Some(p)) => (self.resolve(p), false),
                    (None, None) => {
                        return Err(Error::Config(format!(
                            "entry `{}` has neither logit_path nor softmax_path",
                            e.image_id
                        )))
                    }
                };
                let (_, shape) = read_header(&path)?;
                let hwk = match (&shape[..], is_softmax) {
                    ([_, h, w, k], true) | ([h, w, k], _) => Some((*h, *w, *k)),
                    _ => None,
                };
                match hwk {
                    Some((h, w, k)) if k == self.num_classes => agree(h, w, "probabilities")?,
                    _ => {
                        return Err(Error::validation(format!(
                            "{}: shape {shape:?} incompatible with K={}",
                            path.display(),
                            self.num_classes
                        )))
                    }
                }
            }
        }
        Ok(())
    }
}
