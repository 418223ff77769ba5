//! Model archive: `mean` (K×D), `chol` (K×D×D), `log_prior` (K) and
//! `class_ids` (K) tensors plus a `metadata.json` member. K here counts the
//! fitted components; dropped classes are listed in the metadata.

use std::path::Path;

use super::linalg;
use super::model::{ClassGaussian, FitMetadata, GdaModel};
use crate::error::{Error, Result};
use crate::io::{self, TensorFile};

const METADATA_MEMBER: &str = "metadata.json";

impl GdaModel {
    pub fn to_archive_bytes(&self) -> Result<Vec<u8>> {
        let k = self.components.len();
        let d = self.dim;
        let mean = TensorFile::f64(
            vec![k, d],
            self.components.iter().flat_map(|c| c.mean.iter().copied()).collect(),
        )?;
        let chol = TensorFile::f64(
            vec![k, d, d],
            self.components.iter().flat_map(|c| c.chol.iter().copied()).collect(),
        )?;
        let log_prior = TensorFile::f64(vec![k], self.log_priors())?;
        let class_ids = TensorFile::i32(
            vec![k],
            self.components.iter().map(|c| c.class_id as i32).collect(),
        )?;
        let meta = io::to_json_bytes(&self.metadata);
        io::write_archive(
            &[
                ("mean", &mean),
                ("chol", &chol),
                ("log_prior", &log_prior),
                ("class_ids", &class_ids),
            ],
            &[(METADATA_MEMBER, &meta)],
        )
    }

    pub fn from_archive_bytes(bytes: &[u8]) -> Result<Self> {
        let tensors = io::read_archive_bytes(bytes)?;
        let get = |name: &str| {
            tensors
                .get(name)
                .ok_or_else(|| Error::parse(format!("model archive lacks `{name}`")))
        };
        let meta_text = io::read_archive_text(bytes, METADATA_MEMBER)?
            .ok_or_else(|| Error::parse("model archive lacks metadata.json"))?;
        let metadata: FitMetadata = serde_json::from_str(&meta_text)
            .map_err(|e| Error::parse(format!("model metadata: {e}")))?;
        if metadata.format_version != 1 {
            return Err(Error::UnsupportedFormat(format!(
                "model format version {}",
                metadata.format_version
            )));
        }

        let mean = get("mean")?;
        let [k, d] = *mean.shape() else {
            return Err(Error::parse("`mean` must be KxD"));
        };
        if d != metadata.feature_dim {
            return Err(Error::parse("`mean` width disagrees with metadata"));
        }
        let chol = get("chol")?;
        let log_prior = get("log_prior")?;
        let class_ids = get("class_ids")?;
        if chol.shape() != [k, d, d] || log_prior.shape() != [k] || class_ids.shape() != [k] {
            return Err(Error::parse("model tensors disagree on K or D"));
        }
        let mean = mean.to_f64()?;
        let chol = chol.to_f64()?;
        let log_prior = log_prior.to_f64()?;
        let class_ids = class_ids.to_labels()?;

        let mut components = Vec::with_capacity(k);
        for c in 0..k {
            let l = chol[c * d * d..(c + 1) * d * d].to_vec();
            for i in 0..d {
                if !(l[i * d + i] > 0.0) || l[i * d + i + 1..(i + 1) * d].iter().any(|&v| v != 0.0) {
                    return Err(Error::parse(format!(
                        "component {c}: `chol` is not lower triangular with a positive diagonal"
                    )));
                }
            }
            let id = class_ids[c];
            if id < 0 || id as usize >= metadata.num_classes {
                return Err(Error::parse(format!("class id {id} out of range")));
            }
            components.push(ClassGaussian {
                class_id: id as usize,
                mean: mean[c * d..(c + 1) * d].to_vec(),
                log_det: linalg::log_det_from_cholesky(&l, d),
                chol: l,
                log_prior: log_prior[c],
            });
        }
        Ok(GdaModel {
            dim: d,
            components,
            metadata,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::atomic_write(path, &self.to_archive_bytes()?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive_bytes(&io::read_file(path)?)
    }
}
