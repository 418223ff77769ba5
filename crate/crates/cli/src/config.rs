//! Settings resolution: command-line flags, then environment, then the JSON
//! config file, then built-in defaults.

use std::path::Path;

use dense_ddu::gda::CovarianceMode;
use dense_ddu::eval::{Aggregation, ThresholdMode};
use dense_ddu::pipeline::Measure;
use dense_ddu::render::Normalization;
use dense_ddu::{Error, Result, Source};
use serde::Deserialize;

pub const WORKERS_ENV: &str = "DENSE_DDU_WORKERS";

/// Contents of `--config`. Every field is optional.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    pub workers: Option<usize>,
    pub covariance: Option<CovarianceMode>,
    pub jitter_ladder: Option<Vec<f64>>,
    pub measure: Option<Measure>,
    pub window: Option<usize>,
    pub alpha: Option<f64>,
    pub stride: Option<usize>,
    pub aggregation: Option<Aggregation>,
    pub threshold_mode: Option<ThresholdMode>,
    pub points: Option<usize>,
    pub source: Option<Source>,
    pub coords: Option<Vec<(usize, usize)>>,
    pub cell: Option<usize>,
    pub normalization: Option<Normalization>,
    pub global: Option<bool>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        })?;
        serde_json::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

/// Worker count from flag, then `DENSE_DDU_WORKERS`, then the config file.
/// `None` means one worker per available core.
pub fn resolve_workers(flag: Option<usize>, env: Option<String>, file: Option<usize>) -> Result<Option<usize>> {
    let env = || -> Result<Option<usize>> {
        match env.as_deref().map(str::trim) {
            None | Some("") => Ok(None),
            Some(s) => s
                .parse::<usize>()
                .map(Some)
                .map_err(|_| Error::Config(format!("{WORKERS_ENV}=`{s}` is not a worker count"))),
        }
    };
    let w = match flag {
        Some(n) => Some(n),
        None => env()?.or(file),
    };
    if w == Some(0) {
        return Err(Error::Config("workers must be at least 1".into()));
    }
    Ok(w)
}

pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}
