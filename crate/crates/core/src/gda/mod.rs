//! Location-shared Gaussian discriminant analysis over pixel features.
//!
//! Every pixel is treated as an independent sample: one mean and one
//! covariance per class, no per-location parameters. The fitted mixture
//! scores a feature vector by `log p(z) = logsumexp_c [log p(c) + log N(z; mu_c, Sigma_c)]`.

mod accumulator;
mod file;
pub mod linalg;
mod model;

pub use accumulator::{ClassAccumulator, FitAccumulator, TreeReducer};
pub use model::{
    finalize, logsumexp, ClassGaussian, CovarianceMode, FitMetadata, FitOptions, GdaModel,
    PerClassLogDensity, DEFAULT_JITTER_LADDER,
};
