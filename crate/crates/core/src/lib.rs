//! Feature-space density and softmax uncertainty for dense prediction models.
//!
//! The crate fits one Gaussian per class over the per-pixel features of a
//! segmentation network (location-shared, every pixel treated as an independent
//! sample) and scores new pixels by the marginal log density of the resulting
//! mixture. Softmax entropy, predictive entropy and mutual information are
//! provided for comparison, together with the patch-based uncertainty metrics
//! (p(accurate|certain), p(uncertain|inaccurate), PAVPU), mIoU and OoD AUROC.
//!
//! Heavy loops run on rayon when the `parallel` feature is enabled (default).
//! Every parallel reduction uses a fixed reduction order so results are
//! bit-identical for any worker count.

pub mod analysis;
pub mod error;
pub mod eval;
pub mod gda;
pub mod io;
pub mod maps;
pub mod measures;
pub mod parallel;
pub mod pipeline;
pub mod render;
pub mod rng;
pub mod synth;

pub use error::{Error, ErrorKind, Result};
pub use maps::{FeatureMap, LabelMap, Polarity, Source, UncertaintyMap};
