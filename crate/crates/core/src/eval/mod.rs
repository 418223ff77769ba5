//! Uncertainty evaluation: patch-level conditional accuracy metrics with
//! threshold sweeps, mIoU, and OoD AUROC.

mod auroc;
mod miou;
mod patch;
mod sweep;

pub use auroc::{auroc_scores, ood_auroc};
pub use miou::{miou, IoUReport};
pub use patch::{
    metrics_from_counts, patch_counts, patch_scores, Aggregation, ConditionalMetrics, ConfusionCounts, PatchConfig,
    PatchScore,
};
pub use sweep::{quantile, sweep, CurvePoint, EvalImage, MetricCurve, ThresholdMode};
