use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::maps::LabelMap;

/// Dataset-level IoU from globally accumulated pixel counts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub num_classes: usize,
    pub intersection: Vec<u64>,
    pub union: Vec<u64>,
    /// `None` for classes absent from both ground truth and prediction.
    pub iou: Vec<Option<f64>>,
    pub miou: Option<f64>,
}

/// mIoU over a dataset. Pixels whose ground truth is the ignore id are
/// skipped; a prediction equal to the ignore id counts as a miss.
pub fn miou(preds: &[LabelMap], gts: &[LabelMap], num_classes: usize) -> Result<IoUReport> {
    if preds.len() != gts.len() {
        return Err(Error::validation(format!(
            "{} predictions for {} ground-truth maps",
            preds.len(),
            gts.len()
        )));
    }
    let k = num_classes;
    let mut inter = vec![0u64; k];
    let mut gt_count = vec![0u64; k];
    let mut pred_count = vec![0u64; k];
    for (idx, (pred, gt)) in preds.iter().zip(gts).enumerate() {
        if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
            return Err(Error::validation(format!(
                "image {idx}: prediction is {}x{}, ground truth is {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        gt.check_range(k)?;
        let ignore = gt.ignore_id();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if p != ignore && (p < 0 || p as usize >= k) {
                return Err(Error::validation(format!("image {idx}: predicted label {p} outside [0, {k})")));
            }
            if g == ignore {
                continue;
            }
            gt_count[g as usize] += 1;
            if p == ignore {
                continue;
            }
            pred_count[p as usize] += 1;
            if p == g {
                inter[g as usize] += 1;
            }
        }
    }
    let union: Vec<u64> = (0..k).map(|c| gt_count[c] + pred_count[c] - inter[c]).collect();
    let iou: Vec<Option<f64>> = (0..k)
        .map(|c| (union[c] > 0).then(|| inter[c] as f64 / union[c] as f64))
        .collect();
    let defined: Vec<f64> = iou.iter().flatten().copied().collect();
    let miou = (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64);
    Ok(IoUReport {
        num_classes: k,
        intersection: inter,
        union,
        iou,
        miou,
    })
}
