use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::analysis::{categorize, ErrorBreakdown};
use super::boxes::max_iou;
use super::predictions::PredictionRecord;
use crate::dataset::{record_id, DatasetRecord};
use crate::error::{Error, Result};
use crate::head::BBox;

/// Ground truth of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub id: String,
    pub label: usize,
    pub boxes: Vec<BBox>,
}

impl From<&DatasetRecord> for GroundTruth {
    fn from(r: &DatasetRecord) -> Self {
        Self {
            id: record_id(r),
            label: r.label,
            boxes: r.boxes.clone(),
        }
    }
}

/// Localization accuracies in percent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocAccuracy {
    pub top1: f64,
    pub top5: f64,
    pub gt_known: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub top1: f64,
    pub gt_known: f64,
}

/// Pairs every ground-truth record with its prediction.
fn pair<'a>(
    preds: &'a [PredictionRecord],
    gt: &'a [GroundTruth],
) -> Result<Vec<(&'a PredictionRecord, &'a GroundTruth)>> {
    let by_id: HashMap<&str, &PredictionRecord> =
        preds.iter().map(|p| (p.id.as_str(), p)).collect();
    let missing: Vec<String> = gt
        .iter()
        .filter(|g| !by_id.contains_key(g.id.as_str()))
        .map(|g| g.id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(Error::Coverage(missing));
    }
    Ok(gt.iter().map(|g| (by_id[g.id.as_str()], g)).collect())
}

fn class_box<'a>(p: &'a PredictionRecord, class: usize) -> Result<&'a BBox> {
    p.boxes
        .get(&class)
        .ok_or_else(|| Error::Validation(format!("{}: no box for class {class}", p.id)))
}

/// Per-record hits `(top1, top5, gt_known)` at `threshold` (strict IoU).
fn hits(p: &PredictionRecord, g: &GroundTruth, threshold: f64) -> Result<(bool, bool, bool)> {
    let passes =
        |class: usize| -> Result<bool> { Ok(max_iou(class_box(p, class)?, &g.boxes)? > threshold) };
    let gt_known = passes(g.label)?;
    let top1 = p.top1() == g.label && gt_known;
    let top5 = p.top5.contains(&g.label) && gt_known;
    Ok((top1, top5, gt_known))
}

fn percent(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// Top-1, Top-5 and GT-Known localization accuracy. A box passes when its
/// IoU with some ground-truth box is strictly above `threshold`. Top-5 uses
/// the box of the correct class among the five candidates.
pub fn loc_accuracy(
    preds: &[PredictionRecord],
    gt: &[GroundTruth],
    threshold: f64,
) -> Result<LocAccuracy> {
    let pairs = pair(preds, gt)?;
    let (mut t1, mut t5, mut gk) = (0, 0, 0);
    for (p, g) in &pairs {
        let (a, b, c) = hits(p, g, threshold)?;
        t1 += a as usize;
        t5 += b as usize;
        gk += c as usize;
    }
    let n = pairs.len();
    Ok(LocAccuracy {
        top1: percent(t1, n),
        top5: percent(t5, n),
        gt_known: percent(gk, n),
    })
}

/// Top-1 and GT-Known accuracy at each of `thresholds` (ascending).
pub fn iou_sweep(
    preds: &[PredictionRecord],
    gt: &[GroundTruth],
    thresholds: &[f64],
) -> Result<Vec<SweepPoint>> {
    if thresholds.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::InvalidInput("thresholds must be ascending".into()));
    }
    thresholds
        .iter()
        .map(|&t| {
            let a = loc_accuracy(preds, gt, t)?;
            Ok(SweepPoint {
                threshold: t,
                top1: a.top1,
                gt_known: a.gt_known,
            })
        })
        .collect()
}

/// Error taxonomy over the top-1 class and its box of every record.
pub fn error_analysis(preds: &[PredictionRecord], gt: &[GroundTruth]) -> Result<ErrorBreakdown> {
    let pairs = pair(preds, gt)?;
    let cats = pairs
        .iter()
        .map(|(p, g)| categorize(p.top1(), class_box(p, p.top1())?, g.label, &g.boxes))
        .collect::<Result<Vec<_>>>()?;
    Ok(ErrorBreakdown::from_categories(cats))
}
