//! Localization metrics, IoU sweeps, error taxonomy and reports.

pub mod analysis;
pub mod boxes;
pub mod metrics;
pub mod predictions;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

pub use analysis::{categorize, ErrorBreakdown, ErrorCategory};
pub use boxes::{iog, iop, iou, max_iou};
pub use metrics::{error_analysis, iou_sweep, loc_accuracy, GroundTruth, LocAccuracy, SweepPoint};
pub use predictions::{
    predict, predict_all, read_predictions, write_predictions, PredictionRecord,
};

use crate::error::Result;

/// Error-category percentages, in table order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErrorPercentages {
    #[serde(rename = "Cls")]
    pub cls: f64,
    #[serde(rename = "M-Ins")]
    pub m_ins: f64,
    #[serde(rename = "Part")]
    pub part: f64,
    #[serde(rename = "More")]
    pub more: f64,
    #[serde(rename = "OT")]
    pub ot: f64,
    #[serde(rename = "Correct")]
    pub correct: f64,
}

impl From<&ErrorBreakdown> for ErrorPercentages {
    fn from(e: &ErrorBreakdown) -> Self {
        let [cls, m_ins, part, more, ot, correct] = e.fractions().map(|f| 100.0 * f);
        Self {
            cls,
            m_ins,
            part,
            more,
            ot,
            correct,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub images: usize,
    pub iou_threshold: f64,
    #[serde(rename = "Top-1")]
    pub top1: f64,
    #[serde(rename = "Top-5")]
    pub top5: f64,
    #[serde(rename = "GT-Known")]
    pub gt_known: f64,
    pub errors: ErrorPercentages,
    pub error_counts: [usize; 6],
}

impl EvalReport {
    pub fn compute(preds: &[PredictionRecord], gt: &[GroundTruth], threshold: f64) -> Result<Self> {
        let acc = loc_accuracy(preds, gt, threshold)?;
        let errors = error_analysis(preds, gt)?;
        Ok(Self {
            images: gt.len(),
            iou_threshold: threshold,
            top1: acc.top1,
            top5: acc.top5,
            gt_known: acc.gt_known,
            errors: ErrorPercentages::from(&errors),
            error_counts: errors.counts,
        })
    }

    pub fn to_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "images: {}  IoU threshold: {}",
            self.images, self.iou_threshold
        );
        let _ = writeln!(s, "{:>8} {:>8} {:>8}", "Top-1", "Top-5", "GT-Known");
        let _ = writeln!(
            s,
            "{:>8.2} {:>8.2} {:>8.2}",
            self.top1, self.top5, self.gt_known
        );
        let _ = writeln!(
            s,
            "{:>8} {:>8} {:>8} {:>8} {:>8} {:>8}",
            "Cls", "M-Ins", "Part", "More", "OT", "Correct"
        );
        let e = &self.errors;
        let _ = writeln!(
            s,
            "{:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2} {:>8.2}",
            e.cls, e.m_ins, e.part, e.more, e.ot, e.correct
        );
        s
    }
}

pub fn sweep_table(points: &[SweepPoint]) -> String {
    let mut s = format!("{:>6} {:>8} {:>8}\n", "IoU", "Top-1", "GT-Known");
    for p in points {
        let _ = writeln!(
            s,
            "{:>6.2} {:>8.2} {:>8.2}",
            p.threshold, p.top1, p.gt_known
        );
    }
    s
}
