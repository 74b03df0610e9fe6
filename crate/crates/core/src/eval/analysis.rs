//! Five-way localization error taxonomy.

use serde::{Deserialize, Serialize};

use super::boxes::{iog, iop, iou};
use crate::error::{Error, Result};
use crate::head::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ErrorCategory {
    /// Wrong top-1 class.
    Cls,
    /// Box spans several ground-truth instances.
    MultiInstance,
    /// Box covers only part of the object.
    Part,
    /// Box covers the object plus background.
    More,
    /// Anything else.
    Other,
    Correct,
}

impl ErrorCategory {
    pub const ALL: [ErrorCategory; 6] = [
        ErrorCategory::Cls,
        ErrorCategory::MultiInstance,
        ErrorCategory::Part,
        ErrorCategory::More,
        ErrorCategory::Other,
        ErrorCategory::Correct,
    ];

    pub fn label(self) -> &'static str {
        match self {
            ErrorCategory::Cls => "Cls",
            ErrorCategory::MultiInstance => "M-Ins",
            ErrorCategory::Part => "Part",
            ErrorCategory::More => "More",
            ErrorCategory::Other => "OT",
            ErrorCategory::Correct => "Correct",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

/// Category of one record given its top-1 class and box.
pub fn categorize(
    pred_class: usize,
    pred_box: &BBox,
    gt_class: usize,
    gt_boxes: &[BBox],
) -> Result<ErrorCategory> {
    if gt_boxes.is_empty() {
        return Err(Error::Validation(
            "record without ground-truth boxes".into(),
        ));
    }
    if pred_class != gt_class {
        return Ok(ErrorCategory::Cls);
    }
    let mut iou_m = 0.0f64;
    let mut iog_m = 0.0f64;
    let mut iop_m = 0.0f64;
    let mut covered = 0;
    for g in gt_boxes {
        iou_m = iou_m.max(iou(pred_box, g)?);
        let og = iog(pred_box, g)?;
        iog_m = iog_m.max(og);
        iop_m = iop_m.max(iop(pred_box, g)?);
        if og > 0.3 {
            covered += 1;
        }
    }
    Ok(if iou_m < 0.5 {
        if covered > 1 {
            ErrorCategory::MultiInstance
        } else if iop_m > 0.5 {
            ErrorCategory::Part
        } else if iog_m > 0.7 {
            ErrorCategory::More
        } else {
            ErrorCategory::Other
        }
    } else {
        ErrorCategory::Correct
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBreakdown {
    /// Records per category, in [`ErrorCategory::ALL`] order.
    pub counts: [usize; 6],
    pub total: usize,
}

impl ErrorBreakdown {
    pub fn from_categories(cats: impl IntoIterator<Item = ErrorCategory>) -> Self {
        let mut counts = [0; 6];
        let mut total = 0;
        for c in cats {
            counts[c.index()] += 1;
            total += 1;
        }
        Self { counts, total }
    }

    pub fn count(&self, c: ErrorCategory) -> usize {
        self.counts[c.index()]
    }

    pub fn fraction(&self, c: ErrorCategory) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.count(c) as f64 / self.total as f64
        }
    }

    pub fn fractions(&self) -> [f64; 6] {
        ErrorCategory::ALL.map(|c| self.fraction(c))
    }
}
