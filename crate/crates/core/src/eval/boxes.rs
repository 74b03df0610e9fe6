use crate::error::{Error, Result};
use crate::head::BBox;

fn check(b: &BBox) -> Result<()> {
    if b.is_valid() {
        Ok(())
    } else {
        Err(Error::Validation(format!(
            "zero-area box {:?}",
            b.to_array()
        )))
    }
}

/// Intersection over union.
pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    check(a)?;
    check(b)?;
    let i = a.intersection_area(b) as f64;
    Ok(i / (a.area() as f64 + b.area() as f64 - i))
}

/// Intersection over the ground-truth area.
pub fn iog(pred: &BBox, gt: &BBox) -> Result<f64> {
    check(pred)?;
    check(gt)?;
    Ok(pred.intersection_area(gt) as f64 / gt.area() as f64)
}

/// Intersection over the predicted area.
pub fn iop(pred: &BBox, gt: &BBox) -> Result<f64> {
    check(pred)?;
    check(gt)?;
    Ok(pred.intersection_area(gt) as f64 / pred.area() as f64)
}

/// Best IoU of `pred` against any of `gts`.
pub fn max_iou(pred: &BBox, gts: &[BBox]) -> Result<f64> {
    gts.iter().try_fold(0.0f64, |m, g| Ok(m.max(iou(pred, g)?)))
}
