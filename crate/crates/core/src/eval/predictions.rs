use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{eval_input, EvalTransform, Sample, Sizes};
use crate::error::{Error, Result};
use crate::head::{localize, BBox, LocalizeOptions};
use crate::training::Checkpoint;

/// One line of a predictions file. Boxes are in original image pixels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub id: String,
    pub top5: Vec<usize>,
    pub scores: Vec<f64>,
    pub boxes: BTreeMap<usize, BBox>,
}

impl PredictionRecord {
    pub fn validate(&self) -> Result<()> {
        if self.top5.is_empty() || self.top5.len() > 5 || self.top5.len() != self.scores.len() {
            return Err(Error::Validation(format!(
                "{}: need 1 to 5 classes with one score each",
                self.id
            )));
        }
        let distinct: HashSet<_> = self.top5.iter().collect();
        if distinct.len() != self.top5.len() {
            return Err(Error::Validation(format!(
                "{}: repeated class in top5",
                self.id
            )));
        }
        if self.scores.windows(2).any(|w| w[0] < w[1]) {
            return Err(Error::Validation(format!(
                "{}: scores are not sorted",
                self.id
            )));
        }
        for c in &self.top5 {
            if !self.boxes.contains_key(c) {
                return Err(Error::Validation(format!(
                    "{}: no box for class {c}",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn top1(&self) -> usize {
        self.top5[0]
    }
}

pub fn write_predictions(path: &Path, records: &[PredictionRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_predictions(path: &Path) -> Result<Vec<PredictionRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let r: PredictionRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        r.validate()?;
        out.push(r);
    }
    Ok(out)
}

/// Runs localization on one sample. Boxes are produced for the top-5
/// classes and, when `include_label` is set, for the ground-truth class.
pub fn predict(
    ck: &Checkpoint,
    sample: &Sample,
    sizes: Sizes,
    opts: &LocalizeOptions,
    include_label: bool,
) -> Result<PredictionRecord> {
    let input = eval_input(&sample.image, sizes, &ck.norm);
    let result = localize(&ck.config, &ck.params, &input, opts)?;
    let ranked = result.ranked_classes();
    let top5: Vec<usize> = ranked.into_iter().take(5).collect();
    let scores = top5.iter().map(|&c| result.probs[c]).collect();
    let transform = EvalTransform::new(sample.width(), sample.height(), sizes);
    let mut wanted = top5.clone();
    if include_label {
        wanted.push(sample.record.label);
    }
    let mut boxes = BTreeMap::new();
    for c in wanted {
        if let std::collections::btree_map::Entry::Vacant(e) = boxes.entry(c) {
            e.insert(transform.box_to_original(&result.box_for_class(c)?));
        }
    }
    Ok(PredictionRecord {
        id: sample.id(),
        top5,
        scores,
        boxes,
    })
}

/// [`predict`] over a dataset, in parallel, in input order.
pub fn predict_all(
    ck: &Checkpoint,
    samples: &[Sample],
    sizes: Sizes,
    opts: &LocalizeOptions,
    include_label: bool,
) -> Result<Vec<PredictionRecord>> {
    samples
        .par_iter()
        .map(|s| predict(ck, s, sizes, opts, include_label))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec() -> PredictionRecord {
        PredictionRecord {
            id: "test/00001".into(),
            top5: vec![2, 0, 1],
            scores: vec![0.5, 0.3, 0.2],
            boxes: [
                (0, BBox::new(0, 0, 2, 2).unwrap()),
                (1, BBox::new(1, 1, 3, 3).unwrap()),
                (2, BBox::new(0, 0, 1, 1).unwrap()),
            ]
            .into_iter()
            .collect(),
        }
    }

    #[test]
    fn json_layout() {
        let s = serde_json::to_string(&rec()).unwrap();
        assert_eq!(
            s,
            r#"{"id":"test/00001","top5":[2,0,1],"scores":[0.5,0.3,0.2],"boxes":{"0":[0,0,2,2],"1":[1,1,3,3],"2":[0,0,1,1]}}"#
        );
        let back: PredictionRecord = serde_json::from_str(&s).unwrap();
        assert_eq!(back, rec());
    }

    #[test]
    fn invariants_are_checked() {
        assert!(rec().validate().is_ok());
        let mut r = rec();
        r.top5[1] = 2;
        assert!(r.validate().is_err());
        let mut r = rec();
        r.scores = vec![0.2, 0.3, 0.5];
        assert!(r.validate().is_err());
        let mut r = rec();
        r.boxes.remove(&1);
        assert!(r.validate().is_err());
    }

    #[test]
    fn file_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("p.jsonl");
        write_predictions(&p, &[rec(), rec()]).unwrap();
        assert_eq!(read_predictions(&p).unwrap(), vec![rec(), rec()]);
    }
}
