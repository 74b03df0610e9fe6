//! JSON Lines manifests: `{"path": str, "label": int, "boxes": [[x0,y0,x1,y1], ...]}`.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::netpbm::RgbImage;
use crate::error::{Error, Result};
use crate::head::BBox;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetRecord {
    /// Relative paths are resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: usize,
    pub boxes: Vec<BBox>,
}

/// A record with its decoded image, `[3, H, W]` in `[0, 1]`.
#[derive(Debug, Clone)]
pub struct Sample {
    pub record: DatasetRecord,
    pub image: Tensor<f32>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// File stem used as the prediction id.
    pub fn id(&self) -> String {
        record_id(&self.record)
    }
}

pub fn record_id(record: &DatasetRecord) -> String {
    let p = &record.path;
    let stem = p
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    match p.parent().and_then(|d| d.file_name()) {
        Some(dir) => format!("{}/{stem}", dir.to_string_lossy()),
        None => stem,
    }
}

pub fn write_manifest(path: &Path, records: &[DatasetRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).map_err(|e| Error::Format(e.to_string()))?;
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))
}

/// Parses and validates manifest lines without touching the images.
/// Blank lines are skipped.
pub fn read_manifest(path: &Path, num_classes: usize) -> Result<Vec<DatasetRecord>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record: DatasetRecord = serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            msg: e.to_string(),
        })?;
        if record.label >= num_classes {
            return Err(Error::Label {
                label: record.label,
                num_classes,
            });
        }
        if record.boxes.is_empty() {
            return Err(Error::Validation(format!(
                "{} line {}: record has no boxes",
                path.display(),
                i + 1
            )));
        }
        records.push(record);
    }
    Ok(records)
}

pub fn image_to_tensor(img: &RgbImage) -> Tensor<f32> {
    let (w, h) = (img.width, img.height);
    Tensor::from_fn(&[3, h, w], |i| {
        let (c, p) = (i / (h * w), i % (h * w));
        img.pixels[p * 3 + c] as f32 / 255.0
    })
}

/// Loads every record of a manifest with its decoded image. Boxes must lie
/// inside the image they annotate.
pub fn load(path: &Path, num_classes: usize) -> Result<Vec<Sample>> {
    let base = path.parent().unwrap_or(Path::new("."));
    let mut samples = Vec::new();
    for mut record in read_manifest(path, num_classes)? {
        if record.path.is_relative() {
            record.path = base.join(&record.path);
        }
        let img = RgbImage::load(&record.path)?;
        for b in &record.boxes {
            if !b.within(img.width as u32, img.height as u32) {
                return Err(Error::Validation(format!(
                    "box {:?} outside {}x{} image {}",
                    b.to_array(),
                    img.width,
                    img.height,
                    record.path.display()
                )));
            }
        }
        samples.push(Sample {
            image: image_to_tensor(&img),
            record,
        });
    }
    Ok(samples)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::write(&p, body).unwrap();
        p
    }

    #[test]
    fn label_equal_to_class_count_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{\"path\":\"a.ppm\",\"label\":4,\"boxes\":[[0,0,1,1]]}\n",
        );
        assert!(matches!(
            read_manifest(&p, 4),
            Err(Error::Label {
                label: 4,
                num_classes: 4
            })
        ));
        assert!(read_manifest(&p, 5).is_ok());
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let good = "{\"path\":\"a.ppm\",\"label\":0,\"boxes\":[[0,0,1,1]]}";
        let p = write(dir.path(), "m.jsonl", &format!("{good}\n{good}\n{{oops\n"));
        match read_manifest(&p, 2) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn degenerate_box_is_a_parse_error() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{\"path\":\"a.ppm\",\"label\":0,\"boxes\":[[3,0,1,1]]}\n",
        );
        assert!(matches!(
            read_manifest(&p, 2),
            Err(Error::Parse { line: 1, .. })
        ));
    }

    #[test]
    fn missing_image_names_the_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{\"path\":\"nope.ppm\",\"label\":0,\"boxes\":[[0,0,1,1]]}\n",
        );
        let err = load(&p, 2).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
        assert!(err.to_string().contains("nope.ppm"));
    }

    #[test]
    fn out_of_bounds_box_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::new(4, 4).save(&dir.path().join("a.ppm")).unwrap();
        let p = write(
            dir.path(),
            "m.jsonl",
            "{\"path\":\"a.ppm\",\"label\":0,\"boxes\":[[0,0,5,4]]}\n",
        );
        assert!(matches!(load(&p, 2), Err(Error::Validation(_))));
    }

    #[test]
    fn image_tensor_is_channel_major() {
        let mut img = RgbImage::new(2, 1);
        img.put(1, 0, [255, 0, 51]);
        let t = image_to_tensor(&img);
        assert_eq!(t.shape(), &[3, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0, 0.0, 0.0, 0.0, 0.2]);
    }
}
