use std::fs;

use tscam_core::dataset::augment::{crop, resize};
use tscam_core::dataset::manifest::image_to_tensor;
use tscam_core::dataset::synth::{render, Split};
use tscam_core::dataset::{
    generate, load, read_manifest, CropParams, EvalTransform, RgbImage, Sizes, SynthConfig,
};
use tscam_core::head::BBox;
use tscam_core::Tensor;

fn small() -> SynthConfig {
    SynthConfig {
        train: 12,
        val: 4,
        test: 6,
        multi_instance: 0.3,
        ..SynthConfig::default()
    }
}

fn tree_bytes(dir: &std::path::Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn generation_is_byte_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    generate(&small(), a.path()).unwrap();
    generate(&small(), b.path()).unwrap();
    let (ta, tb) = (tree_bytes(a.path()), tree_bytes(b.path()));
    assert_eq!(ta.len(), 12 + 4 + 6 + 3);
    assert_eq!(ta, tb);

    let other = SynthConfig { seed: 8, ..small() };
    let c = tempfile::tempdir().unwrap();
    generate(&other, c.path()).unwrap();
    assert_ne!(ta, tree_bytes(c.path()));
}

#[test]
fn generated_files_load_back_as_rendered() {
    let cfg = small();
    let dir = tempfile::tempdir().unwrap();
    generate(&cfg, dir.path()).unwrap();
    for split in Split::ALL {
        let manifest = dir.path().join(format!("{}.jsonl", split.name()));
        let records = read_manifest(&manifest, cfg.num_classes).unwrap();
        let samples = load(&manifest, cfg.num_classes).unwrap();
        assert_eq!(records.len(), cfg.count(split));
        for (i, s) in samples.iter().enumerate() {
            let r = render(&cfg, split, i).unwrap();
            assert_eq!(s.record.label, r.label);
            assert_eq!(s.record.boxes, r.boxes);
            assert_eq!(s.image, image_to_tensor(&r.image));
        }
    }
}

/// Nearest-centroid classifier over coarse color histograms.
fn histogram(img: &RgbImage) -> Vec<f64> {
    let mut h = vec![0.0; 64];
    for px in img.pixels.chunks(3) {
        let bin = (px[0] as usize / 64) * 16 + (px[1] as usize / 64) * 4 + px[2] as usize / 64;
        h[bin] += 1.0;
    }
    let n = (img.width * img.height) as f64;
    h.iter().map(|v| v / n).collect()
}

#[test]
fn classes_are_separable_by_color_histograms() {
    let cfg = SynthConfig::default();
    let mut centroids = vec![vec![0.0; 64]; cfg.num_classes];
    let mut counts = vec![0.0; cfg.num_classes];
    for i in 0..cfg.train {
        let r = render(&cfg, Split::Train, i).unwrap();
        for (c, v) in centroids[r.label].iter_mut().zip(histogram(&r.image)) {
            *c += v;
        }
        counts[r.label] += 1.0;
    }
    for (c, n) in centroids.iter_mut().zip(&counts) {
        c.iter_mut().for_each(|v| *v /= n);
    }
    let mut correct = 0;
    for i in 0..cfg.test {
        let r = render(&cfg, Split::Test, i).unwrap();
        let h = histogram(&r.image);
        let dist = |c: &Vec<f64>| c.iter().zip(&h).map(|(a, b)| (a - b).abs()).sum::<f64>();
        let pred = (0..cfg.num_classes)
            .min_by(|&a, &b| dist(&centroids[a]).total_cmp(&dist(&centroids[b])))
            .unwrap();
        correct += (pred == r.label) as usize;
    }
    let acc = correct as f64 / cfg.test as f64;
    assert!(acc > 0.95, "histogram accuracy {acc}");
}

/// The box mapped into network-input coordinates agrees within a pixel
/// with the tight box of the mask pushed through the same resize and crop.
#[test]
fn boxes_survive_the_eval_transform() {
    let cfg = SynthConfig::default();
    for resize_to in [64, 72, 80] {
        let sizes = Sizes::new(resize_to, 64);
        for i in 0..60 {
            let r = render(&cfg, Split::Test, i).unwrap();
            let side = cfg.image_size;
            let mask =
                Tensor::from_fn(&[3, side, side], |k| r.mask[k % (side * side)] as u8 as f32);
            let warped = crop(&resize(&mask, resize_to), CropParams::center(sizes), 64);
            let (mut x0, mut y0, mut x1, mut y1) = (64u32, 64u32, 0u32, 0u32);
            for y in 0..64u32 {
                for x in 0..64u32 {
                    if warped.data()[(y * 64 + x) as usize] >= 0.5 {
                        x0 = x0.min(x);
                        y0 = y0.min(y);
                        x1 = x1.max(x + 1);
                        y1 = y1.max(y + 1);
                    }
                }
            }
            let scanned = BBox::new(x0, y0, x1, y1).unwrap();
            let union = r.boxes.iter().fold(r.boxes[0], |a, b| {
                BBox::new(
                    a.x0.min(b.x0),
                    a.y0.min(b.y0),
                    a.x1.max(b.x1),
                    a.y1.max(b.y1),
                )
                .unwrap()
            });
            let mapped = EvalTransform::new(side, side, sizes).box_to_input(&union);
            let diffs = [
                mapped.x0 as i64 - scanned.x0 as i64,
                mapped.y0 as i64 - scanned.y0 as i64,
                mapped.x1 as i64 - scanned.x1 as i64,
                mapped.y1 as i64 - scanned.y1 as i64,
            ];
            assert!(
                diffs.iter().all(|d| d.abs() <= 1),
                "resize {resize_to} image {i}: mapped {mapped:?} scanned {scanned:?}"
            );
        }
    }
}
