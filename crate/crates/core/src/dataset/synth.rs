//! Deterministic synthetic localization dataset: one textured, colored shape
//! per image (optionally two of the same class) on a low-frequency
//! background, with tight ground-truth boxes taken from the rendered mask.

use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::manifest::{write_manifest, DatasetRecord};
use super::netpbm::RgbImage;
use crate::error::{Error, Result};
use crate::head::BBox;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
    Cross,
    Ring,
    Bar,
}

pub const SHAPE_KINDS: [ShapeKind; 6] = [
    ShapeKind::Circle,
    ShapeKind::Square,
    ShapeKind::Triangle,
    ShapeKind::Cross,
    ShapeKind::Ring,
    ShapeKind::Bar,
];

impl ShapeKind {
    /// Membership of offset `(dx, dy)` from the center for radius `r`.
    fn contains(self, dx: f64, dy: f64, r: f64) -> bool {
        let (ax, ay) = (dx.abs(), dy.abs());
        match self {
            ShapeKind::Circle => dx * dx + dy * dy <= r * r,
            ShapeKind::Square => ax <= 0.85 * r && ay <= 0.85 * r,
            ShapeKind::Triangle => dy >= -r && dy <= r && ax <= (dy + r) * 0.5,
            ShapeKind::Cross => (ax <= r / 3.0 && ay <= r) || (ay <= r / 3.0 && ax <= r),
            ShapeKind::Ring => {
                let d2 = dx * dx + dy * dy;
                d2 <= r * r && d2 >= (0.55 * r) * (0.55 * r)
            }
            ShapeKind::Bar => ax <= r && ay <= 0.4 * r,
        }
    }

    fn base_color(self) -> [f64; 3] {
        match self {
            ShapeKind::Circle => [220.0, 60.0, 50.0],
            ShapeKind::Square => [60.0, 190.0, 70.0],
            ShapeKind::Triangle => [60.0, 90.0, 225.0],
            ShapeKind::Cross => [225.0, 205.0, 50.0],
            ShapeKind::Ring => [200.0, 60.0, 200.0],
            ShapeKind::Bar => [50.0, 200.0, 210.0],
        }
    }

    /// Stripe direction and period of the class texture.
    fn stripes(self) -> (f64, f64, f64) {
        match self {
            ShapeKind::Circle => (1.0, 0.0, 5.0),
            ShapeKind::Square => (0.0, 1.0, 4.0),
            ShapeKind::Triangle => (1.0, 1.0, 6.0),
            ShapeKind::Cross => (1.0, -1.0, 4.0),
            ShapeKind::Ring => (1.0, 0.0, 3.0),
            ShapeKind::Bar => (0.0, 1.0, 7.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    /// Gray base with smooth random blobs and pixel noise.
    #[default]
    Blobs,
    /// Pure black.
    Flat,
}

impl std::str::FromStr for Background {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(Background::Blobs),
            "flat" => Ok(Background::Flat),
            other => Err(Error::Config(format!("unknown background `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    fn tag(self) -> u64 {
        match self {
            Split::Train => 1,
            Split::Val => 2,
            Split::Test => 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub shapes: Vec<ShapeKind>,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub image_size: usize,
    /// Object extent range in pixels (inclusive).
    pub min_extent: usize,
    pub max_extent: usize,
    /// Minimum distance between an object and the image border.
    pub margin: usize,
    pub background: Background,
    /// Probability of a second, disjoint instance of the same class.
    pub multi_instance: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self::with_classes(4)
    }
}

impl SynthConfig {
    pub fn with_classes(num_classes: usize) -> Self {
        Self {
            num_classes,
            shapes: SHAPE_KINDS.iter().copied().take(num_classes).collect(),
            train: 400,
            val: 100,
            test: 200,
            image_size: 64,
            min_extent: 24,
            max_extent: 40,
            margin: 6,
            background: Background::Blobs,
            multi_instance: 0.0,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes == 0 || self.num_classes > SHAPE_KINDS.len() {
            return Err(Error::Config(format!(
                "num_classes must be in 1..={}",
                SHAPE_KINDS.len()
            )));
        }
        if self.shapes.len() != self.num_classes {
            return Err(Error::Config(format!(
                "{} shape kinds for {} classes",
                self.shapes.len(),
                self.num_classes
            )));
        }
        if self.min_extent < 4 || self.min_extent > self.max_extent {
            return Err(Error::Config(
                "object extent range is empty or too small".into(),
            ));
        }
        if self.max_extent + 2 * self.margin > self.image_size {
            return Err(Error::Config(
                "objects do not fit inside the margins".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.multi_instance) {
            return Err(Error::Config("multi_instance must be a probability".into()));
        }
        Ok(())
    }

    pub fn count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.train,
            Split::Val => self.val,
            Split::Test => self.test,
        }
    }
}

/// One rendered example plus its object mask.
#[derive(Debug, Clone)]
pub struct Rendered {
    pub image: RgbImage,
    pub label: usize,
    pub boxes: Vec<BBox>,
    pub mask: Vec<bool>,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of an independent stream derived from `(seed, a, b)`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix(splitmix(splitmix(seed) ^ a) ^ b.wrapping_mul(0x2545_f491_4f6c_dd1d))
}

fn clamp_u8(v: f64) -> u8 {
    v.round().clamp(0.0, 255.0) as u8
}

fn render_background(cfg: &SynthConfig, rng: &mut ChaCha8Rng) -> Vec<[f64; 3]> {
    let s = cfg.image_size;
    match cfg.background {
        Background::Flat => vec![[0.0; 3]; s * s],
        Background::Blobs => {
            let gray = rng.gen_range(70.0..150.0);
            let tint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-12.0..12.0));
            let mut px = vec![[0.0; 3]; s * s];
            for (i, p) in px.iter_mut().enumerate() {
                let _ = i;
                *p = [gray + tint[0], gray + tint[1], gray + tint[2]];
            }
            let blobs = rng.gen_range(4..=7);
            for _ in 0..blobs {
                let (bx, by) = (rng.gen_range(0.0..s as f64), rng.gen_range(0.0..s as f64));
                let sigma = rng.gen_range(5.0..14.0);
                let amp = rng.gen_range(-60.0..60.0);
                let btint: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-10.0..10.0));
                for y in 0..s {
                    for x in 0..s {
                        let d2 = (x as f64 + 0.5 - bx).powi(2) + (y as f64 + 0.5 - by).powi(2);
                        let w = (-d2 / (2.0 * sigma * sigma)).exp();
                        let p = &mut px[y * s + x];
                        for c in 0..3 {
                            p[c] += w * (amp + btint[c]);
                        }
                    }
                }
            }
            for p in &mut px {
                let n = rng.gen_range(-10.0..10.0);
                for v in p.iter_mut() {
                    *v += n;
                }
            }
            px
        }
    }
}

/// Places one instance; returns its mask as pixel indices.
fn place(
    cfg: &SynthConfig,
    kind: ShapeKind,
    rng: &mut ChaCha8Rng,
    avoid: Option<&BBox>,
) -> Option<Vec<usize>> {
    let s = cfg.image_size;
    for _ in 0..32 {
        let extent = rng.gen_range(cfg.min_extent..=cfg.max_extent) as f64;
        let r = extent / 2.0;
        let lo = cfg.margin as f64 + r;
        let hi = s as f64 - cfg.margin as f64 - r;
        let (cx, cy) = (rng.gen_range(lo..=hi), rng.gen_range(lo..=hi));
        let mut pixels = Vec::new();
        for y in 0..s {
            for x in 0..s {
                if kind.contains(x as f64 + 0.5 - cx, y as f64 + 0.5 - cy, r) {
                    pixels.push(y * s + x);
                }
            }
        }
        if pixels.is_empty() {
            continue;
        }
        if let Some(other) = avoid {
            let b = tight_box(&pixels, s);
            // keep a 2-pixel gap between instances
            let grown = BBox {
                x0: other.x0.saturating_sub(2),
                y0: other.y0.saturating_sub(2),
                x1: other.x1 + 2,
                y1: other.y1 + 2,
            };
            if grown.intersection_area(&b) > 0 {
                continue;
            }
        }
        return Some(pixels);
    }
    None
}

fn tight_box(pixels: &[usize], width: usize) -> BBox {
    let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
    for &p in pixels {
        let (y, x) = (p / width, p % width);
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x + 1);
        y1 = y1.max(y + 1);
    }
    BBox {
        x0: x0 as u32,
        y0: y0 as u32,
        x1: x1 as u32,
        y1: y1 as u32,
    }
}

/// Renders example `index` of `split`. Labels cycle through the classes so
/// every split is balanced.
pub fn render(cfg: &SynthConfig, split: Split, index: usize) -> Result<Rendered> {
    cfg.validate()?;
    let s = cfg.image_size;
    let label = index % cfg.num_classes;
    let kind = cfg.shapes[label];
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, split.tag(), index as u64));

    let mut px = render_background(cfg, &mut rng);
    let jitter: [f64; 3] = std::array::from_fn(|_| rng.gen_range(-15.0..15.0));
    let phase = rng.gen_range(0.0..std::f64::consts::TAU);

    let first = place(cfg, kind, &mut rng, None)
        .ok_or_else(|| Error::Config("could not place an object".into()))?;
    let first_box = tight_box(&first, s);
    let mut instances = vec![first];
    let mut boxes = vec![first_box];
    if cfg.multi_instance > 0.0 && rng.gen_bool(cfg.multi_instance) {
        if let Some(second) = place(cfg, kind, &mut rng, Some(&first_box)) {
            boxes.push(tight_box(&second, s));
            instances.push(second);
        }
    }

    let base = kind.base_color();
    let (sx, sy, period) = kind.stripes();
    let mut mask = vec![false; s * s];
    for pixels in &instances {
        for &p in pixels {
            mask[p] = true;
            let (y, x) = ((p / s) as f64, (p % s) as f64);
            let t = (std::f64::consts::TAU * (sx * x + sy * y) / period + phase).sin();
            let f = 0.8 + 0.2 * t;
            px[p] = std::array::from_fn(|c| (base[c] + jitter[c]) * f);
        }
    }

    let mut image = RgbImage::new(s, s);
    for (i, p) in px.iter().enumerate() {
        image.put(
            i % s,
            i / s,
            [clamp_u8(p[0]), clamp_u8(p[1]), clamp_u8(p[2])],
        );
    }
    Ok(Rendered {
        image,
        label,
        boxes,
        mask,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerateSummary {
    pub counts: Vec<(Split, usize)>,
}

/// Writes `<out>/<split>/<index>.ppm` and `<out>/<split>.jsonl` for every split.
pub fn generate(cfg: &SynthConfig, out: &Path) -> Result<GenerateSummary> {
    cfg.validate()?;
    let mut counts = Vec::new();
    for split in Split::ALL {
        let dir = out.join(split.name());
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let mut records = Vec::with_capacity(cfg.count(split));
        for i in 0..cfg.count(split) {
            let r = render(cfg, split, i)?;
            let rel = format!("{}/{i:05}.ppm", split.name());
            r.image.save(&out.join(&rel))?;
            records.push(DatasetRecord {
                path: rel.into(),
                label: r.label,
                boxes: r.boxes,
            });
        }
        write_manifest(&out.join(format!("{}.jsonl", split.name())), &records)?;
        counts.push((split, records.len()));
    }
    Ok(GenerateSummary { counts })
}
