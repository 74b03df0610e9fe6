//! Resize / crop / flip / normalize, and the eval-time box mapping between
//! original image coordinates and model-input coordinates.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::head::BBox;
use crate::interp::{resize_planes, source_coord};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AugmentMode {
    Train,
    Eval,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sizes {
    pub resize_to: usize,
    pub crop_to: usize,
}

impl Sizes {
    pub fn new(resize_to: usize, crop_to: usize) -> Self {
        assert!(
            resize_to >= crop_to && crop_to > 0,
            "resize_to must be >= crop_to"
        );
        Self { resize_to, crop_to }
    }

    pub fn center_offset(&self) -> usize {
        (self.resize_to - self.crop_to) / 2
    }
}

/// Per-channel mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Normalization {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Normalization {
    pub const IDENTITY: Normalization = Normalization {
        mean: [0.0; 3],
        std: [1.0; 3],
    };

    /// Statistics over all pixels of `images` (each `[3, H, W]`).
    pub fn from_images<'a>(images: impl IntoIterator<Item = &'a Tensor<f32>>) -> Self {
        let mut sum = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0usize;
        for img in images {
            let plane = img.shape()[1] * img.shape()[2];
            for c in 0..3 {
                for &v in &img.data()[c * plane..(c + 1) * plane] {
                    sum[c] += v as f64;
                    sq[c] += (v as f64) * (v as f64);
                }
            }
            n += plane;
        }
        if n == 0 {
            return Self::IDENTITY;
        }
        let mut out = Self::IDENTITY;
        for c in 0..3 {
            let mean = sum[c] / n as f64;
            let var = (sq[c] / n as f64 - mean * mean).max(0.0);
            out.mean[c] = mean as f32;
            out.std[c] = var.sqrt().max(1e-6) as f32;
        }
        out
    }

    pub fn apply(&self, img: &mut Tensor<f32>) {
        let plane = img.len() / 3;
        for (i, v) in img.data_mut().iter_mut().enumerate() {
            let c = i / plane;
            *v = (*v - self.mean[c]) / self.std[c];
        }
    }
}

/// Crop placement chosen for one training sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropParams {
    pub x: usize,
    pub y: usize,
    pub flip: bool,
}

impl CropParams {
    pub fn sample<R: Rng + ?Sized>(sizes: Sizes, rng: &mut R) -> Self {
        let slack = sizes.resize_to - sizes.crop_to;
        let x = rng.gen_range(0..=slack);
        let y = rng.gen_range(0..=slack);
        let flip = rng.gen_bool(0.5);
        Self { x, y, flip }
    }

    pub fn center(sizes: Sizes) -> Self {
        let o = sizes.center_offset();
        Self {
            x: o,
            y: o,
            flip: false,
        }
    }
}

/// Bilinear resize of a `[3, H, W]` image to `[3, side, side]`.
pub fn resize(img: &Tensor<f32>, side: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    if h == side && w == side {
        return img.clone();
    }
    let src: Vec<f64> = img.data().iter().map(|&v| v as f64).collect();
    let out = resize_planes(&src, 3, (h, w), (side, side));
    Tensor::new(
        vec![3, side, side],
        out.into_iter().map(|v| v as f32).collect(),
    )
    .expect("resize output shape")
}

pub fn crop(img: &Tensor<f32>, p: CropParams, side: usize) -> Tensor<f32> {
    let (h, w) = (img.shape()[1], img.shape()[2]);
    assert!(p.y + side <= h && p.x + side <= w, "crop outside image");
    Tensor::from_fn(&[3, side, side], |i| {
        let (c, r, col) = (i / (side * side), (i / side) % side, i % side);
        let col = if p.flip { side - 1 - col } else { col };
        img.data()[c * h * w + (p.y + r) * w + p.x + col]
    })
}

/// Full pipeline: resize, crop (random in train mode, centered in eval mode),
/// optional flip, then normalization.
pub fn augment<R: Rng + ?Sized>(
    img: &Tensor<f32>,
    mode: AugmentMode,
    sizes: Sizes,
    norm: &Normalization,
    rng: &mut R,
) -> Tensor<f32> {
    let params = match mode {
        AugmentMode::Train => CropParams::sample(sizes, rng),
        AugmentMode::Eval => CropParams::center(sizes),
    };
    let mut out = crop(&resize(img, sizes.resize_to), params, sizes.crop_to);
    norm.apply(&mut out);
    out
}

/// Eval-mode preprocessing: resize, center crop, normalize.
pub fn eval_input(img: &Tensor<f32>, sizes: Sizes, norm: &Normalization) -> Tensor<f32> {
    let mut out = crop(
        &resize(img, sizes.resize_to),
        CropParams::center(sizes),
        sizes.crop_to,
    );
    norm.apply(&mut out);
    out
}

/// Eval-time affine map for an image of `width × height`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EvalTransform {
    pub width: usize,
    pub height: usize,
    pub sizes: Sizes,
}

impl EvalTransform {
    pub fn new(width: usize, height: usize, sizes: Sizes) -> Self {
        Self {
            width,
            height,
            sizes,
        }
    }

    /// Original-pixels-per-resized-pixel along each axis.
    fn scales(&self) -> (f64, f64) {
        let r = self.sizes.resize_to;
        let sx = if r > 1 {
            source_coord(1, self.width, r)
        } else {
            1.0
        };
        let sy = if r > 1 {
            source_coord(1, self.height, r)
        } else {
            1.0
        };
        (sx.max(1e-12), sy.max(1e-12))
    }

    fn to_input_axis(lo: u32, hi: u32, s: f64, off: usize, side: usize) -> (u32, u32) {
        let a = (lo as f64 / s).round() - off as f64;
        let b = ((hi - 1) as f64 / s).round() + 1.0 - off as f64;
        let a = a.clamp(0.0, side as f64 - 1.0);
        let b = b.clamp(a + 1.0, side as f64);
        (a as u32, b as u32)
    }

    fn to_original_axis(lo: u32, hi: u32, s: f64, off: usize, full: usize) -> (u32, u32) {
        let a = ((lo as usize + off) as f64 * s).round();
        let b = (((hi - 1) as usize + off) as f64 * s).round() + 1.0;
        let a = a.clamp(0.0, full as f64 - 1.0);
        let b = b.clamp(a + 1.0, full as f64);
        (a as u32, b as u32)
    }

    /// Original-coordinate box to model-input coordinates.
    pub fn box_to_input(&self, b: &BBox) -> BBox {
        let (sx, sy) = self.scales();
        let off = self.sizes.center_offset();
        let c = self.sizes.crop_to;
        let (x0, x1) = Self::to_input_axis(b.x0, b.x1, sx, off, c);
        let (y0, y1) = Self::to_input_axis(b.y0, b.y1, sy, off, c);
        BBox { x0, y0, x1, y1 }
    }

    /// Model-input box back to original image coordinates.
    pub fn box_to_original(&self, b: &BBox) -> BBox {
        let (sx, sy) = self.scales();
        let off = self.sizes.center_offset();
        let (x0, x1) = Self::to_original_axis(b.x0, b.x1, sx, off, self.width);
        let (y0, y1) = Self::to_original_axis(b.y0, b.y1, sy, off, self.height);
        BBox { x0, y0, x1, y1 }
    }
}
