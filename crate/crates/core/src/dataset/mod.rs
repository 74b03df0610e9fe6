pub mod augment;
pub mod manifest;
pub mod netpbm;
pub mod synth;

pub use augment::{
    augment, eval_input, AugmentMode, CropParams, EvalTransform, Normalization, Sizes,
};
pub use manifest::{load, read_manifest, record_id, write_manifest, DatasetRecord, Sample};
pub use netpbm::RgbImage;
pub use synth::{generate, render, Background, ShapeKind, Split, SynthConfig};
