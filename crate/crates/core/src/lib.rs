pub mod dataset;
pub mod error;
pub mod eval;
pub mod head;
pub mod interp;
pub mod params;
pub mod tensor;
pub mod training;
pub mod vit;

pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
