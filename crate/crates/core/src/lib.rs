pub mod blob;
pub mod cli;
pub mod entropy;
pub mod codec;
pub mod error;
pub mod experiment;
pub mod field;
pub mod hierarchy;
pub mod kernel;
pub mod mask;
pub mod quant;
pub mod roi;
pub mod synth;
pub mod track;
pub mod transform;

pub use error::{Error, Result};
pub use field::Field;
pub use hierarchy::GridHierarchy;
pub use transform::{decompose, recompose, CoeffPyramid};
