pub mod audit;
pub mod basis;
pub mod cli;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod layers;
pub mod nn;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use layers::{Model, ModelSpec, Variant};
pub use tensor::{Tape, Tensor, Var};
