pub mod attribution;
pub mod cascade;
pub mod checkpoint;
pub mod channel_select;
pub mod data;
pub mod error;
pub mod models;
pub mod par;
pub mod real;
pub mod tensor;
pub mod training;

pub use error::{Error, Result};
pub use real::Real;
pub use tensor::{Tape, Tensor, Var};
