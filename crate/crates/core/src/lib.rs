pub mod error;
pub mod field;
pub mod geometry;
pub mod inverse;
pub mod lattice;
pub mod numerics;
pub mod phantom;
pub mod pipeline;
pub mod sim;

pub use error::{Error, Result};
