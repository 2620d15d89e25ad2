pub mod assembly;
pub mod combinatorics;
pub mod engine;
pub mod error;
pub mod kerr;
pub mod lattice;
pub mod system;

pub use error::{Error, Result};
