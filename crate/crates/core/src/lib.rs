pub mod error;
pub mod fem;
pub mod flow;
pub mod grid;
pub mod hjb;
pub mod io;
pub mod pipeline;
pub mod points;
pub mod problems;
pub mod search;
pub mod shepard;

pub use error::{Error, Result};
