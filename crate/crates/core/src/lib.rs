pub mod cli;
pub mod error;
pub mod estimator;
pub mod fixture;
pub mod geometry;
pub mod grid;
pub mod io;
pub mod map;
pub mod query;
pub mod render;
pub mod semantics;

pub use error::{Error, Result};
