pub mod active;
pub mod comm;
pub mod config;
pub mod conic;
pub mod error;
pub mod experiment;
pub mod geometry;
pub mod joint;
pub mod linalg;
pub mod passive;
pub mod sensing;

pub use error::{Error, Result};
