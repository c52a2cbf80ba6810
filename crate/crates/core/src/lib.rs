pub mod numkit;
pub mod mgraph;
pub mod error;
pub mod checkpoint;
pub mod teacher;
pub mod distill;
pub mod evalbench;

pub use error::{Error, Result};
pub mod cli;
