pub mod cli;
pub mod error;
pub mod experiments;
pub mod market;
pub mod mcp;
pub mod model;
pub mod oracle;
pub mod properties;
pub mod solver;

pub use error::{Error, Result};
