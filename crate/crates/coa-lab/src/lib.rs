pub mod assigndesign;
pub mod cli;
pub mod coa;
pub mod error;
pub mod harness;
pub mod inference;
pub mod netgraph;
pub mod outcomes;
pub mod structural;

pub use error::{CoaError, Result};
