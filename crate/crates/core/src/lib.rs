pub mod cli;
pub mod data;
pub mod diagnostics;
pub mod error;
pub mod estimator;
pub mod evaluation;
pub mod growth;
pub mod likelihood;
pub mod model;
pub mod report;
pub mod series;
pub mod special;
pub mod uncertainty;

pub use error::{Error, Result};
