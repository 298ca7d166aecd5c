pub mod error;
pub mod linalg;
pub mod estimators;
pub mod experiment;
pub mod model;
pub mod numeric;
pub mod oracle;
pub mod parallel;
pub mod sampler;

pub use error::{Error, Result};
