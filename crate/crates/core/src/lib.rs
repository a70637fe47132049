pub mod augment;
pub mod cli;
pub mod clusterer;
pub mod contrastive;
pub mod dataio;
pub mod encoder;
pub mod error;
pub mod metrics;
pub mod ndmath;
pub mod shrinkage;
pub mod trainer;

pub use error::{Error, Result};
