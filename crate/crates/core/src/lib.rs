pub mod contrastive;
pub mod corpusio;
pub mod docmodel;
pub mod error;
pub mod gradcore;
pub mod retrieval;
pub mod taskheads;

pub use error::{Error, Result};
