//! Pointer-network extraction of (aspect, opinion, sentiment) triplets.

pub mod checkpoint;
pub mod config;
pub mod corpus;
pub mod error;
pub mod inference;
pub mod model;
pub mod runs;
pub mod tape;
pub mod training;
pub mod triplet;

pub use error::{PasteError, Result};
