//! Interaction Vision Transformer: a ViT with an extra, teacher-supervised
//! interaction-query pathway, plus the tooling around it.

pub mod analysis;
pub mod cli;
pub mod error;
pub mod interaction;
pub mod model;
pub mod numerics;
pub mod teacher;
pub mod train;

pub use error::{Error, Result};
