//! Tools for interpreting word and phrase embeddings through brain-based
//! componential semantic vectors.

pub mod cli;
pub mod composition;
pub mod error;
pub mod evaluation;
pub mod fusion;
pub mod ingest;
pub mod linalg;
pub mod mapping;
pub mod rsa;
pub mod space;

pub use error::{Error, Result};
