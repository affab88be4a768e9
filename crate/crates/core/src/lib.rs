//! Decoupled hard/soft graph attention trained with variational EM.

pub mod attention;
pub mod config;
pub mod em;
pub mod error;
pub mod experiments;
pub mod graph;
pub mod io;
pub mod models;
pub mod seed;
pub mod tensor;

pub use error::{Error, Result};
