//! File formats, configuration, manifests, a parallel benchmark driver and
//! the `kpem` command line on top of `kpem-core`.

pub mod cli;
pub mod config;
pub mod error;
pub mod formats;
pub mod manifest;
pub mod runner;

pub use error::{Error, Result};
pub use kpem_core as core;
