//! Weak-form system identification: equation discovery, parameter
//! estimation and coarse graining from gridded data.

pub mod cli;
pub mod coarse;
pub mod data;
pub mod error;
pub mod io;
pub mod library;
pub mod pipeline;
pub mod sim;
pub mod sparse;
pub mod spectrum;
pub mod testfn;
pub mod weak;
pub mod wendy;

pub use data::{add_noise, Axis, Dataset, Grid, NoiseKind, NoiseSpec};
pub use error::{Error, Result};

// std's clock panics on wasm32-unknown-unknown
#[cfg(not(target_arch = "wasm32"))]
pub(crate) use std::time::Instant;
#[cfg(target_arch = "wasm32")]
pub(crate) use web_time::Instant;
