pub mod config;
pub mod error;
pub mod field;
pub mod forward;
pub mod greens;
pub mod harness;
pub mod inversion;
pub mod io;
pub mod linop;
pub mod metrics;
pub mod scene;
pub mod special;
pub mod stacked;
pub mod unrolled;

pub use error::{Error, Result};
