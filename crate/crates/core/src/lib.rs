//! Deterministic data-parallel training simulator with top-k gradient
//! compression, an alpha-beta collective cost model and an adaptive
//! compression-ratio controller.

pub mod artopk;
pub mod cli;
pub mod collectives;
pub mod compress;
pub mod config;
pub mod cost;
pub mod data;
pub mod error;
pub mod grad;
pub mod model;
pub mod moo;
pub mod netsched;
pub mod sweep;
pub mod trainer;

pub use error::{Error, Result};
