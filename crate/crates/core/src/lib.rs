// `!(x > 0.0)` is used on purpose so that NaN is rejected too.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod cluster;
pub mod counts;
pub mod error;
pub mod ingest;
pub mod io;
pub mod kmeans;
pub mod linalg;
pub mod matching;
pub mod model;
pub mod modelsel;
pub mod rng;
pub mod simulate;
pub mod spectra;

pub use error::{BmcError, Result};
