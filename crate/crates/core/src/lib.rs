//! Secret key rates, simulation and channel estimation for four-state
//! (QPSK) continuous-variable QKD with heterodyne detection.
//!
//! Variances are in shot-noise units throughout. The guide in `book/`
//! walks through each module.

pub mod cli;
pub mod constellation;
pub mod dsp;
pub mod estimate;
pub mod error;
pub mod optimize;
pub mod params;
pub mod security;
pub mod simulate;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/constellation.md")]
    mod constellation {}
    #[doc = include_str!("../../../book/src/security.md")]
    mod security {}
    #[doc = include_str!("../../../book/src/optimize.md")]
    mod optimize {}
    #[doc = include_str!("../../../book/src/dsp.md")]
    mod dsp {}
    #[doc = include_str!("../../../book/src/simulate.md")]
    mod simulate {}
    #[doc = include_str!("../../../book/src/estimate.md")]
    mod estimate {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
    #[doc = include_str!("../../../book/src/limits.md")]
    mod limits {}
}
