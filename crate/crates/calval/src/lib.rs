//! Calibration, validation, and prediction for computer models.
//!
//! The crate walks a simulation code through three phases: Bayesian
//! calibration of its parameters against measured data (with an optional
//! learned model-discrepancy term), validation of the calibrated
//! parameter ensemble on held-out tests through Bayes factors, and
//! model-averaged prediction whose weights come from that validation
//! evidence. A Gaussian-process surrogate stands in for the code
//! everywhere, and its predictive variance is carried through every
//! likelihood so surrogate error widens posteriors instead of biasing
//! them.
//!
//! A built-in four-QoI void-fraction benchmark makes the whole workflow
//! runnable out of the box:
//!
//! ```
//! use calval::model::{BenchmarkModel, ComputerModel, DesignPoint, ParamVector};
//!
//! # fn main() -> Result<(), calval::error::CalvalError> {
//! let model = BenchmarkModel::new();
//! let x = DesignPoint::new(vec![7.2, 15.0, 6.5, 280.0]);
//! let y = model.evaluate(&x, &ParamVector::new(vec![1.0; 5]))?;
//! assert_eq!(y.dim(), 4);
//! # Ok(())
//! # }
//! ```
//!
//! The `pipeline` module (and the `calval` binary built on it) chains the
//! phases into a manifest-tracked, byte-reproducible run; the guide under
//! `book/` covers each phase chapter by chapter, and every code block in
//! it compiles and runs as a doc-test of this crate.

pub mod bayes_factor;
pub mod bma;
pub mod config;
pub mod copula;
pub mod data;
pub mod error;
pub mod gp;
pub mod iuq;
pub mod model;
pub mod pipeline;
pub mod stats;
pub mod surrogate;

#[cfg(doctest)]
mod book {
    //! Keeps the guide honest: every fenced Rust block in `book/src/`
    //! is compiled and executed by `cargo test --doc`.

    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}

    #[doc = include_str!("../../../book/src/benchmark.md")]
    mod benchmark {}

    #[doc = include_str!("../../../book/src/surrogate.md")]
    mod surrogate {}

    #[doc = include_str!("../../../book/src/calibration.md")]
    mod calibration {}

    #[doc = include_str!("../../../book/src/validation.md")]
    mod validation {}

    #[doc = include_str!("../../../book/src/prediction.md")]
    mod prediction {}

    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
