//! Voter model with stirring on the discrete torus.
//!
//! The combined chain has generator `n² L^S + a_n L^V`: a speed-change
//! symmetric exclusion accelerated by `n²` and a voter flip dynamics at
//! rate `a_n`. The crate provides exact small-system machinery (generator
//! matrices, adjoints, Dirichlet forms, relative entropy evolution),
//! symbolic cylinder-function algebra, a kinetic Monte Carlo engine for
//! large tori, fluctuation-field observables, the Ornstein–Uhlenbeck
//! description of the limiting field, discrete flows, and an ensemble
//! harness that turns all of it into statistical verdicts.

// NaN must fail parameter checks, hence `!(x >= 0.0)` style comparisons.
#![allow(clippy::neg_cmp_op_on_partial_ord)]
#![allow(clippy::excessive_precision, clippy::needless_range_loop)]

pub mod cylinder;
pub mod error;
pub mod exact;
pub mod field;
pub mod flows;
pub mod kmc;
pub mod lattice;
pub mod she;
pub mod stats;

pub use cylinder::{CylinderFunction, GradientData, RateFamily};
pub use error::{Error, Result};
pub use lattice::{Configuration, Torus};
