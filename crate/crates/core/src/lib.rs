//! Trace-based global sensitivity indices for models with vector or
//! functional outputs, estimated by pick-and-freeze sampling.
//!
//! For a model Y = f(X_1, ..., X_p) with output in R^k, the index of a
//! subset u of inputs is
//!
//! ```text
//! S^u = Tr(C_u) / Tr(Sigma),
//! ```
//!
//! where Sigma is the output covariance and C_u the covariance between Y and
//! the "frozen" replica Y^u obtained by resampling the inputs outside u.
//! The crate provides:
//!
//! - paired pick-and-freeze designs with reproducible per-column streams
//!   ([`design`]);
//! - analytic benchmark models and an external subprocess adapter
//!   ([`models`]);
//! - the empirical index, componentwise variants and closure-based
//!   interaction estimates ([`estimators`]);
//! - plug-in asymptotic variances, confidence intervals and coverage
//!   experiments ([`asymptotics`]);
//! - exponential deviation bounds and sample-size planning for bounded
//!   outputs ([`concentration`]);
//! - the matrix-valued index family indexed by measures on signed
//!   permutations, with its closed-form average ([`matricial`]);
//! - truncated-basis machinery for functional outputs ([`functional`]).

// Negated float comparisons (`!(x > y)`) are deliberate throughout: unlike
// `x <= y`, they fail closed when either side is NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod asymptotics;
pub mod cli;
pub mod concentration;
pub mod design;
pub mod error;
pub mod estimators;
pub mod functional;
pub mod matricial;
pub mod models;
pub mod numeric;
pub mod rng;

pub use design::{DesignConfig, Dist, InputSpec, SubsetU};
pub use error::{Error, Result};
