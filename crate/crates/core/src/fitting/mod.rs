//! Least-squares engine and the fitting protocols built on it.

mod lm;
pub mod spectral;
pub mod visibility;

pub use lm::{least_squares, FitProblem, FitResult, FittedParameter, LmOptions, Parameter, Scope};
