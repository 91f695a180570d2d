//! Simulation and analysis of phonon-dressed quantum-dot emission seen
//! through a tunable optical cavity.
//!
//! The pipeline runs from phonon spectral densities to the dephasing
//! integral, the susceptibility envelope, absorption and emission spectra,
//! cavity filtering, first-order coherence, Michelson interferograms and
//! least-squares fitting of all of the above.

pub mod coherence;
pub mod error;
pub mod fitting;
pub mod interferometry;
pub mod noise;
pub mod phonon;
pub mod presets;
pub mod quadrature;
pub mod spectra;
pub mod units;

pub use coherence::{CoherenceTrace, SpectralWindow, VisibilityTrace};
pub use error::{Error, Result};
pub use fitting::{FitResult, LmOptions, Parameter};
pub use phonon::{EmitterParams, PhononParams, SusceptibilityTrace, TimeGrid};
pub use spectra::{CavityParams, EnergyGrid, Spectrum};
pub use num_complex::Complex64;
