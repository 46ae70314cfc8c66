//! Thermal quantum Fisher information of the multilevel quantum Rabi model.
//!
//! The numerical core is generic over [`Real`]; [`Scalar`] is the working
//! `f64` type and [`WideScalar`] the extended-precision fallback used for very
//! low temperatures and near-degenerate spectra.

pub mod adiabatic;
pub mod ensemble;
pub mod error;
pub mod exact;
pub mod ideal;
pub mod model;
pub mod output;
pub mod scalar;
pub mod thermo;

pub use adiabatic::{aa_spectrum, AaLevel, AdiabaticSpectrum, LevelKind};
pub use ensemble::{run_ensemble, EnsembleResult, EnsembleSpec};
pub use error::{Error, Result};
pub use exact::{exact_qfi, exact_spectrum, ExactSettings};
pub use ideal::{ideal_qfi, solve_stationarity, IdealProbe};
pub use model::{svd_decompose, ModelSpec, SuperradiantDecomposition};
pub use scalar::{Extended, Real};
pub use thermo::{qfi_curve, PrecisionMode, QfiCurve, QfiSettings};

/// Working precision.
pub type Scalar = f64;
/// Extended precision.
pub type WideScalar = Extended;
