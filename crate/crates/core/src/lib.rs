//! Robust adaptive beamforming for uniform linear arrays.
//!
//! The main pipeline estimates interferer directions snapshot by snapshot,
//! builds a preprocessing matrix over the resulting angular sectors, shrinks
//! it toward a scaled identity to reconstruct the interference-plus-noise
//! covariance, extracts the desired-signal steering vector with the power
//! method and finally forms an MVDR weight.
//!
//! ```
//! use beamlab::signal_model::{steering_vector, ArrayGeometry};
//!
//! let geometry = ArrayGeometry::uniform(12).unwrap();
//! let a = steering_vector(0.0, &geometry).unwrap();
//! assert!((a.norm() - 1.0).abs() < 1e-12);
//! ```

pub mod analysis;
pub mod beamforming;
pub mod covariance;
pub mod doa;
pub mod error;
pub mod experiment;
pub mod ppbss;
pub mod rng;
pub mod signal_model;
pub mod soi;

pub use error::{Error, Result};

/// Complex scalar used throughout.
pub type Complex = num_complex::Complex64;
/// Column vector of complex samples.
pub type CVector = nalgebra::DVector<Complex>;
/// Dense complex matrix.
pub type CMatrix = nalgebra::DMatrix<Complex>;

/// Converts a power ratio in dB to linear scale.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

/// Converts a linear power ratio to dB.
pub fn linear_to_db(x: f64) -> f64 {
    10.0 * x.log10()
}
