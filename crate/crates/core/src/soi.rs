//! Desired-signal steering vector estimation.
//!
//! The desired-signal covariance is rebuilt over its angular sector from a
//! maximum-entropy spectrum of the sample covariance, and its principal
//! eigenvector is extracted by power iteration.

use serde::Serialize;

use crate::covariance::HermitianMatrix;
use crate::signal_model::{steering_vector, ArrayGeometry};
use crate::{CVector, Complex, Error, Result};

/// Angular sector presumed to contain the desired signal, sampled at `S`
/// equally spaced points.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SoiSector {
    pub center_deg: f64,
    pub half_width_deg: f64,
    pub samples: usize,
}

impl SoiSector {
    pub fn new(center_deg: f64, half_width_deg: f64, samples: usize) -> Result<Self> {
        if samples < 2 {
            return Err(Error::InvalidConfig(format!("sector needs at least 2 samples, got {samples}")));
        }
        if !(half_width_deg > 0.0) {
            return Err(Error::InvalidConfig(format!("sector half width {half_width_deg} must be positive")));
        }
        Ok(Self {
            center_deg,
            half_width_deg,
            samples,
        })
    }

    /// Sector of ±4° sampled at 12 points.
    pub fn around(center_deg: f64) -> Self {
        Self {
            center_deg,
            half_width_deg: 4.0,
            samples: 12,
        }
    }

    pub fn spacing_deg(&self) -> f64 {
        if self.samples < 2 {
            return 2.0 * self.half_width_deg;
        }
        2.0 * self.half_width_deg / (self.samples - 1) as f64
    }

    pub fn sample_angles(&self) -> Vec<f64> {
        if self.samples == 1 {
            return vec![self.center_deg];
        }
        let lo = self.center_deg - self.half_width_deg;
        let step = self.spacing_deg();
        (0..self.samples).map(|i| lo + step * i as f64).collect()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.center_deg - self.half_width_deg, self.center_deg + self.half_width_deg)
    }
}

/// Maximum-entropy spectrum `[R⁻¹]₁₁ / |a^H(θ) R⁻¹ e₁|²` of a covariance.
#[derive(Debug, Clone)]
pub struct MaxEntropySpectrum {
    first_column: CVector,
    corner: f64,
}

impl MaxEntropySpectrum {
    /// Prepares the spectrum of `scm`. With fewer snapshots than elements the
    /// sample covariance is singular, so `10⁻⁶·tr(R̂)/L` is added to the
    /// diagonal first.
    pub fn new(scm: &HermitianMatrix, snapshots: usize) -> Result<Self> {
        let l = scm.dim();
        let loaded;
        let r = if snapshots < l {
            loaded = scm.plus_identity(1e-6 * scm.trace() / l as f64);
            &loaded
        } else {
            scm
        };
        let mut e1 = CVector::zeros(l);
        e1[0] = Complex::new(1.0, 0.0);
        let first_column = r.solve(&e1)?;
        let corner = first_column[0].re;
        if !(corner > 0.0) {
            return Err(Error::SingularMatrix);
        }
        Ok(Self { first_column, corner })
    }

    pub fn power(&self, theta_deg: f64, geometry: &ArrayGeometry) -> Result<f64> {
        let a = steering_vector(theta_deg, geometry)?;
        if a.len() != self.first_column.len() {
            return Err(Error::Dimension { expected: self.first_column.len(), found: a.len() });
        }
        let denom = a.dotc(&self.first_column).norm_sqr();
        let p = self.corner / denom;
        if p.is_finite() && p > 0.0 {
            Ok(p)
        } else {
            Err(Error::SingularMatrix)
        }
    }
}

/// `R̂_s = Σ σ̂²(θ_i) a(θ_i) a(θ_i)^H Δθ` over the sector samples, with `Δθ`
/// in radians.
pub fn soi_covariance(
    spectrum: &MaxEntropySpectrum,
    sector: &SoiSector,
    geometry: &ArrayGeometry,
) -> Result<HermitianMatrix> {
    let step = sector.spacing_deg().to_radians();
    let mut rs = HermitianMatrix::zeros(geometry.len());
    for theta in sector.sample_angles() {
        let p = spectrum.power(theta, geometry)?;
        rs.add_outer(&steering_vector(theta, geometry)?, p * step);
    }
    Ok(rs)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerMethodConfig {
    pub tolerance: f64,
    pub max_iterations: usize,
}

impl Default for PowerMethodConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-3,
            max_iterations: 50,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PowerMethodResult {
    /// Rayleigh quotient `b^H R b` of the final iterate.
    pub eigenvalue: f64,
    #[serde(skip)]
    pub eigenvector: CVector,
    pub iterations: usize,
    pub final_err: f64,
    pub converged: bool,
}

fn is_null(v: &CVector, m: &HermitianMatrix, b: &CVector) -> bool {
    let scale = m.frobenius_sq().sqrt() * b.norm();
    v.norm() <= 1e-14 * scale || scale == 0.0
}

/// Deterministic nudge used when the start vector is annihilated.
fn perturbed_start(b: &CVector) -> CVector {
    let l = b.len() as f64;
    let amp = b.norm().max(1.0) / l.sqrt();
    CVector::from_fn(b.len(), |i, _| b[i] + Complex::from_polar(amp, 1.0 + i as f64))
}

/// Power iteration `b ← R b / ‖R b‖` until `sqrt(1 − |b_j^H b_{j−1}|²) < δ`.
pub fn power_method(
    matrix: &HermitianMatrix,
    start: &CVector,
    config: &PowerMethodConfig,
) -> Result<PowerMethodResult> {
    if start.len() != matrix.dim() {
        return Err(Error::Dimension { expected: matrix.dim(), found: start.len() });
    }
    if !(config.tolerance > 0.0) || config.max_iterations == 0 {
        return Err(Error::InvalidConfig("power method needs δ > 0 and at least one iteration".into()));
    }
    if start.norm() == 0.0 {
        return Err(Error::NullStart);
    }

    let mut b = start.normalize();
    let mut v = matrix.mul_vec(&b);
    if is_null(&v, matrix, &b) {
        b = perturbed_start(start).normalize();
        v = matrix.mul_vec(&b);
        if is_null(&v, matrix, &b) {
            return Err(Error::NullStart);
        }
    }

    let mut iterations = 0;
    let mut err = f64::INFINITY;
    let mut converged = false;
    while iterations < config.max_iterations {
        if iterations > 0 {
            v = matrix.mul_vec(&b);
        }
        let next = v.unscale(v.norm());
        let overlap = next.dotc(&b).norm_sqr();
        err = (1.0 - overlap).max(0.0).sqrt();
        b = next;
        iterations += 1;
        if err < config.tolerance {
            converged = true;
            break;
        }
    }
    Ok(PowerMethodResult {
        eigenvalue: matrix.quad_form(&b),
        eigenvector: b,
        iterations,
        final_err: err,
        converged,
    })
}

/// Estimated desired-signal steering vector and the intermediate results.
#[derive(Debug, Clone)]
pub struct SoiEstimate {
    pub covariance: HermitianMatrix,
    pub power: PowerMethodResult,
}

/// Full desired-signal step: spectrum, sector covariance and power iteration
/// started from the nominal steering vector at the sector center.
pub fn estimate_soi(
    scm: &HermitianMatrix,
    snapshots: usize,
    sector: &SoiSector,
    geometry: &ArrayGeometry,
    config: &PowerMethodConfig,
) -> Result<SoiEstimate> {
    let spectrum = MaxEntropySpectrum::new(scm, snapshots)?;
    let covariance = soi_covariance(&spectrum, sector, geometry)?;
    let start = steering_vector(sector.center_deg, geometry)?;
    let power = power_method(&covariance, &start, config)?;
    Ok(SoiEstimate { covariance, power })
}
