//! MVDR weights, output SINR and beampatterns, plus the reference
//! beamformers used for comparison.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::covariance::{theoretical_ipnc, HermitianMatrix};
use crate::signal_model::{steering_vector, ArrayGeometry, ScenarioTruth};
use crate::{linear_to_db, CMatrix, CVector, Complex, Error, Result};

/// Which covariance and steering vector a weight was built from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    /// Reconstructed covariance and power-method steering vector.
    Ppbss,
    /// True interference-plus-noise covariance and true steering vector.
    Optimal,
    /// Sample covariance with the nominal steering vector.
    Smi,
    /// Sample covariance loaded by ten times the noise power, nominal steering vector.
    DiagonalLoading,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::Ppbss, Method::Optimal, Method::Smi, Method::DiagonalLoading];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Ppbss => "ppbss",
            Method::Optimal => "optimal",
            Method::Smi => "smi",
            Method::DiagonalLoading => "diagonal_loading",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s.trim())
            .ok_or_else(|| Error::InvalidConfig(format!("unknown method '{s}'")))
    }
}

#[derive(Debug, Clone)]
pub struct BeamformerResult {
    pub method: Method,
    pub weights: CVector,
    pub soi_sv_used: CVector,
    pub output_sinr_db: f64,
}

/// `w = R⁻¹a / (a^H R⁻¹ a)`, solved by Cholesky.
pub fn mvdr_weight(r: &HermitianMatrix, a: &CVector) -> Result<CVector> {
    if a.norm() == 0.0 {
        return Err(Error::InvalidConfig("steering vector is zero".into()));
    }
    let y = r.solve(a)?;
    let denom = a.dotc(&y);
    if !(denom.re > 0.0) {
        return Err(Error::SingularMatrix);
    }
    Ok(y.map(|z| z / denom))
}

/// `σ_s² |w^H a_s|² / (w^H R_{i+n} w)` in dB, using the realized steering
/// vectors of `truth`.
pub fn output_sinr_db(w: &CVector, truth: &ScenarioTruth) -> f64 {
    let ipnc = theoretical_ipnc(truth);
    sinr_with(w, truth, &ipnc)
}

fn sinr_with(w: &CVector, truth: &ScenarioTruth, ipnc: &HermitianMatrix) -> f64 {
    let gain = w.dotc(&truth.soi_sv).norm_sqr();
    linear_to_db(truth.params.soi_power * gain / ipnc.quad_form(w))
}

/// `10·log₁₀(σ_s² a_s^H R_{i+n}⁻¹ a_s)`, the largest achievable output SINR.
pub fn optimal_sinr_db(truth: &ScenarioTruth) -> Result<f64> {
    let ipnc = theoretical_ipnc(truth);
    let y = ipnc.solve(&truth.soi_sv)?;
    Ok(linear_to_db(truth.params.soi_power * truth.soi_sv.dotc(&y).re))
}

/// `|w^H a(θ)|` over a grid of directions.
pub fn beampattern(w: &CVector, grid_deg: &[f64], geometry: &ArrayGeometry) -> Result<Vec<f64>> {
    if grid_deg.is_empty() {
        return Err(Error::InvalidConfig("empty beampattern grid".into()));
    }
    grid_deg
        .iter()
        .map(|&theta| Ok(w.dotc(&steering_vector(theta, geometry)?).norm()))
        .collect()
}

/// Eigenpairs of `C` whose eigenvalue exceeds `10⁻¹⁰` of the largest.
fn dominant_eigenspace(c: &HermitianMatrix) -> (Vec<f64>, CMatrix) {
    let eig = c.eigen();
    let top = eig.values.last().copied().unwrap_or(0.0).max(0.0);
    let keep: Vec<usize> = (0..eig.values.len())
        .filter(|&i| top > 0.0 && eig.values[i] > 1e-10 * top)
        .collect();
    let values = keep.iter().map(|&i| eig.values[i]).collect();
    let cols: Vec<CVector> = keep.iter().map(|&i| eig.vectors.column(i).into_owned()).collect();
    let basis = if cols.is_empty() {
        CMatrix::zeros(c.dim(), 0)
    } else {
        CMatrix::from_columns(&cols)
    };
    (values, basis)
}

/// One point of the eigen-approximated beampattern.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ApproxPoint {
    pub magnitude: f64,
    /// `a(θ)` is poorly represented in the dominant eigenspace of `C`, so
    /// the approximation does not apply here.
    pub extrapolated: bool,
}

/// Beampattern of the weight built from `ηI + ρC`, approximated through the
/// eigenpairs `(γ_r, e_r)` of `C`:
/// `D(θ) ≈ (η/‖a_s‖²)·|Σ_r h_r*(θ) u_r / (η + γ_r ρ)|`, with `u = E^H a_s` and
/// `h(θ)` the coordinates of `a(θ)` in `E`.
pub fn approx_beampattern(
    c: &HermitianMatrix,
    eta: f64,
    rho: f64,
    soi_sv: &CVector,
    grid_deg: &[f64],
    geometry: &ArrayGeometry,
) -> Result<Vec<ApproxPoint>> {
    if !(eta > 0.0) || !(rho >= 0.0) {
        return Err(Error::InvalidConfig(format!("need η > 0 and ρ ≥ 0 (η = {eta}, ρ = {rho})")));
    }
    if grid_deg.is_empty() {
        return Err(Error::InvalidConfig("empty beampattern grid".into()));
    }
    let (gammas, basis) = dominant_eigenspace(c);
    let u = basis.adjoint() * soi_sv;
    let scale = eta / soi_sv.norm_squared();
    grid_deg
        .iter()
        .map(|&theta| {
            let a = steering_vector(theta, geometry)?;
            // orthonormal columns, so least squares is a projection
            let h = basis.adjoint() * &a;
            let residual = (&a - &basis * &h).norm() / a.norm();
            let sum: Complex = h
                .iter()
                .zip(u.iter())
                .zip(&gammas)
                .map(|((hr, ur), g)| hr.conj() * ur / (eta + g * rho))
                .sum();
            Ok(ApproxPoint {
                magnitude: scale * sum.norm(),
                extrapolated: residual > 0.1,
            })
        })
        .collect()
}

/// `(ηI + ρC)⁻¹ = (1/η)[I − E(η/ρ·Γ⁻¹ + I)⁻¹E^H]` over the dominant
/// eigenspace of `C`.
pub fn woodbury_inverse(c: &HermitianMatrix, eta: f64, rho: f64) -> Result<CMatrix> {
    if !(eta > 0.0) || !(rho >= 0.0) {
        return Err(Error::InvalidConfig(format!("need η > 0 and ρ ≥ 0 (η = {eta}, ρ = {rho})")));
    }
    let l = c.dim();
    let mut inv = CMatrix::identity(l, l);
    if rho > 0.0 {
        let (gammas, basis) = dominant_eigenspace(c);
        for (r, g) in gammas.iter().enumerate() {
            let e = basis.column(r);
            // (η/(ργ) + 1)⁻¹ = ργ/(η + ργ)
            let w = rho * g / (eta + rho * g);
            inv -= e * e.adjoint() * Complex::new(w, 0.0);
        }
    }
    Ok(inv.unscale(eta))
}

/// Adds `10⁻⁸·tr/L` to the diagonal of a semidefinite-only matrix.
pub fn regularized(r: &HermitianMatrix) -> HermitianMatrix {
    r.plus_identity(1e-8 * r.trace() / r.dim() as f64)
}

/// Builds a weight and scores it against the truth.
pub fn evaluate(
    method: Method,
    covariance: &HermitianMatrix,
    steering: &CVector,
    truth: &ScenarioTruth,
) -> Result<BeamformerResult> {
    let weights = mvdr_weight(covariance, steering)?;
    let output_sinr_db = output_sinr_db(&weights, truth);
    Ok(BeamformerResult {
        method,
        weights,
        soi_sv_used: steering.clone(),
        output_sinr_db,
    })
}

/// Reference beamformer for `method`, which must not be [`Method::Ppbss`].
pub fn baseline(
    method: Method,
    truth: &ScenarioTruth,
    scm: &HermitianMatrix,
    nominal_sv: &CVector,
) -> Result<BeamformerResult> {
    match method {
        Method::Optimal => evaluate(method, &theoretical_ipnc(truth), &truth.soi_sv, truth),
        Method::Smi => evaluate(method, scm, nominal_sv, truth),
        Method::DiagonalLoading => {
            let loaded = scm.plus_identity(10.0 * truth.params.noise_power);
            evaluate(method, &loaded, nominal_sv, truth)
        }
        Method::Ppbss => Err(Error::InvalidConfig("ppbss is not a baseline".into())),
    }
}
