//! Array geometry, steering vectors, mismatch models and snapshot synthesis.
//!
//! Angles are in degrees at every public entry point. Element positions are
//! measured in wavelengths, so the nominal half-wavelength ULA has positions
//! `0, 0.5, 1.0, ...` and element `l` of the steering vector is
//! `exp(-j 2π p_l sin θ) / sqrt(L)`.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::{CMatrix, CVector, Complex, Error, Result};

/// Element spacing of the nominal array, in wavelengths.
pub const HALF_WAVELENGTH: f64 = 0.5;

/// Sensor positions of a linear array, in wavelengths.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayGeometry {
    positions: Vec<f64>,
}

impl ArrayGeometry {
    pub fn new(positions: Vec<f64>) -> Result<Self> {
        if positions.is_empty() {
            return Err(Error::InvalidGeometry("no elements".into()));
        }
        if positions.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidGeometry("non-finite position".into()));
        }
        if positions.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidGeometry(
                "positions must be strictly increasing".into(),
            ));
        }
        Ok(Self { positions })
    }

    /// Half-wavelength uniform linear array with `elements` sensors.
    pub fn uniform(elements: usize) -> Result<Self> {
        Self::uniform_with_spacing(elements, HALF_WAVELENGTH)
    }

    pub fn uniform_with_spacing(elements: usize, spacing: f64) -> Result<Self> {
        if !(spacing > 0.0) {
            return Err(Error::InvalidGeometry("spacing must be positive".into()));
        }
        Self::new((0..elements).map(|l| spacing * l as f64).collect())
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    /// Each position shifted by an independent uniform draw from `[-bound, bound]`.
    pub fn perturbed<R: Rng + ?Sized>(&self, bound: f64, rng: &mut R) -> Result<Self> {
        if bound == 0.0 {
            return Ok(self.clone());
        }
        let dist = Uniform::new_inclusive(-bound, bound)
            .map_err(|e| Error::InvalidGeometry(e.to_string()))?;
        Self::new(self.positions.iter().map(|p| p + dist.sample(rng)).collect())
    }
}

/// Which model mismatch is applied when a scenario is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MismatchKind {
    #[default]
    None,
    /// Every source direction is offset by a uniform error in `±look_bound`.
    LookDirection,
    /// `a(θ) + e` with `‖e‖` uniform in `[0, epsilon_bound]` and random element phases.
    RandomSv,
    /// Per-sensor gain/phase calibration errors, plus a look-direction error on the SOI.
    GainPhase,
    /// Sensor positions perturbed uniformly by up to `position_bound` wavelengths.
    Geometry,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MismatchSpec {
    pub kind: MismatchKind,
    /// Degrees.
    pub look_bound: f64,
    pub epsilon_bound: f64,
    pub gain_std: f64,
    /// Radians.
    pub phase_std: f64,
    /// Wavelengths.
    pub position_bound: f64,
}

impl Default for MismatchSpec {
    fn default() -> Self {
        Self {
            kind: MismatchKind::None,
            look_bound: 4.0,
            epsilon_bound: 0.3f64.sqrt(),
            gain_std: 0.05,
            phase_std: 0.025 * PI,
            position_bound: 0.05,
        }
    }
}

impl MismatchSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn of_kind(kind: MismatchKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bounds = [
            self.look_bound,
            self.epsilon_bound,
            self.gain_std,
            self.phase_std,
            self.position_bound,
        ];
        if bounds.iter().any(|b| !(b.is_finite() && *b >= 0.0)) {
            return Err(Error::InvalidScenario(
                "mismatch bounds must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }
}

/// Nominal steering vector `a(θ)`, unit norm.
pub fn steering_vector(theta_deg: f64, geometry: &ArrayGeometry) -> Result<CVector> {
    if geometry.is_empty() {
        return Err(Error::InvalidGeometry("no elements".into()));
    }
    Ok(steering_on_positions(theta_deg, geometry.positions()))
}

fn steering_on_positions(theta_deg: f64, positions: &[f64]) -> CVector {
    let scale = 1.0 / (positions.len() as f64).sqrt();
    let s = theta_deg.to_radians().sin();
    CVector::from_iterator(
        positions.len(),
        positions
            .iter()
            .map(|p| Complex::from_polar(scale, -2.0 * PI * p * s)),
    )
}

/// Derivative of the nominal steering vector with respect to θ in radians.
pub fn steering_derivative(theta_deg: f64, geometry: &ArrayGeometry) -> Result<CVector> {
    let a = steering_vector(theta_deg, geometry)?;
    let c = theta_deg.to_radians().cos();
    Ok(CVector::from_iterator(
        a.len(),
        a.iter()
            .zip(geometry.positions())
            .map(|(al, p)| al * Complex::new(0.0, -2.0 * PI * p * c)),
    ))
}

/// Sensor-level errors drawn once per scenario realization and shared by all sources.
#[derive(Debug, Clone)]
struct SensorErrors {
    factors: Option<Vec<Complex>>,
    geometry: ArrayGeometry,
}

impl SensorErrors {
    fn draw<R: Rng + ?Sized>(
        geometry: &ArrayGeometry,
        mismatch: &MismatchSpec,
        rng: &mut R,
    ) -> Result<Self> {
        match mismatch.kind {
            MismatchKind::GainPhase => {
                let gain = normal(mismatch.gain_std)?;
                let phase = normal(mismatch.phase_std)?;
                let factors = (0..geometry.len())
                    .map(|_| {
                        let g = gain.sample(rng);
                        let ph = phase.sample(rng);
                        Complex::from_polar(1.0 + g, ph)
                    })
                    .collect();
                Ok(Self {
                    factors: Some(factors),
                    geometry: geometry.clone(),
                })
            }
            MismatchKind::Geometry => Ok(Self {
                factors: None,
                geometry: geometry.perturbed(mismatch.position_bound, rng)?,
            }),
            _ => Ok(Self {
                factors: None,
                geometry: geometry.clone(),
            }),
        }
    }

    fn steering(&self, theta_deg: f64) -> CVector {
        let mut a = steering_on_positions(theta_deg, self.geometry.positions());
        if let Some(f) = &self.factors {
            for (al, fl) in a.iter_mut().zip(f) {
                *al *= fl;
            }
        }
        a
    }
}

fn normal(std: f64) -> Result<Normal<f64>> {
    Normal::new(0.0, std).map_err(|e| Error::InvalidScenario(e.to_string()))
}

fn look_offset<R: Rng + ?Sized>(bound: f64, rng: &mut R) -> Result<f64> {
    if bound == 0.0 {
        return Ok(0.0);
    }
    let d = Uniform::new_inclusive(-bound, bound).map_err(|e| Error::InvalidScenario(e.to_string()))?;
    Ok(d.sample(rng))
}

fn random_sv_error<R: Rng + ?Sized>(len: usize, bound: f64, rng: &mut R) -> Result<CVector> {
    if bound == 0.0 {
        return Ok(CVector::zeros(len));
    }
    let eps = Uniform::new_inclusive(0.0, bound)
        .map_err(|e| Error::InvalidScenario(e.to_string()))?
        .sample(rng);
    let scale = eps / (len as f64).sqrt();
    Ok(CVector::from_iterator(
        len,
        (0..len).map(|_| Complex::from_polar(scale, rng.random_range(0.0..2.0 * PI))),
    ))
}

/// Steering vector for a single source after one draw of the mismatch model.
///
/// For `GainPhase` the draw includes the look-direction offset that the
/// gain/phase scenario applies to the desired signal.
pub fn perturbed_steering<R: Rng + ?Sized>(
    theta_deg: f64,
    geometry: &ArrayGeometry,
    mismatch: &MismatchSpec,
    rng: &mut R,
) -> Result<CVector> {
    mismatch.validate()?;
    let nominal = steering_vector(theta_deg, geometry)?;
    match mismatch.kind {
        MismatchKind::None => Ok(nominal),
        MismatchKind::LookDirection => {
            let dt = look_offset(mismatch.look_bound, rng)?;
            steering_vector(theta_deg + dt, geometry)
        }
        MismatchKind::RandomSv => Ok(nominal + random_sv_error(geometry.len(), mismatch.epsilon_bound, rng)?),
        MismatchKind::GainPhase => {
            let dt = look_offset(mismatch.look_bound, rng)?;
            Ok(SensorErrors::draw(geometry, mismatch, rng)?.steering(theta_deg + dt))
        }
        MismatchKind::Geometry => Ok(SensorErrors::draw(geometry, mismatch, rng)?.steering(theta_deg)),
    }
}

/// Scenario template: nominal source parameters before any mismatch draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub soi_doa_deg: f64,
    pub soi_power: f64,
    pub interferer_doas_deg: Vec<f64>,
    pub interferer_powers: Vec<f64>,
    pub noise_power: f64,
    pub snapshots: usize,
    pub mismatch: MismatchSpec,
}

impl Scenario {
    /// SOI at 0°, interferers at 30° and 50° with 30 dB INR, unit noise, K = 100.
    pub fn paper_default(snr_db: f64) -> Self {
        let inr = crate::db_to_linear(30.0);
        Self {
            soi_doa_deg: 0.0,
            soi_power: crate::db_to_linear(snr_db),
            interferer_doas_deg: vec![30.0, 50.0],
            interferer_powers: vec![inr, inr],
            noise_power: 1.0,
            snapshots: 100,
            mismatch: MismatchSpec::none(),
        }
    }

    pub fn with_mismatch(mut self, mismatch: MismatchSpec) -> Self {
        self.mismatch = mismatch;
        self
    }

    pub fn with_snapshots(mut self, k: usize) -> Self {
        self.snapshots = k;
        self
    }

    pub fn interferer_count(&self) -> usize {
        self.interferer_doas_deg.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.snapshots == 0 {
            return Err(Error::InvalidScenario("snapshot count must be positive".into()));
        }
        if self.interferer_doas_deg.len() != self.interferer_powers.len() {
            return Err(Error::InvalidScenario(
                "interferer directions and powers differ in length".into(),
            ));
        }
        if !(self.noise_power > 0.0) {
            return Err(Error::InvalidScenario("noise power must be positive".into()));
        }
        let powers = std::iter::once(&self.soi_power).chain(&self.interferer_powers);
        if powers.clone().any(|p| !(p.is_finite() && *p >= 0.0)) {
            return Err(Error::InvalidScenario("powers must be nonnegative".into()));
        }
        self.mismatch.validate()
    }

    /// Truth with the nominal steering vectors, no mismatch drawn.
    pub fn nominal_truth(&self, geometry: &ArrayGeometry) -> Result<ScenarioTruth> {
        let soi_sv = steering_vector(self.soi_doa_deg, geometry)?;
        let interferer_svs = self
            .interferer_doas_deg
            .iter()
            .map(|&t| steering_vector(t, geometry))
            .collect::<Result<Vec<_>>>()?;
        ScenarioTruth::from_parts(
            self.clone(),
            geometry.clone(),
            self.soi_doa_deg,
            self.interferer_doas_deg.clone(),
            soi_sv,
            interferer_svs,
        )
    }

    /// Draws one realization of the mismatch model. The draw is held fixed
    /// for every snapshot generated from the returned truth.
    pub fn realize<R: Rng + ?Sized>(
        &self,
        geometry: &ArrayGeometry,
        rng: &mut R,
    ) -> Result<ScenarioTruth> {
        self.validate()?;
        let m = &self.mismatch;
        let sensors = SensorErrors::draw(geometry, m, rng)?;
        let mut doas = Vec::with_capacity(1 + self.interferer_count());
        let mut svs = Vec::with_capacity(1 + self.interferer_count());
        let nominal = std::iter::once(self.soi_doa_deg).chain(self.interferer_doas_deg.iter().copied());
        for (index, theta) in nominal.enumerate() {
            let offset = match m.kind {
                MismatchKind::LookDirection => look_offset(m.look_bound, rng)?,
                MismatchKind::GainPhase if index == 0 => look_offset(m.look_bound, rng)?,
                _ => 0.0,
            };
            let actual = theta + offset;
            let mut sv = sensors.steering(actual);
            if m.kind == MismatchKind::RandomSv {
                sv += random_sv_error(geometry.len(), m.epsilon_bound, rng)?;
            }
            doas.push(actual);
            svs.push(sv);
        }
        let soi_sv = svs.remove(0);
        let soi_doa = doas.remove(0);
        ScenarioTruth::from_parts(self.clone(), geometry.clone(), soi_doa, doas, soi_sv, svs)
    }
}

/// Ground truth of one scenario realization.
#[derive(Debug, Clone)]
pub struct ScenarioTruth {
    pub params: Scenario,
    /// Nominal (presumed) array geometry.
    pub geometry: ArrayGeometry,
    pub actual_soi_doa_deg: f64,
    pub actual_interferer_doas_deg: Vec<f64>,
    pub soi_sv: CVector,
    pub interferer_svs: Vec<CVector>,
}

impl ScenarioTruth {
    pub fn from_parts(
        params: Scenario,
        geometry: ArrayGeometry,
        actual_soi_doa_deg: f64,
        actual_interferer_doas_deg: Vec<f64>,
        soi_sv: CVector,
        interferer_svs: Vec<CVector>,
    ) -> Result<Self> {
        params.validate()?;
        let l = geometry.len();
        if interferer_svs.len() != params.interferer_count()
            || actual_interferer_doas_deg.len() != params.interferer_count()
        {
            return Err(Error::InvalidScenario("interferer count mismatch".into()));
        }
        for sv in std::iter::once(&soi_sv).chain(&interferer_svs) {
            if sv.len() != l {
                return Err(Error::Dimension { expected: l, found: sv.len() });
            }
        }
        Ok(Self {
            params,
            geometry,
            actual_soi_doa_deg,
            actual_interferer_doas_deg,
            soi_sv,
            interferer_svs,
        })
    }

    pub fn elements(&self) -> usize {
        self.geometry.len()
    }
}

/// `K` received vectors of length `L`, stored as the columns of an `L × K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotSet {
    data: CMatrix,
}

impl SnapshotSet {
    pub fn from_matrix(data: CMatrix) -> Result<Self> {
        if data.ncols() == 0 {
            return Err(Error::InsufficientData { needed: 1, found: 0 });
        }
        if data.nrows() == 0 {
            return Err(Error::InvalidGeometry("no elements".into()));
        }
        Ok(Self { data })
    }

    pub fn from_vectors(vectors: &[CVector]) -> Result<Self> {
        let first = vectors
            .first()
            .ok_or(Error::InsufficientData { needed: 1, found: 0 })?;
        let l = first.len();
        if let Some(bad) = vectors.iter().find(|v| v.len() != l) {
            return Err(Error::Dimension { expected: l, found: bad.len() });
        }
        Self::from_matrix(CMatrix::from_columns(vectors))
    }

    /// Number of snapshots `K`.
    pub fn len(&self) -> usize {
        self.data.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.data.ncols() == 0
    }

    /// Vector length `L`.
    pub fn elements(&self) -> usize {
        self.data.nrows()
    }

    pub fn snapshot(&self, t: usize) -> CVector {
        self.data.column(t).into_owned()
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.data
    }

    pub fn iter(&self) -> impl Iterator<Item = nalgebra::DVectorView<'_, Complex>> {
        self.data.column_iter()
    }
}

fn complex_gaussian<R: Rng + ?Sized>(power: f64, rng: &mut R) -> Complex {
    let s = (power / 2.0).sqrt();
    let re: f64 = StandardNormal.sample(rng);
    let im: f64 = StandardNormal.sample(rng);
    Complex::new(s * re, s * im)
}

/// Synthesizes `x(t) = s(t) a_s + Σ i_p(t) a_p + n(t)` with independent
/// circular complex Gaussian waveforms and white noise.
pub fn generate_snapshots<R: Rng + ?Sized>(truth: &ScenarioTruth, rng: &mut R) -> Result<SnapshotSet> {
    let p = &truth.params;
    p.validate()?;
    let l = truth.elements();
    let k = p.snapshots;
    let mut data = DMatrix::<Complex>::zeros(l, k);
    for t in 0..k {
        let mut col = truth.soi_sv.clone() * complex_gaussian(p.soi_power, rng);
        for (sv, &power) in truth.interferer_svs.iter().zip(&p.interferer_powers) {
            col.axpy(complex_gaussian(power, rng), sv, Complex::new(1.0, 0.0));
        }
        for x in col.iter_mut() {
            *x += complex_gaussian(p.noise_power, rng);
        }
        data.set_column(t, &col);
    }
    SnapshotSet::from_matrix(data)
}
