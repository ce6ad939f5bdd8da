//! Interferer direction tracking.
//!
//! A zero-padded DFT of the first snapshot gives coarse directions; each
//! snapshot is then scanned finely around them, the per-snapshot estimates
//! are smoothed with a quadratic fit, and the fitted range is turned into a
//! block of bins on a `Q`-point angular grid covering `[0°, 360°)`.

use nalgebra::{DMatrix, DVector};
use rustfft::FftPlanner;

use crate::signal_model::{steering_vector, ArrayGeometry, SnapshotSet, HALF_WAVELENGTH};
use crate::{CVector, Complex, Error, Result};

const CEIL_SLACK: f64 = 1e-9;

/// `ceil` that ignores rounding noise just above an integer.
fn ceil_tol(x: f64) -> f64 {
    (x - CEIL_SLACK).ceil()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PeakCount {
    Fixed(usize),
    /// Every peak at least `threshold_db` above the median spectrum magnitude.
    Auto { threshold_db: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct CoarseConfig {
    pub fft_len: usize,
    /// Element spacing in wavelengths.
    pub spacing: f64,
    pub count: PeakCount,
    /// Peaks whose angle falls in this closed range (degrees) are skipped.
    pub exclude_deg: Option<(f64, f64)>,
}

impl Default for CoarseConfig {
    fn default() -> Self {
        Self {
            fft_len: 4096,
            spacing: HALF_WAVELENGTH,
            count: PeakCount::Fixed(2),
            exclude_deg: None,
        }
    }
}

fn circular_distance(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(1.0);
    d.min(1.0 - d)
}

/// Coarse directions (degrees, ascending) from the DFT of one snapshot.
///
/// Spectrum peaks must be local maxima at least `1/L` cycles per element
/// apart, the resolution of an `L`-element aperture.
pub fn coarse_doas_dft(snapshot: &CVector, config: &CoarseConfig) -> Result<Vec<f64>> {
    let l = snapshot.len();
    if l < 2 {
        return Err(Error::InvalidGeometry("coarse DFT needs at least two elements".into()));
    }
    let n = config.fft_len.max(l);
    let mut buf: Vec<Complex> = snapshot.iter().copied().collect();
    buf.resize(n, Complex::new(0.0, 0.0));
    // x_l ∝ exp(−j2π f l), so the inverse transform peaks at bin f·N.
    FftPlanner::<f64>::new().plan_fft_inverse(n).process(&mut buf);
    let mag: Vec<f64> = buf.iter().map(|z| z.norm()).collect();

    let mut peaks: Vec<(usize, f64)> = (0..n)
        .filter(|&k| {
            let m = mag[k];
            m > 0.0 && m >= mag[(k + n - 1) % n] && m > mag[(k + 1) % n]
        })
        .map(|k| (k, mag[k]))
        .collect();
    peaks.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));

    let threshold = match config.count {
        PeakCount::Fixed(_) => 0.0,
        PeakCount::Auto { threshold_db } => {
            let mut sorted = mag.clone();
            sorted.sort_by(f64::total_cmp);
            sorted[n / 2] * 10f64.powf(threshold_db / 20.0)
        }
    };
    let wanted = match config.count {
        PeakCount::Fixed(p) => p,
        PeakCount::Auto { .. } => usize::MAX,
    };
    let min_sep = 1.0 / l as f64;

    let mut accepted_freq: Vec<f64> = Vec::new();
    let mut angles = Vec::new();
    for (k, m) in peaks {
        if angles.len() == wanted || m < threshold {
            break;
        }
        let f = k as f64 / n as f64;
        let f = if f >= 0.5 { f - 1.0 } else { f };
        let s = f / config.spacing;
        if s.abs() > 1.0 {
            continue;
        }
        if accepted_freq.iter().any(|&g| circular_distance(f, g) < min_sep) {
            continue;
        }
        let theta = s.asin().to_degrees();
        if let Some((lo, hi)) = config.exclude_deg {
            if (lo..=hi).contains(&theta) {
                continue;
            }
        }
        accepted_freq.push(f);
        angles.push(theta);
    }
    let requested = if wanted == usize::MAX { 1 } else { wanted };
    if angles.len() < requested {
        return Err(Error::InsufficientPeaks { requested, found: angles.len() });
    }
    angles.sort_by(f64::total_cmp);
    Ok(angles)
}

/// Candidate directions `{k·step}` inside `[coarse − c, coarse + c]` with
/// their steering vectors, reused across snapshots.
#[derive(Debug, Clone)]
pub struct FineGrid {
    coarse: f64,
    points: Vec<(f64, CVector)>,
}

impl FineGrid {
    pub fn new(geometry: &ArrayGeometry, coarse: f64, half_width: f64, step: f64) -> Result<Self> {
        if !(half_width > 0.0 && step > 0.0 && step <= 2.0 * half_width) {
            return Err(Error::InvalidConfig(format!(
                "fine scan needs c > 0 and 0 < step ≤ 2c (c = {half_width}, step = {step})"
            )));
        }
        let lo = ((coarse - half_width) / step).ceil() as i64;
        let hi = ((coarse + half_width) / step).floor() as i64;
        let points = (lo..=hi)
            .map(|k| k as f64 * step)
            .filter(|theta| (theta - coarse).abs() <= half_width)
            .map(|theta| Ok((theta, steering_vector(theta, geometry)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { coarse, points })
    }

    /// Grid angle maximizing `|x^H a(θ)|`; ties go to the point nearest the
    /// coarse direction.
    pub fn estimate(&self, snapshot: &CVector) -> Result<f64> {
        let mut best = self.coarse;
        let mut best_mag = f64::NEG_INFINITY;
        for (theta, a) in &self.points {
            if a.len() != snapshot.len() {
                return Err(Error::Dimension { expected: a.len(), found: snapshot.len() });
            }
            let m = a.dotc(snapshot).norm();
            let nearer = (theta - self.coarse).abs() < (best - self.coarse).abs();
            if m > best_mag || (m == best_mag && nearer) {
                best = *theta;
                best_mag = m;
            }
        }
        // a window narrower than the grid spacing keeps the coarse value
        Ok(best)
    }
}

/// Angle on the grid `{k·step}` inside `[coarse − c, coarse + c]` maximizing
/// `|x^H a(θ)|`; ties go to the point nearest `coarse`.
pub fn fine_doa(
    snapshot: &CVector,
    geometry: &ArrayGeometry,
    coarse: f64,
    half_width: f64,
    step: f64,
) -> Result<f64> {
    FineGrid::new(geometry, coarse, half_width, step)?.estimate(snapshot)
}

/// Quadratic fit of one interferer's per-snapshot estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct DoaTrack {
    pub estimates: Vec<f64>,
    /// Coefficients `[c0, c1, c2]` of `c0 + c1 s + c2 s²` in the scaled
    /// time `s = (t − (K+1)/2) / ((K−1)/2)`, `t = 1..K`.
    pub coefficients: [f64; 3],
    pub fitted: Vec<f64>,
    /// `max − min` of the fitted trajectory, degrees.
    pub range_deg: f64,
}

impl DoaTrack {
    pub fn fitted_min(&self) -> f64 {
        self.fitted.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn fitted_max(&self) -> f64 {
        self.fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Midpoint of the fitted range.
    pub fn center(&self) -> f64 {
        0.5 * (self.fitted_max() + self.fitted_min())
    }

    /// Mean of the fitted trajectory (equal to the mean of the raw estimates).
    pub fn mean(&self) -> f64 {
        self.fitted.iter().sum::<f64>() / self.fitted.len() as f64
    }
}

fn scaled_time(t: usize, k: usize) -> f64 {
    let half = (k as f64 - 1.0) / 2.0;
    (t as f64 - (k as f64 + 1.0) / 2.0) / half
}

/// Least-squares quadratic in `t`, solved by QR on the scaled time index.
pub fn fit_trajectory(estimates: &[f64]) -> Result<DoaTrack> {
    let k = estimates.len();
    if k < 3 {
        return Err(Error::InsufficientData { needed: 3, found: k });
    }
    let design = DMatrix::from_fn(k, 3, |i, j| scaled_time(i + 1, k).powi(j as i32));
    let y = DVector::from_column_slice(estimates);
    let qr = design.qr();
    let rhs = qr.q().transpose() * &y;
    let coeff = qr
        .r()
        .solve_upper_triangular(&rhs)
        .ok_or(Error::SingularMatrix)?;
    let coefficients = [coeff[0], coeff[1], coeff[2]];
    let fitted: Vec<f64> = (1..=k)
        .map(|t| {
            let s = scaled_time(t, k);
            coefficients[0] + coefficients[1] * s + coefficients[2] * s * s
        })
        .collect();
    let max = fitted.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let min = fitted.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(DoaTrack {
        estimates: estimates.to_vec(),
        coefficients,
        fitted,
        range_deg: max - min,
    })
}

/// One interferer's block of bins `g, g+1, …, g+B−1` on the `Q`-point grid
/// `ψ_ℓ = (360°/Q)(ℓ − 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sector {
    /// `θ_pc` mapped into `[0°, 360°)`.
    pub center_deg: f64,
    pub width_bins: usize,
    pub start_index: i64,
    pub center_index: i64,
}

impl Sector {
    /// Grid index reduced into `1..=Q`.
    pub fn wrap_index(index: i64, grid_size: usize) -> usize {
        ((index - 1).rem_euclid(grid_size as i64) + 1) as usize
    }

    pub fn indices(&self, grid_size: usize) -> Vec<usize> {
        (0..self.width_bins as i64)
            .map(|o| Self::wrap_index(self.start_index + o, grid_size))
            .collect()
    }

    /// Grid angles `ψ_ℓ` of the sector, in `[0°, 360°)`.
    pub fn angles_deg(&self, grid_size: usize) -> Vec<f64> {
        let bin = 360.0 / grid_size as f64;
        self.indices(grid_size)
            .into_iter()
            .map(|l| (l - 1) as f64 * bin)
            .collect()
    }

    /// Whether `theta` falls in the angular span `[ψ_g, ψ_{g+B}]` of the sector.
    pub fn covers(&self, theta_deg: f64, grid_size: usize) -> bool {
        let bin = 360.0 / grid_size as f64;
        let start = (self.start_index - 1) as f64 * bin;
        let offset = (theta_deg - start).rem_euclid(360.0);
        offset <= self.width_bins as f64 * bin + 1e-9
    }
}

/// All interference sectors on a common grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SectorSpec {
    pub grid_size: usize,
    pub sectors: Vec<Sector>,
}

impl SectorSpec {
    /// Total number of bins `Σ_p B_p`.
    pub fn total_bins(&self) -> usize {
        self.sectors.iter().map(|s| s.width_bins).sum()
    }

    /// Whether any sector grid angle lies in the closed range `[lo, hi]` (degrees).
    pub fn touches(&self, lo: f64, hi: f64) -> bool {
        self.sectors.iter().any(|s| {
            s.angles_deg(self.grid_size).into_iter().any(|psi| {
                let signed = if psi >= 180.0 { psi - 360.0 } else { psi };
                (lo..=hi).contains(&signed)
            })
        })
    }
}

/// Bin width `B`, center bin `N_pc` and start bin `g` for a fitted track.
/// `B` is floored at one bin so a static interferer keeps a nonempty sector.
pub fn sector_indices(track: &DoaTrack, grid_size: usize) -> Result<Sector> {
    if grid_size < 4 {
        return Err(Error::InvalidConfig(format!("grid size {grid_size} < 4")));
    }
    sector_from_range(track.range_deg, track.center(), grid_size)
}

pub fn sector_from_range(range_deg: f64, center_deg: f64, grid_size: usize) -> Result<Sector> {
    if grid_size < 4 {
        return Err(Error::InvalidConfig(format!("grid size {grid_size} < 4")));
    }
    let bin = 360.0 / grid_size as f64;
    let width = (ceil_tol(range_deg / bin).max(1.0) as usize).min(grid_size);
    let center_deg = center_deg.rem_euclid(360.0);
    let center_index = ceil_tol(center_deg / bin) as i64;
    let start_index = ceil_tol(center_index as f64 - width as f64 / 2.0) as i64;
    Ok(Sector {
        center_deg,
        width_bins: width,
        start_index,
        center_index,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrackerConfig {
    pub coarse: CoarseConfig,
    /// Fine-scan half width `c`, degrees.
    pub half_width_deg: f64,
    pub step_deg: f64,
    pub grid_size: usize,
}

impl Default for TrackerConfig {
    fn default() -> Self {
        Self {
            coarse: CoarseConfig::default(),
            half_width_deg: 5.0,
            step_deg: 0.1,
            grid_size: 360,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrackingOutcome {
    pub coarse_deg: Vec<f64>,
    pub tracks: Vec<DoaTrack>,
    pub sectors: SectorSpec,
}

/// Full tracking pass: coarse DFT on the first snapshot, per-snapshot fine
/// scans, quadratic fits and sector bins. Deterministic in its inputs.
pub fn track_interferers(
    snapshots: &SnapshotSet,
    geometry: &ArrayGeometry,
    config: &TrackerConfig,
) -> Result<TrackingOutcome> {
    let coarse_deg = coarse_doas_dft(&snapshots.snapshot(0), &config.coarse)?;
    let mut tracks = Vec::with_capacity(coarse_deg.len());
    let mut sectors = Vec::with_capacity(coarse_deg.len());
    for &coarse in &coarse_deg {
        let grid = FineGrid::new(geometry, coarse, config.half_width_deg, config.step_deg)?;
        let estimates = snapshots
            .iter()
            .map(|x| grid.estimate(&x.into_owned()))
            .collect::<Result<Vec<_>>>()?;
        let track = fit_trajectory(&estimates)?;
        sectors.push(sector_indices(&track, config.grid_size)?);
        tracks.push(track);
    }
    let sectors = SectorSpec {
        grid_size: config.grid_size,
        sectors,
    };
    if let Some((lo, hi)) = config.coarse.exclude_deg {
        if sectors.touches(lo, hi) {
            return Err(Error::InvalidSectors(
                "interference sector overlaps the desired-signal sector".into(),
            ));
        }
    }
    Ok(TrackingOutcome {
        coarse_deg,
        tracks,
        sectors,
    })
}

/// Spatial frequency `d·sinθ` in cycles per element.
pub fn spatial_frequency(theta_deg: f64, spacing: f64) -> f64 {
    spacing * theta_deg.to_radians().sin()
}
