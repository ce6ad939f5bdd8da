//! Interference-plus-noise covariance reconstruction.
//!
//! A preprocessing matrix `C` is summed from steering outer products over the
//! interference sectors and combined with a scaled identity,
//! `R̃ = η̃ I + ρ̃ C`, with weights estimated in closed form from the data.

use serde::Serialize;

use crate::covariance::HermitianMatrix;
use crate::doa::SectorSpec;
use crate::signal_model::{steering_vector, ArrayGeometry, SnapshotSet};
use crate::{Error, Result};

/// `C = Σ_p Σ_ℓ a(ψ_ℓ) a(ψ_ℓ)^H` over every sector bin.
pub fn preprocessing_matrix(sectors: &SectorSpec, geometry: &ArrayGeometry) -> Result<HermitianMatrix> {
    if sectors.sectors.is_empty() {
        return Err(Error::InvalidSectors("no interference sectors".into()));
    }
    let mut c = HermitianMatrix::zeros(geometry.len());
    for sector in &sectors.sectors {
        for psi in sector.angles_deg(sectors.grid_size) {
            c.add_outer(&steering_vector(psi, geometry)?, 1.0);
        }
    }
    Ok(c)
}

/// Data-driven shrinkage weights and the quantities they are built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShrinkageStats {
    /// `tr(R̂)/L`.
    pub mu_hat: f64,
    /// Estimated sampling error `E‖R̂ − R‖²`.
    pub zeta_hat: f64,
    pub eta_hat: f64,
    pub rho_hat: f64,
    pub eta_tilde: f64,
    pub rho_tilde: f64,
}

/// `ζ̂ = (1/K²) Σ_t ‖x(t)x(t)^H − R̂‖²`.
///
/// Expanding the norm gives `(1/K²)Σ‖x‖⁴ − (1/K)‖R̂‖²` when `R̂` is the sample
/// covariance of the same snapshots; the centered form avoids cancellation
/// and is exactly zero for a single snapshot.
pub fn zeta_hat(snapshots: &SnapshotSet, scm: &HermitianMatrix) -> Result<f64> {
    let k = snapshots.len();
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    if snapshots.elements() != scm.dim() {
        return Err(Error::Dimension { expected: scm.dim(), found: snapshots.elements() });
    }
    let r = scm.as_matrix();
    let total: f64 = snapshots
        .iter()
        .map(|x| (x * x.adjoint() - r).norm_squared())
        .sum();
    Ok(total / (k * k) as f64)
}

/// Shrinkage weights from the snapshots, their sample covariance and `C`.
pub fn shrinkage_stats(
    snapshots: &SnapshotSet,
    scm: &HermitianMatrix,
    c: &HermitianMatrix,
) -> Result<ShrinkageStats> {
    if c.dim() != scm.dim() {
        return Err(Error::Dimension { expected: scm.dim(), found: c.dim() });
    }
    let l = scm.dim() as f64;
    let mu_hat = scm.trace() / l;
    let zeta_hat = zeta_hat(snapshots, scm)?;
    stats_from_parts(mu_hat, zeta_hat, c)
}

/// Closed-form weights given `μ̂`, `ζ̂` and `C`.
pub fn stats_from_parts(mu_hat: f64, zeta_hat: f64, c: &HermitianMatrix) -> Result<ShrinkageStats> {
    let l = c.dim() as f64;
    let spread = c.plus_identity(-mu_hat).frobenius_sq();
    if !(mu_hat > 0.0) || spread < 1e-14 * l * mu_hat * mu_hat {
        return Err(Error::DegenerateShrinkage);
    }
    let ratio = zeta_hat / spread;
    let eta_hat = ratio * mu_hat;
    let rho_hat = 1.0 - ratio;
    let eta_tilde = eta_hat.min(mu_hat).max(0.0);
    let rho_tilde = (1.0 - eta_tilde / mu_hat).clamp(0.0, 1.0);
    Ok(ShrinkageStats {
        mu_hat,
        zeta_hat,
        eta_hat,
        rho_hat,
        eta_tilde,
        rho_tilde,
    })
}

/// Reconstructed covariance `η̃ I + ρ̃ C`.
#[derive(Debug, Clone)]
pub struct Reconstruction {
    pub matrix: HermitianMatrix,
    /// Set when `η̃ = 0` and `C` is singular, so the result is only
    /// semidefinite and needs loading before inversion.
    pub psd_only: bool,
}

pub fn reconstruct_ipnc(c: &HermitianMatrix, stats: &ShrinkageStats) -> Reconstruction {
    let matrix = c.scaled(stats.rho_tilde).plus_identity(stats.eta_tilde);
    let psd_only = stats.eta_tilde == 0.0 && c.rank(1e-12) < c.dim();
    Reconstruction { matrix, psd_only }
}

/// Everything produced on the way from snapshots to `R̃`.
#[derive(Debug, Clone)]
pub struct PpbssOutcome {
    pub preprocessing: HermitianMatrix,
    pub stats: ShrinkageStats,
    pub reconstruction: Reconstruction,
}

pub fn reconstruct_from_sectors(
    snapshots: &SnapshotSet,
    scm: &HermitianMatrix,
    sectors: &SectorSpec,
    geometry: &ArrayGeometry,
) -> Result<PpbssOutcome> {
    let preprocessing = preprocessing_matrix(sectors, geometry)?;
    let stats = shrinkage_stats(snapshots, scm, &preprocessing)?;
    let reconstruction = reconstruct_ipnc(&preprocessing, &stats);
    Ok(PpbssOutcome {
        preprocessing,
        stats,
        reconstruction,
    })
}

/// `β = ‖R‖² − tr²(R)/L`, the spread of `R` around its scaled identity.
pub fn spread_beta(r: &HermitianMatrix) -> f64 {
    let l = r.dim() as f64;
    let t = r.trace();
    r.frobenius_sq() - t * t / l
}

/// Optimal `(η₀, ρ₀)` for a known target, given `ζ = E‖C − R‖²`.
pub fn oracle_weights(r: &HermitianMatrix, zeta: f64) -> (f64, f64) {
    let beta = spread_beta(r);
    let rho = beta / (beta + zeta);
    let eta = (1.0 - rho) * r.trace() / r.dim() as f64;
    (eta, rho)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::covariance::sample_covariance;
    use crate::doa::{sector_from_range, Sector};
    use crate::rng::{SeedSource, Stream};
    use crate::signal_model::{generate_snapshots, Scenario};
    use crate::{CMatrix, CVector, Complex};
    use approx::assert_relative_eq;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn ula(l: usize) -> ArrayGeometry {
        ArrayGeometry::uniform(l).unwrap()
    }

    fn spec(sectors: Vec<Sector>) -> SectorSpec {
        SectorSpec { grid_size: 360, sectors }
    }

    fn literal_zeta(x: &SnapshotSet, r: &HermitianMatrix) -> f64 {
        let k = x.len() as f64;
        let fourth: f64 = x.iter().map(|v| v.norm_squared().powi(2)).sum();
        fourth / (k * k) - r.frobenius_sq() / k
    }

    fn random_snapshots<R: Rng>(l: usize, k: usize, rng: &mut R) -> SnapshotSet {
        let m = CMatrix::from_fn(l, k, |_, _| {
            Complex::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        SnapshotSet::from_matrix(m).unwrap()
    }

    #[test]
    fn single_bin_sector() {
        let g = ula(12);
        let c = preprocessing_matrix(&spec(vec![sector_from_range(0.0, 0.5, 360).unwrap()]), &g).unwrap();
        let a = steering_vector(0.0, &g).unwrap();
        assert_relative_eq!(c.trace(), 1.0, epsilon = 1e-12);
        assert_eq!(c.rank(1e-10), 1);
        assert!((c.as_matrix() - &a * a.adjoint()).norm() < 1e-12);
    }

    #[test]
    fn trace_counts_bins() {
        let g = ula(12);
        let s = spec(vec![
            sector_from_range(0.0, 20.5, 360).unwrap(),
            sector_from_range(0.0, 60.5, 360).unwrap(),
        ]);
        assert_relative_eq!(preprocessing_matrix(&s, &g).unwrap().trace(), 2.0, epsilon = 1e-12);
        assert!(matches!(
            preprocessing_matrix(&spec(vec![]), &g),
            Err(Error::InvalidSectors(_))
        ));
    }

    #[test]
    fn two_sector_spectrum() {
        let g = ula(12);
        let s = spec(vec![
            sector_from_range(4.0, 30.0, 360).unwrap(),
            sector_from_range(4.0, 50.0, 360).unwrap(),
        ]);
        let c = preprocessing_matrix(&s, &g).unwrap();
        assert_relative_eq!(c.trace(), 8.0, epsilon = 1e-12);
        // oracle: two dominant eigenvalues, the rest a few percent at most
        let ev = c.eigenvalues();
        let max = ev[11];
        assert!(ev[10] > 0.5 * max);
        assert!(ev[..10].iter().all(|&v| v < 0.05 * max), "{ev:?}");
        assert!(ev[..10].iter().sum::<f64>() < 0.05 * c.trace(), "{ev:?}");
    }

    #[test]
    fn single_snapshot_gives_pure_preprocessing() {
        let g = ula(6);
        let x = SnapshotSet::from_vectors(&[CVector::from_fn(6, |i, _| Complex::new(i as f64, 1.0))]).unwrap();
        let r = sample_covariance(&x).unwrap();
        assert_eq!(zeta_hat(&x, &r).unwrap(), 0.0);
        let c = preprocessing_matrix(&spec(vec![sector_from_range(2.0, 30.0, 360).unwrap()]), &g).unwrap();
        let st = shrinkage_stats(&x, &r, &c).unwrap();
        assert_eq!(st.eta_tilde, 0.0);
        assert_eq!(st.rho_tilde, 1.0);
        let rec = reconstruct_ipnc(&c, &st);
        assert!(rec.psd_only);
        assert!((rec.matrix.as_matrix() - c.as_matrix()).norm() < 1e-15);
    }

    #[test]
    fn identical_snapshots_have_zero_spread() {
        let x0 = CVector::from_fn(4, |i, _| Complex::new(1.0, -(i as f64)));
        let x = SnapshotSet::from_vectors(&vec![x0; 20]).unwrap();
        let r = sample_covariance(&x).unwrap();
        assert!(zeta_hat(&x, &r).unwrap().abs() < 1e-12 * r.frobenius_sq());
    }

    #[test]
    fn zeta_matches_literal_on_default_scenario() {
        let g = ula(12);
        let truth = Scenario::paper_default(0.0).nominal_truth(&g).unwrap();
        let x = generate_snapshots(&truth, &mut SeedSource::new(31).stream(0, Stream::Waveforms)).unwrap();
        let r = sample_covariance(&x).unwrap();
        assert_relative_eq!(zeta_hat(&x, &r).unwrap(), literal_zeta(&x, &r), max_relative = 1e-10);
    }

    #[test]
    fn identity_preprocessing_is_degenerate() {
        let mut rng = SeedSource::new(32).stream(0, Stream::Auxiliary);
        let x = random_snapshots(4, 10, &mut rng);
        let r = sample_covariance(&x).unwrap();
        let c = HermitianMatrix::identity(4).scaled(r.trace() / 4.0);
        assert!(matches!(shrinkage_stats(&x, &r, &c), Err(Error::DegenerateShrinkage)));
    }

    #[test]
    fn pure_loading_and_pure_preprocessing() {
        let g = ula(8);
        let c = preprocessing_matrix(&spec(vec![sector_from_range(3.0, 40.0, 360).unwrap()]), &g).unwrap();
        let mut st = stats_from_parts(1.0, 0.1, &c).unwrap();
        st.eta_tilde = 2.0;
        st.rho_tilde = 0.0;
        let rec = reconstruct_ipnc(&c, &st);
        assert!((rec.matrix.as_matrix() - HermitianMatrix::identity(8).scaled(2.0).as_matrix()).norm() < 1e-15);
        assert!(!rec.psd_only);
    }

    #[test]
    fn eigenvalues_shift_and_scale() {
        let g = ula(8);
        let c = preprocessing_matrix(&spec(vec![sector_from_range(6.0, -40.0, 360).unwrap()]), &g).unwrap();
        let st = stats_from_parts(2.0, 3.0, &c).unwrap();
        let rec = reconstruct_ipnc(&c, &st);
        let expected: Vec<f64> = c
            .eigenvalues()
            .iter()
            .map(|gam| st.eta_tilde + st.rho_tilde * gam)
            .collect();
        for (a, b) in rec.matrix.eigenvalues().iter().zip(expected) {
            assert_relative_eq!(*a, b, epsilon = 1e-10);
        }
    }

    fn random_psd<R: Rng>(l: usize, rng: &mut R) -> HermitianMatrix {
        let m = CMatrix::from_fn(l, l, |_, _| {
            Complex::new(StandardNormal.sample(rng), StandardNormal.sample(rng))
        });
        HermitianMatrix::from_matrix(&m * m.adjoint()).unwrap()
    }

    #[test]
    fn beta_positive_for_non_identity() {
        let src = SeedSource::new(33);
        for trial in 0..200 {
            let r = random_psd(5, &mut src.stream(trial, Stream::Auxiliary));
            assert!(spread_beta(&r) > 0.0);
        }
        assert!(spread_beta(&HermitianMatrix::identity(5).scaled(3.0)).abs() < 1e-12);
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(64))]

        #[test]
        fn clamped_weights_in_range(mu in 1e-6f64..1e3, zeta in 0.0f64..1e6, theta in -80.0f64..80.0, width in 0.0f64..20.0) {
            let g = ula(8);
            let c = preprocessing_matrix(&spec(vec![sector_from_range(width, theta, 360).unwrap()]), &g).unwrap();
            if let Ok(st) = stats_from_parts(mu, zeta, &c) {
                proptest::prop_assert!((0.0..=1.0).contains(&st.rho_tilde));
                proptest::prop_assert!(st.eta_tilde >= 0.0 && st.eta_tilde <= mu);
                proptest::prop_assert!((st.rho_tilde - (1.0 - st.eta_tilde / mu)).abs() < 1e-12);
            }
        }

        #[test]
        fn zeta_unitary_invariant(seed in 0u64..1000, angle in 0.0f64..6.28) {
            let mut rng = SeedSource::new(seed).stream(0, Stream::Auxiliary);
            let x = random_snapshots(4, 12, &mut rng);
            // unitary = random phase diagonal times a fixed rotation in the first two axes
            let mut u = CMatrix::identity(4, 4);
            let (s, c) = angle.sin_cos();
            u[(0, 0)] = Complex::new(c, 0.0);
            u[(0, 1)] = Complex::new(-s, 0.0);
            u[(1, 0)] = Complex::new(s, 0.0);
            u[(1, 1)] = Complex::new(c, 0.0);
            for i in 0..4 {
                let ph: f64 = rng.random::<f64>() * 6.28;
                let col = u.column(i) * Complex::from_polar(1.0, ph);
                u.set_column(i, &col);
            }
            let y = SnapshotSet::from_matrix(&u * x.matrix()).unwrap();
            let zx = zeta_hat(&x, &sample_covariance(&x).unwrap()).unwrap();
            let zy = zeta_hat(&y, &sample_covariance(&y).unwrap()).unwrap();
            proptest::prop_assert!((zx - zy).abs() <= 1e-9 * zx.abs().max(1.0));
        }

        #[test]
        fn reconstruction_shares_eigenbasis(theta in -70.0f64..70.0, width in 1.0f64..15.0, eta in 0.01f64..5.0, rho in 0.0f64..1.0) {
            let g = ula(8);
            let c = preprocessing_matrix(&spec(vec![sector_from_range(width, theta, 360).unwrap()]), &g).unwrap();
            let st = ShrinkageStats { mu_hat: 1.0, zeta_hat: 0.0, eta_hat: eta, rho_hat: rho, eta_tilde: eta, rho_tilde: rho };
            let rec = reconstruct_ipnc(&c, &st).matrix;
            // commuting Hermitian matrices share an eigenbasis
            let comm = rec.as_matrix() * c.as_matrix() - c.as_matrix() * rec.as_matrix();
            proptest::prop_assert!(comm.norm() < 1e-10);
        }
    }
}
