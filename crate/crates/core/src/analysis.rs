//! Cramér–Rao bound for direction estimation and the tracker-vs-bound study.

use rayon::prelude::*;
use serde::Serialize;

use crate::covariance::{sample_covariance, HermitianMatrix};
use crate::doa::{track_interferers, TrackerConfig};
use crate::rng::{SeedSource, Stream};
use crate::signal_model::{generate_snapshots, steering_derivative, steering_vector, Scenario, ScenarioTruth};
use crate::{CMatrix, Complex, Error, Result};
use nalgebra::DMatrix;

const RAD2_TO_DEG2: f64 = (180.0 / std::f64::consts::PI) * (180.0 / std::f64::consts::PI);

/// Which source covariance enters the bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SourceCovariance {
    /// Projected from the sample covariance: `A⁺ R̂ A⁺^H`.
    Sample,
    /// The true uncorrelated powers `diag(σ_s², σ_1², …)`.
    Theoretical,
}

/// Per-source bound, desired signal first, then interferers in scenario order.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrbReport {
    pub directions_deg: Vec<f64>,
    pub bound_deg2: Vec<f64>,
    pub snapshots: usize,
}

impl CrbReport {
    /// Bounds of the interferers only.
    pub fn interferers(&self) -> &[f64] {
        &self.bound_deg2[1..]
    }
}

/// `σ_n²/(2K) · (Re[H ∘ Pᵀ])⁻¹` with `H = Ȧ^H P⊥_A Ȧ`, diagonal converted to deg².
pub fn crb_doa(truth: &ScenarioTruth, scm: &HermitianMatrix, variant: SourceCovariance) -> Result<CrbReport> {
    let geometry = &truth.geometry;
    let directions: Vec<f64> = std::iter::once(truth.actual_soi_doa_deg)
        .chain(truth.actual_interferer_doas_deg.iter().copied())
        .collect();
    let n = directions.len();
    let l = geometry.len();
    if n >= l {
        return Err(Error::RankDeficient);
    }
    if scm.dim() != l {
        return Err(Error::Dimension { expected: l, found: scm.dim() });
    }
    let cols = directions
        .iter()
        .map(|&t| steering_vector(t, geometry))
        .collect::<Result<Vec<_>>>()?;
    let dcols = directions
        .iter()
        .map(|&t| steering_derivative(t, geometry))
        .collect::<Result<Vec<_>>>()?;
    let a = CMatrix::from_columns(&cols);
    let da = CMatrix::from_columns(&dcols);

    let gram = HermitianMatrix::from_matrix(a.adjoint() * &a)?;
    let ev = gram.eigenvalues();
    if ev[0] <= 1e-10 * ev[n - 1] {
        return Err(Error::RankDeficient);
    }
    let gram_inv = gram.as_matrix().clone().cholesky().ok_or(Error::RankDeficient)?.inverse();
    let pinv = &gram_inv * a.adjoint();
    let projector = CMatrix::identity(l, l) - &a * &pinv;
    let h = da.adjoint() * projector * &da;

    let source_cov = match variant {
        SourceCovariance::Sample => &pinv * scm.as_matrix() * pinv.adjoint(),
        SourceCovariance::Theoretical => {
            let powers = std::iter::once(truth.params.soi_power).chain(truth.params.interferer_powers.iter().copied());
            CMatrix::from_diagonal(&nalgebra::DVector::from_iterator(n, powers.map(|p| Complex::new(p, 0.0))))
        }
    };
    let fim = DMatrix::from_fn(n, n, |i, j| (h[(i, j)] * source_cov[(j, i)]).re);
    let fim = (&fim + fim.transpose()) * 0.5;
    let k = truth.params.snapshots as f64;
    let bound = fim
        .cholesky()
        .ok_or(Error::RankDeficient)?
        .inverse()
        * (truth.params.noise_power / (2.0 * k));
    let bound_deg2: Vec<f64> = (0..n).map(|i| bound[(i, i)] * RAD2_TO_DEG2).collect();
    if bound_deg2.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::RankDeficient);
    }
    Ok(CrbReport {
        directions_deg: directions,
        bound_deg2,
        snapshots: truth.params.snapshots,
    })
}

/// One SNR point of the tracker-vs-bound study. Bounds and errors are
/// averaged over the interferers.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MseRow {
    pub snr_db: f64,
    pub mse_deg2: f64,
    /// Bound from each trial's sample covariance, averaged over trials.
    pub crb_deg2: f64,
    pub crb_theory_deg2: f64,
    pub trials: usize,
    pub failed: usize,
}

/// Study settings. Interferer power follows the swept SNR and the desired
/// signal sits `soi_offset_db` below it.
#[derive(Debug, Clone)]
pub struct MseStudy {
    pub template: Scenario,
    pub snr_db: Vec<f64>,
    pub soi_offset_db: f64,
    pub trials: usize,
    pub seed: u64,
    pub tracker: TrackerConfig,
    pub elements: usize,
}

impl MseStudy {
    pub fn scenario_at(&self, snr_db: f64) -> Scenario {
        let mut s = self.template.clone();
        s.interferer_powers = vec![crate::db_to_linear(snr_db) * s.noise_power; s.interferer_count()];
        s.soi_power = crate::db_to_linear(snr_db + self.soi_offset_db) * s.noise_power;
        s
    }
}

struct TrialOutcome {
    squared_error: f64,
    crb: f64,
}

fn mse_trial(truth: &ScenarioTruth, tracker: &TrackerConfig, src: &SeedSource, key: u64) -> Result<TrialOutcome> {
    let x = generate_snapshots(truth, &mut src.stream(key, Stream::Waveforms))?;
    let out = track_interferers(&x, &truth.geometry, tracker)?;
    let mut est: Vec<f64> = out.tracks.iter().map(|t| t.mean()).collect();
    let mut actual = truth.actual_interferer_doas_deg.clone();
    if est.len() != actual.len() {
        return Err(Error::InsufficientPeaks { requested: actual.len(), found: est.len() });
    }
    est.sort_by(f64::total_cmp);
    actual.sort_by(f64::total_cmp);
    let squared_error = est.iter().zip(&actual).map(|(e, a)| (e - a).powi(2)).sum::<f64>() / est.len() as f64;
    let scm = sample_covariance(&x)?;
    let report = crb_doa(truth, &scm, SourceCovariance::Sample)?;
    let crb = report.interferers().iter().sum::<f64>() / report.interferers().len() as f64;
    Ok(TrialOutcome { squared_error, crb })
}

/// Tracker MSE against the bound at each SNR. Failed trials are excluded
/// from the means and counted.
pub fn doa_mse_experiment(study: &MseStudy) -> Result<Vec<MseRow>> {
    if study.trials < 10 {
        return Err(Error::InvalidConfig(format!("need at least 10 trials, got {}", study.trials)));
    }
    let geometry = crate::signal_model::ArrayGeometry::uniform(study.elements)?;
    let src = SeedSource::new(study.seed);
    study
        .snr_db
        .iter()
        .enumerate()
        .map(|(point, &snr)| {
            let scenario = study.scenario_at(snr);
            let truth = scenario.nominal_truth(&geometry)?;
            let theory = crb_doa(&truth, &HermitianMatrix::identity(study.elements), SourceCovariance::Theoretical)?;
            let outcomes: Vec<Option<TrialOutcome>> = (0..study.trials)
                .into_par_iter()
                .map(|trial| mse_trial(&truth, &study.tracker, &src, trial_key(point, trial)).ok())
                .collect();
            let ok: Vec<&TrialOutcome> = outcomes.iter().flatten().collect();
            let count = ok.len().max(1) as f64;
            Ok(MseRow {
                snr_db: snr,
                mse_deg2: ok.iter().map(|o| o.squared_error).sum::<f64>() / count,
                crb_deg2: ok.iter().map(|o| o.crb).sum::<f64>() / count,
                crb_theory_deg2: theory.interferers().iter().sum::<f64>() / theory.interferers().len() as f64,
                trials: study.trials,
                failed: study.trials - ok.len(),
            })
        })
        .collect()
}

/// Stream key for trial `trial` of sweep point `point`.
pub fn trial_key(point: usize, trial: usize) -> u64 {
    ((point as u64) << 32) | trial as u64
}
