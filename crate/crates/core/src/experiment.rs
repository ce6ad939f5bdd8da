//! Experiment configuration, Monte Carlo sweeps and result export.
//!
//! A configuration is a flat TOML table. It may name a `preset` whose values
//! are used for every key the table leaves out. Sweeps write CSV files and a
//! matplotlib script that plots them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::analysis::{doa_mse_experiment, trial_key, MseRow, MseStudy};
use crate::beamforming::{
    approx_beampattern, baseline, beampattern, evaluate, mvdr_weight, optimal_sinr_db, regularized,
    BeamformerResult, Method,
};
use crate::covariance::{
    matrix_to_csv_interleaved, mean_corresponding_correlation, pearson_columns, real_matrix_to_csv,
    sample_covariance, theoretical_ipnc, HermitianMatrix,
};
use crate::doa::{track_interferers, CoarseConfig, PeakCount, TrackerConfig};
use crate::ppbss::{reconstruct_from_sectors, ShrinkageStats};
use crate::rng::{SeedSource, Stream};
use crate::signal_model::{
    generate_snapshots, steering_vector, ArrayGeometry, MismatchKind, MismatchSpec, Scenario, ScenarioTruth,
};
use crate::soi::{estimate_soi, PowerMethodConfig, SoiSector};
use crate::{db_to_linear, linear_to_db, CMatrix, Error, Result};

/// Environment variable capping the number of worker threads.
pub const THREADS_ENV: &str = "BEAMLAB_THREADS";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepKind {
    /// Desired-signal SNR in dB.
    Snr,
    /// Snapshot count.
    Snapshots,
    /// Preprocessing weight with the loading weight held fixed.
    BeampatternRho,
    /// Loading weight with the preprocessing weight held fixed.
    BeampatternEta,
    /// Reconstructed vs true covariance, swept over SNR.
    Correlation,
    /// Tracker error against the bound, swept over SNR.
    Crb,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub sweep: SweepKind,
    pub sweep_values: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub methods: Vec<Method>,
    pub output_dir: PathBuf,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,

    pub elements: usize,
    /// Desired-signal SNR when the sweep is not over SNR.
    pub snr_db: f64,
    pub inr_db: f64,
    pub soi_doa_deg: f64,
    pub interferer_doas_deg: Vec<f64>,
    pub noise_power: f64,
    pub snapshots: usize,
    pub mismatch: MismatchKind,

    pub grid_size: usize,
    pub soi_samples: usize,
    pub soi_half_width_deg: f64,
    pub fine_half_width_deg: f64,
    pub fine_step_deg: f64,
    pub fft_len: usize,
    pub power_tolerance: f64,
    pub power_max_iterations: usize,

    /// Loading weight used by the preprocessing-weight beampattern sweep.
    pub fixed_eta: f64,
    /// Preprocessing weight used by the loading-weight beampattern sweep.
    pub fixed_rho: f64,
    /// Desired-signal power relative to the swept interferer SNR in the bound study.
    pub crb_soi_offset_db: f64,
    pub pattern_step_deg: f64,
}

fn snr_grid() -> Vec<f64> {
    (0..13).map(|i| -20.0 + 5.0 * i as f64).collect()
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            sweep: SweepKind::Snr,
            sweep_values: snr_grid(),
            trials: 100,
            seed: 1,
            methods: Method::ALL.to_vec(),
            output_dir: PathBuf::from("results"),
            threads: None,
            elements: 12,
            snr_db: 20.0,
            inr_db: 30.0,
            soi_doa_deg: 0.0,
            interferer_doas_deg: vec![30.0, 50.0],
            noise_power: 1.0,
            snapshots: 100,
            mismatch: MismatchKind::None,
            grid_size: 360,
            soi_samples: 12,
            soi_half_width_deg: 4.0,
            fine_half_width_deg: 5.0,
            fine_step_deg: 0.1,
            fft_len: 4096,
            power_tolerance: 1e-3,
            power_max_iterations: 50,
            fixed_eta: 1.0,
            fixed_rho: 0.5,
            crb_soi_offset_db: -30.0,
            pattern_step_deg: 0.1,
        }
    }
}

const PRESETS: &[&str] = &[
    "correlation",
    "power-method",
    "beampattern-rho",
    "beampattern-eta",
    "crb",
    "look-snr",
    "look-snapshots",
    "random-sv-snr",
    "random-sv-snapshots",
    "gain-phase-snr",
    "gain-phase-snapshots",
    "geometry-snr",
    "geometry-snapshots",
];

pub fn preset_names() -> &'static [&'static str] {
    PRESETS
}

/// Named configuration reproducing one of the standard studies.
pub fn preset(name: &str) -> Result<ExperimentConfig> {
    let base = ExperimentConfig::default();
    let snapshot_grid: Vec<f64> = (1..=10).map(|k| 10.0 * k as f64).collect();
    let snr_sweep = |mismatch| ExperimentConfig {
        mismatch,
        ..base.clone()
    };
    let snapshot_sweep = |mismatch| ExperimentConfig {
        sweep: SweepKind::Snapshots,
        sweep_values: snapshot_grid.clone(),
        mismatch,
        ..base.clone()
    };
    let cfg = match name {
        "correlation" => ExperimentConfig {
            sweep: SweepKind::Correlation,
            sweep_values: vec![-20.0],
            ..base.clone()
        },
        "power-method" => ExperimentConfig {
            methods: vec![Method::Ppbss, Method::Optimal],
            ..base.clone()
        },
        "beampattern-rho" => ExperimentConfig {
            sweep: SweepKind::BeampatternRho,
            sweep_values: vec![0.1, 0.5, 0.9],
            snr_db: -10.0,
            ..base.clone()
        },
        "beampattern-eta" => ExperimentConfig {
            sweep: SweepKind::BeampatternEta,
            sweep_values: vec![0.1, 1.0, 10.0],
            snr_db: -10.0,
            ..base.clone()
        },
        "crb" => ExperimentConfig {
            sweep: SweepKind::Crb,
            sweep_values: (0..11).map(|i| -20.0 + 5.0 * i as f64).collect(),
            ..base.clone()
        },
        "look-snr" => snr_sweep(MismatchKind::LookDirection),
        "look-snapshots" => snapshot_sweep(MismatchKind::LookDirection),
        "random-sv-snr" => snr_sweep(MismatchKind::RandomSv),
        "random-sv-snapshots" => snapshot_sweep(MismatchKind::RandomSv),
        "gain-phase-snr" => snr_sweep(MismatchKind::GainPhase),
        "gain-phase-snapshots" => snapshot_sweep(MismatchKind::GainPhase),
        "geometry-snr" => ExperimentConfig {
            snapshots: 50,
            ..snr_sweep(MismatchKind::Geometry)
        },
        "geometry-snapshots" => snapshot_sweep(MismatchKind::Geometry),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown preset '{other}' (known: {})",
                PRESETS.join(", ")
            )))
        }
    };
    Ok(ExperimentConfig {
        output_dir: PathBuf::from("results").join(name),
        ..cfg
    })
}

fn toml_error(e: impl std::fmt::Display) -> Error {
    Error::InvalidConfig(e.to_string())
}

impl ExperimentConfig {
    /// Parses a flat TOML table. A `preset` key selects the base values;
    /// every other key overrides them.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let mut table: toml::Table = text.parse().map_err(toml_error)?;
        let base = match table.remove("preset") {
            Some(toml::Value::String(name)) => preset(&name)?,
            Some(other) => return Err(Error::InvalidConfig(format!("preset must be a string, got {other}"))),
            None => Self::default(),
        };
        let mut merged = match toml::Value::try_from(&base).map_err(toml_error)? {
            toml::Value::Table(t) => t,
            _ => unreachable!("config serializes to a table"),
        };
        merged.extend(table);
        let cfg: Self = toml::Value::Table(merged).try_into().map_err(toml_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_file(path: &Path) -> Result<Self> {
        Self::from_toml_str(&fs::read_to_string(path)?)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(toml_error)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(msg.to_string()));
        if self.trials == 0 {
            return fail("trials must be at least 1");
        }
        if self.sweep_values.is_empty() {
            return fail("sweep_values must not be empty");
        }
        if self.methods.is_empty() {
            return fail("methods must not be empty");
        }
        if self.sweep_values.iter().any(|v| !v.is_finite()) {
            return fail("sweep values must be finite");
        }
        if self.sweep == SweepKind::Snapshots && self.sweep_values.iter().any(|v| *v < 1.0 || v.fract() != 0.0) {
            return fail("snapshot counts must be positive integers");
        }
        if matches!(self.sweep, SweepKind::BeampatternRho | SweepKind::BeampatternEta)
            && self.sweep_values.iter().any(|v| *v < 0.0)
        {
            return fail("beampattern weights must be nonnegative");
        }
        if self.sweep == SweepKind::Crb && self.trials < 10 {
            return fail("the bound study needs at least 10 trials");
        }
        if self.elements < 2 || self.interferer_doas_deg.len() + 1 >= self.elements {
            return fail("need at least two elements and more elements than sources");
        }
        if self.grid_size < 4 || self.soi_samples < 2 || self.fft_len < self.elements {
            return fail("grid_size ≥ 4, soi_samples ≥ 2 and fft_len ≥ elements required");
        }
        if self.threads == Some(0) {
            return fail("threads must be positive");
        }
        SoiSector::new(self.soi_doa_deg, self.soi_half_width_deg, self.soi_samples)?;
        self.scenario_at(self.sweep_values[0]).validate()
    }

    pub fn geometry(&self) -> Result<ArrayGeometry> {
        ArrayGeometry::uniform(self.elements)
    }

    /// Scenario at one sweep value.
    pub fn scenario_at(&self, value: f64) -> Scenario {
        let (snr_db, snapshots) = match self.sweep {
            SweepKind::Snr | SweepKind::Correlation => (value, self.snapshots),
            SweepKind::Snapshots => (self.snr_db, value as usize),
            _ => (self.snr_db, self.snapshots),
        };
        let inr = db_to_linear(self.inr_db) * self.noise_power;
        Scenario {
            soi_doa_deg: self.soi_doa_deg,
            soi_power: db_to_linear(snr_db) * self.noise_power,
            interferer_doas_deg: self.interferer_doas_deg.clone(),
            interferer_powers: vec![inr; self.interferer_doas_deg.len()],
            noise_power: self.noise_power,
            snapshots,
            mismatch: MismatchSpec::of_kind(self.mismatch),
        }
    }

    pub fn soi_sector(&self) -> SoiSector {
        SoiSector {
            center_deg: self.soi_doa_deg,
            half_width_deg: self.soi_half_width_deg,
            samples: self.soi_samples,
        }
    }

    pub fn tracker(&self) -> TrackerConfig {
        TrackerConfig {
            coarse: CoarseConfig {
                fft_len: self.fft_len,
                spacing: crate::signal_model::HALF_WAVELENGTH,
                count: PeakCount::Fixed(self.interferer_doas_deg.len()),
                exclude_deg: Some(self.soi_sector().bounds()),
            },
            half_width_deg: self.fine_half_width_deg,
            step_deg: self.fine_step_deg,
            grid_size: self.grid_size,
        }
    }

    pub fn power_method(&self) -> PowerMethodConfig {
        PowerMethodConfig {
            tolerance: self.power_tolerance,
            max_iterations: self.power_max_iterations,
        }
    }

    /// Worker count: `threads` if set, capped by `BEAMLAB_THREADS`.
    pub fn worker_count(&self) -> Result<usize> {
        let default = std::thread::available_parallelism().map_or(1, |n| n.get());
        let mut n = self.threads.unwrap_or(default);
        if let Ok(v) = std::env::var(THREADS_ENV) {
            let cap: usize = v
                .trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got '{v}'")))?;
            if cap == 0 {
                return Err(Error::InvalidConfig(format!("{THREADS_ENV} must be positive")));
            }
            n = n.min(cap);
        }
        Ok(n.max(1))
    }
}

/// Diagnostics of the reconstruction pipeline in one trial.
#[derive(Debug, Clone)]
pub struct PpbssDiagnostics {
    pub stats: ShrinkageStats,
    pub preprocessing_rank: usize,
    pub psd_only: bool,
    pub kappa: f64,
    /// `|κ − λ_max| / λ_max` against a full eigendecomposition.
    pub kappa_rel_err: f64,
    pub power_iterations: usize,
    pub estimated_doas_deg: Vec<f64>,
}

/// Everything the reconstruction pipeline produced in one trial.
#[derive(Debug, Clone)]
pub struct PpbssRun {
    pub result: BeamformerResult,
    pub reconstruction: HermitianMatrix,
    pub preprocessing: HermitianMatrix,
    pub soi_sv: crate::CVector,
    pub diagnostics: PpbssDiagnostics,
}

/// Runs the reconstruction pipeline on one set of snapshots.
pub fn run_ppbss(
    config: &ExperimentConfig,
    truth: &ScenarioTruth,
    snapshots: &crate::signal_model::SnapshotSet,
    scm: &HermitianMatrix,
) -> Result<PpbssRun> {
    let geometry = &truth.geometry;
    let tracking = track_interferers(snapshots, geometry, &config.tracker())?;
    let ppbss = reconstruct_from_sectors(snapshots, scm, &tracking.sectors, geometry)?;
    let soi = estimate_soi(scm, snapshots.len(), &config.soi_sector(), geometry, &config.power_method())?;
    let covariance = if ppbss.reconstruction.psd_only {
        regularized(&ppbss.reconstruction.matrix)
    } else {
        ppbss.reconstruction.matrix.clone()
    };
    let sv = soi.power.eigenvector.clone();
    let result = evaluate(Method::Ppbss, &covariance, &sv, truth)?;
    let top = soi.covariance.eigenvalues().last().copied().unwrap_or(0.0);
    let diagnostics = PpbssDiagnostics {
        stats: ppbss.stats,
        preprocessing_rank: ppbss.preprocessing.rank(1e-10),
        psd_only: ppbss.reconstruction.psd_only,
        kappa: soi.power.eigenvalue,
        kappa_rel_err: (soi.power.eigenvalue - top).abs() / top,
        power_iterations: soi.power.iterations,
        estimated_doas_deg: tracking.tracks.iter().map(|t| t.mean()).collect(),
    };
    Ok(PpbssRun {
        result,
        reconstruction: covariance,
        preprocessing: ppbss.preprocessing,
        soi_sv: sv,
        diagnostics,
    })
}

/// Per-method outcomes of one Monte Carlo trial.
#[derive(Debug)]
pub struct TrialResult {
    pub truth: ScenarioTruth,
    pub optimal_sinr_db: f64,
    pub outcomes: Vec<(Method, Result<BeamformerResult>)>,
    pub ppbss: Option<PpbssRun>,
}

/// Draws the scenario realization and snapshots of one trial.
pub fn trial_data(
    config: &ExperimentConfig,
    scenario: &Scenario,
    key: u64,
) -> Result<(ScenarioTruth, crate::signal_model::SnapshotSet)> {
    let geometry = config.geometry()?;
    let src = SeedSource::new(config.seed);
    let truth = scenario.realize(&geometry, &mut src.stream(key, Stream::Mismatch))?;
    let x = generate_snapshots(&truth, &mut src.stream(key, Stream::Waveforms))?;
    Ok((truth, x))
}

/// One Monte Carlo trial at sweep value `value`. Deterministic in
/// `(config.seed, key)`.
pub fn run_trial(config: &ExperimentConfig, value: f64, key: u64) -> Result<TrialResult> {
    let scenario = config.scenario_at(value);
    let (truth, x) = trial_data(config, &scenario, key)?;
    let scm = sample_covariance(&x)?;
    let nominal = steering_vector(config.soi_doa_deg, &truth.geometry)?;
    let mut ppbss = None;
    let outcomes = config
        .methods
        .iter()
        .map(|&m| {
            let r = if m == Method::Ppbss {
                run_ppbss(config, &truth, &x, &scm).map(|run| {
                    let res = run.result.clone();
                    ppbss = Some(run);
                    res
                })
            } else {
                baseline(m, &truth, &scm, &nominal)
            };
            (m, r)
        })
        .collect();
    Ok(TrialResult {
        optimal_sinr_db: optimal_sinr_db(&truth)?,
        truth,
        outcomes,
        ppbss,
    })
}

/// One CSV row per (sweep value, method, trial).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub seed: u64,
    pub sweep_value: f64,
    pub trial: usize,
    pub method: Method,
    /// `ok` or an error code.
    pub status: String,
    pub sinr_db: Option<f64>,
    pub optimal_sinr_db: Option<f64>,
    pub mu_hat: Option<f64>,
    pub zeta_hat: Option<f64>,
    pub eta_tilde: Option<f64>,
    pub rho_tilde: Option<f64>,
    pub preprocessing_rank: Option<usize>,
    pub kappa: Option<f64>,
    pub kappa_rel_err: Option<f64>,
    pub power_iterations: Option<usize>,
    /// Semicolon-separated interferer directions.
    pub estimated_doas_deg: String,
}

impl RawRow {
    fn empty(config: &ExperimentConfig, value: f64, trial: usize, method: Method) -> Self {
        Self {
            seed: config.seed,
            sweep_value: value,
            trial,
            method,
            status: String::new(),
            sinr_db: None,
            optimal_sinr_db: None,
            mu_hat: None,
            zeta_hat: None,
            eta_tilde: None,
            rho_tilde: None,
            preprocessing_rank: None,
            kappa: None,
            kappa_rel_err: None,
            power_iterations: None,
            estimated_doas_deg: String::new(),
        }
    }

    pub fn succeeded(&self) -> bool {
        self.status == "ok"
    }
}

fn trial_rows(config: &ExperimentConfig, point: usize, value: f64, trial: usize) -> Vec<RawRow> {
    let result = match run_trial(config, value, trial_key(point, trial)) {
        Ok(r) => r,
        Err(e) => {
            return config
                .methods
                .iter()
                .map(|&m| RawRow {
                    status: e.code().to_string(),
                    ..RawRow::empty(config, value, trial, m)
                })
                .collect()
        }
    };
    result
        .outcomes
        .iter()
        .map(|(m, outcome)| {
            let mut row = RawRow {
                optimal_sinr_db: Some(result.optimal_sinr_db),
                ..RawRow::empty(config, value, trial, *m)
            };
            match outcome {
                Ok(bf) => {
                    row.status = "ok".into();
                    row.sinr_db = Some(bf.output_sinr_db);
                }
                Err(e) => row.status = e.code().into(),
            }
            if let (Method::Ppbss, Some(run)) = (m, &result.ppbss) {
                let d = &run.diagnostics;
                row.mu_hat = Some(d.stats.mu_hat);
                row.zeta_hat = Some(d.stats.zeta_hat);
                row.eta_tilde = Some(d.stats.eta_tilde);
                row.rho_tilde = Some(d.stats.rho_tilde);
                row.preprocessing_rank = Some(d.preprocessing_rank);
                row.kappa = Some(d.kappa);
                row.kappa_rel_err = Some(d.kappa_rel_err);
                row.power_iterations = Some(d.power_iterations);
                row.estimated_doas_deg = d
                    .estimated_doas_deg
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join(";");
            }
            row
        })
        .collect()
}

/// Mean over successful trials of one (sweep value, method) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub method: Method,
    pub mean_sinr_db: Option<f64>,
    pub mean_optimal_sinr_db: Option<f64>,
    pub completed: usize,
    pub failed: usize,
}

/// Averages raw rows per (sweep value, method), keeping first-appearance order.
pub fn aggregate(rows: &[RawRow]) -> Vec<AggregateRow> {
    let mut order: Vec<(u64, Method)> = Vec::new();
    let mut cells: BTreeMap<(u64, Method), Vec<&RawRow>> = BTreeMap::new();
    for row in rows {
        let key = (row.sweep_value.to_bits(), row.method);
        cells
            .entry(key)
            .or_insert_with(|| {
                order.push(key);
                Vec::new()
            })
            .push(row);
    }
    order
        .into_iter()
        .map(|key| {
            let cell = &cells[&key];
            let ok: Vec<&&RawRow> = cell.iter().filter(|r| r.succeeded()).collect();
            let mean = |f: fn(&RawRow) -> Option<f64>| {
                let vals: Vec<f64> = ok.iter().filter_map(|r| f(r)).collect();
                (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64)
            };
            AggregateRow {
                sweep_value: f64::from_bits(key.0),
                method: key.1,
                mean_sinr_db: mean(|r| r.sinr_db),
                mean_optimal_sinr_db: mean(|r| r.optimal_sinr_db),
                completed: ok.len(),
                failed: cell.len() - ok.len(),
            }
        })
        .collect()
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_error)?;
    for row in rows {
        w.serialize(row).map_err(csv_error)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error)?;
    r.deserialize().map(|row| row.map_err(csv_error)).collect()
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::InvalidConfig(format!("csv: {other:?}")),
    }
}

/// Creates `dir` and checks it is writable before any work is done.
pub fn prepare_output_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    let probe = dir.join(".write-probe");
    fs::write(&probe, b"")?;
    fs::remove_file(&probe)?;
    Ok(())
}

fn with_pool<T: Send>(config: &ExperimentConfig, job: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.worker_count()?)
        .build()
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    Ok(pool.install(job))
}

/// Null depth at each interferer for one beampattern sweep value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NullRow {
    pub sweep_value: f64,
    pub eta: f64,
    pub rho: f64,
    pub interferer_deg: f64,
    pub null_db: f64,
    pub approx_null_db: f64,
}

#[derive(Debug, Clone, Serialize)]
struct PatternRow {
    theta_deg: f64,
    gain_db: f64,
    approx_gain_db: f64,
    extrapolated: bool,
}

/// Correlation between true and reconstructed interference-plus-noise covariance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationRow {
    pub sweep_value: f64,
    pub trial: usize,
    pub status: String,
    pub mean_correlation: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct CorrelationSummary {
    pub rows: Vec<CorrelationRow>,
    /// Truth-vs-reconstruction column correlations of the first trial.
    pub cross: Option<nalgebra::DMatrix<f64>>,
    /// Joint correlation of `[truth | reconstruction]` with itself.
    pub joint: Option<nalgebra::DMatrix<f64>>,
}

impl CorrelationSummary {
    pub fn mean_correlation(&self) -> Option<f64> {
        let v: Vec<f64> = self.rows.iter().filter_map(|r| r.mean_correlation).collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// Output of [`run_sweep`].
#[derive(Debug, Clone)]
pub enum SweepOutput {
    MonteCarlo { raw: Vec<RawRow>, aggregates: Vec<AggregateRow> },
    Beampattern(Vec<NullRow>),
    Correlation(CorrelationSummary),
    Crb(Vec<MseRow>),
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub output: SweepOutput,
    pub files: Vec<PathBuf>,
}

/// Runs the configured sweep and writes its CSVs and plot script.
pub fn run_sweep(config: &ExperimentConfig) -> Result<SweepReport> {
    config.validate()?;
    let dir = config.output_dir.clone();
    prepare_output_dir(&dir)?;
    let (output, mut files) = with_pool(config, || -> Result<(SweepOutput, Vec<PathBuf>)> {
        match config.sweep {
            SweepKind::Snr | SweepKind::Snapshots => monte_carlo(config, &dir),
            SweepKind::BeampatternRho | SweepKind::BeampatternEta => beampattern_sweep(config, &dir),
            SweepKind::Correlation => correlation_sweep(config, &dir),
            SweepKind::Crb => crb_sweep(config, &dir),
        }
    })??;
    let script = dir.join("plot.py");
    fs::write(&script, PLOT_SCRIPT)?;
    files.push(script);
    let used = dir.join("config.toml");
    fs::write(&used, config.to_toml_string()?)?;
    files.push(used);
    Ok(SweepReport { output, files })
}

/// Raw rows for every (sweep value, trial), in that order.
pub fn monte_carlo_rows(config: &ExperimentConfig) -> Vec<RawRow> {
    let jobs: Vec<(usize, f64, usize)> = config
        .sweep_values
        .iter()
        .enumerate()
        .flat_map(|(p, &v)| (0..config.trials).map(move |t| (p, v, t)))
        .collect();
    jobs.par_iter()
        .map(|&(p, v, t)| trial_rows(config, p, v, t))
        .collect::<Vec<_>>()
        .into_iter()
        .flatten()
        .collect()
}

fn monte_carlo(config: &ExperimentConfig, dir: &Path) -> Result<(SweepOutput, Vec<PathBuf>)> {
    let raw = monte_carlo_rows(config);
    let aggregates = aggregate(&raw);
    let raw_path = dir.join("raw.csv");
    let agg_path = dir.join("aggregate.csv");
    write_csv(&raw_path, &raw)?;
    write_csv(&agg_path, &aggregates)?;
    Ok((SweepOutput::MonteCarlo { raw, aggregates }, vec![raw_path, agg_path]))
}

/// Checks that an aggregate file matches the means recomputed from a raw file.
pub fn verify_aggregates(raw_path: &Path, aggregate_path: &Path) -> Result<bool> {
    let raw: Vec<RawRow> = read_csv(raw_path)?;
    let stored: Vec<AggregateRow> = read_csv(aggregate_path)?;
    let close = |a: Option<f64>, b: Option<f64>| match (a, b) {
        (Some(x), Some(y)) => (x - y).abs() <= 1e-9 * x.abs().max(1.0),
        (None, None) => true,
        _ => false,
    };
    let fresh = aggregate(&raw);
    Ok(fresh.len() == stored.len()
        && fresh.iter().zip(&stored).all(|(f, s)| {
            f.sweep_value == s.sweep_value
                && f.method == s.method
                && f.completed == s.completed
                && f.failed == s.failed
                && close(f.mean_sinr_db, s.mean_sinr_db)
                && close(f.mean_optimal_sinr_db, s.mean_optimal_sinr_db)
        }))
}

fn pattern_grid(step: f64) -> Vec<f64> {
    let n = (180.0 / step).round() as usize;
    (0..=n).map(|i| -90.0 + 180.0 * i as f64 / n as f64).collect()
}

fn beampattern_sweep(config: &ExperimentConfig, dir: &Path) -> Result<(SweepOutput, Vec<PathBuf>)> {
    let (truth, x) = trial_data(config, &config.scenario_at(config.snr_db), trial_key(0, 0))?;
    let scm = sample_covariance(&x)?;
    let run = run_ppbss(config, &truth, &x, &scm)?;
    let geometry = &truth.geometry;
    let grid = pattern_grid(config.pattern_step_deg);
    let mut nulls = Vec::new();
    let mut files = Vec::new();
    let tag = match config.sweep {
        SweepKind::BeampatternRho => "rho",
        _ => "eta",
    };
    for &v in &config.sweep_values {
        let (eta, rho) = match config.sweep {
            SweepKind::BeampatternRho => (config.fixed_eta, v),
            _ => (v, config.fixed_rho),
        };
        let r = run.preprocessing.scaled(rho).plus_identity(eta);
        let w = mvdr_weight(&r, &run.soi_sv)?;
        let exact = beampattern(&w, &grid, geometry)?;
        let approx = approx_beampattern(&run.preprocessing, eta, rho, &run.soi_sv, &grid, geometry)?;
        let rows: Vec<PatternRow> = grid
            .iter()
            .zip(exact.iter().zip(&approx))
            .map(|(&theta, (&d, p))| PatternRow {
                theta_deg: theta,
                gain_db: 20.0 * d.log10(),
                approx_gain_db: 20.0 * p.magnitude.log10(),
                extrapolated: p.extrapolated,
            })
            .collect();
        let path = dir.join(format!("beampattern_{tag}_{v}.csv"));
        write_csv(&path, &rows)?;
        files.push(path);
        for &theta in &truth.actual_interferer_doas_deg {
            let d = beampattern(&w, &[theta], geometry)?[0];
            let p = approx_beampattern(&run.preprocessing, eta, rho, &run.soi_sv, &[theta], geometry)?[0];
            nulls.push(NullRow {
                sweep_value: v,
                eta,
                rho,
                interferer_deg: theta,
                null_db: 20.0 * d.log10(),
                approx_null_db: 20.0 * p.magnitude.log10(),
            });
        }
    }
    let path = dir.join("nulls.csv");
    write_csv(&path, &nulls)?;
    files.push(path);
    Ok((SweepOutput::Beampattern(nulls), files))
}

/// Whether null depth at every interferer moves monotonically with the
/// sweep: non-increasing for `rho`, non-decreasing for `eta`.
pub fn nulls_monotone(kind: SweepKind, nulls: &[NullRow], exact: bool) -> bool {
    let mut by_interferer: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for n in nulls {
        let depth = if exact { n.null_db } else { n.approx_null_db };
        by_interferer
            .entry(n.interferer_deg.to_bits())
            .or_default()
            .push((n.sweep_value, depth));
    }
    by_interferer.values_mut().all(|series| {
        series.sort_by(|a, b| a.0.total_cmp(&b.0));
        series.windows(2).all(|w| match kind {
            SweepKind::BeampatternEta => w[1].1 >= w[0].1,
            _ => w[1].1 <= w[0].1,
        })
    })
}

/// Correlation matrices of one trial: truth vs reconstruction, and the joint
/// matrix of `[truth | reconstruction]` against itself.
pub fn correlation_trial(
    config: &ExperimentConfig,
    value: f64,
    key: u64,
) -> Result<(nalgebra::DMatrix<f64>, nalgebra::DMatrix<f64>, HermitianMatrix, HermitianMatrix)> {
    let (truth, x) = trial_data(config, &config.scenario_at(value), key)?;
    let scm = sample_covariance(&x)?;
    let tracking = track_interferers(&x, &truth.geometry, &config.tracker())?;
    let rec = reconstruct_from_sectors(&x, &scm, &tracking.sectors, &truth.geometry)?;
    let ipnc = theoretical_ipnc(&truth);
    let recon = rec.reconstruction.matrix;
    let cross = pearson_columns(ipnc.as_matrix(), recon.as_matrix())?;
    let l = ipnc.dim();
    let mut stacked = CMatrix::zeros(l, 2 * l);
    stacked.columns_mut(0, l).copy_from(ipnc.as_matrix());
    stacked.columns_mut(l, l).copy_from(recon.as_matrix());
    let joint = pearson_columns(&stacked, &stacked)?;
    Ok((cross, joint, ipnc, recon))
}

fn correlation_sweep(config: &ExperimentConfig, dir: &Path) -> Result<(SweepOutput, Vec<PathBuf>)> {
    let jobs: Vec<(usize, f64, usize)> = config
        .sweep_values
        .iter()
        .enumerate()
        .flat_map(|(p, &v)| (0..config.trials).map(move |t| (p, v, t)))
        .collect();
    let rows: Vec<CorrelationRow> = jobs
        .par_iter()
        .map(|&(p, v, t)| match correlation_trial(config, v, trial_key(p, t)) {
            Ok((cross, ..)) => CorrelationRow {
                sweep_value: v,
                trial: t,
                status: "ok".into(),
                mean_correlation: Some(mean_corresponding_correlation(&cross)),
            },
            Err(e) => CorrelationRow {
                sweep_value: v,
                trial: t,
                status: e.code().into(),
                mean_correlation: None,
            },
        })
        .collect();
    let mut files = Vec::new();
    let path = dir.join("correlation_trials.csv");
    write_csv(&path, &rows)?;
    files.push(path);

    let first = correlation_trial(config, config.sweep_values[0], trial_key(0, 0)).ok();
    let (cross, joint) = match first {
        Some((cross, joint, ipnc, recon)) => {
            for (name, text) in [
                ("correlation_cross.csv", real_matrix_to_csv(&cross)),
                ("correlation_joint.csv", real_matrix_to_csv(&joint)),
                ("ipnc_true.csv", matrix_to_csv_interleaved(ipnc.as_matrix())),
                ("ipnc_reconstructed.csv", matrix_to_csv_interleaved(recon.as_matrix())),
            ] {
                let path = dir.join(name);
                fs::write(&path, text)?;
                files.push(path);
            }
            (Some(cross), Some(joint))
        }
        None => (None, None),
    };
    Ok((SweepOutput::Correlation(CorrelationSummary { rows, cross, joint }), files))
}

/// Bound-study settings derived from the configuration.
pub fn mse_study(config: &ExperimentConfig) -> MseStudy {
    MseStudy {
        template: config.scenario_at(config.snr_db),
        snr_db: config.sweep_values.clone(),
        soi_offset_db: config.crb_soi_offset_db,
        trials: config.trials,
        seed: config.seed,
        tracker: config.tracker(),
        elements: config.elements,
    }
}

fn crb_sweep(config: &ExperimentConfig, dir: &Path) -> Result<(SweepOutput, Vec<PathBuf>)> {
    let rows = doa_mse_experiment(&mse_study(config))?;
    let path = dir.join("crb.csv");
    write_csv(&path, &rows)?;
    Ok((SweepOutput::Crb(rows), vec![path]))
}

/// Human-readable summary lines of a sweep.
pub fn summarize(output: &SweepOutput) -> Vec<String> {
    match output {
        SweepOutput::MonteCarlo { aggregates, .. } => aggregates
            .iter()
            .map(|a| {
                format!(
                    "value={} method={} mean_sinr_db={} optimal_db={} completed={} failed={}",
                    a.sweep_value,
                    a.method,
                    fmt_opt(a.mean_sinr_db),
                    fmt_opt(a.mean_optimal_sinr_db),
                    a.completed,
                    a.failed
                )
            })
            .collect(),
        SweepOutput::Beampattern(nulls) => nulls
            .iter()
            .map(|n| {
                format!(
                    "value={} eta={} rho={} interferer={} null_db={:.2} approx_null_db={:.2}",
                    n.sweep_value, n.eta, n.rho, n.interferer_deg, n.null_db, n.approx_null_db
                )
            })
            .collect(),
        SweepOutput::Correlation(s) => {
            let failed = s.rows.iter().filter(|r| r.mean_correlation.is_none()).count();
            vec![format!(
                "mean_corresponding_correlation={} trials={} failed={}",
                fmt_opt(s.mean_correlation()),
                s.rows.len(),
                failed
            )]
        }
        SweepOutput::Crb(rows) => rows
            .iter()
            .map(|r| {
                format!(
                    "snr_db={} mse_deg2={:.3e} crb_deg2={:.3e} crb_theory_deg2={:.3e} ratio_db={:.2} failed={}",
                    r.snr_db,
                    r.mse_deg2,
                    r.crb_deg2,
                    r.crb_theory_deg2,
                    linear_to_db(r.mse_deg2 / r.crb_deg2),
                    r.failed
                )
            })
            .collect(),
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".into(), |x| format!("{x:.3}"))
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots the CSV files written next to this script."""
import csv
import glob
import os
import sys

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def rows(name):
    with open(os.path.join(HERE, name), newline="") as f:
        return list(csv.DictReader(f))


def num(v):
    return float(v) if v not in ("", None) else float("nan")


def plot_aggregate():
    data = rows("aggregate.csv")
    fig, ax = plt.subplots()
    for method in dict.fromkeys(r["method"] for r in data):
        pts = [r for r in data if r["method"] == method]
        ax.plot([num(r["sweep_value"]) for r in pts], [num(r["mean_sinr_db"]) for r in pts], marker="o", label=method)
    ax.set_xlabel("sweep value")
    ax.set_ylabel("output SINR (dB)")
    ax.grid(True)
    ax.legend()
    fig.savefig(os.path.join(HERE, "sinr.png"), dpi=150)


def plot_beampatterns():
    fig, ax = plt.subplots()
    for path in sorted(glob.glob(os.path.join(HERE, "beampattern_*.csv"))):
        data = rows(os.path.basename(path))
        label = os.path.basename(path)[len("beampattern_"):-4]
        ax.plot([num(r["theta_deg"]) for r in data], [num(r["gain_db"]) for r in data], label=label)
    ax.set_xlabel("angle (deg)")
    ax.set_ylabel("gain (dB)")
    ax.set_ylim(bottom=-80)
    ax.grid(True)
    ax.legend()
    fig.savefig(os.path.join(HERE, "beampattern.png"), dpi=150)


def plot_correlation():
    with open(os.path.join(HERE, "correlation_cross.csv")) as f:
        grid = [[float(x) for x in line.split(",")] for line in f if line.strip()]
    fig, ax = plt.subplots()
    im = ax.imshow(grid, vmin=-1, vmax=1, cmap="coolwarm")
    fig.colorbar(im)
    ax.set_xlabel("reconstructed column")
    ax.set_ylabel("true column")
    fig.savefig(os.path.join(HERE, "correlation.png"), dpi=150)


def plot_crb():
    data = rows("crb.csv")
    snr = [num(r["snr_db"]) for r in data]
    fig, ax = plt.subplots()
    ax.semilogy(snr, [num(r["mse_deg2"]) for r in data], marker="o", label="tracker MSE")
    ax.semilogy(snr, [num(r["crb_deg2"]) for r in data], label="CRB (sample)")
    ax.semilogy(snr, [num(r["crb_theory_deg2"]) for r in data], linestyle="--", label="CRB (theory)")
    ax.set_xlabel("SNR (dB)")
    ax.set_ylabel("MSE (deg^2)")
    ax.grid(True, which="both")
    ax.legend()
    fig.savefig(os.path.join(HERE, "crb.png"), dpi=150)


def main():
    present = set(os.listdir(HERE))
    if "aggregate.csv" in present:
        plot_aggregate()
    if any(p.startswith("beampattern_") for p in present):
        plot_beampatterns()
    if "correlation_cross.csv" in present:
        plot_correlation()
    if "crb.csv" in present:
        plot_crb()
    return 0


if __name__ == "__main__":
    sys.exit(main())
"#;
