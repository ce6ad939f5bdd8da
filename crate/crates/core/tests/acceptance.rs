//! Acceptance suite. Each test prints one `PASS`/`FAIL` line and then
//! asserts the same verdict. Run with
//! `cargo test --release -p beamlab --test acceptance -- --nocapture --test-threads=1`.

use std::fs;
use std::time::{Duration, Instant};

use beamlab::analysis::{doa_mse_experiment, trial_key};
use beamlab::beamforming::Method;
use beamlab::covariance::{mean_corresponding_correlation, sample_covariance, theoretical_covariance, theoretical_ipnc, HermitianMatrix};
use beamlab::experiment::{
    aggregate, correlation_trial, monte_carlo_rows, mse_study, nulls_monotone, preset, run_sweep, run_trial,
    trial_data, ExperimentConfig, SweepKind, SweepOutput,
};
use beamlab::ppbss::{oracle_weights, stats_from_parts, zeta_hat};
use beamlab::signal_model::SnapshotSet;
use beamlab::soi::{estimate_soi, PowerMethodConfig};
use beamlab::{CMatrix, Complex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn verdict(id: u32, name: &str, pass: bool, elapsed: Duration, detail: &str) {
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {id} [{name}]: {tag} ({:.2}s) {detail}", elapsed.as_secs_f64());
    assert!(pass, "criterion {id} [{name}] failed: {detail}");
}

fn cgauss(rng: &mut ChaCha8Rng) -> Complex {
    Complex::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> CMatrix {
    CMatrix::from_fn(rows, cols, |_, _| cgauss(rng))
}

fn random_hermitian(l: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix {
    let a = random_matrix(l, l, rng);
    HermitianMatrix::from_matrix(&a + a.adjoint()).unwrap()
}

fn random_psd(l: usize, rank: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix {
    let b = random_matrix(l, rank, rng);
    HermitianMatrix::from_matrix(&b * b.adjoint()).unwrap()
}

#[test]
fn criterion_1_power_method_parity() {
    let start = Instant::now();
    let base = ExperimentConfig {
        power_max_iterations: 3,
        ..preset("power-method").unwrap()
    };
    let pm = PowerMethodConfig {
        tolerance: 1e-3,
        max_iterations: 3,
    };
    let mut worst = 0.0f64;
    let mut max_iter = 0;
    let mut failures = 0;
    for seed in 0..100u64 {
        let cfg = ExperimentConfig { seed, ..base.clone() };
        let (truth, x) = trial_data(&cfg, &cfg.scenario_at(10.0), 0).unwrap();
        let scm = sample_covariance(&x).unwrap();
        match estimate_soi(&scm, x.len(), &cfg.soi_sector(), &truth.geometry, &pm) {
            Ok(est) => {
                let top = *est.covariance.eigenvalues().last().unwrap();
                worst = worst.max((est.power.eigenvalue - top).abs() / top);
                max_iter = max_iter.max(est.power.iterations);
            }
            Err(_) => failures += 1,
        }
    }
    let elapsed = start.elapsed();
    let pass = failures == 0 && worst <= 1e-3 && max_iter <= 3 && elapsed < Duration::from_secs(5);
    verdict(
        1,
        "power-method parity",
        pass,
        elapsed,
        &format!("worst_rel_err={worst:.3e} max_iterations={max_iter} failures={failures}"),
    );
}

#[test]
fn criterion_2_ipnc_correlation() {
    let start = Instant::now();
    let cfg = preset("correlation").unwrap();
    let mut means = Vec::new();
    let mut diag_exact = true;
    let mut failures = 0;
    for t in 0..cfg.trials {
        match correlation_trial(&cfg, -20.0, trial_key(0, t)) {
            Ok((cross, joint, ..)) => {
                means.push(mean_corresponding_correlation(&cross));
                diag_exact &= (0..joint.nrows()).all(|i| joint[(i, i)] == 1.0);
            }
            Err(_) => failures += 1,
        }
    }
    let mean = means.iter().sum::<f64>() / means.len().max(1) as f64;
    let elapsed = start.elapsed();
    let pass = failures == 0 && mean >= 0.9 && diag_exact && elapsed < Duration::from_secs(10);
    verdict(
        2,
        "interference covariance correlation",
        pass,
        elapsed,
        &format!("mean_correlation={mean:.4} diag_exact={diag_exact} failures={failures}"),
    );
}

#[test]
fn criterion_3_look_direction_sinr() {
    let start = Instant::now();
    let cfg = ExperimentConfig {
        sweep_values: vec![-10.0, 0.0, 10.0, 20.0, 30.0],
        methods: vec![Method::Ppbss, Method::Optimal],
        ..preset("look-snr").unwrap()
    };
    let agg = aggregate(&monte_carlo_rows(&cfg));
    let mut gaps = Vec::new();
    for a in agg.iter().filter(|a| a.method == Method::Ppbss) {
        let gap = match (a.mean_sinr_db, a.mean_optimal_sinr_db) {
            (Some(p), Some(o)) => o - p,
            _ => f64::INFINITY,
        };
        gaps.push((a.sweep_value, gap));
    }
    let elapsed = start.elapsed();
    let pass = gaps.len() == 5 && gaps.iter().all(|&(_, g)| g.abs() <= 2.5) && elapsed < Duration::from_secs(180);
    let detail: Vec<String> = gaps.iter().map(|(v, g)| format!("snr={v}:gap={g:.2}dB")).collect();
    verdict(3, "look-direction SINR gap", pass, elapsed, &detail.join(" "));
}

#[test]
fn criterion_4_snapshot_stability() {
    let start = Instant::now();
    let mut details = Vec::new();
    let mut pass = true;
    for name in ["look-snapshots", "random-sv-snapshots"] {
        let cfg = ExperimentConfig {
            sweep_values: vec![30.0, 50.0, 100.0, 150.0],
            snr_db: 20.0,
            methods: vec![Method::Ppbss],
            ..preset(name).unwrap()
        };
        let means: Vec<f64> = aggregate(&monte_carlo_rows(&cfg))
            .iter()
            .map(|a| a.mean_sinr_db.unwrap_or(f64::NAN))
            .collect();
        let hi = means.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lo = means.iter().copied().fold(f64::INFINITY, f64::min);
        let spread = hi - lo;
        pass &= means.len() == 4 && spread.is_finite() && spread <= 2.0;
        details.push(format!("{name}:spread={spread:.2}dB"));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(180);
    verdict(4, "snapshot stability", pass, elapsed, &details.join(" "));
}

/// `E‖ηI + ρC − R‖²` over a finite ensemble of `C`, as a quadratic in `(η, ρ)`.
struct EnsembleMse {
    l: f64,
    c_sq: f64,
    r_sq: f64,
    tr_c: f64,
    tr_r: f64,
    tr_cr: f64,
}

impl EnsembleMse {
    fn new(r: &HermitianMatrix, ensemble: &[HermitianMatrix]) -> Self {
        let n = ensemble.len() as f64;
        let mean = |f: &dyn Fn(&HermitianMatrix) -> f64| ensemble.iter().map(f).sum::<f64>() / n;
        Self {
            l: r.dim() as f64,
            c_sq: mean(&|c| c.frobenius_sq()),
            r_sq: r.frobenius_sq(),
            tr_c: mean(&|c| c.trace()),
            tr_r: r.trace(),
            tr_cr: mean(&|c| (c.as_matrix() * r.as_matrix()).trace().re),
        }
    }

    fn eval(&self, eta: f64, rho: f64) -> f64 {
        eta * eta * self.l + rho * rho * self.c_sq + self.r_sq + 2.0 * eta * rho * self.tr_c
            - 2.0 * eta * self.tr_r
            - 2.0 * rho * self.tr_cr
    }

    /// Brute-force minimizer over `[0, 2μ] × [0, 1]` with step `step`.
    fn grid_argmin(&self, mu: f64, step: f64) -> (f64, f64) {
        let n_eta = (2.0 * mu / step).round() as usize;
        let n_rho = (1.0 / step).round() as usize;
        let mut best = (f64::INFINITY, 0.0, 0.0);
        for i in 0..=n_eta {
            let eta = i as f64 * step;
            for j in 0..=n_rho {
                let rho = j as f64 * step;
                let v = self.eval(eta, rho);
                if v < best.0 {
                    best = (v, eta, rho);
                }
            }
        }
        (best.1, best.2)
    }
}

fn literal_mse(r: &HermitianMatrix, ensemble: &[HermitianMatrix], eta: f64, rho: f64) -> f64 {
    let n = ensemble.len() as f64;
    ensemble
        .iter()
        .map(|c| (c.as_matrix().scale(rho) + CMatrix::identity(r.dim(), r.dim()).scale(eta) - r.as_matrix()).norm_squared())
        .sum::<f64>()
        / n
}

/// Target with `tr R = L`, so `μ = 1` and the grid is `[0, 2] × [0, 1]`.
fn unit_mu_target(l: usize, rng: &mut ChaCha8Rng) -> HermitianMatrix {
    let rank = rng.random_range(1..=l);
    let r = random_psd(l, rank, rng).plus_identity(0.1);
    let s = l as f64 / r.trace();
    r.scaled(s)
}

#[test]
fn criterion_5_shrinkage_closed_form_oracle() {
    let start = Instant::now();
    let l = 8;
    let step = 1e-3;
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut worst = 0.0f64;
    let mut worst_expansion = 0.0f64;
    for _ in 0..20 {
        let r = unit_mu_target(l, &mut rng);
        let spread = rng.random_range(0.05..2.0);
        // Antithetic pairs make the ensemble mean of C equal R exactly.
        let mut ensemble = Vec::new();
        let mut zeta = 0.0;
        for _ in 0..4 {
            let z = random_hermitian(l, &mut rng);
            let z = z.scaled(spread * (l as f64) / z.frobenius_sq().sqrt());
            zeta += z.frobenius_sq();
            ensemble.push(r.combine(1.0, &z, 1.0).unwrap());
            ensemble.push(r.combine(1.0, &z, -1.0).unwrap());
        }
        zeta /= 4.0;
        let mse = EnsembleMse::new(&r, &ensemble);
        for _ in 0..3 {
            let (eta, rho) = (rng.random_range(0.0..2.0), rng.random_range(0.0..1.0));
            let direct = literal_mse(&r, &ensemble, eta, rho);
            worst_expansion = worst_expansion.max((mse.eval(eta, rho) - direct).abs() / direct);
        }
        let (eta0, rho0) = oracle_weights(&r, zeta);
        let (eta_g, rho_g) = mse.grid_argmin(1.0, step);
        worst = worst.max((eta_g - eta0).abs()).max((rho_g - rho0).abs());
    }

    // With independent draws the ensemble mean misses R and the dropped
    // cross-term reappears; report its size relative to the MSE.
    let mut cross_ratio = 0.0f64;
    let mut iid_offset = 0.0f64;
    for _ in 0..20 {
        let r = unit_mu_target(l, &mut rng);
        let ensemble: Vec<HermitianMatrix> = (0..50)
            .map(|_| {
                let z = random_hermitian(l, &mut rng).scaled(0.3);
                r.combine(1.0, &z, 1.0).unwrap()
            })
            .collect();
        let zeta = ensemble.iter().map(|c| c.combine(1.0, &r, -1.0).unwrap().frobenius_sq()).sum::<f64>() / 50.0;
        let (eta0, rho0) = oracle_weights(&r, zeta);
        let mse = EnsembleMse::new(&r, &ensemble);
        let without_cross = {
            let d = r.scaled(rho0 - 1.0).plus_identity(eta0);
            d.frobenius_sq() + rho0 * rho0 * zeta
        };
        let full = mse.eval(eta0, rho0);
        cross_ratio = cross_ratio.max((full - without_cross).abs() / full);
        let (eta_g, rho_g) = mse.grid_argmin(1.0, step);
        iid_offset = iid_offset.max((eta_g - eta0).abs()).max((rho_g - rho0).abs());
    }

    let elapsed = start.elapsed();
    let pass = worst <= step + 1e-12 && worst_expansion < 1e-9 && elapsed < Duration::from_secs(30);
    verdict(
        5,
        "shrinkage closed-form oracle",
        pass,
        elapsed,
        &format!(
            "max_offset={worst:.1e} expansion_err={worst_expansion:.1e} iid_cross_term_ratio={cross_ratio:.2e} iid_offset={iid_offset:.1e}"
        ),
    );
}

fn literal_zeta(x: &SnapshotSet, scm: &HermitianMatrix) -> f64 {
    let k = x.len() as f64;
    let fourth: f64 = x.iter().map(|v| v.norm_squared().powi(2)).sum();
    fourth / (k * k) - scm.frobenius_sq() / k
}

#[test]
fn criterion_6_zeta_identity() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let l = rng.random_range(2..=16);
        let k = rng.random_range(2..=200);
        let scale: f64 = rng.random_range(0.01..100.0);
        let x = SnapshotSet::from_matrix(random_matrix(l, k, &mut rng).scale(scale)).unwrap();
        let scm = sample_covariance(&x).unwrap();
        let ours = zeta_hat(&x, &scm).unwrap();
        let direct = literal_zeta(&x, &scm);
        worst = worst.max((ours - direct).abs() / direct.abs());
    }
    let mut single_zero = true;
    for _ in 0..20 {
        let l = rng.random_range(2..=16);
        let x = SnapshotSet::from_matrix(random_matrix(l, 1, &mut rng)).unwrap();
        let scm = sample_covariance(&x).unwrap();
        single_zero &= zeta_hat(&x, &scm).unwrap() == 0.0;
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-10 && single_zero;
    verdict(
        6,
        "zeta identity",
        pass,
        elapsed,
        &format!("worst_rel_err={worst:.2e} single_snapshot_zero={single_zero}"),
    );
}

#[test]
fn criterion_7_beampattern_monotonicity() {
    let start = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let mut details = Vec::new();
    let mut pass = true;
    for (name, kind) in [("beampattern-rho", SweepKind::BeampatternRho), ("beampattern-eta", SweepKind::BeampatternEta)] {
        let cfg = ExperimentConfig {
            output_dir: dir.path().join(name),
            ..preset(name).unwrap()
        };
        let SweepOutput::Beampattern(nulls) = run_sweep(&cfg).unwrap().output else {
            panic!("beampattern sweep returned another output kind");
        };
        let ok = nulls_monotone(kind, &nulls, true);
        pass &= ok;
        let depths: Vec<String> = nulls
            .iter()
            .map(|n| format!("{}@{}:{:.1}", n.sweep_value, n.interferer_deg, n.null_db))
            .collect();
        details.push(format!("{name}={ok} [{}]", depths.join(",")));
    }
    verdict(7, "beampattern monotonicity", pass, start.elapsed(), &details.join(" "));
}

#[test]
fn criterion_8_tracker_vs_bound() {
    let start = Instant::now();
    let cfg = preset("crb").unwrap();
    let rows = doa_mse_experiment(&mse_study(&cfg)).unwrap();
    let mut pass = rows.len() == cfg.sweep_values.len();
    let mut details = Vec::new();
    for r in &rows {
        let ratio = r.mse_deg2 / r.crb_deg2;
        pass &= r.mse_deg2 >= r.crb_deg2;
        if r.snr_db >= 10.0 {
            pass &= ratio <= 2.0;
        }
        details.push(format!("snr={}:ratio={ratio:.2e}", r.snr_db));
    }
    let elapsed = start.elapsed();
    pass &= elapsed < Duration::from_secs(120);
    verdict(8, "tracker MSE against bound", pass, elapsed, &details.join(" "));
}

fn hermitian_psd(m: &HermitianMatrix) -> bool {
    m.max_asymmetry() == 0.0 && m.is_psd(1e-10)
}

#[test]
fn criterion_9_contract_suite() {
    let start = Instant::now();

    // Distortionless response and covariance contracts across mismatch kinds.
    let mut worst_distortion = 0.0f64;
    let mut weights = 0;
    let mut covariances_ok = true;
    for name in ["look-snr", "random-sv-snr", "gain-phase-snr", "geometry-snr"] {
        let cfg = ExperimentConfig {
            trials: 10,
            ..preset(name).unwrap()
        };
        for (p, &v) in [-10.0, 10.0, 30.0].iter().enumerate() {
            for t in 0..cfg.trials {
                let key = trial_key(p, t);
                let trial = run_trial(&cfg, v, key).unwrap();
                for (_, out) in &trial.outcomes {
                    if let Ok(res) = out {
                        let d = (res.weights.dotc(&res.soi_sv_used) - Complex::new(1.0, 0.0)).norm();
                        worst_distortion = worst_distortion.max(d);
                        weights += 1;
                    }
                }
                let (_, x) = trial_data(&cfg, &cfg.scenario_at(v), key).unwrap();
                let scm = sample_covariance(&x).unwrap();
                covariances_ok &= hermitian_psd(&scm);
                covariances_ok &= hermitian_psd(&theoretical_covariance(&trial.truth));
                covariances_ok &= hermitian_psd(&theoretical_ipnc(&trial.truth));
                if let Ok(soi) = estimate_soi(&scm, x.len(), &cfg.soi_sector(), &trial.truth.geometry, &cfg.power_method()) {
                    covariances_ok &= hermitian_psd(&soi.covariance);
                }
                if let Some(run) = &trial.ppbss {
                    covariances_ok &= hermitian_psd(&run.reconstruction);
                    covariances_ok &= hermitian_psd(&run.preprocessing);
                }
            }
        }
    }

    // Clamped shrinkage weights on random inputs.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut clamps_ok = true;
    let mut evaluated = 0;
    for _ in 0..10_000 {
        let l = rng.random_range(2..=12);
        let rank = rng.random_range(1..=l);
        let c = random_psd(l, rank, &mut rng).scaled(rng.random_range(1e-3..1e3));
        let mu = 10f64.powf(rng.random_range(-3.0..4.0));
        let zeta = 10f64.powf(rng.random_range(-6.0..8.0));
        if let Ok(s) = stats_from_parts(mu, zeta, &c) {
            evaluated += 1;
            clamps_ok &= (0.0..=1.0).contains(&s.rho_tilde) && (0.0..=s.mu_hat).contains(&s.eta_tilde);
        }
    }

    // Byte-identical CSVs across worker counts.
    let dir = tempfile::tempdir().unwrap();
    let mut identical = true;
    for name in ["look-snr", "correlation", "crb"] {
        let run = |threads: usize| {
            let out = dir.path().join(format!("{name}-{threads}"));
            let cfg = ExperimentConfig {
                trials: 12,
                sweep_values: preset(name).unwrap().sweep_values.into_iter().take(3).collect(),
                threads: Some(threads),
                output_dir: out.clone(),
                ..preset(name).unwrap()
            };
            run_sweep(&cfg).unwrap();
            let mut files: Vec<_> = fs::read_dir(&out)
                .unwrap()
                .map(|e| e.unwrap().path())
                .filter(|p| p.extension().is_some_and(|e| e == "csv"))
                .collect();
            files.sort();
            files
                .iter()
                .map(|p| (p.file_name().unwrap().to_owned(), fs::read(p).unwrap()))
                .collect::<Vec<_>>()
        };
        let one = run(1);
        identical &= !one.is_empty() && one == run(4);
    }

    let elapsed = start.elapsed();
    let pass = weights > 0 && worst_distortion < 1e-10 && covariances_ok && clamps_ok && evaluated > 9_000 && identical;
    verdict(
        9,
        "contract suite",
        pass,
        elapsed,
        &format!(
            "weights={weights} worst_distortion={worst_distortion:.1e} covariances_ok={covariances_ok} \
             clamp_inputs={evaluated} clamps_ok={clamps_ok} byte_identical={identical}"
        ),
    );
}
