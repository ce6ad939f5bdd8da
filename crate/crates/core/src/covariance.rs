//! Sample and theoretical covariance matrices, plus a column-wise Pearson
//! correlation between two complex matrices.

use std::fmt::Write as _;

use nalgebra::{Cholesky, DMatrix, SymmetricEigen};

use crate::signal_model::{ScenarioTruth, SnapshotSet};
use crate::{CMatrix, CVector, Complex, Error, Result};

/// Square complex matrix kept exactly Hermitian by symmetrizing on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct HermitianMatrix(CMatrix);

/// Eigenpairs of a Hermitian matrix, eigenvalues ascending.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: Vec<f64>,
    /// Eigenvectors as columns, in the same order as `values`.
    pub vectors: CMatrix,
}

impl HermitianMatrix {
    /// Wraps `m` after replacing it with `(m + m^H) / 2`.
    pub fn from_matrix(m: CMatrix) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::Dimension { expected: m.nrows(), found: m.ncols() });
        }
        let h = (&m + m.adjoint()) * Complex::new(0.5, 0.0);
        Ok(Self(h))
    }

    pub fn identity(dim: usize) -> Self {
        Self(CMatrix::identity(dim, dim))
    }

    pub fn zeros(dim: usize) -> Self {
        Self(CMatrix::zeros(dim, dim))
    }

    /// `v v^H`.
    pub fn outer(v: &CVector) -> Self {
        let mut m = Self::zeros(v.len());
        m.add_outer(v, 1.0);
        m
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &CMatrix {
        &self.0
    }

    pub fn into_matrix(self) -> CMatrix {
        self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.diagonal().iter().map(|z| z.re).sum()
    }

    /// Squared Frobenius norm.
    pub fn frobenius_sq(&self) -> f64 {
        self.0.iter().map(|z| z.norm_sqr()).sum()
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self(&self.0 * Complex::new(c, 0.0))
    }

    /// `self + c·I`.
    pub fn plus_identity(&self, c: f64) -> Self {
        let mut m = self.0.clone();
        for i in 0..m.nrows() {
            m[(i, i)] += c;
        }
        Self(m)
    }

    /// `a·self + b·other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension { expected: self.dim(), found: other.dim() });
        }
        Ok(Self(&self.0 * Complex::new(a, 0.0) + &other.0 * Complex::new(b, 0.0)))
    }

    /// `self += weight · v v^H`, filling the lower triangle from the upper one
    /// so the result stays exactly Hermitian.
    pub fn add_outer(&mut self, v: &CVector, weight: f64) {
        let n = self.dim();
        for j in 0..n {
            for i in 0..j {
                let z = v[i] * v[j].conj() * weight;
                self.0[(i, j)] += z;
                self.0[(j, i)] += z.conj();
            }
            self.0[(j, j)] += v[j].norm_sqr() * weight;
        }
    }

    pub fn mul_vec(&self, v: &CVector) -> CVector {
        &self.0 * v
    }

    /// `v^H M v`, real for Hermitian `M`.
    pub fn quad_form(&self, v: &CVector) -> f64 {
        v.dotc(&(&self.0 * v)).re
    }

    /// Solves `M y = b` by Cholesky factorization.
    pub fn solve(&self, b: &CVector) -> Result<CVector> {
        if b.len() != self.dim() {
            return Err(Error::Dimension { expected: self.dim(), found: b.len() });
        }
        let chol = Cholesky::new(self.0.clone()).ok_or(Error::SingularMatrix)?;
        let y = chol.solve(b);
        if y.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
            Ok(y)
        } else {
            Err(Error::SingularMatrix)
        }
    }

    pub fn eigen(&self) -> Eigen {
        let eig = SymmetricEigen::new(self.0.clone());
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let cols: Vec<CVector> = order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect();
        Eigen {
            values,
            vectors: CMatrix::from_columns(&cols),
        }
    }

    pub fn eigenvalues(&self) -> Vec<f64> {
        self.eigen().values
    }

    /// Largest `|m_ij − conj(m_ji)|`.
    pub fn max_asymmetry(&self) -> f64 {
        let n = self.dim();
        let mut worst = 0.0f64;
        for i in 0..n {
            for j in 0..n {
                worst = worst.max((self.0[(i, j)] - self.0[(j, i)].conj()).norm());
            }
        }
        worst
    }

    /// Numerically positive semidefinite: no eigenvalue below `-tol·|trace|`.
    pub fn is_psd(&self, tol: f64) -> bool {
        let floor = -tol * self.trace().abs().max(f64::MIN_POSITIVE);
        self.eigenvalues().iter().all(|&v| v >= floor)
    }

    /// Numerical rank: eigenvalues above `rel_tol` times the largest magnitude.
    pub fn rank(&self, rel_tol: f64) -> usize {
        let ev = self.eigenvalues();
        let top = ev.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if top == 0.0 {
            return 0;
        }
        ev.iter().filter(|v| v.abs() > rel_tol * top).count()
    }

    /// Rows of interleaved `re,im` pairs.
    pub fn to_csv_interleaved(&self) -> String {
        matrix_to_csv_interleaved(&self.0)
    }
}

pub fn matrix_to_csv_interleaved(m: &CMatrix) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let z = m[(i, j)];
            let _ = write!(out, "{},{}", z.re, z.im);
        }
        out.push('\n');
    }
    out
}

/// Parses the interleaved `re,im` layout written by [`matrix_to_csv_interleaved`].
pub fn matrix_from_csv_interleaved(text: &str) -> Result<CMatrix> {
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            l.split(',')
                .map(|f| {
                    f.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::InvalidConfig(format!("bad matrix entry {f:?}: {e}")))
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let n = rows.len();
    let width = rows.first().map_or(0, Vec::len);
    if width % 2 != 0 || rows.iter().any(|r| r.len() != width) {
        return Err(Error::InvalidConfig("ragged or odd-width matrix CSV".into()));
    }
    let cols = width / 2;
    Ok(CMatrix::from_fn(n, cols, |i, j| Complex::new(rows[i][2 * j], rows[i][2 * j + 1])))
}

/// `R̂ = (1/K) Σ x(t) x(t)^H`.
pub fn sample_covariance(snapshots: &SnapshotSet) -> Result<HermitianMatrix> {
    let k = snapshots.len();
    if k == 0 {
        return Err(Error::InsufficientData { needed: 1, found: 0 });
    }
    let x = snapshots.matrix();
    let r = x * x.adjoint() * Complex::new(1.0 / k as f64, 0.0);
    HermitianMatrix::from_matrix(r)
}

/// `σ_s² a_s a_s^H + Σ σ_p² a_p a_p^H + σ_n² I` with the realized steering vectors.
pub fn theoretical_covariance(truth: &ScenarioTruth) -> HermitianMatrix {
    let mut r = theoretical_ipnc(truth);
    r.add_outer(&truth.soi_sv, truth.params.soi_power);
    r
}

/// Interference-plus-noise part of [`theoretical_covariance`].
pub fn theoretical_ipnc(truth: &ScenarioTruth) -> HermitianMatrix {
    let mut r = HermitianMatrix::identity(truth.elements()).scaled(truth.params.noise_power);
    for (sv, &p) in truth.interferer_svs.iter().zip(&truth.params.interferer_powers) {
        r.add_outer(sv, p);
    }
    r
}

/// Complex column `j` as the real vector `[re; im]`.
fn stacked_column(m: &CMatrix, j: usize) -> Vec<f64> {
    let col = m.column(j);
    col.iter().map(|z| z.re).chain(col.iter().map(|z| z.im)).collect()
}

fn centered(v: &[f64]) -> Vec<f64> {
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    v.iter().map(|x| x - mean).collect()
}

/// Cross-correlation between the columns of `a` and `b`: entry `(i, j)` is the
/// Pearson coefficient of column `i` of `a` and column `j` of `b`, with each
/// complex column read as its stacked real and imaginary parts.
pub fn pearson_correlation(a: &HermitianMatrix, b: &HermitianMatrix) -> Result<DMatrix<f64>> {
    pearson_columns(a.as_matrix(), b.as_matrix())
}

/// [`pearson_correlation`] for general complex matrices with equal row counts.
pub fn pearson_columns(a: &CMatrix, b: &CMatrix) -> Result<DMatrix<f64>> {
    if a.nrows() != b.nrows() {
        return Err(Error::Dimension { expected: a.nrows(), found: b.nrows() });
    }
    let prep = |m: &CMatrix| -> Result<Vec<(Vec<f64>, f64)>> {
        (0..m.ncols())
            .map(|j| {
                let c = centered(&stacked_column(m, j));
                let ss: f64 = c.iter().map(|x| x * x).sum();
                if ss == 0.0 {
                    return Err(Error::UndefinedCorrelation { column: j });
                }
                Ok((c, ss))
            })
            .collect()
    };
    let ca = prep(a)?;
    let cb = prep(b)?;
    Ok(DMatrix::from_fn(ca.len(), cb.len(), |i, j| {
        let (x, sxx) = &ca[i];
        let (y, syy) = &cb[j];
        if x == y {
            return 1.0;
        }
        let sxy: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        // the 1/(n−1) factors cancel
        (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
    }))
}

/// Mean of the diagonal of a cross-correlation matrix, i.e. the average
/// correlation between corresponding columns.
pub fn mean_corresponding_correlation(corr: &DMatrix<f64>) -> f64 {
    let n = corr.nrows().min(corr.ncols());
    (0..n).map(|i| corr[(i, i)]).sum::<f64>() / n as f64
}

pub fn real_matrix_to_csv(m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            if j > 0 {
                out.push(',');
            }
            let _ = write!(out, "{}", m[(i, j)]);
        }
        out.push('\n');
    }
    out
}
