//! Dense symmetric linear algebra: cyclic Jacobi eigendecomposition, PSD and
//! rank tests, Householder reflectors and matrix-pencil singularity checks.
//!
//! Every tolerance is relative to `max(1, ‖M‖_max)` so that the same defaults
//! behave consistently on tiny and huge instances.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default relative tolerance for PSD decisions.
pub const PSD_TOL: f64 = 1e-9;
/// Default relative tolerance for numerical rank.
pub const RANK_TOL: f64 = 1e-9;
/// Default relative tolerance for pivot-based singularity tests.
pub const SING_TOL: f64 = 1e-10;
/// Householder underflow guard on `‖v‖₂`.
pub const UNDERFLOW_GUARD: f64 = 1e-300;

/// Real symmetric matrix. Only the upper triangle is authoritative on
/// construction; the stored matrix is always exactly symmetric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<Vec<f64>>", try_from = "Vec<Vec<f64>>")]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self(DMatrix::zeros(n, n))
    }

    pub fn identity(n: usize) -> Self {
        Self(DMatrix::identity(n, n))
    }

    pub fn from_diagonal(diag: &[f64]) -> Self {
        Self(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    /// Builds a matrix from `f(i, j)` evaluated on the upper triangle `i <= j`.
    pub fn from_fn(n: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in i..n {
                let v = f(i, j);
                m[(i, j)] = v;
                m[(j, i)] = v;
            }
        }
        Self(m)
    }

    /// Mirrors the upper triangle of a square matrix onto the lower one.
    pub fn from_upper(m: &DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        Ok(Self::from_fn(m.nrows(), |i, j| m[(i, j)]))
    }

    /// Symmetric part `(M + Mᵀ)/2` of an arbitrary square matrix.
    pub fn symmetric_part(m: &DMatrix<f64>) -> Self {
        let n = m.nrows();
        Self::from_fn(n, |i, j| 0.5 * (m[(i, j)] + m[(j, i)]))
    }

    /// Accepts a full matrix only if it is exactly symmetric.
    pub fn try_from_matrix(m: DMatrix<f64>) -> Result<Self> {
        if m.nrows() != m.ncols() {
            return Err(Error::DimensionMismatch {
                expected: m.nrows(),
                found: m.ncols(),
            });
        }
        for i in 0..m.nrows() {
            for j in (i + 1)..m.ncols() {
                if m[(i, j)] != m[(j, i)] {
                    return Err(Error::NotSymmetric { row: i, col: j });
                }
            }
        }
        Ok(Self(m))
    }

    pub fn from_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        let mut m = DMatrix::zeros(n, n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    found: row.len(),
                });
            }
            for (j, v) in row.iter().enumerate() {
                m[(i, j)] = *v;
            }
        }
        Self::try_from_matrix(m)
    }

    /// `v vᵀ`.
    pub fn outer(v: &DVector<f64>) -> Self {
        Self(v * v.transpose())
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.0[(i, j)]
    }

    /// Sets entry `(i, j)` and its mirror.
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.0[(i, j)] = v;
        self.0[(j, i)] = v;
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.0
    }

    /// `‖M‖_max`, the largest absolute entry.
    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    /// `max(1, ‖M‖_max)`, the reference scale for relative tolerances.
    pub fn scale(&self) -> f64 {
        self.max_abs().max(1.0)
    }

    /// Frobenius inner product `⟨self, other⟩`.
    pub fn inner(&self, other: &SymMatrix) -> f64 {
        self.0.dot(&other.0)
    }

    /// Quadratic form `xᵀ M x`.
    pub fn quad(&self, x: &DVector<f64>) -> f64 {
        x.dot(&(&self.0 * x))
    }

    pub fn scaled(&self, alpha: f64) -> SymMatrix {
        Self(&self.0 * alpha)
    }

    /// `self + alpha * other`.
    pub fn axpy(&self, alpha: f64, other: &SymMatrix) -> SymMatrix {
        Self(&self.0 + &other.0 * alpha)
    }

    pub fn neg(&self) -> SymMatrix {
        self.scaled(-1.0)
    }

    /// Congruence `Uᵀ M U`, symmetrized to absorb rounding.
    pub fn congruence(&self, u: &DMatrix<f64>) -> SymMatrix {
        let prod = u.transpose() * &self.0 * u;
        Self::symmetric_part(&prod)
    }

    pub fn max_abs_diff(&self, other: &SymMatrix) -> f64 {
        (&self.0 - &other.0).amax()
    }

    pub fn is_diagonal(&self) -> bool {
        let n = self.dim();
        (0..n).all(|i| ((i + 1)..n).all(|j| self.0[(i, j)] == 0.0))
    }
}

impl From<SymMatrix> for Vec<Vec<f64>> {
    fn from(m: SymMatrix) -> Self {
        m.0.row_iter().map(|r| r.iter().copied().collect()).collect()
    }
}

impl TryFrom<Vec<Vec<f64>>> for SymMatrix {
    type Error = Error;

    fn try_from(rows: Vec<Vec<f64>>) -> Result<Self> {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        SymMatrix::from_rows(&refs)
    }
}

/// Eigendecomposition `M = V diag(values) Vᵀ` with ascending eigenvalues.
#[derive(Debug, Clone)]
pub struct EigDecomposition {
    pub values: DVector<f64>,
    pub vectors: DMatrix<f64>,
}

impl EigDecomposition {
    pub fn min(&self) -> f64 {
        self.values[0]
    }

    pub fn max(&self) -> f64 {
        self.values[self.values.len() - 1]
    }

    /// `V diag(values) Vᵀ`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let scaled = DMatrix::from_fn(self.vectors.nrows(), self.vectors.ncols(), |i, j| {
            self.vectors[(i, j)] * self.values[j]
        });
        scaled * self.vectors.transpose()
    }
}

/// Eigendecomposition by cyclic Jacobi rotations, capped at `100·n²` rotations.
pub fn eig_sym(m: &SymMatrix) -> Result<EigDecomposition> {
    let n = m.dim();
    eig_sym_capped(m, (100 * n * n).max(100))
}

pub fn eig_sym_capped(m: &SymMatrix, max_rotations: usize) -> Result<EigDecomposition> {
    let n = m.dim();
    let mut a = m.as_matrix().clone();
    let mut v = DMatrix::<f64>::identity(n, n);
    let frob = a.norm();
    let mut rotations = 0usize;

    let mut sweep = 0usize;
    loop {
        let mut off = 0.0;
        for p in 0..n {
            for q in (p + 1)..n {
                off += a[(p, q)] * a[(p, q)];
            }
        }
        let off = off.sqrt();
        if off == 0.0 || off <= 1e-18 * frob {
            break;
        }
        sweep += 1;
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq == 0.0 {
                    continue;
                }
                let app = a[(p, p)];
                let aqq = a[(q, q)];
                let g = 100.0 * apq.abs();
                // Negligible next to both diagonal entries: drop it.
                if sweep > 4 && app.abs() + g == app.abs() && aqq.abs() + g == aqq.abs() {
                    a[(p, q)] = 0.0;
                    a[(q, p)] = 0.0;
                    continue;
                }
                if rotations >= max_rotations {
                    return Err(Error::NonConvergence { rotations });
                }
                rotations += 1;

                let theta = (aqq - app) / (2.0 * apq);
                let t = if theta.is_finite() {
                    let sign = if theta >= 0.0 { 1.0 } else { -1.0 };
                    sign / (theta.abs() + (theta * theta + 1.0).sqrt())
                } else {
                    0.5 / theta
                };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;

                a[(p, p)] = app - t * apq;
                a[(q, q)] = aqq + t * apq;
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
                for r in 0..n {
                    if r == p || r == q {
                        continue;
                    }
                    let arp = a[(r, p)];
                    let arq = a[(r, q)];
                    let new_rp = c * arp - s * arq;
                    let new_rq = s * arp + c * arq;
                    a[(r, p)] = new_rp;
                    a[(p, r)] = new_rp;
                    a[(r, q)] = new_rq;
                    a[(q, r)] = new_rq;
                }
                for r in 0..n {
                    let vrp = v[(r, p)];
                    let vrq = v[(r, q)];
                    v[(r, p)] = c * vrp - s * vrq;
                    v[(r, q)] = s * vrp + c * vrq;
                }
            }
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| a[(i, i)].total_cmp(&a[(j, j)]));
    let values = DVector::from_iterator(n, order.iter().map(|&i| a[(i, i)]));
    let vectors = DMatrix::from_fn(n, n, |r, c| v[(r, order[c])]);
    Ok(EigDecomposition { values, vectors })
}

pub fn lambda_min(m: &SymMatrix) -> Result<f64> {
    Ok(eig_sym(m)?.min())
}

/// True iff `λ_min(M) ≥ −tol·max(1, ‖M‖_max)`.
pub fn psd_check(m: &SymMatrix, tol: f64) -> Result<bool> {
    let lmin = lambda_min(m)?;
    Ok(lmin >= -tol * m.scale())
}

/// Number of eigenvalues with `|λ| > tol·max(1, ‖M‖_max)`.
pub fn numerical_rank(m: &SymMatrix, tol: f64) -> Result<usize> {
    let eig = eig_sym(m)?;
    let threshold = tol * m.scale();
    Ok(eig.values.iter().filter(|l| l.abs() > threshold).count())
}

pub fn numerical_nullity(m: &SymMatrix, tol: f64) -> Result<usize> {
    Ok(m.dim() - numerical_rank(m, tol)?)
}

/// Householder reflector `H = I − 2 w wᵀ / wᵀw` mapping `v` to `α e₁` with
/// `α = −sign(v₁)‖v‖₂` (a zero `v₁` counts as positive).
pub fn householder_reflector(v: &DVector<f64>) -> Result<SymMatrix> {
    let norm = v.norm();
    if !(norm > UNDERFLOW_GUARD) {
        return Err(Error::ZeroVector);
    }
    let sign = if v[0] >= 0.0 { 1.0 } else { -1.0 };
    let alpha = -sign * norm;
    let mut w = v.clone();
    w[0] -= alpha;
    let wtw = w.dot(&w);
    let k = v.len();
    let mut h = DMatrix::<f64>::identity(k, k);
    h -= (&w * w.transpose()) * (2.0 / wtw);
    Ok(SymMatrix::symmetric_part(&h))
}

/// Smallest absolute pivot of a partial-pivot LU factorization.
pub fn min_pivot(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return f64::INFINITY;
    }
    let lu = a.clone().lu();
    let u = lu.u();
    (0..u.nrows()).map(|i| u[(i, i)].abs()).fold(f64::INFINITY, f64::min)
}

/// True iff `K − γM` has smallest LU pivot above `sing_tol·max(1, ‖K − γM‖_max)`.
pub fn pencil_nonsingular(k: &SymMatrix, m: &SymMatrix, gamma: f64) -> Result<bool> {
    pencil_nonsingular_tol(k, m, gamma, SING_TOL)
}

pub fn pencil_nonsingular_tol(k: &SymMatrix, m: &SymMatrix, gamma: f64, sing_tol: f64) -> Result<bool> {
    if k.dim() != m.dim() {
        return Err(Error::DimensionMismatch {
            expected: k.dim(),
            found: m.dim(),
        });
    }
    if gamma == 0.0 {
        return Err(Error::InvalidArgument("pencil parameter must be nonzero".into()));
    }
    let pencil = k.axpy(-gamma, m);
    Ok(min_pivot(pencil.as_matrix()) > sing_tol * pencil.scale())
}
