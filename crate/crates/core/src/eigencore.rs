//! Symmetric eigen-decomposition and quadratic-form evaluation.
//!
//! The solver is a cyclic Jacobi iteration: every sweep visits each
//! off-diagonal pair `(p, q)` once and applies the plane rotation that zeroes
//! it. Rotations are accumulated into the modal matrix, whose columns end up
//! as orthonormal eigenvectors.
//!
//! Results are normalized for reproducibility:
//!
//! * eigenvalues are sorted descending, ties keep their original diagonal order;
//! * each eigenvector is flipped so that its largest-magnitude component is
//!   positive (the first such component wins on ties).

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

/// Maximum entry-wise asymmetry accepted by [`SymMatrix::new`].
pub const SYMMETRY_TOLERANCE: f64 = 1e-12;
/// Off-diagonal Frobenius norm target, relative to the input's Frobenius norm.
pub const CONVERGENCE_TOLERANCE: f64 = 1e-12;
/// Number of full sweeps before the solver gives up.
pub const MAX_SWEEPS: usize = 100;
/// Gram eigenvalues below `RANK_TOLERANCE * max` are treated as zero.
pub const RANK_TOLERANCE: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EigenError {
    #[error("matrix must have at least one row")]
    Empty,
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a[{row}][{col}] - a[{col}][{row}]| = {gap:e}")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix contains a non-finite entry at ({row}, {col})")]
    NonFinite { row: usize, col: usize },
    #[error(
        "jacobi iteration did not converge after {sweeps} sweeps (off-diagonal norm {off_norm:e})"
    )]
    NoConvergence { sweeps: usize, off_norm: f64 },
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("requested zero eigenvectors")]
    ZeroRank,
}

/// A real symmetric matrix. Symmetry is checked once, on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix(DMatrix<f64>);

impl SymMatrix {
    pub fn new(m: DMatrix<f64>) -> Result<Self, EigenError> {
        let (rows, cols) = m.shape();
        if rows == 0 || cols == 0 {
            return Err(EigenError::Empty);
        }
        if rows != cols {
            return Err(EigenError::NotSquare { rows, cols });
        }
        for i in 0..rows {
            for j in 0..cols {
                if !m[(i, j)].is_finite() {
                    return Err(EigenError::NonFinite { row: i, col: j });
                }
            }
        }
        for i in 0..rows {
            for j in (i + 1)..cols {
                let gap = (m[(i, j)] - m[(j, i)]).abs();
                if gap > SYMMETRY_TOLERANCE {
                    return Err(EigenError::NotSymmetric {
                        row: i,
                        col: j,
                        gap,
                    });
                }
            }
        }
        Ok(SymMatrix(m))
    }

    /// Builds a matrix from row-major entries.
    pub fn from_row_slice(dim: usize, entries: &[f64]) -> Result<Self, EigenError> {
        if entries.len() != dim * dim {
            return Err(EigenError::DimensionMismatch {
                expected: dim * dim,
                found: entries.len(),
            });
        }
        Self::new(DMatrix::from_row_slice(dim, dim, entries))
    }

    pub fn identity(dim: usize) -> Self {
        SymMatrix(DMatrix::identity(dim, dim))
    }

    pub fn from_diagonal(diag: &[f64]) -> Result<Self, EigenError> {
        Self::new(DMatrix::from_diagonal(&DVector::from_column_slice(diag)))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_matrix(&self) -> &DMatrix<f64> {
        &self.0
    }

    pub fn trace(&self) -> f64 {
        self.0.trace()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `k` is the unit eigenvector for `eigenvalues[k]`.
    pub modal_matrix: DMatrix<f64>,
}

impl EigenDecomposition {
    /// `P * diag(lambda) * P^T`.
    pub fn reconstruct(&self) -> DMatrix<f64> {
        let d = DMatrix::from_diagonal(&DVector::from_column_slice(&self.eigenvalues));
        &self.modal_matrix * d * self.modal_matrix.transpose()
    }
}

fn off_diagonal_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                sum += a[(i, j)] * a[(i, j)];
            }
        }
    }
    sum.sqrt()
}

/// Applies the rotation annihilating `a[p][q]` to `a` and accumulates it into `v`.
fn rotate(a: &mut DMatrix<f64>, v: &mut DMatrix<f64>, p: usize, q: usize) {
    let apq = a[(p, q)];
    if apq == 0.0 {
        return;
    }
    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
    let t = if theta.abs() > 1e150 {
        0.5 / theta
    } else {
        theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt())
    };
    let c = 1.0 / (t * t + 1.0).sqrt();
    let s = t * c;
    let n = a.nrows();

    for k in 0..n {
        let akp = a[(k, p)];
        let akq = a[(k, q)];
        a[(k, p)] = c * akp - s * akq;
        a[(k, q)] = s * akp + c * akq;
    }
    for k in 0..n {
        let apk = a[(p, k)];
        let aqk = a[(q, k)];
        a[(p, k)] = c * apk - s * aqk;
        a[(q, k)] = s * apk + c * aqk;
    }
    a[(p, q)] = 0.0;
    a[(q, p)] = 0.0;

    for k in 0..n {
        let vkp = v[(k, p)];
        let vkq = v[(k, q)];
        v[(k, p)] = c * vkp - s * vkq;
        v[(k, q)] = s * vkp + c * vkq;
    }
}

/// Flips `col` so its largest-magnitude entry is positive.
fn canonicalize_sign(m: &mut DMatrix<f64>, col: usize) {
    let mut best = 0usize;
    let mut best_mag = -1.0;
    for r in 0..m.nrows() {
        let mag = m[(r, col)].abs();
        if mag > best_mag {
            best_mag = mag;
            best = r;
        }
    }
    if m[(best, col)] < 0.0 {
        m.column_mut(col).neg_mut();
    }
}

/// Full eigen-decomposition of a symmetric matrix by cyclic Jacobi rotations.
pub fn eigen_symmetric(m: &SymMatrix) -> Result<EigenDecomposition, EigenError> {
    let n = m.dim();
    let mut a = m.0.clone();
    let mut v = DMatrix::<f64>::identity(n, n);

    let target = CONVERGENCE_TOLERANCE * a.norm();
    let mut off = off_diagonal_norm(&a);
    let mut sweeps = 0;
    while off > target || (off > 0.0 && target == 0.0) {
        if sweeps == MAX_SWEEPS {
            return Err(EigenError::NoConvergence {
                sweeps,
                off_norm: off,
            });
        }
        for p in 0..n {
            for q in (p + 1)..n {
                rotate(&mut a, &mut v, p, q);
            }
        }
        sweeps += 1;
        off = off_diagonal_norm(&a);
    }

    let mut order: Vec<usize> = (0..n).collect();
    // stable: equal eigenvalues keep ascending original index
    order.sort_by(|&i, &j| a[(j, j)].total_cmp(&a[(i, i)]));

    let eigenvalues: Vec<f64> = order.iter().map(|&i| a[(i, i)]).collect();
    let mut modal_matrix = DMatrix::<f64>::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        modal_matrix.set_column(dst, &v.column(src));
        canonicalize_sign(&mut modal_matrix, dst);
    }
    Ok(EigenDecomposition {
        eigenvalues,
        modal_matrix,
    })
}

/// Returns the normalized modal matrix `P` and the diagonal `D` with
/// `P^T * m * P = D`.
pub fn diagonalize(m: &SymMatrix) -> Result<(DMatrix<f64>, Vec<f64>), EigenError> {
    let EigenDecomposition {
        eigenvalues,
        modal_matrix,
    } = eigen_symmetric(m)?;
    Ok((modal_matrix, eigenvalues))
}

/// Quadratic form `c^T m c`, expanded directly as a double sum.
pub fn canonical_form(c: &[f64], m: &SymMatrix) -> Result<f64, EigenError> {
    let n = m.dim();
    if c.len() != n {
        return Err(EigenError::DimensionMismatch {
            expected: n,
            found: c.len(),
        });
    }
    let a = &m.0;
    let mut q = 0.0;
    for i in 0..n {
        let mut row = 0.0;
        for j in 0..n {
            row += a[(i, j)] * c[j];
        }
        q += c[i] * row;
    }
    Ok(q)
}

/// Quadratic form evaluated in the principal axes: `sum_k lambda_k * y_k^2`
/// with `y = P^T c`.
pub fn canonical_form_diagonal(
    c: &[f64],
    decomposition: &EigenDecomposition,
) -> Result<f64, EigenError> {
    let n = decomposition.eigenvalues.len();
    if c.len() != n {
        return Err(EigenError::DimensionMismatch {
            expected: n,
            found: c.len(),
        });
    }
    let p = &decomposition.modal_matrix;
    let mut q = 0.0;
    for (k, &lambda) in decomposition.eigenvalues.iter().enumerate() {
        let y: f64 = (0..n).map(|i| p[(i, k)] * c[i]).sum();
        q += lambda * y * y;
    }
    Ok(q)
}

/// Both evaluation routes of the quadratic form, for cross-checking.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CanonicalFormCheck {
    pub direct: f64,
    pub diagonal: f64,
    /// `sum_ij |a_ij c_i c_j|`, the magnitude scale of the direct sum.
    pub scale: f64,
}

impl CanonicalFormCheck {
    /// Discrepancy between the two routes relative to [`Self::scale`].
    pub fn relative_gap(&self) -> f64 {
        if self.scale == 0.0 {
            (self.direct - self.diagonal).abs()
        } else {
            (self.direct - self.diagonal).abs() / self.scale
        }
    }
}

pub fn canonical_form_check(c: &[f64], m: &SymMatrix) -> Result<CanonicalFormCheck, EigenError> {
    let direct = canonical_form(c, m)?;
    let decomposition = eigen_symmetric(m)?;
    let diagonal = canonical_form_diagonal(c, &decomposition)?;
    let n = m.dim();
    let mut scale = 0.0;
    for i in 0..n {
        for j in 0..n {
            scale += (m.0[(i, j)] * c[i] * c[j]).abs();
        }
    }
    Ok(CanonicalFormCheck {
        direct,
        diagonal,
        scale,
    })
}

/// Leading eigenpairs of `A * A^T`, obtained from the smaller Gram matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotBasis {
    /// Eigenvalues of `A * A^T` (equivalently of `A^T * A`), descending.
    pub eigenvalues: Vec<f64>,
    /// `n x k`, orthonormal columns.
    pub vectors: DMatrix<f64>,
}

/// Eigenvectors of `A * A^T` for a tall `n x N` matrix `A`, computed from the
/// `N x N` matrix `A^T * A`.
///
/// Every Gram eigenvector `w` maps to `v = A w / |A w|`. Pairs whose eigenvalue
/// falls below [`RANK_TOLERANCE`] times the largest are dropped, so fewer than
/// `top_k` vectors may come back.
pub fn snapshot_eigenvectors(a: &DMatrix<f64>, top_k: usize) -> Result<SnapshotBasis, EigenError> {
    if top_k == 0 {
        return Err(EigenError::ZeroRank);
    }
    let (n, samples) = a.shape();
    if n == 0 || samples == 0 {
        return Err(EigenError::Empty);
    }
    let mut gram = a.transpose() * a;
    // symmetrize away rounding in the product
    for i in 0..samples {
        for j in (i + 1)..samples {
            let s = 0.5 * (gram[(i, j)] + gram[(j, i)]);
            gram[(i, j)] = s;
            gram[(j, i)] = s;
        }
    }
    let decomposition = eigen_symmetric(&SymMatrix::new(gram)?)?;
    let lambda_max = decomposition.eigenvalues.first().copied().unwrap_or(0.0);
    let cutoff = RANK_TOLERANCE * lambda_max;

    let keep: Vec<usize> = decomposition
        .eigenvalues
        .iter()
        .enumerate()
        .filter(|(_, &l)| lambda_max > 0.0 && l > cutoff)
        .map(|(i, _)| i)
        .take(top_k)
        .collect();

    let mut vectors = DMatrix::<f64>::zeros(n, keep.len());
    for (dst, &src) in keep.iter().enumerate() {
        let mut v = a * decomposition.modal_matrix.column(src);
        // re-orthogonalize against the vectors already accepted
        for prev in 0..dst {
            let proj = vectors.column(prev).dot(&v);
            v.axpy(-proj, &vectors.column(prev), 1.0);
        }
        let norm = v.norm();
        v /= norm;
        vectors.set_column(dst, &v);
        canonicalize_sign(&mut vectors, dst);
    }
    let eigenvalues = keep.iter().map(|&i| decomposition.eigenvalues[i]).collect();
    Ok(SnapshotBasis {
        eigenvalues,
        vectors,
    })
}
