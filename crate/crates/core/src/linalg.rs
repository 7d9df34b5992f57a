//! Dense small-matrix kernel: p-vector norms, induced matrix norms, matrix
//! measures (logarithmic norms), a cyclic-Jacobi symmetric eigensolver and
//! the composite block bounds used to certify block-partitioned systems.
//!
//! Everything here targets matrices of a few dozen rows at most; there is no
//! attempt at sparsity or blocking.

use thiserror::Error;

/// Default convergence tolerance for the Jacobi eigensolver.
pub const DEFAULT_EIG_TOL: f64 = 1e-12;

const MAX_JACOBI_SWEEPS: usize = 64;

/// The p-norms supported by this kernel.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PNorm {
    /// Absolute column sums / max-abs-column for matrices.
    One,
    /// Euclidean / spectral.
    Two,
    /// Max magnitude / max-abs-row for matrices.
    Inf,
}

#[derive(Debug, Error, PartialEq)]
pub enum LinalgError {
    #[error("matrix is {rows}x{cols}, expected square")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix asymmetry {defect:.3e} exceeds tolerance {tol:.3e}")]
    NotSymmetric { defect: f64, tol: f64 },
    #[error("Jacobi eigensolver did not converge within {0} sweeps")]
    NoConvergence(usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid block bounds: {0}")]
    InvalidBounds(String),
}

/// Dense row-major matrix of `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Matrix { rows, cols, data: vec![0.0; rows * cols] }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Matrix::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    /// Build from a row-major slice; `data.len()` must equal `rows * cols`.
    pub fn from_rows(rows: usize, cols: usize, data: &[f64]) -> Self {
        assert_eq!(data.len(), rows * cols, "row-major data length mismatch");
        Matrix { rows, cols, data: data.to_vec() }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut m = Matrix::zeros(rows, cols);
        for i in 0..rows {
            for j in 0..cols {
                m[(i, j)] = f(i, j);
            }
        }
        m
    }

    /// Kronecker product `scalars ⊗ I_block`: each scalar entry becomes a
    /// `block`-sized scaled identity block.
    pub fn kron_identity(scalars: &Matrix, block: usize) -> Self {
        let mut m = Matrix::zeros(scalars.rows * block, scalars.cols * block);
        for i in 0..scalars.rows {
            for j in 0..scalars.cols {
                let s = scalars[(i, j)];
                if s != 0.0 {
                    for b in 0..block {
                        m[(i * block + b, j * block + b)] = s;
                    }
                }
            }
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    pub fn transpose(&self) -> Matrix {
        Matrix::from_fn(self.cols, self.rows, |i, j| self[(j, i)])
    }

    pub fn scale(&self, c: f64) -> Matrix {
        Matrix { rows: self.rows, cols: self.cols, data: self.data.iter().map(|v| c * v).collect() }
    }

    pub fn add(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn sub(&self, other: &Matrix) -> Matrix {
        assert_eq!((self.rows, self.cols), (other.rows, other.cols));
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a - b).collect();
        Matrix { rows: self.rows, cols: self.cols, data }
    }

    pub fn mul(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.rows, "inner dimensions must agree");
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(i, k)];
                if a == 0.0 {
                    continue;
                }
                for j in 0..other.cols {
                    out[(i, j)] += a * other[(k, j)];
                }
            }
        }
        out
    }

    /// `(A + Aᵀ) / 2`.
    pub fn symmetric_part(&self) -> Matrix {
        assert!(self.is_square(), "symmetric part needs a square matrix");
        Matrix::from_fn(self.rows, self.cols, |i, j| 0.5 * (self[(i, j)] + self[(j, i)]))
    }

    pub fn frobenius(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Asymmetry defect `max |a_ij - a_ji|`.
    pub fn asymmetry(&self) -> f64 {
        assert!(self.is_square());
        let mut d = 0.0_f64;
        for i in 0..self.rows {
            for j in (i + 1)..self.cols {
                d = d.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        d
    }
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        &self.data[i * self.cols + j]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        &mut self.data[i * self.cols + j]
    }
}

/// `|v|_p` for p in {1, 2, ∞}. Panics on an empty vector.
pub fn vec_norm(v: &[f64], p: PNorm) -> f64 {
    assert!(!v.is_empty(), "vector norm of an empty vector");
    match p {
        PNorm::One => v.iter().map(|x| x.abs()).sum(),
        PNorm::Two => v.iter().map(|x| x * x).sum::<f64>().sqrt(),
        PNorm::Inf => v.iter().fold(0.0_f64, |m, x| m.max(x.abs())),
    }
}

/// Induced matrix norm `‖A‖_p`. For p = 2 this is `sqrt(λ_max(AᵀA))`,
/// computed with the Jacobi eigensolver at [`DEFAULT_EIG_TOL`].
pub fn induced_norm(a: &Matrix, p: PNorm) -> f64 {
    match p {
        PNorm::One => (0..a.cols)
            .map(|j| (0..a.rows).map(|i| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0_f64, f64::max),
        PNorm::Inf => (0..a.rows)
            .map(|i| (0..a.cols).map(|j| a[(i, j)].abs()).sum::<f64>())
            .fold(0.0_f64, f64::max),
        PNorm::Two => {
            let gram = a.transpose().mul(a).symmetric_part();
            let (_, lmax) = sym_eig_extremes(&gram, DEFAULT_EIG_TOL)
                .expect("Gram matrix is symmetric by construction");
            lmax.max(0.0).sqrt()
        }
    }
}

/// Matrix measure (logarithmic norm) `μ_p(A)`:
///
/// * `μ_1(A) = max_j (a_jj + Σ_{i≠j} |a_ij|)`
/// * `μ_∞(A) = max_i (a_ii + Σ_{j≠i} |a_ij|)`
/// * `μ_2(A) = λ_max((A + Aᵀ)/2)`
///
/// The input is symmetrized unconditionally for p = 2; that is exactly the
/// quantity the measure is defined on.
pub fn matrix_measure(a: &Matrix, p: PNorm) -> Result<f64, LinalgError> {
    if !a.is_square() {
        return Err(LinalgError::NotSquare { rows: a.rows, cols: a.cols });
    }
    Ok(match p {
        PNorm::One => (0..a.cols)
            .map(|j| {
                a[(j, j)]
                    + (0..a.rows).filter(|&i| i != j).map(|i| a[(i, j)].abs()).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max),
        PNorm::Inf => (0..a.rows)
            .map(|i| {
                a[(i, i)]
                    + (0..a.cols).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum::<f64>()
            })
            .fold(f64::NEG_INFINITY, f64::max),
        PNorm::Two => {
            let s = a.symmetric_part();
            let (_, lmax) = sym_eig_extremes(&s, DEFAULT_EIG_TOL)?;
            lmax
        }
    })
}

/// All eigenvalues of a symmetric matrix by cyclic Jacobi rotations, in
/// ascending order. Converged when the off-diagonal Frobenius mass drops
/// below `tol * ‖S‖_F`.
pub fn sym_eigenvalues(s: &Matrix, tol: f64) -> Result<Vec<f64>, LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::NotSquare { rows: s.rows, cols: s.cols });
    }
    let scale = s.frobenius();
    let defect = s.asymmetry();
    if defect > tol * scale.max(1.0) {
        return Err(LinalgError::NotSymmetric { defect, tol });
    }
    let n = s.rows;
    if n == 1 {
        return Ok(vec![s[(0, 0)]]);
    }
    let mut a = s.symmetric_part(); // remove roundoff-level asymmetry
    if scale == 0.0 {
        return Ok(vec![0.0; n]);
    }
    for _sweep in 0..MAX_JACOBI_SWEEPS {
        let mut off = 0.0;
        for i in 0..n {
            for j in (i + 1)..n {
                off += 2.0 * a[(i, j)] * a[(i, j)];
            }
        }
        if off.sqrt() <= tol * scale {
            let mut eigs: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
            eigs.sort_by(|x, y| x.partial_cmp(y).unwrap());
            return Ok(eigs);
        }
        for p in 0..n {
            for q in (p + 1)..n {
                let apq = a[(p, q)];
                if apq.abs() <= f64::MIN_POSITIVE {
                    continue;
                }
                // symmetric Schur rotation (Golub & Van Loan 8.4)
                let tau = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let t = if tau >= 0.0 {
                    1.0 / (tau + (1.0 + tau * tau).sqrt())
                } else {
                    -1.0 / (-tau + (1.0 + tau * tau).sqrt())
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let sn = t * c;
                // A <- JᵀAJ with J = J(p, q, θ)
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - sn * akq;
                    a[(k, q)] = sn * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - sn * aqk;
                    a[(q, k)] = sn * apk + c * aqk;
                }
                a[(p, q)] = 0.0;
                a[(q, p)] = 0.0;
            }
        }
    }
    Err(LinalgError::NoConvergence(MAX_JACOBI_SWEEPS))
}

/// Extreme eigenvalues `(λ_min, λ_max)` of a symmetric matrix.
pub fn sym_eig_extremes(s: &Matrix, tol: f64) -> Result<(f64, f64), LinalgError> {
    let eigs = sym_eigenvalues(s, tol)?;
    Ok((eigs[0], *eigs.last().unwrap()))
}

/// Per-block bounds of a block-partitioned matrix: `μ(A_ii)` on the diagonal
/// and `‖A_ij‖` off it. The outer norm is fixed to ∞ (max over blocks).
#[derive(Clone, Debug)]
pub struct BlockMatrixBounds {
    n_blocks: usize,
    diag_measures: Vec<f64>,
    offdiag_norms: Matrix,
}

impl BlockMatrixBounds {
    /// `offdiag_norms` must be `n x n` with nonnegative entries and a zero
    /// diagonal; `diag_measures` carries the n block measures.
    pub fn new(diag_measures: Vec<f64>, offdiag_norms: Matrix) -> Result<Self, LinalgError> {
        let n = diag_measures.len();
        if n == 0 {
            return Err(LinalgError::InvalidBounds("no blocks".into()));
        }
        if offdiag_norms.rows() != n || offdiag_norms.cols() != n {
            return Err(LinalgError::InvalidBounds(format!(
                "offdiag_norms is {}x{}, expected {n}x{n}",
                offdiag_norms.rows(),
                offdiag_norms.cols()
            )));
        }
        if !diag_measures.iter().all(|v| v.is_finite()) {
            return Err(LinalgError::InvalidBounds("non-finite diagonal measure".into()));
        }
        for i in 0..n {
            for j in 0..n {
                let v = offdiag_norms[(i, j)];
                if i == j && v != 0.0 {
                    return Err(LinalgError::InvalidBounds("nonzero diagonal norm entry".into()));
                }
                if !(v >= 0.0) || !v.is_finite() {
                    return Err(LinalgError::InvalidBounds("negative or non-finite norm".into()));
                }
            }
        }
        Ok(BlockMatrixBounds { n_blocks: n, diag_measures, offdiag_norms })
    }

    pub fn n_blocks(&self) -> usize {
        self.n_blocks
    }

    pub fn diag_measures(&self) -> &[f64] {
        &self.diag_measures
    }

    pub fn offdiag_norms(&self) -> &Matrix {
        &self.offdiag_norms
    }
}

/// Composite measure bound: `max_i (μ(A_ii) + Σ_{j≠i} ‖A_ij‖)`, i.e. μ_∞ of
/// the scalar comparison matrix with measures on the diagonal and norms off
/// it. Upper-bounds the composite matrix measure of the assembled block
/// matrix under the max-of-block-norms norm.
pub fn composite_measure_bound(b: &BlockMatrixBounds) -> f64 {
    (0..b.n_blocks)
        .map(|i| {
            b.diag_measures[i]
                + (0..b.n_blocks)
                    .filter(|&j| j != i)
                    .map(|j| b.offdiag_norms[(i, j)])
                    .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Composite norm bound: `max_i Σ_j ‖A_ij‖`, with the diagonal block norms
/// supplied separately (the comparison matrix for norms carries `‖A_ii‖` on
/// its diagonal, unlike the measure version).
pub fn composite_norm_bound(
    b: &BlockMatrixBounds,
    include_diag_norms: &[f64],
) -> Result<f64, LinalgError> {
    if include_diag_norms.len() != b.n_blocks {
        return Err(LinalgError::DimensionMismatch(format!(
            "{} diagonal norms for {} blocks",
            include_diag_norms.len(),
            b.n_blocks
        )));
    }
    if let Some(v) = include_diag_norms.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(LinalgError::InvalidBounds(format!("invalid diagonal norm {v}")));
    }
    Ok((0..b.n_blocks)
        .map(|i| {
            include_diag_norms[i]
                + (0..b.n_blocks)
                    .filter(|&j| j != i)
                    .map(|j| b.offdiag_norms[(i, j)])
                    .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max))
}
