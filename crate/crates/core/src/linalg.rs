//! Dense real matrix kernel.
//!
//! Storage is `nalgebra::DMatrix<f64>`; this module adds the contracts the
//! rest of the crate relies on: symmetry checks at the boundary, ascending
//! eigenvalue order, a non-panicking Cholesky verdict, a Lyapunov solver and
//! a Padé matrix exponential.

use nalgebra::{Complex, DMatrix, DVector};
use thiserror::Error;

pub type Matrix = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Relative asymmetry accepted (and silently symmetrized) at module boundaries.
pub const SYMMETRY_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("expected a square matrix, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric (relative asymmetry {0:.3e})")]
    NotSymmetric(f64),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("matrix has non-finite entries")]
    NonFinite,
    #[error("matrix is not Hurwitz (spectral abscissa {0:.3e})")]
    Unstable(f64),
    #[error("matrix is singular to working precision")]
    Singular,
}

/// Frobenius norm.
pub fn norm_fro(m: &Matrix) -> f64 {
    m.norm()
}

pub fn is_finite(m: &Matrix) -> bool {
    m.iter().all(|v| v.is_finite())
}

pub fn ensure_finite(m: &Matrix) -> Result<(), LinalgError> {
    if is_finite(m) {
        Ok(())
    } else {
        Err(LinalgError::NonFinite)
    }
}

fn ensure_square(m: &Matrix) -> Result<(), LinalgError> {
    if m.is_square() {
        Ok(())
    } else {
        Err(LinalgError::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        })
    }
}

/// Returns `(m + mᵀ)/2` if `m` is symmetric within `SYMMETRY_TOL·‖m‖`.
pub fn symmetrize_checked(m: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    let scale = norm_fro(m);
    let asym = norm_fro(&(m - m.transpose()));
    if asym > SYMMETRY_TOL * scale.max(f64::MIN_POSITIVE) && asym > 0.0 {
        return Err(LinalgError::NotSymmetric(asym / scale));
    }
    Ok(symmetrize(m))
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

#[derive(Debug, Clone)]
pub struct SymEig {
    /// Ascending.
    pub values: Vector,
    /// Orthonormal eigenvectors stored as columns, matching `values`.
    pub vectors: Matrix,
}

impl SymEig {
    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Symmetric eigendecomposition with eigenvalues sorted ascending.
pub fn sym_eig(m: &Matrix) -> Result<SymEig, LinalgError> {
    let m = symmetrize_checked(m)?;
    Ok(sym_eig_unchecked(m))
}

/// Skips the symmetry check; the caller guarantees a symmetric input.
pub(crate) fn sym_eig_unchecked(m: Matrix) -> SymEig {
    let n = m.nrows();
    if n == 0 {
        return SymEig {
            values: Vector::zeros(0),
            vectors: Matrix::zeros(0, 0),
        };
    }
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = Vector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = Matrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    SymEig { values, vectors }
}

/// Smallest eigenvalue of a symmetric matrix (no symmetry check).
pub fn min_eigenvalue(m: &Matrix) -> f64 {
    if m.nrows() == 0 {
        return f64::INFINITY;
    }
    sym_eig_unchecked(symmetrize(m)).min()
}

/// Cholesky factor `L` with `L·Lᵀ = m`.
///
/// Returns `Ok(None)` when a pivot is not strictly positive; shape and
/// symmetry violations are errors.
pub fn cholesky(m: &Matrix) -> Result<Option<Matrix>, LinalgError> {
    let m = symmetrize_checked(m)?;
    Ok(cholesky_unchecked(&m))
}

pub(crate) fn cholesky_unchecked(m: &Matrix) -> Option<Matrix> {
    let n = m.nrows();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > 0.0) || !d.is_finite() {
            return None;
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in (j + 1)..n {
            let mut v = m[(i, j)];
            for k in 0..j {
                v -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = v / d;
        }
    }
    Some(l)
}

/// Solves `m·x = rhs` by LU with partial pivoting.
pub fn solve(m: &Matrix, rhs: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    if m.nrows() != rhs.nrows() {
        return Err(LinalgError::Dimension(format!(
            "system is {}x{}, right-hand side has {} rows",
            m.nrows(),
            m.ncols(),
            rhs.nrows()
        )));
    }
    m.clone().lu().solve(rhs).ok_or(LinalgError::Singular)
}

pub fn inverse(m: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(m)?;
    m.clone().try_inverse().ok_or(LinalgError::Singular)
}

/// Eigenvalues of a general real matrix.
pub fn eigenvalues(m: &Matrix) -> Result<Vec<Complex<f64>>, LinalgError> {
    ensure_square(m)?;
    ensure_finite(m)?;
    if m.nrows() == 0 {
        return Ok(Vec::new());
    }
    Ok(m.complex_eigenvalues().iter().copied().collect())
}

/// Largest real part among the eigenvalues (−∞ for an empty matrix).
pub fn spectral_abscissa(m: &Matrix) -> Result<f64, LinalgError> {
    Ok(eigenvalues(m)?
        .iter()
        .map(|l| l.re)
        .fold(f64::NEG_INFINITY, f64::max))
}

pub fn is_hurwitz(m: &Matrix) -> Result<bool, LinalgError> {
    Ok(spectral_abscissa(m)? < 0.0)
}

/// Solves `a·P + P·aᵀ + w = 0` for symmetric `P`.
///
/// Complex Schur form of `a` followed by triangular back-substitution
/// (Bartels–Stewart). `a` must be Hurwitz.
pub fn solve_lyapunov(a: &Matrix, w: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let w = symmetrize_checked(w)?;
    let n = a.nrows();
    if w.nrows() != n {
        return Err(LinalgError::Dimension(format!(
            "a is {n}x{n} but w is {}x{}",
            w.nrows(),
            w.ncols()
        )));
    }
    if n == 0 {
        return Ok(Matrix::zeros(0, 0));
    }
    let abscissa = spectral_abscissa(a)?;
    if abscissa >= 0.0 {
        return Err(LinalgError::Unstable(abscissa));
    }

    let ac = a.map(|v| Complex::new(v, 0.0));
    let (q, t) = ac.schur().unpack();
    let wc = w.map(|v| Complex::new(v, 0.0));
    // T·Y + Y·Tᴴ = −Qᴴ·W·Q with P = Q·Y·Qᴴ.
    let c = -(q.adjoint() * wc * &q);
    let mut y = DMatrix::<Complex<f64>>::zeros(n, n);
    for j in (0..n).rev() {
        let mut rhs = c.column(j).into_owned();
        for k in (j + 1)..n {
            let tjk = t[(j, k)].conj();
            for i in 0..n {
                rhs[i] -= y[(i, k)] * tjk;
            }
        }
        let shift = t[(j, j)].conj();
        // Upper-triangular solve with (T + shift·I).
        for i in (0..n).rev() {
            let mut v = rhs[i];
            for k in (i + 1)..n {
                v -= t[(i, k)] * y[(k, j)];
            }
            y[(i, j)] = v / (t[(i, i)] + shift);
        }
    }
    let p = (&q * y * q.adjoint()).map(|v| v.re);
    let p = symmetrize(&p);
    ensure_finite(&p)?;
    Ok(p)
}

/// Residual `‖a·P + P·aᵀ + w‖_F`.
pub fn lyapunov_residual(a: &Matrix, p: &Matrix, w: &Matrix) -> f64 {
    norm_fro(&(a * p + p * a.transpose() + w))
}

/// Matrix exponential by scaling and squaring with a (6,6) Padé approximant.
pub fn expm(a: &Matrix) -> Result<Matrix, LinalgError> {
    ensure_square(a)?;
    ensure_finite(a)?;
    let n = a.nrows();
    const Q: usize = 6;
    let norm_inf = a
        .row_iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let squarings = if norm_inf > 0.5 {
        (norm_inf / 0.5).log2().ceil() as i32
    } else {
        0
    };
    let scaled = a / 2f64.powi(squarings);

    // c_k = (2q−k)!·q! / ((2q)!·k!·(q−k)!)
    let mut coeffs = [0.0; Q + 1];
    coeffs[0] = 1.0;
    for k in 1..=Q {
        coeffs[k] = coeffs[k - 1] * (Q + 1 - k) as f64 / (k * (2 * Q + 1 - k)) as f64;
    }
    let ident = Matrix::identity(n, n);
    let mut power = ident.clone();
    let mut num = ident.clone() * coeffs[0];
    let mut den = ident.clone() * coeffs[0];
    for (k, &ck) in coeffs.iter().enumerate().skip(1) {
        power = &power * &scaled;
        num += &power * ck;
        if k % 2 == 0 {
            den += &power * ck;
        } else {
            den -= &power * ck;
        }
    }
    let mut result = solve(&den, &num)?;
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(result)
}

/// Kronecker product.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let (ar, ac) = a.shape();
    let (br, bc) = b.shape();
    let mut out = Matrix::zeros(ar * br, ac * bc);
    for i in 0..ar {
        for j in 0..ac {
            let v = a[(i, j)];
            if v != 0.0 {
                out.view_mut((i * br, j * bc), (br, bc)).copy_from(&(b * v));
            }
        }
    }
    out
}

/// Builds a diagonal matrix from a slice.
pub fn diag(values: &[f64]) -> Matrix {
    Matrix::from_diagonal(&Vector::from_column_slice(values))
}

/// Largest singular value.
pub fn sigma_max(m: &Matrix) -> f64 {
    if m.nrows() == 0 || m.ncols() == 0 {
        return 0.0;
    }
    m.clone()
        .svd(false, false)
        .singular_values
        .iter()
        .copied()
        .fold(0.0, f64::max)
}
