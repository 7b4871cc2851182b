//! Standard-form conic programs over PSD blocks and a nonnegative orthant.
//!
//! ```text
//! minimize    cᵀx
//! subject to  G·x + s = h,   s ∈ K
//!             A·x = b
//! ```
//!
//! `K` is described by a [`ConeSpec`]. The dual is
//! `maximize −hᵀz − bᵀy  s.t.  Gᵀz + Aᵀy + c = 0,  z ∈ K`.

mod cone;
mod solver;
mod triplets;

pub use cone::{smat, svec, svec_len, ConeSpec};
pub use solver::{solve, solve_equilibrated, IterationStats, SolverOptions};
pub use triplets::{read_triplets, write_triplets};

use crate::linalg::{min_eigenvalue, Matrix, Vector};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SdpError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("variable index {index} out of range for {n_vars} variables")]
    VariableIndex { index: usize, n_vars: usize },
    #[error("problem data contain non-finite values")]
    NonFinite,
    #[error("malformed triplet file at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("i/o error: {0}")]
    Io(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SdpProblem {
    c: Vector,
    g: Matrix,
    h: Vector,
    a: Matrix,
    b: Vector,
    cone: ConeSpec,
}

impl SdpProblem {
    pub fn new(c: Vector, g: Matrix, h: Vector, cone: ConeSpec) -> Result<Self, SdpError> {
        let n = c.len();
        Self::with_equalities(c, g, h, Matrix::zeros(0, n), Vector::zeros(0), cone)
    }

    pub fn with_equalities(
        c: Vector,
        g: Matrix,
        h: Vector,
        a: Matrix,
        b: Vector,
        cone: ConeSpec,
    ) -> Result<Self, SdpError> {
        let n = c.len();
        let m = cone.dim();
        if cone.psd_block_dims.iter().any(|&d| d == 0) {
            return Err(SdpError::Dimension("PSD blocks must have side ≥ 1".into()));
        }
        if g.nrows() != m || h.len() != m {
            return Err(SdpError::Dimension(format!(
                "cone dimension {m}, G has {} rows, h has {} entries",
                g.nrows(),
                h.len()
            )));
        }
        if g.ncols() != n || a.ncols() != n {
            return Err(SdpError::Dimension(format!(
                "{n} variables but G has {} and A has {} columns",
                g.ncols(),
                a.ncols()
            )));
        }
        if a.nrows() != b.len() {
            return Err(SdpError::Dimension(format!(
                "A has {} rows but b has {} entries",
                a.nrows(),
                b.len()
            )));
        }
        let finite = c.iter().chain(g.iter()).chain(h.iter()).chain(a.iter()).chain(b.iter());
        if !finite.into_iter().all(|v| v.is_finite()) {
            return Err(SdpError::NonFinite);
        }
        Ok(Self { c, g, h, a, b, cone })
    }

    pub fn n_vars(&self) -> usize {
        self.c.len()
    }

    pub fn n_equalities(&self) -> usize {
        self.b.len()
    }

    pub fn c(&self) -> &Vector {
        &self.c
    }

    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn h(&self) -> &Vector {
        &self.h
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn b(&self) -> &Vector {
        &self.b
    }

    pub fn cone(&self) -> &ConeSpec {
        &self.cone
    }

    /// Same constraints, objective multiplied by `factor`.
    pub fn scale_objective(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.c *= factor;
        out
    }

    /// Appends scalar rows `Σ coefₖ·xₖ ≤ rhs` to the orthant.
    pub fn with_inequalities(&self, rows: &[(Vec<(usize, f64)>, f64)]) -> Result<Self, SdpError> {
        let n = self.n_vars();
        let k_old = self.cone.nonneg_dim;
        let k = rows.len();
        let cone = ConeSpec::new(k_old + k, self.cone.psd_block_dims.clone());
        let m = cone.dim();
        let mut g = Matrix::zeros(m, n);
        let mut h = Vector::zeros(m);
        g.rows_mut(0, k_old).copy_from(&self.g.rows(0, k_old));
        h.rows_mut(0, k_old).copy_from(&self.h.rows(0, k_old));
        for (r, (terms, rhs)) in rows.iter().enumerate() {
            h[k_old + r] = *rhs;
            for &(var, v) in terms {
                if var >= n {
                    return Err(SdpError::VariableIndex { index: var, n_vars: n });
                }
                g[(k_old + r, var)] += v;
            }
        }
        let rest = self.cone.dim() - k_old;
        g.rows_mut(k_old + k, rest).copy_from(&self.g.rows(k_old, rest));
        h.rows_mut(k_old + k, rest).copy_from(&self.h.rows(k_old, rest));
        Self::with_equalities(self.c.clone(), g, h, self.a.clone(), self.b.clone(), cone)
    }

    /// Equivalent problem with every PSD block replaced by `D·S·D`, where `D`
    /// gives the slack `s` a unit diagonal, and orthant rows divided by `√sₖ`.
    /// Decision variables are unchanged.
    pub fn equilibrate(&self, s: &Vector) -> Result<Self, SdpError> {
        let cone = &self.cone;
        if s.len() != cone.dim() {
            return Err(SdpError::Dimension(format!(
                "slack has {} entries, cone dimension is {}",
                s.len(),
                cone.dim()
            )));
        }
        let scale = |v: f64, top: f64| 1.0 / v.abs().max(1e-8 * top.max(1.0)).sqrt();
        let mut r = Vector::from_element(cone.dim(), 1.0);
        for k in 0..cone.nonneg_dim {
            r[k] = scale(s[k], 1.0);
        }
        for (off, d) in cone.psd_blocks() {
            let diag: Vec<f64> = (0..d).map(|i| s[off + i * (i + 1) / 2 + i]).collect();
            let top = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
            let dd: Vec<f64> = diag.iter().map(|&v| scale(v, top)).collect();
            for j in 0..d {
                for i in 0..=j {
                    r[off + j * (j + 1) / 2 + i] = dd[i] * dd[j];
                }
            }
        }
        if !r.iter().all(|v| v.is_finite()) {
            return Err(SdpError::NonFinite);
        }
        let mut g = self.g.clone();
        for (i, ri) in r.iter().enumerate() {
            g.row_mut(i).scale_mut(*ri);
        }
        let h = self.h.component_mul(&r);
        Self::with_equalities(self.c.clone(), g, h, self.a.clone(), self.b.clone(), cone.clone())
    }

    /// Slack `h − G·x`.
    pub fn slack(&self, x: &Vector) -> Result<Vector, SdpError> {
        if x.len() != self.n_vars() {
            return Err(SdpError::Dimension(format!(
                "point has {} entries, problem has {} variables",
                x.len(),
                self.n_vars()
            )));
        }
        Ok(&self.h - &self.g * x)
    }

    /// Block-wise margins of `h − G·x`; has no side effects.
    pub fn check_feasible_point(&self, x: &Vector) -> Result<FeasibilityMargins, SdpError> {
        let s = self.slack(x)?;
        let k = self.cone.nonneg_dim;
        let orthant_min = if k == 0 {
            None
        } else {
            Some(s.rows(0, k).iter().copied().fold(f64::INFINITY, f64::min))
        };
        let psd_min_eigenvalues = self
            .cone
            .psd_blocks()
            .map(|(off, d)| min_eigenvalue(&smat(&s.as_slice()[off..off + svec_len(d)], d)))
            .collect();
        let equality_residual = if self.n_equalities() == 0 {
            0.0
        } else {
            (&self.a * x - &self.b).norm()
        };
        Ok(FeasibilityMargins {
            orthant_min,
            psd_min_eigenvalues,
            equality_residual,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeasibilityMargins {
    pub orthant_min: Option<f64>,
    pub psd_min_eigenvalues: Vec<f64>,
    pub equality_residual: f64,
}

impl FeasibilityMargins {
    /// Smallest margin over all cone blocks.
    pub fn min(&self) -> f64 {
        self.psd_min_eigenvalues
            .iter()
            .copied()
            .chain(self.orthant_min)
            .fold(f64::INFINITY, f64::min)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
pub enum SdpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    MaxIter,
    NumericalFailure,
}

impl std::fmt::Display for SdpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            SdpStatus::Optimal => "optimal",
            SdpStatus::Infeasible => "infeasible",
            SdpStatus::Unbounded => "unbounded",
            SdpStatus::MaxIter => "max_iter",
            SdpStatus::NumericalFailure => "numerical_failure",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub status: SdpStatus,
    pub x: Vector,
    pub y: Vector,
    pub s: Vector,
    pub z: Vector,
    pub primal_objective: f64,
    pub dual_objective: f64,
    /// `max(‖Ax−b‖/(1+‖b‖), ‖Gx+s−h‖/(1+‖h‖))`
    pub primal_residual: f64,
    /// `‖Gᵀz+Aᵀy+c‖/(1+‖c‖)`
    pub dual_residual: f64,
    /// `sᵀz / (1 + |cᵀx| + |bᵀy+hᵀz|)`
    pub duality_gap: f64,
    /// Residual of the returned ray when `status` is `Infeasible` or `Unbounded`.
    pub certificate_residual: Option<f64>,
    pub iterations: usize,
    pub history: Vec<IterationStats>,
}

impl SdpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == SdpStatus::Optimal
    }
}

/// Affine symmetric matrix function `F(x) = F₀ + Σ xₖ·Fₖ`.
#[derive(Debug, Clone)]
pub struct AffineMatrix {
    pub constant: Matrix,
    pub terms: Vec<(usize, Matrix)>,
}

impl AffineMatrix {
    pub fn constant(m: Matrix) -> Self {
        Self {
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn zeros(d: usize) -> Self {
        Self::constant(Matrix::zeros(d, d))
    }

    pub fn dim(&self) -> usize {
        self.constant.nrows()
    }

    pub fn add_term(&mut self, var: usize, coef: Matrix) {
        self.terms.push((var, coef));
    }

    /// Evaluates `F(x)`.
    pub fn eval(&self, x: &Vector) -> Matrix {
        let mut out = self.constant.clone();
        for (k, m) in &self.terms {
            out += m * x[*k];
        }
        out
    }
}

/// Incremental assembly of an [`SdpProblem`] from LMIs and scalar inequalities.
#[derive(Debug, Clone)]
pub struct ProblemBuilder {
    n_vars: usize,
    c: Vector,
    orthant_rows: Vec<(Vec<(usize, f64)>, f64)>,
    blocks: Vec<(Matrix, Vec<(usize, Matrix)>)>,
    eq_rows: Vec<(Vec<(usize, f64)>, f64)>,
}

impl ProblemBuilder {
    pub fn new(n_vars: usize) -> Self {
        Self {
            n_vars,
            c: Vector::zeros(n_vars),
            orthant_rows: Vec::new(),
            blocks: Vec::new(),
            eq_rows: Vec::new(),
        }
    }

    pub fn n_vars(&self) -> usize {
        self.n_vars
    }

    pub fn set_objective(&mut self, var: usize, coef: f64) {
        self.c[var] = coef;
    }

    /// `Σ coefₖ·xₖ ≤ rhs`
    pub fn add_le(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.orthant_rows.push((terms, rhs));
    }

    /// `Σ coefₖ·xₖ = rhs`
    pub fn add_eq(&mut self, terms: Vec<(usize, f64)>, rhs: f64) {
        self.eq_rows.push((terms, rhs));
    }

    /// `F(x) ⪯ −margin·I`
    pub fn add_lmi_nsd(&mut self, f: &AffineMatrix, margin: f64) {
        let d = f.dim();
        let h = -&f.constant - Matrix::identity(d, d) * margin;
        self.blocks.push((h, f.terms.clone()));
    }

    /// `F(x) ⪰ margin·I`
    pub fn add_lmi_psd(&mut self, f: &AffineMatrix, margin: f64) {
        let d = f.dim();
        let h = &f.constant - Matrix::identity(d, d) * margin;
        let terms = f.terms.iter().map(|(k, m)| (*k, -m)).collect();
        self.blocks.push((h, terms));
    }

    pub fn build(self) -> Result<SdpProblem, SdpError> {
        let n = self.n_vars;
        let check = |k: usize| {
            if k >= n {
                Err(SdpError::VariableIndex { index: k, n_vars: n })
            } else {
                Ok(())
            }
        };
        let cone = ConeSpec::new(
            self.orthant_rows.len(),
            self.blocks.iter().map(|(h, _)| h.nrows()).collect(),
        );
        let m = cone.dim();
        let mut g = Matrix::zeros(m, n);
        let mut h = Vector::zeros(m);
        for (row, (terms, rhs)) in self.orthant_rows.iter().enumerate() {
            h[row] = *rhs;
            for &(k, v) in terms {
                check(k)?;
                g[(row, k)] += v;
            }
        }
        for ((off, d), (hb, terms)) in cone.psd_blocks().zip(&self.blocks) {
            if hb.nrows() != d || hb.ncols() != d {
                return Err(SdpError::Dimension("PSD block constant is not square".into()));
            }
            let len = svec_len(d);
            h.rows_mut(off, len).copy_from_slice(&svec(hb));
            for (k, coef) in terms {
                check(*k)?;
                if coef.nrows() != d || coef.ncols() != d {
                    return Err(SdpError::Dimension(format!(
                        "coefficient of variable {k} is {}x{}, block is {d}x{d}",
                        coef.nrows(),
                        coef.ncols()
                    )));
                }
                let col = svec(coef);
                for (i, v) in col.into_iter().enumerate() {
                    g[(off + i, *k)] += v;
                }
            }
        }
        let p = self.eq_rows.len();
        let mut a = Matrix::zeros(p, n);
        let mut b = Vector::zeros(p);
        for (row, (terms, rhs)) in self.eq_rows.iter().enumerate() {
            b[row] = *rhs;
            for &(k, v) in terms {
                check(k)?;
                a[(row, k)] += v;
            }
        }
        SdpProblem::with_equalities(self.c, g, h, a, b, cone)
    }
}
