//! Lowering of the H2 and H∞ sparse-observer programs into conic form.
//!
//! Decision vector layout: `[X (upper triangle) | Y (row-major) | Q (upper
//! triangle, H2 only) | β | γ-variable (penalized mode only)]`. Every matrix
//! inequality `F ≺ 0` is imposed as `F ⪯ −ε·I`.

use crate::design::{DesignResult, IterationRecord};
use crate::linalg::{min_eigenvalue, solve, sym_eig, Matrix, Vector};
use crate::model::{LtiPlant, ModelError, PrecisionVector};
use crate::sdp::{AffineMatrix, ProblemBuilder, SdpError, SdpProblem, SdpSolution, SdpStatus};
use serde::{Deserialize, Serialize};
use std::ops::Range;
use thiserror::Error;

/// Default relative truncation threshold for the support of `κ²`.
pub const DEFAULT_SUPPORT_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LmiError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid design specification: {0}")]
    InvalidSpec(String),
    #[error("solver did not return an optimal point ({0})")]
    NotOptimal(SdpStatus),
    #[error("X is numerically singular (min eigenvalue {min:.3e}, norm {norm:.3e})")]
    Conditioning { min: f64, norm: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Sdp(#[from] SdpError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NormType {
    H2,
    Hinf,
}

impl std::fmt::Display for NormType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            NormType::H2 => "h2",
            NormType::Hinf => "hinf",
        })
    }
}

impl std::str::FromStr for NormType {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "h2" => Ok(NormType::H2),
            "hinf" | "h-inf" | "hinfinity" => Ok(NormType::Hinf),
            other => Err(format!("unknown norm {other:?} (expected h2 or hinf)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum GammaMode {
    /// Attenuation level fixed in advance.
    Fixed(f64),
    /// γ is optimized with cost `c·γ` (H∞) or `c·γ²` (H2) added to the objective.
    Penalized(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignSpec {
    pub norm: NormType,
    pub gamma_mode: GammaMode,
    pub rho: Vec<f64>,
    pub kappa_sq_max: Option<Vec<f64>>,
    pub lmi_margin: f64,
}

impl DesignSpec {
    /// Unit weights, no bounds, margin `1e-8`.
    pub fn new(norm: NormType, gamma_mode: GammaMode, n_y: usize) -> Self {
        Self {
            norm,
            gamma_mode,
            rho: vec![1.0; n_y],
            kappa_sq_max: None,
            lmi_margin: 1e-8,
        }
    }

    pub fn fixed(norm: NormType, gamma: f64, n_y: usize) -> Self {
        Self::new(norm, GammaMode::Fixed(gamma), n_y)
    }

    pub fn with_rho(mut self, rho: Vec<f64>) -> Self {
        self.rho = rho;
        self
    }

    pub fn with_bounds(mut self, kappa_sq_max: Vec<f64>) -> Self {
        self.kappa_sq_max = Some(kappa_sq_max);
        self
    }

    pub fn with_margin(mut self, margin: f64) -> Self {
        self.lmi_margin = margin;
        self
    }

    pub fn validate(&self, n_y: usize) -> Result<(), LmiError> {
        match self.gamma_mode {
            GammaMode::Fixed(g) if !(g > 0.0 && g.is_finite()) => {
                return Err(LmiError::InvalidSpec(format!("gamma must be positive, got {g}")))
            }
            GammaMode::Penalized(c) if !(c >= 0.0 && c.is_finite()) => {
                return Err(LmiError::InvalidSpec(format!("penalty must be nonnegative, got {c}")))
            }
            _ => {}
        }
        if self.rho.len() != n_y {
            return Err(LmiError::Dimension(format!("{} weights for {n_y} sensors", self.rho.len())));
        }
        if self.rho.iter().any(|&r| !(r >= 0.0 && r.is_finite())) {
            return Err(LmiError::InvalidSpec("weights must be finite and nonnegative".into()));
        }
        if let Some(b) = &self.kappa_sq_max {
            if b.len() != n_y {
                return Err(LmiError::Dimension(format!("{} bounds for {n_y} sensors", b.len())));
            }
            if b.iter().any(|&v| !(v >= 0.0)) {
                return Err(LmiError::InvalidSpec("precision bounds must be nonnegative".into()));
            }
        }
        if !(self.lmi_margin >= 0.0 && self.lmi_margin.is_finite()) {
            return Err(LmiError::InvalidSpec("margin must be nonnegative".into()));
        }
        Ok(())
    }

    /// Same specification restricted to a subset of sensors.
    pub fn restrict(&self, sensors: &[usize]) -> Self {
        let mut out = self.clone();
        out.rho = sensors.iter().map(|&i| self.rho[i]).collect();
        out.kappa_sq_max = self
            .kappa_sq_max
            .as_ref()
            .map(|b| sensors.iter().map(|&i| b[i]).collect());
        out
    }
}

fn sym_len(n: usize) -> usize {
    n * (n + 1) / 2
}

/// Index map between the scalar decision vector and the matrix variables.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariableLayout {
    pub norm: NormType,
    pub n_x: usize,
    pub n_y: usize,
    pub n_z: usize,
    pub x: Range<usize>,
    pub y: Range<usize>,
    pub q: Option<Range<usize>>,
    pub beta: Range<usize>,
    /// γ (H∞) or `t ≥ tr Q` standing in for γ² (H2), penalized mode only.
    pub gamma: Option<usize>,
}

impl VariableLayout {
    fn new(norm: NormType, n_x: usize, n_y: usize, n_z: usize, penalized: bool) -> Self {
        let x = 0..sym_len(n_x);
        let y = x.end..x.end + n_x * n_y;
        let q = (norm == NormType::H2).then(|| y.end..y.end + sym_len(n_z));
        let start = q.as_ref().map_or(y.end, |q| q.end);
        let beta = start..start + n_y;
        let gamma = penalized.then_some(beta.end);
        Self {
            norm,
            n_x,
            n_y,
            n_z,
            x,
            y,
            q,
            beta,
            gamma,
        }
    }

    pub fn n_vars(&self) -> usize {
        self.gamma.map_or(self.beta.end, |g| g + 1)
    }

    /// Index of `X[i][j]` (either order).
    pub fn x_index(&self, i: usize, j: usize) -> usize {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.x.start + j * (j + 1) / 2 + i
    }

    pub fn y_index(&self, i: usize, j: usize) -> usize {
        self.y.start + i * self.n_y + j
    }

    pub fn q_index(&self, i: usize, j: usize) -> Option<usize> {
        let (i, j) = if i <= j { (i, j) } else { (j, i) };
        self.q.as_ref().map(|q| q.start + j * (j + 1) / 2 + i)
    }

    pub fn beta_index(&self, i: usize) -> usize {
        self.beta.start + i
    }

    fn sym_matrix(&self, v: &Vector, n: usize, index: impl Fn(usize, usize) -> usize) -> Matrix {
        Matrix::from_fn(n, n, |i, j| v[index(i, j)])
    }

    pub fn x_matrix(&self, v: &Vector) -> Matrix {
        self.sym_matrix(v, self.n_x, |i, j| self.x_index(i, j))
    }

    pub fn y_matrix(&self, v: &Vector) -> Matrix {
        Matrix::from_fn(self.n_x, self.n_y, |i, j| v[self.y_index(i, j)])
    }

    pub fn q_matrix(&self, v: &Vector) -> Option<Matrix> {
        self.q.as_ref()?;
        Some(self.sym_matrix(v, self.n_z, |i, j| self.q_index(i, j).expect("H2 layout")))
    }

    pub fn beta_values(&self, v: &Vector) -> Vec<f64> {
        v.rows(self.beta.start, self.n_y).iter().copied().collect()
    }

    /// Packs matrix variables into a decision vector.
    pub fn pack(&self, x: &Matrix, y: &Matrix, q: Option<&Matrix>, beta: &[f64], gamma: Option<f64>) -> Vector {
        let mut v = Vector::zeros(self.n_vars());
        for j in 0..self.n_x {
            for i in 0..=j {
                v[self.x_index(i, j)] = x[(i, j)];
            }
        }
        for i in 0..self.n_x {
            for j in 0..self.n_y {
                v[self.y_index(i, j)] = y[(i, j)];
            }
        }
        if let Some(q) = q {
            for j in 0..self.n_z {
                for i in 0..=j {
                    if let Some(k) = self.q_index(i, j) {
                        v[k] = q[(i, j)];
                    }
                }
            }
        }
        for (i, &b) in beta.iter().enumerate() {
            v[self.beta_index(i)] = b;
        }
        if let (Some(k), Some(g)) = (self.gamma, gamma) {
            v[k] = g;
        }
        v
    }
}

/// Symmetric block matrix assembled from `(row block, col block, value)` pieces.
struct BlockShape {
    offsets: Vec<usize>,
    dim: usize,
}

impl BlockShape {
    fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { offsets, dim: acc }
    }

    fn zeros(&self) -> Matrix {
        Matrix::zeros(self.dim, self.dim)
    }

    /// Adds `block` at `(bi, bj)` and its transpose at `(bj, bi)`.
    fn put(&self, m: &mut Matrix, bi: usize, bj: usize, block: &Matrix) {
        let (r, c) = (self.offsets[bi], self.offsets[bj]);
        let mut v = m.view_mut((r, c), block.shape());
        v += block;
        if bi != bj {
            let mut vt = m.view_mut((c, r), (block.ncols(), block.nrows()));
            vt += block.transpose();
        }
    }
}

fn sym_unit(n: usize, i: usize, j: usize) -> Matrix {
    let mut e = Matrix::zeros(n, n);
    e[(i, j)] = 1.0;
    e[(j, i)] = 1.0;
    e
}

fn unit(rows: usize, cols: usize, i: usize, j: usize) -> Matrix {
    let mut e = Matrix::zeros(rows, cols);
    e[(i, j)] = 1.0;
    e
}

/// Adds the `X` and `Y` terms shared by both theorems to the main block (blocks 0 and 1),
/// with `Y` also placed in block `(0, y_block)`.
fn add_xy_terms(f: &mut AffineMatrix, shape: &BlockShape, p: &LtiPlant, layout: &VariableLayout, y_block: usize) {
    let (nx, ny) = (p.n_x(), p.n_y());
    let bs = p.b_d() * p.s_d();
    let ds = p.d_d() * p.s_d();
    for j in 0..nx {
        for i in 0..=j {
            let e = sym_unit(nx, i, j);
            let xa = &e * p.a();
            let mut m = shape.zeros();
            shape.put(&mut m, 0, 0, &(&xa + xa.transpose()));
            shape.put(&mut m, 0, 1, &(&e * &bs));
            f.add_term(layout.x_index(i, j), m);
        }
    }
    for i in 0..nx {
        for j in 0..ny {
            let e = unit(nx, ny, i, j);
            let yc = &e * p.c_y();
            let mut m = shape.zeros();
            shape.put(&mut m, 0, 0, &(&yc + yc.transpose()));
            shape.put(&mut m, 0, 1, &(&e * &ds));
            shape.put(&mut m, 0, y_block, &e);
            f.add_term(layout.y_index(i, j), m);
        }
    }
}

fn add_beta_terms(f: &mut AffineMatrix, shape: &BlockShape, layout: &VariableLayout, block: usize) {
    for i in 0..layout.n_y {
        let mut m = shape.zeros();
        shape.put(&mut m, block, block, &-unit(layout.n_y, layout.n_y, i, i));
        f.add_term(layout.beta_index(i), m);
    }
}

fn x_psd(builder: &mut ProblemBuilder, layout: &VariableLayout, margin: f64) {
    let nx = layout.n_x;
    let mut f = AffineMatrix::zeros(nx);
    for j in 0..nx {
        for i in 0..=j {
            f.add_term(layout.x_index(i, j), sym_unit(nx, i, j));
        }
    }
    builder.add_lmi_psd(&f, margin);
}

fn objective_and_orthant(builder: &mut ProblemBuilder, layout: &VariableLayout, spec: &DesignSpec) {
    for i in 0..layout.n_y {
        builder.set_objective(layout.beta_index(i), spec.rho[i]);
        builder.add_le(vec![(layout.beta_index(i), -1.0)], 0.0);
    }
    if let (Some(k), GammaMode::Penalized(c)) = (layout.gamma, spec.gamma_mode) {
        builder.set_objective(k, c);
    }
}

/// H2 program: main block, coupling block, `X ⪰ εI`, `Q ⪰ 0`, `β ≥ 0` and the trace bound.
pub fn build_h2(p: &LtiPlant, spec: &DesignSpec) -> Result<(SdpProblem, VariableLayout), LmiError> {
    spec.validate(p.n_y())?;
    let (nx, nd, ny, nz) = (p.n_x(), p.n_d(), p.n_y(), p.n_z());
    let penalized = matches!(spec.gamma_mode, GammaMode::Penalized(_));
    let layout = VariableLayout::new(NormType::H2, nx, ny, nz, penalized);
    let eps = spec.lmi_margin;
    let mut builder = ProblemBuilder::new(layout.n_vars());
    objective_and_orthant(&mut builder, &layout, spec);

    let shape = BlockShape::new(&[nx, nd, ny]);
    let mut main = AffineMatrix::zeros(shape.dim);
    shape.put(&mut main.constant, 1, 1, &-Matrix::identity(nd, nd));
    add_xy_terms(&mut main, &shape, p, &layout, 2);
    add_beta_terms(&mut main, &shape, &layout, 2);
    builder.add_lmi_nsd(&main, eps);

    let cshape = BlockShape::new(&[nz, nx]);
    let mut coupling = AffineMatrix::zeros(cshape.dim);
    cshape.put(&mut coupling.constant, 0, 1, p.c_z());
    let mut qpsd = AffineMatrix::zeros(nz);
    let mut trace = Vec::new();
    for j in 0..nz {
        for i in 0..=j {
            let k = layout.q_index(i, j).expect("H2 layout");
            let e = sym_unit(nz, i, j);
            let mut m = cshape.zeros();
            cshape.put(&mut m, 0, 0, &-&e);
            coupling.add_term(k, m);
            qpsd.add_term(k, e);
            if i == j {
                trace.push((k, 1.0));
            }
        }
    }
    for j in 0..nx {
        for i in 0..=j {
            let mut m = cshape.zeros();
            cshape.put(&mut m, 1, 1, &-sym_unit(nx, i, j));
            coupling.add_term(layout.x_index(i, j), m);
        }
    }
    builder.add_lmi_nsd(&coupling, eps);
    x_psd(&mut builder, &layout, eps);
    builder.add_lmi_psd(&qpsd, 0.0);
    match (spec.gamma_mode, layout.gamma) {
        (GammaMode::Fixed(g), _) => builder.add_le(trace, g * g - eps),
        (GammaMode::Penalized(_), Some(t)) => {
            trace.push((t, -1.0));
            builder.add_le(trace, -eps);
        }
        (GammaMode::Penalized(_), None) => unreachable!("penalized layout has a γ slot"),
    }
    Ok((builder.build()?, layout))
}

/// H∞ program in the rescaled variables `X′ = X/γ`, `Y′ = Y/γ`: one main block, `X′ ⪰ εI`, `β ≥ 0`.
pub fn build_hinf(p: &LtiPlant, spec: &DesignSpec) -> Result<(SdpProblem, VariableLayout), LmiError> {
    spec.validate(p.n_y())?;
    let (nx, nd, ny, nz) = (p.n_x(), p.n_d(), p.n_y(), p.n_z());
    let penalized = matches!(spec.gamma_mode, GammaMode::Penalized(_));
    let layout = VariableLayout::new(NormType::Hinf, nx, ny, nz, penalized);
    let eps = spec.lmi_margin;
    let mut builder = ProblemBuilder::new(layout.n_vars());
    objective_and_orthant(&mut builder, &layout, spec);

    let shape = BlockShape::new(&[nx, nd, nz, ny]);
    let mut main = AffineMatrix::zeros(shape.dim);
    shape.put(&mut main.constant, 0, 2, &p.c_z().transpose());
    let mut gamma_blocks = shape.zeros();
    shape.put(&mut gamma_blocks, 1, 1, &-Matrix::identity(nd, nd));
    shape.put(&mut gamma_blocks, 2, 2, &-Matrix::identity(nz, nz));
    match (spec.gamma_mode, layout.gamma) {
        (GammaMode::Fixed(g), _) => main.constant += gamma_blocks * g,
        (_, Some(k)) => main.add_term(k, gamma_blocks),
        (GammaMode::Penalized(_), None) => unreachable!("penalized layout has a γ slot"),
    }
    add_xy_terms(&mut main, &shape, p, &layout, 3);
    add_beta_terms(&mut main, &shape, &layout, 3);
    builder.add_lmi_nsd(&main, eps);
    x_psd(&mut builder, &layout, eps);
    Ok((builder.build()?, layout))
}

/// Upper bounds `β ≤ κ²_max` (H2) or `β ≤ γ·κ²_max` (H∞); infinite entries are skipped.
pub fn add_precision_bounds(
    problem: &SdpProblem,
    layout: &VariableLayout,
    spec: &DesignSpec,
) -> Result<SdpProblem, LmiError> {
    let Some(bounds) = &spec.kappa_sq_max else {
        return Ok(problem.clone());
    };
    if bounds.len() != layout.n_y {
        return Err(LmiError::Dimension(format!(
            "{} bounds for {} sensors",
            bounds.len(),
            layout.n_y
        )));
    }
    let mut rows = Vec::new();
    for (i, &kmax) in bounds.iter().enumerate() {
        if kmax.is_infinite() {
            continue;
        }
        let b = layout.beta_index(i);
        match (layout.norm, spec.gamma_mode, layout.gamma) {
            (NormType::H2, _, _) => rows.push((vec![(b, 1.0)], kmax)),
            (NormType::Hinf, GammaMode::Fixed(g), _) => rows.push((vec![(b, 1.0)], g * kmax)),
            (NormType::Hinf, GammaMode::Penalized(_), Some(k)) => rows.push((vec![(b, 1.0), (k, -kmax)], 0.0)),
            (NormType::Hinf, GammaMode::Penalized(_), None) => unreachable!("penalized layout has a γ slot"),
        }
    }
    if rows.is_empty() {
        return Ok(problem.clone());
    }
    Ok(problem.with_inequalities(&rows)?)
}

/// Builds the program for `spec.norm`, including precision bounds when present.
pub fn build(p: &LtiPlant, spec: &DesignSpec) -> Result<(SdpProblem, VariableLayout), LmiError> {
    let (problem, layout) = match spec.norm {
        NormType::H2 => build_h2(p, spec)?,
        NormType::Hinf => build_hinf(p, spec)?,
    };
    let problem = add_precision_bounds(&problem, &layout, spec)?;
    Ok((problem, layout))
}

/// Attenuation level encoded by a decision vector.
pub fn gamma_of(layout: &VariableLayout, spec: &DesignSpec, v: &Vector) -> f64 {
    match (spec.gamma_mode, layout.gamma) {
        (GammaMode::Fixed(g), _) => g,
        (GammaMode::Penalized(_), Some(k)) => match layout.norm {
            NormType::H2 => v[k].max(0.0).sqrt(),
            NormType::Hinf => v[k],
        },
        (GammaMode::Penalized(_), None) => f64::NAN,
    }
}

/// `L = X⁻¹·Y`, `κ² = β` (H2) or `β/γ` (H∞).
pub fn recover_design(
    sol: &SdpSolution,
    layout: &VariableLayout,
    spec: &DesignSpec,
    p: &LtiPlant,
) -> Result<DesignResult, LmiError> {
    if sol.status != SdpStatus::Optimal {
        return Err(LmiError::NotOptimal(sol.status));
    }
    if layout.n_x != p.n_x() || layout.n_y != p.n_y() || sol.x.len() != layout.n_vars() {
        return Err(LmiError::Dimension("solution does not match the plant layout".into()));
    }
    let x = layout.x_matrix(&sol.x);
    let norm = sym_eig(&x).map(|e| e.max().abs()).unwrap_or(f64::NAN);
    let min = min_eigenvalue(&x);
    if !(min >= 1e-10 * norm) {
        return Err(LmiError::Conditioning { min, norm });
    }
    let y = layout.y_matrix(&sol.x);
    let l = solve(&x, &y).map_err(|_| LmiError::Conditioning { min, norm })?;
    let gamma = gamma_of(layout, spec, &sol.x);
    let beta: Vec<f64> = layout.beta_values(&sol.x).into_iter().map(|b| b.max(0.0)).collect();
    let kappa_sq: Vec<f64> = match layout.norm {
        NormType::H2 => beta.clone(),
        NormType::Hinf => beta.iter().map(|b| b / gamma).collect(),
    };
    let objective: f64 = beta.iter().zip(&spec.rho).map(|(b, r)| b * r).sum();
    let kappa = PrecisionVector::new(kappa_sq, DEFAULT_SUPPORT_TOL)?;
    let support = kappa.support().to_vec();
    let record = IterationRecord {
        beta: beta.clone(),
        kappa_sq: kappa.values().to_vec(),
        rho: spec.rho.clone(),
        weighted_objective: objective,
        unit_objective: beta.iter().sum(),
        support: support.clone(),
        status: sol.status,
    };
    Ok(DesignResult {
        norm: layout.norm,
        l,
        kappa_sq: kappa,
        beta,
        gamma,
        objective,
        support,
        iterations: vec![record],
        status: sol.status,
        solver_iterations: sol.iterations,
        primal_residual: sol.primal_residual,
        dual_residual: sol.dual_residual,
        duality_gap: sol.duality_gap,
        x: x.clone(),
    })
}
