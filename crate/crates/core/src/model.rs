//! Plant, normalization weights, precision vectors and the observer error system.

use crate::linalg::{self, diag, eigenvalues, inverse, sigma_max, LinalgError, Matrix};
use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("disturbance scaling S_d must be diagonal with nonnegative entries")]
    InvalidScaling,
    #[error("state scales must be finite and positive")]
    StateScaling,
    #[error("(A, C_y) is not detectable: mode {re:+.6e}{im:+.6e}i is unobservable")]
    NotDetectable { re: f64, im: f64 },
    #[error("weight {0} is singular or not square")]
    SingularWeight(&'static str),
    #[error("unsupported weight structure: {0}")]
    WeightStructure(String),
    #[error("sensor {0} has zero precision but a nonzero gain column")]
    Structural(usize),
    #[error("invalid precision vector: {0}")]
    Precision(String),
    #[error("model file: {0}")]
    Parse(String),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
}

/// Continuous LTI plant with process disturbance `d` and one independent noise
/// channel per sensor (`B_n = 0`, `D_n = I`).
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: Matrix,
    b_u: Matrix,
    b_d: Matrix,
    c_y: Matrix,
    c_z: Matrix,
    d_u: Matrix,
    d_d: Matrix,
    s_d: Matrix,
    state_labels: Vec<String>,
    sensor_labels: Vec<String>,
    output_labels: Vec<String>,
}

fn labels(prefix: &str, n: usize) -> Vec<String> {
    (1..=n).map(|i| format!("{prefix}{i}")).collect()
}

fn check_shape(name: &str, m: &Matrix, rows: usize, cols: usize) -> Result<(), ModelError> {
    if m.nrows() != rows || m.ncols() != cols {
        return Err(ModelError::Dimension(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    linalg::ensure_finite(m)?;
    Ok(())
}

impl LtiPlant {
    /// Builds a plant with `S_d = I` and generic labels.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        a: Matrix,
        b_u: Matrix,
        b_d: Matrix,
        c_y: Matrix,
        c_z: Matrix,
        d_u: Matrix,
        d_d: Matrix,
    ) -> Result<Self, ModelError> {
        let nx = a.nrows();
        let (nu, nd, ny, nz) = (b_u.ncols(), b_d.ncols(), c_y.nrows(), c_z.nrows());
        check_shape("A", &a, nx, nx)?;
        check_shape("B_u", &b_u, nx, nu)?;
        check_shape("B_d", &b_d, nx, nd)?;
        check_shape("C_y", &c_y, ny, nx)?;
        check_shape("C_z", &c_z, nz, nx)?;
        check_shape("D_u", &d_u, ny, nu)?;
        check_shape("D_d", &d_d, ny, nd)?;
        Ok(Self {
            a,
            b_u,
            b_d,
            c_y,
            c_z,
            d_u,
            d_d,
            s_d: Matrix::identity(nd, nd),
            state_labels: labels("x", nx),
            sensor_labels: labels("y", ny),
            output_labels: labels("z", nz),
        })
    }

    /// Plant without a control input, which the error dynamics never see.
    pub fn estimation(a: Matrix, b_d: Matrix, c_y: Matrix, c_z: Matrix, d_d: Matrix) -> Result<Self, ModelError> {
        let (nx, ny) = (a.nrows(), c_y.nrows());
        Self::new(a, Matrix::zeros(nx, 0), b_d, c_y, c_z, Matrix::zeros(ny, 0), d_d)
    }

    pub fn with_disturbance_scaling(mut self, s_d: Matrix) -> Result<Self, ModelError> {
        let nd = self.n_d();
        check_shape("S_d", &s_d, nd, nd)?;
        for i in 0..nd {
            for j in 0..nd {
                let v = s_d[(i, j)];
                if (i == j && v < 0.0) || (i != j && v != 0.0) {
                    return Err(ModelError::InvalidScaling);
                }
            }
        }
        self.s_d = s_d;
        Ok(self)
    }

    pub fn with_labels(
        mut self,
        states: Vec<String>,
        sensors: Vec<String>,
        outputs: Vec<String>,
    ) -> Result<Self, ModelError> {
        if states.len() != self.n_x() || sensors.len() != self.n_y() || outputs.len() != self.n_z() {
            return Err(ModelError::Dimension("label counts do not match the plant".into()));
        }
        self.state_labels = states;
        self.sensor_labels = sensors;
        self.output_labels = outputs;
        Ok(self)
    }

    pub fn n_x(&self) -> usize {
        self.a.nrows()
    }
    pub fn n_u(&self) -> usize {
        self.b_u.ncols()
    }
    pub fn n_d(&self) -> usize {
        self.b_d.ncols()
    }
    pub fn n_y(&self) -> usize {
        self.c_y.nrows()
    }
    pub fn n_z(&self) -> usize {
        self.c_z.nrows()
    }
    pub fn a(&self) -> &Matrix {
        &self.a
    }
    pub fn b_u(&self) -> &Matrix {
        &self.b_u
    }
    pub fn b_d(&self) -> &Matrix {
        &self.b_d
    }
    pub fn c_y(&self) -> &Matrix {
        &self.c_y
    }
    pub fn c_z(&self) -> &Matrix {
        &self.c_z
    }
    pub fn d_u(&self) -> &Matrix {
        &self.d_u
    }
    pub fn d_d(&self) -> &Matrix {
        &self.d_d
    }
    pub fn s_d(&self) -> &Matrix {
        &self.s_d
    }
    pub fn state_labels(&self) -> &[String] {
        &self.state_labels
    }
    pub fn sensor_labels(&self) -> &[String] {
        &self.sensor_labels
    }
    pub fn output_labels(&self) -> &[String] {
        &self.output_labels
    }

    /// Replaces the performance output map (labels are reset).
    pub fn with_output(mut self, c_z: Matrix) -> Result<Self, ModelError> {
        check_shape("C_z", &c_z, c_z.nrows(), self.n_x())?;
        self.output_labels = labels("z", c_z.nrows());
        self.c_z = c_z;
        Ok(self)
    }

    /// Keeps only the listed sensors, in the given order.
    pub fn restrict_sensors(&self, sensors: &[usize]) -> Result<Self, ModelError> {
        if let Some(&bad) = sensors.iter().find(|&&i| i >= self.n_y()) {
            return Err(ModelError::Dimension(format!("sensor index {bad} out of range")));
        }
        let mut out = self.clone();
        out.c_y = self.c_y.select_rows(sensors);
        out.d_u = self.d_u.select_rows(sensors);
        out.d_d = self.d_d.select_rows(sensors);
        out.sensor_labels = sensors.iter().map(|&i| self.sensor_labels[i].clone()).collect();
        Ok(out)
    }

    /// Plant in coordinates `x = T·x̃` with `T = diag(t)`.
    pub fn scale_states(&self, t: &[f64]) -> Result<Self, ModelError> {
        let n = self.n_x();
        if t.len() != n {
            return Err(ModelError::Dimension(format!("{} state scales for {n} states", t.len())));
        }
        if t.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return Err(ModelError::StateScaling);
        }
        let mut out = self.clone();
        for i in 0..n {
            for j in 0..n {
                out.a[(i, j)] *= t[j] / t[i];
            }
            out.b_u.row_mut(i).scale_mut(1.0 / t[i]);
            out.b_d.row_mut(i).scale_mut(1.0 / t[i]);
            out.c_y.column_mut(i).scale_mut(t[i]);
            out.c_z.column_mut(i).scale_mut(t[i]);
        }
        Ok(out)
    }

    /// PBH test on every mode with nonnegative real part.
    pub fn check_detectability(&self) -> Result<(), ModelError> {
        let n = self.n_x();
        let ny = self.n_y();
        let tol = 1e-8 * sigma_max(&self.a).max(f64::MIN_POSITIVE);
        for lam in eigenvalues(&self.a)? {
            if lam.re < -tol {
                continue;
            }
            // Real embedding of [λI − A; C_y].
            let mut m = Matrix::zeros(2 * (n + ny), 2 * n);
            let mr = Matrix::identity(n, n) * lam.re - &self.a;
            let mi = Matrix::identity(n, n) * lam.im;
            m.view_mut((0, 0), (n, n)).copy_from(&mr);
            m.view_mut((0, n), (n, n)).copy_from(&(-&mi));
            m.view_mut((n, 0), (ny, n)).copy_from(&self.c_y);
            m.view_mut((n + ny, 0), (n, n)).copy_from(&mi);
            m.view_mut((n + ny, n), (n, n)).copy_from(&mr);
            m.view_mut((2 * n + ny, n), (ny, n)).copy_from(&self.c_y);
            let smin = m.singular_values().min();
            if smin <= tol {
                return Err(ModelError::NotDetectable { re: lam.re, im: lam.im });
            }
        }
        Ok(())
    }
}

/// Normalization weights for inputs, exogenous signals `[d; n]` and outputs.
#[derive(Debug, Clone, PartialEq)]
pub struct NormWeights {
    pub w_u: Matrix,
    pub w_w: Matrix,
    pub w_z: Matrix,
}

fn nonsingular(name: &'static str, m: &Matrix) -> Result<(), ModelError> {
    if m.nrows() != m.ncols() {
        return Err(ModelError::SingularWeight(name));
    }
    if m.nrows() == 0 {
        return Ok(());
    }
    let sv = m.singular_values();
    if !(sv.min() > 1e-12 * sv.max()) {
        return Err(ModelError::SingularWeight(name));
    }
    Ok(())
}

impl NormWeights {
    pub fn new(w_u: Matrix, w_w: Matrix, w_z: Matrix) -> Result<Self, ModelError> {
        linalg::ensure_finite(&w_u)?;
        linalg::ensure_finite(&w_w)?;
        linalg::ensure_finite(&w_z)?;
        nonsingular("W_u", &w_u)?;
        nonsingular("W_w", &w_w)?;
        nonsingular("W_z", &w_z)?;
        Ok(Self { w_u, w_w, w_z })
    }

    pub fn identity(p: &LtiPlant) -> Self {
        let nw = p.n_d() + p.n_y();
        Self {
            w_u: Matrix::identity(p.n_u(), p.n_u()),
            w_w: Matrix::identity(nw, nw),
            w_z: Matrix::identity(p.n_z(), p.n_z()),
        }
    }

    /// Weights applied one after the other: first `self`, then `next`.
    pub fn then(&self, next: &NormWeights) -> NormWeights {
        NormWeights {
            w_u: &self.w_u * &next.w_u,
            w_w: &self.w_w * &next.w_w,
            w_z: &next.w_z * &self.w_z,
        }
    }
}

/// Normalized plant `B̃_u = B_u·W_u`, `[B̃_d B̃_n] = [B_d 0]·W_w`,
/// `[D̃_d D̃_n] = [D_d I]·W_w`, `C̃_z = W_z·C_z`.
///
/// The noise block of `W_w` must be diagonal and the disturbance-to-noise block
/// zero; sensor rows are then divided by the noise weight so that `D̃_n = I`.
pub fn apply_weights(p: &LtiPlant, w: &NormWeights) -> Result<LtiPlant, ModelError> {
    let (nu, nd, ny, nz) = (p.n_u(), p.n_d(), p.n_y(), p.n_z());
    if w.w_u.shape() != (nu, nu) || w.w_w.shape() != (nd + ny, nd + ny) || w.w_z.shape() != (nz, nz) {
        return Err(ModelError::Dimension(format!(
            "weights must be {nu}x{nu}, {0}x{0} and {nz}x{nz}",
            nd + ny
        )));
    }
    nonsingular("W_u", &w.w_u)?;
    nonsingular("W_w", &w.w_w)?;
    nonsingular("W_z", &w.w_z)?;
    let w_dd = w.w_w.view((0, 0), (nd, nd)).into_owned();
    let w_dn = w.w_w.view((0, nd), (nd, ny));
    let w_nd = w.w_w.view((nd, 0), (ny, nd)).into_owned();
    let w_nn = w.w_w.view((nd, nd), (ny, ny));
    if w_dn.iter().any(|&v| v != 0.0) {
        return Err(ModelError::WeightStructure(
            "disturbance weights must not mix in sensor noise".into(),
        ));
    }
    let mut scale = Vec::with_capacity(ny);
    for i in 0..ny {
        for j in 0..ny {
            if i != j && w_nn[(i, j)] != 0.0 {
                return Err(ModelError::WeightStructure("sensor-noise weight must be diagonal".into()));
            }
        }
        scale.push(1.0 / w_nn[(i, i)]);
    }
    let row_scale = diag(&scale);
    let mut out = p.clone();
    out.b_u = &p.b_u * &w.w_u;
    out.b_d = &p.b_d * &w_dd;
    out.d_u = &row_scale * (&p.d_u * &w.w_u);
    out.d_d = &row_scale * (&p.d_d * &w_dd + w_nd);
    out.c_y = &row_scale * &p.c_y;
    out.c_z = &w.w_z * &p.c_z;
    Ok(out)
}

/// Sensor precisions `κ²` together with the set of sensors kept.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrecisionVector {
    kappa_sq: Vec<f64>,
    support: Vec<usize>,
}

/// Precisions at or below this value are solver noise around zero.
pub const PRECISION_FLOOR: f64 = 1e-7;

impl PrecisionVector {
    /// Support is every entry strictly above both `rel_tol·max κ²` and
    /// [`PRECISION_FLOOR`].
    pub fn new(kappa_sq: Vec<f64>, rel_tol: f64) -> Result<Self, ModelError> {
        Self::with_threshold(kappa_sq, rel_tol, PRECISION_FLOOR)
    }

    /// Support is every strictly positive entry.
    pub fn positive(kappa_sq: Vec<f64>) -> Result<Self, ModelError> {
        Self::with_threshold(kappa_sq, 0.0, 0.0)
    }

    pub fn with_threshold(kappa_sq: Vec<f64>, rel_tol: f64, floor: f64) -> Result<Self, ModelError> {
        if kappa_sq.iter().any(|&k| !(k >= 0.0) || !k.is_finite()) {
            return Err(ModelError::Precision("entries must be finite and nonnegative".into()));
        }
        let max = kappa_sq.iter().copied().fold(0.0, f64::max);
        let support = (0..kappa_sq.len())
            .filter(|&i| kappa_sq[i] > 0.0 && kappa_sq[i] > rel_tol * max && kappa_sq[i] > floor)
            .collect();
        Ok(Self { kappa_sq, support })
    }

    pub fn values(&self) -> &[f64] {
        &self.kappa_sq
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.kappa_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kappa_sq.is_empty()
    }

    pub fn l0(&self) -> usize {
        self.support.len()
    }

    pub fn l1(&self) -> f64 {
        self.kappa_sq.iter().sum()
    }

    pub fn contains(&self, i: usize) -> bool {
        self.support.binary_search(&i).is_ok()
    }
}

/// `ė = A_cl·e + B_cl·w̄`, `ε = C_z·e`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSystem {
    pub a_cl: Matrix,
    pub b_cl: Matrix,
    pub c_z: Matrix,
}

impl ErrorSystem {
    pub fn new(a_cl: Matrix, b_cl: Matrix, c_z: Matrix) -> Result<Self, ModelError> {
        let n = a_cl.nrows();
        check_shape("A_cl", &a_cl, n, n)?;
        check_shape("B_cl", &b_cl, n, b_cl.ncols())?;
        check_shape("C_z", &c_z, c_z.nrows(), n)?;
        Ok(Self { a_cl, b_cl, c_z })
    }

    pub fn n_x(&self) -> usize {
        self.a_cl.nrows()
    }

    pub fn is_stable(&self) -> Result<bool, ModelError> {
        Ok(linalg::is_hurwitz(&self.a_cl)?)
    }

    /// `(T·A·T⁻¹, T·B, C·T⁻¹)`
    pub fn transform(&self, t: &Matrix) -> Result<Self, ModelError> {
        let ti = inverse(t)?;
        Self::new(t * &self.a_cl * &ti, t * &self.b_cl, &self.c_z * &ti)
    }
}

/// Assembles the error system for gain `l` and precisions `kappa_sq`; sensors
/// outside the support contribute neither a measurement nor a noise channel.
pub fn build_error_system(
    p: &LtiPlant,
    l: &Matrix,
    kappa_sq: &PrecisionVector,
) -> Result<ErrorSystem, ModelError> {
    let (nx, ny) = (p.n_x(), p.n_y());
    check_shape("L", l, nx, ny)?;
    if kappa_sq.len() != ny {
        return Err(ModelError::Dimension(format!(
            "{} precisions for {ny} sensors",
            kappa_sq.len()
        )));
    }
    for i in 0..ny {
        if !kappa_sq.contains(i) && l.column(i).iter().any(|&v| v != 0.0) {
            return Err(ModelError::Structural(i));
        }
    }
    let support = kappa_sq.support();
    let a_cl = &p.a + l * &p.c_y;
    let nd = p.n_d();
    let mut b_cl = Matrix::zeros(nx, nd + support.len());
    b_cl.columns_mut(0, nd)
        .copy_from(&((&p.b_d + l * &p.d_d) * &p.s_d));
    for (k, &i) in support.iter().enumerate() {
        let inv_kappa = 1.0 / kappa_sq.values()[i].sqrt();
        b_cl.set_column(nd + k, &(l.column(i) * inv_kappa));
    }
    ErrorSystem::new(a_cl, b_cl, p.c_z.clone())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrimPoint {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_ft_s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub altitude_ft: Option<f64>,
    pub x: Vec<f64>,
    pub u: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct WeightsFile {
    #[serde(rename = "W_u")]
    w_u: Vec<Vec<f64>>,
    #[serde(rename = "W_w")]
    w_w: Vec<Vec<f64>>,
    #[serde(rename = "W_z")]
    w_z: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ModelFile {
    #[serde(default)]
    name: Option<String>,
    #[serde(default)]
    states: Option<Vec<String>>,
    #[serde(default)]
    inputs: Option<Vec<String>>,
    #[serde(default)]
    sensors: Option<Vec<String>>,
    #[serde(default)]
    outputs: Option<Vec<String>>,
    #[serde(rename = "A")]
    a: Vec<Vec<f64>>,
    #[serde(rename = "B_u", default)]
    b_u: Option<Vec<Vec<f64>>>,
    #[serde(rename = "B_d")]
    b_d: Vec<Vec<f64>>,
    #[serde(rename = "C_y")]
    c_y: Vec<Vec<f64>>,
    #[serde(rename = "C_z")]
    c_z: Vec<Vec<f64>>,
    #[serde(rename = "D_u", default)]
    d_u: Option<Vec<Vec<f64>>>,
    #[serde(rename = "D_d")]
    d_d: Vec<Vec<f64>>,
    #[serde(rename = "S_d", default)]
    s_d: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    weights: Option<WeightsFile>,
    #[serde(default)]
    trim: Option<TrimPoint>,
}

/// A plant file: raw plant, optional normalization weights and trim metadata.
#[derive(Debug, Clone, PartialEq)]
pub struct PlantModel {
    pub name: String,
    pub input_labels: Vec<String>,
    pub plant: LtiPlant,
    pub weights: Option<NormWeights>,
    pub trim: Option<TrimPoint>,
}

impl PlantModel {
    /// The plant with its weights applied (the raw plant when there are none).
    pub fn normalized(&self) -> Result<LtiPlant, ModelError> {
        match &self.weights {
            Some(w) => apply_weights(&self.plant, w),
            None => Ok(self.plant.clone()),
        }
    }
}

fn matrix_from_rows(name: &str, rows: &[Vec<f64>], cols_if_empty: usize) -> Result<Matrix, ModelError> {
    let ncols = rows.first().map_or(cols_if_empty, Vec::len);
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ModelError::Parse(format!("{name}: rows have different lengths")));
    }
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    Ok(Matrix::from_row_slice(rows.len(), ncols, &flat))
}

pub fn parse_model(text: &str) -> Result<PlantModel, ModelError> {
    let f: ModelFile = serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))?;
    let a = matrix_from_rows("A", &f.a, 0)?;
    let nx = a.nrows();
    let c_y = matrix_from_rows("C_y", &f.c_y, nx)?;
    let ny = c_y.nrows();
    let b_u = match &f.b_u {
        Some(r) => matrix_from_rows("B_u", r, 0)?,
        None => Matrix::zeros(nx, 0),
    };
    let d_u = match &f.d_u {
        Some(r) => matrix_from_rows("D_u", r, b_u.ncols())?,
        None => Matrix::zeros(ny, b_u.ncols()),
    };
    let b_d = matrix_from_rows("B_d", &f.b_d, 0)?;
    let d_d = matrix_from_rows("D_d", &f.d_d, b_d.ncols())?;
    let c_z = matrix_from_rows("C_z", &f.c_z, nx)?;
    let mut plant = LtiPlant::new(a, b_u, b_d, c_y, c_z, d_u, d_d)?;
    if let Some(s) = &f.s_d {
        plant = plant.with_disturbance_scaling(matrix_from_rows("S_d", s, 0)?)?;
    }
    let states = f.states.unwrap_or_else(|| labels("x", plant.n_x()));
    let sensors = f.sensors.unwrap_or_else(|| labels("y", plant.n_y()));
    let outputs = f.outputs.unwrap_or_else(|| labels("z", plant.n_z()));
    plant = plant.with_labels(states, sensors, outputs)?;
    let input_labels = f.inputs.unwrap_or_else(|| labels("u", plant.n_u()));
    if input_labels.len() != plant.n_u() {
        return Err(ModelError::Dimension("input label count does not match B_u".into()));
    }
    let weights = match &f.weights {
        Some(w) => Some(NormWeights::new(
            matrix_from_rows("W_u", &w.w_u, 0)?,
            matrix_from_rows("W_w", &w.w_w, 0)?,
            matrix_from_rows("W_z", &w.w_z, 0)?,
        )?),
        None => None,
    };
    if let Some(w) = &weights {
        apply_weights(&plant, w)?;
    }
    plant.check_detectability()?;
    Ok(PlantModel {
        name: f.name.unwrap_or_default(),
        input_labels,
        plant,
        weights,
        trim: f.trim,
    })
}

pub fn load_model(path: impl AsRef<Path>) -> Result<PlantModel, ModelError> {
    let text = std::fs::read_to_string(path.as_ref())
        .map_err(|e| ModelError::Io(format!("{}: {e}", path.as_ref().display())))?;
    parse_model(&text)
}

/// Model file text of the bundled F-16 longitudinal plant at 1000 ft/s.
pub const F16_V1000_JSON: &str = include_str!("../data/f16_v1000.json");

/// The bundled F-16 longitudinal plant at 1000 ft/s, raw matrices plus weights.
pub fn f16_v1000() -> PlantModel {
    parse_model(F16_V1000_JSON).expect("bundled model is valid")
}
