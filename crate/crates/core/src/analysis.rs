//! Norm certificates and stochastic simulation of the error dynamics.

use crate::linalg::{self, expm, solve_lyapunov, spectral_abscissa, sym_eig, LinalgError, Matrix, Vector};
use crate::lmi::NormType;
use crate::model::{ErrorSystem, ModelError};
use crate::sdp::{self, AffineMatrix, ProblemBuilder, SdpStatus, SolverOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use std::io::Write;
use thiserror::Error;

/// Default relative bracket width of the H∞ bisection.
pub const HINF_TOL: f64 = 1e-6;
/// Bracket width used by [`certify`].
pub const CERTIFY_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalysisError {
    #[error("error dynamics are not Hurwitz (spectral abscissa {0:.6e})")]
    Unstable(f64),
    #[error("invalid simulation options: {0}")]
    InvalidOptions(String),
    #[error("bounded-real LMI solve ended with status {0}")]
    Solver(SdpStatus),
    #[error("i/o error: {0}")]
    Io(String),
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

impl From<std::io::Error> for AnalysisError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}

fn require_stable(sys: &ErrorSystem) -> Result<(), AnalysisError> {
    let abscissa = spectral_abscissa(&sys.a_cl)?;
    if abscissa < 0.0 {
        Ok(())
    } else {
        Err(AnalysisError::Unstable(abscissa))
    }
}

/// How a certificate value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum CertificateMethod {
    /// Controllability Gramian; relative Lyapunov residual.
    Lyapunov { residual: f64 },
    /// Hamiltonian bisection; final bracket.
    Bisection { lower: f64, upper: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormCertificate {
    pub norm: NormType,
    pub value: f64,
    pub gamma_target: f64,
    pub satisfied: bool,
    pub method: CertificateMethod,
}

impl NormCertificate {
    fn new(norm: NormType, value: f64, gamma_target: f64, method: CertificateMethod) -> Self {
        Self {
            norm,
            value,
            gamma_target,
            satisfied: value < gamma_target,
            method,
        }
    }
}

/// H2 norm with the relative residual of the Gramian equation.
pub fn h2_norm_detailed(sys: &ErrorSystem) -> Result<(f64, f64), AnalysisError> {
    require_stable(sys)?;
    let w = &sys.b_cl * sys.b_cl.transpose();
    let p = solve_lyapunov(&sys.a_cl, &w)?;
    let residual = linalg::lyapunov_residual(&sys.a_cl, &p, &w);
    let value = (&sys.c_z * &p * sys.c_z.transpose()).trace().max(0.0).sqrt();
    Ok((value, residual))
}

/// `sqrt(trace(C_z·P·C_zᵀ))` with `A·P + P·Aᵀ + B·Bᵀ = 0`.
pub fn h2_norm(sys: &ErrorSystem) -> Result<f64, AnalysisError> {
    Ok(h2_norm_detailed(sys)?.0)
}

/// Largest singular value of `C(jωI − A)⁻¹B`.
pub fn sigma_at(sys: &ErrorSystem, omega: f64) -> Result<f64, AnalysisError> {
    let n = sys.n_x();
    let nb = sys.b_cl.ncols();
    // Real form of (jω − A)(Xr + jXi) = B.
    let mut m = Matrix::zeros(2 * n, 2 * n);
    m.view_mut((0, 0), (n, n)).copy_from(&(-&sys.a_cl));
    m.view_mut((n, n), (n, n)).copy_from(&(-&sys.a_cl));
    for i in 0..n {
        m[(i, n + i)] = -omega;
        m[(n + i, i)] = omega;
    }
    let mut rhs = Matrix::zeros(2 * n, nb);
    rhs.view_mut((0, 0), (n, nb)).copy_from(&sys.b_cl);
    let x = linalg::solve(&m, &rhs)?;
    let gr = &sys.c_z * x.rows(0, n);
    let gi = &sys.c_z * x.rows(n, n);
    let nz = sys.c_z.nrows();
    let mut g = Matrix::zeros(2 * nz, 2 * nb);
    g.view_mut((0, 0), (nz, nb)).copy_from(&gr);
    g.view_mut((0, nb), (nz, nb)).copy_from(&(-&gi));
    g.view_mut((nz, 0), (nz, nb)).copy_from(&gi);
    g.view_mut((nz, nb), (nz, nb)).copy_from(&gr);
    Ok(linalg::sigma_max(&g))
}

/// Frequencies at which the Hamiltonian for level `gamma` has imaginary-axis eigenvalues.
fn imaginary_crossings(sys: &ErrorSystem, gamma: f64) -> Result<Vec<f64>, AnalysisError> {
    let n = sys.n_x();
    let mut h = Matrix::zeros(2 * n, 2 * n);
    h.view_mut((0, 0), (n, n)).copy_from(&sys.a_cl);
    h.view_mut((0, n), (n, n))
        .copy_from(&(&sys.b_cl * sys.b_cl.transpose() / (gamma * gamma)));
    h.view_mut((n, 0), (n, n)).copy_from(&(-(sys.c_z.transpose() * &sys.c_z)));
    h.view_mut((n, n), (n, n)).copy_from(&(-sys.a_cl.transpose()));
    let scale = linalg::sigma_max(&h).max(f64::MIN_POSITIVE);
    Ok(linalg::eigenvalues(&h)?
        .into_iter()
        .filter(|l| l.re.abs() <= 1e-8 * scale.max(l.im.abs()))
        .map(|l| l.im.abs())
        .collect())
}

/// H∞ norm by Hamiltonian bisection; returns `(upper, lower)` bounds with
/// `upper − lower ≤ tol·upper`.
pub fn hinf_norm_bracket(sys: &ErrorSystem, tol: f64) -> Result<(f64, f64), AnalysisError> {
    require_stable(sys)?;
    if !(tol > 0.0) {
        return Err(AnalysisError::InvalidOptions("bisection tolerance must be positive".into()));
    }
    let mut lo = sigma_at(sys, 0.0)?;
    for l in linalg::eigenvalues(&sys.a_cl)? {
        lo = lo.max(sigma_at(sys, l.im.abs())?).max(sigma_at(sys, l.norm())?);
    }
    if lo == 0.0 {
        return Ok((0.0, 0.0));
    }
    let mut hi = 2.0 * lo;
    // A crossing only counts when the frequency response confirms it.
    let exceeds = |gamma: f64, lo: &mut f64| -> Result<bool, AnalysisError> {
        let mut hit = false;
        for w in imaginary_crossings(sys, gamma)? {
            let s = sigma_at(sys, w)?;
            *lo = lo.max(s);
            hit |= s >= gamma * (1.0 - 1e-9);
        }
        Ok(hit)
    };
    while exceeds(hi, &mut lo)? {
        hi *= 2.0;
    }
    while hi - lo > tol * hi {
        let mid = 0.5 * (lo + hi);
        if exceeds(mid, &mut lo)? {
            lo = lo.max(mid);
        } else {
            hi = mid;
        }
    }
    Ok((hi, lo))
}

/// Upper end of the converged bisection bracket.
pub fn hinf_norm(sys: &ErrorSystem) -> Result<f64, AnalysisError> {
    Ok(hinf_norm_bracket(sys, HINF_TOL)?.0)
}

/// Balanced realization, with equal diagonal Gramians. `None` when either
/// Gramian is singular.
fn balance(sys: &ErrorSystem) -> Option<ErrorSystem> {
    let wc = solve_lyapunov(&sys.a_cl, &(&sys.b_cl * sys.b_cl.transpose())).ok()?;
    let wo = solve_lyapunov(&sys.a_cl.transpose(), &(sys.c_z.transpose() * &sys.c_z)).ok()?;
    let l = linalg::cholesky(&wc).ok()??;
    let eig = sym_eig(&(l.transpose() * &wo * &l)).ok()?;
    if !(eig.min() > 0.0) {
        return None;
    }
    let root: Vec<f64> = eig.values.iter().map(|v| v.powf(-0.25)).collect();
    let t = &l * &eig.vectors * linalg::diag(&root);
    let t_inv = linalg::inverse(&t).ok()?;
    ErrorSystem::new(&t_inv * &sys.a_cl * &t, &t_inv * &sys.b_cl, &sys.c_z * &t).ok()
}

/// H∞ norm from the bounded-real LMI, minimizing `γ²` over `P ⪰ 0`.
pub fn hinf_norm_lmi(sys: &ErrorSystem, solver: &SolverOptions) -> Result<f64, AnalysisError> {
    require_stable(sys)?;
    let balanced = balance(sys);
    let sys = balanced.as_ref().unwrap_or(sys);
    let (n, nw) = (sys.n_x(), sys.b_cl.ncols());
    let n_p = n * (n + 1) / 2;
    let eta = n_p;
    let mut builder = ProblemBuilder::new(n_p + 1);
    builder.set_objective(eta, 1.0);
    let d = n + nw;
    let mut constant = Matrix::zeros(d, d);
    constant
        .view_mut((0, 0), (n, n))
        .copy_from(&(sys.c_z.transpose() * &sys.c_z));
    let mut main = AffineMatrix::constant(constant);
    let mut pos = AffineMatrix::zeros(n);
    let mut k = 0;
    for j in 0..n {
        for i in 0..=j {
            let mut e = Matrix::zeros(n, n);
            e[(i, j)] = 1.0;
            e[(j, i)] = 1.0;
            let mut coef = Matrix::zeros(d, d);
            coef.view_mut((0, 0), (n, n))
                .copy_from(&(sys.a_cl.transpose() * &e + &e * &sys.a_cl));
            let pb = &e * &sys.b_cl;
            coef.view_mut((0, n), (n, nw)).copy_from(&pb);
            coef.view_mut((n, 0), (nw, n)).copy_from(&pb.transpose());
            main.add_term(k, coef);
            pos.add_term(k, e);
            k += 1;
        }
    }
    let mut coef = Matrix::zeros(d, d);
    coef.view_mut((n, n), (nw, nw)).fill_with_identity();
    main.add_term(eta, -coef);
    builder.add_lmi_nsd(&main, 0.0);
    builder.add_lmi_psd(&pos, 0.0);
    let problem = builder.build().map_err(|e| AnalysisError::InvalidOptions(e.to_string()))?;
    let sol = sdp::solve_equilibrated(&problem, solver, 2);
    if sol.status != SdpStatus::Optimal {
        return Err(AnalysisError::Solver(sol.status));
    }
    Ok(sol.x[eta].max(0.0).sqrt())
}

/// Independent check that the error system meets `‖·‖ < gamma`.
pub fn certify(sys: &ErrorSystem, norm: NormType, gamma: f64) -> Result<NormCertificate, AnalysisError> {
    Ok(match norm {
        NormType::H2 => {
            let (value, residual) = h2_norm_detailed(sys)?;
            NormCertificate::new(norm, value, gamma, CertificateMethod::Lyapunov { residual })
        }
        NormType::Hinf => {
            let (upper, lower) = hinf_norm_bracket(sys, CERTIFY_TOL)?;
            NormCertificate::new(norm, upper, gamma, CertificateMethod::Bisection { lower, upper })
        }
    })
}

/// Initial error of the demonstration runs.
pub const DEFAULT_E0: [f64; 4] = [1.0, 0.01, 0.01, 0.01];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NoiseModel {
    Zero,
    /// Unit-intensity continuous white noise, sampled exactly.
    White,
    /// First-order low-pass at `bandwidth` rad/s with unit stationary variance,
    /// held over each step.
    BandLimited { bandwidth: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulationOptions {
    pub step: f64,
    pub horizon: f64,
    pub e0: Vec<f64>,
    pub noise: NoiseModel,
    pub seed: u64,
}

impl Default for SimulationOptions {
    fn default() -> Self {
        Self {
            step: 1e-3,
            horizon: 10.0,
            e0: DEFAULT_E0.to_vec(),
            noise: NoiseModel::BandLimited { bandwidth: 100.0 },
            seed: 42,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationRun {
    pub step: f64,
    pub horizon: f64,
    pub times: Vec<f64>,
    /// One row per time sample.
    pub e: Matrix,
    pub eps: Matrix,
    pub seed: u64,
    pub noise: NoiseModel,
}

impl SimulationRun {
    /// Root mean square of each output channel over samples with `t ≥ from`.
    pub fn output_rms(&self, from: f64) -> Vec<f64> {
        let rows: Vec<usize> = (0..self.times.len()).filter(|&k| self.times[k] >= from).collect();
        (0..self.eps.ncols())
            .map(|j| {
                let ss: f64 = rows.iter().map(|&k| self.eps[(k, j)].powi(2)).sum();
                (ss / rows.len().max(1) as f64).sqrt()
            })
            .collect()
    }

    /// `sqrt(mean ‖ε‖²)` over samples with `t ≥ from`.
    pub fn total_rms(&self, from: f64) -> f64 {
        self.output_rms(from).iter().map(|r| r * r).sum::<f64>().sqrt()
    }

    /// Smallest `C` with `‖e(t)‖ ≤ C·‖e(0)‖·e^{−αt}` on the grid.
    pub fn envelope_constant(&self, alpha: f64) -> f64 {
        let e0 = self.e.row(0).norm();
        (0..self.times.len())
            .map(|k| self.e.row(k).norm() * (alpha * self.times[k]).exp() / e0)
            .fold(0.0, f64::max)
    }

    /// Header `time,e_1..,eps_1..` and one row per sample.
    pub fn write_csv(&self, mut w: impl Write) -> Result<(), AnalysisError> {
        let mut header = vec!["time".to_string()];
        header.extend((1..=self.e.ncols()).map(|i| format!("e_{i}")));
        header.extend((1..=self.eps.ncols()).map(|i| format!("eps_{i}")));
        writeln!(w, "{}", header.join(","))?;
        for (k, t) in self.times.iter().enumerate() {
            let mut row = vec![format!("{t:.16e}")];
            row.extend(self.e.row(k).iter().map(|v| format!("{v:.16e}")));
            row.extend(self.eps.row(k).iter().map(|v| format!("{v:.16e}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Symmetric square root of a PSD matrix, clipping roundoff negatives.
fn psd_sqrt(m: &Matrix) -> Result<Matrix, AnalysisError> {
    let eig = sym_eig(&linalg::symmetrize(m))?;
    let d = Matrix::from_diagonal(&eig.values.map(|v| v.max(0.0).sqrt()));
    Ok(&eig.vectors * d * eig.vectors.transpose())
}

/// Zero-order-hold simulation of `ė = A_cl·e + B_cl·w`, `ε = C_z·e`.
pub fn simulate(sys: &ErrorSystem, opts: &SimulationOptions) -> Result<SimulationRun, AnalysisError> {
    let n = sys.n_x();
    let nw = sys.b_cl.ncols();
    if !(opts.step > 0.0 && opts.step.is_finite() && opts.horizon >= opts.step && opts.horizon.is_finite()) {
        return Err(AnalysisError::InvalidOptions("need 0 < step ≤ horizon".into()));
    }
    if opts.e0.len() != n || opts.e0.iter().any(|v| !v.is_finite()) {
        return Err(AnalysisError::InvalidOptions(format!("initial error must have {n} finite entries")));
    }
    if let NoiseModel::BandLimited { bandwidth } = opts.noise {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(AnalysisError::InvalidOptions("bandwidth must be positive".into()));
        }
    }
    require_stable(sys)?;

    let h = opts.step;
    let steps = (opts.horizon / h).round() as usize;
    // exp([A B; 0 0]·h) = [Φ Γ; 0 I]
    let mut aug = Matrix::zeros(n + nw, n + nw);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a_cl * h));
    aug.view_mut((0, n), (n, nw)).copy_from(&(&sys.b_cl * h));
    let ea = expm(&aug)?;
    let phi = ea.view((0, 0), (n, n)).into_owned();
    let gamma = ea.view((0, n), (n, nw)).into_owned();
    let white_sqrt = match opts.noise {
        NoiseModel::White => {
            let p = solve_lyapunov(&sys.a_cl, &(&sys.b_cl * sys.b_cl.transpose()))?;
            Some(psd_sqrt(&(&p - &phi * &p * phi.transpose()))?)
        }
        _ => None,
    };

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut draw = |len: usize| -> Vector { Vector::from_fn(len, |_, _| StandardNormal.sample(&mut rng)) };
    let mut w = match opts.noise {
        NoiseModel::BandLimited { .. } => draw(nw),
        _ => Vector::zeros(nw),
    };

    let mut e = Matrix::zeros(steps + 1, n);
    let mut eps = Matrix::zeros(steps + 1, sys.c_z.nrows());
    let mut x = Vector::from_column_slice(&opts.e0);
    let mut times = Vec::with_capacity(steps + 1);
    for k in 0..=steps {
        times.push(k as f64 * h);
        e.set_row(k, &x.transpose());
        eps.set_row(k, &(&sys.c_z * &x).transpose());
        if k == steps {
            break;
        }
        x = match opts.noise {
            NoiseModel::Zero => &phi * &x,
            NoiseModel::White => &phi * &x + white_sqrt.as_ref().expect("set for white noise") * draw(n),
            NoiseModel::BandLimited { bandwidth } => {
                let next = &phi * &x + &gamma * &w;
                let a = (-bandwidth * h).exp();
                w = &w * a + draw(nw) * (1.0 - a * a).sqrt();
                next
            }
        };
    }
    if !(linalg::is_finite(&e) && linalg::is_finite(&eps)) {
        return Err(AnalysisError::Linalg(LinalgError::NonFinite));
    }
    Ok(SimulationRun {
        step: h,
        horizon: steps as f64 * h,
        times,
        e,
        eps,
        seed: opts.seed,
        noise: opts.noise,
    })
}
