//! Homogeneous self-dual interior-point method with Nesterov–Todd scaling.

use super::cone::{jordan_divide, jordan_product, max_step_scaled, ConeSpec, NtScaling};
use super::{SdpProblem, SdpSolution, SdpStatus};
use crate::linalg::{Matrix, Vector};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverOptions {
    pub max_iter: usize,
    /// Fraction of the distance to the cone boundary taken per step.
    pub step_fraction: f64,
    pub feasibility_tol: f64,
    pub gap_tol: f64,
    pub infeasibility_tol: f64,
    /// A stalled run whose best iterate is within this tolerance still counts as optimal.
    pub accept_tol: f64,
    pub refinement_steps: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iter: 200,
            step_fraction: 0.99,
            feasibility_tol: 1e-9,
            gap_tol: 1e-11,
            infeasibility_tol: 1e-9,
            accept_tol: 1e-7,
            refinement_steps: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationStats {
    pub iteration: usize,
    pub primal_objective: f64,
    pub dual_objective: f64,
    pub gap: f64,
    pub relative_gap: f64,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub tau: f64,
    pub kappa: f64,
    pub step: f64,
}

/// Factored KKT system
/// `[0 Aᵀ Gᵀ; A 0 0; G 0 −WᵀW]` for the current scaling.
struct Kkt<'a> {
    p: &'a SdpProblem,
    w: &'a NtScaling,
    /// `W⁻ᵀ·G`
    gs: Matrix,
    /// Upper-triangular factor of `GsᵀGs + AᵀA`.
    r: Matrix,
    /// Cholesky factor of `A·(GsᵀGs + AᵀA)⁻¹·Aᵀ`.
    schur: Option<nalgebra::Cholesky<f64, nalgebra::Dyn>>,
}

impl<'a> Kkt<'a> {
    fn new(p: &'a SdpProblem, w: &'a NtScaling) -> Option<Self> {
        let cone = p.cone();
        let (n, m, q) = (p.n_vars(), cone.dim(), p.n_equalities());
        if m + q < n {
            return None;
        }
        let mut stacked = Matrix::zeros(m + q, n);
        let mut gs = Matrix::zeros(m, n);
        for j in 0..n {
            let col = w.apply_wit(cone, &p.g().column(j).into_owned());
            gs.set_column(j, &col);
        }
        stacked.rows_mut(0, m).copy_from(&gs);
        stacked.rows_mut(m, q).copy_from(p.a());
        let r = stacked.qr().r();
        let dmax = (0..n).map(|i| r[(i, i)].abs()).fold(0.0, f64::max);
        if !(dmax.is_finite()) || (0..n).any(|i| r[(i, i)].abs() <= 1e-14 * dmax) {
            return None;
        }
        let schur = if q > 0 {
            let t = r.tr_solve_upper_triangular(&p.a().transpose())?;
            Some(nalgebra::Cholesky::new(t.transpose() * &t)?)
        } else {
            None
        };
        Some(Self { p, w, gs, r, schur })
    }

    fn hinv(&self, v: &Vector) -> Option<Vector> {
        let t = self.r.tr_solve_upper_triangular(v)?;
        self.r.solve_upper_triangular(&t)
    }

    /// Solves the scaled system `[0 Aᵀ Gsᵀ; A 0 0; Gs 0 −I]·(x, y, zs) = (bx, by, bzs)`.
    fn solve_once(&self, bx: &Vector, by: &Vector, bzs: &Vector) -> Option<(Vector, Vector, Vector)> {
        let a = self.p.a();
        let r1 = bx + self.gs.tr_mul(bzs) + a.tr_mul(by);
        let (dx, dy) = match &self.schur {
            Some(chol) => {
                let rhs = a * self.hinv(&r1)? - by;
                let dy = chol.solve(&rhs);
                (self.hinv(&(&r1 - a.tr_mul(&dy)))?, dy)
            }
            None => (self.hinv(&r1)?, Vector::zeros(0)),
        };
        let dzs = &self.gs * &dx - bzs;
        Some((dx, dy, dzs))
    }

    /// Scaled solve followed by a few steps of iterative refinement.
    fn solve(&self, bx: &Vector, by: &Vector, bzs: &Vector, steps: usize) -> Option<(Vector, Vector, Vector)> {
        let (mut x, mut y, mut z) = self.solve_once(bx, by, bzs)?;
        let a = self.p.a();
        for _ in 0..steps {
            let rx = bx - a.tr_mul(&y) - self.gs.tr_mul(&z);
            let ry = by - a * &x;
            let rz = bzs - (&self.gs * &x - &z);
            let (ex, ey, ez) = self.solve_once(&rx, &ry, &rz)?;
            x += ex;
            y += ey;
            z += ez;
        }
        if x.iter().chain(y.iter()).chain(z.iter()).all(|v| v.is_finite()) {
            Some((x, y, z))
        } else {
            None
        }
    }

    /// Unscaled right-hand side `bz` mapped to `W⁻ᵀ·bz`.
    fn scale_rhs(&self, bz: &Vector) -> Vector {
        self.w.apply_wit(self.p.cone(), bz)
    }
}

/// Shifts `v` into the interior of the cone when it is not already there.
fn shift_interior(cone: &ConeSpec, v: &mut Vector) {
    if cone.dim() == 0 {
        return;
    }
    let t = -cone.min_eigenvalue(v);
    if t >= -1e-8 * v.norm().max(1.0) {
        *v += cone.identity() * (1.0 + t);
    }
}

struct Iterate {
    x: Vector,
    y: Vector,
    s: Vector,
    z: Vector,
    stats: IterationStats,
    merit: f64,
}

/// Solves `p`; the objective is normalized to unit norm internally so that the
/// iterates do not depend on a positive scaling of `c`.
pub fn solve(p: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    let scale = p.c().norm();
    if !(scale > 0.0) || scale == 1.0 {
        return solve_normalized(p, opts);
    }
    let mut sol = solve_normalized(&p.scale_objective(1.0 / scale), opts);
    if sol.status != SdpStatus::Infeasible {
        sol.y *= scale;
        sol.z *= scale;
    }
    sol.primal_objective *= scale;
    sol.dual_objective *= scale;
    for it in &mut sol.history {
        it.primal_objective *= scale;
        it.dual_objective *= scale;
        it.gap *= scale;
    }
    sol
}

/// Runs [`solve`]; a stalled run is repeated up to `attempts` times on the
/// problem equilibrated by its last slack (see [`SdpProblem::equilibrate`]).
pub fn solve_equilibrated(p: &SdpProblem, opts: &SolverOptions, attempts: usize) -> SdpSolution {
    let mut sol = solve(p, opts);
    for _ in 0..attempts {
        if matches!(sol.status, SdpStatus::Optimal | SdpStatus::Infeasible | SdpStatus::Unbounded) {
            break;
        }
        let Some(next) = p.slack(&sol.x).ok().and_then(|s| p.equilibrate(&s).ok()) else {
            break;
        };
        sol = solve(&next, opts);
    }
    sol
}

fn solve_normalized(p: &SdpProblem, opts: &SolverOptions) -> SdpSolution {
    let cone = p.cone();
    let (c, g, h, a, b) = (p.c(), p.g(), p.h(), p.a(), p.b());
    let degree = cone.degree() as f64;
    let e = cone.identity();

    let resx0 = c.norm().max(1.0);
    let resy0 = b.norm().max(1.0);
    let resz0 = h.norm().max(1.0);

    let failed = |status| SdpSolution {
        status,
        x: Vector::zeros(p.n_vars()),
        y: Vector::zeros(p.n_equalities()),
        s: Vector::zeros(cone.dim()),
        z: Vector::zeros(cone.dim()),
        primal_objective: f64::NAN,
        dual_objective: f64::NAN,
        primal_residual: f64::INFINITY,
        dual_residual: f64::INFINITY,
        duality_gap: f64::INFINITY,
        certificate_residual: None,
        iterations: 0,
        history: Vec::new(),
    };

    // Least-squares starting point with the identity scaling.
    let id = NtScaling::identity(cone);
    let Some(kkt) = Kkt::new(p, &id) else {
        return failed(SdpStatus::NumericalFailure);
    };
    let Some((mut x, _, zp)) = kkt.solve(&Vector::zeros(p.n_vars()), b, h, opts.refinement_steps) else {
        return failed(SdpStatus::NumericalFailure);
    };
    let mut s = -zp;
    shift_interior(cone, &mut s);
    let Some((_, mut y, mut z)) = kkt.solve(
        &-c,
        &Vector::zeros(p.n_equalities()),
        &Vector::zeros(cone.dim()),
        opts.refinement_steps,
    ) else {
        return failed(SdpStatus::NumericalFailure);
    };
    shift_interior(cone, &mut z);
    let (mut tau, mut kappa) = (1.0_f64, 1.0_f64);

    let Ok(mut w) = NtScaling::from_pair(cone, &s, &z) else {
        return failed(SdpStatus::NumericalFailure);
    };

    let mut history = Vec::new();
    let mut best: Option<Iterate> = None;
    let mut last_step = f64::NAN;
    let mut stalled = 0usize;

    let finish = |status: SdpStatus, it: Iterate, cert: Option<f64>, history: Vec<IterationStats>| SdpSolution {
        status,
        x: it.x,
        y: it.y,
        s: it.s,
        z: it.z,
        primal_objective: it.stats.primal_objective,
        dual_objective: it.stats.dual_objective,
        primal_residual: it.stats.primal_residual,
        dual_residual: it.stats.dual_residual,
        duality_gap: it.stats.relative_gap,
        certificate_residual: cert,
        iterations: it.stats.iteration,
        history,
    };

    let mut exit = SdpStatus::MaxIter;
    for iter in 0..=opts.max_iter {
        let hrx = a.tr_mul(&y) + g.tr_mul(&z);
        let rx = &hrx + c * tau;
        let hry = a * &x;
        let ry = &hry - b * tau;
        let hrz = &s + g * &x;
        let rz = &hrz - h * tau;
        let (cx, by, hz) = (c.dot(&x), b.dot(&y), h.dot(&z));
        let rt = kappa + cx + by + hz;
        let gap = s.dot(&z);

        let pcost = cx / tau;
        let dcost = -(by + hz) / tau;
        let pres = (ry.norm() / tau / resy0).max(rz.norm() / tau / resz0);
        let dres = rx.norm() / tau / resx0;
        let relgap = gap / (tau * tau) / (1.0 + pcost.abs() + dcost.abs());
        let pinfres = (hz + by < 0.0).then(|| hrx.norm() / resx0 / -(hz + by));
        let dinfres = (cx < 0.0).then(|| (hry.norm() / resy0).max(hrz.norm() / resz0) / -cx);

        let stats = IterationStats {
            iteration: iter,
            primal_objective: pcost,
            dual_objective: dcost,
            gap: gap / (tau * tau),
            relative_gap: relgap,
            primal_residual: pres,
            dual_residual: dres,
            tau,
            kappa,
            step: last_step,
        };
        history.push(stats);
        let merit = pres.max(dres).max(relgap);
        if merit.is_finite() && best.as_ref().is_none_or(|b| merit < b.merit) {
            best = Some(Iterate {
                x: &x / tau,
                y: &y / tau,
                s: &s / tau,
                z: &z / tau,
                stats,
                merit,
            });
        }

        if pres <= opts.feasibility_tol && dres <= opts.feasibility_tol && relgap <= opts.gap_tol {
            return finish(SdpStatus::Optimal, best.expect("recorded above"), None, history);
        }
        if let Some(r) = pinfres.filter(|&r| r <= opts.infeasibility_tol) {
            let t = -(hz + by);
            let mut out = failed(SdpStatus::Infeasible);
            out.y = &y / t;
            out.z = &z / t;
            out.certificate_residual = Some(r);
            out.iterations = iter;
            out.history = history;
            return out;
        }
        if let Some(r) = dinfres.filter(|&r| r <= opts.infeasibility_tol) {
            let t = -cx;
            let mut out = failed(SdpStatus::Unbounded);
            out.x = &x / t;
            out.s = &s / t;
            out.certificate_residual = Some(r);
            out.iterations = iter;
            out.history = history;
            return out;
        }
        if iter == opts.max_iter {
            break;
        }

        let Some(kkt) = Kkt::new(p, &w) else {
            exit = SdpStatus::NumericalFailure;
            break;
        };
        let hs = kkt.scale_rhs(h);
        let Some((x1, y1, z1)) = kkt.solve(&-c, b, &hs, opts.refinement_steps) else {
            exit = SdpStatus::NumericalFailure;
            break;
        };
        let denom = -z1.norm_squared() - kappa / tau;
        let rzs = kkt.scale_rhs(&rz);
        let mu = (gap + tau * kappa) / (degree + 1.0);
        let lambda = w.lambda.clone();
        let lsq = jordan_product(cone, &lambda, &lambda);

        let mut sigma = 0.0;
        let mut corr_s = Vector::zeros(cone.dim());
        let mut corr_k = 0.0;
        let mut step = None;
        for phase in 0..2 {
            let rs = -&lsq - &corr_s + &e * (sigma * mu);
            let rk = -tau * kappa - corr_k + sigma * mu;
            let u = jordan_divide(cone, &lambda, &rs);
            let f = 1.0 - sigma;
            let bzs = -&rzs * f - &u;
            let Some((x0, y0, z0)) = kkt.solve(&(-&rx * f), &(-&ry * f), &bzs, opts.refinement_steps)
            else {
                break;
            };
            let dtau = (-f * rt - rk / tau - (c.dot(&x0) + b.dot(&y0) + hs.dot(&z0))) / denom;
            let dx = x0 + &x1 * dtau;
            let dy = y0 + &y1 * dtau;
            let dzs = z0 + &z1 * dtau;
            let dss = &u - &dzs;
            let dkappa = (rk - kappa * dtau) / tau;

            let mut amax = max_step_scaled(cone, &lambda, &dss).min(max_step_scaled(cone, &lambda, &dzs));
            if dtau < 0.0 {
                amax = amax.min(-tau / dtau);
            }
            if dkappa < 0.0 {
                amax = amax.min(-kappa / dkappa);
            }
            if phase == 0 {
                let alpha = amax.min(1.0);
                sigma = (1.0 - alpha).powi(3);
                corr_s = jordan_product(cone, &dss, &dzs);
                corr_k = dtau * dkappa;
            } else {
                let alpha = (opts.step_fraction * amax).min(1.0);
                step = Some((alpha, dx, dy, dss, dzs, dtau, dkappa));
            }
        }
        let Some((alpha, dx, dy, dss, dzs, dtau, dkappa)) = step else {
            exit = SdpStatus::NumericalFailure;
            break;
        };
        if !(alpha.is_finite() && alpha > 0.0) {
            exit = SdpStatus::NumericalFailure;
            break;
        }
        x += dx * alpha;
        y += dy * alpha;
        tau += alpha * dtau;
        kappa += alpha * dkappa;
        let s_scaled = &lambda + dss * alpha;
        let z_scaled = &lambda + dzs * alpha;
        if w.update(cone, &s_scaled, &z_scaled).is_err() {
            exit = SdpStatus::NumericalFailure;
            break;
        }
        s = w.apply_wt(cone, &w.lambda);
        z = w.apply_winv(cone, &w.lambda);
        last_step = alpha;
        stalled = if alpha < 1e-10 { stalled + 1 } else { 0 };
        if stalled >= 3 || !(tau.is_finite() && kappa.is_finite()) {
            exit = SdpStatus::NumericalFailure;
            break;
        }
    }

    match best {
        Some(it) => {
            let status = if it.merit <= opts.accept_tol { SdpStatus::Optimal } else { exit };
            finish(status, it, None, history)
        }
        None => {
            let mut out = failed(exit);
            out.history = history;
            out
        }
    }
}
