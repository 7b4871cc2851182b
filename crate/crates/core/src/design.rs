//! Iterative reweighting, support polishing and the exhaustive-search baseline.

use crate::linalg::Matrix;
use crate::lmi::{self, DesignSpec, LmiError, NormType};
use crate::model::{LtiPlant, ModelError, PrecisionVector};
use crate::sdp::{self, SdpStatus, SolverOptions};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Largest sensor count accepted by [`exhaustive_search`].
pub const MAX_EXHAUSTIVE_SENSORS: usize = 20;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DesignError {
    #[error("design problem is infeasible")]
    Infeasible { certificate_residual: Option<f64> },
    #[error("reduced problem on sensors {support:?} is infeasible; the truncation was too aggressive")]
    PolishInfeasible { support: Vec<usize> },
    #[error("solver stopped with status {0}")]
    NotOptimal(SdpStatus),
    #[error("exhaustive search supports at most {MAX_EXHAUSTIVE_SENSORS} sensors, plant has {0}")]
    TooManySensors(usize),
    #[error("no sensor subset is feasible")]
    NoFeasibleSubset,
    #[error("invalid reweighting options: {0}")]
    InvalidOptions(String),
    #[error(transparent)]
    Lmi(#[from] LmiError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReweightOptions {
    pub epsilon: f64,
    pub lambda: f64,
    pub max_iters: usize,
    /// Relative to the largest precision.
    pub support_tol: f64,
    /// Relative change in `‖β‖₁`.
    pub convergence_tol: f64,
    pub solver: SolverOptions,
}

impl Default for ReweightOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            lambda: 1.0,
            max_iters: 10,
            support_tol: lmi::DEFAULT_SUPPORT_TOL,
            convergence_tol: 1e-4,
            solver: SolverOptions::default(),
        }
    }
}

impl ReweightOptions {
    pub fn validate(&self) -> Result<(), DesignError> {
        let ok = [self.epsilon, self.lambda, self.support_tol, self.convergence_tol]
            .iter()
            .all(|v| *v > 0.0 && v.is_finite())
            && self.max_iters > 0;
        if ok {
            Ok(())
        } else {
            Err(DesignError::InvalidOptions("all parameters must be positive".into()))
        }
    }
}

/// One solve of the reweighting loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub beta: Vec<f64>,
    pub kappa_sq: Vec<f64>,
    pub rho: Vec<f64>,
    /// `Σ ρᵢβᵢ` with the weights used in this solve.
    pub weighted_objective: f64,
    /// `Σ βᵢ`
    pub unit_objective: f64,
    pub support: Vec<usize>,
    pub status: SdpStatus,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DesignResult {
    pub norm: NormType,
    pub l: Matrix,
    pub kappa_sq: PrecisionVector,
    pub beta: Vec<f64>,
    pub gamma: f64,
    /// `Σ ρᵢβᵢ` with the weights of the specification.
    pub objective: f64,
    pub support: Vec<usize>,
    pub iterations: Vec<IterationRecord>,
    pub status: SdpStatus,
    pub solver_iterations: usize,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub duality_gap: f64,
    /// Lyapunov matrix of the certificate (`X′` for H∞).
    pub x: Matrix,
}

impl DesignResult {
    pub fn l0(&self) -> usize {
        self.support.len()
    }

    /// `‖κ²‖₁`
    pub fn kappa_l1(&self) -> f64 {
        self.kappa_sq.l1()
    }
}

const SCALING_ATTEMPTS: usize = 3;
const EQUILIBRATION_ATTEMPTS: usize = 2;

/// Diagonal state scales that give `X` a unit diagonal.
fn state_scales(x: &Matrix) -> Option<Vec<f64>> {
    let t: Vec<f64> = x.diagonal().iter().map(|d| 1.0 / d.sqrt()).collect();
    t.iter().all(|v| v.is_finite() && *v > 0.0).then_some(t)
}

fn unscale(x: &mut Matrix, t: &[f64]) {
    for i in 0..t.len() {
        for j in 0..t.len() {
            x[(i, j)] /= t[i] * t[j];
        }
    }
}

/// Solves in balanced state coordinates. When the solver stalls, the state
/// scaling is refreshed from its last iterate and the solve repeated.
fn solve_once(
    p: &LtiPlant,
    spec: &DesignSpec,
    solver: &SolverOptions,
    scales: Option<&[f64]>,
) -> Result<DesignResult, DesignError> {
    let mut t = scales.map_or_else(|| vec![1.0; p.n_x()], <[f64]>::to_vec);
    let mut status = SdpStatus::NumericalFailure;
    let mut last_err: Option<LmiError> = None;
    for _ in 0..SCALING_ATTEMPTS {
        let scaled = p.scale_states(&t)?;
        let (problem, layout) = lmi::build(&scaled, spec)?;
        let sol = sdp::solve_equilibrated(&problem, solver, EQUILIBRATION_ATTEMPTS);
        match sol.status {
            SdpStatus::Optimal => match lmi::recover_design(&sol, &layout, spec, &scaled) {
                Ok(mut r) => {
                    for (i, ti) in t.iter().enumerate() {
                        r.l.row_mut(i).scale_mut(*ti);
                    }
                    unscale(&mut r.x, &t);
                    return Ok(r);
                }
                Err(e @ LmiError::Conditioning { .. }) => {
                    let mut x = layout.x_matrix(&sol.x);
                    unscale(&mut x, &t);
                    match state_scales(&x) {
                        Some(next) => t = next,
                        None => return Err(e.into()),
                    }
                    last_err = Some(e);
                }
                Err(e) => return Err(e.into()),
            },
            SdpStatus::Infeasible => {
                return Err(DesignError::Infeasible {
                    certificate_residual: sol.certificate_residual,
                })
            }
            other => {
                status = other;
                last_err = None;
                let mut x = layout.x_matrix(&sol.x);
                unscale(&mut x, &t);
                match state_scales(&x) {
                    Some(next) => t = next,
                    None => break,
                }
            }
        }
    }
    Err(last_err.map_or(DesignError::NotOptimal(status), DesignError::from))
}

/// Solves with weights `ρ⁽ᵏ⁺¹⁾ᵢ = 1/(ε + λ·βᵢ⁽ᵏ⁾)` until the support settles.
/// The result is not polished.
pub fn reweighted_solve(
    p: &LtiPlant,
    spec: &DesignSpec,
    opts: &ReweightOptions,
) -> Result<DesignResult, DesignError> {
    opts.validate()?;
    spec.validate(p.n_y())?;
    let mut rho = spec.rho.clone();
    let mut trace: Vec<IterationRecord> = Vec::new();
    let mut last: Option<DesignResult> = None;
    let mut status = SdpStatus::Optimal;
    let mut scales: Option<Vec<f64>> = None;
    for k in 0..opts.max_iters {
        let spec_k = spec.clone().with_rho(rho.clone());
        let result = match solve_once(p, &spec_k, &opts.solver, scales.as_deref()) {
            Ok(r) => r,
            Err(e) if k == 0 => return Err(e),
            Err(DesignError::NotOptimal(s)) => {
                status = s;
                break;
            }
            Err(DesignError::Infeasible { .. }) | Err(DesignError::Lmi(_)) => {
                status = SdpStatus::NumericalFailure;
                break;
            }
            Err(e) => return Err(e),
        };
        scales = state_scales(&result.x);
        let kappa = PrecisionVector::new(result.kappa_sq.values().to_vec(), opts.support_tol)?;
        let support = kappa.support().to_vec();
        let unit = result.beta.iter().sum::<f64>();
        trace.push(IterationRecord {
            beta: result.beta.clone(),
            kappa_sq: kappa.values().to_vec(),
            rho: rho.clone(),
            weighted_objective: result.objective,
            unit_objective: unit,
            support: support.clone(),
            status: result.status,
        });
        rho = result
            .beta
            .iter()
            .map(|b| 1.0 / (opts.epsilon + opts.lambda * b.abs()))
            .collect();
        let settled = trace.len() >= 2 && {
            let prev = &trace[trace.len() - 2];
            prev.support == support
                && (prev.unit_objective - unit).abs() <= opts.convergence_tol * unit.abs().max(f64::MIN_POSITIVE)
        };
        last = Some(DesignResult {
            kappa_sq: kappa,
            support,
            objective: result.beta.iter().zip(&spec.rho).map(|(b, r)| b * r).sum(),
            ..result
        });
        if settled {
            break;
        }
    }
    let mut out = last.expect("first iteration succeeded");
    out.iterations = trace;
    out.status = status;
    Ok(out)
}

/// Re-solves with unit weights on `support` and expands the result back to all sensors.
pub fn polish(p: &LtiPlant, spec: &DesignSpec, support: &[usize]) -> Result<DesignResult, DesignError> {
    polish_with(p, spec, support, &SolverOptions::default())
}

pub fn polish_with(
    p: &LtiPlant,
    spec: &DesignSpec,
    support: &[usize],
    solver: &SolverOptions,
) -> Result<DesignResult, DesignError> {
    polish_scaled(p, spec, support, solver, None)
}

fn polish_scaled(
    p: &LtiPlant,
    spec: &DesignSpec,
    support: &[usize],
    solver: &SolverOptions,
    scales: Option<&[f64]>,
) -> Result<DesignResult, DesignError> {
    spec.validate(p.n_y())?;
    let mut support = support.to_vec();
    support.sort_unstable();
    support.dedup();
    let reduced = p.restrict_sensors(&support)?;
    let mut rspec = spec.restrict(&support);
    rspec.rho = vec![1.0; support.len()];
    let r = match solve_once(&reduced, &rspec, solver, scales) {
        Ok(r) => r,
        Err(DesignError::Infeasible { .. }) => return Err(DesignError::PolishInfeasible { support }),
        Err(e) => return Err(e),
    };
    let ny = p.n_y();
    let mut l = Matrix::zeros(p.n_x(), ny);
    let mut beta = vec![0.0; ny];
    let mut kappa = vec![0.0; ny];
    for (k, &i) in support.iter().enumerate() {
        l.set_column(i, &r.l.column(k));
        beta[i] = r.beta[k];
        kappa[i] = r.kappa_sq.values()[k];
    }
    let kappa_sq = PrecisionVector::positive(kappa)?;
    let record = IterationRecord {
        beta: beta.clone(),
        kappa_sq: kappa_sq.values().to_vec(),
        rho: (0..ny).map(|i| if support.contains(&i) { 1.0 } else { 0.0 }).collect(),
        weighted_objective: r.objective,
        unit_objective: beta.iter().sum(),
        support: kappa_sq.support().to_vec(),
        status: r.status,
    };
    Ok(DesignResult {
        l,
        support: kappa_sq.support().to_vec(),
        kappa_sq,
        objective: beta.iter().sum(),
        beta,
        iterations: vec![record],
        ..r
    })
}

/// Reweighted solve followed by polishing on the detected support.
pub fn design(p: &LtiPlant, spec: &DesignSpec, opts: &ReweightOptions) -> Result<(DesignResult, DesignResult), DesignError> {
    let rough = reweighted_solve(p, spec, opts)?;
    let scales = state_scales(&rough.x);
    let polished = polish_scaled(p, spec, &rough.support, &opts.solver, scales.as_deref())?;
    Ok((rough, polished))
}

/// Outcome of one subset in the exhaustive search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetRecord {
    /// Bit `i` set when sensor `i` is retained.
    pub mask: u32,
    pub r: usize,
    pub sensors: Vec<usize>,
    pub status: SdpStatus,
    /// `‖κ²‖₁` with unit weights; `None` unless optimal.
    pub l1_of_kappa_sq: Option<f64>,
    pub kappa_sq: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExhaustiveResult {
    pub best: DesignResult,
    pub table: Vec<SubsetRecord>,
}

/// All subsets ordered by size, then lexicographically by sensor index.
pub fn enumerate_subsets(n: usize) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = (0u32..(1u32 << n))
        .map(|mask| (0..n).filter(|&i| mask & (1 << i) != 0).collect())
        .collect();
    out.sort_by(|a, b| a.len().cmp(&b.len()).then_with(|| a.cmp(b)));
    out
}

/// Smallest feasible subset, ties broken by least `‖κ²‖₁` and then by enumeration order.
pub fn exhaustive_search(p: &LtiPlant, spec: &DesignSpec) -> Result<ExhaustiveResult, DesignError> {
    exhaustive_search_with(p, spec, &SolverOptions::default())
}

pub fn exhaustive_search_with(
    p: &LtiPlant,
    spec: &DesignSpec,
    solver: &SolverOptions,
) -> Result<ExhaustiveResult, DesignError> {
    let ny = p.n_y();
    if ny > MAX_EXHAUSTIVE_SENSORS {
        return Err(DesignError::TooManySensors(ny));
    }
    spec.validate(ny)?;
    let subsets = enumerate_subsets(ny);
    let outcomes: Vec<(SubsetRecord, Option<DesignResult>)> = subsets
        .par_iter()
        .map(|sensors| {
            let mask = sensors.iter().fold(0u32, |m, &i| m | (1 << i));
            let (status, result) = match polish_with(p, spec, sensors, solver) {
                Ok(r) => (r.status, Some(r)),
                Err(DesignError::PolishInfeasible { .. }) => (SdpStatus::Infeasible, None),
                Err(DesignError::NotOptimal(s)) => (s, None),
                Err(_) => (SdpStatus::NumericalFailure, None),
            };
            let record = SubsetRecord {
                mask,
                r: sensors.len(),
                sensors: sensors.clone(),
                status,
                l1_of_kappa_sq: result.as_ref().map(|r| r.kappa_l1()),
                kappa_sq: result.as_ref().map(|r| r.kappa_sq.values().to_vec()),
            };
            (record, result)
        })
        .collect();

    let mut best: Option<(usize, f64, usize)> = None;
    for (idx, (rec, res)) in outcomes.iter().enumerate() {
        if res.is_none() {
            continue;
        }
        let l1 = rec.l1_of_kappa_sq.unwrap_or(f64::INFINITY);
        let better = match best {
            None => true,
            Some((r, b, _)) => rec.r < r || (rec.r == r && l1 < b),
        };
        if better {
            best = Some((rec.r, l1, idx));
        }
    }
    let Some((_, _, idx)) = best else {
        return Err(DesignError::NoFeasibleSubset);
    };
    let (table, mut results): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    let best = results.swap_remove(idx).expect("selected subset is feasible");
    Ok(ExhaustiveResult { best, table })
}
