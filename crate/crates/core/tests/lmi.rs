use proptest::prelude::*;
use sparse_observer::analysis::{h2_norm, hinf_norm, hinf_norm_bracket};
use sparse_observer::linalg::{diag, sym_eig, Matrix, Vector};
use sparse_observer::lmi::{
    add_precision_bounds, build, build_h2, build_hinf, recover_design, DesignSpec, GammaMode, LmiError,
    NormType, VariableLayout,
};
use sparse_observer::model::{build_error_system, LtiPlant, PrecisionVector};
use sparse_observer::sdp::{solve, SdpSolution, SdpStatus, SolverOptions};

fn m(rows: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, data.len() / rows, data)
}

fn plant() -> LtiPlant {
    LtiPlant::estimation(
        m(2, &[-1.0, 1.0, 0.0, -2.0]),
        m(2, &[1.0, 0.5]),
        m(2, &[1.0, 0.0, 0.0, 1.0]),
        m(1, &[1.0, 1.0]),
        m(2, &[0.1, 0.2]),
    )
    .unwrap()
}

fn open_loop(p: &LtiPlant) -> sparse_observer::model::ErrorSystem {
    let k = PrecisionVector::positive(vec![0.0; p.n_y()]).unwrap();
    build_error_system(p, &Matrix::zeros(p.n_x(), p.n_y()), &k).unwrap()
}

fn solved(p: &LtiPlant, spec: &DesignSpec) -> (SdpSolution, VariableLayout) {
    let (problem, layout) = build(p, spec).unwrap();
    let sol = solve(&problem, &SolverOptions::default());
    assert_eq!(sol.status, SdpStatus::Optimal);
    (sol, layout)
}

fn max_eig(m: &Matrix) -> f64 {
    sym_eig(&((m + m.transpose()) * 0.5)).unwrap().max()
}

/// Symmetric block matrix from a dense grid of blocks (upper triangle given, `None` for zero).
fn blocks(dims: &[usize], upper: &[(usize, usize, Matrix)]) -> Matrix {
    let off: Vec<usize> = dims.iter().scan(0, |acc, d| {
        let o = *acc;
        *acc += d;
        Some(o)
    }).collect();
    let n: usize = dims.iter().sum();
    let mut out = Matrix::zeros(n, n);
    for (i, j, b) in upper {
        out.view_mut((off[*i], off[*j]), b.shape()).copy_from(b);
        if i != j {
            out.view_mut((off[*j], off[*i]), (b.ncols(), b.nrows())).copy_from(&b.transpose());
        }
    }
    out
}

/// Main H2 block assembled directly from the matrix variables.
fn h2_main(p: &LtiPlant, x: &Matrix, y: &Matrix, beta: &[f64]) -> Matrix {
    let b = p.b_d() * p.s_d();
    let d = p.d_d() * p.s_d();
    let xa = x * p.a() + y * p.c_y();
    blocks(
        &[p.n_x(), p.n_d(), p.n_y()],
        &[
            (0, 0, &xa + xa.transpose()),
            (0, 1, x * &b + y * &d),
            (0, 2, y.clone()),
            (1, 1, -Matrix::identity(p.n_d(), p.n_d())),
            (2, 2, -diag(beta)),
        ],
    )
}

fn hinf_main(p: &LtiPlant, x: &Matrix, y: &Matrix, beta: &[f64], gamma: f64) -> Matrix {
    let b = p.b_d() * p.s_d();
    let d = p.d_d() * p.s_d();
    let xa = x * p.a() + y * p.c_y();
    blocks(
        &[p.n_x(), p.n_d(), p.n_z(), p.n_y()],
        &[
            (0, 0, &xa + xa.transpose()),
            (0, 1, x * &b + y * &d),
            (0, 2, p.c_z().transpose()),
            (0, 3, y.clone()),
            (1, 1, -Matrix::identity(p.n_d(), p.n_d()) * gamma),
            (2, 2, -Matrix::identity(p.n_z(), p.n_z()) * gamma),
            (3, 3, -diag(beta)),
        ],
    )
}

#[test]
fn h2_solution_satisfies_the_raw_inequalities() {
    let p = plant();
    let gamma = 0.6 * h2_norm(&open_loop(&p)).unwrap();
    let spec = DesignSpec::fixed(NormType::H2, gamma, 2);
    let eps = spec.lmi_margin;
    let (sol, layout) = solved(&p, &spec);
    let x = layout.x_matrix(&sol.x);
    let y = layout.y_matrix(&sol.x);
    let q = layout.q_matrix(&sol.x).unwrap();
    let beta = layout.beta_values(&sol.x);
    assert!(max_eig(&h2_main(&p, &x, &y, &beta)) <= -eps / 2.0);
    let coupling = blocks(&[p.n_z(), p.n_x()], &[(0, 0, -&q), (0, 1, p.c_z().clone()), (1, 1, -&x)]);
    assert!(max_eig(&coupling) <= -eps / 2.0);
    assert!(q.trace() <= gamma * gamma - eps / 2.0);
    assert!(beta.iter().all(|&b| b >= -eps));

    let d = recover_design(&sol, &layout, &spec, &p).unwrap();
    assert!((&x * &d.l - &y).amax() < 1e-8 * y.amax().max(1.0));
    let all = PrecisionVector::positive(d.kappa_sq.values().to_vec()).unwrap();
    let e = build_error_system(&p, &d.l, &all).unwrap();
    assert!(h2_norm(&e).unwrap() < gamma);
}

#[test]
fn hinf_solution_satisfies_the_raw_inequalities() {
    let p = plant();
    let gamma = 0.6 * hinf_norm(&open_loop(&p)).unwrap();
    let spec = DesignSpec::fixed(NormType::Hinf, gamma, 2);
    let eps = spec.lmi_margin;
    let (sol, layout) = solved(&p, &spec);
    let x = layout.x_matrix(&sol.x);
    let y = layout.y_matrix(&sol.x);
    let beta = layout.beta_values(&sol.x);
    assert!(max_eig(&hinf_main(&p, &x, &y, &beta, gamma)) <= -eps / 2.0);
    assert!(sym_eig(&x).unwrap().min() >= eps / 2.0);

    let d = recover_design(&sol, &layout, &spec, &p).unwrap();
    for (k, b) in d.kappa_sq.values().iter().zip(&d.beta) {
        assert!((k - b / gamma).abs() <= 1e-12 * b.abs().max(1.0));
    }
    let all = PrecisionVector::positive(d.kappa_sq.values().to_vec()).unwrap();
    let e = build_error_system(&p, &d.l, &all).unwrap();
    let (upper, _) = hinf_norm_bracket(&e, 1e-10).unwrap();
    assert!(upper < gamma);
}

#[test]
fn unobserved_output_needs_no_sensors() {
    let p = plant().with_output(Matrix::zeros(1, 2)).unwrap();
    for norm in [NormType::H2, NormType::Hinf] {
        let spec = DesignSpec::fixed(norm, 1.0, 2);
        let (sol, layout) = solved(&p, &spec);
        assert!(layout.beta_values(&sol.x).iter().all(|b| b.abs() < 1e-6), "{norm}");
    }
}

#[test]
fn loose_gamma_drives_precision_to_zero() {
    let p = LtiPlant::estimation(m(1, &[-1.0]), m(1, &[1.0]), m(1, &[1.0]), m(1, &[1.0]), m(1, &[0.0])).unwrap();
    let spec = DesignSpec::fixed(NormType::H2, 100.0, 1);
    let (sol, layout) = solved(&p, &spec);
    assert!(layout.beta_values(&sol.x)[0] < 1e-6);
}

#[test]
fn bound_rows_follow_the_norm() {
    let p = plant();
    let find = |norm: NormType, gamma: f64, bounds: Vec<f64>| {
        let spec = DesignSpec::fixed(norm, gamma, 2).with_bounds(bounds);
        let (base, layout) = match norm {
            NormType::H2 => build_h2(&p, &spec).unwrap(),
            NormType::Hinf => build_hinf(&p, &spec).unwrap(),
        };
        let with = add_precision_bounds(&base, &layout, &spec).unwrap();
        let added = with.g().nrows() - base.g().nrows();
        let b = layout.beta_index(1);
        let row = (0..with.g().nrows()).find(|&r| {
            let g = with.g().row(r);
            g[b] == 1.0 && g.iter().enumerate().all(|(k, v)| k == b || *v == 0.0)
        });
        (added, row.map(|r| with.h()[r]))
    };
    assert_eq!(find(NormType::H2, 2.0, vec![f64::INFINITY, 3.0]), (1, Some(3.0)));
    assert_eq!(find(NormType::Hinf, 2.0, vec![f64::INFINITY, 3.0]), (1, Some(6.0)));
    assert_eq!(find(NormType::H2, 2.0, vec![f64::INFINITY; 2]), (0, None));
    assert_eq!(find(NormType::Hinf, 2.0, vec![1.0, 1.0]).0, 2);
}

#[test]
fn bounds_are_respected_by_the_solver() {
    let p = plant();
    let gamma = 0.6 * h2_norm(&open_loop(&p)).unwrap();
    let free = DesignSpec::fixed(NormType::H2, gamma, 2);
    let (sol, layout) = solved(&p, &free);
    let beta = layout.beta_values(&sol.x);
    let cap = 0.5 * beta[0].max(beta[1]);
    let idx = if beta[0] > beta[1] { 0 } else { 1 };
    let mut bounds = vec![f64::INFINITY; 2];
    bounds[idx] = cap;
    let (problem, layout) = build(&p, &free.clone().with_bounds(bounds)).unwrap();
    let sol = solve(&problem, &SolverOptions::default());
    if sol.status == SdpStatus::Optimal {
        assert!(layout.beta_values(&sol.x)[idx] <= cap * (1.0 + 1e-7));
    } else {
        assert_eq!(sol.status, SdpStatus::Infeasible);
    }
}

fn fake_solution(v: Vector) -> SdpSolution {
    SdpSolution {
        status: SdpStatus::Optimal,
        x: v,
        y: Vector::zeros(0),
        s: Vector::zeros(0),
        z: Vector::zeros(0),
        primal_objective: 0.0,
        dual_objective: 0.0,
        primal_residual: 0.0,
        dual_residual: 0.0,
        duality_gap: 0.0,
        certificate_residual: None,
        iterations: 0,
        history: Vec::new(),
    }
}

#[test]
fn recover_design_examples() {
    let p = plant();
    let spec = DesignSpec::fixed(NormType::H2, 1.0, 2);
    let (_, layout) = build(&p, &spec).unwrap();
    let ones = Matrix::from_element(2, 2, 1.0);
    let q = Matrix::identity(1, 1);
    let v = layout.pack(&Matrix::identity(2, 2), &ones, Some(&q), &[2.0, 0.0], None);
    let d = recover_design(&fake_solution(v), &layout, &spec, &p).unwrap();
    assert!((d.l - &ones).amax() < 1e-14);
    assert_eq!(d.kappa_sq.values(), &[2.0, 0.0]);
    assert_eq!(d.support, vec![0]);

    let x = m(2, &[2.0, 0.0, 0.0, 4.0]);
    let v = layout.pack(&x, &ones, Some(&q), &[1.0, 1.0], None);
    let d = recover_design(&fake_solution(v), &layout, &spec, &p).unwrap();
    assert!((d.l - m(2, &[0.5, 0.5, 0.25, 0.25])).amax() < 1e-14);

    let hspec = DesignSpec::fixed(NormType::Hinf, 4.0, 2);
    let (_, hl) = build(&p, &hspec).unwrap();
    let v = hl.pack(&Matrix::identity(2, 2), &ones, None, &[2.0, 8.0], None);
    let d = recover_design(&fake_solution(v), &hl, &hspec, &p).unwrap();
    assert_eq!(d.kappa_sq.values(), &[0.5, 2.0]);

    let v = layout.pack(&m(2, &[1.0, 0.0, 0.0, 0.0]), &ones, Some(&q), &[1.0, 1.0], None);
    assert!(matches!(
        recover_design(&fake_solution(v), &layout, &spec, &p),
        Err(LmiError::Conditioning { .. })
    ));
    let mut sol = fake_solution(Vector::zeros(layout.n_vars()));
    sol.status = SdpStatus::MaxIter;
    assert_eq!(
        recover_design(&sol, &layout, &spec, &p).unwrap_err(),
        LmiError::NotOptimal(SdpStatus::MaxIter)
    );
}

#[test]
fn invalid_specifications_are_rejected() {
    let p = plant();
    assert!(build(&p, &DesignSpec::fixed(NormType::H2, 0.0, 2)).is_err());
    assert!(build(&p, &DesignSpec::fixed(NormType::H2, 1.0, 3)).is_err());
    assert!(build(&p, &DesignSpec::fixed(NormType::H2, 1.0, 2).with_rho(vec![1.0, -1.0])).is_err());
    assert!(build(&p, &DesignSpec::new(NormType::Hinf, GammaMode::Penalized(-1.0), 2)).is_err());
    assert!(build(&p, &DesignSpec::fixed(NormType::H2, 1.0, 2).with_bounds(vec![1.0])).is_err());
}

fn objective(p: &LtiPlant, spec: &DesignSpec) -> (SdpStatus, f64, Vec<f64>) {
    let (problem, layout) = build(p, spec).unwrap();
    let sol = solve(&problem, &SolverOptions::default());
    let beta = layout.beta_values(&sol.x);
    let j = beta.iter().zip(&spec.rho).map(|(b, r)| b * r).sum();
    (sol.status, j, beta)
}

#[test]
fn penalized_optimum_is_no_worse_than_any_fixed_level() {
    let p = plant();
    let c = 0.5;
    let (problem, layout) = build(&p, &DesignSpec::new(NormType::Hinf, GammaMode::Penalized(c), 2)).unwrap();
    let sol = solve(&problem, &SolverOptions::default());
    assert_eq!(sol.status, SdpStatus::Optimal);
    let gamma_star = sol.x[layout.gamma.unwrap()];
    let pen = layout.beta_values(&sol.x).iter().sum::<f64>() + c * gamma_star;
    let g0 = hinf_norm(&open_loop(&p)).unwrap();
    for frac in [0.3, 0.6, 0.9, 1.2] {
        let (status, j, _) = objective(&p, &DesignSpec::fixed(NormType::Hinf, frac * g0, 2));
        if status == SdpStatus::Optimal {
            assert!(pen <= j + c * frac * g0 + 1e-6, "γ = {}", frac * g0);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn weights_scale_the_objective(k in 0.1..10.0f64, r0 in 0.2..5.0f64, r1 in 0.2..5.0f64, hinf in any::<bool>()) {
        let p = plant();
        let norm = if hinf { NormType::Hinf } else { NormType::H2 };
        let g0 = match norm {
            NormType::H2 => h2_norm(&open_loop(&p)).unwrap(),
            NormType::Hinf => hinf_norm(&open_loop(&p)).unwrap(),
        };
        let spec = DesignSpec::fixed(norm, 0.6 * g0, 2).with_rho(vec![r0, r1]);
        let (s1, j1, _) = objective(&p, &spec);
        let (s2, j2, _) = objective(&p, &spec.clone().with_rho(vec![k * r0, k * r1]));
        prop_assert_eq!(s1, SdpStatus::Optimal);
        prop_assert_eq!(s2, SdpStatus::Optimal);
        prop_assert!((j2 - k * j1).abs() <= 1e-5 * (k * j1).max(1e-6));
    }

    #[test]
    fn objective_decreases_with_gamma(lo in 0.3..0.6f64, step in 0.05..0.5f64, hinf in any::<bool>()) {
        let p = plant();
        let norm = if hinf { NormType::Hinf } else { NormType::H2 };
        let g0 = match norm {
            NormType::H2 => h2_norm(&open_loop(&p)).unwrap(),
            NormType::Hinf => hinf_norm(&open_loop(&p)).unwrap(),
        };
        let (s1, j1, _) = objective(&p, &DesignSpec::fixed(norm, lo * g0, 2));
        let (s2, j2, _) = objective(&p, &DesignSpec::fixed(norm, (lo + step) * g0, 2));
        prop_assert_eq!(s1, SdpStatus::Optimal);
        prop_assert_eq!(s2, SdpStatus::Optimal);
        prop_assert!(j2 <= j1 * (1.0 + 1e-6) + 1e-8);
    }
}
