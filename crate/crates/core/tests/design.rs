use sparse_observer::design::{
    design, enumerate_subsets, exhaustive_search, polish, reweighted_solve, DesignError, ReweightOptions,
};
use sparse_observer::analysis::h2_norm;
use sparse_observer::linalg::{solve_lyapunov, Matrix};
use sparse_observer::lmi::{DesignSpec, NormType};
use sparse_observer::model::{build_error_system, f16_v1000, LtiPlant};
use sparse_observer::sdp::SdpStatus;

fn m(rows: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, data.len() / rows, data)
}

fn f16() -> LtiPlant {
    f16_v1000().normalized().unwrap()
}

const W_DOT: usize = 1;
const QBAR: usize = 4;

#[test]
fn reweighting_finds_two_sensor_support() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let rough = reweighted_solve(&p, &spec, &ReweightOptions::default()).unwrap();
    assert_eq!(rough.support, vec![W_DOT, QBAR]);
    assert!(!rough.iterations.is_empty() && rough.iterations.len() <= 10);
    let first = &rough.iterations[0];
    assert!(first.rho.iter().all(|&r| r == 1.0));
    for pair in rough.iterations.windows(2) {
        for (r, b) in pair[1].rho.iter().zip(&pair[0].beta) {
            assert!((r - 1.0 / (1e-4 + b.abs())).abs() <= 1e-12 * r);
        }
    }
}

#[test]
fn polished_design_matches_reference_precisions() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let (rough, polished) = design(&p, &spec, &ReweightOptions::default()).unwrap();
    assert_eq!(polished.support, vec![W_DOT, QBAR]);
    let k = polished.kappa_sq.values();
    assert!((k[W_DOT] / 11.5179 - 1.0).abs() < 1e-3, "{k:?}");
    assert!((k[QBAR] / 1.90027 - 1.0).abs() < 1e-3, "{k:?}");
    assert!([0, 2, 3].iter().all(|&i| k[i] == 0.0));
    assert!([0, 2, 3].iter().all(|&i| polished.l.column(i).iter().all(|&v| v == 0.0)));
    let rough_unit: f64 = rough.beta.iter().sum();
    assert!(polished.objective <= rough_unit * (1.0 + 1e-4));
}

#[test]
fn polishing_all_sensors_leaves_little_off_support() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let all = polish(&p, &spec, &[0, 1, 2, 3, 4]).unwrap();
    let k = all.kappa_sq.values();
    let on = k[W_DOT] + k[QBAR];
    assert!(k[0] + k[2] + k[3] < 0.05 * on, "{k:?}");
}

#[test]
fn unobserved_output_terminates_with_empty_support() {
    let p = f16().with_output(Matrix::zeros(4, 4)).unwrap();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let rough = reweighted_solve(&p, &spec, &ReweightOptions::default()).unwrap();
    assert!(rough.support.is_empty());
    assert!(rough.iterations.len() <= 10);
    let (_, polished) = design(&p, &spec, &ReweightOptions::default()).unwrap();
    assert!(polished.support.is_empty());
    assert!(polished.l.iter().all(|&v| v == 0.0));
}

#[test]
fn hinf_unit_level_uses_more_than_dynamic_pressure() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::Hinf, 1.0, 5);
    let (_, polished) = design(&p, &spec, &ReweightOptions::default()).unwrap();
    assert_ne!(polished.support, vec![QBAR]);
}

#[test]
fn polish_with_missing_information_is_infeasible() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 0.01, 5);
    match polish(&p, &spec, &[0]) {
        Err(DesignError::PolishInfeasible { support }) => assert_eq!(support, vec![0]),
        other => panic!("expected an infeasible polish, got {other:?}"),
    }
}

#[test]
fn invalid_options_are_rejected() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let opts = ReweightOptions { epsilon: 0.0, ..Default::default() };
    assert!(matches!(reweighted_solve(&p, &spec, &opts), Err(DesignError::InvalidOptions(_))));
    let opts = ReweightOptions { max_iters: 0, ..Default::default() };
    assert!(reweighted_solve(&p, &spec, &opts).is_err());
}

#[test]
fn subsets_ordered_by_size_then_lexicographically() {
    let s = enumerate_subsets(3);
    let want: Vec<Vec<usize>> = vec![
        vec![],
        vec![0],
        vec![1],
        vec![2],
        vec![0, 1],
        vec![0, 2],
        vec![1, 2],
        vec![0, 1, 2],
    ];
    assert_eq!(s, want);
    assert_eq!(enumerate_subsets(5).len(), 32);
}

fn twin_sensor_plant() -> LtiPlant {
    LtiPlant::estimation(
        m(1, &[0.5]),
        m(1, &[1.0]),
        m(2, &[1.0, 1.0]),
        m(1, &[1.0]),
        m(2, &[0.0, 0.0]),
    )
    .unwrap()
}

#[test]
fn identical_sensors_break_ties_by_order() {
    let p = twin_sensor_plant();
    let spec = DesignSpec::fixed(NormType::H2, 1.0, 2);
    let ex = exhaustive_search(&p, &spec).unwrap();
    assert_eq!(ex.table.len(), 4);
    assert_eq!(ex.table[0].status, SdpStatus::Infeasible);
    assert_eq!(ex.best.support, vec![0]);
    let masks: Vec<u32> = ex.table.iter().map(|r| r.mask).collect();
    assert_eq!(masks, vec![0b00, 0b01, 0b10, 0b11]);
    let l1 = |i: usize| ex.table[i].l1_of_kappa_sq.unwrap();
    assert!((l1(1) - l1(2)).abs() <= 1e-6 * l1(1));
}

#[test]
fn single_sensor_table_has_two_rows() {
    let p = LtiPlant::estimation(m(1, &[-1.0]), m(1, &[1.0]), m(1, &[1.0]), m(1, &[1.0]), m(1, &[0.1])).unwrap();
    let spec = DesignSpec::fixed(NormType::Hinf, 0.5, 1);
    let ex = exhaustive_search(&p, &spec).unwrap();
    assert_eq!(ex.table.len(), 2);
    assert_eq!(ex.table[0].r, 0);
    assert_eq!(ex.table[1].sensors, vec![0]);
    assert_eq!(ex.best.support, vec![0]);
}

#[test]
fn no_feasible_subset_is_reported() {
    let p = twin_sensor_plant();
    let spec = DesignSpec::fixed(NormType::Hinf, 1e-3, 2).with_bounds(vec![1.0, 1.0]);
    assert_eq!(exhaustive_search(&p, &spec).unwrap_err(), DesignError::NoFeasibleSubset);
}

/// Minimum H2 norm with one sensor of precision `k2`: Kleinman iteration on the
/// steady-state Kalman filter, started from a stabilizing gain `l0`.
fn kalman_h2(p: &LtiPlant, sensor: usize, k2: f64, l0: &Matrix) -> (f64, Matrix) {
    let a = p.a();
    let b = p.b_d() * p.s_d();
    let c = p.c_y().rows(sensor, 1).into_owned();
    let d = p.d_d().rows(sensor, 1) * p.s_d();
    let r = (&d * d.transpose())[(0, 0)] + 1.0 / k2;
    let mut l = l0.clone();
    let mut cov = Matrix::zeros(a.nrows(), a.nrows());
    for _ in 0..100 {
        let acl = a + &l * &c;
        let bl = &b + &l * &d;
        let w = &bl * bl.transpose() + &l * l.transpose() / k2;
        cov = solve_lyapunov(&acl, &w).unwrap();
        let next = -(&cov * c.transpose() + &b * d.transpose()) / r;
        let done = (&next - &l).norm() <= 1e-13 * next.norm();
        l = next;
        if done {
            break;
        }
    }
    ((p.c_z() * &cov * p.c_z().transpose()).trace().sqrt(), l)
}

#[test]
fn exhaustive_h2_unit_level_needs_one_sensor() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 1.0, 5);
    let ex = exhaustive_search(&p, &spec).unwrap();
    assert_eq!(ex.table.len(), 32);
    assert_eq!(ex.best.support, vec![W_DOT]);
    let sys = build_error_system(&p, &ex.best.l, &ex.best.kappa_sq).unwrap();
    assert!(h2_norm(&sys).unwrap() < 1.0);
    // smallest precision at which the optimal filter reaches the level
    let l0 = ex.best.l.columns(W_DOT, 1).into_owned();
    let (mut lo, mut hi) = (1.0, ex.best.kappa_sq.values()[W_DOT]);
    assert!(kalman_h2(&p, W_DOT, lo, &l0).0 > 1.0);
    for _ in 0..60 {
        let mid = (lo * hi).sqrt();
        if kalman_h2(&p, W_DOT, mid, &l0).0 > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let k = ex.best.kappa_sq.values()[W_DOT];
    assert!(k >= hi * (1.0 - 1e-6) && k <= hi * 1.01, "{k} vs {hi}");
}

#[test]
fn exhaustive_winner_is_no_larger_than_reweighted() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let ex = exhaustive_search(&p, &spec).unwrap();
    assert_eq!(ex.table.len(), 32);
    let (_, polished) = design(&p, &spec, &ReweightOptions::default()).unwrap();
    assert!(ex.best.l0() <= polished.l0());
    let r = ex.best.support.len();
    assert!(ex.table.iter().filter(|t| t.r < r).all(|t| t.status != SdpStatus::Optimal));
    let sys = build_error_system(&p, &ex.best.l, &ex.best.kappa_sq).unwrap();
    assert!(h2_norm(&sys).unwrap() < 0.1);
}

#[test]
fn design_is_deterministic() {
    let p = f16();
    let spec = DesignSpec::fixed(NormType::Hinf, 0.1, 5);
    let a = design(&p, &spec, &ReweightOptions::default()).unwrap();
    let b = design(&p, &spec, &ReweightOptions::default()).unwrap();
    assert_eq!(a, b);
}
