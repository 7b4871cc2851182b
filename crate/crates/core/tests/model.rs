use sparse_observer::design::{design, ReweightOptions};
use sparse_observer::linalg::{diag, is_hurwitz, Matrix};
use sparse_observer::lmi::{DesignSpec, NormType};
use sparse_observer::model::{
    apply_weights, build_error_system, f16_v1000, parse_model, LtiPlant, ModelError, NormWeights,
    PrecisionVector,
};

fn m(rows: usize, data: &[f64]) -> Matrix {
    Matrix::from_row_slice(rows, data.len() / rows, data)
}

fn small_plant() -> LtiPlant {
    LtiPlant::new(
        m(2, &[-1.0, 0.5, 0.0, -2.0]),
        m(2, &[1.0, 0.0]),
        m(2, &[0.3, 1.0]),
        m(2, &[1.0, 0.0, 0.5, 1.0]),
        m(1, &[1.0, -1.0]),
        m(2, &[0.2, 0.0]),
        m(2, &[0.1, -0.4]),
    )
    .unwrap()
}

#[test]
fn identity_weights_leave_plant_unchanged() {
    let p = small_plant();
    let q = apply_weights(&p, &NormWeights::identity(&p)).unwrap();
    assert_eq!(p, q);
}

#[test]
fn output_weight_scales_performance_rows() {
    let p = small_plant();
    let mut w = NormWeights::identity(&p);
    w.w_z = Matrix::identity(1, 1) * 2.0;
    let q = apply_weights(&p, &w).unwrap();
    assert_eq!(q.c_z(), &(p.c_z() * 2.0));
    assert_eq!(q.c_y(), p.c_y());
}

#[test]
fn weights_compose_in_order() {
    let p = small_plant();
    let w1 = NormWeights::new(
        m(1, &[3.0]),
        m(3, &[0.5, 0.0, 0.0, 0.2, 2.0, 0.0, -0.1, 0.0, 4.0]),
        m(1, &[0.7]),
    )
    .unwrap();
    let w2 = NormWeights::new(
        m(1, &[0.25]),
        m(3, &[1.5, 0.0, 0.0, 0.3, 0.5, 0.0, 0.0, 0.0, 1.0]),
        m(1, &[-2.0]),
    )
    .unwrap();
    let step = apply_weights(&apply_weights(&p, &w1).unwrap(), &w2).unwrap();
    let once = apply_weights(&p, &w1.then(&w2)).unwrap();
    for (a, b) in [
        (step.b_u(), once.b_u()),
        (step.b_d(), once.b_d()),
        (step.c_y(), once.c_y()),
        (step.c_z(), once.c_z()),
        (step.d_u(), once.d_u()),
        (step.d_d(), once.d_d()),
    ] {
        assert!((a - b).amax() < 1e-14, "{a} vs {b}");
    }
}

#[test]
fn malformed_weights_are_rejected() {
    let p = small_plant();
    let mut w = NormWeights::identity(&p);
    w.w_u = Matrix::zeros(1, 1);
    assert_eq!(apply_weights(&p, &w), Err(ModelError::SingularWeight("W_u")));
    let mut w = NormWeights::identity(&p);
    w.w_z = Matrix::identity(2, 2);
    assert!(matches!(apply_weights(&p, &w), Err(ModelError::Dimension(_))));
    let mut w = NormWeights::identity(&p);
    w.w_w[(0, 1)] = 0.5;
    assert!(matches!(apply_weights(&p, &w), Err(ModelError::WeightStructure(_))));
    assert!(NormWeights::new(m(1, &[1.0]), m(2, &[1.0, 2.0, 2.0, 4.0]), m(1, &[1.0])).is_err());
}

#[test]
fn f16_normalization_matches_hand_built_model() {
    let model = f16_v1000();
    let raw = &model.plant;
    let p = model.normalized().unwrap();
    let elevator_b = raw.b_u().column(1) * 0.5;
    let elevator_d = raw.d_u().column(1) * 0.5;
    assert!((p.b_d().column(0) - elevator_b).amax() < 1e-15);
    assert!((p.d_d().column(0) - elevator_d).amax() < 1e-15);
    let d_d = [0.65425 * 0.5, -3.1461 * 0.5, 0.0, 0.0, 0.0];
    for (i, v) in d_d.iter().enumerate() {
        assert!((p.d_d()[(i, 0)] - v).abs() < 1e-15);
    }
    let pi = std::f64::consts::PI;
    let w_z = diag(&[1.0 / 100.0, 180.0 / (5.0 * pi), 180.0 / (5.0 * pi), 180.0 / (2.0 * pi)]);
    assert!((p.c_z() - w_z).amax() < 1e-12);
    assert_eq!(p.c_y(), raw.c_y());
    assert!((p.b_u() - raw.b_u() * diag(&[500.0, 5.0])).amax() < 1e-15);
    assert_eq!(p.s_d(), &Matrix::identity(1, 1));
    assert_eq!(p.sensor_labels(), &["u_dot", "w_dot", "alpha", "q", "qbar"]);
}

#[test]
fn zero_gain_keeps_open_loop_dynamics() {
    let p = small_plant();
    let l = Matrix::zeros(2, 2);
    let all = PrecisionVector::positive(vec![1.0, 4.0]).unwrap();
    let e = build_error_system(&p, &l, &all).unwrap();
    assert_eq!(&e.a_cl, p.a());
    assert_eq!(e.b_cl.ncols(), 3);
    assert_eq!(e.b_cl.column(0), p.b_d().column(0));
    assert!(e.b_cl.columns(1, 2).iter().all(|&v| v == 0.0));
    let none = PrecisionVector::positive(vec![0.0, 0.0]).unwrap();
    assert_eq!(build_error_system(&p, &l, &none).unwrap().b_cl.ncols(), 1);
}

#[test]
fn removed_sensor_cannot_feed_the_observer() {
    let p = small_plant();
    let l = m(2, &[0.0, 1.0, 0.0, 0.5]);
    let k = PrecisionVector::positive(vec![0.0, 2.0]).unwrap();
    assert!(build_error_system(&p, &l, &k).is_ok());
    let k = PrecisionVector::positive(vec![2.0, 0.0]).unwrap();
    assert_eq!(build_error_system(&p, &l, &k), Err(ModelError::Structural(1)));
}

#[test]
fn infinite_precision_silences_the_noise_channel() {
    let p = small_plant();
    let l = m(2, &[-1.0, 0.5, 2.0, -0.3]);
    let k = PrecisionVector::positive(vec![1e12, 1.0]).unwrap();
    let e = build_error_system(&p, &l, &k).unwrap();
    assert!(e.b_cl.column(1).norm() <= 1e-6 * l.column(0).norm());
    assert!((e.b_cl.column(2) - l.column(1)).amax() < 1e-15);
}

#[test]
fn state_scaling_is_a_similarity() {
    let p = small_plant();
    let t = [0.2, 5.0];
    let ps = p.scale_states(&t).unwrap();
    let l = m(2, &[-1.0, 0.5, 2.0, -0.3]);
    let ls = diag(&[1.0 / t[0], 1.0 / t[1]]) * &l;
    let k = PrecisionVector::positive(vec![1.5, 0.5]).unwrap();
    let e = build_error_system(&p, &l, &k).unwrap();
    let es = build_error_system(&ps, &ls, &k).unwrap();
    let tinv = diag(&[1.0 / t[0], 1.0 / t[1]]);
    let ref_es = e.transform(&tinv).unwrap();
    assert!((es.a_cl - ref_es.a_cl).amax() < 1e-12);
    assert!((es.b_cl - ref_es.b_cl).amax() < 1e-12);
    assert!((es.c_z - ref_es.c_z).amax() < 1e-12);
    assert!(p.scale_states(&[1.0, 0.0]).is_err());
}

#[test]
fn undetectable_plant_is_rejected() {
    let text = r#"{"A": [[1, 0], [0, -1]], "B_d": [[1], [1]], "C_y": [[0, 1]], "C_z": [[1, 0]], "D_d": [[0]]}"#;
    assert!(matches!(parse_model(text), Err(ModelError::NotDetectable { .. })));
}

#[test]
fn malformed_model_files_are_rejected() {
    assert!(matches!(parse_model("{"), Err(ModelError::Parse(_))));
    let ragged = r#"{"A": [[-1, 0], [0]], "B_d": [[1], [1]], "C_y": [[0, 1]], "C_z": [[1, 0]], "D_d": [[0]]}"#;
    assert!(matches!(parse_model(ragged), Err(ModelError::Parse(_))));
    let mismatch = r#"{"A": [[-1]], "B_d": [[1], [1]], "C_y": [[1]], "C_z": [[1]], "D_d": [[0]]}"#;
    assert!(matches!(parse_model(mismatch), Err(ModelError::Dimension(_))));
}

#[test]
fn restricting_sensors_keeps_rows_in_order() {
    let p = f16_v1000().normalized().unwrap();
    let r = p.restrict_sensors(&[4, 1]).unwrap();
    assert_eq!(r.n_y(), 2);
    assert_eq!(r.c_y().row(0), p.c_y().row(4));
    assert_eq!(r.d_d().row(1), p.d_d().row(1));
    assert_eq!(r.sensor_labels(), &["qbar", "w_dot"]);
    assert!(p.restrict_sensors(&[5]).is_err());
}

#[test]
fn f16_design_error_dynamics_are_stable() {
    let p = f16_v1000().normalized().unwrap();
    let spec = DesignSpec::fixed(NormType::H2, 0.1, 5);
    let (_, polished) = design(&p, &spec, &ReweightOptions::default()).unwrap();
    let e = build_error_system(&p, &polished.l, &polished.kappa_sq).unwrap();
    assert!(is_hurwitz(&e.a_cl).unwrap());
    assert!(e.is_stable().unwrap());
}
