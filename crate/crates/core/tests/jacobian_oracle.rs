//! Analytic Jacobians against central finite differences over random
//! configurations.

mod common;

use common::*;
use nalgebra::{DMatrix, DVector, Vector3};
use rand::Rng;
use teleop_core::controller::{switching_rotation_error, TaskTerms};
use teleop_core::kinematics::{rotation_jacobian, translation_jacobian};
use teleop_core::{ControllerConfig, Frame, TaskTarget};

const H: f64 = 1e-6;
const TOL: f64 = 1e-6;
const SAMPLES: usize = 100;

fn assert_close(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>, what: &str) {
    let err = (analytic - numeric).amax();
    assert!(err < TOL, "{what}: max |J - J_fd| = {err:e}\nanalytic {analytic}\nnumeric {numeric}");
}

#[test]
fn pose_rotation_and_translation_jacobians() {
    let mut rng = rng(11);
    for model in models() {
        for _ in 0..SAMPLES {
            let q = random_q(&model, &mut rng);
            let (x, jac) = model.pose_and_jacobian(&q, Frame::Effector).unwrap();
            let fd =
                central_difference(&q, H, 8, |q| DVector::from_column_slice(model.fkm(q).unwrap().vec8().as_slice()));
            assert_close(&jac, &fd, &format!("{} pose", model.name));
            let jr = rotation_jacobian(&jac);
            assert_close(&jr, &fd.rows(0, 4).into_owned(), &format!("{} rotation", model.name));
            let jt = translation_jacobian(&x, &jac);
            let fd_t = central_difference(&q, H, 3, |q| {
                DVector::from_column_slice(model.fkm(q).unwrap().translation().as_slice())
            });
            assert_close(
                &DMatrix::from_column_slice(3, q.len(), jt.as_slice()),
                &fd_t,
                &format!("{} translation", model.name),
            );
        }
    }
}

#[test]
fn intermediate_frame_jacobians() {
    let mut rng = rng(12);
    for model in models() {
        for _ in 0..SAMPLES / 4 {
            let q = random_q(&model, &mut rng);
            let k = rng.gen_range(0..=model.dof());
            let (_, jac) = model.pose_and_jacobian(&q, Frame::Link(k)).unwrap();
            let fd = central_difference(&q, H, 8, |q| {
                DVector::from_column_slice(model.fkm_frame(q, Frame::Link(k)).unwrap().vec8().as_slice())
            });
            assert_close(&jac, &fd, &format!("{} link {k}", model.name));
        }
    }
}

#[test]
fn point_jacobians() {
    let mut rng = rng(13);
    for model in models() {
        for _ in 0..SAMPLES {
            let q = random_q(&model, &mut rng);
            let offset = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let frame = if rng.gen_bool(0.5) { Frame::Effector } else { Frame::Link(rng.gen_range(1..=model.dof())) };
            let (_, jp) = model.point_jacobian(&q, frame, &offset).unwrap();
            let fd = central_difference(&q, H, 3, |q| {
                DVector::from_column_slice(model.point_jacobian(q, frame, &offset).unwrap().0.as_slice())
            });
            assert_close(&DMatrix::from_column_slice(3, q.len(), jp.as_slice()), &fd, &format!("{} point", model.name));
        }
    }
}

#[test]
fn line_jacobians() {
    let mut rng = rng(14);
    for model in models() {
        for _ in 0..SAMPLES {
            let q = random_q(&model, &mut rng);
            let axis =
                Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0)).normalize();
            let point = Vector3::new(rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1), rng.gen_range(-0.1..0.1));
            let (_, jl) = model.line_jacobian(&q, Frame::Effector, &axis, &point).unwrap();
            let fd = central_difference(&q, H, 8, |q| {
                let (line, _) = model.line_jacobian(q, Frame::Effector, &axis, &point).unwrap();
                let (l, m) = (line.direction(), line.moment());
                DVector::from_vec(vec![0.0, l.x, l.y, l.z, 0.0, m.x, m.y, m.z])
            });
            assert_close(&jl, &fd, &format!("{} line", model.name));
        }
    }
}

#[test]
fn rotation_error_jacobian() {
    let mut rng = rng(15);
    let config = ControllerConfig::default();
    for model in models() {
        let mut checked = 0;
        while checked < SAMPLES {
            let q = random_q(&model, &mut rng);
            let r_d = random_unit_dq(&mut rng).rotation();
            let r = model.fkm(&q).unwrap().rotation();
            // stay away from the switching surface r·r_d = 0
            if r.dot(&r_d).abs() < 0.05 {
                continue;
            }
            checked += 1;
            let target = TaskTarget::new(r_d, Vector3::zeros());
            let terms = TaskTerms::evaluate(&model, &q, &target, &config).unwrap();
            let fd = central_difference(&q, H, 4, |q| {
                let e = switching_rotation_error(&model.fkm(q).unwrap().rotation(), &r_d).unwrap();
                DVector::from_column_slice(e.as_slice())
            });
            let analytic = DMatrix::from_column_slice(4, q.len(), terms.rotation_error_jacobian.as_slice());
            assert_close(&analytic, &fd, &format!("{} rotation error", model.name));
        }
    }
}

#[test]
fn distance_jacobians() {
    let mut rng = rng(16);
    let probe = mixed_scene(&[0.0; 7], &[0.0, 0.0, 0.1, 0.0, 0.0, 0.0], false);
    let names = probe.row_names();
    let n = probe.layout().total();
    let mut checked = vec![0usize; names.len()];
    for _ in 0..SAMPLES {
        let q1 = random_q(&probe.robots[0].model, &mut rng);
        let q2 = random_q(&probe.robots[1].model, &mut rng);
        let mut scene = mixed_scene(&q1, &q2, true);
        let t = rng.gen_range(0.0..2.0);
        let rows = scene.evaluate(t).unwrap();
        let q: Vec<f64> = scene.stacked_q().iter().copied().collect();
        let mut fd = DMatrix::zeros(rows.len(), n);
        for i in 0..n {
            let mut qp = q.clone();
            let mut qm = q.clone();
            qp[i] += H;
            qm[i] -= H;
            set_stacked_q(&mut scene, &qp);
            let dp = scene.evaluate(t).unwrap();
            set_stacked_q(&mut scene, &qm);
            let dm = scene.evaluate(t).unwrap();
            for k in 0..rows.len() {
                fd[(k, i)] = (dp[k].result.distance - dm[k].result.distance) / (2.0 * H);
            }
        }
        for (k, row) in rows.iter().enumerate() {
            // near-contact samples have unbounded curvature; skip them
            if row.result.distance.abs() < 1e-2 {
                continue;
            }
            checked[k] += 1;
            let err = (&row.result.jacobian - fd.row(k)).amax();
            assert!(err < TOL, "{}: max |J_d - fd| = {err:e}", row.name);
        }
    }
    for (name, c) in names.iter().zip(&checked) {
        assert!(*c >= SAMPLES * 8 / 10, "{name}: only {c} samples away from contact");
    }
}
