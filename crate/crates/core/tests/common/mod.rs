#![allow(dead_code)]

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use teleop_core::kinematics::{self, RobotModel};
use teleop_core::{DualQuaternion, JointState, Quaternion};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn models() -> Vec<RobotModel> {
    let mut based = kinematics::redundant_7r();
    based.base = DualQuaternion::from_rt(
        Quaternion::from_axis_angle(&nalgebra::Vector3::new(0.3, -0.2, 1.0).normalize(), 0.7),
        &nalgebra::Vector3::new(0.1, -0.2, 0.05),
    );
    based.name = "redundant-7r-moved".into();
    vec![kinematics::planar_2r(0.3, 0.2), kinematics::psm_like(), kinematics::redundant_7r(), based]
}

/// Random configuration; prismatic joints in [0.02, 0.2], revolute in [-π, π].
pub fn random_q(model: &RobotModel, rng: &mut impl Rng) -> Vec<f64> {
    model
        .joints
        .iter()
        .map(|j| match j.kind {
            kinematics::JointKind::Prismatic => rng.gen_range(0.02..0.2),
            kinematics::JointKind::Revolute => rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI),
        })
        .collect()
}

pub fn random_unit_dq(rng: &mut impl Rng) -> DualQuaternion {
    let axis = nalgebra::Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    let axis = if axis.norm() < 1e-3 { nalgebra::Vector3::z() } else { axis.normalize() };
    let r = Quaternion::from_axis_angle(&axis, rng.gen_range(-3.0..3.0));
    let t = nalgebra::Vector3::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
    DualQuaternion::from_rt(r, &t)
}

pub fn wide_state(q: &[f64]) -> JointState {
    let n = q.len();
    JointState::new(
        DVector::from_column_slice(q),
        DVector::from_element(n, -10.0),
        DVector::from_element(n, 10.0),
        DVector::from_element(n, 10.0),
    )
    .unwrap()
}

/// Central difference of a vector-valued function of `q` along each joint.
pub fn central_difference<F>(q: &[f64], h: f64, rows: usize, f: F) -> nalgebra::DMatrix<f64>
where
    F: Fn(&[f64]) -> DVector<f64>,
{
    let mut jac = nalgebra::DMatrix::zeros(rows, q.len());
    for i in 0..q.len() {
        let mut qp = q.to_vec();
        let mut qm = q.to_vec();
        qp[i] += h;
        qm[i] -= h;
        jac.set_column(i, &((f(&qp) - f(&qm)) / (2.0 * h)));
    }
    jac
}

use nalgebra::Vector3;
use teleop_core::geometry::Plane;
use teleop_core::{Attachment, ConstraintSpec, Frame, Motion, Primitive, Robot, Scene, SceneConstraint};

/// Two arms with attached points and lines, and world primitives of every
/// kind, optionally in motion. One constraint per supported pair type.
pub fn mixed_scene(q1: &[f64], q2: &[f64], moving: bool) -> Scene {
    let mut m1 = kinematics::redundant_7r();
    m1.base = DualQuaternion::from_translation(&Vector3::new(-0.3, 0.0, 0.0));
    let mut m2 = kinematics::psm_like();
    m2.base = DualQuaternion::from_rt(Quaternion::from_axis_angle(&Vector3::x(), 2.5), &Vector3::new(0.3, 0.1, 0.4));
    let motion = |v: Vector3<f64>| if moving { Motion::Linear { velocity: v } } else { Motion::Static };
    let osc =
        |a: Vector3<f64>| if moving { Motion::Oscillate { amplitude: a, frequency: 0.7 } } else { Motion::Static };
    let r1 = |frame| Attachment::Robot { robot: 0, frame };
    let r2 = |frame| Attachment::Robot { robot: 1, frame };
    let primitives = vec![
        // 0: arm 1 tool tip
        Primitive::Point { attach: r1(Frame::Effector), position: Vector3::zeros(), motion: Motion::Static },
        // 1: arm 1 tool shaft
        Primitive::Line {
            attach: r1(Frame::Effector),
            point: Vector3::zeros(),
            direction: Vector3::z(),
            motion: Motion::Static,
        },
        // 2: arm 2 insertion shaft
        Primitive::Line {
            attach: r2(Frame::Link(3)),
            point: Vector3::zeros(),
            direction: Vector3::z(),
            motion: Motion::Static,
        },
        // 3: arm 2 wrist point, offset from the link frame
        Primitive::Point {
            attach: r2(Frame::Link(4)),
            position: Vector3::new(0.01, -0.02, 0.03),
            motion: Motion::Static,
        },
        // 4: world point
        Primitive::Point {
            attach: Attachment::World,
            position: Vector3::new(0.1, 0.4, 0.2),
            motion: motion(Vector3::new(0.05, -0.02, 0.01)),
        },
        // 5: world line
        Primitive::Line {
            attach: Attachment::World,
            point: Vector3::new(0.0, -0.3, 0.1),
            direction: Vector3::new(1.0, 1.0, 0.3).normalize(),
            motion: osc(Vector3::new(0.02, 0.0, 0.03)),
        },
        // 6: world plane
        Primitive::Plane {
            plane: Plane::new(Vector3::new(0.2, 0.1, 1.0).normalize(), -0.5).unwrap(),
            offset_rate: if moving { 0.03 } else { 0.0 },
        },
        // 7: sphere
        Primitive::Sphere {
            center: Vector3::new(-0.2, 0.2, 0.6),
            radius: 0.05,
            motion: osc(Vector3::new(0.0, 0.04, -0.01)),
        },
        // 8: box
        Primitive::Cuboid {
            pose: DualQuaternion::from_rt(
                Quaternion::from_axis_angle(&Vector3::z(), 0.4),
                &Vector3::new(0.0, 0.0, 0.3),
            ),
            extents: Vector3::new(2.0, 2.5, 3.0),
        },
    ];
    let pairs = [
        ("tip-point", (0, 4)),
        ("shaft-point", (1, 4)),
        ("shaft-line", (1, 5)),
        ("tip-plane", (0, 6)),
        ("tip-box", (0, 8)),
        ("shafts", (1, 2)),
        ("tip-wrist", (0, 3)),
        ("wrist-sphere", (3, 7)),
        ("sphere-shaft", (7, 2)),
        ("wrist-shaft", (3, 1)),
    ];
    let constraints = pairs
        .iter()
        .map(|(name, pair)| SceneConstraint {
            name: name.to_string(),
            pair: *pair,
            spec: ConstraintSpec::restricted(0.0, 1.0),
        })
        .collect();
    let scene = Scene {
        robots: vec![
            Robot { id: "r1".into(), model: m1, state: wide_state(q1) },
            Robot { id: "r2".into(), model: m2, state: wide_state(q2) },
        ],
        primitives,
        constraints,
    };
    scene.validate().unwrap();
    scene
}

pub fn set_stacked_q(scene: &mut Scene, q: &[f64]) {
    let layout = scene.layout();
    for (i, r) in scene.robots.iter_mut().enumerate() {
        let range = layout.range(i);
        r.state.q = DVector::from_column_slice(&q[range]);
    }
}

use nalgebra::DMatrix;
use teleop_core::QpProblem;

/// Minimizer by trying every active set of size ≤ N and keeping the best KKT
/// point. `None` when no candidate is primal feasible.
pub fn brute_force(p: &QpProblem) -> Option<DVector<f64>> {
    let (n, r) = (p.dim(), p.rows());
    let mut best: Option<(f64, DVector<f64>)> = None;
    for mask in 0u32..(1 << r) {
        let set: Vec<usize> = (0..r).filter(|i| mask & (1 << i) != 0).collect();
        if set.len() > n {
            continue;
        }
        let k = set.len();
        let mut kkt = DMatrix::zeros(n + k, n + k);
        kkt.view_mut((0, 0), (n, n)).copy_from(&p.hessian);
        let mut rhs = DVector::zeros(n + k);
        rhs.rows_mut(0, n).copy_from(&(-&p.linear));
        for (j, &i) in set.iter().enumerate() {
            let row = p.w_mat.row(i);
            kkt.view_mut((n + j, 0), (1, n)).copy_from(&row);
            kkt.view_mut((0, n + j), (n, 1)).copy_from(&row.transpose());
            rhs[n + j] = p.w_vec[i];
        }
        let Some(sol) = kkt.clone().lu().solve(&rhs) else { continue };
        if (&kkt * &sol - &rhs).amax() > 1e-9 || sol.iter().any(|v| !v.is_finite()) {
            continue;
        }
        let x = sol.rows(0, n).into_owned();
        if sol.rows(n, k).iter().any(|&mu| mu < -1e-9) || p.max_violation(&x) > 1e-9 {
            continue;
        }
        let f = p.objective(&x);
        if best.as_ref().is_none_or(|(b, _)| f < *b) {
            best = Some((f, x));
        }
    }
    best.map(|(_, x)| x)
}

pub fn random_problem(rng: &mut impl Rng) -> QpProblem {
    let n = rng.gen_range(1..=6);
    let r = rng.gen_range(0..=8);
    let a = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    let h = a.transpose() * &a + DMatrix::identity(n, n) * rng.gen_range(0.05..1.0);
    let f = DVector::from_fn(n, |_, _| rng.gen_range(-3.0..3.0));
    let mut w = DMatrix::from_fn(r, n, |_, _| rng.gen_range(-1.0..1.0));
    // occasionally duplicate a row to exercise dependent constraints
    if r >= 2 && rng.gen_bool(0.2) {
        let row = w.row(0).into_owned();
        w.set_row(1, &(row * 2.0));
    }
    let b = DVector::from_fn(r, |_, _| rng.gen_range(-1.0..1.0));
    QpProblem::new(h, f, w, b)
}
