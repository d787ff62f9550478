//! Serial-chain forward kinematics and analytic Jacobians.
//!
//! Joints follow the standard Denavit–Hartenberg convention: the transform of
//! joint `i` is `Rz(θᵢ) Tz(dᵢ) Tx(aᵢ) Rx(αᵢ)`, where the joint variable is added
//! to `θ` (revolute) or `d` (prismatic). Poses are unit dual quaternions.

use nalgebra::{DMatrix, DVector, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{conj_matrix4, DqError, DualQuaternion, Quaternion, UNIT_TOL};
use crate::geometry::PluckerLine;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KinematicsError {
    #[error("expected {expected} joint values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("link index {link} out of range for a {joints}-joint chain")]
    LinkOutOfRange { link: usize, joints: usize },
    #[error("axis must be a unit vector (norm = {0})")]
    NonUnitAxis(f64),
    #[error("invalid model: {0}")]
    InvalidModel(String),
    #[error(transparent)]
    Dq(#[from] DqError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JointKind {
    Revolute,
    Prismatic,
}

/// One DH row. `theta` and `d` are offsets added to the joint variable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhJoint {
    pub theta: f64,
    pub d: f64,
    pub a: f64,
    pub alpha: f64,
    pub kind: JointKind,
}

impl DhJoint {
    pub fn revolute(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self { theta, d, a, alpha, kind: JointKind::Revolute }
    }

    pub fn prismatic(theta: f64, d: f64, a: f64, alpha: f64) -> Self {
        Self { theta, d, a, alpha, kind: JointKind::Prismatic }
    }

    pub fn transform(&self, q: f64) -> DualQuaternion {
        let (theta, d) = match self.kind {
            JointKind::Revolute => (self.theta + q, self.d),
            JointKind::Prismatic => (self.theta, self.d + q),
        };
        let rz = Quaternion::from_axis_angle(&Vector3::z(), theta);
        let rx = Quaternion::from_axis_angle(&Vector3::x(), self.alpha);
        DualQuaternion::from_rotation(rz)
            * DualQuaternion::from_translation(&Vector3::new(0.0, 0.0, d))
            * DualQuaternion::from_translation(&Vector3::new(self.a, 0.0, 0.0))
            * DualQuaternion::from_rotation(rx)
    }

    /// Derivative generator `Z` with `dA/dq = Z A` (both commute with the joint
    /// axis, so `Z A = A_z Z A_rest`).
    fn generator(&self) -> DualQuaternion {
        match self.kind {
            JointKind::Revolute => DualQuaternion::new(Quaternion::K * 0.5, Quaternion::ZERO),
            JointKind::Prismatic => DualQuaternion::new(Quaternion::ZERO, Quaternion::K * 0.5),
        }
    }
}

/// Serial chain with fixed base and tool transforms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RobotModel {
    pub name: String,
    pub joints: Vec<DhJoint>,
    pub base: DualQuaternion,
    pub effector: DualQuaternion,
    /// Number of distal joints that belong to the actuated forceps.
    #[serde(default)]
    pub forceps_joints: usize,
}

/// Which frame of the chain a quantity refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Frame {
    /// Frame after joint `k` (1-based); `Link(0)` is the base.
    Link(usize),
    /// Last joint frame composed with the effector transform.
    #[default]
    Effector,
}

impl RobotModel {
    pub fn new(name: impl Into<String>, joints: Vec<DhJoint>) -> Self {
        Self {
            name: name.into(),
            joints,
            base: DualQuaternion::IDENTITY,
            effector: DualQuaternion::IDENTITY,
            forceps_joints: 0,
        }
    }

    pub fn dof(&self) -> usize {
        self.joints.len()
    }

    pub fn validate(&self) -> Result<(), KinematicsError> {
        if self.joints.is_empty() {
            return Err(KinematicsError::InvalidModel("model has no joints".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            if ![j.theta, j.d, j.a, j.alpha].iter().all(|v| v.is_finite()) {
                return Err(KinematicsError::InvalidModel(format!("joint {i} has non-finite DH parameters")));
            }
        }
        if self.forceps_joints > self.joints.len() {
            return Err(KinematicsError::InvalidModel(format!(
                "forceps_joints = {} exceeds {} joints",
                self.forceps_joints,
                self.joints.len()
            )));
        }
        self.base.check_unit()?;
        self.effector.check_unit()?;
        Ok(())
    }

    fn check_q(&self, q: &[f64]) -> Result<(), KinematicsError> {
        if q.len() != self.dof() {
            return Err(KinematicsError::DimensionMismatch { expected: self.dof(), got: q.len() });
        }
        Ok(())
    }

    fn check_frame(&self, frame: Frame) -> Result<usize, KinematicsError> {
        match frame {
            Frame::Effector => Ok(self.dof()),
            Frame::Link(k) if k <= self.dof() => Ok(k),
            Frame::Link(k) => Err(KinematicsError::LinkOutOfRange { link: k, joints: self.dof() }),
        }
    }

    /// Frames `F₀ = base, F_{k+1} = F_k A_{k+1}(q)`; returns `n + 1` poses.
    fn joint_frames(&self, q: &[f64]) -> Vec<DualQuaternion> {
        let mut frames = Vec::with_capacity(self.dof() + 1);
        let mut x = self.base;
        frames.push(x);
        for (joint, &qi) in self.joints.iter().zip(q) {
            x = (x * joint.transform(qi)).renormalize();
            frames.push(x);
        }
        frames
    }

    fn frame_pose(&self, frames: &[DualQuaternion], frame: Frame) -> DualQuaternion {
        match frame {
            Frame::Effector => (frames[self.dof()] * self.effector).renormalize(),
            Frame::Link(k) => frames[k],
        }
    }

    /// End-effector pose.
    pub fn fkm(&self, q: &[f64]) -> Result<DualQuaternion, KinematicsError> {
        self.fkm_frame(q, Frame::Effector)
    }

    pub fn fkm_frame(&self, q: &[f64], frame: Frame) -> Result<DualQuaternion, KinematicsError> {
        self.check_q(q)?;
        self.check_frame(frame)?;
        Ok(self.frame_pose(&self.joint_frames(q), frame))
    }

    /// Pose Jacobian `vec8(ẋ) = J q̇` (8×n) of the end effector.
    pub fn pose_jacobian(&self, q: &[f64]) -> Result<DMatrix<f64>, KinematicsError> {
        Ok(self.pose_and_jacobian(q, Frame::Effector)?.1)
    }

    /// Pose of `frame` and its 8×n pose Jacobian. Columns of joints distal to the
    /// frame are zero.
    pub fn pose_and_jacobian(
        &self,
        q: &[f64],
        frame: Frame,
    ) -> Result<(DualQuaternion, DMatrix<f64>), KinematicsError> {
        self.check_q(q)?;
        let upto = self.check_frame(frame)?;
        let frames = self.joint_frames(q);
        let x = self.frame_pose(&frames, frame);
        let x_minus = x.hamilton_minus();
        let mut jac = DMatrix::zeros(8, self.dof());
        for (j, joint) in self.joints.iter().enumerate().take(upto) {
            // ∂x/∂q_j = F_j Z_j F_j* x
            let g = frames[j] * joint.generator() * frames[j].conj();
            jac.set_column(j, &(x_minus * g.vec8()));
        }
        Ok((x, jac))
    }

    /// Pose and Jacobian of a point frame rigidly attached to `frame` at `offset`.
    pub fn point_jacobian(
        &self,
        q: &[f64],
        frame: Frame,
        offset: &Vector3<f64>,
    ) -> Result<(Vector3<f64>, Matrix3xX<f64>), KinematicsError> {
        let (x, jac) = self.pose_and_jacobian(q, frame)?;
        let shift = DualQuaternion::from_translation(offset);
        let xp = x * shift;
        let jp = to_dyn(shift.hamilton_minus() * jac);
        Ok((xp.translation(), translation_jacobian(&xp, &jp)))
    }

    /// Plücker line through `point` with direction `axis`, both expressed in
    /// `frame`, and the 8×n Jacobian of `[vec4(l); vec4(m)]`.
    pub fn line_jacobian(
        &self,
        q: &[f64],
        frame: Frame,
        axis: &Vector3<f64>,
        point: &Vector3<f64>,
    ) -> Result<(PluckerLine, DMatrix<f64>), KinematicsError> {
        let n = axis.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(KinematicsError::NonUnitAxis(n));
        }
        let (x, jac) = self.pose_and_jacobian(q, frame)?;
        let (p, jp) = {
            let shift = DualQuaternion::from_translation(point);
            let xp = x * shift;
            let jx = to_dyn(shift.hamilton_minus() * &jac);
            (xp.translation(), translation_jacobian(&xp, &jx))
        };
        let r = x.rotation();
        let a = Quaternion::from_vec3(axis);
        let l = r.rotate(axis);
        let jr = rotation_jacobian(&jac);
        // l = r a r*  ⇒  vec4(l̇) = H⁻(a r*) J_r + H⁺(r a) C₄ J_r
        let jl4 = (a * r.conj()).hamilton_minus() * &jr + (r * a).hamilton_plus() * conj_matrix4() * &jr;
        let jl = jl4.rows(1, 3).into_owned();
        let m = p.cross(&l);
        // m = p × l  ⇒  ṁ = −[l]× ṗ + [p]× l̇
        let jm = -crate::dq::skew(&l) * &jp + crate::dq::skew(&p) * &jl;
        let mut out = DMatrix::zeros(8, self.dof());
        out.view_mut((1, 0), (3, self.dof())).copy_from(&jl);
        out.view_mut((5, 0), (3, self.dof())).copy_from(&jm);
        Ok((PluckerLine::new_unchecked(l, m), out))
    }
}

fn to_dyn(
    m: nalgebra::Matrix<f64, nalgebra::U8, nalgebra::Dyn, nalgebra::VecStorage<f64, nalgebra::U8, nalgebra::Dyn>>,
) -> DMatrix<f64> {
    let n = m.ncols();
    DMatrix::from_vec(8, n, m.data.into())
}

/// Rows of the pose Jacobian belonging to the primary part (4×n).
pub fn rotation_jacobian(pose_jacobian: &DMatrix<f64>) -> DMatrix<f64> {
    pose_jacobian.rows(0, 4).into_owned()
}

/// Translation Jacobian (3×n) from the pose and its Jacobian, using
/// `t = 2 𝒟(x) 𝒫(x)*`.
pub fn translation_jacobian(x: &DualQuaternion, pose_jacobian: &DMatrix<f64>) -> Matrix3xX<f64> {
    let jp = pose_jacobian.rows(0, 4);
    let jd = pose_jacobian.rows(4, 4);
    let jt4 = (x.primary.conj().hamilton_minus() * jd + x.dual.hamilton_plus() * conj_matrix4() * jp) * 2.0;
    jt4.fixed_rows::<3>(1).into_owned()
}

/// Joint configuration with its box limits and velocity caps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JointState {
    pub q: DVector<f64>,
    pub q_min: DVector<f64>,
    pub q_max: DVector<f64>,
    pub qdot_max: DVector<f64>,
}

impl JointState {
    pub fn new(
        q: DVector<f64>,
        q_min: DVector<f64>,
        q_max: DVector<f64>,
        qdot_max: DVector<f64>,
    ) -> Result<Self, KinematicsError> {
        let n = q.len();
        for (name, v) in [("q_min", &q_min), ("q_max", &q_max), ("qdot_max", &qdot_max)] {
            if v.len() != n {
                return Err(KinematicsError::InvalidModel(format!("{name} has {} entries, expected {n}", v.len())));
            }
        }
        for i in 0..n {
            if !(q_min[i] < q_max[i]) {
                return Err(KinematicsError::InvalidModel(format!(
                    "joint {i}: q_min ({}) must be below q_max ({})",
                    q_min[i], q_max[i]
                )));
            }
            if !(qdot_max[i] > 0.0) {
                return Err(KinematicsError::InvalidModel(format!("joint {i}: qdot_max must be positive")));
            }
        }
        Ok(Self { q, q_min, q_max, qdot_max })
    }

    pub fn dof(&self) -> usize {
        self.q.len()
    }

    pub fn within_limits(&self) -> bool {
        (0..self.dof()).all(|i| self.q[i] >= self.q_min[i] && self.q[i] <= self.q_max[i])
    }
}

/// Planar two-link arm used in tests and examples.
pub fn planar_2r(a1: f64, a2: f64) -> RobotModel {
    RobotModel::new("planar-2r", vec![DhJoint::revolute(0.0, 0.0, a1, 0.0), DhJoint::revolute(0.0, 0.0, a2, 0.0)])
}

/// Six-joint remote-centre-of-motion arm loosely shaped after a laparoscopic
/// patient-side manipulator: yaw and pitch about the fulcrum, tool insertion,
/// then a roll–pitch–yaw wrist. The fulcrum sits at the base origin and the
/// insertion axis (z of link 3) always passes through it.
pub fn psm_like() -> RobotModel {
    use std::f64::consts::FRAC_PI_2;
    let mut model = RobotModel::new(
        "psm-like",
        vec![
            DhJoint::revolute(FRAC_PI_2, 0.0, 0.0, FRAC_PI_2),
            DhJoint::revolute(-FRAC_PI_2, 0.0, 0.0, -FRAC_PI_2),
            DhJoint::prismatic(0.0, 0.0, 0.0, 0.0),
            DhJoint::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
            DhJoint::revolute(FRAC_PI_2, 0.0, 0.0, FRAC_PI_2),
            DhJoint::revolute(0.0, 0.0, 0.01, 0.0),
        ],
    );
    model.forceps_joints = 3;
    model
}

/// Seven-joint redundant serial arm (decimetre scale) with a straight tool
/// whose tip lies 0.15 along the last joint axis.
pub fn redundant_7r() -> RobotModel {
    use std::f64::consts::FRAC_PI_2;
    let mut model = RobotModel::new(
        "redundant-7r",
        vec![
            DhJoint::revolute(0.0, 0.2, 0.0, -FRAC_PI_2),
            DhJoint::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
            DhJoint::revolute(0.0, 0.25, 0.0, FRAC_PI_2),
            DhJoint::revolute(0.0, 0.0, 0.0, -FRAC_PI_2),
            DhJoint::revolute(0.0, 0.25, 0.0, -FRAC_PI_2),
            DhJoint::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
            DhJoint::revolute(0.0, 0.08, 0.0, 0.0),
        ],
    );
    model.effector = DualQuaternion::from_translation(&Vector3::new(0.0, 0.0, 0.15));
    model.forceps_joints = 2;
    model
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn fd_pose_jacobian(model: &RobotModel, q: &[f64], h: f64) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(8, q.len());
        for i in 0..q.len() {
            let mut qp = q.to_vec();
            let mut qm = q.to_vec();
            qp[i] += h;
            qm[i] -= h;
            let d = (model.fkm(&qp).unwrap().vec8() - model.fkm(&qm).unwrap().vec8()) / (2.0 * h);
            jac.set_column(i, &d);
        }
        jac
    }

    #[test]
    fn single_revolute_at_zero_is_identity() {
        let model = RobotModel::new("1r", vec![DhJoint::revolute(0.0, 0.0, 0.0, 0.0)]);
        assert_eq!(model.fkm(&[0.0]).unwrap(), DualQuaternion::IDENTITY);
    }

    #[test]
    fn planar_2r_poses() {
        let model = planar_2r(1.0, 1.0);
        let x = model.fkm(&[0.0, 0.0]).unwrap();
        let (r, t) = x.to_rt().unwrap();
        assert!((t - Vector3::new(2.0, 0.0, 0.0)).amax() < 1e-15);
        assert!((r - Quaternion::ONE).norm() < 1e-15);

        let x = model.fkm(&[FRAC_PI_2, 0.0]).unwrap();
        let (r, t) = x.to_rt().unwrap();
        assert!((t - Vector3::new(0.0, 2.0, 0.0)).amax() < 1e-12);
        let expected = Quaternion::new(FRAC_PI_4.cos(), 0.0, 0.0, FRAC_PI_4.sin());
        assert!((r - expected).norm() < 1e-12);
    }

    #[test]
    fn planar_2r_translation_jacobian() {
        let model = planar_2r(1.0, 1.0);
        let (x, j) = model.pose_and_jacobian(&[0.0, 0.0], Frame::Effector).unwrap();
        let jt = translation_jacobian(&x, &j);
        let expected = Matrix3xX::from_row_slice(&[0.0, 0.0, 2.0, 1.0, 0.0, 0.0]);
        assert!((jt - expected).amax() < 1e-12);
    }

    #[test]
    fn single_revolute_jacobian_column() {
        let model = RobotModel::new("1r", vec![DhJoint::revolute(0.0, 0.0, 0.0, 0.0)]);
        let j = model.pose_jacobian(&[0.0]).unwrap();
        let mut expected = DMatrix::zeros(8, 1);
        expected[(3, 0)] = 0.5;
        assert!((j - expected).amax() < 1e-15);
    }

    #[test]
    fn prismatic_has_no_rotation_rows() {
        let model = RobotModel::new(
            "p",
            vec![DhJoint::prismatic(0.0, 0.0, 0.0, FRAC_PI_2), DhJoint::prismatic(0.0, 0.0, 0.0, 0.0)],
        );
        let q = [0.3, -0.2];
        let j = model.pose_jacobian(&q).unwrap();
        assert!(rotation_jacobian(&j).amax() == 0.0);
        let x = model.fkm(&q).unwrap();
        let (_, t) = x.to_rt().unwrap();
        assert!((t - Vector3::new(0.0, 0.2, 0.3)).amax() < 1e-12);
    }

    #[test]
    fn dimension_and_frame_errors() {
        let model = planar_2r(1.0, 1.0);
        assert_eq!(model.fkm(&[0.0]), Err(KinematicsError::DimensionMismatch { expected: 2, got: 1 }));
        assert!(matches!(model.fkm_frame(&[0.0, 0.0], Frame::Link(3)), Err(KinematicsError::LinkOutOfRange { .. })));
        assert!(matches!(
            model.line_jacobian(&[0.0, 0.0], Frame::Effector, &Vector3::new(0.0, 0.0, 2.0), &Vector3::zeros()),
            Err(KinematicsError::NonUnitAxis(_))
        ));
    }

    #[test]
    fn identity_line_is_z_axis() {
        let model = RobotModel::new("1r", vec![DhJoint::revolute(0.0, 0.0, 0.0, 0.0)]);
        let (line, _) = model.line_jacobian(&[0.0], Frame::Effector, &Vector3::z(), &Vector3::zeros()).unwrap();
        assert!((line.direction() - Vector3::z()).amax() < 1e-15);
        assert!(line.moment().amax() < 1e-15);
    }

    #[test]
    fn base_translation_shifts_moment() {
        let mut model = psm_like();
        let q = [0.2, -0.3, 0.1, 0.4, 0.2, -0.1];
        let (l0, _) = model.line_jacobian(&q, Frame::Link(3), &Vector3::z(), &Vector3::zeros()).unwrap();
        let p = Vector3::new(0.3, -0.1, 0.25);
        model.base = DualQuaternion::from_translation(&p);
        let (l1, _) = model.line_jacobian(&q, Frame::Link(3), &Vector3::z(), &Vector3::zeros()).unwrap();
        assert!((l1.direction() - l0.direction()).amax() < 1e-12);
        let expected = l0.moment() + p.cross(&l0.direction());
        assert!((l1.moment() - expected).amax() < 1e-12);
    }

    #[test]
    fn rcm_shaft_passes_through_fulcrum() {
        let model = psm_like();
        for q in [[0.0; 6], [0.3, -0.4, 0.12, 1.0, 0.3, 0.2]] {
            let (line, _) = model.line_jacobian(&q, Frame::Link(3), &Vector3::z(), &Vector3::zeros()).unwrap();
            assert!(line.moment().amax() < 1e-12);
        }
    }

    #[test]
    fn wrist_rotation_about_own_centre_has_zero_translation_jacobian() {
        // Three intersecting revolute axes at the origin.
        let model = RobotModel::new(
            "wrist",
            vec![
                DhJoint::revolute(0.0, 0.0, 0.0, -FRAC_PI_2),
                DhJoint::revolute(0.0, 0.0, 0.0, FRAC_PI_2),
                DhJoint::revolute(0.0, 0.0, 0.0, 0.0),
            ],
        );
        let q = [0.4, -0.7, 1.1];
        let (x, j) = model.pose_and_jacobian(&q, Frame::Effector).unwrap();
        assert!(translation_jacobian(&x, &j).amax() < 1e-15);
    }

    #[test]
    fn pose_jacobian_matches_finite_differences() {
        for model in [planar_2r(0.3, 0.2), psm_like(), redundant_7r()] {
            let q: Vec<f64> = (0..model.dof()).map(|i| 0.1 + 0.2 * i as f64).collect();
            let j = model.pose_jacobian(&q).unwrap();
            let fd = fd_pose_jacobian(&model, &q, 1e-6);
            assert!((j - fd).amax() < 1e-6, "{}", model.name);
        }
    }

    #[test]
    fn joint_state_validation() {
        let v = |x: &[f64]| DVector::from_row_slice(x);
        assert!(JointState::new(v(&[0.0]), v(&[1.0]), v(&[-1.0]), v(&[1.0])).is_err());
        assert!(JointState::new(v(&[0.0]), v(&[-1.0]), v(&[1.0]), v(&[0.0])).is_err());
        assert!(JointState::new(v(&[0.0, 0.0]), v(&[-1.0]), v(&[1.0]), v(&[1.0])).is_err());
        let s = JointState::new(v(&[0.0]), v(&[-1.0]), v(&[1.0]), v(&[1.0])).unwrap();
        assert!(s.within_limits());
    }
}
