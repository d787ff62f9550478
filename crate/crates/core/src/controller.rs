//! Weighted multi-arm tracking controller.
//!
//! Each tick solves
//!
//! ```text
//!     min  Σᵢ bᵢ [ α ‖J_{t,i} q̇ᵢ + η t̃ᵢ‖² + (1−α) ‖J_{r̃,i} q̇ᵢ + η r̃ᵢ‖² + ‖Λᵢ q̇ᵢ‖² ]
//!     s.t. W q̇ ≼ w
//! ```
//!
//! with `b = (β, 1−β)` for two arms, where the rows of `W` come from the
//! scene's vector field inequalities and the joint-limit dampers.

use nalgebra::{DMatrix, DVector, Matrix3xX, Matrix4xX, Vector3, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{conj_matrix4, Quaternion, UNIT_TOL};
use crate::kinematics::{rotation_jacobian, translation_jacobian, Frame, KinematicsError, RobotModel};
use crate::qp::{QpError, QpProblem, QpSolver, QpStatus};
use crate::scene::{Scene, SceneError};
use crate::vfi::{assemble, joint_limit_rows, JointLayout, VfiError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("expected {expected} task targets, got {got}")]
    TargetCount { expected: usize, got: usize },
    #[error("rotation is not a unit quaternion (norm = {0})")]
    NonUnitRotation(f64),
    #[error("invalid controller configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Scene(#[from] SceneError),
    #[error(transparent)]
    Vfi(#[from] VfiError),
    #[error(transparent)]
    Qp(#[from] QpError),
}

/// Gains of the tracking objective and the constraint dampers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerConfig {
    /// Translation vs. rotation weight.
    pub alpha: f64,
    /// Priority of robot 1 over robot 2.
    pub beta: f64,
    /// Task-space proportional gain (1/s).
    pub eta: f64,
    /// Damping gain of the proximal (arm) joints.
    pub lambda_robot: f64,
    /// Damping gain of the distal forceps joints.
    pub lambda_forceps: f64,
    /// Default VFI damper gain (1/s).
    pub eta_d: f64,
    /// Joint-limit damper gain (1/s).
    pub eta_q: f64,
    /// Control period (s).
    pub sampling_time: f64,
    /// Master-to-slave translation scale.
    pub motion_scaling: f64,
    /// Lower bound applied to both robot weights.
    #[serde(default = "default_beta_floor")]
    pub beta_floor: f64,
}

fn default_beta_floor() -> f64 {
    1e-3
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            alpha: 0.99,
            beta: 0.5,
            eta: 1.0,
            lambda_robot: 0.01,
            lambda_forceps: 0.01,
            eta_d: 1.0,
            eta_q: 1.0,
            sampling_time: 1e-3,
            motion_scaling: 0.5,
            beta_floor: default_beta_floor(),
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<(), ControlError> {
        let bad = |msg: String| Err(ControlError::InvalidConfig(msg));
        if !(0.0..=1.0).contains(&self.alpha) {
            return bad(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if !(0.0..=1.0).contains(&self.beta) {
            return bad(format!("beta must lie in [0, 1], got {}", self.beta));
        }
        if !(self.eta > 0.0) {
            return bad(format!("eta must be positive, got {}", self.eta));
        }
        if !(self.sampling_time > 0.0) {
            return bad(format!("sampling_time must be positive, got {}", self.sampling_time));
        }
        if !(self.lambda_robot >= 0.0 && self.lambda_forceps >= 0.0) {
            return bad("damping gains must be non-negative".into());
        }
        if !(self.eta_d >= 0.0 && self.eta_q >= 0.0) {
            return bad("damper gains must be non-negative".into());
        }
        if !(self.motion_scaling > 0.0) {
            return bad(format!("motion_scaling must be positive, got {}", self.motion_scaling));
        }
        if !(0.0..0.5).contains(&self.beta_floor) {
            return bad(format!("beta_floor must lie in [0, 0.5), got {}", self.beta_floor));
        }
        Ok(())
    }

    /// Objective weights `bᵢ` for `robots` arms: `(β, 1−β)` for two, each
    /// floored at `beta_floor`; unit weights otherwise.
    pub fn robot_weights(&self, robots: usize) -> Vec<f64> {
        match robots {
            2 => vec![self.beta.max(self.beta_floor), (1.0 - self.beta).max(self.beta_floor)],
            n => vec![1.0; n],
        }
    }

    /// Diagonal of `Λ` for a model: `lambda_robot` on the arm joints and
    /// `lambda_forceps` on the last `forceps_joints`.
    pub fn damping_diagonal(&self, model: &RobotModel) -> DVector<f64> {
        let n = model.dof();
        let arm = n - model.forceps_joints.min(n);
        DVector::from_fn(n, |i, _| if i < arm { self.lambda_robot } else { self.lambda_forceps })
    }
}

/// Desired end-effector rotation and translation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TaskTarget {
    pub rotation: Quaternion,
    pub translation: Vector3<f64>,
}

impl TaskTarget {
    pub fn new(rotation: Quaternion, translation: Vector3<f64>) -> Self {
        Self { rotation, translation }
    }
}

fn check_unit(r: &Quaternion) -> Result<(), ControlError> {
    let n = r.norm();
    if (n - 1.0).abs() > UNIT_TOL {
        return Err(ControlError::NonUnitRotation(n));
    }
    Ok(())
}

/// `r* r_d − 1` when `r* r_d` is closer to `1`, `r* r_d + 1` otherwise.
pub fn switching_rotation_error(r: &Quaternion, r_d: &Quaternion) -> Result<Vector4<f64>, ControlError> {
    check_unit(r)?;
    check_unit(r_d)?;
    let e = r.conj() * *r_d;
    let minus = e - Quaternion::ONE;
    let plus = e + Quaternion::ONE;
    Ok(if minus.norm() < plus.norm() { minus.vec4() } else { plus.vec4() })
}

/// Task-space quantities of one arm at the current configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskTerms {
    pub translation_jacobian: Matrix3xX<f64>,
    /// Jacobian of the rotation error, `vec4(d r̃/dt) = J q̇`.
    pub rotation_error_jacobian: Matrix4xX<f64>,
    pub translation_error: Vector3<f64>,
    pub rotation_error: Vector4<f64>,
    pub damping: DVector<f64>,
}

impl TaskTerms {
    pub fn evaluate(
        model: &RobotModel,
        q: &[f64],
        target: &TaskTarget,
        config: &ControllerConfig,
    ) -> Result<Self, ControlError> {
        let (x, jac) = model.pose_and_jacobian(q, Frame::Effector)?;
        let jt = translation_jacobian(&x, &jac);
        let jr = rotation_jacobian(&jac);
        let r = x.rotation();
        let rotation_error = switching_rotation_error(&r, &target.rotation)?;
        // r̃ = r* r_d ∓ 1  ⇒  vec4(r̃̇) = H⁻(r_d) C₄ J_r q̇
        let rotation_error_jacobian = target.rotation.hamilton_minus() * conj_matrix4() * jr;
        Ok(Self {
            translation_jacobian: jt,
            rotation_error_jacobian,
            translation_error: x.translation() - target.translation,
            rotation_error,
            damping: config.damping_diagonal(model),
        })
    }
}

/// `(H, f)` of the weighted objective over the stacked joint velocities,
/// constant terms dropped.
pub fn build_objective(
    terms: &[TaskTerms],
    weights: &[f64],
    config: &ControllerConfig,
    layout: &JointLayout,
) -> Result<(DMatrix<f64>, DVector<f64>), ControlError> {
    if terms.len() != layout.robots() || weights.len() != layout.robots() {
        return Err(ControlError::TargetCount { expected: layout.robots(), got: terms.len() });
    }
    let n = layout.total();
    let mut h = DMatrix::zeros(n, n);
    let mut f = DVector::zeros(n);
    let (alpha, eta) = (config.alpha, config.eta);
    for (i, (t, &b)) in terms.iter().zip(weights).enumerate() {
        let (off, ni) = (layout.offset(i), layout.size(i));
        let jt = &t.translation_jacobian;
        let jr = &t.rotation_error_jacobian;
        let lam2 = DMatrix::from_diagonal(&t.damping.component_mul(&t.damping));
        let block = (jt.transpose() * jt * alpha + jr.transpose() * jr * (1.0 - alpha) + lam2) * (2.0 * b);
        let grad = (jt.transpose() * t.translation_error * alpha + jr.transpose() * t.rotation_error * (1.0 - alpha))
            * (2.0 * b * eta);
        h.view_mut((off, off), (ni, ni)).copy_from(&block);
        f.rows_mut(off, ni).copy_from(&grad);
    }
    // symmetrize round-off
    let h = (&h + h.transpose()) * 0.5;
    Ok((h, f))
}

/// Objective value of the weighted tracking cost including constant terms.
pub fn objective_value(
    terms: &[TaskTerms],
    weights: &[f64],
    config: &ControllerConfig,
    layout: &JointLayout,
    qdot: &DVector<f64>,
) -> f64 {
    let mut total = 0.0;
    for (i, (t, &b)) in terms.iter().zip(weights).enumerate() {
        let range = layout.range(i);
        let qi = qdot.rows(range.start, range.len());
        let ft = (&t.translation_jacobian * qi + t.translation_error * config.eta).norm_squared();
        let fr = (&t.rotation_error_jacobian * qi + t.rotation_error * config.eta).norm_squared();
        let fl = t.damping.component_mul(&qi).norm_squared();
        total += b * (config.alpha * ft + (1.0 - config.alpha) * fr + fl);
    }
    total
}

/// `(H, f)` of `‖J q̇ + η x̃‖² + λ‖q̇‖²` for `p` arms with block-diagonal
/// task Jacobians `Jᵢ` and errors `x̃ᵢ`.
pub fn multi_robot_objective(
    jacobians: &[DMatrix<f64>],
    errors: &[DVector<f64>],
    eta: f64,
    lambda: f64,
) -> (DMatrix<f64>, DVector<f64>) {
    let n: usize = jacobians.iter().map(|j| j.ncols()).sum();
    let mut h = DMatrix::identity(n, n) * (2.0 * lambda);
    let mut f = DVector::zeros(n);
    let mut off = 0;
    for (j, e) in jacobians.iter().zip(errors) {
        let ni = j.ncols();
        let mut block = h.view_mut((off, off), (ni, ni));
        block += j.transpose() * j * 2.0;
        f.rows_mut(off, ni).copy_from(&(j.transpose() * e * (2.0 * eta)));
        off += ni;
    }
    (h, f)
}

/// Everything a control tick produced.
#[derive(Debug, Clone, PartialEq)]
pub struct StepOutput {
    /// Stacked joint velocity command.
    pub qdot: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Set when the QP was infeasible and the command replaced by zero.
    pub infeasible: bool,
    /// Set when some joint started the tick outside its limits.
    pub joint_limit_violation: bool,
    pub constraint_names: Vec<String>,
    pub distances: Vec<f64>,
    /// `w − W q̇` per VFI row.
    pub slacks: Vec<f64>,
    /// `|J_d q̇|` per VFI row.
    pub approach_rates: Vec<f64>,
    pub degenerate: Vec<bool>,
    pub translation_errors: Vec<Vector3<f64>>,
    pub rotation_errors: Vec<Vector4<f64>>,
    pub weights: Vec<f64>,
}

/// Stateful controller: configuration plus the warm-started QP solver.
#[derive(Debug, Clone)]
pub struct Controller {
    pub config: ControllerConfig,
    solver: QpSolver,
}

impl Controller {
    pub fn new(config: ControllerConfig) -> Result<Self, ControlError> {
        config.validate()?;
        Ok(Self { config, solver: QpSolver::new() })
    }

    /// Evaluate distances, assemble VFI and joint rows, build the objective and
    /// solve for the joint velocity command.
    pub fn step(&mut self, scene: &Scene, time: f64, targets: &[TaskTarget]) -> Result<StepOutput, ControlError> {
        let layout = scene.layout();
        if targets.len() != scene.robots.len() {
            return Err(ControlError::TargetCount { expected: scene.robots.len(), got: targets.len() });
        }
        let terms = scene
            .robots
            .iter()
            .zip(targets)
            .map(|(r, t)| TaskTerms::evaluate(&r.model, r.state.q.as_slice(), t, &self.config))
            .collect::<Result<Vec<_>, _>>()?;
        let weights = self.config.robot_weights(scene.robots.len());
        let (h, f) = build_objective(&terms, &weights, &self.config, &layout)?;

        let evaluated = scene.evaluate(time)?;
        let mut rows: Vec<_> = evaluated.iter().map(|e| e.spec.row(&e.result)).collect();
        let vfi_rows = rows.len();
        let mut joint_limit_violation = false;
        for (i, robot) in scene.robots.iter().enumerate() {
            joint_limit_violation |= !robot.state.within_limits();
            for row in joint_limit_rows(&robot.state, self.config.eta_q) {
                rows.push(layout.embed(i, &row)?);
            }
        }
        let (w_mat, w_vec) = assemble(&rows, &layout)?;
        let problem = QpProblem::new(h, f, w_mat, w_vec);
        let sol = self.solver.solve(&problem)?;
        let infeasible = sol.status == QpStatus::Infeasible;
        let qdot = if infeasible { DVector::zeros(layout.total()) } else { sol.x };

        let slacks = rows[..vfi_rows].iter().map(|r| r.slack(&qdot)).collect();
        Ok(StepOutput {
            status: sol.status,
            iterations: sol.iterations,
            kkt_residual: sol.kkt_residual,
            infeasible,
            joint_limit_violation,
            constraint_names: evaluated.iter().map(|e| e.name.clone()).collect(),
            distances: evaluated.iter().map(|e| e.result.distance).collect(),
            slacks,
            approach_rates: evaluated.iter().map(|e| (&e.result.jacobian * &qdot)[0].abs()).collect(),
            degenerate: evaluated.iter().map(|e| e.result.degenerate).collect(),
            translation_errors: terms.iter().map(|t| t.translation_error).collect(),
            rotation_errors: terms.iter().map(|t| t.rotation_error).collect(),
            weights,
            qdot,
        })
    }
}

/// One master increment as received from the operator side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MasterDelta {
    pub clutch: bool,
    /// Master translation increment in the master base frame.
    pub translation: Vector3<f64>,
    /// Master rotation increment (unit), applied on the left in the master base frame.
    pub rotation: Quaternion,
}

impl MasterDelta {
    pub fn idle(clutch: bool) -> Self {
        Self { clutch, translation: Vector3::zeros(), rotation: Quaternion::ONE }
    }

    /// Merge a later increment into this one: the clutch state of the later
    /// one wins, motions compose.
    pub fn then(&self, later: &MasterDelta) -> MasterDelta {
        MasterDelta {
            clutch: later.clutch,
            translation: self.translation + later.translation,
            rotation: (later.rotation * self.rotation).normalize(),
        }
    }
}

/// Relative master-to-slave mapping with clutch.
///
/// While the clutch is engaged, slave translation targets advance by the
/// scaled master translation and slave rotation targets follow the master
/// rotation relative to its pose at engagement, both rotated into the slave
/// base by `alignment`. Disengaging freezes the targets.
#[derive(Debug, Clone, PartialEq)]
pub struct TeleopMapping {
    pub motion_scaling: f64,
    /// Rotation from the master base frame to the slave base frame.
    pub alignment: Quaternion,
    engaged: bool,
    master_rotation: Quaternion,
    master_translation: Vector3<f64>,
    engage_master_rotation: Quaternion,
    engage_target_rotation: Quaternion,
    target: TaskTarget,
}

impl TeleopMapping {
    pub fn new(motion_scaling: f64, alignment: Quaternion, initial_target: TaskTarget) -> Self {
        Self {
            motion_scaling,
            alignment: alignment.normalize(),
            engaged: false,
            master_rotation: Quaternion::ONE,
            master_translation: Vector3::zeros(),
            engage_master_rotation: Quaternion::ONE,
            engage_target_rotation: initial_target.rotation,
            target: initial_target,
        }
    }

    pub fn engaged(&self) -> bool {
        self.engaged
    }

    pub fn target(&self) -> TaskTarget {
        self.target
    }

    pub fn master_translation(&self) -> Vector3<f64> {
        self.master_translation
    }

    pub fn master_rotation(&self) -> Quaternion {
        self.master_rotation
    }

    /// Apply a master increment and return the resulting slave target.
    pub fn apply(&mut self, delta: &MasterDelta) -> TaskTarget {
        if delta.clutch && !self.engaged {
            self.engage_master_rotation = self.master_rotation;
            self.engage_target_rotation = self.target.rotation;
        }
        self.engaged = delta.clutch;
        self.master_translation += delta.translation;
        self.master_rotation = (delta.rotation * self.master_rotation).normalize();
        if self.engaged {
            let a = self.alignment;
            self.target.translation += a.rotate(&delta.translation) * self.motion_scaling;
            let relative = self.master_rotation * self.engage_master_rotation.conj();
            self.target.rotation = (a * relative * a.conj() * self.engage_target_rotation).normalize();
        }
        self.target
    }

    /// Slave translation error `t̃ = t − t_d` seen from the master: how far the
    /// master has moved past the slave, `−a* t̃ a / MS`, in master units.
    pub fn master_error(&self, slave_error: &Vector3<f64>) -> Vector3<f64> {
        -self.alignment.conj().rotate(slave_error) / self.motion_scaling
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    #[test]
    fn rotation_error_examples() {
        let r = Quaternion::from_axis_angle(&Vector3::new(0.3, 1.0, -0.2), 0.8);
        assert!(switching_rotation_error(&r, &r).unwrap().amax() < 1e-15);
        let e = switching_rotation_error(&r, &(-r)).unwrap();
        assert!(e.amax() < 1e-15);
        let rd = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let e = switching_rotation_error(&Quaternion::ONE, &rd).unwrap();
        let expected = Vector4::new(FRAC_PI_4.cos() - 1.0, 0.0, 0.0, FRAC_PI_4.sin());
        assert!((e - expected).amax() < 1e-15);
        assert!(switching_rotation_error(&Quaternion::real(2.0), &rd).is_err());
    }

    #[test]
    fn weights_are_floored() {
        let mut c = ControllerConfig { beta: 0.999_9, ..Default::default() };
        assert_eq!(c.robot_weights(2), vec![0.999_9, 1e-3]);
        c.beta = 0.5;
        assert_eq!(c.robot_weights(2), vec![0.5, 0.5]);
        assert_eq!(c.robot_weights(3), vec![1.0; 3]);
    }

    #[test]
    fn config_validation() {
        assert!(ControllerConfig::default().validate().is_ok());
        for bad in [
            ControllerConfig { alpha: 1.5, ..Default::default() },
            ControllerConfig { beta: -0.1, ..Default::default() },
            ControllerConfig { eta: 0.0, ..Default::default() },
            ControllerConfig { sampling_time: 0.0, ..Default::default() },
            ControllerConfig { lambda_forceps: -1.0, ..Default::default() },
        ] {
            assert!(bad.validate().is_err());
        }
    }

    #[test]
    fn damping_diagonal_splits_forceps() {
        let c = ControllerConfig { lambda_robot: 0.01, lambda_forceps: 0.0, ..Default::default() };
        let d = c.damping_diagonal(&crate::kinematics::redundant_7r());
        assert_eq!(d.as_slice(), &[0.01, 0.01, 0.01, 0.01, 0.01, 0.0, 0.0]);
    }

    #[test]
    fn multi_robot_objective_matches_expansion() {
        let j1 = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.0, 2.0]);
        let j2 = DMatrix::from_row_slice(1, 1, &[3.0]);
        let e1 = DVector::from_row_slice(&[0.1, -0.2]);
        let e2 = DVector::from_row_slice(&[0.4]);
        let (h, f) = multi_robot_objective(&[j1.clone(), j2.clone()], &[e1.clone(), e2.clone()], 2.0, 0.1);
        let qdot = DVector::from_row_slice(&[0.3, -0.7, 0.2]);
        let direct = (&j1 * qdot.rows(0, 2) + &e1 * 2.0).norm_squared()
            + (&j2 * qdot.rows(2, 1) + &e2 * 2.0).norm_squared()
            + 0.1 * qdot.norm_squared();
        let constant = (&e1 * 2.0).norm_squared() + (&e2 * 2.0).norm_squared();
        let quad = 0.5 * qdot.dot(&(&h * &qdot)) + f.dot(&qdot) + constant;
        assert!((quad - direct).abs() < 1e-12);
    }

    #[test]
    fn clutch_and_scaling() {
        let start = TaskTarget::new(Quaternion::ONE, Vector3::zeros());
        let mut m = TeleopMapping::new(0.5, Quaternion::ONE, start);
        let step = MasterDelta { clutch: true, translation: Vector3::new(0.01, 0.0, 0.0), rotation: Quaternion::ONE };
        let t = m.apply(&step);
        assert!((t.translation - Vector3::new(0.005, 0.0, 0.0)).amax() < 1e-15);

        let idle = MasterDelta { clutch: false, ..step };
        let frozen = m.apply(&idle);
        assert_eq!(frozen, t);
        assert!((m.master_translation() - Vector3::new(0.02, 0.0, 0.0)).amax() < 1e-15);
    }

    #[test]
    fn relative_rotation_survives_reclutch() {
        let start = TaskTarget::new(Quaternion::ONE, Vector3::zeros());
        let mut m = TeleopMapping::new(1.0, Quaternion::ONE, start);
        let quarter = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        m.apply(&MasterDelta { clutch: true, translation: Vector3::zeros(), rotation: quarter });
        m.apply(&MasterDelta { clutch: false, translation: Vector3::zeros(), rotation: quarter.conj() });
        let t = m.apply(&MasterDelta::idle(true));
        assert!((t.rotation - quarter).norm() < 1e-12);
        // further master rotation after re-engaging composes on top
        let t = m.apply(&MasterDelta { clutch: true, translation: Vector3::zeros(), rotation: quarter });
        let half = Quaternion::from_axis_angle(&Vector3::z(), std::f64::consts::PI);
        assert!((t.rotation - half).norm() < 1e-12);
    }

    #[test]
    fn alignment_rotates_master_motion() {
        let a = Quaternion::from_axis_angle(&Vector3::z(), FRAC_PI_2);
        let mut m = TeleopMapping::new(1.0, a, TaskTarget::new(Quaternion::ONE, Vector3::zeros()));
        let t = m.apply(&MasterDelta { clutch: true, translation: Vector3::x(), rotation: Quaternion::ONE });
        assert!((t.translation - Vector3::y()).amax() < 1e-15);
        // slave stuck at the origin while the target moved to +y
        let back = m.master_error(&(-Vector3::y()));
        assert!((back - Vector3::x()).amax() < 1e-15);
    }

    #[test]
    fn delta_merge() {
        let a = MasterDelta { clutch: true, translation: Vector3::x(), rotation: Quaternion::ONE };
        let b = MasterDelta { clutch: false, translation: Vector3::y(), rotation: Quaternion::K };
        let c = a.then(&b);
        assert!(!c.clutch);
        assert_eq!(c.translation, Vector3::new(1.0, 1.0, 0.0));
        assert_eq!(c.rotation, Quaternion::K);
    }
}
