//! Control kernel for constrained multi-arm teleoperation.
//!
//! The slave side solves, every control tick, a quadratic program over the
//! stacked joint velocities of all arms: a weighted task-tracking objective
//! subject to linear velocity-damper inequalities that implement virtual
//! fixtures (vector field inequalities) and joint limits. The master side
//! reflects the slave tracking error as a Cartesian impedance force.

pub mod controller;
pub mod dq;
pub mod geometry;
pub mod impedance;
pub mod kinematics;
pub mod qp;
pub mod scene;
pub mod vfi;

pub use controller::{Controller, ControllerConfig, MasterDelta, StepOutput, TaskTarget, TeleopMapping};
pub use dq::{DualQuaternion, Quaternion};
pub use impedance::{master_force, ImpedanceConfig, ReflectedForce};
pub use kinematics::{Frame, JointState, RobotModel};
pub use qp::{QpProblem, QpSolution, QpSolver, QpStatus};
pub use scene::{Attachment, Motion, Primitive, Robot, Scene, SceneConstraint};
pub use vfi::{ConstraintRow, ConstraintSpec, JointLayout, Zone};
