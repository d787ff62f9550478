//! Robots, attached and world primitives, and the constraint pairs between
//! them. Evaluating a scene at `(q, t)` produces one [`DistanceResult`] per
//! constraint row.

use nalgebra::{DVector, Matrix3xX, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::DualQuaternion;
use crate::geometry::{
    self, cuboid_planes, DistanceResult, GeometryError, LineTrack, Plane, PlaneTrack, PluckerLine, PointTrack,
};
use crate::kinematics::{Frame, JointState, KinematicsError, RobotModel};
use crate::vfi::{ConstraintSpec, JointLayout, VfiError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SceneError {
    #[error(transparent)]
    Kinematics(#[from] KinematicsError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Vfi(#[from] VfiError),
    #[error("unknown robot index {0}")]
    UnknownRobot(usize),
    #[error("unknown primitive index {0}")]
    UnknownPrimitive(usize),
    #[error("constraint '{name}': no distance defined between {a} and {b}")]
    UnsupportedPair { name: String, a: &'static str, b: &'static str },
    #[error("robot '{robot}': model has {model} joints, state has {state}")]
    StateMismatch { robot: String, model: usize, state: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Robot {
    pub id: String,
    pub model: RobotModel,
    pub state: JointState,
}

/// Where a primitive lives.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Attachment {
    World,
    Robot { robot: usize, frame: Frame },
}

/// Prescribed motion of a world element, as a displacement `s(t)` with
/// analytic velocity `ṡ(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Motion {
    #[default]
    Static,
    Linear {
        velocity: Vector3<f64>,
    },
    /// `s(t) = amplitude · sin(2π f t)`.
    Oscillate {
        amplitude: Vector3<f64>,
        frequency: f64,
    },
}

impl Motion {
    pub fn displacement(&self, t: f64) -> Vector3<f64> {
        match *self {
            Motion::Static => Vector3::zeros(),
            Motion::Linear { velocity } => velocity * t,
            Motion::Oscillate { amplitude, frequency } => {
                amplitude * (2.0 * std::f64::consts::PI * frequency * t).sin()
            }
        }
    }

    pub fn velocity(&self, t: f64) -> Vector3<f64> {
        match *self {
            Motion::Static => Vector3::zeros(),
            Motion::Linear { velocity } => velocity,
            Motion::Oscillate { amplitude, frequency } => {
                let w = 2.0 * std::f64::consts::PI * frequency;
                amplitude * (w * (w * t).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Primitive {
    /// A point; `position` is in the attachment frame.
    Point { attach: Attachment, position: Vector3<f64>, motion: Motion },
    /// A line through `point` along `direction` (unit), in the attachment frame.
    Line { attach: Attachment, point: Vector3<f64>, direction: Vector3<f64>, motion: Motion },
    /// A world plane whose offset may change at `offset_rate`.
    Plane { plane: Plane, offset_rate: f64 },
    /// A world sphere; distances are taken to its centre.
    Sphere { center: Vector3<f64>, radius: f64, motion: Motion },
    /// A world box, expanding to its six inward-facing planes.
    Cuboid { pose: DualQuaternion, extents: Vector3<f64> },
}

impl Primitive {
    pub fn kind(&self) -> &'static str {
        match self {
            Primitive::Point { .. } => "point",
            Primitive::Line { .. } => "line",
            Primitive::Plane { .. } => "plane",
            Primitive::Sphere { .. } => "sphere",
            Primitive::Cuboid { .. } => "cuboid",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConstraint {
    pub name: String,
    pub pair: (usize, usize),
    pub spec: ConstraintSpec,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub robots: Vec<Robot>,
    pub primitives: Vec<Primitive>,
    pub constraints: Vec<SceneConstraint>,
}

/// One evaluated constraint row.
#[derive(Debug, Clone, PartialEq)]
pub struct EvaluatedConstraint {
    pub name: String,
    pub spec: ConstraintSpec,
    pub result: DistanceResult,
}

enum Track {
    Point(PointTrack),
    Line(LineTrack),
    Planes(Vec<PlaneTrack>),
}

impl Scene {
    pub fn layout(&self) -> JointLayout {
        JointLayout::new(&self.robots.iter().map(|r| r.model.dof()).collect::<Vec<_>>())
    }

    pub fn validate(&self) -> Result<(), SceneError> {
        for robot in &self.robots {
            robot.model.validate()?;
            if robot.model.dof() != robot.state.dof() {
                return Err(SceneError::StateMismatch {
                    robot: robot.id.clone(),
                    model: robot.model.dof(),
                    state: robot.state.dof(),
                });
            }
        }
        for prim in &self.primitives {
            match prim {
                Primitive::Point { attach, .. } | Primitive::Line { attach, .. } => {
                    if let Attachment::Robot { robot, frame } = attach {
                        let r = self.robots.get(*robot).ok_or(SceneError::UnknownRobot(*robot))?;
                        if let Frame::Link(k) = frame {
                            if *k > r.model.dof() {
                                return Err(KinematicsError::LinkOutOfRange { link: *k, joints: r.model.dof() }.into());
                            }
                        }
                    }
                    if let Primitive::Line { direction, .. } = prim {
                        PluckerLine::through(&Vector3::zeros(), direction)?;
                    }
                }
                Primitive::Sphere { center, radius, .. } => {
                    geometry::Sphere::new(*center, *radius)?;
                }
                Primitive::Cuboid { pose, extents } => {
                    cuboid_planes(pose, extents)?;
                }
                Primitive::Plane { .. } => {}
            }
        }
        for c in &self.constraints {
            c.spec.validate()?;
            for idx in [c.pair.0, c.pair.1] {
                if idx >= self.primitives.len() {
                    return Err(SceneError::UnknownPrimitive(idx));
                }
            }
            self.pair_rows(c)?;
        }
        Ok(())
    }

    /// Number of rows a constraint expands to.
    fn pair_rows(&self, c: &SceneConstraint) -> Result<usize, SceneError> {
        use Primitive::*;
        let (a, b) = (&self.primitives[c.pair.0], &self.primitives[c.pair.1]);
        let rows = match (a, b) {
            (Point { .. } | Sphere { .. }, Point { .. } | Sphere { .. }) => 1,
            (Line { .. }, Point { .. } | Sphere { .. } | Line { .. }) => 1,
            (Point { .. } | Sphere { .. }, Line { .. }) => 1,
            (Plane { .. }, Point { .. }) | (Point { .. }, Plane { .. }) => 1,
            (Cuboid { .. }, Point { .. }) | (Point { .. }, Cuboid { .. }) => 6,
            _ => {
                return Err(SceneError::UnsupportedPair { name: c.name.clone(), a: a.kind(), b: b.kind() });
            }
        };
        Ok(rows)
    }

    /// Row names in evaluation order (cuboids expand to `name[0]…name[5]`).
    pub fn row_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for c in &self.constraints {
            match self.pair_rows(c) {
                Ok(6) => names.extend((0..6).map(|i| format!("{}[{i}]", c.name))),
                _ => names.push(c.name.clone()),
            }
        }
        names
    }

    pub fn stacked_q(&self) -> DVector<f64> {
        let mut q = DVector::zeros(self.layout().total());
        let layout = self.layout();
        for (i, r) in self.robots.iter().enumerate() {
            q.rows_mut(layout.offset(i), r.state.dof()).copy_from(&r.state.q);
        }
        q
    }

    /// Explicit Euler step `q ← q + dt·q̇` on the stacked vector.
    pub fn integrate(&mut self, qdot: &DVector<f64>, dt: f64) {
        let layout = self.layout();
        for (i, r) in self.robots.iter_mut().enumerate() {
            let range = layout.range(i);
            r.state.q += qdot.rows(range.start, range.len()) * dt;
        }
    }

    fn track(&self, idx: usize, time: f64, layout: &JointLayout) -> Result<Track, SceneError> {
        let cols = layout.total();
        let prim = self.primitives.get(idx).ok_or(SceneError::UnknownPrimitive(idx))?;
        Ok(match prim {
            Primitive::Point { attach, position, motion } => match attach {
                Attachment::World => {
                    Track::Point(PointTrack::moving(position + motion.displacement(time), motion.velocity(time), cols))
                }
                Attachment::Robot { robot, frame } => {
                    let r = self.robots.get(*robot).ok_or(SceneError::UnknownRobot(*robot))?;
                    let (p, jp) = r.model.point_jacobian(r.state.q.as_slice(), *frame, position)?;
                    let mut jac = Matrix3xX::zeros(cols);
                    jac.columns_mut(layout.offset(*robot), r.model.dof()).copy_from(&jp);
                    Track::Point(PointTrack { position: p, jacobian: jac, velocity: Vector3::zeros() })
                }
            },
            Primitive::Line { attach, point, direction, motion } => match attach {
                Attachment::World => {
                    let p = point + motion.displacement(time);
                    let line = PluckerLine::through(&p, direction)?;
                    let mut track = LineTrack::fixed(line, cols);
                    track.moment_rate = motion.velocity(time).cross(&line.direction());
                    Track::Line(track)
                }
                Attachment::Robot { robot, frame } => {
                    let r = self.robots.get(*robot).ok_or(SceneError::UnknownRobot(*robot))?;
                    let dir = direction.normalize();
                    let (line, jl) = r.model.line_jacobian(r.state.q.as_slice(), *frame, &dir, point)?;
                    let local = LineTrack::from_line_jacobian(line, &jl);
                    let mut track = LineTrack::fixed(line, cols);
                    let off = layout.offset(*robot);
                    track.direction_jacobian.columns_mut(off, r.model.dof()).copy_from(&local.direction_jacobian);
                    track.moment_jacobian.columns_mut(off, r.model.dof()).copy_from(&local.moment_jacobian);
                    Track::Line(track)
                }
            },
            Primitive::Plane { plane, offset_rate } => {
                let moved = Plane::new(plane.normal(), plane.offset() + offset_rate * time)?;
                Track::Planes(vec![PlaneTrack {
                    plane: moved,
                    normal_rate: Vector3::zeros(),
                    offset_rate: *offset_rate,
                }])
            }
            Primitive::Sphere { center, motion, .. } => {
                Track::Point(PointTrack::moving(center + motion.displacement(time), motion.velocity(time), cols))
            }
            Primitive::Cuboid { pose, extents } => {
                Track::Planes(cuboid_planes(pose, extents)?.into_iter().map(PlaneTrack::fixed).collect())
            }
        })
    }

    /// Distances, Jacobians and residuals of every constraint row at `time`.
    pub fn evaluate(&self, time: f64) -> Result<Vec<EvaluatedConstraint>, SceneError> {
        let layout = self.layout();
        let mut out = Vec::with_capacity(self.constraints.len());
        for c in &self.constraints {
            let a = self.track(c.pair.0, time, &layout)?;
            let b = self.track(c.pair.1, time, &layout)?;
            let results = match (&a, &b) {
                (Track::Point(p), Track::Point(q)) => vec![geometry::point_point(p, q)?],
                (Track::Line(l), Track::Point(p)) | (Track::Point(p), Track::Line(l)) => {
                    vec![geometry::line_point(l, p)?]
                }
                (Track::Line(l1), Track::Line(l2)) => vec![geometry::line_line(l1, l2)?],
                (Track::Planes(ps), Track::Point(p)) | (Track::Point(p), Track::Planes(ps)) => {
                    ps.iter().map(|pl| geometry::plane_point(pl, p)).collect()
                }
                _ => {
                    let (ka, kb) = (self.primitives[c.pair.0].kind(), self.primitives[c.pair.1].kind());
                    return Err(SceneError::UnsupportedPair { name: c.name.clone(), a: ka, b: kb });
                }
            };
            let many = results.len() > 1;
            for (i, result) in results.into_iter().enumerate() {
                let name = if many { format!("{}[{i}]", c.name) } else { c.name.clone() };
                out.push(EvaluatedConstraint { name, spec: c.spec, result });
            }
        }
        Ok(out)
    }
}
