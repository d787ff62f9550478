//! Scenario and robot model files.
//!
//! Both are JSON documents carrying a `schema_version`. A scenario names its
//! robots (with an inline model or a path to a model file, relative to the
//! scenario), the geometric primitives, the constraint pairs between them,
//! the controller and impedance gains and, optionally, a master script.

use std::fmt;
use std::path::{Path, PathBuf};

use nalgebra::{DVector, Vector3};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use teleop_core::geometry::Plane;
use teleop_core::kinematics::{DhJoint, JointKind};
use teleop_core::{
    Attachment, ConstraintSpec, ControllerConfig, DualQuaternion, Frame, ImpedanceConfig, JointState, Motion,
    Primitive, Quaternion, Robot, RobotModel, Scene, SceneConstraint, TaskTarget, Zone,
};
use thiserror::Error;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("{file}: {source}")]
    Io { file: PathBuf, source: std::io::Error },
    #[error("{file}:{line}:{column}: {field}: {message}")]
    Parse { file: PathBuf, line: usize, column: usize, field: String, message: String },
    #[error("{file}: {field}: {message}")]
    Invalid { file: PathBuf, field: String, message: String },
}

impl ScenarioError {
    /// Dotted path of the offending field, when known.
    pub fn field(&self) -> Option<&str> {
        match self {
            ScenarioError::Parse { field, .. } | ScenarioError::Invalid { field, .. } => Some(field),
            ScenarioError::Io { .. } => None,
        }
    }
}

fn parse<T: DeserializeOwned>(file: &Path, bytes: &[u8]) -> Result<T, ScenarioError> {
    let de = &mut serde_json::Deserializer::from_slice(bytes);
    serde_path_to_error::deserialize(de).map_err(|err| {
        let field = err.path().to_string();
        let inner = err.into_inner();
        ScenarioError::Parse {
            file: file.to_path_buf(),
            line: inner.line(),
            column: inner.column(),
            field,
            message: strip_position(&inner.to_string()),
        }
    })
}

fn strip_position(msg: &str) -> String {
    match msg.rfind(" at line ") {
        Some(i) => msg[..i].to_string(),
        None => msg.to_string(),
    }
}

/// Rigid transform as written in files: `{"translation": [..], "rotation": [w, x, y, z]}`
/// or `{"translation": [..], "axis": [..], "angle": rad}`.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoseEntry {
    #[serde(default)]
    pub translation: [f64; 3],
    #[serde(default)]
    pub rotation: Option<[f64; 4]>,
    #[serde(default)]
    pub axis: Option<[f64; 3]>,
    #[serde(default)]
    pub angle: Option<f64>,
}

impl PoseEntry {
    fn rotation(&self) -> Result<Quaternion, String> {
        match (self.rotation, self.axis, self.angle) {
            (Some(_), Some(_), _) | (Some(_), _, Some(_)) => Err("give either `rotation` or `axis`/`angle`".into()),
            (Some([w, x, y, z]), None, None) => {
                let q = Quaternion::new(w, x, y, z);
                if (q.norm() - 1.0).abs() > 1e-6 {
                    return Err(format!("rotation must be a unit quaternion, norm is {}", q.norm()));
                }
                Ok(q.normalize())
            }
            (None, Some(axis), Some(angle)) => {
                let axis = Vector3::from(axis);
                if axis.norm() < 1e-12 {
                    return Err("axis must be non-zero".into());
                }
                Ok(Quaternion::from_axis_angle(&axis.normalize(), angle))
            }
            (None, Some(_), None) | (None, None, Some(_)) => Err("`axis` and `angle` go together".into()),
            (None, None, None) => Ok(Quaternion::ONE),
        }
    }

    fn to_dq(&self) -> Result<DualQuaternion, String> {
        Ok(DualQuaternion::from_rt(self.rotation()?, &Vector3::from(self.translation)))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub name: String,
    /// Rows `[θ, d, a, α, "revolute" | "prismatic"]`.
    pub dh: Vec<(f64, f64, f64, f64, JointKind)>,
    #[serde(default)]
    pub base: PoseEntry,
    #[serde(default)]
    pub effector: PoseEntry,
    #[serde(default)]
    pub forceps_joints: usize,
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qdot_max: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
enum ModelRef {
    Path(String),
    Inline(Box<ModelFile>),
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct RobotEntry {
    id: String,
    model: ModelRef,
    /// Replaces the model's base pose.
    #[serde(default)]
    base: Option<PoseEntry>,
    q: Vec<f64>,
    #[serde(default)]
    q_min: Option<Vec<f64>>,
    #[serde(default)]
    q_max: Option<Vec<f64>>,
    #[serde(default)]
    qdot_max: Option<Vec<f64>>,
    /// Rotation from the master base to this robot's base.
    #[serde(default)]
    alignment: Option<PoseEntry>,
    /// Initial task target; defaults to the initial effector pose.
    #[serde(default)]
    target: Option<PoseEntry>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
enum PrimitiveEntry {
    Point {
        id: String,
        attached_to: String,
        #[serde(default)]
        frame: Frame,
        #[serde(default)]
        position: [f64; 3],
        #[serde(default)]
        motion: Motion,
    },
    Line {
        id: String,
        attached_to: String,
        #[serde(default)]
        frame: Frame,
        #[serde(default)]
        point: [f64; 3],
        direction: [f64; 3],
        #[serde(default)]
        motion: Motion,
    },
    Plane {
        id: String,
        normal: [f64; 3],
        offset: f64,
        #[serde(default)]
        offset_rate: f64,
    },
    Sphere {
        id: String,
        center: [f64; 3],
        radius: f64,
        #[serde(default)]
        motion: Motion,
    },
    Cuboid {
        id: String,
        #[serde(default)]
        pose: PoseEntry,
        extents: [f64; 3],
    },
}

impl PrimitiveEntry {
    fn id(&self) -> &str {
        match self {
            PrimitiveEntry::Point { id, .. }
            | PrimitiveEntry::Line { id, .. }
            | PrimitiveEntry::Plane { id, .. }
            | PrimitiveEntry::Sphere { id, .. }
            | PrimitiveEntry::Cuboid { id, .. } => id,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConstraintEntry {
    name: String,
    pair: [String; 2],
    zone: Zone,
    d_safe: f64,
    #[serde(default)]
    d_safe_rate: f64,
    /// Defaults to the controller's `eta_d`.
    #[serde(default)]
    eta_d: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StreamConfig {
    /// State frames per second sent to live clients.
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
}

fn default_frame_rate() -> f64 {
    50.0
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self { frame_rate: default_frame_rate() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    schema_version: u32,
    name: String,
    #[serde(default)]
    description: String,
    duration: f64,
    #[serde(default)]
    seed: u64,
    controller: ControllerConfig,
    impedance: ImpedanceConfig,
    robots: Vec<RobotEntry>,
    #[serde(default)]
    primitives: Vec<PrimitiveEntry>,
    #[serde(default)]
    constraints: Vec<ConstraintEntry>,
    #[serde(default)]
    script: Option<String>,
    #[serde(default)]
    stream: StreamConfig,
}

/// A fully resolved scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub name: String,
    pub description: String,
    pub duration: f64,
    pub seed: u64,
    pub controller: ControllerConfig,
    pub impedance: ImpedanceConfig,
    pub scene: Scene,
    /// Primitive ids, index-aligned with `scene.primitives`.
    pub primitive_ids: Vec<String>,
    /// Master-to-slave rotation per robot.
    pub alignments: Vec<Quaternion>,
    pub initial_targets: Vec<TaskTarget>,
    pub script: Option<PathBuf>,
    pub stream: StreamConfig,
    pub source: PathBuf,
}

/// A non-fatal finding about a loaded scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct Warning {
    pub field: String,
    pub message: String,
}

impl fmt::Display for Warning {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io { file: path.to_path_buf(), source })?;
    scenario_from_bytes(&bytes, path)
}

/// Parse scenario bytes; relative paths resolve against `origin`'s directory.
pub fn scenario_from_bytes(bytes: &[u8], origin: &Path) -> Result<Scenario, ScenarioError> {
    let file: ScenarioFile = parse(origin, bytes)?;
    Resolver { file: origin, dir: origin.parent().unwrap_or(Path::new(".")) }.scenario(file)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(RobotModel, JointLimits), ScenarioError> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|source| ScenarioError::Io { file: path.to_path_buf(), source })?;
    let model: ModelFile = parse(path, &bytes)?;
    model_from_file(&model, path, "")
}

/// Box limits and velocity caps shipped with a model.
#[derive(Debug, Clone, PartialEq)]
pub struct JointLimits {
    pub q_min: Vec<f64>,
    pub q_max: Vec<f64>,
    pub qdot_max: Vec<f64>,
}

fn model_from_file(m: &ModelFile, file: &Path, prefix: &str) -> Result<(RobotModel, JointLimits), ScenarioError> {
    let invalid = |field: &str, message: String| ScenarioError::Invalid {
        file: file.to_path_buf(),
        field: format!("{prefix}{field}"),
        message,
    };
    if m.schema_version != SCHEMA_VERSION {
        return Err(invalid(
            "schema_version",
            format!("unsupported version {}, expected {SCHEMA_VERSION}", m.schema_version),
        ));
    }
    let joints = m.dh.iter().map(|&(theta, d, a, alpha, kind)| DhJoint { theta, d, a, alpha, kind }).collect();
    let mut model = RobotModel::new(m.name.clone(), joints);
    model.base = m.base.to_dq().map_err(|e| invalid("base", e))?;
    model.effector = m.effector.to_dq().map_err(|e| invalid("effector", e))?;
    model.forceps_joints = m.forceps_joints;
    model.validate().map_err(|e| invalid("dh", e.to_string()))?;
    if m.forceps_joints > model.dof() {
        return Err(invalid("forceps_joints", format!("exceeds the {} joints of the model", model.dof())));
    }
    for (name, v) in [("q_min", &m.q_min), ("q_max", &m.q_max), ("qdot_max", &m.qdot_max)] {
        if v.len() != model.dof() {
            return Err(invalid(name, format!("has {} entries, model has {} joints", v.len(), model.dof())));
        }
    }
    let limits = JointLimits { q_min: m.q_min.clone(), q_max: m.q_max.clone(), qdot_max: m.qdot_max.clone() };
    Ok((model, limits))
}

struct Resolver<'a> {
    file: &'a Path,
    dir: &'a Path,
}

impl Resolver<'_> {
    fn invalid(&self, field: impl Into<String>, message: impl Into<String>) -> ScenarioError {
        ScenarioError::Invalid { file: self.file.to_path_buf(), field: field.into(), message: message.into() }
    }

    fn scenario(&self, f: ScenarioFile) -> Result<Scenario, ScenarioError> {
        if f.schema_version != SCHEMA_VERSION {
            return Err(self.invalid(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", f.schema_version),
            ));
        }
        if !(f.duration > 0.0 && f.duration.is_finite()) {
            return Err(self.invalid("duration", format!("must be positive, got {}", f.duration)));
        }
        f.controller.validate().map_err(|e| self.invalid("controller", e.to_string()))?;
        f.impedance.validate().map_err(|e| self.invalid("impedance", e.to_string()))?;
        if !(f.stream.frame_rate > 0.0) {
            return Err(self.invalid("stream.frame_rate", "must be positive"));
        }
        if f.robots.is_empty() {
            return Err(self.invalid("robots", "at least one robot is required"));
        }

        let mut robots = Vec::new();
        let mut alignments = Vec::new();
        let mut targets = Vec::new();
        for (i, entry) in f.robots.iter().enumerate() {
            let field = |name: &str| format!("robots[{i}].{name}");
            if robots.iter().any(|r: &Robot| r.id == entry.id) {
                return Err(self.invalid(field("id"), format!("duplicate robot id '{}'", entry.id)));
            }
            let (mut model, limits) = match &entry.model {
                ModelRef::Path(p) => load_model(self.dir.join(p)).map_err(|e| match e {
                    ScenarioError::Io { source, .. } => {
                        self.invalid(field("model"), format!("cannot read model file '{p}': {source}"))
                    }
                    other => other,
                })?,
                ModelRef::Inline(m) => model_from_file(m, self.file, &field("model."))?,
            };
            if let Some(base) = &entry.base {
                model.base = base.to_dq().map_err(|e| self.invalid(field("base"), e))?;
            }
            let n = model.dof();
            let vector = |name: &str, given: &Option<Vec<f64>>, default: &[f64]| {
                let v = given.clone().unwrap_or_else(|| default.to_vec());
                if v.len() != n {
                    return Err(self.invalid(field(name), format!("has {} entries, model has {n} joints", v.len())));
                }
                Ok(DVector::from_vec(v))
            };
            let q = vector("q", &Some(entry.q.clone()), &[])?;
            let q_min = vector("q_min", &entry.q_min, &limits.q_min)?;
            let q_max = vector("q_max", &entry.q_max, &limits.q_max)?;
            let qdot_max = vector("qdot_max", &entry.qdot_max, &limits.qdot_max)?;
            let state =
                JointState::new(q, q_min, q_max, qdot_max).map_err(|e| self.invalid(field("q"), e.to_string()))?;
            if !state.within_limits() {
                return Err(self.invalid(field("q"), "initial configuration lies outside [q_min, q_max]"));
            }
            let alignment = match &entry.alignment {
                Some(a) => a.rotation().map_err(|e| self.invalid(field("alignment"), e))?,
                None => Quaternion::ONE,
            };
            let x = model.fkm(state.q.as_slice()).map_err(|e| self.invalid(field("q"), e.to_string()))?;
            let target = match &entry.target {
                Some(t) => {
                    let r = if t.rotation.is_none() && t.axis.is_none() {
                        x.rotation()
                    } else {
                        t.rotation().map_err(|e| self.invalid(field("target"), e))?
                    };
                    TaskTarget::new(r, Vector3::from(t.translation))
                }
                None => TaskTarget::new(x.rotation(), x.translation()),
            };
            robots.push(Robot { id: entry.id.clone(), model, state });
            alignments.push(alignment);
            targets.push(target);
        }

        let robot_index = |name: &str, field: String| {
            robots
                .iter()
                .position(|r| r.id == name)
                .ok_or_else(|| self.invalid(field, format!("unknown robot '{name}'")))
        };
        let attachment = |attached_to: &str, frame: Frame, i: usize| -> Result<Attachment, ScenarioError> {
            if attached_to == "world" {
                return Ok(Attachment::World);
            }
            let robot = robot_index(attached_to, format!("primitives[{i}].attached_to"))?;
            if let Frame::Link(k) = frame {
                if k > robots[robot].model.dof() {
                    return Err(self.invalid(
                        format!("primitives[{i}].frame"),
                        format!("link {k} exceeds the {} joints of '{attached_to}'", robots[robot].model.dof()),
                    ));
                }
            }
            Ok(Attachment::Robot { robot, frame })
        };

        let mut primitives = Vec::new();
        let mut ids: Vec<String> = Vec::new();
        for (i, entry) in f.primitives.iter().enumerate() {
            if ids.iter().any(|id| id == entry.id()) {
                return Err(
                    self.invalid(format!("primitives[{i}].id"), format!("duplicate primitive id '{}'", entry.id()))
                );
            }
            let prim = match entry {
                PrimitiveEntry::Point { attached_to, frame, position, motion, .. } => Primitive::Point {
                    attach: attachment(attached_to, *frame, i)?,
                    position: Vector3::from(*position),
                    motion: *motion,
                },
                PrimitiveEntry::Line { attached_to, frame, point, direction, motion, .. } => {
                    let dir = Vector3::from(*direction);
                    if (dir.norm() - 1.0).abs() > 1e-9 {
                        return Err(self.invalid(
                            format!("primitives[{i}].direction"),
                            format!("must be a unit vector, norm is {}", dir.norm()),
                        ));
                    }
                    Primitive::Line {
                        attach: attachment(attached_to, *frame, i)?,
                        point: Vector3::from(*point),
                        direction: dir,
                        motion: *motion,
                    }
                }
                PrimitiveEntry::Plane { normal, offset, offset_rate, .. } => Primitive::Plane {
                    plane: Plane::new(Vector3::from(*normal), *offset)
                        .map_err(|e| self.invalid(format!("primitives[{i}].normal"), e.to_string()))?,
                    offset_rate: *offset_rate,
                },
                PrimitiveEntry::Sphere { center, radius, motion, .. } => {
                    if !(*radius >= 0.0) {
                        return Err(self.invalid(format!("primitives[{i}].radius"), "must be non-negative"));
                    }
                    Primitive::Sphere { center: Vector3::from(*center), radius: *radius, motion: *motion }
                }
                PrimitiveEntry::Cuboid { pose, extents, .. } => Primitive::Cuboid {
                    pose: pose.to_dq().map_err(|e| self.invalid(format!("primitives[{i}].pose"), e))?,
                    extents: Vector3::from(*extents),
                },
            };
            primitives.push(prim);
            ids.push(entry.id().to_string());
        }

        let mut constraints = Vec::new();
        for (i, c) in f.constraints.iter().enumerate() {
            let lookup = |k: usize| {
                ids.iter().position(|id| *id == c.pair[k]).ok_or_else(|| {
                    self.invalid(format!("constraints[{i}].pair[{k}]"), format!("unknown primitive '{}'", c.pair[k]))
                })
            };
            let pair = (lookup(0)?, lookup(1)?);
            let spec = ConstraintSpec {
                zone: c.zone,
                d_safe: c.d_safe,
                d_safe_rate: c.d_safe_rate,
                eta_d: c.eta_d.unwrap_or(f.controller.eta_d),
            };
            spec.validate().map_err(|e| self.invalid(format!("constraints[{i}]"), e.to_string()))?;
            constraints.push(SceneConstraint { name: c.name.clone(), pair, spec });
        }

        let scene = Scene { robots, primitives, constraints };
        scene.validate().map_err(|e| self.invalid("constraints", e.to_string()))?;

        Ok(Scenario {
            name: f.name,
            description: f.description,
            duration: f.duration,
            seed: f.seed,
            controller: f.controller,
            impedance: f.impedance,
            scene,
            primitive_ids: ids,
            alignments,
            initial_targets: targets,
            script: f.script.map(|s| self.dir.join(s)),
            stream: f.stream,
            source: self.file.to_path_buf(),
        })
    }
}

impl Scenario {
    /// Constraint rows that start on the wrong side of their boundary.
    pub fn warnings(&self) -> Vec<Warning> {
        let mut out = Vec::new();
        match self.scene.evaluate(0.0) {
            Ok(rows) => {
                for row in rows {
                    let err = row.spec.distance_error(row.result.distance);
                    if err < 0.0 {
                        out.push(Warning {
                            field: format!("constraints.{}", row.name),
                            message: format!(
                                "starts violated: d = {:.6}, d_safe = {:.6}",
                                row.result.distance, row.spec.d_safe
                            ),
                        });
                    }
                    if row.result.degenerate {
                        out.push(Warning {
                            field: format!("constraints.{}", row.name),
                            message: "primitives coincide at start; gradient undefined".into(),
                        });
                    }
                }
            }
            Err(e) => out.push(Warning { field: "constraints".into(), message: e.to_string() }),
        }
        out
    }

    pub fn sampling_time(&self) -> f64 {
        self.controller.sampling_time
    }

    pub fn ticks(&self) -> u64 {
        ticks_for(self.duration, self.controller.sampling_time)
    }

    pub fn robot_ids(&self) -> Vec<String> {
        self.scene.robots.iter().map(|r| r.id.clone()).collect()
    }
}

/// Number of ticks covering `duration` at period `ts`.
pub fn ticks_for(duration: f64, ts: f64) -> u64 {
    (duration / ts - 1e-9).ceil().max(0.0) as u64
}
