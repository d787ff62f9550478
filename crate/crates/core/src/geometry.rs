//! Geometric primitives and signed distance functions.
//!
//! Every distance is returned with its Jacobian `J_d` over the stacked joint
//! vector and the residual `ζ`, so that `ḋ = J_d q̇ + ζ`. Primitives are passed
//! as "tracks": the current value, its Jacobian over the stacked joints and the
//! rate contributed by scene motion (zero for static or purely robot-held
//! elements).

use nalgebra::{DMatrix, Matrix3xX, RowDVector, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dq::{skew, DualQuaternion, UNIT_TOL};

/// Below this distance a pair is treated as coincident and its Jacobian zeroed.
pub const DEGENERATE_DISTANCE: f64 = 1e-9;
/// Below this `‖l₁ × l₂‖` two lines are handled as parallel.
pub const PARALLEL_TOL: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("direction must be a unit vector (norm = {0})")]
    NonUnitDirection(f64),
    #[error("moment is not orthogonal to direction (<l, m> = {0:e})")]
    MomentNotOrthogonal(f64),
    #[error("cuboid extents must be positive, got {0:?}")]
    NonPositiveExtents([f64; 3]),
    #[error("sphere radius must be non-negative, got {0}")]
    NegativeRadius(f64),
    #[error("Jacobian column counts differ ({0} vs {1})")]
    ColumnMismatch(usize, usize),
}

/// Line with unit direction `l` and moment `m = p × l`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PluckerLine {
    l: Vector3<f64>,
    m: Vector3<f64>,
}

impl PluckerLine {
    pub fn new(l: Vector3<f64>, m: Vector3<f64>) -> Result<Self, GeometryError> {
        let n = l.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(GeometryError::NonUnitDirection(n));
        }
        let dot = l.dot(&m);
        if dot.abs() > UNIT_TOL {
            return Err(GeometryError::MomentNotOrthogonal(dot));
        }
        Ok(Self { l, m })
    }

    pub(crate) fn new_unchecked(l: Vector3<f64>, m: Vector3<f64>) -> Self {
        Self { l, m }
    }

    pub fn through(point: &Vector3<f64>, direction: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n = direction.norm();
        if n == 0.0 {
            return Err(GeometryError::NonUnitDirection(0.0));
        }
        let l = direction / n;
        Ok(Self { l, m: point.cross(&l) })
    }

    pub fn direction(&self) -> Vector3<f64> {
        self.l
    }

    pub fn moment(&self) -> Vector3<f64> {
        self.m
    }

    /// Foot of the perpendicular from the origin, `l × m`.
    pub fn closest_point_to_origin(&self) -> Vector3<f64> {
        self.l.cross(&self.m)
    }

    pub fn distance_to_point(&self, p: &Vector3<f64>) -> f64 {
        (p.cross(&self.l) - self.m).norm()
    }

    pub fn transformed(&self, pose: &DualQuaternion) -> Self {
        let l = pose.rotation().rotate(&self.l);
        let p = pose.transform_point(&self.closest_point_to_origin());
        Self { l, m: p.cross(&l) }
    }
}

/// Plane `{p : ⟨p, n⟩ = offset}`; signed distance is positive on the side `n`
/// points to.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Plane {
    normal: Vector3<f64>,
    offset: f64,
}

impl Plane {
    pub fn new(normal: Vector3<f64>, offset: f64) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if (n - 1.0).abs() > UNIT_TOL {
            return Err(GeometryError::NonUnitDirection(n));
        }
        Ok(Self { normal, offset })
    }

    pub fn through(point: &Vector3<f64>, normal: &Vector3<f64>) -> Result<Self, GeometryError> {
        let n = normal.norm();
        if n == 0.0 {
            return Err(GeometryError::NonUnitDirection(0.0));
        }
        let normal = normal / n;
        Ok(Self { normal, offset: point.dot(&normal) })
    }

    pub fn normal(&self) -> Vector3<f64> {
        self.normal
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn signed_distance(&self, p: &Vector3<f64>) -> f64 {
        p.dot(&self.normal) - self.offset
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sphere {
    pub center: Vector3<f64>,
    pub radius: f64,
}

impl Sphere {
    pub fn new(center: Vector3<f64>, radius: f64) -> Result<Self, GeometryError> {
        if !(radius >= 0.0) {
            return Err(GeometryError::NegativeRadius(radius));
        }
        Ok(Self { center, radius })
    }
}

/// The six faces of a box with full side lengths `extents`, centred at
/// `center` and aligned with its rotation. Normals point inward, so the signed
/// distance of an interior point is positive for every face.
pub fn cuboid_planes(center: &DualQuaternion, extents: &Vector3<f64>) -> Result<[Plane; 6], GeometryError> {
    if !extents.iter().all(|&e| e > 0.0) {
        return Err(GeometryError::NonPositiveExtents([extents[0], extents[1], extents[2]]));
    }
    let r = center.rotation();
    let c = center.translation();
    let mut planes = [Plane { normal: Vector3::z(), offset: 0.0 }; 6];
    for axis in 0..3 {
        let u = r.rotate(&Vector3::ith(axis, 1.0));
        let half = 0.5 * extents[axis];
        // face at c - half·u faces +u, face at c + half·u faces -u
        planes[2 * axis] = Plane { normal: u, offset: (c - u * half).dot(&u) };
        planes[2 * axis + 1] = Plane { normal: -u, offset: (c + u * half).dot(&-u) };
    }
    Ok(planes)
}

/// A point with its 3×N Jacobian and scene-motion velocity.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTrack {
    pub position: Vector3<f64>,
    pub jacobian: Matrix3xX<f64>,
    pub velocity: Vector3<f64>,
}

impl PointTrack {
    pub fn fixed(position: Vector3<f64>, columns: usize) -> Self {
        Self::moving(position, Vector3::zeros(), columns)
    }

    pub fn moving(position: Vector3<f64>, velocity: Vector3<f64>, columns: usize) -> Self {
        Self { position, jacobian: Matrix3xX::zeros(columns), velocity }
    }

    /// `[J | v]`, 3×(N+1).
    fn augmented(&self) -> Matrix3xX<f64> {
        augment(&self.jacobian, &self.velocity)
    }
}

/// A line with Jacobians of its direction and moment (3×N each) and their
/// scene-motion rates.
#[derive(Debug, Clone, PartialEq)]
pub struct LineTrack {
    pub line: PluckerLine,
    pub direction_jacobian: Matrix3xX<f64>,
    pub moment_jacobian: Matrix3xX<f64>,
    pub direction_rate: Vector3<f64>,
    pub moment_rate: Vector3<f64>,
}

impl LineTrack {
    pub fn fixed(line: PluckerLine, columns: usize) -> Self {
        Self {
            line,
            direction_jacobian: Matrix3xX::zeros(columns),
            moment_jacobian: Matrix3xX::zeros(columns),
            direction_rate: Vector3::zeros(),
            moment_rate: Vector3::zeros(),
        }
    }

    /// From the 8-row line Jacobian `[vec4 l; vec4 m]` produced by kinematics.
    pub fn from_line_jacobian(line: PluckerLine, jacobian: &DMatrix<f64>) -> Self {
        Self {
            line,
            direction_jacobian: jacobian.fixed_rows::<3>(1).into_owned(),
            moment_jacobian: jacobian.fixed_rows::<3>(5).into_owned(),
            direction_rate: Vector3::zeros(),
            moment_rate: Vector3::zeros(),
        }
    }

    fn augmented(&self) -> (Matrix3xX<f64>, Matrix3xX<f64>) {
        (augment(&self.direction_jacobian, &self.direction_rate), augment(&self.moment_jacobian, &self.moment_rate))
    }
}

/// A plane owned by the scene, possibly moving.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlaneTrack {
    pub plane: Plane,
    pub normal_rate: Vector3<f64>,
    pub offset_rate: f64,
}

impl PlaneTrack {
    pub fn fixed(plane: Plane) -> Self {
        Self { plane, normal_rate: Vector3::zeros(), offset_rate: 0.0 }
    }
}

/// `d`, `J_d` (1×N) and `ζ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceResult {
    pub distance: f64,
    pub jacobian: RowDVector<f64>,
    pub residual: f64,
    /// Set when the primitives coincide and the gradient is undefined.
    pub degenerate: bool,
}

impl DistanceResult {
    fn from_augmented(distance: f64, row: RowDVector<f64>) -> Self {
        let n = row.len() - 1;
        Self { distance, jacobian: row.columns(0, n).into_owned(), residual: row[n], degenerate: false }
    }

    fn coincident(columns: usize) -> Self {
        Self { distance: 0.0, jacobian: RowDVector::zeros(columns), residual: 0.0, degenerate: true }
    }

    /// Predicted `ḋ` for the joint velocity `qdot`.
    pub fn rate(&self, qdot: &nalgebra::DVector<f64>) -> f64 {
        (&self.jacobian * qdot)[0] + self.residual
    }
}

fn augment(jacobian: &Matrix3xX<f64>, rate: &Vector3<f64>) -> Matrix3xX<f64> {
    let n = jacobian.ncols();
    let mut out = Matrix3xX::zeros(n + 1);
    out.columns_mut(0, n).copy_from(jacobian);
    out.set_column(n, rate);
    out
}

fn check_columns(a: usize, b: usize) -> Result<(), GeometryError> {
    if a != b {
        return Err(GeometryError::ColumnMismatch(a, b));
    }
    Ok(())
}

/// Euclidean distance between two points.
pub fn point_point(a: &PointTrack, b: &PointTrack) -> Result<DistanceResult, GeometryError> {
    check_columns(a.jacobian.ncols(), b.jacobian.ncols())?;
    let u = a.position - b.position;
    let d = u.norm();
    if d < DEGENERATE_DISTANCE {
        return Ok(DistanceResult::coincident(a.jacobian.ncols()));
    }
    let row = u.transpose() * (a.augmented() - b.augmented()) / d;
    Ok(DistanceResult::from_augmented(d, RowDVector::from_iterator(row.len(), row.iter().copied())))
}

/// Distance from a point to a line, `‖p × l − m‖`.
pub fn line_point(line: &LineTrack, point: &PointTrack) -> Result<DistanceResult, GeometryError> {
    check_columns(line.direction_jacobian.ncols(), point.jacobian.ncols())?;
    let (l, m) = (line.line.l, line.line.m);
    let p = point.position;
    let u = p.cross(&l) - m;
    let d = u.norm();
    if d < DEGENERATE_DISTANCE {
        return Ok(DistanceResult::coincident(point.jacobian.ncols()));
    }
    let (dl, dm) = line.augmented();
    // u̇ = −[l]× ṗ + [p]× l̇ − ṁ
    let du = -skew(&l) * point.augmented() + skew(&p) * dl - dm;
    let row = u.transpose() * du / d;
    Ok(DistanceResult::from_augmented(d, RowDVector::from_iterator(row.len(), row.iter().copied())))
}

/// Common-perpendicular distance between two lines, falling back to the
/// point-to-line distance when they are parallel.
pub fn line_line(a: &LineTrack, b: &LineTrack) -> Result<DistanceResult, GeometryError> {
    let cols = a.direction_jacobian.ncols();
    check_columns(cols, b.direction_jacobian.ncols())?;
    let (l1, m1) = (a.line.l, a.line.m);
    let (l2, m2) = (b.line.l, b.line.m);
    let c = l1.cross(&l2);
    let sin = c.norm();
    if sin < PARALLEL_TOL {
        // closest point of b to the origin, p₂ = l₂ × m₂, tracked through b's motion
        let (dl2, dm2) = b.augmented();
        let dp = -skew(&m2) * dl2 + skew(&l2) * dm2;
        let n = dp.ncols() - 1;
        let point = PointTrack {
            position: l2.cross(&m2),
            jacobian: dp.columns(0, n).into_owned(),
            velocity: dp.column(n).into_owned(),
        };
        return line_point(a, &point);
    }
    let s = l1.dot(&m2) + l2.dot(&m1);
    let d = s.abs() / sin;
    if d < DEGENERATE_DISTANCE {
        return Ok(DistanceResult::coincident(cols));
    }
    let (dl1, dm1) = a.augmented();
    let (dl2, dm2) = b.augmented();
    let ds = m2.transpose() * &dl1 + l1.transpose() * &dm2 + m1.transpose() * &dl2 + l2.transpose() * &dm1;
    let dc = -skew(&l2) * &dl1 + skew(&l1) * &dl2;
    let dsin = c.transpose() * dc / sin;
    let row = ds * (s.signum() / sin) - dsin * (s.abs() / (sin * sin));
    Ok(DistanceResult::from_augmented(d, RowDVector::from_iterator(row.len(), row.iter().copied())))
}

/// Signed distance of a point from a plane.
pub fn plane_point(plane: &PlaneTrack, point: &PointTrack) -> DistanceResult {
    let n = plane.plane.normal;
    let p = point.position;
    let d = plane.plane.signed_distance(&p);
    let mut row = n.transpose() * point.augmented();
    let last = row.ncols() - 1;
    row[last] += plane.normal_rate.dot(&p) - plane.offset_rate;
    DistanceResult::from_augmented(d, RowDVector::from_iterator(row.len(), row.iter().copied()))
}
