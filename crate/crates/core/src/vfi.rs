//! Vector field inequalities: turn distances into linear rows of `W q̇ ≼ w`.
//!
//! With `d̃ = d − d_safe` (restricted zone) or `d̃ = d_safe − d` (safe zone), each
//! row enforces the velocity damper `d̃̇ ≥ −η_d d̃`.

use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::DistanceResult;
use crate::kinematics::JointState;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VfiError {
    #[error("row has {got} columns, layout has {expected}")]
    LayoutMismatch { expected: usize, got: usize },
    #[error("robot index {0} not in layout")]
    UnknownRobot(usize),
    #[error("invalid constraint: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Zone {
    /// Keep the distance above `d_safe`.
    Restricted,
    /// Keep the distance below `d_safe`.
    Safe,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSpec {
    pub zone: Zone,
    pub d_safe: f64,
    /// `ḋ_safe`, for safe distances that change over time.
    #[serde(default)]
    pub d_safe_rate: f64,
    pub eta_d: f64,
}

impl ConstraintSpec {
    pub fn restricted(d_safe: f64, eta_d: f64) -> Self {
        Self { zone: Zone::Restricted, d_safe, d_safe_rate: 0.0, eta_d }
    }

    pub fn safe(d_safe: f64, eta_d: f64) -> Self {
        Self { zone: Zone::Safe, d_safe, d_safe_rate: 0.0, eta_d }
    }

    pub fn validate(&self) -> Result<(), VfiError> {
        if !(self.d_safe >= 0.0) || !self.d_safe.is_finite() {
            return Err(VfiError::Invalid(format!("d_safe must be >= 0, got {}", self.d_safe)));
        }
        if !(self.eta_d >= 0.0) || !self.eta_d.is_finite() {
            return Err(VfiError::Invalid(format!("eta_d must be >= 0, got {}", self.eta_d)));
        }
        if !self.d_safe_rate.is_finite() {
            return Err(VfiError::Invalid("d_safe_rate must be finite".into()));
        }
        Ok(())
    }

    /// Distance error `d̃` for this zone type.
    pub fn distance_error(&self, distance: f64) -> f64 {
        match self.zone {
            Zone::Restricted => distance - self.d_safe,
            Zone::Safe => self.d_safe - distance,
        }
    }

    pub fn row(&self, res: &DistanceResult) -> ConstraintRow {
        match self.zone {
            Zone::Restricted => restricted_zone_row(res, self),
            Zone::Safe => safe_zone_row(res, self),
        }
    }
}

/// One inequality `coeffs · q̇ ≤ bound`.
#[derive(Debug, Clone, PartialEq)]
pub struct ConstraintRow {
    pub coeffs: RowDVector<f64>,
    pub bound: f64,
}

impl ConstraintRow {
    pub fn new(coeffs: RowDVector<f64>, bound: f64) -> Self {
        Self { coeffs, bound }
    }

    /// `bound − coeffs · q̇`; non-negative when satisfied.
    pub fn slack(&self, qdot: &DVector<f64>) -> f64 {
        self.bound - self.coeffs.dot(&qdot.transpose())
    }
}

/// `−J_d q̇ ≤ η_d d̃ + ζ_safe`, `ζ_safe = ζ − ḋ_safe`.
pub fn restricted_zone_row(res: &DistanceResult, spec: &ConstraintSpec) -> ConstraintRow {
    let d_err = res.distance - spec.d_safe;
    let zeta_safe = res.residual - spec.d_safe_rate;
    ConstraintRow::new(-&res.jacobian, spec.eta_d * d_err + zeta_safe)
}

/// `J_d q̇ ≤ η_d d̃ − ζ_safe`.
pub fn safe_zone_row(res: &DistanceResult, spec: &ConstraintSpec) -> ConstraintRow {
    let d_err = spec.d_safe - res.distance;
    let zeta_safe = res.residual - spec.d_safe_rate;
    ConstraintRow::new(res.jacobian.clone(), spec.eta_d * d_err - zeta_safe)
}

/// Joint-limit dampers `−q̇ᵢ ≤ η_q (qᵢ − q_min,ᵢ)`, `q̇ᵢ ≤ η_q (q_max,ᵢ − qᵢ)`
/// followed by the velocity caps `±q̇ᵢ ≤ q̇_max,ᵢ`, in the robot's local columns.
/// Outside the box the damper bounds turn negative and push back inside.
pub fn joint_limit_rows(state: &JointState, eta_q: f64) -> Vec<ConstraintRow> {
    let n = state.dof();
    let mut rows = Vec::with_capacity(4 * n);
    let unit = |i: usize, s: f64| {
        let mut c = RowDVector::zeros(n);
        c[i] = s;
        c
    };
    for i in 0..n {
        rows.push(ConstraintRow::new(unit(i, -1.0), eta_q * (state.q[i] - state.q_min[i])));
        rows.push(ConstraintRow::new(unit(i, 1.0), eta_q * (state.q_max[i] - state.q[i])));
    }
    for i in 0..n {
        rows.push(ConstraintRow::new(unit(i, 1.0), state.qdot_max[i]));
        rows.push(ConstraintRow::new(unit(i, -1.0), state.qdot_max[i]));
    }
    rows
}

/// Placement of each robot's joints in the stacked velocity vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointLayout {
    offsets: Vec<usize>,
    sizes: Vec<usize>,
}

impl JointLayout {
    pub fn new(sizes: &[usize]) -> Self {
        let mut offsets = Vec::with_capacity(sizes.len());
        let mut acc = 0;
        for &s in sizes {
            offsets.push(acc);
            acc += s;
        }
        Self { offsets, sizes: sizes.to_vec() }
    }

    pub fn total(&self) -> usize {
        self.offsets.last().map_or(0, |o| o + self.sizes.last().unwrap())
    }

    pub fn robots(&self) -> usize {
        self.sizes.len()
    }

    pub fn offset(&self, robot: usize) -> usize {
        self.offsets[robot]
    }

    pub fn size(&self, robot: usize) -> usize {
        self.sizes[robot]
    }

    pub fn range(&self, robot: usize) -> std::ops::Range<usize> {
        self.offsets[robot]..self.offsets[robot] + self.sizes[robot]
    }

    /// Zero-pad a robot-local row to the stacked width.
    pub fn embed(&self, robot: usize, row: &ConstraintRow) -> Result<ConstraintRow, VfiError> {
        if robot >= self.robots() {
            return Err(VfiError::UnknownRobot(robot));
        }
        if row.coeffs.len() != self.sizes[robot] {
            return Err(VfiError::LayoutMismatch { expected: self.sizes[robot], got: row.coeffs.len() });
        }
        let mut coeffs = RowDVector::zeros(self.total());
        coeffs.columns_mut(self.offsets[robot], self.sizes[robot]).copy_from(&row.coeffs);
        Ok(ConstraintRow::new(coeffs, row.bound))
    }
}

/// Stack rows into `(W, w)`.
pub fn assemble(rows: &[ConstraintRow], layout: &JointLayout) -> Result<(DMatrix<f64>, DVector<f64>), VfiError> {
    let n = layout.total();
    let mut w_mat = DMatrix::zeros(rows.len(), n);
    let mut w_vec = DVector::zeros(rows.len());
    for (i, row) in rows.iter().enumerate() {
        if row.coeffs.len() != n {
            return Err(VfiError::LayoutMismatch { expected: n, got: row.coeffs.len() });
        }
        w_mat.set_row(i, &row.coeffs);
        w_vec[i] = row.bound;
    }
    Ok((w_mat, w_vec))
}
