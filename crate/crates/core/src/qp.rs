//! Dense strictly convex QP solver.
//!
//! Solves
//!
//! ```text
//!     minimize     ½ xᵀ H x + fᵀ x
//!     subject to   W x ≼ w
//! ```
//!
//! with the dual active-set method of Goldfarb and Idnani: start from the
//! unconstrained minimum and add violated constraints one at a time, dropping
//! active constraints whose multipliers would turn negative. Every iterate is
//! the optimum of the subproblem defined by its active set, so infeasibility is
//! detected exactly and comes with a Farkas certificate.
//!
//! Problems here are small (tens of variables and rows), so the equality
//! subproblem is refactored on every step instead of updating factors.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum QpError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("hessian is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),
    #[error("hessian is not positive definite even after ridge regularization")]
    NotPositiveDefinite,
    #[error("problem data contains non-finite values")]
    NonFinite,
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    pub w_mat: DMatrix<f64>,
    pub w_vec: DVector<f64>,
}

impl QpProblem {
    pub fn new(hessian: DMatrix<f64>, linear: DVector<f64>, w_mat: DMatrix<f64>, w_vec: DVector<f64>) -> Self {
        Self { hessian, linear, w_mat, w_vec }
    }

    pub fn unconstrained(hessian: DMatrix<f64>, linear: DVector<f64>) -> Self {
        let n = linear.len();
        Self::new(hessian, linear, DMatrix::zeros(0, n), DVector::zeros(0))
    }

    pub fn dim(&self) -> usize {
        self.linear.len()
    }

    pub fn rows(&self) -> usize {
        self.w_vec.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) + self.linear.dot(x)
    }

    /// Largest violation `max(W x − w)`, clamped at zero.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        if self.rows() == 0 {
            return 0.0;
        }
        (&self.w_mat * x - &self.w_vec).max().max(0.0)
    }

    fn validate(&self) -> Result<(), QpError> {
        let n = self.dim();
        if self.hessian.shape() != (n, n) {
            return Err(QpError::DimensionMismatch(format!(
                "hessian is {:?}, expected ({n}, {n})",
                self.hessian.shape()
            )));
        }
        if self.w_mat.ncols() != n || self.w_mat.nrows() != self.w_vec.len() {
            return Err(QpError::DimensionMismatch(format!(
                "W is {:?}, w has {} entries, {n} variables",
                self.w_mat.shape(),
                self.w_vec.len()
            )));
        }
        let finite = |m: &[f64]| m.iter().all(|v| v.is_finite());
        if !finite(self.hessian.as_slice())
            || !finite(self.linear.as_slice())
            || !finite(self.w_mat.as_slice())
            || !finite(self.w_vec.as_slice())
        {
            return Err(QpError::NonFinite);
        }
        let asym = (&self.hessian - self.hessian.transpose()).amax();
        if asym > 1e-10 * self.hessian.amax().max(1.0) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
    MaxIter,
}

impl QpStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            QpStatus::Optimal => "optimal",
            QpStatus::Infeasible => "infeasible",
            QpStatus::MaxIter => "max_iter",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per row of `W`; zero for inactive rows.
    pub multipliers: DVector<f64>,
    pub status: QpStatus,
    pub iterations: usize,
    pub kkt_residual: f64,
    pub active_set: Vec<usize>,
    /// For infeasible problems: `y ≥ 0` with `yᵀW = 0` and `yᵀw < 0`.
    pub certificate: Option<DVector<f64>>,
}

/// Violation tolerance when picking constraints to add.
const FEAS_TOL: f64 = 1e-11;
/// Relative tolerance of the linear-dependence test.
const DEP_TOL: f64 = 1e-12;

/// Solver with warm-start memory of the previous active set.
#[derive(Debug, Clone)]
pub struct QpSolver {
    warm_start: bool,
    last_active: Vec<usize>,
    max_iter: Option<usize>,
}

impl Default for QpSolver {
    fn default() -> Self {
        Self::new()
    }
}

impl QpSolver {
    pub fn new() -> Self {
        Self { warm_start: true, last_active: Vec::new(), max_iter: None }
    }

    pub fn cold() -> Self {
        Self { warm_start: false, ..Self::new() }
    }

    pub fn with_max_iter(mut self, max_iter: usize) -> Self {
        self.max_iter = Some(max_iter);
        self
    }

    pub fn reset(&mut self) {
        self.last_active.clear();
    }

    pub fn solve(&mut self, problem: &QpProblem) -> Result<QpSolution, QpError> {
        problem.validate()?;
        let chol = factor_with_ridge(&problem.hessian)?;
        let warm = if self.warm_start { warm_state(problem, &chol, &self.last_active) } else { None };
        let sol = dual_active_set(problem, &chol, warm, self.max_iter);
        self.last_active = if sol.status == QpStatus::Optimal { sol.active_set.clone() } else { Vec::new() };
        Ok(sol)
    }
}

/// Cold-start solve.
pub fn solve(problem: &QpProblem) -> Result<QpSolution, QpError> {
    QpSolver::cold().solve(problem)
}

fn factor_with_ridge(h: &DMatrix<f64>) -> Result<Cholesky<f64, Dyn>, QpError> {
    if let Some(c) = Cholesky::new(h.clone()) {
        return Ok(c);
    }
    let n = h.nrows().max(1);
    let ridge = 1e-10 * h.trace().abs().max(f64::MIN_POSITIVE) / n as f64;
    let mut damped = h.clone();
    for i in 0..h.nrows() {
        damped[(i, i)] += ridge;
    }
    Cholesky::new(damped).ok_or(QpError::NotPositiveDefinite)
}

struct ActiveState {
    x: DVector<f64>,
    active: Vec<usize>,
    u: Vec<f64>,
}

/// Optimum of the equality subproblem on a previous active set, if its
/// multipliers are non-negative (a valid starting pair for the dual method).
fn warm_state(p: &QpProblem, chol: &Cholesky<f64, Dyn>, prev: &[usize]) -> Option<ActiveState> {
    let r = p.rows();
    if prev.is_empty() || prev.iter().any(|&i| i >= r) {
        return None;
    }
    let n_act = active_rows(p, prev);
    let hinv_nt = chol.solve(&n_act.transpose());
    let m = &n_act * &hinv_nt;
    let mchol = Cholesky::new(m)?;
    let hinv_f = chol.solve(&p.linear);
    let b = DVector::from_iterator(prev.len(), prev.iter().map(|&i| p.w_vec[i]));
    let u = -mchol.solve(&(b + &n_act * &hinv_f));
    if u.iter().any(|&v| v < 0.0) {
        return None;
    }
    let x = -(hinv_f + hinv_nt * &u);
    Some(ActiveState { x, active: prev.to_vec(), u: u.iter().copied().collect() })
}

fn active_rows(p: &QpProblem, active: &[usize]) -> DMatrix<f64> {
    let n = p.dim();
    let mut m = DMatrix::zeros(active.len(), n);
    for (k, &i) in active.iter().enumerate() {
        m.set_row(k, &p.w_mat.row(i));
    }
    m
}

fn dual_active_set(
    p: &QpProblem,
    chol: &Cholesky<f64, Dyn>,
    warm: Option<ActiveState>,
    max_iter: Option<usize>,
) -> QpSolution {
    let (n, r) = (p.dim(), p.rows());
    let max_iter = max_iter.unwrap_or(50 * (n + r) + 100);
    let row_norms: Vec<f64> = (0..r).map(|i| p.w_mat.row(i).norm()).collect();

    let ActiveState { mut x, mut active, mut u } =
        warm.unwrap_or_else(|| ActiveState { x: -chol.solve(&p.linear), active: Vec::new(), u: Vec::new() });
    let mut iterations = 0;

    let finish = |x: DVector<f64>, active: Vec<usize>, u: Vec<f64>, status, iterations, certificate| {
        let mut mult = DVector::zeros(r);
        for (&i, &ui) in active.iter().zip(&u) {
            mult[i] = ui;
        }
        let kkt_residual = kkt_residual(p, &x, &mult);
        QpSolution { x, multipliers: mult, status, iterations, kkt_residual, active_set: active, certificate }
    };

    'outer: loop {
        // most violated inactive row, scaled by its norm
        let slack = &p.w_vec - &p.w_mat * &x;
        let mut pick: Option<(usize, f64)> = None;
        for i in 0..r {
            if active.contains(&i) || row_norms[i] == 0.0 {
                if row_norms[i] == 0.0 && slack[i] < -FEAS_TOL {
                    // 0 ≤ w_i < 0: infeasible on its own
                    let mut y = DVector::zeros(r);
                    y[i] = 1.0;
                    return finish(x, active, u, QpStatus::Infeasible, iterations, Some(y));
                }
                continue;
            }
            let scaled = slack[i] / row_norms[i];
            if slack[i] < -FEAS_TOL * (1.0 + p.w_vec[i].abs()) && pick.is_none_or(|(_, s)| scaled < s) {
                pick = Some((i, scaled));
            }
        }
        let Some((add, _)) = pick else {
            return finish(x, active, u, QpStatus::Optimal, iterations, None);
        };

        let a_p = p.w_mat.row(add).transpose();
        let hinv_ap = chol.solve(&a_p);
        let ap_hinv_ap = a_p.dot(&hinv_ap);
        let mut u_p = 0.0;
        loop {
            iterations += 1;
            if iterations > max_iter {
                return finish(x, active, u, QpStatus::MaxIter, iterations, None);
            }
            // primal step z and multiplier change −r for a unit increase of u_p
            let (z, rvec) = if active.is_empty() {
                (-&hinv_ap, DVector::zeros(0))
            } else {
                let n_act = active_rows(p, &active);
                let hinv_nt = chol.solve(&n_act.transpose());
                let m = &n_act * &hinv_nt;
                let rvec = match Cholesky::new(m.clone()) {
                    Some(c) => c.solve(&(&n_act * &hinv_ap)),
                    None => m.lu().solve(&(&n_act * &hinv_ap)).unwrap_or_else(|| DVector::zeros(active.len())),
                };
                (-(&hinv_ap - hinv_nt * &rvec), rvec)
            };
            let ap_z = a_p.dot(&z);
            let dependent = -ap_z <= DEP_TOL * ap_hinv_ap;

            let mut t1 = f64::INFINITY;
            let mut block = None;
            for (j, &rj) in rvec.iter().enumerate() {
                if rj > 0.0 {
                    let ratio = u[j] / rj;
                    if ratio < t1 {
                        t1 = ratio;
                        block = Some(j);
                    }
                }
            }
            let s_p = p.w_vec[add] - a_p.dot(&x);
            let t2 = if dependent { f64::INFINITY } else { s_p / ap_z };

            if t1.is_infinite() && t2.is_infinite() {
                let mut y = DVector::zeros(r);
                y[add] = 1.0;
                for (j, &i) in active.iter().enumerate() {
                    y[i] = (-rvec[j]).max(0.0);
                }
                return finish(x, active, u, QpStatus::Infeasible, iterations, Some(y));
            }

            let t = t1.min(t2);
            for (uj, rj) in u.iter_mut().zip(rvec.iter()) {
                *uj -= t * rj;
            }
            u_p += t;
            if !dependent {
                x += &z * t;
            }
            if t2 <= t1 {
                active.push(add);
                u.push(u_p);
                continue 'outer;
            }
            let j = block.expect("partial step has a blocking constraint");
            active.remove(j);
            u.remove(j);
        }
    }
}

/// Max of stationarity, primal infeasibility, dual infeasibility and
/// complementarity violations.
pub fn kkt_residual(p: &QpProblem, x: &DVector<f64>, mult: &DVector<f64>) -> f64 {
    let grad = &p.hessian * x + &p.linear + p.w_mat.transpose() * mult;
    let mut res = grad.amax();
    if p.rows() > 0 {
        let g = &p.w_mat * x - &p.w_vec;
        for i in 0..p.rows() {
            res = res.max(g[i].max(0.0)).max((-mult[i]).max(0.0)).max((mult[i] * g[i]).abs());
        }
    }
    res
}

#[derive(Debug, Clone, PartialEq)]
pub enum Feasibility {
    Feasible { witness: DVector<f64> },
    Infeasible { certificate: DVector<f64> },
    Undetermined,
}

impl Feasibility {
    pub fn is_feasible(&self) -> bool {
        matches!(self, Feasibility::Feasible { .. })
    }
}

/// Decide whether `{x : W x ≼ w}` is non-empty by projecting the origin onto it.
/// The witness is the minimum-norm feasible point; an infeasible system yields
/// a Farkas certificate `y ≥ 0`, `yᵀW = 0`, `yᵀw < 0`.
pub fn is_feasible(w_mat: &DMatrix<f64>, w_vec: &DVector<f64>) -> Result<Feasibility, QpError> {
    let n = w_mat.ncols();
    let problem = QpProblem::new(DMatrix::identity(n, n), DVector::zeros(n), w_mat.clone(), w_vec.clone());
    let sol = solve(&problem)?;
    Ok(match sol.status {
        QpStatus::Optimal => Feasibility::Feasible { witness: sol.x },
        QpStatus::Infeasible => Feasibility::Infeasible { certificate: sol.certificate.unwrap_or_default() },
        QpStatus::MaxIter => Feasibility::Undetermined,
    })
}
