//! Dense quadratic programming for small pose-recovery problems.
//!
//! Solves
//!
//! ```text
//!     minimize    sum_k w_k (x_k - t_k)^2        (w_k > 0)
//!     subject to  a_j . x <= b_j                 (j = 0..m)
//! ```
//!
//! with a dual active-set method: start from the unconstrained optimum
//! `x = t`, repeatedly pick the lowest-index violated constraint and drive it
//! to feasibility while keeping the working set active and the multipliers
//! nonnegative. Constraints leave the working set when their multiplier hits
//! zero. The method needs no feasibility phase, terminates finitely on these
//! strictly convex problems, and detects inconsistent constraint systems
//! exactly (a violated row whose normal is a nonpositive combination of the
//! working set certifies an empty feasible region).
//!
//! Problems here are tiny (at most a few dozen variables and ~a hundred
//! rows), so all linear algebra is plain dense arithmetic with a fresh
//! Cholesky factorization per step; after every working-set change the
//! iterate is recomputed from the exact equality-constrained optimum, which
//! keeps active-constraint residuals at solve precision. Index-ordered
//! (Bland-style) selection makes the whole solve deterministic.

use thiserror::Error;

/// Primal feasibility tolerance guaranteed by an `Optimal` solution.
pub const FEASIBILITY_TOL: f64 = 1e-6;

/// Maximum combined KKT residual accepted for an `Optimal` solution.
pub const KKT_TOL: f64 = 1e-5;

/// Threshold above which a constraint counts as violated inside the solver.
const VIOLATION_TOL: f64 = 1e-9;

/// Relative threshold below which a candidate row counts as linearly
/// dependent on the working set.
const RANK_TOL: f64 = 1e-10;

/// One inequality row `coeffs . x <= bound`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearIneq {
    pub coeffs: Vec<f64>,
    pub bound: f64,
}

/// A weighted least-squares objective with linear inequality constraints.
#[derive(Clone, Debug, PartialEq)]
pub struct QpProblem {
    /// Strictly positive per-variable weights (the diagonal of half the
    /// Hessian).
    pub weights: Vec<f64>,
    /// Per-variable targets; the unconstrained optimum.
    pub targets: Vec<f64>,
    pub constraints: Vec<LinearIneq>,
}

#[derive(Debug, Error)]
pub enum QpError {
    #[error("weight {0} is not strictly positive")]
    NonPositiveWeight(usize),
    #[error("constraint {0} has wrong arity")]
    BadArity(usize),
    #[error("constraint {0} has no nonzero coefficient")]
    EmptyRow(usize),
}

impl QpProblem {
    pub fn new(
        weights: Vec<f64>,
        targets: Vec<f64>,
        constraints: Vec<LinearIneq>,
    ) -> Result<Self, QpError> {
        assert_eq!(weights.len(), targets.len());
        for (k, &w) in weights.iter().enumerate() {
            if w.is_nan() || w <= 0.0 {
                return Err(QpError::NonPositiveWeight(k));
            }
        }
        for (j, row) in constraints.iter().enumerate() {
            if row.coeffs.len() != weights.len() {
                return Err(QpError::BadArity(j));
            }
            if row.coeffs.iter().all(|&c| c == 0.0) {
                return Err(QpError::EmptyRow(j));
            }
        }
        Ok(QpProblem {
            weights,
            targets,
            constraints,
        })
    }

    pub fn n_vars(&self) -> usize {
        self.weights.len()
    }

    pub fn objective(&self, x: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(&self.targets)
            .zip(x)
            .map(|((&w, &t), &v)| w * (v - t) * (v - t))
            .sum()
    }

    /// Largest constraint violation at `x` (0 for feasible points).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.constraints
            .iter()
            .map(|row| (dot(&row.coeffs, x) - row.bound).max(0.0))
            .fold(0.0, f64::max)
    }
}

/// Solve outcome classification.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    /// The constraint system has an empty feasible region.
    Infeasible,
    /// Iteration or numerical limit hit; callers treat this like an
    /// infeasible system but the diagnostic is kept distinct.
    NumericalLimit,
}

#[derive(Clone, Debug)]
pub struct QpSolution {
    pub status: QpStatus,
    /// Variable values; empty unless `status == Optimal`.
    pub values: Vec<f64>,
    /// One multiplier per constraint row; empty unless `status == Optimal`.
    pub duals: Vec<f64>,
    /// Combined KKT residual of the returned point (`inf` when not optimal).
    pub kkt_residual: f64,
}

impl QpSolution {
    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}

/// Per-condition KKT violation report.
#[derive(Clone, Copy, Debug, Default)]
pub struct KktReport {
    /// max |grad f + A^T mu| over variables.
    pub stationarity: f64,
    /// max positive constraint residual.
    pub primal_feasibility: f64,
    /// max negative part of the multipliers.
    pub dual_feasibility: f64,
    /// max |mu_j * (a_j.x - b_j)|.
    pub complementarity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.dual_feasibility)
            .max(self.complementarity)
    }

    pub fn within(&self, tol: f64) -> bool {
        self.max_residual() <= tol
    }
}

/// Evaluates all four KKT conditions for a candidate primal/dual pair.
pub fn check_kkt(problem: &QpProblem, values: &[f64], duals: &[f64]) -> KktReport {
    let n = problem.n_vars();
    let mut grad: Vec<f64> = (0..n)
        .map(|k| 2.0 * problem.weights[k] * (values[k] - problem.targets[k]))
        .collect();
    let mut report = KktReport::default();
    for (j, row) in problem.constraints.iter().enumerate() {
        let mu = duals.get(j).copied().unwrap_or(0.0);
        let resid = dot(&row.coeffs, values) - row.bound;
        report.primal_feasibility = report.primal_feasibility.max(resid.max(0.0));
        report.dual_feasibility = report.dual_feasibility.max((-mu).max(0.0));
        report.complementarity = report.complementarity.max((mu * resid).abs());
        for (g, c) in grad.iter_mut().zip(&row.coeffs) {
            *g += mu * c;
        }
    }
    report.stationarity = grad.iter().fold(0.0, |acc, g| acc.max(g.abs()));
    report
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// In-place Cholesky solve of the SPD system `s * out = rhs` (`s` row-major
/// k-by-k, destroyed). Returns false when the matrix is not numerically SPD.
fn cholesky_solve(s: &mut [f64], rhs: &mut [f64]) -> bool {
    let k = rhs.len();
    debug_assert_eq!(s.len(), k * k);
    for i in 0..k {
        for j in 0..=i {
            let mut sum = s[i * k + j];
            for l in 0..j {
                sum -= s[i * k + l] * s[j * k + l];
            }
            if i == j {
                if sum <= 1e-14 {
                    return false;
                }
                s[i * k + i] = sum.sqrt();
            } else {
                s[i * k + j] = sum / s[j * k + j];
            }
        }
    }
    for i in 0..k {
        let mut sum = rhs[i];
        for l in 0..i {
            sum -= s[i * k + l] * rhs[l];
        }
        rhs[i] = sum / s[i * k + i];
    }
    for i in (0..k).rev() {
        let mut sum = rhs[i];
        for l in (i + 1)..k {
            sum -= s[l * k + i] * rhs[l];
        }
        rhs[i] = sum / s[i * k + i];
    }
    true
}

struct ActiveSet<'a> {
    problem: &'a QpProblem,
    inv_h: Vec<f64>,
    working: Vec<usize>,
    mu: Vec<f64>,
    x: Vec<f64>,
}

impl<'a> ActiveSet<'a> {
    fn new(problem: &'a QpProblem) -> Self {
        let inv_h: Vec<f64> = problem.weights.iter().map(|&w| 1.0 / (2.0 * w)).collect();
        ActiveSet {
            problem,
            inv_h,
            working: Vec::new(),
            mu: Vec::new(),
            x: problem.targets.clone(),
        }
    }

    fn row(&self, j: usize) -> &[f64] {
        &self.problem.constraints[j].coeffs
    }

    /// `S = A_W H^-1 A_W^T` for the current working set.
    fn gram(&self) -> Vec<f64> {
        let k = self.working.len();
        let mut s = vec![0.0; k * k];
        for i in 0..k {
            for j in 0..=i {
                let mut acc = 0.0;
                let (ri, rj) = (self.row(self.working[i]), self.row(self.working[j]));
                for (l, &hinv) in self.inv_h.iter().enumerate() {
                    acc += ri[l] * hinv * rj[l];
                }
                s[i * k + j] = acc;
                s[j * k + i] = acc;
            }
        }
        s
    }

    /// Solves `S r = A_W H^-1 a_p`; returns `(r, z, kappa, a_p H^-1 a_p)`.
    fn step_direction(&self, p: usize) -> Option<(Vec<f64>, Vec<f64>, f64, f64)> {
        let n = self.problem.n_vars();
        let k = self.working.len();
        let ap = self.row(p);
        let mut r = vec![0.0; k];
        for (i, &wj) in self.working.iter().enumerate() {
            let rw = self.row(wj);
            r[i] = (0..n).map(|l| rw[l] * self.inv_h[l] * ap[l]).sum();
        }
        if k > 0 {
            let mut s = self.gram();
            if !cholesky_solve(&mut s, &mut r) {
                return None;
            }
        }
        let mut z = vec![0.0; n];
        for l in 0..n {
            let mut acc = ap[l];
            for (i, &wj) in self.working.iter().enumerate() {
                acc -= self.row(wj)[l] * r[i];
            }
            z[l] = self.inv_h[l] * acc;
        }
        let kappa = dot(ap, &z);
        let ap_h_ap: f64 = (0..n).map(|l| ap[l] * self.inv_h[l] * ap[l]).sum();
        Some((r, z, kappa, ap_h_ap))
    }

    /// Recomputes the exact equality-constrained optimum and multipliers for
    /// the current working set, clearing accumulated float drift.
    fn refine(&mut self) -> bool {
        let n = self.problem.n_vars();
        let k = self.working.len();
        if k == 0 {
            self.x = self.problem.targets.clone();
            return true;
        }
        let mut rhs = vec![0.0; k];
        for (i, &wj) in self.working.iter().enumerate() {
            rhs[i] = dot(self.row(wj), &self.problem.targets) - self.problem.constraints[wj].bound;
        }
        let mut s = self.gram();
        if !cholesky_solve(&mut s, &mut rhs) {
            return false;
        }
        self.mu = rhs.clone();
        for l in 0..n {
            let mut acc = 0.0;
            for (i, &wj) in self.working.iter().enumerate() {
                acc += self.row(wj)[l] * rhs[i];
            }
            self.x[l] = self.problem.targets[l] - self.inv_h[l] * acc;
        }
        true
    }

    /// Lowest-index violated constraint outside the working set.
    fn most_blocking(&self) -> Option<usize> {
        for (j, row) in self.problem.constraints.iter().enumerate() {
            if self.working.contains(&j) {
                continue;
            }
            if dot(&row.coeffs, &self.x) - row.bound > VIOLATION_TOL {
                return Some(j);
            }
        }
        None
    }
}

/// Solves the QP, returning the unique global minimizer or an infeasibility
/// verdict. Identical problems yield bit-identical solutions.
pub fn solve(problem: &QpProblem) -> QpSolution {
    let n = problem.n_vars();
    let m = problem.constraints.len();
    if n == 0 {
        return QpSolution {
            status: QpStatus::Optimal,
            values: Vec::new(),
            duals: vec![0.0; m],
            kkt_residual: 0.0,
        };
    }

    let mut act = ActiveSet::new(problem);
    let limit = 1000 + 50 * (n + m);
    let mut steps = 0usize;

    loop {
        let p = match act.most_blocking() {
            Some(p) => p,
            None => {
                let mut duals = vec![0.0; m];
                for (i, &wj) in act.working.iter().enumerate() {
                    duals[wj] = act.mu[i].max(0.0);
                }
                let report = check_kkt(problem, &act.x, &duals);
                // An optimal verdict guarantees the certificate; anything
                // that cannot be certified is reported as a numerical
                // failure instead.
                if report.primal_feasibility > FEASIBILITY_TOL || !report.within(KKT_TOL) {
                    return numerical_limit(m);
                }
                return QpSolution {
                    status: QpStatus::Optimal,
                    values: act.x,
                    duals,
                    kkt_residual: report.max_residual(),
                };
            }
        };

        let mut mu_p = 0.0;
        loop {
            steps += 1;
            if steps > limit {
                return numerical_limit(m);
            }
            let (r, z, kappa, ap_h_ap) = match act.step_direction(p) {
                Some(t) => t,
                None => return numerical_limit(m),
            };

            if kappa <= RANK_TOL * ap_h_ap.max(1.0) {
                // a_p depends linearly on the working set: either proof of
                // infeasibility or a pure dual step that drops a blocker.
                let mut blocker: Option<(usize, f64)> = None;
                for (i, &ri) in r.iter().enumerate() {
                    if ri > 1e-12 {
                        let ratio = act.mu[i] / ri;
                        if blocker.is_none_or(|(_, best)| ratio < best) {
                            blocker = Some((i, ratio));
                        }
                    }
                }
                match blocker {
                    None => {
                        return QpSolution {
                            status: QpStatus::Infeasible,
                            values: Vec::new(),
                            duals: Vec::new(),
                            kkt_residual: f64::INFINITY,
                        };
                    }
                    Some((k_ix, s)) => {
                        for (i, &ri) in r.iter().enumerate() {
                            act.mu[i] -= s * ri;
                        }
                        mu_p += s;
                        act.working.remove(k_ix);
                        act.mu.remove(k_ix);
                        continue;
                    }
                }
            }

            let violation = dot(act.row(p), &act.x) - problem.constraints[p].bound;
            let theta_full = violation;
            let mut theta_dual = f64::INFINITY;
            let mut drop_ix = None;
            for (i, &ri) in r.iter().enumerate() {
                if ri > 1e-12 {
                    let theta = kappa * act.mu[i] / ri;
                    if theta < theta_dual {
                        theta_dual = theta;
                        drop_ix = Some(i);
                    }
                }
            }

            let theta = theta_full.min(theta_dual);
            let scale = theta / kappa;
            for (x, zl) in act.x.iter_mut().zip(&z) {
                *x -= scale * zl;
            }
            for (i, &ri) in r.iter().enumerate() {
                act.mu[i] -= scale * ri;
            }
            mu_p += scale;

            if theta_dual < theta_full {
                let i = drop_ix.unwrap();
                act.working.remove(i);
                act.mu.remove(i);
                // p is still violated; keep driving it.
            } else {
                act.working.push(p);
                act.mu.push(mu_p);
                if !act.refine() {
                    return numerical_limit(m);
                }
                break;
            }
        }
    }
}

fn numerical_limit(m: usize) -> QpSolution {
    let _ = m;
    QpSolution {
        status: QpStatus::NumericalLimit,
        values: Vec::new(),
        duals: Vec::new(),
        kkt_residual: f64::INFINITY,
    }
}
