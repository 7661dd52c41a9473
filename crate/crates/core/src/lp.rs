//! Bounded-variable linear programming by a two-phase revised simplex method.
//!
//! Problems are stated as: minimize c'x subject to per-row activity bounds
//! lo_r <= a_r'x <= hi_r and per-variable bounds lo <= x <= hi, where any
//! bound may be infinite and lo == hi expresses an equality. Internally every
//! row gets a bounded slack variable and a non-negative artificial; phase one
//! minimizes the artificial sum (its residuals diagnose infeasibility row by
//! row), phase two minimizes the real objective. The basis inverse is kept
//! explicitly and refactored periodically. Pricing is by largest reduced
//! cost with lowest-index tie-breaks, falling back to Bland's rule after a
//! run of degenerate pivots, so results are deterministic.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

pub const INF: f64 = f64::INFINITY;

/// One ranged constraint row: lo <= coeffs . x <= hi.
#[derive(Clone, Debug)]
pub struct Row {
    pub coeffs: Vec<f64>,
    pub lo: f64,
    pub hi: f64,
}

/// A bounded-variable linear program over dense rows.
#[derive(Clone, Debug, Default)]
pub struct LinearProgram {
    /// Minimized objective, one coefficient per structural variable.
    pub objective: Vec<f64>,
    pub var_lo: Vec<f64>,
    pub var_hi: Vec<f64>,
    pub rows: Vec<Row>,
}

impl LinearProgram {
    pub fn n_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Row activities a_r . x at a point.
    pub fn activities(&self, x: &[f64]) -> Vec<f64> {
        self.rows
            .iter()
            .map(|r| r.coeffs.iter().zip(x).map(|(a, v)| a * v).sum())
            .collect()
    }
}

#[derive(Debug, Error)]
pub enum LpError {
    #[error("malformed linear program: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum LpStatus {
    Optimal,
    /// No point satisfies every row; `violations` holds the irreducible
    /// residual per violated row after minimizing total violation.
    Infeasible { violations: Vec<(usize, f64)> },
    /// The objective decreases without bound along the reported column
    /// (column < n_vars means a structural variable).
    Unbounded { var: usize },
    IterationLimit,
    Numerical { detail: String },
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub status: LpStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub row_activity: Vec<f64>,
    /// One dual multiplier per row (final simplex multipliers).
    pub duals: Vec<f64>,
    /// Reduced cost per structural variable at termination.
    pub reduced_costs: Vec<f64>,
    pub iterations: usize,
}

#[derive(Clone, Debug)]
pub struct SimplexOptions {
    /// Feasibility tolerance on phase-one residuals and bound checks.
    pub tol_feas: f64,
    /// Reduced-cost threshold for entering candidates.
    pub tol_dj: f64,
    /// Smallest usable pivot magnitude in the ratio test.
    pub tol_piv: f64,
    /// Rebuild the basis inverse after this many pivots.
    pub refactor_every: usize,
    /// Per-phase pivot budget; defaults to 50 * (n + 3m).
    pub max_iters: Option<usize>,
}

impl Default for SimplexOptions {
    fn default() -> Self {
        SimplexOptions {
            tol_feas: 1e-8,
            tol_dj: 1e-9,
            tol_piv: 1e-10,
            refactor_every: 64,
            max_iters: None,
        }
    }
}

fn validate(p: &LinearProgram) -> Result<(), LpError> {
    let n = p.n_vars();
    if p.var_lo.len() != n || p.var_hi.len() != n {
        return Err(LpError::Malformed(format!(
            "bound vectors ({}, {}) do not match {} variables",
            p.var_lo.len(),
            p.var_hi.len(),
            n
        )));
    }
    for j in 0..n {
        if p.objective[j].is_nan() || p.var_lo[j].is_nan() || p.var_hi[j].is_nan() {
            return Err(LpError::Malformed(format!("NaN in variable {j}")));
        }
        if p.var_lo[j] > p.var_hi[j] {
            return Err(LpError::Malformed(format!(
                "variable {j} bounds cross: [{}, {}]",
                p.var_lo[j], p.var_hi[j]
            )));
        }
    }
    for (i, row) in p.rows.iter().enumerate() {
        if row.coeffs.len() != n {
            return Err(LpError::Malformed(format!(
                "row {i} has {} coefficients for {n} variables",
                row.coeffs.len()
            )));
        }
        if row.coeffs.iter().any(|v| !v.is_finite()) || row.lo.is_nan() || row.hi.is_nan() {
            return Err(LpError::Malformed(format!("non-finite data in row {i}")));
        }
        if row.lo > row.hi {
            return Err(LpError::Malformed(format!(
                "row {i} bounds cross: [{}, {}]",
                row.lo, row.hi
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, PartialEq, Debug)]
enum VarState {
    Basic(usize),
    AtLo,
    AtHi,
    /// Unbounded variable resting at zero before it first enters the basis.
    FreeZero,
}

enum Stop {
    Converged,
    Unbounded(usize),
    IterLimit,
    Numerical(String),
}

/// Working state of the revised simplex over z = [x, slacks, artificials].
struct Tableau<'a> {
    p: &'a LinearProgram,
    opts: SimplexOptions,
    n: usize,
    m: usize,
    nv: usize,
    cols: Vec<DVector<f64>>,
    art_sign: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
    cost: Vec<f64>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    val: Vec<f64>,
    b_inv: DMatrix<f64>,
    pivots_since_refactor: usize,
    degenerate_run: usize,
    bland: bool,
    iterations: usize,
}

impl<'a> Tableau<'a> {
    fn new(p: &'a LinearProgram, opts: SimplexOptions) -> Tableau<'a> {
        let n = p.n_vars();
        let m = p.n_rows();
        let nv = n + 2 * m;
        let mut cols = vec![DVector::zeros(m); n];
        for (i, row) in p.rows.iter().enumerate() {
            for j in 0..n {
                cols[j][i] = row.coeffs[j];
            }
        }
        let mut lo = Vec::with_capacity(nv);
        let mut hi = Vec::with_capacity(nv);
        lo.extend_from_slice(&p.var_lo);
        hi.extend_from_slice(&p.var_hi);
        for row in &p.rows {
            lo.push(row.lo);
            hi.push(row.hi);
        }
        lo.extend(std::iter::repeat(0.0).take(m));
        hi.extend(std::iter::repeat(INF).take(m));
        Tableau {
            p,
            opts,
            n,
            m,
            nv,
            cols,
            art_sign: vec![1.0; m],
            lo,
            hi,
            cost: vec![0.0; nv],
            basis: Vec::with_capacity(m),
            state: vec![VarState::AtLo; nv],
            val: vec![0.0; nv],
            b_inv: DMatrix::zeros(m, m),
            pivots_since_refactor: 0,
            degenerate_run: 0,
            bland: false,
            iterations: 0,
        }
    }

    /// Nonbasic variables start at their nearest finite bound; rows whose
    /// initial activity already fits keep their slack basic, others get a
    /// basic artificial carrying the violation.
    fn init(&mut self) {
        for j in 0..self.n {
            if self.lo[j].is_finite() {
                self.val[j] = self.lo[j];
                self.state[j] = VarState::AtLo;
            } else if self.hi[j].is_finite() {
                self.val[j] = self.hi[j];
                self.state[j] = VarState::AtHi;
            } else {
                self.val[j] = 0.0;
                self.state[j] = VarState::FreeZero;
            }
        }
        let mut act = DVector::zeros(self.m);
        for j in 0..self.n {
            if self.val[j] != 0.0 {
                act += &self.cols[j] * self.val[j];
            }
        }
        for i in 0..self.m {
            let slack = self.n + i;
            let art = self.n + self.m + i;
            let r = act[i];
            if r >= self.lo[slack] && r <= self.hi[slack] {
                self.val[slack] = r;
                self.state[slack] = VarState::Basic(i);
                self.basis.push(slack);
                self.val[art] = 0.0;
                self.state[art] = VarState::AtLo;
                self.b_inv[(i, i)] = -1.0;
            } else {
                let bound = if r < self.lo[slack] { self.lo[slack] } else { self.hi[slack] };
                self.val[slack] = bound;
                self.state[slack] = if r < self.lo[slack] { VarState::AtLo } else { VarState::AtHi };
                let sign = if bound > r { 1.0 } else { -1.0 };
                self.art_sign[i] = sign;
                self.val[art] = (bound - r) / sign;
                self.state[art] = VarState::Basic(i);
                self.basis.push(art);
                self.b_inv[(i, i)] = sign;
            }
        }
    }

    fn set_phase_one(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        for i in 0..self.m {
            self.cost[self.n + self.m + i] = 1.0;
        }
    }

    /// Real costs; artificials are frozen at zero so they cannot re-enter.
    fn set_phase_two(&mut self) {
        self.cost.iter_mut().for_each(|c| *c = 0.0);
        self.cost[..self.n].copy_from_slice(&self.p.objective);
        for i in 0..self.m {
            let art = self.n + self.m + i;
            self.lo[art] = 0.0;
            self.hi[art] = 0.0;
        }
        self.bland = false;
        self.degenerate_run = 0;
    }

    fn col_dot(&self, j: usize, y: &DVector<f64>) -> f64 {
        if j < self.n {
            self.cols[j].dot(y)
        } else if j < self.n + self.m {
            -y[j - self.n]
        } else {
            self.art_sign[j - self.n - self.m] * y[j - self.n - self.m]
        }
    }

    fn ftran(&self, j: usize) -> DVector<f64> {
        if j < self.n {
            &self.b_inv * &self.cols[j]
        } else if j < self.n + self.m {
            -self.b_inv.column(j - self.n).clone_owned()
        } else {
            let i = j - self.n - self.m;
            self.b_inv.column(i).clone_owned() * self.art_sign[i]
        }
    }

    fn duals(&self) -> DVector<f64> {
        let c_b = DVector::from_fn(self.m, |i, _| self.cost[self.basis[i]]);
        self.b_inv.tr_mul(&c_b)
    }

    fn refactor(&mut self) -> Result<(), String> {
        let mut b = DMatrix::zeros(self.m, self.m);
        for (i, &v) in self.basis.iter().enumerate() {
            if v < self.n {
                b.column_mut(i).copy_from(&self.cols[v]);
            } else if v < self.n + self.m {
                b[(v - self.n, i)] = -1.0;
            } else {
                let r = v - self.n - self.m;
                b[(r, i)] = self.art_sign[r];
            }
        }
        let inv = b.lu().try_inverse().filter(|inv| inv.iter().all(|v| v.is_finite()));
        let Some(inv) = inv else {
            return Err("basis matrix became singular".into());
        };
        self.b_inv = inv;
        self.pivots_since_refactor = 0;

        // Recompute basic values from the nonbasic point to shed drift.
        let mut acc = DVector::zeros(self.m);
        for j in 0..self.nv {
            if matches!(self.state[j], VarState::Basic(_)) || self.val[j] == 0.0 {
                continue;
            }
            let v = self.val[j];
            if j < self.n {
                acc += &self.cols[j] * v;
            } else if j < self.n + self.m {
                acc[j - self.n] -= v;
            } else {
                let i = j - self.n - self.m;
                acc[i] += self.art_sign[i] * v;
            }
        }
        let xb = -(&self.b_inv * acc);
        for (i, &v) in self.basis.iter().enumerate() {
            self.val[v] = xb[i];
        }
        Ok(())
    }

    /// Runs pivots until the current phase converges or stops.
    fn optimize(&mut self) -> Stop {
        let budget = self
            .opts
            .max_iters
            .unwrap_or_else(|| (50 * (self.n + 3 * self.m)).max(100));
        let mut spent = 0usize;
        loop {
            if spent >= budget {
                return Stop::IterLimit;
            }
            spent += 1;
            self.iterations += 1;

            let y = self.duals();
            let mut entering: Option<(usize, f64, f64)> = None;
            for j in 0..self.nv {
                if matches!(self.state[j], VarState::Basic(_)) || self.lo[j] == self.hi[j] {
                    continue;
                }
                let d = self.cost[j] - self.col_dot(j, &y);
                let dir = match self.state[j] {
                    VarState::AtLo if d < -self.opts.tol_dj => 1.0,
                    VarState::AtHi if d > self.opts.tol_dj => -1.0,
                    VarState::FreeZero if d.abs() > self.opts.tol_dj => -d.signum(),
                    _ => continue,
                };
                if self.bland {
                    entering = Some((j, d.abs(), dir));
                    break;
                }
                match entering {
                    Some((_, mag, _)) if d.abs() <= mag => {}
                    _ => entering = Some((j, d.abs(), dir)),
                }
            }
            let Some((q, _, dir)) = entering else {
                return Stop::Converged;
            };

            let w = self.ftran(q);

            // Ratio test: smallest step that drives a basic variable to a
            // bound, or the entering variable across its own range.
            let span = self.hi[q] - self.lo[q];
            let mut theta = if span.is_finite() { span } else { INF };
            let mut leave: Option<(usize, bool)> = None; // (basis position, hits upper)
            for i in 0..self.m {
                let delta = -dir * w[i];
                let b = self.basis[i];
                let (room, hits_upper) = if delta > self.opts.tol_piv {
                    (self.hi[b] - self.val[b], true)
                } else if delta < -self.opts.tol_piv {
                    (self.lo[b] - self.val[b], false)
                } else {
                    continue;
                };
                if !room.is_finite() {
                    continue;
                }
                let t = (room / delta).max(0.0);
                let replace = match leave {
                    None => t < theta - 1e-12,
                    Some((cur, _)) => {
                        t < theta - 1e-12 || (t < theta + 1e-12 && b < self.basis[cur])
                    }
                };
                if replace {
                    theta = t.min(theta);
                    leave = Some((i, hits_upper));
                }
            }

            if theta.is_infinite() {
                return Stop::Unbounded(q);
            }
            if theta > 1e-12 {
                self.degenerate_run = 0;
                self.bland = false;
            } else {
                self.degenerate_run += 1;
                if self.degenerate_run > 30 {
                    self.bland = true;
                }
            }

            let step = dir * theta;
            if step != 0.0 {
                for i in 0..self.m {
                    let b = self.basis[i];
                    self.val[b] -= w[i] * step;
                }
            }

            match leave {
                None => {
                    // Bound flip: the entering variable crosses its range.
                    self.val[q] = if dir > 0.0 { self.hi[q] } else { self.lo[q] };
                    self.state[q] = if dir > 0.0 { VarState::AtHi } else { VarState::AtLo };
                }
                Some((r, hits_upper)) => {
                    let l = self.basis[r];
                    self.val[q] = match self.state[q] {
                        VarState::AtLo => self.lo[q] + step,
                        VarState::AtHi => self.hi[q] + step,
                        _ => self.val[q] + step,
                    };
                    self.val[l] = if hits_upper { self.hi[l] } else { self.lo[l] };
                    self.state[l] = if hits_upper { VarState::AtHi } else { VarState::AtLo };
                    self.basis[r] = q;
                    self.state[q] = VarState::Basic(r);

                    // Product-form update as one rank-1 correction (column
                    // order, so it walks the storage sequentially), then the
                    // pivot row is written exactly.
                    let piv = w[r];
                    let new_row = self.b_inv.row(r).clone_owned() / piv;
                    let new_col = new_row.transpose();
                    let mut u = w;
                    u[r] = piv - 1.0;
                    self.b_inv.ger(-1.0, &u, &new_col, 1.0);
                    self.b_inv.row_mut(r).copy_from(&new_row);

                    self.pivots_since_refactor += 1;
                    if self.pivots_since_refactor >= self.opts.refactor_every {
                        if let Err(e) = self.refactor() {
                            return Stop::Numerical(e);
                        }
                    }
                }
            }
        }
    }

    fn solution(&self, status: LpStatus) -> LpSolution {
        let x: Vec<f64> = self.val[..self.n].to_vec();
        let ok = status == LpStatus::Optimal;
        let y = self.duals();
        let reduced_costs = (0..self.n)
            .map(|j| self.cost[j] - self.col_dot(j, &y))
            .collect();
        LpSolution {
            objective: if ok {
                self.p.objective.iter().zip(&x).map(|(c, v)| c * v).sum()
            } else {
                f64::NAN
            },
            row_activity: self.p.activities(&x),
            duals: y.iter().copied().collect(),
            reduced_costs,
            iterations: self.iterations,
            x,
            status,
        }
    }
}

/// Solves a bounded-variable linear program.
pub fn solve_lp(p: &LinearProgram, opts: &SimplexOptions) -> Result<LpSolution, LpError> {
    validate(p)?;
    let mut t = Tableau::new(p, opts.clone());
    t.init();

    t.set_phase_one();
    match t.optimize() {
        Stop::Converged => {}
        Stop::IterLimit => return Ok(t.solution(LpStatus::IterationLimit)),
        Stop::Numerical(detail) => return Ok(t.solution(LpStatus::Numerical { detail })),
        Stop::Unbounded(_) => {
            return Ok(t.solution(LpStatus::Numerical {
                detail: "phase one reported an unbounded direction".into(),
            }))
        }
    }
    let violations: Vec<(usize, f64)> = (0..t.m)
        .filter_map(|i| {
            let v = t.val[t.n + t.m + i];
            (v > opts.tol_feas).then_some((i, v))
        })
        .collect();
    if !violations.is_empty() {
        return Ok(t.solution(LpStatus::Infeasible { violations }));
    }

    t.set_phase_two();
    let status = match t.optimize() {
        Stop::Converged => LpStatus::Optimal,
        Stop::IterLimit => LpStatus::IterationLimit,
        Stop::Unbounded(var) => LpStatus::Unbounded { var },
        Stop::Numerical(detail) => LpStatus::Numerical { detail },
    };
    Ok(t.solution(status))
}

/// Checks primal feasibility and the sign conditions on duals and reduced
/// costs at a claimed optimum. Returns the first failed condition.
pub fn verify_kkt(p: &LinearProgram, sol: &LpSolution, tol: f64) -> Result<(), String> {
    let near = |v: f64, b: f64| b.is_finite() && (v - b).abs() <= tol * (1.0 + b.abs());
    for (j, &xj) in sol.x.iter().enumerate() {
        if xj < p.var_lo[j] - tol || xj > p.var_hi[j] + tol {
            return Err(format!("variable {j} out of bounds: {xj}"));
        }
        let (at_lo, at_hi) = (near(xj, p.var_lo[j]), near(xj, p.var_hi[j]));
        let d = sol.reduced_costs[j];
        if at_lo && at_hi {
            continue;
        }
        if at_lo && d < -tol {
            return Err(format!("variable {j} at lower bound with reduced cost {d}"));
        }
        if at_hi && d > tol {
            return Err(format!("variable {j} at upper bound with reduced cost {d}"));
        }
        if !at_lo && !at_hi && d.abs() > tol {
            return Err(format!("interior variable {j} with reduced cost {d}"));
        }
    }
    for (i, row) in p.rows.iter().enumerate() {
        let act = sol.row_activity[i];
        if act < row.lo - tol * (1.0 + row.lo.abs()) || act > row.hi + tol * (1.0 + row.hi.abs()) {
            return Err(format!("row {i} activity {act} outside [{}, {}]", row.lo, row.hi));
        }
        let (at_lo, at_hi) = (near(act, row.lo), near(act, row.hi));
        let y = sol.duals[i];
        if at_lo && at_hi {
            continue;
        }
        if at_lo && y < -tol {
            return Err(format!("row {i} at lower bound with dual {y}"));
        }
        if at_hi && y > tol {
            return Err(format!("row {i} at upper bound with dual {y}"));
        }
        if !at_lo && !at_hi && y.abs() > tol {
            return Err(format!("inactive row {i} with dual {y}"));
        }
    }
    Ok(())
}

// ---------------------------------------------------------------------------
// Tests
// ---------------------------------------------------------------------------

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn solve(p: &LinearProgram) -> LpSolution {
        solve_lp(p, &SimplexOptions::default()).unwrap()
    }

    fn row(coeffs: &[f64], lo: f64, hi: f64) -> Row {
        Row { coeffs: coeffs.to_vec(), lo, hi }
    }

    #[test]
    fn solves_simple_bounded_lp() {
        let p = LinearProgram {
            objective: vec![-1.0, -1.0],
            var_lo: vec![0.0, 0.0],
            var_hi: vec![1.0, 1.0],
            rows: vec![row(&[1.0, 1.0], -INF, 1.0)],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.objective, -1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.x[0] + sol.x[1], 1.0, epsilon = 1e-9);
        verify_kkt(&p, &sol, 1e-7).unwrap();
    }

    #[test]
    fn respects_ranged_rows() {
        let p = LinearProgram {
            objective: vec![1.0, 0.0],
            var_lo: vec![0.0, 0.0],
            var_hi: vec![5.0, 1.0],
            rows: vec![row(&[1.0, 1.0], 2.0, 3.0)],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-9);
        assert_relative_eq!(sol.x[1], 1.0, epsilon = 1e-9);
        verify_kkt(&p, &sol, 1e-7).unwrap();
    }

    #[test]
    fn handles_equality_rows() {
        let p = LinearProgram {
            objective: vec![1.0, 1.0],
            var_lo: vec![0.0, 0.0],
            var_hi: vec![INF, INF],
            rows: vec![row(&[1.0, -1.0], 0.5, 0.5)],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.5, epsilon = 1e-9);
        assert_relative_eq!(sol.x[1], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn free_variables_enter_from_zero() {
        let p = LinearProgram {
            objective: vec![1.0],
            var_lo: vec![-INF],
            var_hi: vec![INF],
            rows: vec![row(&[1.0], -4.0, 9.0)],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[0], -4.0, epsilon = 1e-9);
    }

    #[test]
    fn bound_flip_without_rows() {
        let p = LinearProgram {
            objective: vec![-1.0],
            var_lo: vec![0.0],
            var_hi: vec![1.0],
            rows: vec![],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn diagnoses_infeasible_rows() {
        let p = LinearProgram {
            objective: vec![0.0],
            var_lo: vec![0.0],
            var_hi: vec![1.0],
            rows: vec![row(&[1.0], 2.0, INF), row(&[1.0], 0.0, 5.0)],
        };
        let sol = solve(&p);
        match &sol.status {
            LpStatus::Infeasible { violations } => {
                assert_eq!(violations.len(), 1);
                assert_eq!(violations[0].0, 0);
                assert_relative_eq!(violations[0].1, 1.0, epsilon = 1e-8);
            }
            other => panic!("expected infeasible, got {other:?}"),
        }
    }

    #[test]
    fn detects_unbounded_direction() {
        let p = LinearProgram {
            objective: vec![-1.0, 0.0],
            var_lo: vec![0.0, 0.0],
            var_hi: vec![INF, INF],
            rows: vec![row(&[1.0, -1.0], -INF, 0.0)],
        };
        let sol = solve(&p);
        match sol.status {
            LpStatus::Unbounded { .. } => {}
            other => panic!("expected unbounded, got {other:?}"),
        }
    }

    #[test]
    fn survives_classic_cycling_example() {
        // Beale's example cycles under naive largest-coefficient pricing;
        // the degenerate-run fallback must still reach the optimum -0.05.
        let p = LinearProgram {
            objective: vec![-0.75, 150.0, -0.02, 6.0],
            var_lo: vec![0.0; 4],
            var_hi: vec![INF; 4],
            rows: vec![
                row(&[0.25, -60.0, -0.04, 9.0], -INF, 0.0),
                row(&[0.5, -90.0, -0.02, 3.0], -INF, 0.0),
                row(&[0.0, 0.0, 1.0, 0.0], -INF, 1.0),
            ],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.objective, -0.05, epsilon = 1e-9);
    }

    #[test]
    fn respects_fixed_variables() {
        let p = LinearProgram {
            objective: vec![-1.0, -1.0],
            var_lo: vec![0.25, 0.0],
            var_hi: vec![0.25, 1.0],
            rows: vec![row(&[1.0, 1.0], -INF, 1.0)],
        };
        let sol = solve(&p);
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_relative_eq!(sol.x[0], 0.25, epsilon = 1e-12);
        assert_relative_eq!(sol.x[1], 0.75, epsilon = 1e-9);
    }

    #[test]
    fn output_is_deterministic() {
        let p = LinearProgram {
            objective: vec![-1.0, -2.0, 1.0],
            var_lo: vec![0.0, 0.0, -1.0],
            var_hi: vec![4.0, 3.0, 1.0],
            rows: vec![
                row(&[1.0, 1.0, 0.0], -INF, 5.0),
                row(&[0.0, 1.0, -1.0], -1.0, 2.0),
                row(&[1.0, 0.0, 1.0], 0.0, 4.0),
            ],
        };
        let a = solve(&p);
        let b = solve(&p);
        assert_eq!(a.x, b.x);
        assert_eq!(a.iterations, b.iterations);
        assert_eq!(a.duals, b.duals);
    }

    #[test]
    fn row_and_objective_scaling_keep_the_argmin() {
        let base = LinearProgram {
            objective: vec![1.0, -1.0],
            var_lo: vec![0.0, 0.0],
            var_hi: vec![10.0, 10.0],
            rows: vec![row(&[1.0, 2.0], -INF, 4.0), row(&[3.0, -1.0], -2.0, 6.0)],
        };
        let mut scaled = base.clone();
        for c in &mut scaled.objective {
            *c *= 5.0;
        }
        for r in &mut scaled.rows {
            for c in &mut r.coeffs {
                *c *= 10.0;
            }
            r.lo *= 10.0;
            r.hi *= 10.0;
        }
        let a = solve(&base);
        let b = solve(&scaled);
        assert_eq!(a.status, LpStatus::Optimal);
        assert_eq!(b.status, LpStatus::Optimal);
        for (va, vb) in a.x.iter().zip(&b.x) {
            assert_relative_eq!(va, vb, epsilon = 1e-9);
        }
    }

    #[test]
    fn iteration_limit_is_reported() {
        let p = LinearProgram {
            objective: vec![-1.0, -1.0, -1.0],
            var_lo: vec![0.0; 3],
            var_hi: vec![1.0; 3],
            rows: vec![
                row(&[1.0, 1.0, 0.0], 0.5, 2.0),
                row(&[0.0, 1.0, 1.0], 0.5, 2.0),
            ],
        };
        let opts = SimplexOptions { max_iters: Some(1), ..Default::default() };
        let sol = solve_lp(&p, &opts).unwrap();
        assert_eq!(sol.status, LpStatus::IterationLimit);
    }

    #[test]
    fn rejects_malformed_input() {
        let p = LinearProgram {
            objective: vec![1.0],
            var_lo: vec![2.0],
            var_hi: vec![1.0],
            rows: vec![],
        };
        assert!(solve_lp(&p, &SimplexOptions::default()).is_err());
    }
}
