//! Linear programs, an embedded simplex solver and the triangle-relaxation LPs.

mod lpfile;
mod presolve;
mod relaxed;
mod simplex;

use std::time::{Duration, Instant};

use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::scalar::Scalar;

pub use lpfile::{lp_to_string, write_lp_file};
pub use relaxed::{
    build_relaxed_lp, build_relaxed_lp_at, lp_all_bounds, lp_last_bound, lp_verify, LpVerdict, NeuronPhase,
    RelaxedLp,
};

use presolve::Presolved;
use simplex::{Limits, Outcome, Tableau};

/// Direction of an inequality row.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Sense {
    /// `a . x <= rhs`
    Le,
    /// `a . x >= rhs`
    Ge,
}

/// Sparse row `sum coeffs[k].1 * x[coeffs[k].0]` against a right-hand side.
#[derive(Clone, Debug, PartialEq)]
pub struct Constraint<T> {
    pub coeffs: Vec<(usize, T)>,
    pub rhs: T,
}

impl<T: Scalar> Constraint<T> {
    pub fn activity(&self, x: ArrayView1<'_, T>) -> T {
        self.coeffs.iter().map(|&(j, a)| a * x[j]).sum()
    }
}

/// `min c . x + offset` subject to equalities, inequalities and variable boxes.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearProgram<T> {
    objective: Array1<T>,
    offset: T,
    equalities: Vec<Constraint<T>>,
    inequalities: Vec<(Constraint<T>, Sense)>,
    lower: Array1<T>,
    upper: Array1<T>,
    names: Vec<String>,
}

impl<T: Scalar> LinearProgram<T> {
    /// `num_vars` free variables and a zero objective.
    pub fn new(num_vars: usize) -> Self {
        Self {
            objective: Array1::zeros(num_vars),
            offset: T::zero(),
            equalities: Vec::new(),
            inequalities: Vec::new(),
            lower: Array1::from_elem(num_vars, T::neg_infinity()),
            upper: Array1::from_elem(num_vars, T::infinity()),
            names: (0..num_vars).map(|j| format!("v{j}")).collect(),
        }
    }

    pub fn num_vars(&self) -> usize {
        self.objective.len()
    }

    pub fn set_bounds(&mut self, j: usize, lower: T, upper: T) {
        self.lower[j] = lower;
        self.upper[j] = upper;
    }

    pub fn set_name(&mut self, j: usize, name: impl Into<String>) {
        self.names[j] = name.into();
    }

    pub fn set_objective(&mut self, objective: Array1<T>, offset: T) {
        assert_eq!(objective.len(), self.num_vars(), "objective length");
        self.objective = objective;
        self.offset = offset;
    }

    pub fn add_equality(&mut self, coeffs: Vec<(usize, T)>, rhs: T) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.num_vars()));
        self.equalities.push(Constraint { coeffs, rhs });
    }

    pub fn add_inequality(&mut self, coeffs: Vec<(usize, T)>, sense: Sense, rhs: T) {
        debug_assert!(coeffs.iter().all(|&(j, _)| j < self.num_vars()));
        self.inequalities.push((Constraint { coeffs, rhs }, sense));
    }

    pub fn objective(&self) -> ArrayView1<'_, T> {
        self.objective.view()
    }

    pub fn offset(&self) -> T {
        self.offset
    }

    pub fn equalities(&self) -> &[Constraint<T>] {
        &self.equalities
    }

    pub fn inequalities(&self) -> &[(Constraint<T>, Sense)] {
        &self.inequalities
    }

    pub fn lower(&self) -> ArrayView1<'_, T> {
        self.lower.view()
    }

    pub fn upper(&self) -> ArrayView1<'_, T> {
        self.upper.view()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    fn dense<'a>(&self, rows: impl Iterator<Item = &'a Constraint<T>>, count: usize) -> Array2<T> {
        let mut out = Array2::zeros((count, self.num_vars()));
        for (i, row) in rows.enumerate() {
            for &(j, a) in &row.coeffs {
                out[[i, j]] += a;
            }
        }
        out
    }

    pub fn equality_matrix(&self) -> Array2<T> {
        self.dense(self.equalities.iter(), self.equalities.len())
    }

    pub fn inequality_matrix(&self) -> Array2<T> {
        self.dense(self.inequalities.iter().map(|(c, _)| c), self.inequalities.len())
    }

    pub fn objective_value(&self, x: ArrayView1<'_, T>) -> T {
        self.objective.dot(&x) + self.offset
    }

    /// Largest violation of any row or variable bound at `x`.
    pub fn primal_residual(&self, x: ArrayView1<'_, T>) -> T {
        let mut worst = T::zero();
        for c in &self.equalities {
            worst = worst.max((c.activity(x) - c.rhs).abs());
        }
        for (c, sense) in &self.inequalities {
            let a = c.activity(x);
            let v = match sense {
                Sense::Le => a - c.rhs,
                Sense::Ge => c.rhs - a,
            };
            worst = worst.max(v);
        }
        for j in 0..self.num_vars() {
            worst = worst.max(self.lower[j] - x[j]).max(x[j] - self.upper[j]);
        }
        worst
    }

    /// Reduced costs `c - E^T y_eq - I^T y_ineq`.
    pub fn reduced_costs(&self, eq_duals: ArrayView1<'_, T>, ineq_duals: ArrayView1<'_, T>) -> Array1<T> {
        self.reduced_costs_for(self.objective.view(), eq_duals, ineq_duals)
    }

    fn reduced_costs_for(
        &self,
        objective: ArrayView1<'_, T>,
        eq_duals: ArrayView1<'_, T>,
        ineq_duals: ArrayView1<'_, T>,
    ) -> Array1<T> {
        let mut d = objective.to_owned();
        for (c, &y) in self.equalities.iter().zip(eq_duals) {
            for &(j, a) in &c.coeffs {
                d[j] -= a * y;
            }
        }
        for ((c, _), &y) in self.inequalities.iter().zip(ineq_duals) {
            for &(j, a) in &c.coeffs {
                d[j] -= a * y;
            }
        }
        d
    }

    /// Lagrangian dual function at the given multipliers. Inequality
    /// multipliers are projected onto their sign (`>= 0` for `Ge`, `<= 0` for
    /// `Le`) first, so the result is a lower bound on the optimum for any input.
    /// Reduced costs of magnitude below `free_tol` on unbounded directions are
    /// treated as zero.
    pub fn dual_value(&self, eq_duals: ArrayView1<'_, T>, ineq_duals: ArrayView1<'_, T>, free_tol: T) -> T {
        self.dual_value_for(self.objective.view(), self.offset, eq_duals, ineq_duals, free_tol)
    }

    fn dual_value_for(
        &self,
        objective: ArrayView1<'_, T>,
        offset: T,
        eq_duals: ArrayView1<'_, T>,
        ineq_duals: ArrayView1<'_, T>,
        free_tol: T,
    ) -> T {
        let ineq: Array1<T> = self
            .inequalities
            .iter()
            .zip(ineq_duals)
            .map(|((_, sense), &y)| match sense {
                Sense::Ge => y.max(T::zero()),
                Sense::Le => y.min(T::zero()),
            })
            .collect();
        let d = self.reduced_costs_for(objective, eq_duals, ineq.view());
        let mut value = offset;
        for (c, &y) in self.equalities.iter().zip(eq_duals) {
            value += c.rhs * y;
        }
        for ((c, _), &y) in self.inequalities.iter().zip(&ineq) {
            value += c.rhs * y;
        }
        for j in 0..self.num_vars() {
            let dj = d[j];
            let bound = if dj > T::zero() { self.lower[j] } else { self.upper[j] };
            if bound.is_finite() {
                value += dj * bound;
            } else if dj.abs() > free_tol {
                return T::neg_infinity();
            }
        }
        value
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
    NumericalFailure,
    IterationLimit,
    TimeLimit,
}

/// Solver tolerances and limits.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub feasibility_tol: f64,
    pub optimality_tol: f64,
    pub max_iterations: usize,
    /// Wall-clock limit per LP.
    pub time_limit: Option<Duration>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            feasibility_tol: 1e-8,
            optimality_tol: 1e-8,
            max_iterations: 200_000,
            time_limit: Some(Duration::from_secs(60)),
        }
    }
}

impl SolverConfig {
    fn limits(&self) -> Limits {
        Limits {
            feas_tol: self.feasibility_tol,
            opt_tol: self.optimality_tol,
            max_iterations: self.max_iterations,
            deadline: self.time_limit.map(|d| Instant::now() + d),
        }
    }
}

/// Accepted primal residual of an optimal solution.
pub const PRIMAL_RESIDUAL_TOL: f64 = 1e-7;
/// Accepted relative duality gap of an optimal solution.
pub const DUALITY_GAP_TOL: f64 = 1e-6;

#[derive(Clone, Debug)]
pub struct LpSolution<T> {
    pub status: LpStatus,
    /// Primal objective; NaN unless optimal.
    pub value: T,
    /// Dual objective of the recovered multipliers, always a valid lower bound
    /// when finite.
    pub dual_value: T,
    pub primal: Array1<T>,
    pub eq_duals: Array1<T>,
    pub ineq_duals: Array1<T>,
    pub iterations: usize,
}

impl<T: Scalar> LpSolution<T> {
    fn failed(status: LpStatus, lp: &LinearProgram<T>, iterations: usize) -> Self {
        Self {
            status,
            value: T::nan(),
            dual_value: T::nan(),
            primal: Array1::from_elem(lp.num_vars(), T::nan()),
            eq_duals: Array1::zeros(lp.equalities.len()),
            ineq_duals: Array1::zeros(lp.inequalities.len()),
            iterations,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == LpStatus::Optimal
    }

    pub fn duality_gap(&self) -> T {
        self.value - self.dual_value
    }

    /// The smaller of the primal and dual objective.
    pub fn lower_bound(&self) -> T {
        self.value.min(self.dual_value)
    }
}

/// An LP with presolve and a feasible starting basis computed once, ready to
/// be minimized against any number of objectives.
#[derive(Debug)]
pub struct LpSession<'a, T: Scalar> {
    lp: &'a LinearProgram<T>,
    config: SolverConfig,
    presolved: Presolved<T>,
    start: Result<Tableau<T>, LpStatus>,
}

impl<'a, T: Scalar> LpSession<'a, T> {
    pub fn new(lp: &'a LinearProgram<T>, config: &SolverConfig) -> Self {
        let presolved = Presolved::new(lp, T::of(config.feasibility_tol));
        let start = if presolved.infeasible {
            Err(LpStatus::Infeasible)
        } else {
            let mut tab = presolved.tableau();
            match tab.phase_one(&config.limits()) {
                Outcome::Optimal => Ok(tab),
                other => Err(status_of(other)),
            }
        };
        Self {
            lp,
            config: config.clone(),
            presolved,
            start,
        }
    }

    pub fn lp(&self) -> &LinearProgram<T> {
        self.lp
    }

    /// Minimizes `objective . x + offset` over the session's feasible set.
    pub fn solve(&self, objective: ArrayView1<'_, T>, offset: T) -> LpSolution<T> {
        let lp = self.lp;
        assert_eq!(objective.len(), lp.num_vars(), "objective length");
        let mut tab = match &self.start {
            Ok(t) => t.clone(),
            Err(status) => return LpSolution::failed(*status, lp, 0),
        };
        let (cost, _) = self.presolved.reduce_objective(objective);
        let outcome = tab.phase_two(&cost, &self.config.limits());
        if outcome != Outcome::Optimal {
            return LpSolution::failed(status_of(outcome), lp, tab.iterations);
        }
        let primal = self.presolved.expand_primal(tab.structural());
        let (eq_duals, ineq_duals) = self.presolved.recover_duals(lp, objective, &cost, &tab);
        let value = objective.dot(&primal) + offset;
        let scale = T::one() + objective.iter().fold(T::zero(), |m, v| m.max(v.abs()));
        let free_tol = T::of(1e-9) * scale;
        let dual_value = lp.dual_value_for(objective, offset, eq_duals.view(), ineq_duals.view(), free_tol);
        let residual = lp.primal_residual(primal.view());
        let gap = value - dual_value;
        let ok = residual <= T::of(PRIMAL_RESIDUAL_TOL)
            && gap.abs() <= T::of(DUALITY_GAP_TOL) * (T::one() + value.abs());
        LpSolution {
            status: if ok { LpStatus::Optimal } else { LpStatus::NumericalFailure },
            value,
            dual_value,
            primal,
            eq_duals,
            ineq_duals,
            iterations: tab.iterations,
        }
    }
}

fn status_of(outcome: Outcome) -> LpStatus {
    match outcome {
        Outcome::Optimal => LpStatus::Optimal,
        Outcome::Infeasible => LpStatus::Infeasible,
        Outcome::Unbounded => LpStatus::Unbounded,
        Outcome::IterationLimit => LpStatus::IterationLimit,
        Outcome::TimeLimit => LpStatus::TimeLimit,
        Outcome::Numerical => LpStatus::NumericalFailure,
    }
}

/// Solves `lp` with its own objective.
pub fn solve<T: Scalar>(lp: &LinearProgram<T>, config: &SolverConfig) -> LpSolution<T> {
    LpSession::new(lp, config).solve(lp.objective(), lp.offset())
}
