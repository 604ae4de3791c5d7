//! Dense bounded-variable primal simplex.
//!
//! Works on `lo <= A x <= hi`, `l <= x <= u` in computational form: one
//! logical `s_i = a_i . x` per row carries the row range as its bounds, so the
//! system is `[A | -I] (x, s) = 0`. The full tableau `B^-1 [A | -I]` is kept
//! explicitly. Phase 1 minimizes the sum of infeasibilities; both phases use
//! Dantzig pricing with a Harris ratio test and drop to Bland's rule after a
//! run of degenerate pivots.

use std::time::Instant;

use crate::scalar::Scalar;

const PIVOT_TOL: f64 = 1e-9;
const DEGENERATE_RUN: usize = 50;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Outcome {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    TimeLimit,
    Numerical,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Place {
    Basic,
    Lower,
    Upper,
    /// Free nonbasic variable parked at zero.
    Zero,
}

#[derive(Clone, Debug)]
pub(crate) struct Limits {
    pub feas_tol: f64,
    pub opt_tol: f64,
    pub max_iterations: usize,
    pub deadline: Option<Instant>,
}

#[derive(Clone, Debug)]
pub(crate) struct Tableau<T> {
    m: usize,
    n: usize,
    /// Row-major `m x (n + m)`.
    t: Vec<T>,
    /// Original rows, kept for residual checks and refactorization.
    a: Vec<T>,
    lower: Vec<T>,
    upper: Vec<T>,
    x: Vec<T>,
    place: Vec<Place>,
    basis: Vec<usize>,
    pub iterations: usize,
}

impl<T: Scalar> Tableau<T> {
    /// `a` is row-major `m x n`; `row_lo/row_hi` are the row ranges.
    pub fn new(m: usize, n: usize, a: Vec<T>, row_lo: &[T], row_hi: &[T], var_lo: &[T], var_hi: &[T]) -> Self {
        debug_assert_eq!(a.len(), m * n);
        let width = n + m;
        let mut t = vec![T::zero(); m * width];
        for i in 0..m {
            for j in 0..n {
                t[i * width + j] = -a[i * n + j];
            }
            t[i * width + n + i] = T::one();
        }
        let mut lower = var_lo.to_vec();
        lower.extend_from_slice(row_lo);
        let mut upper = var_hi.to_vec();
        upper.extend_from_slice(row_hi);
        let mut place = vec![Place::Basic; width];
        let mut x = vec![T::zero(); width];
        for j in 0..n {
            let (p, v) = if lower[j].is_finite() {
                (Place::Lower, lower[j])
            } else if upper[j].is_finite() {
                (Place::Upper, upper[j])
            } else {
                (Place::Zero, T::zero())
            };
            place[j] = p;
            x[j] = v;
        }
        let mut tab = Self {
            m,
            n,
            t,
            a,
            lower,
            upper,
            x,
            place,
            basis: (n..n + m).collect(),
            iterations: 0,
        };
        tab.recompute_basics();
        tab
    }

    fn width(&self) -> usize {
        self.n + self.m
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> T {
        self.t[i * (self.n + self.m) + j]
    }

    /// Structural values.
    pub fn structural(&self) -> &[T] {
        &self.x[..self.n]
    }

    /// `x_B = -sum over nonbasic j of T_j x_j`.
    fn recompute_basics(&mut self) {
        let w = self.width();
        for i in 0..self.m {
            let row = &self.t[i * w..(i + 1) * w];
            let mut s = T::zero();
            for j in 0..w {
                if self.place[j] != Place::Basic && self.x[j] != T::zero() {
                    s -= row[j] * self.x[j];
                }
            }
            let b = self.basis[i];
            self.x[b] = s;
        }
    }

    fn infeasibility(&self, tol: T) -> T {
        self.basis
            .iter()
            .map(|&b| {
                let v = self.x[b];
                if v < self.lower[b] - tol {
                    self.lower[b] - v
                } else if v > self.upper[b] + tol {
                    v - self.upper[b]
                } else {
                    T::zero()
                }
            })
            .sum()
    }

    /// `d_j = c_j - sum_i c_B(i) T_ij` for a cost over all `n + m` columns.
    fn reduced_costs(&self, cost: &[T]) -> Vec<T> {
        let w = self.width();
        let mut d = cost.to_vec();
        for i in 0..self.m {
            let cb = cost[self.basis[i]];
            if cb != T::zero() {
                let row = &self.t[i * w..(i + 1) * w];
                for j in 0..w {
                    d[j] -= cb * row[j];
                }
            }
        }
        d
    }

    fn can_increase(&self, j: usize) -> bool {
        match self.place[j] {
            Place::Lower | Place::Zero => self.upper[j] > self.lower[j],
            _ => false,
        }
    }

    fn can_decrease(&self, j: usize) -> bool {
        match self.place[j] {
            Place::Upper | Place::Zero => self.upper[j] > self.lower[j],
            _ => false,
        }
    }

    /// Entering column and direction (+1 / -1), or `None` at optimality.
    fn price(&self, d: &[T], tol: T, bland: bool) -> Option<(usize, T)> {
        let mut best: Option<(usize, T)> = None;
        let mut best_mag = T::zero();
        for j in 0..self.width() {
            if self.place[j] == Place::Basic {
                continue;
            }
            let dir = if d[j] < -tol && self.can_increase(j) {
                T::one()
            } else if d[j] > tol && self.can_decrease(j) {
                -T::one()
            } else {
                continue;
            };
            if bland {
                return Some((j, dir));
            }
            if d[j].abs() > best_mag {
                best_mag = d[j].abs();
                best = Some((j, dir));
            }
        }
        best
    }

    /// Harris two-pass ratio test. With `phase_one`, infeasible basics block
    /// when they reach the bound they violate.
    fn ratio_test(&self, q: usize, dir: T, tol: T, phase_one: bool) -> Option<(usize, T, bool)> {
        let ptol = T::of(PIVOT_TOL);
        let limit_of = |i: usize, relax: T| -> Option<(T, bool)> {
            let alpha = self.at(i, q);
            if alpha.abs() <= ptol {
                return None;
            }
            let rate = -alpha * dir;
            let b = self.basis[i];
            let (v, lo, hi) = (self.x[b], self.lower[b], self.upper[b]);
            if phase_one && v < lo - tol {
                return (rate > T::zero()).then(|| ((lo - v) / rate, false));
            }
            if phase_one && v > hi + tol {
                return (rate < T::zero()).then(|| ((hi - v) / rate, true));
            }
            if rate > T::zero() {
                hi.is_finite().then(|| (((hi + relax - v) / rate).max(T::zero()), true))
            } else {
                lo.is_finite().then(|| (((lo - relax - v) / rate).max(T::zero()), false))
            }
        };
        let mut bound = T::infinity();
        for i in 0..self.m {
            if let Some((r, _)) = limit_of(i, tol) {
                bound = bound.min(r);
            }
        }
        if !bound.is_finite() {
            return None;
        }
        let mut pick: Option<(usize, T, bool)> = None;
        let mut pick_mag = T::zero();
        for i in 0..self.m {
            if let Some((r, _)) = limit_of(i, tol) {
                if r <= bound {
                    let mag = self.at(i, q).abs();
                    if mag > pick_mag {
                        pick_mag = mag;
                        let (exact, at_upper) = limit_of(i, T::zero()).expect("same row qualifies");
                        pick = Some((i, exact.max(T::zero()), at_upper));
                    }
                }
            }
        }
        pick
    }

    fn pivot(&mut self, r: usize, q: usize) {
        let w = self.width();
        let piv = self.t[r * w + q];
        let inv = T::one() / piv;
        for j in 0..w {
            self.t[r * w + j] *= inv;
        }
        let nz: Vec<usize> = (0..w).filter(|&j| self.t[r * w + j] != T::zero()).collect();
        let (before, rest) = self.t.split_at_mut(r * w);
        let (prow, after) = rest.split_at_mut(w);
        let update = |row: &mut [T]| {
            let f = row[q];
            if f != T::zero() {
                for &j in &nz {
                    row[j] -= f * prow[j];
                }
                row[q] = T::zero();
            }
        };
        before.chunks_mut(w).for_each(update);
        after.chunks_mut(w).for_each(update);
        prow[q] = T::one();
    }

    /// One iteration against cost `d`; returns `Ok(false)` at optimality.
    fn step(&mut self, d: &mut Vec<T>, limits: &Limits, phase_one: bool, bland: bool) -> Result<bool, Outcome> {
        let tol = T::of(limits.feas_tol);
        let Some((q, dir)) = self.price(d, T::of(limits.opt_tol), bland) else {
            return Ok(false);
        };
        let span = self.upper[q] - self.lower[q];
        let blocking = self.ratio_test(q, dir, tol, phase_one);
        let flip = span.is_finite() && blocking.is_none_or(|(_, theta, _)| span <= theta);
        if !flip && blocking.is_none() {
            return Err(Outcome::Unbounded);
        }
        let theta = if flip { span } else { blocking.expect("checked").1 };
        if theta != T::zero() {
            for i in 0..self.m {
                let alpha = self.at(i, q);
                if alpha != T::zero() {
                    let b = self.basis[i];
                    self.x[b] -= alpha * dir * theta;
                }
            }
            self.x[q] += dir * theta;
        }
        if flip {
            let to_upper = dir > T::zero();
            self.place[q] = if to_upper { Place::Upper } else { Place::Lower };
            self.x[q] = if to_upper { self.upper[q] } else { self.lower[q] };
        } else {
            let (r, _, at_upper) = blocking.expect("checked");
            let leaving = self.basis[r];
            self.pivot(r, q);
            self.basis[r] = q;
            self.place[q] = Place::Basic;
            self.place[leaving] = if at_upper { Place::Upper } else { Place::Lower };
            self.x[leaving] = if at_upper { self.upper[leaving] } else { self.lower[leaving] };
            if !phase_one {
                // keep reduced costs in sync: d -= d_q * (pivot row)
                let w = self.width();
                let dq = d[q];
                if dq != T::zero() {
                    for j in 0..w {
                        d[j] -= dq * self.t[r * w + j];
                    }
                }
                d[q] = T::zero();
            }
        }
        self.iterations += 1;
        Ok(true)
    }

    fn check_limits(&self, limits: &Limits, start_iter: usize) -> Result<(), Outcome> {
        if self.iterations - start_iter >= limits.max_iterations {
            return Err(Outcome::IterationLimit);
        }
        if self.iterations.is_multiple_of(64) {
            if let Some(deadline) = limits.deadline {
                if Instant::now() >= deadline {
                    return Err(Outcome::TimeLimit);
                }
            }
        }
        Ok(())
    }

    /// Drives the basis to feasibility.
    pub fn phase_one(&mut self, limits: &Limits) -> Outcome {
        let tol = T::of(limits.feas_tol);
        let start = self.iterations;
        let mut degenerate = 0usize;
        for attempt in 0..2 {
            loop {
                if let Err(o) = self.check_limits(limits, start) {
                    return o;
                }
                let w = self.width();
                let mut cost = vec![T::zero(); w];
                let mut any = false;
                for &b in &self.basis {
                    if self.x[b] < self.lower[b] - tol {
                        cost[b] = -T::one();
                        any = true;
                    } else if self.x[b] > self.upper[b] + tol {
                        cost[b] = T::one();
                        any = true;
                    }
                }
                if !any {
                    break;
                }
                let mut d = self.reduced_costs(&cost);
                let before = self.infeasibility(tol);
                match self.step(&mut d, limits, true, degenerate >= DEGENERATE_RUN) {
                    Ok(true) => {}
                    Ok(false) => return Outcome::Infeasible,
                    Err(Outcome::Unbounded) => return Outcome::Numerical,
                    Err(o) => return o,
                }
                if self.infeasibility(tol) < before {
                    degenerate = 0;
                } else {
                    degenerate += 1;
                }
            }
            self.recompute_basics();
            if self.infeasibility(tol) == T::zero() {
                return Outcome::Optimal;
            }
            if attempt == 0 && !self.refactor() {
                return Outcome::Numerical;
            }
        }
        Outcome::Numerical
    }

    /// Minimizes `cost . x` over structurals from a feasible basis.
    pub fn phase_two(&mut self, cost: &[T], limits: &Limits) -> Outcome {
        debug_assert_eq!(cost.len(), self.n);
        let mut full = cost.to_vec();
        full.resize(self.width(), T::zero());
        let tol = T::of(limits.feas_tol);
        let start = self.iterations;
        let mut degenerate = 0usize;
        for attempt in 0..3 {
            let mut d = self.reduced_costs(&full);
            loop {
                if let Err(o) = self.check_limits(limits, start) {
                    return o;
                }
                let obj_before = self.objective(&full);
                match self.step(&mut d, limits, false, degenerate >= DEGENERATE_RUN) {
                    Ok(true) => {}
                    Ok(false) => break,
                    Err(o) => return o,
                }
                if self.objective(&full) < obj_before - T::of(1e-12) {
                    degenerate = 0;
                } else {
                    degenerate += 1;
                }
            }
            // confirm with freshly computed values and reduced costs
            self.recompute_basics();
            let fresh = self.reduced_costs(&full);
            let optimal = self.price(&fresh, T::of(limits.opt_tol), false).is_none();
            let feasible = self.infeasibility(tol) == T::zero() && self.residual() <= T::of(1e-9);
            if optimal && feasible {
                return Outcome::Optimal;
            }
            if attempt < 2 && !self.refactor() {
                return Outcome::Numerical;
            }
            if !feasible {
                match self.phase_one(limits) {
                    Outcome::Optimal => {}
                    Outcome::Infeasible => return Outcome::Numerical,
                    o => return o,
                }
            }
        }
        Outcome::Numerical
    }

    fn objective(&self, cost: &[T]) -> T {
        cost.iter().zip(&self.x).map(|(&c, &v)| c * v).sum()
    }

    /// `max_i |a_i . x - s_i|` using the original rows.
    pub fn residual(&self) -> T {
        let mut worst = T::zero();
        for i in 0..self.m {
            let mut s = T::zero();
            for j in 0..self.n {
                s += self.a[i * self.n + j] * self.x[j];
            }
            worst = worst.max((s - self.x[self.n + i]).abs());
        }
        worst
    }

    /// Row multipliers `y = c_B^T B^-1` for a structural cost vector.
    pub fn row_duals(&self, cost: &[T]) -> Vec<T> {
        let w = self.width();
        let mut y = vec![T::zero(); self.m];
        for i in 0..self.m {
            let b = self.basis[i];
            let cb = if b < self.n { cost[b] } else { T::zero() };
            if cb != T::zero() {
                for (k, yk) in y.iter_mut().enumerate() {
                    // logical block of the tableau is -B^-1
                    *yk -= cb * self.t[i * w + self.n + k];
                }
            }
        }
        y
    }

    /// Rebuilds `B^-1 [A | -I]` from the original rows for the current basis.
    fn refactor(&mut self) -> bool {
        let (m, n, w) = (self.m, self.n, self.width());
        // basis matrix columns of [A | -I]
        let mut bmat = vec![T::zero(); m * m];
        for (k, &b) in self.basis.iter().enumerate() {
            for i in 0..m {
                bmat[i * m + k] = if b < n {
                    self.a[i * n + b]
                } else if b - n == i {
                    -T::one()
                } else {
                    T::zero()
                };
            }
        }
        let mut rhs = vec![T::zero(); m * w];
        for i in 0..m {
            for j in 0..n {
                rhs[i * w + j] = self.a[i * n + j];
            }
            rhs[i * w + n + i] = -T::one();
        }
        if !solve_dense_in_place(&mut bmat, &mut rhs, m, w) {
            return false;
        }
        self.t = rhs;
        self.recompute_basics();
        true
    }
}

/// Solves `B X = R` by Gaussian elimination with partial pivoting;
/// `R` (row-major `m x w`) is overwritten with `X`.
pub(crate) fn solve_dense_in_place<T: Scalar>(b: &mut [T], r: &mut [T], m: usize, w: usize) -> bool {
    for col in 0..m {
        let mut piv = col;
        for i in col + 1..m {
            if b[i * m + col].abs() > b[piv * m + col].abs() {
                piv = i;
            }
        }
        if b[piv * m + col].abs() <= T::of(1e-14) {
            return false;
        }
        if piv != col {
            for j in 0..m {
                b.swap(col * m + j, piv * m + j);
            }
            for j in 0..w {
                r.swap(col * w + j, piv * w + j);
            }
        }
        let inv = T::one() / b[col * m + col];
        for i in 0..m {
            if i == col {
                continue;
            }
            let f = b[i * m + col] * inv;
            if f == T::zero() {
                continue;
            }
            for j in col..m {
                let v = b[col * m + j];
                b[i * m + j] -= f * v;
            }
            for j in 0..w {
                let v = r[col * w + j];
                r[i * w + j] -= f * v;
            }
        }
    }
    for i in 0..m {
        let inv = T::one() / b[i * m + i];
        for j in 0..w {
            r[i * w + j] *= inv;
        }
    }
    true
}
