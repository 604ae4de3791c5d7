//! Presolve and postsolve around the simplex.
//!
//! Equality rows are eliminated by substitution, singleton rows become
//! variable bounds, and rows implied by the variable bounds are dropped. The
//! boxes of eliminated variables turn into ranged rows. Postsolve rebuilds the
//! full primal point and a full set of row multipliers for the original LP.

use ndarray::{Array1, ArrayView1};

use crate::lp::simplex::Tableau;
use crate::lp::{LinearProgram, Sense};
use crate::scalar::Scalar;

const DROP_TOL: f64 = 1e-13;

#[derive(Clone, Copy, Debug)]
enum Origin {
    Inequality(usize),
    /// Box of the eliminated variable with this elimination index.
    EliminatedBox(usize),
}

#[derive(Clone, Debug)]
struct Row<T> {
    /// Dense over reduced variables.
    coeffs: Vec<T>,
    lo: T,
    hi: T,
    origin: Origin,
    active: bool,
}

#[derive(Clone, Debug)]
struct Elimination<T> {
    var: usize,
    eq_row: usize,
    /// Dense over original variables; nonzero only on kept variables.
    coeffs: Vec<T>,
    constant: T,
}

#[derive(Clone, Debug)]
pub(crate) struct Presolved<T> {
    n: usize,
    kept: Vec<usize>,
    elims: Vec<Elimination<T>>,
    rows: Vec<Row<T>>,
    lower: Vec<T>,
    upper: Vec<T>,
    /// Row (index into `rows`) and coefficient that produced a tightened bound.
    lower_src: Vec<Option<(usize, T)>>,
    upper_src: Vec<Option<(usize, T)>>,
    /// Factorization of the eliminated-column block of the equality rows.
    eq_block: Option<DenseLu<T>>,
    pub infeasible: bool,
}

impl<T: Scalar> Presolved<T> {
    pub fn new(lp: &LinearProgram<T>, tol: T) -> Self {
        let n = lp.num_vars();
        let drop = T::of(DROP_TOL);
        let mut elims: Vec<Elimination<T>> = Vec::new();
        let mut elim_of: Vec<Option<usize>> = vec![None; n];
        let mut infeasible = false;

        for (r, eq) in lp.equalities().iter().enumerate() {
            let mut row = vec![T::zero(); n];
            for &(j, a) in &eq.coeffs {
                row[j] += a;
            }
            let mut rhs = eq.rhs;
            substitute(&mut row, &mut rhs, &elims, &elim_of);
            let big = row.iter().fold(T::zero(), |m, v| m.max(v.abs()));
            if big <= drop {
                if rhs.abs() > tol {
                    infeasible = true;
                }
                continue;
            }
            let p = (0..n).rev().find(|&j| row[j].abs() >= T::of(0.1) * big).expect("nonzero row");
            let inv = T::one() / row[p];
            let mut coeffs: Vec<T> = row.iter().map(|&a| -a * inv).collect();
            coeffs[p] = T::zero();
            clean(&mut coeffs, drop);
            let constant = rhs * inv;
            for e in elims.iter_mut() {
                let f = e.coeffs[p];
                if f != T::zero() {
                    for j in 0..n {
                        e.coeffs[j] += f * coeffs[j];
                    }
                    e.coeffs[p] = T::zero();
                    e.constant += f * constant;
                }
            }
            elim_of[p] = Some(elims.len());
            elims.push(Elimination {
                var: p,
                eq_row: r,
                coeffs,
                constant,
            });
        }

        let kept: Vec<usize> = (0..n).filter(|&j| elim_of[j].is_none()).collect();
        let reduce = |row: &[T]| -> Vec<T> { kept.iter().map(|&j| row[j]).collect() };

        let mut rows = Vec::new();
        for (r, (c, sense)) in lp.inequalities().iter().enumerate() {
            let mut row = vec![T::zero(); n];
            for &(j, a) in &c.coeffs {
                row[j] += a;
            }
            let mut rhs = c.rhs;
            substitute(&mut row, &mut rhs, &elims, &elim_of);
            clean(&mut row, drop);
            let (lo, hi) = match sense {
                Sense::Ge => (rhs, T::infinity()),
                Sense::Le => (T::neg_infinity(), rhs),
            };
            rows.push(Row {
                coeffs: reduce(&row),
                lo,
                hi,
                origin: Origin::Inequality(r),
                active: true,
            });
        }
        for (k, e) in elims.iter().enumerate() {
            let (l, u) = (lp.lower()[e.var], lp.upper()[e.var]);
            if l.is_finite() || u.is_finite() {
                rows.push(Row {
                    coeffs: reduce(&e.coeffs),
                    lo: l - e.constant,
                    hi: u - e.constant,
                    origin: Origin::EliminatedBox(k),
                    active: true,
                });
            }
        }

        let mut lower: Vec<T> = kept.iter().map(|&j| lp.lower()[j]).collect();
        let mut upper: Vec<T> = kept.iter().map(|&j| lp.upper()[j]).collect();
        let mut lower_src = vec![None; kept.len()];
        let mut upper_src = vec![None; kept.len()];

        // singleton and empty rows
        for (ri, row) in rows.iter_mut().enumerate() {
            let mut nz = row.coeffs.iter().enumerate().filter(|(_, a)| a.abs() > drop);
            let first = nz.next();
            let second = nz.next();
            match (first, second) {
                (None, _) => {
                    if row.lo > tol || row.hi < -tol {
                        infeasible = true;
                    }
                    row.active = false;
                }
                (Some((j, &a)), None) => {
                    let (mut lo, mut hi) = (row.lo / a, row.hi / a);
                    let (mut lo_src, mut hi_src) = (Some((ri, a)), Some((ri, a)));
                    if a < T::zero() {
                        std::mem::swap(&mut lo, &mut hi);
                    }
                    if !lo.is_finite() {
                        lo_src = None;
                    }
                    if !hi.is_finite() {
                        hi_src = None;
                    }
                    if lo > lower[j] {
                        lower[j] = lo;
                        lower_src[j] = lo_src;
                    }
                    if hi < upper[j] {
                        upper[j] = hi;
                        upper_src[j] = hi_src;
                    }
                    row.active = false;
                }
                _ => {}
            }
        }
        for j in 0..kept.len() {
            if lower[j] > upper[j] {
                if lower[j] - upper[j] > tol * (T::one() + lower[j].abs()) {
                    infeasible = true;
                }
                let mid = (lower[j] + upper[j]) * T::of(0.5);
                lower[j] = mid;
                upper[j] = mid;
            }
        }

        // rows implied by the variable boxes
        for row in rows.iter_mut().filter(|r| r.active) {
            let (mut min_act, mut max_act) = (T::zero(), T::zero());
            for (j, &a) in row.coeffs.iter().enumerate() {
                if a > T::zero() {
                    min_act += a * lower[j];
                    max_act += a * upper[j];
                } else if a < T::zero() {
                    min_act += a * upper[j];
                    max_act += a * lower[j];
                }
            }
            if min_act > row.hi + tol * (T::one() + row.hi.abs()) || max_act < row.lo - tol * (T::one() + row.lo.abs()) {
                infeasible = true;
            }
            if min_act >= row.lo - T::of(1e-9) * (T::one() + row.lo.abs()) {
                row.lo = T::neg_infinity();
            }
            if max_act <= row.hi + T::of(1e-9) * (T::one() + row.hi.abs()) {
                row.hi = T::infinity();
            }
            if !row.lo.is_finite() && !row.hi.is_finite() {
                row.active = false;
            }
        }

        // eliminated columns of the equality rows, for dual recovery
        let k = elims.len();
        let eq_block = if k == 0 {
            None
        } else {
            let mut m = vec![T::zero(); k * k];
            for (kp, e) in elims.iter().enumerate() {
                for &(j, a) in &lp.equalities()[e.eq_row].coeffs {
                    if let Some(row) = elim_of[j] {
                        m[row * k + kp] += a;
                    }
                }
            }
            DenseLu::factor(m, k)
        };

        Self {
            n,
            kept,
            elims,
            rows,
            lower,
            upper,
            lower_src,
            upper_src,
            eq_block,
            infeasible,
        }
    }

    /// Initial tableau with every logical basic.
    pub fn tableau(&self) -> Tableau<T> {
        let active: Vec<&Row<T>> = self.rows.iter().filter(|r| r.active).collect();
        let nk = self.kept.len();
        let mut a = Vec::with_capacity(active.len() * nk);
        for r in &active {
            a.extend_from_slice(&r.coeffs);
        }
        let lo: Vec<T> = active.iter().map(|r| r.lo).collect();
        let hi: Vec<T> = active.iter().map(|r| r.hi).collect();
        Tableau::new(active.len(), nk, a, &lo, &hi, &self.lower, &self.upper)
    }

    /// Objective over the kept variables and the constant it picks up.
    pub fn reduce_objective(&self, c: ArrayView1<'_, T>) -> (Vec<T>, T) {
        let mut full = c.to_vec();
        let mut offset = T::zero();
        for e in &self.elims {
            let f = full[e.var];
            if f != T::zero() {
                for j in 0..self.n {
                    full[j] += f * e.coeffs[j];
                }
                offset += f * e.constant;
                full[e.var] = T::zero();
            }
        }
        (self.kept.iter().map(|&j| full[j]).collect(), offset)
    }

    pub fn expand_primal(&self, reduced: &[T]) -> Array1<T> {
        let mut x = Array1::zeros(self.n);
        for (k, &j) in self.kept.iter().enumerate() {
            x[j] = reduced[k];
        }
        for e in &self.elims {
            let mut v = e.constant;
            for &j in &self.kept {
                v += e.coeffs[j] * x[j];
            }
            x[e.var] = v;
        }
        x
    }

    /// Multipliers of the original equality and inequality rows.
    pub fn recover_duals(
        &self,
        lp: &LinearProgram<T>,
        objective: ArrayView1<'_, T>,
        cost: &[T],
        tab: &Tableau<T>,
    ) -> (Array1<T>, Array1<T>) {
        let y_active = tab.row_duals(cost);
        let mut y_rows = vec![T::zero(); self.rows.len()];
        for (slot, ri) in (0..self.rows.len()).filter(|&i| self.rows[i].active).enumerate() {
            y_rows[ri] = y_active[slot];
        }
        // reduced costs of kept variables move onto the rows that set their bounds
        let x = tab.structural();
        for j in 0..self.kept.len() {
            let mut d = cost[j];
            for (ri, row) in self.rows.iter().enumerate() {
                if row.active && row.coeffs[j] != T::zero() {
                    d -= y_rows[ri] * row.coeffs[j];
                }
            }
            let src = if d > T::zero() && x[j] <= self.lower[j] {
                self.lower_src[j]
            } else if d < T::zero() && x[j] >= self.upper[j] {
                self.upper_src[j]
            } else {
                None
            };
            if let Some((ri, a)) = src {
                y_rows[ri] += d / a;
            }
        }

        let mut ineq: Array1<T> = Array1::zeros(lp.inequalities().len());
        let mut box_mult = vec![T::zero(); self.elims.len()];
        for (row, &y) in self.rows.iter().zip(&y_rows) {
            match row.origin {
                Origin::Inequality(r) => ineq[r] += y,
                Origin::EliminatedBox(k) => box_mult[k] += y,
            }
        }
        for (r, (_, sense)) in lp.inequalities().iter().enumerate() {
            ineq[r] = match sense {
                Sense::Ge => ineq[r].max(T::zero()),
                Sense::Le => ineq[r].min(T::zero()),
            };
        }

        let mut eq: Array1<T> = Array1::zeros(lp.equalities().len());
        if let Some(lu) = &self.eq_block {
            let index: std::collections::HashMap<usize, usize> =
                self.elims.iter().enumerate().map(|(k, e)| (e.var, k)).collect();
            let mut rhs: Vec<T> = self.elims.iter().map(|e| objective[e.var]).collect();
            for ((c, _), &y) in lp.inequalities().iter().zip(&ineq) {
                if y != T::zero() {
                    for &(j, a) in &c.coeffs {
                        if let Some(&k) = index.get(&j) {
                            rhs[k] -= a * y;
                        }
                    }
                }
            }
            for (k, w) in box_mult.iter().enumerate() {
                rhs[k] -= *w;
            }
            let sol = lu.solve(rhs);
            for (k, e) in self.elims.iter().enumerate() {
                eq[e.eq_row] = sol[k];
            }
        }
        (eq, ineq)
    }
}

fn substitute<T: Scalar>(row: &mut [T], rhs: &mut T, elims: &[Elimination<T>], elim_of: &[Option<usize>]) {
    for (j, slot) in elim_of.iter().enumerate() {
        if let Some(k) = slot {
            let f = row[j];
            if f != T::zero() {
                let e = &elims[*k];
                for (v, &c) in row.iter_mut().zip(&e.coeffs) {
                    *v += f * c;
                }
                *rhs -= f * e.constant;
                row[j] = T::zero();
            }
        }
    }
}

fn clean<T: Scalar>(row: &mut [T], drop: T) {
    for v in row.iter_mut() {
        if v.abs() <= drop {
            *v = T::zero();
        }
    }
}

/// LU factorization with partial pivoting of a dense square matrix.
#[derive(Clone, Debug)]
pub(crate) struct DenseLu<T> {
    n: usize,
    lu: Vec<T>,
    perm: Vec<usize>,
}

impl<T: Scalar> DenseLu<T> {
    pub fn factor(mut a: Vec<T>, n: usize) -> Option<Self> {
        let mut perm: Vec<usize> = (0..n).collect();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i * n + col].abs().partial_cmp(&a[j * n + col].abs()).unwrap())?;
            if a[piv * n + col].abs() <= T::of(1e-14) {
                return None;
            }
            if piv != col {
                for j in 0..n {
                    a.swap(col * n + j, piv * n + j);
                }
                perm.swap(col, piv);
            }
            let inv = T::one() / a[col * n + col];
            for i in col + 1..n {
                let f = a[i * n + col] * inv;
                a[i * n + col] = f;
                if f != T::zero() {
                    for j in col + 1..n {
                        let v = a[col * n + j];
                        a[i * n + j] -= f * v;
                    }
                }
            }
        }
        Some(Self { n, lu: a, perm })
    }

    pub fn solve(&self, b: Vec<T>) -> Vec<T> {
        let n = self.n;
        let mut x: Vec<T> = self.perm.iter().map(|&p| b[p]).collect();
        for i in 0..n {
            for j in 0..i {
                let v = x[j];
                x[i] -= self.lu[i * n + j] * v;
            }
        }
        for i in (0..n).rev() {
            for j in i + 1..n {
                let v = x[j];
                x[i] -= self.lu[i * n + j] * v;
            }
            x[i] /= self.lu[i * n + i];
        }
        x
    }
}
