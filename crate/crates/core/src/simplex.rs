//! Dense two-phase tableau simplex.
//!
//! Solves `min cᵀx` subject to `Ax = b`, `x ≥ 0`. Pricing is Dantzig's rule;
//! long runs of degenerate pivots fall back to Bland's rule (lowest eligible
//! index enters, lowest basic index leaves on ratio ties), which rules out
//! cycling. Right-hand sides are first shifted by a tiny positive amount to
//! break degeneracy; the true `b` is restored at the end and primal
//! feasibility repaired with dual simplex pivots. Every choice is
//! deterministic.

use nalgebra::DMatrix;

use crate::error::{KamError, Result};

pub const PIVOT_TOL: f64 = 1e-11;
/// Pivot candidates must also exceed this fraction of the column's largest entry.
pub const RELATIVE_PIVOT_TOL: f64 = 1e-9;

/// Row-major constraint data for [`solve`].
#[derive(Clone, Debug)]
pub struct StandardForm {
    pub rows: usize,
    pub cols: usize,
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct LpSolution {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// Basic columns after phase two (redundant rows removed).
    pub basis: Vec<usize>,
}

/// Consecutive degenerate pivots before switching to Bland's rule.
const BLAND_AFTER: usize = 50;

/// Pivots between refactorizations of the tableau from the original data.
const REFACTOR_EVERY: usize = 50;

struct Tableau<'a> {
    width: usize,
    rows: usize,
    data: Vec<f64>,
    basis: Vec<usize>,
    /// Original row of each tableau row (rows can be dropped).
    row_ids: Vec<usize>,
    /// Sign-adjusted constraint data, `rows × (n + 1)` with the rhs last.
    original: &'a [f64],
    n: usize,
    /// Costs of the current phase over all `width − 1` columns.
    cost: Vec<f64>,
    since_refactor: usize,
}

impl Tableau<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }

    /// Pivots on `(p, q)`; the objective row is row `rows`.
    fn pivot(&mut self, p: usize, q: usize) {
        let w = self.width;
        let inv = 1.0 / self.at(p, q);
        self.data[p * w..(p + 1) * w].iter_mut().for_each(|v| *v *= inv);
        self.data[p * w + q] = 1.0;
        let pivot_row: Vec<f64> = self.data[p * w..(p + 1) * w].to_vec();
        for r in 0..=self.rows {
            if r == p {
                continue;
            }
            let factor = self.data[r * w + q];
            if factor != 0.0 {
                let row = &mut self.data[r * w..(r + 1) * w];
                for (v, pv) in row.iter_mut().zip(&pivot_row) {
                    *v -= factor * pv;
                }
                row[q] = 0.0;
            }
        }
        self.basis[p] = q;
        self.since_refactor += 1;
    }

    /// Original column `j` restricted to the active rows.
    fn original_entry(&self, row: usize, j: usize) -> f64 {
        let orig = self.row_ids[row];
        if j < self.n {
            self.original[orig * (self.n + 1) + j]
        } else if j + 1 == self.width {
            self.original[orig * (self.n + 1) + self.n]
        } else if j - self.n == orig {
            1.0
        } else {
            0.0
        }
    }

    /// Rebuilds every row as `B⁻¹[A | I | b]` and the objective row from the
    /// phase costs, discarding accumulated rounding.
    fn refactor(&mut self) -> Result<()> {
        let (m, w) = (self.rows, self.width);
        if m == 0 {
            return Ok(());
        }
        let b = DMatrix::from_fn(m, m, |i, r| self.original_entry(i, self.basis[r]));
        let lu = b.lu();
        let rhs = DMatrix::from_fn(m, w, |i, j| self.original_entry(i, j));
        let x = lu.solve(&rhs).ok_or_else(|| KamError::LinearProgram("singular basis".into()))?;
        for i in 0..m {
            for j in 0..w {
                self.data[i * w + j] = x[(i, j)];
            }
        }
        for (r, &j) in self.basis.iter().enumerate() {
            for i in 0..m {
                self.data[i * w + j] = if i == r { 1.0 } else { 0.0 };
            }
        }
        self.price_out();
        self.since_refactor = 0;
        Ok(())
    }

    /// Objective row `cᵀ − c_Bᵀ B⁻¹A`, with `−c_Bᵀ B⁻¹b` in the rhs slot.
    fn price_out(&mut self) {
        let (m, w) = (self.rows, self.width);
        let obj = m * w;
        for j in 0..w {
            self.data[obj + j] = if j + 1 < w { self.cost[j] } else { 0.0 };
        }
        for r in 0..m {
            let cb = self.cost[self.basis[r]];
            if cb != 0.0 {
                for j in 0..w {
                    let v = self.data[r * w + j];
                    self.data[obj + j] -= cb * v;
                }
            }
        }
        for &j in &self.basis {
            self.data[obj + j] = 0.0;
        }
    }

    /// Pivots over columns `< eligible` until optimal. Entering columns
    /// follow Dantzig's rule; after [`BLAND_AFTER`] consecutive degenerate
    /// pivots the search switches to Bland's rule until progress resumes,
    /// which rules out cycling.
    fn optimize(&mut self, eligible: usize, opt_tol: f64, iterations: &mut usize, max_iters: usize) -> Result<()> {
        let rhs = self.width - 1;
        let mut degenerate_run = 0usize;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let obj = self.rows;
            let bland = degenerate_run >= BLAND_AFTER;
            let entering = if bland {
                (0..eligible).find(|&j| self.at(obj, j) < -opt_tol)
            } else {
                (0..eligible).filter(|&j| self.at(obj, j) < -opt_tol).min_by(|&a, &b| self.at(obj, a).total_cmp(&self.at(obj, b)))
            };
            let Some(q) = entering else {
                if self.since_refactor > 0 {
                    self.refactor()?;
                    continue;
                }
                return Ok(());
            };
            // Entries at rounding level relative to the column are zeros in
            // exact arithmetic; pivoting on them makes the basis singular.
            let col_max = (0..self.rows).fold(0.0f64, |acc, i| acc.max(self.at(i, q).abs()));
            let tol = PIVOT_TOL.max(RELATIVE_PIVOT_TOL * col_max);
            let mut leave: Option<(usize, f64)> = None;
            for i in 0..self.rows {
                let a = self.at(i, q);
                if a > tol {
                    let ratio = self.at(i, rhs).max(0.0) / a;
                    leave = match leave {
                        None => Some((i, ratio)),
                        Some((k, best)) => {
                            let tie = 1e-12 * (1.0 + best.abs());
                            let better_tie = if bland { self.basis[i] < self.basis[k] } else { a > self.at(k, q) };
                            if ratio < best - tie || (ratio <= best + tie && better_tie) {
                                Some((i, ratio))
                            } else {
                                Some((k, best))
                            }
                        }
                    };
                }
            }
            let Some((p, step)) = leave else {
                return Err(KamError::LinearProgram(format!("unbounded in column {q}")));
            };
            *iterations += 1;
            if *iterations > max_iters {
                return Err(KamError::NotConverged { iterations: *iterations, residual: self.at(obj, q) });
            }
            degenerate_run = if step * -self.at(obj, q) <= 1e-14 { degenerate_run + 1 } else { 0 };
            self.pivot(p, q);
        }
    }

    /// Dual simplex pivots until the rhs is nonnegative. Needs a dual
    /// feasible basis (all reduced costs over `< eligible` nonnegative).
    fn restore_primal(&mut self, eligible: usize, feas_tol: f64, iterations: &mut usize, max_iters: usize) -> Result<()> {
        let rhs = self.width - 1;
        loop {
            if self.since_refactor >= REFACTOR_EVERY {
                self.refactor()?;
            }
            let obj = self.rows;
            let leaving = (0..self.rows).filter(|&i| self.at(i, rhs) < -feas_tol).min_by(|&a, &b| self.at(a, rhs).total_cmp(&self.at(b, rhs)));
            let Some(p) = leaving else { return Ok(()) };
            let row_max = (0..eligible).fold(0.0f64, |acc, j| acc.max(self.at(p, j).abs()));
            let tol = PIVOT_TOL.max(RELATIVE_PIVOT_TOL * row_max);
            let entering = (0..eligible)
                .filter(|&j| self.at(p, j) < -tol)
                .map(|j| (j, self.at(obj, j).max(0.0) / -self.at(p, j)))
                .min_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
            let Some((q, _)) = entering else {
                return Err(KamError::LinearProgram(format!("infeasible (row {p} cannot be repaired)")));
            };
            *iterations += 1;
            if *iterations > max_iters {
                return Err(KamError::NotConverged { iterations: *iterations, residual: self.at(p, rhs) });
            }
            self.pivot(p, q);
        }
    }

    fn drop_row(&mut self, i: usize) {
        let w = self.width;
        self.data.drain(i * w..(i + 1) * w);
        self.basis.remove(i);
        self.row_ids.remove(i);
        self.rows -= 1;
    }
}

/// Relative residual below which a constraint row counts as a combination
/// of the rows before it.
const DEPENDENCE_TOL: f64 = 1e-10;

/// Greedy Gram-Schmidt over the rows of `[A | b]` (row-major, `n + 1`
/// wide). Returns the rows that are independent in `A`, in order; a
/// dependent row whose rhs disagrees with the combination is infeasible.
fn independent_rows(aug: &[f64], m: usize, n: usize) -> Result<Vec<usize>> {
    let w = n + 1;
    let b_scale = 1.0 + (0..m).fold(0.0f64, |a, i| a.max(aug[i * w + n].abs()));
    let mut basis: Vec<Vec<f64>> = Vec::new();
    let mut keep = Vec::new();
    for i in 0..m {
        let mut r = aug[i * w..(i + 1) * w].to_vec();
        let norm0 = r[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        // Two passes of modified Gram-Schmidt keep the residual orthogonal.
        for _ in 0..2 {
            for q in &basis {
                let coef: f64 = r[..n].iter().zip(&q[..n]).map(|(a, b)| a * b).sum();
                r.iter_mut().zip(q).for_each(|(a, b)| *a -= coef * b);
            }
        }
        let norm = r[..n].iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > DEPENDENCE_TOL * norm0 && norm > 0.0 {
            r.iter_mut().for_each(|v| *v /= norm);
            basis.push(r);
            keep.push(i);
        } else if r[n].abs() > 1e-9 * b_scale {
            return Err(KamError::LinearProgram(format!("infeasible (row {i} contradicts earlier rows by {:.3e})", r[n])));
        }
    }
    Ok(keep)
}

/// Solves the standard-form LP. `max_iters` caps the total pivot count.
/// Linearly dependent rows are removed before phase one.
pub fn solve(lp: &StandardForm, max_iters: usize) -> Result<LpSolution> {
    let (m0, n) = (lp.rows, lp.cols);
    if lp.a.len() != m0 * n || lp.b.len() != m0 || lp.c.len() != n {
        return Err(KamError::InvalidArgument("LP data has inconsistent sizes".into()));
    }
    if lp.a.iter().chain(&lp.b).chain(&lp.c).any(|v| !v.is_finite()) {
        return Err(KamError::InvalidArgument("LP data has non-finite entries".into()));
    }
    let mut aug = vec![0.0; m0 * (n + 1)];
    for i in 0..m0 {
        let sign = if lp.b[i] < 0.0 { -1.0 } else { 1.0 };
        for j in 0..n {
            aug[i * (n + 1) + j] = sign * lp.a[i * n + j];
        }
        aug[i * (n + 1) + n] = sign * lp.b[i];
    }
    let keep = independent_rows(&aug, m0, n)?;
    let original: Vec<f64> = keep.iter().flat_map(|&i| aug[i * (n + 1)..(i + 1) * (n + 1)].iter().copied()).collect();
    // Zero right-hand sides make the LPs here massively degenerate: the
    // simplex sits on the optimal vertex for ages without proving it.
    // Solving with a small positive shift of b and then repairing the rhs
    // with dual pivots avoids that.
    let mut shifted = original.clone();
    for (i, row) in shifted.chunks_mut(n + 1).enumerate() {
        let frac = (i as f64 * 0.618_033_988_749_895).fract();
        row[n] += RHS_SHIFT * (1.0 + row[n].abs()) * (0.5 + 0.5 * frac);
    }
    match two_phase(lp, &original, Some(&shifted), max_iters) {
        Err(KamError::LinearProgram(msg)) if msg.starts_with("infeasible") => two_phase(lp, &original, None, max_iters),
        r => r,
    }
}

/// Relative size of the rhs shift used against degeneracy.
const RHS_SHIFT: f64 = 1e-7;

fn two_phase(lp: &StandardForm, original: &[f64], shifted: Option<&[f64]>, max_iters: usize) -> Result<LpSolution> {
    let n = lp.cols;
    let m = original.len() / (n + 1);
    // Columns: originals, artificials, right-hand side.
    let width = n + m + 1;
    let mut phase_one_cost = vec![0.0; n + m];
    phase_one_cost[n..].iter_mut().for_each(|c| *c = 1.0);
    let mut t = Tableau {
        width,
        rows: m,
        data: vec![0.0; (m + 1) * width],
        basis: (n..n + m).collect(),
        row_ids: (0..m).collect(),
        original: shifted.unwrap_or(original),
        n,
        cost: phase_one_cost,
        since_refactor: 0,
    };
    t.refactor()?;
    let mut iterations = 0;
    t.optimize(n, PIVOT_TOL, &mut iterations, max_iters)?;

    let infeasibility = -t.at(t.rows, width - 1);
    let b_scale = 1.0 + original.iter().skip(n).step_by(n + 1).fold(0.0f64, |a, v| a.max(v.abs()));
    if infeasibility > 1e-9 * b_scale {
        return Err(KamError::LinearProgram(format!("infeasible (phase one residual {infeasibility:.3e})")));
    }

    // Drive remaining artificials out of the basis; rows where every
    // original entry is negligible next to the artificial part are
    // numerically dependent and get dropped.
    let mut i = 0;
    while i < t.rows {
        if t.basis[i] >= n {
            let best = (0..n).map(|j| (j, t.at(i, j).abs())).max_by(|a, b| a.1.total_cmp(&b.1).then(b.0.cmp(&a.0)));
            let art_scale = (n..n + m).fold(0.0f64, |a, j| a.max(t.at(i, j).abs()));
            match best {
                Some((q, v)) if v > PIVOT_TOL.max(1e-9 * art_scale) => {
                    t.pivot(i, q);
                    i += 1;
                }
                _ => t.drop_row(i),
            }
        } else {
            i += 1;
        }
    }

    let mut cost = lp.c.clone();
    cost.extend(std::iter::repeat_n(0.0, m));
    t.cost = cost;
    t.refactor()?;
    let c_scale = 1.0 + lp.c.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    t.optimize(n, PIVOT_TOL * c_scale, &mut iterations, max_iters)?;
    if shifted.is_some() {
        // Reduced costs do not depend on b, so the basis stays dual feasible.
        t.original = original;
        t.refactor()?;
        t.restore_primal(n, 1e-12 * b_scale, &mut iterations, max_iters)?;
        t.optimize(n, PIVOT_TOL * c_scale, &mut iterations, max_iters)?;
    }

    let mut x = vec![0.0; n];
    for (r, &j) in t.basis.iter().enumerate() {
        x[j] = t.at(r, width - 1).max(0.0);
    }
    let value = x.iter().zip(&lp.c).map(|(a, b)| a * b).sum();
    Ok(LpSolution { x, value, iterations, basis: t.basis })
}
