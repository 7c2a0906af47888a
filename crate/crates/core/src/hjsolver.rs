//! Semi-Lagrangian dynamic programming on box grids.
//!
//! One sweep of the scheme is
//!
//! ```text
//! (Tv)(x) = min_u { dt·L(x,u) + β·v(x − dt·F(x)u) } − c·dt
//! ```
//!
//! with `β = 1` for the Lax-Oleinik operator and `β = e^{−λ dt}` for the
//! discounted problem. `v` is extended off-grid by multilinear interpolation
//! clamped at the box faces. Sweeps are Jacobi updates evaluated in parallel
//! over nodes, so results do not depend on the thread count.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::grid::{GridBox, GridFunction, MAX_DIM};
use crate::lagrangian::{legendre_slice, Lagrangian};
use crate::systems::ControlSystem;

/// A fixed point is declared only if the drift at the normalization point
/// is below this rate (per unit time).
pub const DRIFT_TOLERANCE: f64 = 1e-3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SchemeSettings {
    pub grid: GridBox,
    pub dt: f64,
    /// Samples per control axis over `[−U, U]`.
    pub control_samples: usize,
    pub control_bound: f64,
    pub tol_fixed_point: f64,
    pub max_iters: usize,
    /// Adds the Legendre maximizer at the grid gradient as an extra control.
    pub legendre_candidate: bool,
}

impl SchemeSettings {
    pub fn new(grid: GridBox, dt: f64, control_samples: usize, control_bound: f64) -> Self {
        Self { grid, dt, control_samples, control_bound, tol_fixed_point: 1e-8, max_iters: 200_000, legendre_candidate: true }
    }

    pub fn validate(&self, sys: &ControlSystem) -> Result<()> {
        if self.grid.dim() != sys.dim() {
            return Err(KamError::InvalidArgument(format!(
                "grid dimension {} does not match state dimension {}",
                self.grid.dim(),
                sys.dim()
            )));
        }
        if !(self.dt > 0.0) || !(self.control_bound > 0.0) || self.control_samples < 2 || !(self.tol_fixed_point > 0.0) {
            return Err(KamError::InvalidArgument("scheme needs dt > 0, U > 0, >= 2 control samples and tol > 0".into()));
        }
        Ok(())
    }

    /// `dt·U·max|F| ≤ 4·(smallest cell)`, with `|F|` the Frobenius norm over nodes.
    pub fn cfl_ok(&self, sys: &ControlSystem) -> bool {
        let (d, m) = (sys.dim(), sys.controls());
        let mut f = vec![0.0; d * m];
        let max_f = (0..self.grid.len())
            .map(|i| {
                sys.fields_into(&self.grid.node(i), &mut f);
                f.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .fold(0.0, f64::max);
        self.dt * self.control_bound * max_f <= 4.0 * self.grid.min_spacing()
    }

    /// Uniform control samples over `[−U, U]^m`, axis 0 fastest.
    pub fn control_set(&self, m: usize) -> Vec<Vec<f64>> {
        let n = self.control_samples;
        let step = 2.0 * self.control_bound / (n - 1) as f64;
        let total = n.pow(m as u32);
        (0..total)
            .map(|mut k| {
                (0..m)
                    .map(|_| {
                        let i = k % n;
                        k /= n;
                        // Symmetric placement keeps the middle sample at exactly 0.
                        if 2 * i + 1 == n {
                            0.0
                        } else {
                            -self.control_bound + step * i as f64
                        }
                    })
                    .collect()
            })
            .collect()
    }
}

/// Running costs and backstep stencils, independent of the iterate.
struct Table<'a> {
    l: &'a dyn Lagrangian,
    sys: &'a ControlSystem,
    s: &'a SchemeSettings,
    samples: usize,
    cost: Vec<f64>,
    origin: Vec<usize>,
    frac: Vec<f64>,
}

impl<'a> Table<'a> {
    fn build(l: &'a dyn Lagrangian, sys: &'a ControlSystem, s: &'a SchemeSettings) -> Result<Self> {
        s.validate(sys)?;
        if l.state_dim() != sys.dim() || l.control_dim() != sys.controls() {
            return Err(KamError::InvalidArgument("Lagrangian and system dimensions disagree".into()));
        }
        let (d, m) = (sys.dim(), sys.controls());
        let controls = s.control_set(m);
        let samples = controls.len();
        let rows: Vec<(Vec<f64>, Vec<usize>, Vec<f64>)> = (0..s.grid.len())
            .into_par_iter()
            .map(|i| {
                let x = s.grid.node(i);
                let mut f = vec![0.0; d * m];
                sys.fields_into(&x, &mut f);
                let mut y = vec![0.0; d];
                let mut fr = [0.0; MAX_DIM];
                let mut cost = Vec::with_capacity(samples);
                let mut origin = Vec::with_capacity(samples);
                let mut frac = Vec::with_capacity(samples * d);
                for u in &controls {
                    backstep(&x, &f, u, s.dt, m, &mut y);
                    cost.push(s.dt * l.eval(&x, u));
                    origin.push(s.grid.locate(&y, &mut fr));
                    frac.extend_from_slice(&fr[..d]);
                }
                (cost, origin, frac)
            })
            .collect();
        let mut table = Table {
            l,
            sys,
            s,
            samples,
            cost: Vec::with_capacity(samples * rows.len()),
            origin: Vec::with_capacity(samples * rows.len()),
            frac: Vec::with_capacity(samples * rows.len() * d),
        };
        for (c, o, f) in rows {
            table.cost.extend(c);
            table.origin.extend(o);
            table.frac.extend(f);
        }
        Ok(table)
    }

    /// One Jacobi sweep; `beta` multiplies the continuation value.
    fn sweep(&self, v: &GridFunction, beta: f64, c_dt: f64, candidate: bool) -> Vec<f64> {
        let d = self.sys.dim();
        let ns = self.samples;
        (0..v.values.len())
            .into_par_iter()
            .map_init(
                || Scratch::new(self.sys),
                |scratch, i| {
                    let mut best = f64::INFINITY;
                    for k in 0..ns {
                        let e = i * ns + k;
                        let val = self.cost[e] + beta * v.interpolate_located(self.origin[e], &self.frac[e * d..(e + 1) * d]);
                        if val < best {
                            best = val;
                        }
                    }
                    if candidate {
                        if let Some(val) = self.candidate_value(v, i, beta, scratch) {
                            if val < best {
                                best = val;
                            }
                        }
                    }
                    best - c_dt
                },
            )
            .collect()
    }

    fn candidate_value(&self, v: &GridFunction, i: usize, beta: f64, sc: &mut Scratch) -> Option<f64> {
        let (d, m) = (self.sys.dim(), self.sys.controls());
        self.s.grid.node_into(i, &mut sc.x);
        v.node_gradient(i, &mut sc.grad);
        self.sys.reduce_momentum_into(&sc.x, &sc.grad, &mut sc.q);
        let u = legendre_slice(self.l, &sc.x, &sc.q).ok()?.argmax;
        if u.iter().any(|c| !c.is_finite()) {
            return None;
        }
        self.sys.fields_into(&sc.x, &mut sc.f);
        backstep(&sc.x, &sc.f, &u, self.s.dt, m, &mut sc.y);
        debug_assert_eq!(sc.y.len(), d);
        Some(self.s.dt * self.l.eval(&sc.x, &u) + beta * v.interpolate(&sc.y))
    }
}

struct Scratch {
    x: Vec<f64>,
    y: Vec<f64>,
    grad: Vec<f64>,
    q: Vec<f64>,
    f: Vec<f64>,
}

impl Scratch {
    fn new(sys: &ControlSystem) -> Self {
        let (d, m) = (sys.dim(), sys.controls());
        Self { x: vec![0.0; d], y: vec![0.0; d], grad: vec![0.0; d], q: vec![0.0; m], f: vec![0.0; d * m] }
    }
}

#[inline]
fn backstep(x: &[f64], f: &[f64], u: &[f64], dt: f64, m: usize, y: &mut [f64]) {
    for (i, yi) in y.iter_mut().enumerate() {
        let row = &f[i * m..(i + 1) * m];
        *yi = x[i] - dt * row.iter().zip(u).map(|(a, b)| a * b).sum::<f64>();
    }
}

fn check_input(v: &GridFunction, s: &SchemeSettings) -> Result<()> {
    v.validate()?;
    if v.grid != s.grid {
        return Err(KamError::InvalidArgument("grid function does not live on the scheme grid".into()));
    }
    Ok(())
}

/// One Lax-Oleinik sweep with critical value `c`.
pub fn lax_oleinik_step(v: &GridFunction, l: &dyn Lagrangian, sys: &ControlSystem, c: f64, s: &SchemeSettings) -> Result<GridFunction> {
    check_input(v, s)?;
    let table = Table::build(l, sys, s)?;
    Ok(GridFunction { grid: s.grid.clone(), values: table.sweep(v, 1.0, c * s.dt, s.legendre_candidate) })
}

/// Minimizing control of the Lax-Oleinik update at an arbitrary point `x`.
/// Ties go to the lowest sample index; the Legendre candidate comes last.
pub fn backward_argmin(v: &GridFunction, l: &dyn Lagrangian, sys: &ControlSystem, s: &SchemeSettings, x: &[f64]) -> Result<(f64, Vec<f64>)> {
    let (d, m) = (sys.dim(), sys.controls());
    let mut f = vec![0.0; d * m];
    sys.fields_into(x, &mut f);
    let mut y = vec![0.0; d];
    let mut best = (f64::INFINITY, vec![0.0; m]);
    let mut consider = |u: Vec<f64>, best: &mut (f64, Vec<f64>)| {
        backstep(x, &f, &u, s.dt, m, &mut y);
        let val = s.dt * l.eval(x, &u) + v.interpolate(&y);
        if val < best.0 {
            *best = (val, u);
        }
    };
    for u in s.control_set(m) {
        consider(u, &mut best);
    }
    if s.legendre_candidate {
        let q = crate::weakkam::horizontal_gradient(v, sys, x, 0.5 * s.grid.min_spacing())?.q;
        if let Ok(lv) = legendre_slice(l, x, &q) {
            consider(lv.argmax, &mut best);
        }
    }
    Ok(best)
}

/// `V_T` for each horizon of an increasing ladder, from `V_0 ≡ 0`.
pub fn finite_horizon_ladder(l: &dyn Lagrangian, sys: &ControlSystem, horizons: &[f64], s: &SchemeSettings) -> Result<Vec<GridFunction>> {
    if horizons.iter().any(|t| !(*t >= 0.0)) || horizons.windows(2).any(|w| w[1] < w[0]) {
        return Err(KamError::InvalidArgument("horizons must be nonnegative and increasing".into()));
    }
    let table = Table::build(l, sys, s)?;
    let mut v = GridFunction::zeros(s.grid.clone());
    let mut done = 0usize;
    let mut out = Vec::with_capacity(horizons.len());
    for &t in horizons {
        let target = (t / s.dt).round() as usize;
        while done < target {
            v.values = table.sweep(&v, 1.0, 0.0, s.legendre_candidate);
            done += 1;
        }
        out.push(v.clone());
    }
    Ok(out)
}

/// `V_T` on the grid; `T` is rounded to a whole number of steps.
pub fn finite_horizon(l: &dyn Lagrangian, sys: &ControlSystem, horizon: f64, s: &SchemeSettings) -> Result<GridFunction> {
    Ok(finite_horizon_ladder(l, sys, &[horizon], s)?.remove(0))
}

/// Discounted value `v_λ`, iterated to a fixed point from `init` (zero if absent).
pub fn discounted(l: &dyn Lagrangian, sys: &ControlSystem, lambda: f64, s: &SchemeSettings, init: Option<&GridFunction>) -> Result<GridFunction> {
    if !(lambda > 0.0) {
        return Err(KamError::InvalidArgument(format!("discount rate must be positive, got {lambda}")));
    }
    let table = Table::build(l, sys, s)?;
    let beta = (-lambda * s.dt).exp();
    let mut v = match init {
        Some(v0) => {
            check_input(v0, s)?;
            v0.clone()
        }
        None => GridFunction::zeros(s.grid.clone()),
    };
    let mut change = f64::INFINITY;
    for _ in 0..s.max_iters {
        let next = table.sweep(&v, beta, 0.0, s.legendre_candidate);
        change = sup_change(&v.values, &next);
        v.values = next;
        if change <= s.tol_fixed_point {
            return Ok(v);
        }
    }
    Err(KamError::NotConverged { iterations: s.max_iters, residual: change })
}

/// Outcome of the critical fixed-point iteration.
#[derive(Clone, Debug, Serialize)]
pub struct CriticalSolution {
    pub chi: GridFunction,
    pub c: f64,
    pub normalization_point: Vec<f64>,
    pub iterations: usize,
    /// Sup-norm change of the normalized iterate over the last sweep.
    pub change: f64,
    /// Shift removed by the last normalization, per unit time. Zero at a
    /// true fixed point; about `c_true − c` when `c` is wrong.
    pub drift: f64,
    pub converged: bool,
}

/// Iterates the Lax-Oleinik operator, pinning `χ(x*) = 0` after each sweep.
pub fn critical_solution(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    c: f64,
    s: &SchemeSettings,
    init: &GridFunction,
) -> Result<CriticalSolution> {
    check_input(init, s)?;
    let table = Table::build(l, sys, s)?;
    let x_star = l.attractor().x_star.clone();
    let mut chi = init.clone();
    let pin = chi.interpolate(&x_star);
    chi.values.iter_mut().for_each(|v| *v -= pin);

    let (mut change, mut drift) = (f64::INFINITY, f64::INFINITY);
    let mut iterations = 0;
    while iterations < s.max_iters {
        iterations += 1;
        let mut next = GridFunction { grid: s.grid.clone(), values: table.sweep(&chi, 1.0, c * s.dt, s.legendre_candidate) };
        let shift = next.interpolate(&x_star);
        next.values.iter_mut().for_each(|v| *v -= shift);
        change = sup_change(&chi.values, &next.values);
        drift = shift / s.dt;
        chi = next;
        if change <= s.tol_fixed_point {
            break;
        }
    }
    let converged = change <= s.tol_fixed_point && drift.abs() <= DRIFT_TOLERANCE;
    Ok(CriticalSolution { chi, c, normalization_point: x_star, iterations, change, drift, converged })
}

fn sup_change(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
