//! Direct-transcription trajectory optimization.
//!
//! Controls are piecewise constant on a uniform time grid and form the
//! decision vector; states come from single shooting with the classical
//! fourth-order integrator. Gradients are exact for the discrete problem
//! (adjoint sweep through the integrator stages). A fixed endpoint is
//! enforced by a quadratic penalty whose weight grows until the endpoint gap
//! is below tolerance.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::lagrangian::{action_of, Lagrangian, StandardLagrangian};
use crate::optim::{minimize, LbfgsSettings};
use crate::systems::{dist, norm, ControlSystem, TimeGrid, TrajectoryControlPair, BLOW_UP_NORM};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSettings {
    /// Minimum number of control steps.
    pub n_steps: usize,
    pub n_restarts: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub max_outer: usize,
    pub grad_tol: f64,
    pub seed: u64,
    /// Longest allowed step; long horizons get `ceil(t / max_dt)` steps.
    pub max_dt: f64,
    /// L-BFGS iteration cap per penalty level.
    pub max_inner: usize,
}

impl Default for OptimizerSettings {
    fn default() -> Self {
        Self {
            n_steps: 100,
            n_restarts: 8,
            penalty_init: 10.0,
            penalty_growth: 10.0,
            max_outer: 10,
            grad_tol: 1e-9,
            seed: 0,
            max_dt: 0.1,
            max_inner: 3000,
        }
    }
}

impl OptimizerSettings {
    pub fn validate(&self) -> Result<()> {
        let ok = self.n_steps > 0
            && self.max_outer > 0
            && self.max_inner > 0
            && self.penalty_init > 0.0
            && self.penalty_growth > 1.0
            && self.grad_tol > 0.0
            && self.max_dt > 0.0;
        if ok {
            Ok(())
        } else {
            Err(KamError::InvalidArgument(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Step count used for horizon `t`.
    pub fn steps_for(&self, t: f64) -> usize {
        self.n_steps.max((t / self.max_dt).ceil() as usize)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct ActionResult {
    pub value: f64,
    pub pair: TrajectoryControlPair,
    /// Distance from the achieved endpoint to the target; zero for free endpoints.
    pub endpoint_gap: f64,
    pub converged: bool,
}

impl ActionResult {
    pub fn to_json(&self, settings: &OptimizerSettings) -> serde_json::Value {
        serde_json::json!({
            "value": self.value,
            "endpoint_gap": self.endpoint_gap,
            "converged": self.converged,
            "settings": settings,
        })
    }
}

/// Feasibility tolerance `1e-5 (1 + |y|)`.
pub fn endpoint_tolerance(y: &[f64]) -> f64 {
    1e-5 * (1.0 + norm(y))
}

/// Discrete objective `Σ L(x_k, u_k) dt + ρ |x_N − y|²` with its adjoint
/// gradient. Buffers are reused across evaluations.
struct Transcription<'a> {
    l: &'a dyn Lagrangian,
    sys: &'a ControlSystem,
    x0: &'a [f64],
    target: Option<&'a [f64]>,
    n: usize,
    dt: f64,
    states: Vec<f64>,
    stages: Vec<f64>,
    scratch: Vec<f64>,
}

impl<'a> Transcription<'a> {
    fn new(l: &'a dyn Lagrangian, sys: &'a ControlSystem, x0: &'a [f64], target: Option<&'a [f64]>, grid: TimeGrid) -> Self {
        let d = sys.dim();
        Self {
            l,
            sys,
            x0,
            target,
            n: grid.n_steps,
            dt: grid.dt(),
            states: vec![0.0; (grid.n_steps + 1) * d],
            stages: vec![0.0; grid.n_steps * 4 * d],
            scratch: vec![0.0; sys.vjp_scratch_len() + 3 * d + sys.controls()],
        }
    }

    /// Returns `(running cost, endpoint gap²)` after a forward sweep.
    fn forward(&mut self, z: &[f64]) -> Option<(f64, f64)> {
        let d = self.sys.dim();
        let m = self.sys.controls();
        self.states[..d].copy_from_slice(self.x0);
        let mut cost = 0.0;
        for k in 0..self.n {
            let u = &z[k * m..(k + 1) * m];
            let (head, tail) = self.states.split_at_mut((k + 1) * d);
            let x = &head[k * d..];
            cost += self.l.eval(x, u) * self.dt;
            let next = &mut tail[..d];
            self.sys.rk4_step(x, u, self.dt, next, &mut self.stages[k * 4 * d..(k + 1) * 4 * d]);
            if !(norm(next) <= BLOW_UP_NORM) {
                return None;
            }
        }
        let gap2 = match self.target {
            Some(y) => {
                let xn = &self.states[self.n * d..];
                xn.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
            }
            None => 0.0,
        };
        cost.is_finite().then_some((cost, gap2))
    }

    fn value_and_gradient(&mut self, z: &[f64], rho: f64, grad: &mut [f64]) -> f64 {
        let d = self.sys.dim();
        let m = self.sys.controls();
        let Some((cost, gap2)) = self.forward(z) else {
            return f64::NAN;
        };
        let (vjp, rest) = self.scratch.split_at_mut(self.sys.vjp_scratch_len());
        let (lam, rest) = rest.split_at_mut(d);
        let (lam_prev, rest) = rest.split_at_mut(d);
        let (gx, rest) = rest.split_at_mut(d);
        let gu = &mut rest[..m];
        match self.target {
            Some(y) => {
                let xn = &self.states[self.n * d..];
                for j in 0..d {
                    lam[j] = 2.0 * rho * (xn[j] - y[j]);
                }
            }
            None => lam.iter_mut().for_each(|v| *v = 0.0),
        }
        for k in (0..self.n).rev() {
            let u = &z[k * m..(k + 1) * m];
            let x = &self.states[k * d..(k + 1) * d];
            let g = &mut grad[k * m..(k + 1) * m];
            self.l.grad_u(x, u, gu);
            for i in 0..m {
                g[i] = gu[i] * self.dt;
            }
            self.l.grad_x(x, u, gx);
            for j in 0..d {
                lam_prev[j] = gx[j] * self.dt;
            }
            self.sys.rk4_step_vjp(u, self.dt, &self.stages[k * 4 * d..(k + 1) * 4 * d], lam, lam_prev, g, vjp);
            lam.copy_from_slice(lam_prev);
        }
        cost + rho * gap2
    }
}

fn to_controls(z: &[f64], m: usize) -> Vec<Vec<f64>> {
    z.chunks(m).map(<[f64]>::to_vec).collect()
}

/// Value, endpoint gap, control vector, converged.
type Run = (f64, f64, Vec<f64>, bool);

/// One optimization run from a given initial control vector.
fn solve_from(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    x: &[f64],
    target: Option<&[f64]>,
    grid: TimeGrid,
    settings: &OptimizerSettings,
    z0: Vec<f64>,
) -> Option<Run> {
    let mut tr = Transcription::new(l, sys, x, target, grid);
    let lbfgs = LbfgsSettings { grad_tol: settings.grad_tol, max_iters: settings.max_inner, ..Default::default() };
    let mut z = z0;
    let mut rho = settings.penalty_init;
    let outer = if target.is_some() { settings.max_outer } else { 1 };
    let tol = target.map_or(f64::INFINITY, endpoint_tolerance);
    let mut inner_ok = false;
    for _ in 0..outer {
        let r = rho;
        let min = minimize(|z, g| tr.value_and_gradient(z, r, g), z, &lbfgs);
        z = min.x;
        inner_ok = min.converged;
        let (_, gap2) = tr.forward(&z)?;
        if gap2.sqrt() <= tol {
            break;
        }
        rho *= settings.penalty_growth;
    }
    let (cost, gap2) = tr.forward(&z)?;
    let gap = gap2.sqrt();
    Some((cost, gap, z, inner_ok && gap <= tol))
}

fn initial_guesses(m: usize, n: usize, t: f64, settings: &OptimizerSettings, warm: Option<&[Vec<f64>]>) -> Vec<Vec<f64>> {
    let mut guesses = Vec::with_capacity(settings.n_restarts + 2);
    if let Some(w) = warm {
        guesses.push(w.iter().flatten().copied().collect());
    }
    guesses.push(vec![0.0; n * m]);
    let scale = 1.0 / t.sqrt();
    for r in 0..settings.n_restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(settings.seed.wrapping_mul(0x9E37_79B9).wrapping_add(r as u64));
        guesses.push((0..n * m).map(|_| rng.random_range(-1.0..=1.0) * scale).collect());
    }
    guesses
}

fn best_of(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    x: &[f64],
    target: Option<&[f64]>,
    t: f64,
    settings: &OptimizerSettings,
    warm: Option<&[Vec<f64>]>,
) -> Result<ActionResult> {
    settings.validate()?;
    if !(t > 0.0) || !t.is_finite() {
        return Err(KamError::InvalidArgument(format!("horizon must be positive, got {t}")));
    }
    if x.len() != sys.dim() || target.is_some_and(|y| y.len() != sys.dim()) {
        return Err(KamError::InvalidArgument("endpoint dimension mismatch".into()));
    }
    let m = sys.controls();
    let warm_ok = warm.filter(|w| !w.is_empty());
    let n = match warm_ok {
        Some(w) => w.len(),
        None => settings.steps_for(t),
    };
    let grid = TimeGrid::new(0.0, t, n)?;
    let guesses = initial_guesses(m, n, t, settings, warm_ok);
    let tol = target.map_or(f64::INFINITY, endpoint_tolerance);

    // Restarts are independent; the reduction scans them in index order.
    let runs: Vec<_> =
        guesses.into_par_iter().filter_map(|z0| solve_from(l, sys, x, target, grid, settings, z0)).collect();
    let mut best: Option<Run> = None;
    let mut best_gap = f64::INFINITY;
    for run in runs {
        best_gap = best_gap.min(run.1);
        let feasible = run.1 <= tol;
        let better = match &best {
            None => feasible,
            Some((value, ..)) => feasible && run.0 < *value,
        };
        if better {
            best = Some(run);
        }
    }
    let Some((_, _, z, converged)) = best else {
        return Err(KamError::InfeasibleEndpoint { best_gap });
    };
    let mut pair = sys.integrate(x, &to_controls(&z, m), grid)?;
    let value = action_of(l, &mut pair)?;
    Ok(ActionResult {
        value,
        endpoint_gap: target.map_or(0.0, |y| dist(pair.endpoint(), y)),
        pair,
        converged,
    })
}

/// Upper estimate of `A_t(x, y)`, the least action from `x` to `y` in time `t`.
pub fn minimize_action_fixed(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    x: &[f64],
    y: &[f64],
    t: f64,
    settings: &OptimizerSettings,
) -> Result<ActionResult> {
    best_of(l, sys, x, Some(y), t, settings, None)
}

/// [`minimize_action_fixed`] with an extra initial guess. The warm controls
/// fix the step count.
pub fn minimize_action_fixed_warm(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    x: &[f64],
    y: &[f64],
    t: f64,
    settings: &OptimizerSettings,
    warm: &[Vec<f64>],
) -> Result<ActionResult> {
    best_of(l, sys, x, Some(y), t, settings, Some(warm))
}

/// Upper estimate of the free-endpoint value `V_T(x)`.
pub fn value_free(l: &dyn Lagrangian, sys: &ControlSystem, x: &[f64], horizon: f64, settings: &OptimizerSettings) -> Result<ActionResult> {
    best_of(l, sys, x, None, horizon, settings, None)
}

/// Sub-Riemannian distance through the unit-horizon energy: `d = √(2 E(1))`.
pub fn sr_distance(sys: &ControlSystem, x: &[f64], y: &[f64], settings: &OptimizerSettings) -> Result<f64> {
    Ok(energy_minimizer(sys, x, y, settings)?.map_or(0.0, |r| (2.0 * r.value).sqrt()))
}

fn energy_minimizer(sys: &ControlSystem, x: &[f64], y: &[f64], settings: &OptimizerSettings) -> Result<Option<ActionResult>> {
    if x.len() != sys.dim() || y.len() != sys.dim() {
        return Err(KamError::InvalidArgument("endpoint dimension mismatch".into()));
    }
    if dist(x, y) == 0.0 {
        return Ok(None);
    }
    let energy = StandardLagrangian::energy(sys.dim(), sys.controls());
    minimize_action_fixed(&energy, sys, x, y, 1.0, settings).map(Some)
}

/// Unit-speed geodesic pair on `[0, d_SR(x, y)]`, rescaled from the energy
/// minimizer. Coincident endpoints give an empty pair.
pub fn geodesic_pair(sys: &ControlSystem, x: &[f64], y: &[f64], settings: &OptimizerSettings) -> Result<TrajectoryControlPair> {
    let Some(res) = energy_minimizer(sys, x, y, settings)? else {
        return Ok(TrajectoryControlPair::empty_at(x));
    };
    let length = (2.0 * res.value).sqrt();
    let grid = TimeGrid::new(0.0, length, res.pair.grid.n_steps)?;
    let controls: Vec<Vec<f64>> = res.pair.controls.iter().map(|u| u.iter().map(|v| v / length).collect()).collect();
    let mut pair = sys.integrate(x, &controls, grid)?;
    pair.action = Some(length);
    Ok(pair)
}

/// Inserts `extra` time units of zero control at the step where the state
/// is closest to `anchor`, keeping the step size of `controls`.
pub fn extend_with_rest(pair: &TrajectoryControlPair, anchor: &[f64], new_horizon: f64) -> Vec<Vec<f64>> {
    let n_old = pair.grid.n_steps;
    if n_old == 0 {
        return Vec::new();
    }
    let dt = pair.grid.dt();
    let extra = ((new_horizon - pair.duration()) / dt).round().max(0.0) as usize;
    let k = (0..=n_old)
        .min_by(|&a, &b| dist(&pair.states[a], anchor).total_cmp(&dist(&pair.states[b], anchor)))
        .unwrap_or(0);
    let m = pair.controls[0].len();
    let mut out = Vec::with_capacity(n_old + extra);
    out.extend_from_slice(&pair.controls[..k]);
    out.extend(std::iter::repeat_n(vec![0.0; m], extra));
    out.extend_from_slice(&pair.controls[k..]);
    out
}
