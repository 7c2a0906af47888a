//! Weak KAM pipeline: critical-value estimators, Peierls barrier, Aubry set,
//! calibrated curves and the horizontal-gradient identities.

use rayon::prelude::*;
use serde::Serialize;

use crate::action::{extend_with_rest, minimize_action_fixed, minimize_action_fixed_warm, value_free, OptimizerSettings};
use crate::error::{KamError, Result};
use crate::grid::GridFunction;
use crate::hjsolver::{backward_argmin, discounted, finite_horizon_ladder, SchemeSettings};
use crate::lagrangian::{legendre_slice, Lagrangian};
use crate::measures::{dual_bound, lp_critical, LpResult, MeasureGrid, TestFunctionBasis};
use crate::systems::{dist, norm, ControlSystem, TimeGrid, TrajectoryControlPair};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMethod {
    TimeAverage,
    Abel,
    ClosedMeasureLp,
    Oracle,
}

#[derive(Clone, Debug, Serialize)]
pub struct CriticalEstimate {
    pub method: EstimatorMethod,
    pub value: f64,
    /// `(parameter, estimate)` along the ladder.
    pub diagnostics: Vec<(f64, f64)>,
    pub error_proxy: f64,
    /// Set when the ladder was not monotone and no extrapolation was done.
    pub flagged: bool,
    /// `(T, value_free(T)/T)` from the trajectory optimizer, where computed.
    pub cross_check: Vec<(f64, f64)>,
    pub dual_bound: Option<f64>,
}

impl CriticalEstimate {
    pub fn oracle(c: f64) -> Self {
        Self {
            method: EstimatorMethod::Oracle,
            value: c,
            diagnostics: Vec::new(),
            error_proxy: 0.0,
            flagged: false,
            cross_check: Vec::new(),
            dual_bound: None,
        }
    }
}

/// Least-squares fit `y = c + a·s` over the last three points; returns `c`.
fn extrapolate(points: &[(f64, f64)]) -> f64 {
    let tail = &points[points.len().saturating_sub(3)..];
    if tail.len() < 2 {
        return tail[0].1;
    }
    let n = tail.len() as f64;
    let ms = tail.iter().map(|p| p.0).sum::<f64>() / n;
    let my = tail.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = tail.iter().map(|p| (p.0 - ms).powi(2)).sum();
    let sxy: f64 = tail.iter().map(|p| (p.0 - ms) * (p.1 - my)).sum();
    if sxx == 0.0 {
        return my;
    }
    my - sxy / sxx * ms
}

fn is_monotone(values: &[f64]) -> bool {
    let tol = |a: f64, b: f64| 1e-9 * (1.0 + a.abs().max(b.abs()));
    let up = values.windows(2).all(|w| w[1] >= w[0] - tol(w[0], w[1]));
    let down = values.windows(2).all(|w| w[1] <= w[0] + tol(w[0], w[1]));
    up || down
}

/// Builds an estimate from ladder estimates; `transform` maps the ladder
/// parameter to the variable in which the estimate is linear.
fn ladder_estimate(method: EstimatorMethod, diagnostics: Vec<(f64, f64)>, transform: impl Fn(f64) -> f64) -> CriticalEstimate {
    let values: Vec<f64> = diagnostics.iter().map(|p| p.1).collect();
    let last = *values.last().expect("nonempty ladder");
    let error_proxy = if values.len() >= 2 { (last - values[values.len() - 2]).abs() } else { 0.0 };
    let flagged = !is_monotone(&values);
    let value = if flagged {
        last
    } else {
        let pts: Vec<(f64, f64)> = diagnostics.iter().map(|&(p, v)| (transform(p), v)).collect();
        extrapolate(&pts)
    };
    CriticalEstimate { method, value, diagnostics, error_proxy, flagged, cross_check: Vec::new(), dual_bound: None }
}

/// `V_T(x)/T` along an increasing horizon ladder, extrapolated in `1/T`.
/// With `cross_check`, horizons up to the given bound are also solved by
/// the trajectory optimizer.
pub fn critical_time_average(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    x: &[f64],
    t_ladder: &[f64],
    scheme: &SchemeSettings,
    cross_check: Option<(&OptimizerSettings, f64)>,
) -> Result<CriticalEstimate> {
    if t_ladder.len() < 2 || t_ladder.windows(2).any(|w| !(w[1] > w[0])) || !(t_ladder[0] > 0.0) {
        return Err(KamError::InvalidArgument("time ladder must be positive, increasing, with >= 2 entries".into()));
    }
    check_point(x, sys)?;
    let values = finite_horizon_ladder(l, sys, t_ladder, scheme)?;
    let diagnostics: Vec<(f64, f64)> = t_ladder.iter().zip(&values).map(|(&t, v)| (t, v.interpolate(x) / t)).collect();
    let mut est = ladder_estimate(EstimatorMethod::TimeAverage, diagnostics, |t| 1.0 / t);
    if let Some((settings, max_t)) = cross_check {
        for &t in t_ladder.iter().filter(|&&t| t <= max_t) {
            let r = value_free(l, sys, x, t, settings)?;
            est.cross_check.push((t, r.value / t));
        }
    }
    Ok(est)
}

/// `λ v_λ(x)` along a decreasing rate ladder, extrapolated to `λ = 0`.
pub fn critical_abel(l: &dyn Lagrangian, sys: &ControlSystem, x: &[f64], lambda_ladder: &[f64], scheme: &SchemeSettings) -> Result<CriticalEstimate> {
    if lambda_ladder.len() < 2 || lambda_ladder.windows(2).any(|w| !(w[1] < w[0])) || !(lambda_ladder[lambda_ladder.len() - 1] > 0.0) {
        return Err(KamError::InvalidArgument("rate ladder must be positive, decreasing, with >= 2 entries".into()));
    }
    check_point(x, sys)?;
    let x_star = l.attractor().x_star.clone();
    let mut diagnostics = Vec::with_capacity(lambda_ladder.len());
    let mut prev: Option<(f64, GridFunction)> = None;
    for &lambda in lambda_ladder {
        // Warm start: v_λ ≈ c/λ + bounded part, with c read off the previous rung.
        let init = prev.as_ref().map(|(lp, vp)| {
            let c_est = lp * vp.interpolate(&x_star);
            let shift = c_est * (1.0 / lambda - 1.0 / lp);
            let mut v = vp.clone();
            v.values.iter_mut().for_each(|a| *a += shift);
            v
        });
        let v = discounted(l, sys, lambda, scheme, init.as_ref())?;
        diagnostics.push((lambda, lambda * v.interpolate(x)));
        prev = Some((lambda, v));
    }
    Ok(ladder_estimate(EstimatorMethod::Abel, diagnostics, |lambda| lambda))
}

/// One rung of the LP refinement ladder.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct LpLevel {
    pub n_x: usize,
    pub n_u: usize,
    pub degree: u32,
}

#[derive(Clone, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct LpLadder {
    pub radius: f64,
    pub control_bound: f64,
    pub levels: Vec<LpLevel>,
    /// Dual bound sample grid per axis; zero skips the dual bound.
    pub dual_samples: usize,
    pub dual_evaluations: usize,
}

/// Closed-measure LP over a refinement ladder, plus the dual lower bound.
pub fn critical_lp(l: &dyn Lagrangian, sys: &ControlSystem, ladder: &LpLadder) -> Result<(CriticalEstimate, Vec<LpResult>)> {
    if ladder.levels.is_empty() {
        return Err(KamError::InvalidArgument("LP ladder is empty".into()));
    }
    let mut results = Vec::with_capacity(ladder.levels.len());
    for level in &ladder.levels {
        let grid = MeasureGrid::new(sys.dim(), sys.controls(), ladder.radius, ladder.control_bound, level.n_x, level.n_u)?;
        let basis = TestFunctionBasis::monomials(sys.dim(), level.degree);
        results.push(lp_critical(l, sys, &grid, &basis)?);
    }
    let diagnostics: Vec<(f64, f64)> = results.iter().enumerate().map(|(i, r)| (i as f64, r.value)).collect();
    let last = diagnostics[diagnostics.len() - 1].1;
    let error_proxy = if diagnostics.len() >= 2 { (last - diagnostics[diagnostics.len() - 2].1).abs() } else { 0.0 };
    let dual = if ladder.dual_samples > 0 {
        let zeros = vec![0.0; TestFunctionBasis::monomials(sys.dim(), 4).len()];
        Some(dual_bound(l, sys, &zeros, ladder.radius, ladder.dual_samples, ladder.dual_evaluations)?.best)
    } else {
        None
    };
    let est = CriticalEstimate {
        method: EstimatorMethod::ClosedMeasureLp,
        value: last,
        diagnostics,
        error_proxy,
        flagged: false,
        cross_check: Vec::new(),
        dual_bound: dual,
    };
    Ok((est, results))
}

/// The oracle when available, else the median of the estimates.
pub fn select_critical_value(oracle: Option<f64>, estimates: &[CriticalEstimate]) -> Result<(f64, &'static str)> {
    if let Some(c) = oracle {
        return Ok((c, "oracle"));
    }
    let mut v: Vec<f64> = estimates.iter().map(|e| e.value).filter(|v| v.is_finite()).collect();
    if v.is_empty() {
        return Err(KamError::InvalidArgument("no critical value available".into()));
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Ok((if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) }, "median"))
}

/// Geometric horizon ladder for barrier evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
pub struct BarrierWindow {
    pub t_min: f64,
    pub t_max: f64,
    pub n: usize,
}

impl Default for BarrierWindow {
    fn default() -> Self {
        Self { t_min: 5.0, t_max: 80.0, n: 12 }
    }
}

impl BarrierWindow {
    pub fn horizons(&self) -> Result<Vec<f64>> {
        if !(self.t_min > 0.0) || !(self.t_max >= self.t_min) || self.n < 2 {
            return Err(KamError::InvalidArgument(format!("bad horizon window {self:?}")));
        }
        let ratio = self.t_max / self.t_min;
        Ok((0..self.n).map(|k| self.t_min * ratio.powf(k as f64 / (self.n - 1) as f64)).collect())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BarrierValue {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub horizons: Vec<f64>,
    /// `A_t(x, y) − c·t` per retained horizon.
    pub values: Vec<f64>,
    pub h: f64,
    /// Least-squares slope of the last quarter of the window.
    pub tail_slope: f64,
    pub dropped: usize,
}

/// `h(x, y)` as the minimum of `A_t − ct` over the top half of the window.
/// Each horizon is warm-started from the previous minimizer with a rest
/// segment inserted where it passes closest to `x*`.
pub fn peierls_barrier(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    x: &[f64],
    y: &[f64],
    c: f64,
    window: &BarrierWindow,
    settings: &OptimizerSettings,
) -> Result<BarrierValue> {
    check_point(x, sys)?;
    check_point(y, sys)?;
    let all = window.horizons()?;
    let x_star = l.attractor().x_star.clone();
    let warm_settings = OptimizerSettings { n_restarts: 0, ..settings.clone() };
    let mut horizons = Vec::new();
    let mut values = Vec::new();
    let mut in_top_half = Vec::new();
    let mut prev: Option<TrajectoryControlPair> = None;
    let mut dropped = 0;
    for (k, &t) in all.iter().enumerate() {
        let res = match &prev {
            None => minimize_action_fixed(l, sys, x, y, t, settings),
            Some(p) => {
                let warm = extend_with_rest(p, &x_star, t);
                minimize_action_fixed_warm(l, sys, x, y, t, &warm_settings, &warm)
            }
        };
        match res {
            Ok(r) => {
                horizons.push(t);
                values.push(r.value - c * t);
                in_top_half.push(2 * k >= all.len());
                prev = Some(r.pair);
            }
            Err(KamError::InfeasibleEndpoint { .. }) => dropped += 1,
            Err(e) => return Err(e),
        }
    }
    if values.is_empty() {
        return Err(KamError::BarrierInfeasible { x: x.to_vec(), y: y.to_vec() });
    }
    let h = values
        .iter()
        .zip(&in_top_half)
        .filter(|(_, top)| **top)
        .map(|(v, _)| *v)
        .fold(f64::INFINITY, f64::min);
    let h = if h.is_finite() { h } else { values[values.len() - 1] };
    let q = (values.len() / 4).max(2).min(values.len());
    let tail_slope = slope(&horizons[horizons.len() - q..], &values[values.len() - q..]);
    Ok(BarrierValue { x: x.to_vec(), y: y.to_vec(), horizons, values, h, tail_slope, dropped })
}

fn slope(t: &[f64], v: &[f64]) -> f64 {
    if t.len() < 2 {
        return 0.0;
    }
    let n = t.len() as f64;
    let mt = t.iter().sum::<f64>() / n;
    let mv = v.iter().sum::<f64>() / n;
    let stt: f64 = t.iter().map(|a| (a - mt).powi(2)).sum();
    let stv: f64 = t.iter().zip(v).map(|(a, b)| (a - mt) * (b - mv)).sum();
    if stt == 0.0 {
        0.0
    } else {
        stv / stt
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AubryReport {
    pub probes: Vec<Vec<f64>>,
    pub h_values: Vec<f64>,
    pub eps_a: f64,
    pub x_star: Vec<f64>,
    pub h_star: f64,
    /// Indices of probes with `h(x, x) ≤ ε_A`.
    pub member_probes: Vec<usize>,
    /// `x*` followed by the member probes.
    pub members: Vec<Vec<f64>>,
}

/// Tests each probe for `h(x, x) ≤ ε_A`. Without an explicit `eps_a`, the
/// tolerance is `3·h(x*, x*) + 1e-2`.
pub fn aubry_detect(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    c: f64,
    probes: &[Vec<f64>],
    eps_a: Option<f64>,
    window: &BarrierWindow,
    settings: &OptimizerSettings,
) -> Result<AubryReport> {
    let x_star = l.attractor().x_star.clone();
    let h_star = peierls_barrier(l, sys, &x_star, &x_star, c, window, settings)?.h;
    let eps_a = eps_a.unwrap_or(3.0 * h_star.abs() + 1e-2);
    let h_values: Vec<f64> = probes
        .par_iter()
        .map(|p| peierls_barrier(l, sys, p, p, c, window, settings).map(|b| b.h))
        .collect::<Result<_>>()?;
    let member_probes: Vec<usize> = (0..probes.len()).filter(|&i| h_values[i] <= eps_a).collect();
    let mut members = vec![x_star.clone()];
    members.extend(member_probes.iter().map(|&i| probes[i].clone()).filter(|p| dist(p, &x_star) > 1e-12));
    Ok(AubryReport { probes: probes.to_vec(), h_values, eps_a, x_star, h_star, member_probes, members })
}

/// Horizontal gradient `D_Fψ(x)` with a two-scale consistency indicator.
#[derive(Clone, Debug, Serialize)]
pub struct HorizontalGradient {
    pub q: Vec<f64>,
    /// Relative change between steps `h` and `h/2`.
    pub consistency: f64,
}

/// Absolute scale below which gradient changes count as consistent.
const CONSISTENCY_FLOOR: f64 = 1e-3;

/// Central differences of `ψ` along the columns of `F(x)`.
pub fn horizontal_gradient(psi: &GridFunction, sys: &ControlSystem, x: &[f64], h_fd: f64) -> Result<HorizontalGradient> {
    if !(h_fd > 0.0) {
        return Err(KamError::InvalidArgument(format!("finite-difference step must be positive, got {h_fd}")));
    }
    if x.len() != sys.dim() || !psi.grid.contains_interior(x, 2.0) {
        return Err(KamError::OutOfBox(x.to_vec()));
    }
    let q = directional(psi, sys, x, h_fd)?;
    let q_half = directional(psi, sys, x, 0.5 * h_fd)?;
    let scale = norm(&q).max(norm(&q_half)).max(CONSISTENCY_FLOOR);
    Ok(HorizontalGradient { consistency: dist(&q, &q_half) / scale, q })
}

fn directional(psi: &GridFunction, sys: &ControlSystem, x: &[f64], h: f64) -> Result<Vec<f64>> {
    let (d, m) = (sys.dim(), sys.controls());
    let mut f = vec![0.0; d * m];
    sys.fields_into(x, &mut f);
    let mut plus = vec![0.0; d];
    let mut minus = vec![0.0; d];
    (0..m)
        .map(|i| {
            for a in 0..d {
                plus[a] = x[a] + h * f[a * m + i];
                minus[a] = x[a] - h * f[a * m + i];
            }
            if !psi.grid.contains_interior(&plus, 0.0) || !psi.grid.contains_interior(&minus, 0.0) {
                return Err(KamError::OutOfBox(x.to_vec()));
            }
            Ok((psi.interpolate(&plus) - psi.interpolate(&minus)) / (2.0 * h))
        })
        .collect()
}

/// Default finite-difference step: half the smallest cell.
pub fn default_h_fd(psi: &GridFunction) -> f64 {
    0.5 * psi.grid.min_spacing()
}

#[derive(Clone, Debug, Serialize)]
pub struct CalibrationReport {
    pub pair: TrajectoryControlPair,
    /// `D_Fχ` at each state.
    pub horizontal_gradients: Vec<Vec<f64>>,
    /// `D_uL(γ_k, u_k)` at each state (last state uses the last control).
    pub control_gradients: Vec<Vec<f64>>,
    /// `max_{a<b} |χ(γ_b) − χ(γ_a) − ∫_a^b (L − c)|`.
    pub defect: f64,
    pub defect_per_time: f64,
    pub gradient_identity_residual: f64,
    /// Largest two-scale indicator seen along the curve.
    pub max_consistency: f64,
    /// The curve left the grid interior and was cut short.
    pub truncated: bool,
}

/// States, controls, worst consistency indicator, truncated.
type HalfCurve = (Vec<Vec<f64>>, Vec<Vec<f64>>, f64, bool);

/// Calibrated curve through `x ∈ A` over `[−horizon, horizon]`.
///
/// The feedback `u = D_pL*(γ, D_Fχ(γ))` is integrated backward from `x`,
/// the direction in which it descends `χ` and is stable. Integrating it
/// forward from a rest point amplifies the O(h²) gradient error
/// exponentially, so the forward half is the time reversal of the backward
/// one: for reversible `L` the barrier is symmetric, and a curve through a
/// point of `A` satisfying the backward barrier identity yields, reversed,
/// one satisfying the forward identity.
pub fn calibrated_curve(
    chi: &GridFunction,
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    c: f64,
    x: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<CalibrationReport> {
    if !(horizon > 0.0) || !(dt > 0.0) {
        return Err(KamError::InvalidArgument("horizon and dt must be positive".into()));
    }
    check_point(x, sys)?;
    let h_fd = default_h_fd(chi);
    let steps = (horizon / dt).round().max(1.0) as usize;
    let feedback = |z: &[f64]| -> Result<(Vec<f64>, Vec<f64>, f64)> {
        let g = horizontal_gradient(chi, sys, z, h_fd)?;
        let u = legendre_slice(l, z, &g.q)?.argmax;
        Ok((u, g.q, g.consistency))
    };
    // Backward half-curve as (states, controls), stepping with −u.
    let follow = || -> Result<HalfCurve> {
        let d = sys.dim();
        let mut states = vec![x.to_vec()];
        let mut controls = Vec::new();
        let mut stages = vec![0.0; 4 * d];
        let mut next = vec![0.0; d];
        let mut worst: f64 = 0.0;
        for _ in 0..steps {
            let z = states.last().expect("nonempty");
            let Ok((u, _, cons)) = feedback(z) else {
                return Ok((states, controls, worst, true));
            };
            worst = worst.max(cons);
            let signed: Vec<f64> = u.iter().map(|v| -v).collect();
            sys.rk4_step(z, &signed, dt, &mut next, &mut stages);
            if !chi.grid.contains_interior(&next, 2.0) {
                return Ok((states, controls, worst, true));
            }
            controls.push(u);
            states.push(next.clone());
        }
        Ok((states, controls, worst, false))
    };
    let (bwd_states, bwd_controls, cons_b, trunc_b) = follow()?;
    // Forward half: the same states in forward time under the control −u,
    // which reproduces each backward step exactly.
    let fwd_states = bwd_states.clone();
    let fwd_controls: Vec<Vec<f64>> = bwd_controls.iter().map(|u| u.iter().map(|v| -v).collect()).collect();
    let (cons_f, trunc_f) = (cons_b, trunc_b);

    // Backward half reversed in time: state η_{k+1} → η_k under control u(η_k).
    let nb = bwd_controls.len();
    let mut states: Vec<Vec<f64>> = bwd_states.into_iter().rev().collect();
    let mut controls: Vec<Vec<f64>> = bwd_controls.into_iter().rev().collect();
    states.extend(fwd_states.into_iter().skip(1));
    controls.extend(fwd_controls);
    let n = controls.len();
    let t0 = -(nb as f64) * dt;
    let pair_grid = TimeGrid { t0, t1: t0 + n as f64 * dt, n_steps: n };
    let m = sys.controls();

    let mut horizontal_gradients = Vec::with_capacity(states.len());
    let mut max_consistency = cons_f.max(cons_b);
    for z in &states {
        let g = horizontal_gradient(chi, sys, z, h_fd)?;
        max_consistency = max_consistency.max(g.consistency);
        horizontal_gradients.push(g.q);
    }
    let mut control_gradients = Vec::with_capacity(states.len());
    let mut identity: f64 = 0.0;
    let mut du = vec![0.0; m];
    for (k, z) in states.iter().enumerate() {
        // Compare against the controls of both adjacent intervals.
        for j in [k.checked_sub(1), (k < n).then_some(k)].into_iter().flatten() {
            l.grad_u(z, &controls[j], &mut du);
            identity = identity.max(dist(&horizontal_gradients[k], &du));
        }
        let j = k.min(n.saturating_sub(1));
        if n > 0 {
            l.grad_u(z, &controls[j], &mut du);
        } else {
            du.iter_mut().for_each(|v| *v = 0.0);
        }
        control_gradients.push(du.clone());
    }

    let defect = calibration_defect(chi, l, c, &states, &controls, dt);
    let duration = n as f64 * dt;
    let pair = TrajectoryControlPair { grid: pair_grid, states, controls, action: None };
    Ok(CalibrationReport {
        pair,
        horizontal_gradients,
        control_gradients,
        defect,
        defect_per_time: if duration > 0.0 { defect / duration } else { 0.0 },
        gradient_identity_residual: identity,
        max_consistency,
        truncated: trunc_f || trunc_b,
    })
}

/// Running `S_k = χ(γ_k) − Σ_{j<k} ∫(L − c)` with trapezoidal costs.
fn calibration_potential(chi: &GridFunction, l: &dyn Lagrangian, c: f64, states: &[Vec<f64>], controls: &[Vec<f64>], dt: f64) -> Vec<f64> {
    let mut s = Vec::with_capacity(states.len());
    let mut acc = 0.0;
    s.push(chi.interpolate(&states[0]));
    for (j, u) in controls.iter().enumerate() {
        acc += dt * (0.5 * (l.eval(&states[j], u) + l.eval(&states[j + 1], u)) - c);
        s.push(chi.interpolate(&states[j + 1]) - acc);
    }
    s
}

fn calibration_defect(chi: &GridFunction, l: &dyn Lagrangian, c: f64, states: &[Vec<f64>], controls: &[Vec<f64>], dt: f64) -> f64 {
    let s = calibration_potential(chi, l, c, states, controls, dt);
    let max = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = s.iter().cloned().fold(f64::INFINITY, f64::min);
    max - min
}

#[derive(Clone, Debug, Serialize)]
pub struct DominationReport {
    /// `max_{a<b} [χ(γ_b) − χ(γ_a) − ∫_a^b (L − c)]`, clipped at zero.
    pub max_violation: f64,
    /// Largest violation per unit time over subintervals of length ≥ 1.
    pub max_rate: f64,
}

/// Checks `χ(γ(b)) − χ(γ(a)) ≤ ∫_a^b L − c(b − a)` along a pair.
pub fn domination_check(chi: &GridFunction, l: &dyn Lagrangian, c: f64, pair: &TrajectoryControlPair) -> DominationReport {
    let dt = pair.grid.dt();
    let s = calibration_potential(chi, l, c, &pair.states, &pair.controls, dt);
    let mut max_violation: f64 = 0.0;
    let mut max_rate: f64 = 0.0;
    let min_gap = (1.0 / dt).ceil() as usize;
    for a in 0..s.len() {
        for b in a + 1..s.len() {
            let v = s[b] - s[a];
            max_violation = max_violation.max(v);
            if b - a >= min_gap {
                max_rate = max_rate.max(v / ((b - a) as f64 * dt));
            }
        }
    }
    DominationReport { max_violation, max_rate }
}

/// Cross-check: follow Lax-Oleinik argmins backward from `x` for `horizon`,
/// returned in forward time and ending at `x`.
pub fn calibrated_curve_argmin(
    chi: &GridFunction,
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    c: f64,
    x: &[f64],
    horizon: f64,
    scheme: &SchemeSettings,
) -> Result<(TrajectoryControlPair, f64)> {
    check_point(x, sys)?;
    let d = sys.dim();
    let steps = (horizon / scheme.dt).round().max(1.0) as usize;
    let mut states = vec![x.to_vec()];
    let mut controls = Vec::new();
    let mut stages = vec![0.0; 4 * d];
    let mut prev = vec![0.0; d];
    for _ in 0..steps {
        let z = states.last().expect("nonempty").clone();
        let (_, u) = backward_argmin(chi, l, sys, scheme, &z)?;
        let back: Vec<f64> = u.iter().map(|v| -v).collect();
        sys.rk4_step(&z, &back, scheme.dt, &mut prev, &mut stages);
        if !chi.grid.contains_interior(&prev, 2.0) {
            break;
        }
        controls.push(u);
        states.push(prev.clone());
    }
    states.reverse();
    controls.reverse();
    let n = controls.len();
    let defect = if n > 0 { calibration_defect(chi, l, c, &states, &controls, scheme.dt) } else { 0.0 };
    let t0 = -(n as f64) * scheme.dt;
    let pair = TrajectoryControlPair { grid: TimeGrid { t0, t1: 0.0, n_steps: n }, states, controls, action: None };
    Ok((pair, defect))
}

#[derive(Clone, Debug, Serialize)]
pub struct SuperdifferentialReport {
    pub residuals: Vec<f64>,
    pub max_residual: f64,
}

/// `|c + L*(x, D_Fχ(x))|` at each point.
pub fn superdifferential_equation_check(
    chi: &GridFunction,
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    c: f64,
    points: &[Vec<f64>],
) -> Result<SuperdifferentialReport> {
    let h_fd = default_h_fd(chi);
    let residuals: Vec<f64> = points
        .iter()
        .map(|x| {
            let q = horizontal_gradient(chi, sys, x, h_fd)?.q;
            Ok((c + legendre_slice(l, x, &q)?.value).abs())
        })
        .collect::<Result<_>>()?;
    let max_residual = residuals.iter().cloned().fold(0.0, f64::max);
    Ok(SuperdifferentialReport { residuals, max_residual })
}

fn check_point(x: &[f64], sys: &ControlSystem) -> Result<()> {
    if x.len() != sys.dim() || x.iter().any(|v| !v.is_finite()) {
        return Err(KamError::InvalidArgument(format!("point {x:?} is not a finite {}-vector", sys.dim())));
    }
    Ok(())
}
