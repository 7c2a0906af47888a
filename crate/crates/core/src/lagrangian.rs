//! Tonelli-in-`u` Lagrangians, their Legendre transform and the Hamiltonian
//! `H(x, p) = L*(x, F*(x) p)`.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{KamError, Result};
use crate::potential::{Potential, PotentialShape, RadialScope};
use crate::systems::{dist, dot, norm, ControlSystem, TrajectoryControlPair};

/// Attractor data: `K_L` is the closed ball of radius `k_radius`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AttractorData {
    pub k_radius: f64,
    pub x_star: Vec<f64>,
    /// `δ_L`.
    pub gap: f64,
}

/// A Lagrangian `L(x, u)` with analytic first derivatives and `D²_u L`.
pub trait Lagrangian: Send + Sync {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn eval(&self, x: &[f64], u: &[f64]) -> f64;
    fn grad_x(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn grad_u(&self, x: &[f64], u: &[f64], out: &mut [f64]);
    fn hess_u(&self, x: &[f64], u: &[f64]) -> DMatrix<f64>;
    /// `ℓ₁`, claimed so that `D²_u L ≥ 1/ℓ₁`.
    fn convexity_modulus(&self) -> f64;
    /// `C₁`, claimed so that `|D_x L| ≤ C₁ (1 + |u|²)`.
    fn growth_c1(&self) -> f64;
    fn attractor(&self) -> &AttractorData;

    /// Closed-form `(sup_u {⟨q,u⟩ − L(x,u)}, argmax)` when available.
    fn legendre_closed_form(&self, _x: &[f64], _q: &[f64]) -> Option<(f64, Vec<f64>)> {
        None
    }

    /// `L(x, 0)`.
    fn rest_cost(&self, x: &[f64]) -> f64 {
        self.eval(x, &vec![0.0; self.control_dim()])
    }
}

/// `L(x, u) = ½|u|² + (β/4)|u|⁴ + V(x)`.
#[derive(Clone, Debug, Serialize)]
pub struct StandardLagrangian {
    dim: usize,
    controls: usize,
    pub potential: Potential,
    /// `β ≥ 0`; zero gives the closed-form quadratic conjugate.
    pub quartic: f64,
    growth_c1: f64,
    attractor: AttractorData,
}

impl StandardLagrangian {
    /// Builds the Lagrangian and fills in `C₁` and the attractor data.
    ///
    /// `C₁` is measured as the largest sampled `|∇V|` on `[−4, 4]^d` (with a
    /// 5% margin); it is a claim the diagnostics can contradict off that box.
    pub fn new(dim: usize, controls: usize, potential: Potential, quartic: f64, k_radius: f64) -> Result<Self> {
        if dim == 0 || controls == 0 || controls > dim {
            return Err(KamError::InvalidArgument(format!("bad dimensions d = {dim}, m = {controls}")));
        }
        if !(quartic >= 0.0) || !(k_radius > 0.0) {
            return Err(KamError::InvalidArgument("quartic must be >= 0 and K_L radius > 0".into()));
        }
        if let PotentialShape::Rational { num, den } = &potential.shape {
            if !num.dim_ok(dim) || !den.dim_ok(dim) {
                return Err(KamError::InvalidArgument("rational potential exponents must have length d".into()));
            }
        }
        let mut l = Self {
            dim,
            controls,
            potential,
            quartic,
            growth_c1: 0.0,
            attractor: AttractorData { k_radius, x_star: vec![0.0; dim], gap: 0.0 },
        };
        l.growth_c1 = l.sampled_gradient_bound(4.0) * 1.05 + 1e-12;
        let (_, x_star) = oracle_critical(&l, k_radius, grid_n_for(dim));
        l.attractor.x_star = x_star;
        l.attractor.gap = l.sampled_gap(k_radius);
        Ok(l)
    }

    /// Quadratic kinetic energy plus the single well `|x|²/(1+|x|²)`.
    pub fn single_well(dim: usize, controls: usize, scope: RadialScope) -> Self {
        Self::new(dim, controls, Potential::new(PotentialShape::SingleWell { scope }), 0.0, 1.0)
            .expect("single well is valid")
    }

    /// Quadratic kinetic energy plus `(|x|² − 1)²`.
    pub fn double_well(dim: usize, controls: usize) -> Self {
        Self::new(dim, controls, Potential::new(PotentialShape::DoubleWell { scope: RadialScope::Full }), 0.0, 2.0)
            .expect("double well is valid")
    }

    /// Pure energy `½|u|²`.
    pub fn energy(dim: usize, controls: usize) -> Self {
        Self::new(dim, controls, Potential::new(PotentialShape::Zero), 0.0, 1.0).expect("energy is valid")
    }

    /// Adds a constant to the potential; minimizer, gap and `C₁` are unchanged.
    pub fn shifted(mut self, shift: f64) -> Self {
        self.potential = self.potential.shifted(shift);
        self
    }

    fn sampled_gradient_bound(&self, radius: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
        let mut g = vec![0.0; self.dim];
        let mut best = 0.0_f64;
        for _ in 0..4000 {
            let x: Vec<f64> = (0..self.dim).map(|_| rng.random_range(-radius..=radius)).collect();
            self.potential.grad(&x, &mut g);
            best = best.max(norm(&g));
        }
        best
    }

    /// `inf_{|x| > K} V(x) − V(x*)`, sampled on the shell `K < |x| ≤ 4K`.
    fn sampled_gap(&self, k_radius: f64) -> f64 {
        let mut rng = ChaCha8Rng::seed_from_u64(0x9a9);
        let v_star = self.potential.eval(&self.attractor.x_star);
        let mut inf = f64::INFINITY;
        for s in 0..4000 {
            let dir = shell_direction(s, self.dim, &mut rng);
            let n = norm(&dir).max(1e-12);
            let r = k_radius * (1.0 + 1e-9) + rng.random_range(0.0..=3.0 * k_radius);
            let x: Vec<f64> = dir.iter().map(|v| v / n * r).collect();
            inf = inf.min(self.potential.eval(&x));
        }
        (inf - v_star).max(0.0)
    }
}

/// The first `2d` directions are the signed coordinate axes, the rest random.
fn shell_direction(sample: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    if sample < 2 * d {
        let mut e = vec![0.0; d];
        e[sample / 2] = if sample.is_multiple_of(2) { 1.0 } else { -1.0 };
        return e;
    }
    (0..d).map(|_| rng.random_range(-1.0..=1.0)).collect()
}

fn grid_n_for(dim: usize) -> usize {
    match dim {
        1 => 401,
        2 => 81,
        3 => 41,
        _ => 11,
    }
}

impl Lagrangian for StandardLagrangian {
    fn state_dim(&self) -> usize {
        self.dim
    }

    fn control_dim(&self) -> usize {
        self.controls
    }

    #[inline]
    fn eval(&self, x: &[f64], u: &[f64]) -> f64 {
        let s = dot(u, u);
        0.5 * s + 0.25 * self.quartic * s * s + self.potential.eval(x)
    }

    fn grad_x(&self, x: &[f64], _u: &[f64], out: &mut [f64]) {
        self.potential.grad(x, out);
    }

    #[inline]
    fn grad_u(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
        let s = dot(u, u);
        for (o, &ui) in out.iter_mut().zip(u) {
            *o = ui * (1.0 + self.quartic * s);
        }
    }

    fn hess_u(&self, _x: &[f64], u: &[f64]) -> DMatrix<f64> {
        let m = self.controls;
        let s = dot(u, u);
        let v = DVector::from_column_slice(u);
        DMatrix::identity(m, m) * (1.0 + self.quartic * s) + (&v * v.transpose()) * (2.0 * self.quartic)
    }

    fn convexity_modulus(&self) -> f64 {
        1.0
    }

    fn growth_c1(&self) -> f64 {
        self.growth_c1
    }

    fn attractor(&self) -> &AttractorData {
        &self.attractor
    }

    fn legendre_closed_form(&self, x: &[f64], q: &[f64]) -> Option<(f64, Vec<f64>)> {
        if self.quartic != 0.0 {
            return None;
        }
        Some((0.5 * dot(q, q) - self.potential.eval(x), q.to_vec()))
    }

    #[inline]
    fn rest_cost(&self, x: &[f64]) -> f64 {
        self.potential.eval(x)
    }
}

/// `q = F*(x) p`, the momentum seen by the controls.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReducedMomentum(Vec<f64>);

impl ReducedMomentum {
    pub fn new(q: Vec<f64>) -> Result<Self> {
        if q.iter().any(|v| !v.is_finite()) {
            return Err(KamError::InvalidArgument(format!("non-finite reduced momentum {q:?}")));
        }
        Ok(Self(q))
    }

    pub fn from_covector(sys: &ControlSystem, x: &[f64], p: &[f64]) -> Result<Self> {
        let mut q = vec![0.0; sys.controls()];
        sys.reduce_momentum_into(x, p, &mut q);
        Self::new(q)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LegendreValue {
    pub value: f64,
    pub argmax: Vec<f64>,
}

const LEGENDRE_TOL: f64 = 1e-10;
const NEWTON_MAX_ITERS: usize = 100;

/// `L*(x, q) = sup_u {⟨q, u⟩ − L(x, u)}` with its maximizer.
pub fn legendre(l: &dyn Lagrangian, x: &[f64], q: &ReducedMomentum) -> Result<LegendreValue> {
    legendre_slice(l, x, q.as_slice())
}

pub(crate) fn legendre_slice(l: &dyn Lagrangian, x: &[f64], q: &[f64]) -> Result<LegendreValue> {
    if let Some((value, argmax)) = l.legendre_closed_form(x, q) {
        return Ok(LegendreValue { value, argmax });
    }
    let m = l.control_dim();
    let objective = |u: &[f64]| dot(q, u) - l.eval(x, u);
    let mut u = vec![0.0; m];
    let mut g = vec![0.0; m];
    let residual = |u: &[f64], g: &mut [f64]| {
        l.grad_u(x, u, g);
        for (gi, qi) in g.iter_mut().zip(q) {
            *gi = qi - *gi;
        }
        norm(g)
    };

    // Damped Newton ascent from the symmetry point u = 0.
    let mut r = residual(&u, &mut g);
    let mut iters = 0;
    while r > LEGENDRE_TOL && iters < NEWTON_MAX_ITERS {
        iters += 1;
        let hess = l.hess_u(x, &u);
        let Some(step) = hess.cholesky().map(|c| c.solve(&DVector::from_column_slice(&g))) else {
            break;
        };
        let f0 = objective(&u);
        let slope = dot(&g, step.as_slice());
        let mut t = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let trial: Vec<f64> = u.iter().zip(step.iter()).map(|(a, b)| a + t * b).collect();
            if objective(&trial) >= f0 + 1e-4 * t * slope {
                u = trial;
                accepted = true;
                break;
            }
            t *= 0.5;
        }
        if !accepted {
            break;
        }
        r = residual(&u, &mut g);
    }
    if r <= LEGENDRE_TOL {
        return Ok(LegendreValue { value: objective(&u), argmax: u });
    }

    // Safeguarded steepest ascent with a bisection line search on the
    // directional derivative.
    for _ in 0..2000 {
        r = residual(&u, &mut g);
        if r <= LEGENDRE_TOL {
            return Ok(LegendreValue { value: objective(&u), argmax: u });
        }
        let dir: Vec<f64> = g.iter().map(|v| v / r).collect();
        let deriv = |t: f64, buf: &mut [f64]| {
            let p: Vec<f64> = u.iter().zip(&dir).map(|(a, b)| a + t * b).collect();
            l.grad_u(x, &p, buf);
            dir.iter().zip(q).zip(buf.iter()).map(|((d, qi), gi)| d * (qi - gi)).sum::<f64>()
        };
        let mut buf = vec![0.0; m];
        let (mut lo, mut hi) = (0.0, r * l.convexity_modulus().max(1e-12));
        let mut grow = 0;
        while deriv(hi, &mut buf) > 0.0 && grow < 60 {
            lo = hi;
            hi *= 2.0;
            grow += 1;
        }
        for _ in 0..80 {
            let mid = 0.5 * (lo + hi);
            if deriv(mid, &mut buf) > 0.0 {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let t = 0.5 * (lo + hi);
        if t == 0.0 || !t.is_finite() {
            break;
        }
        for (ui, di) in u.iter_mut().zip(&dir) {
            *ui += t * di;
        }
    }
    Err(KamError::ConvexityViolation { x: x.to_vec(), residual: r })
}

/// `H(x, p) = L*(x, F*(x) p)`.
pub fn hamiltonian(l: &dyn Lagrangian, sys: &ControlSystem, x: &[f64], p: &[f64]) -> Result<f64> {
    let mut q = vec![0.0; sys.controls()];
    sys.reduce_momentum_into(x, p, &mut q);
    Ok(legendre_slice(l, x, &q)?.value)
}

/// Left-endpoint action `Σ L(x_k, u_k) dt`; stores it in `pair.action`.
pub fn action_of(l: &dyn Lagrangian, pair: &mut TrajectoryControlPair) -> Result<f64> {
    if pair.grid.n_steps == 0 {
        pair.action = Some(0.0);
        return Ok(0.0);
    }
    let dt = pair.grid.dt();
    let mut total = 0.0;
    for (k, u) in pair.controls.iter().enumerate() {
        let v = l.eval(&pair.states[k], u);
        if !v.is_finite() {
            return Err(KamError::Evaluation(k));
        }
        total += v * dt;
    }
    pair.action = Some(total);
    Ok(total)
}

/// Analytic critical value `c = min_x L(x, 0)` with its minimizer.
///
/// Grid scan of `L(·, 0)` over `[−r, r]^d` followed by Armijo gradient descent
/// polishing of the lowest discrete local minima. Ties resolve to the
/// lexicographically smallest minimizer.
pub fn oracle_critical(l: &dyn Lagrangian, search_radius: f64, grid_n: usize) -> (f64, Vec<f64>) {
    let d = l.state_dim();
    let n = grid_n.max(3);
    let total = n.pow(d as u32);
    let h = 2.0 * search_radius / (n - 1) as f64;
    let coords = |mut idx: usize| -> Vec<f64> {
        let mut x = vec![0.0; d];
        for xj in x.iter_mut() {
            *xj = -search_radius + h * (idx % n) as f64;
            idx /= n;
        }
        x
    };
    let values: Vec<f64> = (0..total).map(|i| l.rest_cost(&coords(i))).collect();

    // Discrete local minima over the axis stencil.
    let mut minima: Vec<usize> = (0..total)
        .filter(|&i| {
            let mut stride = 1;
            let mut idx = i;
            for _ in 0..d {
                let pos = idx % n;
                if pos > 0 && values[i - stride] < values[i] {
                    return false;
                }
                if pos + 1 < n && values[i + stride] < values[i] {
                    return false;
                }
                idx /= n;
                stride *= n;
            }
            true
        })
        .collect();
    minima.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    minima.truncate(8);

    let mut best: Option<(f64, Vec<f64>)> = None;
    for i in minima {
        let (v, x) = polish_rest_minimum(l, coords(i), search_radius);
        let better = match &best {
            None => true,
            Some((bv, bx)) => {
                let tie = (v - bv).abs() <= 1e-10 * (1.0 + bv.abs());
                (!tie && v < *bv) || (tie && lex_less(&x, bx))
            }
        };
        if better {
            best = Some((v, x));
        }
    }
    best.expect("grid has at least one local minimum")
}

fn lex_less(a: &[f64], b: &[f64]) -> bool {
    for (x, y) in a.iter().zip(b) {
        if (x - y).abs() > 1e-8 {
            return x < y;
        }
    }
    false
}

fn polish_rest_minimum(l: &dyn Lagrangian, mut x: Vec<f64>, radius: f64) -> (f64, Vec<f64>) {
    let d = l.state_dim();
    let zero = vec![0.0; l.control_dim()];
    let mut g = vec![0.0; d];
    let mut f = l.rest_cost(&x);
    for _ in 0..10_000 {
        l.grad_x(&x, &zero, &mut g);
        let gn = norm(&g);
        if gn <= 1e-10 {
            break;
        }
        let mut t = 1.0;
        let mut moved = false;
        while t > 1e-16 {
            let trial: Vec<f64> = x.iter().zip(&g).map(|(a, b)| (a - t * b).clamp(-radius, radius)).collect();
            let ft = l.rest_cost(&trial);
            if ft <= f - 1e-4 * t * gn * gn {
                x = trial;
                f = ft;
                moved = true;
                break;
            }
            t *= 0.5;
        }
        if !moved {
            break;
        }
    }
    (f, x)
}

/// Worst sampled violations of `(L1)`–`(L3)`.
#[derive(Clone, Debug, Serialize)]
pub struct LagrangianReport {
    pub samples: usize,
    /// `max |L(x,u) − L(x,−u)| / (1 + |L(x,u)|)`.
    pub reversibility_defect: f64,
    /// `min λ_min(D²_u L)`.
    pub min_hessian_eigenvalue: f64,
    /// `min L(x,u) − (|u|²/(2ℓ₁) + L(x*,0))`.
    pub lower_bound_margin: f64,
    /// `max |D_x L| / (1 + |u|²)`.
    pub max_growth_ratio: f64,
    /// `inf_{|x|>K} L(x,0) − (δ_L + L(x*,0))`.
    pub gap_margin: f64,
    /// Largest relative error between `grad_u` and central differences.
    pub grad_u_fd_error: f64,
    /// Fitted `C_R` in `|H(x,p) − H(y,p)| ≤ C_R (1+|p|²)|x−y|` on the box.
    pub fitted_c_r: f64,
    pub l1_violation: bool,
    pub l2_violation: bool,
    pub l3_violation: bool,
}

/// Samples `(x, u)` in `[−rx, rx]^d × [−ru, ru]^m` and reports the worst
/// violation of each assumption.
pub fn check_l1_l2_l3(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    samples: usize,
    seed: u64,
    state_radius: f64,
    control_radius: f64,
) -> LagrangianReport {
    let (d, m) = (l.state_dim(), l.control_dim());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let att = l.attractor();
    let l_star = l.rest_cost(&att.x_star);
    let ell = l.convexity_modulus();
    let mut rep = LagrangianReport {
        samples,
        reversibility_defect: 0.0,
        min_hessian_eigenvalue: f64::INFINITY,
        lower_bound_margin: f64::INFINITY,
        max_growth_ratio: 0.0,
        gap_margin: f64::INFINITY,
        grad_u_fd_error: 0.0,
        fitted_c_r: 0.0,
        l1_violation: false,
        l2_violation: false,
        l3_violation: false,
    };
    let mut gx = vec![0.0; d];
    let mut gu = vec![0.0; m];
    let mut p_scratch = vec![0.0; d];
    for sample in 0..samples {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-state_radius..=state_radius)).collect();
        let u: Vec<f64> = (0..m).map(|_| rng.random_range(-control_radius..=control_radius)).collect();
        let neg: Vec<f64> = u.iter().map(|v| -v).collect();
        let lv = l.eval(&x, &u);
        rep.reversibility_defect = rep.reversibility_defect.max((lv - l.eval(&x, &neg)).abs() / (1.0 + lv.abs()));

        let eig = nalgebra::SymmetricEigen::new(l.hess_u(&x, &u)).eigenvalues.min();
        rep.min_hessian_eigenvalue = rep.min_hessian_eigenvalue.min(eig);
        rep.lower_bound_margin = rep.lower_bound_margin.min(lv - (dot(&u, &u) / (2.0 * ell) + l_star));
        l.grad_x(&x, &u, &mut gx);
        rep.max_growth_ratio = rep.max_growth_ratio.max(norm(&gx) / (1.0 + dot(&u, &u)));

        l.grad_u(&x, &u, &mut gu);
        let h = 1e-6 * (1.0 + norm(&u));
        for i in 0..m {
            let mut up = u.clone();
            let mut um = u.clone();
            up[i] += h;
            um[i] -= h;
            let fd = (l.eval(&x, &up) - l.eval(&x, &um)) / (2.0 * h);
            rep.grad_u_fd_error = rep.grad_u_fd_error.max((fd - gu[i]).abs() / (1.0 + gu[i].abs()));
        }

        // Sample outside K_L for the gap.
        let dir = shell_direction(sample, d, &mut rng);
        let n = norm(&dir).max(1e-12);
        let r = att.k_radius * (1.0 + 1e-9) + rng.random_range(0.0..=state_radius.max(att.k_radius));
        let out: Vec<f64> = dir.iter().map(|v| v / n * r).collect();
        rep.gap_margin = rep.gap_margin.min(l.rest_cost(&out) - (att.gap + l_star));

        // Lipschitz fit of H in x at a random momentum.
        let y: Vec<f64> = (0..d).map(|_| rng.random_range(-state_radius..=state_radius)).collect();
        for pj in p_scratch.iter_mut() {
            *pj = rng.random_range(-2.0..=2.0);
        }
        if let (Ok(hx), Ok(hy)) = (hamiltonian(l, sys, &x, &p_scratch), hamiltonian(l, sys, &y, &p_scratch)) {
            let denom = (1.0 + dot(&p_scratch, &p_scratch)) * dist(&x, &y);
            if denom > 0.0 {
                rep.fitted_c_r = rep.fitted_c_r.max((hx - hy).abs() / denom);
            }
        }
    }
    rep.l1_violation = rep.reversibility_defect > 1e-12;
    rep.l2_violation = rep.min_hessian_eigenvalue < 1.0 / ell - 1e-9
        || rep.max_growth_ratio > l.growth_c1()
        || rep.lower_bound_margin < -1e-9
        || rep.grad_u_fd_error > 1e-5;
    rep.l3_violation = rep.gap_margin < -1e-6 || !rep.gap_margin.is_finite() || !(att.gap > 0.0);
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::systems::TimeGrid;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::PI;

    fn well_1d() -> StandardLagrangian {
        StandardLagrangian::single_well(1, 1, RadialScope::Full)
    }

    /// Grid oracle: `max_u ⟨q,u⟩ − L(x,u)` by brute force on a 1-d u-grid.
    fn grid_conjugate_1d(l: &dyn Lagrangian, x: &[f64], q: f64) -> f64 {
        let radius = 2.0 * l.convexity_modulus() * q.abs() + 1.0;
        let n = (2.0 * radius / 1e-3).ceil() as i64;
        (0..=n)
            .map(|k| {
                let u = -radius + k as f64 * 1e-3;
                q * u - l.eval(x, &[u])
            })
            .fold(f64::NEG_INFINITY, f64::max)
    }

    #[test]
    fn action_of_rest_pair_is_rest_cost() {
        let l = well_1d().clone();
        let l = StandardLagrangian::new(1, 1, l.potential.clone().shifted(0.3), 0.0, 1.0).unwrap();
        let sys = ControlSystem::euclidean(1);
        let grid = TimeGrid::new(0.0, 1.0, 10).unwrap();
        let mut pair = sys.integrate(&[0.0], &vec![vec![0.0]; 10], grid).unwrap();
        let a = action_of(&l, &mut pair).unwrap();
        assert_abs_diff_eq!(a, 0.3, epsilon = 1e-14);
        assert_eq!(pair.action, Some(a));
    }

    #[test]
    fn action_of_unit_motion_matches_quadrature() {
        // ∫₀¹ s²/(1+s²) ds = 1 − π/4.
        let l = well_1d();
        let sys = ControlSystem::euclidean(1);
        let grid = TimeGrid::new(0.0, 1.0, 1000).unwrap();
        let mut pair = sys.integrate(&[0.0], &vec![vec![1.0]; 1000], grid).unwrap();
        let a = action_of(&l, &mut pair).unwrap();
        assert_abs_diff_eq!(a, 0.5 + 1.0 - PI / 4.0, epsilon = 2e-3);

        let coarse = TimeGrid::new(0.0, 1.0, 500).unwrap();
        let mut p2 = sys.integrate(&[0.0], &vec![vec![1.0]; 500], coarse).unwrap();
        let a2 = action_of(&l, &mut p2).unwrap();
        // Left-endpoint rule: the change is first order in dt.
        assert!((a - a2).abs() <= 1.0 * coarse.dt());
    }

    #[test]
    fn quadratic_conjugate_is_closed_form() {
        let l = well_1d();
        let x = [0.7];
        let q = ReducedMomentum::new(vec![1.3]).unwrap();
        let v = legendre(&l, &x, &q).unwrap();
        assert_abs_diff_eq!(v.value, 0.5 * 1.69 - 0.49 / 1.49, epsilon = 1e-14);
        assert_eq!(v.argmax, vec![1.3]);
    }

    #[test]
    fn zero_momentum_maximizer_is_zero() {
        let l = StandardLagrangian::new(2, 2, well_1d_potential(), 0.7, 1.0).unwrap();
        let x = [0.4, -0.3];
        let v = legendre(&l, &x, &ReducedMomentum::new(vec![0.0, 0.0]).unwrap()).unwrap();
        assert!(norm(&v.argmax) < 1e-12);
        assert_abs_diff_eq!(v.value, -l.eval(&x, &[0.0, 0.0]), epsilon = 1e-14);
    }

    fn well_1d_potential() -> Potential {
        Potential::new(PotentialShape::SingleWell { scope: RadialScope::Full })
    }

    #[test]
    fn quartic_conjugate_matches_grid_oracle() {
        let l = StandardLagrangian::new(1, 1, well_1d_potential(), 0.5, 1.0).unwrap();
        for (x, q) in [(0.3, 0.8), (-1.2, -2.5), (0.0, 4.0)] {
            let v = legendre(&l, &[x], &ReducedMomentum::new(vec![q]).unwrap()).unwrap();
            assert_abs_diff_eq!(v.value, grid_conjugate_1d(&l, &[x], q), epsilon = 1e-6);
        }
    }

    #[test]
    fn hamiltonian_closed_forms() {
        let l = well_1d();
        let sys = ControlSystem::euclidean(1);
        let h = hamiltonian(&l, &sys, &[0.5], &[1.5]).unwrap();
        assert_abs_diff_eq!(h, 0.5 * 2.25 - 0.25 / 1.25, epsilon = 1e-14);

        let lh = StandardLagrangian::single_well(3, 2, RadialScope::Full);
        let hs = ControlSystem::heisenberg();
        let h = hamiltonian(&lh, &hs, &[0.0; 3], &[0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(h, -lh.eval(&[0.0; 3], &[0.0, 0.0]), epsilon = 1e-15);
    }

    #[test]
    fn fenchel_young_inequality() {
        let l = StandardLagrangian::new(2, 2, well_1d_potential(), 0.3, 1.0).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let x: Vec<f64> = (0..2).map(|_| rng.random_range(-2.0..2.0)).collect();
            let q: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let u: Vec<f64> = (0..2).map(|_| rng.random_range(-3.0..3.0)).collect();
            let lv = legendre_slice(&l, &x, &q).unwrap();
            assert!(dot(&q, &u) <= l.eval(&x, &u) + lv.value + 1e-8);
            let eq = dot(&q, &lv.argmax) - l.eval(&x, &lv.argmax) - lv.value;
            assert!(eq.abs() <= 1e-8);
        }
    }

    #[test]
    fn hamiltonian_is_convex_along_segments() {
        let l = StandardLagrangian::new(3, 2, well_1d_potential(), 0.4, 1.0).unwrap();
        let sys = ControlSystem::heisenberg();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..100 {
            let x: Vec<f64> = (0..3).map(|_| rng.random_range(-1.5..1.5)).collect();
            let p: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let r: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
            let mid: Vec<f64> = p.iter().zip(&r).map(|(a, b)| 0.5 * (a + b)).collect();
            let hm = hamiltonian(&l, &sys, &x, &mid).unwrap();
            let avg = 0.5 * (hamiltonian(&l, &sys, &x, &p).unwrap() + hamiltonian(&l, &sys, &x, &r).unwrap());
            assert!(hm <= avg + 1e-9);
        }
    }

    #[test]
    fn oracle_single_well_and_shift() {
        let l = well_1d();
        let (c, xs) = oracle_critical(&l, 2.0, 41);
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xs[0], 0.0, epsilon = 1e-9);
        let shifted = StandardLagrangian::new(1, 1, well_1d_potential().shifted(1.0), 0.0, 1.0).unwrap();
        let (c1, xs1) = oracle_critical(&shifted, 2.0, 41);
        assert_abs_diff_eq!(c1, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(xs1[0], 0.0, epsilon = 1e-9);
    }

    #[test]
    fn oracle_double_well_picks_lower_lexicographic() {
        let l = StandardLagrangian::double_well(1, 1);
        let (c, xs) = oracle_critical(&l, 2.0, 40);
        assert_abs_diff_eq!(c, 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(xs[0], -1.0, epsilon = 1e-6);
        assert_abs_diff_eq!(l.attractor().x_star[0], -1.0, epsilon = 1e-6);
    }

    #[test]
    fn standard_lagrangian_passes_diagnostics() {
        let l = well_1d();
        let rep = check_l1_l2_l3(&l, &ControlSystem::euclidean(1), 500, 3, 3.0, 3.0);
        assert!(!rep.l1_violation && !rep.l2_violation && !rep.l3_violation, "{rep:?}");
        assert!(rep.fitted_c_r.is_finite() && rep.fitted_c_r > 0.0);

        let lh = StandardLagrangian::single_well(3, 2, RadialScope::Full);
        let rep = check_l1_l2_l3(&lh, &ControlSystem::heisenberg(), 300, 4, 2.0, 2.0);
        assert!(!rep.l1_violation && !rep.l2_violation && !rep.l3_violation, "{rep:?}");
    }

    #[test]
    fn horizontal_well_fails_gap_condition() {
        let l = StandardLagrangian::single_well(3, 2, RadialScope::Horizontal);
        let rep = check_l1_l2_l3(&l, &ControlSystem::heisenberg(), 300, 4, 2.0, 2.0);
        assert!(rep.l3_violation);
    }

    /// `u³ + u²`, odd part breaks reversibility.
    struct Skewed(AttractorData);

    impl Lagrangian for Skewed {
        fn state_dim(&self) -> usize {
            1
        }
        fn control_dim(&self) -> usize {
            1
        }
        fn eval(&self, _x: &[f64], u: &[f64]) -> f64 {
            u[0].powi(3) + u[0].powi(2)
        }
        fn grad_x(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
            out[0] = 0.0;
        }
        fn grad_u(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
            out[0] = 3.0 * u[0] * u[0] + 2.0 * u[0];
        }
        fn hess_u(&self, _x: &[f64], u: &[f64]) -> DMatrix<f64> {
            DMatrix::from_element(1, 1, 6.0 * u[0] + 2.0)
        }
        fn convexity_modulus(&self) -> f64 {
            0.5
        }
        fn growth_c1(&self) -> f64 {
            1.0
        }
        fn attractor(&self) -> &AttractorData {
            &self.0
        }
    }

    #[test]
    fn non_reversible_lagrangian_is_flagged() {
        let l = Skewed(AttractorData { k_radius: 1.0, x_star: vec![0.0], gap: 0.0 });
        let rep = check_l1_l2_l3(&l, &ControlSystem::euclidean(1), 100, 1, 1.0, 1.0);
        assert!(rep.l1_violation);
    }

    #[test]
    fn unbounded_below_potential_is_flagged() {
        use crate::potential::Polynomial;
        let num = Polynomial { terms: vec![(-1.0, vec![2])] };
        let v = Potential::new(PotentialShape::Rational { num, den: Polynomial::constant(1.0, 1) });
        let l = StandardLagrangian::new(1, 1, v, 0.0, 1.0).unwrap();
        let rep = check_l1_l2_l3(&l, &ControlSystem::euclidean(1), 200, 2, 3.0, 1.0);
        assert!(rep.l3_violation);
    }

    #[test]
    fn newton_failure_surfaces_as_convexity_violation() {
        // Concave in u: the inner problem is unbounded.
        struct Concave(AttractorData);
        impl Lagrangian for Concave {
            fn state_dim(&self) -> usize {
                1
            }
            fn control_dim(&self) -> usize {
                1
            }
            fn eval(&self, _x: &[f64], u: &[f64]) -> f64 {
                -u[0] * u[0]
            }
            fn grad_x(&self, _x: &[f64], _u: &[f64], out: &mut [f64]) {
                out[0] = 0.0;
            }
            fn grad_u(&self, _x: &[f64], u: &[f64], out: &mut [f64]) {
                out[0] = -2.0 * u[0];
            }
            fn hess_u(&self, _x: &[f64], _u: &[f64]) -> DMatrix<f64> {
                DMatrix::from_element(1, 1, -2.0)
            }
            fn convexity_modulus(&self) -> f64 {
                1.0
            }
            fn growth_c1(&self) -> f64 {
                1.0
            }
            fn attractor(&self) -> &AttractorData {
                &self.0
            }
        }
        let l = Concave(AttractorData { k_radius: 1.0, x_star: vec![0.0], gap: 0.0 });
        let r = legendre_slice(&l, &[0.0], &[1.0]);
        assert!(matches!(r, Err(KamError::ConvexityViolation { .. })));
    }

    #[test]
    fn grad_u_matches_central_differences() {
        let l = StandardLagrangian::new(2, 2, well_1d_potential(), 0.8, 1.0).unwrap();
        let x = [0.1, 0.2];
        let u = [1.7, -0.4];
        let mut g = [0.0; 2];
        l.grad_u(&x, &u, &mut g);
        for i in 0..2 {
            let h = 1e-6 * (1.0 + norm(&u));
            let mut up = u;
            let mut um = u;
            up[i] += h;
            um[i] -= h;
            let fd = (l.eval(&x, &up) - l.eval(&x, &um)) / (2.0 * h);
            assert!((fd - g[i]).abs() <= 1e-5 * g[i].abs().max(1.0));
        }
    }
}
