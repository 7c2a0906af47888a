//! Occupation measures, closedness residuals and the closed-measure LP.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{KamError, Result};
use crate::lagrangian::{hamiltonian, Lagrangian};
use crate::simplex::{self, StandardForm};
use crate::systems::{norm, ControlSystem, TrajectoryControlPair};

/// State nodes on a regular grid over the bounding box of `B_R`, masked to
/// the ball, and control nodes on a regular grid over `[−U, U]^m`.
#[derive(Clone, Debug, Serialize)]
pub struct MeasureGrid {
    pub radius: f64,
    pub control_bound: f64,
    pub n_x: usize,
    pub n_u: usize,
    pub state_nodes: Vec<Vec<f64>>,
    pub control_nodes: Vec<Vec<f64>>,
    #[serde(skip)]
    box_to_state: Vec<Option<usize>>,
    dim: usize,
    controls: usize,
}

fn axis_value(i: usize, n: usize, r: f64) -> f64 {
    if 2 * i + 1 == n {
        0.0
    } else {
        -r + 2.0 * r * i as f64 / (n - 1) as f64
    }
}

fn tensor_points(d: usize, n: usize, r: f64) -> Vec<Vec<f64>> {
    (0..n.pow(d as u32))
        .map(|mut k| {
            (0..d)
                .map(|_| {
                    let i = k % n;
                    k /= n;
                    axis_value(i, n, r)
                })
                .collect()
        })
        .collect()
}

impl MeasureGrid {
    pub fn new(dim: usize, controls: usize, radius: f64, control_bound: f64, n_x: usize, n_u: usize) -> Result<Self> {
        if !(radius > 0.0) || !(control_bound > 0.0) || n_x < 2 || n_u < 2 || dim == 0 || controls == 0 {
            return Err(KamError::InvalidArgument("measure grid needs R, U > 0 and at least 2 nodes per axis".into()));
        }
        let mut state_nodes = Vec::new();
        let box_to_state = tensor_points(dim, n_x, radius)
            .into_iter()
            .map(|x| {
                (norm(&x) <= radius * (1.0 + 1e-12)).then(|| {
                    state_nodes.push(x);
                    state_nodes.len() - 1
                })
            })
            .collect();
        let control_nodes = tensor_points(controls, n_u, control_bound);
        Ok(Self { radius, control_bound, n_x, n_u, state_nodes, control_nodes, box_to_state, dim, controls })
    }

    /// Default control box `4·(1 + R)·ℓ₁`.
    pub fn default_control_bound(radius: f64, l1: f64) -> f64 {
        4.0 * (1.0 + radius) * l1
    }

    fn state_spacing(&self) -> f64 {
        2.0 * self.radius / (self.n_x - 1) as f64
    }

    /// Nearest masked state node; `None` outside `B_R`.
    pub fn nearest_state(&self, x: &[f64]) -> Option<usize> {
        if norm(x) > self.radius * (1.0 + 1e-12) {
            return None;
        }
        let h = self.state_spacing();
        let mut flat = 0;
        let mut stride = 1;
        for &xi in x {
            let i = ((xi + self.radius) / h).round().clamp(0.0, (self.n_x - 1) as f64) as usize;
            flat += i * stride;
            stride *= self.n_x;
        }
        self.box_to_state[flat].or_else(|| {
            // The rounded node fell outside the ball: scan.
            (0..self.state_nodes.len()).min_by(|&a, &b| {
                crate::systems::dist(&self.state_nodes[a], x).total_cmp(&crate::systems::dist(&self.state_nodes[b], x))
            })
        })
    }

    /// Nearest control node, clamping to the box.
    pub fn nearest_control(&self, u: &[f64]) -> usize {
        let h = 2.0 * self.control_bound / (self.n_u - 1) as f64;
        let mut flat = 0;
        let mut stride = 1;
        for &ui in u {
            let i = ((ui + self.control_bound) / h).round().clamp(0.0, (self.n_u - 1) as f64) as usize;
            flat += i * stride;
            stride *= self.n_u;
        }
        flat
    }

    /// Whether a state node sits in the outermost shell of cells.
    pub fn is_boundary_state(&self, s: usize) -> bool {
        norm(&self.state_nodes[s]) > self.radius - self.state_spacing() * (1.0 + 1e-9)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Atom {
    pub state: usize,
    pub control: usize,
    pub weight: f64,
}

/// A probability measure supported on grid nodes of state × control space.
#[derive(Clone, Debug, Serialize)]
pub struct DiscreteMeasure {
    pub grid: MeasureGrid,
    pub atoms: Vec<Atom>,
}

impl DiscreteMeasure {
    /// Builds from (state, control, weight) triples, merging duplicates and
    /// renormalizing the total mass to one.
    pub fn from_weights(grid: MeasureGrid, weights: impl IntoIterator<Item = (usize, usize, f64)>) -> Result<Self> {
        let mut merged: BTreeMap<(usize, usize), f64> = BTreeMap::new();
        for (s, c, w) in weights {
            if !(w >= 0.0) || s >= grid.state_nodes.len() || c >= grid.control_nodes.len() {
                return Err(KamError::InvalidArgument(format!("bad atom ({s}, {c}, {w})")));
            }
            if w > 0.0 {
                *merged.entry((s, c)).or_insert(0.0) += w;
            }
        }
        let total: f64 = merged.values().sum();
        if !(total > 0.0) {
            return Err(KamError::InvalidArgument("measure has no mass".into()));
        }
        let atoms = merged.into_iter().map(|((state, control), w)| Atom { state, control, weight: w / total }).collect();
        Ok(Self { grid, atoms })
    }

    pub fn total_mass(&self) -> f64 {
        self.atoms.iter().map(|a| a.weight).sum()
    }

    /// `∫ f(x, u) dμ`.
    pub fn integrate(&self, f: impl Fn(&[f64], &[f64]) -> f64) -> f64 {
        self.atoms
            .iter()
            .map(|a| a.weight * f(&self.grid.state_nodes[a.state], &self.grid.control_nodes[a.control]))
            .sum()
    }

    pub fn boundary_mass(&self) -> f64 {
        self.atoms.iter().filter(|a| self.grid.is_boundary_state(a.state)).map(|a| a.weight).sum()
    }

    /// Writes `x_1.., u_1.., weight` rows.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.grid.dim).map(|i| format!("x{i}")).collect();
        header.extend((1..=self.grid.controls).map(|i| format!("u{i}")));
        header.push("weight".into());
        wtr.write_record(&header)?;
        for a in &self.atoms {
            let row: Vec<String> = self.grid.state_nodes[a.state]
                .iter()
                .chain(&self.grid.control_nodes[a.control])
                .chain(std::iter::once(&a.weight))
                .map(|v| format!("{v:.12e}"))
                .collect();
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Time-averaged occupation measure of a pair, projected to nearest nodes.
pub fn occupation_measure(pair: &TrajectoryControlPair, grid: &MeasureGrid) -> Result<DiscreteMeasure> {
    let duration = pair.duration();
    if !(duration > 0.0) || pair.controls.is_empty() {
        return Err(KamError::InvalidArgument("occupation measure needs a pair of positive duration".into()));
    }
    let dt = pair.grid.dt();
    let mut weights = Vec::with_capacity(pair.controls.len());
    for (x, u) in pair.states.iter().zip(&pair.controls) {
        let s = grid.nearest_state(x).ok_or(KamError::SupportViolation { norm: norm(x), radius: grid.radius })?;
        weights.push((s, grid.nearest_control(u), dt / duration));
    }
    DiscreteMeasure::from_weights(grid.clone(), weights)
}

/// Test functions `φ_k` whose horizontal gradients define closedness.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TestFunctionBasis {
    /// `x^α` for `1 ≤ |α| ≤ degree`.
    Monomials { exponents: Vec<Vec<u32>> },
    /// Tensor hat functions centred at the nodes of a grid on `[−R, R]^d`.
    Hats { dim: usize, radius: f64, resolution: usize },
}

impl TestFunctionBasis {
    pub fn monomials(dim: usize, degree: u32) -> Self {
        let mut exponents = Vec::new();
        let mut alpha = vec![0u32; dim];
        fn rec(pos: usize, left: u32, alpha: &mut Vec<u32>, out: &mut Vec<Vec<u32>>) {
            if pos == alpha.len() {
                if alpha.iter().sum::<u32>() > 0 {
                    out.push(alpha.clone());
                }
                return;
            }
            for e in 0..=left {
                alpha[pos] = e;
                rec(pos + 1, left - e, alpha, out);
            }
            alpha[pos] = 0;
        }
        rec(0, degree, &mut alpha, &mut exponents);
        exponents.sort_by_key(|a| (a.iter().sum::<u32>(), std::cmp::Reverse(a.clone())));
        TestFunctionBasis::Monomials { exponents }
    }

    pub fn hats(dim: usize, radius: f64, resolution: usize) -> Self {
        TestFunctionBasis::Hats { dim, radius, resolution }
    }

    pub fn len(&self) -> usize {
        match self {
            TestFunctionBasis::Monomials { exponents } => exponents.len(),
            TestFunctionBasis::Hats { dim, resolution, .. } => resolution.pow(*dim as u32),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn hat_center(&self, k: usize) -> (Vec<f64>, f64) {
        let TestFunctionBasis::Hats { dim, radius, resolution } = *self else { unreachable!() };
        let h = 2.0 * radius / (resolution - 1) as f64;
        let mut k = k;
        let c = (0..dim)
            .map(|_| {
                let i = k % resolution;
                k /= resolution;
                -radius + h * i as f64
            })
            .collect();
        (c, h)
    }

    pub fn eval(&self, k: usize, x: &[f64]) -> f64 {
        match self {
            TestFunctionBasis::Monomials { exponents } => {
                exponents[k].iter().zip(x).map(|(&e, &xi)| xi.powi(e as i32)).product()
            }
            TestFunctionBasis::Hats { .. } => {
                let (c, h) = self.hat_center(k);
                c.iter().zip(x).map(|(ci, xi)| (1.0 - (xi - ci).abs() / h).max(0.0)).product()
            }
        }
    }

    pub fn gradient(&self, k: usize, x: &[f64], out: &mut [f64]) {
        match self {
            TestFunctionBasis::Monomials { exponents } => {
                let alpha = &exponents[k];
                for j in 0..x.len() {
                    out[j] = if alpha[j] == 0 {
                        0.0
                    } else {
                        alpha[j] as f64
                            * alpha
                                .iter()
                                .zip(x)
                                .enumerate()
                                .map(|(i, (&e, &xi))| xi.powi(if i == j { e as i32 - 1 } else { e as i32 }))
                                .product::<f64>()
                    };
                }
            }
            TestFunctionBasis::Hats { .. } => {
                let (c, h) = self.hat_center(k);
                let factors: Vec<f64> = c.iter().zip(x).map(|(ci, xi)| (1.0 - (xi - ci).abs() / h).max(0.0)).collect();
                for j in 0..x.len() {
                    let r = x[j] - c[j];
                    let slope = if r.abs() >= h || r == 0.0 { 0.0 } else { -r.signum() / h };
                    out[j] = slope * factors.iter().enumerate().filter(|(i, _)| *i != j).map(|(_, f)| f).product::<f64>();
                }
            }
        }
    }
}

/// Reduced gradients `F*(x)Dφ_k(x)` for every state node and basis element,
/// laid out as `[state][k][control]`.
fn reduced_gradients(grid: &MeasureGrid, sys: &ControlSystem, basis: &TestFunctionBasis) -> Vec<f64> {
    let (d, m, nk) = (sys.dim(), sys.controls(), basis.len());
    grid.state_nodes
        .par_iter()
        .flat_map_iter(|x| {
            let mut g = vec![0.0; d];
            let mut q = vec![0.0; m];
            let mut out = Vec::with_capacity(nk * m);
            for k in 0..nk {
                basis.gradient(k, x, &mut g);
                sys.reduce_momentum_into(x, &g, &mut q);
                out.extend_from_slice(&q);
            }
            out
        })
        .collect()
}

/// `max_k |∫⟨F*(x)Dφ_k(x), u⟩ dμ|` over `max_k sup_x |Dφ_k(x)|`, the sup
/// taken over the measure's state nodes.
pub fn closedness_residual(mu: &DiscreteMeasure, sys: &ControlSystem, basis: &TestFunctionBasis) -> Result<f64> {
    if basis.is_empty() {
        return Err(KamError::InvalidArgument("empty test-function basis".into()));
    }
    let d = sys.dim();
    let mut g = vec![0.0; d];
    let mut q = vec![0.0; sys.controls()];
    let mut numerator = 0.0f64;
    let mut denominator = 0.0f64;
    for k in 0..basis.len() {
        let mut acc = 0.0;
        for a in &mu.atoms {
            let x = &mu.grid.state_nodes[a.state];
            basis.gradient(k, x, &mut g);
            sys.reduce_momentum_into(x, &g, &mut q);
            acc += a.weight * crate::systems::dot(&q, &mu.grid.control_nodes[a.control]);
        }
        numerator = numerator.max(acc.abs());
        for x in &mu.grid.state_nodes {
            basis.gradient(k, x, &mut g);
            denominator = denominator.max(norm(&g));
        }
    }
    Ok(if denominator > 0.0 { numerator / denominator } else { 0.0 })
}

#[derive(Clone, Debug, Serialize)]
pub struct LpResult {
    pub value: f64,
    pub measure: DiscreteMeasure,
    pub iterations: usize,
    pub basis_size: usize,
    pub constraints: usize,
    pub columns: usize,
    /// Closedness residual of the optimal measure.
    pub residual: f64,
    pub boundary_mass: f64,
    /// Set when at least `1e-6` mass sits on boundary cells (R may be too small).
    pub radius_warning: bool,
}

impl LpResult {
    pub fn report_json(&self) -> serde_json::Value {
        serde_json::json!({
            "value": self.value,
            "iterations": self.iterations,
            "basis_size": self.basis_size,
            "constraints": self.constraints,
            "columns": self.columns,
            "closedness_residual": self.residual,
            "boundary_mass": self.boundary_mass,
            "radius_warning": self.radius_warning,
            "n_x": self.measure.grid.n_x,
            "n_u": self.measure.grid.n_u,
            "radius": self.measure.grid.radius,
            "control_bound": self.measure.grid.control_bound,
        })
    }
}

const LP_MAX_PIVOTS: usize = 200_000;

/// Minimizes `∫L dμ` over grid measures satisfying the closedness
/// constraints of `basis`.
pub fn lp_critical(l: &dyn Lagrangian, sys: &ControlSystem, grid: &MeasureGrid, basis: &TestFunctionBasis) -> Result<LpResult> {
    if grid.dim != sys.dim() || grid.controls != sys.controls() || l.state_dim() != sys.dim() {
        return Err(KamError::InvalidArgument("measure grid, system and Lagrangian dimensions disagree".into()));
    }
    let (m, nk) = (sys.controls(), basis.len());
    let (ns, nc) = (grid.state_nodes.len(), grid.control_nodes.len());
    let cols = ns * nc;
    let rows = 1 + nk;
    let red = reduced_gradients(grid, sys, basis);

    let cost: Vec<f64> = (0..cols)
        .into_par_iter()
        .map(|j| l.eval(&grid.state_nodes[j / nc], &grid.control_nodes[j % nc]))
        .collect();
    let mut a = vec![0.0; rows * cols];
    a[..cols].iter_mut().for_each(|v| *v = 1.0);
    a[cols..].par_chunks_mut(cols).enumerate().for_each(|(k, row)| {
        for (j, v) in row.iter_mut().enumerate() {
            let (s, c) = (j / nc, j % nc);
            let q = &red[(s * nk + k) * m..(s * nk + k + 1) * m];
            *v = crate::systems::dot(q, &grid.control_nodes[c]);
        }
        let scale = row.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        if scale > 0.0 {
            row.iter_mut().for_each(|v| *v /= scale);
        }
    });
    let mut b = vec![0.0; rows];
    b[0] = 1.0;
    let sol = simplex::solve(&StandardForm { rows, cols, a, b, c: cost }, LP_MAX_PIVOTS).map_err(|e| match e {
        KamError::LinearProgram(msg) => KamError::LinearProgram(format!("closed-measure LP: {msg}")),
        other => other,
    })?;
    let measure =
        DiscreteMeasure::from_weights(grid.clone(), sol.x.iter().enumerate().filter(|(_, w)| **w > 0.0).map(|(j, w)| (j / nc, j % nc, *w)))?;
    let residual = closedness_residual(&measure, sys, basis)?;
    let boundary_mass = measure.boundary_mass();
    Ok(LpResult {
        value: measure.integrate(|x, u| l.eval(x, u)),
        iterations: sol.iterations,
        basis_size: sol.basis.len(),
        constraints: rows,
        columns: cols,
        residual,
        boundary_mass,
        radius_warning: boundary_mass >= 1e-6,
        measure,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct DualBound {
    /// Bound at the supplied parameters.
    pub initial: f64,
    /// Best bound found by the coordinate search.
    pub best: f64,
    pub params: Vec<f64>,
    pub evaluations: usize,
}

/// `−max_x H(x, Dψ(x))` over a sample grid of `B_R`, for `ψ = Σ θ_k x^{α_k}`
/// over the monomials of degree ≤ 4; then a coordinate search on `θ`.
pub fn dual_bound(
    l: &dyn Lagrangian,
    sys: &ControlSystem,
    psi_params: &[f64],
    radius: f64,
    samples_per_axis: usize,
    max_evaluations: usize,
) -> Result<DualBound> {
    let basis = TestFunctionBasis::monomials(sys.dim(), 4);
    if psi_params.len() != basis.len() {
        return Err(KamError::InvalidArgument(format!(
            "expected {} polynomial coefficients, got {}",
            basis.len(),
            psi_params.len()
        )));
    }
    let samples: Vec<Vec<f64>> =
        tensor_points(sys.dim(), samples_per_axis.max(2), radius).into_iter().filter(|x| norm(x) <= radius * (1.0 + 1e-12)).collect();
    let grads: Vec<Vec<Vec<f64>>> = samples
        .iter()
        .map(|x| {
            (0..basis.len())
                .map(|k| {
                    let mut g = vec![0.0; sys.dim()];
                    basis.gradient(k, x, &mut g);
                    g
                })
                .collect()
        })
        .collect();
    let bound = |theta: &[f64]| -> Result<f64> {
        let hs: Vec<f64> = samples
            .par_iter()
            .zip(&grads)
            .map(|(x, gk)| {
                let mut p = vec![0.0; x.len()];
                for (g, t) in gk.iter().zip(theta) {
                    for (pi, gi) in p.iter_mut().zip(g) {
                        *pi += t * gi;
                    }
                }
                hamiltonian(l, sys, x, &p)
            })
            .collect::<Result<_>>()?;
        Ok(-hs.into_iter().fold(f64::NEG_INFINITY, f64::max))
    };
    let initial = bound(psi_params)?;
    let mut best = initial;
    let mut params = psi_params.to_vec();
    let mut evaluations = 1;
    let mut step = 0.1;
    'search: while step >= 1e-3 {
        let mut improved = false;
        for k in 0..params.len() {
            for sign in [1.0, -1.0] {
                if evaluations >= max_evaluations {
                    break 'search;
                }
                let mut trial = params.clone();
                trial[k] += sign * step;
                let value = bound(&trial)?;
                evaluations += 1;
                if value > best + 1e-14 {
                    best = value;
                    params = trial;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    Ok(DualBound { initial, best, params, evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lagrangian::StandardLagrangian;
    use crate::potential::RadialScope;
    use crate::systems::TimeGrid;

    #[test]
    fn monomial_basis_sizes() {
        assert_eq!(TestFunctionBasis::monomials(1, 4).len(), 4);
        assert_eq!(TestFunctionBasis::monomials(3, 4).len(), 34);
        assert_eq!(TestFunctionBasis::monomials(2, 2).len(), 5);
    }

    #[test]
    fn basis_gradients_match_finite_differences() {
        let x = [0.3, -0.7, 0.45];
        for basis in [TestFunctionBasis::monomials(3, 4), TestFunctionBasis::hats(3, 1.0, 5)] {
            let mut g = [0.0; 3];
            for k in 0..basis.len() {
                basis.gradient(k, &x, &mut g);
                for j in 0..3 {
                    let mut xp = x;
                    let mut xm = x;
                    xp[j] += 1e-6;
                    xm[j] -= 1e-6;
                    let fd = (basis.eval(k, &xp) - basis.eval(k, &xm)) / 2e-6;
                    assert!((fd - g[j]).abs() < 1e-6, "{k} {j}: {fd} vs {}", g[j]);
                }
            }
        }
    }

    #[test]
    fn masked_grid_and_projection() {
        let grid = MeasureGrid::new(2, 2, 1.0, 1.0, 5, 3).unwrap();
        // Corners of the box are outside the unit ball.
        assert_eq!(grid.state_nodes.len(), 13);
        assert_eq!(grid.state_nodes[grid.nearest_state(&[0.01, -0.02]).unwrap()], vec![0.0, 0.0]);
        let s = grid.nearest_state(&[0.69, 0.69]).unwrap();
        assert!(norm(&grid.state_nodes[s]) <= 1.0);
        assert!(grid.nearest_state(&[1.0, 1.0]).is_none());
        assert_eq!(grid.control_nodes[grid.nearest_control(&[7.0, -0.2])], vec![1.0, 0.0]);
    }

    #[test]
    fn rest_pair_gives_dirac() {
        let sys = ControlSystem::euclidean(1);
        let pair = sys.integrate(&[0.0], &vec![vec![0.0]; 10], TimeGrid::new(0.0, 1.0, 10).unwrap()).unwrap();
        let grid = MeasureGrid::new(1, 1, 2.0, 2.0, 21, 21).unwrap();
        let mu = occupation_measure(&pair, &grid).unwrap();
        assert_eq!(mu.atoms.len(), 1);
        assert_eq!(mu.atoms[0].weight, 1.0);
        assert_eq!(grid.state_nodes[mu.atoms[0].state], vec![0.0]);
        assert_eq!(closedness_residual(&mu, &sys, &TestFunctionBasis::monomials(1, 4)).unwrap(), 0.0);
    }

    #[test]
    fn two_halves_get_equal_weight() {
        let sys = ControlSystem::euclidean(1);
        let grid = MeasureGrid::new(1, 1, 2.0, 2.0, 21, 21).unwrap();
        let mut pair = sys.integrate(&[0.0], &[vec![0.0], vec![0.0]], TimeGrid::new(0.0, 2.0, 2).unwrap()).unwrap();
        pair.states[1] = vec![1.0];
        let mu = occupation_measure(&pair, &grid).unwrap();
        assert_eq!(mu.atoms.iter().map(|a| a.weight).collect::<Vec<_>>(), vec![0.5, 0.5]);
    }

    #[test]
    fn leaving_the_ball_is_a_support_violation() {
        let sys = ControlSystem::euclidean(1);
        let pair = sys.integrate(&[0.0], &vec![vec![1.0]; 10], TimeGrid::new(0.0, 3.0, 10).unwrap()).unwrap();
        let grid = MeasureGrid::new(1, 1, 2.0, 2.0, 21, 21).unwrap();
        assert!(matches!(occupation_measure(&pair, &grid), Err(KamError::SupportViolation { .. })));
    }

    #[test]
    fn closed_loop_has_small_residual() {
        let sys = ControlSystem::euclidean(2);
        let n = 400;
        let w = std::f64::consts::TAU;
        let controls: Vec<Vec<f64>> = (0..n)
            .map(|k| {
                let t = (k as f64 + 0.5) / n as f64;
                vec![-0.5 * w * (w * t).sin(), 0.5 * w * (w * t).cos()]
            })
            .collect();
        let pair = sys.integrate(&[0.5, 0.0], &controls, TimeGrid::new(0.0, 1.0, n).unwrap()).unwrap();
        assert!(crate::systems::dist(pair.endpoint(), &[0.5, 0.0]) < 1e-6);
        let grid = MeasureGrid::new(2, 2, 1.0, 4.0, 81, 81).unwrap();
        let mu = occupation_measure(&pair, &grid).unwrap();
        let r = closedness_residual(&mu, &sys, &TestFunctionBasis::monomials(2, 2)).unwrap();
        assert!(r < 0.05, "{r}");
    }

    #[test]
    fn lp_with_no_constraints_takes_grid_minimum() {
        let l = StandardLagrangian::single_well(1, 1, RadialScope::Full).shifted(0.25);
        let sys = ControlSystem::euclidean(1);
        let grid = MeasureGrid::new(1, 1, 2.0, 2.0, 21, 11).unwrap();
        let empty = TestFunctionBasis::Monomials { exponents: vec![vec![0]] };
        let res = lp_critical(&l, &sys, &grid, &empty).unwrap();
        let lr = &l;
        let brute = grid
            .state_nodes
            .iter()
            .flat_map(|x| grid.control_nodes.iter().map(move |u| lr.eval(x, u)))
            .fold(f64::INFINITY, f64::min);
        assert!((res.value - brute).abs() < 1e-12);
    }

    #[test]
    fn lp_euclidean_1d_is_near_zero() {
        let l = StandardLagrangian::single_well(1, 1, RadialScope::Full);
        let sys = ControlSystem::euclidean(1);
        let grid = MeasureGrid::new(1, 1, 2.0, 2.0, 41, 21).unwrap();
        let res = lp_critical(&l, &sys, &grid, &TestFunctionBasis::monomials(1, 4)).unwrap();
        assert!(res.value.abs() <= 5e-2, "{}", res.value);
        assert!(res.residual <= 1e-8);
        assert!((res.measure.total_mass() - 1.0).abs() < 1e-12);
        let near = res.measure.integrate(|x, u| if x[0].abs() <= 0.2 && u[0].abs() <= 0.2 { 1.0 } else { 0.0 });
        assert!(near > 0.99);
    }

    #[test]
    fn dual_bound_at_zero_is_min_potential() {
        let l = StandardLagrangian::single_well(1, 1, RadialScope::Full).shifted(0.3);
        let sys = ControlSystem::euclidean(1);
        let db = dual_bound(&l, &sys, &[0.0; 4], 2.0, 201, 50).unwrap();
        assert!((db.initial - 0.3).abs() < 1e-12);
        assert!(db.best >= db.initial);
        assert!(db.best <= 0.3 + 5e-2);
    }
}
