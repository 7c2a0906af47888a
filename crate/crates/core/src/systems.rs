//! Control-affine systems `γ̇ = F(γ) u` and their trajectories.
//!
//! Every built-in system (and every system that can be described in a run
//! config) has vector fields that are affine in the state,
//! `f_i(x) = A_i x + b_i`. That keeps evaluation allocation-free and gives the
//! state Jacobian of `x ↦ F(x) u` in closed form, `Σ u_i A_i`.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{KamError, Result};

/// States whose norm exceeds this are treated as a blow-up.
pub const BLOW_UP_NORM: f64 = 1e6;

/// Relative singular-value threshold used for the rank test.
pub const RANK_THRESHOLD: f64 = 1e-10;

#[derive(Clone, Debug, Serialize)]
pub struct ControlSystem {
    name: String,
    dim: usize,
    controls: usize,
    /// `A_i`, row-major `d × d`, one per control direction.
    linear: Vec<Vec<f64>>,
    /// `b_i`, one per control direction.
    offset: Vec<Vec<f64>>,
    /// Claimed constant `c_f` in `|f_i(x)| ≤ c_f (1 + |x|)`.
    pub growth_constant: f64,
    /// Claimed full rank of `F(x)` everywhere.
    pub rank_ok_everywhere: bool,
    /// Instance metadata: no nonzero singular minimizers.
    pub satisfies_s: bool,
    pub experimental: bool,
}

impl ControlSystem {
    /// Builds a system from affine fields `f_i(x) = A_i x + b_i`.
    ///
    /// `linear[i]` is `A_i` given as `d` rows of length `d`.
    pub fn affine(name: &str, linear: Vec<Vec<Vec<f64>>>, offset: Vec<Vec<f64>>) -> Result<Self> {
        let controls = offset.len();
        if controls == 0 || linear.len() != controls {
            return Err(KamError::InvalidSystem(format!(
                "{name}: need the same positive number of A_i and b_i ({} vs {controls})",
                linear.len()
            )));
        }
        let dim = offset[0].len();
        if dim == 0 || controls > dim {
            return Err(KamError::InvalidSystem(format!(
                "{name}: need 0 < m <= d, got d = {dim}, m = {controls}"
            )));
        }
        let mut flat = Vec::with_capacity(controls);
        for (i, (a, b)) in linear.iter().zip(&offset).enumerate() {
            if b.len() != dim || a.len() != dim || a.iter().any(|row| row.len() != dim) {
                return Err(KamError::InvalidSystem(format!(
                    "{name}: field {i} does not have dimension {dim}"
                )));
            }
            let row_major: Vec<f64> = a.iter().flatten().copied().collect();
            if row_major.iter().chain(b).any(|v| !v.is_finite()) {
                return Err(KamError::InvalidSystem(format!("{name}: field {i} has non-finite coefficients")));
            }
            flat.push(row_major);
        }
        let growth_constant = flat
            .iter()
            .zip(&offset)
            .map(|(a, b)| {
                let op = DMatrix::from_row_slice(dim, dim, a).norm();
                op.max(norm(b))
            })
            .fold(0.0_f64, f64::max)
            .max(f64::MIN_POSITIVE);
        Ok(Self {
            name: name.to_string(),
            dim,
            controls,
            linear: flat,
            offset,
            growth_constant,
            rank_ok_everywhere: false,
            satisfies_s: false,
            experimental: false,
        })
    }

    /// `F = I` on `R^d`.
    pub fn euclidean(d: usize) -> Self {
        let linear = vec![vec![vec![0.0; d]; d]; d];
        let offset = (0..d).map(|i| unit(d, i)).collect();
        let mut sys = Self::affine(&format!("euclidean-{d}d"), linear, offset).expect("euclidean fields are valid");
        sys.growth_constant = 1.0;
        sys.rank_ok_everywhere = true;
        sys.satisfies_s = true;
        sys
    }

    /// First Heisenberg group: `f₁ = (1, 0, −y/2)`, `f₂ = (0, 1, x/2)`.
    pub fn heisenberg() -> Self {
        let mut a1 = vec![vec![0.0; 3]; 3];
        a1[2][1] = -0.5;
        let mut a2 = vec![vec![0.0; 3]; 3];
        a2[2][0] = 0.5;
        let mut sys = Self::affine("heisenberg", vec![a1, a2], vec![unit(3, 0), unit(3, 1)])
            .expect("heisenberg fields are valid");
        sys.growth_constant = 1.0;
        sys.rank_ok_everywhere = true;
        sys.satisfies_s = true;
        sys
    }

    /// Grushin plane: `f₁ = (1, 0)`, `f₂ = (0, x)`. Loses rank on `x = 0`.
    pub fn grushin() -> Self {
        let a1 = vec![vec![0.0; 2]; 2];
        let mut a2 = vec![vec![0.0; 2]; 2];
        a2[1][0] = 1.0;
        let mut sys =
            Self::affine("grushin", vec![a1, a2], vec![unit(2, 0), vec![0.0, 0.0]]).expect("grushin fields are valid");
        sys.growth_constant = 1.0;
        sys.rank_ok_everywhere = false;
        sys.satisfies_s = true;
        sys.experimental = true;
        sys
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// State dimension `d`.
    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Control dimension `m`.
    pub fn controls(&self) -> usize {
        self.controls
    }

    /// Writes `F(x)` row-major (`d` rows, `m` columns) into `out`.
    #[inline]
    pub fn fields_into(&self, x: &[f64], out: &mut [f64]) {
        let (d, m) = (self.dim, self.controls);
        for i in 0..m {
            let a = &self.linear[i];
            let b = &self.offset[i];
            for r in 0..d {
                let row = &a[r * d..(r + 1) * d];
                let mut acc = b[r];
                for (ar, xr) in row.iter().zip(x) {
                    acc += ar * xr;
                }
                out[r * m + i] = acc;
            }
        }
    }

    pub fn eval_fields(&self, x: &[f64]) -> Result<DMatrix<f64>> {
        if x.len() != self.dim || x.iter().any(|v| !v.is_finite()) {
            return Err(KamError::InvalidSystem(format!("{}: bad evaluation point {x:?}", self.name)));
        }
        let mut buf = vec![0.0; self.dim * self.controls];
        self.fields_into(x, &mut buf);
        if buf.iter().any(|v| !v.is_finite()) {
            return Err(KamError::InvalidSystem(format!("{}: non-finite F({x:?})", self.name)));
        }
        Ok(DMatrix::from_row_slice(self.dim, self.controls, &buf))
    }

    /// `out = F(x) u`.
    #[inline]
    pub fn velocity_into(&self, x: &[f64], u: &[f64], out: &mut [f64]) {
        let d = self.dim;
        out.iter_mut().for_each(|o| *o = 0.0);
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let a = &self.linear[i];
            let b = &self.offset[i];
            for r in 0..d {
                let row = &a[r * d..(r + 1) * d];
                let mut acc = b[r];
                for (ar, xr) in row.iter().zip(x) {
                    acc += ar * xr;
                }
                out[r] += ui * acc;
            }
        }
    }

    /// `out = F*(x) p`, the horizontal part of a covector.
    #[inline]
    pub fn reduce_momentum_into(&self, x: &[f64], p: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, o) in out.iter_mut().enumerate() {
            let a = &self.linear[i];
            let b = &self.offset[i];
            let mut acc = 0.0;
            for r in 0..d {
                let row = &a[r * d..(r + 1) * d];
                let mut f = b[r];
                for (ar, xr) in row.iter().zip(x) {
                    f += ar * xr;
                }
                acc += f * p[r];
            }
            *o = acc;
        }
    }

    /// `out += (∂/∂x [F(x) u])ᵀ w = Σ u_i A_iᵀ w`.
    #[inline]
    fn add_state_vjp(&self, u: &[f64], w: &[f64], out: &mut [f64]) {
        let d = self.dim;
        for (i, &ui) in u.iter().enumerate() {
            if ui == 0.0 {
                continue;
            }
            let a = &self.linear[i];
            for r in 0..d {
                let wr = ui * w[r];
                if wr == 0.0 {
                    continue;
                }
                for c in 0..d {
                    out[c] += a[r * d + c] * wr;
                }
            }
        }
    }

    /// One classical fourth-order step with the control frozen. The stage
    /// points are written into `stages` (`4 · d` entries) for the adjoint pass.
    pub fn rk4_step(&self, x: &[f64], u: &[f64], h: f64, out: &mut [f64], stages: &mut [f64]) {
        let d = self.dim;
        let mut k = [0.0; 4 * MAX_STACK_DIM];
        let k = if d <= MAX_STACK_DIM { &mut k[..4 * d] } else { &mut vec![0.0; 4 * d][..] };
        let (k1, rest) = k.split_at_mut(d);
        let (k2, rest) = rest.split_at_mut(d);
        let (k3, k4) = rest.split_at_mut(d);

        stages[..d].copy_from_slice(x);
        self.velocity_into(x, u, k1);
        for j in 0..d {
            stages[d + j] = x[j] + 0.5 * h * k1[j];
        }
        self.velocity_into(&stages[d..2 * d], u, k2);
        for j in 0..d {
            stages[2 * d + j] = x[j] + 0.5 * h * k2[j];
        }
        self.velocity_into(&stages[2 * d..3 * d], u, k3);
        for j in 0..d {
            stages[3 * d + j] = x[j] + h * k3[j];
        }
        self.velocity_into(&stages[3 * d..4 * d], u, k4);
        for j in 0..d {
            out[j] = x[j] + h / 6.0 * (k1[j] + 2.0 * k2[j] + 2.0 * k3[j] + k4[j]);
        }
    }

    /// Reverse-mode derivative of [`Self::rk4_step`]. Given the adjoint `lam`
    /// of the step output, accumulates the adjoint of the input state into
    /// `adj_x` and of the control into `adj_u`. `scratch` needs
    /// [`Self::vjp_scratch_len`] entries.
    #[allow(clippy::too_many_arguments)]
    pub fn rk4_step_vjp(
        &self,
        u: &[f64],
        h: f64,
        stages: &[f64],
        lam: &[f64],
        adj_x: &mut [f64],
        adj_u: &mut [f64],
        scratch: &mut [f64],
    ) {
        let d = self.dim;
        let m = self.controls;
        let (a_k, rest) = scratch.split_at_mut(4 * d);
        let (adj_y, rest) = rest.split_at_mut(d);
        let (a_cur, fbuf) = rest.split_at_mut(d);
        let fbuf = &mut fbuf[..d * m];
        for j in 0..d {
            a_k[j] = h / 6.0 * lam[j];
            a_k[d + j] = h / 3.0 * lam[j];
            a_k[2 * d + j] = h / 3.0 * lam[j];
            a_k[3 * d + j] = h / 6.0 * lam[j];
            adj_x[j] += lam[j];
        }
        // Stages in reverse: k_s = F(y_s) u, y_s = x + c_s h k_{s-1}.
        let coef = [0.0, 0.5 * h, 0.5 * h, h];
        for s in (0..4).rev() {
            let y = &stages[s * d..(s + 1) * d];
            a_cur.copy_from_slice(&a_k[s * d..(s + 1) * d]);
            adj_y.iter_mut().for_each(|v| *v = 0.0);
            self.add_state_vjp(u, a_cur, adj_y);
            self.fields_into(y, fbuf);
            for i in 0..m {
                let mut acc = 0.0;
                for r in 0..d {
                    acc += fbuf[r * m + i] * a_cur[r];
                }
                adj_u[i] += acc;
            }
            for j in 0..d {
                adj_x[j] += adj_y[j];
                if s > 0 {
                    a_k[(s - 1) * d + j] += coef[s] * adj_y[j];
                }
            }
        }
    }

    pub fn vjp_scratch_len(&self) -> usize {
        6 * self.dim + self.dim * self.controls
    }

    /// Integrates piecewise-constant controls on `grid` from `x0`.
    pub fn integrate(&self, x0: &[f64], controls: &[Vec<f64>], grid: TimeGrid) -> Result<TrajectoryControlPair> {
        if controls.len() != grid.n_steps {
            return Err(KamError::InvalidArgument(format!(
                "{} controls for {} steps",
                controls.len(),
                grid.n_steps
            )));
        }
        if x0.len() != self.dim || x0.iter().any(|v| !v.is_finite()) {
            return Err(KamError::InvalidArgument(format!("bad initial state {x0:?}")));
        }
        if controls.iter().any(|u| u.len() != self.controls || u.iter().any(|v| !v.is_finite())) {
            return Err(KamError::InvalidArgument("controls must be finite vectors of length m".into()));
        }
        let h = grid.dt();
        let mut states = Vec::with_capacity(grid.n_steps + 1);
        states.push(x0.to_vec());
        let mut stages = vec![0.0; 4 * self.dim];
        for (k, u) in controls.iter().enumerate() {
            let mut next = vec![0.0; self.dim];
            self.rk4_step(&states[k], u, h, &mut next, &mut stages);
            let n = norm(&next);
            if !(n <= BLOW_UP_NORM) {
                return Err(KamError::BlowUp { step: k + 1, norm: n });
            }
            states.push(next);
        }
        Ok(TrajectoryControlPair { grid, states, controls: controls.to_vec(), action: None })
    }

    /// Samples `(F1)` and `(F2)` over the box `[−r, r]^d`. The first sample is
    /// always the origin.
    pub fn check_f1_f2(&self, sample_box_radius: f64, n_samples: usize, seed: u64) -> FieldReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut report = FieldReport {
            samples: n_samples.max(1),
            max_growth_ratio: 0.0,
            min_singular_value: f64::INFINITY,
            min_relative_singular_value: f64::INFINITY,
            worst_rank_point: vec![0.0; self.dim],
            growth_violation: false,
            rank_violation: false,
        };
        let mut buf = vec![0.0; self.dim * self.controls];
        for s in 0..report.samples {
            let x: Vec<f64> = if s == 0 {
                vec![0.0; self.dim]
            } else {
                (0..self.dim).map(|_| rng.random_range(-sample_box_radius..=sample_box_radius)).collect()
            };
            self.fields_into(&x, &mut buf);
            let f = DMatrix::from_row_slice(self.dim, self.controls, &buf);
            let scale = 1.0 + norm(&x);
            for col in f.column_iter() {
                report.max_growth_ratio = report.max_growth_ratio.max(col.norm() / scale);
            }
            let sv = f.singular_values();
            let smin = sv.min();
            let smax = sv.max();
            let rel = if smax > 0.0 { smin / smax } else { 0.0 };
            report.min_singular_value = report.min_singular_value.min(smin);
            if rel < report.min_relative_singular_value {
                report.min_relative_singular_value = rel;
                report.worst_rank_point = x;
            }
        }
        report.growth_violation = report.max_growth_ratio > self.growth_constant * (1.0 + 1e-12);
        report.rank_violation = report.min_relative_singular_value <= RANK_THRESHOLD;
        report
    }
}

const MAX_STACK_DIM: usize = 8;

#[derive(Clone, Debug, Serialize)]
pub struct FieldReport {
    pub samples: usize,
    /// `max |f_i(x)| / (1 + |x|)` over the samples.
    pub max_growth_ratio: f64,
    pub min_singular_value: f64,
    pub min_relative_singular_value: f64,
    pub worst_rank_point: Vec<f64>,
    pub growth_violation: bool,
    pub rank_violation: bool,
}

/// Uniform grid on `[t0, t1]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct TimeGrid {
    pub t0: f64,
    pub t1: f64,
    pub n_steps: usize,
}

impl TimeGrid {
    pub fn new(t0: f64, t1: f64, n_steps: usize) -> Result<Self> {
        if !(t1 > t0) || n_steps == 0 || !t0.is_finite() || !t1.is_finite() {
            return Err(KamError::InvalidArgument(format!("bad time grid [{t0}, {t1}] with {n_steps} steps")));
        }
        Ok(Self { t0, t1, n_steps })
    }

    pub fn dt(&self) -> f64 {
        (self.t1 - self.t0) / self.n_steps as f64
    }

    pub fn duration(&self) -> f64 {
        self.t1 - self.t0
    }

    pub fn time(&self, k: usize) -> f64 {
        self.t0 + k as f64 * self.dt()
    }

    pub fn nodes(&self) -> usize {
        self.n_steps + 1
    }
}

/// A discretized trajectory with its piecewise-constant control.
#[derive(Clone, Debug, Serialize)]
pub struct TrajectoryControlPair {
    pub grid: TimeGrid,
    /// `n_steps + 1` states.
    pub states: Vec<Vec<f64>>,
    /// `n_steps` controls, `controls[k]` acts on `[t_k, t_{k+1})`.
    pub controls: Vec<Vec<f64>>,
    pub action: Option<f64>,
}

impl TrajectoryControlPair {
    /// A pair of zero duration sitting at `x`. It has no steps.
    pub fn empty_at(x: &[f64]) -> Self {
        Self {
            grid: TimeGrid { t0: 0.0, t1: 0.0, n_steps: 0 },
            states: vec![x.to_vec()],
            controls: Vec::new(),
            action: Some(0.0),
        }
    }

    pub fn duration(&self) -> f64 {
        self.grid.t1 - self.grid.t0
    }

    pub fn endpoint(&self) -> &[f64] {
        self.states.last().expect("a pair has at least one state")
    }

    /// `Σ |u_k|² dt`.
    pub fn energy(&self) -> f64 {
        if self.grid.n_steps == 0 {
            return 0.0;
        }
        let dt = self.grid.dt();
        self.controls.iter().map(|u| dot(u, u) * dt).sum()
    }

    /// Largest per-step defect against the integrator.
    pub fn integration_defect(&self, sys: &ControlSystem) -> f64 {
        if self.grid.n_steps == 0 {
            return 0.0;
        }
        let h = self.grid.dt();
        let mut next = vec![0.0; sys.dim()];
        let mut stages = vec![0.0; 4 * sys.dim()];
        self.controls
            .iter()
            .enumerate()
            .map(|(k, u)| {
                sys.rk4_step(&self.states[k], u, h, &mut next, &mut stages);
                dist(&next, &self.states[k + 1])
            })
            .fold(0.0, f64::max)
    }

    /// Writes `t, x_1.., u_1..` rows; the final node repeats the last control.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.states[0].len();
        let m = self.controls.first().map_or(0, Vec::len);
        let mut header = vec!["t".to_string()];
        header.extend((1..=d).map(|i| format!("x{i}")));
        header.extend((1..=m).map(|i| format!("u{i}")));
        wtr.write_record(&header)?;
        for (k, x) in self.states.iter().enumerate() {
            let u = self.controls.get(k).or(self.controls.last());
            let mut row = vec![format!("{:.12e}", self.grid.time(k))];
            row.extend(x.iter().map(|v| format!("{v:.12e}")));
            if let Some(u) = u {
                row.extend(u.iter().map(|v| format!("{v:.12e}")));
            }
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) fn unit(d: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; d];
    e[i] = 1.0;
    e
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[inline]
pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn euclidean_fields_are_identity() {
        let sys = ControlSystem::euclidean(1);
        let f = sys.eval_fields(&[3.7]).unwrap();
        assert_eq!(f[(0, 0)], 1.0);
    }

    #[test]
    fn heisenberg_fields_by_hand() {
        let sys = ControlSystem::heisenberg();
        let f = sys.eval_fields(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!(f.column(0).as_slice(), &[1.0, 0.0, 0.0]);
        assert_eq!(f.column(1).as_slice(), &[0.0, 1.0, 0.0]);
        let f = sys.eval_fields(&[2.0, 4.0, 0.0]).unwrap();
        assert_eq!(f.column(0).as_slice(), &[1.0, 0.0, -2.0]);
        assert_eq!(f.column(1).as_slice(), &[0.0, 1.0, 1.0]);
    }

    #[test]
    fn non_finite_point_is_rejected() {
        let sys = ControlSystem::heisenberg();
        assert!(matches!(sys.eval_fields(&[f64::NAN, 0.0, 0.0]), Err(KamError::InvalidSystem(_))));
    }

    #[test]
    fn malformed_affine_fields_are_rejected() {
        let r = ControlSystem::affine("bad", vec![vec![vec![0.0; 2]; 2]], vec![vec![1.0, 0.0, 0.0]]);
        assert!(r.is_err());
        let r = ControlSystem::affine("wide", vec![vec![vec![0.0]]; 2], vec![vec![1.0], vec![0.0]]);
        assert!(r.is_err());
    }

    #[test]
    fn euclidean_unit_control_moves_one() {
        let sys = ControlSystem::euclidean(1);
        let grid = TimeGrid::new(0.0, 1.0, 100).unwrap();
        let pair = sys.integrate(&[0.0], &vec![vec![1.0]; 100], grid).unwrap();
        assert_abs_diff_eq!(pair.endpoint()[0], 1.0, epsilon = 1e-10);
    }

    #[test]
    fn heisenberg_straight_line_stays_flat() {
        let sys = ControlSystem::heisenberg();
        let grid = TimeGrid::new(0.0, 1.0, 50).unwrap();
        let pair = sys.integrate(&[0.0; 3], &vec![vec![1.0, 0.0]; 50], grid).unwrap();
        let y = pair.endpoint();
        assert_abs_diff_eq!(y[0], 1.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y[1], 0.0, epsilon = 1e-9);
        assert_abs_diff_eq!(y[2], 0.0, epsilon = 1e-9);
        assert!(pair.integration_defect(&sys) <= 1e-9);
    }

    #[test]
    fn zero_control_fixes_points() {
        for sys in [ControlSystem::euclidean(2), ControlSystem::heisenberg(), ControlSystem::grushin()] {
            let x0: Vec<f64> = (0..sys.dim()).map(|i| 0.3 * i as f64 - 0.7).collect();
            let grid = TimeGrid::new(0.0, 2.0, 17).unwrap();
            let pair = sys.integrate(&x0, &vec![vec![0.0; sys.controls()]; 17], grid).unwrap();
            for s in &pair.states {
                assert_eq!(s, &x0);
            }
        }
    }

    #[test]
    fn blow_up_is_reported() {
        let sys = ControlSystem::euclidean(1);
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        let err = sys.integrate(&[0.0], &vec![vec![1e7]; 4], grid).unwrap_err();
        assert!(matches!(err, KamError::BlowUp { step: 1, .. }));
    }

    #[test]
    fn mismatched_controls_are_rejected() {
        let sys = ControlSystem::euclidean(1);
        let grid = TimeGrid::new(0.0, 1.0, 4).unwrap();
        assert!(sys.integrate(&[0.0], &vec![vec![1.0]; 3], grid).is_err());
    }

    #[test]
    fn heisenberg_constant_control_is_integrated_exactly() {
        // With u ≡ (1, 1) the vertical rate is constant, so every stage of the
        // classical method is exact and there is no error to halve.
        let sys = ControlSystem::heisenberg();
        let x0 = [0.3, -0.2, 0.1];
        let exact = [1.3, 0.8, 0.1 + 0.5 * (0.3 + 0.2)];
        for n in [4, 8] {
            let grid = TimeGrid::new(0.0, 1.0, n).unwrap();
            let pair = sys.integrate(&x0, &vec![vec![1.0, 1.0]; n], grid).unwrap();
            assert!(dist(pair.endpoint(), &exact) < 1e-12);
        }
    }

    #[test]
    fn rk4_order_on_rotating_field() {
        // ẋ = A x with a rotation generator: the classical method has
        // error ratio ≈ 16 under step halving.
        let a = vec![vec![0.0, -1.0], vec![1.0, 0.0]];
        let sys = ControlSystem::affine("rot", vec![a], vec![vec![0.0, 0.0]]).unwrap();
        let exact = [(2.0f64).cos(), (2.0f64).sin()];
        let err = |n: usize| {
            let grid = TimeGrid::new(0.0, 2.0, n).unwrap();
            let p = sys.integrate(&[1.0, 0.0], &vec![vec![1.0]; n], grid).unwrap();
            dist(p.endpoint(), &exact)
        };
        let ratio = err(10) / err(20);
        assert!((ratio - 16.0).abs() < 1.5, "ratio {ratio}");
    }

    #[test]
    fn heisenberg_time_reversal_returns() {
        let sys = ControlSystem::heisenberg();
        let n = 40;
        let grid = TimeGrid::new(0.0, 1.3, n).unwrap();
        let controls: Vec<Vec<f64>> =
            (0..n).map(|k| vec![(k as f64 * 0.3).sin(), (k as f64 * 0.17).cos() - 0.4]).collect();
        let x0 = [0.2, -0.1, 0.4];
        let fwd = sys.integrate(&x0, &controls, grid).unwrap();
        let back: Vec<Vec<f64>> = controls.iter().rev().map(|u| u.iter().map(|v| -v).collect()).collect();
        let bwd = sys.integrate(fwd.endpoint(), &back, grid).unwrap();
        assert!(dist(bwd.endpoint(), &x0) < 1e-8);
    }

    #[test]
    fn rk4_vjp_matches_finite_differences() {
        let sys = ControlSystem::heisenberg();
        let x = [0.3, -0.7, 0.2];
        let u = [0.9, -0.4];
        let h = 0.13;
        let w = [0.5, -1.1, 0.7];
        let f = |x: &[f64], u: &[f64]| {
            let mut out = [0.0; 3];
            let mut st = [0.0; 12];
            sys.rk4_step(x, u, h, &mut out, &mut st);
            dot(&out, &w)
        };
        let mut stages = [0.0; 12];
        let mut out = [0.0; 3];
        sys.rk4_step(&x, &u, h, &mut out, &mut stages);
        let mut gx = [0.0; 3];
        let mut gu = [0.0; 2];
        let mut scratch = vec![0.0; sys.vjp_scratch_len()];
        sys.rk4_step_vjp(&u, h, &stages, &w, &mut gx, &mut gu, &mut scratch);
        let eps = 1e-6;
        for j in 0..3 {
            let (mut xp, mut xm) = (x, x);
            xp[j] += eps;
            xm[j] -= eps;
            assert_abs_diff_eq!(gx[j], (f(&xp, &u) - f(&xm, &u)) / (2.0 * eps), epsilon = 1e-8);
        }
        for i in 0..2 {
            let (mut up, mut um) = (u, u);
            up[i] += eps;
            um[i] -= eps;
            assert_abs_diff_eq!(gu[i], (f(&x, &up) - f(&x, &um)) / (2.0 * eps), epsilon = 1e-8);
        }
    }

    #[test]
    fn euclidean_passes_f1_f2() {
        let r = ControlSystem::euclidean(2).check_f1_f2(3.0, 200, 1);
        assert!(r.max_growth_ratio <= 1.0);
        assert!(!r.growth_violation && !r.rank_violation);
    }

    #[test]
    fn heisenberg_min_singular_value_is_one() {
        let r = ControlSystem::heisenberg().check_f1_f2(2.0, 500, 7);
        assert!(r.min_singular_value >= 1.0 - 1e-12, "{}", r.min_singular_value);
        assert!(!r.rank_violation && !r.growth_violation);
    }

    #[test]
    fn grushin_rank_drop_is_flagged() {
        let r = ControlSystem::grushin().check_f1_f2(1.0, 50, 3);
        assert!(r.rank_violation);
        assert_eq!(r.worst_rank_point, vec![0.0, 0.0]);
    }
}
