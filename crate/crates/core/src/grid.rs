//! Scalar functions on regular box grids with multilinear interpolation.

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};

/// A regular grid on `center ± half_widths` with `resolution[i]` nodes per axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridBox {
    pub center: Vec<f64>,
    pub half_widths: Vec<f64>,
    pub resolution: Vec<usize>,
}

impl GridBox {
    pub fn new(center: Vec<f64>, half_widths: Vec<f64>, resolution: Vec<usize>) -> Result<Self> {
        let d = center.len();
        if d == 0 || d > MAX_DIM || half_widths.len() != d || resolution.len() != d {
            return Err(KamError::InvalidArgument(format!("grid box dimensions disagree or exceed {MAX_DIM}")));
        }
        if half_widths.iter().any(|h| !(*h > 0.0)) || resolution.iter().any(|&r| r < 3) {
            return Err(KamError::InvalidArgument(format!(
                "grid box needs positive half widths and >= 3 nodes per axis, got {half_widths:?} / {resolution:?}"
            )));
        }
        Ok(Self { center, half_widths, resolution })
    }

    /// Cube `[−r, r]^d` with `n` nodes per axis.
    pub fn cube(d: usize, r: f64, n: usize) -> Result<Self> {
        Self::new(vec![0.0; d], vec![r; d], vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn len(&self) -> usize {
        self.resolution.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn spacing(&self, axis: usize) -> f64 {
        2.0 * self.half_widths[axis] / (self.resolution[axis] - 1) as f64
    }

    pub fn min_spacing(&self) -> f64 {
        (0..self.dim()).map(|a| self.spacing(a)).fold(f64::INFINITY, f64::min)
    }

    pub fn lower(&self, axis: usize) -> f64 {
        self.center[axis] - self.half_widths[axis]
    }

    /// Multi-index of a flat node index; axis 0 varies fastest.
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        self.resolution
            .iter()
            .map(|&n| {
                let i = idx % n;
                idx /= n;
                i
            })
            .collect()
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        let mut idx = 0;
        let mut stride = 1;
        for (&i, &n) in multi.iter().zip(&self.resolution) {
            idx += i * stride;
            stride *= n;
        }
        idx
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        self.node_into(idx, &mut x);
        x
    }

    pub fn node_into(&self, mut idx: usize, out: &mut [f64]) {
        for (a, o) in out.iter_mut().enumerate() {
            let n = self.resolution[a];
            *o = self.lower(a) + self.spacing(a) * (idx % n) as f64;
            idx /= n;
        }
    }

    /// Whether node `idx` is at least `layers` cells away from every face.
    pub fn node_is_interior(&self, idx: usize, layers: usize) -> bool {
        self.multi_index(idx).iter().zip(&self.resolution).all(|(&i, &n)| i >= layers && i + layers < n)
    }

    /// Whether `x` is at least `cells` cells inside every face.
    pub fn contains_interior(&self, x: &[f64], cells: f64) -> bool {
        (0..self.dim()).all(|a| {
            let margin = cells * self.spacing(a);
            x[a] >= self.lower(a) + margin - 1e-12 && x[a] <= self.center[a] + self.half_widths[a] - margin + 1e-12
        })
    }

    /// Lower corner of the cell containing the clamped `x`, with the local
    /// coordinates written to `frac`.
    #[inline]
    pub fn locate(&self, x: &[f64], frac: &mut [f64]) -> usize {
        let mut origin = 0;
        let mut stride = 1;
        for a in 0..self.dim() {
            let n = self.resolution[a];
            let t = ((x[a] - self.lower(a)) / self.spacing(a)).clamp(0.0, (n - 1) as f64);
            let i = (t.floor() as usize).min(n - 2);
            frac[a] = t - i as f64;
            origin += i * stride;
            stride *= n;
        }
        origin
    }

    /// Nearest node, clamped to the box.
    pub fn nearest_node(&self, x: &[f64]) -> usize {
        let multi: Vec<usize> = (0..self.dim())
            .map(|a| {
                let s = ((x[a] - self.lower(a)) / self.spacing(a)).round();
                s.clamp(0.0, (self.resolution[a] - 1) as f64) as usize
            })
            .collect();
        self.flat_index(&multi)
    }
}

/// Values of a scalar function at the nodes of a [`GridBox`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridFunction {
    pub grid: GridBox,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn zeros(grid: GridBox) -> Self {
        let n = grid.len();
        Self { grid, values: vec![0.0; n] }
    }

    pub fn from_fn(grid: GridBox, f: impl Fn(&[f64]) -> f64) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.node(i))).collect();
        Self { grid, values }
    }

    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.grid.len() {
            return Err(KamError::InvalidArgument("grid function length does not match its grid".into()));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(KamError::InvalidArgument("grid function has non-finite values".into()));
        }
        Ok(())
    }

    /// Multilinear interpolation with clamp-to-edge extension.
    #[inline]
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let mut frac = [0.0f64; MAX_DIM];
        let origin = self.grid.locate(x, &mut frac);
        self.interpolate_located(origin, &frac[..self.grid.dim()])
    }

    /// Interpolates inside the cell found by [`GridBox::locate`].
    #[inline]
    pub fn interpolate_located(&self, origin: usize, frac: &[f64]) -> f64 {
        let g = &self.grid;
        let d = frac.len();
        let mut stride = [0usize; MAX_DIM];
        let mut s = 1;
        for (st, n) in stride.iter_mut().zip(&g.resolution).take(d) {
            *st = s;
            s *= n;
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = origin;
            for a in 0..d {
                if corner >> a & 1 == 1 {
                    w *= frac[a];
                    idx += stride[a];
                } else {
                    w *= 1.0 - frac[a];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        acc
    }

    /// Central-difference gradient at a node; one-sided on the faces.
    pub fn node_gradient(&self, idx: usize, out: &mut [f64]) {
        let g = &self.grid;
        let multi = g.multi_index(idx);
        let mut stride = 1;
        for a in 0..g.dim() {
            let n = g.resolution[a];
            let h = g.spacing(a);
            let i = multi[a];
            out[a] = if i == 0 {
                (self.values[idx + stride] - self.values[idx]) / h
            } else if i + 1 == n {
                (self.values[idx] - self.values[idx - stride]) / h
            } else {
                (self.values[idx + stride] - self.values[idx - stride]) / (2.0 * h)
            };
            stride *= n;
        }
    }

    pub fn sup_distance(&self, other: &GridFunction) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
    }

    pub fn header_json(&self) -> serde_json::Value {
        serde_json::json!({
            "center": self.grid.center,
            "half_widths": self.grid.half_widths,
            "resolution": self.grid.resolution,
        })
    }

    /// Writes `x_1.., value` rows, one per node.
    pub fn write_csv<W: std::io::Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let d = self.grid.dim();
        let mut header: Vec<String> = (1..=d).map(|i| format!("x{i}")).collect();
        header.push("value".into());
        wtr.write_record(&header)?;
        let mut x = vec![0.0; d];
        for (i, v) in self.values.iter().enumerate() {
            self.grid.node_into(i, &mut x);
            let mut row: Vec<String> = x.iter().map(|c| format!("{c:.12e}")).collect();
            row.push(format!("{v:.12e}"));
            wtr.write_record(&row)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

pub(crate) const MAX_DIM: usize = 6;
