//! Potentials `V(x)` used by the standard Lagrangian family.

use serde::{Deserialize, Serialize};

/// Which coordinates feed the radial variable `r`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RadialScope {
    /// `r = |x|²`.
    Full,
    /// `r = x₁² + x₂²`, the horizontal radius on a Carnot group.
    Horizontal,
}

impl RadialScope {
    fn coords(self, d: usize) -> usize {
        match self {
            RadialScope::Full => d,
            RadialScope::Horizontal => d.min(2),
        }
    }
}

/// A multivariate polynomial as a list of `(coefficient, exponents)` terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Polynomial {
    pub terms: Vec<(f64, Vec<u32>)>,
}

impl Polynomial {
    pub fn constant(c: f64, d: usize) -> Self {
        Self { terms: vec![(c, vec![0; d])] }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|(c, alpha)| c * alpha.iter().zip(x).map(|(&a, &xi)| xi.powi(a as i32)).product::<f64>())
            .sum()
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        for (c, alpha) in &self.terms {
            for j in 0..x.len() {
                if alpha[j] == 0 {
                    continue;
                }
                let mut term = c * alpha[j] as f64;
                for (k, (&a, &xk)) in alpha.iter().zip(x).enumerate() {
                    let e = if k == j { a - 1 } else { a };
                    term *= xk.powi(e as i32);
                }
                out[j] += term;
            }
        }
    }

    pub fn dim_ok(&self, d: usize) -> bool {
        self.terms.iter().all(|(c, a)| a.len() == d && c.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PotentialShape {
    Zero,
    /// `r / (1 + r)`.
    SingleWell { scope: RadialScope },
    /// `(r − 1)²`.
    DoubleWell { scope: RadialScope },
    /// `num(x) / den(x)`; `den` must stay positive where it is evaluated.
    Rational { num: Polynomial, den: Polynomial },
}

/// `V(x) = scale · shape(x) + shift`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Potential {
    pub shape: PotentialShape,
    pub scale: f64,
    pub shift: f64,
}

impl Potential {
    pub fn new(shape: PotentialShape) -> Self {
        Self { shape, scale: 1.0, shift: 0.0 }
    }

    pub fn shifted(mut self, shift: f64) -> Self {
        self.shift += shift;
        self
    }

    pub fn scaled(mut self, scale: f64) -> Self {
        self.scale *= scale;
        self
    }

    #[inline]
    pub fn eval(&self, x: &[f64]) -> f64 {
        let base = match &self.shape {
            PotentialShape::Zero => 0.0,
            PotentialShape::SingleWell { scope } => {
                let r = radial(x, *scope);
                r / (1.0 + r)
            }
            PotentialShape::DoubleWell { scope } => {
                let r = radial(x, *scope);
                (r - 1.0) * (r - 1.0)
            }
            PotentialShape::Rational { num, den } => num.eval(x) / den.eval(x),
        };
        self.scale * base + self.shift
    }

    pub fn grad(&self, x: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|o| *o = 0.0);
        let radial_grad = |scope: RadialScope, dg: f64, out: &mut [f64]| {
            for j in 0..scope.coords(x.len()) {
                out[j] = 2.0 * x[j] * dg;
            }
        };
        match &self.shape {
            PotentialShape::Zero => {}
            PotentialShape::SingleWell { scope } => {
                let r = radial(x, *scope);
                radial_grad(*scope, 1.0 / ((1.0 + r) * (1.0 + r)), out);
            }
            PotentialShape::DoubleWell { scope } => {
                let r = radial(x, *scope);
                radial_grad(*scope, 2.0 * (r - 1.0), out);
            }
            PotentialShape::Rational { num, den } => {
                let n = num.eval(x);
                let dn = den.eval(x);
                let mut gn = vec![0.0; x.len()];
                let mut gd = vec![0.0; x.len()];
                num.grad(x, &mut gn);
                den.grad(x, &mut gd);
                for j in 0..x.len() {
                    out[j] = (gn[j] * dn - n * gd[j]) / (dn * dn);
                }
            }
        }
        out.iter_mut().for_each(|o| *o *= self.scale);
    }
}

#[inline]
fn radial(x: &[f64], scope: RadialScope) -> f64 {
    x[..scope.coords(x.len())].iter().map(|v| v * v).sum()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_check(p: &Potential, x: &[f64]) {
        let mut g = vec![0.0; x.len()];
        p.grad(x, &mut g);
        for j in 0..x.len() {
            let h = 1e-6 * (1.0 + x[j].abs());
            let mut xp = x.to_vec();
            let mut xm = x.to_vec();
            xp[j] += h;
            xm[j] -= h;
            let fd = (p.eval(&xp) - p.eval(&xm)) / (2.0 * h);
            assert!((fd - g[j]).abs() <= 1e-6 * (1.0 + g[j].abs()), "{j}: {fd} vs {}", g[j]);
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = [0.4, -1.3, 0.7];
        for scope in [RadialScope::Full, RadialScope::Horizontal] {
            fd_check(&Potential::new(PotentialShape::SingleWell { scope }), &x);
            fd_check(&Potential::new(PotentialShape::DoubleWell { scope }).scaled(0.5).shifted(2.0), &x);
        }
        let num = Polynomial { terms: vec![(1.0, vec![2, 0, 0]), (0.5, vec![1, 1, 1])] };
        let den = Polynomial { terms: vec![(1.0, vec![0, 0, 0]), (1.0, vec![0, 2, 0])] };
        fd_check(&Potential::new(PotentialShape::Rational { num, den }), &x);
    }

    #[test]
    fn horizontal_scope_ignores_vertical() {
        let p = Potential::new(PotentialShape::SingleWell { scope: RadialScope::Horizontal });
        assert_eq!(p.eval(&[0.0, 0.0, 5.0]), 0.0);
        let p = Potential::new(PotentialShape::SingleWell { scope: RadialScope::Full });
        assert!((p.eval(&[0.0, 0.0, 1.0]) - 0.5).abs() < 1e-15);
    }
}
