//! Named problem instances.

use serde::{Deserialize, Serialize};

use crate::error::{KamError, Result};
use crate::lagrangian::{Lagrangian, StandardLagrangian};
use crate::potential::{Polynomial, Potential, PotentialShape, RadialScope};
use crate::systems::ControlSystem;

pub const INSTANCE_NAMES: &[&str] =
    &["euclidean-1d", "euclidean-2d", "double-well", "heisenberg", "heisenberg-horizontal", "grushin", "custom"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    Zero,
    SingleWell,
    DoubleWell,
    Rational,
}

/// Overrides applied on top of an instance's default Lagrangian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InstanceParams {
    pub potential: Option<PotentialKind>,
    pub scope: Option<RadialScope>,
    pub quartic: f64,
    pub scale: f64,
    pub shift: f64,
    pub k_radius: Option<f64>,
    pub numerator: Option<Polynomial>,
    pub denominator: Option<Polynomial>,
}

impl Default for InstanceParams {
    fn default() -> Self {
        Self { potential: None, scope: None, quartic: 0.0, scale: 1.0, shift: 0.0, k_radius: None, numerator: None, denominator: None }
    }
}

/// Affine vector fields `f_i(x) = A_i x + b_i` for the `custom` instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub linear: Vec<Vec<Vec<f64>>>,
    pub offset: Vec<Vec<f64>>,
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub name: String,
    pub system: ControlSystem,
    pub lagrangian: StandardLagrangian,
    /// `min_x L(x, 0)` when the instance has a trusted oracle.
    pub oracle_c: Option<f64>,
}

impl Instance {
    pub fn state_dim(&self) -> usize {
        self.system.dim()
    }

    pub fn x_star(&self) -> &[f64] {
        &self.lagrangian.attractor().x_star
    }
}

fn base(name: &str, system: Option<&SystemSpec>) -> Result<(ControlSystem, PotentialKind, RadialScope, f64)> {
    Ok(match name {
        "euclidean-1d" => (ControlSystem::euclidean(1), PotentialKind::SingleWell, RadialScope::Full, 1.0),
        "euclidean-2d" => (ControlSystem::euclidean(2), PotentialKind::SingleWell, RadialScope::Full, 1.0),
        "double-well" => (ControlSystem::euclidean(1), PotentialKind::DoubleWell, RadialScope::Full, 2.0),
        "heisenberg" => (ControlSystem::heisenberg(), PotentialKind::SingleWell, RadialScope::Full, 1.0),
        "heisenberg-horizontal" => (ControlSystem::heisenberg(), PotentialKind::SingleWell, RadialScope::Horizontal, 1.0),
        "grushin" => (ControlSystem::grushin(), PotentialKind::SingleWell, RadialScope::Full, 1.0),
        "custom" => {
            let spec = system.ok_or_else(|| KamError::InvalidArgument("instance `custom` needs a [system] section".into()))?;
            (ControlSystem::affine("custom", spec.linear.clone(), spec.offset.clone())?, PotentialKind::SingleWell, RadialScope::Full, 1.0)
        }
        other => return Err(KamError::UnknownInstance(other.to_string())),
    })
}

/// Builds a named instance with overrides.
pub fn build(name: &str, params: &InstanceParams, system: Option<&SystemSpec>) -> Result<Instance> {
    let (sys, kind, scope, k_default) = base(name, system)?;
    let scope = params.scope.unwrap_or(scope);
    let shape = match params.potential.unwrap_or(kind) {
        PotentialKind::Zero => PotentialShape::Zero,
        PotentialKind::SingleWell => PotentialShape::SingleWell { scope },
        PotentialKind::DoubleWell => PotentialShape::DoubleWell { scope },
        PotentialKind::Rational => {
            let d = sys.dim();
            PotentialShape::Rational {
                num: params.numerator.clone().ok_or_else(|| KamError::InvalidArgument("rational potential needs a numerator".into()))?,
                den: params.denominator.clone().unwrap_or_else(|| Polynomial::constant(1.0, d)),
            }
        }
    };
    if !(params.scale > 0.0) || !params.shift.is_finite() {
        return Err(KamError::InvalidArgument("potential scale must be positive and shift finite".into()));
    }
    let potential = Potential::new(shape).scaled(params.scale).shifted(params.shift);
    let lagrangian = StandardLagrangian::new(sys.dim(), sys.controls(), potential, params.quartic, params.k_radius.unwrap_or(k_default))?;
    let oracle_c = (name != "custom").then(|| lagrangian.rest_cost(&lagrangian.attractor().x_star));
    Ok(Instance { name: name.to_string(), system: sys, lagrangian, oracle_c })
}

/// Builds a named instance with no overrides.
pub fn named(name: &str) -> Result<Instance> {
    build(name, &InstanceParams::default(), None)
}
