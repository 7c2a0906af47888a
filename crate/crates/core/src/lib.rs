//! Numerical weak KAM theory for sub-Riemannian optimal control problems
//! `γ̇ = F(γ) u` with Lagrangians that are Tonelli in the control.
//!
//! The crate computes the critical (ergodic) constant three independent
//! ways (time averages of the finite-horizon value, Abel means of the
//! discounted value, and a linear program over F-closed measures), the
//! Peierls barrier, the projected Aubry set, critical solutions of the
//! stationary Hamilton-Jacobi equation, and calibrated curves.

// `!(x > 0.0)` is how NaN inputs get rejected alongside nonpositive ones.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod action;
pub mod config;
pub mod error;
pub mod grid;
pub mod hjsolver;
pub mod instances;
pub mod lagrangian;
pub mod measures;
pub mod optim;
pub mod potential;
pub mod run;
pub mod simplex;
pub mod systems;
pub mod weakkam;

pub use error::{KamError, Result};
pub use lagrangian::{Lagrangian, StandardLagrangian};
pub use systems::{ControlSystem, TimeGrid, TrajectoryControlPair};
