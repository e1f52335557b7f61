//! Model predictive control for the kinematic mobile robot built on trim
//! primitives.
//!
//! The robot `ẋ = (u₁ cos x₃, u₁ sin x₃, u₂)` is equivariant under the group
//! SE(2)×S¹ acting by rotation plus translation. Every constant control
//! therefore generates a trim: a trajectory that is the orbit of a
//! one-parameter subgroup `exp(ξ t)`. This crate uses that structure to
//!
//! * evaluate trajectories in closed form ([`symmetry`], [`robot`], [`trim`]),
//! * solve the finite-horizon optimal control problem over sequences of trims
//!   ([`ocp`]),
//! * run the receding-horizon loop ([`mpc`]),
//! * check the optimality and stability statements numerically
//!   ([`verification`], [`collocation`]).

pub mod collocation;
pub mod costs;
pub mod error;
pub mod io;
pub mod mpc;
pub mod ocp;
mod optim;
pub mod robot;
pub mod scenarios;
pub mod suites;
pub mod symmetry;
pub mod trim;
pub mod verification;

pub use costs::{ControlSet, Horizon, NormKind, ProblemSpec, StageCost, StateBox, TrackingCost};
pub use error::{Error, Result};
pub use mpc::{MpcConfig, MpcTrace, StepRecord, Termination};
pub use ocp::{GridControlSet, OcpSolution, SolveOptions};
pub use robot::{ControlValue, PiecewiseControl};
pub use symmetry::{AlgebraElement, GroupElement, State};
pub use trim::{TrimLibrary, TrimPlan, TrimPrimitive};
