//! Simulation and analysis of perturbed Moreau sweeping processes
//! `-x'(t) in N_{C(t)}(x(t)) + f(t, x(t), eps)` with a prescribed moving
//! convex set `C(t)`.

pub mod analysis;
pub mod cli;
pub mod convex_sets;
pub mod dynamics;
pub mod error;
pub mod integrator;
pub mod linalg;
pub mod scenarios;

pub use convex_sets::{ConvexSet, MovingSet, Polytope};
pub use dynamics::Perturbation;
pub use error::{Result, SweepError};
pub use integrator::{catch_up, Scenario, Trajectory};
pub use scenarios::{build as build_scenario, ScenarioParams};
