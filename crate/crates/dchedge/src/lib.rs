//! Solver library for two-stage nonconvex nonsmooth stochastic conic
//! programs, posed and solved as stochastic variational inequalities.
//!
//! The outer loop smooths the nonsmooth penalty terms through their Moreau
//! envelopes, linearizes the concave part of the DC decomposition at the
//! current iterate, and adds a proximal term, yielding a convex, maximal
//! monotone surrogate VI. Each surrogate is solved by progressive hedging
//! over the scenarios: every scenario block is a small regularized VI handled
//! by a semismooth Newton method (with an extragradient fallback), and
//! nonanticipativity of the first-stage blocks is enforced through zero-mean
//! multipliers. The smoothing parameter follows a geometric schedule; the run
//! stops once it reaches its floor and the objective stabilizes.
//!
//! The bundled application is a sparse two-stage extension of mean-variance
//! portfolio selection: a cardinality penalty on the first-stage weights and
//! a per-scenario ball coupling the recourse portfolio to the first-stage
//! one. Four variants (with/without the cardinality term and the coupling)
//! share one synthetic-market generator and one metric report.
//!
//! Start with the `examples/` directory: each example exercises one layer
//! (prox and envelopes, cone projections, a single scenario VI, one hedging
//! solve, the full outer loop, data synthesis, the benchmark grid). The
//! `dchedge` binary wraps the same entry points behind `solve`, `bench`,
//! `synth`, and `verify` subcommands.

pub mod brute;
pub mod cones;
pub mod error;
pub mod harness;
pub mod markowitz;
pub mod model;
pub mod penalty;
pub mod phm;
pub mod report;
pub mod scenario;
pub mod sdc;
pub mod synthetic;

pub use error::{Error, Result};
