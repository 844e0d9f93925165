//! Cone-constrained mean-variance investment and proportional reinsurance
//! over a compound-Poisson surplus.
//!
//! An insurer with wealth `X_t` collects premiums, pays a proportional share
//! `q_t` of each claim (the rest is ceded to a reinsurer at a dearer
//! loading), and invests amounts `pi_t` in risky assets restricted to a
//! closed convex cone. The goal is the mean-variance frontier: minimal
//! `Var[X_T]` subject to `E[X_T] = z`.
//!
//! The solution is assembled in layers, one module each:
//!
//! * [`model`] — market description: rates, drift/volatility tables
//!   (optionally switching with the running claim count), claim law,
//!   admissibility cone, premium loadings.
//! * [`optimizers`] — the two pointwise Hamiltonian minimizations: a cone-
//!   (and optionally ball-) constrained quadratic in the investment
//!   direction, and a convex one-dimensional problem in the retention.
//! * [`sre`] — backward Runge-Kutta integration of the pair of coupled
//!   scalar Riccati equations those minimizers drive, with certified
//!   positivity bounds.
//! * [`policy`] — the Lagrangian layer: efficient frontier, optimal
//!   multiplier, moving target `h(t)`, and the linear gap feedback controls.
//! * [`montecarlo`] — path simulation of the controlled surplus under two
//!   schemes and statistical validation of the frontier.
//! * [`cli`] — JSON run configuration and the `cramer-mv` binary's
//!   subcommands.
//!
//! The `examples/` directory exercises each capability end to end; start
//! with `closed_form_check`.

pub mod cli;
pub mod error;
pub mod model;
pub mod montecarlo;
pub mod optimizers;
pub mod policy;
pub mod sre;

pub use error::{Error, Result};
pub use model::{
    ClaimDistribution, CoefficientMode, CoefficientTable, ConvexCone, MarketModel, RateCurve,
};
pub use montecarlo::{
    estimate_terminal_stats, simulate_paths, validate_frontier, Scheme, SimConfig, Strategy,
};
pub use policy::{frontier_table, frontier_variance, zeta_hat, FeedbackPolicy, FrontierPoint};
pub use sre::{solve, solve_truncated, SreGrid, SreSolution};
