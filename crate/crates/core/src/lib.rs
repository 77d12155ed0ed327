//! Relative entropy inverse reinforcement learning (RE-IRL).
//!
//! Recovers the weights `θ` of a linear reward `R(s) = θ·s` from observed
//! state/action trajectories without a transition model. The pieces:
//!
//! - [`trajdata`]: panel ingestion, quantile action discretization, trajectory
//!   assembly and feature counts.
//! - [`knnpolicy`]: rolling K-nearest-neighbor estimate of the behavior policy
//!   under a missing-value-robust Mahalanobis metric.
//! - [`estimator`]: Hoeffding tolerances, the importance-sampled partition
//!   function and gradient, and the ascent loop.
//! - [`oracle`]: brute-force enumeration of small finite MDPs, used to verify
//!   the estimator against exact quantities and to solve the primal problem.
//! - [`simgen`]: synthetic MDPs and exact draws from the exponential-family law.
//! - [`stattest`]: weighted t-tests across horizons and reward regressions.
//! - [`config`] and [`pipeline`]: the batch command line front end.

pub mod config;
pub mod estimator;
pub mod knnpolicy;
pub mod oracle;
pub mod pipeline;
pub mod simgen;
pub mod stattest;
pub mod trajdata;

mod numeric;

pub use estimator::{AscentConfig, AscentTrace, ThetaVector, ToleranceMode, ToleranceVector};
pub use knnpolicy::{PolicyEntry, PolicyTable};
pub use oracle::{EnumeratedSpace, FiniteMdp, PrimalSolution};
pub use trajdata::{ActionLabel, PanelDataset, StateVector, Trajectory, TrajectorySet};
