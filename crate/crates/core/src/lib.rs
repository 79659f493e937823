//! Differentially private release of demand vectors for parametric
//! optimization problems.
//!
//! The pipeline obfuscates a sensitive demand vector with the Laplace
//! mechanism, then post-processes the noisy vector through a bilevel
//! optimization model so that the released vector is feasible for the
//! underlying DC optimal power flow problem and its optimal cost stays
//! within a configured band around a target value.
//!
//! Modules:
//! - [`domain`]: shared value types (demand vectors, privacy parameters).
//! - [`dp`]: seeded Laplace mechanism and adjacency checking.
//! - [`solver`]: dense primal-dual interior-point solver for the convex
//!   normal form used by all subproblems.
//! - [`dcopf`]: DC optimal power flow network model and the builders for
//!   the follower, relaxation and push-up programs.
//! - [`bilevel`]: the bisection engine that repairs the noisy vector.
//! - [`cli_io`]: MATPOWER-subset parsing, CSV emission and the command
//!   surface used by the `dp-bilevel` binary.

pub mod bilevel;
pub mod cli_io;
pub mod dcopf;
pub mod domain;
pub mod dp;
pub mod solver;
