//! Bayesian Q-learning with assumed density filtering.
//!
//! Each tabular Q-value carries a Gaussian belief ([`belief`]). After a
//! transition, [`update::adfq_update`] moment-matches an analytic
//! approximation of the posterior. [`oracle`] evaluates the exact posterior
//! for testing, [`env`](mod@env) holds the benchmark MDPs and [`harness`] runs
//! experiments.

pub mod agent;
pub mod belief;
pub mod env;
pub mod error;
pub mod harness;
pub mod math;
pub mod oracle;
pub mod rng;
pub mod update;
