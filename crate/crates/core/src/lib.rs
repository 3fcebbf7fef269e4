//! Yield estimation and yield maximization under Gaussian manufacturing
//! uncertainty.
//!
//! A design is a pair `(mean, d)`: the mean of normally distributed
//! uncertain parameters (truncated to a box) and a vector of purely
//! deterministic parameters. A design counts as acceptable when a scalar
//! quantity of interest stays below a threshold across a whole range grid,
//! and the yield is the probability of acceptance under the manufacturing
//! scatter. The crate provides:
//!
//! - Monte Carlo yield estimation with reproducible sample streams, plus a
//!   surrogate-assisted variant that only consults the true model where a
//!   Gaussian process is unsure ([`estimate`]).
//! - Closed-form yield derivatives with respect to the distribution mean,
//!   finite differences for the deterministic parameters, and the BFGS
//!   machinery to combine them into one Hessian ([`deriv`]).
//! - Optimization drivers: a globalized Newton ascent in non-adaptive,
//!   adaptive, and surrogate-assisted flavors, and a Nelder-Mead reference
//!   to compare them against ([`optimize`]).
//! - Built-in test problems: analytic oracles with known yields and a
//!   rectangular waveguide with dielectric inserts ([`qoi`]).
//!
//! Sample classification runs data-parallel by default; disable the
//! `parallel` feature for a strictly sequential build with identical
//! results.

pub mod benchmark;
pub mod deriv;
pub mod error;
pub mod estimate;
pub mod optimize;
pub(crate) mod parallel;
pub mod qoi;
pub mod uq;

pub use benchmark::waveguide_benchmark;
pub use error::{Error, Result};
pub use estimate::{
    estimate_yield_hybrid, estimate_yield_mc, sigma_mc, worst_case_sample_size, SampleSet,
    YieldEstimate,
};
pub use optimize::{
    compare_strategies, nelder_mead_reference, newton_mixed, run_strategy, IterationRow,
    OptimizerConfig, Problem, RunRecord, Strategy, StrategyOutcome, TerminalStatus,
};
pub use qoi::{DesignPoint, PerformanceSpec, QoiModel, RangeGrid};
pub use uq::{RngStream, UncertainSpec};
