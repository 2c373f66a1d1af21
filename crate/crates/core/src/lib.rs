//! Optimum allocation for stratified random sampling with several
//! characteristics, treating the estimated variances as random variables.
//!
//! The crate covers four layers:
//!
//! - [`estimators`]: stratum weights, the unbiased variance estimators, their
//!   expectations and the dispersion of the variance estimator vector.
//! - [`scalarizers`]: deterministic equivalents that turn the stochastic
//!   multi-objective problem into a single scalar objective.
//! - [`allocator`]: a box- and budget-constrained continuous solver followed by
//!   integer repair.
//! - [`asymptotics`]: a Monte Carlo lab for the normal approximation of the
//!   sample-variance vector.
//!
//! ```
//! use stratalloc::{datasets, estimators, Constraint};
//!
//! let design = datasets::humboldt(Constraint::TotalSize { n: 1000 }).unwrap();
//! let ba = [10.0, 94.0, 144.0, 136.0, 191.0, 113.0, 81.0, 109.0, 122.0];
//! let v = estimators::vhat(&design, &ba).unwrap();
//! assert_eq!(format!("{:.3}", v[0]), "5.591");
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod allocator;
pub mod asymptotics;
pub mod datasets;
pub mod design;
pub mod error;
pub mod estimators;
pub mod io;
pub mod normal;
pub mod scalarizers;

pub use allocator::{solve, solve_objective, SolutionReport, SolverConfig};
pub use design::{Allocation, Constraint, MomentPolicy, MomentSource, StratumSummary, SurveyDesign};
pub use error::{Error, Result};
pub use estimators::VarCoefficient;
pub use scalarizers::{ModelSpec, Objective, Sense};


#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/estimators.md")]
    struct Estimators;
    #[doc = include_str!("../../../book/src/scalarizers.md")]
    struct Scalarizers;
    #[doc = include_str!("../../../book/src/allocator.md")]
    struct Allocator;
    #[doc = include_str!("../../../book/src/asymptotics.md")]
    struct Asymptotics;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
