//! Estimators of the treatment effect in an external-control population for
//! single-arm trials with binary outcomes.
//!
//! The crate covers inverse-odds weighting, entropy balancing (MAIC),
//! G-computation, augmented (doubly robust) and weighted-regression
//! variants, bootstrap inference, an aggregate-data mode built on
//! copula-simulated pseudo-controls, and a simulation harness.
//!
//! ```
//! use dritc_core::inference::naive_delta_interval;
//!
//! let (est, ci) = naive_delta_interval(390, 500, 120, 300, 0.95).unwrap();
//! assert!((est.point - 1.671).abs() < 5e-4);
//! assert!((ci.lower - 1.358).abs() < 5e-4);
//! ```

pub mod data;
pub mod error;
pub mod estimators;
pub mod exec;
pub mod glm;
pub mod inference;
mod linalg;
pub mod normal;
pub mod pseudo;
pub mod rng;
pub mod simlab;
pub mod stats;
pub mod weighting;

pub use data::{
    AggregateTarget, BalanceMatrix, BalanceSpec, BalanceTerm, Dataset, Estimand, SubjectRecord,
};
pub use error::{Error, Result};
pub use estimators::{Battery, EstimateResult, EstimatorSpec, Method, MethodId};
pub use exec::Execution;
pub use glm::Link;
