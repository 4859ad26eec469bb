//! Fixed-point iterations for averaged operators: the classical relaxed
//! Krasnosel'skii-Mann (KM) scheme and SuperMann, which accelerates KM with
//! quasi-Newton directions while keeping its global convergence through a
//! separating-halfspace safeguard.
//!
//! ```
//! use supermann::directions::BroydenRestarted;
//! use supermann::engine::{supermann_solve, SolverConfig, Status};
//! use supermann::problems::build_cones_example;
//!
//! let p = build_cones_example().unwrap();
//! let mut dirs = BroydenRestarted::new(20, 0.2).unwrap();
//! let cfg = SolverConfig { tol_rel: 1e-10, ..SolverConfig::default() };
//! let res = supermann_solve(&p.operator, &p.x0, &mut dirs, &cfg, None).unwrap();
//! assert_eq!(res.summary.status, Status::Converged);
//! ```

pub mod directions;
pub mod engine;
pub mod error;
pub mod gkm;
pub mod operators;
pub mod problems;
pub mod space;

pub use error::{Error, Result};
pub use operators::AveragedOperator;
pub use space::{Metric, Vector};
