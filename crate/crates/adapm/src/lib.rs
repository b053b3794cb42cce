//! AdaPM: a memory-efficient AdamW variant that assigns a different
//! momentum design to each transformer block — none, full, or a debiased
//! low-rank factorization — plus the verification benches and the
//! optimizer-state memory accountant that back the design up.
//!
//! Crate layout:
//! - [`linalg`]: dense matrices, the warm-started low-rank factorizer, SVD.
//! - [`momentum`]: the three momentum estimators and second-moment tracking.
//! - [`partition`]: block-role classification and momentum-mode policies.
//! - [`optimizer`]: the full step loop, schedules, clipping, checkpoints.
//! - [`memory`]: analytic optimizer-state memory accounting.
//! - [`theory`]: power-law regression benches for the SGD/momentum risk
//!   rates and the exact bias-decay recursion of the corrected estimator.
//! - [`toy_model`]: a tiny transformer with analytic backprop for
//!   end-to-end optimizer runs.
//! - [`config`] / [`runner`]: declarative experiment specs and the CLI
//!   entry points that execute them.

pub mod config;
pub mod linalg;
pub mod memory;
pub mod momentum;
pub mod optimizer;
pub mod partition;
pub mod runner;
pub mod theory;
pub mod toy_model;
