//! Low-rank optimal transport.
//!
//! Entropic OT by Sinkhorn scaling, low-rank couplings `P = Q Diag(1/g) R^T`
//! solved by mirror descent with Dykstra or IBP inner loops, factored costs,
//! and Gromov-Wasserstein solvers with quadratic-time energy evaluation.

// `!(x > 0.0)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cost;
pub mod costfact;
pub mod divergence;
pub mod error;
pub mod gw;
pub mod io;
pub mod linalg;
pub mod lot;
pub mod sinkhorn;
pub mod types;
pub mod variants;

pub use cost::CostOperator;
pub use divergence::{entropy, generalized_kl, kl_divergence, validate_coupling, MarginalReport};
pub use error::{Error, Result};
pub use lot::{lot_solve, LotConfig, LotSolution, StepSchedule};
pub use sinkhorn::{entropic_ot, round_to_polytope, sinkhorn, KernelOp, ScalingPair, SinkhornOptions};
pub use types::{assemble_coupling, DenseCoupling, FactoredCoupling, Histogram, SolverReport};
