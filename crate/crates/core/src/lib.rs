//! Simulation-and-verification laboratory for the nested Kingman coalescent and the
//! Smoluchowski coagulation-transport equation with depletion `x' = -psi(x)`.
//!
//! The crate is organised by solution route:
//!
//! * [`mechanism`]: the depletion function `psi(x) = c x^gamma` and its deterministic flow.
//! * [`coalescent`]: exact simulation of the nested Kingman coalescent.
//! * [`csbp`]: Feller-case CSBP transitions, branching extinction and the self-similar profile ODE.
//! * [`smoluchowski`]: finite-difference Laplace solver and the Yule-tree Monte Carlo.
//! * [`cpp`]: Brownian coalescent point process markings (McKean-Vlasov solutions).
//! * [`harness`]: configuration, statistics, artifact IO and the acceptance suite.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod coalescent;
pub mod cpp;
pub mod csbp;
pub mod error;
pub mod harness;
pub mod mechanism;
pub mod ode;
pub mod rng;
pub mod smoluchowski;
pub mod stats;

pub use error::{Error, Result};
pub use mechanism::{BranchingMechanism, FlowEvaluator, Mass};
