//! Periodic and cyclic fractional stable motions.
//!
//! Canonical kernels, integrability checks, the cyclic flow algebra, a
//! quadrature oracle for characteristic exponents, the CFSM classifier and
//! a Monte Carlo path simulator.

// `!(x > 0.0)` is used on purpose: it also rejects NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod classifier;
pub mod error;
pub mod flow;
pub mod integrability;
pub mod kernel;
pub mod line;
pub mod oracle;
pub mod profile;
pub mod quadrature;
pub mod registry;
pub mod scalar;
pub mod simulator;

pub use error::{Error, Result};
pub use kernel::{
    embed_mixed_lfsm, eval_G, eval_K, eval_increment, AtomKernel, AtomSpec, KernelSpec, LfsmAtom, MixedLfsmSpec,
    StableParams,
};
pub use profile::Profile;
pub use scalar::{frac_part, int_part, signed_power, Side};
