//! Planar ballbot simulation lab: plant models, inner-loop stabilizer,
//! closed-loop identification, LQR and constrained MPC.

// `!(x > 0.0)` is used on purpose so that NaN fails validation, and the dense
// matrix kernels read more clearly with explicit indices.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod error;
pub mod numerics;
pub mod plant;
pub mod stabilizer;
pub mod excitation;
pub mod sysid;
pub mod qp;
pub mod control;
pub mod harness;

pub use error::{Error, Result};
