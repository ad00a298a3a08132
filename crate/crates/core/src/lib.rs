//! Compositional trajectory generation from masked motion primitives.
//!
//! Trajectories are synthesized by placing a small library of learned,
//! variable-length atoms verbatim on the timeline. A binary placement matrix
//! records onsets, a legality energy scores how well a placement explains a
//! trajectory, and a flow-matching model learns to generate placements.

pub mod data;
pub mod diff;
pub mod error;
pub mod eval;
pub mod flow;
pub mod legality;
pub mod primdict;
pub mod trainer;

pub use error::{Error, Result};
