//! Flow matching over placement matrices: the straight interpolant, the
//! atom-token velocity network, guidance and the Euler sampler.

mod net;
mod sample;
mod state;

pub use net::{positional_table, sinusoid, ContextVector, FlowNet, NetConfig, EMBED_DIM};
pub use sample::{generate, noise, predict, Generated, Prediction, SampleOptions};
pub use state::{binarize, cfg_combine, endpoint_estimate, integrate, interpolate, FlowState};
