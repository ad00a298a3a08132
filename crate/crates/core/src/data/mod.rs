//! Trajectory datasets: file I/O, windowing, normalization and a synthetic
//! generator with known primitives.

mod io;
mod normalize;
mod synth;
mod window;

pub use io::{
    load_trajectories, read_csv, read_jsonl, save_trajectories, task_vocabulary, write_csv,
    write_jsonl, Format,
};
pub use normalize::{denormalize, normalize, NormStats};
pub use synth::{synth_generate, SynthSpec, SynthTruth, TruthEvent};
pub use window::{window, WindowSample};

use crate::diff::Tensor;
use crate::error::{Error, Result};

/// A `C×T` motion sequence at unit timestep.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub id: String,
    pub task: String,
    /// Shape `[C, T]`.
    pub points: Tensor,
}

impl Trajectory {
    pub fn new(id: impl Into<String>, task: impl Into<String>, points: Tensor) -> Result<Self> {
        let id = id.into();
        if points.rank() != 2 || points.shape()[1] < 2 {
            return Err(Error::InvalidArgument(format!(
                "trajectory {id} needs shape [C, T>=2], got {:?}",
                points.shape()
            )));
        }
        if !points.all_finite() {
            return Err(Error::NonFinite {
                term: format!("trajectory {id}"),
            });
        }
        Ok(Self {
            id,
            task: task.into(),
            points,
        })
    }

    pub fn channels(&self) -> usize {
        self.points.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.points.shape()[1]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Columns `start..start+len` of a `[C, T]` matrix.
pub fn slice_cols(points: &Tensor, start: usize, len: usize) -> Tensor {
    let (c, t) = points.dims2();
    assert!(start + len <= t, "slice {start}+{len} beyond {t}");
    let mut out = Vec::with_capacity(c * len);
    for ci in 0..c {
        out.extend_from_slice(&points.data()[ci * t + start..ci * t + start + len]);
    }
    Tensor::from_vec(&[c, len], out)
}
