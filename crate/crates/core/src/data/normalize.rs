use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Per-channel affine normalization fitted on a dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    /// Channels whose variance was zero; their std was clamped to 1.
    pub clamped: Vec<bool>,
}

const MIN_STD: f64 = 1e-12;

impl NormStats {
    pub fn identity(c: usize) -> Self {
        Self {
            mean: vec![0.0; c],
            std: vec![1.0; c],
            clamped: vec![false; c],
        }
    }

    pub fn fit(dataset: &[Trajectory]) -> Result<Self> {
        let first = dataset
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot normalize an empty dataset".into()))?;
        let c = first.channels();
        let mut sum = vec![0.0; c];
        let mut n = 0usize;
        for t in dataset {
            if t.channels() != c {
                return Err(Error::Shape(format!(
                    "trajectory {} has {} channels, expected {c}",
                    t.id,
                    t.channels()
                )));
            }
            for (ci, s) in sum.iter_mut().enumerate() {
                *s += t.points.row(ci).iter().sum::<f64>();
            }
            n += t.len();
        }
        let mean: Vec<f64> = sum.iter().map(|s| s / n as f64).collect();
        let mut var = vec![0.0; c];
        for t in dataset {
            for (ci, v) in var.iter_mut().enumerate() {
                *v += t
                    .points
                    .row(ci)
                    .iter()
                    .map(|x| (x - mean[ci]) * (x - mean[ci]))
                    .sum::<f64>();
            }
        }
        let mut std = Vec::with_capacity(c);
        let mut clamped = Vec::with_capacity(c);
        for v in var {
            let s = (v / n as f64).sqrt();
            if s < MIN_STD {
                log::warn!("zero-variance channel, std clamped to 1");
                std.push(1.0);
                clamped.push(true);
            } else {
                std.push(s);
                clamped.push(false);
            }
        }
        Ok(Self { mean, std, clamped })
    }

    pub fn channels(&self) -> usize {
        self.mean.len()
    }

    /// Normalizes a `[C, T]` matrix.
    pub fn apply(&self, points: &Tensor) -> Tensor {
        let (c, t) = points.dims2();
        let mut out = points.clone();
        for ci in 0..c {
            for v in &mut out.data_mut()[ci * t..(ci + 1) * t] {
                *v = (*v - self.mean[ci]) / self.std[ci];
            }
        }
        out
    }

    pub fn invert(&self, points: &Tensor) -> Tensor {
        let (c, t) = points.dims2();
        let mut out = points.clone();
        for ci in 0..c {
            for v in &mut out.data_mut()[ci * t..(ci + 1) * t] {
                *v = *v * self.std[ci] + self.mean[ci];
            }
        }
        out
    }
}

pub fn normalize(dataset: &[Trajectory]) -> Result<(Vec<Trajectory>, NormStats)> {
    let stats = NormStats::fit(dataset)?;
    let out = dataset
        .iter()
        .map(|t| Trajectory {
            points: stats.apply(&t.points),
            ..t.clone()
        })
        .collect();
    Ok((out, stats))
}

pub fn denormalize(dataset: &[Trajectory], stats: &NormStats) -> Vec<Trajectory> {
    dataset
        .iter()
        .map(|t| Trajectory {
            points: stats.invert(&t.points),
            ..t.clone()
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn traj(data: Vec<f64>, c: usize) -> Trajectory {
        let t = data.len() / c;
        Trajectory::new("a", "x", Tensor::from_vec(&[c, t], data)).unwrap()
    }

    #[test]
    fn constant_channel_is_clamped() {
        let ds = vec![traj(vec![3.0, 3.0, 3.0, 1.0, 2.0, 3.0], 2)];
        let (out, stats) = normalize(&ds).unwrap();
        assert_eq!(stats.std[0], 1.0);
        assert!(stats.clamped[0] && !stats.clamped[1]);
        assert_eq!(out[0].points.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn standardized_data_is_fixed_point() {
        let x = [-1.0, 1.0, -1.0, 1.0];
        let ds = vec![traj(x.to_vec(), 1)];
        let (out, stats) = normalize(&ds).unwrap();
        assert!(stats.mean[0].abs() < 1e-12 && (stats.std[0] - 1.0).abs() < 1e-12);
        for (a, b) in out[0].points.data().iter().zip(x) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn empty_dataset_is_an_error() {
        assert!(normalize(&[]).is_err());
    }
}
