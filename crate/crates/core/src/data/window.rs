use super::{slice_cols, Trajectory};
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// A fixed-length slice of a trajectory split into observed prefix and
/// future.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowSample {
    /// `[C, obs]`
    pub observed: Tensor,
    /// `[C, total - obs]`
    pub future: Tensor,
    pub source_id: String,
    pub task: String,
    pub offset: usize,
}

impl WindowSample {
    /// Observed and future columns joined back into one `[C, total]` matrix.
    pub fn full(&self) -> Tensor {
        let (c, o) = self.observed.dims2();
        let f = self.future.dims2().1;
        let mut data = Vec::with_capacity(c * (o + f));
        for ci in 0..c {
            data.extend_from_slice(self.observed.row(ci));
            data.extend_from_slice(self.future.row(ci));
        }
        Tensor::from_vec(&[c, o + f], data)
    }
}

/// Cuts every trajectory into windows of `total` columns starting every
/// `stride` steps; a trajectory of length `T >= total` yields
/// `(T - total) / stride + 1` windows.
pub fn window(
    dataset: &[Trajectory],
    total: usize,
    obs: usize,
    stride: usize,
) -> Result<Vec<WindowSample>> {
    if obs == 0 || obs >= total || stride == 0 {
        return Err(Error::InvalidArgument(format!(
            "window needs 0 < obs < total and stride >= 1 (obs={obs}, total={total}, stride={stride})"
        )));
    }
    let mut out = Vec::new();
    for traj in dataset {
        if traj.len() < total {
            continue;
        }
        let n = (traj.len() - total) / stride + 1;
        for i in 0..n {
            let offset = i * stride;
            out.push(WindowSample {
                observed: slice_cols(&traj.points, offset, obs),
                future: slice_cols(&traj.points, offset + obs, total - obs),
                source_id: traj.id.clone(),
                task: traj.task.clone(),
                offset,
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(t: usize) -> Trajectory {
        let data: Vec<f64> = (0..2 * t).map(|i| i as f64).collect();
        Trajectory::new("r", "x", Tensor::from_vec(&[2, t], data)).unwrap()
    }

    #[test]
    fn counts_follow_protocol() {
        let w = window(&[ramp(48)], 20, 8, 20).unwrap();
        assert_eq!(w.len(), 2);
        assert!(w.iter().all(|s| s.observed.shape() == [2, 8] && s.future.shape() == [2, 12]));
        assert_eq!(w[1].offset, 20);

        assert!(window(&[ramp(19)], 20, 8, 20).unwrap().is_empty());
        let exact = window(&[ramp(20)], 20, 8, 20).unwrap();
        assert_eq!(exact.len(), 1);
        assert_eq!(exact[0].offset, 0);
    }

    #[test]
    fn invalid_split_rejected() {
        assert!(window(&[ramp(30)], 20, 20, 20).is_err());
        assert!(window(&[ramp(30)], 20, 0, 20).is_err());
        assert!(window(&[ramp(30)], 20, 8, 0).is_err());
    }
}
