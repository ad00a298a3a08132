use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::Trajectory;
use crate::diff::Tensor;
use crate::error::{Error, Result};

/// Parameters of a synthetic dataset built by tiling known primitives.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub m_true: usize,
    pub c: usize,
    pub l: usize,
    pub k: usize,
    pub noise_std: f64,
    pub n_trajectories: usize,
    pub seed: u64,
    /// Number of task labels. Each task owns a random cyclic order of atoms.
    pub n_tasks: usize,
    /// Probability that the next atom follows the task's cyclic order
    /// instead of being drawn uniformly.
    pub follow_prob: f64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            m_true: 4,
            c: 2,
            l: 32,
            k: 10,
            noise_std: 0.01,
            n_trajectories: 2000,
            seed: 0,
            n_tasks: 1,
            follow_prob: 0.0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.m_true == 0 || self.c == 0 || self.k == 0 || self.k > self.l || self.l < 2 {
            return Err(Error::InvalidArgument(format!(
                "synthetic spec needs m_true, c >= 1 and 1 <= k <= l, l >= 2: {self:?}"
            )));
        }
        if !(self.noise_std >= 0.0) || !(0.0..=1.0).contains(&self.follow_prob) {
            return Err(Error::InvalidArgument(
                "noise_std must be >= 0 and follow_prob in [0, 1]".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub atom: usize,
    pub onset: usize,
    /// Columns actually placed (shorter than the atom when truncated).
    pub len: usize,
    pub truncated: bool,
}

/// Ground truth behind a synthetic dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    /// Each atom as `[C][k_j]` rows.
    pub atoms: Vec<Vec<Vec<f64>>>,
    pub events: Vec<Vec<TruthEvent>>,
}

impl SynthTruth {
    pub fn atom_len(&self, j: usize) -> usize {
        self.atoms[j][0].len()
    }

    /// Atom `j` as a `[C, k_j]` tensor.
    pub fn atom(&self, j: usize) -> Tensor {
        let rows = &self.atoms[j];
        let k = rows[0].len();
        Tensor::from_vec(&[rows.len(), k], rows.concat())
    }
}

/// Distinct atom lengths spread evenly over `[max(3, ceil(K/2)), K]`.
fn atom_lengths(m: usize, k: usize) -> Vec<usize> {
    if m == 1 {
        return vec![k];
    }
    let lo = k.div_ceil(2).max(3).min(k) as f64;
    let hi = k as f64;
    (0..m)
        .map(|j| (lo + (hi - lo) * j as f64 / (m - 1) as f64).round() as usize)
        .collect()
}

/// Smooth closed curve through the origin: a random sine mixture per channel
/// with both endpoints pinned to zero and peak magnitude 1.
fn random_loop(c: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let normal = Normal::new(0.0, 1.0).unwrap();
    let mut rows = Vec::with_capacity(c);
    for _ in 0..c {
        let amps: Vec<f64> = (1..=3).map(|h| normal.sample(rng) / h as f64).collect();
        let mut row: Vec<f64> = (0..k)
            .map(|s| {
                if k < 2 {
                    return 0.0;
                }
                let u = std::f64::consts::PI * s as f64 / (k - 1) as f64;
                amps.iter()
                    .enumerate()
                    .map(|(h, a)| a * ((h + 1) as f64 * u).sin())
                    .sum()
            })
            .collect();
        row[0] = 0.0;
        row[k - 1] = 0.0;
        rows.push(row);
    }
    let peak = rows
        .iter()
        .flatten()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-9);
    for v in rows.iter_mut().flatten() {
        *v /= peak;
    }
    rows
}

/// Builds trajectories as contiguous tilings of random ground-truth atoms.
///
/// Every atom starts and ends at the origin, so placing each atom at the
/// previous atom's end point needs no translation and consecutive atoms
/// are endpoint-matched exactly before noise.
pub fn synth_generate(spec: &SynthSpec) -> Result<(Vec<Trajectory>, SynthTruth)> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let lengths = atom_lengths(spec.m_true, spec.k);
    let atoms: Vec<Vec<Vec<f64>>> = lengths
        .iter()
        .map(|&k| random_loop(spec.c, k, &mut rng))
        .collect();
    let n_tasks = spec.n_tasks.max(1);
    let cycles: Vec<Vec<usize>> = (0..n_tasks)
        .map(|_| {
            let mut order: Vec<usize> = (0..spec.m_true).collect();
            order.shuffle(&mut rng);
            order
        })
        .collect();
    let noise = Normal::new(0.0, spec.noise_std.max(0.0)).unwrap();

    let mut trajs = Vec::with_capacity(spec.n_trajectories);
    let mut events = Vec::with_capacity(spec.n_trajectories);
    for i in 0..spec.n_trajectories {
        let task = rng.gen_range(0..n_tasks);
        let cycle = &cycles[task];
        let mut data = vec![0.0; spec.c * spec.l];
        let mut evs = Vec::new();
        let mut onset = 0;
        let mut pos = rng.gen_range(0..spec.m_true);
        let mut origin = vec![0.0; spec.c];
        while onset < spec.l {
            let atom = cycle[pos];
            let k = lengths[atom];
            let len = k.min(spec.l - onset);
            // translate so the atom starts where the previous one ended
            let shift: Vec<f64> = (0..spec.c).map(|c| origin[c] - atoms[atom][c][0]).collect();
            for c in 0..spec.c {
                for s in 0..len {
                    data[c * spec.l + onset + s] = atoms[atom][c][s] + shift[c];
                }
                origin[c] = atoms[atom][c][k - 1] + shift[c];
            }
            evs.push(TruthEvent {
                atom,
                onset,
                len,
                truncated: len < k,
            });
            onset += k;
            pos = if spec.m_true > 1 && rng.gen::<f64>() >= spec.follow_prob {
                rng.gen_range(0..spec.m_true)
            } else {
                (pos + 1) % spec.m_true
            };
        }
        if spec.noise_std > 0.0 {
            for v in &mut data {
                *v += noise.sample(&mut rng);
            }
        }
        let traj = Trajectory::new(
            format!("synth{i:05}"),
            format!("task{task}"),
            Tensor::from_vec(&[spec.c, spec.l], data),
        )?;
        trajs.push(traj);
        events.push(evs);
    }
    Ok((trajs, SynthTruth { atoms, events }))
}
