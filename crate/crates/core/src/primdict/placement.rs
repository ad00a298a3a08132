use rand::Rng;

use super::atoms::EffectiveDict;
use crate::diff::{sigmoid, Tensor};

/// Placement entries at or below this value are not events.
pub const EVENT_EPS: f64 = 1e-6;

/// Onset logits, their probabilities, a binary sample and its gate.
#[derive(Clone, Debug, PartialEq)]
pub struct PlacementState {
    /// `[M, L]`
    pub logits: Tensor,
    pub probs: Tensor,
    pub binary: Tensor,
    pub gate: Tensor,
}

impl PlacementState {
    /// Fills in the winner-take-all gate for the sampled placement, scored
    /// by onset probability plus per-atom priority.
    pub fn gated(mut self, widths: &[usize], priorities: &[f64]) -> Self {
        self.gate = wta_gate(&self.binary, widths, &self.probs, priorities);
        self
    }
}

/// Draws `b ~ Bernoulli(σ(ℓ))` elementwise.
pub fn sample_placements(logits: &Tensor, rng: &mut impl Rng) -> PlacementState {
    let probs = logits.map(sigmoid);
    let draws: Vec<f64> = probs
        .data()
        .iter()
        .map(|&q| if rng.gen::<f64>() < q { 1.0 } else { 0.0 })
        .collect();
    let binary = Tensor::from_vec(probs.shape(), draws);
    PlacementState {
        logits: logits.clone(),
        gate: Tensor::zeros(probs.shape()),
        probs,
        binary,
    }
}

/// For every timestep, the events `(atom, onset)` whose interval
/// `[onset, onset + w̄)` covers it, in atom-then-onset order.
pub(crate) fn coverage(r: &Tensor, widths: &[usize]) -> Vec<Vec<(usize, usize)>> {
    let (m, l) = r.dims2();
    let mut cands = vec![Vec::new(); l];
    for j in 0..m {
        for k in 0..l {
            if r.at2(j, k) > EVENT_EPS {
                for cand in cands.iter_mut().take((k + widths[j]).min(l)).skip(k) {
                    cand.push((j, k));
                }
            }
        }
    }
    cands
}

/// Hard per-timestep ownership. Ties go to the lowest atom index, then the
/// earliest onset.
pub fn wta_gate(r: &Tensor, widths: &[usize], score: &Tensor, priority: &[f64]) -> Tensor {
    let (m, l) = r.dims2();
    let mut gate = Tensor::zeros(&[m, l]);
    for (t, cands) in coverage(r, widths).iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for &(j, k) in cands {
            let s = score.at2(j, k) + priority[j];
            if best.is_none_or(|(_, b)| s > b) {
                best = Some((j, s));
            }
        }
        if let Some((j, _)) = best {
            gate.set2(j, t, 1.0);
        }
    }
    gate
}

/// Softmax relaxation of [`wta_gate`] over the same candidate sets.
pub fn soft_gate(r: &Tensor, widths: &[usize], score: &Tensor, priority: &[f64]) -> Tensor {
    let (m, l) = r.dims2();
    let mut gate = Tensor::zeros(&[m, l]);
    for (t, cands) in coverage(r, widths).iter().enumerate() {
        for (&(j, _), p) in cands.iter().zip(softmax_scores(cands, score, priority)) {
            gate.data_mut()[j * l + t] += p;
        }
    }
    gate
}

pub(crate) fn softmax_scores(
    cands: &[(usize, usize)],
    score: &Tensor,
    priority: &[f64],
) -> Vec<f64> {
    let s: Vec<f64> = cands
        .iter()
        .map(|&(j, k)| score.at2(j, k) + priority[j])
        .collect();
    let mx = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = s.iter().map(|v| (v - mx).exp()).collect();
    let z: f64 = e.iter().sum();
    e.into_iter().map(|v| v / z).collect()
}

/// Places atoms at their onsets and keeps, per timestep, only the owning
/// atom's superposed contribution. Atoms are clipped at the right edge.
pub fn synthesize(r: &Tensor, gate: &Tensor, masked: &Tensor, widths: &[usize]) -> Tensor {
    let (m, l) = r.dims2();
    let (c, k_max) = (masked.shape()[1], masked.shape()[2]);
    let mut out = Tensor::zeros(&[c, l]);
    for j in 0..m {
        for k in 0..l {
            let rv = r.at2(j, k);
            if rv == 0.0 {
                continue;
            }
            for s in 0..widths[j].min(l - k) {
                let t = k + s;
                let gv = gate.at2(j, t);
                if gv == 0.0 {
                    continue;
                }
                for ci in 0..c {
                    out.data_mut()[ci * l + t] += gv * rv * masked.data()[(j * c + ci) * k_max + s];
                }
            }
        }
    }
    out
}

/// Synthesis from an effective dictionary with the hard gate.
pub fn synthesize_state(state: &PlacementState, dict: &EffectiveDict) -> Tensor {
    synthesize(&state.binary, &state.gate, &dict.masked, &dict.widths)
}
