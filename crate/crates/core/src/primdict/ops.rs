//! Tape versions of the dictionary operations.

use super::atoms::{st_round, width_index, EffectiveDict, MaskMode};
use super::placement::{coverage, soft_gate, softmax_scores, synthesize, wta_gate, EVENT_EPS};
use crate::diff::{sigmoid, Graph, Tensor, Var};

/// Effective dictionary as tape nodes.
#[derive(Clone, Debug)]
pub struct EffectiveVars {
    /// `[M, C, K]`
    pub masked: Var,
    /// `[M]` soft widths `w`.
    pub soft_widths: Var,
    /// `[M]` straight-through widths `w̄`.
    pub width_values: Var,
    pub widths: Vec<usize>,
}

impl EffectiveVars {
    pub fn snapshot(&self, g: &Graph) -> EffectiveDict {
        EffectiveDict {
            masked: g.value(self.masked).clone(),
            soft_widths: g.value(self.soft_widths).data().to_vec(),
            width_values: g.value(self.width_values).data().to_vec(),
            widths: self.widths.clone(),
        }
    }
}

/// `w = 1 + (K-1)σ(φ)`, mask, masked content and straight-through widths.
pub fn effective_atoms(
    g: &mut Graph,
    content: Var,
    phi: Var,
    alpha: f64,
    mode: MaskMode,
) -> EffectiveVars {
    let shape = g.value(content).shape().to_vec();
    let (m, c, k) = (shape[0], shape[1], shape[2]);
    if mode == MaskMode::Off {
        let full = g.constant(Tensor::full(&[m], k as f64));
        return EffectiveVars {
            masked: content,
            soft_widths: full,
            width_values: full,
            widths: vec![k; m],
        };
    }

    let s = g.sigmoid(phi);
    let s = g.scale(s, k as f64 - 1.0);
    let w = g.add_scalar(s, 1.0);
    let hard = g.value(w).map(st_round);
    let wbar = g.straight_through(w, hard);
    let widths: Vec<usize> = g
        .value(wbar)
        .data()
        .iter()
        .map(|&v| width_index(v, k))
        .collect();

    let wv = g.value(w).data().to_vec();
    let mut mask = Tensor::zeros(&[m, k]);
    for j in 0..m {
        for s in 0..k {
            mask.set2(j, s, sigmoid(alpha * (wv[j] - s as f64 - 0.5)));
        }
    }
    let mask_val = mask.clone();
    let mask = g.custom(&[w], mask, move |go| {
        let mut dw = vec![0.0; m];
        for (j, d) in dw.iter_mut().enumerate() {
            for s in 0..k {
                let mv = mask_val.at2(j, s);
                *d += go.at2(j, s) * alpha * mv * (1.0 - mv);
            }
        }
        vec![Some(Tensor::vector(dw))]
    });

    let content_val = g.value(content).clone();
    let mask_val = g.value(mask).clone();
    let mut masked = content_val.clone();
    for j in 0..m {
        for ci in 0..c {
            for s in 0..k {
                masked.data_mut()[(j * c + ci) * k + s] *= mask_val.at2(j, s);
            }
        }
    }
    let masked = g.custom(&[content, mask], masked, move |go| {
        let mut dc = go.clone();
        let mut dm = Tensor::zeros(&[m, k]);
        for j in 0..m {
            for ci in 0..c {
                for s in 0..k {
                    let idx = (j * c + ci) * k + s;
                    dc.data_mut()[idx] *= mask_val.at2(j, s);
                    dm.data_mut()[j * k + s] += go.data()[idx] * content_val.data()[idx];
                }
            }
        }
        vec![Some(dc), Some(dm)]
    });

    EffectiveVars {
        masked,
        soft_widths: w,
        width_values: wbar,
        widths,
    }
}

/// Winner-take-all gate over the events in `r`. Forward is hard (soft on a
/// relaxed tape); backward is the softmax Jacobian with respect to the
/// candidate scores `score[j, k] + priority[j]`.
pub fn gate(g: &mut Graph, r: Var, score: Var, priority: Var, widths: &[usize]) -> Var {
    let rv = g.value(r).clone();
    let sv = g.value(score).clone();
    let pv = g.value(priority).data().to_vec();
    let (m, l) = rv.dims2();
    let value = if g.is_relaxed() {
        soft_gate(&rv, widths, &sv, &pv)
    } else {
        wta_gate(&rv, widths, &sv, &pv)
    };
    let cands = coverage(&rv, widths);
    g.custom(&[score, priority], value, move |go| {
        let mut ds = Tensor::zeros(&[m, l]);
        let mut dp = vec![0.0; m];
        for (t, cs) in cands.iter().enumerate() {
            if cs.len() < 2 {
                continue;
            }
            let p = softmax_scores(cs, &sv, &pv);
            let mean: f64 = cs
                .iter()
                .zip(&p)
                .map(|(&(j, _), pe)| pe * go.at2(j, t))
                .sum();
            for (&(j, k), pe) in cs.iter().zip(&p) {
                let d = pe * (go.at2(j, t) - mean);
                ds.data_mut()[j * l + k] += d;
                dp[j] += d;
            }
        }
        vec![Some(ds), Some(Tensor::vector(dp))]
    })
}

/// `x̂ = Σ_j (d̃_j ∗ r_j) ⊙ g_j` with gradients to atoms, placement and gate.
///
/// The derivative with respect to an absent onset is the one-sided limit
/// `r → 0⁺`: the onset becomes a gate candidate and owns the timesteps where
/// its score `score[j, k] + priority[j]` beats every present candidate.
pub fn synthesize_op(
    g: &mut Graph,
    masked: Var,
    r: Var,
    gate: Var,
    widths: &[usize],
    score: &Tensor,
    priority: &[f64],
) -> Var {
    let dv = g.value(masked).clone();
    let rv = g.value(r).clone();
    let gv = g.value(gate).clone();
    let value = synthesize(&rv, &gv, &dv, widths);
    let best: Vec<f64> = coverage(&rv, widths)
        .iter()
        .map(|cs| {
            cs.iter()
                .map(|&(j, k)| score.at2(j, k) + priority[j])
                .fold(f64::NEG_INFINITY, f64::max)
        })
        .collect();
    let score = score.clone();
    let priority = priority.to_vec();
    let widths = widths.to_vec();
    g.custom(&[masked, r, gate], value, move |go| {
        let (m, l) = rv.dims2();
        let (c, k_max) = (dv.shape()[1], dv.shape()[2]);
        let mut dd = Tensor::zeros(dv.shape());
        let mut dr = Tensor::zeros(&[m, l]);
        let mut dg = Tensor::zeros(&[m, l]);
        for j in 0..m {
            for k in 0..l {
                let r_jk = rv.at2(j, k);
                let absent = r_jk <= EVENT_EPS;
                let own = score.at2(j, k) + priority[j];
                let mut acc_r = 0.0;
                for s in 0..widths[j].min(l - k) {
                    let t = k + s;
                    let g_jt = if absent {
                        if own > best[t] {
                            1.0
                        } else {
                            0.0
                        }
                    } else {
                        gv.at2(j, t)
                    };
                    let mut dot = 0.0;
                    for ci in 0..c {
                        let d = dv.data()[(j * c + ci) * k_max + s];
                        let gout = go.data()[ci * l + t];
                        dot += gout * d;
                        if r_jk != 0.0 && gv.at2(j, t) != 0.0 {
                            dd.data_mut()[(j * c + ci) * k_max + s] += r_jk * gv.at2(j, t) * gout;
                        }
                    }
                    acc_r += g_jt * dot;
                    if r_jk != 0.0 {
                        dg.data_mut()[j * l + t] += r_jk * dot;
                    }
                }
                dr.data_mut()[j * l + k] = acc_r;
            }
        }
        vec![Some(dd), Some(dr), Some(dg)]
    })
}
