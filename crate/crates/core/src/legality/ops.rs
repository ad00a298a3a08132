//! Legality energy on the tape.

use super::energy::continuity_weights;
use super::events::{extract_events, GeoParams, Surrogate};
use super::geo::psi_geo_with_grad;
use crate::diff::{Graph, Tensor, Var};
use crate::primdict::ops::{gate, synthesize_op, EffectiveVars};

/// Tape nodes of the four energy terms and their weighted total.
#[derive(Clone, Copy, Debug)]
pub struct EnergyVars {
    pub rec: Var,
    pub sparse: Var,
    pub prim: Var,
    pub geo: Var,
    pub total: Var,
    /// Synthesized trajectory `[C, L]`.
    pub xhat: Var,
    pub gate: Var,
}

/// Event-geometry energy with the smooth surrogates, differentiable in the
/// placement values, atom end points and both width forms.
pub fn psi_geo_op(g: &mut Graph, r: Var, eff: &EffectiveVars, params: &GeoParams) -> Var {
    let snapshot = eff.snapshot(g);
    let rv = g.value(r).clone();
    let events = extract_events(&rv, &snapshot);
    let (value, grads) = psi_geo_with_grad(&events, params, Surrogate::Smooth);
    let (m, l) = rv.dims2();
    let dshape = snapshot.masked.shape().to_vec();
    let (c, k) = (dshape[1], dshape[2]);
    g.custom(
        &[r, eff.masked, eff.soft_widths, eff.width_values],
        Tensor::scalar(value),
        move |go| {
            let s = go.item();
            let mut dr = Tensor::zeros(&[m, l]);
            let mut dd = Tensor::zeros(&dshape);
            let mut dw = vec![0.0; m];
            let mut dwbar = vec![0.0; m];
            for (e, eg) in events.iter().zip(&grads) {
                let raw = rv.at2(e.atom, e.onset);
                if (0.0..=1.0).contains(&raw) {
                    dr.data_mut()[e.atom * l + e.onset] += s * eg.d_prob;
                }
                for ci in 0..c {
                    dd.data_mut()[(e.atom * c + ci) * k] += s * eg.d_start[ci];
                    dd.data_mut()[(e.atom * c + ci) * k + e.width - 1] += s * eg.d_end[ci];
                }
                dw[e.atom] += s * eg.d_soft_width;
                dwbar[e.atom] += s * eg.d_width_value;
            }
            vec![
                Some(dr),
                Some(dd),
                Some(Tensor::vector(dw)),
                Some(Tensor::vector(dwbar)),
            ]
        },
    )
}

/// Continuity-weighted ownership changes of a gate node.
pub fn psi_prim_op(g: &mut Graph, gate: Var, x: &Tensor, tau: f64) -> Var {
    let omega = continuity_weights(x, tau);
    let gv = g.value(gate).clone();
    let (m, l) = gv.dims2();
    let mut value = 0.0;
    let mut sign = Tensor::zeros(&[m, l]);
    for (t, w) in omega.iter().enumerate() {
        for j in 0..m {
            let d = gv.at2(j, t + 1) - gv.at2(j, t);
            value += w * d.abs();
            let sg = if d > 0.0 {
                *w
            } else if d < 0.0 {
                -*w
            } else {
                0.0
            };
            sign.data_mut()[j * l + t + 1] += sg;
            sign.data_mut()[j * l + t] -= sg;
        }
    }
    g.custom(&[gate], Tensor::scalar(value), move |go| {
        vec![Some(sign.scale(go.item()))]
    })
}

/// Full legality energy of placement node `r` against trajectory `x`.
///
/// `score` supplies the per-onset gate scores (onset probabilities on the
/// dictionary path, the placement values themselves on the flow path) and
/// `priority` the per-atom gate bias.
pub fn energy_op(
    g: &mut Graph,
    eff: &EffectiveVars,
    r: Var,
    score: Var,
    priority: Var,
    x: &Tensor,
    params: &GeoParams,
) -> EnergyVars {
    let gate = gate(g, r, score, priority, &eff.widths);
    let sv = g.value(score).clone();
    let pv = g.value(priority).data().to_vec();
    let xhat = synthesize_op(g, eff.masked, r, gate, &eff.widths, &sv, &pv);
    let xc = g.constant(x.clone());
    let diff = g.sub(xc, xhat);
    let sq = g.square(diff);
    let rec = g.sum(sq);
    let ab = g.abs(r);
    let sparse = g.sum(ab);
    let prim = psi_prim_op(g, gate, x, params.tau);
    let geo = psi_geo_op(g, r, eff, params);

    let ts = g.scale(sparse, params.lambda_s);
    let tp = g.scale(prim, params.lambda_p);
    let tg = g.scale(geo, params.lambda_g);
    let total = g.add(rec, ts);
    let total = g.add(total, tp);
    let total = g.add(total, tg);
    EnergyVars {
        rec,
        sparse,
        prim,
        geo,
        total,
        xhat,
        gate,
    }
}
