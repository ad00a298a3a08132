use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{SampleDraw, TrainSample};
use crate::data::slice_cols;
use crate::diff::{Bound, Graph, Tensor, Var};
use crate::error::{Error, Result};
use crate::flow::FlowNet;
use crate::legality::ops::{energy_op, EnergyVars};
use crate::legality::EnergyBreakdown;
use crate::primdict::ops::EffectiveVars;

/// Terms of the joint objective for one sample or a batch mean.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub psi_dec: EnergyBreakdown,
    pub fm_residual: f64,
    pub psi_flow: EnergyBreakdown,
    pub beta: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn new(psi_dec: EnergyBreakdown, fm_residual: f64, psi_flow: EnergyBreakdown, beta: f64) -> Self {
        Self {
            psi_dec,
            fm_residual,
            psi_flow,
            beta,
            total: psi_dec.total + fm_residual + beta * psi_flow.total,
        }
    }
}

/// Tape handles of the learnable parameters.
#[derive(Clone, Debug)]
pub struct ParamVars {
    pub content: Var,
    pub phi: Var,
    pub gamma: Var,
    pub net: Bound,
}

/// Tape nodes of one sample's objective.
#[derive(Clone, Copy, Debug)]
pub struct SampleLossVars {
    pub dec: EnergyVars,
    pub fm: Var,
    pub flow: EnergyVars,
    pub total: Var,
    /// Decoder-path placement (hard Bernoulli forward).
    pub r_dec: Var,
    pub r_flow: Var,
}

/// Source of the velocity used on the flow side.
pub enum VelocitySource<'a> {
    Net(&'a FlowNet),
    /// Exact straight-path velocity `R1 - Z0`, standing in for a perfect
    /// network.
    Oracle,
}

/// Objective of one sample on tape: decoder-path energy of the sampled
/// placement, flow-matching residual on the interpolant toward it, and
/// `β` times the energy of the endpoint estimate.
#[allow(clippy::too_many_arguments)]
pub fn sample_loss_op(
    g: &mut Graph,
    cfg: &TrainConfig,
    velocity: VelocitySource<'_>,
    pv: &ParamVars,
    eff: &EffectiveVars,
    logits: Var,
    sample: &TrainSample,
    draw: &SampleDraw,
    beta: f64,
) -> Result<SampleLossVars> {
    let geo = cfg.geo();
    let x = &sample.x;
    let q = g.sigmoid(logits);
    let hard = g.value(q).zip_map(&draw.uniforms, |q, u| if u < q { 1.0 } else { 0.0 });
    let r_dec = g.straight_through(q, hard);
    let dec = energy_op(g, eff, r_dec, q, pv.gamma, x, &geo);

    let t = draw.t;
    let z0 = g.constant(draw.z0.clone());
    let a = g.scale(z0, 1.0 - t);
    let b = g.scale(r_dec, t);
    let zt = g.add(a, b);
    let zt = if cfg.flow_psi_to_logits { zt } else { g.stop_grad(zt) };
    let target = g.sub(r_dec, z0);

    let v = match velocity {
        VelocitySource::Net(net) => {
            let ctx = if cfg.conditional() && !draw.drop_context {
                let prefix = slice_cols(x, 0, cfg.t_obs);
                net.encode_op(g, &pv.net, &prefix, sample.task)?
            } else {
                pv.net.var("enc.null")
            };
            net.velocity_op(g, &pv.net, zt, t, eff.soft_widths, ctx)?
        }
        VelocitySource::Oracle => g.stop_grad(target),
    };
    let diff = g.sub(v, target);
    let sq = g.square(diff);
    let fm = g.mean(sq);

    let step = g.scale(v, 1.0 - t);
    let raw = g.add(zt, step);
    let r_flow = g.clamp(raw, 0.0, 1.0);
    let flow = energy_op(g, eff, r_flow, r_flow, pv.gamma, x, &geo);

    let weighted = g.scale(flow.total, beta);
    let total = g.add(dec.total, fm);
    let total = g.add(total, weighted);
    Ok(SampleLossVars {
        dec,
        fm,
        flow,
        total,
        r_dec,
        r_flow,
    })
}

fn energy_breakdown(g: &Graph, e: &EnergyVars, cfg: &TrainConfig) -> EnergyBreakdown {
    EnergyBreakdown::new(
        g.scalar(e.rec),
        g.scalar(e.sparse),
        g.scalar(e.prim),
        g.scalar(e.geo),
        &cfg.geo(),
    )
}

impl SampleLossVars {
    pub fn breakdown(&self, g: &Graph, cfg: &TrainConfig, beta: f64) -> LossBreakdown {
        LossBreakdown::new(
            energy_breakdown(g, &self.dec, cfg),
            g.scalar(self.fm),
            energy_breakdown(g, &self.flow, cfg),
            beta,
        )
    }

    /// Fails on the first non-finite term, naming it.
    pub fn check_finite(&self, g: &Graph) -> Result<()> {
        let terms = [
            ("psi_dec.rec", self.dec.rec),
            ("psi_dec.sparse", self.dec.sparse),
            ("psi_dec.prim", self.dec.prim),
            ("psi_dec.geo", self.dec.geo),
            ("fm_residual", self.fm),
            ("psi_flow.rec", self.flow.rec),
            ("psi_flow.sparse", self.flow.sparse),
            ("psi_flow.prim", self.flow.prim),
            ("psi_flow.geo", self.flow.geo),
        ];
        for (name, v) in terms {
            g.check_finite(v, name)?;
        }
        Ok(())
    }
}

/// Mean of per-sample breakdowns.
pub fn mean_breakdown(parts: &[LossBreakdown]) -> LossBreakdown {
    let n = parts.len().max(1) as f64;
    let avg = |f: &dyn Fn(&LossBreakdown) -> EnergyBreakdown| {
        let mut acc = EnergyBreakdown::default();
        for p in parts {
            let e = f(p);
            acc.rec += e.rec / n;
            acc.sparse += e.sparse / n;
            acc.prim += e.prim / n;
            acc.geo += e.geo / n;
            acc.total += e.total / n;
        }
        acc
    };
    let beta = parts.first().map(|p| p.beta).unwrap_or(0.0);
    let mut out = LossBreakdown {
        psi_dec: avg(&|p| p.psi_dec),
        fm_residual: parts.iter().map(|p| p.fm_residual).sum::<f64>() / n,
        psi_flow: avg(&|p| p.psi_flow),
        beta,
        total: 0.0,
    };
    out.total = out.psi_dec.total + out.fm_residual + beta * out.psi_flow.total;
    out
}

/// Splits a flat parameter vector on tape into tensors of the given shapes.
pub fn split_flat(g: &mut Graph, flat: Var, shapes: &[Vec<usize>]) -> Result<Vec<Var>> {
    let n = g.value(flat).len();
    let total: usize = shapes.iter().map(|s| s.iter().product::<usize>()).sum();
    if n != total {
        return Err(Error::Shape(format!("flat vector of {n} for {total} parameters")));
    }
    let row = g.reshape(flat, &[1, n]);
    let mut off = 0;
    let mut out = Vec::with_capacity(shapes.len());
    for s in shapes {
        let len: usize = s.iter().product();
        let part = g.slice_cols(row, off, len);
        out.push(g.reshape(part, s));
        off += len;
    }
    Ok(out)
}

/// Flattens tensors in order; the inverse of [`split_flat`].
pub fn concat_flat(parts: &[&Tensor]) -> Tensor {
    Tensor::vector(parts.iter().flat_map(|t| t.data().iter().copied()).collect())
}
