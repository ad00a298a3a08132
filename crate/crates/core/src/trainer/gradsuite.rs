//! Finite-difference checks of every term of the joint objective on a small
//! random instance.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use super::config::TrainConfig;
use super::loss::{concat_flat, sample_loss_op, split_flat, ParamVars, VelocitySource};
use super::model::{derived_rng, net_config, SampleDraw, TrainSample};
use crate::diff::{grad_check, Bound, GradReport, Graph, Tensor, Var};
use crate::error::Result;
use crate::flow::FlowNet;
use crate::primdict::ops::effective_atoms;
use crate::primdict::Dictionary;

/// Terms checked by [`gradient_suite`].
pub const TERMS: [&str; 7] = [
    "psi_rec",
    "psi_sparse",
    "psi_prim",
    "psi_geo",
    "fm_residual",
    "psi_flow",
    "total",
];

/// A random instance of the joint objective with all parameters in one
/// flat vector: content, φ, γ, logits, then the network.
#[derive(Clone, Debug)]
pub struct GradInstance {
    pub cfg: TrainConfig,
    pub net: FlowNet,
    pub dict: Dictionary,
    pub logits: Tensor,
    pub sample: TrainSample,
    pub draw: SampleDraw,
}

/// `C=2, L=16, M=3, K=6` with a two-head single-block network, random
/// everywhere (including layers that start at zero in training) and
/// conditioned on a 6-step prefix.
pub fn tiny_instance(seed: u64) -> Result<GradInstance> {
    let (c, l) = (2, 16);
    let cfg = TrainConfig {
        m: 3,
        k: 6,
        d: 8,
        heads: 2,
        blocks: 1,
        t_obs: 6,
        seed,
        ..Default::default()
    };
    let mut rng = derived_rng(seed, 0, 0, 99);
    let mut dict = Dictionary::init(cfg.m, c, cfg.k, &mut rng);
    let unit = Normal::new(0.0, 1.0).unwrap();
    let content: Vec<f64> = (0..dict.content.len()).map(|_| 0.5 * unit.sample(&mut rng)).collect();
    dict.content = Tensor::from_vec(dict.content.shape(), content);
    // keep soft widths away from the rounding boundaries
    let phi: Vec<f64> = (0..cfg.m)
        .map(|_| loop {
            let p: f64 = unit.sample(&mut rng);
            let w = 1.0 + (cfg.k as f64 - 1.0) * crate::diff::sigmoid(p);
            if ((w - w.floor()) - 0.5).abs() > 0.05 {
                break p;
            }
        })
        .collect();
    dict.phi = Tensor::vector(phi);
    dict.gamma = Tensor::vector((0..cfg.m).map(|_| 0.3 * unit.sample(&mut rng)).collect());

    let mut net = FlowNet::new(net_config(&cfg, c, l, 2), &mut rng)?;
    for t in net.params.tensors_mut() {
        let data = (0..t.len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
        *t = Tensor::from_vec(t.shape(), data);
    }
    let logits = Tensor::from_vec(
        &[cfg.m, l],
        (0..cfg.m * l).map(|_| unit.sample(&mut rng)).collect(),
    );
    let x = Tensor::from_vec(
        &[c, l],
        (0..c * l)
            .map(|i| {
                let (ci, t) = ((i / l) as f64, (i % l) as f64);
                (0.4 * t + ci).sin() + 0.05 * unit.sample(&mut rng)
            })
            .collect(),
    );
    let mut draw = SampleDraw::new(&cfg, cfg.m, l, 3, 0);
    draw.drop_context = false;
    draw.t = 0.37;
    Ok(GradInstance {
        cfg,
        net,
        dict,
        logits,
        sample: TrainSample { x, task: Some(1) },
        draw,
    })
}

impl GradInstance {
    pub fn flat(&self) -> Tensor {
        let mut parts = vec![&self.dict.content, &self.dict.phi, &self.dict.gamma, &self.logits];
        parts.extend(self.net.params.tensors());
        concat_flat(&parts)
    }

    fn shapes(&self) -> Vec<Vec<usize>> {
        let mut s = vec![
            self.dict.content.shape().to_vec(),
            self.dict.phi.shape().to_vec(),
            self.dict.gamma.shape().to_vec(),
            self.logits.shape().to_vec(),
        ];
        s.extend(self.net.params.tensors().iter().map(|t| t.shape().to_vec()));
        s
    }

    /// Builds the objective and returns the node of `term`.
    pub fn build(&self, g: &mut Graph, flat: Var, term: &str) -> Result<Var> {
        let vars = split_flat(g, flat, &self.shapes())?;
        let pv = ParamVars {
            content: vars[0],
            phi: vars[1],
            gamma: vars[2],
            net: Bound::from_vars(&self.net.params, vars[4..].to_vec()),
        };
        let cfg = &self.cfg;
        let eff = effective_atoms(g, pv.content, pv.phi, cfg.alpha, cfg.mask);
        let out = sample_loss_op(
            g,
            cfg,
            VelocitySource::Net(&self.net),
            &pv,
            &eff,
            vars[3],
            &self.sample,
            &self.draw,
            cfg.beta,
        )?;
        Ok(match term {
            "psi_rec" => out.dec.rec,
            "psi_sparse" => out.dec.sparse,
            "psi_prim" => out.dec.prim,
            "psi_geo" => out.dec.geo,
            "fm_residual" => out.fm,
            "psi_flow" => out.flow.total,
            _ => out.total,
        })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TermReport {
    pub term: String,
    pub report: GradReport,
}

/// Checks every entry of [`TERMS`] against central differences.
pub fn gradient_suite(seed: u64, eps: f64) -> Result<Vec<TermReport>> {
    let inst = tiny_instance(seed)?;
    let flat = inst.flat();
    TERMS
        .iter()
        .map(|&term| {
            let report = grad_check(|g, p| inst.build(g, p, term), &flat, eps)?;
            Ok(TermReport {
                term: term.to_string(),
                report,
            })
        })
        .collect()
}
