use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use super::config::{LogitOptimizer, TrainConfig};
use super::loss::{mean_breakdown, sample_loss_op, LossBreakdown, ParamVars, VelocitySource};
use super::model::{derived_rng, Model, OptState, SampleDraw, TrainSample, TAG_ORDER};
use crate::data::{normalize, task_vocabulary, Trajectory};
use crate::diff::{sigmoid, Graph, Tensor};
use crate::error::{Error, Result};
use crate::flow::binarize;
use crate::primdict::ops::effective_atoms;
use crate::primdict::{synthesize, wta_gate, EffectiveDict};

/// Losses above this abort training.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: u64,
    pub loss: LossBreakdown,
    pub utilization: f64,
    pub seconds: f64,
}

pub fn steps_per_epoch(n: usize, batch: usize) -> usize {
    n.div_ceil(batch)
}

/// Loss weights that follow a warmup schedule.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub beta: f64,
    pub lambda_g: f64,
}

fn ramp(weight: f64, warmup_epochs: usize, step: u64, steps_per_epoch: usize) -> f64 {
    if warmup_epochs == 0 {
        return weight;
    }
    let progress = step as f64 / (warmup_epochs * steps_per_epoch) as f64;
    weight * progress.min(1.0)
}

/// Scheduled weights at the given step.
pub fn schedule_at(cfg: &TrainConfig, step: u64, steps_per_epoch: usize) -> Schedule {
    Schedule {
        beta: ramp(cfg.beta, cfg.beta_warmup_epochs, step, steps_per_epoch),
        lambda_g: ramp(cfg.lambda_g, cfg.geo_warmup_epochs, step, steps_per_epoch),
    }
}

/// One optimizer step on the given sample indices. Nothing is updated when
/// the loss is non-finite or above [`DIVERGENCE_LIMIT`].
pub fn train_step(
    model: &mut Model,
    opt: &mut OptState,
    samples: &[TrainSample],
    batch: &[usize],
    schedule: Schedule,
) -> Result<LossBreakdown> {
    let mut cfg = model.config.clone();
    cfg.lambda_g = schedule.lambda_g;
    let beta = schedule.beta;
    let (m, l) = (cfg.m, model.len());
    let mut g = Graph::new();
    let content = g.param(model.dict.content.clone());
    let phi = g.param(model.dict.phi.clone());
    let gamma = g.param(model.dict.gamma.clone());
    let net = model.net.params.bind(&mut g);
    let pv = ParamVars {
        content,
        phi,
        gamma,
        net,
    };
    let eff = effective_atoms(&mut g, content, phi, cfg.alpha, cfg.mask);

    let mut parts = Vec::with_capacity(batch.len());
    let mut totals = Vec::with_capacity(batch.len());
    let mut logit_vars = Vec::with_capacity(batch.len());
    for &i in batch {
        let lv = g.param(model.sample_logits(i));
        let draw = SampleDraw::new(&cfg, m, l, model.step, i as u64);
        let vars = sample_loss_op(
            &mut g,
            &cfg,
            VelocitySource::Net(&model.net),
            &pv,
            &eff,
            lv,
            &samples[i],
            &draw,
            beta,
        )?;
        vars.check_finite(&g).map_err(|e| match e {
            Error::NonFinite { term } => Error::Divergence {
                step: model.step,
                term,
                value: f64::NAN,
            },
            other => other,
        })?;
        parts.push(vars.breakdown(&g, &cfg, beta));
        totals.push(vars.total);
        logit_vars.push(lv);
    }
    let loss = mean_breakdown(&parts);
    if !loss.total.is_finite() || loss.total > DIVERGENCE_LIMIT {
        return Err(Error::Divergence {
            step: model.step,
            term: "total".into(),
            value: loss.total,
        });
    }

    let mut root = totals[0];
    for &t in &totals[1..] {
        root = g.add(root, t);
    }
    let root = g.scale(root, 1.0 / batch.len() as f64);
    let grads = g.backward(root);
    let get = |v| {
        grads
            .get(v)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(g.value(v).shape()))
    };

    let dict_grads = [get(content), get(phi), get(gamma)];
    let mut dict_params = [
        model.dict.content.clone(),
        model.dict.phi.clone(),
        model.dict.gamma.clone(),
    ];
    opt.dict
        .step_each(&[cfg.lr_dict, cfg.lr_width, cfg.lr_dict], &mut dict_params, &dict_grads);
    let [c, p, gm] = dict_params;
    model.dict.content = c;
    model.dict.phi = p;
    model.dict.gamma = gm;

    let net_grads = pv.net.grads(&g, &grads);
    opt.net.step(cfg.lr_net, model.net.params.tensors_mut(), &net_grads);

    // each logit row belongs to one sample: step on that sample's own loss
    // rather than its share of the batch mean
    for (&i, &lv) in batch.iter().zip(&logit_vars) {
        let gl = get(lv).scale(batch.len() as f64);
        match cfg.logit_optimizer {
            LogitOptimizer::Adam => opt.logits.step_row(cfg.lr_logits, &mut model.logits, i, gl.data()),
            LogitOptimizer::Sgd => {
                let n = gl.len();
                let row = &mut model.logits.data_mut()[i * n..(i + 1) * n];
                for (p, g) in row.iter_mut().zip(gl.data()) {
                    *p -= cfg.lr_logits * g;
                }
            }
        }
    }
    model.step += 1;
    Ok(loss)
}

/// Fraction of atoms with at least one onset of probability ≥ 0.5 in some
/// sample.
pub fn utilization(model: &Model) -> f64 {
    let (m, l) = (model.config.m, model.len());
    let mut used = vec![false; m];
    for (idx, &v) in model.logits.data().iter().enumerate() {
        if v >= 0.0 {
            used[(idx / l) % m] = true;
        }
    }
    used.iter().filter(|&&u| u).count() as f64 / m as f64
}

/// Trains until `config.epochs` (or `config.max_steps`) is reached,
/// continuing from `model.step`. `on_epoch` runs after every epoch.
pub fn train(
    model: &mut Model,
    opt: &mut OptState,
    samples: &[TrainSample],
    mut on_epoch: impl FnMut(&Model, &OptState, &EpochMetrics) -> Result<()>,
) -> Result<Vec<EpochMetrics>> {
    let cfg = model.config.clone();
    if samples.len() != model.n_samples() {
        return Err(Error::Shape(format!(
            "{} samples for a logit table of {}",
            samples.len(),
            model.n_samples()
        )));
    }
    let spe = steps_per_epoch(samples.len(), cfg.batch_size);
    let mut out = Vec::new();
    loop {
        let epoch = (model.step / spe as u64) as usize;
        if epoch >= cfg.epochs || (cfg.max_steps > 0 && model.step >= cfg.max_steps as u64) {
            break;
        }
        let start = Instant::now();
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut derived_rng(cfg.seed, epoch as u64, 0, TAG_ORDER));
        let first = (model.step % spe as u64) as usize;
        let mut parts = Vec::new();
        for b in first..spe {
            if cfg.max_steps > 0 && model.step >= cfg.max_steps as u64 {
                break;
            }
            let batch = &order[b * cfg.batch_size..((b + 1) * cfg.batch_size).min(order.len())];
            let schedule = schedule_at(&cfg, model.step, spe);
            parts.push(train_step(model, opt, samples, batch, schedule)?);
        }
        let metrics = EpochMetrics {
            epoch,
            step: model.step,
            loss: mean_breakdown(&parts),
            utilization: utilization(model),
            seconds: start.elapsed().as_secs_f64(),
        };
        log::info!(
            "epoch {epoch} step {} loss {:.5} dec {:.5} fm {:.5} flow {:.5} util {:.2}",
            metrics.step,
            metrics.loss.total,
            metrics.loss.psi_dec.total,
            metrics.loss.fm_residual,
            metrics.loss.psi_flow.total,
            metrics.utilization
        );
        on_epoch(model, opt, &metrics)?;
        out.push(metrics);
    }
    Ok(out)
}

/// Normalizes `dataset`, builds a fresh model and trains it.
pub fn fit(dataset: &[Trajectory], config: &TrainConfig) -> Result<(Model, Vec<EpochMetrics>)> {
    let (normed, stats) = normalize(dataset)?;
    let tasks = task_vocabulary(dataset);
    let samples = super::model::make_samples(&normed, &tasks)?;
    let (c, l) = samples[0].x.dims2();
    let mut model = Model::init(config.clone(), samples.len(), c, l, tasks, stats)?;
    let mut opt = OptState::new(&model);
    let metrics = train(&mut model, &mut opt, &samples, |_, _, _| Ok(()))?;
    Ok((model, metrics))
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(
        f,
        "epoch,step,total,dec_rec,dec_sparse,dec_prim,dec_geo,dec_total,fm_residual,\
         flow_rec,flow_sparse,flow_prim,flow_geo,flow_total,beta,utilization,seconds"
    )?;
    for m in metrics {
        let (d, fl) = (m.loss.psi_dec, m.loss.psi_flow);
        writeln!(
            f,
            "{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{},{}",
            m.epoch,
            m.step,
            m.loss.total,
            d.rec,
            d.sparse,
            d.prim,
            d.geo,
            d.total,
            m.loss.fm_residual,
            fl.rec,
            fl.sparse,
            fl.prim,
            fl.geo,
            fl.total,
            m.loss.beta,
            m.utilization,
            m.seconds
        )?;
    }
    Ok(())
}

/// Dictionary-path reconstruction from logits `[M, L]`: onsets where
/// `σ(ℓ) ≥ 0.5`, gated by probability plus priority.
pub fn reconstruct(logits: &Tensor, dict: &EffectiveDict, gamma: &[f64]) -> (Tensor, Tensor) {
    let q = logits.map(sigmoid);
    let r = binarize(&q, 0.5);
    let gate = wta_gate(&r, &dict.widths, &q, gamma);
    (synthesize(&r, &gate, &dict.masked, &dict.widths), r)
}

/// RMSE between the data and the dictionary-path reconstruction of every
/// training sample, in data units.
pub fn reconstruction_rmse(model: &Model, samples: &[TrainSample]) -> f64 {
    let dict = model.effective();
    let gamma = model.dict.gamma.data();
    let mut se = 0.0;
    let mut n = 0usize;
    for (i, s) in samples.iter().enumerate() {
        let (xhat, _) = reconstruct(&model.sample_logits(i), &dict, gamma);
        let a = model.stats.invert(&xhat);
        let b = model.stats.invert(&s.x);
        se += a.zip_map(&b, |p, q| (p - q) * (p - q)).sum();
        n += a.len();
    }
    (se / n as f64).sqrt()
}

/// Fits placement logits for unseen trajectories by descending the
/// decoder-path energy with the dictionary frozen. A diagnostic: the
/// forecasting pipeline never needs it.
pub fn infer_logits(model: &Model, xs: &[Tensor], steps: usize, lr: f64) -> Result<Vec<Tensor>> {
    let cfg = &model.config;
    let (m, l) = (cfg.m, model.len());
    let geo = cfg.geo();
    let mut out = Vec::with_capacity(xs.len());
    for (idx, x) in xs.iter().enumerate() {
        let mut logits = Tensor::full(&[m, l], cfg.logit_init);
        let mut opt = super::adam::Adam::new(std::slice::from_ref(&logits));
        for step in 0..steps {
            let mut g = Graph::new();
            let content = g.constant(model.dict.content.clone());
            let phi = g.constant(model.dict.phi.clone());
            let gamma = g.constant(model.dict.gamma.clone());
            let eff = effective_atoms(&mut g, content, phi, cfg.alpha, cfg.mask);
            let lv = g.param(logits.clone());
            let q = g.sigmoid(lv);
            let draw = SampleDraw::new(cfg, m, l, step as u64, u64::MAX - idx as u64);
            let hard = g.value(q).zip_map(&draw.uniforms, |q, u| if u < q { 1.0 } else { 0.0 });
            let r = g.straight_through(q, hard);
            let e = crate::legality::ops::energy_op(&mut g, &eff, r, q, gamma, x, &geo);
            g.check_finite(e.total, "psi_dec")?;
            let grads = g.backward(e.total);
            let gl = grads.get(lv).cloned().unwrap_or_else(|| Tensor::zeros(&[m, l]));
            opt.step(lr, std::slice::from_mut(&mut logits), &[gl]);
        }
        out.push(logits);
    }
    Ok(out)
}
