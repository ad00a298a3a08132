//! The "w/o Primitives" baseline: flow matching directly on the normalized
//! future, one token per channel, with the same network sizes as the
//! compositional model.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{slice_cols, NormStats};
use crate::diff::{Graph, Tensor};
use crate::error::{Error, Result};
use crate::flow::{integrate, noise, FlowNet, SampleOptions};
use crate::trainer::{derived_rng, net_config, steps_per_epoch, Adam, TrainConfig, TrainSample};

const TAG_DENSE: u64 = 11;

#[derive(Clone, Debug, PartialEq)]
pub struct DenseModel {
    pub config: TrainConfig,
    pub net: FlowNet,
    pub stats: NormStats,
}

impl DenseModel {
    /// Channel index plus one stands in for the duration input, giving
    /// each channel token its own identity.
    fn token_ids(c: usize) -> Vec<f64> {
        (1..=c).map(|v| v as f64).collect()
    }

    fn future_len(&self) -> usize {
        self.net.cfg.len
    }

    /// Forecast in data units from a normalized prefix `[C, T_obs]`, or an
    /// unconditional sample of the full window when `prefix` is `None`.
    pub fn predict(
        &self,
        prefix: Option<(&Tensor, Option<usize>)>,
        opts: &SampleOptions,
        seed: u64,
    ) -> Result<Tensor> {
        let c = self.stats.channels();
        let h = match prefix {
            Some((p, task)) => Some(self.net.encode_context(p, task)?),
            None => None,
        };
        let ids = Self::token_ids(c);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z0 = noise(&[c, self.future_len()], opts.sigma, &mut rng);
        let z1 = integrate(&z0, opts.steps, |z, t| {
            self.net.guided_velocity(z, t, &ids, h.as_ref(), opts.guidance)
        })?;
        Ok(self.stats.invert(&z1))
    }
}

/// Trains the dense baseline on normalized windows `[C, L]` for the same
/// epochs, batch size and network learning rate as `config`.
pub fn train_dense(samples: &[TrainSample], stats: &NormStats, n_tasks: usize, config: &TrainConfig) -> Result<DenseModel> {
    let first = samples
        .first()
        .ok_or_else(|| Error::InvalidArgument("empty dataset".into()))?;
    let (c, l) = first.x.dims2();
    let t_obs = config.t_obs;
    if t_obs >= l {
        return Err(Error::Config(format!("t_obs {t_obs} ≥ window length {l}")));
    }
    let f = l - t_obs;
    let mut ncfg = net_config(config, c, f, n_tasks);
    ncfg.max_width = c as f64;
    let mut rng = derived_rng(config.seed, 0, 0, TAG_DENSE);
    let mut net = FlowNet::new(ncfg, &mut rng)?;
    let mut opt = Adam::new(net.params.tensors());
    let ids = Tensor::vector(DenseModel::token_ids(c));
    let spe = steps_per_epoch(samples.len(), config.batch_size);
    let mut step = 0u64;
    for epoch in 0..config.epochs {
        let mut order: Vec<usize> = (0..samples.len()).collect();
        order.shuffle(&mut derived_rng(config.seed, epoch as u64, 1, TAG_DENSE));
        for b in 0..spe {
            if config.max_steps > 0 && step >= config.max_steps as u64 {
                break;
            }
            let batch = &order[b * config.batch_size..((b + 1) * config.batch_size).min(order.len())];
            let mut g = Graph::new();
            let p = net.params.bind(&mut g);
            let w = g.constant(ids.clone());
            let mut total = None;
            for &i in batch {
                let s = &samples[i];
                let mut r = derived_rng(config.seed, step, i as u64, TAG_DENSE);
                let t = r.gen::<f64>();
                let z0t = noise(&[c, f], config.sigma, &mut r);
                let x1 = slice_cols(&s.x, t_obs, f);
                let zt = g.constant(z0t.zip_map(&x1, |a, b| (1.0 - t) * a + t * b));
                let target = g.constant(x1.zip_map(&z0t, |a, b| a - b));
                let ctx = if t_obs > 0 && r.gen::<f64>() >= config.cond_dropout {
                    net.encode_op(&mut g, &p, &slice_cols(&s.x, 0, t_obs), s.task)?
                } else {
                    p.var("enc.null")
                };
                let v = net.velocity_op(&mut g, &p, zt, t, w, ctx)?;
                let diff = g.sub(v, target);
                let sq = g.square(diff);
                let fm = g.mean(sq);
                total = Some(match total {
                    None => fm,
                    Some(acc) => g.add(acc, fm),
                });
            }
            let root = g.scale(total.unwrap(), 1.0 / batch.len() as f64);
            let loss = g.scalar(root);
            if !loss.is_finite() || loss > crate::trainer::DIVERGENCE_LIMIT {
                return Err(Error::Divergence {
                    step,
                    term: "dense fm".into(),
                    value: loss,
                });
            }
            let grads = g.backward(root);
            let ng = p.grads(&g, &grads);
            opt.step(config.lr_net, net.params.tensors_mut(), &ng);
            step += 1;
        }
    }
    Ok(DenseModel {
        config: config.clone(),
        net,
        stats: stats.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn trains_and_predicts_shapes() {
        let samples: Vec<TrainSample> = (0..6)
            .map(|i| TrainSample {
                x: Tensor::from_vec(&[2, 6], (0..12).map(|v| (v + i) as f64 * 0.1).collect()),
                task: None,
            })
            .collect();
        let cfg = TrainConfig {
            d: 8,
            heads: 2,
            blocks: 1,
            k: 3,
            epochs: 2,
            batch_size: 4,
            t_obs: 2,
            ..TrainConfig::default()
        };
        let stats = NormStats::identity(2);
        let m = train_dense(&samples, &stats, 0, &cfg).unwrap();
        let opts = SampleOptions {
            steps: 4,
            ..Default::default()
        };
        let prefix = slice_cols(&samples[0].x, 0, 2);
        let a = m.predict(Some((&prefix, None)), &opts, 3).unwrap();
        assert_eq!(a.shape(), &[2, 4]);
        assert_eq!(a, m.predict(Some((&prefix, None)), &opts, 3).unwrap());
        assert_eq!(m, train_dense(&samples, &stats, 0, &cfg).unwrap());
    }
}
