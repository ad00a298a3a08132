use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::net::{ContextVector, FlowNet};
use super::state::{binarize, integrate};
use crate::data::{slice_cols, NormStats};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::primdict::{synthesize, wta_gate, EffectiveDict};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleOptions {
    pub steps: usize,
    pub guidance: f64,
    pub sigma: f64,
    pub threshold: f64,
}

impl Default for SampleOptions {
    fn default() -> Self {
        Self {
            steps: 50,
            guidance: 1.5,
            sigma: 1.0,
            threshold: 0.5,
        }
    }
}

/// `N(0, σ²)` noise of the given shape.
pub fn noise(shape: &[usize], sigma: f64, rng: &mut impl rand::Rng) -> Tensor {
    let dist = Normal::new(0.0, sigma.max(0.0)).unwrap();
    let n = shape.iter().product();
    Tensor::from_vec(shape, (0..n).map(|_| dist.sample(rng)).collect())
}

/// A generated placement and the trajectory it synthesizes (normalized).
#[derive(Clone, Debug, PartialEq)]
pub struct Generated {
    /// Integrated continuous state `Z_1`.
    pub z1: Tensor,
    pub placement: Tensor,
    pub gate: Tensor,
    pub trajectory: Tensor,
}

/// Integrates the flow from seeded noise and synthesizes the binarized
/// placement through the dictionary.
pub fn generate(
    net: &FlowNet,
    dict: &EffectiveDict,
    priority: &[f64],
    h: Option<&ContextVector>,
    opts: &SampleOptions,
    seed: u64,
) -> Result<Generated> {
    let m = dict.widths.len();
    let l = net.cfg.len;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let z0 = noise(&[m, l], opts.sigma, &mut rng);
    let z1 = integrate(&z0, opts.steps, |z, t| {
        net.guided_velocity(z, t, &dict.soft_widths, h, opts.guidance)
    })?;
    let placement = binarize(&z1, opts.threshold);
    let score = z1.map(|v| v.clamp(0.0, 1.0));
    let gate = wta_gate(&placement, &dict.widths, &score, priority);
    let trajectory = synthesize(&placement, &gate, &dict.masked, &dict.widths);
    Ok(Generated {
        z1,
        placement,
        gate,
        trajectory,
    })
}

/// Predicted future in data units.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `[C, L - T_obs]`
    pub future: Tensor,
    pub placement: Tensor,
    /// Set when the placement came out empty and the last observed point
    /// was repeated instead.
    pub fallback: bool,
}

/// Forecast from a normalized prefix `[C, T_obs]`.
#[allow(clippy::too_many_arguments)]
pub fn predict(
    net: &FlowNet,
    dict: &EffectiveDict,
    priority: &[f64],
    stats: &NormStats,
    prefix: &Tensor,
    task: Option<usize>,
    opts: &SampleOptions,
    seed: u64,
) -> Result<Prediction> {
    let (c, t_obs) = prefix.dims2();
    let l = net.cfg.len;
    if t_obs == 0 || t_obs >= l {
        return Err(Error::InvalidArgument(format!(
            "prefix length {t_obs} must be in [1, {l})"
        )));
    }
    let h = net.encode_context(prefix, task)?;
    let gen = generate(net, dict, priority, Some(&h), opts, seed)?;
    let f = l - t_obs;
    if gen.placement.sum() == 0.0 {
        let last = stats.invert(&slice_cols(prefix, t_obs - 1, 1));
        let future = Tensor::from_vec(
            &[c, f],
            (0..c).flat_map(|ci| vec![last.at2(ci, 0); f]).collect(),
        );
        return Ok(Prediction {
            future,
            placement: gen.placement,
            fallback: true,
        });
    }
    let future = stats.invert(&slice_cols(&gen.trajectory, t_obs, f));
    Ok(Prediction {
        future,
        placement: gen.placement,
        fallback: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::net::NetConfig;
    use rand::Rng;

    fn setup() -> (FlowNet, EffectiveDict) {
        let cfg = NetConfig {
            len: 8,
            d: 8,
            heads: 2,
            blocks: 1,
            mlp_ratio: 2,
            channels: 2,
            n_tasks: 1,
            max_width: 3.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = FlowNet::new(cfg, &mut rng).unwrap();
        for t in net.params.tensors_mut() {
            let data = (0..t.len()).map(|_| rng.gen_range(-0.3..0.3)).collect();
            *t = Tensor::from_vec(t.shape(), data);
        }
        let dict = EffectiveDict {
            masked: Tensor::from_vec(&[2, 2, 3], (0..12).map(|i| i as f64 * 0.1).collect()),
            soft_widths: vec![2.4, 3.0],
            width_values: vec![2.0, 3.0],
            widths: vec![2, 3],
        };
        (net, dict)
    }

    #[test]
    fn prediction_contract() {
        let (net, dict) = setup();
        let stats = NormStats {
            mean: vec![1.0, -1.0],
            std: vec![2.0, 0.5],
            clamped: vec![false, false],
        };
        let prefix = Tensor::full(&[2, 3], 0.2);
        let opts = SampleOptions {
            steps: 5,
            ..Default::default()
        };
        let a = predict(&net, &dict, &[0.0, 0.0], &stats, &prefix, Some(0), &opts, 9).unwrap();
        let b = predict(&net, &dict, &[0.0, 0.0], &stats, &prefix, Some(0), &opts, 9).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.future.shape(), &[2, 5]);

        let never = SampleOptions {
            threshold: f64::INFINITY,
            ..opts
        };
        let p = predict(&net, &dict, &[0.0, 0.0], &stats, &prefix, None, &never, 9).unwrap();
        assert!(p.fallback);
        assert_eq!(p.future.shape(), &[2, 5]);
        assert!(p.future.row(0).iter().all(|&v| (v - 1.4).abs() < 1e-12));
        assert!(p.future.row(1).iter().all(|&v| (v + 0.9).abs() < 1e-12));
        assert!(predict(&net, &dict, &[0.0; 2], &stats, &Tensor::zeros(&[2, 8]), None, &opts, 1).is_err());
    }
}
