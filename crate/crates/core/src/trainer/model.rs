use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::adam::{Adam, SparseAdam};
use super::config::TrainConfig;
use crate::data::{NormStats, Trajectory};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{noise, FlowNet, NetConfig};
use crate::primdict::{Dictionary, EffectiveDict};

/// One normalized training window.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample {
    /// `[C, L]`
    pub x: Tensor,
    pub task: Option<usize>,
}

/// Builds samples from normalized trajectories of equal length, mapping
/// task labels through `tasks`. Labels outside the vocabulary get no task.
pub fn make_samples(dataset: &[Trajectory], tasks: &[String]) -> Result<Vec<TrainSample>> {
    let Some(first) = dataset.first() else {
        return Err(Error::InvalidArgument("empty dataset".into()));
    };
    let (c, l) = first.points.dims2();
    dataset
        .iter()
        .map(|tr| {
            if tr.points.dims2() != (c, l) {
                return Err(Error::Shape(format!(
                    "trajectory {} is {:?}, expected [{c}, {l}]",
                    tr.id,
                    tr.points.shape()
                )));
            }
            Ok(TrainSample {
                x: tr.points.clone(),
                task: tasks.iter().position(|t| *t == tr.task),
            })
        })
        .collect()
}

/// Everything that is learned, plus what is needed to use it.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: TrainConfig,
    pub dict: Dictionary,
    pub net: FlowNet,
    /// Per-sample placement logits `[N, M, L]`.
    pub logits: Tensor,
    pub stats: NormStats,
    pub tasks: Vec<String>,
    pub step: u64,
}

pub fn net_config(cfg: &TrainConfig, channels: usize, len: usize, n_tasks: usize) -> NetConfig {
    NetConfig {
        len,
        d: cfg.d,
        heads: cfg.heads,
        blocks: cfg.blocks,
        mlp_ratio: cfg.mlp_ratio,
        channels,
        n_tasks,
        max_width: cfg.k as f64,
    }
}

/// RNG for one purpose at one step, independent of every other draw.
pub fn derived_rng(seed: u64, step: u64, index: u64, tag: u64) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    for (i, v) in [seed, step, index, tag].iter().enumerate() {
        key[i * 8..(i + 1) * 8].copy_from_slice(&v.to_le_bytes());
    }
    ChaCha8Rng::from_seed(key)
}

pub(crate) const TAG_INIT: u64 = 1;
pub(crate) const TAG_DRAW: u64 = 2;
pub(crate) const TAG_ORDER: u64 = 3;

impl Model {
    pub fn init(
        config: TrainConfig,
        n_samples: usize,
        channels: usize,
        len: usize,
        tasks: Vec<String>,
        stats: NormStats,
    ) -> Result<Self> {
        config.validate_for_len(len)?;
        let mut rng = derived_rng(config.seed, 0, 0, TAG_INIT);
        let dict = Dictionary::init(config.m, channels, config.k, &mut rng);
        let net = FlowNet::new(net_config(&config, channels, len, tasks.len()), &mut rng)?;
        let logits = Tensor::full(&[n_samples, config.m, len], config.logit_init);
        Ok(Self {
            config,
            dict,
            net,
            logits,
            stats,
            tasks,
            step: 0,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.logits.shape()[0]
    }

    pub fn len(&self) -> usize {
        self.logits.shape()[2]
    }

    pub fn channels(&self) -> usize {
        self.dict.channels()
    }

    pub fn effective(&self) -> EffectiveDict {
        self.dict.effective(self.config.alpha, self.config.mask)
    }

    /// Logits of sample `i` as `[M, L]`.
    pub fn sample_logits(&self, i: usize) -> Tensor {
        let (m, l) = (self.config.m, self.len());
        Tensor::from_vec(&[m, l], self.logits.data()[i * m * l..(i + 1) * m * l].to_vec())
    }

    pub fn task_index(&self, label: &str) -> Option<usize> {
        self.tasks.iter().position(|t| t == label)
    }
}

/// Optimizer moments for every parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    /// content, φ, γ
    pub dict: Adam,
    pub net: Adam,
    pub logits: SparseAdam,
}

impl OptState {
    pub fn new(model: &Model) -> Self {
        Self {
            dict: Adam::new(&[
                model.dict.content.clone(),
                model.dict.phi.clone(),
                model.dict.gamma.clone(),
            ]),
            net: Adam::new(model.net.params.tensors()),
            logits: SparseAdam::new(&model.logits),
        }
    }
}

/// Per-sample randomness of one training step.
#[derive(Clone, Debug, PartialEq)]
pub struct SampleDraw {
    /// Uniforms deciding the Bernoulli placement (`u < q` places an onset).
    pub uniforms: Tensor,
    pub t: f64,
    pub z0: Tensor,
    pub drop_context: bool,
}

impl SampleDraw {
    pub fn new(cfg: &TrainConfig, m: usize, l: usize, step: u64, index: u64) -> Self {
        let mut rng = derived_rng(cfg.seed, step, index, TAG_DRAW);
        let uniforms = Tensor::from_vec(&[m, l], (0..m * l).map(|_| rng.gen::<f64>()).collect());
        let t = rng.gen::<f64>();
        let z0 = noise(&[m, l], cfg.sigma, &mut rng);
        let drop_context = rng.gen::<f64>() < cfg.cond_dropout;
        Self {
            uniforms,
            t,
            z0,
            drop_context,
        }
    }
}
