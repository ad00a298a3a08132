//! Velocity network over atom tokens and the prefix encoder.
//!
//! Each dictionary row is one token. A token starts as
//! `Linear(Z_t row) + W_ψ sin/cos(w) + MLP(sin/cos(t))` and passes through
//! pre-norm blocks of multi-head self-attention and an MLP, each norm
//! modulated by shift/scale vectors computed from the context (AdaLN). There
//! is no positional encoding over tokens, so rows are exchangeable.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::diff::{Bound, Graph, ParamSet, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use crate::error::{Error, Result};

pub const EMBED_DIM: usize = 16;
const LN_EPS: f64 = 1e-5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    /// Per-token input and output length.
    pub len: usize,
    pub d: usize,
    pub heads: usize,
    pub blocks: usize,
    pub mlp_ratio: usize,
    /// Channels of the prefix fed to the encoder.
    pub channels: usize,
    pub n_tasks: usize,
    /// Largest width the duration embedding must resolve.
    pub max_width: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d == 0 || self.heads == 0 || !self.d.is_multiple_of(self.heads) {
            return Err(Error::Config(format!(
                "model dim {} not divisible into {} heads",
                self.d, self.heads
            )));
        }
        if self.len == 0 || self.channels == 0 || self.mlp_ratio == 0 {
            return Err(Error::Config("network sizes must be positive".into()));
        }
        Ok(())
    }
}

/// Summary of an observed prefix, or the learned null vector.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextVector {
    pub h: Vec<f64>,
    pub null_flag: bool,
}

/// Sine/cosine features of `x` at the given angular frequencies.
pub fn sinusoid(x: f64, freqs: &[f64]) -> Vec<f64> {
    freqs
        .iter()
        .flat_map(|f| [(x * f).sin(), (x * f).cos()])
        .collect()
}

fn width_freqs(max_width: f64) -> Vec<f64> {
    let n = EMBED_DIM / 2;
    let k = max_width.max(1.0);
    (0..n)
        .map(|i| std::f64::consts::PI / k * (2.0 * k).powf(i as f64 / (n - 1) as f64))
        .collect()
}

fn time_freqs() -> Vec<f64> {
    (0..EMBED_DIM / 2)
        .map(|i| std::f64::consts::FRAC_PI_2 * 2f64.powi(i as i32))
        .collect()
}

/// Standard sinusoidal positional table `[n, d]`.
pub fn positional_table(n: usize, d: usize) -> Tensor {
    let mut t = Tensor::zeros(&[n, d]);
    for p in 0..n {
        for i in 0..d {
            let rate = 10000f64.powf((2 * (i / 2)) as f64 / d as f64);
            let a = p as f64 / rate;
            t.set2(p, i, if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    t
}

/// `[M] → [M, 16]` sinusoidal embedding on the tape.
fn embed_op(g: &mut Graph, w: Var, freqs: Vec<f64>) -> Var {
    let wv = g.value(w).data().to_vec();
    let m = wv.len();
    let e = EMBED_DIM;
    let data = wv.iter().flat_map(|&x| sinusoid(x, &freqs)).collect();
    g.custom(&[w], Tensor::from_vec(&[m, e], data), move |go| {
        let dw = (0..m)
            .map(|j| {
                freqs
                    .iter()
                    .enumerate()
                    .map(|(i, f)| {
                        let a = wv[j] * f;
                        f * (a.cos() * go.at2(j, 2 * i) - a.sin() * go.at2(j, 2 * i + 1))
                    })
                    .sum()
            })
            .collect();
        vec![Some(Tensor::vector(dw))]
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct FlowNet {
    pub cfg: NetConfig,
    pub params: ParamSet,
}

impl FlowNet {
    pub fn new(cfg: NetConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let (l, d, e) = (cfg.len, cfg.d, EMBED_DIM);
        let h = cfg.mlp_ratio * d;
        let mut p = ParamSet::new();
        p.insert_linear("vel.in.w", l, d, rng);
        p.insert("vel.in.b", Tensor::zeros(&[d]));
        p.insert_linear("vel.psi.w", e, d, rng);
        p.insert_linear("vel.time1.w", e, d, rng);
        p.insert("vel.time1.b", Tensor::zeros(&[d]));
        p.insert_linear("vel.time2.w", d, d, rng);
        p.insert("vel.time2.b", Tensor::zeros(&[d]));
        for b in 0..cfg.blocks {
            p.insert_linear(&format!("vel.b{b}.qkv.w"), d, 3 * d, rng);
            p.insert_linear(&format!("vel.b{b}.proj.w"), d, d, rng);
            p.insert(format!("vel.b{b}.proj.b"), Tensor::zeros(&[d]));
            p.insert_linear(&format!("vel.b{b}.mlp1.w"), d, h, rng);
            p.insert(format!("vel.b{b}.mlp1.b"), Tensor::zeros(&[h]));
            p.insert_linear(&format!("vel.b{b}.mlp2.w"), h, d, rng);
            p.insert(format!("vel.b{b}.mlp2.b"), Tensor::zeros(&[d]));
            p.insert(format!("vel.b{b}.ada.w"), Tensor::zeros(&[d, 4 * d]));
            p.insert(format!("vel.b{b}.ada.b"), Tensor::zeros(&[4 * d]));
        }
        p.insert("vel.out.w", Tensor::zeros(&[d, l]));
        p.insert("vel.out.b", Tensor::zeros(&[l]));

        p.insert_linear("enc.in.w", cfg.channels, d, rng);
        p.insert("enc.in.b", Tensor::zeros(&[d]));
        p.insert_linear("enc.out.w", d, d, rng);
        p.insert("enc.out.b", Tensor::zeros(&[d]));
        let mut task = ParamSet::new();
        task.insert_linear("t", cfg.n_tasks.max(1), d, rng);
        p.insert("enc.task", task.get("t").unwrap().scale(0.1));
        let mut null = ParamSet::new();
        null.insert_linear("n", 1, d, rng);
        p.insert("enc.null", null.get("n").unwrap().clone().reshape(&[d])?);
        Ok(Self { cfg, params: p })
    }

    pub fn from_params(cfg: NetConfig, params: ParamSet) -> Result<Self> {
        cfg.validate()?;
        let reference = Self::new(cfg.clone(), &mut ChaCha8Rng::seed_from_u64(0))?;
        for (name, t) in reference.params.iter() {
            match params.get(name) {
                Some(p) if p.shape() == t.shape() => {}
                Some(p) => {
                    return Err(Error::CheckpointTensor {
                        name: name.into(),
                        msg: format!("shape {:?}, expected {:?}", p.shape(), t.shape()),
                    })
                }
                None => {
                    return Err(Error::CheckpointTensor {
                        name: name.into(),
                        msg: "missing".into(),
                    })
                }
            }
        }
        Ok(Self { cfg, params })
    }

    /// Velocity for tokens `zt [M, len]` with soft widths `widths [M]` and
    /// context `ctx [d]`.
    pub fn velocity_op(
        &self,
        g: &mut Graph,
        p: &Bound,
        zt: Var,
        t: f64,
        widths: Var,
        ctx: Var,
    ) -> Result<Var> {
        let cfg = &self.cfg;
        let d = cfg.d;
        let zshape = g.value(zt).shape().to_vec();
        if zshape.len() != 2 || zshape[1] != cfg.len {
            return Err(Error::Shape(format!(
                "velocity input {:?}, expected [M, {}]",
                zshape, cfg.len
            )));
        }
        let m = zshape[0];
        if g.value(widths).len() != m {
            return Err(Error::Shape(format!(
                "{} widths for {m} tokens",
                g.value(widths).len()
            )));
        }
        if g.value(ctx).len() != d {
            return Err(Error::Shape(format!("context length {}", g.value(ctx).len())));
        }

        let x = g.matmul(zt, p.var("vel.in.w"));
        let x = g.add_row(x, p.var("vel.in.b"));
        let psi = embed_op(g, widths, width_freqs(cfg.max_width));
        let psi = g.matmul(psi, p.var("vel.psi.w"));
        let x = g.add(x, psi);
        let te = g.constant(Tensor::from_vec(&[1, EMBED_DIM], sinusoid(t, &time_freqs())));
        let te = g.matmul(te, p.var("vel.time1.w"));
        let te = g.add_row(te, p.var("vel.time1.b"));
        let te = g.silu(te);
        let te = g.matmul(te, p.var("vel.time2.w"));
        let te = g.add_row(te, p.var("vel.time2.b"));
        let mut x = g.add_row(x, te);

        let c = g.reshape(ctx, &[1, d]);
        let c = g.silu(c);
        let dh = d / cfg.heads;
        let inv_sqrt = 1.0 / (dh as f64).sqrt();
        for b in 0..cfg.blocks {
            let name = |s: &str| format!("vel.b{b}.{s}");
            let ada = g.matmul(c, p.var(&name("ada.w")));
            let ada = g.add_row(ada, p.var(&name("ada.b")));
            let shift1 = g.slice_cols(ada, 0, d);
            let scale1 = g.slice_cols(ada, d, d);
            let shift2 = g.slice_cols(ada, 2 * d, d);
            let scale2 = g.slice_cols(ada, 3 * d, d);

            let a = modulate(g, x, shift1, scale1);
            let qkv = g.matmul(a, p.var(&name("qkv.w")));
            let mut heads = Vec::with_capacity(cfg.heads);
            for hi in 0..cfg.heads {
                let q = g.slice_cols(qkv, hi * dh, dh);
                let k = g.slice_cols(qkv, d + hi * dh, dh);
                let v = g.slice_cols(qkv, 2 * d + hi * dh, dh);
                let kt = g.transpose(k);
                let s = g.matmul(q, kt);
                let s = g.scale(s, inv_sqrt);
                let attn = g.softmax_rows(s);
                heads.push(g.matmul(attn, v));
            }
            let o = if heads.len() == 1 {
                heads[0]
            } else {
                g.concat_cols(&heads)
            };
            let o = g.matmul(o, p.var(&name("proj.w")));
            let o = g.add_row(o, p.var(&name("proj.b")));
            x = g.add(x, o);

            let a = modulate(g, x, shift2, scale2);
            let hdn = g.matmul(a, p.var(&name("mlp1.w")));
            let hdn = g.add_row(hdn, p.var(&name("mlp1.b")));
            let hdn = g.silu(hdn);
            let hdn = g.matmul(hdn, p.var(&name("mlp2.w")));
            let hdn = g.add_row(hdn, p.var(&name("mlp2.b")));
            x = g.add(x, hdn);
        }
        let x = g.layer_norm_rows(x, LN_EPS);
        let out = g.matmul(x, p.var("vel.out.w"));
        Ok(g.add_row(out, p.var("vel.out.b")))
    }

    /// Context `[d]` for prefix `[C, T_obs]`: per-timestep projection plus
    /// positional encoding, SiLU, mean over time, projection, plus the task
    /// embedding.
    pub fn encode_op(&self, g: &mut Graph, p: &Bound, prefix: &Tensor, task: Option<usize>) -> Result<Var> {
        let (c, t_obs) = prefix.dims2();
        let d = self.cfg.d;
        if c != self.cfg.channels || t_obs == 0 {
            return Err(Error::Shape(format!(
                "prefix {:?}, expected [{}, T_obs ≥ 1]",
                prefix.shape(),
                self.cfg.channels
            )));
        }
        let xs = g.constant(prefix.transpose2());
        let e = g.matmul(xs, p.var("enc.in.w"));
        let e = g.add_row(e, p.var("enc.in.b"));
        let pe = g.constant(positional_table(t_obs, d));
        let e = g.add(e, pe);
        let e = g.silu(e);
        let pooled = g.mean_rows(e);
        let pooled = g.reshape(pooled, &[1, d]);
        let h = g.matmul(pooled, p.var("enc.out.w"));
        let mut h = g.add_row(h, p.var("enc.out.b"));
        if let Some(ti) = task {
            let n = self.cfg.n_tasks.max(1);
            if ti >= n {
                return Err(Error::InvalidArgument(format!("task index {ti} ≥ {n}")));
            }
            let mut onehot = Tensor::zeros(&[1, n]);
            onehot.set2(0, ti, 1.0);
            let oh = g.constant(onehot);
            let emb = g.matmul(oh, p.var("enc.task"));
            h = g.add(h, emb);
        }
        Ok(g.reshape(h, &[d]))
    }

    pub fn velocity_forward(
        &self,
        zt: &Tensor,
        t: f64,
        widths: &[f64],
        h: Option<&ContextVector>,
    ) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g);
        let z = g.constant(zt.clone());
        let w = g.constant(Tensor::vector(widths.to_vec()));
        let ctx = match h {
            Some(h) => g.constant(Tensor::vector(h.h.clone())),
            None => p.var("enc.null"),
        };
        let v = self.velocity_op(&mut g, &p, z, t, w, ctx)?;
        Ok(g.value(v).clone())
    }

    pub fn encode_context(&self, prefix: &Tensor, task: Option<usize>) -> Result<ContextVector> {
        let mut g = Graph::new();
        let p = self.params.bind_const(&mut g);
        let h = self.encode_op(&mut g, &p, prefix, task)?;
        Ok(ContextVector {
            h: g.value(h).data().to_vec(),
            null_flag: false,
        })
    }

    pub fn null_context(&self) -> ContextVector {
        ContextVector {
            h: self.params.get("enc.null").unwrap().data().to_vec(),
            null_flag: true,
        }
    }

    /// Guided velocity; without a context only the null branch runs.
    pub fn guided_velocity(
        &self,
        zt: &Tensor,
        t: f64,
        widths: &[f64],
        h: Option<&ContextVector>,
        guidance: f64,
    ) -> Result<Tensor> {
        let vu = self.velocity_forward(zt, t, widths, None)?;
        match h {
            Some(h) if !h.null_flag => {
                let vc = self.velocity_forward(zt, t, widths, Some(h))?;
                Ok(super::state::cfg_combine(&vc, &vu, guidance))
            }
            _ => Ok(vu),
        }
    }
}

fn modulate(g: &mut Graph, x: Var, shift: Var, scale: Var) -> Var {
    let n = g.layer_norm_rows(x, LN_EPS);
    let s = g.add_scalar(scale, 1.0);
    let n = g.mul_row(n, s);
    g.add_row(n, shift)
}
