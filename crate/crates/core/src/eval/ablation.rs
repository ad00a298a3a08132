use std::fmt::Write as _;
use std::time::Instant;

use serde::Serialize;

use super::dense::{train_dense, DenseModel};
use super::metrics::{evaluate, MetricReport};
use crate::data::{normalize, slice_cols, task_vocabulary, Trajectory};
use crate::diff::Tensor;
use crate::error::{Error, Result};
use crate::flow::{predict, SampleOptions};
use crate::primdict::MaskMode;
use crate::trainer::{make_samples, Model, OptState, TrainConfig};

/// One row of the ablation table. Every variant shares data, seeds and the
/// training protocol; only the named mechanism changes.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum Variant {
    Base,
    /// Mask fixed to all ones, so every atom spans `K`.
    NoMask,
    /// Dense flow matching on the raw future.
    NoPrimitives,
    /// The base model with `M` atoms.
    DictSize(usize),
}

impl Variant {
    pub fn label(&self) -> String {
        match self {
            Variant::Base => "base".into(),
            Variant::NoMask => "no_mask".into(),
            Variant::NoPrimitives => "no_primitives".into(),
            Variant::DictSize(m) => format!("m={m}"),
        }
    }

    /// Parses `base`, `no_mask`, `no_primitives` or `m=<count>`.
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "no_mask" => Ok(Variant::NoMask),
            "no_primitives" => Ok(Variant::NoPrimitives),
            _ => s
                .strip_prefix("m=")
                .and_then(|m| m.parse().ok())
                .filter(|&m| m > 0)
                .map(Variant::DictSize)
                .ok_or_else(|| Error::InvalidArgument(format!("unknown ablation variant `{s}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationRow {
    pub variant: String,
    pub report: Option<MetricReport>,
    /// Set when the variant failed to train or evaluate.
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

impl AblationTable {
    pub fn row(&self, variant: &Variant) -> Option<&AblationRow> {
        let label = variant.label();
        self.rows.iter().find(|r| r.variant == label)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{:<16} {:>10} {:>10} {:>8} {:>8}\n", "variant", "ADE", "FDE", "ratio", "secs");
        for r in &self.rows {
            match (&r.report, &r.error) {
                (Some(m), _) => {
                    let ratio = m.ratio.map_or("n/a".to_string(), |v| format!("{v:.3}"));
                    let _ = writeln!(
                        out,
                        "{:<16} {:>10.4} {:>10.4} {:>8} {:>8.1}",
                        r.variant, m.ade, m.fde, ratio, r.seconds
                    );
                }
                (None, e) => {
                    let _ = writeln!(out, "{:<16} failed: {}", r.variant, e.as_deref().unwrap_or("?"));
                }
            }
        }
        out
    }
}

/// Single-sample forecasts of a trained compositional model on held-out
/// windows, scored in data units. Sample `i` uses seed `seed + i`.
pub fn forecast_report(model: &Model, test: &[Trajectory], opts: &SampleOptions, seed: u64) -> Result<MetricReport> {
    let t_obs = model.config.t_obs;
    let dict = model.effective();
    let mut preds = Vec::with_capacity(test.len());
    let mut gts = Vec::with_capacity(test.len());
    for (i, tr) in test.iter().enumerate() {
        let (prefix, gt) = split(tr, t_obs, model.len())?;
        let p = predict(
            &model.net,
            &dict,
            model.dict.gamma.data(),
            &model.stats,
            &model.stats.apply(&prefix),
            model.task_index(&tr.task),
            opts,
            seed + i as u64,
        )?;
        preds.push(p.future);
        gts.push(gt);
    }
    evaluate(&preds, &gts)
}

/// Same protocol as [`forecast_report`] for the dense baseline.
pub fn dense_forecast_report(
    model: &DenseModel,
    tasks: &[String],
    test: &[Trajectory],
    opts: &SampleOptions,
    seed: u64,
) -> Result<MetricReport> {
    let t_obs = model.config.t_obs;
    let l = t_obs + model.net.cfg.len;
    let mut preds = Vec::with_capacity(test.len());
    let mut gts = Vec::with_capacity(test.len());
    for (i, tr) in test.iter().enumerate() {
        let (prefix, gt) = split(tr, t_obs, l)?;
        let task = tasks.iter().position(|t| *t == tr.task);
        let p = model.predict(Some((&model.stats.apply(&prefix), task)), opts, seed + i as u64)?;
        preds.push(p);
        gts.push(gt);
    }
    evaluate(&preds, &gts)
}

fn split(tr: &Trajectory, t_obs: usize, l: usize) -> Result<(Tensor, Tensor)> {
    if tr.len() != l || t_obs == 0 {
        return Err(Error::Shape(format!(
            "test window {} has length {}, expected {l} with a nonempty prefix",
            tr.id,
            tr.len()
        )));
    }
    Ok((slice_cols(&tr.points, 0, t_obs), slice_cols(&tr.points, t_obs, l - t_obs)))
}

/// Trains a compositional model on `train` with `config` from scratch.
pub fn train_model(train: &[Trajectory], config: &TrainConfig) -> Result<Model> {
    let (normed, stats) = normalize(train)?;
    let tasks = task_vocabulary(train);
    let samples = make_samples(&normed, &tasks)?;
    let (c, l) = samples[0].x.dims2();
    let mut model = Model::init(config.clone(), samples.len(), c, l, tasks, stats)?;
    let mut opt = OptState::new(&model);
    crate::trainer::train(&mut model, &mut opt, &samples, |_, _, _| Ok(()))?;
    Ok(model)
}

/// Trains the dense baseline with the same normalization and protocol.
pub fn train_dense_model(train: &[Trajectory], config: &TrainConfig) -> Result<(DenseModel, Vec<String>)> {
    let (normed, stats) = normalize(train)?;
    let tasks = task_vocabulary(train);
    let samples = make_samples(&normed, &tasks)?;
    Ok((train_dense(&samples, &stats, tasks.len(), config)?, tasks))
}

fn run_variant(
    train: &[Trajectory],
    test: &[Trajectory],
    base: &TrainConfig,
    variant: &Variant,
    opts: &SampleOptions,
) -> Result<MetricReport> {
    let seed = base.seed;
    match variant {
        Variant::NoPrimitives => {
            let (m, tasks) = train_dense_model(train, base)?;
            dense_forecast_report(&m, &tasks, test, opts, seed)
        }
        _ => {
            let mut cfg = base.clone();
            match *variant {
                Variant::NoMask => cfg.mask = MaskMode::Off,
                Variant::DictSize(m) => cfg.m = m,
                _ => {}
            }
            let model = train_model(train, &cfg)?;
            forecast_report(&model, test, opts, seed)
        }
    }
}

/// Trains and scores every variant on a conditional task (`t_obs > 0`).
/// A variant that fails is recorded and the rest still run.
pub fn run_ablation(
    train: &[Trajectory],
    test: &[Trajectory],
    base: &TrainConfig,
    variants: &[Variant],
    opts: &SampleOptions,
) -> Result<AblationTable> {
    if base.t_obs == 0 {
        return Err(Error::Config("ablation needs a conditional task (t_obs > 0)".into()));
    }
    if test.is_empty() {
        return Err(Error::InvalidArgument("empty test set".into()));
    }
    let mut rows = Vec::with_capacity(variants.len());
    for v in variants {
        let start = Instant::now();
        let result = run_variant(train, test, base, v, opts);
        if let Err(e) = &result {
            log::warn!("ablation variant {} failed: {e}", v.label());
        }
        rows.push(AblationRow {
            variant: v.label(),
            seconds: start.elapsed().as_secs_f64(),
            error: result.as_ref().err().map(|e| e.to_string()),
            report: result.ok(),
        });
    }
    Ok(AblationTable { rows })
}
