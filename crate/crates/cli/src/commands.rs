use std::collections::HashMap;
use std::fs;
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use serde_json::json;

use primflow::data::{
    load_trajectories, normalize, save_trajectories, synth_generate, task_vocabulary, window, Format, SynthSpec,
    Trajectory,
};
use primflow::diff::Tensor;
use primflow::eval::{self, svg, BinSpec, Variant};
use primflow::flow::{generate, predict as forecast, SampleOptions};
use primflow::legality::{extract_events, psi_total};
use primflow::primdict::wta_gate;
use primflow::trainer::{
    gradient_suite, load_checkpoint, make_samples, save_checkpoint, write_metrics_csv, Checkpoint, Model,
    OptState, TrainConfig,
};

use crate::{
    AblateArgs, EvalArgs, EvalEnergyArgs, GradcheckArgs, InspectArgs, PredictArgs, SampleArgs, SamplingArgs,
    SynthArgs, TrainArgs, TrainConfigArgs,
};

fn load(path: &Path) -> Result<Vec<Trajectory>> {
    load_trajectories(path, Format::from_path(path)).with_context(|| format!("reading {}", path.display()))
}

fn read_ckpt(path: &Path) -> Result<Checkpoint> {
    load_checkpoint(path).with_context(|| format!("reading checkpoint {}", path.display()))
}

fn save(path: &Path, trajs: &[Trajectory]) -> Result<()> {
    save_trajectories(path, Format::from_path(path), trajs).with_context(|| format!("writing {}", path.display()))
}

fn print_json(value: &impl serde::Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

/// `base` unless a config file is given, then the `--set` overrides.
fn config(args: &TrainConfigArgs, base: TrainConfig) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(p) => TrainConfig::load(p).with_context(|| format!("reading {}", p.display()))?,
        None => base,
    };
    let pairs = args
        .set
        .iter()
        .map(|kv| {
            kv.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| anyhow!("override `{kv}` is not key=value"))
        })
        .collect::<Result<Vec<_>>>()?;
    cfg.apply_overrides(&pairs)?;
    cfg.validate()?;
    Ok(cfg)
}

fn sample_options(model: &Model, s: &SamplingArgs) -> SampleOptions {
    SampleOptions {
        steps: s.steps.unwrap_or(model.config.euler_steps),
        guidance: s.guidance.unwrap_or(model.config.guidance),
        sigma: model.config.sigma,
        threshold: 0.5,
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let mut spec: SynthSpec = match &a.spec {
        Some(p) => toml::from_str(&fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)
            .with_context(|| format!("parsing {}", p.display()))?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = a.seed {
        spec.seed = seed;
    }
    let (data, truth) = synth_generate(&spec)?;
    fs::create_dir_all(&a.out)?;
    let data_path = a.out.join(format!("data.{}", a.format));
    save(&data_path, &data)?;
    fs::write(a.out.join("truth.json"), serde_json::to_string_pretty(&truth)?)?;
    print_json(&json!({ "trajectories": data.len(), "data": data_path, "spec": spec }))
}

pub fn train(a: TrainArgs) -> Result<()> {
    let data = load(&a.data)?;
    let (mut model, mut opt) = match &a.resume {
        Some(p) => {
            let ck = read_ckpt(p)?;
            let mut model = ck.model;
            let mut cfg = config(&a.cfg, model.config.clone())?;
            // architecture must match the checkpoint
            cfg.m = model.config.m;
            cfg.k = model.config.k;
            cfg.d = model.config.d;
            cfg.heads = model.config.heads;
            cfg.blocks = model.config.blocks;
            cfg.mlp_ratio = model.config.mlp_ratio;
            model.config = cfg;
            (model, ck.opt)
        }
        None => {
            let cfg = config(&a.cfg, TrainConfig::default())?;
            let (normed, stats) = normalize(&data)?;
            let tasks = task_vocabulary(&data);
            let (c, l) = normed[0].points.dims2();
            let model = Model::init(cfg, normed.len(), c, l, tasks, stats)?;
            let opt = OptState::new(&model);
            (model, opt)
        }
    };
    let normed: Vec<Trajectory> = data
        .iter()
        .map(|t| Trajectory::new(t.id.clone(), t.task.clone(), model.stats.apply(&t.points)))
        .collect::<primflow::Result<_>>()?;
    let samples = make_samples(&normed, &model.tasks)?;
    let out = a.out.clone();
    let metrics = primflow::trainer::train(&mut model, &mut opt, &samples, |m, o, _| {
        save_checkpoint(
            &Checkpoint {
                model: m.clone(),
                opt: o.clone(),
            },
            &out,
        )
    })?;
    save_checkpoint(&Checkpoint { model: model.clone(), opt }, &a.out)?;
    if let Some(p) = &a.metrics {
        write_metrics_csv(p, &metrics)?;
    }
    let rmse = primflow::trainer::reconstruction_rmse(&model, &samples);
    print_json(&json!({
        "epochs": metrics.len(),
        "step": model.step,
        "final": metrics.last(),
        "reconstruction_rmse": rmse,
        "checkpoint": a.out,
    }))
}

pub fn predict(a: PredictArgs) -> Result<()> {
    if a.best_of == 0 {
        bail!("--best-of must be at least 1");
    }
    let model = read_ckpt(&a.ckpt)?.model;
    let t_obs = model.config.t_obs;
    if t_obs == 0 {
        bail!("checkpoint was trained unconditionally (t_obs = 0); use `sample`");
    }
    let l = model.len();
    let windows = window(&load(&a.data)?, l, t_obs, l)?;
    if windows.is_empty() {
        bail!("no trajectory in {} has {l} points", a.data.display());
    }
    let opts = sample_options(&model, &a.sampling);
    let dict = model.effective();
    let mut preds = Vec::with_capacity(windows.len());
    let mut gts = Vec::with_capacity(windows.len());
    let mut fallbacks = 0;
    for (i, w) in windows.iter().enumerate() {
        let prefix = model.stats.apply(&w.observed);
        let task = model.task_index(&w.task);
        let mut best: Option<(f64, primflow::flow::Prediction)> = None;
        for j in 0..a.best_of {
            let seed = a.sampling.seed + (i * a.best_of + j) as u64;
            let p = forecast(&model.net, &dict, model.dict.gamma.data(), &model.stats, &prefix, task, &opts, seed)?;
            let score = eval::ade(&p.future, &w.future)?;
            if best.as_ref().is_none_or(|(s, _)| score < *s) {
                best = Some((score, p));
            }
        }
        let (_, p) = best.unwrap();
        fallbacks += p.fallback as usize;
        let id = format!("{}@{}", w.source_id, w.offset);
        preds.push(Trajectory::new(id.clone(), w.task.clone(), p.future)?);
        gts.push(Trajectory::new(id, w.task.clone(), w.future.clone())?);
    }
    save(&a.out, &preds)?;
    if let Some(p) = &a.gt_out {
        save(p, &gts)?;
    }
    let report = eval::evaluate(
        &preds.iter().map(|t| t.points.clone()).collect::<Vec<_>>(),
        &gts.iter().map(|t| t.points.clone()).collect::<Vec<_>>(),
    )?;
    print_json(&json!({ "metrics": report, "fallbacks": fallbacks, "best_of": a.best_of }))
}

pub fn sample(a: SampleArgs) -> Result<()> {
    let model = read_ckpt(&a.ckpt)?.model;
    let opts = sample_options(&model, &a.sampling);
    let dict = model.effective();
    let mut out = Vec::with_capacity(a.n);
    let mut first = None;
    for i in 0..a.n {
        let g = generate(&model.net, &dict, model.dict.gamma.data(), None, &opts, a.sampling.seed + i as u64)?;
        let points = model.stats.invert(&g.trajectory);
        if first.is_none() {
            first = Some((points.clone(), g.gate.clone()));
        }
        out.push(Trajectory::new(format!("sample{i}"), "generated", points)?);
    }
    save(&a.out, &out)?;
    if let (Some(p), Some((x, gate))) = (&a.svg, &first) {
        fs::write(p, svg::tiled_svg(x, gate))?;
    }
    let jsd = match &a.reference {
        Some(p) => {
            let real: Vec<Tensor> = load(p)?.into_iter().map(|t| t.points).collect();
            let bins = BinSpec::standard(&real)?;
            let gen: Vec<Tensor> = out.iter().map(|t| t.points.clone()).collect();
            Some(eval::jsd(&gen, &real, &bins)?.jsd_bits)
        }
        None => None,
    };
    print_json(&json!({ "samples": a.n, "out": a.out, "jsd_bits": jsd }))
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let pred = load(&a.pred)?;
    let gt = load(&a.gt)?;
    let by_id: HashMap<&str, &Trajectory> = gt.iter().map(|t| (t.id.as_str(), t)).collect();
    if pred.len() != gt.len() {
        bail!("{} predictions but {} ground-truth trajectories", pred.len(), gt.len());
    }
    let mut ps = Vec::with_capacity(pred.len());
    let mut gs = Vec::with_capacity(pred.len());
    for p in &pred {
        let g = by_id
            .get(p.id.as_str())
            .ok_or_else(|| anyhow!("no ground truth for prediction `{}`", p.id))?;
        ps.push(p.points.clone());
        gs.push(g.points.clone());
    }
    let metrics = eval::evaluate(&ps, &gs)?;
    let jsd = if a.jsd {
        Some(eval::jsd(&ps, &gs, &BinSpec::standard(&gs)?)?)
    } else {
        None
    };
    let report = json!({ "metrics": metrics, "jsd": jsd });
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&report)?)?;
    }
    print_json(&report)
}

pub fn eval_energy(a: EvalEnergyArgs) -> Result<()> {
    let model = read_ckpt(&a.ckpt)?.model;
    let trajs = load(&a.traj)?;
    let traj = match &a.id {
        Some(id) => trajs
            .iter()
            .find(|t| &t.id == id)
            .ok_or_else(|| anyhow!("no trajectory `{id}` in {}", a.traj.display()))?,
        None => trajs.first().ok_or_else(|| anyhow!("{} is empty", a.traj.display()))?,
    };
    let events: Vec<(usize, usize, f64)> = serde_json::from_str(&fs::read_to_string(&a.placement)?)
        .context("placement must be a JSON list of [atom, onset, prob]")?;
    let (m, l) = (model.config.m, traj.len());
    let mut r = Tensor::zeros(&[m, l]);
    for &(j, k, p) in &events {
        if j >= m || k >= l || !(0.0..=1.0).contains(&p) {
            bail!("event ({j}, {k}, {p}) outside a {m}x{l} placement with probabilities in [0, 1]");
        }
        r.set2(j, k, p);
    }
    let dict = model.effective();
    if dict.max_width() > l {
        bail!("trajectory of {l} points is shorter than the atom extent {}", dict.max_width());
    }
    let x = model.stats.apply(&traj.points);
    let gate = wta_gate(&r, &dict.widths, &r, model.dict.gamma.data());
    let breakdown = psi_total(&r, &gate, &x, &dict, &model.config.geo());
    if let Some(p) = &a.svg {
        fs::write(p, svg::timeline_svg(&extract_events(&r, &dict), m, l))?;
    }
    print_json(&breakdown)
}

pub fn inspect_dict(a: InspectArgs) -> Result<()> {
    let model = read_ckpt(&a.ckpt)?.model;
    let dict = model.effective();
    fs::write(&a.out, svg::atoms_svg(&dict))?;
    print_json(&json!({
        "atoms": dict.n_atoms(),
        "widths": dict.widths,
        "soft_widths": dict.soft_widths,
        "priorities": model.dict.gamma.data(),
        "svg": a.out,
    }))
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let reports = gradient_suite(a.seed, a.eps)?;
    print_json(&reports)?;
    if let Some(bad) = reports.iter().find(|r| !r.report.passes(1e-4)) {
        bail!("{} exceeds relative error 1e-4: {:e}", bad.term, bad.report.max_rel_err);
    }
    Ok(())
}

pub fn ablate(a: AblateArgs) -> Result<()> {
    let cfg = config(&a.cfg, TrainConfig::default())?;
    let variants = a
        .variants
        .split(',')
        .map(|s| Variant::parse(s.trim()))
        .collect::<primflow::Result<Vec<_>>>()?;
    if !(0.0..1.0).contains(&a.test_frac) || a.test_frac == 0.0 {
        bail!("--test-frac must be in (0, 1)");
    }
    let data = load(&a.data)?;
    let n_test = ((data.len() as f64 * a.test_frac).round() as usize).clamp(1, data.len() - 1);
    let (train_set, test_set) = data.split_at(data.len() - n_test);
    let opts = SampleOptions {
        steps: a.sampling.steps.unwrap_or(cfg.euler_steps),
        guidance: a.sampling.guidance.unwrap_or(cfg.guidance),
        sigma: cfg.sigma,
        threshold: 0.5,
    };
    let table = eval::run_ablation(train_set, test_set, &cfg, &variants, &opts)?;
    eprint!("{}", table.to_text());
    if let Some(p) = &a.out {
        fs::write(p, serde_json::to_string_pretty(&table)?)?;
    }
    print_json(&table)
}
