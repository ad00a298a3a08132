use primflow::data::{normalize, synth_generate, task_vocabulary, SynthSpec};
use primflow::diff::{Graph, Tensor};
use primflow::legality::EnergyBreakdown;
use primflow::primdict::ops::effective_atoms;
use primflow::trainer::{
    make_samples, sample_loss_op, train, utilization, LossBreakdown, Model, OptState, ParamVars, SampleDraw,
    TrainConfig, TrainSample, VelocitySource,
};

fn tiny_config(seed: u64) -> TrainConfig {
    TrainConfig {
        m: 3,
        k: 4,
        d: 8,
        heads: 2,
        blocks: 1,
        epochs: 3,
        batch_size: 5,
        seed,
        ..TrainConfig::default()
    }
}

fn tiny_data(n: usize, seed: u64) -> (Vec<TrainSample>, Model) {
    let spec = SynthSpec {
        l: 12,
        k: 4,
        n_trajectories: n,
        seed,
        ..SynthSpec::default()
    };
    let (data, _) = synth_generate(&spec).unwrap();
    let (normed, stats) = normalize(&data).unwrap();
    let tasks = task_vocabulary(&data);
    let samples = make_samples(&normed, &tasks).unwrap();
    let model = Model::init(tiny_config(seed), samples.len(), spec.c, spec.l, tasks, stats).unwrap();
    (samples, model)
}

fn trained(cfg: TrainConfig, n: usize, data_seed: u64) -> Model {
    let (samples, mut model) = tiny_data(n, data_seed);
    model = Model::init(cfg, samples.len(), model.channels(), model.len(), model.tasks.clone(), model.stats.clone())
        .unwrap();
    let mut opt = OptState::new(&model);
    train(&mut model, &mut opt, &samples, |_, _, _| Ok(())).unwrap();
    model
}

/// One sample's objective with the oracle velocity, plus its gradients with
/// respect to `[content, phi, gamma, logits]`.
struct Eval {
    loss: LossBreakdown,
    grads: [Tensor; 4],
}

fn objective(model: &Model, cfg: &TrainConfig, sample: &TrainSample, i: usize, logits: &Tensor, beta: f64) -> Eval {
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
    let lv = g.param(logits.clone());
    let draw = SampleDraw::new(cfg, cfg.m, model.len(), 0, i as u64);
    let vars = sample_loss_op(&mut g, cfg, VelocitySource::Oracle, &pv, &eff, lv, sample, &draw, beta).unwrap();
    let grads = g.backward(vars.total);
    let get = |v| grads.get(v).cloned().unwrap_or_else(|| Tensor::zeros(g.value(v).shape()));
    Eval {
        loss: vars.breakdown(&g, cfg, beta),
        grads: [get(content), get(phi), get(gamma), get(lv)],
    }
}

#[test]
fn breakdown_total_is_the_sum_of_its_parts() {
    let (samples, model) = tiny_data(8, 3);
    let cfg = model.config.clone();
    let p = cfg.geo();
    for (i, s) in samples.iter().enumerate() {
        for beta in [0.0, 0.5, 2.0] {
            let b = objective(&model, &cfg, s, i, &Tensor::full(&[cfg.m, model.len()], 0.3), beta).loss;
            let energy = |e: &EnergyBreakdown| e.rec + p.lambda_s * e.sparse + p.lambda_p * e.prim + p.lambda_g * e.geo;
            assert!((energy(&b.psi_dec) - b.psi_dec.total).abs() <= 1e-9);
            assert!((energy(&b.psi_flow) - b.psi_flow.total).abs() <= 1e-9);
            let sum = b.psi_dec.total + b.fm_residual + beta * b.psi_flow.total;
            assert!((sum - b.total).abs() <= 1e-9, "{sum} vs {}", b.total);
        }
    }
}

#[test]
fn oracle_velocity_without_flow_energy_leaves_only_the_decoder_term() {
    let (samples, model) = tiny_data(6, 4);
    let cfg = model.config.clone();
    for (i, s) in samples.iter().enumerate() {
        let b = objective(&model, &cfg, s, i, &Tensor::full(&[cfg.m, model.len()], 0.5), 0.0).loss;
        assert_eq!(b.fm_residual, 0.0);
        assert_eq!(b.total, b.psi_dec.total);
    }
}

#[test]
fn empty_placement_explains_a_flat_trajectory_for_free() {
    let (mut samples, model) = tiny_data(2, 5);
    let cfg = model.config.clone();
    samples[0].x = Tensor::zeros(samples[0].x.shape());
    let b = objective(&model, &cfg, &samples[0], 0, &Tensor::full(&[cfg.m, model.len()], -50.0), 1.0).loss;
    assert!(b.psi_dec.total.abs() <= 1e-15, "psi_dec {}", b.psi_dec.total);
    assert_eq!(b.psi_dec.rec, 0.0);
    assert_eq!(b.psi_dec.geo, 0.0);
}

#[test]
fn zero_learning_rates_freeze_every_parameter() {
    let cfg = TrainConfig {
        lr_dict: 0.0,
        lr_width: 0.0,
        lr_net: 0.0,
        lr_logits: 0.0,
        ..tiny_config(2)
    };
    let (samples, fresh) = tiny_data(10, 2);
    let fresh = Model::init(cfg.clone(), samples.len(), fresh.channels(), fresh.len(), fresh.tasks, fresh.stats).unwrap();
    let after = trained(cfg, 10, 2);
    assert!(after.step > 0);
    assert_eq!(after.dict, fresh.dict);
    assert_eq!(after.logits, fresh.logits);
    assert_eq!(after.net.params, fresh.net.params);
}

#[test]
fn same_seed_trains_bit_identically() {
    let a = trained(tiny_config(11), 10, 6);
    let b = trained(tiny_config(11), 10, 6);
    assert_eq!(a.dict, b.dict);
    assert_eq!(a.logits, b.logits);
    assert_eq!(a.net.params, b.net.params);
    let c = trained(tiny_config(12), 10, 6);
    assert_ne!(a.logits, c.logits);
}

#[test]
fn stronger_sparsity_never_raises_utilization() {
    let us: Vec<f64> = [0.0, 1.0, 20.0]
        .iter()
        .map(|&lambda_s| {
            let cfg = TrainConfig {
                lambda_s,
                epochs: 20,
                // start with every onset confident and see what survives
                logit_init: 0.5,
                ..tiny_config(1)
            };
            utilization(&trained(cfg, 30, 8))
        })
        .collect();
    assert!(us.windows(2).all(|w| w[1] <= w[0]), "utilization {us:?}");
    assert!(us[0] > us[2], "utilization {us:?}");
}

#[test]
fn one_oracle_step_lowers_the_decoder_energy() {
    let lr = 1e-2;
    let mut deltas: Vec<f64> = (0..20)
        .map(|trial| {
            let (samples, mut model) = tiny_data(4, 100 + trial);
            let cfg = TrainConfig { beta: 0.0, ..model.config.clone() };
            let logits: Vec<Tensor> = (0..samples.len())
                .map(|i| Tensor::full(&[cfg.m, model.len()], 0.5 * (i as f64) - 0.5))
                .collect();
            let batch_loss = |model: &Model, logits: &[Tensor]| {
                let evals: Vec<Eval> = samples
                    .iter()
                    .enumerate()
                    .map(|(i, s)| objective(model, &cfg, s, i, &logits[i], 0.0))
                    .collect();
                let mean = evals.iter().map(|e| e.loss.psi_dec.total).sum::<f64>() / evals.len() as f64;
                (mean, evals)
            };
            let (before, evals) = batch_loss(&model, &logits);
            let n = samples.len() as f64;
            let mut content = model.dict.content.clone();
            let mut phi = model.dict.phi.clone();
            let mut gamma = model.dict.gamma.clone();
            let mut stepped = logits.clone();
            for (e, l) in evals.iter().zip(stepped.iter_mut()) {
                content.axpy(-lr / n, &e.grads[0]);
                phi.axpy(-lr / n, &e.grads[1]);
                gamma.axpy(-lr / n, &e.grads[2]);
                l.axpy(-lr, &e.grads[3]);
            }
            model.dict.content = content;
            model.dict.phi = phi;
            model.dict.gamma = gamma;
            let (after, _) = batch_loss(&model, &stepped);
            after - before
        })
        .collect();
    deltas.sort_by(f64::total_cmp);
    let median = 0.5 * (deltas[9] + deltas[10]);
    assert!(median < 0.0, "median change {median:e}, deltas {deltas:?}");
}

#[test]
fn detaching_the_flow_path_changes_only_logit_gradients() {
    let (samples, model) = tiny_data(4, 7);
    let on = TrainConfig { flow_psi_to_logits: true, ..model.config.clone() };
    let off = TrainConfig { flow_psi_to_logits: false, ..on.clone() };
    let mut logit_diff = 0.0f64;
    for (i, s) in samples.iter().enumerate() {
        let logits = Tensor::full(&[on.m, model.len()], 0.2);
        let a = objective(&model, &on, s, i, &logits, 1.0);
        let b = objective(&model, &off, s, i, &logits, 1.0);
        assert_eq!(a.loss, b.loss);
        for k in 0..3 {
            let d = a.grads[k].zip_map(&b.grads[k], |x, y| (x - y).abs()).max_abs();
            assert!(d <= 1e-12, "parameter group {k} moved by {d:e}");
        }
        logit_diff = logit_diff.max(a.grads[3].zip_map(&b.grads[3], |x, y| x - y).max_abs());
    }
    assert!(logit_diff > 1e-9);
}
