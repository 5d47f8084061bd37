use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xraydx_core::autograd::{Mode, Tape, Tensor};
use xraydx_core::data::{normalize_batch, ChannelStats, Dataset, Vocabulary};
use xraydx_core::losses::{binary_cross_entropy_with_logits, Reduction};
use xraydx_core::model::{GradScope, MiniDenseNet, ModelSpec, TaskKind};
use xraydx_core::optim::{lr_sequence, Adam, AdamConfig, LrFinderConfig, OneCycle};
use xraydx_core::synth::{self, SynthConfig};
use xraydx_core::train::{evaluate, evaluate_scores, find_lr, train_two_phase, EvalReport, Task, TrainConfig, TrainError};

fn small_spec(classes: usize) -> ModelSpec {
    ModelSpec { input_size: 32, head_hidden: 64, ..ModelSpec::desk(classes) }
}

fn corpus(n: usize, seed: u64) -> Dataset {
    let cfg = SynthConfig { n_images: n, size: 32, seed, ..SynthConfig::default() };
    synth::to_dataset(&synth::generate(&cfg), 32)
}

fn model(seed: u64) -> MiniDenseNet {
    MiniDenseNet::build(small_spec(4), TaskKind::MultiLabel, synth::vocabulary().names().to_vec(), seed).unwrap()
}

fn quick_config(phase2: usize) -> TrainConfig {
    let mut cfg = TrainConfig::new(Task::MultiLabel).with_lr((4e-4, 1e-2));
    cfg.epochs_phase1 = 2;
    cfg.epochs_phase2 = phase2;
    cfg.batch_size = 16;
    cfg.seed = 3;
    cfg
}

fn bits(m: &MiniDenseNet) -> Vec<u64> {
    m.params().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits())).collect()
}

#[test]
fn without_phase_two_the_result_is_the_checkpoint() {
    let data = corpus(50, 1);
    let mut m = model(0);
    let out = train_two_phase(&mut m, &data, &quick_config(0)).unwrap();
    assert_eq!(bits(&m), bits(&out.phase1));
    assert_eq!(m.params().stats(), out.phase1.params().stats());
    assert!(out.history.rows.iter().all(|r| r.phase == 1));
}

/// Each phase's lr and momentum trace is the one-cycle schedule itself.
#[test]
fn history_follows_the_schedule_exactly() {
    let data = corpus(50, 2);
    let cfg = quick_config(1);
    let mut m = model(1);
    let out = train_two_phase(&mut m, &data, &cfg).unwrap();
    // 50 images at batch 16: 16, 16, 16 and a usable tail of 2
    let per_epoch = 4;
    for (phase, epochs, lr) in [(1u8, cfg.epochs_phase1, cfg.lr_phase1), (2, cfg.epochs_phase2, cfg.lr_phase2)] {
        let rows: Vec<_> = out.history.rows.iter().filter(|r| r.phase == phase).collect();
        assert_eq!(rows.len(), per_epoch * epochs);
        let sched = OneCycle::new(per_epoch * epochs, lr, cfg.momentum, cfg.warmup_fraction).unwrap();
        for (i, r) in rows.iter().enumerate() {
            let s = sched.at(i);
            assert_eq!((r.lr, r.momentum), (s.lr, s.momentum), "phase {phase} iteration {i}");
        }
    }
    // phase 2 leaves the body alone
    assert!(m
        .params()
        .iter()
        .filter(|p| p.name.starts_with("body."))
        .all(|p| p.frozen && out.phase1.params().get(&p.name).unwrap().value == p.value));
}

#[test]
fn identical_runs_reproduce_bit_for_bit() {
    let data = corpus(40, 3);
    let run = || {
        let mut m = model(5);
        let out = train_two_phase(&mut m, &data, &quick_config(1)).unwrap();
        (out.history, bits(&m))
    };
    let (a, b) = (run(), run());
    assert_eq!(a.0.to_csv(), b.0.to_csv());
    assert_eq!(a.1, b.1);
}

#[test]
fn divergence_restores_the_last_good_epoch() {
    let mut data = corpus(40, 4);
    data.images[17].data_mut()[5] = f64::NAN;
    let mut m = model(2);
    let before = bits(&m);
    let err = train_two_phase(&mut m, &data, &quick_config(0)).err().expect("diverges");
    assert!(matches!(err, TrainError::Diverged { phase: 1, .. }), "{err}");
    assert_eq!(bits(&m), before);
    assert_eq!(m.input_stats(), model(2).input_stats());
}

/// Fixed 32-image batch, constant lr 1e-3, desk-scale spec: the loss must
/// come down within 50 steps.
#[test]
fn loss_falls_on_a_fixed_batch() {
    let cfg = SynthConfig { n_images: 32, seed: 9, ..SynthConfig::default() };
    let data = synth::to_dataset(&synth::generate(&cfg), 64);
    let images = Tensor::stack(&data.images).unwrap();
    let y = Tensor::from_fn(&[32, 4], |i| f64::from(data.targets[i / 4][i % 4]));
    for seed in 0..3 {
        let mut m = MiniDenseNet::build(ModelSpec::desk(4), TaskKind::MultiLabel, data.vocab.names().to_vec(), seed).unwrap();
        let mut adam = Adam::new(m.params(), AdamConfig::default());
        let mut stats = ChannelStats::identity(3);
        let (x, _) = normalize_batch(&images, Mode::Train, &mut stats).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut losses = Vec::new();
        for _ in 0..50 {
            let tape = Tape::new();
            let out = m.forward(&tape, tape.constant(x.clone()), Mode::Train, GradScope::Trainable, &mut rng).unwrap();
            let loss = binary_cross_entropy_with_logits(&tape, out.logits, &y, None, None, Reduction::Mean).unwrap();
            losses.push(tape.value(loss).item());
            tape.backward(loss).unwrap();
            let grads: Vec<_> = out.params.iter().map(|&v| tape.grad(v)).collect();
            adam.step(m.params_mut(), &grads, 1e-3, None).unwrap();
        }
        let head: f64 = losses[..5].iter().sum::<f64>() / 5.0;
        let tail: f64 = losses[45..].iter().sum::<f64>() / 5.0;
        assert!(tail < 0.5 * head, "seed {seed}: {head} -> {tail}");
    }
}

/// An untrained network on noise with coin-flip labels has no signal: its
/// macro AUC averages to one half.
#[test]
fn null_model_auc_band() {
    let vocab = Vocabulary::new(vec!["a".into(), "b".into()]).unwrap();
    let m = MiniDenseNet::build(small_spec(2), TaskKind::MultiLabel, vocab.names().to_vec(), 11).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut aucs = Vec::new();
    for _ in 0..20 {
        let n = 120;
        let data = Dataset {
            vocab: vocab.clone(),
            images: (0..n).map(|_| Tensor::from_fn(&[3, 32, 32], |_| rng.random_range(-1.0..1.0))).collect(),
            targets: (0..n).map(|i| vec![(i % 2) as u8, u8::from(rng.random::<bool>())]).collect(),
            paths: (0..n).map(|i| i.to_string()).collect(),
        };
        aucs.push(evaluate(&m, &data, Task::MultiLabel).unwrap().macro_auc().unwrap());
    }
    let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
    assert!((mean - 0.5).abs() <= 0.05, "{mean} from {aucs:?}");
}

fn oracle_report() -> EvalReport {
    let truth: Vec<Vec<u8>> = (0..30).map(|i| vec![(i % 2) as u8, u8::from(i % 3 == 0), u8::from(i % 5 < 2)]).collect();
    let scores: Vec<Vec<f64>> = truth.iter().map(|r| r.iter().map(|&b| 0.1 + 0.8 * f64::from(b)).collect()).collect();
    let names: Vec<String> = ["x", "y", "z"].iter().map(|s| s.to_string()).collect();
    evaluate_scores(&scores, &truth, &names, Task::MultiLabel).unwrap()
}

#[test]
fn perfect_scores_give_perfect_curves() {
    let r = oracle_report();
    assert!(r.undefined.is_empty());
    for c in &r.per_class {
        assert_eq!((c.auc, c.ap, c.f1), (Some(1.0), Some(1.0), 1.0), "{}", c.name);
    }
    assert_eq!(r.macro_auc(), Some(1.0));
    assert_eq!(r.micro_auc(), Some(1.0));
    assert_eq!(r.pr_micro.as_ref().unwrap().summary, 1.0);
}

#[test]
fn report_json_round_trip() {
    let r = oracle_report();
    let json = serde_json::to_string(&r).unwrap();
    let back: EvalReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, r);
    assert_eq!(serde_json::to_string(&back).unwrap(), json);
}

#[test]
fn single_class_column_is_marked_undefined() {
    let truth: Vec<Vec<u8>> = (0..10).map(|i| vec![(i % 2) as u8, 0]).collect();
    let scores: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0, 0.3]).collect();
    let names = vec!["x".to_string(), "y".to_string()];
    let r = evaluate_scores(&scores, &truth, &names, Task::MultiLabel).unwrap();
    assert!(r.per_class[0].auc.is_some());
    assert!(r.per_class[1].auc.is_none());
    assert!(r.undefined.iter().any(|u| u.starts_with("y ROC")));
    assert!(r.micro_auc().is_some());
}

/// 50 images at batch 16 give 4 batches per pass, so weight decay first acts
/// after the 4th point.
#[test]
fn lr_finder_walks_the_sequence_and_feels_weight_decay() {
    let data = corpus(50, 4);
    let m = model(2);
    let before = bits(&m);
    let finder = LrFinderConfig { divergence: 1e9, ..LrFinderConfig::new(1e-5, 1e-1, 12) };
    let run = |wd: f64| {
        let cfg = TrainConfig { weight_decay: wd, ..quick_config(0) };
        find_lr(&m, &data, &cfg, &finder).unwrap()
    };
    let plain = run(0.0);
    assert_eq!(bits(&m), before);
    assert!(!plain.stopped_early);
    let lrs: Vec<f64> = plain.points.iter().map(|p| p.0).collect();
    assert_eq!(lrs, lr_sequence(1e-5, 1e-1, 12));
    assert_eq!(run(0.0), plain);

    let decayed = run(0.5);
    assert_eq!(decayed.points[..4], plain.points[..4]);
    assert_ne!(decayed.points[4..], plain.points[4..]);
}
