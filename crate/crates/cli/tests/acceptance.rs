//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! fails. Runs without the libtest harness so the lines reach the terminal.
//!
//!     cargo test --release -p xraydx-cli --test acceptance

#[path = "../../core/tests/common/mod.rs"]
mod core_common;
#[path = "../../service/tests/common/mod.rs"]
mod service_common;
mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use xraydx_core::data::{read_label_csv, write_label_csv, Dataset, LabelRow, LabelTable, Vocabulary};
use xraydx_core::gradcam::gradcam;
use xraydx_core::metrics::{f1_score, pr_curve, roc_curve, F1Average};
use xraydx_core::model::{self, MiniDenseNet, ModelSpec, TaskKind};
use xraydx_core::optim::{lr_sequence, OneCycle};
use xraydx_core::synth::{self, SynthSample, SYNTH_LABELS};
use xraydx_core::train::{evaluate, predict_dataset, train_two_phase, Task, TrainConfig, Weighting};

type Check = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        if !$cond {
            return Err(format!($($fmt)+));
        }
    };
}

const TRAIN_BUDGET: Duration = Duration::from_secs(600);
const VALID: usize = 400;

// --- the synthetic corpus and the runs shared by several criteria

struct Corpus {
    samples: Vec<SynthSample>,
    train: Dataset,
    valid: Dataset,
}

fn corpus(seed: u64) -> Corpus {
    let samples = synth::generate(&synth::SynthConfig { seed: 1000 + seed, ..Default::default() });
    let data = synth::to_dataset(&samples, 64);
    let valid = data.subset(&(0..VALID).collect::<Vec<_>>());
    let train = data.subset(&(VALID..data.len()).collect::<Vec<_>>());
    Corpus { samples, train, valid }
}

fn fit(c: &Corpus, seed: u64, epochs: usize, weighting: Weighting) -> Result<(MiniDenseNet, Duration), String> {
    let labels = SYNTH_LABELS.iter().map(|s| s.to_string()).collect();
    let mut m = MiniDenseNet::build(ModelSpec::desk(4), TaskKind::MultiLabel, labels, seed).map_err(|e| e.to_string())?;
    let mut config = TrainConfig::new(Task::MultiLabel).with_lr((4e-4, 1e-2));
    config.epochs_phase1 = epochs;
    config.epochs_phase2 = 0;
    config.seed = seed;
    config.weighting = weighting;
    let start = Instant::now();
    train_two_phase(&mut m, &c.train, &config).map_err(|e| e.to_string())?;
    Ok((m, start.elapsed()))
}

// --- criteria

fn gradients() -> Check {
    let start = Instant::now();
    let (mut op_worst, mut net_worst, mut trials) = (0.0f64, 0.0f64, 0);
    for seed in 0..100 {
        for case in core_common::ops::cases(seed) {
            let e = case.max_error();
            ensure!(e < core_common::ops::OP_TOLERANCE, "{} seed {seed}: {e:e}", case.name);
            op_worst = op_worst.max(e);
            trials += 1;
        }
        let e = core_common::ops::network_error(seed, 4);
        ensure!(e < core_common::ops::NET_TOLERANCE, "network seed {seed}: {e:e}");
        net_worst = net_worst.max(e);
    }
    let t = start.elapsed();
    ensure!(t < Duration::from_secs(120), "took {t:.1?}");
    Ok(format!("{trials} op checks worst {op_worst:.1e}, 100 network checks worst {net_worst:.1e}, {t:.1?}"))
}

fn metrics_oracle() -> Check {
    use core_common::oracle::*;
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst = 0.0f64;
    for i in 0..1000 {
        let (s, t) = instance(&mut rng);
        ensure!(s.len() <= 50, "instance {i} has {} samples", s.len());
        let auc = roc_curve(&s, &t).map_err(|e| e.to_string())?.summary;
        let d = (auc - mann_whitney(&s, &t)).abs();
        ensure!(d < 1e-9, "AUC instance {i} off by {d:e}");
        worst = worst.max(d);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut f1_worst = 0.0f64;
    for i in 0..500 {
        let (pred, truth, w, weighted) = f1_instance(&mut rng, i);
        let sw = weighted.then_some(w.as_slice());
        let p2: Vec<Vec<u8>> = pred.iter().map(|r| r[..2].to_vec()).collect();
        let t2: Vec<Vec<u8>> = truth.iter().map(|r| r[..2].to_vec()).collect();
        let modes = [F1Average::Micro, F1Average::Macro, F1Average::Weighted, F1Average::Samples];
        for mode in modes {
            let got = f1_score(&pred, &truth, mode, sw).map_err(|e| e.to_string())?.value.ok_or("no value")?;
            f1_worst = f1_worst.max((got - brute_f1(&pred, &truth, mode, &w)).abs());
        }
        let binary = F1Average::Binary { positive: 1 };
        let got = f1_score(&p2, &t2, binary, sw).map_err(|e| e.to_string())?.value.ok_or("no value")?;
        f1_worst = f1_worst.max((got - brute_f1(&p2, &t2, binary, &w)).abs());
        ensure!(f1_worst < 1e-12, "F1 instance {i} off by {f1_worst:e}");
    }
    Ok(format!("AUC worst {worst:.1e} over 1000, five F1 modes worst {f1_worst:.1e} over 500"))
}

fn published_arithmetic() -> Check {
    use core_common::published::*;
    let f1 = macro_f1();
    ensure!((f1 - MACRO_F1).abs() < MACRO_F1_TOLERANCE, "macro F1 {f1}");
    let sizes = split_sizes();
    ensure!(sizes == (TRAIN, VALID), "split {sizes:?}");
    let w = validation_weights();
    let e = weight_error();
    ensure!(e < WEIGHT_TOLERANCE, "weights {w:?}, error {e:.4}");
    Ok(format!("macro F1 {f1:.10}, split {}/{}, weights ({:.4}, {:.4})", sizes.0, sizes.1, w[0], w[1]))
}

fn schedule() -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for _ in 0..500 {
        let init = 10f64.powf(rng.random_range(-9.0..-3.0));
        let max = init * 10f64.powf(rng.random_range(0.2..6.0));
        let n = rng.random_range(1..300);
        let seq = lr_sequence(init, max, n);
        ensure!(seq.len() == n + 1 && seq[0] == init && seq[n] == max, "endpoints of ({init}, {max}, {n})");
        let q = (max / init).powf(1.0 / n as f64);
        for w in seq.windows(2) {
            ensure!(((w[1] / w[0]) / q - 1.0).abs() < 1e-12, "ratio drift in ({init}, {max}, {n})");
        }

        let total = rng.random_range(3..600);
        let low = 10f64.powf(rng.random_range(-6.0..-2.0));
        let high = low * rng.random_range(1.5..100.0);
        let sched = OneCycle::new(total, (low, high), (0.85, 0.95), rng.random_range(0.05..0.95)).map_err(|e| e.to_string())?;
        let (first, peak, last) = (sched.at(0), sched.at(sched.peak()), sched.at(total - 1));
        ensure!(first.lr == low && first.momentum == 0.95, "start {first:?}");
        ensure!(peak.lr == high && peak.momentum == 0.85, "peak {peak:?}");
        ensure!(last.lr == low / 25.0 && last.momentum == 0.95, "end {last:?}");
        for i in 1..total {
            let (a, b) = (sched.at(i - 1), sched.at(i));
            let (dl, dm) = (b.lr - a.lr, b.momentum - a.momentum);
            ensure!(dl != 0.0 && dl * dm < 0.0, "step {i} of {total}: lr {dl:e}, momentum {dm:e}");
        }
    }
    Ok("500 finder sequences and 500 one-cycle schedules".into())
}

fn desk_training(runs: &[(u64, MiniDenseNet, Duration)]) -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for (seed, m, t) in runs {
        let report = evaluate(m, &corpus(*seed).valid, Task::MultiLabel).map_err(|e| e.to_string())?;
        let auc = report.macro_auc().unwrap_or(0.0);
        ok &= auc >= 0.90 && *t <= TRAIN_BUDGET;
        lines.push(format!("seed {seed}: AUC {auc:.4} in {t:.0?}"));
    }
    ensure!(ok && runs.len() == 3, "{}", lines.join("; "));
    Ok(lines.join("; "))
}

fn imbalance() -> Check {
    let mut wins = 0;
    let mut lines = Vec::new();
    for seed in 0..5 {
        let c = corpus(seed);
        let recall = |w| -> Result<f64, String> {
            let (m, _) = fit(&c, seed, 2, w)?;
            Ok(evaluate(&m, &c.valid, Task::MultiLabel).map_err(|e| e.to_string())?.per_class[3].recall)
        };
        let (rw, ru) = (recall(Weighting::Weighted)?, recall(Weighting::Unweighted)?);
        wins += usize::from(rw > ru);
        lines.push(format!("{rw:.2}/{ru:.2}"));
    }
    let detail = format!("minority recall weighted/unweighted {}, weighted ahead {wins}/5", lines.join(" "));
    ensure!(wins >= 4, "{detail}");

    let (s, t) = core_common::oracle::fixture();
    let (s, t) = (core_common::oracle::column(&s, 2), core_common::oracle::column(&t, 2));
    let (mut s10, mut t10) = (s.clone(), t.clone());
    for (&sc, _) in s.iter().zip(&t).filter(|(_, &y)| y == 0) {
        s10.extend([sc; 9]);
        t10.extend([0; 9]);
    }
    let (a, b) = (roc_curve(&s, &t).map_err(|e| e.to_string())?, roc_curve(&s10, &t10).map_err(|e| e.to_string())?);
    ensure!(a.points == b.points && a.summary == b.summary, "ROC moved under duplication");
    let (pa, pb) = (pr_curve(&s, &t).map_err(|e| e.to_string())?.summary, pr_curve(&s10, &t10).map_err(|e| e.to_string())?.summary);
    ensure!(pa != pb, "AP unchanged at {pa}");
    Ok(format!("{detail}; 10x negatives: AUC {:.4} both, AP {pa:.4} -> {pb:.4}", a.summary))
}

fn gradcam_localization(seed: u64, m: &MiniDenseNet) -> Check {
    let c = corpus(seed);
    let probs = predict_dataset(m, &c.valid, 64).map_err(|e| e.to_string())?;
    let (mut hits, mut total) = (0, 0);
    for (i, p) in probs.iter().enumerate() {
        let predicted: Vec<u8> = p.iter().map(|&v| u8::from(v >= 0.5)).collect();
        if predicted != c.valid.targets[i] {
            continue;
        }
        let sample = &c.samples[i];
        for &class in &sample.labels {
            let hm = gradcam(m, &c.valid.images[i], class).map_err(|e| e.to_string())?;
            ensure!((hm.height, hm.width) == (64, 64), "map {}x{}", hm.height, hm.width);
            ensure!(hm.values.iter().all(|&v| (0.0..=1.0).contains(&v)), "values outside [0, 1]");
            ensure!(hm.max() == 1.0 || hm.max() == 0.0, "max {}", hm.max());
            let (r, col) = hm.argmax();
            hits += usize::from(Some(synth::quadrant_at(r, col, 64)) == sample.quadrant_of(class));
            total += 1;
        }
    }
    ensure!(total > 0, "no correctly classified images");
    let rate = hits as f64 / total as f64;
    ensure!(rate >= 0.90, "{hits}/{total} = {rate:.3} in the right quadrant");
    Ok(format!("{hits}/{total} = {rate:.3} in the right quadrant; maps 64x64, in [0, 1], max 1"))
}

fn service() -> Check {
    use service_common::*;
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(4).enable_all().build().map_err(|e| e.to_string())?;
    rt.block_on(async {
        let app = app();
        let mut counts = [0usize; 2];
        for (i, req) in fuzz_requests(7, 1000).into_iter().enumerate() {
            let r = call(&app, req).await;
            ensure!(r.status.is_success() || r.status.is_client_error(), "payload {i}: {}", r.status);
            counts[usize::from(r.status.is_client_error())] += 1;
        }
        let img = png(64, 64, |x, y| ((x * y) % 256) as u8);
        let replies = futures::future::join_all((0..32).map(|_| call(&app, upload("/predict", &img)))).await;
        let first = without_elapsed(&replies[0].body);
        for r in &replies {
            ensure!(r.status.is_success(), "concurrent request got {}", r.status);
            ensure!(without_elapsed(&r.body) == first, "concurrent bodies differ");
        }
        Ok(format!("fuzz 1000: {} 2xx, {} 4xx, no 5xx; 32 concurrent bodies identical", counts[0], counts[1]))
    })
}

fn round_trips(m: &MiniDenseNet) -> Check {
    let bytes = model::to_bytes(m).map_err(|e| e.to_string())?;
    let back = model::from_bytes(&bytes).map_err(|e| e.to_string())?;
    let bits = |m: &MiniDenseNet| m.params().iter().flat_map(|p| p.value.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()).collect::<Vec<_>>();
    ensure!(bits(m) == bits(&back), "parameters changed");
    ensure!(model::to_bytes(&back).map_err(|e| e.to_string())? == bytes, "re-encoding differs");

    let vocab = Vocabulary::chest();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows = (0..200)
        .map(|i| {
            let mut one_hot: Vec<u8> = (0..vocab.len()).map(|_| u8::from(rng.random::<f64>() < 0.15)).collect();
            one_hot[i % vocab.len()] = 1;
            let findings = xraydx_core::data::one_hot_decode(&one_hot, &vocab);
            LabelRow { path: format!("img/{i:05}.png"), findings, one_hot }
        })
        .collect();
    let table = LabelTable { vocab, rows };
    let mut csv = Vec::new();
    write_label_csv(&table, &mut csv).map_err(|e| e.to_string())?;
    let parsed = read_label_csv(csv.as_slice()).map_err(|e| e.to_string())?;
    ensure!(parsed == table, "label table changed");
    let mut again = Vec::new();
    write_label_csv(&parsed, &mut again).map_err(|e| e.to_string())?;
    ensure!(again == csv, "label CSV bytes changed");

    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let results = common::idempotence(dir.path());
    let failed: Vec<String> = results.iter().filter_map(|(n, r)| r.as_ref().err().map(|e| format!("{n}: {e}"))).collect();
    ensure!(failed.is_empty(), "{}", failed.join("; "));
    let names: Vec<&str> = results.iter().map(|(n, _)| *n).collect();
    Ok(format!("weights bit-exact ({} bytes), 200-row label CSV identical, idempotent: {}", bytes.len(), names.join(", ")))
}

// --- runner

fn guarded<T>(f: impl FnOnce() -> Result<T, String>) -> Result<T, String> {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        let msg = p.downcast_ref::<String>().cloned().or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()));
        Err(format!("panicked: {}", msg.unwrap_or_default()))
    })
}

fn main() {
    // libtest flags such as --nocapture arrive here too; only a name filter is honoured
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let wanted = |name: &str| filter.as_deref().is_none_or(|f| name.contains(f));
    let mut results: Vec<(&str, Check)> = Vec::new();
    let mut record = |name: &'static str, f: &mut dyn FnMut() -> Check| {
        if !wanted(name) {
            return;
        }
        let start = Instant::now();
        let r = guarded(f);
        let status = if r.is_ok() { "PASS" } else { "FAIL" };
        println!("{status} {name}: {} [{:.1?}]", r.as_ref().unwrap_or_else(|e| e), start.elapsed());
        results.push((name, r));
    };

    record("gradient correctness", &mut gradients);
    record("metrics oracle equivalence", &mut metrics_oracle);
    record("published arithmetic", &mut published_arithmetic);
    record("schedule exactness", &mut schedule);

    let needs_training = ["desk-scale training", "grad-cam localization", "round trips"].iter().any(|n| wanted(n));
    let mut runs = Vec::new();
    if needs_training {
        for seed in 0..3 {
            match guarded(|| fit(&corpus(seed), seed, 5, Weighting::Weighted)) {
                Ok((m, t)) => runs.push((seed, m, t)),
                Err(e) => eprintln!("training seed {seed} failed: {e}"),
            }
        }
    }
    record("desk-scale training", &mut || desk_training(&runs));
    record("imbalance mechanism", &mut imbalance);
    record("grad-cam localization", &mut || match runs.first() {
        Some((seed, m, _)) => gradcam_localization(*seed, m),
        None => Err("no trained model".into()),
    });
    record("service robustness", &mut service);
    record("round trips", &mut || match runs.first() {
        Some((_, m, _)) => round_trips(m),
        None => Err("no trained model".into()),
    });

    let failed = results.iter().filter(|(_, r)| r.is_err()).count();
    println!("{} criteria, {} passed, {failed} failed", results.len(), results.len() - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}
