//! Reproducibility and batching laws of the training loop.

use actdet::evalsuite::EvalConfig;
use actdet::formats::{Checkpoint, KvConfig, Split};
use actdet::model::ModelConfig;
use actdet::postprocess::DecodeConfig;
use actdet::synthvid::{generate_dataset, Dataset, SynthSpec};
use actdet::trainer::{evaluate, lr_schedule, train, TrainConfig, TrainOutcome};

const TINY: &str = include_str!("../../../configs/tiny.conf");

struct Setup {
    _dir: tempfile::TempDir,
    data: Dataset,
    model: ModelConfig,
    train: TrainConfig,
}

fn setup() -> Setup {
    let kv = KvConfig::parse(TINY).unwrap();
    let dir = tempfile::tempdir().unwrap();
    generate_dataset(&SynthSpec::from_kv(&kv).unwrap(), dir.path()).unwrap();
    Setup {
        data: Dataset::load(dir.path()).unwrap(),
        _dir: dir,
        model: ModelConfig::from_kv(&kv).unwrap(),
        // a couple of epochs is enough to expose any divergence
        train: TrainConfig { epochs: 2, eval_every: 1, ..TrainConfig::from_kv(&kv).unwrap() },
    }
}

fn run(s: &Setup, cfg: &TrainConfig) -> TrainOutcome {
    train(&s.data, &s.model, cfg, &DecodeConfig::default(), &EvalConfig::default(), |_| {}).unwrap()
}

fn bytes(out: &TrainOutcome, store: &actdet::numcore::ParamStore<f32>) -> Vec<u8> {
    Checkpoint::from_store(&out.detector.cfg, store).to_bytes()
}

#[test]
fn training_is_bit_reproducible() {
    let s = setup();
    let (a, b) = (run(&s, &s.train), run(&s, &s.train));
    assert_eq!(bytes(&a, &a.last), bytes(&b, &b.last));
    assert_eq!(bytes(&a, &a.best), bytes(&b, &b.best));
    assert_eq!(a.log, b.log);
    assert_eq!(a.evals, b.evals);

    let (ra, _) = evaluate(&a.detector, &a.best, &s.data, Split::Test, &DecodeConfig::default(), &EvalConfig::default()).unwrap();
    let (rb, _) = evaluate(&b.detector, &b.best, &s.data, Split::Test, &DecodeConfig::default(), &EvalConfig::default()).unwrap();
    assert_eq!(ra.to_json(), rb.to_json());

    let c = run(&s, &TrainConfig { seed: s.train.seed + 1, ..s.train.clone() });
    assert_ne!(bytes(&a, &a.last), bytes(&c, &c.last));
}

#[test]
fn micro_batch_split_does_not_change_updates() {
    // same clips per optimizer step, accumulated in the same order
    let s = setup();
    let whole = run(&s, &TrainConfig { batch_size: 4, accum_steps: 1, ..s.train.clone() });
    let split = run(&s, &TrainConfig { batch_size: 1, accum_steps: 4, ..s.train.clone() });
    assert_eq!(bytes(&whole, &whole.last), bytes(&split, &split.last));
    assert_eq!(whole.log, split.log);
    let steps_per_epoch = s.data.split(Split::Train).len().div_ceil(4);
    assert_eq!(whole.log.len(), steps_per_epoch * s.train.epochs);
}

#[test]
fn log_records_are_group_means() {
    let s = setup();
    let out = run(&s, &s.train);
    let n_train = s.data.split(Split::Train).len();
    let clips: usize = out.log.iter().filter(|r| r.epoch == 0).map(|r| r.clips).sum();
    assert_eq!(clips, n_train);
    for r in &out.log {
        assert!(r.total.is_finite() && r.total > 0.0);
        let parts = r.rpn_cls + r.rpn_reg + r.rcnn_cls + r.rcnn_reg;
        // parts are summed in f32 during training
        assert!((r.total - parts).abs() <= 8.0 * f32::EPSILON as f64 * r.total);
        assert_eq!(r.lr, lr_schedule(r.epoch, &s.train));
    }
    assert_eq!(out.evals.last().unwrap().epoch, s.train.epochs);
    assert!(out.evals.iter().any(|e| e.epoch == out.best_epoch && e.map == out.best_map));
    assert!(out.evals.iter().all(|e| e.map <= out.best_map));
}

#[test]
fn step_decay_schedule() {
    let cfg = TrainConfig { base_lr: 0.5, decay_every: 3, decay_factor: 0.1, ..TrainConfig::default() };
    let got: Vec<f64> = (0..7).map(|e| lr_schedule(e, &cfg)).collect();
    let want = [0.5, 0.5, 0.5, 0.05, 0.05, 0.05, 0.005];
    for (g, w) in got.iter().zip(want) {
        assert!((g - w).abs() < 1e-15, "{got:?}");
    }
}
