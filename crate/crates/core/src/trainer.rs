//! Training loop with step learning-rate decay, gradient accumulation,
//! periodic evaluation and best-checkpoint retention.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evalsuite::{evaluate_detections, EvalConfig, MetricsReport};
use crate::formats::{KvConfig, Split};
use crate::model::{Detector, LossParts, ModelConfig};
use crate::numcore::{sgd_step, ParamStore};
use crate::postprocess::{DecodeConfig, Detection};
use crate::rpn::BoxSet;
use crate::synthvid::{sample_frames, Dataset};
use crate::Mode;

pub const LOG_SCHEMA: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub momentum: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    /// Clips per micro-batch.
    pub batch_size: usize,
    /// Micro-batches per optimizer step.
    pub accum_steps: usize,
    pub seed: u64,
    pub eval_every: usize,
    /// Global gradient-norm cap; 0 disables clipping.
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            base_lr: 0.01,
            momentum: 0.9,
            decay_factor: 0.1,
            decay_every: 15,
            batch_size: 2,
            accum_steps: 1,
            seed: 42,
            eval_every: 5,
            clip_norm: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let c = Self {
            epochs: kv.get("train.epochs", d.epochs)?,
            base_lr: kv.get("train.base_lr", d.base_lr)?,
            momentum: kv.get("train.momentum", d.momentum)?,
            decay_factor: kv.get("train.decay_factor", d.decay_factor)?,
            decay_every: kv.get("train.decay_every", d.decay_every)?,
            batch_size: kv.get("train.batch_size", d.batch_size)?,
            accum_steps: kv.get("train.accum_steps", d.accum_steps)?,
            seed: kv.get("train.seed", d.seed)?,
            eval_every: kv.get("train.eval_every", d.eval_every)?,
            clip_norm: kv.get("train.clip_norm", d.clip_norm)?,
        };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("train.epochs", self.epochs),
            ("train.decay_every", self.decay_every),
            ("train.batch_size", self.batch_size),
            ("train.accum_steps", self.accum_steps),
            ("train.eval_every", self.eval_every),
        ];
        if let Some((k, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::config(*k, "must be positive"));
        }
        if !(self.base_lr > 0.0 && self.base_lr.is_finite()) {
            return Err(Error::config("train.base_lr", "must be positive"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::config("train.momentum", "must lie in [0, 1)"));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return Err(Error::config("train.decay_factor", "must lie in (0, 1]"));
        }
        if !(self.clip_norm >= 0.0) {
            return Err(Error::config("train.clip_norm", "must be non-negative"));
        }
        Ok(())
    }

    pub fn effective_batch(&self) -> usize {
        self.batch_size * self.accum_steps
    }
}

/// `base_lr * decay_factor ^ floor(epoch / decay_every)`.
pub fn lr_schedule(epoch: usize, cfg: &TrainConfig) -> f64 {
    cfg.base_lr * cfg.decay_factor.powi((epoch / cfg.decay_every) as i32)
}

/// One optimizer step, losses averaged over its clips.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub schema: u32,
    pub step: u64,
    pub epoch: usize,
    pub lr: f64,
    pub clips: usize,
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
    pub total: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub epoch: usize,
    pub map: f64,
}

#[derive(Clone, Debug)]
pub enum TrainEvent<'a> {
    Step(&'a LogRecord),
    Eval(&'a EvalRecord),
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub detector: Detector,
    pub last: ParamStore<f32>,
    /// Parameters at the evaluation with the highest test mAP (later epochs win ties).
    pub best: ParamStore<f32>,
    pub best_epoch: usize,
    pub best_map: f64,
    pub log: Vec<LogRecord>,
    pub evals: Vec<EvalRecord>,
}

fn stream_seed(seed: u64, a: u64, b: u64) -> u64 {
    let mut h = seed ^ 0xA076_1D64_78BD_642F;
    for v in [a, b] {
        h = (h ^ v).wrapping_mul(0xE703_7ED1_A0B4_28DB).rotate_left(31);
    }
    h
}

/// Loss parts and gradients of one clip, with the clip's sampling drawn from
/// its own seeded stream.
fn clip_gradients(
    det: &Detector,
    store: &ParamStore<f32>,
    data: &Dataset,
    clip: usize,
    seed: u64,
) -> Result<(LossParts, crate::layers::GradMap<f32>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rec = &data.records[clip];
    let idx = sample_frames(rec.frames, det.cfg.num_frames(), Mode::Train, &mut rng);
    let batch = data.clip_batch(clip, &idx, det.cfg.image_height, det.cfg.image_width)?;
    det.train_step(store, &batch.frames, &batch.targets, &mut rng)
}

/// Trains from a fresh initialisation seeded by `cfg.seed`.
pub fn train(
    data: &Dataset,
    model: &ModelConfig,
    cfg: &TrainConfig,
    decode: &DecodeConfig,
    eval: &EvalConfig,
    mut observe: impl FnMut(TrainEvent<'_>),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    data.check_vocabulary(&model.classes)?;
    let det = Detector::new(model.clone())?;
    let mut store = det.init_params(cfg.seed)?;
    store.attach_grads();
    let train_ids = data.split(Split::Train);
    if train_ids.is_empty() {
        return Err(Error::config("train", "dataset has no training clips"));
    }
    let mut order_rng = ChaCha8Rng::seed_from_u64(stream_seed(cfg.seed, u64::MAX, 0));
    let mut log = Vec::new();
    let mut evals = Vec::new();
    let mut best: Option<(ParamStore<f32>, usize, f64)> = None;

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg);
        let mut order = train_ids.clone();
        order.shuffle(&mut order_rng);
        for (group_no, group) in order.chunks(cfg.effective_batch()).enumerate() {
            store.zero_grads();
            let mut sums = LossParts::default();
            for micro in group.chunks(cfg.batch_size) {
                let results: Vec<_> = micro
                    .par_iter()
                    .map(|&clip| {
                        let seed = stream_seed(cfg.seed, epoch as u64, clip as u64);
                        clip_gradients(&det, &store, data, clip, seed)
                    })
                    .collect();
                // fixed accumulation order keeps the update run-to-run identical
                for r in results {
                    let (parts, grads) = match r {
                        Err(Error::NonFinite(msg)) => {
                            return Err(Error::NonFinite(format!(
                                "step {} (epoch {epoch}, group {group_no}), lr {lr}: {msg}",
                                store.step()
                            )))
                        }
                        other => other?,
                    };
                    grads.apply_to(&mut store)?;
                    sums.rpn_cls += parts.rpn_cls;
                    sums.rpn_reg += parts.rpn_reg;
                    sums.rcnn_cls += parts.rcnn_cls;
                    sums.rcnn_reg += parts.rcnn_reg;
                    sums.total += parts.total;
                }
            }
            let n = group.len() as f64;
            store.scale_grads(1.0 / n as f32);
            if !store.grads_finite() {
                return Err(Error::NonFinite(format!(
                    "gradient at step {} (epoch {epoch}), lr {lr}, mean loss {:.6}",
                    store.step(),
                    sums.total / n
                )));
            }
            if cfg.clip_norm > 0.0 {
                let norm = store.grad_norm() as f64;
                if norm > cfg.clip_norm {
                    store.scale_grads((cfg.clip_norm / norm) as f32);
                }
            }
            sgd_step(&mut store, lr as f32, cfg.momentum as f32)?;
            let rec = LogRecord {
                schema: LOG_SCHEMA,
                step: store.step(),
                epoch,
                lr,
                clips: group.len(),
                rpn_cls: sums.rpn_cls / n,
                rpn_reg: sums.rpn_reg / n,
                rcnn_cls: sums.rcnn_cls / n,
                rcnn_reg: sums.rcnn_reg / n,
                total: sums.total / n,
            };
            observe(TrainEvent::Step(&rec));
            log.push(rec);
        }

        let done = epoch + 1;
        if done % cfg.eval_every == 0 || done == cfg.epochs {
            let report = evaluate(&det, &store, data, Split::Test, decode, eval)?.0;
            let rec = EvalRecord { epoch: done, map: report.map };
            observe(TrainEvent::Eval(&rec));
            if best.as_ref().map_or(true, |(_, _, m)| report.map >= *m) {
                best = Some((store.clone(), done, report.map));
            }
            evals.push(rec);
        }
    }
    let (best_store, best_epoch, best_map) = best.expect("final epoch always evaluates");
    Ok(TrainOutcome {
        detector: det,
        last: store,
        best: best_store,
        best_epoch,
        best_map,
        log,
        evals,
    })
}

/// Per-frame detections and ground truth of one evaluated clip.
#[derive(Clone, Debug)]
pub struct ClipResult {
    pub clip_id: String,
    pub frame_indices: Vec<usize>,
    pub detections: Vec<Vec<Detection>>,
    pub targets: Vec<BoxSet>,
}

/// Runs inference on every clip of `split` at the deterministic sampling
/// positions and scores the detections.
pub fn evaluate(
    det: &Detector,
    store: &ParamStore<f32>,
    data: &Dataset,
    split: Split,
    decode: &DecodeConfig,
    eval: &EvalConfig,
) -> Result<(MetricsReport, Vec<ClipResult>)> {
    data.check_vocabulary(&det.cfg.classes)?;
    let clips = data.split(split);
    let results: Vec<ClipResult> = clips
        .par_iter()
        .map(|&c| {
            let rec = &data.records[c];
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let idx = sample_frames(rec.frames, det.cfg.num_frames(), Mode::Infer, &mut unused);
            let batch = data.clip_batch(c, &idx, det.cfg.image_height, det.cfg.image_width)?;
            let (detections, _) = det.detect(store, &batch.frames, decode)?;
            Ok(ClipResult {
                clip_id: batch.clip_id,
                frame_indices: idx,
                detections,
                targets: batch.targets,
            })
        })
        .collect::<Result<_>>()?;
    let dets: Vec<Vec<Detection>> = results.iter().flat_map(|r| r.detections.clone()).collect();
    let gts: Vec<BoxSet> = results.iter().flat_map(|r| r.targets.clone()).collect();
    Ok((evaluate_detections(&dets, &gts, &det.cfg.classes, eval), results))
}
