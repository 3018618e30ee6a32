//! Acceptance run: every criterion is checked at its stated tolerance and
//! reported on its own PASS/FAIL line, followed by informational checks.
//! Runs without the libtest harness so the lines always reach stdout; the
//! process fails if any criterion fails.

mod common;
#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::fs;
use std::path::Path;
use std::time::{Duration, Instant};

use actdet::backbone::{Backbone, BackboneConfig};
use actdet::evalsuite::{
    average_precision, confusion_matrix, evaluate_detections, fall_flags, fall_metrics, match_detections, ApMode,
    EvalConfig, MetricsReport,
};
use actdet::formats::{Checkpoint, FrameContainer, KvConfig};
use actdet::model::{count_params, Detector, ModelConfig};
use actdet::numcore::gradcheck::seeded_tensor;
use actdet::numcore::{sgd_step, ParamStore, Tensor};
use actdet::roihead::{rcnn_loss, RoiSample};
use actdet::rpn::{assign_anchors, generate_anchors, rpn_loss, AssignThresholds, BBox, RpnOutput};
use actdet::selfcheck::{gradient_suite, GRADIENT_TOLERANCE};
use actdet::synthvid::{sample_frames, Dataset};
use actdet::tshift::{receptive_field, temporal_shift, ShiftConfig, ShiftFraction, ShiftPlacement};
use actdet::Mode;
use actdet_cli::BenchReport;
use common::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, what: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(what())
    }
}

fn report_at(dir: &Path) -> MetricsReport {
    serde_json::from_slice(&fs::read(dir.join("report.json")).unwrap()).unwrap()
}

fn gradient_criterion() -> Outcome {
    let t = Instant::now();
    let r = gradient_suite().map_err(|e| e.to_string())?;
    let elapsed = t.elapsed();
    for op in [
        "conv2d", "linear", "frozen_affine/input", "softmax_cross_entropy", "smooth_l1", "temporal_shift",
        "roi_align", "rpn_head", "rcnn_head",
    ] {
        check(r.entries.keys().any(|k| k.starts_with(op)), || format!("{op} not covered"))?;
    }
    let worst = r.max_rel_err();
    check(worst < GRADIENT_TOLERANCE, || format!("max relative error {worst:.3e}"))?;
    check(elapsed < Duration::from_secs(120), || format!("took {elapsed:?}"))?;
    Ok(format!(
        "{} coordinates over {} tensors, max rel err {worst:.2e}, {:.1}s",
        r.total_checked(),
        r.entries.len(),
        elapsed.as_secs_f64()
    ))
}

fn shift_criterion() -> Outcome {
    let mut cases = 0;
    for seed in 0..200u64 {
        let k = 2 + (seed % 6) as usize;
        let c = 8 * (1 + (seed % 3) as usize);
        let p = 1 + (seed % 5) as usize;
        let fold = c / 8;
        let sc = ShiftConfig { num_frames: k, fraction: ShiftFraction::EIGHTH, placement: ShiftPlacement::Residual };
        let x = seeded_tensor(&[k, c, 1, p], seed, 100.0).map(|v| v.round() + 1000.0);
        let y = temporal_shift(&x, &sc).unwrap();
        let at = |t: &Tensor<f64>, f: usize, ch: usize, i: usize| t.data()[(f * c + ch) * p + i];
        let mut dropped = 0.0;
        for i in 0..p {
            for ch in 0..fold {
                check(at(&y, 0, ch, i) == 0.0 && at(&y, k - 1, fold + ch, i) == 0.0, || {
                    format!("boundary not zero (seed {seed})")
                })?;
                dropped += at(&x, k - 1, ch, i) + at(&x, 0, fold + ch, i);
            }
        }
        check(y.sum() == x.sum() - dropped, || format!("sum not conserved (seed {seed})"))?;
        let off = ShiftConfig { fraction: ShiftFraction::OFF, ..sc };
        check(temporal_shift(&x, &off).unwrap() == x, || format!("fraction 0 not identity (seed {seed})"))?;
        cases += 1;
    }

    // an input impulse reaches exactly `blocks` frames either side through the backbone
    let k = 9;
    for blocks in [vec![1], vec![1, 1], vec![1, 1, 1]] {
        let depth: usize = blocks.iter().sum();
        let net = Backbone::new(BackboneConfig {
            stage_channels: vec![8; blocks.len()],
            blocks_per_stage: blocks.clone(),
            shift: ShiftConfig { num_frames: k, fraction: ShiftFraction::EIGHTH, placement: ShiftPlacement::Residual },
        })
        .unwrap();
        let mut init = ParamStore::new();
        net.init(&mut init, 5).unwrap();
        let mut store = init.cast::<f64>();
        let names: Vec<String> = store.names().map(str::to_string).collect();
        for (i, n) in names.iter().enumerate() {
            let p = store.get_mut(n).unwrap();
            if !p.frozen {
                p.value = seeded_tensor(p.value.shape(), 1000 + i as u64, 0.4);
            }
        }
        let x = seeded_tensor(&[k, 3, 16, 16], 77, 1.0);
        let (base, _) = net.forward(&store, &x).unwrap();
        let src = 4;
        let mut bumped = x.clone();
        bumped.item_mut(src).iter_mut().for_each(|v| *v += 0.75);
        let (moved, _) = net.forward(&store, &bumped).unwrap();
        let touched: Vec<usize> = (0..k).filter(|&t| base.item(t) != moved.item(t)).collect();
        let want: Vec<usize> = (src - depth..=src + depth).collect();
        check(touched == want, || format!("{depth} blocks: impulse reached {touched:?}"))?;
        check(touched.len() == receptive_field(depth, k), || format!("receptive field at depth {depth}"))?;
    }
    let law: Vec<usize> = (0..6).map(|d| receptive_field(d, 8)).collect();
    check(law == [1, 3, 5, 7, 8, 8], || format!("receptive field law {law:?}"))?;
    Ok(format!("{cases} random shift cases exact, impulse distance = blocks for 1..3, law {law:?}"))
}

fn loss_criterion(data: &Dataset) -> Outcome {
    // zero at perfect prediction, exact zero regression without foreground
    let frames = vec![RoiSample {
        rois: vec![BBox::new(0.0, 0.0, 8.0, 8.0); 2],
        labels: vec![1, 0],
        targets: vec![[0.2, -0.1, 0.05, 0.3], [0.0; 4]],
    }];
    let scores = Tensor::<f64>::new(&[2, 3], vec![0.0, 800.0, 0.0, 800.0, 0.0, 0.0]).unwrap();
    let deltas = Tensor::<f64>::new(&[2, 4], vec![0.2, -0.1, 0.05, 0.3, 9.0, 9.0, 9.0, 9.0]).unwrap();
    let l = rcnn_loss(&scores, &deltas, &frames).unwrap();
    check(l.cls == 0.0 && l.reg == 0.0, || format!("rcnn loss at perfect prediction {} {}", l.cls, l.reg))?;

    let grid = generate_anchors(4, 4, 8, &[2.0, 4.0], &[0.5, 1.0, 2.0]).unwrap();
    let labels = vec![assign_anchors(&grid, &[BBox::new(4.0, 6.0, 20.0, 22.0)], AssignThresholds::default())];
    let negatives = vec![labels[0].negatives().collect::<Vec<_>>()];
    let a = grid.per_location();
    let out = RpnOutput {
        logits: seeded_tensor(&[1, 2 * a, 4, 4], 1, 2.0),
        deltas: seeded_tensor(&[1, 4 * a, 4, 4], 2, 2.0),
    };
    let l = rpn_loss(&out, &labels, &negatives).unwrap();
    check(l.reg == 0.0 && l.d_deltas.data().iter().all(|&g| g == 0.0), || format!("rpn reg {} without positives", l.reg))?;

    // total equals the sum of the stage losses
    let cfg = ModelConfig::default();
    let det = Detector::new(cfg.clone()).unwrap();
    let idx = sample_frames(data.records[0].frames, cfg.num_frames(), Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0));
    let batch = data.clip_batch(0, &idx, cfg.image_height, cfg.image_width).unwrap();
    let store64 = det.init_params(1).unwrap().cast::<f64>();
    let (parts, _) = det
        .train_step(&store64, &batch.frames.cast::<f64>(), &batch.targets, &mut ChaCha8Rng::seed_from_u64(2))
        .unwrap();
    let sum = parts.rpn_cls + parts.rpn_reg + parts.rcnn_cls + parts.rcnn_reg;
    check((parts.total - sum).abs() <= 4.0 * f64::EPSILON * sum, || format!("total {} vs parts {sum}", parts.total))?;

    // single-clip overfit
    let mut store = det.init_params(1).unwrap();
    store.attach_grads();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let t = Instant::now();
    let mut reached = None;
    let mut last = f64::NAN;
    for step in 1..=1000 {
        store.zero_grads();
        let (l, g) = det.train_step(&store, &batch.frames, &batch.targets, &mut rng).map_err(|e| e.to_string())?;
        last = l.total;
        if l.total < 0.05 {
            reached = Some(step);
            break;
        }
        g.apply_to(&mut store).unwrap();
        sgd_step(&mut store, 0.01, 0.9).unwrap();
        if t.elapsed() > Duration::from_secs(300) {
            break;
        }
    }
    let elapsed = t.elapsed();
    let step = reached.ok_or_else(|| format!("overfit stalled at loss {last:.4} after {elapsed:?}"))?;
    check(elapsed < Duration::from_secs(300), || format!("overfit took {elapsed:?}"))?;
    Ok(format!(
        "perfect-prediction and gated-regression losses exactly 0, total = parts, overfit loss {last:.4} < 0.05 at step {step} in {:.1}s",
        elapsed.as_secs_f64()
    ))
}

fn metric_criterion() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    for case in 0..500 {
        let (dets, gts) = oracles::random_instance(&mut rng);
        for class in [1, 2] {
            let m = match_detections(&dets, &gts, class, 0.5);
            let (all, eleven) = oracles::brute_force_ap(&dets, &gts, class);
            for (got, want) in [
                (average_precision(&m.tp, m.num_gt, ApMode::AllPoints), all),
                (average_precision(&m.tp, m.num_gt, ApMode::ElevenPoint), eleven),
            ] {
                match (got, want) {
                    (Some(a), Some(b)) => worst = worst.max((a - b).abs()),
                    (a, b) => check(a == b, || format!("case {case}: {a:?} vs {b:?}"))?,
                }
            }
        }
        let cm = confusion_matrix(&dets, &gts, 2, 0.5);
        for (c, row) in cm.iter().enumerate() {
            let want: usize = gts.iter().map(|g| (0..g.len()).filter(|&j| g.label(j) == c + 1).count()).sum();
            check(row.iter().sum::<usize>() == want, || format!("case {case}: confusion row {c}"))?;
        }
    }
    check(worst < 1e-9, || format!("AP deviates from brute force by {worst:.2e}"))?;

    let (dets, gts, classes) = oracles::fall_scenario();
    let (pred, actual) = fall_flags(&dets, &gts, 2);
    let m = fall_metrics(&pred, &actual);
    check((m.tp, m.fn_, m.fp, m.tn) == (3, 1, 1, 15), || format!("fall counts {m:?}"))?;
    check(
        m.sensitivity == Some(75.0) && m.specificity == Some(93.75) && m.accuracy == Some(90.0),
        || format!("fall metrics {m:?}"),
    )?;
    let report = evaluate_detections(&dets, &gts, &classes, &EvalConfig::default());
    check(report.fall == Some(m), || "report fall metrics differ".into())?;
    Ok(format!(
        "500 AP instances within {worst:.1e} of brute force, confusion rows = gt counts, fall 75/93.75/90"
    ))
}

struct Trained {
    ckpt: std::path::PathBuf,
    report: MetricsReport,
    seconds: f64,
}

fn train_and_eval(dir: &Path, name: &str, conf: &Path, data: &Path) -> Result<Trained, String> {
    let ckpt = dir.join(format!("{name}.ckpt"));
    let t = Instant::now();
    let out = actdet(&["train", "--config", p(conf), "--data", p(data), "--out", p(&ckpt), "--quiet"]);
    let seconds = t.elapsed().as_secs_f64();
    if !out.status.success() {
        return Err(format!("{name} training failed: {}", String::from_utf8_lossy(&out.stderr)));
    }
    let rdir = dir.join(format!("{name}-report"));
    ok(&["eval", "--ckpt", p(&ckpt), "--data", p(data), "--out", p(&rdir)]);
    Ok(Trained { ckpt, report: report_at(&rdir), seconds })
}

fn end_to_end_criterion(shift: &Trained) -> Outcome {
    let threads = std::thread::available_parallelism().map_or(1, |n| n.get());
    let m = shift.report.map;
    check(m >= 0.70, || format!("test mAP@0.5 {m:.4} < 0.70"))?;
    check(shift.seconds < 1800.0, || format!("training took {:.0}s on {threads} cores", shift.seconds))?;
    Ok(format!("test mAP@0.5 {m:.4}, training {:.0}s on {threads} core(s)", shift.seconds))
}

fn pair_ap(r: &MetricsReport) -> f64 {
    (r.ap("move-left").unwrap_or(0.0) + r.ap("move-right").unwrap_or(0.0)) / 2.0
}

fn ablation_criterion(shift: &Trained, flat: &Trained) -> Outcome {
    let (a, b) = (pair_ap(&shift.report), pair_ap(&flat.report));
    check(a - b >= 0.30, || format!("move pair AP {a:.4} with shift vs {b:.4} without"))?;
    Ok(format!("move pair AP {a:.4} with shift vs {b:.4} without (gap {:.4})", a - b))
}

fn determinism_criterion(dir: &Path, default_data: &Path) -> Outcome {
    let default_conf = workspace().join("configs/default.conf");
    let again = dir.join("data-again");
    ok(&["synth", "--config", p(&default_conf), "--out", p(&again)]);
    check(tree_bytes(default_data) == tree_bytes(&again), || "default dataset differs between runs".into())?;

    let tiny = tiny_conf();
    let d = dir.join("tiny");
    let (data, a, b) = (d.join("data"), d.join("a.ckpt"), d.join("b.ckpt"));
    ok(&["synth", "--config", p(&tiny), "--out", p(&data)]);
    for c in [&a, &b] {
        ok(&["train", "--config", p(&tiny), "--data", p(&data), "--out", p(c), "--quiet"]);
    }
    check(fs::read(&a).unwrap() == fs::read(&b).unwrap(), || "checkpoints differ between runs".into())?;
    let (ra, rb) = (d.join("ra"), d.join("rb"));
    ok(&["eval", "--ckpt", p(&a), "--data", p(&data), "--out", p(&ra)]);
    ok(&["eval", "--ckpt", p(&b), "--data", p(&data), "--out", p(&rb)]);
    check(tree_bytes(&ra) == tree_bytes(&rb), || "reports differ between runs".into())?;

    let ck = Checkpoint::load(&a).map_err(|e| e.to_string())?;
    let copy = d.join("copy.ckpt");
    ck.save(&copy).unwrap();
    check(fs::read(&a).unwrap() == fs::read(&copy).unwrap(), || "checkpoint round trip not byte-exact".into())?;
    let clip = data.join("clips/clip-0000.srvf");
    let fc = FrameContainer::load(&clip).map_err(|e| e.to_string())?;
    let clip_copy = d.join("copy.srvf");
    fc.save(&clip_copy).unwrap();
    check(fs::read(&clip).unwrap() == fs::read(&clip_copy).unwrap(), || "frame container round trip".into())?;

    let golden = golden_dir();
    let rg = d.join("rg");
    ok(&["eval", "--ckpt", p(&golden.join("model.ckpt")), "--data", p(&data), "--out", p(&rg)]);
    let (got, want) = (report_at(&rg), report_at(&golden));
    let mut dev = (got.map - want.map).abs();
    check(got.per_class.len() == want.per_class.len(), || "golden class list differs".into())?;
    for (g, w) in got.per_class.iter().zip(&want.per_class) {
        match (g.ap, w.ap) {
            (Some(x), Some(y)) => dev = dev.max((x - y).abs()),
            (x, y) => check(x == y, || format!("{}: AP {x:?} vs golden {y:?}", g.class))?,
        }
    }
    check(dev <= 1e-6, || format!("golden report deviates by {dev:.2e}"))?;
    Ok(format!(
        "datasets, checkpoints, reports identical across runs; round trips byte-exact; golden mAP {:.6} reproduced within {dev:.1e}",
        want.map
    ))
}

fn bench_criterion(dir: &Path, ckpt: &Path, data: &Path) -> Outcome {
    let out = dir.join("bench.json");
    ok(&["bench", "--ckpt", p(ckpt), "--data", p(data), "--clips", "10", "--warmup", "2", "--out", p(&out)]);
    let b: BenchReport = serde_json::from_slice(&fs::read(&out).unwrap()).map_err(|e| e.to_string())?;
    let ck = Checkpoint::load(ckpt).map_err(|e| e.to_string())?;
    let counted = count_params(&ck.model_config().unwrap()).unwrap();
    check(b.params == counted && b.count_params == counted, || format!("params {} vs count {counted}", b.params))?;
    check(ck.element_count() == counted && b.checkpoint_elements == counted, || {
        format!("checkpoint holds {} elements, count_params {counted}", ck.element_count())
    })?;
    check(b.clip_seconds.len() == b.clips, || "raw timings missing".into())?;
    let elapsed: f64 = b.clip_seconds.iter().sum();
    let fps = (b.frames_per_clip * b.clips) as f64 / elapsed;
    check((fps - b.fps).abs() <= 1e-9 * fps, || format!("fps {} vs recomputed {fps}", b.fps))?;
    check((elapsed - b.elapsed_seconds).abs() <= 1e-9 * elapsed, || "elapsed is not the timing sum".into())?;
    let stages = b.stages.sum();
    check(stages <= elapsed * 1.05, || format!("stages {stages:.4}s exceed total {elapsed:.4}s"))?;
    Ok(format!(
        "params {counted} everywhere, fps {:.1} recomputed exactly, stages {:.1}% of total",
        b.fps,
        100.0 * stages / elapsed
    ))
}

/// Top-scoring box per sampled frame of each still clip stays within 2 px.
fn still_clip_check(dir: &Path, ckpt: &Path) -> Outcome {
    let conf = dir.join("still.conf");
    fs::write(&conf, "synth.classes = still\nsynth.num_clips = 4\nsynth.actors_per_clip = 1\nsynth.seed = 5\n").unwrap();
    let data = dir.join("still");
    ok(&["synth", "--config", p(&conf), "--out", p(&data)]);
    let mut worst: f64 = 0.0;
    for c in 0..4 {
        let dets = dir.join(format!("still-{c}.jsonl"));
        let clip = data.join(format!("clips/clip-{c:04}.srvf"));
        ok(&["infer", "--ckpt", p(ckpt), "--clip", p(&clip), "--out", p(&dets), "--score-thresh", "0"]);
        let recs: Vec<actdet_cli::DetectionRecord> =
            fs::read_to_string(&dets).unwrap().lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        let frames = recs.iter().map(|r| r.frame).max().map_or(0, |m| m + 1);
        let top: Vec<[f64; 4]> = (0..frames)
            .map(|f| {
                recs.iter()
                    .filter(|r| r.frame == f)
                    .max_by(|a, b| a.score.total_cmp(&b.score))
                    .map(|r| r.bbox)
                    .ok_or_else(|| format!("clip {c}: no detection in frame {f}"))
            })
            .collect::<Result<_, _>>()?;
        check(frames > 0, || format!("clip {c}: no detections"))?;
        for b in &top {
            for i in 0..4 {
                worst = worst.max((b[i] - top[0][i]).abs());
            }
        }
    }
    check(worst <= 2.0, || format!("top box moves up to {worst:.2} px across frames of 4 still clips"))?;
    Ok(format!("top box moves at most {worst:.2} px across frames of 4 still clips"))
}

fn main() {
    // libtest-style flags (--nocapture, filters) are accepted and ignored
    let dir = tempfile::tempdir().expect("temp dir");
    let default_conf = workspace().join("configs/default.conf");
    let data = dir.path().join("data");
    ok(&["synth", "--config", p(&default_conf), "--out", p(&data)]);
    let dataset = Dataset::load(&data).expect("dataset loads");

    let mut results: Vec<(String, &str, Outcome)> = Vec::new();
    let mut record = |n: &str, name, r: Outcome| {
        let line = match &r {
            Ok(d) => format!("PASS {n} ({name}): {d}"),
            Err(e) => format!("FAIL {n} ({name}): {e}"),
        };
        println!("{line}");
        results.push((n.to_string(), name, r));
    };

    record("criterion 1", "gradient suite", gradient_criterion());
    record("criterion 2", "shift properties", shift_criterion());
    record("criterion 3", "loss contracts", loss_criterion(&dataset));
    record("criterion 4", "metric oracles", metric_criterion());

    let mut flat_conf = KvConfig::load(&default_conf).expect("default config");
    flat_conf.set("shift.fraction", "0");
    let flat_path = dir.path().join("noshift.conf");
    fs::write(&flat_path, flat_conf.to_text()).unwrap();
    let shift = train_and_eval(dir.path(), "shift", &default_conf, &data);
    let flat = train_and_eval(dir.path(), "noshift", &flat_path, &data);
    match &shift {
        Ok(s) => record("criterion 5", "end-to-end toy run", end_to_end_criterion(s)),
        Err(e) => record("criterion 5", "end-to-end toy run", Err(e.clone())),
    }
    match (&shift, &flat) {
        (Ok(s), Ok(f)) => record("criterion 6", "shift ablation", ablation_criterion(s, f)),
        (Err(e), _) | (_, Err(e)) => record("criterion 6", "shift ablation", Err(e.clone())),
    }
    record("criterion 7", "determinism and persistence", determinism_criterion(dir.path(), &data));
    match &shift {
        Ok(s) => record("criterion 8", "bench self-consistency", bench_criterion(dir.path(), &s.ckpt, &data)),
        Err(e) => record("criterion 8", "bench self-consistency", Err(e.clone())),
    }

    let failed: Vec<&str> = results.iter().filter(|r| r.2.is_err()).map(|r| r.0.as_str()).collect();
    println!("acceptance: {} of {} criteria passed", results.len() - failed.len(), results.len());

    // reported, but outside the pass/fail decision: with zero-padded shift the
    // first and last sampled frames see no neighbour on one side, so a static
    // actor can be scored as a motion class there and take that class's box
    if let Ok(s) = &shift {
        match still_clip_check(dir.path(), &s.ckpt) {
            Ok(d) => println!("INFO still clip inference: within 2 px, {d}"),
            Err(e) => println!("INFO still clip inference: not within 2 px, {e}"),
        }
    }
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
