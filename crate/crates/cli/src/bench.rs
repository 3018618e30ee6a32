use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use actdet::formats::Split;
use actdet::model::{count_params, StageTimings};
use actdet::numcore::Tensor;
use actdet::postprocess::DecodeConfig;
use actdet::synthvid::{sample_frames, Dataset};
use actdet::{Error, Mode, Result};

use crate::{config, BenchArgs};

pub const BENCH_SCHEMA: u32 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct StageSeconds {
    pub backbone: f64,
    pub rpn: f64,
    pub roi_head: f64,
    pub postprocess: f64,
}

impl StageSeconds {
    pub fn sum(&self) -> f64 {
        self.backbone + self.rpn + self.roi_head + self.postprocess
    }
}

impl From<&StageTimings> for StageSeconds {
    fn from(t: &StageTimings) -> Self {
        Self {
            backbone: t.backbone.as_secs_f64(),
            rpn: t.rpn.as_secs_f64(),
            roi_head: t.roi_head.as_secs_f64(),
            postprocess: t.postprocess.as_secs_f64(),
        }
    }
}

/// Throughput report. `fps == frames_per_clip * clips / elapsed_seconds`
/// and `elapsed_seconds` is the sum of `clip_seconds`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub schema: u32,
    pub input: String,
    pub threads: usize,
    pub clips: usize,
    pub warmup: usize,
    pub frames_per_clip: usize,
    pub image_height: usize,
    pub image_width: usize,
    pub clip_seconds: Vec<f64>,
    pub elapsed_seconds: f64,
    pub fps: f64,
    /// Per-stage wall time summed over the timed clips.
    pub stages: StageSeconds,
    pub params: usize,
    pub count_params: usize,
    pub checkpoint_elements: usize,
    /// Peak resident set size of the process, when the platform reports it.
    pub peak_rss_kib: Option<u64>,
}

/// `VmHWM` from `/proc/self/status`.
fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}

pub fn run(args: &BenchArgs) -> Result<()> {
    if args.clips == 0 {
        return Err(Error::Config {
            field: "--clips".into(),
            detail: "must be positive".into(),
        });
    }
    let (ckpt, det, store) = config::load_checkpoint(&args.ckpt)?;
    let cfg = &det.cfg;
    let (k, h, w) = (cfg.num_frames(), cfg.image_height, cfg.image_width);

    // inputs are prepared up front so file reads stay out of the timed region
    let (input, inputs): (String, Vec<Tensor<f32>>) = match &args.data {
        Some(root) => {
            let data = Dataset::load(root)?;
            let mut ids = data.split(Split::Test);
            if ids.is_empty() {
                ids = (0..data.records.len()).collect();
            }
            if ids.is_empty() {
                return Err(Error::Format {
                    path: root.clone(),
                    detail: "dataset has no clips".into(),
                });
            }
            let mut unused = ChaCha8Rng::seed_from_u64(0);
            let frames = ids
                .iter()
                .map(|&c| {
                    let idx = sample_frames(data.records[c].frames, k, Mode::Infer, &mut unused);
                    Ok(data.clip_batch(c, &idx, h, w)?.frames)
                })
                .collect::<Result<_>>()?;
            (format!("dataset {}", root.display()), frames)
        }
        None => {
            let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
            let n = args.clips.min(4);
            let frames = (0..n)
                .map(|_| Tensor::from_fn(&[k, 3, h, w], |_| rng.gen::<f32>()))
                .collect();
            (format!("uniform noise, seed {}", args.seed), frames)
        }
    };

    let decode = DecodeConfig::default();
    for i in 0..args.warmup {
        det.detect(&store, &inputs[i % inputs.len()], &decode)?;
    }
    let mut clip_seconds = Vec::with_capacity(args.clips);
    let mut stages = StageTimings::default();
    for i in 0..args.clips {
        let t = Instant::now();
        let (_, timing) = det.detect(&store, &inputs[i % inputs.len()], &decode)?;
        clip_seconds.push(t.elapsed().as_secs_f64());
        stages.add(&timing);
    }
    let elapsed: f64 = clip_seconds.iter().sum();
    let report = BenchReport {
        schema: BENCH_SCHEMA,
        input,
        threads: rayon::current_num_threads(),
        clips: args.clips,
        warmup: args.warmup,
        frames_per_clip: k,
        image_height: h,
        image_width: w,
        fps: (k * args.clips) as f64 / elapsed,
        elapsed_seconds: elapsed,
        clip_seconds,
        stages: StageSeconds::from(&stages),
        params: det.param_count(),
        count_params: count_params(cfg)?,
        checkpoint_elements: ckpt.element_count(),
        peak_rss_kib: peak_rss_kib(),
    };

    let s = &report.stages;
    println!(
        "{} clips x {} frames at {}x{} on {} thread(s): {:.2} FPS ({:.3} s)",
        report.clips, k, h, w, report.threads, report.fps, report.elapsed_seconds
    );
    println!(
        "stages: backbone {:.3} s, rpn {:.3} s, roi head {:.3} s, postprocess {:.3} s",
        s.backbone, s.rpn, s.roi_head, s.postprocess
    );
    println!(
        "params: {} ({:.3} M), checkpoint elements {}",
        report.params,
        report.params as f64 / 1e6,
        report.checkpoint_elements
    );
    if let Some(kib) = report.peak_rss_kib {
        println!("peak resident memory: {:.1} MiB", kib as f64 / 1024.0);
    }
    if let Some(out) = &args.out {
        let json = serde_json::to_string_pretty(&report).expect("report serializes");
        config::write_text(out, &(json + "\n"))?;
    }
    Ok(())
}
