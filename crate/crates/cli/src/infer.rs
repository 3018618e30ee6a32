use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use actdet::formats::FrameContainer;
use actdet::postprocess::DecodeConfig;
use actdet::rpn::BBox;
use actdet::synthvid::{resize_frames, sample_frames};
use actdet::{Error, Mode, Result};

use crate::{config, InferArgs};

pub const DETECTION_SCHEMA: u32 = 1;

/// One detection in clip pixel coordinates.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionRecord {
    pub schema: u32,
    /// Position among the sampled frames.
    pub frame: usize,
    /// Index of that frame in the clip.
    pub frame_index: usize,
    pub class: String,
    pub class_id: usize,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: [f64; 4],
}

/// Class colours for drawn boxes, cycled by class id.
const PALETTE: [[u8; 3]; 6] = [
    [255, 64, 64],
    [64, 255, 64],
    [64, 128, 255],
    [255, 220, 0],
    [255, 0, 255],
    [0, 255, 255],
];

/// One-pixel outline of `b` burned into a `[C, H, W]` frame.
fn draw_box(frame: &mut [u8], h: usize, w: usize, b: &BBox, color: [u8; 3]) {
    let clamp = |v: f64, n: usize| (v.round().max(0.0) as usize).min(n - 1);
    let (x1, x2) = (clamp(b.x1, w), clamp(b.x2 - 1.0, w));
    let (y1, y2) = (clamp(b.y1, h), clamp(b.y2 - 1.0, h));
    let mut put = |y: usize, x: usize| {
        for (c, &v) in color.iter().enumerate() {
            frame[(c * h + y) * w + x] = v;
        }
    };
    for x in x1..=x2.max(x1) {
        put(y1, x);
        put(y2.max(y1), x);
    }
    for y in y1..=y2.max(y1) {
        put(y, x1);
        put(y, x2.max(x1));
    }
}

pub fn run(args: &InferArgs) -> Result<()> {
    let decode = DecodeConfig {
        score_thresh: args.score_thresh,
        ..DecodeConfig::default()
    };
    decode.validate().map_err(|_| Error::Config {
        field: "--score-thresh".into(),
        detail: "must lie in [0, 1]".into(),
    })?;
    let (_, det, store) = config::load_checkpoint(&args.ckpt)?;
    let clip = FrameContainer::load(&args.clip)?;
    if clip.channels != 3 {
        return Err(Error::Format {
            path: args.clip.clone(),
            detail: format!("expected 3 channels, found {}", clip.channels),
        });
    }
    let idx = sample_frames(clip.frames, det.cfg.num_frames(), Mode::Infer, &mut ChaCha8Rng::seed_from_u64(0));
    let frames = clip.to_tensor(&idx)?;
    let (mh, mw) = (det.cfg.image_height, det.cfg.image_width);
    let resized = (clip.height, clip.width) != (mh, mw);
    let frames = if resized {
        resize_frames(&frames, &[], mh, mw)?.0
    } else {
        frames
    };
    let (dets, _) = det.detect(&store, &frames, &decode)?;
    let (sx, sy) = (clip.width as f64 / mw as f64, clip.height as f64 / mh as f64);

    let mut records = Vec::new();
    for (k, frame_dets) in dets.iter().enumerate() {
        for d in frame_dets {
            let b = if resized { d.bbox.scale(sx, sy) } else { d.bbox };
            records.push(DetectionRecord {
                schema: DETECTION_SCHEMA,
                frame: k,
                frame_index: idx[k],
                class: det.cfg.classes[d.class_id - 1].clone(),
                class_id: d.class_id,
                score: d.score,
                bbox: [b.x1, b.y1, b.x2, b.y2],
            });
        }
    }
    let text: String = records
        .iter()
        .map(|r| serde_json::to_string(r).expect("records serialize") + "\n")
        .collect();
    config::write_text(&args.out, &text)?;

    if let Some(dump) = &args.dump {
        let (h, w) = (clip.height, clip.width);
        let mut data = Vec::with_capacity(idx.len() * 3 * h * w);
        for &t in &idx {
            data.extend_from_slice(clip.frame(t));
        }
        let mut out = FrameContainer::new(idx.len(), h, w, 3, data)?;
        for r in &records {
            let b = BBox::new(r.bbox[0], r.bbox[1], r.bbox[2], r.bbox[3]);
            draw_box(out.frame_mut(r.frame), h, w, &b, PALETTE[(r.class_id - 1) % PALETTE.len()]);
        }
        out.save(dump)?;
    }
    println!(
        "{} detections over {} sampled frames written to {}",
        records.len(),
        idx.len(),
        args.out.display()
    );
    Ok(())
}
