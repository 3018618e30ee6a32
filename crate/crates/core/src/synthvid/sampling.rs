use rand::Rng;

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};
use crate::rpn::BoxSet;
use crate::Mode;

/// One frame index per equal-length segment of a `t`-frame clip.
///
/// Inference takes each segment's midpoint `floor((s + 0.5) t / n)`; training
/// draws uniformly inside the segment (a segment shorter than one frame
/// degenerates to its start).
pub fn sample_frames<R: Rng>(t: usize, n: usize, mode: Mode, rng: &mut R) -> Vec<usize> {
    assert!(t >= 1 && n >= 1, "sample_frames needs t >= 1 and n >= 1");
    (0..n)
        .map(|s| match mode {
            Mode::Infer => ((2 * s + 1) * t) / (2 * n),
            Mode::Train => {
                let lo = s * t / n;
                let hi = ((s + 1) * t / n).saturating_sub(1).max(lo);
                rng.gen_range(lo..=hi)
            }
        })
        .collect()
}

/// Bilinear resize of `[K, C, H, W]` frames with half-pixel centres, plus the
/// matching rescale of every box.
pub fn resize_frames<T: Scalar>(
    frames: &Tensor<T>,
    boxes: &[BoxSet],
    height: usize,
    width: usize,
) -> Result<(Tensor<T>, Vec<BoxSet>)> {
    let [k, c, h, w] = frames.dims4("resize_frames")?;
    if height == 0 || width == 0 {
        return Err(Error::contract("resize_frames", "target size must be positive"));
    }
    let (sy, sx) = (h as f64 / height as f64, w as f64 / width as f64);
    let axis = |dst: usize, scale: f64, n: usize| -> (usize, usize, f64) {
        let src = ((dst as f64 + 0.5) * scale - 0.5).max(0.0);
        let lo = (src.floor() as usize).min(n - 1);
        let hi = (lo + 1).min(n - 1);
        (lo, hi, src - lo as f64)
    };
    let ys: Vec<_> = (0..height).map(|y| axis(y, sy, h)).collect();
    let xs: Vec<_> = (0..width).map(|x| axis(x, sx, w)).collect();
    let mut out = Tensor::zeros(&[k, c, height, width]);
    let src = frames.data();
    for (plane_idx, dst) in out.data_mut().chunks_mut(height * width).enumerate() {
        let plane = &src[plane_idx * h * w..(plane_idx + 1) * h * w];
        for (y, &(y0, y1, fy)) in ys.iter().enumerate() {
            for (x, &(x0, x1, fx)) in xs.iter().enumerate() {
                let v = |yy: usize, xx: usize| plane[yy * w + xx].as_f64();
                let top = v(y0, x0) * (1.0 - fx) + v(y0, x1) * fx;
                let bottom = v(y1, x0) * (1.0 - fx) + v(y1, x1) * fx;
                dst[y * width + x] = T::of(top * (1.0 - fy) + bottom * fy);
            }
        }
    }
    let (bx, by) = (width as f64 / w as f64, height as f64 / h as f64);
    let scaled = boxes
        .iter()
        .map(|b| BoxSet {
            boxes: b.boxes.iter().map(|bb| bb.scale(bx, by)).collect(),
            scores: b.scores.clone(),
            labels: b.labels.clone(),
        })
        .collect();
    Ok((out, scaled))
}
