use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};
use crate::rpn::BBox;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RoiAlignConfig {
    pub output_size: usize,
    /// Pixel-to-feature scale, `1 / stride`.
    pub spatial_scale: f64,
    /// Bilinear samples per bin along each axis.
    pub sampling_ratio: usize,
}

impl RoiAlignConfig {
    pub fn for_stride(stride: usize) -> Self {
        Self {
            output_size: 7,
            spatial_scale: 1.0 / stride as f64,
            sampling_ratio: 2,
        }
    }
}

/// One region: source image index in the feature batch and its pixel box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Roi {
    pub batch: usize,
    pub bbox: BBox,
}

/// Bilinear taps `(flat plane offset, weight)` of every output bin of one
/// region, shared by all channels. Bin `b` owns `taps[starts[b]..starts[b + 1]]`.
struct BinTaps<T> {
    taps: Vec<(usize, T)>,
    starts: Vec<usize>,
}

impl<T: Scalar> BinTaps<T> {
    fn new(roi: &BBox, h: usize, w: usize, cfg: &RoiAlignConfig) -> Self {
        let p = cfg.output_size;
        let sr = cfg.sampling_ratio;
        // feature cell (i, j) is centred on pixel ((j + 0.5) * stride, (i + 0.5) * stride)
        let x0 = roi.x1 * cfg.spatial_scale - 0.5;
        let y0 = roi.y1 * cfg.spatial_scale - 0.5;
        let bin_w = roi.width() * cfg.spatial_scale / p as f64;
        let bin_h = roi.height() * cfg.spatial_scale / p as f64;
        let norm = 1.0 / (sr * sr) as f64;

        let mut raw = Vec::with_capacity(4 * sr * sr);
        let mut taps = Vec::with_capacity(p * p * 4 * sr * sr);
        let mut starts = Vec::with_capacity(p * p + 1);
        for by in 0..p {
            for bx in 0..p {
                starts.push(taps.len());
                raw.clear();
                for sy in 0..sr {
                    let y = y0 + (by as f64 + (sy as f64 + 0.5) / sr as f64) * bin_h;
                    for sx in 0..sr {
                        let x = x0 + (bx as f64 + (sx as f64 + 0.5) / sr as f64) * bin_w;
                        bilinear_taps(y, x, h, w, norm, &mut raw);
                    }
                }
                taps.extend(raw.iter().map(|&(o, wt)| (o, T::of(wt))));
            }
        }
        starts.push(taps.len());
        Self { taps, starts }
    }

    fn bin(&self, b: usize) -> &[(usize, T)] {
        &self.taps[self.starts[b]..self.starts[b + 1]]
    }
}

/// Bilinear weights at `(y, x)`; points more than one cell outside the map
/// contribute nothing, points in the border band are clamped to the edge.
fn bilinear_taps(y: f64, x: f64, h: usize, w: usize, scale: f64, out: &mut Vec<(usize, f64)>) {
    if y < -1.0 || y > h as f64 || x < -1.0 || x > w as f64 {
        return;
    }
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        let v = v.max(0.0);
        let lo = v.floor() as usize;
        if lo >= n - 1 {
            (n - 1, n - 1, 0.0)
        } else {
            (lo, lo + 1, v - lo as f64)
        }
    };
    let (y_lo, y_hi, ly) = axis(y, h);
    let (x_lo, x_hi, lx) = axis(x, w);
    let (hy, hx) = (1.0 - ly, 1.0 - lx);
    out.push((y_lo * w + x_lo, hy * hx * scale));
    out.push((y_lo * w + x_hi, hy * lx * scale));
    out.push((y_hi * w + x_lo, ly * hx * scale));
    out.push((y_hi * w + x_hi, ly * lx * scale));
}

fn validate(features: &Tensor<impl Scalar>, rois: &[Roi]) -> Result<[usize; 4]> {
    let dims = features.dims4("roi_align")?;
    for r in rois {
        if r.batch >= dims[0] {
            return Err(Error::contract(
                "roi_align",
                format!("roi batch index {} out of {}", r.batch, dims[0]),
            ));
        }
        if !(r.bbox.area() > 0.0) || !r.bbox.is_valid() {
            return Err(Error::contract(
                "roi_align",
                format!("degenerate roi {:?}", r.bbox),
            ));
        }
    }
    Ok(dims)
}

/// Pools each region of `features [N, C, Hf, Wf]` to `[R, C, P, P]`, every bin
/// averaging `sampling_ratio^2` bilinear samples at continuous coordinates.
pub fn roi_align<T: Scalar>(
    features: &Tensor<T>,
    rois: &[Roi],
    cfg: &RoiAlignConfig,
) -> Result<Tensor<T>> {
    let [_, c, h, w] = validate(features, rois)?;
    if rois.is_empty() {
        return Err(Error::contract("roi_align", "no regions"));
    }
    let p2 = cfg.output_size * cfg.output_size;
    let mut out = Tensor::zeros(&[rois.len(), c, cfg.output_size, cfg.output_size]);
    out.data_mut()
        .par_chunks_mut(c * p2)
        .zip(rois.par_iter())
        .for_each(|(dst, roi)| {
            let taps = BinTaps::<T>::new(&roi.bbox, h, w, cfg);
            let src = features.item(roi.batch);
            for (ch, out) in dst.chunks_mut(p2).enumerate() {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                for (b, v) in out.iter_mut().enumerate() {
                    *v = taps.bin(b).iter().fold(T::zero(), |acc, &(o, wt)| acc + plane[o] * wt);
                }
            }
        });
    Ok(out)
}

/// Scatters `grad_out [R, C, P, P]` back onto a zero tensor shaped like the features.
pub fn roi_align_backward<T: Scalar>(
    feature_shape: &[usize],
    rois: &[Roi],
    cfg: &RoiAlignConfig,
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut d = Tensor::zeros(feature_shape);
    let [_, c, h, w] = d.dims4("roi_align_backward")?;
    let p2 = cfg.output_size * cfg.output_size;
    if grad_out.shape() != [rois.len(), c, cfg.output_size, cfg.output_size] {
        return Err(Error::shape(
            "roi_align_backward",
            &[rois.len(), c, cfg.output_size, cfg.output_size],
            grad_out.shape(),
        ));
    }
    // sequential over regions: fixed accumulation order
    for (r, roi) in rois.iter().enumerate() {
        let taps = BinTaps::<T>::new(&roi.bbox, h, w, cfg);
        let g = grad_out.item(r);
        let dst = d.item_mut(roi.batch);
        for (ch, gb) in g.chunks(p2).enumerate() {
            let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
            for (b, &gv) in gb.iter().enumerate() {
                for &(o, wt) in taps.bin(b) {
                    plane[o] += gv * wt;
                }
            }
        }
    }
    Ok(d)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_map_pools_to_constant() {
        let f = Tensor::<f64>::full(&[1, 2, 8, 8], 7.0);
        let cfg = RoiAlignConfig::for_stride(8);
        let rois = [
            Roi { batch: 0, bbox: BBox::new(3.0, 5.0, 40.0, 61.0) },
            Roi { batch: 0, bbox: BBox::new(0.0, 0.0, 64.0, 64.0) },
        ];
        let out = roi_align(&f, &rois, &cfg).unwrap();
        assert_eq!(out.shape(), &[2, 2, 7, 7]);
        assert!(out.data().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn degenerate_roi_rejected() {
        let f = Tensor::<f64>::zeros(&[1, 1, 4, 4]);
        let cfg = RoiAlignConfig::for_stride(8);
        let rois = [Roi { batch: 0, bbox: BBox::new(3.0, 3.0, 3.0, 9.0) }];
        assert!(roi_align(&f, &rois, &cfg).is_err());
    }
}
