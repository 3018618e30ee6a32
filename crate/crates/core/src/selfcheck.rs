//! Finite-difference verification of every differentiable operation in 64-bit
//! precision.
//!
//! Each check contracts the operation's output with a fixed random tensor, so
//! the scalar probe has the known output gradient `r`, and compares the
//! analytic backward pass against central differences of that probe.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::Result;
use crate::layers::GradMap;
use crate::numcore::gradcheck::seeded_tensor;
use crate::numcore::{
    self as nc, check_tensor, GradCheckConfig, GradCheckReport, ParamStore, Tensor,
};
use crate::roihead::{rcnn_loss, roi_align, roi_align_backward, RcnnHead, Roi, RoiAlignConfig, RoiSample};
use crate::rpn::{
    assign_anchors, generate_anchors, rpn_loss, sample_anchors, AssignThresholds, BBox, RpnHead,
};
use crate::tshift::{temporal_shift, temporal_shift_backward, ShiftConfig, ShiftFraction, ShiftPlacement};

/// Relative-error bound every check must meet.
pub const GRADIENT_TOLERANCE: f64 = 1e-5;

fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn never(_: &Tensor<f64>, _: usize) -> bool {
    false
}

/// Checks every trainable entry of `store` against `loss`; frozen entries
/// must have received no gradient and are reported as absent.
fn check_store(
    prefix: &str,
    store: &ParamStore<f64>,
    grads: &GradMap<f64>,
    cfg: &GradCheckConfig,
    loss: &dyn Fn(&ParamStore<f64>) -> f64,
    report: &mut GradCheckReport,
) {
    for (name, param) in store.iter() {
        let key = format!("{prefix}/{name}");
        if param.frozen {
            assert!(grads.get(name).is_none(), "frozen `{name}` received a gradient");
            report.push(key, None);
            continue;
        }
        let analytic = grads
            .get(name)
            .cloned()
            .unwrap_or_else(|| Tensor::zeros(param.value.shape()));
        let stat = check_tensor(
            &param.value,
            &analytic,
            cfg,
            |probe| {
                let mut s = store.clone();
                s.get_mut(name).expect("name from iter").value = probe.clone();
                loss(&s)
            },
            never,
        );
        report.push(key, Some(stat));
    }
}

/// Randomises every parameter of a freshly initialised store, frozen affine
/// included, so checks do not sit at the identity initialisation.
fn randomised(store: ParamStore<f32>, seed: u64) -> ParamStore<f64> {
    let mut s = store.cast::<f64>();
    let names: Vec<String> = s.names().map(str::to_string).collect();
    for (i, name) in names.iter().enumerate() {
        let p = s.get_mut(name).expect("listed");
        let scale = if name.ends_with(".scale") { 0.5 } else { 0.3 };
        let noise = seeded_tensor(p.value.shape(), seed + i as u64, scale);
        for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
            *v = if name.ends_with(".scale") { 1.0 + n } else { *n };
        }
    }
    s
}

fn conv(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    for (stride, padding) in [(1usize, 1usize), (2, 1), (1, 0)] {
        let x = seeded_tensor(&[2, 3, 6, 5], 11, 1.0);
        let w = seeded_tensor(&[4, 3, 3, 3], 12, 0.5);
        let b = seeded_tensor(&[4], 13, 0.5);
        let y = nc::conv2d(&x, &w, &b, stride, padding)?;
        let r = seeded_tensor(y.shape(), 14, 1.0);
        let (dx, dw, db) = nc::conv2d_backward(&x, &w, &b, stride, padding, &r)?;
        let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| {
            dot(&nc::conv2d(x, w, b, stride, padding).expect("valid conv"), &r)
        };
        let tag = format!("conv2d s{stride} p{padding}");
        report.push(format!("{tag}/input"), Some(check_tensor(&x, &dx, cfg, |p| f(p, &w, &b), never)));
        report.push(format!("{tag}/weight"), Some(check_tensor(&w, &dw, cfg, |p| f(&x, p, &b), never)));
        report.push(format!("{tag}/bias"), Some(check_tensor(&b, &db, cfg, |p| f(&x, &w, p), never)));
    }
    Ok(())
}

fn linear(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let x = seeded_tensor(&[5, 7], 21, 1.0);
    let w = seeded_tensor(&[4, 7], 22, 0.5);
    let b = seeded_tensor(&[4], 23, 0.5);
    let r = seeded_tensor(&[5, 4], 24, 1.0);
    let (dx, dw, db) = nc::linear_backward(&x, &w, &b, &r)?;
    let f = |x: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>| dot(&nc::linear(x, w, b).expect("valid"), &r);
    report.push("linear/input", Some(check_tensor(&x, &dx, cfg, |p| f(p, &w, &b), never)));
    report.push("linear/weight", Some(check_tensor(&w, &dw, cfg, |p| f(&x, p, &b), never)));
    report.push("linear/bias", Some(check_tensor(&b, &db, cfg, |p| f(&x, &w, p), never)));
    Ok(())
}

fn affine(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let x = seeded_tensor(&[2, 3, 4, 4], 31, 1.0);
    let scale = seeded_tensor(&[3], 32, 1.5);
    let shift = seeded_tensor(&[3], 33, 1.0);
    let r = seeded_tensor(x.shape(), 34, 1.0);
    let dx = nc::frozen_affine_backward(&scale, &r)?;
    let stat = check_tensor(
        &x,
        &dx,
        cfg,
        |p| dot(&nc::frozen_affine(p, &scale, &shift).expect("valid"), &r),
        never,
    );
    report.push("frozen_affine/input", Some(stat));
    Ok(())
}

fn losses(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let logits = seeded_tensor(&[6, 5], 41, 3.0);
    let targets = [0usize, 4, 2, 2, 1, 3];
    let ce = nc::softmax_cross_entropy(&logits, &targets)?;
    let stat = check_tensor(
        &logits,
        &ce.grad,
        cfg,
        |p| nc::softmax_cross_entropy(p, &targets).expect("valid").loss,
        never,
    );
    report.push("softmax_cross_entropy/logits", Some(stat));

    let pred = seeded_tensor(&[5, 4], 42, 2.5);
    let target = seeded_tensor(&[5, 4], 43, 1.0);
    let beta = 1.0;
    let sl = nc::smooth_l1(&pred, &target, beta)?;
    // the quadratic/linear seam at |d| == beta is not differentiable twice
    let seam = |p: &Tensor<f64>, i: usize| ((p.data()[i] - target.data()[i]).abs() - beta).abs() < 1e-4;
    let stat = check_tensor(
        &pred,
        &sl.grad,
        cfg,
        |p| nc::smooth_l1(p, &target, beta).expect("valid").loss,
        seam,
    );
    report.push("smooth_l1/pred", Some(stat));
    Ok(())
}

fn shift(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let sc = ShiftConfig {
        num_frames: 4,
        fraction: ShiftFraction::EIGHTH,
        placement: ShiftPlacement::Residual,
    };
    let x = seeded_tensor(&[4, 16, 3, 3], 51, 1.0);
    let r = seeded_tensor(x.shape(), 52, 1.0);
    let dx = temporal_shift_backward(&r, &sc)?;
    let probe = GradCheckConfig {
        max_probes: x.len(),
        ..*cfg
    };
    let stat = check_tensor(&x, &dx, &probe, |p| dot(&temporal_shift(p, &sc).expect("valid"), &r), never);
    report.push("temporal_shift/input", Some(stat));
    Ok(())
}

fn align(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let feats = seeded_tensor(&[2, 3, 6, 7], 61, 1.0);
    let ac = RoiAlignConfig {
        output_size: 3,
        spatial_scale: 0.25,
        sampling_ratio: 2,
    };
    let rois = [
        Roi { batch: 0, bbox: BBox::new(2.3, 3.1, 19.7, 17.2) },
        Roi { batch: 1, bbox: BBox::new(0.0, 0.0, 27.9, 23.9) },
        Roi { batch: 1, bbox: BBox::new(10.5, 4.2, 13.1, 9.9) },
        Roi { batch: 0, bbox: BBox::new(-3.0, 18.0, 8.0, 30.0) },
    ];
    let out = roi_align(&feats, &rois, &ac)?;
    let r = seeded_tensor(out.shape(), 62, 1.0);
    let d = roi_align_backward(feats.shape(), &rois, &ac, &r)?;
    let stat = check_tensor(&feats, &d, cfg, |p| dot(&roi_align(p, &rois, &ac).expect("valid"), &r), never);
    report.push("roi_align/features", Some(stat));
    Ok(())
}

fn rpn_head(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let head = RpnHead::new(4, 5, 3);
    let mut init = ParamStore::new();
    head.init(&mut init, 7)?;
    let store = randomised(init, 70);
    let x = seeded_tensor(&[2, 4, 4, 5], 71, 1.0);
    let (out, cache) = head.forward(&store, &x)?;
    let rl = seeded_tensor(out.logits.shape(), 72, 1.0);
    let rd = seeded_tensor(out.deltas.shape(), 73, 1.0);
    let mut grads = GradMap::new();
    let dx = head.backward(&store, &x, &cache, &rl, &rd, &mut grads)?;
    let loss = |s: &ParamStore<f64>, x: &Tensor<f64>| {
        let (o, _) = head.forward(s, x).expect("valid");
        dot(&o.logits, &rl) + dot(&o.deltas, &rd)
    };
    report.push("rpn_head/features", Some(check_tensor(&x, &dx, cfg, |p| loss(&store, p), never)));
    check_store("rpn_head", &store, &grads, cfg, &|s| loss(s, &x), report);
    Ok(())
}

fn rcnn_head(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    let head = RcnnHead::new(12, 6, 3);
    let mut init = ParamStore::new();
    head.init(&mut init, 8)?;
    let store = randomised(init, 80);
    let x = seeded_tensor(&[5, 12], 81, 1.0);
    let (scores, deltas, cache) = head.forward(&store, &x)?;
    let rs = seeded_tensor(scores.shape(), 82, 1.0);
    let rd = seeded_tensor(deltas.shape(), 83, 1.0);
    let mut grads = GradMap::new();
    let dx = head.backward(&store, &cache, &rs, &rd, &mut grads)?;
    let loss = |s: &ParamStore<f64>, x: &Tensor<f64>| {
        let (a, b, _) = head.forward(s, x).expect("valid");
        dot(&a, &rs) + dot(&b, &rd)
    };
    report.push("rcnn_head/pooled", Some(check_tensor(&x, &dx, cfg, |p| loss(&store, p), never)));
    check_store("rcnn_head", &store, &grads, cfg, &|s| loss(s, &x), report);
    Ok(())
}

fn detector_losses(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    // proposal-stage loss over a real anchor assignment
    let grid = generate_anchors(4, 4, 8, &[2.0, 4.0], &[0.5, 1.0, 2.0])?;
    let gt = [BBox::new(4.0, 6.0, 20.0, 22.0), BBox::new(14.0, 2.0, 30.0, 12.0)];
    let labels = vec![assign_anchors(&grid, &gt, AssignThresholds::default()); 2];
    let mut rng = ChaCha8Rng::seed_from_u64(90);
    let samples: Vec<Vec<usize>> = labels.iter().map(|l| sample_anchors(l, 24, 0.5, &mut rng)).collect();
    let a = grid.per_location();
    let out = crate::rpn::RpnOutput {
        logits: seeded_tensor(&[2, 2 * a, 4, 4], 91, 2.0),
        deltas: seeded_tensor(&[2, 4 * a, 4, 4], 92, 2.5),
    };
    let l = rpn_loss(&out, &labels, &samples)?;
    let stat = check_tensor(
        &out.logits,
        &l.d_logits,
        cfg,
        |p| {
            let o = crate::rpn::RpnOutput { logits: p.clone(), deltas: out.deltas.clone() };
            rpn_loss(&o, &labels, &samples).expect("valid").total()
        },
        never,
    );
    report.push("rpn_loss/logits", Some(stat));
    let stat = check_tensor(
        &out.deltas,
        &l.d_deltas,
        cfg,
        |p| {
            let o = crate::rpn::RpnOutput { logits: out.logits.clone(), deltas: p.clone() };
            rpn_loss(&o, &labels, &samples).expect("valid").total()
        },
        never,
    );
    report.push("rpn_loss/deltas", Some(stat));

    // second-stage loss over two frames with mixed foreground and background
    let mut rng = ChaCha8Rng::seed_from_u64(93);
    let frames: Vec<RoiSample> = (0..2)
        .map(|_| {
            let n = 4;
            let labels: Vec<usize> = (0..n).map(|i| if i < 2 { rng.gen_range(1..=3) } else { 0 }).collect();
            let targets = (0..n)
                .map(|i| if i < 2 { [rng.gen_range(-0.8..0.8), rng.gen_range(-0.8..0.8), 0.3, -0.2] } else { [0.0; 4] })
                .collect();
            RoiSample {
                rois: vec![BBox::new(0.0, 0.0, 8.0, 8.0); n],
                labels,
                targets,
            }
        })
        .collect();
    let scores = seeded_tensor(&[8, 4], 94, 2.0);
    let deltas = seeded_tensor(&[8, 4], 95, 2.5);
    let l = rcnn_loss(&scores, &deltas, &frames)?;
    let stat = check_tensor(
        &scores,
        &l.d_scores,
        cfg,
        |p| rcnn_loss(p, &deltas, &frames).expect("valid").total(),
        never,
    );
    report.push("rcnn_loss/scores", Some(stat));
    let stat = check_tensor(
        &deltas,
        &l.d_deltas,
        cfg,
        |p| rcnn_loss(&scores, p, &frames).expect("valid").total(),
        never,
    );
    report.push("rcnn_loss/deltas", Some(stat));
    Ok(())
}

fn backbone(cfg: &GradCheckConfig, report: &mut GradCheckReport) -> Result<()> {
    for placement in [ShiftPlacement::Residual, ShiftPlacement::InPlace] {
        let bc = BackboneConfig {
            stage_channels: vec![8, 8],
            blocks_per_stage: vec![1, 1],
            shift: ShiftConfig {
                num_frames: 3,
                fraction: ShiftFraction::EIGHTH,
                placement,
            },
        };
        let net = Backbone::new(bc)?;
        let mut init = ParamStore::new();
        net.init(&mut init, 9)?;
        let store = randomised(init, 100);
        let x = seeded_tensor(&[3, 3, 8, 8], 101, 1.0);
        let (y, cache) = net.forward(&store, &x)?;
        let r = seeded_tensor(y.shape(), 102, 1.0);
        let mut grads = GradMap::new();
        let dx = net.backward_with_input(&store, &cache, &r, &mut grads)?;
        let loss = |s: &ParamStore<f64>, x: &Tensor<f64>| dot(&net.forward(s, x).expect("valid").0, &r);
        let tag = format!("backbone {placement}");
        report.push(format!("{tag}/frames"), Some(check_tensor(&x, &dx, cfg, |p| loss(&store, p), never)));
        let sparse = GradCheckConfig { max_probes: 12, ..*cfg };
        check_store(&tag, &store, &grads, &sparse, &|s| loss(s, &x), report);
    }
    Ok(())
}

/// Runs every check. Entries are keyed `operation/argument`; frozen
/// parameters appear as absent.
pub fn gradient_suite() -> Result<GradCheckReport> {
    let cfg = GradCheckConfig::default();
    let mut report = GradCheckReport::default();
    conv(&cfg, &mut report)?;
    linear(&cfg, &mut report)?;
    affine(&cfg, &mut report)?;
    losses(&cfg, &mut report)?;
    shift(&cfg, &mut report)?;
    align(&cfg, &mut report)?;
    rpn_head(&cfg, &mut report)?;
    rcnn_head(&cfg, &mut report)?;
    detector_losses(&cfg, &mut report)?;
    backbone(&cfg, &mut report)?;
    Ok(report)
}
