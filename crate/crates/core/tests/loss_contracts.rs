//! Contracts of the two-stage training objective.

use actdet::model::{Detector, ModelConfig};
use actdet::numcore::{smooth_l1, softmax_cross_entropy, Tensor};
use actdet::roihead::{rcnn_loss, total_loss, RoiSample};
use actdet::rpn::{
    assign_anchors, generate_anchors, rpn_loss, AnchorLabel, AnchorLabels, AssignThresholds, BBox,
    BoxSet, RpnOutput,
};
use actdet::Error;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Per-location channel of anchor `idx` in a `[K, per * A, H, W]` map.
fn offset(frame: usize, idx: usize, a: usize, h: usize, w: usize, per: usize, ch: usize) -> usize {
    let (cell, anchor) = (idx / a, idx % a);
    (((frame * a * per) + anchor * per + ch) * h * w) + cell
}

fn anchor_setup() -> (usize, usize, usize, Vec<AnchorLabels>) {
    let (h, w) = (4, 4);
    let grid = generate_anchors(h, w, 8, &[2.0, 4.0], &[0.5, 1.0, 2.0]).unwrap();
    let gt = [BBox::new(4.0, 6.0, 20.0, 22.0)];
    let labels = vec![assign_anchors(&grid, &gt, AssignThresholds::default()); 2];
    (grid.per_location(), h, w, labels)
}

#[test]
fn anchor_offsets_follow_head_layout() {
    // the loss gradient must land exactly where `offset` says it does
    let (a, h, w, labels) = anchor_setup();
    let samples: Vec<Vec<usize>> = vec![labels[0].positives().take(1).collect(); 2];
    let out = RpnOutput {
        logits: Tensor::<f64>::zeros(&[2, 2 * a, h, w]),
        deltas: Tensor::<f64>::zeros(&[2, 4 * a, h, w]),
    };
    let l = rpn_loss(&out, &labels, &samples).unwrap();
    let i = samples[0][0];
    let nz: Vec<usize> = (0..l.d_logits.len()).filter(|&j| l.d_logits.data()[j] != 0.0).collect();
    let want = vec![
        offset(0, i, a, h, w, 2, 0),
        offset(0, i, a, h, w, 2, 1),
        offset(1, i, a, h, w, 2, 0),
        offset(1, i, a, h, w, 2, 1),
    ];
    let mut want_sorted = want.clone();
    want_sorted.sort_unstable();
    assert_eq!(nz, want_sorted);
}

#[test]
fn rpn_loss_zero_at_perfect_prediction() {
    let (a, h, w, labels) = anchor_setup();
    let samples: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| l.positives().chain(l.negatives()).collect())
        .collect();
    let mut logits = Tensor::<f64>::zeros(&[2, 2 * a, h, w]);
    let mut deltas = Tensor::<f64>::zeros(&[2, 4 * a, h, w]);
    for (f, l) in labels.iter().enumerate() {
        for &i in &samples[f] {
            let fg = l.labels[i] == AnchorLabel::Positive;
            logits.data_mut()[offset(f, i, a, h, w, 2, usize::from(fg))] = 800.0;
            if fg {
                for c in 0..4 {
                    deltas.data_mut()[offset(f, i, a, h, w, 4, c)] = l.targets[i][c];
                }
            }
        }
    }
    let l = rpn_loss(&RpnOutput { logits, deltas }, &labels, &samples).unwrap();
    assert_eq!(l.cls, 0.0);
    assert_eq!(l.reg, 0.0);
    assert!(l.d_logits.data().iter().all(|&g| g == 0.0));
    assert!(l.d_deltas.data().iter().all(|&g| g == 0.0));
}

#[test]
fn rpn_regression_vanishes_without_positives() {
    let (a, h, w, labels) = anchor_setup();
    let negatives: Vec<Vec<usize>> = labels.iter().map(|l| l.negatives().take(20).collect()).collect();
    let out = RpnOutput {
        logits: Tensor::from_fn(&[2, 2 * a, h, w], |i| (i as f64 * 0.37).sin()),
        deltas: Tensor::from_fn(&[2, 4 * a, h, w], |i| (i as f64 * 0.11).cos() * 3.0),
    };
    let l = rpn_loss(&out, &labels, &negatives).unwrap();
    assert!(l.cls > 0.0);
    assert_eq!(l.reg, 0.0);
    assert!(l.d_deltas.data().iter().all(|&g| g == 0.0));

    // ignored anchors never contribute either
    let ignored: Vec<Vec<usize>> = labels
        .iter()
        .map(|l| (0..l.labels.len()).filter(|&i| l.labels[i] == AnchorLabel::Ignore).collect())
        .collect();
    assert!(!ignored[0].is_empty());
    let l = rpn_loss(&out, &labels, &ignored).unwrap();
    assert_eq!((l.cls, l.reg), (0.0, 0.0));
}

#[test]
fn rcnn_loss_zero_at_perfect_prediction_and_gated_regression() {
    let frames = vec![
        RoiSample {
            rois: vec![BBox::new(0.0, 0.0, 8.0, 8.0); 3],
            labels: vec![2, 0, 1],
            targets: vec![[0.1, -0.2, 0.3, 0.0], [0.0; 4], [-0.5, 0.5, 0.0, 0.25]],
        },
        RoiSample {
            rois: vec![BBox::new(0.0, 0.0, 8.0, 8.0); 2],
            labels: vec![0, 0],
            targets: vec![[0.0; 4]; 2],
        },
    ];
    let labels: Vec<usize> = frames.iter().flat_map(|f| f.labels.clone()).collect();
    let targets: Vec<[f64; 4]> = frames.iter().flat_map(|f| f.targets.clone()).collect();
    let scores = Tensor::from_fn(&[5, 3], |e| if e % 3 == labels[e / 3] { 800.0 } else { 0.0 });
    let deltas = Tensor::from_fn(&[5, 4], |e| targets[e / 4][e % 4]);
    let l = rcnn_loss(&scores, &deltas, &frames).unwrap();
    assert_eq!((l.cls, l.reg), (0.0, 0.0));

    // background-only frame: regression term and gradient exactly zero
    let background = &frames[1..];
    let s = Tensor::from_fn(&[2, 3], |e| e as f64 * 0.3);
    let d = Tensor::from_fn(&[2, 4], |e| e as f64 - 3.0);
    let l = rcnn_loss(&s, &d, background).unwrap();
    assert!(l.cls > 0.0);
    assert_eq!(l.reg, 0.0);
    assert!(l.d_deltas.data().iter().all(|&g| g == 0.0));
}

#[test]
fn elementary_losses_at_perfect_prediction() {
    let logits = Tensor::<f64>::new(&[2, 3], vec![900.0, 0.0, 0.0, 0.0, 0.0, 900.0]).unwrap();
    let ce = softmax_cross_entropy(&logits, &[0, 2]).unwrap();
    assert_eq!(ce.loss, 0.0);
    let t = Tensor::<f64>::from_fn(&[3, 4], |i| i as f64 - 5.0);
    let sl = smooth_l1(&t, &t, 1.0).unwrap();
    assert_eq!(sl.loss, 0.0);
    assert!(sl.grad.data().iter().all(|&g| g == 0.0));
    // one quadratic and one linear residual, averaged over all four elements
    let p = Tensor::<f64>::new(&[1, 4], vec![0.5, 3.0, 0.0, 0.0]).unwrap();
    let z = Tensor::<f64>::zeros(&[1, 4]);
    assert!((smooth_l1(&p, &z, 1.0).unwrap().loss - (0.125 + 2.5) / 4.0).abs() < 1e-15);
}

#[test]
fn total_is_the_sum_and_rejects_non_finite() {
    assert_eq!(total_loss(0.25f64, 0.5).unwrap(), 0.75);
    assert!(matches!(total_loss(f64::NAN, 0.5), Err(Error::NonFinite(_))));
    assert!(matches!(total_loss(0.5f32, f32::INFINITY), Err(Error::NonFinite(_))));

    let cfg = ModelConfig {
        image_height: 32,
        image_width: 32,
        ..ModelConfig::default()
    };
    let det = Detector::new(cfg).unwrap();
    let store = det.init_params(4).unwrap().cast::<f64>();
    let frames = Tensor::from_fn(&[8, 3, 32, 32], |i| ((i * 2654435761usize) % 1000) as f64 / 1000.0);
    let targets: Vec<BoxSet> = (0..8)
        .map(|k| BoxSet::with_labels(vec![BBox::new(4.0 + k as f64, 6.0, 18.0 + k as f64, 20.0)], vec![1 + k % 4]).unwrap())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let (parts, grads) = det.train_step(&store, &frames, &targets, &mut rng).unwrap();
    let sum = parts.rpn_cls + parts.rpn_reg + parts.rcnn_cls + parts.rcnn_reg;
    assert!((parts.total - sum).abs() <= 4.0 * f64::EPSILON * sum.abs());
    assert!(parts.rpn_reg > 0.0 && parts.rcnn_reg > 0.0);
    // every trainable parameter receives a gradient, no frozen one does
    for (name, p) in store.iter() {
        assert_eq!(grads.get(name).is_some(), !p.frozen, "{name}");
    }
}
