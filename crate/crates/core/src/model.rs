//! The assembled detector: backbone, proposal stage and region head wired
//! into a training objective and an inference path.

use std::time::{Duration, Instant};

use rand::Rng;

use crate::backbone::{Backbone, BackboneConfig};
use crate::error::{Error, Result};
use crate::formats::KvConfig;
use crate::layers::GradMap;
use crate::numcore::{ParamStore, Scalar, Tensor};
use crate::postprocess::{decode_detections, DecodeConfig, Detection};
use crate::roihead::{
    rcnn_loss, roi_align, roi_align_backward, sample_rois, total_loss, RcnnHead, Roi,
    RoiAlignConfig, RoiConfig, RoiSample,
};
use crate::rpn::{
    assign_anchors, generate_anchors, rpn_loss, sample_anchors, select_proposals, AnchorGrid,
    AssignThresholds, BoxSet, RpnConfig, RpnHead,
};
use crate::tshift::ShiftConfig;
use crate::Mode;

/// Number of stored parameter values a detector built from `cfg` owns.
pub fn count_params(cfg: &ModelConfig) -> Result<usize> {
    Ok(Detector::new(cfg.clone())?.param_count())
}

/// Sections of the flat config that describe the architecture.
pub const MODEL_SECTIONS: [&str; 5] = ["model", "backbone", "shift", "rpn", "roi"];

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Action class names; class id `i + 1` is `classes[i]`, 0 is background.
    pub classes: Vec<String>,
    pub image_height: usize,
    pub image_width: usize,
    pub backbone: BackboneConfig,
    pub rpn: RpnConfig,
    pub roi: RoiConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            classes: ["move-right", "move-left", "grow", "shrink"]
                .map(String::from)
                .to_vec(),
            image_height: 64,
            image_width: 64,
            backbone: BackboneConfig::default(),
            rpn: RpnConfig::default(),
            roi: RoiConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn num_frames(&self) -> usize {
        self.backbone.shift.num_frames
    }

    pub fn from_kv(kv: &KvConfig) -> Result<Self> {
        let d = Self::default();
        let shift = ShiftConfig {
            num_frames: kv.get("shift.num_frames", d.backbone.shift.num_frames)?,
            fraction: kv.get("shift.fraction", d.backbone.shift.fraction)?,
            placement: kv.get("shift.placement", d.backbone.shift.placement)?,
        };
        let rpn = RpnConfig {
            anchor_scales: kv.get_list("rpn.anchor_scales", d.rpn.anchor_scales)?,
            anchor_ratios: kv.get_list("rpn.anchor_ratios", d.rpn.anchor_ratios)?,
            channels: kv.get("rpn.channels", d.rpn.channels)?,
            thresholds: AssignThresholds {
                positive_iou: kv.get("rpn.positive_iou", d.rpn.thresholds.positive_iou)?,
                negative_iou: kv.get("rpn.negative_iou", d.rpn.thresholds.negative_iou)?,
            },
            sample_size: kv.get("rpn.sample_size", d.rpn.sample_size)?,
            pos_fraction: kv.get("rpn.pos_fraction", d.rpn.pos_fraction)?,
            pre_nms_top_n: kv.get("rpn.pre_nms_top_n", d.rpn.pre_nms_top_n)?,
            nms_iou: kv.get("rpn.nms_iou", d.rpn.nms_iou)?,
            post_nms_train: kv.get("rpn.post_nms_train", d.rpn.post_nms_train)?,
            post_nms_infer: kv.get("rpn.post_nms_infer", d.rpn.post_nms_infer)?,
            min_size: kv.get("rpn.min_size", d.rpn.min_size)?,
        };
        let roi = RoiConfig {
            output_size: kv.get("roi.output_size", d.roi.output_size)?,
            sampling_ratio: kv.get("roi.sampling_ratio", d.roi.sampling_ratio)?,
            hidden: kv.get("roi.hidden", d.roi.hidden)?,
            batch_per_frame: kv.get("roi.batch_per_frame", d.roi.batch_per_frame)?,
            fg_fraction: kv.get("roi.fg_fraction", d.roi.fg_fraction)?,
            fg_iou: kv.get("roi.fg_iou", d.roi.fg_iou)?,
            bg_iou: kv.get("roi.bg_iou", d.roi.bg_iou)?,
        };
        let cfg = Self {
            classes: kv.get_list("model.classes", d.classes)?,
            image_height: kv.get("model.image_height", d.image_height)?,
            image_width: kv.get("model.image_width", d.image_width)?,
            backbone: BackboneConfig {
                stage_channels: kv.get_list("backbone.stage_channels", d.backbone.stage_channels)?,
                blocks_per_stage: kv
                    .get_list("backbone.blocks_per_stage", d.backbone.blocks_per_stage)?,
                shift,
            },
            rpn,
            roi,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Every architecture key, defaults included.
    pub fn to_kv(&self) -> KvConfig {
        let mut kv = KvConfig::new();
        kv.set_list("model.classes", &self.classes);
        kv.set("model.image_height", self.image_height);
        kv.set("model.image_width", self.image_width);
        kv.set_list("backbone.stage_channels", &self.backbone.stage_channels);
        kv.set_list("backbone.blocks_per_stage", &self.backbone.blocks_per_stage);
        let s = &self.backbone.shift;
        kv.set("shift.num_frames", s.num_frames);
        kv.set("shift.fraction", s.fraction);
        kv.set("shift.placement", s.placement);
        let r = &self.rpn;
        kv.set_list("rpn.anchor_scales", &r.anchor_scales);
        kv.set_list("rpn.anchor_ratios", &r.anchor_ratios);
        kv.set("rpn.channels", r.channels);
        kv.set("rpn.positive_iou", r.thresholds.positive_iou);
        kv.set("rpn.negative_iou", r.thresholds.negative_iou);
        kv.set("rpn.sample_size", r.sample_size);
        kv.set("rpn.pos_fraction", r.pos_fraction);
        kv.set("rpn.pre_nms_top_n", r.pre_nms_top_n);
        kv.set("rpn.nms_iou", r.nms_iou);
        kv.set("rpn.post_nms_train", r.post_nms_train);
        kv.set("rpn.post_nms_infer", r.post_nms_infer);
        kv.set("rpn.min_size", r.min_size);
        let o = &self.roi;
        kv.set("roi.output_size", o.output_size);
        kv.set("roi.sampling_ratio", o.sampling_ratio);
        kv.set("roi.hidden", o.hidden);
        kv.set("roi.batch_per_frame", o.batch_per_frame);
        kv.set("roi.fg_fraction", o.fg_fraction);
        kv.set("roi.fg_iou", o.fg_iou);
        kv.set("roi.bg_iou", o.bg_iou);
        kv
    }

    pub fn canonical_text(&self) -> String {
        self.to_kv().to_text()
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes.is_empty() {
            return Err(Error::config("model.classes", "at least one class"));
        }
        for (i, c) in self.classes.iter().enumerate() {
            if c.is_empty() || c.contains([',', '\n', '=', '#']) || self.classes[..i].contains(c) {
                return Err(Error::config("model.classes", format!("bad or repeated name `{c}`")));
            }
        }
        self.backbone.validate()?;
        self.backbone
            .feature_dims(self.image_height, self.image_width)
            .map_err(|e| Error::config("model.image_height", e.to_string()))?;
        let r = &self.rpn;
        if r.anchor_scales.is_empty() || r.anchor_ratios.is_empty() {
            return Err(Error::config("rpn.anchor_scales", "empty anchor set"));
        }
        if r.channels == 0 || r.sample_size == 0 {
            return Err(Error::config("rpn.channels", "must be positive"));
        }
        if !(0.0..=1.0).contains(&r.pos_fraction) {
            return Err(Error::config("rpn.pos_fraction", "must lie in [0, 1]"));
        }
        let o = &self.roi;
        if o.output_size == 0 || o.sampling_ratio == 0 || o.hidden == 0 || o.batch_per_frame == 0 {
            return Err(Error::config("roi", "sizes must be positive"));
        }
        if !(0.0..=1.0).contains(&o.fg_fraction) {
            return Err(Error::config("roi.fg_fraction", "must lie in [0, 1]"));
        }
        Ok(())
    }
}

/// Loss components of one clip.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossParts {
    pub rpn_cls: f64,
    pub rpn_reg: f64,
    pub rcnn_cls: f64,
    pub rcnn_reg: f64,
    pub total: f64,
}

/// Wall time per inference stage.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StageTimings {
    pub backbone: Duration,
    pub rpn: Duration,
    pub roi_head: Duration,
    pub postprocess: Duration,
}

impl StageTimings {
    pub fn total(&self) -> Duration {
        self.backbone + self.rpn + self.roi_head + self.postprocess
    }

    pub fn add(&mut self, other: &StageTimings) {
        self.backbone += other.backbone;
        self.rpn += other.rpn;
        self.roi_head += other.roi_head;
        self.postprocess += other.postprocess;
    }
}

#[derive(Clone, Debug)]
pub struct Detector {
    pub cfg: ModelConfig,
    pub backbone: Backbone,
    pub rpn: RpnHead,
    pub rcnn: RcnnHead,
    anchors: AnchorGrid,
    align: RoiAlignConfig,
}

impl Detector {
    pub fn new(cfg: ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let backbone = Backbone::new(cfg.backbone.clone())?;
        let c = cfg.backbone.out_channels();
        let stride = cfg.backbone.total_stride();
        let (hf, wf) = cfg.backbone.feature_dims(cfg.image_height, cfg.image_width)?;
        let anchors = generate_anchors(hf, wf, stride, &cfg.rpn.anchor_scales, &cfg.rpn.anchor_ratios)?;
        let rpn = RpnHead::new(c, cfg.rpn.channels, cfg.rpn.anchors_per_location());
        let p = cfg.roi.output_size;
        let rcnn = RcnnHead::new(c * p * p, cfg.roi.hidden, cfg.num_classes());
        let align = RoiAlignConfig {
            output_size: p,
            spatial_scale: 1.0 / stride as f64,
            sampling_ratio: cfg.roi.sampling_ratio,
        };
        Ok(Self {
            cfg,
            backbone,
            rpn,
            rcnn,
            anchors,
            align,
        })
    }

    /// Closed-form count of every stored value, frozen affine included.
    pub fn param_count(&self) -> usize {
        self.backbone.param_count() + self.rpn.param_count() + self.rcnn.param_count()
    }

    pub fn anchors(&self) -> &AnchorGrid {
        &self.anchors
    }

    pub fn init_params(&self, seed: u64) -> Result<ParamStore<f32>> {
        let mut store = ParamStore::new();
        self.backbone.init(&mut store, seed)?;
        self.rpn.init(&mut store, seed)?;
        self.rcnn.init(&mut store, seed)?;
        Ok(store)
    }

    fn check_frames<T: Scalar>(&self, frames: &Tensor<T>) -> Result<()> {
        let want = [
            self.cfg.num_frames(),
            3,
            self.cfg.image_height,
            self.cfg.image_width,
        ];
        if frames.shape() != want {
            return Err(Error::shape("detector input", &want, frames.shape()));
        }
        Ok(())
    }

    /// Forward and backward over one clip. `targets[k]` holds the labelled
    /// ground truth of frame `k`. Gradients are those of the clip's total loss.
    pub fn train_step<T: Scalar, R: Rng>(
        &self,
        p: &ParamStore<T>,
        frames: &Tensor<T>,
        targets: &[BoxSet],
        rng: &mut R,
    ) -> Result<(LossParts, GradMap<T>)> {
        self.check_frames(frames)?;
        let k = frames.shape()[0];
        if targets.len() != k {
            return Err(Error::contract(
                "train_step",
                format!("{k} frames but {} target sets", targets.len()),
            ));
        }
        let (w, h) = (self.cfg.image_width as f64, self.cfg.image_height as f64);
        let (feats, bcache) = self.backbone.forward(p, frames)?;
        let (out, rcache) = self.rpn.forward(p, &feats)?;

        let mut labels = Vec::with_capacity(k);
        let mut samples = Vec::with_capacity(k);
        for t in targets {
            let l = assign_anchors(&self.anchors, &t.boxes, self.cfg.rpn.thresholds);
            samples.push(sample_anchors(&l, self.cfg.rpn.sample_size, self.cfg.rpn.pos_fraction, rng));
            labels.push(l);
        }
        let rl = rpn_loss(&out, &labels, &samples)?;

        let mut roi_samples: Vec<RoiSample> = Vec::with_capacity(k);
        let mut rois = Vec::new();
        for (f, t) in targets.iter().enumerate() {
            let props = select_proposals(&out, f, &self.anchors, w, h, &self.cfg.rpn, Mode::Train)?;
            let gt_labels = t.labels.clone().unwrap_or_else(|| vec![0; t.len()]);
            let s = sample_rois(&props.boxes, &t.boxes, &gt_labels, &self.cfg.roi, rng)?;
            rois.extend(s.rois.iter().map(|&bbox| Roi { batch: f, bbox }));
            roi_samples.push(s);
        }
        let pooled = roi_align(&feats, &rois, &self.align)?;
        let (scores, deltas, hcache) = self.rcnn.forward(p, &pooled)?;
        let cl = rcnn_loss(&scores, &deltas, &roi_samples)?;
        let total = total_loss(rl.total(), cl.total())?;

        let mut grads = GradMap::new();
        let d_pooled = self.rcnn.backward(p, &hcache, &cl.d_scores, &cl.d_deltas, &mut grads)?;
        let mut d_feats = roi_align_backward(feats.shape(), &rois, &self.align, &d_pooled)?;
        d_feats.add_assign(&self.rpn.backward(p, &feats, &rcache, &rl.d_logits, &rl.d_deltas, &mut grads)?)?;
        self.backbone.backward(p, &bcache, &d_feats, &mut grads)?;

        Ok((
            LossParts {
                rpn_cls: rl.cls.as_f64(),
                rpn_reg: rl.reg.as_f64(),
                rcnn_cls: cl.cls.as_f64(),
                rcnn_reg: cl.reg.as_f64(),
                total: total.as_f64(),
            },
            grads,
        ))
    }

    /// Detections for every frame of one clip, with per-stage wall time.
    pub fn detect(
        &self,
        p: &ParamStore<f32>,
        frames: &Tensor<f32>,
        decode: &DecodeConfig,
    ) -> Result<(Vec<Vec<Detection>>, StageTimings)> {
        self.check_frames(frames)?;
        let k = frames.shape()[0];
        let (w, h) = (self.cfg.image_width as f64, self.cfg.image_height as f64);
        let mut timings = StageTimings::default();

        let t0 = Instant::now();
        let (feats, _) = self.backbone.forward(p, frames)?;
        let t1 = Instant::now();
        let (out, _) = self.rpn.forward(p, &feats)?;
        let props: Vec<BoxSet> = (0..k)
            .map(|f| select_proposals(&out, f, &self.anchors, w, h, &self.cfg.rpn, Mode::Infer))
            .collect::<Result<_>>()?;
        let t2 = Instant::now();
        timings.backbone = t1 - t0;
        timings.rpn = t2 - t1;

        let rois: Vec<Roi> = props
            .iter()
            .enumerate()
            .flat_map(|(f, b)| b.boxes.iter().map(move |&bbox| Roi { batch: f, bbox }))
            .collect();
        let mut dets = vec![Vec::new(); k];
        if rois.is_empty() {
            timings.roi_head = t2.elapsed();
            return Ok((dets, timings));
        }
        let pooled = roi_align(&feats, &rois, &self.align)?;
        let (scores, deltas, _) = self.rcnn.forward(p, &pooled)?;
        scores.ensure_finite("rcnn scores")?;
        let t3 = Instant::now();
        timings.roi_head = t3 - t2;

        let c1 = scores.shape()[1];
        let mut start = 0;
        for (f, b) in props.iter().enumerate() {
            let n = b.len();
            if n > 0 {
                let s = Tensor::new(&[n, c1], scores.data()[start * c1..(start + n) * c1].to_vec())?;
                let d = Tensor::new(&[n, 4], deltas.data()[start * 4..(start + n) * 4].to_vec())?;
                dets[f] = decode_detections(f, &s, &d, &b.boxes, w, h, decode)?;
            }
            start += n;
        }
        timings.postprocess = t3.elapsed();
        Ok((dets, timings))
    }
}
