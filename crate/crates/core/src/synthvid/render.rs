use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::formats::{ActorTrack, FrameContainer};
use crate::rpn::BBox;

use super::SynthSpec;

const MIN_SIDE: f64 = 8.0;
const PLACEMENT_RETRIES: usize = 500;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ActionClass {
    MoveRight,
    MoveLeft,
    Grow,
    Shrink,
    Fall,
    Still,
}

impl ActionClass {
    pub const ALL: [ActionClass; 6] = [
        Self::MoveRight,
        Self::MoveLeft,
        Self::Grow,
        Self::Shrink,
        Self::Fall,
        Self::Still,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::MoveRight => "move-right",
            Self::MoveLeft => "move-left",
            Self::Grow => "grow",
            Self::Shrink => "shrink",
            Self::Fall => "fall",
            Self::Still => "still",
        }
    }
}

impl fmt::Display for ActionClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ActionClass {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s)
            .ok_or_else(|| {
                let known: Vec<&str> = Self::ALL.iter().map(|c| c.name()).collect();
                format!("unknown class `{s}` (known: {})", known.join(", "))
            })
    }
}

/// Box of one actor at every frame, before placement offsets are checked.
fn trajectory(class: ActionClass, t_len: usize, spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Vec<BBox> {
    let (w_img, h_img) = (spec.width as f64, spec.height as f64);
    let last = (t_len - 1).max(1) as f64;
    let side = |rng: &mut ChaCha8Rng| rng.gen_range(spec.min_actor..=spec.max_actor);
    match class {
        ActionClass::MoveRight | ActionClass::MoveLeft => {
            let (w, h) = (side(rng), side(rng));
            let v = rng.gen_range(spec.min_speed..=spec.max_speed);
            let travel = v * last;
            // start ranges mirror each other so single-frame positions share one distribution
            let x_lo = if class == ActionClass::MoveRight { 0.0 } else { travel };
            let x_hi = (w_img - w - travel).max(0.0) + x_lo;
            let x0 = rng.gen_range(x_lo..=x_hi);
            let y0 = rng.gen_range(0.0..=(h_img - h));
            let dir = if class == ActionClass::MoveRight { 1.0 } else { -1.0 };
            (0..t_len)
                .map(|t| {
                    let x = x0 + dir * v * t as f64;
                    BBox::new(x, y0, x + w, y0 + h)
                })
                .collect()
        }
        ActionClass::Grow | ActionClass::Shrink => {
            let small_hi = (spec.max_actor * 1.2 / spec.scale_range).max(MIN_SIDE + 1.0);
            let small = rng.gen_range(MIN_SIDE + 1.0..=small_hi);
            let aspect: f64 = rng.gen_range(0.8..=1.25);
            let big = small * spec.scale_range;
            let (big_w, big_h) = (big * aspect.sqrt(), big / aspect.sqrt());
            let cx = rng.gen_range(big_w / 2.0..=(w_img - big_w / 2.0).max(big_w / 2.0));
            let cy = rng.gen_range(big_h / 2.0..=(h_img - big_h / 2.0).max(big_h / 2.0));
            (0..t_len)
                .map(|t| {
                    let p = t as f64 / last;
                    let p = if class == ActionClass::Grow { p } else { 1.0 - p };
                    let s = small + (big - small) * p;
                    BBox::from_center(cx, cy, s * aspect.sqrt(), s / aspect.sqrt())
                })
                .collect()
        }
        ActionClass::Fall => {
            let w0 = rng.gen_range(MIN_SIDE..=MIN_SIDE + 4.0);
            let h0 = rng.gen_range(w0 + 6.0..=(spec.max_actor + 4.0).max(w0 + 6.0));
            let drop = rng.gen_range(0.25..=0.5) * h0;
            let cx = rng.gen_range(h0 / 2.0..=(w_img - h0 / 2.0).max(h0 / 2.0));
            let bottom0 = rng.gen_range(h0..=(h_img - drop).max(h0));
            (0..t_len)
                .map(|t| {
                    let p = (t as f64 / last).powi(2);
                    let w = w0 + (h0 - w0) * p;
                    let h = h0 + (w0 - h0) * p;
                    let bottom = bottom0 + drop * p;
                    BBox::new(cx - w / 2.0, bottom - h, cx + w / 2.0, bottom)
                })
                .collect()
        }
        ActionClass::Still => {
            let (w, h) = (side(rng), side(rng));
            let x = rng.gen_range(0.0..=(w_img - w));
            let y = rng.gen_range(0.0..=(h_img - h));
            vec![BBox::new(x, y, x + w, y + h); t_len]
        }
    }
}

fn inside(b: &BBox, w: f64, h: f64) -> bool {
    b.x1 >= 0.0 && b.y1 >= 0.0 && b.x2 <= w && b.y2 <= h && b.width() >= MIN_SIDE && b.height() >= MIN_SIDE
}

/// Actors keep at least one pixel of clearance in every frame, so they never occlude.
fn separated(a: &[BBox], b: &[BBox]) -> bool {
    a.iter().zip(b).all(|(p, q)| {
        p.x2 + 1.0 <= q.x1 || q.x2 + 1.0 <= p.x1 || p.y2 + 1.0 <= q.y1 || q.y2 + 1.0 <= p.y1
    })
}

struct Texture {
    colors: [[f32; 3]; 2],
    cells_x: f64,
    cells_y: f64,
}

impl Texture {
    fn random(rng: &mut ChaCha8Rng, lo: f32, hi: f32, cells: std::ops::RangeInclusive<u32>) -> Self {
        let mut color = || [0; 3].map(|_: i32| rng.gen_range(lo..=hi));
        let colors = [color(), color()];
        Self {
            colors,
            cells_x: rng.gen_range(cells.clone()) as f64,
            cells_y: rng.gen_range(cells) as f64,
        }
    }

    /// Colour at normalised texture coordinates `(u, v)`.
    fn at(&self, u: f64, v: f64) -> [f32; 3] {
        let parity = ((u * self.cells_x).floor() as i64 + (v * self.cells_y).floor() as i64).rem_euclid(2);
        self.colors[parity as usize]
    }
}

/// Renders one clip. Pixel `(x, y)` belongs to an actor when its centre
/// `(x + 0.5, y + 0.5)` lies inside the actor box; the actor texture is
/// attached to the box, so it moves and scales with it.
pub fn render_clip(spec: &SynthSpec, index: usize) -> Result<(FrameContainer, Vec<ActorTrack>)> {
    use rand::SeedableRng;
    let mut rng = ChaCha8Rng::seed_from_u64(clip_seed(spec.seed, index));
    let (w, h) = (spec.width as f64, spec.height as f64);
    let t_len = spec.frames_per_clip;

    let mut actors: Vec<(ActionClass, Vec<BBox>)> = Vec::with_capacity(spec.actors_per_clip);
    for a in 0..spec.actors_per_clip {
        let class = spec.classes[rng.gen_range(0..spec.classes.len())];
        let mut placed = None;
        for _ in 0..PLACEMENT_RETRIES {
            let track = trajectory(class, t_len, spec, &mut rng);
            if track.iter().all(|b| inside(b, w, h)) && actors.iter().all(|(_, o)| separated(o, &track)) {
                placed = Some(track);
                break;
            }
        }
        let Some(track) = placed else {
            return Err(Error::Generation {
                clip: clip_id(index),
                detail: format!("no valid placement for actor {a} ({class}) after {PLACEMENT_RETRIES} tries"),
            });
        };
        actors.push((class, track));
    }

    let background = Texture::random(&mut rng, 0.05, 0.45, 4..=10);
    let textures: Vec<Texture> = actors
        .iter()
        .map(|_| Texture::random(&mut rng, 0.5, 1.0, 2..=4))
        .collect();
    let noise = Normal::new(0.0, spec.noise_std.max(0.0) as f32).expect("finite noise std");

    let (hh, ww) = (spec.height, spec.width);
    let plane = hh * ww;
    let mut data = vec![0u8; t_len * 3 * plane];
    for t in 0..t_len {
        let frame = &mut data[t * 3 * plane..(t + 1) * 3 * plane];
        for y in 0..hh {
            let py = y as f64 + 0.5;
            for x in 0..ww {
                let px = x as f64 + 0.5;
                let mut c = background.at(px / w, py / h);
                for ((_, track), tex) in actors.iter().zip(&textures) {
                    let b = &track[t];
                    if px >= b.x1 && px < b.x2 && py >= b.y1 && py < b.y2 {
                        c = tex.at((px - b.x1) / b.width(), (py - b.y1) / b.height());
                    }
                }
                for ch in 0..3 {
                    let v = c[ch] + if spec.noise_std > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                    frame[ch * plane + y * ww + x] = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
                }
            }
        }
    }
    let container = FrameContainer::new(t_len, hh, ww, 3, data)?;
    let tracks = actors
        .into_iter()
        .map(|(class, boxes)| ActorTrack {
            class: class.name().to_string(),
            boxes,
        })
        .collect();
    Ok((container, tracks))
}

pub fn clip_id(index: usize) -> String {
    format!("clip-{index:04}")
}

fn clip_seed(seed: u64, index: usize) -> u64 {
    seed ^ (index as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}
