//! Temporal channel shift between neighbouring frames.
//!
//! Frames are folded into the leading dimension (`[K, C, H, W]`). For each
//! frame `t` the first `fold` channels are taken from frame `t-1` and the next
//! `fold` channels from frame `t+1`; the remaining channels pass through.
//! Boundary frames receive zeros for the channels that have no source.

use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numcore::{Scalar, Tensor};

/// Fraction of channels moved in each temporal direction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftFraction {
    pub num: u32,
    pub den: u32,
}

impl ShiftFraction {
    pub const OFF: Self = Self { num: 0, den: 1 };
    pub const EIGHTH: Self = Self { num: 1, den: 8 };

    pub fn is_off(&self) -> bool {
        self.num == 0
    }

    /// Channels moved per direction for a `channels`-wide tensor.
    pub fn fold(&self, channels: usize) -> Result<usize> {
        if self.den == 0 {
            return Err(Error::config("shift_fraction", "zero denominator"));
        }
        let scaled = channels * self.num as usize;
        if scaled % self.den as usize != 0 {
            return Err(Error::contract(
                "temporal_shift",
                format!("{self} of {channels} channels is not an integer"),
            ));
        }
        let fold = scaled / self.den as usize;
        if 2 * fold > channels {
            return Err(Error::contract(
                "temporal_shift",
                format!("2 x {fold} shifted channels exceed {channels}"),
            ));
        }
        Ok(fold)
    }
}

impl fmt::Display for ShiftFraction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.num == 0 {
            write!(f, "0")
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

impl FromStr for ShiftFraction {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        let bad = || format!("expected `0` or `a/b` with a <= b, got `{s}`");
        let s = s.trim();
        if s == "0" {
            return Ok(Self::OFF);
        }
        let (a, b) = s.split_once('/').ok_or_else(bad)?;
        let num: u32 = a.trim().parse().map_err(|_| bad())?;
        let den: u32 = b.trim().parse().map_err(|_| bad())?;
        if den == 0 || num > den {
            return Err(bad());
        }
        Ok(if num == 0 { Self::OFF } else { Self { num, den } })
    }
}

/// Where the shift sits inside a residual block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShiftPlacement {
    /// Only the residual branch sees shifted features; the identity path does not.
    Residual,
    /// The block input itself is shifted before both paths.
    InPlace,
}

impl FromStr for ShiftPlacement {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim() {
            "residual" => Ok(Self::Residual),
            "in-place" | "inplace" => Ok(Self::InPlace),
            other => Err(format!("expected `residual` or `in-place`, got `{other}`")),
        }
    }
}

impl fmt::Display for ShiftPlacement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Residual => "residual",
            Self::InPlace => "in-place",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ShiftConfig {
    pub num_frames: usize,
    pub fraction: ShiftFraction,
    pub placement: ShiftPlacement,
}

impl Default for ShiftConfig {
    fn default() -> Self {
        Self {
            num_frames: 8,
            fraction: ShiftFraction::EIGHTH,
            placement: ShiftPlacement::Residual,
        }
    }
}

impl ShiftConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 2 {
            return Err(Error::config("num_frames", "must be at least 2"));
        }
        if self.fraction.den == 0 {
            return Err(Error::config("shift_fraction", "zero denominator"));
        }
        Ok(())
    }
}

fn shift_impl<T: Scalar>(
    x: &Tensor<T>,
    cfg: &ShiftConfig,
    forward: bool,
    op: &'static str,
) -> Result<Tensor<T>> {
    let [k, c, h, w] = x.dims4(op)?;
    if k != cfg.num_frames {
        return Err(Error::contract(
            op,
            format!("expected {} frames, got {k}", cfg.num_frames),
        ));
    }
    let fold = cfg.fraction.fold(c)?;
    let mut out = x.clone();
    if fold == 0 {
        return Ok(out);
    }
    let plane = h * w;
    let span = fold * plane;
    // forward: block A (channels [0,fold)) comes from t-1, block B from t+1.
    // backward (transpose): block A comes from t+1, block B from t-1.
    let (a_src, b_src): (isize, isize) = if forward { (-1, 1) } else { (1, -1) };
    for t in 0..k {
        let dst = out.item_mut(t);
        for (block, delta) in [(0usize, a_src), (1, b_src)] {
            let range = block * span..(block + 1) * span;
            let src_t = t as isize + delta;
            if src_t < 0 || src_t >= k as isize {
                dst[range].iter_mut().for_each(|v| *v = T::zero());
            } else {
                dst[range.clone()].copy_from_slice(&x.item(src_t as usize)[range]);
            }
        }
    }
    Ok(out)
}

/// Applies the bidirectional temporal shift to `[K, C, H, W]` features.
pub fn temporal_shift<T: Scalar>(features: &Tensor<T>, cfg: &ShiftConfig) -> Result<Tensor<T>> {
    shift_impl(features, cfg, true, "temporal_shift")
}

/// Transpose of [`temporal_shift`]: routes gradients back to their source
/// frames. Equivalently, the shift with both directions swapped.
pub fn temporal_shift_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    cfg: &ShiftConfig,
) -> Result<Tensor<T>> {
    shift_impl(grad_out, cfg, false, "temporal_shift_backward")
}

/// Temporal extent (in frames) visible after `depth` stacked shift blocks.
pub fn receptive_field(depth: usize, num_frames: usize) -> usize {
    (1 + 2 * depth).min(num_frames)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(k: usize, fraction: ShiftFraction) -> ShiftConfig {
        ShiftConfig {
            num_frames: k,
            fraction,
            placement: ShiftPlacement::Residual,
        }
    }

    fn at(t: &Tensor<f32>, f: usize, c: usize) -> f32 {
        let [_, cc, h, w] = t.dims4("at").unwrap();
        t.data()[((f * cc) + c) * h * w]
    }

    #[test]
    fn three_frame_hand_example() {
        let x = Tensor::from_fn(&[3, 8, 1, 1], |i| (i / 8 + 1) as f32);
        let y = temporal_shift(&x, &cfg(3, ShiftFraction::EIGHTH)).unwrap();
        assert_eq!((at(&y, 0, 0), at(&y, 0, 1)), (0.0, 2.0));
        assert_eq!((at(&y, 1, 0), at(&y, 1, 1)), (1.0, 3.0));
        assert_eq!((at(&y, 2, 0), at(&y, 2, 1)), (2.0, 0.0));
        for (f, v) in [(0, 1.0), (1, 2.0), (2, 3.0)] {
            assert!((2..8).all(|c| at(&y, f, c) == v));
        }
    }

    #[test]
    fn zero_fraction_is_identity() {
        let x = Tensor::from_fn(&[4, 8, 2, 2], |i| i as f32);
        assert_eq!(temporal_shift(&x, &cfg(4, ShiftFraction::OFF)).unwrap(), x);
    }

    #[test]
    fn constant_in_time_only_boundaries_change() {
        let x = Tensor::from_fn(&[5, 16, 2, 3], |i| ((i % 96) as f32).sin() + 2.0);
        let y = temporal_shift(&x, &cfg(5, ShiftFraction::EIGHTH)).unwrap();
        let plane = 6;
        for t in 0..5 {
            for c in 0..16 {
                for p in 0..plane {
                    let idx = (t * 16 + c) * plane + p;
                    let zeroed = (t == 0 && c < 2) || (t == 4 && (2..4).contains(&c));
                    let expect = if zeroed { 0.0 } else { x.data()[idx] };
                    assert_eq!(y.data()[idx], expect);
                }
            }
        }
    }

    #[test]
    fn errors_on_bad_fold_or_frame_count() {
        let x = Tensor::<f32>::zeros(&[4, 6, 1, 1]);
        assert!(temporal_shift(&x, &cfg(4, ShiftFraction::EIGHTH)).is_err());
        let x = Tensor::<f32>::zeros(&[3, 8, 1, 1]);
        assert!(temporal_shift(&x, &cfg(4, ShiftFraction::EIGHTH)).is_err());
    }

    #[test]
    fn receptive_field_growth() {
        assert_eq!(receptive_field(0, 8), 1);
        assert_eq!(receptive_field(1, 8), 3);
        assert_eq!(receptive_field(4, 8), 8);
        assert_eq!(receptive_field(3, 8), 7);
    }

    #[test]
    fn fraction_parsing() {
        assert_eq!("1/8".parse::<ShiftFraction>().unwrap(), ShiftFraction::EIGHTH);
        assert!("0".parse::<ShiftFraction>().unwrap().is_off());
        assert!("3".parse::<ShiftFraction>().is_err());
        assert!("1/0".parse::<ShiftFraction>().is_err());
    }
}
