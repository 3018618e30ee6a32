//! Central finite-difference verification of analytic gradients (64-bit only).

use std::collections::BTreeMap;

use super::Tensor;

/// Denominator floor for the relative error, so vanishing gradients are
/// compared on an absolute scale.
pub const REL_ERR_FLOOR: f64 = 1e-4;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckConfig {
    pub epsilon: f64,
    /// Upper bound on coordinates probed per tensor; larger tensors are strided.
    pub max_probes: usize,
    /// One-sided slopes disagreeing by more than this (relative) mark a
    /// non-smooth point, which is skipped.
    pub kink_tolerance: f64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            max_probes: 64,
            kink_tolerance: 1e-3,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct GradStat {
    pub max_rel_err: f64,
    pub checked: usize,
    pub skipped: usize,
}

/// Per-parameter results. `None` marks a parameter with no gradient (frozen).
#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub entries: BTreeMap<String, Option<GradStat>>,
}

impl GradCheckReport {
    pub fn push(&mut self, name: impl Into<String>, stat: Option<GradStat>) {
        self.entries.insert(name.into(), stat);
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries
            .values()
            .flatten()
            .map(|s| s.max_rel_err)
            .fold(0.0, f64::max)
    }

    pub fn total_checked(&self) -> usize {
        self.entries.values().flatten().map(|s| s.checked).sum()
    }

    pub fn is_absent(&self, name: &str) -> bool {
        matches!(self.entries.get(name), Some(None))
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERR_FLOOR)
}

fn probe_indices(len: usize, max_probes: usize) -> Vec<usize> {
    if len <= max_probes {
        (0..len).collect()
    } else {
        // odd stride spreads probes across channels and rows
        let stride = (len / max_probes) | 1;
        (0..max_probes).map(|i| (i * stride + i / 3) % len).collect()
    }
}

/// Compares `analytic` against central differences of `loss` around `point`.
///
/// `near_kink(point, i)` lets the caller exclude coordinates that sit within
/// a known non-differentiable region; kinks hidden inside composite functions
/// are caught by comparing the two one-sided slopes.
pub fn check_tensor<F, K>(
    point: &Tensor<f64>,
    analytic: &Tensor<f64>,
    cfg: &GradCheckConfig,
    mut loss: F,
    near_kink: K,
) -> GradStat
where
    F: FnMut(&Tensor<f64>) -> f64,
    K: Fn(&Tensor<f64>, usize) -> bool,
{
    assert_eq!(point.shape(), analytic.shape(), "analytic gradient shape");
    let eps = cfg.epsilon;
    let base = loss(point);
    let mut probe = point.clone();
    let mut stat = GradStat::default();
    for i in probe_indices(point.len(), cfg.max_probes) {
        if near_kink(point, i) {
            stat.skipped += 1;
            continue;
        }
        let x0 = point.data()[i];
        probe.data_mut()[i] = x0 + eps;
        let plus = loss(&probe);
        probe.data_mut()[i] = x0 - eps;
        let minus = loss(&probe);
        probe.data_mut()[i] = x0;

        let numeric = (plus - minus) / (2.0 * eps);
        let right = (plus - base) / eps;
        let left = (base - minus) / eps;
        if (right - left).abs() > cfg.kink_tolerance * numeric.abs().max(1.0) {
            stat.skipped += 1;
            continue;
        }
        stat.max_rel_err = stat.max_rel_err.max(rel_err(analytic.data()[i], numeric));
        stat.checked += 1;
    }
    stat
}

/// Deterministic pseudo-random tensor in `[-scale, scale]` for checks and tests.
pub fn seeded_tensor(shape: &[usize], seed: u64, scale: f64) -> Tensor<f64> {
    let mut s = seed ^ 0x9E37_79B9_7F4A_7C15;
    Tensor::from_fn(shape, |_| {
        s ^= s << 13;
        s ^= s >> 7;
        s ^= s << 17;
        ((s >> 11) as f64 / (1u64 << 53) as f64 * 2.0 - 1.0) * scale
    })
}
