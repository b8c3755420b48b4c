//! Tree-ensemble quantile baselines sharing the model's input features.

mod gbq;
mod qrf;
mod tree;

pub use gbq::{GbqModel, GbqPair, GbqParams, GBQ_KIND};
pub use qrf::{QrfForest, QrfParams, QRF_KIND};

use crate::anp::{Footprint, SpatioTemporalCoord, PredictiveGaussian, COORD_DIM};
use crate::diffcore::Tensor;
use crate::error::{contract, Result};

pub const Q_LOW: f64 = 0.16;
pub const Q_MID: f64 = 0.5;
pub const Q_HIGH: f64 = 0.84;

/// `[lon, lat, doy_sin, doy_cos, tau, patch...]`, length `5 + 9·D`.
#[derive(Clone, Debug, PartialEq)]
pub struct FlatFeature(pub Vec<f64>);

impl FlatFeature {
    pub fn new(patch: &Tensor, coord: &SpatioTemporalCoord) -> Self {
        let mut v = Vec::with_capacity(COORD_DIM + patch.len());
        v.extend_from_slice(&coord.to_array());
        v.extend_from_slice(patch.data());
        Self(v)
    }

    pub fn from_footprint(f: &Footprint) -> Self {
        Self::new(&f.patch, &f.coord)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

pub fn flat_features(footprints: &[Footprint]) -> Vec<FlatFeature> {
    footprints.iter().map(FlatFeature::from_footprint).collect()
}

/// Empirical quantile of sorted data by linear interpolation between order
/// statistics at position `(n-1)·q`.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of an empty sample");
    let h = (sorted.len() - 1) as f64 * q.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    quantile_sorted(&v, q)
}

/// Smallest order statistic `x_(⌈n·q⌉)`; always a minimizer of the mean
/// pinball loss over constants.
pub fn pinball_minimizer(values: &[f64], q: f64) -> f64 {
    assert!(!values.is_empty(), "quantile of an empty sample");
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let k = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[k - 1]
}

pub fn pinball(y: f64, pred: f64, q: f64) -> f64 {
    if y >= pred {
        (y - pred) * q
    } else {
        (pred - y) * (1.0 - q)
    }
}

pub fn mean_pinball(y: &[f64], pred: &[f64], q: f64) -> f64 {
    y.iter().zip(pred).map(|(&a, &b)| pinball(a, b, q)).sum::<f64>() / y.len() as f64
}

/// How a Gaussian mean is taken from a quantile triple.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum CenterRule {
    Median,
    Midpoint,
}

/// Gaussian approximation of a `(q16, q50, q84)` interval.
///
/// Returns the Gaussian and whether the quantiles crossed; crossed intervals
/// collapse to their midpoint with `σ = sigma_floor`.
pub fn quantiles_to_gaussian(q16: f64, q50: f64, q84: f64, center: CenterRule, sigma_floor: f64) -> (PredictiveGaussian, bool) {
    let crossed = q16 > q84;
    let (lo, hi) = if crossed {
        let m = 0.5 * (q16 + q84);
        (m, m)
    } else {
        (q16, q84)
    };
    let mu = match center {
        CenterRule::Median => q50,
        CenterRule::Midpoint => 0.5 * (lo + hi),
    };
    let sigma = (0.5 * (hi - lo)).max(sigma_floor);
    (PredictiveGaussian { mu, sigma }, crossed)
}

pub(crate) fn check_xy(x: &[FlatFeature], y: &[f64], min_leaf: usize) -> Result<usize> {
    if x.len() != y.len() {
        return Err(contract(format!("{} feature rows for {} targets", x.len(), y.len())));
    }
    if min_leaf == 0 || x.len() < 2 * min_leaf {
        return Err(contract(format!("need at least {} samples for min_leaf {min_leaf}", 2 * min_leaf.max(1))));
    }
    let p = x[0].len();
    if p == 0 || x.iter().any(|r| r.len() != p) {
        return Err(contract("feature rows must share a non-zero width"));
    }
    if x.iter().any(|r| r.0.iter().any(|v| !v.is_finite())) || y.iter().any(|v| !v.is_finite()) {
        return Err(contract("non-finite training value"));
    }
    Ok(p)
}
