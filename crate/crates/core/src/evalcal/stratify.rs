use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::anp::Footprint;
use crate::error::{contract, Error, Result};
use crate::synthworld::denormalize_agbd;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stratum {
    Stable,
    Moderate,
    Disturbed,
}

impl Stratum {
    pub const ALL: [Stratum; 3] = [Stratum::Stable, Stratum::Moderate, Stratum::Disturbed];

    /// `δ < 0.1` Stable, `0.1 ≤ δ ≤ 0.3` Moderate, `δ > 0.3` Disturbed.
    pub fn from_delta(delta: f64) -> Self {
        if delta < 0.1 {
            Stratum::Stable
        } else if delta <= 0.3 {
            Stratum::Moderate
        } else {
            Stratum::Disturbed
        }
    }
}

impl fmt::Display for Stratum {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Stratum::Stable => "Stable",
            Stratum::Moderate => "Moderate",
            Stratum::Disturbed => "Disturbed",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DisturbanceRecord {
    pub tile_id: u32,
    pub ybar_exp: f64,
    pub ybar_test: f64,
    pub delta: f64,
    pub stratum: Stratum,
}

/// Relative drop of the test-year mean below the mean of the surrounding
/// years' means: `δ = (ȳ_exp − ȳ_test) / ȳ_exp`.
pub fn disturbance_delta(tile_id: u32, yearly_tile_means: &BTreeMap<i32, f64>, test_year: i32) -> Result<DisturbanceRecord> {
    let ybar_test = *yearly_tile_means
        .get(&test_year)
        .ok_or(Error::StratificationUnavailable { tile_id })?;
    let pre: Vec<f64> = yearly_tile_means.range(..test_year).map(|(_, v)| *v).collect();
    let post: Vec<f64> = yearly_tile_means.range(test_year + 1..).map(|(_, v)| *v).collect();
    if pre.is_empty() || post.is_empty() {
        return Err(Error::StratificationUnavailable { tile_id });
    }
    let all: Vec<f64> = pre.into_iter().chain(post).collect();
    let ybar_exp = all.iter().sum::<f64>() / all.len() as f64;
    record(tile_id, ybar_exp, ybar_test)
}

fn record(tile_id: u32, ybar_exp: f64, ybar_test: f64) -> Result<DisturbanceRecord> {
    if !(ybar_exp > 0.0) {
        return Err(Error::StratificationUnavailable { tile_id });
    }
    let delta = (ybar_exp - ybar_test) / ybar_exp;
    Ok(DisturbanceRecord {
        tile_id,
        ybar_exp,
        ybar_test,
        delta,
        stratum: Stratum::from_delta(delta),
    })
}

/// How surrounding-year observations are averaged into `ȳ_exp`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum DeltaPooling {
    /// Unweighted mean of per-year means.
    #[default]
    YearMeans,
    /// Mean over all surrounding-year shots.
    Shots,
}

/// Per-tile disturbance records from every footprint of each tile,
/// regardless of partition role. Tiles that cannot be stratified are omitted.
pub fn tile_disturbance(footprints: &[Footprint], test_year: i32, pooling: DeltaPooling) -> BTreeMap<u32, DisturbanceRecord> {
    let mut acc: BTreeMap<u32, BTreeMap<i32, (f64, usize)>> = BTreeMap::new();
    for f in footprints {
        let e = acc.entry(f.tile_id).or_default().entry(f.year).or_default();
        e.0 += denormalize_agbd(f.y_norm);
        e.1 += 1;
    }
    let mut out = BTreeMap::new();
    for (tile, years) in acc {
        let rec = match pooling {
            DeltaPooling::YearMeans => {
                let means = years.iter().map(|(&y, &(s, n))| (y, s / n as f64)).collect();
                disturbance_delta(tile, &means, test_year)
            }
            DeltaPooling::Shots => {
                let has_pre = years.range(..test_year).next().is_some();
                let has_post = years.range(test_year + 1..).next().is_some();
                match years.get(&test_year) {
                    Some(&(s, n)) if has_pre && has_post => {
                        let (ss, nn) = years
                            .iter()
                            .filter(|(&y, _)| y != test_year)
                            .fold((0.0, 0), |(a, b), (_, &(s, n))| (a + s, b + n));
                        record(tile, ss / nn as f64, s / n as f64)
                    }
                    _ => Err(Error::StratificationUnavailable { tile_id: tile }),
                }
            }
        };
        if let Ok(r) = rec {
            out.insert(tile, r);
        }
    }
    out
}

/// One evaluated point tagged with its tile's stratum.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StratifiedPair {
    pub y: f64,
    pub pred: f64,
    pub stratum: Stratum,
}

/// R² over every pair of `stratum`, pooled across seeds before computing.
pub fn pooled_stratified_r2(pairs: &[StratifiedPair], stratum: Stratum) -> Result<f64> {
    let (y, p): (Vec<f64>, Vec<f64>) = pairs
        .iter()
        .filter(|s| s.stratum == stratum)
        .map(|s| (s.y, s.pred))
        .unzip();
    if y.is_empty() {
        return Err(Error::Undefined(format!("stratum {stratum} is empty")));
    }
    if y.len() < 2 {
        return Err(contract(format!("stratum {stratum} has a single value")));
    }
    super::metrics::r2(&y, &p)
}
