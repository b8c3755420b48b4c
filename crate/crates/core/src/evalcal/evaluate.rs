use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::metrics::MetricsReport;
use super::partition::{tile_context, Role, TilePartition};
use super::stratify::{DisturbanceRecord, Stratum};
use crate::anp::{AnpModel, Footprint, PredictiveGaussian};
use crate::baselines::{quantiles_to_gaussian, CenterRule, FlatFeature, GbqPair, QrfForest, Q_HIGH, Q_LOW, Q_MID};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Method {
    Qrf,
    Gbq,
    Anp,
}

impl Method {
    /// Report column order.
    pub const ALL: [Method; 3] = [Method::Qrf, Method::Gbq, Method::Anp];

    pub fn key(&self) -> &'static str {
        match self {
            Method::Qrf => "qrf",
            Method::Gbq => "gbq",
            Method::Anp => "anp",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Qrf => "QRF",
            Method::Gbq => "GBQ",
            Method::Anp => "ANP",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "qrf" => Ok(Method::Qrf),
            "gbq" => Ok(Method::Gbq),
            "anp" => Ok(Method::Anp),
            other => Err(Error::Config(format!("unknown method {other:?} (expected anp, qrf or gbq)"))),
        }
    }
}

/// Anything that maps one tile's targets to Gaussian predictions.
pub trait Predictor: Sync {
    fn method(&self) -> Method;

    /// Predictions for `targets` of a single tile, given that tile's
    /// footprints from the other years. The flag marks crossed quantiles.
    fn predict_tile(&self, context: &[Footprint], targets: &[Footprint]) -> Result<Vec<(PredictiveGaussian, bool)>>;
}

pub struct AnpPredictor<'a> {
    pub model: &'a AnpModel,
    pub samples: usize,
    pub seed: u64,
}

impl Predictor for AnpPredictor<'_> {
    fn method(&self) -> Method {
        Method::Anp
    }

    fn predict_tile(&self, context: &[Footprint], targets: &[Footprint]) -> Result<Vec<(PredictiveGaussian, bool)>> {
        let queries: Vec<_> = targets.iter().map(|f| (f.patch.clone(), f.coord)).collect();
        let seed = crate::rng::derive_seed(self.seed, &[targets.first().map_or(0, |f| f.tile_id as u64)]);
        Ok(self
            .model
            .predict(context, &queries, self.samples, seed)?
            .into_iter()
            .map(|g| (g, false))
            .collect())
    }
}

pub struct QrfPredictor<'a> {
    pub forest: &'a QrfForest,
    pub sigma_floor: f64,
}

impl Predictor for QrfPredictor<'_> {
    fn method(&self) -> Method {
        Method::Qrf
    }

    fn predict_tile(&self, _context: &[Footprint], targets: &[Footprint]) -> Result<Vec<(PredictiveGaussian, bool)>> {
        targets
            .iter()
            .map(|f| {
                let q = self.forest.predict(&FlatFeature::from_footprint(f), &[Q_LOW, Q_MID, Q_HIGH])?;
                Ok(quantiles_to_gaussian(q[0], q[1], q[2], CenterRule::Median, self.sigma_floor))
            })
            .collect()
    }
}

pub struct GbqPredictor<'a> {
    pub pair: &'a GbqPair,
    pub sigma_floor: f64,
}

impl Predictor for GbqPredictor<'_> {
    fn method(&self) -> Method {
        Method::Gbq
    }

    fn predict_tile(&self, _context: &[Footprint], targets: &[Footprint]) -> Result<Vec<(PredictiveGaussian, bool)>> {
        targets
            .iter()
            .map(|f| self.pair.predict(&FlatFeature::from_footprint(f), self.sigma_floor))
            .collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalPoint {
    pub tile_id: u32,
    pub footprint_id: u64,
    pub y: f64,
    pub mu: f64,
    pub sigma: f64,
    pub stratum: Option<Stratum>,
    pub crossed: bool,
}

/// One method evaluated on one partition seed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedEvaluation {
    pub method: Method,
    pub seed: u64,
    pub report: MetricsReport,
    pub points: Vec<EvalPoint>,
    /// Test tiles without any other-year footprints.
    pub skipped_tiles: Vec<u32>,
    pub crossings: usize,
}

/// Predicts every holdout-year footprint of every test tile and scores the result.
pub fn evaluate_model(
    predictor: &dyn Predictor,
    footprints: &[Footprint],
    partition: &TilePartition,
    holdout_year: i32,
    strata: &BTreeMap<u32, DisturbanceRecord>,
) -> Result<SeedEvaluation> {
    let mut by_tile: BTreeMap<u32, Vec<Footprint>> = BTreeMap::new();
    for f in footprints {
        if f.year == holdout_year && partition.roles.get(f.tile_id as usize) == Some(&Role::Test) {
            by_tile.entry(f.tile_id).or_default().push(f.clone());
        }
    }
    let mut points = Vec::new();
    let mut skipped_tiles = Vec::new();
    for (tile, targets) in &by_tile {
        let context = tile_context(footprints, *tile, holdout_year);
        let preds = match predictor.predict_tile(&context, targets) {
            Err(Error::EmptyContext) => {
                skipped_tiles.push(*tile);
                continue;
            }
            other => other?,
        };
        let stratum = strata.get(tile).map(|r| r.stratum);
        for (f, (g, crossed)) in targets.iter().zip(preds) {
            points.push(EvalPoint {
                tile_id: *tile,
                footprint_id: f.id,
                y: f.y_norm,
                mu: g.mu,
                sigma: g.sigma,
                stratum,
                crossed,
            });
        }
    }
    if points.len() < 2 {
        return Err(Error::EvaluationEmpty);
    }
    let (y, mu, sigma) = columns(&points);
    Ok(SeedEvaluation {
        method: predictor.method(),
        seed: partition.seed,
        report: MetricsReport::compute(&y, &mu, &sigma)?,
        crossings: points.iter().filter(|p| p.crossed).count(),
        points,
        skipped_tiles,
    })
}

pub(crate) fn columns(points: &[EvalPoint]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let y = points.iter().map(|p| p.y).collect();
    let mu = points.iter().map(|p| p.mu).collect();
    let sigma = points.iter().map(|p| p.sigma).collect();
    (y, mu, sigma)
}
