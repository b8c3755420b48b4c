//! One evaluation seed end to end: partition, training view, model fitting
//! and scoring. Seeds are independent and run on a bounded rayon pool.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::anp::{AnpModel, Footprint, ModelParams};
use crate::baselines::{flat_features, GbqPair, QrfForest};
use crate::config::RunConfig;
use crate::container::Container;
use crate::error::{contract, Error, Result};
use crate::evalcal::{
    evaluate_model, partition_tiles, temporal_holdout, tile_disturbance, AnpPredictor, DisturbanceRecord, GbqPredictor,
    Method, MethodSummary, Predictor, QrfPredictor, SeedEvaluation, TilePartition,
};
use crate::rng::derive_seed;
use crate::training::{train_with_log, StepLog, TrainingConfig};

/// Copy of `footprints` whose holdout-year labels are NaN.
///
/// Training only ever sees data filtered from this copy, so a holdout-year
/// record that slips through fails footprint validation instead of silently
/// leaking its label.
pub fn poison_holdout(footprints: &[Footprint], holdout_year: i32) -> Vec<Footprint> {
    footprints
        .iter()
        .map(|f| {
            let mut f = f.clone();
            if f.year == holdout_year {
                f.y_norm = f64::NAN;
            }
            f
        })
        .collect()
}

/// Poisoned or holdout-year records in a training set.
pub fn poison_hits(train: &[Footprint], holdout_year: i32) -> usize {
    train.iter().filter(|f| f.y_norm.is_nan() || f.year == holdout_year).count()
}

/// Training footprints for one partition: non-holdout years of train tiles.
pub fn training_view(footprints: &[Footprint], partition: &TilePartition, holdout_year: i32) -> Result<Vec<Footprint>> {
    let poisoned = poison_holdout(footprints, holdout_year);
    let train = temporal_holdout(&poisoned, partition, holdout_year)?.train;
    let hits = poison_hits(&train, holdout_year);
    if hits > 0 {
        return Err(contract(format!("{hits} holdout-year records reached the training view")));
    }
    Ok(train)
}

/// Every `stride`-th element, keeping at most `max` (all when `max == 0`).
pub fn thin<T: Clone>(items: &[T], max: usize) -> Vec<T> {
    if max == 0 || items.len() <= max {
        return items.to_vec();
    }
    let stride = items.len().div_ceil(max);
    items.iter().step_by(stride).cloned().collect()
}

/// A fitted model of one method.
#[derive(Clone, Debug, PartialEq)]
pub enum Fitted {
    Anp(ModelParams),
    Qrf(QrfForest),
    Gbq(GbqPair),
}

impl Fitted {
    pub fn method(&self) -> Method {
        match self {
            Fitted::Anp(_) => Method::Anp,
            Fitted::Qrf(_) => Method::Qrf,
            Fitted::Gbq(_) => Method::Gbq,
        }
    }

    pub fn to_container(&self) -> Container {
        match self {
            Fitted::Anp(p) => p.to_container(),
            Fitted::Qrf(f) => f.to_container(),
            Fitted::Gbq(g) => g.to_container(),
        }
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        match c.kind.as_str() {
            crate::anp::ANP_KIND => Ok(Fitted::Anp(ModelParams::from_container(c)?)),
            crate::baselines::QRF_KIND => Ok(Fitted::Qrf(QrfForest::from_container(c)?)),
            crate::baselines::GBQ_KIND => Ok(Fitted::Gbq(GbqPair::from_container(c)?)),
            other => Err(Error::Format(format!("unknown checkpoint kind {other:?}"))),
        }
    }

    /// Writes the checkpoint with the run config echoed under `config.*`.
    pub fn save(&self, path: &Path, echo: &BTreeMap<String, String>) -> Result<()> {
        let mut c = self.to_container();
        for (k, v) in echo {
            c.set(&format!("config.{k}"), v);
        }
        c.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}

/// Fixed checkpoint file name for a method and seed.
pub fn checkpoint_name(method: Method, seed: u64) -> String {
    format!("{}_seed{seed}.ckpt", method.key())
}

pub fn train_log_name(method: Method, seed: u64) -> String {
    format!("train_{}_seed{seed}.log", method.key())
}

/// Training config for partition `seed`, with its own derived RNG seed.
pub fn seeded_training(cfg: &RunConfig, seed: u64) -> TrainingConfig {
    TrainingConfig {
        seed: derive_seed(cfg.training.seed, &[seed]),
        holdout_year: Some(cfg.holdout_year),
        ..cfg.training.clone()
    }
}

/// Fits one method on the training view of partition `seed`.
///
/// ANP weights are rounded to `f32` so that a model used straight from
/// memory predicts exactly like its reloaded checkpoint.
pub fn fit_method(
    cfg: &RunConfig,
    footprints: &[Footprint],
    method: Method,
    seed: u64,
    log: impl FnMut(StepLog),
) -> Result<Fitted> {
    let partition = partition_tiles(&cfg.world.grid(), seed, cfg.buffer_radius)?;
    let train = training_view(footprints, &partition, cfg.holdout_year)?;
    match method {
        Method::Anp => {
            let out = train_with_log(&train, &cfg.model, &seeded_training(cfg, seed), log)?;
            Ok(Fitted::Anp(out.params.rounded_to_f32()))
        }
        Method::Qrf => {
            let train = thin(&train, cfg.baseline_max_points);
            let params = crate::baselines::QrfParams {
                seed: derive_seed(cfg.qrf.seed, &[seed]),
                ..cfg.qrf.clone()
            };
            let y: Vec<f64> = train.iter().map(|f| f.y_norm).collect();
            Ok(Fitted::Qrf(QrfForest::fit(&flat_features(&train), &y, &params)?))
        }
        Method::Gbq => {
            let train = thin(&train, cfg.baseline_max_points);
            let params = crate::baselines::GbqParams {
                seed: derive_seed(cfg.gbq.seed, &[seed]),
                ..cfg.gbq.clone()
            };
            let y: Vec<f64> = train.iter().map(|f| f.y_norm).collect();
            Ok(Fitted::Gbq(GbqPair::fit(&flat_features(&train), &y, &params, cfg.gbq_center)?))
        }
    }
}

/// Scores a fitted model on the holdout year of partition `seed`'s test tiles.
pub fn evaluate_fitted(
    cfg: &RunConfig,
    footprints: &[Footprint],
    fitted: &Fitted,
    seed: u64,
    strata: &BTreeMap<u32, DisturbanceRecord>,
) -> Result<SeedEvaluation> {
    let partition = partition_tiles(&cfg.world.grid(), seed, cfg.buffer_radius)?;
    let anp;
    let predictor: Box<dyn Predictor + '_> = match fitted {
        Fitted::Anp(p) => {
            if p.config.embed_dim != cfg.world.embed_dim {
                return Err(Error::Config("checkpoint embedding width differs from the dataset".into()));
            }
            anp = AnpModel::new(p.clone());
            Box::new(AnpPredictor {
                model: &anp,
                samples: cfg.model.latent_samples,
                seed: derive_seed(seed, &[0xE7A1]),
            })
        }
        Fitted::Qrf(f) => Box::new(QrfPredictor {
            forest: f,
            sigma_floor: cfg.baseline_sigma_floor,
        }),
        Fitted::Gbq(g) => Box::new(GbqPredictor {
            pair: g,
            sigma_floor: cfg.baseline_sigma_floor,
        }),
    };
    evaluate_model(predictor.as_ref(), footprints, &partition, cfg.holdout_year, strata)
}

/// Where [`run`] looks for and stores checkpoints and training logs.
#[derive(Clone, Debug, Default)]
pub struct RunPaths {
    /// Existing checkpoints here are reused instead of retraining.
    pub checkpoints: Option<PathBuf>,
    pub logs: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub summaries: Vec<MethodSummary>,
    pub strata: BTreeMap<u32, DisturbanceRecord>,
    pub fitted: BTreeMap<(Method, u64), Fitted>,
    pub logs: BTreeMap<(Method, u64), Vec<StepLog>>,
}

/// Fits (or loads) and evaluates every configured method on every run seed,
/// with at most `jobs` seeds in flight.
pub fn run(cfg: &RunConfig, footprints: &[Footprint], jobs: usize, paths: &RunPaths) -> Result<RunOutcome> {
    if jobs == 0 {
        return Err(Error::Config("jobs must be at least 1".into()));
    }
    for dir in paths.checkpoints.iter().chain(&paths.logs) {
        std::fs::create_dir_all(dir)?;
    }
    let strata = tile_disturbance(footprints, cfg.holdout_year, cfg.delta_pooling);
    let echo = cfg.echo();
    let one_seed = |seed: u64| -> Result<Vec<(Method, Fitted, Vec<StepLog>, SeedEvaluation)>> {
        let mut out = Vec::new();
        for &method in &cfg.methods {
            let ckpt = paths.checkpoints.as_ref().map(|d| d.join(checkpoint_name(method, seed)));
            let mut log = Vec::new();
            let fitted = match &ckpt {
                Some(p) if p.exists() => {
                    let f = Fitted::load(p)?;
                    if f.method() != method {
                        return Err(Error::Format(format!("{} does not hold a {method} model", p.display())));
                    }
                    f
                }
                _ => {
                    let f = fit_method(cfg, footprints, method, seed, |s| log.push(s))?;
                    if let Some(p) = &ckpt {
                        f.save(p, &echo)?;
                    }
                    if let (Some(dir), false) = (&paths.logs, log.is_empty()) {
                        write_train_log(&dir.join(train_log_name(method, seed)), &log, &echo)?;
                    }
                    f
                }
            };
            let eval = evaluate_fitted(cfg, footprints, &fitted, seed, &strata)?;
            out.push((method, fitted, log, eval));
        }
        Ok(out)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("cannot build a pool of {jobs} threads: {e}")))?;
    let per_seed: Vec<_> = pool.install(|| cfg.run_seeds().into_par_iter().map(|s| one_seed(s).map(|r| (s, r))).collect::<Result<Vec<_>>>())?;

    let mut summaries: Vec<MethodSummary> = Method::ALL
        .into_iter()
        .filter(|m| cfg.methods.contains(m))
        .map(|method| MethodSummary {
            method,
            seeds: Vec::new(),
        })
        .collect();
    let mut fitted = BTreeMap::new();
    let mut logs = BTreeMap::new();
    for (seed, results) in per_seed {
        for (method, f, log, eval) in results {
            summaries
                .iter_mut()
                .find(|s| s.method == method)
                .expect("configured method")
                .seeds
                .push(eval);
            fitted.insert((method, seed), f);
            logs.insert((method, seed), log);
        }
    }
    Ok(RunOutcome {
        summaries,
        strata,
        fitted,
        logs,
    })
}

pub fn write_train_log(path: &Path, log: &[StepLog], echo: &BTreeMap<String, String>) -> Result<()> {
    let mut s = String::new();
    for (k, v) in echo {
        s.push_str(&format!("# {k}={v}\n"));
    }
    for l in log {
        s.push_str(&format!("{l}\n"));
    }
    std::fs::write(path, s)?;
    Ok(())
}
