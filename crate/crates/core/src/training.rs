//! Episodic meta-training with a linear KL warm-up and Adam.

use std::collections::BTreeMap;
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::anp::{AnpConfig, AnpModel, Footprint, ModelParams};
use crate::diffcore::Tensor;
use crate::error::{contract, Error, Result};
use crate::rng::stream;

/// Fewest footprints a tile needs to form an episode.
pub const MIN_EPISODE_POINTS: usize = 4;

const ADAM_B1: f64 = 0.9;
const ADAM_B2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// A disjoint context/target split of one tile.
#[derive(Clone, Debug, PartialEq)]
pub struct Episode {
    pub context: Vec<Footprint>,
    pub targets: Vec<Footprint>,
    pub tile_id: u32,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub beta_max: f64,
    pub anneal_steps: usize,
    pub context_ratio_range: (f64, f64),
    /// Episodes per optimizer step; their gradients are averaged.
    pub episode_batch: usize,
    pub seed: u64,
    /// Posterior latent samples per episode.
    pub latent_samples_train: usize,
    /// Tiles larger than this are subsampled before each split.
    pub max_episode_points: usize,
    pub log_every: usize,
    /// Year that must never appear in the training data.
    pub holdout_year: Option<i32>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self::with_steps(2000)
    }
}

impl TrainingConfig {
    /// Defaults with the warm-up spanning the first 20% of `steps`.
    pub fn with_steps(steps: usize) -> Self {
        Self {
            steps,
            learning_rate: 3e-4,
            beta_max: 1.0,
            anneal_steps: steps / 5,
            context_ratio_range: (0.3, 0.7),
            episode_batch: 4,
            seed: 0,
            latent_samples_train: 1,
            max_episode_points: 256,
            log_every: 50,
            holdout_year: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let (lo, hi) = self.context_ratio_range;
        if !(0.0 < lo && lo <= hi && hi < 1.0) {
            return Err(Error::Config(format!("context ratio range ({lo}, {hi}) must satisfy 0 < low <= high < 1")));
        }
        if !(self.learning_rate > 0.0) || !(self.beta_max >= 0.0) {
            return Err(Error::Config("learning_rate must be positive and beta_max non-negative".into()));
        }
        if self.episode_batch == 0 || self.latent_samples_train == 0 || self.log_every == 0 {
            return Err(Error::Config("episode_batch, latent_samples_train and log_every must be positive".into()));
        }
        if self.max_episode_points < MIN_EPISODE_POINTS {
            return Err(Error::Config(format!("max_episode_points must be at least {MIN_EPISODE_POINTS}")));
        }
        Ok(())
    }
}

/// KL weight at `step`: a linear ramp from 0 to `beta_max` over `anneal_steps`.
pub fn beta_schedule(step: usize, config: &TrainingConfig) -> f64 {
    if config.anneal_steps == 0 {
        return config.beta_max;
    }
    config.beta_max * (step as f64 / config.anneal_steps as f64).min(1.0)
}

fn context_size(n: usize, ratio: f64) -> usize {
    ((ratio * n as f64).ceil() as usize).clamp(1, n - 1)
}

/// Splits one tile's footprints into disjoint context and target sets with
/// `⌈ratio·n⌉` context points, keeping at least one of each.
pub fn make_episode(tile_footprints: &[Footprint], context_ratio: f64, seed: u64) -> Result<Episode> {
    let tile_id = tile_footprints.first().map_or(0, |f| f.tile_id);
    if tile_footprints.len() < MIN_EPISODE_POINTS {
        return Err(Error::TileTooSparse {
            tile_id,
            count: tile_footprints.len(),
            min: MIN_EPISODE_POINTS,
        });
    }
    if !(context_ratio > 0.0 && context_ratio < 1.0) {
        return Err(contract(format!("context ratio {context_ratio} outside (0, 1)")));
    }
    if tile_footprints.iter().any(|f| f.tile_id != tile_id) {
        return Err(contract("episode footprints must share one tile"));
    }
    let mut idx: Vec<usize> = (0..tile_footprints.len()).collect();
    idx.shuffle(&mut stream(seed, &[0xE915]));
    let k = context_size(idx.len(), context_ratio);
    let pick = |ids: &[usize]| ids.iter().map(|&i| tile_footprints[i].clone()).collect();
    Ok(Episode {
        context: pick(&idx[..k]),
        targets: pick(&idx[k..]),
        tile_id,
    })
}

/// One line of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepLog {
    pub step: usize,
    pub loss: f64,
    pub beta: f64,
}

impl fmt::Display for StepLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "step={} loss={:.6} beta={:.4}", self.step, self.loss, self.beta)
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    /// Batch-mean loss of every step.
    pub history: Vec<f64>,
}

struct Adam {
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(params: &ModelParams) -> Self {
        let zeros: BTreeMap<String, Vec<f64>> = params
            .tensors()
            .iter()
            .map(|(k, t)| (k.clone(), vec![0.0; t.len()]))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ModelParams, grads: &BTreeMap<String, Tensor>, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - ADAM_B1.powi(self.t);
        let c2 = 1.0 - ADAM_B2.powi(self.t);
        for (name, p) in params.tensors_mut() {
            let g = grads[name].data();
            let m = self.m.get_mut(name).expect("moment");
            let v = self.v.get_mut(name).expect("moment");
            for (i, w) in p.data_mut().iter_mut().enumerate() {
                m[i] = ADAM_B1 * m[i] + (1.0 - ADAM_B1) * g[i];
                v[i] = ADAM_B2 * v[i] + (1.0 - ADAM_B2) * g[i] * g[i];
                *w -= lr * (m[i] / c1) / ((v[i] / c2).sqrt() + ADAM_EPS);
            }
        }
    }
}

/// Trains from freshly initialized parameters.
pub fn train(footprints: &[Footprint], anp: &AnpConfig, config: &TrainingConfig) -> Result<TrainOutcome> {
    train_with_log(footprints, anp, config, |_| {})
}

/// [`train`], reporting progress every `config.log_every` steps and at the last step.
pub fn train_with_log(
    footprints: &[Footprint],
    anp: &AnpConfig,
    config: &TrainingConfig,
    mut log: impl FnMut(StepLog),
) -> Result<TrainOutcome> {
    config.validate()?;
    anp.validate()?;
    for f in footprints {
        if Some(f.year) == config.holdout_year {
            return Err(contract(format!("footprint {} belongs to the held-out year {}", f.id, f.year)));
        }
        f.validate()?;
        if f.embed_dim() != anp.embed_dim {
            return Err(contract(format!("footprint {} has embedding width {}, model expects {}", f.id, f.embed_dim(), anp.embed_dim)));
        }
    }
    let mut by_tile: BTreeMap<u32, Vec<&Footprint>> = BTreeMap::new();
    for f in footprints {
        by_tile.entry(f.tile_id).or_default().push(f);
    }
    let tiles: Vec<Vec<&Footprint>> = by_tile.into_values().filter(|v| v.len() >= MIN_EPISODE_POINTS).collect();
    if tiles.is_empty() {
        return Err(Error::Config(format!("no tile has at least {MIN_EPISODE_POINTS} training footprints")));
    }

    let mut model = AnpModel::new(ModelParams::init(anp.clone(), config.seed)?);
    let mut adam = Adam::new(model.params());
    let mut history = Vec::with_capacity(config.steps);
    let (lo, hi) = config.context_ratio_range;
    let samples = config.latent_samples_train;
    for step in 0..config.steps {
        let beta = beta_schedule(step, config);
        let results: Vec<Result<(f64, BTreeMap<String, Tensor>)>> = (0..config.episode_batch)
            .into_par_iter()
            .map(|b| {
                let mut rng = stream(config.seed, &[0x7EA1, step as u64, b as u64]);
                let tile = &tiles[rng.random_range(0..tiles.len())];
                let ratio = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                let mut idx: Vec<usize> = (0..tile.len()).collect();
                idx.shuffle(&mut rng);
                idx.truncate(config.max_episode_points);
                let k = context_size(idx.len(), ratio);
                let ctx: Vec<&Footprint> = idx[..k].iter().map(|&i| tile[i]).collect();
                let tgt: Vec<&Footprint> = idx[k..].iter().map(|&i| tile[i]).collect();
                let mut acc: Option<(f64, BTreeMap<String, Tensor>)> = None;
                for _ in 0..samples {
                    let noise: Vec<f64> = (0..anp.latent_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                    let (l, g) = model.elbo_grads(&ctx, &tgt, beta, &noise, true)?;
                    acc = Some(match acc {
                        None => (l, g),
                        Some((al, mut ag)) => {
                            for (name, t) in ag.iter_mut() {
                                t.add_assign(&g[name]);
                            }
                            (al + l, ag)
                        }
                    });
                }
                Ok(acc.expect("at least one latent sample"))
            })
            .collect();

        let mut total = 0.0;
        let mut grads: Option<BTreeMap<String, Tensor>> = None;
        for r in results {
            let (l, g) = r.map_err(|e| match e {
                Error::NumericFailure { .. } => Error::Divergence { step },
                other => other,
            })?;
            total += l;
            match grads.as_mut() {
                None => grads = Some(g),
                Some(acc) => {
                    for (name, t) in acc.iter_mut() {
                        t.add_assign(&g[name]);
                    }
                }
            }
        }
        let n = (config.episode_batch * samples) as f64;
        let loss = total / n;
        if !loss.is_finite() {
            return Err(Error::Divergence { step });
        }
        let mut grads = grads.expect("non-empty batch");
        for t in grads.values_mut() {
            for v in t.data_mut() {
                *v /= n;
            }
        }
        let mut params = model.into_params();
        adam.step(&mut params, &grads, config.learning_rate);
        model = AnpModel::new(params);
        history.push(loss);
        if step % config.log_every == 0 || step + 1 == config.steps {
            log(StepLog { step, loss, beta });
        }
    }
    Ok(TrainOutcome {
        params: model.into_params(),
        history,
    })
}
