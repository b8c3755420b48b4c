//! Run configuration: flat `key = value` text grouped under `[section]`
//! headers. `#` starts a comment. Unknown sections or keys are errors.
//!
//! ```text
//! [world]
//! years = 2019..2023
//! events = 0.15 0.15 0.08 0.55 0.1; 0.35 0.3 0.07 0.45 0.2
//! [run]
//! seeds = 10
//! methods = anp, qrf, gbq
//! ```
//!
//! Every field has a default, so an empty file is a valid config. The model
//! embedding width always follows `world.embed_dim`.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::anp::AnpConfig;
use crate::baselines::{CenterRule, GbqParams, QrfParams};
use crate::error::{Error, Result};
use crate::evalcal::{DeltaPooling, GridSpec, Method};
use crate::synthworld::{DisturbanceEvent, WorldConfig};
use crate::training::TrainingConfig;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub world: WorldConfig,
    pub model: AnpConfig,
    pub training: TrainingConfig,
    pub qrf: QrfParams,
    pub gbq: GbqParams,
    /// GBQ mean: interval midpoint, or a separately fitted median.
    pub gbq_center: CenterRule,
    /// Number of partition seeds.
    pub seeds: usize,
    /// Seed `i` of a run is `base_seed + i`.
    pub base_seed: u64,
    pub holdout_year: i32,
    pub methods: Vec<Method>,
    pub out_dir: PathBuf,
    pub buffer_radius: usize,
    pub delta_pooling: DeltaPooling,
    /// Lower bound on baseline σ.
    pub baseline_sigma_floor: f64,
    /// Baselines train on an evenly strided subset of at most this many
    /// footprints; 0 keeps all.
    pub baseline_max_points: usize,
    pub grid: GridSpec,
}

impl Default for RunConfig {
    fn default() -> Self {
        let world = WorldConfig::default();
        let holdout_year = world.years[world.years.len() / 2];
        Self {
            model: AnpConfig {
                embed_dim: world.embed_dim,
                ..AnpConfig::default()
            },
            training: TrainingConfig::default(),
            qrf: QrfParams::default(),
            gbq: GbqParams::default(),
            gbq_center: CenterRule::Midpoint,
            seeds: 10,
            base_seed: 0,
            holdout_year,
            methods: Method::ALL.to_vec(),
            out_dir: PathBuf::from("out"),
            buffer_radius: 1,
            delta_pooling: DeltaPooling::YearMeans,
            baseline_sigma_floor: 1e-3,
            baseline_max_points: 0,
            grid: GridSpec {
                cells_per_tile: 4,
                years: vec![holdout_year],
                day_of_year: 182,
            },
            world,
        }
    }
}

struct Raw {
    values: BTreeMap<String, (String, usize)>,
}

impl Raw {
    fn parse(text: &str) -> Result<Self> {
        let mut section = String::new();
        let mut values = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest.strip_suffix(']').ok_or(Error::Parse {
                    line: line_no,
                    msg: "unterminated section header".into(),
                })?;
                section = name.trim().to_string();
                if !SECTIONS.contains(&section.as_str()) {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown section [{section}]"),
                    });
                }
                continue;
            }
            let (k, v) = line.split_once('=').ok_or(Error::Parse {
                line: line_no,
                msg: format!("expected `key = value`, got {line:?}"),
            })?;
            if section.is_empty() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: "key outside of any section".into(),
                });
            }
            let key = format!("{section}.{}", k.trim());
            if values.insert(key.clone(), (v.trim().to_string(), line_no)).is_some() {
                return Err(Error::Parse {
                    line: line_no,
                    msg: format!("duplicate key {key}"),
                });
            }
        }
        Ok(Self { values })
    }

    fn take_with<T>(&mut self, key: &str, f: impl FnOnce(&str) -> Option<T>) -> Result<Option<T>> {
        match self.values.remove(key) {
            None => Ok(None),
            Some((v, line)) => f(&v).map(Some).ok_or(Error::Parse {
                line,
                msg: format!("bad value {v:?} for {key}"),
            }),
        }
    }

    fn set<T: FromStr>(&mut self, key: &str, slot: &mut T) -> Result<()> {
        if let Some(v) = self.take_with(key, |s| s.parse().ok())? {
            *slot = v;
        }
        Ok(())
    }
}

const SECTIONS: [&str; 7] = ["world", "model", "training", "qrf", "gbq", "run", "grid"];

fn parse_list<T: FromStr>(s: &str) -> Option<Vec<T>> {
    s.split(',').map(|p| p.trim().parse().ok()).collect()
}

fn parse_years(s: &str) -> Option<Vec<i32>> {
    match s.split_once("..") {
        Some((a, b)) => {
            let (a, b): (i32, i32) = (a.trim().parse().ok()?, b.trim().parse().ok()?);
            (a <= b).then(|| (a..=b).collect())
        }
        None => parse_list(s),
    }
}

fn parse_events(s: &str) -> Option<Vec<DisturbanceEvent>> {
    if s.trim().is_empty() || s.trim() == "none" {
        return Some(Vec::new());
    }
    s.split(';')
        .map(|ev| {
            let v: Vec<f64> = ev.split_whitespace().map(|x| x.parse().ok()).collect::<Option<_>>()?;
            match v[..] {
                [lon, lat, radius, tau, retained_fraction] => Some(DisturbanceEvent {
                    lon,
                    lat,
                    radius,
                    tau,
                    retained_fraction,
                }),
                _ => None,
            }
        })
        .collect()
}

fn parse_subsample(s: &str) -> Option<Option<usize>> {
    if s == "auto" {
        Some(None)
    } else {
        s.parse().ok().map(Some)
    }
}

fn parse_center(s: &str) -> Option<CenterRule> {
    match s {
        "midpoint" => Some(CenterRule::Midpoint),
        "median" => Some(CenterRule::Median),
        _ => None,
    }
}

fn parse_pooling(s: &str) -> Option<DeltaPooling> {
    match s {
        "year_means" => Some(DeltaPooling::YearMeans),
        "shots" => Some(DeltaPooling::Shots),
        _ => None,
    }
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let mut raw = Raw::parse(text)?;
        let mut c = Self::default();
        let mut holdout: Option<i32> = None;
        let mut grid_years: Option<Vec<i32>> = None;

        {
            let w = &mut c.world;
            raw.set("world.lon_min", &mut w.lon_min)?;
            raw.set("world.lon_max", &mut w.lon_max)?;
            raw.set("world.lat_min", &mut w.lat_min)?;
            raw.set("world.lat_max", &mut w.lat_max)?;
            raw.set("world.tile_size", &mut w.tile_size)?;
            if let Some(y) = raw.take_with("world.years", parse_years)? {
                w.years = y;
            }
            raw.set("world.length_scale", &mut w.length_scale)?;
            raw.set("world.n_bumps", &mut w.n_bumps)?;
            raw.set("world.base_agbd", &mut w.base_agbd)?;
            raw.set("world.bump_amplitude", &mut w.bump_amplitude)?;
            raw.set("world.noise_sigma_log", &mut w.noise_sigma_log)?;
            raw.set("world.embed_noise", &mut w.embed_noise)?;
            raw.set("world.embed_dim", &mut w.embed_dim)?;
            raw.set("world.pixel_spacing", &mut w.pixel_spacing)?;
            raw.set("world.footprints_per_tile_year", &mut w.footprints_per_tile_year)?;
            raw.set("world.along_track_spacing", &mut w.along_track_spacing)?;
            if let Some(e) = raw.take_with("world.events", parse_events)? {
                w.events = e;
            }
            raw.set("world.seed", &mut w.seed)?;
        }
        {
            let m = &mut c.model;
            m.embed_dim = c.world.embed_dim;
            raw.set("model.conv_channels", &mut m.conv_channels)?;
            raw.set("model.feature_dim", &mut m.feature_dim)?;
            raw.set("model.repr_dim", &mut m.repr_dim)?;
            raw.set("model.latent_dim", &mut m.latent_dim)?;
            raw.set("model.decoder_hidden", &mut m.decoder_hidden)?;
            raw.set("model.heads", &mut m.heads)?;
            raw.set("model.sigma_floor", &mut m.sigma_floor)?;
            raw.set("model.latent_samples", &mut m.latent_samples)?;
            raw.set("model.decoder_target_inputs", &mut m.decoder_target_inputs)?;
        }
        {
            let t = &mut c.training;
            raw.set("training.steps", &mut t.steps)?;
            t.anneal_steps = t.steps / 5;
            raw.set("training.learning_rate", &mut t.learning_rate)?;
            raw.set("training.beta_max", &mut t.beta_max)?;
            raw.set("training.anneal_steps", &mut t.anneal_steps)?;
            if let Some(r) = raw.take_with("training.context_ratio_range", |s| match parse_list::<f64>(s)?[..] {
                [a, b] => Some((a, b)),
                _ => None,
            })? {
                t.context_ratio_range = r;
            }
            raw.set("training.episode_batch", &mut t.episode_batch)?;
            raw.set("training.seed", &mut t.seed)?;
            raw.set("training.latent_samples_train", &mut t.latent_samples_train)?;
            raw.set("training.max_episode_points", &mut t.max_episode_points)?;
            raw.set("training.log_every", &mut t.log_every)?;
        }
        {
            let q = &mut c.qrf;
            raw.set("qrf.trees", &mut q.trees)?;
            raw.set("qrf.max_depth", &mut q.max_depth)?;
            raw.set("qrf.min_leaf", &mut q.min_leaf)?;
            if let Some(v) = raw.take_with("qrf.feature_subsample", parse_subsample)? {
                q.feature_subsample = v;
            }
            raw.set("qrf.bootstrap", &mut q.bootstrap)?;
            raw.set("qrf.seed", &mut q.seed)?;
        }
        {
            let g = &mut c.gbq;
            raw.set("gbq.rounds", &mut g.rounds)?;
            raw.set("gbq.learning_rate", &mut g.learning_rate)?;
            raw.set("gbq.max_depth", &mut g.max_depth)?;
            raw.set("gbq.min_leaf", &mut g.min_leaf)?;
            if let Some(v) = raw.take_with("gbq.feature_subsample", parse_subsample)? {
                g.feature_subsample = v;
            }
            raw.set("gbq.seed", &mut g.seed)?;
        }
        if let Some(r) = raw.take_with("gbq.center", parse_center)? {
            c.gbq_center = r;
        }
        raw.set("run.seeds", &mut c.seeds)?;
        raw.set("run.seed", &mut c.base_seed)?;
        if let Some(y) = raw.take_with("run.holdout_year", |s| s.parse().ok())? {
            holdout = Some(y);
        }
        if let Some(m) = raw.take_with("run.methods", parse_list::<Method>)? {
            c.methods = m;
        }
        if let Some(p) = raw.take_with("run.out", |s| Some(PathBuf::from(s)))? {
            c.out_dir = p;
        }
        raw.set("run.buffer_radius", &mut c.buffer_radius)?;
        if let Some(p) = raw.take_with("run.delta_pooling", parse_pooling)? {
            c.delta_pooling = p;
        }
        raw.set("run.baseline_sigma_floor", &mut c.baseline_sigma_floor)?;
        raw.set("run.baseline_max_points", &mut c.baseline_max_points)?;
        raw.set("grid.cells_per_tile", &mut c.grid.cells_per_tile)?;
        if let Some(y) = raw.take_with("grid.years", parse_years)? {
            grid_years = Some(y);
        }
        raw.set("grid.day_of_year", &mut c.grid.day_of_year)?;

        if let Some((key, (_, line))) = raw.values.into_iter().next() {
            return Err(Error::Parse {
                line,
                msg: format!("unknown key {key}"),
            });
        }

        // Defaults that depend on the world years.
        c.holdout_year = holdout.unwrap_or(c.world.years[c.world.years.len() / 2]);
        c.grid.years = grid_years.unwrap_or_else(|| vec![c.holdout_year]);
        c.training.holdout_year = Some(c.holdout_year);
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.world.validate()?;
        self.model.validate()?;
        self.training.validate()?;
        if self.model.embed_dim != self.world.embed_dim {
            return Err(Error::Config("model.embed_dim must equal world.embed_dim".into()));
        }
        if self.seeds == 0 {
            return Err(Error::Config("run.seeds must be at least 1".into()));
        }
        if !self.world.years.contains(&self.holdout_year) {
            return Err(Error::Config(format!("holdout year {} is not a world year", self.holdout_year)));
        }
        if self.methods.is_empty() {
            return Err(Error::Config("run.methods must name at least one method".into()));
        }
        let mut m = self.methods.clone();
        m.sort();
        m.dedup();
        if m.len() != self.methods.len() {
            return Err(Error::Config("run.methods lists a method twice".into()));
        }
        if !(self.baseline_sigma_floor > 0.0) {
            return Err(Error::Config("run.baseline_sigma_floor must be positive".into()));
        }
        if self.qrf.trees == 0 || self.qrf.max_depth == 0 || self.qrf.min_leaf == 0 {
            return Err(Error::Config("qrf trees, max_depth and min_leaf must be positive".into()));
        }
        if self.gbq.max_depth == 0 || self.gbq.min_leaf == 0 || !(self.gbq.learning_rate > 0.0) {
            return Err(Error::Config("gbq max_depth, min_leaf and learning_rate must be positive".into()));
        }
        if self.grid.cells_per_tile == 0 || !(1..=366).contains(&self.grid.day_of_year) {
            return Err(Error::Config("grid.cells_per_tile must be positive and grid.day_of_year in 1..=366".into()));
        }
        if let Some(y) = self.grid.years.iter().find(|y| !self.world.years.contains(y)) {
            return Err(Error::Config(format!("grid year {y} is not a world year")));
        }
        Ok(())
    }

    /// Partition seeds of this run.
    pub fn run_seeds(&self) -> Vec<u64> {
        (0..self.seeds as u64).map(|i| self.base_seed + i).collect()
    }

    /// Every field as `section.key → value`, in the file syntax.
    pub fn echo(&self) -> BTreeMap<String, String> {
        let w = &self.world;
        let m = &self.model;
        let t = &self.training;
        let sub = |s: Option<usize>| s.map_or("auto".to_string(), |v| v.to_string());
        let events = if w.events.is_empty() {
            "none".to_string()
        } else {
            w.events
                .iter()
                .map(|e| format!("{} {} {} {} {}", e.lon, e.lat, e.radius, e.tau, e.retained_fraction))
                .collect::<Vec<_>>()
                .join("; ")
        };
        let pairs: Vec<(&str, String)> = vec![
            ("world.lon_min", w.lon_min.to_string()),
            ("world.lon_max", w.lon_max.to_string()),
            ("world.lat_min", w.lat_min.to_string()),
            ("world.lat_max", w.lat_max.to_string()),
            ("world.tile_size", w.tile_size.to_string()),
            ("world.years", join(&w.years)),
            ("world.length_scale", w.length_scale.to_string()),
            ("world.n_bumps", w.n_bumps.to_string()),
            ("world.base_agbd", w.base_agbd.to_string()),
            ("world.bump_amplitude", w.bump_amplitude.to_string()),
            ("world.noise_sigma_log", w.noise_sigma_log.to_string()),
            ("world.embed_noise", w.embed_noise.to_string()),
            ("world.embed_dim", w.embed_dim.to_string()),
            ("world.pixel_spacing", w.pixel_spacing.to_string()),
            ("world.footprints_per_tile_year", w.footprints_per_tile_year.to_string()),
            ("world.along_track_spacing", w.along_track_spacing.to_string()),
            ("world.events", events),
            ("world.seed", w.seed.to_string()),
            ("model.conv_channels", m.conv_channels.to_string()),
            ("model.feature_dim", m.feature_dim.to_string()),
            ("model.repr_dim", m.repr_dim.to_string()),
            ("model.latent_dim", m.latent_dim.to_string()),
            ("model.decoder_hidden", m.decoder_hidden.to_string()),
            ("model.heads", m.heads.to_string()),
            ("model.sigma_floor", m.sigma_floor.to_string()),
            ("model.latent_samples", m.latent_samples.to_string()),
            ("model.decoder_target_inputs", m.decoder_target_inputs.to_string()),
            ("training.steps", t.steps.to_string()),
            ("training.learning_rate", t.learning_rate.to_string()),
            ("training.beta_max", t.beta_max.to_string()),
            ("training.anneal_steps", t.anneal_steps.to_string()),
            (
                "training.context_ratio_range",
                format!("{}, {}", t.context_ratio_range.0, t.context_ratio_range.1),
            ),
            ("training.episode_batch", t.episode_batch.to_string()),
            ("training.seed", t.seed.to_string()),
            ("training.latent_samples_train", t.latent_samples_train.to_string()),
            ("training.max_episode_points", t.max_episode_points.to_string()),
            ("training.log_every", t.log_every.to_string()),
            ("qrf.trees", self.qrf.trees.to_string()),
            ("qrf.max_depth", self.qrf.max_depth.to_string()),
            ("qrf.min_leaf", self.qrf.min_leaf.to_string()),
            ("qrf.feature_subsample", sub(self.qrf.feature_subsample)),
            ("qrf.bootstrap", self.qrf.bootstrap.to_string()),
            ("qrf.seed", self.qrf.seed.to_string()),
            ("gbq.rounds", self.gbq.rounds.to_string()),
            ("gbq.learning_rate", self.gbq.learning_rate.to_string()),
            ("gbq.max_depth", self.gbq.max_depth.to_string()),
            ("gbq.min_leaf", self.gbq.min_leaf.to_string()),
            ("gbq.feature_subsample", sub(self.gbq.feature_subsample)),
            ("gbq.seed", self.gbq.seed.to_string()),
            (
                "gbq.center",
                match self.gbq_center {
                    CenterRule::Midpoint => "midpoint",
                    CenterRule::Median => "median",
                }
                .to_string(),
            ),
            ("run.seeds", self.seeds.to_string()),
            ("run.seed", self.base_seed.to_string()),
            ("run.holdout_year", self.holdout_year.to_string()),
            (
                "run.methods",
                self.methods.iter().map(Method::key).collect::<Vec<_>>().join(", "),
            ),
            ("run.out", self.out_dir.display().to_string()),
            ("run.buffer_radius", self.buffer_radius.to_string()),
            (
                "run.delta_pooling",
                match self.delta_pooling {
                    DeltaPooling::YearMeans => "year_means",
                    DeltaPooling::Shots => "shots",
                }
                .to_string(),
            ),
            ("run.baseline_sigma_floor", self.baseline_sigma_floor.to_string()),
            ("run.baseline_max_points", self.baseline_max_points.to_string()),
            ("grid.cells_per_tile", self.grid.cells_per_tile.to_string()),
            ("grid.years", join(&self.grid.years)),
            ("grid.day_of_year", self.grid.day_of_year.to_string()),
        ];
        pairs.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
    }

    /// The config as file text; parsing it gives back an equal config.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for section in SECTIONS {
            out.push_str(&format!("[{section}]\n"));
            for (k, v) in self.echo() {
                if let Some(key) = k.strip_prefix(section).and_then(|r| r.strip_prefix('.')) {
                    out.push_str(&format!("{key} = {v}\n"));
                }
            }
            out.push('\n');
        }
        out
    }
}
