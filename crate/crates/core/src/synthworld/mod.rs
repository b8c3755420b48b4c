//! Synthetic spatiotemporal biomass world with known ground truth.
//!
//! The world is a smooth biomass field over a lon/lat box, cut by permanent
//! disturbance events, observed through stripe-shaped sparse sampling and
//! time-aware embedding patches that respond to the biomass present at the
//! moment of observation.

mod dataset;
mod sampling;

pub use dataset::{read_dataset, write_dataset, DATASET_VERSION};
pub use sampling::Sample;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::anp::StudyPeriod;
use crate::diffcore::Tensor;
use crate::error::{contract, Error, Result};
use crate::rng::stream;

/// Biomass ceiling in Mg/ha; also the normalization endpoint.
pub const AGBD_CAP: f64 = 500.0;

/// `ln(1 + agbd) / ln(1 + 500)`: maps `[0, 500]` Mg/ha onto `[0, 1]`.
pub fn normalize_agbd(agbd: f64) -> f64 {
    agbd.ln_1p() / AGBD_CAP.ln_1p()
}

/// Inverse of [`normalize_agbd`] (no lognormal bias correction).
pub fn denormalize_agbd(y_norm: f64) -> f64 {
    (y_norm * AGBD_CAP.ln_1p()).exp() - 1.0
}

/// Permanent biomass removal inside a disc from `tau` onwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisturbanceEvent {
    pub lon: f64,
    pub lat: f64,
    pub radius: f64,
    pub tau: f64,
    /// Post-event multiplier in `[0, 1)`.
    pub retained_fraction: f64,
}

impl DisturbanceEvent {
    fn validate(&self) -> Result<()> {
        if !(self.radius > 0.0) {
            return Err(Error::Config(format!("event radius must be positive, got {}", self.radius)));
        }
        if !(0.0..=1.0).contains(&self.tau) {
            return Err(Error::Config(format!("event time {} outside [0,1]", self.tau)));
        }
        if !(0.0..1.0).contains(&self.retained_fraction) {
            return Err(Error::Config(format!(
                "retained fraction {} outside [0,1)",
                self.retained_fraction
            )));
        }
        Ok(())
    }

    fn covers(&self, lon: f64, lat: f64) -> bool {
        (lon - self.lon).hypot(lat - self.lat) <= self.radius
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WorldConfig {
    pub lon_min: f64,
    pub lon_max: f64,
    pub lat_min: f64,
    pub lat_max: f64,
    /// Side of one evaluation tile, in region units.
    pub tile_size: f64,
    pub years: Vec<i32>,
    /// Typical width of the radial-basis bumps forming the base field.
    pub length_scale: f64,
    pub n_bumps: usize,
    pub base_agbd: f64,
    pub bump_amplitude: f64,
    pub noise_sigma_log: f64,
    pub embed_noise: f64,
    pub embed_dim: usize,
    /// Offset between neighboring patch pixels.
    pub pixel_spacing: f64,
    pub footprints_per_tile_year: f64,
    pub along_track_spacing: f64,
    pub events: Vec<DisturbanceEvent>,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            lon_min: 0.0,
            lon_max: 0.5,
            lat_min: 0.0,
            lat_max: 0.5,
            tile_size: 0.1,
            years: (2019..=2023).collect(),
            length_scale: 0.05,
            n_bumps: 60,
            base_agbd: 150.0,
            bump_amplitude: 160.0,
            noise_sigma_log: 0.15,
            embed_noise: 0.05,
            embed_dim: 16,
            pixel_spacing: 0.0001,
            footprints_per_tile_year: 400.0,
            along_track_spacing: 0.0025,
            events: Vec::new(),
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lon_max > self.lon_min && self.lat_max > self.lat_min) {
            return Err(Error::Config("empty region box".into()));
        }
        if !(self.tile_size > 0.0) {
            return Err(Error::Config("tile_size must be positive".into()));
        }
        if self.years.is_empty() || self.years.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Config("years must be non-empty and strictly increasing".into()));
        }
        if !(self.noise_sigma_log > 0.0) {
            return Err(Error::Config("noise_sigma_log must be positive".into()));
        }
        if self.embed_noise < 0.0 || self.embed_dim < 2 {
            return Err(Error::Config("embed_noise must be >= 0 and embed_dim >= 2".into()));
        }
        if !(self.footprints_per_tile_year > 0.0 && self.along_track_spacing > 0.0 && self.length_scale > 0.0) {
            return Err(Error::Config("density, spacing and length scale must be positive".into()));
        }
        self.events.iter().try_for_each(DisturbanceEvent::validate)
    }

    pub fn grid(&self) -> TileGrid {
        TileGrid {
            cols: ((self.lon_max - self.lon_min) / self.tile_size - 1e-9).ceil().max(1.0) as usize,
            rows: ((self.lat_max - self.lat_min) / self.tile_size - 1e-9).ceil().max(1.0) as usize,
        }
    }

    pub fn period(&self) -> Result<StudyPeriod> {
        StudyPeriod::from_years(self.years[0], *self.years.last().expect("non-empty years"))
    }

    pub fn contains(&self, lon: f64, lat: f64) -> bool {
        (self.lon_min..=self.lon_max).contains(&lon) && (self.lat_min..=self.lat_max).contains(&lat)
    }

    pub fn normalize_lon(&self, lon: f64) -> f64 {
        ((lon - self.lon_min) / (self.lon_max - self.lon_min)).clamp(0.0, 1.0)
    }

    pub fn normalize_lat(&self, lat: f64) -> f64 {
        ((lat - self.lat_min) / (self.lat_max - self.lat_min)).clamp(0.0, 1.0)
    }

    pub fn tile_of(&self, lon: f64, lat: f64) -> u32 {
        let g = self.grid();
        let c = (((lon - self.lon_min) / self.tile_size) as usize).min(g.cols - 1);
        let r = (((lat - self.lat_min) / self.tile_size) as usize).min(g.rows - 1);
        g.tile_id(r, c)
    }

    /// Center of a tile in region units.
    pub fn tile_center(&self, tile_id: u32) -> (f64, f64) {
        let (r, c) = self.grid().row_col(tile_id);
        (
            self.lon_min + (c as f64 + 0.5) * self.tile_size,
            self.lat_min + (r as f64 + 0.5) * self.tile_size,
        )
    }
}

/// Rectangular tile grid; ids are row-major from the south-west corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileGrid {
    pub rows: usize,
    pub cols: usize,
}

impl TileGrid {
    pub fn len(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn tile_id(&self, row: usize, col: usize) -> u32 {
        (row * self.cols + col) as u32
    }

    pub fn row_col(&self, tile_id: u32) -> (usize, usize) {
        let t = tile_id as usize;
        (t / self.cols, t % self.cols)
    }

    pub fn chebyshev(&self, a: u32, b: u32) -> usize {
        let (ra, ca) = self.row_col(a);
        let (rb, cb) = self.row_col(b);
        ra.abs_diff(rb).max(ca.abs_diff(cb))
    }
}

#[derive(Clone, Debug)]
struct Bump {
    lon: f64,
    lat: f64,
    inv_two_l2: f64,
    amplitude: f64,
}

impl Bump {
    fn at(&self, lon: f64, lat: f64) -> f64 {
        let d2 = (lon - self.lon).powi(2) + (lat - self.lat).powi(2);
        self.amplitude * (-d2 * self.inv_two_l2).exp()
    }
}

/// Response of one embedding channel to normalized log biomass.
#[derive(Clone, Debug)]
struct Channel {
    gain: f64,
    slope: f64,
    shift: f64,
    curvature: f64,
    terrain: f64,
}

/// A realized world: the base field, terrain nuisance and channel responses
/// are fixed by the seed.
#[derive(Clone, Debug)]
pub struct World {
    config: WorldConfig,
    period: StudyPeriod,
    bumps: Vec<Bump>,
    terrain: Vec<Bump>,
    channels: Vec<Channel>,
}

impl World {
    pub fn new(config: WorldConfig) -> Result<Self> {
        config.validate()?;
        let period = config.period()?;
        let mut rng = stream(config.seed, &[0xF1E1D]);
        let (w, h) = (config.lon_max - config.lon_min, config.lat_max - config.lat_min);
        let margin = 2.0 * config.length_scale;
        let bump = |rng: &mut ChaCha8Rng, amplitude: f64| {
            let l = config.length_scale * rng.random_range(0.5..1.5);
            Bump {
                lon: config.lon_min - margin + rng.random::<f64>() * (w + 2.0 * margin),
                lat: config.lat_min - margin + rng.random::<f64>() * (h + 2.0 * margin),
                inv_two_l2: 1.0 / (2.0 * l * l),
                amplitude,
            }
        };
        let bumps = (0..config.n_bumps)
            .map(|_| {
                let a = config.bump_amplitude * rng.random_range(-1.0..1.0);
                bump(&mut rng, a)
            })
            .collect();
        let terrain = (0..12)
            .map(|_| {
                let a = rng.random_range(-1.0..1.0);
                bump(&mut rng, a)
            })
            .collect();
        let channels = (0..config.embed_dim)
            .map(|_| Channel {
                gain: rng.random_range(0.5..1.5) * if rng.random::<bool>() { 1.0 } else { -1.0 },
                slope: rng.random_range(1.0..4.0),
                shift: rng.random_range(-2.0..0.0),
                curvature: rng.random_range(-1.0..1.0),
                terrain: rng.random_range(-0.3..0.3),
            })
            .collect();
        Ok(Self {
            config,
            period,
            bumps,
            terrain,
            channels,
        })
    }

    pub fn config(&self) -> &WorldConfig {
        &self.config
    }

    pub fn period(&self) -> &StudyPeriod {
        &self.period
    }

    fn base_agbd(&self, lon: f64, lat: f64) -> f64 {
        let v = self.config.base_agbd + self.bumps.iter().map(|b| b.at(lon, lat)).sum::<f64>();
        v.clamp(0.0, AGBD_CAP)
    }

    fn retained(&self, lon: f64, lat: f64, tau: f64) -> f64 {
        self.config
            .events
            .iter()
            .filter(|e| tau >= e.tau && e.covers(lon, lat))
            .map(|e| e.retained_fraction)
            .product()
    }

    /// Noise-free biomass in Mg/ha at a point and study time `tau ∈ [0, 1]`.
    pub fn true_biomass(&self, lon: f64, lat: f64, tau: f64) -> Result<f64> {
        if !self.config.contains(lon, lat) {
            return Err(contract(format!("point ({lon}, {lat}) outside region")));
        }
        if !(0.0..=1.0).contains(&tau) {
            return Err(contract(format!("time {tau} outside study period")));
        }
        Ok(self.field(lon, lat, tau))
    }

    fn field(&self, lon: f64, lat: f64, tau: f64) -> f64 {
        self.base_agbd(lon, lat) * self.retained(lon, lat, tau)
    }

    fn terrain_at(&self, lon: f64, lat: f64) -> f64 {
        self.terrain.iter().map(|b| b.at(lon, lat)).sum::<f64>().tanh()
    }

    /// `[3, 3, D]` embedding patch centred on `(lon, lat)` at time `tau`.
    ///
    /// Channel 0 tracks log biomass almost linearly, channel 1 saturates
    /// above 60% of the biomass cap, the rest are random smooth responses
    /// with a static terrain component. Noise is white with standard
    /// deviation `embed_noise`.
    pub fn synth_embedding(&self, lon: f64, lat: f64, tau: f64, rng: &mut ChaCha8Rng) -> Tensor {
        let d = self.config.embed_dim;
        let s = self.config.pixel_spacing;
        let mut data = Vec::with_capacity(9 * d);
        for r in 0..3 {
            for c in 0..3 {
                let plon = (lon + (c as f64 - 1.0) * s).clamp(self.config.lon_min, self.config.lon_max);
                let plat = (lat + (r as f64 - 1.0) * s).clamp(self.config.lat_min, self.config.lat_max);
                let agbd = self.field(plon, plat, tau);
                let lb = normalize_agbd(agbd);
                let terrain = self.terrain_at(plon, plat);
                for (k, ch) in self.channels.iter().enumerate() {
                    let signal = match k {
                        0 => 2.0 * lb - 1.0,
                        1 => (1.5 * agbd / (0.6 * AGBD_CAP)).tanh(),
                        _ => {
                            ch.gain * (ch.slope * lb + ch.shift).tanh()
                                + ch.curvature * (lb - 0.5).powi(2)
                                + ch.terrain * terrain
                        }
                    };
                    let noise = if self.config.embed_noise > 0.0 {
                        self.config.embed_noise * rng.sample::<f64, _>(StandardNormal)
                    } else {
                        0.0
                    };
                    data.push(signal + noise);
                }
            }
        }
        Tensor::new(vec![3, 3, d], data).expect("patch shape")
    }

    /// Draws one lognormal observation of `truth`, normalized.
    pub fn observe(&self, truth: f64, rng: &mut ChaCha8Rng) -> f64 {
        let eps: f64 = StandardNormal.sample(rng);
        normalize_agbd((truth * (self.config.noise_sigma_log * eps).exp()).min(AGBD_CAP))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn world_with(events: Vec<DisturbanceEvent>) -> World {
        World::new(WorldConfig {
            events,
            seed: 3,
            ..WorldConfig::default()
        })
        .unwrap()
    }

    #[test]
    fn normalization_endpoints() {
        assert_eq!(normalize_agbd(0.0), 0.0);
        assert!((normalize_agbd(500.0) - 1.0).abs() < 1e-15);
        assert!((denormalize_agbd(normalize_agbd(123.4)) - 123.4).abs() < 1e-9);
    }

    #[test]
    fn stationary_without_events() {
        let w = world_with(vec![]);
        for &(lon, lat) in &[(0.1, 0.1), (0.33, 0.27), (0.49, 0.01)] {
            let a = w.true_biomass(lon, lat, 0.0).unwrap();
            for tau in [0.2, 0.5, 1.0] {
                assert_eq!(w.true_biomass(lon, lat, tau).unwrap(), a);
            }
        }
    }

    #[test]
    fn event_scales_biomass_after_onset() {
        let ev = DisturbanceEvent {
            lon: 0.25,
            lat: 0.25,
            radius: 0.05,
            tau: 0.4,
            retained_fraction: 0.5,
        };
        let w = world_with(vec![ev]);
        let before = w.true_biomass(0.26, 0.24, 0.39).unwrap();
        let after = w.true_biomass(0.26, 0.24, 0.41).unwrap();
        assert!((after - 0.5 * before).abs() < 1e-12);
        let outside = w.true_biomass(0.4, 0.4, 0.41).unwrap();
        assert_eq!(outside, w.true_biomass(0.4, 0.4, 0.0).unwrap());
    }

    #[test]
    fn field_is_clipped() {
        let w = World::new(WorldConfig {
            bump_amplitude: 900.0,
            seed: 5,
            ..WorldConfig::default()
        })
        .unwrap();
        for i in 0..50 {
            for j in 0..50 {
                let v = w.true_biomass(i as f64 * 0.01, j as f64 * 0.01, 0.5).unwrap();
                assert!((0.0..=AGBD_CAP).contains(&v));
            }
        }
    }

    #[test]
    fn out_of_region_is_rejected() {
        let w = world_with(vec![]);
        assert!(w.true_biomass(-0.1, 0.2, 0.5).is_err());
        assert!(w.true_biomass(0.1, 0.2, 1.5).is_err());
    }

    #[test]
    fn noiseless_embedding_is_deterministic() {
        let w = World::new(WorldConfig {
            embed_noise: 0.0,
            ..WorldConfig::default()
        })
        .unwrap();
        let mut r1 = stream(1, &[]);
        let mut r2 = stream(2, &[]);
        assert_eq!(
            w.synth_embedding(0.2, 0.3, 0.5, &mut r1),
            w.synth_embedding(0.2, 0.3, 0.5, &mut r2)
        );
    }

    #[test]
    fn channel_zero_tracks_log_biomass() {
        let w = world_with(vec![]);
        let mut rng = stream(42, &[]);
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..1000 {
            let lon = rng.random_range(0.0..0.5);
            let lat = rng.random_range(0.0..0.5);
            let patch = w.synth_embedding(lon, lat, 0.5, &mut rng);
            let d = patch.cols();
            let mean0 = (0..9).map(|p| patch.data()[p * d]).sum::<f64>() / 9.0;
            xs.push(mean0);
            ys.push(w.true_biomass(lon, lat, 0.5).unwrap().ln_1p());
        }
        assert!(pearson(&xs, &ys) > 0.5);
    }

    #[test]
    fn disturbance_changes_patches() {
        let ev = DisturbanceEvent {
            lon: 0.25,
            lat: 0.25,
            radius: 0.05,
            tau: 0.5,
            retained_fraction: 0.3,
        };
        let w = World::new(WorldConfig {
            events: vec![ev],
            embed_noise: 0.0,
            ..WorldConfig::default()
        })
        .unwrap();
        let mut rng = stream(0, &[]);
        let before = w.synth_embedding(0.25, 0.25, 0.45, &mut rng);
        let after = w.synth_embedding(0.25, 0.25, 0.55, &mut rng);
        let diff: f64 = before.data().iter().zip(after.data()).map(|(a, b)| (a - b).abs()).sum();
        assert!(diff > 0.1, "patch change {diff}");
    }

    #[test]
    fn tile_geometry() {
        let c = WorldConfig::default();
        let g = c.grid();
        assert_eq!((g.rows, g.cols), (5, 5));
        assert_eq!(c.tile_of(0.0, 0.0), 0);
        assert_eq!(c.tile_of(0.5, 0.5), 24);
        assert_eq!(c.tile_of(0.15, 0.05), 1);
        assert_eq!(g.chebyshev(0, 24), 4);
        let (lon, lat) = c.tile_center(7);
        assert_eq!(c.tile_of(lon, lat), 7);
    }

    pub(crate) fn pearson(x: &[f64], y: &[f64]) -> f64 {
        let n = x.len() as f64;
        let (mx, my) = (x.iter().sum::<f64>() / n, y.iter().sum::<f64>() / n);
        let cov: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
        let vx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
        let vy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
        cov / (vx * vy).sqrt()
    }
}
