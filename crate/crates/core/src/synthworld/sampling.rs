use std::collections::BTreeMap;

use chrono::NaiveDate;
use rand::Rng;

use super::World;
use crate::anp::{coord_for, Footprint};
use crate::error::Result;
use crate::rng::stream;

/// Output of [`World::sample_footprints`].
#[derive(Clone, Debug)]
pub struct Sample {
    pub footprints: Vec<Footprint>,
    /// Noise-free biomass (Mg/ha) for each footprint, same order.
    pub truth: Vec<f64>,
    /// `(tile_id, year, count)` for tile-years with fewer than four shots.
    pub sparse_tiles: Vec<(u32, i32, usize)>,
}

fn days_in_year(year: i32) -> u32 {
    if NaiveDate::from_ymd_opt(year, 2, 29).is_some() {
        366
    } else {
        365
    }
}

impl World {
    /// Stripe-track sampling for every configured year.
    ///
    /// Each year gets an ascending and a descending family of parallel tracks
    /// at random orientation and phase. Each track is acquired on a single
    /// random day. Spacings are set so the expected shot count per tile and
    /// year matches `footprints_per_tile_year`.
    pub fn sample_footprints(&self) -> Result<Sample> {
        let cfg = &self.config;
        let density = cfg.footprints_per_tile_year / (cfg.tile_size * cfg.tile_size);
        let along = cfg.along_track_spacing;
        // Two families, each carrying half of the density.
        let across = 2.0 / (density * along);
        let corners = [
            (cfg.lon_min, cfg.lat_min),
            (cfg.lon_max, cfg.lat_min),
            (cfg.lon_min, cfg.lat_max),
            (cfg.lon_max, cfg.lat_max),
        ];

        let mut footprints = Vec::new();
        let mut truth = Vec::new();
        let mut counts: BTreeMap<(u32, i32), usize> = BTreeMap::new();
        for &year in &cfg.years {
            let mut rng = stream(cfg.seed, &[0x5A3B, year as u64]);
            let incl = rng.random_range(0.35..0.75_f64) * std::f64::consts::FRAC_PI_2;
            for theta in [incl, std::f64::consts::PI - incl] {
                let theta = theta + rng.random_range(-0.05..0.05);
                let (ux, uy) = (theta.cos(), theta.sin());
                let (nx, ny) = (-uy, ux);
                let proj = |p: &(f64, f64), ax: f64, ay: f64| p.0 * ax + p.1 * ay;
                let (pmin, pmax) = corners
                    .iter()
                    .map(|p| proj(p, nx, ny))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                let (smin, smax) = corners
                    .iter()
                    .map(|p| proj(p, ux, uy))
                    .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
                let mut offset = pmin + rng.random::<f64>() * across;
                while offset <= pmax {
                    let doy = rng.random_range(1..=days_in_year(year));
                    let mut s = smin + rng.random::<f64>() * along;
                    while s <= smax {
                        let jitter = 0.1 * along;
                        let lon = offset * nx + s * ux + rng.random_range(-jitter..jitter);
                        let lat = offset * ny + s * uy + rng.random_range(-jitter..jitter);
                        s += along;
                        if !cfg.contains(lon, lat) {
                            continue;
                        }
                        let coord = coord_for(cfg.normalize_lon(lon), cfg.normalize_lat(lat), year, doy, &self.period)?;
                        let t = self.field(lon, lat, coord.tau);
                        let patch = self.synth_embedding(lon, lat, coord.tau, &mut rng);
                        let y_norm = self.observe(t, &mut rng);
                        let tile_id = cfg.tile_of(lon, lat);
                        *counts.entry((tile_id, year)).or_default() += 1;
                        footprints.push(Footprint {
                            id: footprints.len() as u64,
                            coord,
                            patch,
                            y_norm,
                            year,
                            day_of_year: doy,
                            tile_id,
                        });
                        truth.push(t);
                    }
                    offset += across;
                }
            }
        }

        let mut sparse_tiles = Vec::new();
        for tile in 0..cfg.grid().len() as u32 {
            for &year in &cfg.years {
                let n = counts.get(&(tile, year)).copied().unwrap_or(0);
                if n < 4 {
                    sparse_tiles.push((tile, year, n));
                }
            }
        }
        Ok(Sample {
            footprints,
            truth,
            sparse_tiles,
        })
    }
}
