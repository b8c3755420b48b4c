//! Gridded μ/σ export over the study region.
//!
//! Query cells are a regular `rows·k × cols·k` lattice of cell centres, `k`
//! cells per tile side. Query embeddings come from the world; context for a
//! cell is the dataset footprints of its tile from other years. A tile with
//! no such footprints borrows from the nearest non-empty Chebyshev ring.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::anp::{coord_for, AnpModel, Footprint};
use crate::error::{contract, Error, Result};
use crate::rng::{derive_seed, stream};
use crate::synthworld::{denormalize_agbd, World};

pub const GRID_CSV: &str = "grid.csv";

#[derive(Clone, Debug, PartialEq)]
pub struct GridSpec {
    pub cells_per_tile: usize,
    pub years: Vec<i32>,
    pub day_of_year: u32,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GridCell {
    pub year: i32,
    pub row: usize,
    pub col: usize,
    pub tile_id: u32,
    pub lon: f64,
    pub lat: f64,
    pub mu: f64,
    pub sigma: f64,
    pub context_n: usize,
    /// Chebyshev ring the context was drawn from; 0 is the cell's own tile.
    pub context_ring: usize,
}

/// Other-year footprints of `tile`, or of the closest ring that has any.
pub fn expanded_context(world: &World, footprints: &[Footprint], tile: u32, year: i32) -> (Vec<Footprint>, usize) {
    let grid = world.config().grid();
    let max_ring = grid.rows.max(grid.cols);
    for ring in 0..max_ring {
        let ctx: Vec<Footprint> = footprints
            .iter()
            .filter(|f| f.year != year && grid.chebyshev(f.tile_id, tile) == ring)
            .cloned()
            .collect();
        if !ctx.is_empty() {
            return (ctx, ring);
        }
    }
    (Vec::new(), 0)
}

pub fn predict_grid(
    model: &AnpModel,
    world: &World,
    footprints: &[Footprint],
    spec: &GridSpec,
    samples: usize,
    seed: u64,
) -> Result<Vec<GridCell>> {
    let cfg = world.config();
    if spec.cells_per_tile == 0 {
        return Err(contract("cells_per_tile must be positive"));
    }
    if let Some(y) = spec.years.iter().find(|y| !cfg.years.contains(y)) {
        return Err(Error::Config(format!("grid year {y} is outside the world years")));
    }
    let grid = cfg.grid();
    let k = spec.cells_per_tile;
    let step = cfg.tile_size / k as f64;
    let (rows, cols) = (grid.rows * k, grid.cols * k);

    let mut out = Vec::with_capacity(rows * cols * spec.years.len());
    for &year in &spec.years {
        let mut by_tile: BTreeMap<u32, Vec<(usize, usize, f64, f64)>> = BTreeMap::new();
        for r in 0..rows {
            for c in 0..cols {
                let lon = (cfg.lon_min + (c as f64 + 0.5) * step).min(cfg.lon_max);
                let lat = (cfg.lat_min + (r as f64 + 0.5) * step).min(cfg.lat_max);
                by_tile.entry(cfg.tile_of(lon, lat)).or_default().push((r, c, lon, lat));
            }
        }
        for (tile, cells) in by_tile {
            let (context, ring) = expanded_context(world, footprints, tile, year);
            let mut queries = Vec::with_capacity(cells.len());
            for &(r, c, lon, lat) in &cells {
                let coord = coord_for(cfg.normalize_lon(lon), cfg.normalize_lat(lat), year, spec.day_of_year, world.period())?;
                let mut rng = stream(seed, &[0x6E1D, year as u64, (r * cols + c) as u64]);
                queries.push((world.synth_embedding(lon, lat, coord.tau, &mut rng), coord));
            }
            let preds = model.predict(&context, &queries, samples, derive_seed(seed, &[year as u64, tile as u64]))?;
            for (&(row, col, lon, lat), g) in cells.iter().zip(preds) {
                out.push(GridCell {
                    year,
                    row,
                    col,
                    tile_id: tile,
                    lon,
                    lat,
                    mu: g.mu,
                    sigma: g.sigma,
                    context_n: context.len(),
                    context_ring: ring,
                });
            }
        }
    }
    out.sort_by_key(|g| (g.year, g.row, g.col));
    Ok(out)
}

/// Delimited text with `#`-prefixed config lines, one row per cell and year.
pub fn write_grid(path: &Path, cells: &[GridCell], config: &BTreeMap<String, String>) -> Result<()> {
    let mut s = String::new();
    for (k, v) in config {
        writeln!(s, "# {k}={v}").expect("write to string");
    }
    s.push_str("year,row,col,tile_id,lon,lat,mu_norm,sigma_norm,agbd_mgha,context_n,context_ring\n");
    for g in cells {
        writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{}",
            g.year,
            g.row,
            g.col,
            g.tile_id,
            g.lon,
            g.lat,
            g.mu,
            g.sigma,
            denormalize_agbd(g.mu),
            g.context_n,
            g.context_ring
        )
        .expect("write to string");
    }
    fs::write(path, s)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::anp::{AnpConfig, ModelParams};
    use crate::synthworld::WorldConfig;

    fn setup() -> (AnpModel, World, Vec<Footprint>) {
        let world = World::new(WorldConfig {
            embed_dim: 4,
            footprints_per_tile_year: 6.0,
            ..WorldConfig::default()
        })
        .unwrap();
        let fps = world.sample_footprints().unwrap().footprints;
        let cfg = AnpConfig {
            embed_dim: 4,
            conv_channels: 4,
            feature_dim: 8,
            repr_dim: 8,
            latent_dim: 4,
            decoder_hidden: 8,
            heads: 2,
            latent_samples: 2,
            ..AnpConfig::default()
        };
        (AnpModel::new(ModelParams::init(cfg, 0).unwrap()), world, fps)
    }

    #[test]
    fn one_row_per_cell_and_year() {
        let (model, world, fps) = setup();
        let years = world.config().years[..2].to_vec();
        let spec = GridSpec {
            cells_per_tile: 2,
            years: years.clone(),
            day_of_year: 180,
        };
        let cells = predict_grid(&model, &world, &fps, &spec, 2, 1).unwrap();
        assert_eq!(cells.len(), world.config().grid().len() * 4 * years.len());
        assert!(cells.iter().all(|c| c.mu.is_finite() && c.sigma >= model.config().sigma_floor));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join(GRID_CSV);
        write_grid(&path, &cells, &BTreeMap::new()).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), cells.len() + 1);
        assert_eq!(cells, predict_grid(&model, &world, &fps, &spec, 2, 1).unwrap());
    }

    #[test]
    fn empty_tile_borrows_from_neighbours() {
        let (_, world, fps) = setup();
        let year = world.config().years[0];
        let kept: Vec<Footprint> = fps.into_iter().filter(|f| f.tile_id != 0).collect();
        let (ctx, ring) = expanded_context(&world, &kept, 0, year);
        assert_eq!(ring, 1);
        assert!(!ctx.is_empty());
        assert!(ctx.iter().all(|f| f.year != year));
    }

    #[test]
    fn unknown_year_is_rejected() {
        let (model, world, fps) = setup();
        let spec = GridSpec {
            cells_per_tile: 1,
            years: vec![1900],
            day_of_year: 1,
        };
        assert!(predict_grid(&model, &world, &fps, &spec, 1, 0).is_err());
    }
}
