use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::anp::Footprint;
use crate::error::{contract, Error, Result};
use crate::rng::stream;
use crate::synthworld::TileGrid;

pub const TRAIN_FRACTION: f64 = 0.70;
pub const VAL_FRACTION: f64 = 0.15;
pub const TEST_FRACTION: f64 = 0.15;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Role {
    Train,
    Val,
    Test,
    Buffer,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TilePartition {
    pub grid: TileGrid,
    pub roles: Vec<Role>,
    pub seed: u64,
    pub buffer_radius: usize,
}

impl TilePartition {
    pub fn role(&self, tile_id: u32) -> Role {
        self.roles[tile_id as usize]
    }

    pub fn tiles(&self, role: Role) -> Vec<u32> {
        (0..self.roles.len() as u32).filter(|&t| self.role(t) == role).collect()
    }

    /// Smallest Chebyshev distance between a test tile and a train or
    /// validation tile; `None` if either set is empty.
    pub fn min_test_distance(&self) -> Option<usize> {
        let test = self.tiles(Role::Test);
        let kept: Vec<u32> = (0..self.roles.len() as u32)
            .filter(|&t| matches!(self.role(t), Role::Train | Role::Val))
            .collect();
        test.iter()
            .flat_map(|&a| kept.iter().map(move |&b| (a, b)))
            .map(|(a, b)| self.grid.chebyshev(a, b))
            .min()
    }
}

/// Largest-remainder split of `n` items into train/val/test counts.
pub fn role_counts(n: usize) -> [usize; 3] {
    let fr = [TRAIN_FRACTION, VAL_FRACTION, TEST_FRACTION];
    let exact: Vec<f64> = fr.iter().map(|f| f * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..3).collect();
    // Stable sort keeps train, val, test order among equal remainders.
    order.sort_by(|&a, &b| (exact[b] - exact[b].floor()).total_cmp(&(exact[a] - exact[a].floor())));
    let mut left = n - counts.iter().sum::<usize>();
    for &i in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    [counts[0], counts[1], counts[2]]
}

/// Relabels every train or validation tile within Chebyshev distance
/// `radius` of a test tile as buffer.
pub fn apply_buffer(grid: &TileGrid, roles: &mut [Role], radius: usize) {
    let test: Vec<u32> = (0..roles.len() as u32).filter(|&t| roles[t as usize] == Role::Test).collect();
    for (t, role) in roles.iter_mut().enumerate() {
        if matches!(role, Role::Train | Role::Val) && test.iter().any(|&s| grid.chebyshev(s, t as u32) <= radius) {
            *role = Role::Buffer;
        }
    }
}

/// Random 70/15/15 tile roles followed by buffering around test tiles.
pub fn partition_tiles(grid: &TileGrid, seed: u64, buffer_radius: usize) -> Result<TilePartition> {
    if grid.rows < 3 || grid.cols < 3 {
        return Err(contract(format!("grid {}x{} is smaller than 3x3", grid.rows, grid.cols)));
    }
    let n = grid.len();
    let [tr, va, _] = role_counts(n);
    let mut tiles: Vec<usize> = (0..n).collect();
    tiles.shuffle(&mut stream(seed, &[0x9A27]));
    let mut roles = vec![Role::Test; n];
    for (k, &t) in tiles.iter().enumerate() {
        roles[t] = if k < tr {
            Role::Train
        } else if k < tr + va {
            Role::Val
        } else {
            Role::Test
        };
    }
    apply_buffer(grid, &mut roles, buffer_radius);
    if !roles.contains(&Role::Train) {
        return Err(Error::PartitionInfeasible);
    }
    Ok(TilePartition {
        grid: *grid,
        roles,
        seed,
        buffer_radius,
    })
}

/// Training data and held-out evaluation targets.
#[derive(Clone, Debug)]
pub struct HoldoutSplit {
    /// Non-holdout-year footprints of training tiles.
    pub train: Vec<Footprint>,
    /// Holdout-year footprints of test tiles.
    pub test: Vec<Footprint>,
}

pub fn temporal_holdout(footprints: &[Footprint], partition: &TilePartition, holdout_year: i32) -> Result<HoldoutSplit> {
    if !footprints.iter().any(|f| f.year == holdout_year) {
        return Err(Error::Config(format!("holdout year {holdout_year} does not occur in the data")));
    }
    let role = |f: &Footprint| {
        partition
            .roles
            .get(f.tile_id as usize)
            .copied()
            .ok_or_else(|| contract(format!("footprint {} lies in tile {} outside the partition grid", f.id, f.tile_id)))
    };
    let mut train = Vec::new();
    let mut test = Vec::new();
    for f in footprints {
        let r = role(f)?;
        if f.year == holdout_year {
            if r == Role::Test {
                test.push(f.clone());
            }
        } else if r == Role::Train {
            train.push(f.clone());
        }
    }
    Ok(HoldoutSplit { train, test })
}

/// Evaluation context for one tile: its footprints from every other year.
pub fn tile_context(footprints: &[Footprint], tile_id: u32, holdout_year: i32) -> Vec<Footprint> {
    footprints
        .iter()
        .filter(|f| f.tile_id == tile_id && f.year != holdout_year)
        .cloned()
        .collect()
}
