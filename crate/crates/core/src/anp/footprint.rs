use super::coord::SpatioTemporalCoord;
use crate::diffcore::Tensor;
use crate::error::{contract, Result};

/// One biomass observation with its embedding patch.
#[derive(Clone, Debug, PartialEq)]
pub struct Footprint {
    pub id: u64,
    pub coord: SpatioTemporalCoord,
    /// `[3, 3, D]` embedding values, row-major (row, col, channel).
    pub patch: Tensor,
    /// Normalized log biomass in `[0, 1]`.
    pub y_norm: f64,
    pub year: i32,
    pub day_of_year: u32,
    pub tile_id: u32,
}

impl Footprint {
    pub fn embed_dim(&self) -> usize {
        self.patch.cols()
    }

    /// Rejects records that break the footprint invariants, including any
    /// non-finite value.
    pub fn validate(&self) -> Result<()> {
        let shape = self.patch.shape();
        if shape.len() != 3 || shape[0] != 3 || shape[1] != 3 {
            return Err(contract(format!("footprint {}: patch shape {:?} is not (3,3,D)", self.id, shape)));
        }
        if !(0.0..=1.0).contains(&self.y_norm) {
            return Err(contract(format!("footprint {}: y_norm {} outside [0,1]", self.id, self.y_norm)));
        }
        if !self.patch.all_finite() || !self.coord.is_valid() {
            return Err(contract(format!("footprint {}: invalid coordinate or patch values", self.id)));
        }
        Ok(())
    }
}
